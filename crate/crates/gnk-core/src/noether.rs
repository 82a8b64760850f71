//! Momentum maps, fundamental lifts to the multiphase spaces, Noether
//! currents on grid sections and the two halves of the conservation proof.
//!
//! Sign convention: a current is the (n−1)-form Σ_μ J^μ dⁿx_μ with
//! dⁿx_μ = i_{∂_μ}(dx⁰∧…∧dxⁿ⁻¹), so its exterior derivative is ∂_μJ^μ dⁿx.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidSection, GroupoidAlgebroid};
use crate::error::{GnkError, Result};
use crate::grid::GridSection;
use crate::groupoid::GroupoidChart;
use crate::linalg::Mat;
use crate::multiphase::{omega_eval, theta_eval, Hamiltonian, MultiphaseAction};
use crate::smooth::library::linear;
use crate::smooth::{Rule, Scalar, SmoothMap};

pub const ADMISSIBILITY_TOL: f64 = 1e-8;
pub const CLAIM1_STEP: f64 = 1e-4;

/// An infinitesimal symmetry given as x ↦ X(x) ∈ T_{1_x}G (n → N).
#[derive(Clone, Debug)]
pub struct Generator {
    pub name: String,
    pub field: SmoothMap,
}

impl Generator {
    pub fn new(name: impl Into<String>, field: SmoothMap) -> Self {
        Generator { name: name.into(), field }
    }

    /// Affine field x ↦ c + A x.
    pub fn affine(name: impl Into<String>, a: Mat<f64>, c: Vec<f64>) -> Self {
        Generator::new(name, crate::smooth::library::affine(a, c))
    }

    pub fn zero(n: usize, big: usize) -> Self {
        Generator::affine("zero", Mat::zeros(big, n), vec![0.0; big])
    }

    /// (X(x), ∂X(x)): the jet-algebroid element jX at x.
    pub fn jet_at(&self, x: &[f64]) -> (Vec<f64>, Mat<f64>) {
        (self.field.call(x), self.field.jacobian_s(x))
    }

    /// Coordinates in the algebroid basis, with the misfit of X against ker Tσ.
    pub fn to_section(&self, alg: &GroupoidAlgebroid) -> AlgebroidSection {
        let proj = linear(alg.basis.transpose());
        AlgebroidSection::new(SmoothMap::compose(&proj, &self.field).expect("generator dimensions"))
    }

    pub fn kernel_residual(&self, gr: &GroupoidChart, x: &[f64]) -> f64 {
        let unit = gr.unit.call(x);
        let ts = gr.sigma.jacobian_s(&unit);
        ts.mul_vec(&self.field.call(x)).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Residual of jX against the Lie subalgebroid 𝔤̃ at x.
pub type GeneratorPredicate = Arc<dyn Fn(&GroupoidChart, &[f64], &[f64], &Mat<f64>) -> f64 + Send + Sync>;

/// 𝔤̃ for O(TM, η) acting on the base, with vanishing derivative of any
/// internal (isotropy) component: η·∂ξ antisymmetric and ∂θ = 0.
pub fn lorentz_predicate(eta: Vec<f64>) -> GeneratorPredicate {
    Arc::new(move |gr: &GroupoidChart, x: &[f64], _v: &[f64], dv: &Mat<f64>| {
        let n = eta.len();
        let unit = gr.unit.call(x);
        let dtau = gr.tau.jacobian_s(&unit).mul(dv);
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                r = r.max((eta[i] * dtau[(i, j)] + eta[j] * dtau[(j, i)]).abs());
            }
        }
        for row in 2 * n..dv.rows {
            for j in 0..n {
                r = r.max(dv[(row, j)].abs());
            }
        }
        r
    })
}

/// Largest predicate residual over the sample points.
pub fn admissibility_residual(gr: &GroupoidChart, pred: &GeneratorPredicate, gen: &Generator, points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|x| {
            let (v, dv) = gen.jet_at(x);
            pred(gr, x, &v, &dv).max(gen.kernel_residual(gr, x))
        })
        .fold(0.0, f64::max)
}

pub fn check_admissible(gr: &GroupoidChart, pred: &GeneratorPredicate, gen: &Generator, points: &[Vec<f64>]) -> Result<()> {
    let r = admissibility_residual(gr, pred, gen, points);
    if r > ADMISSIBILITY_TOL {
        return Err(GnkError::GeneratorNotAdmissible { name: gen.name.clone(), residual: r });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSpace {
    Extended,
    Ordinary,
}

fn unit_input(gr: &GroupoidChart, x: &[f64], z: &[f64]) -> Vec<f64> {
    let mut p = gr.unit.call(x);
    p.extend(gr.unit.jacobian_s(x).data);
    p.extend_from_slice(z);
    p
}

/// Lift of a jet-algebroid element Z = (v, dv) at x = π(z): TΦ at unit jets.
pub fn lift_z(ma: &MultiphaseAction, space: PhaseSpace, v: &[f64], dv: &Mat<f64>, z: &[f64]) -> Vec<f64> {
    let gr = &ma.a.g;
    let n = gr.n();
    let mut dir = v.to_vec();
    dir.extend_from_slice(&dv.data);
    dir.extend(std::iter::repeat(0.0).take(z.len()));
    let map = match space {
        PhaseSpace::Extended => &ma.ext,
        PhaseSpace::Ordinary => &ma.ord,
    };
    map.jvp(&unit_input(gr, &z[..n], z), &dir).1
}

/// X_lift(z) for the holonomous element jX.
pub fn lift(ma: &MultiphaseAction, space: PhaseSpace, gen: &Generator, z: &[f64]) -> Vec<f64> {
    let (v, dv) = gen.jet_at(&z[..ma.a.n()]);
    lift_z(ma, space, &v, &dv, z)
}

/// 𝒥(Z) on n − 1 vectors: i_{Z•}θ on Λ or i_{Z•}θ_H on J⃗°E.
pub fn momentum_map_z(ma: &MultiphaseAction, h: Option<&Hamiltonian>, v: &[f64], dv: &Mat<f64>, z: &[f64], ws: &[Vec<f64>]) -> f64 {
    let (n, k) = (ma.a.n(), ma.a.k());
    match h {
        None => {
            let mut all = vec![lift_z(ma, PhaseSpace::Extended, v, dv, z)];
            all.extend(ws.iter().cloned());
            theta_eval(n, k, z, &all)
        }
        Some(h) => {
            let mut all = vec![lift_z(ma, PhaseSpace::Ordinary, v, dv, z)];
            all.extend(ws.iter().cloned());
            h.theta_h_eval(z, &all)
        }
    }
}

pub fn momentum_map(ma: &MultiphaseAction, h: Option<&Hamiltonian>, gen: &Generator, z: &[f64], ws: &[Vec<f64>]) -> f64 {
    let (v, dv) = gen.jet_at(&z[..ma.a.n()]);
    momentum_map_z(ma, h, &v, &dv, z, ws)
}

/// Induced flow F_t(z) = Φ(j¹exp(tX)(x), z) on J⃗°E, x = π(z).
struct BisectionFlow {
    ma: MultiphaseAction,
    exp: SmoothMap,
    t: f64,
}

impl Rule for BisectionFlow {
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let n = self.ma.a.n();
        let mut tx = vec![S::cst(self.t)];
        tx.extend_from_slice(&z[..n]);
        let g = self.exp.call(&tx);
        let big = g.len();
        let mut u = Mat::zeros(big, n);
        let mut dir = vec![S::zero(); n + 1];
        for mu in 0..n {
            dir[mu + 1] = S::one();
            let col = self.exp.jvp(&tx, &dir).1;
            dir[mu + 1] = S::zero();
            for i in 0..big {
                u[(i, mu)] = col[i];
            }
        }
        self.ma.a.phi_ordinary_s(&g, &u, z)
    }
}

fn flow_map(ma: &MultiphaseAction, alg: &GroupoidAlgebroid, xi: &AlgebroidSection, t: f64) -> SmoothMap {
    let d = ma.ord.cod_dim();
    SmoothMap::new(d, d, BisectionFlow { ma: ma.clone(), exp: alg.exp_map(xi), t }, "bisection_flow")
}

/// (L_{X_lift}θ_H)(w…) by central differences of the pulled-back form under
/// the induced bisection flow.
pub fn lie_derivative_theta_h(ma: &MultiphaseAction, alg: &GroupoidAlgebroid, h: &Hamiltonian, gen: &Generator, z: &[f64], ws: &[Vec<f64>]) -> f64 {
    let xi = gen.to_section(alg);
    let pulled = |t: f64| {
        let f = flow_map(ma, alg, &xi, t);
        let mut zt = Vec::new();
        let wt: Vec<Vec<f64>> = ws
            .iter()
            .map(|w| {
                let (a, b) = f.jvp(z, w);
                zt = a;
                b
            })
            .collect();
        if ws.is_empty() {
            zt = f.call(z);
        }
        h.theta_h_eval(&zt, &wt)
    };
    (pulled(CLAIM1_STEP) - pulled(-CLAIM1_STEP)) / (2.0 * CLAIM1_STEP)
}

/// Largest |L_{X_lift}θ_H| over sample points and vectors.
pub fn claim1_check(ma: &MultiphaseAction, alg: &GroupoidAlgebroid, h: &Hamiltonian, gen: &Generator, samples: &[(Vec<f64>, Vec<Vec<f64>>)]) -> f64 {
    samples.iter().map(|(z, ws)| lie_derivative_theta_h(ma, alg, h, gen, z, ws).abs()).fold(0.0, f64::max)
}

/// φ̂*(i_{X_lift}ω_H) at a grid node.
pub fn claim2_at(ma: &MultiphaseAction, h: &Hamiltonian, gen: &Generator, phi: &GridSection, it: usize, ix: isize) -> Result<f64> {
    let z = phi.multiphase_point(it, ix)?;
    let mut ws = vec![lift(ma, PhaseSpace::Ordinary, gen, &z)];
    ws.extend(crate::multiphase::section_tangents(phi, it, ix)?);
    Ok(h.omega_h_eval(&z, &ws))
}

pub fn claim2_check(ma: &MultiphaseAction, h: &Hamiltonian, gen: &Generator, phi: &GridSection, it: usize, ix: isize) -> Result<f64> {
    if !phi.spec.is_interior(it, ix) {
        return Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]));
    }
    claim2_at(ma, h, gen, phi, it, ix).map(f64::abs)
}

/// φ̂*(L_{X_lift}θ_H) at a grid node.
pub fn claim1_at(ma: &MultiphaseAction, alg: &GroupoidAlgebroid, h: &Hamiltonian, gen: &Generator, phi: &GridSection, it: usize, ix: isize) -> Result<f64> {
    let z = phi.multiphase_point(it, ix)?;
    let ws = crate::multiphase::section_tangents(phi, it, ix)?;
    Ok(lie_derivative_theta_h(ma, alg, h, gen, &z, &ws))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentForm {
    pub x: Vec<f64>,
    pub components: Vec<f64>,
}

/// J^μ = (−1)^μ 𝒥(X)(Tφ̂∂_ν, ν ≠ μ) at node (it, ix); ix may be a periodic image.
pub fn current_at(ma: &MultiphaseAction, h: &Hamiltonian, gen: &Generator, phi: &GridSection, it: usize, ix: isize) -> Result<CurrentForm> {
    let n = phi.n();
    let z = phi.multiphase_point(it, ix)?;
    let tang = crate::multiphase::section_tangents(phi, it, ix)?;
    let xl = lift(ma, PhaseSpace::Ordinary, gen, &z);
    let components = (0..n)
        .map(|mu| {
            let mut ws = vec![xl.clone()];
            ws.extend(tang.iter().enumerate().filter(|(nu, _)| *nu != mu).map(|(_, t)| t.clone()));
            let v = h.theta_h_eval(&z, &ws);
            if mu % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect();
    Ok(CurrentForm { x: z[..n].to_vec(), components })
}

/// Current on every node, time-major, plus one periodic image column.
#[derive(Clone, Debug)]
pub struct CurrentField {
    pub nt: usize,
    pub cols: usize,
    pub j: Vec<CurrentForm>,
}

impl CurrentField {
    pub fn at(&self, it: usize, col: usize) -> &CurrentForm {
        &self.j[it * self.cols + col]
    }
}

pub fn noether_current(ma: &MultiphaseAction, h: &Hamiltonian, gen: &Generator, phi: &GridSection) -> Result<CurrentField> {
    use rayon::prelude::*;
    let sp = &phi.spec;
    let cols = if sp.n == 1 { 1 } else { sp.nx + 1 + usize::from(sp.periodic_x) };
    let start: isize = if sp.n == 2 && sp.periodic_x { -1 } else { 0 };
    let cols = if sp.n == 2 && !sp.periodic_x { sp.nx } else { cols };
    let j = (0..sp.nt * cols)
        .into_par_iter()
        .map(|i| current_at(ma, h, gen, phi, i / cols, start + (i % cols) as isize))
        .collect::<Result<Vec<_>>>()?;
    Ok(CurrentField { nt: sp.nt, cols, j })
}

fn col_of(phi: &GridSection, ix: isize) -> usize {
    if phi.spec.n == 2 && phi.spec.periodic_x {
        (ix + 1) as usize
    } else {
        ix.max(0) as usize
    }
}

/// Σ_μ ∂_μJ^μ by centered differences at an interior node.
pub fn current_divergence(field: &CurrentField, phi: &GridSection, it: usize, ix: isize) -> Result<f64> {
    if !phi.spec.is_interior(it, ix) {
        return Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]));
    }
    let sp = &phi.spec;
    let c = col_of(phi, ix);
    let mut div = (field.at(it + 1, c).components[0] - field.at(it - 1, c).components[0]) / (2.0 * sp.dt);
    if sp.n == 2 {
        div += (field.at(it, c + 1).components[1] - field.at(it, c - 1).components[1]) / (2.0 * sp.dx);
    }
    Ok(div)
}

/// Divergences at interior nodes of the time window, time-major.
pub fn divergence_field(field: &CurrentField, phi: &GridSection) -> Result<Vec<((usize, isize), f64)>> {
    phi.window_interior_nodes().into_iter().map(|(it, ix)| Ok(((it, ix), current_divergence(field, phi, it, ix)?))).collect()
}

/// Charges on constant-time slices and the boundary flux balance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeSeries {
    pub t: Vec<f64>,
    pub charge: Vec<f64>,
    /// ∫₀ᵗ (J¹(x_right) − J¹(x_left)) dt by the trapezoid rule.
    pub outflow: Vec<f64>,
    /// max_t |Q(t) − Q(0) + outflow(t)| / scale.
    pub drift: f64,
    pub scale: f64,
}

pub fn charge_series(field: &CurrentField, phi: &GridSection) -> ChargeSeries {
    let sp = &phi.spec;
    let (lo, hi) = phi.window_t();
    let rows = lo..=hi;
    let t: Vec<f64> = rows.clone().map(|it| sp.coord(it, 0)[0]).collect();
    let (charge, abs_charge, flux): (Vec<f64>, Vec<f64>, Vec<f64>) = if sp.n == 1 {
        (rows.clone().map(|it| field.at(it, 0).components[0]).collect(), rows.clone().map(|it| field.at(it, 0).components[0].abs()).collect(), vec![0.0; t.len()])
    } else {
        let (first, last) = if sp.periodic_x { (1, sp.nx + 1) } else { (0, sp.nx - 1) };
        let mut q = Vec::new();
        let mut qa = Vec::new();
        let mut f = Vec::new();
        for it in rows.clone() {
            let (mut s, mut sa) = (0.0, 0.0);
            for c in first..=last {
                let w = if c == first || c == last { 0.5 * sp.dx } else { sp.dx };
                let j0 = field.at(it, c).components[0];
                s += w * j0;
                sa += w * j0.abs();
            }
            q.push(s);
            qa.push(sa);
            f.push(field.at(it, last).components[1] - field.at(it, first).components[1]);
        }
        (q, qa, f)
    };
    let m = t.len();
    let mut outflow = vec![0.0; m];
    for it in 1..m {
        outflow[it] = outflow[it - 1] + 0.5 * sp.dt * (flux[it] + flux[it - 1]);
    }
    let scale = charge[0].abs().max(abs_charge.iter().cloned().fold(0.0, f64::max)).max(f64::MIN_POSITIVE);
    let drift = (0..m).map(|it| (charge[it] - charge[0] + outflow[it]).abs()).fold(0.0, f64::max) / scale;
    ChargeSeries { t, charge, outflow, drift, scale }
}

/// |div − (claim-1 term + claim-2 term)| at an interior node.
pub fn decomposition_residual(
    ma: &MultiphaseAction,
    alg: &GroupoidAlgebroid,
    h: &Hamiltonian,
    gen: &Generator,
    field: &CurrentField,
    phi: &GridSection,
    it: usize,
    ix: isize,
) -> Result<f64> {
    let div = current_divergence(field, phi, it, ix)?;
    let c1 = claim1_at(ma, alg, h, gen, phi, it, ix)?;
    let c2 = claim2_at(ma, h, gen, phi, it, ix)?;
    Ok((div - c1 - c2).abs())
}

/// ω_H(X_lift, w…), the integrand behind claim 2, for arbitrary vectors.
pub fn lift_contraction(ma: &MultiphaseAction, h: &Hamiltonian, gen: &Generator, z: &[f64], ws: &[Vec<f64>]) -> f64 {
    let mut all = vec![lift(ma, PhaseSpace::Ordinary, gen, z)];
    all.extend(ws.iter().cloned());
    h.omega_h_eval(z, &all)
}

/// ω(Z_lift, w…) on Λ.
pub fn lift_contraction_extended(ma: &MultiphaseAction, gen: &Generator, z: &[f64], ws: &[Vec<f64>]) -> f64 {
    let (n, k) = (ma.a.n(), ma.a.k());
    let mut all = vec![lift(ma, PhaseSpace::Extended, gen, z)];
    all.extend(ws.iter().cloned());
    omega_eval(n, k, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{ActionChart, ActionKind};
    use crate::algebroid::algebroid_of_groupoid;
    use crate::grid::GridSpec;
    use crate::groupoid::pair_so2;
    use crate::manifold::{BundleChart, ChartManifold};
    use crate::multiphase::klein_gordon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kg_setup() -> (MultiphaseAction, GroupoidAlgebroid, Hamiltonian) {
        let m = ChartManifold::cube("R2", 2, -4.0, 4.0);
        let g = pair_so2(m.clone());
        let a = ActionChart::standard(g.clone(), BundleChart::trivial(m, 2, -5.0, 5.0), ActionKind::TransportSo2).unwrap();
        let (_, h) = klein_gordon(2, 2, 0.5, &[1.0, -1.0]).unwrap();
        (MultiphaseAction::new(a), algebroid_of_groupoid(&g).unwrap(), h)
    }

    fn gen(name: &str, rows: &[(usize, usize, f64)], c: &[(usize, f64)]) -> Generator {
        let mut a = Mat::zeros(5, 2);
        for &(i, j, v) in rows {
            a[(i, j)] = v;
        }
        let mut cv = vec![0.0; 5];
        for &(i, v) in c {
            cv[i] = v;
        }
        Generator::affine(name, a, cv)
    }

    fn time() -> Generator {
        gen("time", &[], &[(0, 1.0)])
    }

    fn boost() -> Generator {
        gen("boost", &[(0, 1, 1.0), (1, 0, 1.0)], &[])
    }

    fn internal() -> Generator {
        gen("internal", &[], &[(4, 1.0)])
    }

    fn dilation() -> Generator {
        gen("dilation", &[(0, 0, 1.0)], &[])
    }

    #[test]
    fn admissibility_gate() {
        let (ma, _, _) = kg_setup();
        let pred = lorentz_predicate(vec![1.0, -1.0]);
        let pts = vec![vec![0.1, 0.3], vec![-0.5, 0.7]];
        for g in [time(), boost(), internal(), Generator::zero(2, 5)] {
            check_admissible(&ma.a.g, &pred, &g, &pts).unwrap();
        }
        assert!(matches!(check_admissible(&ma.a.g, &pred, &dilation(), &pts), Err(GnkError::GeneratorNotAdmissible { .. })));
        let bad = gen("sourcey", &[], &[(2, 1.0)]);
        assert!(check_admissible(&ma.a.g, &pred, &bad, &pts).is_err());
    }

    #[test]
    fn momentum_map_linear_and_z_variant() {
        let (ma, _, h) = kg_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ws = vec![(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()];
        let (t, b) = (time(), boost());
        let mut a = Mat::zeros(5, 2);
        a[(0, 1)] = -3.0;
        a[(1, 0)] = -3.0;
        let comb = Generator::affine("comb", a, vec![2.0, 0.0, 0.0, 0.0, 0.0]);
        let lhs = momentum_map(&ma, Some(&h), &comb, &z, &ws);
        let rhs = 2.0 * momentum_map(&ma, Some(&h), &t, &z, &ws) - 3.0 * momentum_map(&ma, Some(&h), &b, &z, &ws);
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!(momentum_map(&ma, Some(&h), &Generator::zero(2, 5), &z, &ws), 0.0);
        let (v, dv) = b.jet_at(&z[..2]);
        assert!((momentum_map_z(&ma, Some(&h), &v, &dv, &z, &ws) - momentum_map(&ma, Some(&h), &b, &z, &ws)).abs() < 1e-12);
    }

    #[test]
    fn mechanics_momentum_map_is_minus_energy() {
        let m = ChartManifold::cube("R", 1, -4.0, 4.0);
        let g = crate::groupoid::pair(m.clone());
        let a = ActionChart::standard(g, BundleChart::trivial(m, 1, -5.0, 5.0), ActionKind::Transport).unwrap();
        let ma = MultiphaseAction::new(a);
        let (_, h) = crate::multiphase::free_particle();
        let t = Generator::affine("time", Mat::zeros(2, 1), vec![1.0, 0.0]);
        assert!((momentum_map(&ma, Some(&h), &t, &[0.3, 0.0, 2.0], &[]) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn claim1_vanishes_for_admissible_and_not_for_dilation() {
        let (ma, alg, h) = kg_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..3)
            .map(|_| {
                let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let ws = (0..2).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                (z, ws)
            })
            .collect();
        for g in [time(), boost(), internal(), Generator::zero(2, 5)] {
            assert!(claim1_check(&ma, &alg, &h, &g, &samples) < 1e-5, "{}", g.name);
        }
        assert!(claim1_check(&ma, &alg, &h, &dilation(), &samples) > 1e-2);
    }

    fn kg_exact(nx: usize) -> GridSection {
        let (m, kx) = (0.5f64, 2.0 * std::f64::consts::PI);
        let om = (kx * kx + m * m).sqrt();
        let dx = 1.0 / nx as f64;
        let spec = GridSpec::space_time(12, nx, 0.0, 0.5 * dx, 0.0, dx, true);
        let f = |x: &[f64]| vec![(kx * x[1] - om * x[0]).cos(), 0.5 * (kx * x[1] - om * x[0]).sin()];
        let phi = GridSection::from_fn(spec.clone(), 2, f);
        let p: Vec<f64> = (0..spec.nodes())
            .flat_map(|i| {
                let x = spec.coord(i / nx, (i % nx) as isize);
                let (s, c) = (kx * x[1] - om * x[0]).sin_cos();
                vec![om * s, kx * s, -0.5 * om * c, -0.5 * kx * c]
            })
            .collect();
        phi.with_momenta(p).unwrap()
    }

    #[test]
    fn kg_energy_and_internal_currents_match_oracles() {
        let (ma, _, h) = kg_setup();
        let exact = kg_exact(32);
        let mut p = Vec::new();
        for it in 0..exact.spec.nt {
            for ix in 0..32 {
                let (dt, dx) = (exact.dy(it, ix, 0).unwrap(), exact.dy(it, ix, 1).unwrap());
                p.extend([dt[0], -dx[0], dt[1], -dx[1]]);
            }
        }
        let phi = GridSection { p: None, ..exact }.with_momenta(p).unwrap();
        let jt = current_at(&ma, &h, &time(), &phi, 5, 3).unwrap();
        let y = phi.y_at(5, 3).unwrap().to_vec();
        let (dt, dx) = (phi.dy(5, 3, 0).unwrap(), phi.dy(5, 3, 1).unwrap());
        let eps: f64 = (0..2).map(|a| 0.5 * (dt[a] * dt[a] + dx[a] * dx[a] + 0.25 * y[a] * y[a])).sum();
        let flux: f64 = (0..2).map(|a| dt[a] * dx[a]).sum();
        assert!((jt.components[0] + eps).abs() < 1e-10, "{jt:?} {eps}");
        assert!((jt.components[1] - flux).abs() < 1e-10);
        let ji = current_at(&ma, &h, &internal(), &phi, 5, 3).unwrap();
        let q0 = y[0] * dt[1] - y[1] * dt[0];
        let q1 = -(y[0] * dx[1] - y[1] * dx[0]);
        assert!((ji.components[0].abs() - q0.abs()).abs() < 1e-10 && (ji.components[1].abs() - q1.abs()).abs() < 1e-10, "{ji:?} {q0} {q1}");
        assert!((ji.components[0] * q1 - ji.components[1] * q0).abs() < 1e-10);
        let jz = current_at(&ma, &h, &Generator::zero(2, 5), &phi, 5, 3).unwrap();
        assert_eq!(jz.components, vec![0.0, 0.0]);
    }

    #[test]
    fn divergence_converges_and_decomposes() {
        let (ma, alg, h) = kg_setup();
        for g in [time(), boost(), internal()] {
            let mut prev = f64::INFINITY;
            for nx in [32, 64] {
                let phi = kg_exact(nx);
                let field = noether_current(&ma, &h, &g, &phi).unwrap();
                let worst = divergence_field(&field, &phi).unwrap().iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
                assert!(worst < prev / 3.0 || worst < 1e-10, "{} {worst} {prev}", g.name);
                prev = worst;
                let r = decomposition_residual(&ma, &alg, &h, &g, &field, &phi, 5, 3).unwrap();
                assert!(r < 5.0 * worst.max(1e-6), "{} {r}", g.name);
            }
        }
    }

    #[test]
    fn constant_current_has_zero_divergence_and_charge() {
        let spec = GridSpec::space_time(5, 4, 0.0, 0.1, 0.0, 0.25, true);
        let phi = GridSection::new(spec, 1, vec![0.0; 20]).unwrap();
        let field = CurrentField { nt: 5, cols: 6, j: (0..30).map(|_| CurrentForm { x: vec![], components: vec![2.0, 1.0] }).collect() };
        assert_eq!(current_divergence(&field, &phi, 2, 0).unwrap(), 0.0);
        assert!(current_divergence(&field, &phi, 0, 0).is_err());
        let q = charge_series(&field, &phi);
        assert!((q.charge[0] - 2.0).abs() < 1e-12 && q.drift < 1e-12);
    }

    #[test]
    fn perturbed_field_violates_conservation() {
        let (ma, _, h) = kg_setup();
        let mut phi = kg_exact(32);
        for (i, v) in phi.y.iter_mut().enumerate() {
            *v += 0.3 * ((i as f64) * 0.7).sin();
        }
        let field = noether_current(&ma, &h, &time(), &phi).unwrap();
        let worst = divergence_field(&field, &phi).unwrap().iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
        assert!(worst > 1.0);
        assert!(claim2_check(&ma, &h, &time(), &phi, 5, 3).unwrap() > 1e-2);
    }
}
