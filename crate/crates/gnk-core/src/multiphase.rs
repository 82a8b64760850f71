//! Extended and ordinary multiphase spaces with their canonical forms,
//! Lagrangians, Hamiltonians, Legendre maps, field-equation residuals and the
//! invariance checks for L and H.
//!
//! Layouts: a point of Λ = J°E is `(x, y, P, c)` with `P[a][μ]` at `a·n + μ`;
//! the ordinary space J⃗°E drops `c`. The n-form attached to such a point is
//! `c dⁿx + P_a^μ dyᵃ∧dⁿx_μ` with `dⁿx_μ = i_{∂_μ} dⁿx`.

use serde::{Deserialize, Serialize};

use crate::actions::{ActionChart, ActionSampler, InvarianceReport, TensorPoint};
use crate::error::{GnkError, Result};
use crate::grid::{GridRegion, GridSection};
use crate::jet::{ExtendedCojetPoint, Jet, OrdinaryCojetPoint};
use crate::jet_groupoid::{JetElement, SecondJetElement};
use crate::linalg::{max_abs_diff, Mat};
use crate::smooth::{Rule, Scalar, SmoothMap};

pub fn lambda_dim(n: usize, k: usize) -> usize {
    n + k + k * n + 1
}

pub fn ordinary_dim(n: usize, k: usize) -> usize {
    n + k + k * n
}

/// Value of `c dⁿx + P_a^μ dyᵃ∧dⁿx_μ` on n vectors of T_eE.
pub fn horizontal_form_eval<S: Scalar>(n: usize, k: usize, p: &[S], c: S, ws: &[&[S]]) -> S {
    debug_assert_eq!(ws.len(), n);
    let m = Mat::from_fn(n, n, |i, mu| ws[i][mu]);
    let mut val = c * m.det();
    for a in 0..k {
        for mu in 0..n {
            let coef = p[a * n + mu];
            if coef.value() == 0.0 && coef == S::zero() {
                continue;
            }
            let mut r = m.clone();
            for i in 0..n {
                r[(i, mu)] = ws[i][n + a];
            }
            val += coef * r.det();
        }
    }
    val
}

/// θ at z ∈ Λ on n tangent vectors (only their T_eE part enters).
pub fn theta_eval<S: Scalar>(n: usize, k: usize, z: &[S], ws: &[Vec<S>]) -> S {
    let refs: Vec<&[S]> = ws.iter().map(|w| w.as_slice()).collect();
    horizontal_form_eval(n, k, &z[n + k..n + k + k * n], z[n + k + k * n], &refs)
}

/// ω = dyᵃ∧dP_a^μ∧dⁿx_μ − dc∧dⁿx at z on n + 1 tangent vectors.
pub fn omega_eval<S: Scalar>(n: usize, k: usize, ws: &[Vec<S>]) -> S {
    debug_assert_eq!(ws.len(), n + 1);
    let off = n + k;
    let mut acc = S::zero();
    for i in 0..=n {
        let rest: Vec<&[S]> = ws.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| w.as_slice()).collect();
        let wi = &ws[i];
        let term = horizontal_form_eval(n, k, &wi[off..off + k * n], wi[off + k * n], &rest);
        if i % 2 == 0 {
            acc -= term;
        } else {
            acc += term;
        }
    }
    acc
}

/// −dθ by central differences of θ along each vector, as an oracle for ω.
pub fn omega_fd(n: usize, k: usize, z: &[f64], ws: &[Vec<f64>], h: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..=n {
        let rest: Vec<Vec<f64>> = ws.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| w.clone()).collect();
        let zp: Vec<f64> = z.iter().zip(&ws[i]).map(|(a, b)| a + h * b).collect();
        let zm: Vec<f64> = z.iter().zip(&ws[i]).map(|(a, b)| a - h * b).collect();
        let d = (theta_eval(n, k, &zp, &rest) - theta_eval(n, k, &zm, &rest)) / (2.0 * h);
        acc += if i % 2 == 0 { d } else { -d };
    }
    -acc
}

/// A 1-horizontal n-form at e.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalFormPoint {
    pub e: Vec<f64>,
    pub p: Mat<f64>,
    pub c: f64,
}

impl HorizontalFormPoint {
    pub fn eval(&self, ws: &[Vec<f64>]) -> f64 {
        let refs: Vec<&[f64]> = ws.iter().map(|w| w.as_slice()).collect();
        horizontal_form_eval(self.p.cols, self.p.rows, &self.p.data, self.c, &refs)
    }

    /// Components as a covariant n-tensor on T_eE.
    pub fn to_tensor(&self) -> TensorPoint {
        let (n, d) = (self.p.cols, self.e.len());
        let total = d.pow(n as u32);
        let comps = (0..total)
            .map(|idx| {
                let mut rem = idx;
                let mut ws = vec![vec![0.0; d]; n];
                for slot in (0..n).rev() {
                    ws[slot][rem % d] = 1.0;
                    rem /= d;
                }
                self.eval(&ws)
            })
            .collect();
        TensorPoint { e: self.e.clone(), r: 0, s: n, comps }
    }

    /// Reads (P, c) back from a covariant n-tensor.
    pub fn from_tensor(n: usize, k: usize, t: &TensorPoint) -> Self {
        let d = n + k;
        let basis = |i: usize| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        };
        let c = crate::actions::contract(&t.comps, d, &(0..n).map(basis).collect::<Vec<_>>());
        let p = Mat::from_fn(k, n, |a, mu| {
            let ws: Vec<Vec<f64>> = (0..n).map(|i| if i == mu { basis(n + a) } else { basis(i) }).collect();
            crate::actions::contract(&t.comps, d, &ws)
        });
        HorizontalFormPoint { e: t.e.clone(), p, c }
    }
}

/// J°E ≅ Λⁿ₁T*E.
pub fn cojet_form_iso(z: &ExtendedCojetPoint) -> HorizontalFormPoint {
    HorizontalFormPoint { e: z.base(), p: z.p.clone(), c: z.c }
}

pub fn form_cojet_iso(n: usize, f: &HorizontalFormPoint) -> ExtendedCojetPoint {
    ExtendedCojetPoint { x: f.e[..n].to_vec(), y: f.e[n..].to_vec(), p: f.p.clone(), c: f.c }
}

/// |iso(u·z) − u·iso(z)| with u acting on forms through the tangent action.
pub fn iso_equivariance_residual(a: &ActionChart, u: &JetElement, z: &ExtendedCojetPoint) -> Result<f64> {
    let lhs = cojet_form_iso(&a.act_extended_cojet(u, z)?);
    let moved = a.act_tensor(u, &cojet_form_iso(z).to_tensor())?;
    let rhs = HorizontalFormPoint::from_tensor(a.n(), a.k(), &moved);
    Ok(max_abs_diff(&lhs.e, &rhs.e).max(lhs.p.max_abs_diff(&rhs.p)).max((lhs.c - rhs.c).abs()))
}

// ---------------------------------------------------------------------------
// Lagrangians and Hamiltonians

pub const BUILTIN_LAGRANGIANS: &[&str] = &["klein_gordon", "free_particle", "so2_doublet"];

#[derive(Clone, Debug)]
pub struct Lagrangian {
    pub name: String,
    pub n: usize,
    pub k: usize,
    /// (x, y, v) ↦ ℓ.
    pub density: SmoothMap,
    /// ℓ is quadratic in v (enables the closed-form Legendre inverse).
    pub quadratic: bool,
}

#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub name: String,
    pub n: usize,
    pub k: usize,
    /// (x, y, P) ↦ h; the section is (x, y, P) ↦ (x, y, P, −h).
    pub h: SmoothMap,
}

/// Σ_a ½η^{μμ} v_{aμ}² − ½m² yₐ² with diagonal η.
struct KgDensity {
    n: usize,
    k: usize,
    eta: Vec<f64>,
    m2: f64,
}

impl Rule for KgDensity {
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let (n, k) = (self.n, self.k);
        let mut acc = S::zero();
        for a in 0..k {
            let y = z[n + a];
            acc -= (y * y).scale(0.5 * self.m2);
            for mu in 0..n {
                let v = z[n + k + a * n + mu];
                acc += (v * v).scale(0.5 * self.eta[mu]);
            }
        }
        vec![acc]
    }
}

/// Σ_a ½η_{μμ} P_a^μ² + ½m² yₐ².
struct KgHamiltonian {
    n: usize,
    k: usize,
    eta: Vec<f64>,
    m2: f64,
}

impl Rule for KgHamiltonian {
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let (n, k) = (self.n, self.k);
        let mut acc = S::zero();
        for a in 0..k {
            let y = z[n + a];
            acc += (y * y).scale(0.5 * self.m2);
            for mu in 0..n {
                let p = z[n + k + a * n + mu];
                acc += (p * p).scale(0.5 / self.eta[mu]);
            }
        }
        vec![acc]
    }
}

fn check_eta(eta: &[f64]) -> Result<()> {
    if eta.iter().any(|&e| e != 1.0 && e != -1.0) {
        return Err(GnkError::Config(format!("metric signature entries must be ±1, got {eta:?}")));
    }
    Ok(())
}

/// Klein–Gordon for k real components with diagonal signature η.
pub fn klein_gordon(n: usize, k: usize, mass: f64, eta: &[f64]) -> Result<(Lagrangian, Hamiltonian)> {
    check_eta(eta)?;
    if eta.len() != n {
        return Err(GnkError::DimensionMismatch { what: "signature".into(), expected: n, got: eta.len() });
    }
    let d = ordinary_dim(n, k);
    let m2 = mass * mass;
    let l = Lagrangian {
        name: "klein_gordon".into(),
        n,
        k,
        density: SmoothMap::new(d, 1, KgDensity { n, k, eta: eta.to_vec(), m2 }, "kg_lagrangian"),
        quadratic: true,
    };
    let h = Hamiltonian { name: "klein_gordon".into(), n, k, h: SmoothMap::new(d, 1, KgHamiltonian { n, k, eta: eta.to_vec(), m2 }, "kg_hamiltonian") };
    Ok((l, h))
}

/// ℓ = ½v² in one time dimension.
pub fn free_particle() -> (Lagrangian, Hamiltonian) {
    let (mut l, mut h) = klein_gordon(1, 1, 0.0, &[1.0]).expect("free particle");
    l.name = "free_particle".into();
    h.name = "free_particle".into();
    (l, h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianParams {
    #[serde(default)]
    pub mass: f64,
    /// Diagonal of η; defaults to (+1, −1, …, −1).
    #[serde(default)]
    pub signature: Option<Vec<f64>>,
}

pub fn lagrangian_by_name(name: &str, n: usize, params: &LagrangianParams) -> Result<(Lagrangian, Hamiltonian)> {
    let eta = params.signature.clone().unwrap_or_else(|| (0..n).map(|i| if i == 0 { 1.0 } else { -1.0 }).collect());
    match name {
        "klein_gordon" => klein_gordon(n, 1, params.mass, &eta),
        "so2_doublet" => {
            let (mut l, mut h) = klein_gordon(n, 2, params.mass, &eta)?;
            l.name = name.into();
            h.name = name.into();
            Ok((l, h))
        }
        "free_particle" => {
            if n != 1 {
                return Err(GnkError::Config("free_particle needs a one-dimensional base".into()));
            }
            Ok(free_particle())
        }
        other => Err(GnkError::UnknownBuiltin(format!("lagrangian {other}"))),
    }
}

fn jet_coords(u: &Jet) -> Vec<f64> {
    let mut z = u.e.clone();
    z.extend(u.fiber_block().data);
    z
}

impl Lagrangian {
    pub fn eval(&self, u: &Jet) -> f64 {
        self.density.call(&jet_coords(u))[0]
    }

    fn fiber_gradient(&self, j: &[f64]) -> Vec<f64> {
        let off = self.n + self.k;
        let mut dir = vec![0.0; j.len()];
        (0..self.k * self.n)
            .map(|i| {
                dir[off + i] = 1.0;
                let d = self.density.jvp(j, &dir).1[0];
                dir[off + i] = 0.0;
                d
            })
            .collect()
    }

    /// FL(u) = (e, ∂ℓ/∂v, ℓ − ∂ℓ/∂v·v).
    pub fn legendre_full(&self, u: &Jet) -> ExtendedCojetPoint {
        let j = jet_coords(u);
        let p = self.fiber_gradient(&j);
        let v = &j[self.n + self.k..];
        let c = self.density.call(&j)[0] - p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        ExtendedCojetPoint { x: u.e[..self.n].to_vec(), y: u.e[self.n..].to_vec(), p: Mat::from_vec(self.k, self.n, p), c }
    }

    pub fn legendre_linear(&self, u: &Jet) -> OrdinaryCojetPoint {
        crate::jet::linear_part(&self.legendre_full(u))
    }

    /// FL as a smooth map on JE coordinates.
    pub fn legendre_map(&self) -> SmoothMap {
        let d = ordinary_dim(self.n, self.k);
        SmoothMap::new(d, d + 1, LegendreRule { l: self.density.clone(), n: self.n, k: self.k }, "legendre")
    }

    /// ∂²ℓ/∂v∂v at a point of JE.
    pub fn fiber_hessian(&self, j: &[f64]) -> Mat<f64> {
        let (off, m) = (self.n + self.k, self.k * self.n);
        Mat::from_fn(m, m, |i, l| {
            let mut a = vec![0.0; j.len()];
            let mut b = vec![0.0; j.len()];
            a[off + i] = 1.0;
            b[off + l] = 1.0;
            crate::smooth::second_directional_s(&self.density, j, &a, &b)[0]
        })
    }

    /// Smallest |det ∂²ℓ/∂v²| over the given JE points.
    pub fn hyperregular_certificate(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for j in points {
            let d = self.fiber_hessian(j).det().abs();
            if d <= 1e-9 {
                return Err(GnkError::NotHyperregular(format!("fiber Hessian singular at {j:?}")));
            }
            worst = worst.min(d);
        }
        Ok(worst)
    }
}

struct LegendreRule {
    l: SmoothMap,
    n: usize,
    k: usize,
}

impl Rule for LegendreRule {
    fn apply<S: Scalar>(&self, j: &[S]) -> Vec<S> {
        let off = self.n + self.k;
        let mut dir = vec![S::zero(); j.len()];
        let mut out = j[..off].to_vec();
        let mut pv = S::zero();
        for i in 0..self.k * self.n {
            dir[off + i] = S::one();
            let d = self.l.jvp(j, &dir).1[0];
            dir[off + i] = S::zero();
            pv += d * j[off + i];
            out.push(d);
        }
        out.push(self.l.call(j)[0] - pv);
        out
    }
}

impl Hamiltonian {
    pub fn h_at(&self, z: &[f64]) -> f64 {
        self.h.call(z)[0]
    }

    /// H(z⃗) = (z⃗, −h(z⃗)).
    pub fn section_s<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let mut out = z.to_vec();
        out.push(-self.h.call(z)[0]);
        out
    }

    pub fn section(&self, z: &OrdinaryCojetPoint) -> ExtendedCojetPoint {
        let v = self.section_s(&z.to_vec());
        ExtendedCojetPoint::from_vec(self.n, self.k, &v)
    }

    /// TH·w = (w, −dh·w).
    pub fn push_vector(&self, z: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = w.to_vec();
        out.push(-self.h.jvp(z, w).1[0]);
        out
    }

    pub fn theta_h_eval(&self, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let hz = self.section_s(z);
        theta_eval(self.n, self.k, &hz, ws)
    }

    pub fn omega_h_eval(&self, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let pushed: Vec<Vec<f64>> = ws.iter().map(|w| self.push_vector(z, w)).collect();
        omega_eval(self.n, self.k, &pushed)
    }

    /// −dθ_H by central differences.
    pub fn omega_h_fd(&self, z: &[f64], ws: &[Vec<f64>], h: f64) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..=n {
            let rest: Vec<Vec<f64>> = ws.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| w.clone()).collect();
            let zp: Vec<f64> = z.iter().zip(&ws[i]).map(|(a, b)| a + h * b).collect();
            let zm: Vec<f64> = z.iter().zip(&ws[i]).map(|(a, b)| a - h * b).collect();
            let d = (self.theta_h_eval(&zp, &rest) - self.theta_h_eval(&zm, &rest)) / (2.0 * h);
            acc += if i % 2 == 0 { d } else { -d };
        }
        -acc
    }
}

struct QuadraticDual {
    l: SmoothMap,
    n: usize,
    k: usize,
    qinv: Mat<f64>,
}

impl Rule for QuadraticDual {
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let (off, m) = (self.n + self.k, self.k * self.n);
        let mut j: Vec<S> = z[..off].to_vec();
        j.extend(std::iter::repeat(S::zero()).take(m));
        let mut dir = vec![S::zero(); off + m];
        let mut rhs = Vec::with_capacity(m);
        for i in 0..m {
            dir[off + i] = S::one();
            let b = self.l.jvp(&j, &dir).1[0];
            dir[off + i] = S::zero();
            rhs.push(z[off + i] - b);
        }
        let v = Mat::lift(&self.qinv).mul_vec(&rhs);
        let mut pv = S::zero();
        for i in 0..m {
            j[off + i] = v[i];
            pv += z[off + i] * v[i];
        }
        vec![pv - self.l.call(&j)[0]]
    }
}

struct NewtonDual {
    l: SmoothMap,
    n: usize,
    k: usize,
}

impl Rule for NewtonDual {
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let (off, m) = (self.n + self.k, self.k * self.n);
        let mut j: Vec<S> = z[..off].to_vec();
        j.extend(std::iter::repeat(S::zero()).take(m));
        let grad = |j: &[S]| -> Vec<S> {
            let mut dir = vec![S::zero(); off + m];
            (0..m)
                .map(|i| {
                    dir[off + i] = S::one();
                    let d = self.l.jvp(j, &dir).1[0];
                    dir[off + i] = S::zero();
                    d
                })
                .collect()
        };
        for _ in 0..50 {
            let g = grad(&j);
            let r: Vec<S> = (0..m).map(|i| g[i] - z[off + i]).collect();
            let res = r.iter().fold(0.0f64, |a, v| a.max(v.value().abs()));
            let gm = SmoothMap::new(off + m, m, GradRule { l: self.l.clone(), off, m }, "grad");
            let hess = gm.jacobian_s(&j).block(0, off, m, m);
            let Some(step) = hess.solve(&r) else { return vec![S::cst(f64::NAN)] };
            for i in 0..m {
                j[off + i] -= step[i];
            }
            if res < 1e-12 {
                break;
            }
        }
        let mut pv = S::zero();
        for i in 0..m {
            pv += z[off + i] * j[off + i];
        }
        vec![pv - self.l.call(&j)[0]]
    }
}

struct GradRule {
    l: SmoothMap,
    off: usize,
    m: usize,
}

impl Rule for GradRule {
    fn apply<S: Scalar>(&self, j: &[S]) -> Vec<S> {
        let mut dir = vec![S::zero(); j.len()];
        (0..self.m)
            .map(|i| {
                dir[self.off + i] = S::one();
                let d = self.l.jvp(j, &dir).1[0];
                dir[self.off + i] = S::zero();
                d
            })
            .collect()
    }
}

/// H = FL ∘ (F⃗L)⁻¹ as h(x, y, P) = P·v* − ℓ(x, y, v*).
pub fn dedonder_hamiltonian(l: &Lagrangian, probe: &[Vec<f64>]) -> Result<Hamiltonian> {
    l.hyperregular_certificate(probe)?;
    let d = ordinary_dim(l.n, l.k);
    let h = if l.quadratic {
        let j0 = &probe[0];
        let qinv = l.fiber_hessian(j0).inverse().ok_or_else(|| GnkError::NotHyperregular("fiber Hessian".into()))?;
        SmoothMap::new(d, 1, QuadraticDual { l: l.density.clone(), n: l.n, k: l.k, qinv }, "dedonder")
    } else {
        SmoothMap::new(d, 1, NewtonDual { l: l.density.clone(), n: l.n, k: l.k }, "dedonder")
    };
    let ham = Hamiltonian { name: format!("{}_dual", l.name), n: l.n, k: l.k, h };
    for j in probe {
        if !ham.h.call(j).iter().all(|v| v.is_finite()) {
            return Err(GnkError::NewtonFailed(format!("Legendre inversion at {j:?}")));
        }
    }
    Ok(ham)
}

/// |FL(u) − H(F⃗L(u))|.
pub fn composition_residual(l: &Lagrangian, h: &Hamiltonian, u: &Jet) -> f64 {
    let full = l.legendre_full(u);
    let via = h.section(&l.legendre_linear(u));
    max_abs_diff(&full.to_vec(), &via.to_vec())
}

// ---------------------------------------------------------------------------
// Grid functionals and field equations

fn jet_point(phi: &GridSection, it: usize, ix: isize) -> Result<Vec<f64>> {
    let mut j = phi.spec.coord(it, ix);
    j.extend_from_slice(phi.y_at(it, ix)?);
    j.extend(phi.jet_block(it, ix)?);
    Ok(j)
}

/// Σ ℓ(jφ) over the nodes of K, each weighted by its cell volume.
pub fn action_functional(l: &Lagrangian, phi: &GridSection, region: GridRegion) -> Result<f64> {
    let sp = &phi.spec;
    let xr = if sp.n == 1 { (0, 0) } else { region.x };
    if region.t.1 >= sp.nt || xr.1 >= sp.nx || region.t.0 > region.t.1 || xr.0 > xr.1 {
        return Err(GnkError::RegionOutOfGrid(format!("{region:?}")));
    }
    let cell = if sp.n == 1 { sp.dt } else { sp.dt * sp.dx };
    let mut acc = 0.0;
    for it in region.t.0..=region.t.1 {
        for ix in xr.0..=xr.1 {
            acc += l.density.call(&jet_point(phi, it, ix as isize)?)[0] * cell;
        }
    }
    Ok(acc)
}

fn full_hessian(f: &SmoothMap, x: &[f64]) -> Mat<f64> {
    let d = x.len();
    let mut h = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            a[i] = 1.0;
            b[j] = 1.0;
            let v = crate::smooth::second_directional_s(f, x, &a, &b)[0];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// T jφ(∂_μ) = (e_μ, ∂_μ y, ∂_μ v) from grid differences.
fn jet_tangents(phi: &GridSection, it: usize, ix: isize) -> Result<Vec<Vec<f64>>> {
    let (n, k) = (phi.n(), phi.k);
    let v = phi.jet_block(it, ix)?;
    let s = phi.second_block(it, ix)?;
    Ok((0..n)
        .map(|mu| {
            let mut t = vec![0.0; n];
            t[mu] = 1.0;
            t.extend((0..k).map(|a| v[a * n + mu]));
            t.extend((0..k * n).map(|i| s[i * n + mu]));
            t
        })
        .collect())
}

/// ∂ℓ/∂yᵃ − D_μ(∂ℓ/∂v_a^μ), total derivatives through grid jets.
pub fn euler_lagrange_residual(l: &Lagrangian, phi: &GridSection, it: usize, ix: isize) -> Result<Vec<f64>> {
    let (n, k) = (l.n, l.k);
    let j = jet_point(phi, it, ix)?;
    let tang = jet_tangents(phi, it, ix)?;
    let hess = full_hessian(&l.density, &j);
    let grad = l.density.jacobian_s(&j);
    Ok((0..k)
        .map(|a| {
            let mut r = grad[(0, n + a)];
            for (mu, t) in tang.iter().enumerate() {
                let row = n + k + a * n + mu;
                r -= (0..j.len()).map(|c| hess[(row, c)] * t[c]).sum::<f64>();
            }
            r
        })
        .collect())
}

/// ω_𝓛(∂_{yᵃ}, T jφ ∂_0, …) with ω_𝓛 = FL*ω.
pub fn euler_lagrange_contraction(l: &Lagrangian, phi: &GridSection, it: usize, ix: isize) -> Result<Vec<f64>> {
    let (n, k) = (l.n, l.k);
    let j = jet_point(phi, it, ix)?;
    let fl = l.legendre_map();
    let tang: Vec<Vec<f64>> = jet_tangents(phi, it, ix)?.iter().map(|t| fl.jvp(&j, t).1).collect();
    Ok((0..k)
        .map(|a| {
            let mut x = vec![0.0; j.len()];
            x[n + a] = 1.0;
            let mut ws = vec![fl.jvp(&j, &x).1];
            ws.extend(tang.iter().cloned());
            omega_eval(n, k, &ws)
        })
        .collect())
}

/// De Donder–Weyl residuals (∂_μyᵃ − ∂h/∂P_a^μ, ∂_μP_a^μ + ∂h/∂yᵃ).
pub fn dedonder_weyl_residual(h: &Hamiltonian, phi: &GridSection, it: usize, ix: isize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !phi.spec.is_interior(it, ix) {
        return Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]));
    }
    let (n, k) = (h.n, h.k);
    let z = phi.multiphase_point(it, ix)?;
    let dh = h.h.jacobian_s(&z);
    let dys: Vec<Vec<f64>> = (0..n).map(|mu| phi.dy(it, ix, mu)).collect::<Result<_>>()?;
    let dps: Vec<Vec<f64>> = (0..n).map(|mu| phi.dp(it, ix, mu)).collect::<Result<_>>()?;
    let r1 = (0..k * n).map(|i| dys[i % n][i / n] - dh[(0, n + k + i)]).collect();
    let r2 = (0..k).map(|a| (0..n).map(|mu| dps[mu][a * n + mu]).sum::<f64>() + dh[(0, n + a)]).collect();
    Ok((r1, r2))
}

/// φ̂*(i_X ω_H) for X = ∂_{P_a^μ} and X = ∂_{yᵃ}.
pub fn dedonder_weyl_contraction(h: &Hamiltonian, phi: &GridSection, it: usize, ix: isize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !phi.spec.is_interior(it, ix) {
        return Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]));
    }
    let (n, k) = (h.n, h.k);
    let z = phi.multiphase_point(it, ix)?;
    let tang = section_tangents(phi, it, ix)?;
    let contract = |i: usize| {
        let mut x = vec![0.0; z.len()];
        x[i] = 1.0;
        let mut ws = vec![x];
        ws.extend(tang.iter().cloned());
        h.omega_h_eval(&z, &ws)
    };
    let c1 = (0..k * n).map(|i| contract(n + k + i)).collect();
    let c2 = (0..k).map(|a| contract(n + a)).collect();
    Ok((c1, c2))
}

/// T φ̂(∂_μ) = (e_μ, ∂_μ y, ∂_μ P) from grid differences.
pub fn section_tangents(phi: &GridSection, it: usize, ix: isize) -> Result<Vec<Vec<f64>>> {
    let n = phi.n();
    (0..n)
        .map(|mu| {
            let mut t = vec![0.0; n];
            t[mu] = 1.0;
            t.extend(phi.dy(it, ix, mu)?);
            t.extend(phi.dp(it, ix, mu)?);
            Ok(t)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Invariance of L and H, and of θ, ω under second-order jets

/// |ℓ(u·w)·det a − ℓ(w)|.
pub fn lagrangian_invariance_residual(a: &ActionChart, l: &Lagrangian, u: &JetElement, w: &Jet) -> Result<f64> {
    let uw = a.act_jet(u, w)?;
    let det = u.frame(&a.g).det();
    Ok((l.eval(&uw) * det - l.eval(w)).abs())
}

/// |FL(u·w) − u·FL(w)|.
pub fn legendre_equivariance_residual(a: &ActionChart, l: &Lagrangian, u: &JetElement, w: &Jet) -> Result<f64> {
    let lhs = l.legendre_full(&a.act_jet(u, w)?);
    let rhs = a.act_extended_cojet(u, &l.legendre_full(w))?;
    Ok(max_abs_diff(&lhs.to_vec(), &rhs.to_vec()))
}

/// |H(u·z⃗) − u·H(z⃗)|.
pub fn hamiltonian_invariance_residual(a: &ActionChart, h: &Hamiltonian, u: &JetElement, z: &OrdinaryCojetPoint) -> Result<f64> {
    let lhs = h.section(&a.act_ordinary_cojet(u, z)?);
    let rhs = a.act_extended_cojet(u, &h.section(z))?;
    Ok(max_abs_diff(&lhs.to_vec(), &rhs.to_vec()))
}

fn random_block(k: usize, n: usize, rng: &mut dyn rand::RngCore) -> Mat<f64> {
    use rand::Rng;
    Mat::from_fn(k, n, |_, _| rng.gen_range(-1.0..=1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvarianceMode {
    Lagrangian,
    Legendre,
    Hamiltonian,
}

/// Residual report over sampled (u, e) pairs with random jets or momenta at e.
pub fn check_invariance(
    a: &ActionChart,
    l: &Lagrangian,
    h: &Hamiltonian,
    mode: InvarianceMode,
    sampler: &ActionSampler,
    seed: u64,
    n_samples: usize,
) -> Result<InvarianceReport> {
    use rand::SeedableRng;
    let res: Vec<f64> = (0..n_samples)
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
            let (u, e) = sampler(&mut rng);
            let blk = random_block(a.k(), a.n(), &mut rng);
            match mode {
                InvarianceMode::Lagrangian => lagrangian_invariance_residual(a, l, &u, &Jet::from_fiber_block(e, &blk)),
                InvarianceMode::Legendre => legendre_equivariance_residual(a, l, &u, &Jet::from_fiber_block(e, &blk)),
                InvarianceMode::Hamiltonian => {
                    let z = OrdinaryCojetPoint { x: e[..a.n()].to_vec(), y: e[a.n()..].to_vec(), p: blk };
                    hamiltonian_invariance_residual(a, h, &u, &z)
                }
            }
        })
        .collect::<Result<_>>()?;
    let name = match mode {
        InvarianceMode::Lagrangian => "lagrangian invariance",
        InvarianceMode::Legendre => "legendre equivariance",
        InvarianceMode::Hamiltonian => "hamiltonian invariance",
    };
    Ok(InvarianceReport::from_residuals(name, &res))
}

/// Induced action of JG on Λ and J⃗°E, with its tangent lift by J(JG).
#[derive(Clone, Debug)]
pub struct MultiphaseAction {
    pub a: ActionChart,
    pub ext: SmoothMap,
    pub ord: SmoothMap,
}

impl MultiphaseAction {
    pub fn new(a: ActionChart) -> Self {
        MultiphaseAction { ext: a.phi_lambda_map(), ord: a.phi_ordinary_map(), a }
    }

    fn input(&self, u: &JetElement, z: &[f64]) -> Vec<f64> {
        let mut v = u.g.clone();
        v.extend_from_slice(&u.u.data);
        v.extend_from_slice(z);
        v
    }

    /// (z', w') = (u·z, s·w) where s ∈ J(JG) over u.
    pub fn tangent_action(&self, s: &SecondJetElement, z: &[f64], w: &[f64], ordinary: bool) -> (Vec<f64>, Vec<f64>) {
        let n = self.a.n();
        let (gd, ud) = s.tangent(&w[..n]);
        let x = self.input(&s.base, z);
        let mut dir = gd;
        dir.extend(ud.data);
        dir.extend_from_slice(w);
        let map = if ordinary { &self.ord } else { &self.ext };
        map.jvp(&x, &dir)
    }

    fn moved(&self, s: &SecondJetElement, z: &[f64], ws: &[Vec<f64>], ordinary: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut zp = Vec::new();
        let wp = ws
            .iter()
            .map(|w| {
                let (a, b) = self.tangent_action(s, z, w, ordinary);
                zp = a;
                b
            })
            .collect();
        (zp, wp)
    }

    /// |θ_{s·z}(s·w…) − θ_z(w…)|.
    pub fn theta_invariance_residual(&self, s: &SecondJetElement, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let (n, k) = (self.a.n(), self.a.k());
        let (zp, wp) = self.moved(s, z, ws, false);
        (theta_eval(n, k, &zp, &wp) - theta_eval(n, k, z, ws)).abs()
    }

    pub fn omega_invariance_residual(&self, s: &SecondJetElement, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let (n, k) = (self.a.n(), self.a.k());
        let (_, wp) = self.moved(s, z, ws, false);
        (omega_eval(n, k, &wp) - omega_eval(n, k, ws)).abs()
    }

    pub fn theta_h_invariance_residual(&self, h: &Hamiltonian, s: &SecondJetElement, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let (zp, wp) = self.moved(s, z, ws, true);
        (h.theta_h_eval(&zp, &wp) - h.theta_h_eval(z, ws)).abs()
    }

    pub fn omega_h_invariance_residual(&self, h: &Hamiltonian, s: &SecondJetElement, z: &[f64], ws: &[Vec<f64>]) -> f64 {
        let (zp, wp) = self.moved(s, z, ws, true);
        (h.omega_h_eval(&zp, &wp) - h.omega_h_eval(z, ws)).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{default_sampler, ActionKind};
    use crate::groupoid::pair;
    use crate::grid::GridSpec;
    use crate::jet_groupoid::{sample_jet, sample_semiholonomic};
    use crate::manifold::{BundleChart, ChartManifold};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    #[test]
    fn theta_mechanics_example() {
        let z = [0.0, 0.0, 2.0, -0.5];
        assert_eq!(theta_eval(1, 1, &z, &[vec![1.0, 3.0, 7.0, 9.0]]), 5.5);
    }

    #[test]
    fn omega_mechanics_and_fd_oracle() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        assert_eq!(omega_eval(1, 1, &[e(1), e(2)]), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, k) in [(1, 1), (2, 1), (2, 2)] {
            let d = lambda_dim(n, k);
            let z = rand_vec(d, &mut rng);
            let ws: Vec<Vec<f64>> = (0..=n).map(|_| rand_vec(d, &mut rng)).collect();
            let w = omega_eval(n, k, &ws);
            assert!((w - omega_fd(n, k, &z, &ws, 1e-4)).abs() < 1e-6, "n={n} k={k}");
            let mut sw = ws.clone();
            sw.swap(0, 1);
            assert!((omega_eval(n, k, &sw) + w).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_is_horizontal_and_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, k) = (2, 2);
        let d = lambda_dim(n, k);
        let z = rand_vec(d, &mut rng);
        let (w1, w2) = (rand_vec(d, &mut rng), rand_vec(d, &mut rng));
        let a = theta_eval(n, k, &z, &[w1.clone(), w2.clone()]);
        assert!((a + theta_eval(n, k, &z, &[w2, w1])).abs() < 1e-12);
        let mut v1 = vec![0.0; d];
        let mut v2 = vec![0.0; d];
        v1[2] = 1.0;
        v2[3] = 1.0;
        v2[5] = 0.7;
        assert_eq!(theta_eval(n, k, &z, &[v1, v2]), 0.0);
    }

    #[test]
    fn legendre_free_particle() {
        let (l, h) = free_particle();
        let u = Jet::from_fiber_block(vec![0.0, 1.0], &Mat::from_vec(1, 1, vec![3.0]));
        let z = l.legendre_full(&u);
        assert_eq!((z.p[(0, 0)], z.c), (3.0, -4.5));
        assert_eq!(crate::jet::linear_part(&z), l.legendre_linear(&u));
        assert!(composition_residual(&l, &h, &u) < 1e-12);
    }

    #[test]
    fn dedonder_matches_closed_form_kg() {
        let (l, h) = klein_gordon(2, 2, 0.5, &[1.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probe: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(8, &mut rng)).collect();
        let hd = dedonder_hamiltonian(&l, &probe).unwrap();
        let nd = dedonder_hamiltonian(&Lagrangian { quadratic: false, ..l.clone() }, &probe).unwrap();
        for _ in 0..10 {
            let z = rand_vec(8, &mut rng);
            assert!((hd.h_at(&z) - h.h_at(&z)).abs() < 1e-12);
            assert!((nd.h_at(&z) - h.h_at(&z)).abs() < 1e-10);
        }
    }

    #[test]
    fn omega_h_is_minus_d_theta_h() {
        let (_, h) = klein_gordon(2, 1, 0.5, &[1.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = rand_vec(5, &mut rng);
        let ws: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(5, &mut rng)).collect();
        assert!((h.omega_h_eval(&z, &ws) - h.omega_h_fd(&z, &ws, 1e-4)).abs() < 1e-6);
    }

    #[test]
    fn cojet_form_iso_equivariance() {
        let m = ChartManifold::cube("R2", 2, -1.0, 1.0);
        let a = ActionChart::standard(crate::groupoid::frame(m.clone()), BundleChart::trivial(m, 2, -3.0, 3.0), ActionKind::FrameLinear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let u = sample_jet(&a.g, &mut rng);
            let e = a.e.sample_over(&a.g.sigma.call(&u.g), &mut rng);
            let z = ExtendedCojetPoint { x: e[..2].to_vec(), y: e[2..].to_vec(), p: Mat::from_vec(2, 2, rand_vec(4, &mut rng)), c: 0.3 };
            assert!(iso_equivariance_residual(&a, &u, &z).unwrap() < 1e-9);
            let f = cojet_form_iso(&z);
            assert_eq!(form_cojet_iso(2, &HorizontalFormPoint::from_tensor(2, 2, &f.to_tensor())), z);
        }
    }

    #[test]
    fn theta_invariant_under_semiholonomic_jets() {
        let m = ChartManifold::cube("R2", 2, -1.0, 1.0);
        let a = ActionChart::standard(crate::groupoid::frame(m.clone()), BundleChart::trivial(m, 2, -3.0, 3.0), ActionKind::FrameLinear).unwrap();
        let ma = MultiphaseAction::new(a.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = lambda_dim(2, 2);
        let mut worst_omega_nonhol: f64 = 0.0;
        for _ in 0..10 {
            let u = sample_jet(&a.g, &mut rng);
            let s = sample_semiholonomic(&a.g, u.clone(), false, 0.5, &mut rng);
            let hol = sample_semiholonomic(&a.g, u.clone(), true, 0.5, &mut rng);
            let mut z = a.e.sample_over(&a.g.sigma.call(&u.g), &mut rng);
            z.extend(rand_vec(5, &mut rng));
            let ws: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(d, &mut rng)).collect();
            assert!(ma.theta_invariance_residual(&s, &z, &ws[..2]) < 1e-9);
            assert!(ma.omega_invariance_residual(&hol, &z, &ws) < 1e-8);
            worst_omega_nonhol = worst_omega_nonhol.max(ma.omega_invariance_residual(&s, &z, &ws));
        }
        assert!(worst_omega_nonhol > 1e-3);
    }

    #[test]
    fn kg_lorentz_invariance_and_dilation_failure() {
        let m = ChartManifold::cube("R2", 2, -1.0, 1.0);
        let e = BundleChart::trivial(m.clone(), 1, -3.0, 3.0);
        let (l, h) = klein_gordon(2, 1, 0.5, &[1.0, -1.0]).unwrap();
        let g = crate::groupoid::orthonormal_frame(m.clone(), crate::groupoid::MetricField::minkowski(2));
        let a = ActionChart::standard(g, e.clone(), ActionKind::Transport).unwrap();
        let sampler: ActionSampler = {
            let a = a.clone();
            std::sync::Arc::new(move |rng: &mut dyn rand::RngCore| {
                let mut rng = rng;
                let g = a.g.sample_element(&mut rng);
                let mut u = Mat::zeros(8, 2);
                for i in 0..2 {
                    u[(2 + i, i)] = 1.0;
                    for j in 0..2 {
                        u[(i, j)] = g[4 + i * 2 + j];
                        u[(4 + i * 2 + j, 0)] = rng.gen_range(-1.0..=1.0);
                    }
                }
                let e = a.e.sample_over(&g[2..4], &mut rng);
                (JetElement { g, u }, e)
            })
        };
        for mode in [InvarianceMode::Lagrangian, InvarianceMode::Legendre, InvarianceMode::Hamiltonian] {
            let r = check_invariance(&a, &l, &h, mode, &sampler, 3, 30).unwrap();
            assert!(r.max_residual < 1e-9, "{r:?}");
        }
        let gl = ActionChart::standard(pair(m), e, ActionKind::Transport).unwrap();
        let r = check_invariance(&gl, &l, &h, InvarianceMode::Lagrangian, &default_sampler(&gl), 3, 30).unwrap();
        assert!(r.max_residual > 1e-2);
    }

    #[test]
    fn plane_wave_residuals_and_contractions() {
        let m = 0.5f64;
        let kx = 2.0 * std::f64::consts::PI;
        let om = (kx * kx + m * m).sqrt();
        let (l, h) = klein_gordon(2, 1, m, &[1.0, -1.0]).unwrap();
        let mut prev = f64::INFINITY;
        for nres in [32usize, 64] {
            let dx = 1.0 / nres as f64;
            let spec = GridSpec::space_time(9, nres, 0.0, 0.5 * dx, 0.0, dx, true);
            let phi = GridSection::from_fn(spec, 1, |x| vec![(kx * x[1] - om * x[0]).cos()]);
            let el = euler_lagrange_residual(&l, &phi, 4, 3).unwrap();
            let ec = euler_lagrange_contraction(&l, &phi, 4, 3).unwrap();
            assert!((el[0] + ec[0]).abs() < 1e-8, "{el:?} {ec:?}");
            assert!(el[0].abs() < prev / 3.0);
            prev = el[0].abs();
            let p: Vec<f64> = (0..phi.spec.nodes())
                .flat_map(|i| {
                    let x = phi.spec.coord(i / nres, (i % nres) as isize);
                    let s = (kx * x[1] - om * x[0]).sin();
                    vec![om * s, kx * s]
                })
                .collect();
            let hat = phi.clone().with_momenta(p).unwrap();
            let (r1, r2) = dedonder_weyl_residual(&h, &hat, 4, 3).unwrap();
            let (c1, c2) = dedonder_weyl_contraction(&h, &hat, 4, 3).unwrap();
            for i in 0..2 {
                assert!((c1[i] + r1[i]).abs() < 1e-8, "{c1:?} {r1:?}");
            }
            assert!((c2[0] - r2[0]).abs() < 1e-8, "{c2:?} {r2:?}");
        }
        let spec = GridSpec::space_time(9, 32, 0.0, 0.01, 0.0, 1.0 / 32.0, true);
        let junk = GridSection::from_fn(spec, 1, |x| vec![(3.0 * x[0]).exp() * (x[1] * 7.0).sin()]);
        assert!(euler_lagrange_residual(&l, &junk, 4, 3).unwrap()[0].abs() > 1.0);
    }

    #[test]
    fn action_functional_examples() {
        let (l, _) = free_particle();
        let spec = GridSpec::time_only(11, 0.0, 0.1);
        let still = GridSection::from_fn(spec.clone(), 1, |_| vec![2.0]);
        assert_eq!(action_functional(&l, &still, GridRegion { t: (0, 10), x: (0, 0) }).unwrap(), 0.0);
        let line = GridSection::from_fn(spec, 1, |x| vec![3.0 * x[0]]);
        assert!((action_functional(&l, &line, GridRegion { t: (0, 9), x: (0, 0) }).unwrap() - 4.5).abs() < 1e-12);
        assert!(action_functional(&l, &line, GridRegion { t: (0, 11), x: (0, 0) }).is_err());
    }
}
