//! The jet groupoid JG: first jets of bisections through a groupoid element,
//! together with semiholonomic second-order jets.
//!
//! A jet element at g is an N×n matrix U with Tσ·U = I; its frame is
//! a = Tτ·U, an invertible n×n matrix.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};
use crate::groupoid::{Bisection, GroupoidChart, GroupoidKind, MetricField, COMPAT_TOL};
use crate::linalg::{max_abs_diff, Mat};

pub const FRAME_DET_MIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetElement {
    pub g: Vec<f64>,
    pub u: Mat<f64>,
}

impl JetElement {
    pub fn n(&self) -> usize {
        self.u.cols
    }

    pub fn frame(&self, gr: &GroupoidChart) -> Mat<f64> {
        rows(&self.u, &gr.tau_coords)
    }

    /// max |Tσ·U − I|.
    pub fn section_residual(&self, gr: &GroupoidChart) -> f64 {
        rows(&self.u, &gr.sigma_coords).max_abs_diff(&Mat::identity(self.n()))
    }
}

fn rows(u: &Mat<f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), u.cols, |i, j| u[(idx[i], j)])
}

/// Validated constructor.
pub fn jet_element(gr: &GroupoidChart, g: Vec<f64>, u: Mat<f64>) -> Result<JetElement> {
    let n = gr.n();
    if g.len() != gr.total_dim || u.rows != gr.total_dim || u.cols != n {
        return Err(GnkError::DimensionMismatch { what: "jet element".into(), expected: gr.total_dim, got: u.rows });
    }
    let el = JetElement { g, u };
    let r = el.section_residual(gr);
    if r > 1e-10 {
        return Err(GnkError::NotASection { residual: r });
    }
    let d = el.frame(gr).det();
    if d.abs() <= FRAME_DET_MIN {
        return Err(GnkError::DegenerateFrame { det: d });
    }
    Ok(el)
}

pub fn jg_unit(gr: &GroupoidChart, x: &[f64]) -> Result<JetElement> {
    let g = gr.unit_at(x)?;
    let u = gr.unit.jacobian(x)?;
    Ok(JetElement { g, u })
}

/// v·u = Tμ(h,g)·(V·a_u, U).
pub fn jg_multiply(gr: &GroupoidChart, v: &JetElement, u: &JetElement) -> Result<JetElement> {
    let r = gr.compat_residual(&v.g, &u.g);
    if r > COMPAT_TOL {
        return Err(GnkError::Incompatible { residual: r });
    }
    let n = gr.n();
    let big = gr.total_dim;
    let au = u.frame(gr);
    let va = v.u.mul(&au);
    let mut x = gr.snap(&v.g, &u.g);
    x.extend_from_slice(&u.g);
    let mut out = Mat::zeros(big, n);
    let mut hg = Vec::new();
    for mu in 0..n {
        let mut dir = va.col(mu);
        dir.extend(u.u.col(mu));
        let (val, d) = gr.mu.jvp(&x, &dir);
        hg = val;
        out.set_col(mu, &d);
    }
    if n == 0 {
        hg = gr.mu.call(&x);
    }
    let el = JetElement { g: hg, u: out };
    let det = el.frame(gr).det();
    if det.abs() <= FRAME_DET_MIN {
        return Err(GnkError::DegenerateFrame { det });
    }
    Ok(el)
}

/// u⁻¹ = (ι g, Tι·U·a⁻¹).
pub fn jg_invert(gr: &GroupoidChart, u: &JetElement) -> Result<JetElement> {
    let a = u.frame(gr);
    let ainv = a.inverse().ok_or(GnkError::DegenerateFrame { det: a.det() })?;
    let ti = gr.inv.jacobian(&u.g)?;
    Ok(JetElement { g: gr.inv.call(&u.g), u: ti.mul(&u.u).mul(&ainv) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JetProjection {
    pub g: Vec<f64>,
    pub frame: Mat<f64>,
}

/// (π_JG(u), π_JG^fr(u)); the pair projection is the tuple itself.
pub fn jg_project(gr: &GroupoidChart, u: &JetElement) -> JetProjection {
    JetProjection { g: u.g.clone(), frame: u.frame(gr) }
}

/// Frame-groupoid element (τ(g), σ(g), a) of a jet.
pub fn frame_element(gr: &GroupoidChart, u: &JetElement) -> Vec<f64> {
    let mut out = gr.tau.call(&u.g);
    out.extend(gr.sigma.call(&u.g));
    out.extend(u.frame(gr).data);
    out
}

/// The isomorphism J(M×M) ≅ frame groupoid.
pub fn pairjet_to_frame(gr: &GroupoidChart, u: &JetElement) -> Result<Vec<f64>> {
    if gr.kind != GroupoidKind::Pair {
        return Err(GnkError::Config(format!("pairjet_to_frame needs the pair groupoid, got {}", gr.name)));
    }
    Ok(frame_element(gr, u))
}

pub fn frame_to_pairjet(gr: &GroupoidChart, f: &[f64]) -> Result<JetElement> {
    let n = gr.n();
    let a = Mat::from_vec(n, n, f[2 * n..].to_vec());
    let u = Mat::identity(n).vstack(&Mat::identity(n));
    let mut u = u;
    u.set_block(0, 0, &a);
    jet_element(gr, f[..2 * n].to_vec(), u)
}

pub fn jet_of_bisection(gr: &GroupoidChart, b: &Bisection, x: &[f64]) -> Result<JetElement> {
    let g = b.map.eval(x)?;
    let u = b.map.jacobian(x)?;
    jet_element(gr, g, u)
}

/// Element of J(JG) over a first-order jet: derivatives of the g and U
/// components along the base. `du` is indexed `(A·n + μ)·n + ν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondJetElement {
    pub base: JetElement,
    pub dg: Mat<f64>,
    pub du: Vec<f64>,
}

impl SecondJetElement {
    pub fn du_at(&self, a: usize, mu: usize, nu: usize) -> f64 {
        let n = self.base.n();
        self.du[(a * n + mu) * n + nu]
    }

    /// ∂_ν U as an N×n matrix.
    pub fn du_along(&self, nu: usize) -> Mat<f64> {
        let n = self.base.n();
        Mat::from_fn(self.base.u.rows, n, |a, mu| self.du_at(a, mu, nu))
    }

    /// Tangent of the underlying JG-valued curve along base vector ẋ,
    /// flattened as (ġ, U̇).
    pub fn tangent(&self, xdot: &[f64]) -> (Vec<f64>, Mat<f64>) {
        let n = self.base.n();
        let gd = self.dg.mul_vec(xdot);
        let mut ud = Mat::zeros(self.base.u.rows, n);
        for (nu, &c) in xdot.iter().enumerate() {
            ud = ud.add(&self.du_along(nu).scale(c));
        }
        (gd, ud)
    }
}

pub fn second_jet_of_bisection(gr: &GroupoidChart, b: &Bisection, x: &[f64]) -> Result<SecondJetElement> {
    let base = jet_of_bisection(gr, b, x)?;
    let n = gr.n();
    let big = gr.total_dim;
    let mut du = vec![0.0; big * n * n];
    let mut e = vec![0.0; n];
    let mut f = vec![0.0; n];
    for mu in 0..n {
        for nu in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            f.iter_mut().for_each(|v| *v = 0.0);
            e[mu] = 1.0;
            f[nu] = 1.0;
            let h = b.map.second_directional(x, &e, &f)?;
            for a in 0..big {
                du[(a * n + mu) * n + nu] = h[a];
            }
        }
    }
    Ok(SecondJetElement { dg: base.u.clone(), base, du })
}

/// dg = U.
pub fn semiholonomic_residual(s: &SecondJetElement) -> f64 {
    s.dg.max_abs_diff(&s.base.u)
}

pub fn semiholonomic2_check(s: &SecondJetElement) -> bool {
    semiholonomic_residual(s) <= 1e-9
}

/// Largest antisymmetric part of dU in its base indices.
pub fn symmetry_residual(s: &SecondJetElement) -> f64 {
    let n = s.base.n();
    let mut worst: f64 = 0.0;
    for a in 0..s.base.u.rows {
        for mu in 0..n {
            for nu in 0..mu {
                worst = worst.max((s.du_at(a, mu, nu) - s.du_at(a, nu, mu)).abs());
            }
        }
    }
    worst
}

pub fn holonomic2_check(s: &SecondJetElement) -> bool {
    semiholonomic2_check(s) && symmetry_residual(s) <= 1e-9
}

/// Residual predicate on jets; member iff ≤ tolerance. Predicates must
/// vanish on unit jets.
pub type JetPredicate = Arc<dyn Fn(&GroupoidChart, &JetElement) -> f64 + Send + Sync>;

/// frame(U) ∈ O(TM, G): aᵀ G(τ) a = G(σ).
pub fn isometry_predicate(metric: MetricField) -> JetPredicate {
    Arc::new(move |gr: &GroupoidChart, u: &JetElement| {
        metric.isometry_residual(&gr.sigma.call(&u.g), &gr.tau.call(&u.g), &u.frame(gr))
    })
}

pub fn in_subgroupoid(pred: &JetPredicate, gr: &GroupoidChart, u: &JetElement, tol: f64) -> bool {
    pred(gr, u) <= tol
}

/// Random jet at g: σ-rows identity, the remaining rows random, with the
/// frame kept well away from singular.
pub fn sample_jet_at<R: RngCore>(gr: &GroupoidChart, g: Vec<f64>, rng: &mut R) -> JetElement {
    let n = gr.n();
    loop {
        let mut u = Mat::from_fn(gr.total_dim, n, |_, _| rng.gen_range(-1.0..=1.0));
        for (i, &c) in gr.sigma_coords.iter().enumerate() {
            for j in 0..n {
                u[(c, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
        for (i, &c) in gr.tau_coords.iter().enumerate() {
            if gr.sigma_coords.contains(&c) {
                continue;
            }
            u[(c, i)] += 1.0;
        }
        let el = JetElement { g: g.clone(), u };
        if el.frame(gr).det().abs() > 0.2 {
            return el;
        }
    }
}

pub fn sample_jet<R: RngCore>(gr: &GroupoidChart, rng: &mut R) -> JetElement {
    let g = gr.sample_element(rng);
    sample_jet_at(gr, g, rng)
}

/// Jet at an element with source τ(u.g).
pub fn sample_jet_after<R: RngCore>(gr: &GroupoidChart, u: &JetElement, rng: &mut R) -> JetElement {
    let h = gr.sample_after(&u.g, rng);
    sample_jet_at(gr, h, rng)
}

/// Semiholonomic second-order element over a random jet; `symmetric`
/// selects a holonomic representative.
pub fn sample_semiholonomic<R: RngCore>(gr: &GroupoidChart, base: JetElement, symmetric: bool, scale: f64, rng: &mut R) -> SecondJetElement {
    let n = gr.n();
    let big = gr.total_dim;
    let mut du = vec![0.0; big * n * n];
    for a in 0..big {
        if gr.sigma_coords.contains(&a) {
            continue;
        }
        for mu in 0..n {
            for nu in 0..n {
                if symmetric && nu < mu {
                    du[(a * n + mu) * n + nu] = du[(a * n + nu) * n + mu];
                } else {
                    du[(a * n + mu) * n + nu] = rng.gen_range(-scale..=scale);
                }
            }
        }
    }
    SecondJetElement { dg: base.u.clone(), base, du }
}

// ---------------------------------------------------------------------------
// Axiom residuals on JG

fn jet_diff(a: &JetElement, b: &JetElement) -> f64 {
    max_abs_diff(&a.g, &b.g).max(a.u.max_abs_diff(&b.u))
}

pub fn jg_associativity_residual(gr: &GroupoidChart, w: &JetElement, v: &JetElement, u: &JetElement) -> Result<f64> {
    let l = jg_multiply(gr, w, &jg_multiply(gr, v, u)?)?;
    let r = jg_multiply(gr, &jg_multiply(gr, w, v)?, u)?;
    Ok(jet_diff(&l, &r))
}

pub fn jg_unit_residual(gr: &GroupoidChart, u: &JetElement) -> Result<f64> {
    let l = jg_multiply(gr, &jg_unit(gr, &gr.tau.call(&u.g))?, u)?;
    let r = jg_multiply(gr, u, &jg_unit(gr, &gr.sigma.call(&u.g))?)?;
    Ok(jet_diff(&l, u).max(jet_diff(&r, u)))
}

pub fn jg_inverse_residual(gr: &GroupoidChart, u: &JetElement) -> Result<f64> {
    let ui = jg_invert(gr, u)?;
    let a = jg_multiply(gr, u, &ui)?;
    let b = jg_multiply(gr, &ui, u)?;
    Ok(jet_diff(&a, &jg_unit(gr, &gr.tau.call(&u.g))?).max(jet_diff(&b, &jg_unit(gr, &gr.sigma.call(&u.g))?)))
}

/// |j(β₂β₁)(x) − jβ₂(τβ₁(x))·jβ₁(x)|.
pub fn chain_rule_residual(gr: &GroupoidChart, b2: &Bisection, b1: &Bisection, x: &[f64]) -> Result<f64> {
    let prod = crate::groupoid::bisection_product(gr, b2, b1);
    let lhs = jet_of_bisection(gr, &prod, x)?;
    let j1 = jet_of_bisection(gr, b1, x)?;
    let j2 = jet_of_bisection(gr, b2, &gr.tau.call(&j1.g))?;
    Ok(jet_diff(&lhs, &jg_multiply(gr, &j2, &j1)?))
}

/// Projection to the frame groupoid is a morphism: compares the frame
/// element of v·u with the product of the frame elements.
pub fn frame_morphism_residual(gr: &GroupoidChart, fr: &GroupoidChart, v: &JetElement, u: &JetElement) -> Result<f64> {
    let lhs = frame_element(gr, &jg_multiply(gr, v, u)?);
    let rhs = fr.multiply(&frame_element(gr, v), &frame_element(gr, u))?;
    Ok(max_abs_diff(&lhs, &rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupoid::{frame, pair, pair_bisection, unit_bisection};
    use crate::manifold::ChartManifold;
    use crate::smooth::library::{affine, linear, polynomial, Monomial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line() -> ChartManifold {
        ChartManifold::cube("R", 1, -10.0, 10.0)
    }

    fn slope(gr: &GroupoidChart, g: [f64; 2], a: f64) -> JetElement {
        jet_element(gr, g.to_vec(), Mat::from_vec(2, 1, vec![a, 1.0])).unwrap()
    }

    #[test]
    fn pair_slopes_multiply() {
        let gr = pair(line());
        let u = slope(&gr, [1.0, 0.0], 2.0);
        let v = slope(&gr, [5.0, 1.0], 3.0);
        let w = jg_multiply(&gr, &v, &u).unwrap();
        assert_eq!(w.g, vec![5.0, 0.0]);
        assert_eq!(w.u.data, vec![6.0, 1.0]);
    }

    #[test]
    fn pair_inverse_and_unit() {
        let gr = pair(line());
        let ui = jg_invert(&gr, &slope(&gr, [1.0, 0.0], 2.0)).unwrap();
        assert_eq!(ui.g, vec![0.0, 1.0]);
        assert_eq!(ui.u.data, vec![0.5, 1.0]);
        assert_eq!(jg_unit(&gr, &[3.0]).unwrap().u.data, vec![1.0, 1.0]);
        let p = jg_project(&gr, &slope(&gr, [1.0, 0.0], 2.0));
        assert_eq!(p.frame.data, vec![2.0]);
        assert_eq!(pairjet_to_frame(&gr, &slope(&gr, [1.0, 0.0], 2.0)).unwrap(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn invalid_jets_rejected() {
        let gr = pair(line());
        assert!(matches!(jet_element(&gr, vec![1.0, 0.0], Mat::from_vec(2, 1, vec![2.0, 0.5])), Err(GnkError::NotASection { .. })));
        assert!(matches!(jet_element(&gr, vec![1.0, 0.0], Mat::from_vec(2, 1, vec![0.0, 1.0])), Err(GnkError::DegenerateFrame { .. })));
    }

    #[test]
    fn second_jet_of_square() {
        let gr = pair(line());
        let b = pair_bisection(&gr, polynomial(1, vec![vec![Monomial::new(1.0, vec![2])]]).unwrap(), None);
        let s = second_jet_of_bisection(&gr, &b, &[3.0]).unwrap();
        assert_eq!(s.base.u.data, vec![6.0, 1.0]);
        assert!((s.du_at(0, 0, 0) - 2.0).abs() < 1e-12);
        assert_eq!(s.du_at(1, 0, 0), 0.0);
        assert!(holonomic2_check(&s));
        let su = second_jet_of_bisection(&gr, &unit_bisection(&gr), &[3.0]).unwrap();
        assert!(su.du.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn semiholonomic_but_not_holonomic() {
        let gr = pair(ChartManifold::cube("R2", 2, -1.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = sample_jet(&gr, &mut rng);
        let mut s = sample_semiholonomic(&gr, base, false, 1.0, &mut rng);
        s.du[1] = 1.0;
        s.du[2] = -1.0;
        assert!(semiholonomic2_check(&s) && !holonomic2_check(&s));
        s.dg[(0, 0)] += 0.1;
        assert!(!semiholonomic2_check(&s));
    }

    #[test]
    fn rotation_is_isometry_dilation_is_not() {
        let gr = pair(ChartManifold::cube("R2", 2, -5.0, 5.0));
        let pred = isometry_predicate(MetricField::euclidean(2));
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = pair_bisection(&gr, linear(Mat::from_rows(&[vec![c, -s], vec![s, c]])), None);
        let dil = pair_bisection(&gr, linear(Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]])), None);
        let x = [0.4, -0.2];
        assert!(in_subgroupoid(&pred, &gr, &jet_of_bisection(&gr, &rot, &x).unwrap(), 1e-10));
        assert!(!in_subgroupoid(&pred, &gr, &jet_of_bisection(&gr, &dil, &x).unwrap(), 1e-10));
        assert!(in_subgroupoid(&pred, &gr, &jg_unit(&gr, &x).unwrap(), 1e-12));
    }

    #[test]
    fn frame_axioms_and_morphism() {
        let base = ChartManifold::cube("R2", 2, -1.0, 1.0);
        let gr = frame(base.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let u = sample_jet(&gr, &mut rng);
            let v = sample_jet_after(&gr, &u, &mut rng);
            let w = sample_jet_after(&gr, &v, &mut rng);
            assert!(jg_associativity_residual(&gr, &w, &v, &u).unwrap() < 1e-9);
            assert!(jg_unit_residual(&gr, &u).unwrap() < 1e-9);
            assert!(jg_inverse_residual(&gr, &u).unwrap() < 1e-9);
            assert!(frame_morphism_residual(&gr, &frame(base.clone()), &v, &u).unwrap() < 1e-10);
        }
    }

    #[test]
    fn chain_rule_on_affine_bisections() {
        let gr = pair(line());
        let b1 = pair_bisection(&gr, affine(Mat::from_rows(&[vec![2.0]]), vec![1.0]), None);
        let b2 = pair_bisection(&gr, affine(Mat::from_rows(&[vec![3.0]]), vec![-1.0]), None);
        assert!(chain_rule_residual(&gr, &b2, &b1, &[0.7]).unwrap() < 1e-14);
    }
}
