//! Smooth maps between coordinate boxes with exact forward-mode derivatives.
//!
//! A map body is written once, generically over [`Scalar`], by implementing
//! [`Rule`]. The blanket [`MapBody`] impl then evaluates it on every level of
//! the dual tower, which is what lets composite constructions (induced
//! actions, right-invariant fields, Legendre maps) be differentiated again.

mod dual;
pub mod library;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dual::{lift, values, Dual, Real, Scalar, D1, D2, D3};

use crate::error::{GnkError, Result};
use crate::linalg::Mat;

/// Type-erased map body, evaluable on each level of the dual tower.
pub trait MapBody: Send + Sync {
    fn eval_f64(&self, x: &[f64]) -> Vec<f64>;
    fn eval_d1(&self, x: &[D1]) -> Vec<D1>;
    fn eval_d2(&self, x: &[D2]) -> Vec<D2>;
    fn eval_d3(&self, x: &[D3]) -> Vec<D3>;
}

/// A map written generically over the scalar type.
pub trait Rule: Send + Sync + 'static {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S>;
}

impl<R: Rule> MapBody for R {
    fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }
    fn eval_d1(&self, x: &[D1]) -> Vec<D1> {
        self.apply(x)
    }
    fn eval_d2(&self, x: &[D2]) -> Vec<D2> {
        self.apply(x)
    }
    fn eval_d3(&self, x: &[D3]) -> Vec<D3> {
        self.apply(x)
    }
}

/// Closed axis-aligned box; infinite bounds allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds length");
        BoxDomain { lo, hi }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        BoxDomain { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::cube(dim, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| {
                let slack = 1e-12 * (1.0 + v.abs());
                v >= l - slack && v <= h + slack
            })
    }

    /// Distance from `x` to the nearest face, negative if outside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_valid(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| h > l)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let (l, h) = (l.max(-1e3), h.min(1e3));
                rng.gen_range(l..=h)
            })
            .collect()
    }

    /// Sample strictly inside, shrinking each side by `frac` of its length.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, frac: f64) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let (l, h) = (l.max(-1e3), h.min(1e3));
                let d = (h - l) * frac;
                rng.gen_range(l + d..=h - d)
            })
            .collect()
    }

    pub fn product(&self, o: &BoxDomain) -> BoxDomain {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&o.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&o.hi);
        BoxDomain { lo, hi }
    }
}

/// A smooth map R^p ⊇ box → R^q.
#[derive(Clone)]
pub struct SmoothMap {
    dom_dim: usize,
    cod_dim: usize,
    domain: BoxDomain,
    body: Arc<dyn MapBody>,
    label: String,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothMap({}: R^{} -> R^{})", self.label, self.dom_dim, self.cod_dim)
    }
}

impl SmoothMap {
    pub fn new<R: Rule>(dom_dim: usize, cod_dim: usize, rule: R, label: impl Into<String>) -> Self {
        SmoothMap { dom_dim, cod_dim, domain: BoxDomain::unbounded(dom_dim), body: Arc::new(rule), label: label.into() }
    }

    pub fn with_domain(mut self, domain: BoxDomain) -> Self {
        assert_eq!(domain.dim(), self.dom_dim, "domain box dimension");
        self.domain = domain;
        self
    }

    pub fn dom_dim(&self) -> usize {
        self.dom_dim
    }
    pub fn cod_dim(&self) -> usize {
        self.cod_dim
    }
    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn body(&self) -> &dyn MapBody {
        self.body.as_ref()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dom_dim {
            return Err(GnkError::DimensionMismatch { what: self.label.clone(), expected: self.dom_dim, got: x.len() });
        }
        if !self.domain.contains(x) {
            return Err(GnkError::OutOfDomain { what: self.label.clone(), point: x.to_vec() });
        }
        Ok(())
    }

    fn check_diff(&self, x: &[f64]) -> Result<()> {
        self.check(x)?;
        if self.domain.margin(x) < 1e-6 {
            log::warn!("differentiating {} within 1e-6 of its domain boundary", self.label);
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.body.eval_f64(x))
    }

    /// Generic evaluation without domain checks (used inside other rules).
    pub fn call<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.dom_dim, "{}", self.label);
        S::eval_body(self.body.as_ref(), x)
    }

    /// Value and directional derivative at `x` along `dir`.
    pub fn jvp<S: Scalar>(&self, x: &[S], dir: &[S]) -> (Vec<S>, Vec<S>) {
        S::jvp_body(self.body.as_ref(), x, dir)
    }

    /// Jacobian with one dual pass per input coordinate.
    pub fn jacobian_s<S: Scalar>(&self, x: &[S]) -> Mat<S> {
        let p = self.dom_dim;
        let mut jac = Mat::zeros(self.cod_dim, p);
        let mut dir = vec![S::zero(); p];
        for j in 0..p {
            dir[j] = S::one();
            let (_, d) = self.jvp(x, &dir);
            jac.set_col(j, &d);
            dir[j] = S::zero();
        }
        jac
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<Mat<f64>> {
        self.check_diff(x)?;
        Ok(self.jacobian_s(x))
    }

    pub fn directional(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_diff(x)?;
        Ok(self.jvp(x, u).1)
    }

    /// D²f(x)[u, v] through nested duals.
    pub fn second_directional(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_diff(x)?;
        Ok(second_directional_s(self, x, u, v))
    }

    pub fn compose(outer: &SmoothMap, inner: &SmoothMap) -> Result<SmoothMap> {
        if outer.dom_dim != inner.cod_dim {
            return Err(GnkError::DimensionMismatch { what: "composition".into(), expected: outer.dom_dim, got: inner.cod_dim });
        }
        let label = format!("{}∘{}", outer.label, inner.label);
        Ok(SmoothMap::new(inner.dom_dim, outer.cod_dim, library::Compose { outer: outer.clone(), inner: inner.clone() }, label)
            .with_domain(inner.domain.clone()))
    }

    /// x ↦ (f(x), g(x)).
    pub fn fanout(f: &SmoothMap, g: &SmoothMap) -> Result<SmoothMap> {
        if f.dom_dim != g.dom_dim {
            return Err(GnkError::DimensionMismatch { what: "fanout".into(), expected: f.dom_dim, got: g.dom_dim });
        }
        let label = format!("({}, {})", f.label, g.label);
        Ok(SmoothMap::new(f.dom_dim, f.cod_dim + g.cod_dim, library::Fanout { f: f.clone(), g: g.clone() }, label)
            .with_domain(f.domain.clone()))
    }

    /// (x1, x2) ↦ (f(x1), g(x2)).
    pub fn product(f: &SmoothMap, g: &SmoothMap) -> SmoothMap {
        let label = format!("{}×{}", f.label, g.label);
        SmoothMap::new(f.dom_dim + g.dom_dim, f.cod_dim + g.cod_dim, library::Product { f: f.clone(), g: g.clone() }, label)
            .with_domain(f.domain.product(&g.domain))
    }
}

/// Second directional derivative for any scalar level that supports two more
/// derivatives.
pub fn second_directional_s(f: &SmoothMap, x: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
    let pts: Vec<D2> = x.iter().zip(u).zip(v).map(|((&a, &b), &c)| Dual::new(Dual::new(a, b), Dual::new(c, 0.0))).collect();
    f.body().eval_d2(&pts).into_iter().map(|d| d.eps.eps).collect()
}

/// Central finite-difference Jacobian, used as an oracle.
pub fn fd_jacobian(f: &SmoothMap, x: &[f64], h: f64) -> Mat<f64> {
    let mut jac = Mat::zeros(f.cod_dim(), f.dom_dim());
    for j in 0..f.dom_dim() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f.call(&xp), f.call(&xm));
        for i in 0..f.cod_dim() {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::library::*;
    use super::*;

    #[test]
    fn identity_eval_and_jacobian() {
        let f = identity(3);
        assert_eq!(f.eval(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(f.jacobian(&[0.3, 0.1, 0.2]).unwrap(), Mat::identity(3));
    }

    #[test]
    fn square_and_sine_at_zero() {
        let f = polynomial(1, vec![vec![Monomial::new(1.0, vec![2])]]).unwrap();
        let g = trig(vec![1.0]);
        assert_eq!(f.eval(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(g.eval(&[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn composition_by_hand() {
        let g = linear(Mat::from_rows(&[vec![2.0]]));
        let h = affine(Mat::identity(1), vec![1.0]);
        let f = SmoothMap::compose(&g, &h).unwrap();
        assert_eq!(f.eval(&[4.0]).unwrap(), vec![10.0]);
    }

    #[test]
    fn product_rule_jacobian() {
        let f = polynomial(2, vec![vec![Monomial::new(1.0, vec![1, 1])]]).unwrap();
        let j = f.jacobian(&[2.0, 3.0]).unwrap();
        assert_eq!(j.data, vec![3.0, 2.0]);
    }

    #[test]
    fn second_derivatives() {
        let lin = linear(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert_eq!(lin.second_directional(&[0.3, 0.2], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let sq = polynomial(1, vec![vec![Monomial::new(1.0, vec![2])]]).unwrap();
        assert_eq!(sq.second_directional(&[5.0], &[1.0], &[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let f = identity(1).with_domain(BoxDomain::cube(1, 0.0, 1.0));
        assert!(matches!(f.eval(&[2.0]), Err(GnkError::OutOfDomain { .. })));
    }
}
