//! Single-chart manifolds and fiber bundles.
//!
//! A bundle point is stored as `(x¹…xⁿ, y¹…yᵏ)`: base coordinates first,
//! fiber coordinates after. Every other module relies on this layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};
use crate::linalg::Mat;
use crate::smooth::library::linear;
use crate::smooth::{BoxDomain, SmoothMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartManifold {
    pub name: String,
    pub bbox: BoxDomain,
}

impl ChartManifold {
    pub fn new(name: impl Into<String>, bbox: BoxDomain) -> Result<Self> {
        if bbox.dim() == 0 || !bbox.is_valid() {
            return Err(GnkError::Config("manifold box must be nonempty with positive side lengths".into()));
        }
        Ok(ChartManifold { name: name.into(), bbox })
    }

    pub fn cube(name: impl Into<String>, dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(name, BoxDomain::cube(dim, lo, hi)).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bbox.sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleChart {
    pub base: ChartManifold,
    pub fiber_dim: usize,
    pub total_box: BoxDomain,
}

impl BundleChart {
    pub fn new(base: ChartManifold, fiber_box: BoxDomain) -> Result<Self> {
        if !fiber_box.is_valid() {
            return Err(GnkError::Config("fiber box must have positive side lengths".into()));
        }
        let total_box = base.bbox.product(&fiber_box);
        Ok(BundleChart { fiber_dim: fiber_box.dim(), base, total_box })
    }

    /// Trivial bundle M × [lo, hi]^k.
    pub fn trivial(base: ChartManifold, k: usize, lo: f64, hi: f64) -> Self {
        Self::new(base, BoxDomain::cube(k, lo, hi)).expect("valid fiber box")
    }

    pub fn n(&self) -> usize {
        self.base.dim()
    }
    pub fn k(&self) -> usize {
        self.fiber_dim
    }
    pub fn dim(&self) -> usize {
        self.n() + self.k()
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(GnkError::DimensionMismatch { what: "bundle point".into(), expected: self.dim(), got: e.len() });
        }
        if !self.total_box.contains(e) {
            return Err(GnkError::OutOfDomain { what: "bundle chart".into(), point: e.to_vec() });
        }
        Ok(())
    }

    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e)?;
        Ok(e[..self.n()].to_vec())
    }

    pub fn projection_map(&self) -> SmoothMap {
        let (n, d) = (self.n(), self.dim());
        linear(Mat::from_fn(n, d, |i, j| if i == j { 1.0 } else { 0.0 })).with_domain(self.total_box.clone())
    }

    pub fn vertical_projector(&self, e: &[f64]) -> Result<Mat<f64>> {
        self.check(e)?;
        let n = self.n();
        Ok(Mat::from_fn(self.dim(), self.dim(), |i, j| if i == j && i >= n { 1.0 } else { 0.0 }))
    }

    pub fn is_vertical(&self, v: &[f64], tol: f64) -> bool {
        v[..self.n()].iter().all(|c| c.abs() <= tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.total_box.sample(rng)
    }

    pub fn sample_over<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut e = x.to_vec();
        let n = self.n();
        for a in 0..self.k() {
            let (l, h) = (self.total_box.lo[n + a].max(-1e3), self.total_box.hi[n + a].min(1e3));
            e.push(rng.gen_range(l..=h));
        }
        e
    }

    /// Residual of π ∘ φ = id for a candidate section φ: M → E at x.
    pub fn section_residual(&self, phi: &SmoothMap, x: &[f64]) -> Result<f64> {
        let e = phi.eval(x)?;
        Ok(crate::linalg::max_abs_diff(&e[..self.n()], x))
    }
}

/// A bundle map over the identity of M.
#[derive(Clone, Debug)]
pub struct BundleMap {
    pub source: BundleChart,
    pub target: BundleChart,
    pub map: SmoothMap,
}

impl BundleMap {
    pub fn new(source: BundleChart, target: BundleChart, map: SmoothMap) -> Result<Self> {
        if source.n() != target.n() || map.dom_dim() != source.dim() || map.cod_dim() != target.dim() {
            return Err(GnkError::DimensionMismatch { what: "bundle map".into(), expected: source.dim(), got: map.dom_dim() });
        }
        Ok(BundleMap { source, target, map })
    }

    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.map.eval(e)
    }

    /// |π_F(f(e)) − π_E(e)|.
    pub fn strictness_residual(&self, e: &[f64]) -> Result<f64> {
        let f = self.map.eval(e)?;
        let n = self.source.n();
        Ok(crate::linalg::max_abs_diff(&f[..n], &e[..n]))
    }

    /// Largest base component of T f · v over the vertical basis at e.
    pub fn vertical_defect(&self, e: &[f64]) -> Result<f64> {
        let jac = self.map.jacobian(e)?;
        let n = self.source.n();
        let mut worst: f64 = 0.0;
        for a in 0..self.source.k() {
            for i in 0..n {
                worst = worst.max(jac[(i, n + a)].abs());
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_drops_fiber() {
        let e = BundleChart::trivial(ChartManifold::cube("M", 2, -1.0, 1.0), 1, -10.0, 10.0);
        assert_eq!(e.project(&[0.1, 0.2, 5.0]).unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn vertical_projector_is_idempotent() {
        let e = BundleChart::trivial(ChartManifold::cube("M", 1, -1.0, 1.0), 1, -1.0, 1.0);
        let p = e.vertical_projector(&[0.0, 0.0]).unwrap();
        assert_eq!(p.data, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.mul(&p), p);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(ChartManifold::new("M", BoxDomain::new(vec![1.0], vec![0.0])).is_err());
    }
}
