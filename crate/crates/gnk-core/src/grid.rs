//! Discretized sections on rectangular space-time grids.
//!
//! Base coordinates are `x⁰ = t` and, when `n = 2`, `x¹ = x`. Node data is
//! stored time-major: node `(it, ix)` has flat index `it·nx + ix`. Field
//! values `y[a]` and momenta `P[a][μ]` (at `a·n + μ`) follow per node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub nt: usize,
    pub nx: usize,
    pub t0: f64,
    pub dt: f64,
    pub x0: f64,
    pub dx: f64,
    pub periodic_x: bool,
}

impl GridSpec {
    pub fn time_only(nt: usize, t0: f64, dt: f64) -> Self {
        GridSpec { n: 1, nt, nx: 1, t0, dt, x0: 0.0, dx: 1.0, periodic_x: false }
    }

    pub fn space_time(nt: usize, nx: usize, t0: f64, dt: f64, x0: f64, dx: f64, periodic_x: bool) -> Self {
        GridSpec { n: 2, nt, nx, t0, dt, x0, dx, periodic_x }
    }

    pub fn nodes(&self) -> usize {
        self.nt * self.nx
    }

    pub fn step(&self, mu: usize) -> f64 {
        if mu == 0 {
            self.dt
        } else {
            self.dx
        }
    }

    /// Coordinates of node (it, ix); ix may leave [0, nx) on periodic grids,
    /// giving the unwrapped image coordinate.
    pub fn coord(&self, it: usize, ix: isize) -> Vec<f64> {
        let t = self.t0 + it as f64 * self.dt;
        if self.n == 1 {
            vec![t]
        } else {
            vec![t, self.x0 + ix as f64 * self.dx]
        }
    }

    fn wrap(&self, ix: isize) -> Option<usize> {
        let nx = self.nx as isize;
        if (0..nx).contains(&ix) {
            Some(ix as usize)
        } else if self.periodic_x {
            Some(ix.rem_euclid(nx) as usize)
        } else {
            None
        }
    }

    pub fn index(&self, it: usize, ix: isize) -> Option<usize> {
        if it >= self.nt {
            return None;
        }
        self.wrap(ix).map(|j| it * self.nx + j)
    }

    /// Interior nodes admit centered differences in every direction.
    pub fn is_interior(&self, it: usize, ix: isize) -> bool {
        let t_ok = it >= 1 && it + 1 < self.nt;
        if self.n == 1 {
            return t_ok;
        }
        t_ok && (self.periodic_x || (ix >= 1 && ix + 1 < self.nx as isize))
    }
}

/// Inclusive index box `[t.0, t.1] × [x.0, x.1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRegion {
    pub t: (usize, usize),
    pub x: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub spec: GridSpec,
    pub k: usize,
    pub y: Vec<f64>,
    pub p: Option<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
    /// Extra time levels on each side of the reported window.
    #[serde(default)]
    pub pad_t: usize,
}

impl GridSection {
    pub fn new(spec: GridSpec, k: usize, y: Vec<f64>) -> Result<Self> {
        if y.len() != spec.nodes() * k {
            return Err(GnkError::DimensionMismatch { what: "grid field".into(), expected: spec.nodes() * k, got: y.len() });
        }
        Ok(GridSection { spec, k, y, p: None, meta: BTreeMap::new(), pad_t: 0 })
    }

    /// Sample a section x ↦ y(x) on the grid.
    pub fn from_fn(spec: GridSpec, k: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut y = Vec::with_capacity(spec.nodes() * k);
        for it in 0..spec.nt {
            for ix in 0..spec.nx {
                y.extend(f(&spec.coord(it, ix as isize)));
            }
        }
        GridSection { spec, k, y, p: None, meta: BTreeMap::new(), pad_t: 0 }
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn with_momenta(mut self, p: Vec<f64>) -> Result<Self> {
        let want = self.spec.nodes() * self.k * self.n();
        if p.len() != want {
            return Err(GnkError::DimensionMismatch { what: "grid momenta".into(), expected: want, got: p.len() });
        }
        self.p = Some(p);
        Ok(self)
    }

    fn node(&self, it: usize, ix: isize) -> Result<usize> {
        self.spec.index(it, ix).ok_or_else(|| GnkError::RegionOutOfGrid(format!("node ({it}, {ix})")))
    }

    pub fn y_at(&self, it: usize, ix: isize) -> Result<&[f64]> {
        let i = self.node(it, ix)?;
        Ok(&self.y[i * self.k..(i + 1) * self.k])
    }

    pub fn p_at(&self, it: usize, ix: isize) -> Result<&[f64]> {
        let i = self.node(it, ix)?;
        let w = self.k * self.n();
        let p = self.p.as_ref().ok_or_else(|| GnkError::Config("grid section carries no momenta".into()))?;
        Ok(&p[i * w..(i + 1) * w])
    }

    /// Point of ordinary multiphase space over node (it, ix): (x, y, P).
    pub fn multiphase_point(&self, it: usize, ix: isize) -> Result<Vec<f64>> {
        let mut z = self.spec.coord(it, ix);
        z.extend_from_slice(self.y_at(it, ix)?);
        z.extend_from_slice(self.p_at(it, ix)?);
        Ok(z)
    }

    /// ∂_μ of per-node data: centered where possible, second-order one-sided
    /// at non-periodic edges.
    fn diff(&self, get: &dyn Fn(usize, isize) -> Result<Vec<f64>>, it: usize, ix: isize, mu: usize) -> Result<Vec<f64>> {
        let h = self.spec.step(mu);
        let shift = |s: isize| -> Option<(usize, isize)> {
            if mu == 0 {
                let t = it as isize + s;
                (t >= 0 && (t as usize) < self.spec.nt).then_some((t as usize, ix))
            } else {
                let x = ix + s;
                self.spec.index(it, x).map(|_| (it, x))
            }
        };
        let comb = |pts: &[(isize, f64)]| -> Result<Vec<f64>> {
            let mut acc: Vec<f64> = Vec::new();
            for &(s, w) in pts {
                let (a, b) = shift(s).ok_or(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]))?;
                let v = get(a, b)?;
                if acc.is_empty() {
                    acc = vec![0.0; v.len()];
                }
                for (o, x) in acc.iter_mut().zip(v) {
                    *o += w * x / h;
                }
            }
            Ok(acc)
        };
        match (shift(-1).is_some(), shift(1).is_some()) {
            (true, true) => comb(&[(-1, -0.5), (1, 0.5)]),
            (false, true) => comb(&[(0, -1.5), (1, 2.0), (2, -0.5)]),
            (true, false) => comb(&[(0, 1.5), (-1, -2.0), (-2, 0.5)]),
            _ => Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize])),
        }
    }

    /// ∂_μ y at a node.
    pub fn dy(&self, it: usize, ix: isize, mu: usize) -> Result<Vec<f64>> {
        self.diff(&|a, b| Ok(self.y_at(a, b)?.to_vec()), it, ix, mu)
    }

    /// ∂_μ P at a node.
    pub fn dp(&self, it: usize, ix: isize, mu: usize) -> Result<Vec<f64>> {
        self.diff(&|a, b| Ok(self.p_at(a, b)?.to_vec()), it, ix, mu)
    }

    /// Fiber block v[a][μ] = ∂_μ yᵃ (row-major a·n + μ).
    pub fn jet_block(&self, it: usize, ix: isize) -> Result<Vec<f64>> {
        let (n, k) = (self.n(), self.k);
        let cols: Vec<Vec<f64>> = (0..n).map(|mu| self.dy(it, ix, mu)).collect::<Result<_>>()?;
        Ok((0..k * n).map(|i| cols[i % n][i / n]).collect())
    }

    /// ∂_ν∂_μ yᵃ at an interior node by centered second differences,
    /// indexed `(a·n + μ)·n + ν`.
    pub fn second_block(&self, it: usize, ix: isize) -> Result<Vec<f64>> {
        if !self.spec.is_interior(it, ix) {
            return Err(GnkError::BoundaryPoint(vec![it, ix.max(0) as usize]));
        }
        let (n, k) = (self.n(), self.k);
        let at = |dt: isize, dx: isize| self.y_at((it as isize + dt) as usize, ix + dx);
        let c = at(0, 0)?;
        let mut out = vec![0.0; k * n * n];
        for mu in 0..n {
            for nu in 0..n {
                let val: Vec<f64> = if mu == nu {
                    let (p, m) = if mu == 0 { (at(1, 0)?, at(-1, 0)?) } else { (at(0, 1)?, at(0, -1)?) };
                    let h = self.spec.step(mu);
                    (0..k).map(|a| (p[a] - 2.0 * c[a] + m[a]) / (h * h)).collect()
                } else {
                    let (pp, pm, mp, mm) = (at(1, 1)?, at(1, -1)?, at(-1, 1)?, at(-1, -1)?);
                    (0..k).map(|a| (pp[a] - pm[a] - mp[a] + mm[a]) / (4.0 * self.spec.dt * self.spec.dx)).collect()
                };
                for a in 0..k {
                    out[(a * n + mu) * n + nu] = val[a];
                }
            }
        }
        Ok(out)
    }

    /// Inclusive range of reported time levels.
    pub fn window_t(&self) -> (usize, usize) {
        (self.pad_t, self.spec.nt - 1 - self.pad_t)
    }

    /// Interior nodes strictly inside the time window, time-major.
    pub fn window_interior_nodes(&self) -> Vec<(usize, isize)> {
        let (lo, hi) = self.window_t();
        self.interior_nodes().into_iter().filter(|&(it, _)| it > lo && it < hi).collect()
    }

    /// Interior nodes in time-major order.
    pub fn interior_nodes(&self) -> Vec<(usize, isize)> {
        let mut out = Vec::new();
        for it in 0..self.spec.nt {
            for ix in 0..self.spec.nx as isize {
                if self.spec.is_interior(it, ix) {
                    out.push((it, ix));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_quadratic_are_exact() {
        let spec = GridSpec::space_time(7, 6, 0.0, 0.1, 0.0, 0.2, false);
        let g = GridSection::from_fn(spec, 1, |x| vec![x[0] * x[0] + 3.0 * x[0] * x[1] - x[1]]);
        let v = g.jet_block(3, 2).unwrap();
        let x = g.spec.coord(3, 2);
        assert!((v[0] - (2.0 * x[0] + 3.0 * x[1])).abs() < 1e-12);
        assert!((v[1] - (3.0 * x[0] - 1.0)).abs() < 1e-12);
        let edge = g.jet_block(0, 0).unwrap();
        assert!((edge[0] - 0.0).abs() < 1e-12 && (edge[1] + 1.0).abs() < 1e-12);
        let s = g.second_block(3, 2).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-9 && (s[1] - 3.0).abs() < 1e-9 && (s[2] - 3.0).abs() < 1e-9 && s[3].abs() < 1e-9);
        assert!(matches!(g.second_block(0, 2), Err(GnkError::BoundaryPoint(_))));
    }

    #[test]
    fn periodic_wrap_and_image_coordinates() {
        let spec = GridSpec::space_time(3, 4, 0.0, 0.1, 0.0, 0.25, true);
        assert_eq!(spec.index(1, -1), Some(7));
        assert_eq!(spec.coord(1, 4), vec![0.1, 1.0]);
        assert!(spec.is_interior(1, 0));
        assert!(!spec.is_interior(0, 0));
    }
}
