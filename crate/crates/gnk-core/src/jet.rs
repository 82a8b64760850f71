//! First and second jets of bundle sections, linearized jets, the twisted
//! duals (cojets) and connections.
//!
//! A jet at `e` is an `(n+k)×n` matrix whose top block is the identity; only
//! the `k×n` fiber block `v[a][μ] = ∂_μ φ^a` carries information.

use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};
use crate::linalg::{max_abs_diff, Mat};
use crate::manifold::{BundleChart, BundleMap};
use crate::smooth::SmoothMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub e: Vec<f64>,
    pub u: Mat<f64>,
}

impl Jet {
    pub fn from_fiber_block(e: Vec<f64>, v: &Mat<f64>) -> Self {
        let n = v.cols;
        let mut u = Mat::zeros(n + v.rows, n);
        u.set_block(0, 0, &Mat::identity(n));
        u.set_block(n, 0, v);
        Jet { e, u }
    }

    /// Build from a full matrix, restoring the identity block exactly.
    pub fn from_matrix(e: Vec<f64>, m: &Mat<f64>) -> Self {
        let n = m.cols;
        Self::from_fiber_block(e, &m.block(n, 0, m.rows - n, n))
    }

    pub fn n(&self) -> usize {
        self.u.cols
    }
    pub fn k(&self) -> usize {
        self.u.rows - self.u.cols
    }

    pub fn fiber_block(&self) -> Mat<f64> {
        self.u.block(self.n(), 0, self.k(), self.n())
    }

    pub fn minus(&self, o: &Jet) -> LinJet {
        LinJet { e: self.e.clone(), w: self.fiber_block().sub(&o.fiber_block()) }
    }

    pub fn plus(&self, w: &LinJet) -> Jet {
        Jet::from_fiber_block(self.e.clone(), &self.fiber_block().add(&w.w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinJet {
    pub e: Vec<f64>,
    pub w: Mat<f64>,
}

/// Point of J°E: affine maps from J_eE to volume forms, stored as the
/// coefficient data `(P, c)` against dx¹∧…∧dxⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedCojetPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Mat<f64>,
    pub c: f64,
}

impl ExtendedCojetPoint {
    pub fn pair(&self, u: &Jet) -> f64 {
        let v = u.fiber_block();
        pairing(&self.p, &v) + self.c
    }

    pub fn base(&self) -> Vec<f64> {
        let mut e = self.x.clone();
        e.extend_from_slice(&self.y);
        e
    }

    /// Flat layout `(x, y, P row-major, c)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.base();
        v.extend_from_slice(&self.p.data);
        v.push(self.c);
        v
    }

    pub fn from_vec(n: usize, k: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), n + k + k * n + 1, "extended cojet layout");
        ExtendedCojetPoint {
            x: v[..n].to_vec(),
            y: v[n..n + k].to_vec(),
            p: Mat::from_vec(k, n, v[n + k..n + k + k * n].to_vec()),
            c: v[n + k + k * n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinaryCojetPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Mat<f64>,
}

impl OrdinaryCojetPoint {
    pub fn pair(&self, w: &LinJet) -> f64 {
        pairing(&self.p, &w.w)
    }

    pub fn base(&self) -> Vec<f64> {
        let mut e = self.x.clone();
        e.extend_from_slice(&self.y);
        e
    }

    /// Flat layout `(x, y, P row-major)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.base();
        v.extend_from_slice(&self.p.data);
        v
    }

    pub fn from_vec(n: usize, k: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), n + k + k * n, "ordinary cojet layout");
        OrdinaryCojetPoint { x: v[..n].to_vec(), y: v[n..n + k].to_vec(), p: Mat::from_vec(k, n, v[n + k..].to_vec()) }
    }
}

/// Σ P[a,μ] w[a,μ].
pub fn pairing(p: &Mat<f64>, w: &Mat<f64>) -> f64 {
    p.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// η: J°E → J⃗°E.
pub fn linear_part(z: &ExtendedCojetPoint) -> OrdinaryCojetPoint {
    OrdinaryCojetPoint { x: z.x.clone(), y: z.y.clone(), p: z.p.clone() }
}

/// A connection as a section Γ: E → JE, given by its fiber block.
#[derive(Clone, Debug)]
pub struct Connection {
    /// (n+k) → k·n, row-major k×n.
    pub gamma: SmoothMap,
    pub n: usize,
    pub k: usize,
}

impl Connection {
    pub fn new(gamma: SmoothMap, n: usize, k: usize) -> Result<Self> {
        if gamma.dom_dim() != n + k || gamma.cod_dim() != k * n {
            return Err(GnkError::DimensionMismatch { what: "connection".into(), expected: k * n, got: gamma.cod_dim() });
        }
        Ok(Connection { gamma, n, k })
    }

    pub fn zero(n: usize, k: usize) -> Self {
        let g = crate::smooth::library::linear(Mat::zeros(k * n, n + k));
        Connection { gamma: g, n, k }
    }

    pub fn jet_at(&self, e: &[f64]) -> Result<Jet> {
        let v = self.gamma.eval(e)?;
        Ok(Jet::from_fiber_block(e.to_vec(), &Mat::from_vec(self.k, self.n, v)))
    }
}

/// Second-order data over a jet: the derivative `dy` of the E-part and
/// `w[a][μ][ν] = ∂_ν v[a][μ]` of the fiber block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondJet {
    pub base: Jet,
    pub dy: Mat<f64>,
    pub w: Vec<f64>,
}

impl SecondJet {
    /// A semiholonomic second jet: `dy` equals the base jet's fiber block.
    pub fn semiholonomic(base: Jet, w: Vec<f64>) -> Self {
        let dy = base.fiber_block();
        SecondJet { base, dy, w }
    }

    pub fn w_at(&self, a: usize, mu: usize, nu: usize) -> f64 {
        let n = self.base.n();
        self.w[(a * n + mu) * n + nu]
    }
}

fn check_section(e: &BundleChart, phi: &SmoothMap, x: &[f64]) -> Result<Vec<f64>> {
    if phi.dom_dim() != e.n() || phi.cod_dim() != e.dim() {
        return Err(GnkError::DimensionMismatch { what: "section".into(), expected: e.dim(), got: phi.cod_dim() });
    }
    let val = phi.eval(x)?;
    let r = max_abs_diff(&val[..e.n()], x);
    if r > 1e-10 {
        return Err(GnkError::NotASection { residual: r });
    }
    Ok(val)
}

pub fn jet_of_section(e: &BundleChart, phi: &SmoothMap, x: &[f64]) -> Result<Jet> {
    let val = check_section(e, phi, x)?;
    let jac = phi.jacobian(x)?;
    Ok(Jet::from_fiber_block(val, &jac.block(e.n(), 0, e.k(), e.n())))
}

pub fn second_jet_of_section(e: &BundleChart, phi: &SmoothMap, x: &[f64]) -> Result<SecondJet> {
    let base = jet_of_section(e, phi, x)?;
    let (n, k) = (e.n(), e.k());
    let mut w = vec![0.0; k * n * n];
    let basis = |i: usize| -> Vec<f64> { (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect() };
    for mu in 0..n {
        for nu in 0..n {
            let d = phi.second_directional(x, &basis(mu), &basis(nu))?;
            for a in 0..k {
                w[(a * n + mu) * n + nu] = d[n + a];
            }
        }
    }
    Ok(SecondJet::semiholonomic(base, w))
}

/// J f(u) = T_e f ∘ u.
pub fn jet_pushforward(f: &BundleMap, u: &Jet) -> Result<Jet> {
    let jac = f.map.jacobian(&u.e)?;
    let img = f.map.eval(&u.e)?;
    Ok(Jet::from_matrix(img, &jac.mul(&u.u)))
}

/// Fiber block of jφ(x) minus Γ(φ(x)).
pub fn covariant_derivative(e: &BundleChart, phi: &SmoothMap, gamma: &Connection, x: &[f64]) -> Result<LinJet> {
    let j = jet_of_section(e, phi, x)?;
    let g = gamma.jet_at(&j.e)?;
    Ok(j.minus(&g))
}

/// Symmetric and antisymmetric parts of the second block in (μ, ν).
pub fn semiholonomic_split(s: &SecondJet) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = s.dy.max_abs_diff(&s.base.fiber_block());
    if r > 1e-9 {
        return Err(GnkError::NotSemiholonomic { residual: r });
    }
    let (n, k) = (s.base.n(), s.base.k());
    let mut sym = vec![0.0; k * n * n];
    let mut alt = vec![0.0; k * n * n];
    for a in 0..k {
        for mu in 0..n {
            for nu in 0..n {
                let (p, q) = (s.w_at(a, mu, nu), s.w_at(a, nu, mu));
                sym[(a * n + mu) * n + nu] = 0.5 * (p + q);
                alt[(a * n + mu) * n + nu] = 0.5 * (p - q);
            }
        }
    }
    Ok((sym, alt))
}

/// Holonomy residual of a section φ̃: M → JE given as x ↦ (e, v row-major):
/// the distance between its fiber block and the Jacobian of its E-part.
pub fn holonomy_residual(e: &BundleChart, phi_tilde: &SmoothMap, x: &[f64]) -> Result<f64> {
    let (n, k) = (e.n(), e.k());
    let val = phi_tilde.eval(x)?;
    let jac = phi_tilde.jacobian(x)?;
    let mut r: f64 = 0.0;
    for a in 0..k {
        for mu in 0..n {
            r = r.max((val[n + k + a * n + mu] - jac[(n + a, mu)]).abs());
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ChartManifold;
    use crate::smooth::library::{polynomial, Monomial};

    fn line_bundle() -> BundleChart {
        BundleChart::trivial(ChartManifold::cube("R", 1, -5.0, 5.0), 1, -50.0, 50.0)
    }

    fn graph_of_square() -> SmoothMap {
        polynomial(1, vec![vec![Monomial::new(1.0, vec![1])], vec![Monomial::new(1.0, vec![2])]]).unwrap()
    }

    #[test]
    fn jet_of_square_section() {
        let j = jet_of_section(&line_bundle(), &graph_of_square(), &[2.0]).unwrap();
        assert_eq!(j.fiber_block().data, vec![4.0]);
        assert_eq!(j.u[(0, 0)], 1.0);
    }

    #[test]
    fn constant_section_has_zero_block() {
        let phi = polynomial(1, vec![vec![Monomial::new(1.0, vec![1])], vec![Monomial::new(3.0, vec![0])]]).unwrap();
        let j = jet_of_section(&line_bundle(), &phi, &[0.7]).unwrap();
        assert_eq!(j.fiber_block().data, vec![0.0]);
    }

    #[test]
    fn non_section_rejected() {
        let phi = polynomial(1, vec![vec![Monomial::new(2.0, vec![1])], vec![Monomial::new(1.0, vec![0])]]).unwrap();
        assert!(matches!(jet_of_section(&line_bundle(), &phi, &[1.0]), Err(GnkError::NotASection { .. })));
    }

    #[test]
    fn fiber_linear_pushforward_doubles() {
        let e = line_bundle();
        let f = crate::smooth::library::linear(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let bm = BundleMap::new(e.clone(), e, f).unwrap();
        let u = Jet::from_fiber_block(vec![0.0, 1.0], &Mat::from_vec(1, 1, vec![4.0]));
        assert_eq!(jet_pushforward(&bm, &u).unwrap().fiber_block().data, vec![8.0]);
    }

    #[test]
    fn affine_pairing_values() {
        let z = ExtendedCojetPoint { x: vec![0.0], y: vec![1.0], p: Mat::from_vec(1, 1, vec![3.0]), c: 4.0 };
        let u = Jet::from_fiber_block(vec![0.0, 1.0], &Mat::from_vec(1, 1, vec![2.0]));
        assert_eq!(z.pair(&u), 10.0);
        assert_eq!(linear_part(&z).p, z.p);
    }

    #[test]
    fn split_of_difference_pattern() {
        let base = Jet::from_fiber_block(vec![0.0, 0.0, 0.0], &Mat::zeros(1, 2));
        let w: Vec<f64> = (0..2).flat_map(|mu| (0..2).map(move |nu| mu as f64 - nu as f64)).collect();
        let (sym, alt) = semiholonomic_split(&SecondJet::semiholonomic(base, w.clone())).unwrap();
        assert!(sym.iter().all(|v| *v == 0.0));
        assert_eq!(alt, w);
    }

    #[test]
    fn non_semiholonomic_rejected() {
        let base = Jet::from_fiber_block(vec![0.0, 0.0], &Mat::from_vec(1, 1, vec![1.0]));
        let s = SecondJet { base, dy: Mat::from_vec(1, 1, vec![2.0]), w: vec![0.0] };
        assert!(matches!(semiholonomic_split(&s), Err(GnkError::NotSemiholonomic { .. })));
    }
}
