//! Built-in maps addressable by name, and the combinator rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Rule, Scalar, SmoothMap};
use crate::error::{GnkError, Result};
use crate::linalg::Mat;

pub const BUILTIN_MAPS: &[&str] = &["identity", "linear", "affine", "polynomial", "trig"];

pub struct Identity;

impl Rule for Identity {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        x.to_vec()
    }
}

pub struct Affine {
    pub a: Mat<f64>,
    pub b: Vec<f64>,
}

impl Rule for Affine {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        (0..self.a.rows)
            .map(|i| {
                let mut acc = S::cst(self.b[i]);
                for j in 0..self.a.cols {
                    let c = self.a[(i, j)];
                    if c != 0.0 {
                        acc += x[j].scale(c);
                    }
                }
                acc
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<u32>,
}

impl Monomial {
    pub fn new(coef: f64, exps: Vec<u32>) -> Self {
        Monomial { coef, exps }
    }
}

/// One sum of monomials per output component.
pub struct Polynomial {
    pub dim: usize,
    pub components: Vec<Vec<Monomial>>,
}

impl Rule for Polynomial {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.components
            .iter()
            .map(|terms| {
                let mut acc = S::zero();
                for t in terms {
                    let mut m = S::cst(t.coef);
                    for (xi, &e) in x.iter().zip(&t.exps) {
                        if e > 0 {
                            m *= xi.powi(e as i32);
                        }
                    }
                    acc += m;
                }
                acc
            })
            .collect()
    }
}

/// x ↦ (sin(ω_i x_i)…, cos(ω_i x_i)…).
pub struct Trig {
    pub freq: Vec<f64>,
}

impl Rule for Trig {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let args: Vec<S> = x.iter().zip(&self.freq).map(|(&v, &w)| v.scale(w)).collect();
        args.iter().map(|a| a.sin()).chain(args.iter().map(|a| a.cos())).collect()
    }
}

pub struct Compose {
    pub outer: SmoothMap,
    pub inner: SmoothMap,
}

impl Rule for Compose {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.outer.call(&self.inner.call(x))
    }
}

pub struct Fanout {
    pub f: SmoothMap,
    pub g: SmoothMap,
}

impl Rule for Fanout {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = self.f.call(x);
        out.extend(self.g.call(x));
        out
    }
}

pub struct Product {
    pub f: SmoothMap,
    pub g: SmoothMap,
}

impl Rule for Product {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let p = self.f.dom_dim();
        let mut out = self.f.call(&x[..p]);
        out.extend(self.g.call(&x[p..]));
        out
    }
}

pub fn identity(dim: usize) -> SmoothMap {
    SmoothMap::new(dim, dim, Identity, "identity")
}

pub fn linear(a: Mat<f64>) -> SmoothMap {
    let b = vec![0.0; a.rows];
    let (p, q) = (a.cols, a.rows);
    SmoothMap::new(p, q, Affine { a, b }, "linear")
}

pub fn affine(a: Mat<f64>, b: Vec<f64>) -> SmoothMap {
    assert_eq!(a.rows, b.len(), "affine offset length");
    let (p, q) = (a.cols, a.rows);
    SmoothMap::new(p, q, Affine { a, b }, "affine")
}

pub fn polynomial(dim: usize, components: Vec<Vec<Monomial>>) -> Result<SmoothMap> {
    for t in components.iter().flatten() {
        if t.exps.len() != dim {
            return Err(GnkError::DimensionMismatch { what: "polynomial exponents".into(), expected: dim, got: t.exps.len() });
        }
    }
    let q = components.len();
    Ok(SmoothMap::new(dim, q, Polynomial { dim, components }, "polynomial"))
}

pub fn trig(freq: Vec<f64>) -> SmoothMap {
    let p = freq.len();
    SmoothMap::new(p, 2 * p, Trig { freq }, "trig")
}

/// All exponent vectors of total degree ≤ `degree` in `dim` variables, in
/// graded lexicographic order.
pub fn exponents_up_to(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0u32; dim];
        gen_exps(dim, 0, total, &mut cur, &mut out);
    }
    out
}

fn gen_exps(dim: usize, i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if dim == 0 {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if i == dim - 1 {
        cur[i] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[i] = e;
        gen_exps(dim, i + 1, left - e, cur, out);
    }
    cur[i] = 0;
}

/// Random polynomial with coefficients uniform in [-scale, scale].
pub fn random_polynomial<R: Rng + ?Sized>(dim: usize, cod: usize, degree: u32, scale: f64, rng: &mut R) -> SmoothMap {
    let exps = exponents_up_to(dim, degree);
    let components = (0..cod)
        .map(|_| exps.iter().map(|e| Monomial::new(rng.gen_range(-scale..=scale), e.clone())).collect())
        .collect();
    SmoothMap::new(dim, cod, Polynomial { dim, components }, "random_polynomial")
}

/// Declarative map description used by configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Identity { dim: usize },
    Linear { matrix: Vec<Vec<f64>> },
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    Polynomial { dim: usize, components: Vec<Vec<Monomial>> },
    Trig { freq: Vec<f64> },
    Compose { outer: Box<MapSpec>, inner: Box<MapSpec> },
    Product { first: Box<MapSpec>, second: Box<MapSpec> },
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return Err(GnkError::Config("ragged matrix".into()));
    }
    Ok(Mat::from_rows(rows))
}

impl MapSpec {
    pub fn build(&self) -> Result<SmoothMap> {
        Ok(match self {
            MapSpec::Identity { dim } => identity(*dim),
            MapSpec::Linear { matrix } => linear(matrix_from_rows(matrix)?),
            MapSpec::Affine { matrix, offset } => {
                let a = matrix_from_rows(matrix)?;
                if a.rows != offset.len() {
                    return Err(GnkError::Config("affine offset length".into()));
                }
                affine(a, offset.clone())
            }
            MapSpec::Polynomial { dim, components } => polynomial(*dim, components.clone())?,
            MapSpec::Trig { freq } => trig(freq.clone()),
            MapSpec::Compose { outer, inner } => SmoothMap::compose(&outer.build()?, &inner.build()?)?,
            MapSpec::Product { first, second } => SmoothMap::product(&first.build()?, &second.build()?),
        })
    }
}
