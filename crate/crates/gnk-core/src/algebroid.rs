//! Lie algebroids in a local frame: structure functions, section brackets,
//! the jet algebroid, the algebroid of a groupoid chart and its exponential.
//!
//! Index conventions: the anchor map returns `f_a^μ` at `a·n + μ`, the
//! bracket map returns `f_ab^c` at `(a·r + b)·r + c`. In the jet algebroid
//! `T_a` keeps index `a` and `T_a^μ` sits at `r + a·n + μ`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};
use crate::groupoid::GroupoidChart;
use crate::linalg::{max_abs, max_abs_diff, Mat};
use crate::smooth::library::{affine, exponents_up_to, polynomial, random_polynomial, MapSpec, Monomial};
use crate::smooth::{BoxDomain, Rule, Scalar, SmoothMap};

#[derive(Clone, Debug)]
pub struct StructureFunctions {
    pub r: usize,
    pub n: usize,
    pub anchor: SmoothMap,
    pub bracket: SmoothMap,
}

fn constant_map(n: usize, values: Vec<f64>) -> SmoothMap {
    affine(Mat::zeros(values.len(), n), values)
}

impl StructureFunctions {
    pub fn new(r: usize, n: usize, anchor: SmoothMap, bracket: SmoothMap) -> Result<Self> {
        if anchor.dom_dim() != n || anchor.cod_dim() != r * n {
            return Err(GnkError::DimensionMismatch { what: "anchor structure functions".into(), expected: r * n, got: anchor.cod_dim() });
        }
        if bracket.dom_dim() != n || bracket.cod_dim() != r * r * r {
            return Err(GnkError::DimensionMismatch { what: "bracket structure functions".into(), expected: r * r * r, got: bracket.cod_dim() });
        }
        Ok(StructureFunctions { r, n, anchor, bracket })
    }

    /// Constant anchor (r×n) and bracket tensor.
    pub fn constant(anchor: &Mat<f64>, bracket: Vec<f64>) -> Result<Self> {
        let (r, n) = (anchor.rows, anchor.cols);
        Self::new(r, n, constant_map(n, anchor.data.clone()), constant_map(n, bracket))
    }

    /// TM with coordinate frame: f_a^μ = δ, f_ab^c = 0.
    pub fn tangent(n: usize) -> Self {
        Self::constant(&Mat::identity(n), vec![0.0; n * n * n]).expect("tangent algebroid")
    }

    /// M × so(3) with f_ab^c = ε_abc and zero anchor.
    pub fn so3_bundle(n: usize) -> Self {
        let mut f = vec![0.0; 27];
        for (a, b, c, s) in [(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0), (1, 0, 2, -1.0), (2, 1, 0, -1.0), (0, 2, 1, -1.0)] {
            f[(a * 3 + b) * 3 + c] = s;
        }
        Self::constant(&Mat::zeros(3, n), f).expect("so3 bundle")
    }

    /// M × so(2) (abelian, rank one).
    pub fn abelian_bundle(r: usize, n: usize) -> Self {
        Self::constant(&Mat::zeros(r, n), vec![0.0; r * r * r]).expect("abelian bundle")
    }

    pub fn anchor_at<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.anchor.call(x)
    }

    pub fn bracket_at<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.bracket.call(x)
    }

    /// max |f_ab^c + f_ba^c|.
    pub fn antisymmetry_residual(&self, x: &[f64]) -> f64 {
        let f = self.bracket.call(x);
        let r = self.r;
        let mut worst: f64 = 0.0;
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    worst = worst.max((f[(a * r + b) * r + c] + f[(b * r + a) * r + c]).abs());
                }
            }
        }
        worst
    }

    /// Jacobi identity on the constant basis sections, anchor-derivative
    /// terms included.
    pub fn jacobi_residual(&self, x: &[f64]) -> f64 {
        let basis: Vec<AlgebroidSection> = (0..self.r).map(|a| AlgebroidSection::basis(self, a)).collect();
        let mut worst: f64 = 0.0;
        for a in 0..self.r {
            for b in a + 1..self.r {
                for c in b + 1..self.r {
                    worst = worst.max(jacobi_residual(self, &basis[a], &basis[b], &basis[c], x));
                }
            }
        }
        worst
    }

    /// α[T_a, T_b] = [αT_a, αT_b] as vector fields.
    pub fn anchor_morphism_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.r {
            for b in 0..self.r {
                let ta = AlgebroidSection::basis(self, a);
                let tb = AlgebroidSection::basis(self, b);
                let lhs = anchor_apply(self, &bracket(self, &ta, &tb), x);
                let (va, vb) = (anchor_field(self, &ta), anchor_field(self, &tb));
                let rhs = vector_field_bracket(&va, &vb, x);
                worst = worst.max(max_abs_diff(&lhs, &rhs));
            }
        }
        worst
    }
}

/// ξ = ξᵃ T_a.
#[derive(Clone, Debug)]
pub struct AlgebroidSection {
    pub map: SmoothMap,
}

impl AlgebroidSection {
    pub fn new(map: SmoothMap) -> Self {
        AlgebroidSection { map }
    }

    pub fn basis(s: &StructureFunctions, a: usize) -> Self {
        let mut v = vec![0.0; s.r];
        v[a] = 1.0;
        AlgebroidSection::new(constant_map(s.n, v))
    }

    pub fn constant(n: usize, v: Vec<f64>) -> Self {
        AlgebroidSection::new(constant_map(n, v))
    }

    pub fn zero(s: &StructureFunctions) -> Self {
        AlgebroidSection::constant(s.n, vec![0.0; s.r])
    }

    pub fn random<R: Rng + ?Sized>(s: &StructureFunctions, degree: u32, scale: f64, rng: &mut R) -> Self {
        AlgebroidSection::new(random_polynomial(s.n, s.r, degree, scale, rng))
    }

    pub fn at(&self, x: &[f64]) -> Vec<f64> {
        self.map.call(x)
    }
}

/// α(ξ)(x) = ξᵃ f_a^μ.
pub fn anchor_apply(s: &StructureFunctions, xi: &AlgebroidSection, x: &[f64]) -> Vec<f64> {
    anchor_apply_s(s, &xi.map.call(x), &s.anchor.call(x))
}

fn anchor_apply_s<S: Scalar>(s: &StructureFunctions, xi: &[S], f: &[S]) -> Vec<S> {
    (0..s.n)
        .map(|mu| {
            let mut acc = S::zero();
            for a in 0..s.r {
                acc += xi[a] * f[a * s.n + mu];
            }
            acc
        })
        .collect()
}

struct AnchorField {
    s: StructureFunctions,
    xi: SmoothMap,
}

impl Rule for AnchorField {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        anchor_apply_s(&self.s, &self.xi.call(x), &self.s.anchor.call(x))
    }
}

pub fn anchor_field(s: &StructureFunctions, xi: &AlgebroidSection) -> SmoothMap {
    SmoothMap::new(s.n, s.n, AnchorField { s: s.clone(), xi: xi.map.clone() }, "anchor_field")
}

/// [V, W] = DW·V − DV·W for vector fields on the chart.
pub fn vector_field_bracket(v: &SmoothMap, w: &SmoothMap, x: &[f64]) -> Vec<f64> {
    let (vx, dv) = v.jvp(x, &w.call(x));
    let (_, dw) = w.jvp(x, &vx);
    dw.iter().zip(&dv).map(|(a, b)| a - b).collect()
}

struct BracketRule {
    s: StructureFunctions,
    xi: SmoothMap,
    eta: SmoothMap,
}

impl Rule for BracketRule {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (r, n) = (self.s.r, self.s.n);
        let xi = self.xi.call(x);
        let eta = self.eta.call(x);
        let fa = self.s.anchor.call(x);
        let fb = self.s.bracket.call(x);
        let axi = anchor_apply_s(&self.s, &xi, &fa);
        let aeta = anchor_apply_s(&self.s, &eta, &fa);
        let (_, d_eta) = self.eta.jvp(x, &axi);
        let (_, d_xi) = self.xi.jvp(x, &aeta);
        debug_assert_eq!(axi.len(), n);
        (0..r)
            .map(|c| {
                let mut acc = d_eta[c] - d_xi[c];
                for a in 0..r {
                    for b in 0..r {
                        acc += xi[a] * eta[b] * fb[(a * r + b) * r + c];
                    }
                }
                acc
            })
            .collect()
    }
}

/// [ξ,η]ᶜ = ξᵃηᵇ f_ab^c + α(ξ)(ηᶜ) − α(η)(ξᶜ).
pub fn bracket(s: &StructureFunctions, xi: &AlgebroidSection, eta: &AlgebroidSection) -> AlgebroidSection {
    AlgebroidSection::new(SmoothMap::new(s.n, s.r, BracketRule { s: s.clone(), xi: xi.map.clone(), eta: eta.map.clone() }, "bracket"))
}

pub fn jacobi_residual(s: &StructureFunctions, a: &AlgebroidSection, b: &AlgebroidSection, c: &AlgebroidSection, x: &[f64]) -> f64 {
    let t1 = bracket(s, &bracket(s, a, b), c).at(x);
    let t2 = bracket(s, &bracket(s, b, c), a).at(x);
    let t3 = bracket(s, &bracket(s, c, a), b).at(x);
    max_abs(&t1.iter().zip(&t2).zip(&t3).map(|((p, q), r)| p + q + r).collect::<Vec<_>>())
}

struct ScaledSection {
    f: SmoothMap,
    eta: SmoothMap,
}

impl Rule for ScaledSection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let f = self.f.call(x)[0];
        self.eta.call(x).into_iter().map(|v| f * v).collect()
    }
}

/// f·η for a scalar function f.
pub fn scale_section(f: &SmoothMap, eta: &AlgebroidSection) -> AlgebroidSection {
    AlgebroidSection::new(SmoothMap::new(eta.map.dom_dim(), eta.map.cod_dim(), ScaledSection { f: f.clone(), eta: eta.map.clone() }, "scaled"))
}

/// |[ξ, fη] − f[ξ,η] − (L_{α(ξ)}f)η|.
pub fn leibniz_residual(s: &StructureFunctions, xi: &AlgebroidSection, f: &SmoothMap, eta: &AlgebroidSection, x: &[f64]) -> f64 {
    let lhs = bracket(s, xi, &scale_section(f, eta)).at(x);
    let fx = f.call(x)[0];
    let b = bracket(s, xi, eta).at(x);
    let lf = f.jvp(x, &anchor_apply(s, xi, x)).1[0];
    let e = eta.at(x);
    (0..s.r).map(|c| (lhs[c] - fx * b[c] - lf * e[c]).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Jet algebroid

struct JetAnchor {
    s: StructureFunctions,
}

impl Rule for JetAnchor {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (r, n) = (self.s.r, self.s.n);
        let mut out = self.s.anchor.call(x);
        out.extend(std::iter::repeat(S::zero()).take(r * n * n));
        out
    }
}

struct JetBracket {
    s: StructureFunctions,
}

impl Rule for JetBracket {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (r, n) = (self.s.r, self.s.n);
        let big = r + r * n;
        let fa = self.s.anchor.call(x);
        let fb = self.s.bracket.call(x);
        let mut dfa = Vec::with_capacity(n);
        let mut dfb = Vec::with_capacity(n);
        let mut e = vec![S::zero(); n];
        for mu in 0..n {
            e[mu] = S::one();
            dfa.push(self.s.anchor.jvp(x, &e).1);
            dfb.push(self.s.bracket.jvp(x, &e).1);
            e[mu] = S::zero();
        }
        let jet = |a: usize, mu: usize| r + a * n + mu;
        let mut out = vec![S::zero(); big * big * big];
        let mut set = |i: usize, j: usize, k: usize, v: S| {
            out[(i * big + j) * big + k] += v;
            out[(j * big + i) * big + k] -= v;
        };
        for a in 0..r {
            for b in 0..r {
                // [T_a, T_b] = f_ab^c T_c + ∂_μ f_ab^c T_c^μ
                if a < b {
                    for c in 0..r {
                        let f = fb[(a * r + b) * r + c];
                        set(a, b, c, f);
                        for mu in 0..n {
                            set(a, b, jet(c, mu), dfb[mu][(a * r + b) * r + c]);
                        }
                    }
                }
                // [T_a, T_b^μ] = f_ab^c T_c^μ + ∂_ν f_a^μ T_b^ν
                for mu in 0..n {
                    for c in 0..r {
                        set(a, jet(b, mu), jet(c, mu), fb[(a * r + b) * r + c]);
                    }
                    for nu in 0..n {
                        set(a, jet(b, mu), jet(b, nu), dfa[nu][a * n + mu]);
                    }
                }
            }
        }
        // [T_a^μ, T_b^ν] = f_a^ν T_b^μ − f_b^μ T_a^ν
        for a in 0..r {
            for mu in 0..n {
                for b in 0..r {
                    for nu in 0..n {
                        let (i, j) = (jet(a, mu), jet(b, nu));
                        if i >= j {
                            continue;
                        }
                        set(i, j, jet(b, mu), fa[a * n + nu]);
                        set(i, j, jet(a, nu), -fa[b * n + mu]);
                    }
                }
            }
        }
        out
    }
}

pub fn jet_algebroid(s: &StructureFunctions) -> StructureFunctions {
    let (r, n) = (s.r, s.n);
    let big = r + r * n;
    StructureFunctions {
        r: big,
        n,
        anchor: SmoothMap::new(n, big * n, JetAnchor { s: s.clone() }, "jet_anchor"),
        bracket: SmoothMap::new(n, big * big * big, JetBracket { s: s.clone() }, "jet_bracket"),
    }
}

struct JetProlong {
    r: usize,
    n: usize,
    xi: SmoothMap,
}

impl Rule for JetProlong {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = self.xi.call(x);
        let jac = self.xi.jacobian_s(x);
        for a in 0..self.r {
            for mu in 0..self.n {
                out.push(jac[(a, mu)]);
            }
        }
        out
    }
}

/// jξ = ξᵃ T_a + ∂_μ ξᵃ T_a^μ.
pub fn jet_prolong_algebroid_section(s: &StructureFunctions, xi: &AlgebroidSection) -> AlgebroidSection {
    let (r, n) = (s.r, s.n);
    AlgebroidSection::new(SmoothMap::new(n, r + r * n, JetProlong { r, n, xi: xi.map.clone() }, "jet_prolongation"))
}

/// |[jξ, jη] − j[ξ,η]|.
pub fn prolongation_bracket_residual(s: &StructureFunctions, xi: &AlgebroidSection, eta: &AlgebroidSection, x: &[f64]) -> f64 {
    let js = jet_algebroid(s);
    let lhs = bracket(&js, &jet_prolong_algebroid_section(s, xi), &jet_prolong_algebroid_section(s, eta)).at(x);
    let rhs = jet_prolong_algebroid_section(s, &bracket(s, xi, eta)).at(x);
    max_abs_diff(&lhs, &rhs)
}

/// Residual predicate on jet-algebroid coefficients (ξ, ∂ξ) at x.
pub type JetAlgebroidPredicate = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Killing equation L_X g = 0 for 𝔤 = TM.
pub fn killing_predicate(metric: crate::groupoid::MetricField) -> JetAlgebroidPredicate {
    Arc::new(move |x: &[f64], c: &[f64]| {
        let n = metric.n;
        let g = metric.at(x);
        let dx = |a: usize, mu: usize| c[n + a * n + mu];
        let mut dg = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for l in 0..n {
            e[l] = 1.0;
            dg.push(metric.map.jvp(x, &e).1);
            e[l] = 0.0;
        }
        let mut worst: f64 = 0.0;
        for mu in 0..n {
            for nu in 0..n {
                let mut v = 0.0;
                for l in 0..n {
                    v += c[l] * dg[l][mu * n + nu] + g[(l, nu)] * dx(l, mu) + g[(mu, l)] * dx(l, nu);
                }
                worst = worst.max(v.abs());
            }
        }
        worst
    })
}

/// Largest predicate residual of jX over the sample points.
pub fn prolongation_residual(s: &StructureFunctions, pred: &JetAlgebroidPredicate, xi: &AlgebroidSection, points: &[Vec<f64>]) -> f64 {
    let j = jet_prolong_algebroid_section(s, xi);
    points.iter().map(|x| pred(x, &j.at(x))).fold(0.0, f64::max)
}

/// X ∈ Γ(𝔤, 𝔤̃) checked at sample points.
pub fn sections_with_prolongation_in(s: &StructureFunctions, pred: &JetAlgebroidPredicate, xi: &AlgebroidSection, points: &[Vec<f64>], tol: f64) -> bool {
    prolongation_residual(s, pred, xi, points) <= tol
}

// ---------------------------------------------------------------------------
// Algebroid of a groupoid chart

/// Declarative structure functions for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    Tangent { dim: usize },
    So3Bundle { dim: usize },
    Constant { anchor: Vec<Vec<f64>>, bracket: Vec<(usize, usize, usize, f64)> },
    Maps { rank: usize, dim: usize, anchor: MapSpec, bracket: MapSpec },
}

impl StructureSpec {
    pub fn build(&self) -> Result<StructureFunctions> {
        match self {
            StructureSpec::Tangent { dim } => Ok(StructureFunctions::tangent(*dim)),
            StructureSpec::So3Bundle { dim } => Ok(StructureFunctions::so3_bundle(*dim)),
            StructureSpec::Constant { anchor, bracket } => {
                let a = Mat::from_rows(anchor);
                let r = a.rows;
                let mut f = vec![0.0; r * r * r];
                for &(i, j, k, v) in bracket {
                    if i >= r || j >= r || k >= r {
                        return Err(GnkError::Config(format!("bracket index ({i},{j},{k}) out of range for rank {r}")));
                    }
                    f[(i * r + j) * r + k] += v;
                    f[(j * r + i) * r + k] -= v;
                }
                StructureFunctions::constant(&a, f)
            }
            StructureSpec::Maps { rank, dim, anchor, bracket } => StructureFunctions::new(*rank, *dim, anchor.build()?, bracket.build()?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupoidAlgebroid {
    pub groupoid: GroupoidChart,
    /// Orthonormal basis of ker Tσ at the units (N×r).
    pub basis: Mat<f64>,
    pub structure: StructureFunctions,
    /// Worst least-squares misfit of the structure functions.
    pub fit_residual: f64,
}

struct RightInvariant {
    g: GroupoidChart,
    basis: Mat<f64>,
    xi: SmoothMap,
}

impl Rule for RightInvariant {
    fn apply<S: Scalar>(&self, el: &[S]) -> Vec<S> {
        right_invariant_s(&self.g, &self.basis, &self.xi, el)
    }
}

/// X^r(g) = Tμ(1_{τ(g)}, g)·(X(τ(g)), 0).
pub fn right_invariant_s<S: Scalar>(g: &GroupoidChart, basis: &Mat<f64>, xi: &SmoothMap, el: &[S]) -> Vec<S> {
    let y = g.tau.call(el);
    let c = xi.call(&y);
    let big = g.total_dim;
    let mut x = g.unit.call(&y);
    x.extend_from_slice(el);
    let mut dir = vec![S::zero(); 2 * big];
    for i in 0..big {
        for a in 0..basis.cols {
            dir[i] += c[a].scale(basis[(i, a)]);
        }
    }
    g.mu.jvp(&x, &dir).1
}

impl GroupoidAlgebroid {
    pub fn rank(&self) -> usize {
        self.basis.cols
    }

    pub fn right_invariant(&self, xi: &AlgebroidSection) -> SmoothMap {
        let big = self.groupoid.total_dim;
        SmoothMap::new(big, big, RightInvariant { g: self.groupoid.clone(), basis: self.basis.clone(), xi: xi.map.clone() }, "right_invariant")
    }

    /// Tangent vector X(x) ∈ T_{1_x}G.
    pub fn vector_at(&self, xi: &AlgebroidSection, x: &[f64]) -> Vec<f64> {
        self.basis.mul_vec(&xi.at(x))
    }

    /// Coefficients of the AD commutator of right-invariant fields at 1_x.
    pub fn commutator(&self, xi: &AlgebroidSection, eta: &AlgebroidSection, x: &[f64]) -> Vec<f64> {
        let (xr, yr) = (self.right_invariant(xi), self.right_invariant(eta));
        let v = vector_field_bracket(&xr, &yr, &self.groupoid.unit.call(x));
        self.basis.transpose().mul_vec(&v)
    }

    pub fn exp(&self, xi: &AlgebroidSection, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let steps = rk4_steps(t);
        let h = if steps == 0 { 0.0 } else { t / steps as f64 };
        let bb = &self.groupoid.base.bbox;
        let mut g = self.groupoid.unit.call(x);
        for _ in 0..steps {
            g = self.rk4_step(xi, &g, h);
            if !bb.contains(&self.groupoid.tau.call(&g)) || g.iter().any(|v| !v.is_finite()) {
                return Err(GnkError::LeftChart { t });
            }
        }
        Ok(g)
    }

    fn rk4_step<S: Scalar>(&self, xi: &AlgebroidSection, g: &[S], h: S) -> Vec<S> {
        let f = |p: &[S]| right_invariant_s(&self.groupoid, &self.basis, &xi.map, p);
        let add = |a: &[S], k: &[S], c: S| a.iter().zip(k).map(|(&u, &v)| u + c * v).collect::<Vec<S>>();
        let half = h.scale(0.5);
        let k1 = f(g);
        let k2 = f(&add(g, &k1, half));
        let k3 = f(&add(g, &k2, half));
        let k4 = f(&add(g, &k3, h));
        (0..g.len()).map(|i| g[i] + h * (k1[i] + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i]).scale(1.0 / 6.0)).collect()
    }

    /// Scalar-generic exponential with the step count fixed by |t|.
    pub fn exp_s<S: Scalar>(&self, xi: &AlgebroidSection, t: S, x: &[S]) -> Vec<S> {
        let steps = rk4_steps(t.value());
        let mut g = self.groupoid.unit.call(x);
        if steps == 0 {
            return g;
        }
        let h = t.scale(1.0 / steps as f64);
        for _ in 0..steps {
            g = self.rk4_step(xi, &g, h);
        }
        g
    }

    /// exp as a smooth map (t, x) ↦ exp(tX)(x).
    pub fn exp_map(&self, xi: &AlgebroidSection) -> SmoothMap {
        let n = self.groupoid.n();
        SmoothMap::new(n + 1, self.groupoid.total_dim, ExpRule { alg: self.clone(), xi: xi.clone() }, "exp")
    }
}

struct ExpRule {
    alg: GroupoidAlgebroid,
    xi: AlgebroidSection,
}

impl Rule for ExpRule {
    fn apply<S: Scalar>(&self, tx: &[S]) -> Vec<S> {
        self.alg.exp_s(&self.xi, tx[0], &tx[1..])
    }
}

pub const RK4_STEPS_PER_UNIT: f64 = 200.0;

fn rk4_steps(t: f64) -> usize {
    (RK4_STEPS_PER_UNIT * t.abs()).ceil() as usize
}

/// Polynomial of total degree ≤ `degree` fitted to samples by least squares.
pub fn fit_polynomial(points: &[Vec<f64>], values: &[Vec<f64>], dim: usize, degree: u32) -> Result<(SmoothMap, f64)> {
    let exps = exponents_up_to(dim, degree);
    let design = Mat::from_fn(points.len(), exps.len(), |i, j| {
        points[i].iter().zip(&exps[j]).map(|(&x, &e)| x.powi(e as i32)).product()
    });
    let cod = values.first().map_or(0, |v| v.len());
    let mut comps = Vec::with_capacity(cod);
    let mut misfit: f64 = 0.0;
    for c in 0..cod {
        let b: Vec<f64> = values.iter().map(|v| v[c]).collect();
        let coef = design.lstsq(&b);
        let pred = design.mul_vec(&coef);
        misfit = misfit.max(max_abs_diff(&pred, &b));
        comps.push(
            coef.iter()
                .zip(&exps)
                .filter(|(c, _)| c.abs() > 1e-13)
                .map(|(&c, e)| Monomial::new(c, e.clone()))
                .collect(),
        );
    }
    Ok((polynomial(dim, comps)?, misfit))
}

fn lattice(bbox: &BoxDomain, per_axis: usize) -> Vec<Vec<f64>> {
    let n = bbox.dim();
    let mut pts = vec![Vec::new()];
    for i in 0..n {
        let (lo, hi) = (bbox.lo[i].max(-1e3), bbox.hi[i].min(1e3));
        let mut next = Vec::new();
        for p in &pts {
            for k in 0..per_axis {
                let t = 0.15 + 0.7 * k as f64 / (per_axis - 1) as f64;
                let mut q = p.clone();
                q.push(lo + t * (hi - lo));
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// 𝔤 = ker Tσ along the units with anchor Tτ and the bracket of
/// right-invariant fields, fitted to structure functions on the chart.
pub fn algebroid_of_groupoid(g: &GroupoidChart) -> Result<GroupoidAlgebroid> {
    let n = g.n();
    let pts = lattice(&g.base.bbox, 3);
    let kernel = |x: &[f64]| -> Result<Mat<f64>> { Ok(g.sigma.jacobian(&g.unit.call(x))?.null_space(1e-10)) };
    let basis = kernel(&pts[0])?;
    let r = basis.cols;
    if r != g.total_dim - n {
        return Err(GnkError::RankDrop { expected: g.total_dim - n, found: r });
    }
    for p in &pts[1..] {
        let b = kernel(p)?;
        if b.cols != r {
            return Err(GnkError::RankDrop { expected: r, found: b.cols });
        }
        if b.max_abs_diff(&basis) > 1e-9 {
            return Err(GnkError::Config("kernel basis of Tσ varies across the chart".into()));
        }
    }
    let mut alg = GroupoidAlgebroid { groupoid: g.clone(), basis: basis.clone(), structure: StructureFunctions::abelian_bundle(r, n), fit_residual: 0.0 };
    let sections: Vec<AlgebroidSection> = (0..r)
        .map(|a| {
            let mut v = vec![0.0; r];
            v[a] = 1.0;
            AlgebroidSection::constant(n, v)
        })
        .collect();
    let mut anchors = Vec::with_capacity(pts.len());
    let mut brackets = Vec::with_capacity(pts.len());
    for p in &pts {
        let tt = g.tau.jacobian(&g.unit.call(p))?.mul(&basis);
        anchors.push(tt.transpose().data);
        let mut f = vec![0.0; r * r * r];
        for a in 0..r {
            for b in a + 1..r {
                let c = alg.commutator(&sections[a], &sections[b], p);
                for k in 0..r {
                    f[(a * r + b) * r + k] = c[k];
                    f[(b * r + a) * r + k] = -c[k];
                }
            }
        }
        brackets.push(f);
    }
    let (anchor, m1) = fit_polynomial(&pts, &anchors, n, 2)?;
    let (bracket_map, m2) = fit_polynomial(&pts, &brackets, n, 2)?;
    alg.structure = StructureFunctions::new(r, n, anchor, bracket_map)?;
    alg.fit_residual = m1.max(m2);
    Ok(alg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupoid::{frame, group_bundle_so2, pair, MetricField};
    use crate::manifold::ChartManifold;
    use crate::smooth::library::linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane() -> ChartManifold {
        ChartManifold::cube("R2", 2, -2.0, 2.0)
    }

    #[test]
    fn tangent_anchor_and_coordinate_brackets() {
        let s = StructureFunctions::tangent(2);
        let e0 = AlgebroidSection::basis(&s, 0);
        let e1 = AlgebroidSection::basis(&s, 1);
        assert_eq!(anchor_apply(&s, &e1, &[0.3, 0.4]), vec![0.0, 1.0]);
        assert_eq!(bracket(&s, &e0, &e1).at(&[0.3, 0.4]), vec![0.0, 0.0]);
        let so3 = StructureFunctions::so3_bundle(2);
        assert_eq!(anchor_apply(&so3, &AlgebroidSection::basis(&so3, 0), &[0.1, 0.1]), vec![0.0, 0.0]);
    }

    #[test]
    fn vector_field_bracket_of_rotation_and_translation() {
        let s = StructureFunctions::tangent(2);
        let rot = AlgebroidSection::new(linear(Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]])));
        let tx = AlgebroidSection::basis(&s, 0);
        // [−y∂x + x∂y, ∂x] = −∂y
        let b = bracket(&s, &rot, &tx).at(&[0.5, 0.7]);
        assert!(max_abs_diff(&b, &[0.0, -1.0]) < 1e-14);
    }

    #[test]
    fn jet_of_tangent_has_gl_brackets() {
        let n = 2;
        let js = jet_algebroid(&StructureFunctions::tangent(n));
        let f = js.bracket.call(&[0.1, 0.2]);
        let big = js.r;
        let t = |a: usize, mu: usize| n + a * n + mu;
        let br = |i: usize, j: usize| (0..big).map(|k| f[(i * big + j) * big + k]).collect::<Vec<_>>();
        // [T_0^1, T_1^0] = T_1^1 − T_0^0
        let v = br(t(0, 1), t(1, 0));
        let mut expect = vec![0.0; big];
        expect[t(1, 1)] = 1.0;
        expect[t(0, 0)] = -1.0;
        assert_eq!(v, expect);
        assert!(js.antisymmetry_residual(&[0.1, 0.2]) == 0.0);
        assert!(js.jacobi_residual(&[0.1, 0.2]) < 1e-12);
    }

    #[test]
    fn jet_of_so3_mixed_brackets() {
        let js = jet_algebroid(&StructureFunctions::so3_bundle(1));
        let f = js.bracket.call(&[0.0]);
        let big = js.r;
        // [T_0, T_1^0] = T_2^0
        let k: Vec<f64> = (0..big).map(|k| f[4 * big + k]).collect();
        assert_eq!(k, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn leibniz_and_prolongation_on_random_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = StructureFunctions::tangent(2);
        let xi = AlgebroidSection::random(&s, 2, 1.0, &mut rng);
        let eta = AlgebroidSection::random(&s, 2, 1.0, &mut rng);
        let f = random_polynomial(2, 1, 2, 1.0, &mut rng);
        let x = [0.3, -0.4];
        assert!(leibniz_residual(&s, &xi, &f, &eta, &x) < 1e-10);
        assert!(prolongation_bracket_residual(&s, &xi, &eta, &x) < 1e-10);
    }

    #[test]
    fn killing_predicate_accepts_rotation_only() {
        let s = StructureFunctions::tangent(2);
        let pred = killing_predicate(MetricField::euclidean(2));
        let pts = vec![vec![0.1, 0.2], vec![-0.5, 0.3]];
        let rot = AlgebroidSection::new(linear(Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]])));
        let stretch = AlgebroidSection::new(linear(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]])));
        assert!(sections_with_prolongation_in(&s, &pred, &rot, &pts, 1e-12));
        assert!(!sections_with_prolongation_in(&s, &pred, &stretch, &pts, 1e-12));
        assert!(sections_with_prolongation_in(&s, &pred, &AlgebroidSection::zero(&s), &pts, 0.0));
    }

    #[test]
    fn algebroids_of_builtins() {
        let p = algebroid_of_groupoid(&pair(plane())).unwrap();
        assert_eq!(p.rank(), 2);
        assert!(p.structure.anchor.call(&[0.2, 0.1]).iter().zip(&[1.0, 0.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-10));
        let gb = algebroid_of_groupoid(&group_bundle_so2(plane())).unwrap();
        assert_eq!(gb.rank(), 1);
        assert!(max_abs(&gb.structure.anchor.call(&[0.0, 0.0])) < 1e-12);
        let fr = algebroid_of_groupoid(&frame(ChartManifold::cube("R", 1, -2.0, 2.0))).unwrap();
        assert_eq!(fr.rank(), 2);
    }

    #[test]
    fn frame_algebroid_matches_jet_of_tangent() {
        let fr = algebroid_of_groupoid(&frame(plane())).unwrap();
        let js = jet_algebroid(&StructureFunctions::tangent(2));
        for x in [[0.1, 0.2], [-0.7, 0.4]] {
            assert!(max_abs_diff(&fr.structure.bracket.call(&x), &js.bracket.call(&x)) < 1e-6);
            assert!(max_abs_diff(&fr.structure.anchor.call(&x), &js.anchor.call(&x)) < 1e-6);
        }
    }

    #[test]
    fn exponential_of_translation() {
        let g = pair(ChartManifold::cube("R", 1, -5.0, 5.0));
        let alg = algebroid_of_groupoid(&g).unwrap();
        let xi = AlgebroidSection::constant(1, vec![0.7]);
        assert_eq!(alg.exp(&xi, 0.0, &[0.3]).unwrap(), vec![0.3, 0.3]);
        let e = alg.exp(&xi, 1.5, &[0.3]).unwrap();
        assert!(max_abs_diff(&e, &[0.3 + 1.05, 0.3]) < 1e-8);
        assert!(matches!(alg.exp(&xi, 100.0, &[0.3]), Err(GnkError::LeftChart { .. })));
    }
}
