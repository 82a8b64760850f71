//! Lie groupoids presented in a single chart, bisections, and the built-in
//! examples: pair groupoid, linear frame groupoid, SO(2) group bundle and the
//! orthonormal frame subgroupoid.
//!
//! Coordinate layouts (n = dim M):
//! - pair: `(y, x)` with σ = x, τ = y
//! - frame: `(y, x, A)` with A row-major n×n, A: T_xM → T_yM
//! - group bundle: `(x, θ)` with σ = τ = x
//! - pair with internal SO(2): `(y, x, θ)`

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};
use crate::linalg::{max_abs_diff, Mat};
use crate::manifold::ChartManifold;
use crate::smooth::{BoxDomain, Rule, Scalar, SmoothMap};

/// Residual function; an element belongs to the subgroupoid iff it is ≤ tol.
pub type Predicate = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Draws an element with the given source.
pub type ElementSampler = Arc<dyn Fn(&[f64], &mut dyn RngCore) -> Vec<f64> + Send + Sync>;

pub const BUILTIN_GROUPOIDS: &[&str] = &["pair", "frame", "group_bundle", "orthonormal_frame"];
pub const COMPAT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupoidKind {
    Pair,
    PairSo2,
    Frame,
    GroupBundle,
    OrthonormalFrame,
}

impl GroupoidKind {
    /// Documentation-level orbit structure.
    pub fn is_transitive(self) -> bool {
        !matches!(self, GroupoidKind::GroupBundle)
    }
}

/// Symmetric metric field x ↦ G(x), row-major n×n.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub n: usize,
    pub map: SmoothMap,
}

impl MetricField {
    pub fn constant(g: &Mat<f64>) -> Self {
        let n = g.rows;
        let a = Mat::zeros(n * n, n);
        MetricField { n, map: crate::smooth::library::affine(a, g.data.clone()) }
    }

    pub fn euclidean(n: usize) -> Self {
        Self::constant(&Mat::identity(n))
    }

    /// diag(+1, −1, …, −1).
    pub fn minkowski(n: usize) -> Self {
        Self::constant(&Mat::from_fn(n, n, |i, j| if i != j { 0.0 } else if i == 0 { 1.0 } else { -1.0 }))
    }

    pub fn at(&self, x: &[f64]) -> Mat<f64> {
        Mat::from_vec(self.n, self.n, self.map.call(x))
    }

    /// S with G(x) = Sᵀ η S, η = diag(±1) ordered positive first.
    pub fn orthonormalizer(&self, x: &[f64]) -> (Mat<f64>, Vec<f64>) {
        let (ev, v) = self.at(x).sym_eigen();
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.sort_by(|&a, &b| ev[b].signum().total_cmp(&ev[a].signum()).then(a.cmp(&b)));
        let eta: Vec<f64> = idx.iter().map(|&i| ev[i].signum()).collect();
        let s = Mat::from_fn(self.n, self.n, |r, c| ev[idx[r]].abs().sqrt() * v[(c, idx[r])]);
        (s, eta)
    }

    /// max |AᵀG(y)A − G(x)|.
    pub fn isometry_residual(&self, x: &[f64], y: &[f64], a: &Mat<f64>) -> f64 {
        let lhs = a.transpose().mul(&self.at(y)).mul(a);
        lhs.max_abs_diff(&self.at(x))
    }

    /// Random frame T_xM → T_yM in the identity component of the isometries.
    pub fn sample_isometry<R: Rng + ?Sized>(&self, x: &[f64], y: &[f64], spread: f64, rng: &mut R) -> Mat<f64> {
        let (sx, eta) = self.orthonormalizer(x);
        let (sy, _) = self.orthonormalizer(y);
        let n = self.n;
        let mut k = Mat::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.gen_range(-spread..=spread);
                k[(i, j)] = v;
                k[(j, i)] = -v;
            }
        }
        let eta_m = Mat::from_fn(n, n, |i, j| if i == j { eta[i] } else { 0.0 });
        let q = eta_m.mul(&k).expm();
        sy.inverse().expect("metric is nondegenerate").mul(&q).mul(&sx)
    }
}

#[derive(Clone)]
pub struct GroupoidChart {
    pub name: String,
    pub kind: GroupoidKind,
    pub base: ChartManifold,
    pub total_dim: usize,
    pub sigma: SmoothMap,
    pub tau: SmoothMap,
    pub mu: SmoothMap,
    pub unit: SmoothMap,
    pub inv: SmoothMap,
    /// Indices of σ as a coordinate projection (all built-ins).
    pub sigma_coords: Vec<usize>,
    pub tau_coords: Vec<usize>,
    pub membership: Option<Predicate>,
    pub metric: Option<MetricField>,
    sampler: ElementSampler,
}

impl fmt::Debug for GroupoidChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupoidChart({}, N={}, n={})", self.name, self.total_dim, self.n())
    }
}

impl GroupoidChart {
    pub fn n(&self) -> usize {
        self.base.dim()
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.total_dim {
            return Err(GnkError::DimensionMismatch { what: format!("{} element", self.name), expected: self.total_dim, got: g.len() });
        }
        Ok(())
    }

    pub fn source(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        Ok(self.sigma.call(g))
    }

    pub fn target(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        Ok(self.tau.call(g))
    }

    pub fn compat_residual(&self, h: &[f64], g: &[f64]) -> f64 {
        max_abs_diff(&self.sigma.call(h), &self.tau.call(g))
    }

    /// Replace the σ-coordinates of h by τ(g).
    pub fn snap<S: Scalar>(&self, h: &[S], g: &[S]) -> Vec<S> {
        let t = self.tau.call(g);
        let mut h = h.to_vec();
        for (i, &c) in self.sigma_coords.iter().enumerate() {
            h[c] = t[i];
        }
        h
    }

    /// μ(h, g) on scalar inputs without checks.
    pub fn mul_s<S: Scalar>(&self, h: &[S], g: &[S]) -> Vec<S> {
        let mut hg = self.snap(h, g);
        hg.extend_from_slice(g);
        self.mu.call(&hg)
    }

    pub fn multiply(&self, h: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(h)?;
        self.check_dim(g)?;
        let r = self.compat_residual(h, g);
        if r > COMPAT_TOL {
            return Err(GnkError::Incompatible { residual: r });
        }
        Ok(self.mul_s(h, g))
    }

    pub fn invert(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        Ok(self.inv.call(g))
    }

    pub fn unit_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(GnkError::DimensionMismatch { what: "base point".into(), expected: self.n(), got: x.len() });
        }
        Ok(self.unit.call(x))
    }

    pub fn is_isotropy(&self, g: &[f64]) -> bool {
        max_abs_diff(&self.sigma.call(g), &self.tau.call(g)) < COMPAT_TOL
    }

    pub fn membership_residual(&self, g: &[f64]) -> f64 {
        self.membership.as_ref().map_or(0.0, |p| p(g))
    }

    pub fn is_member(&self, g: &[f64]) -> bool {
        self.membership_residual(g) <= COMPAT_TOL
    }

    pub fn sample_from<R: RngCore>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        (self.sampler)(x, rng)
    }

    pub fn sample_element<R: RngCore>(&self, rng: &mut R) -> Vec<f64> {
        let x = self.base.bbox.sample_interior(rng, 0.1);
        self.sample_from(&x, rng)
    }

    /// h with σ(h) = τ(g).
    pub fn sample_after<R: RngCore>(&self, g: &[f64], rng: &mut R) -> Vec<f64> {
        self.sample_from(&self.tau.call(g), rng)
    }

    pub fn with_sampler(mut self, sampler: ElementSampler) -> Self {
        self.sampler = sampler;
        self
    }
}

/// Coordinate projection x ↦ (x[i] for i in idx).
pub struct CoordProjection {
    pub idx: Vec<usize>,
}

impl Rule for CoordProjection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.idx.iter().map(|&i| x[i]).collect()
    }
}

fn projection(total: usize, idx: Vec<usize>, label: &str) -> SmoothMap {
    let n = idx.len();
    SmoothMap::new(total, n, CoordProjection { idx }, label)
}

struct PairMul {
    n: usize,
    extra: usize,
}

impl Rule for PairMul {
    // h = (z, y', φ), g = (y, x, θ) ↦ (z, x, φ + θ)
    fn apply<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let (n, big) = (self.n, 2 * self.n + self.extra);
        let (h, g) = v.split_at(big);
        let mut out: Vec<S> = h[..n].to_vec();
        out.extend_from_slice(&g[n..2 * n]);
        for e in 0..self.extra {
            out.push(h[2 * n + e] + g[2 * n + e]);
        }
        out
    }
}

struct PairUnit {
    n: usize,
    extra: usize,
}

impl Rule for PairUnit {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = x.to_vec();
        out.extend_from_slice(x);
        out.extend(std::iter::repeat(S::zero()).take(self.extra));
        debug_assert_eq!(out.len(), 2 * self.n + self.extra);
        out
    }
}

struct PairInv {
    n: usize,
    extra: usize,
}

impl Rule for PairInv {
    fn apply<S: Scalar>(&self, g: &[S]) -> Vec<S> {
        let n = self.n;
        let mut out = g[n..2 * n].to_vec();
        out.extend_from_slice(&g[..n]);
        for e in 0..self.extra {
            out.push(-g[2 * n + e]);
        }
        out
    }
}

fn frame_matrix<S: Scalar>(g: &[S], n: usize) -> Mat<S> {
    Mat::from_vec(n, n, g[2 * n..2 * n + n * n].to_vec())
}

struct FrameMul {
    n: usize,
}

impl Rule for FrameMul {
    fn apply<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let n = self.n;
        let big = 2 * n + n * n;
        let (h, g) = v.split_at(big);
        let ba = frame_matrix(h, n).mul(&frame_matrix(g, n));
        let mut out = h[..n].to_vec();
        out.extend_from_slice(&g[n..2 * n]);
        out.extend(ba.data);
        out
    }
}

struct FrameUnit {
    n: usize,
}

impl Rule for FrameUnit {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = x.to_vec();
        out.extend_from_slice(x);
        out.extend(Mat::<S>::identity(self.n).data);
        out
    }
}

struct FrameInv {
    n: usize,
}

impl Rule for FrameInv {
    fn apply<S: Scalar>(&self, g: &[S]) -> Vec<S> {
        let n = self.n;
        let inv = frame_matrix(g, n).inverse().unwrap_or_else(|| Mat::from_vec(n, n, vec![S::cst(f64::NAN); n * n]));
        let mut out = g[n..2 * n].to_vec();
        out.extend_from_slice(&g[..n]);
        out.extend(inv.data);
        out
    }
}

struct BundleMul {
    n: usize,
}

impl Rule for BundleMul {
    fn apply<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let n = self.n;
        let (h, g) = v.split_at(n + 1);
        let mut out = g[..n].to_vec();
        out.push(h[n] + g[n]);
        out
    }
}

struct BundleUnit;

impl Rule for BundleUnit {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = x.to_vec();
        out.push(S::zero());
        out
    }
}

struct BundleInv {
    n: usize,
}

impl Rule for BundleInv {
    fn apply<S: Scalar>(&self, g: &[S]) -> Vec<S> {
        let mut out = g[..self.n].to_vec();
        out.push(-g[self.n]);
        out
    }
}

fn angle_sampler(base: &ChartManifold) -> impl Fn(&mut dyn RngCore) -> f64 {
    let _ = base;
    |rng: &mut dyn RngCore| rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI)
}

fn pair_like(base: ChartManifold, extra: usize) -> GroupoidChart {
    let n = base.dim();
    let big = 2 * n + extra;
    let bb = base.bbox.clone();
    let ang = angle_sampler(&base);
    let sampler: ElementSampler = Arc::new(move |x: &[f64], rng: &mut dyn RngCore| {
        let mut g = bb.sample_interior(rng, 0.1);
        g.extend_from_slice(x);
        for _ in 0..extra {
            g.push(ang(rng));
        }
        g
    });
    let name = if extra == 0 { "pair" } else { "pair_so2" };
    GroupoidChart {
        name: name.into(),
        kind: if extra == 0 { GroupoidKind::Pair } else { GroupoidKind::PairSo2 },
        total_dim: big,
        sigma: projection(big, (n..2 * n).collect(), "sigma"),
        tau: projection(big, (0..n).collect(), "tau"),
        mu: SmoothMap::new(2 * big, big, PairMul { n, extra }, "mu"),
        unit: SmoothMap::new(n, big, PairUnit { n, extra }, "unit"),
        inv: SmoothMap::new(big, big, PairInv { n, extra }, "inv"),
        sigma_coords: (n..2 * n).collect(),
        tau_coords: (0..n).collect(),
        membership: None,
        metric: None,
        sampler,
        base,
    }
}

/// M × M with (z, y)(y, x) = (z, x).
pub fn pair(base: ChartManifold) -> GroupoidChart {
    pair_like(base, 0)
}

/// (M × M) × SO(2): the gauge groupoid of the trivial SO(2) bundle, used for
/// doublet fields with an internal rotation symmetry.
pub fn pair_so2(base: ChartManifold) -> GroupoidChart {
    pair_like(base, 1)
}

fn random_frame<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<f64> {
    loop {
        let a = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.6..=0.6));
        if a.det().abs() > 0.2 {
            return a;
        }
    }
}

pub fn frame(base: ChartManifold) -> GroupoidChart {
    let n = base.dim();
    let big = 2 * n + n * n;
    let bb = base.bbox.clone();
    let sampler: ElementSampler = Arc::new(move |x: &[f64], rng: &mut dyn RngCore| {
        let mut g = bb.sample_interior(rng, 0.1);
        g.extend_from_slice(x);
        g.extend(random_frame(n, rng).data);
        g
    });
    GroupoidChart {
        name: "frame".into(),
        kind: GroupoidKind::Frame,
        total_dim: big,
        sigma: projection(big, (n..2 * n).collect(), "sigma"),
        tau: projection(big, (0..n).collect(), "tau"),
        mu: SmoothMap::new(2 * big, big, FrameMul { n }, "mu"),
        unit: SmoothMap::new(n, big, FrameUnit { n }, "unit"),
        inv: SmoothMap::new(big, big, FrameInv { n }, "inv"),
        sigma_coords: (n..2 * n).collect(),
        tau_coords: (0..n).collect(),
        membership: None,
        metric: None,
        sampler,
        base,
    }
}

/// Frame groupoid restricted by AᵀG(y)A = G(x).
pub fn orthonormal_frame(base: ChartManifold, metric: MetricField) -> GroupoidChart {
    let n = base.dim();
    let mut g = frame(base);
    let m1 = metric.clone();
    g.membership = Some(Arc::new(move |el: &[f64]| {
        let a = Mat::from_vec(n, n, el[2 * n..].to_vec());
        m1.isometry_residual(&el[n..2 * n], &el[..n], &a)
    }));
    let bb = g.base.bbox.clone();
    let m2 = metric.clone();
    g.sampler = Arc::new(move |x: &[f64], rng: &mut dyn RngCore| {
        let y = bb.sample_interior(rng, 0.1);
        let a = m2.sample_isometry(x, &y, 0.8, rng);
        let mut el = y;
        el.extend_from_slice(x);
        el.extend(a.data);
        el
    });
    g.name = "orthonormal_frame".into();
    g.kind = GroupoidKind::OrthonormalFrame;
    g.metric = Some(metric);
    g
}

/// M × SO(2) with angles adding fiberwise.
pub fn group_bundle_so2(base: ChartManifold) -> GroupoidChart {
    let n = base.dim();
    let big = n + 1;
    let ang = angle_sampler(&base);
    let sampler: ElementSampler = Arc::new(move |x: &[f64], rng: &mut dyn RngCore| {
        let mut g = x.to_vec();
        g.push(ang(rng));
        g
    });
    GroupoidChart {
        name: "group_bundle".into(),
        kind: GroupoidKind::GroupBundle,
        total_dim: big,
        sigma: projection(big, (0..n).collect(), "sigma"),
        tau: projection(big, (0..n).collect(), "tau"),
        mu: SmoothMap::new(2 * big, big, BundleMul { n }, "mu"),
        unit: SmoothMap::new(n, big, BundleUnit, "unit"),
        inv: SmoothMap::new(big, big, BundleInv { n }, "inv"),
        sigma_coords: (0..n).collect(),
        tau_coords: (0..n).collect(),
        membership: None,
        metric: None,
        sampler,
        base,
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuiltinParams {
    pub metric: Option<MetricField>,
    /// Internal symmetry factor for the pair groupoid ("so2").
    pub internal: Option<String>,
}

pub fn builtin(name: &str, base: ChartManifold, params: &BuiltinParams) -> Result<GroupoidChart> {
    match name {
        "pair" => match params.internal.as_deref() {
            None => Ok(pair(base)),
            Some("so2") => Ok(pair_so2(base)),
            Some(other) => Err(GnkError::UnknownBuiltin(format!("pair internal group {other}"))),
        },
        "frame" => Ok(frame(base)),
        "group_bundle" => Ok(group_bundle_so2(base)),
        "orthonormal_frame" => {
            let n = base.dim();
            let m = params.metric.clone().unwrap_or_else(|| MetricField::euclidean(n));
            if m.n != n {
                return Err(GnkError::Config("metric dimension does not match the base".into()));
            }
            Ok(orthonormal_frame(base, m))
        }
        other => Err(GnkError::UnknownBuiltin(other.into())),
    }
}

// ---------------------------------------------------------------------------
// Axiom residuals

pub fn associativity_residual(g: &GroupoidChart, k: &[f64], h: &[f64], x: &[f64]) -> Result<f64> {
    let left = g.multiply(k, &g.multiply(h, x)?)?;
    let right = g.multiply(&g.multiply(k, h)?, x)?;
    Ok(max_abs_diff(&left, &right))
}

/// Largest of |1_{τ(g)}g − g|, |g1_{σ(g)} − g|.
pub fn unit_residual(gr: &GroupoidChart, g: &[f64]) -> Result<f64> {
    let l = gr.multiply(&gr.unit_at(&gr.target(g)?)?, g)?;
    let r = gr.multiply(g, &gr.unit_at(&gr.source(g)?)?)?;
    Ok(max_abs_diff(&l, g).max(max_abs_diff(&r, g)))
}

pub fn inverse_residual(gr: &GroupoidChart, g: &[f64]) -> Result<f64> {
    let gi = gr.invert(g)?;
    let a = gr.multiply(g, &gi)?;
    let b = gr.multiply(&gi, g)?;
    Ok(max_abs_diff(&a, &gr.unit_at(&gr.target(g)?)?).max(max_abs_diff(&b, &gr.unit_at(&gr.source(g)?)?)))
}

/// |σ(hg) − σ(g)| and |τ(hg) − τ(h)|.
pub fn source_target_residual(gr: &GroupoidChart, h: &[f64], g: &[f64]) -> Result<f64> {
    let hg = gr.multiply(h, g)?;
    Ok(max_abs_diff(&gr.source(&hg)?, &gr.source(g)?).max(max_abs_diff(&gr.target(&hg)?, &gr.target(h)?)))
}

/// Membership closure under product and inversion at a compatible pair.
pub fn closure_residual(gr: &GroupoidChart, h: &[f64], g: &[f64]) -> Result<f64> {
    let hg = gr.multiply(h, g)?;
    Ok(gr.membership_residual(&hg).max(gr.membership_residual(&gr.invert(g)?)))
}

/// Smallest singular direction proxy: |det(J Jᵀ)| of σ and τ at g.
pub fn submersion_defect(gr: &GroupoidChart, g: &[f64]) -> Result<f64> {
    let js = gr.sigma.jacobian(g)?;
    let jt = gr.tau.jacobian(g)?;
    Ok(js.mul(&js.transpose()).det().abs().min(jt.mul(&jt.transpose()).det().abs()))
}

// ---------------------------------------------------------------------------
// Bisections

#[derive(Clone, Debug)]
pub struct Bisection {
    /// n → N with σ ∘ β = id.
    pub map: SmoothMap,
    pub tau_inverse: Option<SmoothMap>,
}

impl Bisection {
    pub fn new(map: SmoothMap) -> Self {
        Bisection { map, tau_inverse: None }
    }

    pub fn with_tau_inverse(mut self, inv: SmoothMap) -> Self {
        self.tau_inverse = Some(inv);
        self
    }

    pub fn at(&self, x: &[f64]) -> Vec<f64> {
        self.map.call(x)
    }

    /// τ ∘ β.
    pub fn tau_part(&self, g: &GroupoidChart) -> SmoothMap {
        SmoothMap::compose(&g.tau, &self.map).expect("bisection dimensions")
    }

    /// max |σ(β(x)) − x| and inverse sanity of T(τ∘β) at x.
    pub fn validate_at(&self, g: &GroupoidChart, x: &[f64]) -> Result<()> {
        let r = max_abs_diff(&g.sigma.call(&self.at(x)), x);
        if r > 1e-10 {
            return Err(GnkError::NotASection { residual: r });
        }
        let d = self.tau_part(g).jacobian(x)?.det();
        if d.abs() < 1e-9 {
            return Err(GnkError::DegenerateFrame { det: d });
        }
        Ok(())
    }
}

struct UnitSection {
    g: GroupoidChart,
}

impl Rule for UnitSection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.g.unit.call(x)
    }
}

pub fn unit_bisection(g: &GroupoidChart) -> Bisection {
    let n = g.n();
    Bisection::new(SmoothMap::new(n, g.total_dim, UnitSection { g: g.clone() }, "unit_bisection"))
        .with_tau_inverse(crate::smooth::library::identity(n))
}

/// Assemble a bisection of a pair-like groupoid from its τ-part f and the
/// optional extra (internal) coordinates.
pub struct PairBisection {
    pub n: usize,
    pub f: SmoothMap,
    pub extra: Option<SmoothMap>,
}

impl Rule for PairBisection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = self.f.call(x);
        out.extend_from_slice(x);
        if let Some(e) = &self.extra {
            out.extend(e.call(x));
        }
        out
    }
}

/// Bisection x ↦ (f(x), x, A(x)) of the frame groupoid.
pub struct FrameBisection {
    pub f: SmoothMap,
    pub a: SmoothMap,
}

impl Rule for FrameBisection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = self.f.call(x);
        out.extend_from_slice(x);
        out.extend(self.a.call(x));
        out
    }
}

/// Bisection x ↦ (x, θ(x)) of the group bundle.
pub struct BundleBisection {
    pub theta: SmoothMap,
}

impl Rule for BundleBisection {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = x.to_vec();
        out.extend(self.theta.call(x));
        out
    }
}

pub fn pair_bisection(g: &GroupoidChart, f: SmoothMap, extra: Option<SmoothMap>) -> Bisection {
    let n = g.n();
    Bisection::new(SmoothMap::new(n, g.total_dim, PairBisection { n, f, extra }, "pair_bisection"))
}

struct BisProduct {
    g: GroupoidChart,
    b2: SmoothMap,
    b1: SmoothMap,
}

impl Rule for BisProduct {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let g1 = self.b1.call(x);
        let g2 = self.b2.call(&self.g.tau.call(&g1));
        self.g.mul_s(&g2, &g1)
    }
}

/// (β₂β₁)(x) = β₂(τ(β₁(x)))·β₁(x).
pub fn bisection_product(g: &GroupoidChart, b2: &Bisection, b1: &Bisection) -> Bisection {
    let map = SmoothMap::new(g.n(), g.total_dim, BisProduct { g: g.clone(), b2: b2.map.clone(), b1: b1.map.clone() }, "bisection_product");
    let inv = match (&b2.tau_inverse, &b1.tau_inverse) {
        (Some(i2), Some(i1)) => Some(SmoothMap::compose(i1, i2).expect("inverse dims")),
        _ => None,
    };
    Bisection { map, tau_inverse: inv }
}

/// Newton solve of f(s) = x on scalar inputs, starting from x itself.
/// Returns NaNs when the iteration fails.
pub fn newton_inverse_s<S: Scalar>(f: &SmoothMap, x: &[S], trust: &BoxDomain) -> Vec<S> {
    let n = x.len();
    let mut s: Vec<S> = x.to_vec();
    let mut extra = 0;
    for _ in 0..50 {
        let (val, _) = (f.call(&s), ());
        let r: Vec<S> = val.iter().zip(x).map(|(&a, &b)| a - b).collect();
        let res = r.iter().fold(0.0f64, |m, v| m.max(v.value().abs()));
        let jac = f.jacobian_s(&s);
        let Some(inv) = jac.inverse() else { break };
        let step = inv.mul_vec(&r);
        for i in 0..n {
            s[i] -= step[i];
            let v = s[i].value();
            if v < trust.lo[i] || v > trust.hi[i] {
                s[i] = S::cst(v.clamp(trust.lo[i], trust.hi[i]));
            }
        }
        if res < 1e-13 {
            extra += 1;
            if extra >= 3 {
                return s;
            }
        }
    }
    let val = f.call(&s);
    let res = val.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a.value() - b.value()).abs()));
    if res < 1e-10 {
        s
    } else {
        vec![S::cst(f64::NAN); n]
    }
}

struct BisInverse {
    g: GroupoidChart,
    beta: SmoothMap,
    tau_beta: SmoothMap,
    tau_inv: Option<SmoothMap>,
    trust: BoxDomain,
}

impl Rule for BisInverse {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let s = match &self.tau_inv {
            Some(ti) => ti.call(x),
            None => newton_inverse_s(&self.tau_beta, x, &self.trust),
        };
        self.g.inv.call(&self.beta.call(&s))
    }
}

/// β⁻¹(x) = ι(β((τ∘β)⁻¹(x))).
pub fn bisection_inverse(g: &GroupoidChart, b: &Bisection) -> Result<Bisection> {
    let tau_beta = b.tau_part(g);
    let trust = g.base.bbox.clone();
    let rule = BisInverse { g: g.clone(), beta: b.map.clone(), tau_beta: tau_beta.clone(), tau_inv: b.tau_inverse.clone(), trust };
    let map = SmoothMap::new(g.n(), g.total_dim, rule, "bisection_inverse");
    // probe convergence on a deterministic lattice of interior points
    let n = g.n();
    let bb = &g.base.bbox;
    for probe in 0..5 {
        let t = 0.2 + 0.15 * probe as f64;
        let x: Vec<f64> = (0..n).map(|i| bb.lo[i].max(-1e3) + t * (bb.hi[i].min(1e3) - bb.lo[i].max(-1e3))).collect();
        if map.call(&x).iter().any(|v| !v.is_finite()) {
            return Err(GnkError::InversionFailed(format!("newton on τ∘β did not converge at {x:?}")));
        }
    }
    Ok(Bisection { map, tau_inverse: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::library::{affine, linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line() -> ChartManifold {
        ChartManifold::cube("R", 1, -10.0, 10.0)
    }

    #[test]
    fn pair_examples() {
        let g = pair(line());
        assert_eq!(g.multiply(&[3.0, 2.0], &[2.0, 0.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(g.invert(&[3.0, 2.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(g.unit_at(&[5.0]).unwrap(), vec![5.0, 5.0]);
        assert!(g.is_isotropy(&[1.0, 1.0]));
        assert!(!g.is_isotropy(&[2.0, 1.0]));
        assert!(matches!(g.multiply(&[3.0, 1.0], &[2.0, 0.0]), Err(GnkError::Incompatible { .. })));
    }

    #[test]
    fn frame_examples() {
        let g = frame(line());
        let ba = g.multiply(&[4.0, 2.0, 3.0], &[2.0, 1.0, 5.0]).unwrap();
        assert_eq!(ba, vec![4.0, 1.0, 15.0]);
        assert_eq!(g.invert(&[2.0, 1.0, 4.0]).unwrap(), vec![1.0, 2.0, 0.25]);
        let g2 = frame(ChartManifold::cube("R2", 2, -1.0, 1.0));
        assert_eq!(g2.total_dim, 8);
        assert_eq!(pair(ChartManifold::cube("R2", 2, -1.0, 1.0)).total_dim, 4);
    }

    #[test]
    fn group_bundle_angles_add() {
        let g = group_bundle_so2(line());
        assert_eq!(g.multiply(&[0.5, 0.3], &[0.5, 0.4]).unwrap(), vec![0.5, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert!(g.is_isotropy(&g.sample_element(&mut rng)));
        }
        assert!(!g.kind.is_transitive() && GroupoidKind::Pair.is_transitive());
    }

    #[test]
    fn minkowski_boost_is_member_shear_is_not() {
        let g = orthonormal_frame(ChartManifold::cube("R2", 2, -1.0, 1.0), MetricField::minkowski(2));
        let (c, s) = (0.4f64.cosh(), 0.4f64.sinh());
        let boost = [0.1, 0.2, 0.3, 0.4, c, s, s, c];
        assert!(g.is_member(&boost));
        let shear = [0.1, 0.2, 0.3, 0.4, 1.0, 0.5, 0.0, 1.0];
        assert!(!g.is_member(&shear));
    }

    #[test]
    fn sampled_isometries_are_members() {
        let m = MetricField::constant(&Mat::from_rows(&[vec![2.0, 0.3], vec![0.3, -1.0]]));
        let g = orthonormal_frame(ChartManifold::cube("R2", 2, -1.0, 1.0), m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let el = g.sample_element(&mut rng);
            assert!(g.membership_residual(&el) < 1e-10);
        }
    }

    #[test]
    fn bisection_product_composes_targets() {
        let g = pair(line());
        let f = affine(Mat::identity(1), vec![1.0]);
        let h = linear(Mat::from_rows(&[vec![2.0]]));
        let b1 = pair_bisection(&g, f, None);
        let b2 = pair_bisection(&g, h, None);
        let p = bisection_product(&g, &b2, &b1);
        let v = p.at(&[3.0]);
        assert_eq!(v, vec![8.0, 3.0]);
        let u = bisection_product(&g, &b2, &unit_bisection(&g));
        assert_eq!(u.at(&[1.5]), b2.at(&[1.5]));
    }

    #[test]
    fn bisection_inverse_by_newton() {
        let g = pair(line());
        let f = crate::smooth::library::polynomial(1, vec![vec![
            crate::smooth::library::Monomial::new(1.0, vec![1]),
            crate::smooth::library::Monomial::new(0.1, vec![3]),
        ]])
        .unwrap();
        let b = pair_bisection(&g, f, None);
        let bi = bisection_inverse(&g, &b).unwrap();
        let prod = bisection_product(&g, &b, &bi);
        for x in [-1.0, 0.3, 2.0] {
            let v = prod.at(&[x]);
            assert!(max_abs_diff(&v, &[x, x]) < 1e-10);
        }
    }
}
