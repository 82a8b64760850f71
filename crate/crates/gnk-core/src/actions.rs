//! Groupoid actions on bundles and the actions they induce on vertical
//! vectors, jets, cojets, tangent vectors and tensors.
//!
//! Everything is driven by one matrix: for a jet u = (g, U) and e ∈ E with
//! σ(g) = π(e), the tangent action is
//!
//! ```text
//! L_u = | a  0 |     a = Tτ·U,  B = D_gΦ·U + D_xΦ,  L = D_yΦ
//!       | B  L |
//! ```

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidSection, GroupoidAlgebroid};
use crate::error::{GnkError, Result};
use crate::groupoid::{Bisection, GroupoidChart, GroupoidKind};
use crate::jet::{ExtendedCojetPoint, Jet, LinJet, OrdinaryCojetPoint};
use crate::jet_groupoid::{jet_of_bisection, JetElement, FRAME_DET_MIN};
use crate::linalg::{max_abs_diff, Mat};
use crate::manifold::BundleChart;
use crate::smooth::{Rule, Scalar, SmoothMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// (y, x, …)·(x, f) = (y, f).
    Transport,
    /// (y, x, θ)·(x, f) = (y, R(θ) f) on fiber pairs.
    TransportSo2,
    /// (x, θ)·(x, f) = (x, R(θ) f).
    BundleRotation,
    /// (y, x, A)·(x, v) = (y, A v).
    FrameLinear,
}

struct StandardAction {
    kind: ActionKind,
    big: usize,
    n: usize,
    k: usize,
}

fn rotate_pairs<S: Scalar>(f: &[S], th: S) -> Vec<S> {
    let (c, s) = (th.cos(), th.sin());
    let mut out = f.to_vec();
    for p in 0..f.len() / 2 {
        let (a, b) = (f[2 * p], f[2 * p + 1]);
        out[2 * p] = c * a - s * b;
        out[2 * p + 1] = s * a + c * b;
    }
    out
}

impl Rule for StandardAction {
    fn apply<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let (n, k) = (self.n, self.k);
        let (g, e) = v.split_at(self.big);
        let f = &e[n..n + k];
        let (base, fib): (Vec<S>, Vec<S>) = match self.kind {
            ActionKind::Transport => (g[..n].to_vec(), f.to_vec()),
            ActionKind::TransportSo2 => (g[..n].to_vec(), rotate_pairs(f, g[2 * n])),
            ActionKind::BundleRotation => (g[..n].to_vec(), rotate_pairs(f, g[n])),
            ActionKind::FrameLinear => {
                let a = Mat::from_vec(n, n, g[2 * n..2 * n + n * n].to_vec());
                (g[..n].to_vec(), a.mul_vec(f))
            }
        };
        let mut out = base;
        out.extend(fib);
        out
    }
}

#[derive(Clone, Debug)]
pub struct ActionChart {
    pub g: GroupoidChart,
    pub e: BundleChart,
    /// (g, e) ↦ g·e, defined on compatible pairs.
    pub phi: SmoothMap,
}

impl ActionChart {
    pub fn new(g: GroupoidChart, e: BundleChart, phi: SmoothMap) -> Result<Self> {
        if g.n() != e.n() || phi.dom_dim() != g.total_dim + e.dim() || phi.cod_dim() != e.dim() {
            return Err(GnkError::DimensionMismatch { what: "action map".into(), expected: g.total_dim + e.dim(), got: phi.dom_dim() });
        }
        Ok(ActionChart { g, e, phi })
    }

    pub fn standard(g: GroupoidChart, e: BundleChart, kind: ActionKind) -> Result<Self> {
        let ok = match kind {
            ActionKind::Transport => matches!(g.kind, GroupoidKind::Pair | GroupoidKind::PairSo2 | GroupoidKind::Frame | GroupoidKind::OrthonormalFrame),
            ActionKind::TransportSo2 => g.kind == GroupoidKind::PairSo2 && e.k() % 2 == 0,
            ActionKind::BundleRotation => g.kind == GroupoidKind::GroupBundle && e.k() % 2 == 0,
            ActionKind::FrameLinear => matches!(g.kind, GroupoidKind::Frame | GroupoidKind::OrthonormalFrame) && e.k() == e.n(),
        };
        if !ok {
            return Err(GnkError::Config(format!("action {kind:?} is not defined for groupoid {} on a rank-{} bundle", g.name, e.k())));
        }
        let (big, n, k) = (g.total_dim, e.n(), e.k());
        let phi = SmoothMap::new(big + n + k, n + k, StandardAction { kind, big, n, k }, format!("{kind:?}"));
        Self::new(g, e, phi)
    }

    pub fn n(&self) -> usize {
        self.e.n()
    }

    pub fn k(&self) -> usize {
        self.e.k()
    }

    pub fn dim(&self) -> usize {
        self.e.dim()
    }

    fn compat(&self, g: &[f64], e: &[f64]) -> Result<()> {
        let r = max_abs_diff(&self.g.sigma.call(g), &e[..self.n()]);
        if r > 1e-9 {
            return Err(GnkError::Incompatible { residual: r });
        }
        Ok(())
    }

    pub fn act_s<S: Scalar>(&self, g: &[S], e: &[S]) -> Vec<S> {
        let mut v = g.to_vec();
        v.extend_from_slice(e);
        self.phi.call(&v)
    }

    /// g·e.
    pub fn act(&self, g: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        self.compat(g, e)?;
        Ok(self.act_s(g, e))
    }

    /// L_u over scalar inputs.
    pub fn tangent_matrix_s<S: Scalar>(&self, g: &[S], u: &Mat<S>, e: &[S]) -> Mat<S> {
        let (n, d, big) = (self.n(), self.dim(), self.g.total_dim);
        let mut x = g.to_vec();
        x.extend_from_slice(e);
        let mut l = Mat::zeros(d, d);
        let mut dir = vec![S::zero(); big + d];
        for mu in 0..n {
            for i in 0..big {
                dir[i] = u[(i, mu)];
            }
            dir[big + mu] = S::one();
            let (_, col) = self.phi.jvp(&x, &dir);
            l.set_col(mu, &col);
            dir[big + mu] = S::zero();
        }
        for i in 0..big {
            dir[i] = S::zero();
        }
        for a in n..d {
            dir[big + a] = S::one();
            let (_, col) = self.phi.jvp(&x, &dir);
            l.set_col(a, &col);
            dir[big + a] = S::zero();
        }
        l
    }

    pub fn tangent_matrix(&self, u: &JetElement, e: &[f64]) -> Result<Mat<f64>> {
        self.compat(&u.g, e)?;
        Ok(self.tangent_matrix_s(&u.g, &u.u, e))
    }

    /// T_eL_g on vertical vectors (k-vector in, k-vector out).
    pub fn act_vertical(&self, g: &[f64], e: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.compat(g, e)?;
        let (big, n) = (self.g.total_dim, self.n());
        let mut x = g.to_vec();
        x.extend_from_slice(e);
        let mut dir = vec![0.0; big + self.dim()];
        dir[big + n..].copy_from_slice(v);
        Ok(self.phi.jvp(&x, &dir).1[n..].to_vec())
    }

    /// u·v = L_u v.
    pub fn act_tangent(&self, u: &JetElement, e: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.tangent_matrix(u, e)?.mul_vec(v))
    }

    /// u·w = L_u w a⁻¹ with the identity top block restored.
    pub fn act_jet(&self, u: &JetElement, w: &Jet) -> Result<Jet> {
        let l = self.tangent_matrix(u, &w.e)?;
        let n = self.n();
        let a = l.block(0, 0, n, n);
        let ainv = a.inverse().ok_or(GnkError::DegenerateFrame { det: a.det() })?;
        let out = l.mul(&w.u).mul(&ainv);
        Ok(Jet::from_fiber_block(self.act_s(&u.g, &w.e), &out.block(n, 0, self.k(), n)))
    }

    /// L_g w a⁻¹.
    pub fn act_linjet(&self, a: &Mat<f64>, g: &[f64], w: &LinJet) -> Result<LinJet> {
        self.compat(g, &w.e)?;
        let ainv = a.inverse().ok_or(GnkError::DegenerateFrame { det: a.det() })?;
        let n = self.n();
        let mut lw = Mat::zeros(self.k(), n);
        for mu in 0..n {
            lw.set_col(mu, &self.act_vertical(g, &w.e, &w.w.col(mu))?);
        }
        Ok(LinJet { e: self.act_s(g, &w.e), w: lw.mul(&ainv) })
    }

    fn cojet_parts(&self, u: &JetElement, e: &[f64]) -> Result<(Mat<f64>, Mat<f64>, Mat<f64>)> {
        let l = self.tangent_matrix(u, e)?;
        let (n, k) = (self.n(), self.k());
        let a = l.block(0, 0, n, n);
        if a.det().abs() <= FRAME_DET_MIN {
            return Err(GnkError::DegenerateFrame { det: a.det() });
        }
        Ok((a, l.block(n, 0, k, n), l.block(n, n, k, k)))
    }

    /// ⟨u·z, u·w⟩ = det(a)⁻¹ ⟨z, w⟩.
    pub fn act_extended_cojet(&self, u: &JetElement, z: &ExtendedCojetPoint) -> Result<ExtendedCojetPoint> {
        self.cojet_parts(u, &z.base())?;
        let v = self.phi_lambda_s(&u.g, &u.u, &z.to_vec());
        Ok(ExtendedCojetPoint::from_vec(self.n(), self.k(), &v))
    }

    pub fn act_ordinary_cojet(&self, u: &JetElement, z: &OrdinaryCojetPoint) -> Result<OrdinaryCojetPoint> {
        self.cojet_parts(u, &z.base())?;
        let v = self.phi_ordinary_s(&u.g, &u.u, &z.to_vec());
        Ok(OrdinaryCojetPoint::from_vec(self.n(), self.k(), &v))
    }

    /// Action on J°E in the flat layout `(x, y, P, c)`.
    pub fn phi_lambda_s<S: Scalar>(&self, g: &[S], u: &Mat<S>, z: &[S]) -> Vec<S> {
        let (n, k) = (self.n(), self.k());
        let e = &z[..n + k];
        let l = self.tangent_matrix_s(g, u, e);
        let a = l.block(0, 0, n, n);
        let b = l.block(n, 0, k, n);
        let lv = l.block(n, n, k, k);
        let p = Mat::from_vec(k, n, z[n + k..n + k + k * n].to_vec());
        let c = z[n + k + k * n];
        let inv_det = S::one() / a.det();
        let linv = lv.inverse().unwrap_or_else(|| Mat::from_vec(k, k, vec![S::cst(f64::NAN); k * k]));
        let pp = linv.transpose().mul(&p).mul(&a.transpose()).scale(inv_det);
        let lb = linv.mul(&b);
        let mut corr = S::zero();
        for i in 0..k * n {
            corr += p.data[i] * lb.data[i];
        }
        let mut out = self.act_s(g, e);
        out.extend(pp.data);
        out.push((c - corr) * inv_det);
        out
    }

    /// Action on J⃗°E in the flat layout `(x, y, P)`.
    pub fn phi_ordinary_s<S: Scalar>(&self, g: &[S], u: &Mat<S>, z: &[S]) -> Vec<S> {
        let mut ext = z.to_vec();
        ext.push(S::zero());
        let mut out = self.phi_lambda_s(g, u, &ext);
        out.pop();
        out
    }

    /// Φ_Λ as a smooth map of (g, U row-major, z).
    pub fn phi_lambda_map(&self) -> SmoothMap {
        let (big, n, k) = (self.g.total_dim, self.n(), self.k());
        let dz = n + k + k * n + 1;
        SmoothMap::new(big + big * n + dz, dz, PhiLambda { a: self.clone(), ordinary: false }, "phi_lambda")
    }

    pub fn phi_ordinary_map(&self) -> SmoothMap {
        let (big, n, k) = (self.g.total_dim, self.n(), self.k());
        let dz = n + k + k * n;
        SmoothMap::new(big + big * n + dz, dz, PhiLambda { a: self.clone(), ordinary: true }, "phi_ordinary")
    }

    /// Transform a tensor with `r` contravariant then `s` covariant slots.
    pub fn act_tensor(&self, u: &JetElement, t: &TensorPoint) -> Result<TensorPoint> {
        let l = self.tangent_matrix(u, &t.e)?;
        let linv = l.inverse().ok_or(GnkError::DegenerateFrame { det: l.det() })?;
        let comps = transform_tensor(&t.comps, self.dim(), t.r, t.s, &l, &linv);
        Ok(TensorPoint { e: self.act_s(&u.g, &t.e), r: t.r, s: t.s, comps })
    }

    /// X_E(e) = TΦ at (1_x, e) along (X(x), 0).
    pub fn fundamental_vector_field(&self, alg: &GroupoidAlgebroid, xi: &AlgebroidSection, e: &[f64]) -> Vec<f64> {
        let n = self.n();
        let x = &e[..n];
        let mut p = self.g.unit.call(x);
        p.extend_from_slice(e);
        let mut dir = alg.vector_at(xi, x);
        dir.extend(std::iter::repeat(0.0).take(self.dim()));
        self.phi.jvp(&p, &dir).1
    }

    /// d/dt exp(tX)(x)·e at t = 0 by central differences.
    pub fn fundamental_vector_field_fd(&self, alg: &GroupoidAlgebroid, xi: &AlgebroidSection, e: &[f64], h: f64) -> Result<Vec<f64>> {
        let x = &e[..self.n()];
        let gp = alg.exp(xi, h, x)?;
        let gm = alg.exp(xi, -h, x)?;
        let (ep, em) = (self.act_s(&gp, e), self.act_s(&gm, e));
        Ok(ep.iter().zip(&em).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    }

    /// Π_E(β)(e) = β(π e)·e.
    pub fn apply_bisection(&self, b: &Bisection, e: &[f64]) -> Vec<f64> {
        self.act_s(&b.map.call(&e[..self.n()]), e)
    }

    pub fn bisection_pushforward(&self, b: &Bisection) -> SmoothMap {
        SmoothMap::new(self.dim(), self.dim(), BisectionPush { a: self.clone(), beta: b.map.clone() }, "bisection_pushforward")
    }

    /// Π_TE(jβ)(e, v) = L_{jβ(x)} v.
    pub fn apply_jet_bisection_tangent(&self, b: &Bisection, e: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let u = jet_of_bisection(&self.g, b, &e[..self.n()])?;
        self.act_tangent(&u, e, v)
    }

    /// |Π_TE(jβ) − T Π_E(β)| against central differences on coordinate curves.
    pub fn bisection_tangent_residual(&self, b: &Bisection, e: &[f64], h: f64) -> Result<f64> {
        let u = jet_of_bisection(&self.g, b, &e[..self.n()])?;
        let l = self.tangent_matrix(&u, e)?;
        let fd = crate::smooth::fd_jacobian(&self.bisection_pushforward(b), e, h);
        Ok(l.max_abs_diff(&fd))
    }
}

struct PhiLambda {
    a: ActionChart,
    ordinary: bool,
}

impl Rule for PhiLambda {
    fn apply<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let (big, n) = (self.a.g.total_dim, self.a.n());
        let g = &v[..big];
        let u = Mat::from_vec(big, n, v[big..big + big * n].to_vec());
        let z = &v[big + big * n..];
        if self.ordinary {
            self.a.phi_ordinary_s(g, &u, z)
        } else {
            self.a.phi_lambda_s(g, &u, z)
        }
    }
}

struct BisectionPush {
    a: ActionChart,
    beta: SmoothMap,
}

impl Rule for BisectionPush {
    fn apply<S: Scalar>(&self, e: &[S]) -> Vec<S> {
        self.a.act_s(&self.beta.call(&e[..self.a.n()]), e)
    }
}

/// Tensor at e in the chart basis; contravariant slots come first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPoint {
    pub e: Vec<f64>,
    pub r: usize,
    pub s: usize,
    pub comps: Vec<f64>,
}

impl TensorPoint {
    pub fn new(e: Vec<f64>, r: usize, s: usize, comps: Vec<f64>) -> Result<Self> {
        let d = e.len();
        let expect = d.pow((r + s) as u32);
        if comps.len() != expect {
            return Err(GnkError::DimensionMismatch { what: "tensor components".into(), expected: expect, got: comps.len() });
        }
        Ok(TensorPoint { e, r, s, comps })
    }

    /// Full contraction of a covariant tensor with vectors.
    pub fn evaluate(&self, vs: &[Vec<f64>]) -> f64 {
        assert_eq!(self.r, 0, "evaluate expects a covariant tensor");
        contract(&self.comps, self.e.len(), vs)
    }
}

/// t(v₁,…,v_s) for a fully covariant tensor stored row-major.
pub fn contract(comps: &[f64], d: usize, vs: &[Vec<f64>]) -> f64 {
    let s = vs.len();
    let mut total = 0.0;
    for (idx, &c) in comps.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut rem = idx;
        let mut w = c;
        for slot in (0..s).rev() {
            w *= vs[slot][rem % d];
            rem /= d;
        }
        total += w;
    }
    total
}

/// Apply `l` to every contravariant slot and `linv` (on the right) to every
/// covariant slot.
pub fn transform_tensor(comps: &[f64], d: usize, r: usize, s: usize, l: &Mat<f64>, linv: &Mat<f64>) -> Vec<f64> {
    let mut cur = comps.to_vec();
    let rank = r + s;
    for slot in 0..rank {
        let stride = d.pow((rank - 1 - slot) as u32);
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let i = (idx / stride) % d;
            let base = idx - i * stride;
            let mut acc = 0.0;
            for j in 0..d {
                let m = if slot < r { l[(i, j)] } else { linv[(j, i)] };
                acc += m * cur[base + j * stride];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

/// Draws a jet element together with a bundle point over its source.
pub type ActionSampler = Arc<dyn Fn(&mut dyn RngCore) -> (JetElement, Vec<f64>) + Send + Sync>;

pub fn default_sampler(a: &ActionChart) -> ActionSampler {
    let a = a.clone();
    Arc::new(move |rng: &mut dyn RngCore| {
        let mut rng = rng;
        let u = crate::jet_groupoid::sample_jet(&a.g, &mut rng);
        let e = a.e.sample_over(&a.g.sigma.call(&u.g), &mut rng);
        (u, e)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub property: String,
    pub n_samples: usize,
    pub max_residual: f64,
    pub argmax_sample: usize,
    pub note: Option<String>,
}

impl InvarianceReport {
    pub fn from_residuals(property: impl Into<String>, residuals: &[f64]) -> Self {
        let (mut arg, mut worst) = (0, 0.0f64);
        for (i, &r) in residuals.iter().enumerate() {
            if !(r <= worst) {
                worst = r;
                arg = i;
            }
        }
        InvarianceReport { property: property.into(), n_samples: residuals.len(), max_residual: worst, argmax_sample: arg, note: None }
    }
}

/// Pointwise invariance of a tensor field e ↦ comps under sampled jets:
/// |u·t_e − t_{g·e}|.
pub fn check_tensor_invariance_pointwise<R: RngCore>(
    a: &ActionChart,
    field: &SmoothMap,
    r: usize,
    s: usize,
    sampler: &ActionSampler,
    n_samples: usize,
    rng: &mut R,
) -> Result<InvarianceReport> {
    let mut res = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (u, e) = sampler(rng);
        let t = TensorPoint::new(e.clone(), r, s, field.call(&e))?;
        let moved = a.act_tensor(&u, &t)?;
        res.push(max_abs_diff(&moved.comps, &field.call(&moved.e)));
    }
    Ok(InvarianceReport::from_residuals("tensor invariance (pointwise)", &res))
}

/// Invariance under Π(jβ) for each supplied bisection at the given points.
pub fn check_tensor_invariance_bisections(a: &ActionChart, field: &SmoothMap, r: usize, s: usize, bis: &[Bisection], points: &[Vec<f64>]) -> Result<InvarianceReport> {
    let mut res = Vec::new();
    for b in bis {
        for e in points {
            let u = jet_of_bisection(&a.g, b, &e[..a.n()])?;
            let t = TensorPoint::new(e.clone(), r, s, field.call(e))?;
            let moved = a.act_tensor(&u, &t)?;
            res.push(max_abs_diff(&moved.comps, &field.call(&moved.e)));
        }
    }
    let mut rep = InvarianceReport::from_residuals("tensor invariance (bisections)", &res);
    rep.note = Some("sampled-family invariance".into());
    Ok(rep)
}
