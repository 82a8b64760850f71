//! Seeded property suites over the built-in charts. Every property reports
//! its worst residual against a threshold from the tolerance table.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionChart, ActionKind, ActionSampler};
use crate::algebroid::{algebroid_of_groupoid, jacobi_residual as section_jacobi, prolongation_bracket_residual, AlgebroidSection, StructureFunctions};
use crate::error::{GnkError, Result};
use crate::groupoid::{
    associativity_residual, closure_residual, frame, group_bundle_so2, inverse_residual, orthonormal_frame, pair, pair_bisection, source_target_residual, unit_residual,
    Bisection, FrameBisection, GroupoidChart, MetricField,
};
use crate::jet::{ExtendedCojetPoint, Jet};
use crate::jet_groupoid::{
    chain_rule_residual, frame_morphism_residual, jg_associativity_residual, jg_inverse_residual, jg_multiply, jg_unit_residual, sample_jet, sample_jet_after,
    sample_semiholonomic, second_jet_of_bisection, JetElement,
};
use crate::linalg::{max_abs_diff, Mat};
use crate::manifold::{BundleChart, ChartManifold};
use crate::multiphase::{
    check_invariance, iso_equivariance_residual, klein_gordon, lagrangian_invariance_residual, lambda_dim, omega_eval, omega_fd, InvarianceMode, MultiphaseAction,
};
use crate::smooth::library::random_polynomial;
use crate::smooth::{Rule, Scalar, SmoothMap};
use crate::tolerances::Tolerances;

pub const SUITES: &[&str] = &["groupoid", "jet", "algebroid", "actions", "multiphase"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Passes when the worst residual stays below the threshold.
    Below,
    /// Negative control: passes when the smallest residual exceeds it.
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub suite: String,
    pub property: String,
    /// Acceptance criterion the property belongs to.
    pub criterion: u8,
    pub samples: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
    pub worst_sample: usize,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides every property's default sample count.
    pub samples: Option<usize>,
    pub tol: Tolerances,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 42, samples: None, tol: Tolerances::default() }
    }
}

fn name_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent stream per (seed, property, sample index).
pub fn sample_rng(seed: u64, property: &str, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ name_hash(property));
    r.set_stream(index as u64);
    r
}

struct Ctx<'a> {
    suite: &'static str,
    opts: &'a VerifyOptions,
}

impl Ctx<'_> {
    fn run(&self, criterion: u8, property: &str, default_n: usize, tol: f64, bound: Bound, f: impl Fn(&mut ChaCha8Rng) -> Result<f64> + Sync) -> PropertyReport {
        let n = self.opts.samples.unwrap_or(default_n).max(1);
        let results: Vec<std::result::Result<f64, GnkError>> = (0..n).into_par_iter().map(|i| f(&mut sample_rng(self.opts.seed, property, i))).collect();
        let mut note = None;
        let vals: Vec<f64> = results
            .into_iter()
            .map(|r| match r {
                Ok(v) if v.is_finite() => v,
                Ok(_) => f64::NAN,
                Err(e) => {
                    note.get_or_insert_with(|| e.to_string());
                    f64::NAN
                }
            })
            .collect();
        let pick = |better: &dyn Fn(f64, f64) -> bool| {
            let mut best = (0, vals[0]);
            for (i, &v) in vals.iter().enumerate() {
                if v.is_nan() {
                    return (i, f64::NAN);
                }
                if better(v, best.1) {
                    best = (i, v);
                }
            }
            best
        };
        let (worst_sample, residual) = match bound {
            Bound::Below => pick(&|a, b| a > b),
            Bound::Above => pick(&|a, b| a < b),
        };
        let passed = match bound {
            Bound::Below => residual <= tol,
            Bound::Above => residual > tol,
        };
        PropertyReport { suite: self.suite.into(), property: property.into(), criterion, samples: n, residual, tolerance: tol, bound, passed, worst_sample, note }
    }
}

fn plane(r: f64) -> ChartManifold {
    ChartManifold::cube("R2", 2, -r, r)
}

fn box_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-r..=r)).collect()
}

/// x ↦ x + p(x) (or I + p(x) flattened when `offset` is an identity).
struct NearIdentity {
    offset: Vec<f64>,
    p: SmoothMap,
}

impl Rule for NearIdentity {
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let v = self.p.call(x);
        if self.offset.is_empty() {
            x.iter().zip(v).map(|(&a, b)| a + b).collect()
        } else {
            self.offset.iter().zip(v).map(|(&a, b)| b + S::cst(a)).collect()
        }
    }
}

fn near_identity(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> SmoothMap {
    SmoothMap::new(n, n, NearIdentity { offset: vec![], p: random_polynomial(n, n, 2, scale, rng) }, "near_identity")
}

/// Random polynomial bisection of the pair groupoid close to the unit.
pub fn random_pair_bisection(g: &GroupoidChart, scale: f64, rng: &mut ChaCha8Rng) -> Bisection {
    pair_bisection(g, near_identity(g.n(), scale, rng), None)
}

/// Random polynomial bisection x ↦ (f(x), x, A(x)) of the frame groupoid.
pub fn random_frame_bisection(g: &GroupoidChart, scale: f64, rng: &mut ChaCha8Rng) -> Bisection {
    let n = g.n();
    let f = near_identity(n, scale, rng);
    let a = SmoothMap::new(n, n * n, NearIdentity { offset: Mat::<f64>::identity(n).data, p: random_polynomial(n, n * n, 2, scale, rng) }, "near_identity_frame");
    Bisection::new(SmoothMap::new(n, g.total_dim, FrameBisection { f, a }, "frame_bisection"))
}

fn groupoid_suite(c: &Ctx) -> Vec<PropertyReport> {
    let t = c.opts.tol.groupoid_axioms;
    let charts: Vec<(&str, GroupoidChart)> = vec![
        ("pair", pair(plane(5.0))),
        ("frame", frame(plane(5.0))),
        ("group_bundle", group_bundle_so2(plane(5.0))),
        ("orthonormal_frame", orthonormal_frame(plane(5.0), MetricField::minkowski(2))),
    ];
    let mut out = Vec::new();
    for (name, g) in charts {
        let triple = |rng: &mut ChaCha8Rng| {
            let x = g.sample_element(rng);
            let h = g.sample_after(&x, rng);
            let k = g.sample_after(&h, rng);
            (k, h, x)
        };
        out.push(c.run(1, &format!("{name}: associativity"), 200, t, Bound::Below, |rng| {
            let (k, h, x) = triple(rng);
            associativity_residual(&g, &k, &h, &x)
        }));
        out.push(c.run(1, &format!("{name}: unit"), 200, t, Bound::Below, |rng| unit_residual(&g, &g.sample_element(rng))));
        out.push(c.run(1, &format!("{name}: inverse"), 200, t, Bound::Below, |rng| inverse_residual(&g, &g.sample_element(rng))));
        out.push(c.run(1, &format!("{name}: source/target of products"), 200, t, Bound::Below, |rng| {
            let (_, h, x) = triple(rng);
            source_target_residual(&g, &h, &x)
        }));
        if name == "orthonormal_frame" {
            out.push(c.run(1, &format!("{name}: closure"), 200, t, Bound::Below, |rng| {
                let (_, h, x) = triple(rng);
                closure_residual(&g, &h, &x)
            }));
        }
    }
    out
}

fn jet_suite(c: &Ctx) -> Vec<PropertyReport> {
    let t = c.opts.tol.jet_axioms;
    let mut out = Vec::new();
    for (name, g) in [("pair", pair(plane(5.0))), ("frame", frame(plane(5.0)))] {
        let triple = |rng: &mut ChaCha8Rng| {
            let u = sample_jet(&g, rng);
            let v = sample_jet_after(&g, &u, rng);
            let w = sample_jet_after(&g, &v, rng);
            (w, v, u)
        };
        out.push(c.run(2, &format!("J{name}: associativity"), 200, t, Bound::Below, |rng| {
            let (w, v, u) = triple(rng);
            jg_associativity_residual(&g, &w, &v, &u)
        }));
        out.push(c.run(2, &format!("J{name}: unit"), 200, t, Bound::Below, |rng| jg_unit_residual(&g, &sample_jet(&g, rng))));
        out.push(c.run(2, &format!("J{name}: inverse"), 200, t, Bound::Below, |rng| jg_inverse_residual(&g, &sample_jet(&g, rng))));
    }
    let g = pair(plane(5.0));
    out.push(c.run(2, "Jpair: chain rule j(β₂β₁) = jβ₂·jβ₁ on polynomial bisections", 100, c.opts.tol.chain_rule, Bound::Below, |rng| {
        let b1 = random_pair_bisection(&g, 0.2, rng);
        let b2 = random_pair_bisection(&g, 0.2, rng);
        chain_rule_residual(&g, &b2, &b1, &box_point(rng, 2, 0.5))
    }));
    let fr = frame(plane(5.0));
    out.push(c.run(2, "J(M×M) → frame groupoid is a morphism", 200, c.opts.tol.frame_morphism, Bound::Below, |rng| {
        let u = sample_jet(&g, rng);
        let v = sample_jet_after(&g, &u, rng);
        frame_morphism_residual(&g, &fr, &v, &u)
    }));
    out
}

fn algebroid_suite(c: &Ctx) -> Vec<PropertyReport> {
    let tol = &c.opts.tol;
    let mut out = Vec::new();
    for (name, s) in [("TM", StructureFunctions::tangent(2)), ("M×so(3)", StructureFunctions::so3_bundle(2))] {
        let js = crate::algebroid::jet_algebroid(&s);
        out.push(c.run(3, &format!("J({name}): antisymmetry"), 50, 0.0, Bound::Below, |rng| Ok(js.antisymmetry_residual(&box_point(rng, 2, 1.0)))));
        out.push(c.run(3, &format!("J({name}): Jacobi"), 50, tol.algebroid_jacobi, Bound::Below, |rng| Ok(js.jacobi_residual(&box_point(rng, 2, 1.0)))));
        out.push(c.run(3, &format!("J({name}): Jacobi on random sections"), 20, tol.algebroid_jacobi, Bound::Below, |rng| {
            let secs: Vec<AlgebroidSection> = (0..3).map(|_| AlgebroidSection::random(&js, 1, 0.5, rng)).collect();
            Ok(section_jacobi(&js, &secs[0], &secs[1], &secs[2], &box_point(rng, 2, 0.5)))
        }));
        out.push(c.run(3, &format!("{name}: [jξ, jη] = j[ξ, η]"), 50, tol.bracket_preservation, Bound::Below, |rng| {
            let xi = AlgebroidSection::random(&s, 2, 1.0, rng);
            let eta = AlgebroidSection::random(&s, 2, 1.0, rng);
            Ok(prolongation_bracket_residual(&s, &xi, &eta, &box_point(rng, 2, 0.5)))
        }));
    }
    let g = frame(plane(3.0));
    match algebroid_of_groupoid(&g) {
        Ok(alg) => {
            let alg = Arc::new(alg);
            let draw = |rng: &mut ChaCha8Rng| (AlgebroidSection::random(&alg.structure, 1, 0.3, rng), box_point(rng, 2, 0.5));
            out.push(c.run(4, "frame: exp(0·X) = unit", 50, 0.0, Bound::Below, |rng| {
                let (xi, x) = draw(rng);
                Ok(max_abs_diff(&alg.exp(&xi, 0.0, &x)?, &g.unit.call(&x)))
            }));
            out.push(c.run(4, "frame: d/dt exp(tX)|₀ = X(x)", 50, tol.exp_derivative, Bound::Below, |rng| {
                let (xi, x) = draw(rng);
                let h = 1e-4;
                let (p, m) = (alg.exp(&xi, h, &x)?, alg.exp(&xi, -h, &x)?);
                let fd: Vec<f64> = p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                Ok(max_abs_diff(&fd, &alg.vector_at(&xi, &x)))
            }));
            out.push(c.run(4, "frame: exp((s+t)X) = exp(sX)·exp(tX)", 50, tol.exp_one_parameter, Bound::Below, |rng| {
                let (xi, x) = draw(rng);
                let (s, t) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                let gt = alg.exp(&xi, t, &x)?;
                let gs = alg.exp(&xi, s, &g.tau.call(&gt))?;
                Ok(max_abs_diff(&alg.exp(&xi, s + t, &x)?, &g.multiply(&gs, &gt)?))
            }));
        }
        Err(e) => out.push(PropertyReport {
            suite: c.suite.into(),
            property: "frame: algebroid construction".into(),
            criterion: 4,
            samples: 0,
            residual: f64::NAN,
            tolerance: 0.0,
            bound: Bound::Below,
            passed: false,
            worst_sample: 0,
            note: Some(e.to_string()),
        }),
    }
    out
}

fn frame_action() -> ActionChart {
    let m = plane(3.0);
    ActionChart::standard(frame(m.clone()), BundleChart::trivial(m, 2, -5.0, 5.0), ActionKind::FrameLinear).expect("frame action")
}

fn sample_pair(a: &ActionChart, rng: &mut ChaCha8Rng) -> (JetElement, Vec<f64>) {
    let u = sample_jet(&a.g, rng);
    let e = a.e.sample_over(&a.g.sigma.call(&u.g), rng);
    (u, e)
}

fn actions_suite(c: &Ctx) -> Vec<PropertyReport> {
    let tol = &c.opts.tol;
    let a = frame_action();
    let d = a.dim();
    let mut out = Vec::new();
    out.push(c.run(5, "action law on E: (hg)·e = h·(g·e)", 200, tol.action_laws, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let v = sample_jet_after(&a.g, &u, rng);
        Ok(max_abs_diff(&a.act(&a.g.multiply(&v.g, &u.g)?, &e)?, &a.act(&v.g, &a.act(&u.g, &e)?)?))
    }));
    out.push(c.run(5, "tangent action law: (vu)·ξ = v·(u·ξ)", 200, tol.action_laws, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let v = sample_jet_after(&a.g, &u, rng);
        let t = box_point(rng, d, 1.0);
        let lhs = a.act_tangent(&jg_multiply(&a.g, &v, &u)?, &e, &t)?;
        let rhs = a.act_tangent(&v, &a.act(&u.g, &e)?, &a.act_tangent(&u, &e, &t)?)?;
        Ok(max_abs_diff(&lhs, &rhs))
    }));
    out.push(c.run(5, "tangent action is linear", 200, tol.action_linearity, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let (t1, t2) = (box_point(rng, d, 1.0), box_point(rng, d, 1.0));
        let (p, q) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let comb: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| p * x + q * y).collect();
        let lhs = a.act_tangent(&u, &e, &comb)?;
        let (a1, a2) = (a.act_tangent(&u, &e, &t1)?, a.act_tangent(&u, &e, &t2)?);
        let rhs: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| p * x + q * y).collect();
        Ok(max_abs_diff(&lhs, &rhs))
    }));
    out.push(c.run(5, "tangent action covers the frame action on TM", 200, tol.frame_covering, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let t = box_point(rng, d, 1.0);
        let moved = a.act_tangent(&u, &e, &t)?;
        Ok(max_abs_diff(&moved[..a.n()], &u.frame(&a.g).mul_vec(&t[..a.n()])))
    }));
    out.push(c.run(5, "Π(jβ) = TΠ(β) against finite differences", 100, tol.tangent_fd, Bound::Below, |rng| {
        let b = random_frame_bisection(&a.g, 0.2, rng);
        let mut e = box_point(rng, 2, 0.5);
        e.extend(box_point(rng, 2, 1.0));
        a.bisection_tangent_residual(&b, &e, 1e-5)
    }));
    out
}

fn minkowski_sampler(a: &ActionChart) -> ActionSampler {
    let a = a.clone();
    Arc::new(move |rng: &mut dyn RngCore| {
        let mut rng = rng;
        let g = a.g.sample_element(&mut rng);
        let n = a.n();
        let big = a.g.total_dim;
        let mut u = Mat::zeros(big, n);
        for i in 0..n {
            u[(n + i, i)] = 1.0;
            for j in 0..n {
                u[(i, j)] = g[2 * n + i * n + j];
                for mu in 0..n {
                    u[(2 * n + i * n + j, mu)] = rng.gen_range(-1.0..=1.0);
                }
            }
        }
        let e = a.e.sample_over(&g[n..2 * n], &mut rng);
        (JetElement { g, u }, e)
    })
}

fn multiphase_suite(c: &Ctx) -> Vec<PropertyReport> {
    let tol = &c.opts.tol;
    let a = frame_action();
    let ma = MultiphaseAction::new(a.clone());
    let (n, k) = (2, 2);
    let dl = lambda_dim(n, k);
    let mut out = Vec::new();
    let cojet_at = |rng: &mut ChaCha8Rng, e: &[f64]| {
        let mut z = e.to_vec();
        z.extend(box_point(rng, k * n + 1, 1.0));
        z
    };
    out.push(c.run(6, "J°E ≅ Λⁿ₁T*E is JG-equivariant", 200, tol.cojet_iso, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let z = ExtendedCojetPoint::from_vec(n, k, &cojet_at(rng, &e));
        iso_equivariance_residual(&a, &u, &z)
    }));
    out.push(c.run(7, "ω = −dθ against finite differences", 100, tol.oracle, Bound::Below, |rng| {
        let z = box_point(rng, dl, 1.0);
        let ws: Vec<Vec<f64>> = (0..=n).map(|_| box_point(rng, dl, 1.0)).collect();
        Ok((omega_eval(n, k, &ws) - omega_fd(n, k, &z, &ws, 1e-4)).abs())
    }));
    out.push(c.run(7, "θ invariant under semiholonomic J(JG)", 200, tol.theta_invariance, Bound::Below, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let s = sample_semiholonomic(&a.g, u, false, 0.5, rng);
        let z = cojet_at(rng, &e);
        let ws: Vec<Vec<f64>> = (0..n).map(|_| box_point(rng, dl, 1.0)).collect();
        Ok(ma.theta_invariance_residual(&s, &z, &ws))
    }));
    out.push(c.run(7, "ω invariant under holonomic j²β", 100, tol.omega_invariance, Bound::Below, |rng| {
        let b = random_frame_bisection(&a.g, 0.2, rng);
        let x = box_point(rng, n, 0.5);
        let s = second_jet_of_bisection(&a.g, &b, &x)?;
        let mut e = x.clone();
        e.extend(box_point(rng, k, 1.0));
        let z = cojet_at(rng, &e);
        let ws: Vec<Vec<f64>> = (0..=n).map(|_| box_point(rng, dl, 1.0)).collect();
        Ok(ma.omega_invariance_residual(&s, &z, &ws))
    }));
    out.push(c.run(7, "non-holonomous semiholonomic element breaks ω invariance", 1, tol.holonomy_violation_min, Bound::Above, |rng| {
        let (u, e) = sample_pair(&a, rng);
        let z = cojet_at(rng, &e);
        let ws: Vec<Vec<f64>> = (0..=n).map(|_| box_point(rng, dl, 1.0)).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let s = sample_semiholonomic(&a.g, u.clone(), false, 1.0, rng);
            worst = worst.max(ma.omega_invariance_residual(&s, &z, &ws));
        }
        Ok(worst)
    }));

    let m = plane(3.0);
    let e1 = BundleChart::trivial(m.clone(), 1, -5.0, 5.0);
    let (l, h) = klein_gordon(2, 1, 0.5, &[1.0, -1.0]).expect("klein-gordon");
    let so = ActionChart::standard(orthonormal_frame(m.clone(), MetricField::minkowski(2)), e1.clone(), ActionKind::Transport).expect("lorentz action");
    let sampler = minkowski_sampler(&so);
    for (mode, label) in [
        (InvarianceMode::Lagrangian, "KG Lagrangian invariant under J(O(TM, η))"),
        (InvarianceMode::Legendre, "KG Legendre map equivariant under J(O(TM, η))"),
        (InvarianceMode::Hamiltonian, "KG Hamiltonian section equivariant under J(O(TM, η))"),
    ] {
        let inner = c.opts.samples.unwrap_or(200);
        let mut r = Ctx { suite: c.suite, opts: &VerifyOptions { samples: Some(1), ..c.opts.clone() } }.run(8, label, 1, tol.lagrangian_invariance, Bound::Below, |rng| {
            Ok(check_invariance(&so, &l, &h, mode, &sampler, rng.next_u64(), inner)?.max_residual)
        });
        r.samples = inner;
        out.push(r);
    }
    let gl = ActionChart::standard(pair(m), e1, ActionKind::Transport).expect("pair action");
    out.push(c.run(8, "KG Lagrangian fails under dilation jets", 50, tol.negative_control_min, Bound::Above, |rng| {
        let x = box_point(rng, 2, 0.5);
        let lam = rng.gen_range(1.3..2.0);
        let g = [lam * x[0], x[1], x[0], x[1]].to_vec();
        let u = JetElement { g, u: Mat::from_rows(&[vec![lam, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]) };
        let mut e = x.clone();
        e.push(rng.gen_range(-1.0..1.0));
        let w = Jet::from_fiber_block(e, &Mat::from_vec(1, 2, box_point(rng, 2, 1.0)));
        lagrangian_invariance_residual(&gl, &l, &u, &w)
    }));
    out
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    let c = |suite: &'static str| Ctx { suite, opts };
    Ok(match name {
        "groupoid" => groupoid_suite(&c("groupoid")),
        "jet" => jet_suite(&c("jet")),
        "algebroid" => algebroid_suite(&c("algebroid")),
        "actions" => actions_suite(&c("actions")),
        "multiphase" => multiphase_suite(&c("multiphase")),
        "all" => {
            let mut v = Vec::new();
            for s in SUITES {
                v.extend(run_suite(s, opts)?);
            }
            v
        }
        other => return Err(GnkError::Config(format!("unknown suite '{other}'"))),
    })
}
