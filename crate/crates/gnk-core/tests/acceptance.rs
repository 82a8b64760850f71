//! Acceptance criteria 1–10, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use gnk_core::multiphase::MultiphaseAction;
use gnk_core::noether::claim2_check;
use gnk_core::scenarios::{attach_momenta, conservation_report, solve, ConservationReport, ScenarioConfig};
use gnk_core::tolerances::Tolerances;
use gnk_core::verify::{run_suite, PropertyReport, VerifyOptions};

struct Outcome {
    passed: bool,
    detail: String,
}

fn property_criterion(reports: &[PropertyReport], c: u8, min_samples: &[(&str, usize)]) -> Outcome {
    let mine: Vec<&PropertyReport> = reports.iter().filter(|r| r.criterion == c).collect();
    let mut fails: Vec<String> = mine.iter().filter(|r| !r.passed).map(|r| format!("{} ({:e} vs {:e})", r.property, r.residual, r.tolerance)).collect();
    for (needle, n) in min_samples {
        for r in mine.iter().filter(|r| r.property.contains(needle)) {
            if r.samples < *n {
                fails.push(format!("{}: only {} samples", r.property, r.samples));
            }
        }
    }
    let worst = mine.iter().filter(|r| matches!(r.bound, gnk_core::verify::Bound::Below)).map(|r| r.residual).fold(0.0, f64::max);
    Outcome {
        passed: !mine.is_empty() && fails.is_empty(),
        detail: if fails.is_empty() { format!("{} properties, worst residual {worst:.2e}", mine.len()) } else { fails.join("; ") },
    }
}

fn ac9(kg: &ConservationReport, kg_secs: f64, mech: &ConservationReport, tol: &Tolerances) -> Outcome {
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    if kg_secs > 60.0 {
        fails.push(format!("runtime {kg_secs:.1} s"));
    }
    let wanted = ["time_translation", "space_translation", "boost", "internal_rotation"];
    for name in wanted {
        let Some(g) = kg.generators.iter().find(|g| g.name == name) else {
            fails.push(format!("{name} missing"));
            continue;
        };
        let res: Vec<usize> = g.grids.iter().map(|r| r.resolution).collect();
        if res != [64, 128, 256] {
            fails.push(format!("{name}: grids {res:?}"));
        }
        for (w, r) in g.grids.windows(2).zip(&g.ratios) {
            let roundoff = w[0].max_div < 1e-10 && w[1].max_div < 1e-10;
            if !roundoff && !(tol.ratio_lo..=tol.ratio_hi).contains(r) {
                fails.push(format!("{name}: ratio {r:.2}"));
            }
        }
        let drift = g.grids.last().map_or(f64::INFINITY, |r| r.charge.drift);
        if drift >= tol.charge_drift {
            fails.push(format!("{name}: drift {drift:e}"));
        }
        notes.push(format!("{name} ratios {:?} drift {drift:.1e}", g.ratios.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()));
    }
    let energy = mech.generators.first().and_then(|g| g.grids.first()).map_or(f64::INFINITY, |r| r.raw_drift);
    if energy >= tol.energy_drift {
        fails.push(format!("mechanics energy drift {energy:e}"));
    }
    notes.push(format!("mechanics energy drift {energy:.1e}; KG {kg_secs:.1} s"));
    Outcome { passed: fails.is_empty(), detail: if fails.is_empty() { notes.join("; ") } else { fails.join("; ") } }
}

/// Largest claim-2 residual over the window for a solution and for the same
/// solution plus a smooth non-solution perturbation.
fn claim2_solution_vs_perturbed(cfg: &ScenarioConfig, res: usize) -> gnk_core::error::Result<(f64, f64)> {
    let a = cfg.action_chart()?;
    let gr = a.g.clone();
    let ma = MultiphaseAction::new(a);
    let (l, h) = cfg.lagrangian()?;
    let gens = cfg.generators(&gr)?;
    let gen = &gens.iter().find(|(g, _)| g.name == "time_translation").expect("time translation").0;
    let phi = solve(cfg, res)?;
    let mut bent = phi.clone();
    bent.p = None;
    let sp = phi.spec.clone();
    for it in 0..sp.nt {
        for ix in 0..sp.nx as isize {
            let x = sp.coord(it, ix);
            let i = sp.index(it, ix).expect("node");
            bent.y[i * phi.k] += 0.2 * (2.0 * PI * x[1] / cfg.grid.length).sin() * (1.0 + x[0] * x[0]);
        }
    }
    let bent = attach_momenta(&l, bent)?;
    let worst = |s: &gnk_core::grid::GridSection| -> gnk_core::error::Result<f64> {
        let mut m: f64 = 0.0;
        for (it, ix) in s.window_interior_nodes().into_iter().step_by(7) {
            m = m.max(claim2_check(&ma, &h, gen, s, it, ix)?);
        }
        Ok(m)
    };
    Ok((worst(&phi)?, worst(&bent)?))
}

fn ac10(kg: &ConservationReport, cfg: &ScenarioConfig, tol: &Tolerances) -> Outcome {
    let mut fails = Vec::new();
    let mut claim1: f64 = 0.0;
    let mut dec_ratio: f64 = 0.0;
    for g in kg.generators.iter().filter(|g| g.rejected.is_none()) {
        for r in &g.grids {
            claim1 = claim1.max(r.claim1);
            let scale = r.max_div.max(r.claim2_max);
            if r.decomposition > tol.decomposition * scale + tol.claim1 {
                fails.push(format!("{} N={}: decomposition {:e} vs scale {:e}", g.name, r.resolution, r.decomposition, scale));
            }
            if scale > 1e-10 {
                dec_ratio = dec_ratio.max(r.decomposition / scale);
            }
        }
        for w in g.grids.windows(2) {
            if w[0].claim2_max > 1e-10 {
                let ratio = w[0].claim2_max / w[1].claim2_max;
                if !(tol.ratio_lo..=tol.ratio_hi).contains(&ratio) {
                    fails.push(format!("{}: claim-2 ratio {ratio:.2}", g.name));
                }
            }
        }
    }
    if claim1 >= tol.claim1 {
        fails.push(format!("claim 1 residual {claim1:e}"));
    }
    let mut coarse = cfg.clone();
    coarse.grid.resolutions = vec![64, 128];
    let perturbed = match (claim2_solution_vs_perturbed(&coarse, 64), claim2_solution_vs_perturbed(&coarse, 128)) {
        (Ok((s1, p1)), Ok((s2, p2))) => {
            if p1 < 1e-2 || p2 < 1e-2 || p1 / p2 > 1.5 {
                fails.push(format!("perturbed claim 2 not O(1): {p1:e}, {p2:e}"));
            }
            if s1 / s2 < tol.ratio_lo {
                fails.push(format!("solution claim 2 ratio {:.2}", s1 / s2));
            }
            format!("claim 2 on solution {s1:.1e}→{s2:.1e}, perturbed {p1:.2}→{p2:.2}")
        }
        (Err(e), _) | (_, Err(e)) => {
            fails.push(e.to_string());
            String::new()
        }
    };
    Outcome {
        passed: fails.is_empty(),
        detail: if fails.is_empty() { format!("claim 1 ≤ {claim1:.1e}; {perturbed}; decomposition/max|div| ≤ {dec_ratio:.2}") } else { fails.join("; ") },
    }
}

fn main() -> ExitCode {
    let tol = Tolerances::default();
    let opts = VerifyOptions { seed: 42, samples: None, tol: tol.clone() };
    let mut outcomes: Vec<(u8, Outcome)> = Vec::new();

    let t = Instant::now();
    let groupoid = run_suite("groupoid", &opts).expect("groupoid suite");
    let secs = t.elapsed().as_secs_f64();
    let mut o = property_criterion(&groupoid, 1, &[("", 200)]);
    if secs > 2.0 {
        o.passed = false;
        o.detail.push_str(&format!("; runtime {secs:.2} s"));
    }
    outcomes.push((1, o));

    let mut reports = Vec::new();
    for s in ["jet", "algebroid", "actions", "multiphase"] {
        reports.extend(run_suite(s, &opts).expect("suite"));
    }
    let mins: [&[(&str, usize)]; 7] = [
        &[("associativity", 200), ("chain rule", 100)],
        &[],
        &[],
        &[],
        &[("equivariant", 200)],
        &[("θ invariant", 200), ("ω invariant", 100)],
        &[],
    ];
    for (c, m) in (2u8..=8).zip(mins) {
        outcomes.push((c, property_criterion(&reports, c, m)));
    }

    let kg_cfg = ScenarioConfig::bundled("klein_gordon").expect("bundled klein_gordon");
    let mech_cfg = ScenarioConfig::bundled("mechanics").expect("bundled mechanics");
    let t = Instant::now();
    let kg = conservation_report(&kg_cfg, &tol, None);
    let kg_secs = t.elapsed().as_secs_f64();
    let mech = conservation_report(&mech_cfg, &tol, None);
    match (&kg, &mech) {
        (Ok(kg), Ok(mech)) => {
            outcomes.push((9, ac9(kg, kg_secs, mech, &tol)));
            outcomes.push((10, ac10(kg, &kg_cfg, &tol)));
        }
        (Err(e), _) | (_, Err(e)) => {
            for c in [9, 10] {
                outcomes.push((c, Outcome { passed: false, detail: e.to_string() }));
            }
        }
    }

    for (c, o) in &outcomes {
        println!("AC{c:<2} {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if outcomes.iter().all(|(_, o)| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
