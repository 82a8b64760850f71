use gnk_core::error::GnkError;
use gnk_core::scenarios::{conservation_report, solve, ScenarioConfig, BUNDLED_SCENARIOS};
use gnk_core::tolerances::Tolerances;

#[test]
fn bundled_scenarios_parse() {
    assert_eq!(BUNDLED_SCENARIOS.len(), 3);
    for (name, _) in BUNDLED_SCENARIOS {
        ScenarioConfig::bundled(name).unwrap().validate().unwrap();
    }
}

#[test]
fn dilation_is_rejected_but_expected() {
    let cfg = ScenarioConfig::bundled("klein_gordon_dilation").unwrap();
    let rep = conservation_report(&cfg, &Tolerances::default(), None).unwrap();
    let dil = rep.generators.iter().find(|g| g.name == "dilation").unwrap();
    assert!(dil.rejected.is_some());
    assert!(!dil.expected_admissible);
    assert!(rep.passed, "{rep:#?}");
}

#[test]
fn unexpected_rejection_fails_the_report() {
    let mut cfg = ScenarioConfig::bundled("klein_gordon_dilation").unwrap();
    cfg.grid.resolutions = vec![16, 32];
    for g in &mut cfg.generators {
        g.expect_admissible = true;
    }
    let rep = conservation_report(&cfg, &Tolerances::default(), None).unwrap();
    assert!(!rep.passed);
}

#[test]
fn mechanics_conserves_energy() {
    let cfg = ScenarioConfig::bundled("mechanics").unwrap();
    let rep = conservation_report(&cfg, &Tolerances::default(), None).unwrap();
    assert!(rep.passed);
    assert!(rep.generators[0].grids[0].raw_drift < 1e-8);
}

#[test]
fn cfl_violation_is_reported() {
    let mut cfg = ScenarioConfig::bundled("klein_gordon").unwrap();
    cfg.grid.t_final = 10.0;
    assert!(matches!(solve(&cfg, 32), Err(GnkError::CflViolation { .. })));
}

#[test]
fn unknown_keys_are_config_errors() {
    let s = format!("{}\nextra_key = 3\n", BUNDLED_SCENARIOS[2].1);
    assert!(matches!(ScenarioConfig::from_toml(&s), Err(GnkError::Config(_))));
}
