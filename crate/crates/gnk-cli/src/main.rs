use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gnk_core::error::GnkError;
use gnk_core::groupoid::BUILTIN_GROUPOIDS;
use gnk_core::multiphase::BUILTIN_LAGRANGIANS;
use gnk_core::scenarios::{conservation_report, write_current_csv, ScenarioConfig, BUILTIN_GENERATORS, BUNDLED_SCENARIOS};
use gnk_core::tolerances::Tolerances;
use gnk_core::verify::{run_suite, PropertyReport, VerifyOptions};

#[derive(Parser)]
#[command(name = "gnk", version, about = "Groupoid Noether toolkit: invariant suites and conservation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    All,
    Groupoid,
    Jet,
    Algebroid,
    Actions,
    Multiphase,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Groupoid => "groupoid",
            Suite::Jet => "jet",
            Suite::Algebroid => "algebroid",
            Suite::Actions => "actions",
            Suite::Multiphase => "multiphase",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded property suites.
    Verify {
        suite: Suite,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Samples per property (defaults vary per property).
        #[arg(long)]
        samples: Option<usize>,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Tolerance override, `key=value`; repeatable.
        #[arg(long = "tol")]
        tol: Vec<String>,
    },
    /// Solve a scenario and report Noether current conservation.
    Noether {
        /// Scenario TOML file, or the name of a bundled scenario.
        #[arg(long)]
        config: String,
        /// Directory for per-grid current CSV files.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long = "tol")]
        tol: Vec<String>,
    },
    /// List built-in groupoids, Lagrangians, generators and bundled scenarios.
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Option<String>,
    seed: Option<u64>,
    tolerance_overrides: BTreeMap<String, f64>,
    output_dir: Option<String>,
    timestamp: String,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.into(),
            config: None,
            seed: None,
            tolerance_overrides: BTreeMap::new(),
            output_dir: None,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    passed: bool,
    report: &'a T,
}

enum Failure {
    Property,
    Config(String),
}

impl From<GnkError> for Failure {
    fn from(e: GnkError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn is_config_error(e: &GnkError) -> bool {
    matches!(e, GnkError::Config(_) | GnkError::Io(_) | GnkError::UnknownBuiltin(_) | GnkError::CflViolation { .. })
}

fn write_json<T: Serialize>(path: &Path, manifest: &RunManifest, passed: bool, report: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(&Envelope { manifest, passed, report }).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, s + "\n").map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn tolerances(items: &[String]) -> Result<(Tolerances, BTreeMap<String, f64>), Failure> {
    let over = Tolerances::parse_overrides(items)?;
    Ok((Tolerances::default().with_overrides(&over)?, over))
}

fn print_property(r: &PropertyReport) {
    let status = if r.passed { "ok  " } else { "FAIL" };
    println!("{status} [{}] {:<60} residual {:.3e} vs {:.1e} ({} samples)", r.suite, r.property, r.residual, r.tolerance, r.samples);
}

fn cmd_verify(suite: Suite, seed: u64, samples: Option<usize>, json: Option<PathBuf>, tol: &[String]) -> Result<(), Failure> {
    let (tol, over) = tolerances(tol)?;
    let mut manifest = RunManifest::new(&format!("verify {}", suite.name()));
    manifest.seed = Some(seed);
    manifest.tolerance_overrides = over;
    manifest.output_dir = json.as_ref().map(|p| p.parent().unwrap_or(Path::new(".")).display().to_string());
    let reports = run_suite(suite.name(), &VerifyOptions { seed, samples, tol })?;
    reports.iter().for_each(print_property);
    let failed: Vec<&PropertyReport> = reports.iter().filter(|r| !r.passed).collect();
    if let Some(p) = &json {
        write_json(p, &manifest, failed.is_empty(), &reports)?;
    }
    if failed.is_empty() {
        println!("all {} properties passed", reports.len());
        return Ok(());
    }
    eprintln!("{} of {} properties failed; worst offenders:", failed.len(), reports.len());
    for r in failed {
        eprintln!(
            "  [{}] {}: residual {:e} ({:?} {:e}), sample #{}{}",
            r.suite,
            r.property,
            r.residual,
            r.bound,
            r.tolerance,
            r.worst_sample,
            r.note.as_deref().map(|n| format!(", {n}")).unwrap_or_default()
        );
    }
    Err(Failure::Property)
}

fn load_config(spec: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(ScenarioConfig::load(path)?);
    }
    if BUNDLED_SCENARIOS.iter().any(|(n, _)| *n == spec || n.trim_end_matches(".toml") == spec) {
        return Ok(ScenarioConfig::bundled(spec)?);
    }
    Err(Failure::Config(format!("{spec}: no such file or bundled scenario")))
}

fn cmd_noether(config: &str, csv: Option<PathBuf>, json: Option<PathBuf>, tol: &[String]) -> Result<(), Failure> {
    let (tol, over) = tolerances(tol)?;
    let cfg = load_config(config)?;
    let mut manifest = RunManifest::new("noether");
    manifest.config = Some(config.into());
    manifest.seed = Some(cfg.seed);
    manifest.tolerance_overrides = over;
    manifest.output_dir = csv.as_ref().map(|p| p.display().to_string());
    if let Some(dir) = &csv {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    let mut sink = |gen: &str, res: usize, phi: &_, field: &_, divs: &[f64]| match &csv {
        Some(dir) => write_current_csv(&dir.join(format!("{}_{gen}_{res}.csv", cfg.name)), phi, field, divs),
        None => Ok(()),
    };
    let report = match conservation_report(&cfg, &tol, Some(&mut sink)) {
        Ok(r) => r,
        Err(e) if is_config_error(&e) => return Err(e.into()),
        Err(e) => {
            eprintln!("scenario failed: {e}");
            return Err(Failure::Property);
        }
    };
    println!("scenario {} ({})", report.scenario, report.sign_convention);
    for g in &report.generators {
        let status = if g.passed { "ok  " } else { "FAIL" };
        if let Some(why) = &g.rejected {
            println!("{status} {:<20} rejected (expected admissible: {}): {why}", g.name, g.expected_admissible);
            continue;
        }
        let ratios: Vec<String> = g.ratios.iter().map(|r| format!("{r:.2}")).collect();
        let last = g.grids.last();
        println!(
            "{status} {:<20} max|div| {} ratios [{}] drift {:.2e} claim1 {:.2e}",
            g.name,
            g.grids.iter().map(|r| format!("{:.2e}", r.max_div)).collect::<Vec<_>>().join(" "),
            ratios.join(", "),
            last.map_or(0.0, |r| r.charge.drift),
            g.grids.iter().map(|r| r.claim1).fold(0.0, f64::max),
        );
        for f in &g.failures {
            eprintln!("     {f}");
        }
    }
    if let Some(p) = &json {
        write_json(p, &manifest, report.passed, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Property)
    }
}

#[derive(Serialize)]
struct Listing {
    groupoids: Vec<&'static str>,
    lagrangians: Vec<&'static str>,
    generators: Vec<&'static str>,
    scenarios: Vec<&'static str>,
}

fn cmd_list(json: bool) -> Result<(), Failure> {
    let l = Listing {
        groupoids: BUILTIN_GROUPOIDS.to_vec(),
        lagrangians: BUILTIN_LAGRANGIANS.to_vec(),
        generators: BUILTIN_GENERATORS.to_vec(),
        scenarios: BUNDLED_SCENARIOS.iter().map(|(n, _)| *n).collect(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&l).map_err(|e| Failure::Config(e.to_string()))?);
    } else {
        for (title, items) in [("groupoids", &l.groupoids), ("lagrangians", &l.lagrangians), ("generators", &l.generators), ("scenarios", &l.scenarios)] {
            println!("{title}:");
            items.iter().for_each(|i| println!("  {i}"));
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("GNK_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::Config(format!("GNK_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Verify { suite, seed, samples, json, tol } => cmd_verify(suite, seed, samples, json, &tol),
        Command::Noether { config, csv, json, tol } => cmd_noether(&config, csv, json, &tol),
        Command::List { json } => cmd_list(json),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
