//! Batch front-end: configuration, optimizer orchestration and report files.
//!
//! A run is described by a [`RunConfig`], assembled from an optional TOML file
//! and command-line overrides. [`run`] executes the requested optimizers and
//! writes every report under the output directory.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    decompose_self_consumption, plot_csv, table_v_csv, table_vii_csv, table_viii_csv,
    OptimizerReport, ReportBundle, RunSummary, SelfConsumption, SCHEMA_VERSION,
};

use crate::dispatch::{simulate, write_ledger_csv, FlowLedger};
use crate::error::{Error, Result};
use crate::model::{ScenarioId, ScenarioSpec, DEFAULT_DAYS};
use crate::objective::ObjectiveWeights;
use crate::optim::{
    exhaustive_search, gradient_descent, simulated_annealing, ExhaustiveConfig, OptimizerKind,
    Problem, SaConfig, SearchResult, DEFAULT_ACTION_CAP,
};
use crate::profiles::{import_csv, ProfileSet, DEFAULT_PROFILE_SEED, STEPS_PER_DAY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAP: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Format { .. } => EXIT_CONFIG,
        Error::CapExceeded { .. } => EXIT_CAP,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Exhaustive,
    GradientDescent,
    SimulatedAnnealing,
    All,
}

impl OptimizerChoice {
    pub fn kinds(self) -> Vec<OptimizerKind> {
        match self {
            OptimizerChoice::Exhaustive => vec![OptimizerKind::Exhaustive],
            OptimizerChoice::GradientDescent => vec![OptimizerKind::GradientDescent],
            OptimizerChoice::SimulatedAnnealing => vec![OptimizerKind::SimulatedAnnealing],
            OptimizerChoice::All => vec![
                OptimizerKind::Exhaustive,
                OptimizerKind::GradientDescent,
                OptimizerKind::SimulatedAnnealing,
            ],
        }
    }
}

impl FromStr for OptimizerChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exhaustive" => Ok(OptimizerChoice::Exhaustive),
            "gradient_descent" => Ok(OptimizerChoice::GradientDescent),
            "simulated_annealing" => Ok(OptimizerChoice::SimulatedAnnealing),
            "all" => Ok(OptimizerChoice::All),
            other => Err(format!(
                "unknown optimizer `{other}` (expected exhaustive, gradient_descent, simulated_annealing or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    Generated { seed: u64 },
    Csv { path: PathBuf },
}

/// A fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    pub optimizer: OptimizerChoice,
    /// First seed; multi-seed runs use `seed, seed + 1, ...`.
    pub seed: u64,
    pub num_seeds: usize,
    /// `None` means 30 days for generated profiles and the whole file for CSV input.
    pub days: Option<usize>,
    pub profiles: ProfileSource,
    pub weights: ObjectiveWeights,
    pub sa: SaConfig,
    pub cap: usize,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioId::S1,
            optimizer: OptimizerChoice::All,
            seed: 0,
            num_seeds: 1,
            days: None,
            profiles: ProfileSource::Generated { seed: DEFAULT_PROFILE_SEED },
            weights: ObjectiveWeights::default(),
            sa: SaConfig::default(),
            cap: DEFAULT_ACTION_CAP,
            threads: None,
            out: PathBuf::from("out"),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_seeds == 0 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        if self.days == Some(0) {
            return Err(config_err("days", "must be at least 1"));
        }
        if self.cap == 0 {
            return Err(config_err("cap", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be at least 1"));
        }
        self.weights
            .validate()
            .map_err(|e| config_err("weights", strip_prefix(e)))?;
        self.sa
            .validate()
            .map_err(|e| config_err("simulated_annealing", strip_prefix(e)))?;
        Ok(())
    }

    /// Builds the scenario and its profiles.
    pub fn load_problem(&self) -> Result<Problem> {
        let (profiles, days) = match &self.profiles {
            ProfileSource::Generated { seed } => {
                let days = self.days.unwrap_or(DEFAULT_DAYS);
                (ProfileSet::generate(*seed, ScenarioSpec::preset(self.scenario).num_buildings, days)?, days)
            }
            ProfileSource::Csv { path } => {
                let all = import_csv(path, STEPS_PER_DAY)?;
                let days = self.days.unwrap_or(all.days());
                if days > all.days() {
                    return Err(config_err(
                        "days",
                        format!("{days} requested but {} covers only {}", path.display(), all.days()),
                    ));
                }
                (all.truncated(days)?, days)
            }
        };
        let spec = ScenarioSpec::preset(self.scenario)
            .with_buildings(profiles.num_buildings())
            .with_days(days);
        Problem::new(spec, profiles, self.weights)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<String>,
    optimizer: Option<String>,
    seed: Option<u64>,
    seeds: Option<usize>,
    days: Option<usize>,
    /// `"generated"` or a CSV path.
    profiles: Option<String>,
    profile_seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    weights: WeightsSection,
    #[serde(default)]
    exhaustive: ExhaustiveSection,
    #[serde(default)]
    simulated_annealing: SaSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    w1: Option<f64>,
    w2: Option<f64>,
    w3: Option<f64>,
    w4: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExhaustiveSection {
    cap: Option<usize>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaSection {
    sd: Option<f64>,
    iterations_per_action: Option<u64>,
    initial_temperature: Option<f64>,
    freeze_threshold: Option<f64>,
    cooling_factor: Option<f64>,
}

/// Command-line interface. Flags override values from `--config`.
#[derive(Debug, Default, Parser)]
#[command(name = "prosumer-opt", version, about = "Optimize energy-transfer action rankings for a PV prosumer neighbourhood")]
pub struct Args {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario label: 1, 2, 3a, 3b, 4a, 4b, 5a or 5b.
    #[arg(long)]
    pub scenario: Option<String>,
    /// exhaustive, gradient_descent, simulated_annealing or all.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds for the stochastic optimizers.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Profile CSV path, or `generated`.
    #[arg(long)]
    pub profiles: Option<String>,
    /// Seed of generated profiles.
    #[arg(long)]
    pub profile_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sa_sd: Option<f64>,
    #[arg(long)]
    pub sa_iters_per_action: Option<u64>,
    /// Largest action count exhaustive search accepts.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w3: Option<f64>,
    #[arg(long)]
    pub w4: Option<f64>,
}

/// Parses TOML config text into a file-level config, naming the offending key
/// on failure.
fn parse_config_file(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| {
        let field = e
            .span()
            .and_then(|span| {
                let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
                let line = text[line_start..].lines().next()?;
                let key = line.split('=').next()?.trim();
                (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
            })
            .unwrap_or_else(|| "config".to_string());
        config_err(&field, e.message().trim())
    })
}

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| config_err(field, e.to_string()))
}

/// Merges the config file named by `args.config` (if any) with the flags.
pub fn resolve_config(args: &Args) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err("config", format!("cannot read {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => ConfigFile::default(),
    };
    let mut c = RunConfig::default();

    if let Some(s) = args.scenario.as_ref().or(file.scenario.as_ref()) {
        c.scenario = parse_field("scenario", s)?;
    }
    if let Some(s) = args.optimizer.as_ref().or(file.optimizer.as_ref()) {
        c.optimizer = parse_field("optimizer", s)?;
    }
    c.seed = args.seed.or(file.seed).unwrap_or(c.seed);
    c.num_seeds = args.seeds.or(file.seeds).unwrap_or(c.num_seeds);
    c.days = args.days.or(file.days);
    let profile_seed = args.profile_seed.or(file.profile_seed).unwrap_or(DEFAULT_PROFILE_SEED);
    c.profiles = match args.profiles.as_ref().or(file.profiles.as_ref()) {
        None => ProfileSource::Generated { seed: profile_seed },
        Some(s) if s == "generated" => ProfileSource::Generated { seed: profile_seed },
        Some(path) => ProfileSource::Csv { path: PathBuf::from(path) },
    };
    if let Some(out) = args.out.as_ref().or(file.out.as_ref()) {
        c.out = out.clone();
    }

    let w = &file.weights;
    c.weights.w1 = args.w1.or(w.w1).unwrap_or(c.weights.w1);
    c.weights.w2 = args.w2.or(w.w2).unwrap_or(c.weights.w2);
    c.weights.w3 = args.w3.or(w.w3).unwrap_or(c.weights.w3);
    c.weights.w4 = args.w4.or(w.w4).unwrap_or(c.weights.w4);

    c.cap = args.cap.or(file.exhaustive.cap).unwrap_or(c.cap);
    c.threads = file.exhaustive.threads;

    let sa = &file.simulated_annealing;
    c.sa.sd = args.sa_sd.or(sa.sd).unwrap_or(c.sa.sd);
    c.sa.iterations_per_action = args
        .sa_iters_per_action
        .or(sa.iterations_per_action)
        .unwrap_or(c.sa.iterations_per_action);
    c.sa.initial_temperature = sa.initial_temperature.unwrap_or(c.sa.initial_temperature);
    c.sa.freeze_threshold = sa.freeze_threshold.unwrap_or(c.sa.freeze_threshold);
    c.sa.cooling_factor = sa.cooling_factor;

    c.validate()?;
    Ok(c)
}

/// Everything a run produces; the files under `--out` are rendered from it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: ReportBundle,
    /// Simulation of the best ranking found by any optimizer.
    pub ledger: FlowLedger,
    pub profiles: ProfileSet,
}

fn run_seeds(seeds: &[u64], f: impl Fn(u64) -> Result<SearchResult> + Sync) -> Result<Vec<(u64, SearchResult)>> {
    seeds.par_iter().map(|&s| f(s).map(|r| (s, r))).collect()
}

/// Runs the configured optimizers without touching the file system.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let problem = config.load_problem()?;
    let seeds = config.seeds();
    let mut results = Vec::new();

    for kind in config.optimizer.kinds() {
        let runs = match kind {
            OptimizerKind::Exhaustive => {
                let cfg = ExhaustiveConfig { cap: config.cap, threads: config.threads };
                vec![(None, exhaustive_search(&problem, &cfg)?)]
            }
            OptimizerKind::GradientDescent => run_seeds(&seeds, |s| Ok(gradient_descent(&problem, s)))?
                .into_iter()
                .map(|(s, r)| (Some(s), r))
                .collect(),
            OptimizerKind::SimulatedAnnealing => {
                let base = SaConfig { record_trace: true, ..config.sa };
                run_seeds(&seeds, |s| simulated_annealing(&problem, &base.with_seed(s)))?
                    .into_iter()
                    .map(|(s, r)| (Some(s), r))
                    .collect()
            }
        };
        results.push(report::optimizer_report(&problem, runs)?);
    }

    let best = results
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one optimizer runs");
    let ledger = simulate(&problem.spec, &best.best_ranking, &problem.profiles, None)?;
    let bundle = ReportBundle {
        schema_version: SCHEMA_VERSION,
        percent_base: "load".to_string(),
        scenario: problem.spec.scenario_id,
        selectable_actions: problem.spec.selectable_actions.iter().map(|a| a.id()).collect(),
        num_buildings: problem.spec.num_buildings,
        days: problem.spec.horizon_days,
        steps_per_day: problem.spec.steps_per_day,
        storage_capacity_kwh: problem.spec.storage_capacity_kwh,
        mean_daily_load_kwh: problem.profiles.loads.iter().map(|p| p.total()).sum::<f64>()
            / (problem.spec.num_buildings * problem.spec.horizon_days) as f64,
        profile_source: config.profiles.clone(),
        weights: config.weights,
        seeds: seeds.clone(),
        ledger_optimizer: best.optimizer,
        results,
    };
    Ok(RunOutput {
        bundle,
        ledger,
        profiles: problem.profiles,
    })
}

/// File names written under the output directory for `scenario`.
pub fn output_files(scenario: ScenarioId) -> Vec<String> {
    vec![
        "report.json".to_string(),
        "tableV.csv".to_string(),
        "tableVII.csv".to_string(),
        "tableVIII.csv".to_string(),
        format!("ledger_{scenario}.csv"),
        format!("plot_{scenario}.csv"),
    ]
}

pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let b = &output.bundle;
    fs::write(dir.join("report.json"), b.to_json()?)?;
    fs::write(dir.join("tableV.csv"), table_v_csv(b)?)?;
    fs::write(dir.join("tableVII.csv"), table_vii_csv(b)?)?;
    fs::write(dir.join("tableVIII.csv"), table_viii_csv(b)?)?;
    fs::write(dir.join(format!("plot_{}.csv", b.scenario)), plot_csv(b)?)?;
    let ledger = fs::File::create(dir.join(format!("ledger_{}.csv", b.scenario)))?;
    write_ledger_csv(&output.ledger, &output.profiles, std::io::BufWriter::new(ledger))?;
    Ok(())
}

/// Executes the run and writes all reports under `config.out`.
pub fn run(config: &RunConfig) -> Result<ReportBundle> {
    let output = execute(config)?;
    write_outputs(&output, &config.out)?;
    Ok(output.bundle)
}

/// Entry point shared by the binary: parses `argv`, runs, and returns the
/// process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = resolve_config(&args).and_then(|c| run(&c).map(|b| (c, b)));
    match result {
        Ok((config, bundle)) => {
            for r in &bundle.results {
                println!(
                    "{:<20} {:<28} weighted_sum={} evaluations={}",
                    r.optimizer.label(),
                    r.best_ranking.to_string(),
                    crate::fmt::sig9(r.weighted_sum),
                    r.evaluations
                );
            }
            println!("reports written to {}", config.out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Args {
        Args::try_parse_from(std::iter::once("prosumer-opt").chain(list.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "scenario = \"3a\"\noptimizer = \"gradient_descent\"\nseeds = 4\ndays = 3\n\n[weights]\nw2 = 50\n\n[simulated_annealing]\nsd = 0.5\n",
        )
        .unwrap();
        let c = resolve_config(&args(&["--config", path.to_str().unwrap(), "--days", "2", "--w1", "900"])).unwrap();
        assert_eq!(c.scenario, ScenarioId::S3a);
        assert_eq!(c.optimizer, OptimizerChoice::GradientDescent);
        assert_eq!((c.num_seeds, c.days), (4, Some(2)));
        assert_eq!((c.weights.w1, c.weights.w2), (900.0, 50.0));
        assert_eq!(c.sa.sd, 0.5);
        assert_eq!(c.seeds(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn config_errors_name_the_field() {
        for (text, field) in [
            ("days = \"seven\"\n", "days"),
            ("scenario = \"9\"\n", "scenario"),
            ("seeds = 0\n", "seeds"),
            ("[simulated_annealing]\nsd = -1.0\n", "simulated_annealing"),
            ("bogus = 1\n", "bogus"),
        ] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("bad.toml");
            fs::write(&path, text).unwrap();
            match resolve_config(&args(&["--config", path.to_str().unwrap()])) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&config_err("days", "x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::CapExceeded { actions: 12, cap: 10 }), EXIT_CAP);
        assert_eq!(exit_code(&Error::DegenerateInput("x".into())), EXIT_FAILURE);
    }

    #[test]
    fn optimizer_labels_parse() {
        for choice in ["exhaustive", "gradient_descent", "simulated_annealing", "all"] {
            assert!(choice.parse::<OptimizerChoice>().is_ok());
        }
        assert!("sa".parse::<OptimizerChoice>().is_err());
    }
}
