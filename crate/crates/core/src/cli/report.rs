//! Report types and their CSV renderings.

use serde::{Deserialize, Serialize};

use super::ProfileSource;
use crate::dispatch::{simulate, FlowLedger};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::model::{ActionRanking, ScenarioId};
use crate::objective::{infinite_as_null, ObjectiveBreakdown, ObjectiveWeights};
use crate::optim::{OptimizerKind, Problem, SearchResult, TracePoint};
use crate::profiles::ProfileSet;

pub const SCHEMA_VERSION: u32 = 1;

/// Shares of the total load served by each local PV channel, in percent.
///
/// Stored energy counts only for its PV-charged part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfConsumption {
    pub direct_own_pv_pct: f64,
    pub direct_neighbour_pv_pct: f64,
    pub own_stored_pv_pct: f64,
    pub neighbour_stored_pv_pct: f64,
    pub total_local_pct: f64,
}

impl SelfConsumption {
    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("direct_own_pv", self.direct_own_pv_pct),
            ("direct_neighbour_pv", self.direct_neighbour_pv_pct),
            ("own_stored_pv", self.own_stored_pv_pct),
            ("neighbour_stored_pv", self.neighbour_stored_pv_pct),
        ]
    }
}

pub fn decompose_self_consumption(ledger: &FlowLedger, profiles: &ProfileSet) -> Result<SelfConsumption> {
    let total_load: f64 = profiles.loads.iter().map(|p| p.total()).sum();
    if total_load <= 0.0 {
        return Err(Error::DegenerateInput(
            "total load is zero; self-consumption shares are undefined".into(),
        ));
    }
    let (mut own, mut neighbour, mut own_stored, mut neighbour_stored) = (0.0, 0.0, 0.0, 0.0);
    for f in &ledger.flows {
        own += f.pv_to_own_loads.iter().sum::<f64>();
        neighbour += f.pv_to_neighbour_loads.total();
        own_stored += f.stored_pv_to_own_loads.iter().sum::<f64>();
        neighbour_stored += f.stored_pv_to_neighbour_loads.total();
    }
    let pct = |kwh: f64| 100.0 * kwh / total_load;
    let parts = [pct(own), pct(neighbour), pct(own_stored), pct(neighbour_stored)];
    Ok(SelfConsumption {
        direct_own_pv_pct: parts[0],
        direct_neighbour_pv_pct: parts[1],
        own_stored_pv_pct: parts[2],
        neighbour_stored_pv_pct: parts[3],
        total_local_pct: parts.iter().sum(),
    })
}

/// One seed of a stochastic optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub ranking: ActionRanking,
    #[serde(with = "infinite_as_null")]
    pub value: f64,
    pub weighted_sum: f64,
    pub evaluations: u64,
    pub simulations: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rounds: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub optimizer: OptimizerKind,
    /// Best ranking over all seeds; ties go to the lowest seed.
    pub best_ranking: ActionRanking,
    #[serde(with = "infinite_as_null")]
    pub value: f64,
    pub weighted_sum: f64,
    /// Evaluations of the run that produced `best_ranking`.
    pub evaluations: u64,
    pub simulations: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rounds: Option<u64>,
    pub breakdown: ObjectiveBreakdown,
    pub self_consumption: SelfConsumption,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimal_set: Option<Vec<ActionRanking>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<TracePoint>>,
}

impl OptimizerReport {
    /// Seeds whose result equals the best value exactly.
    pub fn runs_at_best(&self) -> usize {
        self.runs.iter().filter(|r| r.value == self.value).count()
    }
}

pub(super) fn optimizer_report(problem: &Problem, runs: Vec<(Option<u64>, SearchResult)>) -> Result<OptimizerReport> {
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.best_breakdown.value.total_cmp(&b.1.best_breakdown.value).then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("at least one run");
    let summaries = runs
        .iter()
        .filter_map(|(seed, r)| {
            seed.map(|seed| RunSummary {
                seed,
                ranking: r.best_ranking.clone(),
                value: r.best_breakdown.value,
                weighted_sum: r.best_breakdown.weighted_sum,
                evaluations: r.evaluations,
                simulations: r.simulations,
                rounds: r.rounds,
            })
        })
        .collect();
    let (seed, r) = runs.into_iter().nth(best).expect("index in range");
    let ledger = simulate(&problem.spec, &r.best_ranking, &problem.profiles, None)?;
    Ok(OptimizerReport {
        optimizer: r.optimizer,
        value: r.best_breakdown.value,
        weighted_sum: r.best_breakdown.weighted_sum,
        evaluations: r.evaluations,
        simulations: r.simulations,
        best_seed: seed,
        rounds: r.rounds,
        breakdown: r.best_breakdown,
        self_consumption: decompose_self_consumption(&ledger, &problem.profiles)?,
        optimal_set: r.optimal_set,
        runs: summaries,
        trace: r.trace,
        best_ranking: r.best_ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    /// Denominator of every percentage.
    pub percent_base: String,
    pub scenario: ScenarioId,
    pub selectable_actions: Vec<u8>,
    pub num_buildings: usize,
    pub days: usize,
    pub steps_per_day: usize,
    pub storage_capacity_kwh: f64,
    /// Mean load per building and day.
    pub mean_daily_load_kwh: f64,
    pub profile_source: ProfileSource,
    pub weights: ObjectiveWeights,
    pub seeds: Vec<u64>,
    /// Optimizer whose ranking the ledger file simulates.
    pub ledger_optimizer: OptimizerKind,
    pub results: Vec<OptimizerReport>,
}

impl ReportBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ReportBundle = serde_json::from_str(text)?;
        if b.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                row: 1,
                message: format!("unsupported schema_version {}", b.schema_version),
            });
        }
        Ok(b)
    }
}

fn render(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Search effort per optimizer.
pub fn table_v_csv(b: &ReportBundle) -> Result<String> {
    let rows = b
        .results
        .iter()
        .map(|r| {
            vec![
                b.scenario.to_string(),
                r.optimizer.label().to_string(),
                b.selectable_actions.len().to_string(),
                r.evaluations.to_string(),
                r.simulations.to_string(),
                opt_string(r.rounds),
                r.runs.len().max(1).to_string(),
            ]
        })
        .collect();
    render(
        &["scenario", "optimizer", "actions", "evaluations", "simulations", "rounds", "runs"],
        rows,
    )
}

/// Best ranking and objective per optimizer.
pub fn table_vii_csv(b: &ReportBundle) -> Result<String> {
    let rows = b
        .results
        .iter()
        .map(|r| {
            vec![
                b.scenario.to_string(),
                r.optimizer.label().to_string(),
                r.best_ranking.to_string(),
                sig9(r.weighted_sum),
                sig9(r.value),
                opt_string(r.best_seed),
                if r.runs.is_empty() { String::new() } else { format!("{}/{}", r.runs_at_best(), r.runs.len()) },
                opt_string(r.optimal_set.as_ref().map(Vec::len)),
            ]
        })
        .collect();
    render(
        &[
            "scenario",
            "optimizer",
            "ranking",
            "weighted_sum",
            "value",
            "best_seed",
            "runs_at_best",
            "optimal_classes",
        ],
        rows,
    )
}

/// Local PV self-consumption shares, percent of load.
pub fn table_viii_csv(b: &ReportBundle) -> Result<String> {
    let rows = b
        .results
        .iter()
        .map(|r| {
            let s = &r.self_consumption;
            let mut row = vec![b.scenario.to_string(), r.optimizer.label().to_string()];
            row.extend(
                [
                    s.direct_own_pv_pct,
                    s.direct_neighbour_pv_pct,
                    s.own_stored_pv_pct,
                    s.neighbour_stored_pv_pct,
                    s.total_local_pct,
                ]
                .map(sig9),
            );
            row
        })
        .collect();
    render(
        &[
            "scenario",
            "optimizer",
            "direct_own_pv_pct",
            "direct_neighbour_pv_pct",
            "own_stored_pv_pct",
            "neighbour_stored_pv_pct",
            "total_local_pct",
        ],
        rows,
    )
}

/// Stacked-bar data: one row per optimizer and channel.
pub fn plot_csv(b: &ReportBundle) -> Result<String> {
    let mut rows = Vec::new();
    for r in &b.results {
        for (component, pct) in r.self_consumption.components() {
            rows.push(vec![
                b.scenario.to_string(),
                r.optimizer.label().to_string(),
                component.to_string(),
                sig9(pct),
                sig9(pct / 100.0 * b.mean_daily_load_kwh),
            ]);
        }
    }
    render(
        &["scenario", "optimizer", "component", "percent", "kwh_per_household_day"],
        rows,
    )
}
