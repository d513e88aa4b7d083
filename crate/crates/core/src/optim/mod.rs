//! Ranking search. All three optimizers share [`Problem`], which turns a
//! ranking into an objective value by simulating the horizon.

mod annealing;
mod exhaustive;
mod gradient;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use annealing::{
    metropolis_accept, positions_to_ranking, simulated_annealing, PositionVector, SaConfig,
    COLLISION_TOLERANCE,
};
pub use exhaustive::{exhaustive_search, factorial, ExhaustiveConfig, DEFAULT_ACTION_CAP};
pub use gradient::{gradient_descent, gradient_descent_from};

use crate::dispatch::simulate_prefix;
use crate::error::Result;
use crate::model::{effective_prefix, ensure_valid_ranking, Action, ActionRanking, ScenarioSpec};
use crate::objective::{ObjectiveAccumulator, ObjectiveBreakdown, ObjectiveWeights};
use crate::profiles::ProfileSet;

/// Most trace points kept in a [`SearchResult`].
pub const MAX_TRACE_POINTS: usize = 10_000;

/// A scenario with fixed profiles and weights.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ScenarioSpec,
    pub profiles: ProfileSet,
    pub weights: ObjectiveWeights,
    initial_soc: Vec<f64>,
}

impl Problem {
    pub fn new(spec: ScenarioSpec, profiles: ProfileSet, weights: ObjectiveWeights) -> Result<Self> {
        spec.validate()?;
        weights.validate()?;
        let initial_soc = vec![0.0; spec.num_buildings];
        // Surfaces dimension mismatches once, up front.
        simulate_prefix(&spec, &[], &profiles, &initial_soc, &mut NullSink)?;
        Ok(Problem {
            spec,
            profiles,
            weights,
            initial_soc,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions()
    }

    /// Objective of executing `prefix` every step.
    pub fn evaluate_prefix(&self, prefix: &[Action]) -> ObjectiveBreakdown {
        let mut acc = ObjectiveAccumulator::default();
        simulate_prefix(&self.spec, prefix, &self.profiles, &self.initial_soc, &mut acc)
            .expect("dimensions were checked when the problem was built");
        acc.finish(self.spec.horizon_days, self.spec.num_buildings, &self.weights)
    }

    pub fn evaluate(&self, ranking: &ActionRanking) -> Result<ObjectiveBreakdown> {
        ensure_valid_ranking(ranking, &self.spec)?;
        Ok(self.evaluate_prefix(ranking.effective_prefix()?))
    }

    /// A uniformly random permutation of the selectable actions.
    pub fn random_ranking<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionRanking {
        let mut order = self.spec.selectable_actions.clone();
        order.shuffle(rng);
        ActionRanking::new(order)
    }
}

struct NullSink;

impl crate::dispatch::StepSink for NullSink {
    fn record(&mut self, _: usize, _: &[crate::dispatch::CellRecord], _: &crate::dispatch::StepFlows) {}

    fn needs_flows(&self) -> bool {
        false
    }
}

/// Memoizes objective values by effective prefix; rankings that differ only
/// after the terminator share one simulation.
pub struct CachedEvaluator<'p> {
    problem: &'p Problem,
    cache: HashMap<Vec<Action>, ObjectiveBreakdown>,
    evaluations: u64,
}

impl<'p> CachedEvaluator<'p> {
    pub fn new(problem: &'p Problem) -> Self {
        CachedEvaluator {
            problem,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    /// Evaluates a full ranking given as a slice. Counts as one evaluation
    /// whether or not it hits the cache.
    pub fn evaluate(&mut self, order: &[Action]) -> ObjectiveBreakdown {
        self.evaluations += 1;
        let prefix = effective_prefix(order).expect("searched rankings always contain the terminator");
        if let Some(b) = self.cache.get(prefix) {
            return *b;
        }
        let b = self.problem.evaluate_prefix(prefix);
        self.cache.insert(prefix.to_vec(), b);
        b
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Distinct prefixes actually simulated.
    pub fn simulations(&self) -> u64 {
        self.cache.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Exhaustive,
    GradientDescent,
    SimulatedAnnealing,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Exhaustive => "exhaustive",
            OptimizerKind::GradientDescent => "gradient_descent",
            OptimizerKind::SimulatedAnnealing => "simulated_annealing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    #[serde(with = "crate::objective::infinite_as_null")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub optimizer: OptimizerKind,
    pub best_ranking: ActionRanking,
    pub best_breakdown: ObjectiveBreakdown,
    /// Objective evaluations requested by the search.
    pub evaluations: u64,
    /// Distinct simulations run (cache misses).
    pub simulations: u64,
    /// Gradient descent rounds, including the final non-improving one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rounds: Option<u64>,
    /// Exhaustive search only: one canonical ranking per optimal prefix class.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimal_set: Option<Vec<ActionRanking>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<TracePoint>>,
}

/// The ranking `prefix, 1, rest...` with the unused actions ascending.
pub fn canonical_ranking(prefix: &[Action], spec: &ScenarioSpec) -> ActionRanking {
    let mut order = prefix.to_vec();
    order.push(Action::TERMINATOR);
    order.extend(
        spec.selectable_actions
            .iter()
            .filter(|a| **a != Action::TERMINATOR && !prefix.contains(a)),
    );
    ActionRanking::new(order)
}

/// Keeps every `stride`-th point so a run of `total` iterations yields at
/// most [`MAX_TRACE_POINTS`] points.
fn trace_stride(total: u64) -> u64 {
    total.div_ceil(MAX_TRACE_POINTS as u64).max(1)
}
