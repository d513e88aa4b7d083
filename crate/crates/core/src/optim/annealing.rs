//! Simulated annealing over continuous position variables.
//!
//! Each selectable action owns a real-valued position in `[0, n]`. A ranking
//! is decoded by sorting actions by position, highest first. Every iteration
//! perturbs all positions with Gaussian noise around the current reference,
//! reflects them back into the domain and re-draws any that collide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{trace_stride, CachedEvaluator, OptimizerKind, Problem, SearchResult, TracePoint};
use crate::error::{Error, Result};
use crate::model::{Action, ActionRanking};

/// Positions closer than this count as equal.
pub const COLLISION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub seed: u64,
    /// Standard deviation of the per-iteration Gaussian step.
    pub sd: f64,
    /// The evaluation budget is this times the number of selectable actions.
    pub iterations_per_action: u64,
    pub initial_temperature: f64,
    /// Per-iteration multiplier. `None` derives it so the temperature reaches
    /// `freeze_threshold` after 90% of the budget.
    pub cooling_factor: Option<f64>,
    /// Below this temperature only non-worsening moves are accepted.
    pub freeze_threshold: f64,
    pub record_trace: bool,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            seed: 0,
            sd: 1.5,
            iterations_per_action: 67_350,
            initial_temperature: 1.0,
            cooling_factor: None,
            freeze_threshold: 1e-3,
            record_trace: false,
        }
    }
}

/// Share of the budget spent above the freeze threshold by the derived schedule.
const ANNEALED_SHARE: f64 = 0.9;

impl SaConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn budget(&self, num_actions: usize) -> u64 {
        self.iterations_per_action * num_actions as u64
    }

    pub fn cooling_factor_for(&self, budget: u64) -> f64 {
        self.cooling_factor.unwrap_or_else(|| {
            let annealed = (ANNEALED_SHARE * budget as f64).max(1.0);
            (self.freeze_threshold / self.initial_temperature).powf(1.0 / annealed)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return bad(format!("sd must be positive, got {}", self.sd));
        }
        if self.iterations_per_action == 0 {
            return bad("iterations_per_action must be at least 1".into());
        }
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return bad("initial_temperature must be positive".into());
        }
        if !(self.freeze_threshold > 0.0 && self.freeze_threshold < self.initial_temperature) {
            return bad(format!(
                "freeze_threshold {} must lie in (0, initial_temperature = {})",
                self.freeze_threshold, self.initial_temperature
            ));
        }
        if let Some(c) = self.cooling_factor {
            if !(c > 0.0 && c < 1.0) {
                return bad(format!("cooling_factor {c} must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// One position per selectable action, all distinct and inside `[0, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionVector(Vec<f64>);

impl PositionVector {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        let n = positions.len() as f64;
        if let Some(p) = positions.iter().find(|p| !(**p >= 0.0 && **p <= n)) {
            return Err(Error::InvariantViolation(format!("position {p} outside [0, {n}]")));
        }
        if let Some((i, j)) = first_collision(&positions) {
            return Err(Error::InvariantViolation(format!(
                "positions {i} and {j} collide ({} vs {})",
                positions[i], positions[j]
            )));
        }
        Ok(PositionVector(positions))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn first_collision(p: &[f64]) -> Option<(usize, usize)> {
    (0..p.len()).find_map(|j| (0..j).find(|&i| (p[i] - p[j]).abs() <= COLLISION_TOLERANCE).map(|i| (i, j)))
}

/// Sorts `actions` by position, highest position first.
pub fn positions_to_ranking(positions: &[f64], actions: &[Action]) -> Result<ActionRanking> {
    if positions.len() != actions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions for {} actions",
            positions.len(),
            actions.len()
        )));
    }
    if let Some((i, j)) = first_collision(positions) {
        return Err(Error::InvariantViolation(format!(
            "actions {} and {} share position {}",
            actions[i], actions[j], positions[i]
        )));
    }
    let mut order = Vec::with_capacity(actions.len());
    decode_into(positions, actions, &mut Vec::new(), &mut order);
    Ok(ActionRanking::new(order))
}

fn decode_into(positions: &[f64], actions: &[Action], idx: &mut Vec<usize>, out: &mut Vec<Action>) {
    idx.clear();
    idx.extend(0..positions.len());
    idx.sort_unstable_by(|&a, &b| positions[b].total_cmp(&positions[a]));
    out.clear();
    out.extend(idx.iter().map(|&i| actions[i]));
}

/// Accepts a degradation of `delta_rel` with probability `exp(-delta_rel / temperature)`.
pub fn metropolis_accept<R: Rng + ?Sized>(delta_rel: f64, temperature: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < (-delta_rel / temperature).exp()
}

/// Folds `x` back into `[0, upper]` by mirroring at the bounds.
fn reflect(mut x: f64, upper: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > upper {
            x = 2.0 * upper - x;
        } else {
            return x;
        }
    }
}

fn collides_with_earlier(p: &[f64], i: usize) -> bool {
    p[..i].iter().any(|q| (q - p[i]).abs() <= COLLISION_TOLERANCE)
}

fn relative_degradation(candidate: f64, incumbent: f64) -> f64 {
    if candidate.is_infinite() {
        f64::INFINITY
    } else {
        (candidate - incumbent) / incumbent
    }
}

pub fn simulated_annealing(problem: &Problem, config: &SaConfig) -> Result<SearchResult> {
    config.validate()?;
    let actions = &problem.spec.selectable_actions;
    let n = actions.len();
    let upper = n as f64;
    let budget = config.budget(n);
    let cooling = config.cooling_factor_for(budget);
    let stride = trace_stride(budget);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let step = Normal::new(0.0, config.sd).expect("sd validated positive");
    let mut evaluator = CachedEvaluator::new(problem);
    let mut idx = Vec::with_capacity(n);
    let mut order = Vec::with_capacity(n);

    let mut reference = vec![0.0; n];
    for i in 0..n {
        loop {
            reference[i] = rng.random_range(0.0..=upper);
            if !collides_with_earlier(&reference, i) {
                break;
            }
        }
    }
    decode_into(&reference, actions, &mut idx, &mut order);
    let mut current = evaluator.evaluate(&order);
    let mut best = current;
    let mut best_order = order.clone();

    let mut trace = config.record_trace.then(Vec::new);
    if let Some(t) = trace.as_mut() {
        t.push(TracePoint { iteration: 0, value: current.value });
    }

    let mut temperature = config.initial_temperature;
    let mut candidate = vec![0.0; n];
    for iteration in 1..budget {
        for i in 0..n {
            loop {
                candidate[i] = reflect(reference[i] + step.sample(&mut rng), upper);
                if !collides_with_earlier(&candidate, i) {
                    break;
                }
            }
        }
        decode_into(&candidate, actions, &mut idx, &mut order);
        let evaluated = evaluator.evaluate(&order);

        let accept = if evaluated.value <= current.value {
            true
        } else if temperature >= config.freeze_threshold {
            metropolis_accept(relative_degradation(evaluated.value, current.value), temperature, &mut rng)
        } else {
            false
        };
        if accept {
            std::mem::swap(&mut reference, &mut candidate);
            current = evaluated;
            if current.value < best.value {
                best = current;
                best_order.clone_from(&order);
            }
        }
        temperature *= cooling;

        if let Some(t) = trace.as_mut() {
            if iteration % stride == 0 {
                t.push(TracePoint { iteration, value: current.value });
            }
        }
    }

    Ok(SearchResult {
        optimizer: OptimizerKind::SimulatedAnnealing,
        best_ranking: ActionRanking::new(best_order),
        best_breakdown: best,
        evaluations: evaluator.evaluations(),
        simulations: evaluator.simulations(),
        rounds: None,
        optimal_set: None,
        trace,
    })
}
