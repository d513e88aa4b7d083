//! Steepest-descent local search over adjacent transpositions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CachedEvaluator, OptimizerKind, Problem, SearchResult, TracePoint};
use crate::model::ActionRanking;

/// Starts from a seeded random ranking. Each round tries all `n - 1`
/// adjacent swaps and applies the one with the largest improvement (lowest
/// index on ties); the search stops after the first round without one.
pub fn gradient_descent(problem: &Problem, seed: u64) -> SearchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = problem.random_ranking(&mut rng);
    gradient_descent_from(problem, start)
}

/// Descent from a given start ranking.
pub fn gradient_descent_from(problem: &Problem, start: ActionRanking) -> SearchResult {
    let mut evaluator = CachedEvaluator::new(problem);
    let mut order = start.order().to_vec();
    let mut current = evaluator.evaluate(&order);
    let mut trace = vec![TracePoint { iteration: 0, value: current.value }];
    let mut rounds = 0u64;

    loop {
        rounds += 1;
        let mut best_move = None;
        let mut best = current;
        for i in 0..order.len().saturating_sub(1) {
            order.swap(i, i + 1);
            let b = evaluator.evaluate(&order);
            order.swap(i, i + 1);
            if b.value < best.value {
                best = b;
                best_move = Some(i);
            }
        }
        let Some(i) = best_move else { break };
        order.swap(i, i + 1);
        current = best;
        trace.push(TracePoint { iteration: rounds, value: current.value });
    }

    SearchResult {
        optimizer: OptimizerKind::GradientDescent,
        best_ranking: ActionRanking::new(order),
        best_breakdown: current,
        evaluations: evaluator.evaluations(),
        simulations: evaluator.simulations(),
        rounds: Some(rounds),
        optimal_set: None,
        trace: Some(trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScenarioId, ScenarioSpec};
    use crate::objective::ObjectiveWeights;
    use crate::optim::{exhaustive_search, ExhaustiveConfig};
    use crate::profiles::ProfileSet;

    fn problem(id: ScenarioId, days: usize) -> Problem {
        let spec = ScenarioSpec::preset(id).with_days(days);
        Problem::new(spec, ProfileSet::generate(42, 6, days).unwrap(), ObjectiveWeights::default()).unwrap()
    }

    #[test]
    fn optimal_start_stays_put() {
        let p = problem(ScenarioId::S1, 2);
        let opt = exhaustive_search(&p, &ExhaustiveConfig::default()).unwrap();
        let r = gradient_descent_from(&p, opt.best_ranking.clone());
        assert_eq!(r.rounds, Some(1));
        assert_eq!(r.best_ranking, opt.best_ranking);
        assert_eq!(r.evaluations, 1 + 3);
    }

    #[test]
    fn two_action_fragment_terminates_fast() {
        let mut spec = ScenarioSpec::preset(ScenarioId::S1).with_days(1);
        spec.selectable_actions = ActionRanking::from_ids(&[1, 2]).unwrap().order().to_vec();
        let p = Problem::new(spec, ProfileSet::generate(1, 6, 1).unwrap(), ObjectiveWeights::default()).unwrap();
        for seed in 0..10 {
            let r = gradient_descent(&p, seed);
            assert!(r.rounds.unwrap() <= 2);
            assert_eq!(r.evaluations, 1 + r.rounds.unwrap());
        }
    }

    #[test]
    fn incumbent_never_worsens_and_is_reproducible() {
        let p = problem(ScenarioId::S3a, 2);
        for seed in 0..5 {
            let r = gradient_descent(&p, seed);
            let trace = r.trace.as_ref().unwrap();
            assert!(trace.windows(2).all(|w| w[1].value < w[0].value));
            assert_eq!(r, gradient_descent(&p, seed));
            assert_eq!(r.best_breakdown, p.evaluate(&r.best_ranking).unwrap());
        }
    }
}
