//! Total state space search: every permutation of the selectable actions.
//!
//! Permutations are enumerated with Heap's swap-based scheme. The space is
//! split by the action in first position, one worker task per action, and the
//! partial results are merged by an order-independent reduction.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{canonical_ranking, CachedEvaluator, OptimizerKind, Problem, SearchResult};
use crate::error::{Error, Result};
use crate::model::{effective_prefix, Action};
use crate::objective::ObjectiveBreakdown;

pub const DEFAULT_ACTION_CAP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustiveConfig {
    /// Largest action count the search agrees to enumerate.
    pub cap: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for ExhaustiveConfig {
    fn default() -> Self {
        ExhaustiveConfig {
            cap: DEFAULT_ACTION_CAP,
            threads: None,
        }
    }
}

pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

struct Partial {
    best: Option<ObjectiveBreakdown>,
    /// Effective prefixes attaining `best` exactly.
    prefixes: BTreeSet<Vec<Action>>,
    evaluations: u64,
    simulations: u64,
}

impl Partial {
    fn empty() -> Self {
        Partial {
            best: None,
            prefixes: BTreeSet::new(),
            evaluations: 0,
            simulations: 0,
        }
    }

    fn offer(&mut self, order: &[Action], b: ObjectiveBreakdown) {
        let better = match &self.best {
            None => true,
            Some(cur) => b.value < cur.value,
        };
        if better {
            self.best = Some(b);
            self.prefixes.clear();
        }
        if self.best.is_some_and(|cur| cur.value == b.value) {
            let prefix = effective_prefix(order).expect("permutations contain the terminator");
            if !self.prefixes.contains(prefix) {
                self.prefixes.insert(prefix.to_vec());
            }
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.evaluations += other.evaluations;
        self.simulations += other.simulations;
        match (&self.best, &other.best) {
            (_, None) => {}
            (None, Some(_)) => {
                self.best = other.best;
                self.prefixes = other.prefixes;
            }
            (Some(a), Some(b)) => {
                if b.value < a.value {
                    self.best = other.best;
                    self.prefixes = other.prefixes;
                } else if b.value == a.value {
                    self.prefixes.extend(other.prefixes);
                }
            }
        }
        self
    }
}

/// Enumerates all orders with `buf[0]` fixed, permuting `buf[1..]` in place.
fn heap_permute_tail(buf: &mut [Action], mut visit: impl FnMut(&[Action])) {
    let m = buf.len().saturating_sub(1);
    let mut c = vec![0usize; m];
    visit(buf);
    let mut i = 1;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                buf.swap(1, 1 + i);
            } else {
                buf.swap(1 + c[i], 1 + i);
            }
            visit(buf);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn search_from(problem: &Problem, first: Action) -> Partial {
    let mut buf = vec![first];
    buf.extend(problem.spec.selectable_actions.iter().filter(|a| **a != first));
    let mut evaluator = CachedEvaluator::new(problem);
    let mut partial = Partial::empty();
    heap_permute_tail(&mut buf, |order| {
        let b = evaluator.evaluate(order);
        partial.offer(order, b);
    });
    partial.evaluations = evaluator.evaluations();
    partial.simulations = evaluator.simulations();
    partial
}

pub fn exhaustive_search(problem: &Problem, config: &ExhaustiveConfig) -> Result<SearchResult> {
    let n = problem.num_actions();
    if n > config.cap {
        return Err(Error::CapExceeded { actions: n, cap: config.cap });
    }

    let run = || {
        problem
            .spec
            .selectable_actions
            .par_iter()
            .map(|&first| search_from(problem, first))
            .reduce(Partial::empty, Partial::merge)
    };
    let total = match config.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let best = total.best.expect("at least one permutation is evaluated");
    let optimal_set: Vec<_> = total
        .prefixes
        .iter()
        .map(|p| canonical_ranking(p, &problem.spec))
        .collect();
    Ok(SearchResult {
        optimizer: OptimizerKind::Exhaustive,
        best_ranking: optimal_set[0].clone(),
        best_breakdown: best,
        evaluations: total.evaluations,
        simulations: total.simulations,
        rounds: None,
        optimal_set: Some(optimal_set),
        trace: None,
    })
}
