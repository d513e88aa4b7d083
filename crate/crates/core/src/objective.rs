//! The gated, weighted reciprocal objective.
//!
//! A (step, building) cell contributes its four reward variables only when
//! both of its gate variables (unserved load and uncommitted PV) are exactly
//! zero. Gated totals are averaged per building and day, weighted, and the
//! reciprocal of the weighted sum is the value to minimize.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dispatch::{CellRecord, FlowLedger, StepFlows, StepSink};
use crate::error::{Error, Result};
use crate::model::ScenarioSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    /// Direct consumption of neighbourhood PV.
    pub w1: f64,
    /// Direct consumption of own PV.
    pub w2: f64,
    /// Consumption of stored energy.
    pub w3: f64,
    /// Storage charging from PV.
    pub w4: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            w1: 1000.0,
            w2: 100.0,
            w3: 10.0,
            w4: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "weight {name} = {w} must be finite and strictly positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub avg_direct_local_pv: f64,
    pub avg_direct_own_pv: f64,
    pub avg_local_storage_consumption: f64,
    pub avg_own_storage_loading: f64,
    /// Cells whose rewards were discarded by the gate.
    pub gated_step_count: usize,
    pub weighted_sum: f64,
    /// `1 / weighted_sum`, or infinity when nothing passed the gate.
    #[serde(with = "infinite_as_null")]
    pub value: f64,
}

pub(crate) mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ObjectiveBreakdown {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Total order on objective values; smaller is better and infinity is worst.
pub fn compare(a: &ObjectiveBreakdown, b: &ObjectiveBreakdown) -> Ordering {
    a.value.total_cmp(&b.value)
}

/// Streams gated sums out of a simulation without storing the ledger.
#[derive(Debug, Clone, Default)]
pub struct ObjectiveAccumulator {
    direct_local: f64,
    direct_own: f64,
    local_storage: f64,
    own_storage_loading: f64,
    gated: usize,
}

impl ObjectiveAccumulator {
    pub fn add_cell(&mut self, cell: &CellRecord) {
        if cell.energy_necessary_to_obtain == 0.0 && cell.pv_energy_remaining == 0.0 {
            self.direct_local += cell.direct_local_pv_consumption;
            self.direct_own += cell.direct_own_pv_consumption;
            self.local_storage += cell.local_storage_consumption;
            self.own_storage_loading += cell.own_storage_loading;
        } else {
            self.gated += 1;
        }
    }

    pub fn finish(&self, days: usize, buildings: usize, weights: &ObjectiveWeights) -> ObjectiveBreakdown {
        let divisor = (days * buildings) as f64;
        let avg_direct_local_pv = self.direct_local / divisor;
        let avg_direct_own_pv = self.direct_own / divisor;
        let avg_local_storage_consumption = self.local_storage / divisor;
        let avg_own_storage_loading = self.own_storage_loading / divisor;
        let weighted_sum = weights.w1 * avg_direct_local_pv
            + weights.w2 * avg_direct_own_pv
            + weights.w3 * avg_local_storage_consumption
            + weights.w4 * avg_own_storage_loading;
        ObjectiveBreakdown {
            avg_direct_local_pv,
            avg_direct_own_pv,
            avg_local_storage_consumption,
            avg_own_storage_loading,
            gated_step_count: self.gated,
            weighted_sum,
            value: if weighted_sum > 0.0 {
                1.0 / weighted_sum
            } else {
                f64::INFINITY
            },
        }
    }
}

impl StepSink for ObjectiveAccumulator {
    fn record(&mut self, _step: usize, cells: &[CellRecord], _flows: &StepFlows) {
        for c in cells {
            self.add_cell(c);
        }
    }

    fn needs_flows(&self) -> bool {
        false
    }
}

/// Computes the objective of a finished simulation.
pub fn evaluate(ledger: &FlowLedger, spec: &ScenarioSpec, weights: &ObjectiveWeights) -> Result<ObjectiveBreakdown> {
    if ledger.num_buildings != spec.num_buildings || ledger.num_steps() != spec.num_steps() {
        return Err(Error::InvalidArgument(format!(
            "ledger has {} buildings x {} steps, scenario {} expects {} x {}",
            ledger.num_buildings,
            ledger.num_steps(),
            spec.scenario_id,
            spec.num_buildings,
            spec.num_steps()
        )));
    }
    let mut acc = ObjectiveAccumulator::default();
    for c in &ledger.cells {
        acc.add_cell(c);
    }
    Ok(acc.finish(spec.horizon_days, spec.num_buildings, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::StepFlows;
    use crate::model::{ScenarioId, ScenarioSpec};

    fn one_cell_ledger(cell: CellRecord) -> (FlowLedger, ScenarioSpec) {
        let mut spec = ScenarioSpec::preset(ScenarioId::S1).with_buildings(1).with_days(1);
        spec.steps_per_day = 1;
        let ledger = FlowLedger {
            num_buildings: 1,
            cells: vec![cell],
            flows: vec![StepFlows::zeros(1)],
        };
        (ledger, spec)
    }

    #[test]
    fn direct_formula() {
        let (ledger, spec) = one_cell_ledger(CellRecord {
            direct_local_pv_consumption: 2.0,
            direct_own_pv_consumption: 2.0,
            ..Default::default()
        });
        let b = evaluate(&ledger, &spec, &ObjectiveWeights::default()).unwrap();
        assert_eq!(b.weighted_sum, 2200.0);
        assert_eq!(b.value, 1.0 / 2200.0);
        assert_eq!(b.gated_step_count, 0);
    }

    #[test]
    fn failing_gate_discards_rewards() {
        let (ledger, spec) = one_cell_ledger(CellRecord {
            energy_necessary_to_obtain: 0.5,
            direct_local_pv_consumption: 2.0,
            direct_own_pv_consumption: 2.0,
            ..Default::default()
        });
        let b = evaluate(&ledger, &spec, &ObjectiveWeights::default()).unwrap();
        assert_eq!(
            (b.avg_direct_local_pv, b.avg_direct_own_pv, b.avg_local_storage_consumption, b.avg_own_storage_loading),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(b.gated_step_count, 1);
        assert_eq!(b.value, f64::INFINITY);
    }

    #[test]
    fn zero_ledger_is_infinite() {
        let (ledger, spec) = one_cell_ledger(CellRecord::default());
        let b = evaluate(&ledger, &spec, &ObjectiveWeights::default()).unwrap();
        assert_eq!(b.weighted_sum, 0.0);
        assert!(b.value.is_infinite() && b.value > 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let (ledger, mut spec) = one_cell_ledger(CellRecord::default());
        spec.num_buildings = 2;
        assert!(matches!(
            evaluate(&ledger, &spec, &ObjectiveWeights::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn with_value(value: f64) -> ObjectiveBreakdown {
        ObjectiveBreakdown {
            avg_direct_local_pv: 0.0,
            avg_direct_own_pv: 0.0,
            avg_local_storage_consumption: 0.0,
            avg_own_storage_loading: 0.0,
            gated_step_count: 0,
            weighted_sum: 1.0 / value,
            value,
        }
    }

    #[test]
    fn compare_orders_by_value() {
        assert_eq!(compare(&with_value(1.0 / 6113.0), &with_value(1.0 / 6017.0)), Ordering::Less);
        assert_eq!(compare(&with_value(1.0), &with_value(f64::INFINITY)), Ordering::Less);
        assert_eq!(compare(&with_value(f64::INFINITY), &with_value(f64::INFINITY)), Ordering::Equal);
        assert_eq!(compare(&with_value(0.25), &with_value(0.25)), Ordering::Equal);
    }

    #[test]
    fn default_weights_step_by_ten() {
        let w = ObjectiveWeights::default();
        assert_eq!(w.w1 / w.w2, 10.0);
        assert_eq!(w.w2 / w.w3, 10.0);
        assert_eq!(w.w3 / w.w4, 10.0);
        w.validate().unwrap();
        assert!(ObjectiveWeights { w3: 0.0, ..w }.validate().is_err());
    }

    #[test]
    fn infinite_value_round_trips_through_json() {
        let b = with_value(f64::INFINITY);
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"value\":null"));
        let back: ObjectiveBreakdown = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value, f64::INFINITY);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cell() -> impl Strategy<Value = CellRecord> {
            (0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0, prop::bool::ANY, prop::bool::ANY).prop_map(
                |(a, b, c, d, gate_load, gate_pv)| CellRecord {
                    energy_necessary_to_obtain: if gate_load { 0.0 } else { 0.7 },
                    pv_energy_remaining: if gate_pv { 0.0 } else { 0.3 },
                    direct_local_pv_consumption: a + b,
                    direct_own_pv_consumption: b,
                    local_storage_consumption: c,
                    own_storage_loading: d,
                    soc_kwh: 0.0,
                    stored_pv_kwh: 0.0,
                },
            )
        }

        fn ledger(cells: Vec<CellRecord>) -> (FlowLedger, ScenarioSpec) {
            let n = cells.len();
            let mut spec = ScenarioSpec::preset(ScenarioId::S1).with_buildings(1).with_days(1);
            spec.steps_per_day = n;
            let flows = vec![StepFlows::zeros(1); n];
            (FlowLedger { num_buildings: 1, cells, flows }, spec)
        }

        proptest! {
            #[test]
            fn gated_cells_do_not_matter(cells in proptest::collection::vec(cell(), 1..20), bump in 0.1f64..3.0) {
                let (l1, spec) = ledger(cells.clone());
                let w = ObjectiveWeights::default();
                let before = evaluate(&l1, &spec, &w).unwrap();
                let mut perturbed = cells;
                for c in perturbed.iter_mut().filter(|c| c.energy_necessary_to_obtain > 0.0 || c.pv_energy_remaining > 0.0) {
                    c.direct_local_pv_consumption += bump;
                    c.local_storage_consumption += bump;
                }
                let (l2, _) = ledger(perturbed);
                prop_assert_eq!(evaluate(&l2, &spec, &w).unwrap(), before);
            }

            #[test]
            fn more_reward_lowers_value(cells in proptest::collection::vec(cell(), 1..20), which in 0usize..4, bump in 0.1f64..3.0) {
                let (l1, spec) = ledger(cells.clone());
                let w = ObjectiveWeights::default();
                let before = evaluate(&l1, &spec, &w).unwrap();
                let mut cells = cells;
                cells[0].energy_necessary_to_obtain = 0.0;
                cells[0].pv_energy_remaining = 0.0;
                let (l_open, _) = ledger(cells.clone());
                let open = evaluate(&l_open, &spec, &w).unwrap();
                prop_assert!(open.value <= before.value);
                match which {
                    0 => cells[0].direct_local_pv_consumption += bump,
                    1 => cells[0].direct_own_pv_consumption += bump,
                    2 => cells[0].local_storage_consumption += bump,
                    _ => cells[0].own_storage_loading += bump,
                }
                let (l3, _) = ledger(cells);
                let after = evaluate(&l3, &spec, &w).unwrap();
                prop_assert!(after.value < open.value);
                prop_assert!((after.value * after.weighted_sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
