//! Greedy execution of an action ranking over a neighbourhood.
//!
//! Every timestep runs the ranking's effective prefix in order. Each action
//! moves the maximum feasible energy before the next one is considered.
//! Buildings are visited in ascending index order; pairwise actions scan
//! partners in ascending index order too. Components are lossless and have
//! no rate limits.
//!
//! Batteries track how much of their content came from PV. Loads draw the
//! PV-origin part first, and only that part earns storage-consumption credit;
//! grid-charged energy is carried and delivered but never rewarded.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::model::{
    effective_prefix, ensure_valid_ranking, Action, ActionRanking, NeighbourhoodState,
    ScenarioSpec,
};
use crate::profiles::ProfileSet;

/// Values this close to a bound are snapped onto it.
pub const SNAP_EPS: f64 = 1e-12;

fn snap_zero(x: f64) -> f64 {
    if x < SNAP_EPS {
        0.0
    } else {
        x
    }
}

/// Square matrix of transfers between buildings, indexed `[from][to]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    n: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn zeros(n: usize) -> Self {
        PairMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    fn add(&mut self, from: usize, to: usize, kwh: f64) {
        self.data[from * self.n + to] += kwh;
    }

    /// Total sent by `from` to all partners.
    pub fn sent(&self, from: usize) -> f64 {
        self.data[from * self.n..(from + 1) * self.n].iter().sum()
    }

    /// Total received by `to` from all partners.
    pub fn received(&self, to: usize) -> f64 {
        (0..self.n).map(|from| self.get(from, to)).sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    fn clear(&mut self) {
        self.data.fill(0.0);
    }
}

/// All energy moved in one timestep.
///
/// Pairwise transfers are stored once, as `[sender][receiver]`; the
/// receiver-side views (`pv_from_neighbour_to_loads` and friends) read the
/// transposed entry, so both sides of an exchange always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFlows {
    pub pv_to_own_loads: Vec<f64>,
    pub pv_to_own_storage: Vec<f64>,
    pub storage_to_own_loads: Vec<f64>,
    /// PV-origin part of `storage_to_own_loads`.
    pub stored_pv_to_own_loads: Vec<f64>,
    pub pv_to_grid: Vec<f64>,
    pub grid_to_loads: Vec<f64>,
    pub storage_to_grid: Vec<f64>,
    pub grid_to_storage: Vec<f64>,
    pub pv_to_neighbour_loads: PairMatrix,
    pub pv_to_neighbour_storage: PairMatrix,
    pub storage_to_neighbour_loads: PairMatrix,
    /// PV-origin part of `storage_to_neighbour_loads`.
    pub stored_pv_to_neighbour_loads: PairMatrix,
}

impl StepFlows {
    pub fn zeros(n: usize) -> Self {
        StepFlows {
            pv_to_own_loads: vec![0.0; n],
            pv_to_own_storage: vec![0.0; n],
            storage_to_own_loads: vec![0.0; n],
            stored_pv_to_own_loads: vec![0.0; n],
            pv_to_grid: vec![0.0; n],
            grid_to_loads: vec![0.0; n],
            storage_to_grid: vec![0.0; n],
            grid_to_storage: vec![0.0; n],
            pv_to_neighbour_loads: PairMatrix::zeros(n),
            pv_to_neighbour_storage: PairMatrix::zeros(n),
            storage_to_neighbour_loads: PairMatrix::zeros(n),
            stored_pv_to_neighbour_loads: PairMatrix::zeros(n),
        }
    }

    fn clear(&mut self) {
        for v in [
            &mut self.pv_to_own_loads,
            &mut self.pv_to_own_storage,
            &mut self.storage_to_own_loads,
            &mut self.stored_pv_to_own_loads,
            &mut self.pv_to_grid,
            &mut self.grid_to_loads,
            &mut self.storage_to_grid,
            &mut self.grid_to_storage,
        ] {
            v.fill(0.0);
        }
        self.pv_to_neighbour_loads.clear();
        self.pv_to_neighbour_storage.clear();
        self.storage_to_neighbour_loads.clear();
        self.stored_pv_to_neighbour_loads.clear();
    }

    /// Energy `to` received from `from`'s PV for its loads.
    pub fn pv_from_neighbour_to_loads(&self, to: usize, from: usize) -> f64 {
        self.pv_to_neighbour_loads.get(from, to)
    }

    pub fn pv_from_neighbour_to_storage(&self, to: usize, from: usize) -> f64 {
        self.pv_to_neighbour_storage.get(from, to)
    }

    pub fn storage_from_neighbour_to_loads(&self, to: usize, from: usize) -> f64 {
        self.storage_to_neighbour_loads.get(from, to)
    }
}

/// The per-(timestep, building) bookkeeping variables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CellRecord {
    /// Load left unserved once the prefix is exhausted.
    pub energy_necessary_to_obtain: f64,
    /// PV left uncommitted once the prefix is exhausted.
    pub pv_energy_remaining: f64,
    pub direct_local_pv_consumption: f64,
    pub direct_own_pv_consumption: f64,
    pub local_storage_consumption: f64,
    pub own_storage_loading: f64,
    /// State of charge at the end of the step.
    pub soc_kwh: f64,
    /// PV-origin part of `soc_kwh`.
    pub stored_pv_kwh: f64,
}

/// Receives each simulated step as it is produced.
pub trait StepSink {
    fn record(&mut self, step: usize, cells: &[CellRecord], flows: &StepFlows);

    /// Sinks that only read the cell records return false, and then receive
    /// all-zero flows.
    fn needs_flows(&self) -> bool {
        true
    }
}

/// Complete simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLedger {
    pub num_buildings: usize,
    /// Row-major `[step][building]`.
    pub cells: Vec<CellRecord>,
    pub flows: Vec<StepFlows>,
}

impl FlowLedger {
    fn with_capacity(num_buildings: usize, steps: usize) -> Self {
        FlowLedger {
            num_buildings,
            cells: Vec::with_capacity(steps * num_buildings),
            flows: Vec::with_capacity(steps),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.flows.len()
    }

    pub fn cell(&self, step: usize, building: usize) -> &CellRecord {
        &self.cells[step * self.num_buildings + building]
    }

    pub fn step_cells(&self, step: usize) -> &[CellRecord] {
        &self.cells[step * self.num_buildings..(step + 1) * self.num_buildings]
    }
}

impl StepSink for FlowLedger {
    fn record(&mut self, _step: usize, cells: &[CellRecord], flows: &StepFlows) {
        self.cells.extend_from_slice(cells);
        self.flows.push(flows.clone());
    }
}

/// Reusable per-step working state.
struct Dispatcher<'a> {
    prefix: &'a [Action],
    capacity: f64,
    /// When false only the cell records are maintained.
    track_flows: bool,
    pv_rem: Vec<f64>,
    load_rem: Vec<f64>,
    soc: Vec<f64>,
    stored_pv: Vec<f64>,
    cells: Vec<CellRecord>,
    flows: StepFlows,
}

impl<'a> Dispatcher<'a> {
    fn new(prefix: &'a [Action], capacity: f64, soc: &[f64], stored_pv: &[f64], track_flows: bool) -> Self {
        let n = soc.len();
        Dispatcher {
            prefix,
            capacity,
            track_flows,
            pv_rem: vec![0.0; n],
            load_rem: vec![0.0; n],
            soc: soc.to_vec(),
            stored_pv: stored_pv.to_vec(),
            cells: vec![CellRecord::default(); n],
            flows: StepFlows::zeros(n),
        }
    }

    /// Charges up to `available` kWh of PV into `b`'s battery.
    fn charge_pv(&mut self, b: usize, available: f64) -> f64 {
        let t = available.min(self.capacity - self.soc[b]).max(0.0);
        let soc = self.soc[b] + t;
        self.soc[b] = if self.capacity - soc < SNAP_EPS { self.capacity } else { soc };
        self.stored_pv[b] = (self.stored_pv[b] + t).min(self.soc[b]);
        t
    }

    /// Withdraws up to `wanted` kWh, PV-origin energy first. Returns the
    /// total withdrawn and its PV-origin part.
    fn discharge(&mut self, b: usize, wanted: f64) -> (f64, f64) {
        let t = wanted.min(self.soc[b]);
        let from_pv = t.min(self.stored_pv[b]);
        self.soc[b] = snap_zero(self.soc[b] - t);
        self.stored_pv[b] = snap_zero(self.stored_pv[b] - from_pv).min(self.soc[b]);
        (t, from_pv)
    }

    fn draw_pv(&mut self, b: usize, kwh: f64) {
        self.pv_rem[b] = snap_zero(self.pv_rem[b] - kwh);
    }

    fn serve_load(&mut self, b: usize, kwh: f64) {
        self.load_rem[b] = snap_zero(self.load_rem[b] - kwh);
    }

    fn pv_to_loads(&mut self, from: usize, to: usize) {
        let t = self.pv_rem[from].min(self.load_rem[to]);
        self.draw_pv(from, t);
        self.serve_load(to, t);
        self.cells[to].direct_local_pv_consumption += t;
        if self.track_flows {
            self.flows.pv_to_neighbour_loads.add(from, to, t);
        }
    }

    fn pv_to_storage(&mut self, from: usize, to: usize) {
        let t = self.charge_pv(to, self.pv_rem[from]);
        self.draw_pv(from, t);
        self.cells[to].own_storage_loading += t;
        if self.track_flows {
            self.flows.pv_to_neighbour_storage.add(from, to, t);
        }
    }

    fn storage_to_loads(&mut self, from: usize, to: usize) {
        let (t, from_pv) = self.discharge(from, self.load_rem[to]);
        self.serve_load(to, t);
        self.cells[to].local_storage_consumption += from_pv;
        if self.track_flows {
            self.flows.storage_to_neighbour_loads.add(from, to, t);
            self.flows.stored_pv_to_neighbour_loads.add(from, to, from_pv);
        }
    }

    fn headroom(&self, b: usize) -> f64 {
        self.capacity - self.soc[b]
    }

    fn run(&mut self, pv: impl Fn(usize) -> f64, load: impl Fn(usize) -> f64) {
        let n = self.soc.len();
        for b in 0..n {
            self.pv_rem[b] = snap_zero(pv(b));
            self.load_rem[b] = snap_zero(load(b));
            self.cells[b] = CellRecord::default();
        }
        if self.track_flows {
            self.flows.clear();
        }

        for &action in self.prefix {
            match action {
                Action::DoNoMoreActivity => break,
                Action::OwnPvToOwnLoads => {
                    for b in 0..n {
                        let t = self.pv_rem[b].min(self.load_rem[b]);
                        self.draw_pv(b, t);
                        self.serve_load(b, t);
                        self.cells[b].direct_own_pv_consumption += t;
                        self.cells[b].direct_local_pv_consumption += t;
                        if self.track_flows {
                            self.flows.pv_to_own_loads[b] += t;
                        }
                    }
                }
                Action::OwnPvToOwnStorage => {
                    for b in 0..n {
                        let t = self.charge_pv(b, self.pv_rem[b]);
                        self.draw_pv(b, t);
                        self.cells[b].own_storage_loading += t;
                        if self.track_flows {
                            self.flows.pv_to_own_storage[b] += t;
                        }
                    }
                }
                Action::OwnStorageToOwnLoads => {
                    for b in 0..n {
                        let (t, from_pv) = self.discharge(b, self.load_rem[b]);
                        self.serve_load(b, t);
                        self.cells[b].local_storage_consumption += from_pv;
                        if self.track_flows {
                            self.flows.storage_to_own_loads[b] += t;
                            self.flows.stored_pv_to_own_loads[b] += from_pv;
                        }
                    }
                }
                Action::OwnPvToGrid => {
                    for b in 0..n {
                        if self.track_flows {
                            self.flows.pv_to_grid[b] += self.pv_rem[b];
                        }
                        self.pv_rem[b] = 0.0;
                    }
                }
                Action::GridToOwnLoads => {
                    for b in 0..n {
                        if self.track_flows {
                            self.flows.grid_to_loads[b] += self.load_rem[b];
                        }
                        self.load_rem[b] = 0.0;
                    }
                }
                // Pairs where either side is exhausted would move nothing and
                // are skipped.
                Action::OwnPvToNeighbourLoads => {
                    for from in 0..n {
                        for to in 0..n {
                            if self.pv_rem[from] == 0.0 {
                                break;
                            }
                            if to != from && self.load_rem[to] > 0.0 {
                                self.pv_to_loads(from, to);
                            }
                        }
                    }
                }
                Action::NeighbourPvToOwnLoads => {
                    for to in 0..n {
                        for from in 0..n {
                            if self.load_rem[to] == 0.0 {
                                break;
                            }
                            if from != to && self.pv_rem[from] > 0.0 {
                                self.pv_to_loads(from, to);
                            }
                        }
                    }
                }
                Action::OwnPvToNeighbourStorage => {
                    for from in 0..n {
                        for to in 0..n {
                            if self.pv_rem[from] == 0.0 {
                                break;
                            }
                            if to != from && self.headroom(to) > 0.0 {
                                self.pv_to_storage(from, to);
                            }
                        }
                    }
                }
                Action::NeighbourPvToOwnStorage => {
                    for to in 0..n {
                        for from in 0..n {
                            if self.headroom(to) <= 0.0 {
                                break;
                            }
                            if from != to && self.pv_rem[from] > 0.0 {
                                self.pv_to_storage(from, to);
                            }
                        }
                    }
                }
                Action::OwnStorageToNeighbourLoads => {
                    for from in 0..n {
                        for to in 0..n {
                            if self.soc[from] == 0.0 {
                                break;
                            }
                            if to != from && self.load_rem[to] > 0.0 {
                                self.storage_to_loads(from, to);
                            }
                        }
                    }
                }
                Action::NeighbourStorageToOwnLoads => {
                    for to in 0..n {
                        for from in 0..n {
                            if self.load_rem[to] == 0.0 {
                                break;
                            }
                            if from != to && self.soc[from] > 0.0 {
                                self.storage_to_loads(from, to);
                            }
                        }
                    }
                }
                Action::OwnStorageToGrid => {
                    for b in 0..n {
                        if self.track_flows {
                            self.flows.storage_to_grid[b] += self.soc[b];
                        }
                        self.soc[b] = 0.0;
                        self.stored_pv[b] = 0.0;
                    }
                }
                Action::GridToOwnStorage => {
                    for b in 0..n {
                        if self.track_flows {
                            self.flows.grid_to_storage[b] += self.capacity - self.soc[b];
                        }
                        self.soc[b] = self.capacity;
                    }
                }
            }
        }

        for b in 0..n {
            let cell = &mut self.cells[b];
            cell.energy_necessary_to_obtain = self.load_rem[b];
            cell.pv_energy_remaining = self.pv_rem[b];
            cell.soc_kwh = self.soc[b];
            cell.stored_pv_kwh = self.stored_pv[b];
        }
    }
}

fn check_dimensions(spec: &ScenarioSpec, profiles: &ProfileSet) -> Result<()> {
    profiles.validate()?;
    if profiles.num_buildings() != spec.num_buildings
        || profiles.num_steps() != spec.num_steps()
        || profiles.steps_per_day != spec.steps_per_day
    {
        return Err(Error::InvalidArgument(format!(
            "profiles cover {} buildings x {} steps ({} per day) but scenario {} needs {} x {} ({} per day)",
            profiles.num_buildings(),
            profiles.num_steps(),
            profiles.steps_per_day,
            spec.scenario_id,
            spec.num_buildings,
            spec.num_steps(),
            spec.steps_per_day,
        )));
    }
    Ok(())
}

fn check_soc(spec: &ScenarioSpec, soc: &[f64]) -> Result<()> {
    if soc.len() != spec.num_buildings {
        return Err(Error::InvalidArgument(format!(
            "{} initial states for {} buildings",
            soc.len(),
            spec.num_buildings
        )));
    }
    if let Some(s) = soc
        .iter()
        .find(|s| !(**s >= 0.0 && **s <= spec.storage_capacity_kwh))
    {
        return Err(Error::InvalidArgument(format!(
            "initial state of charge {s} outside [0, {}]",
            spec.storage_capacity_kwh
        )));
    }
    Ok(())
}

/// Runs the whole horizon for an already-extracted prefix, streaming each
/// step into `sink`. Returns the final states of charge. Initial storage
/// content counts as PV-origin.
///
/// Only dimensions are checked here; the prefix is trusted to come from a
/// valid ranking.
pub fn simulate_prefix<S: StepSink>(
    spec: &ScenarioSpec,
    prefix: &[Action],
    profiles: &ProfileSet,
    initial_soc: &[f64],
    sink: &mut S,
) -> Result<Vec<f64>> {
    check_dimensions(spec, profiles)?;
    check_soc(spec, initial_soc)?;
    let mut d = Dispatcher::new(prefix, spec.storage_capacity_kwh, initial_soc, initial_soc, sink.needs_flows());
    for step in 0..spec.num_steps() {
        d.run(|b| profiles.pv_at(step, b), |b| profiles.load(step, b));
        sink.record(step, &d.cells, &d.flows);
    }
    Ok(d.soc)
}

/// Simulates the full horizon for `ranking`, starting from empty storages
/// unless `initial_soc` is given.
pub fn simulate(
    spec: &ScenarioSpec,
    ranking: &ActionRanking,
    profiles: &ProfileSet,
    initial_soc: Option<&[f64]>,
) -> Result<FlowLedger> {
    ensure_valid_ranking(ranking, spec)?;
    let empty = vec![0.0; spec.num_buildings];
    let mut ledger = FlowLedger::with_capacity(spec.num_buildings, spec.num_steps());
    simulate_prefix(
        spec,
        ranking.effective_prefix()?,
        profiles,
        initial_soc.unwrap_or(&empty),
        &mut ledger,
    )?;
    Ok(ledger)
}

/// Executes a single timestep.
pub fn step(
    spec: &ScenarioSpec,
    ranking: &ActionRanking,
    pv: &[f64],
    load: &[f64],
    state: &NeighbourhoodState,
) -> Result<(StepFlows, NeighbourhoodState, Vec<CellRecord>)> {
    let prefix = effective_prefix(ranking.order())?;
    let soc = state.soc();
    let stored_pv = state.stored_pv();
    check_soc(spec, &soc)?;
    if stored_pv.iter().zip(&soc).any(|(p, s)| !(*p >= 0.0 && p <= s)) {
        return Err(Error::InvalidArgument(
            "PV-origin storage content must lie within [0, soc]".into(),
        ));
    }
    if pv.len() != spec.num_buildings || load.len() != spec.num_buildings {
        return Err(Error::InvalidArgument(
            "pv and load inputs must have one entry per building".into(),
        ));
    }
    if let Some(v) = pv.iter().chain(load).find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("step input {v} is negative or not finite")));
    }
    let mut d = Dispatcher::new(prefix, spec.storage_capacity_kwh, &soc, &stored_pv, true);
    d.run(|b| pv[b], |b| load[b]);
    Ok((d.flows, NeighbourhoodState::from_parts(&d.soc, &d.stored_pv), d.cells))
}

/// Checks the load, PV and storage balances of one simulated step for every
/// building, to within `tol` kWh.
pub fn audit_step(
    pv: &[f64],
    load: &[f64],
    soc_before: &[f64],
    capacity: f64,
    flows: &StepFlows,
    cells: &[CellRecord],
    tol: f64,
) -> Result<()> {
    let fail = |b: usize, what: &str, residual: f64| {
        Err(Error::InvariantViolation(format!(
            "building {b}: {what} balance off by {residual:e} kWh"
        )))
    };
    for (b, c) in cells.iter().enumerate() {
        let served = flows.pv_to_own_loads[b]
            + flows.storage_to_own_loads[b]
            + flows.pv_to_neighbour_loads.received(b)
            + flows.storage_to_neighbour_loads.received(b)
            + flows.grid_to_loads[b]
            + c.energy_necessary_to_obtain;
        if (load[b] - served).abs() > tol {
            return fail(b, "load", load[b] - served);
        }
        let used = flows.pv_to_own_loads[b]
            + flows.pv_to_own_storage[b]
            + flows.pv_to_neighbour_loads.sent(b)
            + flows.pv_to_neighbour_storage.sent(b)
            + flows.pv_to_grid[b]
            + c.pv_energy_remaining;
        if (pv[b] - used).abs() > tol {
            return fail(b, "PV", pv[b] - used);
        }
        let soc = soc_before[b] + flows.pv_to_own_storage[b]
            + flows.pv_to_neighbour_storage.received(b)
            + flows.grid_to_storage[b]
            - flows.storage_to_own_loads[b]
            - flows.storage_to_neighbour_loads.sent(b)
            - flows.storage_to_grid[b];
        if (c.soc_kwh - soc).abs() > tol {
            return fail(b, "storage", c.soc_kwh - soc);
        }
        if !(0.0..=capacity).contains(&c.soc_kwh) || !(0.0..=c.soc_kwh).contains(&c.stored_pv_kwh) {
            return Err(Error::InvariantViolation(format!(
                "building {b}: soc {} / PV-origin {} outside [0, {capacity}]",
                c.soc_kwh, c.stored_pv_kwh
            )));
        }
    }
    Ok(())
}

pub const LEDGER_CSV_HEADER: &[&str] = &[
    "step",
    "building",
    "load_kwh",
    "pv_kwh",
    "energy_necessary_to_obtain",
    "pv_energy_remaining",
    "direct_local_pv_consumption",
    "direct_own_pv_consumption",
    "local_storage_consumption",
    "own_storage_loading",
    "soc_kwh",
    "stored_pv_kwh",
    "pv_to_own_loads",
    "pv_to_own_storage",
    "storage_to_own_loads",
    "stored_pv_to_own_loads",
    "pv_to_grid",
    "grid_to_loads",
    "pv_to_neighbour_loads",
    "pv_from_neighbour_to_loads",
    "pv_to_neighbour_storage",
    "pv_from_neighbour_to_storage",
    "storage_to_neighbour_loads",
    "storage_from_neighbour_to_loads",
    "stored_pv_to_neighbour_loads",
    "stored_pv_from_neighbour_to_loads",
    "storage_to_grid",
    "grid_to_storage",
];

/// One CSV row per (step, building); pairwise flows are summed over partners.
pub fn write_ledger_csv<W: Write>(ledger: &FlowLedger, profiles: &ProfileSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LEDGER_CSV_HEADER)?;
    for (step, flows) in ledger.flows.iter().enumerate() {
        for b in 0..ledger.num_buildings {
            let c = ledger.cell(step, b);
            let values = [
                profiles.load(step, b),
                profiles.pv_at(step, b),
                c.energy_necessary_to_obtain,
                c.pv_energy_remaining,
                c.direct_local_pv_consumption,
                c.direct_own_pv_consumption,
                c.local_storage_consumption,
                c.own_storage_loading,
                c.soc_kwh,
                c.stored_pv_kwh,
                flows.pv_to_own_loads[b],
                flows.pv_to_own_storage[b],
                flows.storage_to_own_loads[b],
                flows.stored_pv_to_own_loads[b],
                flows.pv_to_grid[b],
                flows.grid_to_loads[b],
                flows.pv_to_neighbour_loads.sent(b),
                flows.pv_to_neighbour_loads.received(b),
                flows.pv_to_neighbour_storage.sent(b),
                flows.pv_to_neighbour_storage.received(b),
                flows.storage_to_neighbour_loads.sent(b),
                flows.storage_to_neighbour_loads.received(b),
                flows.stored_pv_to_neighbour_loads.sent(b),
                flows.stored_pv_to_neighbour_loads.received(b),
                flows.storage_to_grid[b],
                flows.grid_to_storage[b],
            ];
            let mut record = vec![step.to_string(), b.to_string()];
            record.extend(values.iter().map(|v| sig9(*v)));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScenarioId, ScenarioSpec};
    use crate::profiles::ProfileSet;

    fn spec(n: usize, capacity: f64) -> ScenarioSpec {
        let mut s = ScenarioSpec::preset(ScenarioId::S5b).with_buildings(n).with_days(1);
        s.storage_capacity_kwh = capacity;
        s
    }

    /// A full ranking for scenario 5b whose effective prefix is `prefix`.
    fn ranking(prefix: &[u8]) -> ActionRanking {
        let mut ids = prefix.to_vec();
        ids.push(1);
        ids.extend((2..=14).filter(|a| !prefix.contains(a)));
        ActionRanking::from_ids(&ids).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn single_building_pv_surplus() {
        let s = spec(1, 16.0);
        let (flows, state, cells) =
            step(&s, &ranking(&[2, 3, 5, 6]), &[5.0], &[3.0], &NeighbourhoodState::empty(1)).unwrap();
        assert_eq!(flows.pv_to_own_loads[0], 3.0);
        assert_eq!(flows.pv_to_own_storage[0], 2.0);
        assert_eq!(flows.pv_to_grid[0], 0.0);
        assert_eq!(flows.grid_to_loads[0], 0.0);
        assert_eq!(state.buildings[0].soc_kwh, 2.0);
        assert_eq!(cells[0].pv_energy_remaining, 0.0);
        assert_eq!(cells[0].energy_necessary_to_obtain, 0.0);
        assert_eq!(cells[0].direct_own_pv_consumption, 3.0);
        assert_eq!(cells[0].direct_local_pv_consumption, 3.0);
        assert_eq!(cells[0].own_storage_loading, 2.0);
    }

    #[test]
    fn neighbour_exchange_trace() {
        // A: PV 4 load 0; B: PV 0 load 3; prefix [2, 7, 5, 6].
        let s = spec(2, 0.0);
        let (flows, _, cells) = step(
            &s,
            &ranking(&[2, 7, 5, 6]),
            &[4.0, 0.0],
            &[0.0, 3.0],
            &NeighbourhoodState::empty(2),
        )
        .unwrap();
        assert_eq!(flows.pv_to_neighbour_loads.get(0, 1), 3.0);
        assert_eq!(flows.pv_from_neighbour_to_loads(1, 0), 3.0);
        assert_eq!(flows.pv_to_grid[0], 1.0);
        assert_eq!(flows.grid_to_loads, vec![0.0, 0.0]);
        assert_eq!(cells[1].direct_local_pv_consumption, 3.0);
        assert_eq!(cells[0].direct_own_pv_consumption, 0.0);
        assert_eq!(cells[0].direct_local_pv_consumption, 0.0);
    }

    #[test]
    fn storage_then_grid_covers_load() {
        let s = spec(1, 16.0);
        let (flows, state, cells) = step(
            &s,
            &ranking(&[2, 4, 6]),
            &[0.0],
            &[2.0],
            &NeighbourhoodState::from_soc(&[1.0]),
        )
        .unwrap();
        assert_eq!(flows.storage_to_own_loads[0], 1.0);
        assert_eq!(flows.grid_to_loads[0], 1.0);
        assert_eq!(cells[0].energy_necessary_to_obtain, 0.0);
        assert_eq!(cells[0].local_storage_consumption, 1.0);
        assert_eq!(state.buildings[0].soc_kwh, 0.0);
    }

    #[test]
    fn neighbour_storage_credits_the_receiver() {
        let s = spec(2, 16.0);
        let (flows, state, cells) = step(
            &s,
            &ranking(&[2, 9]),
            &[5.0, 0.0],
            &[1.0, 0.0],
            &NeighbourhoodState::from_soc(&[16.0, 10.0]),
        )
        .unwrap();
        assert_eq!(flows.pv_to_neighbour_storage.get(0, 1), 4.0);
        assert_eq!(state.buildings[1].soc_kwh, 14.0);
        assert_eq!(cells[1].own_storage_loading, 4.0);
        assert_eq!(cells[0].own_storage_loading, 0.0);

        let (flows, _, cells) = step(
            &s,
            &ranking(&[11]),
            &[0.0, 0.0],
            &[0.0, 3.0],
            &NeighbourhoodState::from_soc(&[2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(flows.storage_from_neighbour_to_loads(1, 0), 2.0);
        assert_eq!(cells[1].local_storage_consumption, 2.0);
        assert_eq!(cells[1].energy_necessary_to_obtain, 1.0);
    }

    #[test]
    fn grid_storage_actions() {
        let s = spec(1, 16.0);
        let (flows, state, _) =
            step(&s, &ranking(&[14]), &[0.0], &[0.0], &NeighbourhoodState::from_soc(&[6.0])).unwrap();
        assert_eq!(flows.grid_to_storage[0], 10.0);
        assert_eq!(state.buildings[0].soc_kwh, 16.0);
        let (flows, state, _) =
            step(&s, &ranking(&[13]), &[0.0], &[0.0], &NeighbourhoodState::from_soc(&[6.0])).unwrap();
        assert_eq!(flows.storage_to_grid[0], 6.0);
        assert_eq!(state.buildings[0].soc_kwh, 0.0);
    }

    #[test]
    fn partners_are_served_in_index_order() {
        // Building 0 has 2 kWh spare; buildings 1 and 2 each need 1.5.
        let s = spec(3, 0.0);
        let (flows, _, cells) = step(
            &s,
            &ranking(&[2, 7]),
            &[2.0, 0.0, 0.0],
            &[0.0, 1.5, 1.5],
            &NeighbourhoodState::empty(3),
        )
        .unwrap();
        assert_eq!(flows.pv_to_neighbour_loads.get(0, 1), 1.5);
        assert_eq!(flows.pv_to_neighbour_loads.get(0, 2), 0.5);
        assert_eq!(cells[2].energy_necessary_to_obtain, 1.0);
    }

    #[test]
    fn terminator_blocks_everything_after_it() {
        let s = spec(1, 16.0);
        let r = ActionRanking::from_ids(&[2, 1, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14]).unwrap();
        let (_, _, cells) = step(&s, &r, &[5.0], &[3.0], &NeighbourhoodState::empty(1)).unwrap();
        assert_eq!(cells[0].pv_energy_remaining, 2.0);
        assert_eq!(cells[0].soc_kwh, 0.0);
    }

    #[test]
    fn snapping_keeps_soc_on_bounds() {
        let s = spec(1, 0.3);
        let r = ranking(&[3, 4]);
        let mut state = NeighbourhoodState::empty(1);
        for _ in 0..3 {
            let (_, next, _) = step(&s, &r, &[0.1], &[0.0], &state).unwrap();
            state = next;
        }
        assert_eq!(state.buildings[0].soc_kwh, 0.3);
        for _ in 0..3 {
            let (_, next, _) = step(&s, &r, &[0.0], &[0.1], &state).unwrap();
            state = next;
        }
        assert_eq!(state.buildings[0].soc_kwh, 0.0);
    }

    #[test]
    fn simulate_rejects_dimension_mismatch() {
        let s = ScenarioSpec::preset(ScenarioId::S1).with_days(2);
        let profiles = ProfileSet::generate(1, 6, 3).unwrap();
        let r: ActionRanking = "2 5 6 1".parse().unwrap();
        assert!(matches!(simulate(&s, &r, &profiles, None), Err(Error::InvalidArgument(_))));
        let profiles = ProfileSet::generate(1, 5, 2).unwrap();
        assert!(matches!(simulate(&s, &r, &profiles, None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn simulate_rejects_invalid_ranking() {
        let s = ScenarioSpec::preset(ScenarioId::S1).with_days(1);
        let profiles = ProfileSet::generate(1, 6, 1).unwrap();
        let r: ActionRanking = "2 7 6 1".parse().unwrap();
        assert!(simulate(&s, &r, &profiles, None).is_err());
    }

    #[test]
    fn zero_profiles_move_nothing() {
        let s = ScenarioSpec::preset(ScenarioId::S3a).with_days(2);
        let profiles =
            ProfileSet::from_values(24, vec![vec![0.0; 48]; 6], vec![vec![0.0; 48]; 6]).unwrap();
        let r: ActionRanking = "2 3 4 6 5 1".parse().unwrap();
        let soc = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ledger = simulate(&s, &r, &profiles, Some(&soc)).unwrap();
        for step in 0..ledger.num_steps() {
            for (b, &want) in soc.iter().enumerate() {
                let c = ledger.cell(step, b);
                assert_eq!(c.soc_kwh, want);
                assert_eq!(
                    (c.energy_necessary_to_obtain, c.pv_energy_remaining, c.direct_local_pv_consumption,
                     c.direct_own_pv_consumption, c.local_storage_consumption, c.own_storage_loading),
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
                );
            }
        }
    }

    #[test]
    fn grid_sinks_clear_both_gates() {
        let s = ScenarioSpec::preset(ScenarioId::S1).with_days(3);
        let profiles = ProfileSet::generate(11, 6, 3).unwrap();
        let ledger = simulate(&s, &"2 5 6 1".parse().unwrap(), &profiles, None).unwrap();
        assert!(ledger.cells.iter().all(|c| c.pv_energy_remaining == 0.0 && c.energy_necessary_to_obtain == 0.0));

        let ledger = simulate(&s, &"2 1 5 6".parse().unwrap(), &profiles, None).unwrap();
        for step in 0..ledger.num_steps() {
            for b in 0..6 {
                let surplus = profiles.pv_at(step, b) - profiles.load(step, b);
                if surplus > 0.0 {
                    assert!(close(ledger.cell(step, b).pv_energy_remaining, surplus));
                }
            }
        }
    }

    #[test]
    fn ledger_csv_has_one_row_per_cell() {
        let s = ScenarioSpec::preset(ScenarioId::S2).with_days(1);
        let profiles = ProfileSet::generate(2, 6, 1).unwrap();
        let ledger = simulate(&s, &"2 7 8 6 5 1".parse().unwrap(), &profiles, None).unwrap();
        let mut buf = Vec::new();
        write_ledger_csv(&ledger, &profiles, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 24 * 6);
        assert!(text.starts_with("step,building,load_kwh"));
    }

    #[test]
    fn grid_charged_energy_earns_no_storage_credit() {
        let s = spec(1, 16.0);
        let (flows, state, cells) =
            step(&s, &ranking(&[14]), &[0.0], &[0.0], &NeighbourhoodState::from_parts(&[4.0], &[4.0])).unwrap();
        assert_eq!(flows.grid_to_storage[0], 12.0);
        assert_eq!(cells[0].own_storage_loading, 0.0);
        assert_eq!(state.buildings[0].stored_pv_kwh, 4.0);

        let (flows, state, cells) = step(&s, &ranking(&[4, 6]), &[0.0], &[6.0], &state).unwrap();
        assert_eq!(flows.storage_to_own_loads[0], 6.0);
        assert_eq!(flows.stored_pv_to_own_loads[0], 4.0);
        assert_eq!(cells[0].local_storage_consumption, 4.0);
        assert_eq!(state.buildings[0].soc_kwh, 10.0);
        assert_eq!(state.buildings[0].stored_pv_kwh, 0.0);
    }

    #[test]
    fn dumping_storage_clears_pv_origin() {
        let s = spec(1, 16.0);
        let (_, state, cells) =
            step(&s, &ranking(&[3, 13]), &[5.0], &[0.0], &NeighbourhoodState::empty(1)).unwrap();
        assert_eq!(cells[0].own_storage_loading, 5.0);
        assert_eq!(state.buildings[0], crate::model::BuildingState::default());
    }

    #[test]
    fn step_rejects_inconsistent_provenance() {
        let s = spec(1, 16.0);
        let state = NeighbourhoodState::from_parts(&[2.0], &[3.0]);
        assert!(step(&s, &ranking(&[2]), &[0.0], &[0.0], &state).is_err());
    }

    #[test]
    fn swapping_prefix_actions_changes_the_ledger() {
        let s = spec(2, 16.0);
        let state = NeighbourhoodState::empty(2);
        let a = step(&s, &ranking(&[3, 7, 2]), &[5.0, 0.0], &[2.0, 2.0], &state).unwrap();
        let b = step(&s, &ranking(&[2, 7, 3]), &[5.0, 0.0], &[2.0, 2.0], &state).unwrap();
        assert_ne!(a.2, b.2);
        assert_eq!(a.2[0].own_storage_loading, 5.0);
        assert_eq!(b.2[0].own_storage_loading, 1.0);
    }

    #[test]
    fn scenario_one_full_coverage_audit() {
        let s = ScenarioSpec::preset(ScenarioId::S1).with_days(4);
        for seed in 0..5 {
            let profiles = ProfileSet::generate(seed, 6, 4).unwrap();
            let ledger = simulate(&s, &"2 5 6 1".parse().unwrap(), &profiles, None).unwrap();
            for step in 0..ledger.num_steps() {
                for b in 0..6 {
                    let c = ledger.cell(step, b);
                    let (pv, load) = (profiles.pv_at(step, b), profiles.load(step, b));
                    assert_eq!((c.pv_energy_remaining, c.energy_necessary_to_obtain), (0.0, 0.0));
                    assert_eq!(c.direct_own_pv_consumption, pv.min(load));
                    assert_eq!(ledger.flows[step].pv_to_grid[b], pv - pv.min(load));
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use proptest::sample::subsequence;

        const TOL: f64 = 1e-9;

        fn full_ranking() -> impl Strategy<Value = ActionRanking> {
            Just((1..=14u8).collect::<Vec<_>>())
                .prop_shuffle()
                .prop_map(|ids| ActionRanking::from_ids(&ids).unwrap())
        }

        #[derive(Debug, Clone)]
        struct Case {
            capacity: f64,
            pv: Vec<f64>,
            load: Vec<f64>,
            state: NeighbourhoodState,
        }

        fn case() -> impl Strategy<Value = Case> {
            (1usize..=5, 0.0f64..20.0).prop_flat_map(|(n, capacity)| {
                (
                    prop::collection::vec(0.0f64..10.0, n),
                    prop::collection::vec(0.0f64..10.0, n),
                    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), n),
                )
                    .prop_map(move |(pv, load, fill)| {
                        let soc: Vec<f64> = fill.iter().map(|(f, _)| f * capacity).collect();
                        let stored: Vec<f64> = fill.iter().zip(&soc).map(|((_, g), s)| g * s).collect();
                        Case { capacity, pv, load, state: NeighbourhoodState::from_parts(&soc, &stored) }
                    })
            })
        }

        fn run(c: &Case, r: &ActionRanking) -> (StepFlows, NeighbourhoodState, Vec<CellRecord>) {
            step(&spec(c.pv.len(), c.capacity), r, &c.pv, &c.load, &c.state).unwrap()
        }

        fn reward_totals(cells: &[CellRecord]) -> [f64; 4] {
            cells.iter().fold([0.0; 4], |t, c| {
                [
                    t[0] + c.direct_local_pv_consumption,
                    t[1] + c.direct_own_pv_consumption,
                    t[2] + c.local_storage_consumption,
                    t[3] + c.own_storage_loading,
                ]
            })
        }

        /// Rankings whose effective prefix is `prefix`, padded from 5b.
        fn with_prefix(prefix: &[Action]) -> ActionRanking {
            ranking(&prefix.iter().map(|a| a.id()).collect::<Vec<_>>())
        }

        proptest! {
            #[test]
            fn balances_hold(c in case(), r in full_ranking()) {
                let (flows, next, cells) = run(&c, &r);
                audit_step(&c.pv, &c.load, &c.state.soc(), c.capacity, &flows, &cells, TOL).unwrap();
                prop_assert_eq!(next.soc(), cells.iter().map(|c| c.soc_kwh).collect::<Vec<_>>());
                for (b, cell) in cells.iter().enumerate() {
                    prop_assert!(flows.stored_pv_to_own_loads[b] <= flows.storage_to_own_loads[b]);
                    prop_assert!(cell.local_storage_consumption <= flows.storage_to_own_loads[b]
                        + flows.storage_to_neighbour_loads.received(b) + TOL);
                }
            }

            #[test]
            fn multi_step_storage_stays_in_bounds(c in case(), r in full_ranking(), steps in 1usize..12) {
                let s = spec(c.pv.len(), c.capacity);
                let mut state = c.state.clone();
                for k in 0..steps {
                    let scale = (k % 3) as f64 * 0.5;
                    let pv: Vec<f64> = c.pv.iter().map(|v| v * scale).collect();
                    let (flows, next, cells) = step(&s, &r, &pv, &c.load, &state).unwrap();
                    audit_step(&pv, &c.load, &state.soc(), c.capacity, &flows, &cells, TOL).unwrap();
                    state = next;
                }
            }

            #[test]
            fn remaining_resources_never_grow(c in case(), r in full_ranking()) {
                let prefix = r.effective_prefix().unwrap().to_vec();
                let mut last: Option<Vec<CellRecord>> = None;
                for k in 0..=prefix.len() {
                    let (_, _, cells) = run(&c, &with_prefix(&prefix[..k]));
                    if let Some(prev) = &last {
                        for (a, b) in prev.iter().zip(&cells) {
                            prop_assert!(b.pv_energy_remaining <= a.pv_energy_remaining);
                            prop_assert!(b.energy_necessary_to_obtain <= a.energy_necessary_to_obtain);
                        }
                    }
                    last = Some(cells);
                }
            }

            #[test]
            fn earlier_terminator_never_adds_reward(c in case(), r in full_ranking()) {
                let prefix = r.effective_prefix().unwrap().to_vec();
                let full = reward_totals(&run(&c, &r).2);
                for k in 0..prefix.len() {
                    let cut = reward_totals(&run(&c, &with_prefix(&prefix[..k])).2);
                    for (x, y) in cut.iter().zip(&full) {
                        prop_assert!(*x <= *y);
                    }
                }
            }

            #[test]
            fn storage_free_terminator_dominance_over_horizon(
                ids in subsequence(vec![2u8, 5, 6, 7, 8], 0..=5).prop_shuffle(),
                seed in 0u64..1000,
                cut in 0usize..6,
            ) {
                let s = ScenarioSpec::preset(ScenarioId::S2).with_days(1);
                let profiles = ProfileSet::generate(seed, 6, 1).unwrap();
                let prefix: Vec<Action> = ids.iter().map(|i| Action::from_id(*i).unwrap()).collect();
                let cut = cut.min(prefix.len());
                let totals = |p: &[Action]| {
                    let mut ledger = FlowLedger::with_capacity(6, 24);
                    simulate_prefix(&s, p, &profiles, &[0.0; 6], &mut ledger).unwrap();
                    reward_totals(&ledger.cells)
                };
                let (full, short) = (totals(&prefix), totals(&prefix[..cut]));
                for (x, y) in short.iter().zip(&full) {
                    prop_assert!(*x <= *y);
                }
            }

            #[test]
            fn mirrored_pairwise_actions_agree_in_aggregate(
                ids in subsequence(vec![2u8, 5, 6, 7], 1..=4).prop_shuffle(),
                pv in prop::collection::vec(0.0f64..10.0, 4),
                load in prop::collection::vec(0.0f64..10.0, 4),
            ) {
                let s = spec(4, 0.0);
                let state = NeighbourhoodState::empty(4);
                let mirrored: Vec<u8> = ids.iter().map(|&i| if i == 7 { 8 } else { i }).collect();
                let (fa, _, ca) = step(&s, &ranking(&ids), &pv, &load, &state).unwrap();
                let (fb, _, cb) = step(&s, &ranking(&mirrored), &pv, &load, &state).unwrap();
                let sum = |v: &[f64]| v.iter().sum::<f64>();
                prop_assert!((fa.pv_to_neighbour_loads.total() - fb.pv_to_neighbour_loads.total()).abs() < TOL);
                prop_assert!((sum(&fa.pv_to_grid) - sum(&fb.pv_to_grid)).abs() < TOL);
                prop_assert!((sum(&fa.grid_to_loads) - sum(&fb.grid_to_loads)).abs() < TOL);
                let (ra, rb) = (reward_totals(&ca), reward_totals(&cb));
                for (x, y) in ra.iter().zip(&rb) {
                    prop_assert!((x - y).abs() < TOL);
                }
            }
        }
    }
}
