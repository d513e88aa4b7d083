//! Shared domain vocabulary: energy-transfer actions, scenario presets,
//! action rankings and the per-building storage state.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One endpoint of an energy transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    OwnPv,
    OwnStorage,
    NeighbourPv,
    NeighbourStorage,
    Grid,
    OwnLoads,
    NeighbourLoads,
}

/// The fourteen supported energy-transfer actions.
///
/// Discriminants are the public action ids used in rankings, reports and
/// config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Action {
    /// Terminator: every action ranked after it is ignored.
    DoNoMoreActivity = 1,
    OwnPvToOwnLoads = 2,
    OwnPvToOwnStorage = 3,
    OwnStorageToOwnLoads = 4,
    OwnPvToGrid = 5,
    GridToOwnLoads = 6,
    OwnPvToNeighbourLoads = 7,
    NeighbourPvToOwnLoads = 8,
    OwnPvToNeighbourStorage = 9,
    NeighbourPvToOwnStorage = 10,
    OwnStorageToNeighbourLoads = 11,
    NeighbourStorageToOwnLoads = 12,
    OwnStorageToGrid = 13,
    GridToOwnStorage = 14,
}

impl Action {
    pub const ALL: [Action; 14] = [
        Action::DoNoMoreActivity,
        Action::OwnPvToOwnLoads,
        Action::OwnPvToOwnStorage,
        Action::OwnStorageToOwnLoads,
        Action::OwnPvToGrid,
        Action::GridToOwnLoads,
        Action::OwnPvToNeighbourLoads,
        Action::NeighbourPvToOwnLoads,
        Action::OwnPvToNeighbourStorage,
        Action::NeighbourPvToOwnStorage,
        Action::OwnStorageToNeighbourLoads,
        Action::NeighbourStorageToOwnLoads,
        Action::OwnStorageToGrid,
        Action::GridToOwnStorage,
    ];

    pub const TERMINATOR: Action = Action::DoNoMoreActivity;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Action> {
        match id {
            1..=14 => Ok(Action::ALL[usize::from(id) - 1]),
            _ => Err(Error::InvalidArgument(format!(
                "action id {id} is outside 1..=14"
            ))),
        }
    }

    /// Source and sink of the transfer, `None` for the terminator.
    pub fn endpoints(self) -> Option<(Endpoint, Endpoint)> {
        use Endpoint::*;
        Some(match self {
            Action::DoNoMoreActivity => return None,
            Action::OwnPvToOwnLoads => (OwnPv, OwnLoads),
            Action::OwnPvToOwnStorage => (OwnPv, OwnStorage),
            Action::OwnStorageToOwnLoads => (OwnStorage, OwnLoads),
            Action::OwnPvToGrid => (OwnPv, Grid),
            Action::GridToOwnLoads => (Grid, OwnLoads),
            Action::OwnPvToNeighbourLoads => (OwnPv, NeighbourLoads),
            Action::NeighbourPvToOwnLoads => (NeighbourPv, OwnLoads),
            Action::OwnPvToNeighbourStorage => (OwnPv, NeighbourStorage),
            Action::NeighbourPvToOwnStorage => (NeighbourPv, OwnStorage),
            Action::OwnStorageToNeighbourLoads => (OwnStorage, NeighbourLoads),
            Action::NeighbourStorageToOwnLoads => (NeighbourStorage, OwnLoads),
            Action::OwnStorageToGrid => (OwnStorage, Grid),
            Action::GridToOwnStorage => (Grid, OwnStorage),
        })
    }

    /// True when the action touches a battery.
    pub fn uses_storage(self) -> bool {
        matches!(
            self.endpoints(),
            Some((Endpoint::OwnStorage | Endpoint::NeighbourStorage, _))
                | Some((_, Endpoint::OwnStorage | Endpoint::NeighbourStorage))
        )
    }

    /// True for the actions exchanging energy between two buildings.
    pub fn is_pairwise(self) -> bool {
        (7..=12).contains(&self.id())
    }

    pub fn description(self) -> &'static str {
        match self {
            Action::DoNoMoreActivity => "Do no more activity",
            Action::OwnPvToOwnLoads => "Own PV energy to own loads",
            Action::OwnPvToOwnStorage => "Own PV energy to own storage",
            Action::OwnStorageToOwnLoads => "Own stored energy to own loads",
            Action::OwnPvToGrid => "Own PV energy to grid",
            Action::GridToOwnLoads => "Grid energy to own loads",
            Action::OwnPvToNeighbourLoads => "Own PV energy to neighbour loads",
            Action::NeighbourPvToOwnLoads => "Neighbour PV energy to own loads",
            Action::OwnPvToNeighbourStorage => "Own PV energy to neighbour storage",
            Action::NeighbourPvToOwnStorage => "Neighbour PV energy to own storage",
            Action::OwnStorageToNeighbourLoads => "Own stored energy to neighbour loads",
            Action::NeighbourStorageToOwnLoads => "Neighbour stored energy to own loads",
            Action::OwnStorageToGrid => "Own stored energy to grid",
            Action::GridToOwnStorage => "Grid energy to own storage",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.id())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let id = u8::deserialize(deserializer)?;
        Action::from_id(id).map_err(serde::de::Error::custom)
    }
}

/// The eight benchmark scenario labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "1")]
    S1,
    #[serde(rename = "2")]
    S2,
    #[serde(rename = "3a")]
    S3a,
    #[serde(rename = "3b")]
    S3b,
    #[serde(rename = "4a")]
    S4a,
    #[serde(rename = "4b")]
    S4b,
    #[serde(rename = "5a")]
    S5a,
    #[serde(rename = "5b")]
    S5b,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 8] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3a,
        ScenarioId::S3b,
        ScenarioId::S4a,
        ScenarioId::S4b,
        ScenarioId::S5a,
        ScenarioId::S5b,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioId::S1 => "1",
            ScenarioId::S2 => "2",
            ScenarioId::S3a => "3a",
            ScenarioId::S3b => "3b",
            ScenarioId::S4a => "4a",
            ScenarioId::S4b => "4b",
            ScenarioId::S5a => "5a",
            ScenarioId::S5b => "5b",
        }
    }

    /// Selectable action ids for the preset, ascending.
    fn action_ids(self) -> &'static [u8] {
        match self {
            ScenarioId::S1 => &[1, 2, 5, 6],
            ScenarioId::S2 => &[1, 2, 5, 6, 7, 8],
            ScenarioId::S3a => &[1, 2, 3, 4, 5, 6],
            ScenarioId::S3b => &[1, 2, 3, 4, 5, 6, 13, 14],
            ScenarioId::S4a => &[1, 2, 3, 4, 5, 6, 7, 8],
            ScenarioId::S4b => &[1, 2, 3, 4, 5, 6, 7, 8, 13, 14],
            ScenarioId::S5a => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
            ScenarioId::S5b => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
        }
    }

    fn has_storage(self) -> bool {
        !matches!(self, ScenarioId::S1 | ScenarioId::S2)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario label `{s}`")))
    }
}

pub const DEFAULT_BUILDINGS: usize = 6;
pub const DEFAULT_DAYS: usize = 30;
pub const DEFAULT_STEPS_PER_DAY: usize = 24;
pub const DEFAULT_STORAGE_KWH: f64 = 16.0;

/// A benchmark scenario: which actions may be ranked plus the dimensions of
/// the simulated neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: ScenarioId,
    /// Ascending and duplicate free.
    pub selectable_actions: Vec<Action>,
    pub num_buildings: usize,
    pub storage_capacity_kwh: f64,
    pub horizon_days: usize,
    pub steps_per_day: usize,
}

/// Returns the preset for a scenario label such as `"3a"`.
pub fn scenario_preset(label: &str) -> Result<ScenarioSpec> {
    Ok(ScenarioSpec::preset(label.parse()?))
}

impl ScenarioSpec {
    pub fn preset(id: ScenarioId) -> ScenarioSpec {
        let selectable_actions = id
            .action_ids()
            .iter()
            .map(|&a| Action::from_id(a).expect("preset ids are in range"))
            .collect();
        ScenarioSpec {
            scenario_id: id,
            selectable_actions,
            num_buildings: DEFAULT_BUILDINGS,
            storage_capacity_kwh: if id.has_storage() {
                DEFAULT_STORAGE_KWH
            } else {
                0.0
            },
            horizon_days: DEFAULT_DAYS,
            steps_per_day: DEFAULT_STEPS_PER_DAY,
        }
    }

    pub fn with_days(mut self, days: usize) -> Self {
        self.horizon_days = days;
        self
    }

    pub fn with_buildings(mut self, num_buildings: usize) -> Self {
        self.num_buildings = num_buildings;
        self
    }

    pub fn num_actions(&self) -> usize {
        self.selectable_actions.len()
    }

    pub fn num_steps(&self) -> usize {
        self.horizon_days * self.steps_per_day
    }

    pub fn is_selectable(&self, action: Action) -> bool {
        self.selectable_actions.contains(&action)
    }

    /// Checks the structural invariants every spec must satisfy.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_buildings == 0 {
            return invalid("num_buildings must be at least 1".into());
        }
        if self.horizon_days == 0 || self.steps_per_day == 0 {
            return invalid("horizon_days and steps_per_day must be at least 1".into());
        }
        if !(self.storage_capacity_kwh >= 0.0 && self.storage_capacity_kwh.is_finite()) {
            return invalid(format!(
                "storage capacity {} is not a finite non-negative number",
                self.storage_capacity_kwh
            ));
        }
        let set: BTreeSet<Action> = self.selectable_actions.iter().copied().collect();
        if set.len() != self.selectable_actions.len() {
            return invalid("selectable actions contain duplicates".into());
        }
        for required in [Action::DoNoMoreActivity, Action::OwnPvToOwnLoads] {
            if !set.contains(&required) {
                return invalid(format!("selectable actions must contain action {required}"));
            }
        }
        if self.storage_capacity_kwh == 0.0 {
            if let Some(a) = set.iter().find(|a| a.uses_storage()) {
                return invalid(format!(
                    "storage action {a} is selectable but storage capacity is 0"
                ));
            }
        }
        Ok(())
    }
}

/// A priority order over a scenario's selectable actions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionRanking(Vec<Action>);

impl ActionRanking {
    /// Wraps an order without validating it; see [`validate_ranking`].
    pub fn new(order: Vec<Action>) -> Self {
        ActionRanking(order)
    }

    pub fn from_ids(ids: &[u8]) -> Result<Self> {
        ids.iter()
            .map(|&id| Action::from_id(id))
            .collect::<Result<Vec<_>>>()
            .map(ActionRanking)
    }

    pub fn order(&self) -> &[Action] {
        &self.0
    }

    pub fn ids(&self) -> Vec<u8> {
        self.0.iter().map(|a| a.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The actions that dispatch actually executes: everything strictly
    /// before the terminator.
    pub fn effective_prefix(&self) -> Result<&[Action]> {
        effective_prefix(&self.0)
    }
}

impl fmt::Display for ActionRanking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for ActionRanking {
    type Err = Error;

    /// Parses whitespace- or comma-separated action ids, e.g. `"2 5 6 1"`.
    fn from_str(s: &str) -> Result<Self> {
        let ids = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<u8>()
                    .map_err(|_| Error::InvalidArgument(format!("`{t}` is not an action id")))
            })
            .collect::<Result<Vec<_>>>()?;
        ActionRanking::from_ids(&ids)
    }
}

/// Slice form of [`ActionRanking::effective_prefix`].
pub fn effective_prefix(order: &[Action]) -> Result<&[Action]> {
    order
        .iter()
        .position(|&a| a == Action::TERMINATOR)
        .map(|pos| &order[..pos])
        .ok_or_else(|| Error::InvariantViolation("ranking has no terminator (action 1)".into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankingViolation {
    Duplicate(Action),
    Foreign(Action),
    Missing(Action),
    MissingTerminator,
}

impl fmt::Display for RankingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingViolation::Duplicate(a) => write!(f, "duplicate({a})"),
            RankingViolation::Foreign(a) => write!(f, "foreign({a})"),
            RankingViolation::Missing(a) => write!(f, "missing({a})"),
            RankingViolation::MissingTerminator => f.write_str("missing terminator"),
        }
    }
}

/// Lists every way `ranking` fails to be a permutation of the scenario's
/// selectable actions. An empty list means the ranking is valid.
pub fn validate_ranking(ranking: &ActionRanking, spec: &ScenarioSpec) -> Vec<RankingViolation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for &a in ranking.order() {
        if !spec.is_selectable(a) {
            violations.push(RankingViolation::Foreign(a));
        } else if !seen.insert(a) {
            violations.push(RankingViolation::Duplicate(a));
        }
    }
    if !ranking.order().contains(&Action::TERMINATOR) {
        violations.push(RankingViolation::MissingTerminator);
    }
    for &a in &spec.selectable_actions {
        if a != Action::TERMINATOR && !ranking.order().contains(&a) {
            violations.push(RankingViolation::Missing(a));
        }
    }
    violations
}

/// [`validate_ranking`] as a `Result`, for callers that need a valid ranking.
pub fn ensure_valid_ranking(ranking: &ActionRanking, spec: &ScenarioSpec) -> Result<()> {
    let violations = validate_ranking(ranking, spec);
    if violations.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        Err(Error::InvariantViolation(format!(
            "ranking [{ranking}] is invalid for scenario {}: {}",
            spec.scenario_id,
            list.join(", ")
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildingState {
    pub soc_kwh: f64,
    /// Part of `soc_kwh` that was charged from PV.
    pub stored_pv_kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodState {
    pub buildings: Vec<BuildingState>,
}

impl NeighbourhoodState {
    /// All storages empty.
    pub fn empty(num_buildings: usize) -> Self {
        NeighbourhoodState {
            buildings: vec![BuildingState::default(); num_buildings],
        }
    }

    /// Storages holding `soc` kWh each, all of it PV-origin.
    pub fn from_soc(soc: &[f64]) -> Self {
        Self::from_parts(soc, soc)
    }

    pub fn from_parts(soc: &[f64], stored_pv: &[f64]) -> Self {
        NeighbourhoodState {
            buildings: soc
                .iter()
                .zip(stored_pv)
                .map(|(&soc_kwh, &stored_pv_kwh)| BuildingState { soc_kwh, stored_pv_kwh })
                .collect(),
        }
    }

    pub fn soc(&self) -> Vec<f64> {
        self.buildings.iter().map(|b| b.soc_kwh).collect()
    }

    pub fn stored_pv(&self) -> Vec<f64> {
        self.buildings.iter().map(|b| b.stored_pv_kwh).collect()
    }
}
