//! Hourly load and PV time series per building.
//!
//! The synthetic generators draw all randomness from a [`ChaCha8Rng`] seeded
//! with the caller's 64-bit seed, so a (seed, buildings, days) triple always
//! yields bit-identical profiles. Both generators normalize every building to
//! a mean of [`TARGET_DAILY_KWH`] per day over the horizon.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_DAILY_KWH: f64 = 16.0;
pub const STEPS_PER_DAY: usize = 24;
/// Seed of the default generated profile set.
pub const DEFAULT_PROFILE_SEED: u64 = 42;

/// Share of the daily load drawn as a flat base load.
const BASE_LOAD_SHARE: f64 = 0.3;
/// Split of the remaining (peak) load energy between morning and evening.
const MORNING_SHARE: f64 = 0.35;
const MORNING_CENTRE_H: f64 = 7.5;
const MORNING_WIDTH_H: f64 = 1.0;
const EVENING_CENTRE_H: f64 = 19.5;
const EVENING_WIDTH_H: f64 = 1.5;
const SUNRISE_H: f64 = 6.0;
const SUNSET_H: f64 = 18.0;
const PV_AMPLITUDE_RANGE: (f64, f64) = (0.3, 1.3);
const PEAK_JITTER_RANGE: (f64, f64) = (0.6, 1.4);
const PEAK_SHIFT_H: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Load,
    Pv,
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileKind::Load => "load",
            ProfileKind::Pv => "pv",
        })
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "load" => Ok(ProfileKind::Load),
            "pv" => Ok(ProfileKind::Pv),
            other => Err(Error::InvalidArgument(format!(
                "profile kind `{other}` is neither `load` nor `pv`"
            ))),
        }
    }
}

/// Energy per timestep (kWh) for one building.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub building_id: usize,
    pub kind: ProfileKind,
    pub steps_per_day: usize,
    pub values: Vec<f64>,
}

impl EnergyProfile {
    pub fn days(&self) -> usize {
        self.values.len() / self.steps_per_day
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean_daily(&self) -> f64 {
        self.total() / self.days() as f64
    }
}

/// Scales `profile` so that its mean daily energy equals `target_daily_kwh`.
pub fn normalize(profile: &EnergyProfile, target_daily_kwh: f64) -> Result<EnergyProfile> {
    let total = profile.total();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "{} profile of building {} has total energy {total}; cannot normalize",
            profile.kind, profile.building_id
        )));
    }
    let days = profile.days();
    if days == 0 || !profile.values.len().is_multiple_of(profile.steps_per_day) {
        return Err(Error::InvalidArgument(format!(
            "profile length {} is not a whole number of {}-step days",
            profile.values.len(),
            profile.steps_per_day
        )));
    }
    let scale = target_daily_kwh * days as f64 / total;
    Ok(EnergyProfile {
        values: profile.values.iter().map(|v| v * scale).collect(),
        ..profile.clone()
    })
}

/// Load and PV profiles for every building of a neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub steps_per_day: usize,
    pub loads: Vec<EnergyProfile>,
    pub pv: Vec<EnergyProfile>,
}

impl ProfileSet {
    /// Generated loads and PV, both normalized to 16 kWh per building and day.
    pub fn generate(seed: u64, num_buildings: usize, days: usize) -> Result<ProfileSet> {
        Ok(ProfileSet {
            steps_per_day: STEPS_PER_DAY,
            loads: generate_loads(seed, num_buildings, days)?,
            // Offset the PV stream so load and PV draws are independent.
            pv: generate_pv(seed ^ 0x9E37_79B9_7F4A_7C15, num_buildings, days)?,
        })
    }

    /// Builds a set from raw per-building series (outer index = building).
    pub fn from_values(steps_per_day: usize, loads: Vec<Vec<f64>>, pv: Vec<Vec<f64>>) -> Result<Self> {
        let wrap = |kind, series: Vec<Vec<f64>>| {
            series
                .into_iter()
                .enumerate()
                .map(|(building_id, values)| EnergyProfile {
                    building_id,
                    kind,
                    steps_per_day,
                    values,
                })
                .collect()
        };
        let set = ProfileSet {
            steps_per_day,
            loads: wrap(ProfileKind::Load, loads),
            pv: wrap(ProfileKind::Pv, pv),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn num_buildings(&self) -> usize {
        self.loads.len()
    }

    pub fn num_steps(&self) -> usize {
        self.loads.first().map_or(0, |p| p.values.len())
    }

    pub fn days(&self) -> usize {
        self.num_steps() / self.steps_per_day
    }

    pub fn load(&self, step: usize, building: usize) -> f64 {
        self.loads[building].values[step]
    }

    pub fn pv_at(&self, step: usize, building: usize) -> f64 {
        self.pv[building].values[step]
    }

    /// Truncates every series to the first `days` days.
    pub fn truncated(&self, days: usize) -> Result<ProfileSet> {
        if days == 0 || days > self.days() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-day profile set to {days} days",
                self.days()
            )));
        }
        let len = days * self.steps_per_day;
        let cut = |ps: &[EnergyProfile]| {
            ps.iter()
                .map(|p| EnergyProfile {
                    values: p.values[..len].to_vec(),
                    ..p.clone()
                })
                .collect()
        };
        Ok(ProfileSet {
            steps_per_day: self.steps_per_day,
            loads: cut(&self.loads),
            pv: cut(&self.pv),
        })
    }

    /// Checks shared length, whole days, non-negativity and matching building ids.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.steps_per_day == 0 {
            return invalid("steps_per_day must be positive".into());
        }
        if self.loads.is_empty() || self.loads.len() != self.pv.len() {
            return invalid(format!(
                "profile set has {} load and {} pv profiles",
                self.loads.len(),
                self.pv.len()
            ));
        }
        let len = self.num_steps();
        if len == 0 || !len.is_multiple_of(self.steps_per_day) {
            return invalid(format!(
                "profile length {len} is not a positive whole number of {}-step days",
                self.steps_per_day
            ));
        }
        for (expected_kind, series) in [(ProfileKind::Load, &self.loads), (ProfileKind::Pv, &self.pv)] {
            for (b, p) in series.iter().enumerate() {
                if p.building_id != b || p.kind != expected_kind {
                    return invalid(format!(
                        "profile at position {b} is {} of building {}",
                        p.kind, p.building_id
                    ));
                }
                if p.steps_per_day != self.steps_per_day {
                    return invalid("mixed profile resolutions".into());
                }
                if p.values.len() != len {
                    return invalid(format!(
                        "{} profile of building {b} has {} steps, expected {len}",
                        p.kind,
                        p.values.len()
                    ));
                }
                if let Some(i) = p.values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    return invalid(format!(
                        "{} profile of building {b} has invalid value {} at step {i}",
                        p.kind, p.values[i]
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_dims(num_buildings: usize, days: usize) -> Result<()> {
    if num_buildings == 0 || days == 0 {
        return Err(Error::InvalidArgument(format!(
            "profile generation needs at least one building and one day (got {num_buildings} buildings, {days} days)"
        )));
    }
    Ok(())
}

fn hour_of(step: usize) -> f64 {
    (step as f64 + 0.5) * 24.0 / STEPS_PER_DAY as f64
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let z = (hour - centre) / width;
    (-0.5 * z * z).exp()
}

/// Per-building household load: a flat base plus morning and evening peaks
/// whose height and timing are jittered per (building, day).
pub fn generate_loads(seed: u64, num_buildings: usize, days: usize) -> Result<Vec<EnergyProfile>> {
    check_dims(num_buildings, days)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let hours: Vec<f64> = (0..STEPS_PER_DAY).map(hour_of).collect();
    let base = BASE_LOAD_SHARE * TARGET_DAILY_KWH / STEPS_PER_DAY as f64;
    let peak_energy = (1.0 - BASE_LOAD_SHARE) * TARGET_DAILY_KWH;

    (0..num_buildings)
        .map(|building_id| {
            let mut values = Vec::with_capacity(days * STEPS_PER_DAY);
            for _ in 0..days {
                let morning_gain = rng.random_range(PEAK_JITTER_RANGE.0..PEAK_JITTER_RANGE.1);
                let evening_gain = rng.random_range(PEAK_JITTER_RANGE.0..PEAK_JITTER_RANGE.1);
                let morning_centre = MORNING_CENTRE_H + rng.random_range(-PEAK_SHIFT_H..PEAK_SHIFT_H);
                let evening_centre = EVENING_CENTRE_H + rng.random_range(-PEAK_SHIFT_H..PEAK_SHIFT_H);

                let morning: Vec<f64> = hours
                    .iter()
                    .map(|&h| bump(h, morning_centre, MORNING_WIDTH_H))
                    .collect();
                let evening: Vec<f64> = hours
                    .iter()
                    .map(|&h| bump(h, evening_centre, EVENING_WIDTH_H))
                    .collect();
                let morning_sum: f64 = morning.iter().sum();
                let evening_sum: f64 = evening.iter().sum();

                for (m, e) in morning.iter().zip(&evening) {
                    values.push(
                        base + morning_gain * MORNING_SHARE * peak_energy * m / morning_sum
                            + evening_gain * (1.0 - MORNING_SHARE) * peak_energy * e / evening_sum,
                    );
                }
            }
            normalize(
                &EnergyProfile {
                    building_id,
                    kind: ProfileKind::Load,
                    steps_per_day: STEPS_PER_DAY,
                    values,
                },
                TARGET_DAILY_KWH,
            )
        })
        .collect()
}

/// A half-cosine daytime PV curve with a random amplitude per day, shared by
/// every building.
pub fn generate_pv(seed: u64, num_buildings: usize, days: usize) -> Result<Vec<EnergyProfile>> {
    check_dims(num_buildings, days)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let shape: Vec<f64> = (0..STEPS_PER_DAY)
        .map(|s| {
            let h = hour_of(s);
            if (SUNRISE_H..=SUNSET_H).contains(&h) {
                (PI * (h - SUNRISE_H) / (SUNSET_H - SUNRISE_H)).sin()
            } else {
                0.0
            }
        })
        .collect();

    let mut values = Vec::with_capacity(days * STEPS_PER_DAY);
    for _ in 0..days {
        let amplitude = rng.random_range(PV_AMPLITUDE_RANGE.0..=PV_AMPLITUDE_RANGE.1);
        values.extend(shape.iter().map(|s| amplitude * s));
    }
    let shared = normalize(
        &EnergyProfile {
            building_id: 0,
            kind: ProfileKind::Pv,
            steps_per_day: STEPS_PER_DAY,
            values,
        },
        TARGET_DAILY_KWH,
    )?;

    Ok((0..num_buildings)
        .map(|building_id| EnergyProfile {
            building_id,
            ..shared.clone()
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    building_id: usize,
    step_index: usize,
    kind: ProfileKind,
    kwh: f64,
}

/// Writes `set` as `building_id,step_index,kind,kwh` rows. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv<W: Write>(set: &ProfileSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in set.loads.iter().chain(&set.pv) {
        for (step_index, &kwh) in p.values.iter().enumerate() {
            w.serialize(CsvRow {
                building_id: p.building_id,
                step_index,
                kind: p.kind,
                kwh,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(set: &ProfileSet, path: &Path) -> Result<()> {
    write_csv(set, std::fs::File::create(path)?)
}

/// Parses profile rows. Within one (building, kind) series, rows must appear
/// in step order starting at 0.
pub fn read_csv<R: Read>(reader: R, steps_per_day: usize) -> Result<ProfileSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["building_id", "step_index", "kind", "kwh"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Format {
            row: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    // (building, kind) -> (values, last row number)
    let mut series: BTreeMap<(usize, ProfileKind), (Vec<f64>, usize)> = BTreeMap::new();
    for (i, record) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = i + 2;
        let rec = record.map_err(|e| Error::Format {
            row,
            message: e.to_string(),
        })?;
        if !(rec.kwh >= 0.0 && rec.kwh.is_finite()) {
            return Err(Error::Format {
                row,
                message: format!("kwh must be a finite non-negative number, got {}", rec.kwh),
            });
        }
        let entry = series
            .entry((rec.building_id, rec.kind))
            .or_insert_with(|| (Vec::new(), row));
        if rec.step_index != entry.0.len() {
            return Err(Error::Format {
                row,
                message: format!(
                    "missing or out-of-order step for building {} {}: expected step {}, got {}",
                    rec.building_id,
                    rec.kind,
                    entry.0.len(),
                    rec.step_index
                ),
            });
        }
        entry.0.push(rec.kwh);
        entry.1 = row;
    }

    let Some(((_, _), (first, _))) = series.iter().next() else {
        return Err(Error::Format {
            row: 1,
            message: "no profile rows".into(),
        });
    };
    let len = first.len();
    for (&(b, kind), (values, last_row)) in &series {
        if values.len() != len {
            return Err(Error::Format {
                row: *last_row,
                message: format!(
                    "ragged lengths: building {b} {kind} has {} steps, others have {len}",
                    values.len()
                ),
            });
        }
    }
    if len % steps_per_day != 0 {
        return Err(Error::Format {
            row: 1,
            message: format!("{len} steps is not a whole number of {steps_per_day}-step days"),
        });
    }

    let num_buildings = series.keys().map(|(b, _)| b + 1).max().unwrap_or(0);
    let mut take = |kind: ProfileKind| -> Result<Vec<Vec<f64>>> {
        (0..num_buildings)
            .map(|b| {
                series.remove(&(b, kind)).map(|(v, _)| v).ok_or_else(|| Error::Format {
                    row: 1,
                    message: format!("no {kind} rows for building {b}"),
                })
            })
            .collect()
    };
    let loads = take(ProfileKind::Load)?;
    let pv = take(ProfileKind::Pv)?;
    ProfileSet::from_values(steps_per_day, loads, pv)
}

pub fn import_csv(path: &Path, steps_per_day: usize) -> Result<ProfileSet> {
    read_csv(std::fs::File::open(path)?, steps_per_day)
}
