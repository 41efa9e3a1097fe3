//! Core FlexOffer domain types.

mod feasibility;
mod halfspace;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{FlexError, Result};
use crate::uncertain::UncertainFunction;

pub use feasibility::{
    check_schedule, check_schedule_with, unit_expand, ConstraintFamily, FeasibilityReport,
    Violation,
};
pub use halfspace::{HalfspaceMatrix, HalfspaceRow};

/// Energy in kWh.
pub type Kwh = f64;

/// Default feasibility slack applied to every `≤` comparison.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_SECONDS_PER_INTERVAL: u32 = 900;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBounds {
    pub lower: Kwh,
    pub upper: Kwh,
}

impl EnergyBounds {
    pub fn new(lower: Kwh, upper: Kwh) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(FlexError::Invariant("energy bounds must be finite".into()));
        }
        if lower > upper {
            return Err(FlexError::Invariant(format!(
                "energy lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn width(&self) -> Kwh {
        self.upper - self.lower
    }

    pub fn contains(&self, value: Kwh, tolerance: f64) -> bool {
        value >= self.lower - tolerance && value <= self.upper + tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub min_price: f64,
    pub max_price: f64,
}

impl PriceBounds {
    pub fn new(min_price: f64, max_price: f64) -> Result<Self> {
        if min_price > max_price || !min_price.is_finite() || !max_price.is_finite() {
            return Err(FlexError::Invariant(format!(
                "price band [{min_price}, {max_price}] is not ordered"
            )));
        }
        Ok(Self {
            min_price,
            max_price,
        })
    }

    pub fn admits(&self, price: f64) -> bool {
        price >= self.min_price && price <= self.max_price
    }
}

/// Total cost bounds; carried for fidelity, never optimized against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBounds {
    pub lower: f64,
    pub upper: f64,
}

/// One time unit of the FO profile.
///
/// `energy` is absent on dependency entries, whose bounds come from the
/// slice polygon instead.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceConstraint {
    pub energy: Option<EnergyBounds>,
    pub price: Option<PriceBounds>,
    pub min_duration: Option<u32>,
    pub max_duration: Option<u32>,
}

impl SliceConstraint {
    pub fn with_energy(lower: Kwh, upper: Kwh) -> Result<Self> {
        Ok(Self {
            energy: Some(EnergyBounds::new(lower, upper)?),
            ..Self::default()
        })
    }

    fn validate(&self) -> Result<()> {
        if let Some(e) = self.energy {
            EnergyBounds::new(e.lower, e.upper)?;
        }
        if let Some(p) = self.price {
            PriceBounds::new(p.min_price, p.max_price)?;
        }
        if let (Some(lo), Some(hi)) = (self.min_duration, self.max_duration) {
            if lo > hi {
                return Err(FlexError::Invariant(format!(
                    "minDuration {lo} exceeds maxDuration {hi}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Initial,
    Offered,
    Accepted,
    Rejected,
    Assigned,
    Executed,
    Invalid,
    Canceled,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 8] = [
        LifecycleState::Initial,
        LifecycleState::Offered,
        LifecycleState::Accepted,
        LifecycleState::Rejected,
        LifecycleState::Assigned,
        LifecycleState::Executed,
        LifecycleState::Invalid,
        LifecycleState::Canceled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LifecycleState::Initial => "initial",
            LifecycleState::Offered => "offered",
            LifecycleState::Accepted => "accepted",
            LifecycleState::Rejected => "rejected",
            LifecycleState::Assigned => "assigned",
            LifecycleState::Executed => "executed",
            LifecycleState::Invalid => "invalid",
            LifecycleState::Canceled => "canceled",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            LifecycleState::Rejected
                | LifecycleState::Executed
                | LifecycleState::Canceled
                | LifecycleState::Invalid
        )
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LifecycleState {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        LifecycleState::ALL
            .into_iter()
            .find(|st| st.as_str() == lower || (lower == "cancelled" && *st == Self::Canceled))
            .ok_or_else(|| FlexError::parse("state", format!("unknown lifecycle state {s:?}")))
    }
}

/// Where the FO sits in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Location {
    Geo { longitude: f64, latitude: f64 },
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    DefaultSchedule,
    FlexOfferSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSlice {
    /// Time units covered; absent on the wire means one.
    pub duration: Option<u32>,
    pub energy_amount: Kwh,
    /// Unit price in EUR/kWh.
    pub price: Option<f64>,
}

impl ScheduleSlice {
    pub fn unit(energy_amount: Kwh, price: Option<f64>) -> Self {
        Self {
            duration: Some(1),
            energy_amount,
            price,
        }
    }

    pub fn units(&self) -> u32 {
        self.duration.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub schedule_id: i64,
    pub update_id: i64,
    pub start_time: Option<DateTime<Utc>>,
    pub slices: Vec<ScheduleSlice>,
    pub kind: ScheduleKind,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, start_time: Option<DateTime<Utc>>, slices: Vec<ScheduleSlice>) -> Result<Self> {
        let s = Self {
            schedule_id: 0,
            update_id: 0,
            start_time,
            slices,
            kind,
        };
        s.validate()?;
        Ok(s)
    }

    /// Unit-duration schedule from per-unit energies and optional prices.
    pub fn from_energies(
        kind: ScheduleKind,
        start_time: Option<DateTime<Utc>>,
        energies: &[Kwh],
        prices: Option<&[f64]>,
    ) -> Result<Self> {
        let slices = energies
            .iter()
            .enumerate()
            .map(|(i, &e)| ScheduleSlice::unit(e, prices.map(|p| p[i])))
            .collect();
        Self::new(kind, start_time, slices)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(FlexError::Invariant(
                "a schedule consists of at least one slice".into(),
            ));
        }
        for s in &self.slices {
            if s.units() == 0 {
                return Err(FlexError::Invariant("slice duration must be positive".into()));
            }
            if !s.energy_amount.is_finite() {
                return Err(FlexError::Invariant("energy amount must be finite".into()));
            }
        }
        Ok(())
    }

    /// Per-unit energies after expanding multi-unit slices.
    pub fn unit_energies(&self) -> Vec<Kwh> {
        unit_expand(self).slices.iter().map(|s| s.energy_amount).collect()
    }

    pub fn total_energy(&self) -> Kwh {
        self.slices.iter().map(|s| s.energy_amount).sum()
    }

    pub fn len_units(&self) -> usize {
        self.slices.iter().map(|s| s.units() as usize).sum()
    }
}

/// The constraint family an FO belongs to, by its richest constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FoKind {
    Sfo,
    Tecfo,
    Dfo,
    Ufo,
}

impl FoKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FoKind::Sfo => "SFO",
            FoKind::Tecfo => "TECFO",
            FoKind::Dfo => "DFO",
            FoKind::Ufo => "UFO",
        }
    }
}

impl fmt::Display for FoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FoKind {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sfo" => Ok(FoKind::Sfo),
            "tecfo" => Ok(FoKind::Tecfo),
            "dfo" => Ok(FoKind::Dfo),
            "ufo" => Ok(FoKind::Ufo),
            other => Err(FlexError::parse("kind", format!("unknown FO kind {other:?}"))),
        }
    }
}

/// A FlexOffer message in decoded form.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexOffer {
    pub id: String,
    pub state: LifecycleState,
    pub state_reason: Option<String>,
    pub num_seconds_per_interval: u32,
    pub creation_time: DateTime<Utc>,
    pub creation_interval: Option<i64>,
    pub offered_by_id: String,
    pub location: Option<Location>,
    pub accept_before_time: Option<DateTime<Utc>>,
    pub accept_before_interval: Option<i64>,
    pub assignment_before_time: Option<DateTime<Utc>>,
    pub assignment_before_interval: Option<i64>,
    pub start_after_time: DateTime<Utc>,
    pub start_after_interval: Option<i64>,
    pub start_before_time: DateTime<Utc>,
    pub start_before_interval: Option<i64>,
    pub end_after_time: Option<DateTime<Utc>>,
    pub end_after_interval: Option<i64>,
    pub end_before_time: Option<DateTime<Utc>>,
    pub end_before_interval: Option<i64>,
    pub profile: Vec<SliceConstraint>,
    pub total_energy: Option<EnergyBounds>,
    pub total_cost: Option<CostBounds>,
    pub dependency: Option<Vec<HalfspaceMatrix>>,
    pub uncertain: Option<Vec<UncertainFunction>>,
    pub price_constraint_start_time: Option<DateTime<Utc>>,
    pub default_schedule: Option<Schedule>,
    pub flexoffer_schedule: Option<Schedule>,
    /// Opaque `"assignment"` field, passed through untouched.
    pub assignment: Option<Value>,
    /// Opaque `"correct"` field, passed through untouched.
    pub correct: Option<Value>,
    /// Unrecognised keys of the FO object, in input order.
    pub extra: Map<String, Value>,
    /// Unrecognised keys next to the `flexOffer` object.
    pub envelope: Map<String, Value>,
}

impl FlexOffer {
    /// Minimal FO with the mandatory attributes and defaults elsewhere.
    pub fn new(
        id: impl Into<String>,
        offered_by_id: impl Into<String>,
        creation_time: DateTime<Utc>,
        start_after_time: DateTime<Utc>,
        start_before_time: DateTime<Utc>,
        profile: Vec<SliceConstraint>,
    ) -> Self {
        Self {
            id: id.into(),
            state: LifecycleState::Initial,
            state_reason: None,
            num_seconds_per_interval: DEFAULT_SECONDS_PER_INTERVAL,
            creation_time,
            creation_interval: None,
            offered_by_id: offered_by_id.into(),
            location: None,
            accept_before_time: None,
            accept_before_interval: None,
            assignment_before_time: None,
            assignment_before_interval: None,
            start_after_time,
            start_after_interval: None,
            start_before_time,
            start_before_interval: None,
            end_after_time: None,
            end_after_interval: None,
            end_before_time: None,
            end_before_interval: None,
            profile,
            total_energy: None,
            total_cost: None,
            dependency: None,
            uncertain: None,
            price_constraint_start_time: None,
            default_schedule: None,
            flexoffer_schedule: None,
            assignment: None,
            correct: None,
            extra: Map::new(),
            envelope: Map::new(),
        }
    }

    pub fn kind(&self) -> FoKind {
        if self.uncertain.is_some() {
            FoKind::Ufo
        } else if self.dependency.is_some() {
            FoKind::Dfo
        } else if self.total_energy.is_some() {
            FoKind::Tecfo
        } else {
            FoKind::Sfo
        }
    }

    /// Number of time units, `T`.
    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }

    /// Interval index of a timestamp at this FO's granularity.
    pub fn interval_of(&self, time: DateTime<Utc>) -> i64 {
        time.timestamp()
            .div_euclid(i64::from(self.num_seconds_per_interval))
    }

    pub fn effective_creation_interval(&self) -> i64 {
        self.creation_interval
            .unwrap_or_else(|| self.interval_of(self.creation_time))
    }

    pub fn effective_start_after_interval(&self) -> i64 {
        self.start_after_interval
            .unwrap_or_else(|| self.interval_of(self.start_after_time))
    }

    pub fn effective_start_before_interval(&self) -> i64 {
        self.start_before_interval
            .unwrap_or_else(|| self.interval_of(self.start_before_time))
    }

    /// Checks every structural invariant of the FO.
    pub fn validate(&self) -> Result<()> {
        if self.num_seconds_per_interval == 0 {
            return Err(FlexError::Invariant(
                "numSecondsPerInterval must be positive".into(),
            ));
        }
        if self.start_after_time > self.start_before_time {
            return Err(FlexError::Invariant(
                "startAfterTime is later than startBeforeTime".into(),
            ));
        }
        if let (Some(a), Some(b)) = (self.start_after_interval, self.start_before_interval) {
            if a > b {
                return Err(FlexError::Invariant(
                    "startAfterInterval is later than startBeforeInterval".into(),
                ));
            }
        }
        if self.profile.is_empty() {
            return Err(FlexError::Invariant(
                "an FO consists of at least one profile constraint".into(),
            ));
        }
        if let Some(ci) = self.creation_interval {
            let expected = self.interval_of(self.creation_time);
            if ci != expected {
                return Err(FlexError::Invariant(format!(
                    "creationInterval {ci} does not match creationTime (expected {expected})"
                )));
            }
        }
        for s in &self.profile {
            s.validate()?;
        }
        if let Some(te) = self.total_energy {
            EnergyBounds::new(te.lower, te.upper)?;
        }
        if self.dependency.is_some() && self.uncertain.is_some() {
            return Err(FlexError::Invariant(
                "an FO cannot carry both dependency and uncertain constraints".into(),
            ));
        }
        if let Some(dep) = &self.dependency {
            if dep.len() != self.profile.len() {
                return Err(FlexError::Shape {
                    expected: self.profile.len(),
                    actual: dep.len(),
                });
            }
            if let Some(first) = dep.first() {
                if first.rows().iter().any(|r| r.a != 0.0) {
                    return Err(FlexError::Invariant(
                        "the first dependency slice cannot depend on prior consumption".into(),
                    ));
                }
            }
        } else if self.uncertain.is_none() && self.profile.iter().any(|s| s.energy.is_none()) {
            return Err(FlexError::MissingAttribute {
                attribute: "EnergyConstraintsList",
            });
        }
        if let Some(unc) = &self.uncertain {
            if unc.len() != self.profile.len() {
                return Err(FlexError::Shape {
                    expected: self.profile.len(),
                    actual: unc.len(),
                });
            }
            for f in unc {
                f.validate()?;
            }
        }
        for s in [&self.default_schedule, &self.flexoffer_schedule].into_iter().flatten() {
            s.validate()?;
        }
        Ok(())
    }

    /// Allowed energy range of slice `t` (0-based) ignoring coupling:
    /// explicit bounds, the dependency polygon's y-range, or the
    /// uncertain-function domain.
    pub fn slice_energy_range(&self, t: usize) -> Option<EnergyBounds> {
        if let Some(e) = self.profile.get(t)?.energy {
            return Some(e);
        }
        if let Some(dep) = &self.dependency {
            return dep[t]
                .y_projection()
                .map(|(lower, upper)| EnergyBounds { lower, upper });
        }
        self.uncertain.as_ref().map(|u| u[t].domain)
    }

    /// Amount flexibility `emax_t − emin_t` for 1-based slice `t`.
    pub fn amount_flexibility(&self, t: usize) -> Result<Kwh> {
        if t == 0 || t > self.profile.len() {
            return Err(FlexError::Range {
                index: t,
                len: self.profile.len(),
            });
        }
        self.slice_energy_range(t - 1)
            .map(|b| b.width())
            .ok_or_else(|| FlexError::Invariant(format!("slice {t} has no bounded energy range")))
    }

    /// Sum of per-slice amount flexibility.
    pub fn total_amount_flexibility(&self) -> Result<Kwh> {
        (1..=self.len()).map(|t| self.amount_flexibility(t)).sum()
    }

    /// Time flexibility in time units: width of the start window.
    pub fn time_flexibility(&self) -> Result<i64> {
        let width = match (self.start_after_interval, self.start_before_interval) {
            (Some(a), Some(b)) => b - a,
            _ => {
                let secs = (self.start_before_time - self.start_after_time).num_seconds();
                secs.div_euclid(i64::from(self.num_seconds_per_interval))
            }
        };
        if width < 0 {
            return Err(FlexError::Invariant(
                "start-before precedes start-after".into(),
            ));
        }
        Ok(width)
    }
}
