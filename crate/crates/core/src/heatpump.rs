//! First-order thermal model of a heat-pump heated room and the FO
//! generators built on it.
//!
//! One time unit advances the room temperature by
//! `T' = (1 − k)·T + k·t_out + g·e` with `k = A·c_ht·dt / C` and
//! `g = cop·3.6e6 / C`, `e` being the electrical energy in kWh.
//! All generated constraints are rounded to six decimals in the
//! conservative direction so that the wire form stays sound.

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::model::{
    EnergyBounds, FlexOffer, FoKind, HalfspaceMatrix, HalfspaceRow, Kwh, Schedule, ScheduleKind,
    SliceConstraint,
};
use crate::optimize::box_optimum;
use crate::uncertain::UncertainFunction;

pub const DEFAULT_ID: &str = "00000000-0000-4000-8000-000000000001";

/// Containment margin kept while shrinking boxes, so that six-decimal
/// rounding cannot push a generated constraint outside its parent.
const MARGIN: f64 = 1e-7;
const BISECTIONS: usize = 48;

/// Width of the probability ramp used by [`generate_ufo`].
pub const RAMP_WIDTH: Kwh = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatPumpModel {
    /// Maximum electrical power, kW.
    pub p_max: f64,
    pub cop: f64,
    /// Wall area, m².
    pub wall_area: f64,
    /// Heat transfer coefficient, W/(m²·K).
    pub c_ht: f64,
    /// Outdoor temperature, K.
    pub t_out: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_init: f64,
    /// Thermal capacitance of the room, J/K.
    pub thermal_capacitance: f64,
    /// Seconds per time unit.
    pub dt: f64,
    /// Number of time units.
    pub horizon: usize,
}

impl Default for HeatPumpModel {
    fn default() -> Self {
        Self {
            p_max: 4.6,
            cop: 3.65,
            wall_area: 12.0,
            c_ht: 6.0,
            t_out: 275.0,
            t_min: 293.0,
            t_max: 297.0,
            t_init: 295.0,
            thermal_capacitance: 2.0e7,
            dt: 3600.0,
            horizon: 8,
        }
    }
}

fn floor6(v: f64) -> f64 {
    ((v * 1e6) + 1e-3).floor() / 1e6
}

fn ceil6(v: f64) -> f64 {
    ((v * 1e6) - 1e-3).ceil() / 1e6
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl HeatPumpModel {
    /// Reads `name = value` lines; absent names keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| FlexError::parse("config", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_max", self.p_max),
            ("cop", self.cop),
            ("wall_area", self.wall_area),
            ("c_ht", self.c_ht),
            ("t_out", self.t_out),
            ("thermal_capacitance", self.thermal_capacitance),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FlexError::Invariant(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(FlexError::Invariant("horizon must be positive".into()));
        }
        if !(self.t_min <= self.t_init && self.t_init <= self.t_max) {
            return Err(FlexError::Invariant(format!(
                "t_init {} outside comfort band [{}, {}]",
                self.t_init, self.t_min, self.t_max
            )));
        }
        let k = self.decay();
        if !(k > 0.0 && k < 1.0) {
            return Err(FlexError::Invariant(format!(
                "loss factor {k} per time unit must lie in (0, 1)"
            )));
        }
        if self.max_energy() < self.steady_state_energy() {
            return Err(FlexError::Invariant(
                "p_max cannot hold the room at t_init".into(),
            ));
        }
        Ok(())
    }

    /// Share of the indoor/outdoor gap lost per time unit.
    pub fn decay(&self) -> f64 {
        self.wall_area * self.c_ht * self.dt / self.thermal_capacitance
    }

    /// Temperature gain per kWh of electricity, K/kWh.
    pub fn gain(&self) -> f64 {
        self.cop * 3.6e6 / self.thermal_capacitance
    }

    /// Device energy cap per time unit, kWh.
    pub fn max_energy(&self) -> Kwh {
        self.p_max * self.dt / 3600.0
    }

    /// Energy holding `t_room` constant.
    pub fn holding_energy(&self, t_room: f64) -> Kwh {
        self.wall_area * self.c_ht * (t_room - self.t_out) * self.dt / (self.cop * 3.6e6)
    }

    pub fn steady_state_energy(&self) -> Kwh {
        self.holding_energy(self.t_init)
    }

    /// Temperature after one time unit drawing `e` kWh.
    pub fn step(&self, t_room: f64, e: Kwh) -> Result<f64> {
        let emax = self.max_energy();
        if !(e >= -1e-12 && e <= emax + 1e-12) {
            return Err(FlexError::Domain {
                value: e,
                lower: 0.0,
                upper: emax,
            });
        }
        Ok(self.step_unchecked(t_room, e))
    }

    pub fn step_unchecked(&self, t_room: f64, e: Kwh) -> f64 {
        let k = self.decay();
        (1.0 - k) * t_room + k * self.t_out + self.gain() * e
    }

    /// Room temperatures after each unit of `energies`, starting at `t_init`.
    pub fn simulate(&self, energies: &[Kwh]) -> Result<Vec<f64>> {
        let mut t = self.t_init;
        energies
            .iter()
            .map(|&e| {
                t = self.step(t, e)?;
                Ok(t)
            })
            .collect()
    }

    /// True when every temperature of the trajectory stays in the band.
    pub fn keeps_comfort(&self, energies: &[Kwh], tolerance: f64) -> bool {
        self.simulate(energies).is_ok_and(|ts| {
            ts.iter()
                .all(|&t| t >= self.t_min - tolerance && t <= self.t_max + tolerance)
        })
    }
}

/// Every FO family derived from one model, with inner-approximation
/// guarantees `SFO ⊆ TECFO ⊆ DFO ⊆ comfort`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFamily {
    pub dfo: Vec<HalfspaceMatrix>,
    pub sfo: Vec<EnergyBounds>,
    pub tecfo: Vec<EnergyBounds>,
    pub total: EnergyBounds,
}

fn generation(msg: impl Into<String>) -> FlexError {
    FlexError::Generation(msg.into())
}

/// Dependency polygons keeping the room in band for the worst history
/// consistent with the cumulative energy.
fn dependency_rows(m: &HeatPumpModel) -> Result<Vec<HalfspaceMatrix>> {
    let k = m.decay();
    let g = m.gain();
    let emax = m.max_energy();
    let base = k * m.t_out;
    let mut free = m.t_init;
    let mut out = Vec::with_capacity(m.horizon);

    let lo = ((m.t_min - base - (1.0 - k) * free) / g).max(0.0);
    let hi = ((m.t_max - base - (1.0 - k) * free) / g).min(emax);
    if lo > hi {
        return Err(generation("comfort band unreachable in the first unit"));
    }
    let (mut xlo, mut xhi) = (ceil6(lo), floor6(hi));
    out.push(HalfspaceMatrix::new(vec![
        HalfspaceRow::new(0.0, -1.0, -xlo),
        HalfspaceRow::new(0.0, 1.0, xhi),
    ])?);

    for t in 2..=m.horizon {
        free = (1.0 - k) * free + base;
        let w_min = (1.0 - k).powi(t as i32 - 2);
        let a_lo = -(1.0 - k) * w_min;
        let a_hi = 1.0 - k;
        let c_lo = -(m.t_min - base - (1.0 - k) * free) / g;
        let c_hi = (m.t_max - base - (1.0 - k) * free) / g;
        let conservative = |a: f64, c: f64| {
            let ar = round6(a);
            HalfspaceRow::new(ar, if a < 0.0 { -1.0 } else { 1.0 }, floor6(c - (a - ar).abs() * xhi - 1e-8))
        };
        let matrix = HalfspaceMatrix::new(vec![
            HalfspaceRow::new(0.0, -1.0, 0.0),
            HalfspaceRow::new(0.0, 1.0, floor6(emax)),
            HalfspaceRow::new(-1.0, 0.0, -ceil6(xlo)),
            HalfspaceRow::new(1.0, 0.0, floor6(xhi)),
            conservative(a_lo, c_lo),
            conservative(a_hi, c_hi),
        ])?;
        let (lo, hi) = matrix.sum_projection().ok_or_else(|| {
            generation(format!("comfort band cannot be kept through unit {t}"))
        })?;
        xlo = lo;
        xhi = hi;
        out.push(matrix);
    }
    Ok(out)
}

/// Maximum of `Σ w·e` over a box cut by a total band.
fn max_over_box_with_total(bounds: &[EnergyBounds], total: Option<EnergyBounds>, w: &[f64]) -> Option<f64> {
    let neg: Vec<f64> = w.iter().map(|v| -v).collect();
    box_optimum(bounds, &neg, total).map(|e| e.iter().zip(w).map(|(e, w)| e * w).sum())
}

/// Whether every point of `bounds ∩ {Σe ∈ total}` satisfies every row with
/// the containment margin to spare.
pub fn box_within_dfo(dfo: &[HalfspaceMatrix], bounds: &[EnergyBounds], total: Option<EnergyBounds>) -> bool {
    let n = bounds.len();
    let mut w = vec![0.0; n];
    for (t, m) in dfo.iter().enumerate() {
        for r in m.rows() {
            w.iter_mut().enumerate().for_each(|(u, v)| {
                *v = if u < t {
                    r.a
                } else if u == t {
                    r.b
                } else {
                    0.0
                }
            });
            match max_over_box_with_total(bounds, total, &w) {
                Some(v) if v <= r.c - MARGIN => {}
                Some(_) => return false,
                None => return true,
            }
        }
    }
    true
}

/// Widest uniform box inside the dependency polygons, preferring boxes
/// that contain the holding energy.
fn uniform_box(m: &HeatPumpModel, dfo: &[HalfspaceMatrix]) -> Result<EnergyBounds> {
    let e = m.steady_state_energy();
    let build = |objective: Vec<f64>, hold: bool, width: Option<f64>| {
        let mut lp = LinearProgram::minimize(objective);
        lp.add(vec![1.0, -1.0], Relation::Le, 0.0);
        for (t, mat) in dfo.iter().enumerate() {
            let n = t as f64;
            for r in mat.rows() {
                let up = n * r.a.max(0.0) + r.b.max(0.0);
                let down = n * (-r.a).max(0.0) + (-r.b).max(0.0);
                lp.add(vec![-down, up], Relation::Le, r.c - MARGIN);
            }
        }
        if hold {
            lp.add(vec![1.0, 0.0], Relation::Le, e);
            lp.add(vec![0.0, 1.0], Relation::Ge, e);
        }
        if let Some(w) = width {
            lp.add(vec![-1.0, 1.0], Relation::Ge, w);
        }
        lp
    };
    let mut hold = true;
    let width = loop {
        match build(vec![1.0, -1.0], hold, None).solve()? {
            LpOutcome::Optimal { x, .. } => break x[1] - x[0],
            LpOutcome::Infeasible if hold => hold = false,
            LpOutcome::Infeasible => return Err(generation("no box fits inside the comfort polygons")),
            LpOutcome::Unbounded => return Err(FlexError::Unbounded),
        }
    };
    let target = (width - 1e-10).max(0.0);
    let mut ends = [0.0; 2];
    for (slot, dir) in [1.0, -1.0].into_iter().enumerate() {
        ends[slot] = match build(vec![dir, 0.0], hold, Some(target)).solve()? {
            LpOutcome::Optimal { x, .. } => x[0],
            _ => return Err(generation("box placement failed")),
        };
    }
    let l = 0.5 * (ends[0] + ends[1]);
    let lower = ceil6(l);
    let upper = floor6(l + target).max(lower);
    Ok(EnergyBounds { lower, upper })
}

/// Largest `λ ∈ [0, 1]` for which `ok(λ)` holds, assuming monotonicity.
fn bisect(ok: impl Fn(f64) -> bool) -> f64 {
    if ok(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn generate_family(m: &HeatPumpModel) -> Result<GeneratedFamily> {
    m.validate()?;
    let dfo = dependency_rows(m)?;
    let b = uniform_box(m, &dfo)?;
    let sfo = vec![b; m.horizon];
    if !box_within_dfo(&dfo, &sfo, None) {
        return Err(generation("box rounding left the comfort polygons"));
    }

    // Widen each slice towards its polygon range under a total band fixed
    // at the box's own sum range, then widen the band.
    let base_total = EnergyBounds {
        lower: sfo.iter().map(|b| b.lower).sum(),
        upper: sfo.iter().map(|b| b.upper).sum(),
    };
    let mut tec = sfo.clone();
    for t in 0..m.horizon {
        let (ylo, yhi) = dfo[t]
            .y_projection()
            .ok_or_else(|| generation(format!("slice {} polygon is empty", t + 1)))?;
        let start = tec[t];
        let lam = bisect(|l| {
            let mut trial = tec.clone();
            trial[t].lower = start.lower - l * (start.lower - ylo).max(0.0);
            box_within_dfo(&dfo, &trial, Some(base_total))
        });
        tec[t].lower = ceil6(start.lower - lam * (start.lower - ylo).max(0.0));
        let start = tec[t];
        let lam = bisect(|l| {
            let mut trial = tec.clone();
            trial[t].upper = start.upper + l * (yhi - start.upper).max(0.0);
            box_within_dfo(&dfo, &trial, Some(base_total))
        });
        tec[t].upper = floor6(start.upper + lam * (yhi - start.upper).max(0.0));
    }
    let (xlo, xhi) = dfo
        .last()
        .and_then(HalfspaceMatrix::sum_projection)
        .ok_or_else(|| generation("last polygon is empty"))?;
    let mut total = base_total;
    let mu = bisect(|l| {
        let trial = EnergyBounds {
            lower: total.lower - l * (total.lower - xlo).max(0.0),
            upper: total.upper,
        };
        box_within_dfo(&dfo, &tec, Some(trial))
    });
    total.lower = ceil6(total.lower - mu * (total.lower - xlo).max(0.0));
    let mu = bisect(|l| {
        let trial = EnergyBounds {
            lower: total.lower,
            upper: total.upper + l * (xhi - total.upper).max(0.0),
        };
        box_within_dfo(&dfo, &tec, Some(trial))
    });
    total.upper = floor6(total.upper + mu * (xhi - total.upper).max(0.0));

    Ok(GeneratedFamily {
        dfo,
        sfo,
        tecfo: tec,
        total,
    })
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 4, 2, 0, 0, 0)
        .single()
        .expect("fixed timestamp is valid")
}

fn shell(m: &HeatPumpModel, profile: Vec<SliceConstraint>) -> Result<FlexOffer> {
    let start = default_start();
    let mut fo = FlexOffer::new(DEFAULT_ID, "heatpump", start, start, start, profile);
    fo.num_seconds_per_interval = u32::try_from(m.dt as i64)
        .ok()
        .filter(|&s| s > 0 && f64::from(s) == m.dt)
        .ok_or_else(|| generation("dt must be a whole number of seconds"))?;
    fo.end_before_time = Some(start + Duration::seconds(m.dt as i64 * m.horizon as i64));
    Ok(fo)
}

fn with_default_schedule(mut fo: FlexOffer, m: &HeatPumpModel, fallback: &[Kwh]) -> Result<FlexOffer> {
    let hold = vec![round6(m.steady_state_energy()); m.horizon];
    let mut s = Schedule::from_energies(ScheduleKind::DefaultSchedule, Some(fo.start_after_time), &hold, None)?;
    if !crate::model::check_schedule(&fo, &s)?.feasible {
        s = Schedule::from_energies(ScheduleKind::DefaultSchedule, Some(fo.start_after_time), fallback, None)?;
    }
    fo.default_schedule = Some(s);
    Ok(fo)
}

fn boxes(bounds: &[EnergyBounds]) -> Vec<SliceConstraint> {
    bounds
        .iter()
        .map(|&b| SliceConstraint {
            energy: Some(b),
            ..SliceConstraint::default()
        })
        .collect()
}

fn midpoints(bounds: &[EnergyBounds]) -> Vec<Kwh> {
    bounds.iter().map(|b| round6(0.5 * (b.lower + b.upper))).collect()
}

/// Probability ramps around the box: certain inside, fading to zero over
/// [`RAMP_WIDTH`] on either side.
pub fn generate_ufo(m: &HeatPumpModel) -> Result<FlexOffer> {
    let fam = generate_family(m)?;
    let w = RAMP_WIDTH;
    let mut fns = Vec::with_capacity(m.horizon);
    for b in &fam.sfo {
        let domain = EnergyBounds::new((b.lower - w).max(0.0), b.upper + w)?;
        fns.push(UncertainFunction::new(
            domain,
            vec![
                vec![1.0],
                vec![round6(-(b.lower - w) / w), round6(1.0 / w)],
                vec![round6((b.upper + w) / w), round6(-1.0 / w)],
            ],
        )?);
    }
    let mut fo = shell(m, vec![SliceConstraint::default(); m.horizon])?;
    fo.uncertain = Some(fns);
    let fallback = midpoints(&fam.sfo);
    with_default_schedule(fo, m, &fallback)
}

pub fn generate_fo(m: &HeatPumpModel, kind: FoKind) -> Result<FlexOffer> {
    if kind == FoKind::Ufo {
        return generate_ufo(m);
    }
    let fam = generate_family(m)?;
    let fo = match kind {
        FoKind::Sfo => shell(m, boxes(&fam.sfo))?,
        FoKind::Tecfo => {
            let mut fo = shell(m, boxes(&fam.tecfo))?;
            fo.total_energy = Some(fam.total);
            fo
        }
        FoKind::Dfo => {
            let mut fo = shell(m, vec![SliceConstraint::default(); m.horizon])?;
            fo.dependency = Some(fam.dfo.clone());
            fo
        }
        FoKind::Ufo => unreachable!("handled above"),
    };
    fo.validate()?;
    with_default_schedule(fo, m, &midpoints(&fam.sfo))
}
