//! Economic metric: profit of cost-minimizing a flexibility model against a
//! baseline, and the share of an exact device oracle's profit it keeps.

use serde::Serialize;

use crate::error::{FlexError, Result};
use crate::heatpump::{generate_fo, HeatPumpModel};
use crate::model::{check_schedule, FlexOffer, FoKind, Kwh, Schedule};
use crate::optimize::{cost, optimize, OptimizationResult};
use crate::uncertain::DEFAULT_THRESHOLD;

/// Profits closer to zero than this make a retention ratio meaningless.
const ZERO_PROFIT: f64 = 1e-12;

/// Retention figures reported in the literature for other devices and
/// experiments. Shown for reference only; nothing here reproduces them.
pub const LITERATURE_RETENTION: [(&str, &str, f64); 7] = [
    ("battery", "SFO", 0.10),
    ("battery", "TECFO", 0.38),
    ("battery", "DFO", 0.61),
    ("battery", "UFO", 0.664),
    ("EV", "DFO", 0.773),
    ("EV", "UFO", 0.92),
    ("heat pump", "DFO", 0.989),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub model_kind: FoKind,
    pub baseline_cost: f64,
    pub optimized_cost: f64,
    pub profit: f64,
    /// `profit / exact profit`; `None` when no oracle was consulted.
    pub retained: Option<f64>,
}

/// Cost of a schedule under per-unit prices.
pub fn schedule_cost(schedule: &Schedule, prices: &[f64]) -> Result<f64> {
    let e = schedule.unit_energies();
    if e.len() != prices.len() {
        return Err(FlexError::Shape {
            expected: e.len(),
            actual: prices.len(),
        });
    }
    Ok(cost(&e, prices))
}

fn optimized_cost(fo: &FlexOffer, prices: &[f64], p0: f64) -> Result<f64> {
    match optimize(fo, prices, p0)? {
        OptimizationResult::Optimal { objective, .. } => Ok(objective),
        OptimizationResult::Infeasible { reason } => Err(FlexError::Infeasible(reason)),
    }
}

/// Baseline cost minus optimized cost. The baseline must satisfy `fo`.
pub fn profit(fo: &FlexOffer, baseline: &Schedule, prices: &[f64], p0: f64) -> Result<f64> {
    let report = check_schedule(fo, baseline)?;
    if !report.feasible {
        return Err(FlexError::Infeasible(format!("baseline schedule: {report}")));
    }
    Ok(schedule_cost(baseline, prices)? - optimized_cost(fo, prices, p0)?)
}

/// Something that knows the cheapest device-feasible schedule.
pub trait ExactOracle {
    fn optimal_cost(&self, prices: &[f64]) -> Result<f64>;
}

/// Treats an FO's own feasible set as the exact one.
pub struct FoOracle<'a> {
    pub fo: &'a FlexOffer,
    pub p0: f64,
}

impl ExactOracle for FoOracle<'_> {
    fn optimal_cost(&self, prices: &[f64]) -> Result<f64> {
        optimized_cost(self.fo, prices, self.p0)
    }
}

fn ratio(profit: f64, exact: f64) -> Result<f64> {
    if exact.abs() < ZERO_PROFIT {
        return Err(FlexError::UndefinedRatio);
    }
    Ok(profit / exact)
}

/// Share of the oracle's profit that optimizing `fo` keeps.
pub fn retention(
    fo: &FlexOffer,
    oracle: &dyn ExactOracle,
    baseline: &Schedule,
    prices: &[f64],
    p0: f64,
) -> Result<f64> {
    let p = profit(fo, baseline, prices, p0)?;
    let exact = schedule_cost(baseline, prices)? - oracle.optimal_cost(prices)?;
    ratio(p, exact)
}

/// Backward dynamic program over a temperature grid for the heat-pump room.
///
/// The value function lives on `[t_min, t_max]` in steps of `temp_step`;
/// decisions are multiples of `energy_step` up to the device cap. Off-grid
/// successor temperatures are linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatPumpOracle {
    pub model: HeatPumpModel,
    pub temp_step: f64,
    pub energy_step: Kwh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Value of the program at `t_init`.
    pub value: f64,
    /// Cost of the schedule actually obtained by following the policy.
    pub cost: f64,
    pub energies: Vec<Kwh>,
}

impl HeatPumpOracle {
    pub const DEFAULT_TEMP_STEP: f64 = 0.01;
    pub const DEFAULT_ENERGY_STEP: Kwh = 0.005;

    pub fn new(model: HeatPumpModel) -> Self {
        Self {
            model,
            temp_step: Self::DEFAULT_TEMP_STEP,
            energy_step: Self::DEFAULT_ENERGY_STEP,
        }
    }

    fn grid_len(&self) -> usize {
        ((self.model.t_max - self.model.t_min) / self.temp_step).round() as usize + 1
    }

    fn temp_at(&self, i: usize, n: usize) -> f64 {
        if i + 1 == n {
            self.model.t_max
        } else {
            self.model.t_min + i as f64 * self.temp_step
        }
    }

    fn energies(&self) -> Vec<Kwh> {
        let emax = self.model.max_energy();
        let steps = (emax / self.energy_step + 1e-9).floor() as usize;
        let mut e: Vec<Kwh> = (0..=steps).map(|j| j as f64 * self.energy_step).collect();
        if emax - e[steps] > 1e-12 {
            e.push(emax);
        }
        e
    }

    /// Linear interpolation of `v` at temperature `temp`; infinite outside
    /// the band or next to an unreachable grid point.
    fn interpolate(&self, v: &[f64], temp: f64) -> f64 {
        let n = v.len();
        let m = &self.model;
        if temp < m.t_min - 1e-9 || temp > m.t_max + 1e-9 {
            return f64::INFINITY;
        }
        let pos = ((temp - m.t_min) / self.temp_step).clamp(0.0, (n - 1) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 >= n || frac < 1e-9 {
            return v[i.min(n - 1)];
        }
        if frac > 1.0 - 1e-9 {
            return v[i + 1];
        }
        (1.0 - frac) * v[i] + frac * v[i + 1]
    }

    fn best(&self, v_next: &[f64], temp: f64, price: f64, grid: &[Kwh]) -> Option<(f64, Kwh)> {
        let mut best: Option<(f64, Kwh)> = None;
        for &e in grid {
            let total = price * e + self.interpolate(v_next, self.model.step_unchecked(temp, e));
            if total.is_finite() && best.is_none_or(|(b, _)| total < b - 1e-15) {
                best = Some((total, e));
            }
        }
        best
    }

    pub fn solve(&self, prices: &[f64]) -> Result<OracleSolution> {
        self.model.validate()?;
        if !(self.temp_step > 0.0 && self.energy_step > 0.0) {
            return Err(FlexError::Invariant("oracle grid steps must be positive".into()));
        }
        if prices.len() != self.model.horizon {
            return Err(FlexError::Shape {
                expected: self.model.horizon,
                actual: prices.len(),
            });
        }
        let n = self.grid_len();
        let grid = self.energies();
        let mut values = vec![vec![0.0; n]];
        for &price in prices.iter().rev() {
            let next = values.last().expect("seeded with the terminal values");
            let cur: Vec<f64> = (0..n)
                .map(|i| {
                    self.best(next, self.temp_at(i, n), price, &grid)
                        .map_or(f64::INFINITY, |(v, _)| v)
                })
                .collect();
            values.push(cur);
        }
        values.reverse();
        let value = self.interpolate(&values[0], self.model.t_init);
        if !value.is_finite() {
            return Err(FlexError::Infeasible("no schedule keeps the comfort band".into()));
        }

        let mut temp = self.model.t_init;
        let mut energies = Vec::with_capacity(prices.len());
        for (t, &price) in prices.iter().enumerate() {
            let (_, e) = self
                .best(&values[t + 1], temp, price, &grid)
                .ok_or_else(|| FlexError::Infeasible(format!("policy dead end at unit {}", t + 1)))?;
            temp = self.model.step_unchecked(temp, e);
            energies.push(e);
        }
        Ok(OracleSolution {
            value,
            cost: cost(&energies, prices),
            energies,
        })
    }
}

impl ExactOracle for HeatPumpOracle {
    /// Cost of the realized policy schedule, which is device-feasible.
    fn optimal_cost(&self, prices: &[f64]) -> Result<f64> {
        self.solve(prices).map(|s| s.cost)
    }
}

/// All four generated models of one room against the same baseline and
/// oracle, in the order SFO, TECFO, DFO, UFO.
///
/// The baseline is the DFO's default schedule. Boxes need not contain it,
/// so profits are taken against its cost directly.
pub fn evaluate_heatpump(
    model: &HeatPumpModel,
    oracle: &HeatPumpOracle,
    prices: &[f64],
) -> Result<(f64, Vec<MetricReport>)> {
    let dfo = generate_fo(model, FoKind::Dfo)?;
    let baseline = dfo
        .default_schedule
        .clone()
        .ok_or(FlexError::MissingAttribute { attribute: "DefaultSchedule" })?;
    let baseline_cost = schedule_cost(&baseline, prices)?;
    let exact = baseline_cost - oracle.optimal_cost(prices)?;
    let mut reports = Vec::with_capacity(4);
    for kind in [FoKind::Sfo, FoKind::Tecfo, FoKind::Dfo, FoKind::Ufo] {
        let fo = if kind == FoKind::Dfo {
            dfo.clone()
        } else {
            generate_fo(model, kind)?
        };
        let optimized = optimized_cost(&fo, prices, DEFAULT_THRESHOLD)?;
        let p = baseline_cost - optimized;
        reports.push(MetricReport {
            model_kind: kind,
            baseline_cost,
            optimized_cost: optimized,
            profit: p,
            retained: ratio(p, exact).ok(),
        });
    }
    Ok((exact, reports))
}
