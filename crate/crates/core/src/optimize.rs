//! Cost-minimizing schedules for every constraint family.

use crate::error::{FlexError, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::model::{EnergyBounds, FlexOffer, FoKind, Kwh, Schedule, ScheduleKind};

/// Interval combinations explored for a UFO before giving up.
pub const MAX_UFO_INTERVALS: usize = 20;

/// Unit prices in EUR/kWh, one per time unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceCurve(Vec<f64>);

impl PriceCurve {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if let Some(p) = prices.iter().find(|p| !p.is_finite()) {
            return Err(FlexError::Invariant(format!("price {p} is not finite")));
        }
        Ok(Self(prices))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizationResult {
    Optimal { schedule: Schedule, objective: f64 },
    Infeasible { reason: String },
}

impl OptimizationResult {
    pub fn is_optimal(&self) -> bool {
        matches!(self, OptimizationResult::Optimal { .. })
    }

    pub fn objective(&self) -> Option<f64> {
        match self {
            OptimizationResult::Optimal { objective, .. } => Some(*objective),
            OptimizationResult::Infeasible { .. } => None,
        }
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        match self {
            OptimizationResult::Optimal { schedule, .. } => Some(schedule),
            OptimizationResult::Infeasible { .. } => None,
        }
    }

    pub fn energies(&self) -> Option<Vec<Kwh>> {
        self.schedule().map(Schedule::unit_energies)
    }
}

pub fn cost(energies: &[Kwh], prices: &[f64]) -> f64 {
    energies.iter().zip(prices).map(|(e, p)| e * p).sum()
}

fn check_prices(fo: &FlexOffer, prices: &[f64]) -> Result<()> {
    if prices.len() != fo.len() {
        return Err(FlexError::Shape {
            expected: fo.len(),
            actual: prices.len(),
        });
    }
    PriceCurve::new(prices.to_vec()).map(|_| ())
}

fn result(fo: &FlexOffer, energies: Vec<Kwh>, prices: &[f64]) -> Result<OptimizationResult> {
    let objective = cost(&energies, prices);
    let mut schedule = Schedule::from_energies(
        ScheduleKind::FlexOfferSchedule,
        Some(fo.start_after_time),
        &energies,
        Some(prices),
    )?;
    schedule.schedule_id = 1;
    Ok(OptimizationResult::Optimal {
        schedule,
        objective,
    })
}

fn infeasible(reason: impl Into<String>) -> OptimizationResult {
    OptimizationResult::Infeasible {
        reason: reason.into(),
    }
}

/// Cheapest point of a box, optionally cut by a total-energy band.
///
/// Slices are visited by ascending price (ties to the lower index);
/// negative-price slices fill up to the total cap, the rest only as far as
/// needed to reach the total minimum. `None` when the band misses the box.
pub fn box_optimum(
    bounds: &[EnergyBounds],
    prices: &[f64],
    total: Option<EnergyBounds>,
) -> Option<Vec<Kwh>> {
    let mut e: Vec<Kwh> = bounds.iter().map(|b| b.lower).collect();
    let Some(te) = total else {
        for (t, b) in bounds.iter().enumerate() {
            if prices[t] < 0.0 {
                e[t] = b.upper;
            }
        }
        return Some(e);
    };
    let lo: f64 = bounds.iter().map(|b| b.lower).sum();
    let hi: f64 = bounds.iter().map(|b| b.upper).sum();
    if lo > te.upper + 1e-12 || hi < te.lower - 1e-12 {
        return None;
    }
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    order.sort_by(|&i, &j| prices[i].total_cmp(&prices[j]));
    let mut sum = lo;
    for t in order {
        let room = bounds[t].width();
        let raise = if prices[t] < 0.0 {
            room.min(te.upper - sum)
        } else {
            room.min(te.lower - sum)
        };
        if raise > 0.0 {
            e[t] += raise;
            sum += raise;
        }
    }
    Some(e)
}

/// Slice bounds after price gating: a slice whose market price falls
/// outside its band is held at its lower bound.
fn gated_bounds(fo: &FlexOffer, base: &[EnergyBounds], prices: &[f64]) -> Vec<EnergyBounds> {
    base.iter()
        .zip(&fo.profile)
        .zip(prices)
        .map(|((b, s), &p)| match s.price {
            Some(band) if !band.admits(p) => EnergyBounds {
                lower: b.lower,
                upper: b.lower,
            },
            _ => *b,
        })
        .collect()
}

fn slice_bounds(fo: &FlexOffer) -> Result<Vec<EnergyBounds>> {
    fo.profile
        .iter()
        .enumerate()
        .map(|(t, s)| {
            s.energy
                .ok_or_else(|| FlexError::Invariant(format!("slice {} has no energy bounds", t + 1)))
        })
        .collect()
}

pub fn optimize_sfo(fo: &FlexOffer, prices: &[f64]) -> Result<OptimizationResult> {
    check_prices(fo, prices)?;
    let bounds = gated_bounds(fo, &slice_bounds(fo)?, prices);
    let e = box_optimum(&bounds, prices, None).expect("a box without a total band is never empty");
    result(fo, e, prices)
}

pub fn optimize_tecfo(fo: &FlexOffer, prices: &[f64]) -> Result<OptimizationResult> {
    check_prices(fo, prices)?;
    let te = fo.total_energy.ok_or_else(|| {
        FlexError::Invariant("a total energy constraint is required".into())
    })?;
    let bounds = gated_bounds(fo, &slice_bounds(fo)?, prices);
    match box_optimum(&bounds, prices, Some(te)) {
        Some(e) => result(fo, e, prices),
        None => Ok(infeasible(format!(
            "total energy band [{}, {}] cannot be met by the slice bounds",
            te.lower, te.upper
        ))),
    }
}

/// Solves the full linear program of an FO: explicit slice bounds, the
/// total band and every dependency row.
pub fn optimize_lp(fo: &FlexOffer, prices: &[f64]) -> Result<OptimizationResult> {
    check_prices(fo, prices)?;
    let n = fo.len();
    let mut lp = LinearProgram::minimize(prices.to_vec());
    for (t, s) in fo.profile.iter().enumerate() {
        if let Some(b) = s.energy {
            lp.bound(t, b.lower, b.upper);
        }
    }
    if let Some(te) = fo.total_energy {
        lp.add(vec![1.0; n], Relation::Ge, te.lower);
        lp.add(vec![1.0; n], Relation::Le, te.upper);
    }
    if let Some(dep) = &fo.dependency {
        for (t, m) in dep.iter().enumerate() {
            for r in m.rows() {
                let mut row = vec![0.0; n];
                row[..t].iter_mut().for_each(|v| *v = r.a);
                row[t] = r.b;
                lp.add(row, Relation::Le, r.c);
            }
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, .. } => result(fo, x, prices),
        LpOutcome::Infeasible => Ok(infeasible("the constraint polytope is empty")),
        LpOutcome::Unbounded => Err(FlexError::Unbounded),
    }
}

pub fn optimize_dfo(fo: &FlexOffer, prices: &[f64]) -> Result<OptimizationResult> {
    if fo.dependency.is_none() {
        return Err(FlexError::Invariant("dependency matrices are required".into()));
    }
    optimize_lp(fo, prices)
}

pub fn optimize_ufo(fo: &FlexOffer, prices: &[f64], p0: f64) -> Result<OptimizationResult> {
    check_prices(fo, prices)?;
    let unc = fo
        .uncertain
        .as_ref()
        .ok_or_else(|| FlexError::Invariant("uncertain functions are required".into()))?;
    let mut choices = Vec::with_capacity(unc.len());
    for (t, f) in unc.iter().enumerate() {
        let iv = f.threshold_intervals(p0)?;
        if iv.is_empty() {
            return Ok(infeasible(format!(
                "slice {} has no energy with probability at least {p0}",
                t + 1
            )));
        }
        choices.push(iv);
    }
    let count: usize = choices.iter().map(Vec::len).sum();
    if count > unc.len() && count > MAX_UFO_INTERVALS {
        return Err(FlexError::Unsupported(format!(
            "{count} threshold intervals exceed the enumeration limit of {MAX_UFO_INTERVALS}"
        )));
    }

    let mut pick = vec![0usize; choices.len()];
    let mut best: Option<(f64, Vec<Kwh>)> = None;
    loop {
        let mut bounds: Vec<EnergyBounds> = pick.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        for (b, s) in bounds.iter_mut().zip(&fo.profile) {
            if let Some(e) = s.energy {
                b.lower = b.lower.max(e.lower);
                b.upper = b.upper.min(e.upper);
            }
        }
        if bounds.iter().all(|b| b.lower <= b.upper) {
            let bounds = gated_bounds(fo, &bounds, prices);
            if let Some(e) = box_optimum(&bounds, prices, fo.total_energy) {
                let c = cost(&e, prices);
                if best.as_ref().is_none_or(|(bc, _)| c < *bc - 1e-15) {
                    best = Some((c, e));
                }
            }
        }
        // Odometer over interval choices.
        let mut t = 0;
        while t < pick.len() {
            pick[t] += 1;
            if pick[t] < choices[t].len() {
                break;
            }
            pick[t] = 0;
            t += 1;
        }
        if t == pick.len() {
            break;
        }
    }
    match best {
        Some((_, e)) => result(fo, e, prices),
        None => Ok(infeasible("no threshold interval combination is feasible")),
    }
}

/// Dispatches on the FO's constraint family. `p0` applies to UFOs only.
pub fn optimize(fo: &FlexOffer, prices: &[f64], p0: f64) -> Result<OptimizationResult> {
    match fo.kind() {
        FoKind::Sfo => optimize_sfo(fo, prices),
        FoKind::Tecfo => optimize_tecfo(fo, prices),
        FoKind::Dfo => optimize_dfo(fo, prices),
        FoKind::Ufo => optimize_ufo(fo, prices, p0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_schedule, HalfspaceMatrix, PriceBounds, SliceConstraint};
    use crate::uncertain::UncertainFunction;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    const PRICES: [f64; 8] = [0.05, 0.1, 0.1, 0.03, 0.03, 0.05, 0.07, 0.07];

    fn base(profile: Vec<SliceConstraint>) -> FlexOffer {
        let t0 = Utc.with_ymd_and_hms(2019, 4, 2, 0, 0, 0).unwrap();
        FlexOffer::new("o", "p", t0, t0, t0, profile)
    }

    fn sfo() -> FlexOffer {
        base((0..8).map(|_| SliceConstraint::with_energy(0.303, 0.478).unwrap()).collect())
    }

    fn tecfo(lo: f64, hi: f64) -> FlexOffer {
        let mut fo = sfo();
        fo.total_energy = Some(EnergyBounds::new(lo, hi).unwrap());
        fo
    }

    fn reference_dfo() -> FlexOffer {
        let mut fo = base(vec![SliceConstraint::default(); 4]);
        fo.dependency = Some(vec![
            HalfspaceMatrix::from_triples(&[[0.0, 1.0, 0.392], [0.0, -1.0, -0.324]]).unwrap(),
            HalfspaceMatrix::from_triples(&[
                [-1.0, 0.0, -0.324],
                [1.0, 0.0, 0.392],
                [-0.221, -1.0, -0.396],
                [0.221, 1.0, 0.514],
            ])
            .unwrap(),
            HalfspaceMatrix::from_triples(&[
                [0.0, -1.0, -0.309],
                [0.0, 1.0, 0.442],
                [-1.0, 0.0, -0.648],
                [1.0, 0.0, 0.819],
                [-0.127, -1.0, -0.406],
                [0.127, 1.0, 0.531],
            ])
            .unwrap(),
            HalfspaceMatrix::from_triples(&[
                [0.0, -1.0, -0.309],
                [0.0, 1.0, 0.442],
                [-1.0, 0.0, -0.972],
                [1.0, 0.0, 1.246],
                [-0.088, -1.0, -0.41],
                [0.088, 1.0, 0.537],
            ])
            .unwrap(),
        ]);
        fo
    }

    #[test]
    fn sfo_takes_lower_bounds() {
        let r = optimize_sfo(&sfo(), &PRICES).unwrap();
        assert!(r.energies().unwrap().iter().all(|&e| e == 0.303));
        assert!((r.objective().unwrap() - 0.1515).abs() < 1e-12);
        let zero = optimize_sfo(&sfo(), &[0.0; 8]).unwrap();
        assert_eq!(zero.objective().unwrap(), 0.0);
        let mut p = PRICES;
        p[2] = -0.02;
        assert_eq!(optimize_sfo(&sfo(), &p).unwrap().energies().unwrap()[2], 0.478);
        assert!(matches!(optimize_sfo(&sfo(), &PRICES[..7]), Err(FlexError::Shape { .. })));
    }

    #[test]
    fn price_band_pins_slice() {
        let mut fo = sfo();
        fo.profile[2].price = Some(PriceBounds::new(0.0, 0.15).unwrap());
        let mut p = PRICES;
        p[2] = -0.02;
        assert_eq!(optimize_sfo(&fo, &p).unwrap().energies().unwrap()[2], 0.303);
    }

    #[test]
    fn tecfo_greedy_example() {
        let r = optimize_tecfo(&tecfo(2.592, 3.381), &PRICES).unwrap();
        let e = r.energies().unwrap();
        assert!((e[3] - 0.471).abs() < 1e-12);
        assert!(e.iter().enumerate().all(|(t, &v)| t == 3 || v == 0.303));
        assert!((r.objective().unwrap() - 0.15654).abs() < 1e-12);
        let lp = optimize_lp(&tecfo(2.592, 3.381), &PRICES).unwrap();
        assert!((lp.objective().unwrap() - 0.15654).abs() < 1e-9);
    }

    #[test]
    fn inactive_and_impossible_tec() {
        let r = optimize_tecfo(&tecfo(2.424, 3.824), &PRICES).unwrap();
        assert_eq!(r, optimize_sfo(&sfo(), &PRICES).unwrap());
        assert!(!optimize_tecfo(&tecfo(4.0, 5.0), &PRICES).unwrap().is_optimal());
    }

    #[test]
    fn reference_dfo_first_slice_at_minimum() {
        let fo = reference_dfo();
        let r = optimize_dfo(&fo, &[0.05, 0.1, 0.1, 0.03]).unwrap();
        let e = r.energies().unwrap();
        assert!((e[0] - 0.324).abs() < 1e-9, "{e:?}");
        assert!(check_schedule(&fo, r.schedule().unwrap()).unwrap().feasible);
    }

    #[test]
    fn box_dfo_equals_sfo() {
        let mut fo = base(vec![SliceConstraint::default(); 8]);
        fo.dependency = Some((0..8).map(|_| HalfspaceMatrix::box_rows(0.303, 0.478)).collect());
        let d = optimize_dfo(&fo, &PRICES).unwrap();
        let s = optimize_sfo(&sfo(), &PRICES).unwrap();
        assert!((d.objective().unwrap() - s.objective().unwrap()).abs() < 1e-9);
    }

    fn running_ufo() -> FlexOffer {
        let mut fo = base(vec![SliceConstraint::default(); 2]);
        fo.uncertain = Some(vec![
            UncertainFunction::new(EnergyBounds::new(0.324, 0.392).unwrap(), vec![vec![1.0]]).unwrap(),
            UncertainFunction::new(
                EnergyBounds::new(0.309, 0.442).unwrap(),
                vec![vec![1.0], vec![-20.6, 66.67], vec![29.467, -66.67]],
            )
            .unwrap(),
        ]);
        fo
    }

    #[test]
    fn ufo_thresholds_then_optimizes() {
        let r = optimize_ufo(&running_ufo(), &[0.05, 0.1], 1.0).unwrap();
        let e = r.energies().unwrap();
        assert!((e[0] - 0.324).abs() < 1e-12);
        assert!((e[1] - 21.6 / 66.67).abs() < 1e-12);
        let r = optimize_ufo(&running_ufo(), &[0.05, -0.1], 0.0).unwrap();
        assert!((r.energies().unwrap()[1] - 0.442).abs() < 1e-12);
    }

    #[test]
    fn ufo_with_split_threshold_set() {
        let mut fo = base(vec![SliceConstraint::default(); 1]);
        // Two humps above 0.9 on [0, 1]; the cheaper one under a negative
        // price is the right-hand interval.
        fo.uncertain = Some(vec![UncertainFunction::new(
            EnergyBounds::new(0.0, 1.0).unwrap(),
            vec![vec![0.0, 12.0, -36.0, 25.0]],
        )
        .unwrap()]);
        let iv = fo.uncertain.as_ref().unwrap()[0].threshold_intervals(0.5).unwrap();
        assert_eq!(iv.len(), 2);
        let r = optimize_ufo(&fo, &[-1.0], 0.5).unwrap();
        assert!((r.energies().unwrap()[0] - 1.0).abs() < 1e-12);
        let r = optimize_ufo(&fo, &[1.0], 0.5).unwrap();
        assert!((r.energies().unwrap()[0] - iv[0].lower).abs() < 1e-12);
    }

    #[test]
    fn zero_flexibility_is_optimal() {
        let mut fo = base((0..3).map(|_| SliceConstraint::with_energy(0.4, 0.4).unwrap()).collect());
        fo.total_energy = Some(EnergyBounds::new(1.2, 1.2).unwrap());
        let r = optimize(&fo, &[0.1, -0.2, 0.3], 1.0).unwrap();
        assert_eq!(r.energies().unwrap(), vec![0.4; 3]);
    }

    fn arb_tecfo() -> impl Strategy<Value = (FlexOffer, Vec<f64>)> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec((0.0f64..1.0, 0.0f64..0.5), n),
                prop::collection::vec(-0.2f64..0.3, n),
                0.0f64..1.0,
                0.0f64..1.0,
            )
                .prop_map(|(b, prices, f1, f2)| {
                    let profile: Vec<SliceConstraint> = b
                        .iter()
                        .map(|&(l, w)| SliceConstraint::with_energy(l, l + w).unwrap())
                        .collect();
                    let lo: f64 = b.iter().map(|x| x.0).sum();
                    let hi: f64 = b.iter().map(|x| x.0 + x.1).sum();
                    let (a, c) = (lo + f1.min(f2) * (hi - lo), lo + f1.max(f2) * (hi - lo));
                    let mut fo = base(profile);
                    fo.total_energy = Some(EnergyBounds::new(a, c).unwrap());
                    (fo, prices)
                })
        })
    }

    proptest! {
        #[test]
        fn greedy_matches_simplex((fo, prices) in arb_tecfo()) {
            let g = optimize_tecfo(&fo, &prices).unwrap();
            let l = optimize_lp(&fo, &prices).unwrap();
            prop_assert!((g.objective().unwrap() - l.objective().unwrap()).abs() < 1e-9);
            prop_assert!(check_schedule(&fo, g.schedule().unwrap()).unwrap().feasible);
            prop_assert!(check_schedule(&fo, l.schedule().unwrap()).unwrap().feasible);
        }

        #[test]
        fn raising_threshold_never_lowers_cost(p in prop::collection::vec(-0.2f64..0.3, 2), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c_lo = optimize_ufo(&running_ufo(), &p, lo).unwrap().objective().unwrap();
            let c_hi = optimize_ufo(&running_ufo(), &p, hi).unwrap().objective().unwrap();
            prop_assert!(c_hi >= c_lo - 1e-12);
        }
    }
}
