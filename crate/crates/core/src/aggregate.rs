//! Sum-based aggregation of SFO/TECFO pools and exact disaggregation.
//!
//! Members are pinned at their earliest start, aligned on the interval grid
//! and their slice bounds summed unit by unit. A total-energy constraint is
//! only carried over as a sum when every member's constraint set is a scaled
//! copy of the others; otherwise each member's total band is first folded
//! into a shrunken box so that every aggregate-feasible schedule splits into
//! member-feasible ones.

use chrono::Duration;

use crate::error::{FlexError, Result};
use crate::model::{
    check_schedule, EnergyBounds, FlexOffer, FoKind, Kwh, Schedule, ScheduleKind, ScheduleSlice,
    SliceConstraint,
};

const HOMOTHETY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MemberBinding {
    pub id: String,
    /// Units between the aggregate start and this member's start.
    pub offset: usize,
    /// Per-unit bounds the member may take inside the aggregate.
    pub bounds: Vec<EnergyBounds>,
    pub fo: FlexOffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateBinding {
    pub aggregate_fo: FlexOffer,
    pub members: Vec<MemberBinding>,
}

/// Member TEC clipped to what its slice bounds can reach.
fn tight_tec(bounds: &[EnergyBounds], te: EnergyBounds) -> EnergyBounds {
    let lo: f64 = bounds.iter().map(|b| b.lower).sum();
    let hi: f64 = bounds.iter().map(|b| b.upper).sum();
    EnergyBounds {
        lower: te.lower.max(lo),
        upper: te.upper.min(hi),
    }
}

/// Flexibility signature: slice widths followed by the TEC slack above the
/// summed lower bounds.
fn signature(bounds: &[EnergyBounds], te: EnergyBounds) -> Vec<f64> {
    let lo: f64 = bounds.iter().map(|b| b.lower).sum();
    let mut v: Vec<f64> = bounds.iter().map(EnergyBounds::width).collect();
    v.push(te.lower - lo);
    v.push(te.upper - lo);
    v
}

fn collinear(a: &[f64], b: &[f64]) -> bool {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < HOMOTHETY_TOL || nb < HOMOTHETY_TOL {
        return true;
    }
    a.iter()
        .zip(b)
        .all(|(x, y)| (x / na - y / nb).abs() <= HOMOTHETY_TOL)
}

/// Largest box inside `bounds ∩ {Σe ∈ te}` obtained by moving every bound
/// towards the other by the same fraction of its width.
pub fn fold_tec(bounds: &[EnergyBounds], te: EnergyBounds) -> Result<Vec<EnergyBounds>> {
    let lo: f64 = bounds.iter().map(|b| b.lower).sum();
    let hi: f64 = bounds.iter().map(|b| b.upper).sum();
    if te.lower > hi + 1e-12 || te.upper < lo - 1e-12 {
        return Err(FlexError::Infeasible(
            "total energy band misses the slice bounds".into(),
        ));
    }
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(bounds.to_vec());
    }
    let beta = ((te.lower - lo) / span).max(0.0);
    let gamma = ((hi - te.upper) / span).max(0.0);
    Ok(bounds
        .iter()
        .map(|b| {
            let w = b.width();
            let lower = b.lower + beta * w;
            let upper = (b.upper - gamma * w).max(lower);
            EnergyBounds { lower, upper }
        })
        .collect())
}

fn member_bounds(fo: &FlexOffer) -> Result<Vec<EnergyBounds>> {
    fo.profile
        .iter()
        .enumerate()
        .map(|(t, s)| {
            s.energy.ok_or_else(|| {
                FlexError::Invariant(format!("member {} slice {} has no energy bounds", fo.id, t + 1))
            })
        })
        .collect()
}

pub fn aggregate(fos: &[FlexOffer]) -> Result<AggregateBinding> {
    let first = fos
        .first()
        .ok_or_else(|| FlexError::Invariant("cannot aggregate an empty pool".into()))?;
    let nspi = first.num_seconds_per_interval;
    for fo in fos {
        match fo.kind() {
            FoKind::Dfo | FoKind::Ufo => {
                return Err(FlexError::Unsupported(format!(
                    "aggregation of {} members ({})",
                    fo.kind(),
                    fo.id
                )))
            }
            FoKind::Sfo | FoKind::Tecfo => {}
        }
        if fo.num_seconds_per_interval != nspi {
            return Err(FlexError::Invariant(
                "members must share numSecondsPerInterval".into(),
            ));
        }
    }

    let starts: Vec<i64> = fos.iter().map(FlexOffer::effective_start_after_interval).collect();
    let earliest = *starts.iter().min().expect("pool is non-empty");
    let earliest_member = starts
        .iter()
        .position(|&s| s == earliest)
        .expect("minimum is attained");
    let window = fos
        .iter()
        .map(FlexOffer::time_flexibility)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .expect("pool is non-empty");

    let mut raw = Vec::with_capacity(fos.len());
    for fo in fos {
        raw.push(member_bounds(fo)?);
    }
    let tecs: Vec<Option<EnergyBounds>> = fos
        .iter()
        .zip(&raw)
        .map(|(fo, b)| fo.total_energy.map(|te| tight_tec(b, te)))
        .collect();

    let same_shape = starts.iter().all(|&s| s == earliest) && fos.iter().all(|f| f.len() == first.len());
    let keep_tec = same_shape && tecs.iter().all(Option::is_some) && {
        let sigs: Vec<Vec<f64>> = raw
            .iter()
            .zip(&tecs)
            .map(|(b, te)| signature(b, te.expect("checked above")))
            .collect();
        sigs.iter().all(|s| collinear(s, &sigs[0]))
    };

    let mut members = Vec::with_capacity(fos.len());
    for (i, fo) in fos.iter().enumerate() {
        let bounds = match tecs[i] {
            Some(te) if !keep_tec => fold_tec(&raw[i], te)?,
            _ => raw[i].clone(),
        };
        members.push(MemberBinding {
            id: fo.id.clone(),
            offset: usize::try_from(starts[i] - earliest).expect("offset is non-negative"),
            bounds,
            fo: fo.clone(),
        });
    }

    let len = members
        .iter()
        .map(|m| m.offset + m.bounds.len())
        .max()
        .expect("pool is non-empty");
    let mut sums = vec![(0.0, 0.0); len];
    for m in &members {
        for (k, b) in m.bounds.iter().enumerate() {
            sums[m.offset + k].0 += b.lower;
            sums[m.offset + k].1 += b.upper;
        }
    }
    let profile = sums
        .into_iter()
        .map(|(lower, upper)| SliceConstraint {
            energy: Some(EnergyBounds {
                lower,
                upper: upper.max(lower),
            }),
            ..SliceConstraint::default()
        })
        .collect();

    let anchor = &fos[earliest_member];
    let start_after = anchor.start_after_time;
    let start_before = start_after + Duration::seconds(window * i64::from(nspi));
    let creation = fos.iter().map(|f| f.creation_time).max().expect("pool is non-empty");
    let mut agg = FlexOffer::new(
        format!("aggregate-{}-{}", fos.len(), first.id),
        "aggregator",
        creation,
        start_after,
        start_before,
        profile,
    );
    agg.num_seconds_per_interval = nspi;
    agg.start_after_interval = Some(earliest);
    agg.start_before_interval = Some(earliest + window);
    if keep_tec {
        let (lower, upper) = tecs
            .iter()
            .flatten()
            .fold((0.0, 0.0), |(l, u), te| (l + te.lower, u + te.upper));
        agg.total_energy = Some(EnergyBounds { lower, upper });
    }
    Ok(AggregateBinding {
        aggregate_fo: agg,
        members,
    })
}

/// Splits one unit's energy over the members active at that unit.
fn split_unit(energy: Kwh, active: &[(usize, EnergyBounds)], out: &mut [Kwh]) {
    let base: f64 = active.iter().map(|(_, b)| b.lower).sum();
    let span: f64 = active.iter().map(|(_, b)| b.width()).sum();
    let extra = energy - base;
    for &(m, b) in active {
        let share = if span > 0.0 { extra * b.width() / span } else { 0.0 };
        out[m] = (b.lower + share).clamp(b.lower, b.upper);
    }
    // Residual from clamping and rounding goes where there is most room.
    for _ in 0..active.len() + 1 {
        let residual = energy - active.iter().map(|(m, _)| out[*m]).sum::<f64>();
        if residual.abs() <= 1e-15 {
            break;
        }
        let room = |&(m, b): &(usize, EnergyBounds)| {
            if residual > 0.0 {
                b.upper - out[m]
            } else {
                out[m] - b.lower
            }
        };
        let pick = active
            .iter()
            .copied()
            .reduce(|best, c| if room(&c) > room(&best) { c } else { best });
        let Some((m, b)) = pick else { break };
        let r = room(&(m, b));
        if r <= 0.0 {
            out[m] += residual;
            break;
        }
        let step = residual.signum() * residual.abs().min(r);
        out[m] += step;
        if (residual - step).abs() <= 1e-15 {
            break;
        }
    }
}

/// Member schedules whose unit energies sum to `schedule` at every unit.
pub fn disaggregate(binding: &AggregateBinding, schedule: &Schedule) -> Result<Vec<(String, Schedule)>> {
    let agg = &binding.aggregate_fo;
    let report = check_schedule(agg, schedule)?;
    if !report.feasible {
        return Err(FlexError::Infeasible(format!(
            "aggregate schedule is not feasible: {report}"
        )));
    }
    let units = crate::model::unit_expand(schedule);
    let n = binding.members.len();
    let mut per_member: Vec<Vec<Kwh>> = binding
        .members
        .iter()
        .map(|m| vec![0.0; m.bounds.len()])
        .collect();

    let mut by_unit: Vec<Vec<usize>> = vec![Vec::new(); agg.len()];
    for (i, m) in binding.members.iter().enumerate() {
        for k in 0..m.bounds.len() {
            by_unit[m.offset + k].push(i);
        }
    }
    let mut scratch = vec![0.0; n];
    let mut active = Vec::new();
    for (t, slice) in units.slices.iter().enumerate() {
        active.clear();
        active.extend(by_unit[t].iter().map(|&i| {
            let m = &binding.members[i];
            (i, m.bounds[t - m.offset])
        }));
        split_unit(slice.energy_amount, &active, &mut scratch);
        for &(i, _) in &active {
            let m = &binding.members[i];
            per_member[i][t - m.offset] = scratch[i];
        }
    }

    let nspi = i64::from(agg.num_seconds_per_interval);
    let start = schedule.start_time.unwrap_or(agg.start_after_time);
    let mut out = Vec::with_capacity(n);
    for (m, energies) in binding.members.iter().zip(per_member) {
        let slices = energies
            .iter()
            .enumerate()
            .map(|(k, &e)| ScheduleSlice::unit(e, units.slices[m.offset + k].price))
            .collect();
        let mut s = Schedule::new(
            ScheduleKind::FlexOfferSchedule,
            Some(start + Duration::seconds(m.offset as i64 * nspi)),
            slices,
        )?;
        s.schedule_id = schedule.schedule_id;
        s.update_id = schedule.update_id;
        let r = check_schedule(&m.fo, &s)?;
        if !r.feasible {
            return Err(FlexError::Infeasible(format!(
                "member {} received an infeasible share: {r}",
                m.id
            )));
        }
        out.push((m.id.clone(), s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::{box_optimum, optimize};
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 4, 2, 16, 0, 0).unwrap()
    }

    fn member(id: &str, shift: i64, bounds: &[(f64, f64)], tec: Option<(f64, f64)>) -> FlexOffer {
        let start = t0() + Duration::seconds(900 * shift);
        let profile = bounds
            .iter()
            .map(|&(l, u)| SliceConstraint::with_energy(l, u).unwrap())
            .collect();
        let mut fo = FlexOffer::new(id, "p", t0(), start, start + Duration::hours(2), profile);
        fo.total_energy = tec.map(|(l, u)| EnergyBounds::new(l, u).unwrap());
        fo
    }

    fn running(id: &str, tec: bool) -> FlexOffer {
        member(id, 0, &[(0.303, 0.478); 8], tec.then_some((2.592, 3.381)))
    }

    fn energies(s: &Schedule) -> Vec<f64> {
        s.unit_energies()
    }

    #[test]
    fn two_running_examples() {
        let b = aggregate(&[running("a", false), running("b", false)]).unwrap();
        for s in &b.aggregate_fo.profile {
            let e = s.energy.unwrap();
            assert!((e.lower - 0.606).abs() < 1e-12 && (e.upper - 0.956).abs() < 1e-12);
        }
        let b = aggregate(&[running("a", true), running("b", true)]).unwrap();
        let te = b.aggregate_fo.total_energy.unwrap();
        assert!((te.lower - 5.184).abs() < 1e-12 && (te.upper - 6.762).abs() < 1e-12);
    }

    #[test]
    fn single_member_is_identity() {
        let fo = running("a", true);
        let b = aggregate(std::slice::from_ref(&fo)).unwrap();
        assert_eq!(b.members[0].offset, 0);
        assert_eq!(b.aggregate_fo.profile, fo.profile);
        assert_eq!(b.aggregate_fo.total_energy, fo.total_energy);
        assert_eq!(b.aggregate_fo.time_flexibility().unwrap(), 8);
    }

    #[test]
    fn symmetric_and_pinned_splits() {
        let b = aggregate(&[
            member("a", 0, &[(0.2, 0.5)], None),
            member("b", 0, &[(0.2, 0.5)], None),
        ])
        .unwrap();
        let s = Schedule::from_energies(ScheduleKind::FlexOfferSchedule, None, &[0.7], None).unwrap();
        let parts = disaggregate(&b, &s).unwrap();
        assert!(parts.iter().all(|(_, p)| (energies(p)[0] - 0.35).abs() < 1e-12));

        let b = aggregate(&[
            member("a", 0, &[(0.1, 0.1)], None),
            member("b", 0, &[(0.2, 0.6)], None),
        ])
        .unwrap();
        let s = Schedule::from_energies(ScheduleKind::FlexOfferSchedule, None, &[0.5], None).unwrap();
        let parts = disaggregate(&b, &s).unwrap();
        assert!((energies(&parts[0].1)[0] - 0.1).abs() < 1e-12);
        assert!((energies(&parts[1].1)[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn offsets_follow_start_intervals() {
        let b = aggregate(&[
            member("late", 2, &[(0.1, 0.2); 3], None),
            member("early", 0, &[(0.1, 0.3); 2], None),
        ])
        .unwrap();
        assert_eq!(b.members[0].offset, 2);
        assert_eq!(b.members[1].offset, 0);
        assert_eq!(b.aggregate_fo.len(), 5);
        assert_eq!(b.aggregate_fo.start_after_time, t0());
        let e3 = b.aggregate_fo.profile[2].energy.unwrap();
        assert_eq!((e3.lower, e3.upper), (0.1, 0.2));
        let mid = b.aggregate_fo.profile[1].energy.unwrap();
        assert_eq!((mid.lower, mid.upper), (0.1, 0.3));
    }

    #[test]
    fn summed_tec_would_be_unsound() {
        // The plain sum admits (2, 1, 0), which no member split realizes.
        let a = member("a", 0, &[(0.0, 1.0), (0.0, 0.0), (0.0, 5.0)], Some((0.0, 10.0)));
        let b = member("b", 0, &[(0.0, 1.0), (0.0, 1.0), (0.0, 0.0)], Some((0.0, 1.0)));
        let bind = aggregate(&[a, b]).unwrap();
        assert!(bind.aggregate_fo.total_energy.is_none());
        let s = Schedule::from_energies(ScheduleKind::FlexOfferSchedule, None, &[2.0, 1.0, 0.0], None)
            .unwrap();
        assert!(disaggregate(&bind, &s).is_err());
    }

    #[test]
    fn rejects_bad_pools() {
        assert!(aggregate(&[]).is_err());
        let mut d = running("d", false);
        d.dependency = Some(vec![crate::model::HalfspaceMatrix::box_rows(0.0, 1.0); 8]);
        assert!(matches!(aggregate(&[d]), Err(FlexError::Unsupported(_))));
        let mut other = running("x", false);
        other.num_seconds_per_interval = 3600;
        assert!(aggregate(&[running("a", false), other]).is_err());
    }

    #[test]
    fn infeasible_aggregate_schedule_is_refused() {
        let b = aggregate(&[running("a", false)]).unwrap();
        let s = Schedule::from_energies(ScheduleKind::FlexOfferSchedule, None, &[0.9; 8], None).unwrap();
        assert!(matches!(disaggregate(&b, &s), Err(FlexError::Infeasible(_))));
    }

    fn arb_member(i: usize) -> impl Strategy<Value = FlexOffer> {
        (
            0i64..3,
            prop::collection::vec((0.0f64..0.5, 0.0f64..0.4), 1..5),
            prop::option::of((0.0f64..1.0, 0.0f64..1.0)),
        )
            .prop_map(move |(shift, b, tec)| {
                let bounds: Vec<(f64, f64)> = b.iter().map(|&(l, w)| (l, l + w)).collect();
                let lo: f64 = bounds.iter().map(|x| x.0).sum();
                let hi: f64 = bounds.iter().map(|x| x.1).sum();
                let tec = tec.map(|(f, g)| {
                    (lo + f.min(g) * (hi - lo), lo + f.max(g) * (hi - lo))
                });
                member(&format!("m{i}"), shift, &bounds, tec)
            })
    }

    fn arb_pool() -> impl Strategy<Value = Vec<FlexOffer>> {
        (1usize..=10).prop_flat_map(|n| (0..n).map(arb_member).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn conservation_and_soundness(pool in arb_pool(), fill in prop::collection::vec(0.0f64..1.0, 8)) {
            let b = aggregate(&pool).unwrap();
            let agg = &b.aggregate_fo;
            let bounds: Vec<EnergyBounds> = agg.profile.iter().map(|s| s.energy.unwrap()).collect();
            // Random point in the box, repaired into the total band.
            let mut e: Vec<f64> = bounds.iter().zip(&fill).map(|(b, f)| b.lower + f * b.width()).collect();
            if let Some(te) = agg.total_energy {
                let sum: f64 = e.iter().sum();
                if sum < te.lower || sum > te.upper {
                    e = box_optimum(&bounds, &vec![1.0; e.len()], Some(te)).unwrap();
                }
            }
            let s = Schedule::from_energies(ScheduleKind::FlexOfferSchedule, None, &e, None).unwrap();
            let parts = disaggregate(&b, &s).unwrap();
            let mut sums = vec![0.0; agg.len()];
            for ((_, p), m) in parts.iter().zip(&b.members) {
                for (k, v) in energies(p).iter().enumerate() {
                    sums[m.offset + k] += v;
                }
            }
            for (x, y) in sums.iter().zip(&e) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn k_copies_scale_bounds(k in 1usize..6) {
            let pool: Vec<FlexOffer> = (0..k).map(|i| running(&format!("c{i}"), false)).collect();
            let b = aggregate(&pool).unwrap();
            for s in &b.aggregate_fo.profile {
                let e = s.energy.unwrap();
                prop_assert!((e.lower - 0.303 * k as f64).abs() < 1e-12);
                prop_assert!((e.upper - 0.478 * k as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn optimize_then_split_keeps_cost(pool in arb_pool(), prices in prop::collection::vec(-0.1f64..0.2, 8)) {
            let b = aggregate(&pool).unwrap();
            let p = &prices[..b.aggregate_fo.len()];
            let r = optimize(&b.aggregate_fo, p, 1.0).unwrap();
            let s = r.schedule().unwrap();
            let parts = disaggregate(&b, s).unwrap();
            let total: f64 = parts
                .iter()
                .zip(&b.members)
                .map(|((_, ps), m)| energies(ps).iter().enumerate().map(|(k, e)| e * p[m.offset + k]).sum::<f64>())
                .sum();
            prop_assert!((total - r.objective().unwrap()).abs() < 1e-9);
        }
    }
}
