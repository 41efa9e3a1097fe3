//! FO lifecycle state machine and a synchronous prosumer/aggregator
//! exchange that logs every message and transition.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregate::{aggregate, disaggregate};
use crate::codec::{parse_value, to_value};
use crate::error::{FlexError, Result};
use crate::heatpump::{generate_fo, HeatPumpModel};
use crate::model::{check_schedule, FlexOffer, FoKind, Kwh, LifecycleState, Schedule, ScheduleKind};
use crate::optimize::{optimize, OptimizationResult};
use crate::uncertain::DEFAULT_THRESHOLD;

use LifecycleState::*;

pub const AGGREGATOR: &str = "aggregator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Offer,
    Accept,
    Reject { reason: String },
    Assign { schedule: Schedule },
    Execute,
    Cancel,
    Invalidate { reason: Option<String> },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Offer => "offer",
            Event::Accept => "accept",
            Event::Reject { .. } => "reject",
            Event::Assign { .. } => "assign",
            Event::Execute => "execute",
            Event::Cancel => "cancel",
            Event::Invalidate { .. } => "invalidate",
        }
    }
}

/// Target state of `event` in state `from`, or `None` when the table has no
/// such edge. Re-assigning an assigned FO is a self-transition.
pub fn next_state(from: LifecycleState, event: &Event) -> Option<LifecycleState> {
    if from.is_terminal() {
        return None;
    }
    match (from, event) {
        (Initial, Event::Offer) => Some(Offered),
        (Offered, Event::Accept) => Some(Accepted),
        (Offered, Event::Reject { .. }) => Some(Rejected),
        (Accepted | Assigned, Event::Assign { .. }) => Some(Assigned),
        (Assigned, Event::Execute) => Some(Executed),
        (_, Event::Cancel) => Some(Canceled),
        (_, Event::Invalidate { .. }) => Some(Invalid),
        _ => None,
    }
}

fn past(deadline: Option<DateTime<Utc>>, now: DateTime<Utc>) -> bool {
    deadline.is_some_and(|d| now > d)
}

/// Applies one event at time `now`. Accepting or assigning after the
/// respective deadline invalidates the FO instead.
pub fn apply(fo: &FlexOffer, event: &Event, now: DateTime<Utc>) -> Result<FlexOffer> {
    let to = next_state(fo.state, event).ok_or(FlexError::InvalidTransition {
        state: fo.state,
        event: event.name(),
    })?;
    let mut out = fo.clone();
    let expired = match event {
        Event::Accept => past(fo.accept_before_time, now).then_some("acceptance deadline passed"),
        Event::Assign { .. } => {
            past(fo.assignment_before_time, now).then_some("assignment deadline passed")
        }
        _ => None,
    };
    if let Some(reason) = expired {
        out.state = Invalid;
        out.state_reason = Some(reason.into());
        return Ok(out);
    }
    match event {
        Event::Reject { reason } => out.state_reason = Some(reason.clone()),
        Event::Invalidate { reason } => out.state_reason = reason.clone(),
        Event::Assign { schedule } => {
            let mut s = schedule.clone();
            s.kind = ScheduleKind::FlexOfferSchedule;
            if let Some(prev) = &fo.flexoffer_schedule {
                s.update_id = prev.update_id + 1;
            }
            let report = check_schedule(fo, &s)?;
            if !report.feasible {
                return Err(FlexError::Infeasible(format!("assigned schedule: {report}")));
            }
            out.flexoffer_schedule = Some(s);
        }
        Event::Execute if fo.flexoffer_schedule.is_none() => {
            return Err(FlexError::Invariant("cannot execute without a schedule".into()));
        }
        _ => {}
    }
    out.state = to;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    AcceptAll,
    /// Accept when the summed per-slice amount flexibility reaches this many kWh.
    MinFlexibility(Kwh),
}

impl Policy {
    fn admits(&self, fo: &FlexOffer) -> Result<bool> {
        match *self {
            Policy::AcceptAll => Ok(true),
            Policy::MinFlexibility(kwh) => Ok(fo.total_amount_flexibility()? >= kwh),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogEntry {
    /// An FO as generated by its prosumer.
    Created { seq: usize, fo_id: String, payload: Value },
    Transition {
        seq: usize,
        fo_id: String,
        at: DateTime<Utc>,
        from: LifecycleState,
        to: LifecycleState,
        #[serde(flatten)]
        event: Event,
    },
    /// A wire-format message between two actors.
    Message {
        seq: usize,
        sender: String,
        receiver: String,
        fo_id: String,
        payload: Value,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeLog {
    pub entries: Vec<LogEntry>,
    /// FOs in their final state, in prosumer order.
    pub offers: Vec<FlexOffer>,
    /// Optimized aggregate schedule, when anything was accepted.
    pub aggregate_schedule: Option<Schedule>,
}

impl ExchangeLog {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn final_states(&self) -> BTreeMap<String, LifecycleState> {
        self.offers.iter().map(|f| (f.id.clone(), f.state)).collect()
    }
}

pub fn parse_json_lines(text: &str) -> Result<Vec<LogEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FlexError::parse(format!("log line {}", i + 1), e.to_string()))
        })
        .collect()
}

/// Rebuilds every FO from its creation entry and replays the recorded
/// transitions through [`apply`], checking each recorded target state.
pub fn replay(entries: &[LogEntry]) -> Result<BTreeMap<String, FlexOffer>> {
    let mut fos: BTreeMap<String, FlexOffer> = BTreeMap::new();
    for e in entries {
        match e {
            LogEntry::Created { fo_id, payload, .. } => {
                fos.insert(fo_id.clone(), parse_value(payload)?);
            }
            LogEntry::Transition {
                seq,
                fo_id,
                at,
                from,
                to,
                event,
            } => {
                let fo = fos
                    .get(fo_id)
                    .ok_or_else(|| FlexError::Invariant(format!("entry {seq}: unknown FO {fo_id}")))?;
                if fo.state != *from {
                    return Err(FlexError::Invariant(format!(
                        "entry {seq}: FO {fo_id} is {} but the log says {from}",
                        fo.state
                    )));
                }
                let next = apply(fo, event, *at)?;
                if next.state != *to {
                    return Err(FlexError::Invariant(format!(
                        "entry {seq}: replay reached {} instead of {to}",
                        next.state
                    )));
                }
                fos.insert(fo_id.clone(), next);
            }
            LogEntry::Message { .. } => {}
        }
    }
    Ok(fos)
}

struct Harness {
    entries: Vec<LogEntry>,
    now: DateTime<Utc>,
}

impl Harness {
    fn seq(&self) -> usize {
        self.entries.len()
    }

    fn transition(&mut self, fo: &mut FlexOffer, event: Event) -> Result<()> {
        let next = apply(fo, &event, self.now)?;
        self.entries.push(LogEntry::Transition {
            seq: self.seq(),
            fo_id: fo.id.clone(),
            at: self.now,
            from: fo.state,
            to: next.state,
            event,
        });
        *fo = next;
        Ok(())
    }

    fn message(&mut self, sender: &str, receiver: &str, fo: &FlexOffer) {
        self.entries.push(LogEntry::Message {
            seq: self.seq(),
            sender: sender.into(),
            receiver: receiver.into(),
            fo_id: fo.id.clone(),
            payload: to_value(fo),
        });
    }
}

fn prosumer_id(i: usize) -> String {
    format!("00000000-0000-4000-8000-{:012}", i + 1)
}

/// One round of offer, decision, aggregate optimization and execution for
/// TECFOs generated from each prosumer's room.
pub fn run_exchange(prosumers: &[HeatPumpModel], prices: &[f64], policy: Policy) -> Result<ExchangeLog> {
    let mut fos = Vec::with_capacity(prosumers.len());
    for (i, m) in prosumers.iter().enumerate() {
        let mut fo = generate_fo(m, FoKind::Tecfo)?;
        fo.id = prosumer_id(i);
        fo.offered_by_id = format!("prosumer-{}", i + 1);
        fos.push(fo);
    }
    let mut h = Harness {
        entries: Vec::new(),
        now: fos.iter().map(|f| f.creation_time).max().unwrap_or_default(),
    };
    for fo in &fos {
        h.entries.push(LogEntry::Created {
            seq: h.seq(),
            fo_id: fo.id.clone(),
            payload: to_value(fo),
        });
    }
    for fo in &mut fos {
        h.transition(fo, Event::Offer)?;
        let sender = fo.offered_by_id.clone();
        h.message(&sender, AGGREGATOR, fo);
    }
    for fo in &mut fos {
        let event = if policy.admits(fo)? {
            Event::Accept
        } else {
            Event::Reject {
                reason: "insufficient flexibility".into(),
            }
        };
        h.transition(fo, event)?;
        let receiver = fo.offered_by_id.clone();
        h.message(AGGREGATOR, &receiver, fo);
    }

    let accepted: Vec<usize> = (0..fos.len()).filter(|&i| fos[i].state == Accepted).collect();
    let mut aggregate_schedule = None;
    if !accepted.is_empty() {
        let pool: Vec<FlexOffer> = accepted.iter().map(|&i| fos[i].clone()).collect();
        let split = aggregate(&pool).and_then(|binding| {
            let opt = optimize(&binding.aggregate_fo, prices, DEFAULT_THRESHOLD)?;
            let OptimizationResult::Optimal { schedule, .. } = opt else {
                return Err(FlexError::Infeasible("aggregate has no schedule".into()));
            };
            let shares = disaggregate(&binding, &schedule)?;
            Ok((schedule, shares))
        });
        match split {
            Ok((schedule, shares)) => {
                aggregate_schedule = Some(schedule);
                for (&i, (_, s)) in accepted.iter().zip(shares) {
                    h.transition(&mut fos[i], Event::Assign { schedule: s })?;
                    let receiver = fos[i].offered_by_id.clone();
                    h.message(AGGREGATOR, &receiver, &fos[i]);
                }
                for &i in &accepted {
                    h.transition(&mut fos[i], Event::Execute)?;
                }
            }
            Err(e) => {
                for &i in &accepted {
                    h.transition(
                        &mut fos[i],
                        Event::Invalidate {
                            reason: Some(format!("disaggregation failed: {e}")),
                        },
                    )?;
                }
            }
        }
    }
    Ok(ExchangeLog {
        entries: h.entries,
        offers: fos,
        aggregate_schedule,
    })
}
