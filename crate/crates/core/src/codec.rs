//! JSON wire format for FlexOffer messages.
//!
//! Emission uses a fixed key order, two-space indentation, numbers with at
//! most six decimals (trailing zeros trimmed) and timestamps in
//! `YYYY-MM-DDThh:mm:ss.SSS+0000`. Unknown keys survive a round-trip.

use std::io;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Map, Value};

use crate::error::{FlexError, Result};
use crate::model::{
    CostBounds, EnergyBounds, FlexOffer, HalfspaceMatrix, HalfspaceRow, LifecycleState, Location,
    PriceBounds, Schedule, ScheduleKind, ScheduleSlice, SliceConstraint,
};
use crate::uncertain::UncertainFunction;

pub const ROOT_KEY: &str = "flexOffer";
pub const DEPENDENCY_KEY: &str = "DependencyEnergyConstraintList";
pub const UNCERTAIN_KEY: &str = "UncertainEnergyConstraintList";
pub const TOTAL_ENERGY_KEY: &str = "TotalEnergyConstraints";
pub const TOTAL_COST_KEY: &str = "TotalCostConstraints";

const DEPENDENCY_KEYS: [&str; 2] = [DEPENDENCY_KEY, "DependencyEnergy ConstraintList"];
const UNCERTAIN_KEYS: [&str; 2] = [UNCERTAIN_KEY, "UncertainEnergy ConstraintList"];
const TOTAL_ENERGY_KEYS: [&str; 2] = [TOTAL_ENERGY_KEY, "TotalEnergyConstraint"];
const TOTAL_COST_KEYS: [&str; 2] = [TOTAL_COST_KEY, "TotalCostConstraint"];

/// Keys of the FO object the codec understands, in emission order.
const KNOWN_KEYS: [&str; 27] = [
    "id",
    "state",
    "stateReason",
    "creationInterval",
    "offeredById",
    "locationId",
    "acceptanceBeforeInterval",
    "assignmentBeforeInterval",
    "startAfterInterval",
    "startBeforeInterval",
    "endAfterInterval",
    "endBeforeInterval",
    "assignment",
    "flexOfferProfileConstraints",
    "acceptanceBeforeTime",
    "assignmentBeforeTime",
    "numSecondsPerInterval",
    "startAfterTime",
    "startBeforeTime",
    "endAfterTime",
    "endBeforeTime",
    "creationTime",
    "priceConstraintStartTime",
    "correct",
    "defaultSchedule",
    "flexOfferSchedule",
    ROOT_KEY,
];

const DATETIME_OUT: &str = "%Y-%m-%dT%H:%M:%S%.3f+0000";

/// Renders a number the way the wire format expects.
pub fn format_number(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn format_datetime(t: &DateTime<Utc>) -> String {
    t.format(DATETIME_OUT).to_string()
}

pub fn parse_datetime(field: &str, text: &str) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f%z") {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f")
        .map(|n| n.and_utc())
        .map_err(|e| FlexError::parse(field, format!("malformed datetime {text:?}: {e}")))
}

/// Pretty printer that writes floats in the canonical six-decimal form.
struct WireFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for WireFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_number(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Canonical text of any JSON value, newline-terminated.
pub fn to_canonical_string(value: &Value) -> String {
    let mut out = Vec::new();
    let fmt = WireFormatter {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
    value
        .serialize(&mut ser)
        .expect("serializing a JSON value into memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

// ---------------------------------------------------------------------------
// field readers

fn missing(attribute: &'static str) -> FlexError {
    FlexError::MissingAttribute { attribute }
}

fn number(field: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| FlexError::parse(field, format!("expected a number, found {v}")))
}

fn integer(field: &str, v: &Value) -> Result<i64> {
    if let Some(i) = v.as_i64() {
        return Ok(i);
    }
    match v.as_f64() {
        Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Ok(x as i64),
        _ => Err(FlexError::parse(field, format!("expected an integer, found {v}"))),
    }
}

fn string(field: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| FlexError::parse(field, format!("expected a string, found {v}")))
}

fn object<'a>(field: &str, v: &'a Value) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| FlexError::parse(field, format!("expected an object, found {v}")))
}

fn array<'a>(field: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| FlexError::parse(field, format!("expected an array, found {v}")))
}

fn opt<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

fn first_of<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| opt(obj, k))
}

fn opt_time(obj: &Map<String, Value>, key: &str) -> Result<Option<DateTime<Utc>>> {
    opt(obj, key)
        .map(|v| parse_datetime(key, &string(key, v)?))
        .transpose()
}

fn req_time(obj: &Map<String, Value>, key: &str, attribute: &'static str) -> Result<DateTime<Utc>> {
    opt_time(obj, key)?.ok_or_else(|| missing(attribute))
}

fn opt_int(obj: &Map<String, Value>, key: &str) -> Result<Option<i64>> {
    opt(obj, key).map(|v| integer(key, v)).transpose()
}

fn opt_u32(obj: &Map<String, Value>, key: &str) -> Result<Option<u32>> {
    opt_int(obj, key)?
        .map(|i| u32::try_from(i).map_err(|_| FlexError::parse(key, format!("{i} is out of range"))))
        .transpose()
}

fn bounds(field: &str, v: &Value) -> Result<(f64, f64)> {
    let o = object(field, v)?;
    let lo = opt(o, "lower").ok_or_else(|| FlexError::parse(field, "missing lower"))?;
    let hi = opt(o, "upper").ok_or_else(|| FlexError::parse(field, "missing upper"))?;
    Ok((number("lower", lo)?, number("upper", hi)?))
}

/// Reads a one-element `[{"lower", "upper"}]` list; a bare object is also accepted.
fn bounds_list(field: &str, v: &Value) -> Result<(f64, f64)> {
    match v {
        Value::Array(items) => match items.as_slice() {
            [one] => bounds(field, one),
            [] => Err(FlexError::parse(field, "empty constraint list")),
            _ => Err(FlexError::Unsupported(format!(
                "{field} with {} alternative ranges per time unit",
                items.len()
            ))),
        },
        other => bounds(field, other),
    }
}

fn energy_bounds(field: &str, v: &Value) -> Result<EnergyBounds> {
    let (lo, hi) = bounds_list(field, v)?;
    EnergyBounds::new(lo, hi)
}

fn coefficient_rows(field: &str, v: &Value) -> Result<Vec<Vec<f64>>> {
    array(field, v)?
        .iter()
        .map(|row| array(field, row)?.iter().map(|c| number(field, c)).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// schedules

pub fn parse_schedule(node: &Value, kind: ScheduleKind) -> Result<Schedule> {
    let field = match kind {
        ScheduleKind::DefaultSchedule => "defaultSchedule",
        ScheduleKind::FlexOfferSchedule => "flexOfferSchedule",
    };
    let o = object(field, node)?;
    let slices = opt(o, "scheduleSlices")
        .ok_or_else(|| FlexError::parse(field, "missing scheduleSlices"))?;
    let slices = array("scheduleSlices", slices)?
        .iter()
        .map(|s| {
            let s = object("scheduleSlices", s)?;
            Ok(ScheduleSlice {
                duration: opt_u32(s, "duration")?,
                energy_amount: number(
                    "energyAmount",
                    opt(s, "energyAmount").ok_or_else(|| missing("EnergyAmount"))?,
                )?,
                price: opt(s, "price").map(|p| number("price", p)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut schedule = Schedule::new(kind, opt_time(o, "startTime")?, slices)?;
    schedule.schedule_id = opt_int(o, "scheduleId")?.unwrap_or(0);
    schedule.update_id = opt_int(o, "updateId")?.unwrap_or(0);
    Ok(schedule)
}

pub fn serialize_schedule(s: &Schedule) -> Value {
    let slices: Vec<Value> = s
        .slices
        .iter()
        .map(|sl| {
            let mut m = Map::new();
            if let Some(d) = sl.duration {
                m.insert("duration".into(), d.into());
            }
            m.insert("energyAmount".into(), sl.energy_amount.into());
            if let Some(p) = sl.price {
                m.insert("price".into(), p.into());
            }
            Value::Object(m)
        })
        .collect();
    let mut m = Map::new();
    m.insert("scheduleId".into(), s.schedule_id.into());
    m.insert("updateId".into(), s.update_id.into());
    m.insert("scheduleSlices".into(), Value::Array(slices));
    if let Some(t) = s.start_time {
        m.insert("startTime".into(), format_datetime(&t).into());
    }
    Value::Object(m)
}

// ---------------------------------------------------------------------------
// profile constraints

struct Profile {
    slices: Vec<SliceConstraint>,
    total_energy: Option<EnergyBounds>,
    total_cost: Option<CostBounds>,
    dependency: Option<Vec<HalfspaceMatrix>>,
    uncertain: Option<Vec<UncertainFunction>>,
}

/// Domain where every linear piece is non-negative, used when a UFO entry
/// carries no explicit energy range.
fn implied_domain(polys: &[Vec<f64>]) -> Option<EnergyBounds> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for p in polys {
        match p.as_slice() {
            [c] if *c >= 0.0 => {}
            [c0, c1] if *c1 > 0.0 => lo = lo.max(-c0 / c1),
            [c0, c1] if *c1 < 0.0 => hi = hi.min(-c0 / c1),
            [c0, c1] if *c1 == 0.0 && *c0 >= 0.0 => {}
            _ => return None,
        }
    }
    EnergyBounds::new(lo, hi).ok()
}

fn parse_profile(v: &Value) -> Result<Profile> {
    let field = "flexOfferProfileConstraints";
    let entries = array(field, v)?;
    let any_uncertain = entries
        .iter()
        .filter_map(Value::as_object)
        .any(|o| first_of(o, &UNCERTAIN_KEYS).is_some());

    let mut p = Profile {
        slices: Vec::new(),
        total_energy: None,
        total_cost: None,
        dependency: None,
        uncertain: None,
    };
    let mut deps = Vec::new();
    let mut uncs = Vec::new();
    let mut plain = 0usize;

    for entry in entries {
        let o = object(field, entry)?;
        let tec = first_of(o, &TOTAL_ENERGY_KEYS);
        let cost = first_of(o, &TOTAL_COST_KEYS);
        if let Some(t) = tec {
            if p.total_energy.is_some() {
                return Err(FlexError::Invariant("more than one total energy constraint".into()));
            }
            p.total_energy = Some(energy_bounds(TOTAL_ENERGY_KEY, t)?);
        }
        if let Some(c) = cost {
            let (lower, upper) = bounds_list(TOTAL_COST_KEY, c)?;
            p.total_cost = Some(CostBounds { lower, upper });
        }
        let rest = o
            .keys()
            .filter(|k| !TOTAL_ENERGY_KEYS.contains(&k.as_str()) && !TOTAL_COST_KEYS.contains(&k.as_str()))
            .count();
        if (tec.is_some() || cost.is_some()) && rest == 0 {
            continue;
        }
        if p.total_energy.is_some() && tec.is_none() {
            return Err(FlexError::Invariant(
                "the total energy constraint must follow every slice entry".into(),
            ));
        }

        let mut slice = SliceConstraint {
            energy: None,
            price: opt(o, "priceConstraint")
                .map(|pc| {
                    let pc = object("priceConstraint", pc)?;
                    let lo = opt(pc, "minPrice").ok_or_else(|| FlexError::parse("priceConstraint", "missing minPrice"))?;
                    let hi = opt(pc, "maxPrice").ok_or_else(|| FlexError::parse("priceConstraint", "missing maxPrice"))?;
                    PriceBounds::new(number("minPrice", lo)?, number("maxPrice", hi)?)
                })
                .transpose()?,
            min_duration: opt_u32(o, "minDuration")?,
            max_duration: opt_u32(o, "maxDuration")?,
        };
        let energy = opt(o, "energyConstraintList");
        let dep = first_of(o, &DEPENDENCY_KEYS);
        let unc = first_of(o, &UNCERTAIN_KEYS);

        let rows = dep.map(|d| coefficient_rows(DEPENDENCY_KEY, d)).transpose()?;
        let dep_is_poly = rows
            .as_ref()
            .is_some_and(|r| any_uncertain || r.iter().any(|row| row.len() != 3));
        let polys = match (unc, &rows) {
            (Some(u), _) => Some(coefficient_rows(UNCERTAIN_KEY, u)?),
            (None, Some(r)) if dep_is_poly => Some(r.clone()),
            _ => None,
        };

        if let Some(polys) = polys {
            let domain = match energy {
                Some(e) => energy_bounds("energyConstraintList", e)?,
                None => implied_domain(&polys).ok_or_else(|| {
                    FlexError::parse(
                        UNCERTAIN_KEY,
                        "no energyConstraintList and the polynomials do not bound a domain",
                    )
                })?,
            };
            uncs.push(UncertainFunction::new(domain, polys)?);
        } else if let Some(rows) = rows {
            let triples = rows
                .iter()
                .map(|r| HalfspaceRow::new(r[0], r[1], r[2]))
                .collect();
            deps.push(HalfspaceMatrix::new(triples)?);
            slice.energy = energy
                .map(|e| energy_bounds("energyConstraintList", e))
                .transpose()?;
        } else {
            plain += 1;
            let e = energy.ok_or_else(|| missing("EnergyConstraintsList"))?;
            slice.energy = Some(energy_bounds("energyConstraintList", e)?);
        }
        p.slices.push(slice);
    }

    let n = p.slices.len();
    if !deps.is_empty() {
        if deps.len() != n {
            return Err(FlexError::Invariant(
                "dependency entries must cover every time unit".into(),
            ));
        }
        p.dependency = Some(deps);
    }
    if !uncs.is_empty() {
        if uncs.len() != n {
            return Err(FlexError::Invariant(
                "uncertain entries must cover every time unit".into(),
            ));
        }
        p.uncertain = Some(uncs);
    }
    debug_assert!(plain <= n);
    Ok(p)
}

fn serialize_profile(fo: &FlexOffer) -> Value {
    let mut out = Vec::with_capacity(fo.len() + 1);
    for (t, s) in fo.profile.iter().enumerate() {
        let mut m = Map::new();
        let mut energy = s.energy;
        if let Some(dep) = &fo.dependency {
            let rows: Vec<Value> = dep[t]
                .rows()
                .iter()
                .map(|r| json!([r.a, r.b, r.c]))
                .collect();
            m.insert(DEPENDENCY_KEY.into(), Value::Array(rows));
        }
        if let Some(unc) = &fo.uncertain {
            let polys: Vec<Value> = unc[t].polys.iter().map(|p| json!(p.0)).collect();
            m.insert(UNCERTAIN_KEY.into(), Value::Array(polys));
            energy = Some(unc[t].domain);
        }
        if let Some(e) = energy {
            m.insert(
                "energyConstraintList".into(),
                json!([{"lower": e.lower, "upper": e.upper}]),
            );
        }
        if let Some(p) = s.price {
            m.insert(
                "priceConstraint".into(),
                json!({"minPrice": p.min_price, "maxPrice": p.max_price}),
            );
        }
        if let Some(d) = s.min_duration {
            m.insert("minDuration".into(), d.into());
        }
        if let Some(d) = s.max_duration {
            m.insert("maxDuration".into(), d.into());
        }
        out.push(Value::Object(m));
    }
    if let Some(te) = fo.total_energy {
        out.push(json!({TOTAL_ENERGY_KEY: [{"lower": te.lower, "upper": te.upper}]}));
    }
    if let Some(c) = fo.total_cost {
        out.push(json!({TOTAL_COST_KEY: [{"lower": c.lower, "upper": c.upper}]}));
    }
    Value::Array(out)
}

// ---------------------------------------------------------------------------
// messages

/// Parses a JSON message, wrapped in `{"flexOffer": …}` or bare.
pub fn parse_message(text: &[u8]) -> Result<FlexOffer> {
    let root: Value = serde_json::from_slice(text)
        .map_err(|e| FlexError::parse("message", e.to_string()))?;
    parse_value(&root)
}

pub fn parse_str(text: &str) -> Result<FlexOffer> {
    parse_message(text.as_bytes())
}

pub fn parse_value(root: &Value) -> Result<FlexOffer> {
    let root = object("message", root)?;
    let (o, envelope) = match root.get(ROOT_KEY) {
        Some(inner) => {
            let envelope: Map<String, Value> = root
                .iter()
                .filter(|(k, _)| k.as_str() != ROOT_KEY)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            (object(ROOT_KEY, inner)?, envelope)
        }
        None => (root, Map::new()),
    };

    let id = match opt(o, "id").ok_or_else(|| missing("ID"))? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => return Err(FlexError::parse("id", format!("expected a string or integer, found {other}"))),
    };
    let state: LifecycleState = string("state", opt(o, "state").ok_or_else(|| missing("State"))?)?.parse()?;
    let nspi = opt_int(o, "numSecondsPerInterval")?.ok_or_else(|| missing("NumSecondsPerInterval"))?;
    let nspi = u32::try_from(nspi)
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| FlexError::Invariant("numSecondsPerInterval must be positive".into()))?;
    let creation_time = req_time(o, "creationTime", "CreationTime")?;
    let offered_by = string("offeredById", opt(o, "offeredById").ok_or_else(|| missing("OfferedByID"))?)?;
    let start_after = req_time(o, "startAfterTime", "StartAfterTime")?;
    let start_before = req_time(o, "startBeforeTime", "StartBeforeTime")?;
    let profile = parse_profile(
        opt(o, "flexOfferProfileConstraints").ok_or_else(|| missing("FlexOfferProfileConstraints"))?,
    )?;

    let mut fo = FlexOffer::new(id, offered_by, creation_time, start_after, start_before, profile.slices);
    fo.state = state;
    fo.num_seconds_per_interval = nspi;
    fo.total_energy = profile.total_energy;
    fo.total_cost = profile.total_cost;
    fo.dependency = profile.dependency;
    fo.uncertain = profile.uncertain;
    fo.state_reason = opt(o, "stateReason").map(|v| string("stateReason", v)).transpose()?;
    fo.creation_interval = opt_int(o, "creationInterval")?;
    fo.location = opt(o, "locationId").map(parse_location).transpose()?;
    fo.accept_before_interval = opt_int(o, "acceptanceBeforeInterval")?;
    fo.assignment_before_interval = opt_int(o, "assignmentBeforeInterval")?;
    fo.start_after_interval = opt_int(o, "startAfterInterval")?;
    fo.start_before_interval = opt_int(o, "startBeforeInterval")?;
    fo.end_after_interval = opt_int(o, "endAfterInterval")?;
    fo.end_before_interval = opt_int(o, "endBeforeInterval")?;
    fo.accept_before_time = opt_time(o, "acceptanceBeforeTime")?;
    fo.assignment_before_time = opt_time(o, "assignmentBeforeTime")?;
    fo.end_after_time = opt_time(o, "endAfterTime")?;
    fo.end_before_time = opt_time(o, "endBeforeTime")?;
    fo.price_constraint_start_time = opt_time(o, "priceConstraintStartTime")?;
    fo.assignment = o.get("assignment").cloned();
    fo.correct = o.get("correct").cloned();
    fo.default_schedule = opt(o, "defaultSchedule")
        .map(|v| parse_schedule(v, ScheduleKind::DefaultSchedule))
        .transpose()?;
    fo.flexoffer_schedule = opt(o, "flexOfferSchedule")
        .map(|v| parse_schedule(v, ScheduleKind::FlexOfferSchedule))
        .transpose()?;
    fo.extra = o
        .iter()
        .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    fo.envelope = envelope;
    fo.validate()?;
    Ok(fo)
}

fn parse_location(v: &Value) -> Result<Location> {
    if let Some(s) = v.as_str() {
        return Ok(Location::Named(s.to_owned()));
    }
    let o = object("locationId", v)?;
    let geo = opt(o, "userLocation").map(|u| object("userLocation", u)).transpose()?.unwrap_or(o);
    let lon = opt(geo, "longitude").ok_or_else(|| FlexError::parse("locationId", "missing longitude"))?;
    let lat = opt(geo, "latitude").ok_or_else(|| FlexError::parse("locationId", "missing latitude"))?;
    Ok(Location::Geo {
        longitude: number("longitude", lon)?,
        latitude: number("latitude", lat)?,
    })
}

/// Wire-form JSON value of an FO, wrapped in the `flexOffer` key.
pub fn to_value(fo: &FlexOffer) -> Value {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.to_owned(), v);
        }
    };
    let time = |t: &Option<DateTime<Utc>>| t.as_ref().map(|t| Value::from(format_datetime(t)));
    put("id", Some(fo.id.clone().into()));
    put("state", Some(fo.state.as_str().into()));
    put("stateReason", fo.state_reason.clone().map(Value::from));
    put("creationInterval", fo.creation_interval.map(Value::from));
    put("offeredById", Some(fo.offered_by_id.clone().into()));
    put(
        "locationId",
        fo.location.as_ref().map(|l| match l {
            Location::Geo { longitude, latitude } => {
                json!({"userLocation": {"longitude": longitude, "latitude": latitude}})
            }
            Location::Named(s) => Value::from(s.clone()),
        }),
    );
    put("acceptanceBeforeInterval", fo.accept_before_interval.map(Value::from));
    put("assignmentBeforeInterval", fo.assignment_before_interval.map(Value::from));
    put("startAfterInterval", fo.start_after_interval.map(Value::from));
    put("startBeforeInterval", fo.start_before_interval.map(Value::from));
    put("endAfterInterval", fo.end_after_interval.map(Value::from));
    put("endBeforeInterval", fo.end_before_interval.map(Value::from));
    put("assignment", fo.assignment.clone());
    put("flexOfferProfileConstraints", Some(serialize_profile(fo)));
    put("acceptanceBeforeTime", time(&fo.accept_before_time));
    put("assignmentBeforeTime", time(&fo.assignment_before_time));
    put("numSecondsPerInterval", Some(fo.num_seconds_per_interval.into()));
    put("startAfterTime", time(&Some(fo.start_after_time)));
    put("startBeforeTime", time(&Some(fo.start_before_time)));
    put("endAfterTime", time(&fo.end_after_time));
    put("endBeforeTime", time(&fo.end_before_time));
    put("creationTime", time(&Some(fo.creation_time)));
    put("priceConstraintStartTime", time(&fo.price_constraint_start_time));
    put("correct", fo.correct.clone());
    put("defaultSchedule", fo.default_schedule.as_ref().map(serialize_schedule));
    put("flexOfferSchedule", fo.flexoffer_schedule.as_ref().map(serialize_schedule));
    for (k, v) in &fo.extra {
        m.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let mut root = Map::new();
    root.insert(ROOT_KEY.into(), Value::Object(m));
    for (k, v) in &fo.envelope {
        root.entry(k.clone()).or_insert_with(|| v.clone());
    }
    Value::Object(root)
}

pub fn serialize_message(fo: &FlexOffer) -> Vec<u8> {
    serialize_to_string(fo).into_bytes()
}

pub fn serialize_to_string(fo: &FlexOffer) -> String {
    to_canonical_string(&to_value(fo))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CORE: &str = r#"{"flexOffer": {
        "id": "4188a132-a937-4639-96cf-d8529fa78b86",
        "state": "initial",
        "creationInterval": 1726911,
        "offeredById": "harry@80060B5E0FD671D58243CE7162A6054719822955",
        "flexOfferProfileConstraints": PROFILE,
        "numSecondsPerInterval": 900,
        "startAfterTime": "2019-04-02T16:00:00.000+0000",
        "startBeforeTime": "2019-04-02T18:00:00.000+0000",
        "creationTime": "2019-04-02T15:45:00.000+0000"
    }}"#;

    fn with_profile(p: &str) -> String {
        CORE.replace("PROFILE", p)
    }

    #[test]
    fn numbers_are_trimmed() {
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.303), "0.303");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(-0.221), "-0.221");
        assert_eq!(format_number(2.0 / 3.0), "0.666667");
        assert_eq!(format_number(-1e-9), "0");
        assert_eq!(format_number(1726911.0), "1726911");
    }

    #[test]
    fn datetimes_use_wire_form() {
        let t = parse_datetime("t", "2019-04-02T16:00:00.000+0000").unwrap();
        assert_eq!(t.timestamp(), 1554220800);
        assert_eq!(format_datetime(&t), "2019-04-02T16:00:00.000+0000");
        assert!(parse_datetime("t", "2019-04-02T16:00:00Z").is_ok());
        assert!(matches!(
            parse_datetime("startAfterTime", "yesterday"),
            Err(FlexError::Parse { .. })
        ));
    }

    #[test]
    fn slice_entries_need_energy_constraints() {
        let r = parse_str(&with_profile(r#"[{"minDuration": 1}]"#));
        assert_eq!(
            r.unwrap_err(),
            FlexError::MissingAttribute {
                attribute: "EnergyConstraintsList"
            }
        );
    }

    #[test]
    fn non_numeric_bound_is_a_parse_error() {
        let r = parse_str(&with_profile(
            r#"[{"energyConstraintList": [{"lower": "low", "upper": 0.4}]}]"#,
        ));
        assert!(matches!(r, Err(FlexError::Parse { .. })));
    }

    #[test]
    fn spaced_and_mislabelled_keys_are_accepted() {
        let fo = parse_str(&with_profile(
            r#"[{"DependencyEnergy ConstraintList": [[0, 1, 0.392], [0, -1, -0.324]]}]"#,
        ))
        .unwrap();
        assert_eq!(fo.dependency.as_ref().unwrap()[0].rows().len(), 2);

        let fo = parse_str(&with_profile(
            r#"[{"UncertainEnergy ConstraintList": [[1]], "energyConstraintList": [{"lower": 0.324, "upper": 0.392}]},
                {"DependencyEnergy ConstraintList": [[1], [-20.6, 66.67], [29.467, -66.67]]}]"#,
        ))
        .unwrap();
        let u = fo.uncertain.unwrap();
        assert_eq!(u[1].polys[2].0, vec![29.467, -66.67]);
        assert!((u[1].domain.lower - 20.6 / 66.67).abs() < 1e-12);
        assert!((u[1].domain.upper - 29.467 / 66.67).abs() < 1e-12);
    }

    #[test]
    fn tec_must_trail_slices() {
        let r = parse_str(&with_profile(
            r#"[{"TotalEnergyConstraints": [{"lower": 0, "upper": 1}]},
                {"energyConstraintList": [{"lower": 0.1, "upper": 0.2}]}]"#,
        ));
        assert!(matches!(r, Err(FlexError::Invariant(_))));
    }

    #[test]
    fn numeric_id_and_bare_root() {
        let text = with_profile(r#"[{"energyConstraintList": [{"lower": 0.1, "upper": 0.2}]}]"#)
            .replace(r#""id": "4188a132-a937-4639-96cf-d8529fa78b86""#, r#""id": 42"#);
        let v: Value = serde_json::from_str(&text).unwrap();
        let bare = serde_json::to_string(&v[ROOT_KEY]).unwrap();
        let fo = parse_str(&bare).unwrap();
        assert_eq!(fo.id, "42");
    }

    #[test]
    fn unknown_keys_survive() {
        let text = with_profile(r#"[{"energyConstraintList": [{"lower": 0.1, "upper": 0.2}]}]"#)
            .replace(r#""state": "initial","#, r#""state": "initial", "vendorTag": {"x": [1, 2]},"#)
            .replacen('{', r#"{"envelopeNote": "hi", "#, 1);
        let fo = parse_str(&text).unwrap();
        assert_eq!(fo.extra["vendorTag"], json!({"x": [1, 2]}));
        let again = parse_message(&serialize_message(&fo)).unwrap();
        assert_eq!(again, fo);
        assert_eq!(again.envelope["envelopeNote"], json!("hi"));
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let node = json!({"scheduleId": 0, "updateId": 0, "scheduleSlices": []});
        assert!(parse_schedule(&node, ScheduleKind::DefaultSchedule).is_err());
        let node = json!({"scheduleSlices": [{"duration": 1}]});
        assert_eq!(
            parse_schedule(&node, ScheduleKind::DefaultSchedule).unwrap_err(),
            FlexError::MissingAttribute { attribute: "EnergyAmount" }
        );
    }
}
