//! Turtle export of FO instances against the dCO / SAREF4ENER vocabularies,
//! and a report of which attributes SAREF4ENER alone can express.

use std::fmt::{self, Write as _};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::codec::format_number;
use crate::model::{EnergyBounds, FlexOffer, FoKind, Location, Schedule, ScheduleKind};
use crate::uncertain::DEFAULT_THRESHOLD;

pub const DCO: &str = "https://w3id.org/dco#";
pub const S4ENER: &str = "https://saref.etsi.org/saref4ener/";
pub const SAREF: &str = "https://saref.etsi.org/core/";
pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Group {
    Core,
    Profile,
    ScheduleSlice,
    TotalEnergy,
    Dependency,
    Uncertain,
}

impl Group {
    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Core => "core",
            Group::Profile => "profile constraint",
            Group::ScheduleSlice => "schedule slice",
            Group::TotalEnergy => "total energy",
            Group::Dependency => "dependency",
            Group::Uncertain => "uncertain",
        }
    }

    /// Groups that describe energy, price or time constraints.
    pub fn is_constraint(&self) -> bool {
        !matches!(self, Group::Core | Group::ScheduleSlice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coverage {
    Mapped,
    Partial,
    DcoOnly,
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coverage::Mapped => "mapped",
            Coverage::Partial => "partial",
            Coverage::DcoOnly => "dco-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MappingRule {
    pub fo_attribute: &'static str,
    pub group: Group,
    pub mandatory: bool,
    /// SAREF/SAREF4ENER counterpart, if any.
    pub target: Option<&'static str>,
    pub coverage: Coverage,
    /// Predicate carrying the attribute in the exported Turtle.
    pub property: &'static str,
    pub note: &'static str,
}

const fn rule(
    fo_attribute: &'static str,
    group: Group,
    mandatory: bool,
    target: Option<&'static str>,
    coverage: Coverage,
    property: &'static str,
    note: &'static str,
) -> MappingRule {
    MappingRule {
        fo_attribute,
        group,
        mandatory,
        target,
        coverage,
        property,
        note,
    }
}

use Coverage::{DcoOnly, Mapped, Partial};
use Group::{Core, Dependency, Profile, ScheduleSlice as Slot, TotalEnergy, Uncertain};

const ENERGY_NOTE: &str = "SAREF4ENER includes EnergyMax and EnergyMin";
const PRICE_NOTE: &str = "SAREF does not include min and max price";

pub const RULES: &[MappingRule] = &[
    rule("ID", Core, true, None, DcoOnly, "dco:flexOfferID", ""),
    rule("State", Core, true, Some("s4ener:PowerSequenceState"), Mapped, "dco:hasState", ""),
    rule("StateReason", Core, false, None, DcoOnly, "dco:stateReason", ""),
    rule("NumSecondsPerInterval", Core, true, None, DcoOnly, "dco:numSecondsPerInterval", ""),
    rule("CreationTime", Core, true, None, DcoOnly, "dco:creationTime", ""),
    rule("CreationInterval", Core, true, None, DcoOnly, "dco:creationInterval", ""),
    rule("OfferedByID", Core, true, None, DcoOnly, "dco:offeredByID", ""),
    rule("LocationID", Core, false, None, DcoOnly, "dco:locationID", "In SAREF, a device can have a location"),
    rule("AcceptBeforeTime", Core, false, None, DcoOnly, "dco:acceptanceBeforeTime", ""),
    rule("AcceptBeforeInterval", Core, false, None, DcoOnly, "dco:acceptBeforeInterval", ""),
    rule("AssignmentBeforeTime", Core, false, None, DcoOnly, "dco:assignmentBeforeTime", ""),
    rule("AssignmentBeforeInterval", Core, false, None, DcoOnly, "dco:assignmentBeforeInterval", ""),
    rule("StartAfterInterval", Core, false, None, DcoOnly, "dco:startAfterInterval", ""),
    rule("StartBeforeTime", Core, true, None, DcoOnly, "dco:startBeforeTime", ""),
    rule("StartBeforeInterval", Core, false, None, DcoOnly, "dco:startBeforeInterval", ""),
    rule("EndAfterTime", Core, false, None, DcoOnly, "dco:endAfterTime", ""),
    rule("EndAfterInterval", Core, false, None, DcoOnly, "dco:endAfterInterval", ""),
    rule("EndBeforeTime", Core, false, None, DcoOnly, "dco:endBeforeTime", ""),
    rule("EndBeforeInterval", Core, false, None, DcoOnly, "dco:endBeforeInterval", ""),
    rule("StartAfterTime", Core, true, None, DcoOnly, "dco:startAfterTime", ""),
    rule("FlexOfferProfileConstraints", Core, true, None, DcoOnly, "dco:hasProfileConstraint", ""),
    rule("FlexOfferPriceConstraint", Core, false, None, DcoOnly, "dco:priceConstraintStartTime", ""),
    rule("DefaultSchedule", Core, false, None, DcoOnly, "dco:defaultSchedule", ""),
    rule("FlexOfferSchedule", Core, false, None, DcoOnly, "dco:flexOfferSchedule", ""),
    rule("EnergyConstraintsList", Profile, true, Some("s4ener:Energy"), Mapped, "dco:hasEnergyConstraintList", ENERGY_NOTE),
    rule("PriceConstraint", Profile, false, Some("saref:hasPrice"), Partial, "saref:hasPrice", PRICE_NOTE),
    rule("MinDuration", Profile, false, Some("s4ener:ActiveDurationMin"), Mapped, "s4ener:ActiveDurationMin", ""),
    rule("MaxDuration", Profile, false, Some("s4ener:ActiveDurationMax"), Mapped, "s4ener:ActiveDurationMax", ""),
    rule("TotalCostConstraint", Profile, false, None, DcoOnly, "dco:totalCostConstraint", ""),
    rule("Duration", Slot, false, Some("s4ener:DefaultDuration"), Mapped, "s4ener:DefaultDuration", ""),
    rule("EnergyAmount", Slot, true, Some("s4ener:EnergyExpected"), Mapped, "s4ener:EnergyExpected", ""),
    rule("Price", Slot, false, None, DcoOnly, "dco:hasPrice", ""),
    rule("TotalEnergyConstraint", TotalEnergy, false, Some("s4ener:Energy"), Mapped, "dco:totalEnergyConstraint", ENERGY_NOTE),
    rule("DependencyEnergyConstraintList", Dependency, false, None, DcoOnly, "dco:dependencyEnergyConstraintList", ""),
    rule("PriceConstraint", Dependency, false, Some("saref:hasPrice"), Partial, "saref:hasPrice", ""),
    rule("MinDuration", Dependency, false, Some("s4ener:ActiveDurationMin"), Mapped, "s4ener:ActiveDurationMin", ""),
    rule("MaxDuration", Dependency, false, Some("s4ener:ActiveDurationMax"), Mapped, "s4ener:ActiveDurationMax", ""),
    rule("UncertainFunctions", Uncertain, false, None, DcoOnly, "dco:uncertainFunctions", ""),
    rule("UncertainThreshold", Uncertain, false, None, DcoOnly, "dco:uncertainThreshold", ""),
    rule("MinDuration", Uncertain, false, Some("s4ener:ActiveDurationMin"), Mapped, "s4ener:ActiveDurationMin", ""),
    rule("MaxDuration", Uncertain, false, Some("s4ener:ActiveDurationMax"), Mapped, "s4ener:ActiveDurationMax", ""),
];

pub fn find_rule(group: Group, attribute: &str) -> Option<&'static MappingRule> {
    RULES.iter().find(|r| r.group == group && r.fo_attribute == attribute)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub attribute: &'static str,
    pub group: Group,
    pub coverage: Coverage,
    pub target: Option<&'static str>,
    pub note: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn row(&self, attribute: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.attribute == attribute)
    }

    pub fn dco_only_constraints(&self) -> impl Iterator<Item = &CoverageRow> {
        self.rows
            .iter()
            .filter(|r| r.coverage == DcoOnly && r.group.is_constraint())
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<32} {:<20} {:<10} {:<28} note", "attribute", "group", "coverage", "saref4ener")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<32} {:<20} {:<10} {:<28} {}",
                r.attribute,
                r.group.as_str(),
                r.coverage.to_string(),
                r.target.unwrap_or("-"),
                r.note
            )?;
        }
        Ok(())
    }
}

/// Rules whose attribute is present on `fo`, in table order.
pub fn populated_rules(fo: &FlexOffer) -> Vec<&'static MappingRule> {
    let kind = fo.kind();
    let schedules: Vec<&Schedule> = fo.default_schedule.iter().chain(&fo.flexoffer_schedule).collect();
    let any_slice = |p: &dyn Fn(&crate::model::SliceConstraint) -> bool| fo.profile.iter().any(p);
    let constraint_group = match kind {
        FoKind::Dfo => Dependency,
        FoKind::Ufo => Uncertain,
        FoKind::Sfo | FoKind::Tecfo => Profile,
    };
    RULES
        .iter()
        .filter(|r| match (r.group, r.fo_attribute) {
                (Core, "ID" | "State" | "NumSecondsPerInterval" | "CreationTime" | "OfferedByID")
                | (Core, "StartAfterTime" | "StartBeforeTime" | "FlexOfferProfileConstraints") => true,
                (Core, "StateReason") => fo.state_reason.is_some(),
                (Core, "CreationInterval") => fo.creation_interval.is_some(),
                (Core, "LocationID") => fo.location.is_some(),
                (Core, "AcceptBeforeTime") => fo.accept_before_time.is_some(),
                (Core, "AcceptBeforeInterval") => fo.accept_before_interval.is_some(),
                (Core, "AssignmentBeforeTime") => fo.assignment_before_time.is_some(),
                (Core, "AssignmentBeforeInterval") => fo.assignment_before_interval.is_some(),
                (Core, "StartAfterInterval") => fo.start_after_interval.is_some(),
                (Core, "StartBeforeInterval") => fo.start_before_interval.is_some(),
                (Core, "EndAfterTime") => fo.end_after_time.is_some(),
                (Core, "EndAfterInterval") => fo.end_after_interval.is_some(),
                (Core, "EndBeforeTime") => fo.end_before_time.is_some(),
                (Core, "EndBeforeInterval") => fo.end_before_interval.is_some(),
                (Core, "FlexOfferPriceConstraint") => fo.price_constraint_start_time.is_some(),
                (Core, "DefaultSchedule") => fo.default_schedule.is_some(),
                (Core, "FlexOfferSchedule") => fo.flexoffer_schedule.is_some(),
                (Profile, "EnergyConstraintsList") => {
                    kind != FoKind::Ufo && any_slice(&|s| s.energy.is_some())
                }
                (Profile, "TotalCostConstraint") => fo.total_cost.is_some(),
                (g, "PriceConstraint") => g == constraint_group && any_slice(&|s| s.price.is_some()),
                (g, "MinDuration") => g == constraint_group && any_slice(&|s| s.min_duration.is_some()),
                (g, "MaxDuration") => g == constraint_group && any_slice(&|s| s.max_duration.is_some()),
                (Slot, "Duration") => schedules.iter().any(|s| s.slices.iter().any(|x| x.duration.is_some())),
                (Slot, "EnergyAmount") => !schedules.is_empty(),
                (Slot, "Price") => schedules.iter().any(|s| s.slices.iter().any(|x| x.price.is_some())),
                (TotalEnergy, _) => fo.total_energy.is_some(),
                (Dependency, "DependencyEnergyConstraintList") => fo.dependency.is_some(),
                (Uncertain, _) => fo.uncertain.is_some(),
                _ => false,
        })
        .collect()
}

pub fn saref_coverage(fo: &FlexOffer) -> CoverageReport {
    CoverageReport {
        rows: populated_rules(fo)
            .into_iter()
            .map(|r| CoverageRow {
                attribute: r.fo_attribute,
                group: r.group,
                coverage: r.coverage,
                target: r.target,
                note: r.note,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Turtle

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Percent-encodes everything outside the unreserved set.
fn iri_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

fn decimal(v: f64) -> String {
    format!("\"{}\"^^xsd:decimal", format_number(v))
}

fn datetime(t: &DateTime<Utc>) -> String {
    format!("\"{}\"^^xsd:dateTime", t.format("%Y-%m-%dT%H:%M:%S%.3fZ"))
}

fn json_rows<I, R>(rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    let rows: Vec<String> = rows
        .into_iter()
        .map(|r| {
            let cells: Vec<String> = r.into_iter().map(format_number).collect();
            format!("[{}]", cells.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

/// One subject with its predicate/object pairs.
struct Node {
    subject: String,
    pairs: Vec<(&'static str, String)>,
}

impl Node {
    fn new(subject: String, class: &str) -> Self {
        Self {
            subject,
            pairs: vec![("a", class.to_owned())],
        }
    }

    fn add(&mut self, p: &'static str, o: impl Into<String>) {
        self.pairs.push((p, o.into()));
    }

    fn write(&self, out: &mut String) {
        out.push_str(&self.subject);
        for (i, (p, o)) in self.pairs.iter().enumerate() {
            out.push_str(if i == 0 { "\n    " } else { " ;\n    " });
            out.push_str(p);
            out.push(' ');
            out.push_str(o);
        }
        out.push_str(" .\n\n");
    }
}

fn energy_node(b: EnergyBounds) -> String {
    format!(
        "[ a s4ener:Energy ; s4ener:EnergyMin {} ; s4ener:EnergyMax {} ]",
        decimal(b.lower),
        decimal(b.upper)
    )
}

fn schedule_nodes(base: &str, s: &Schedule, nodes: &mut Vec<Node>) -> String {
    let tag = match s.kind {
        ScheduleKind::DefaultSchedule => "defaultSchedule",
        ScheduleKind::FlexOfferSchedule => "flexOfferSchedule",
    };
    let class = match s.kind {
        ScheduleKind::DefaultSchedule => "dco:DefaultSchedule",
        ScheduleKind::FlexOfferSchedule => "dco:FlexOfferSchedule",
    };
    let iri = format!("<{base}#{tag}>");
    let mut node = Node::new(iri.clone(), "dco:Schedule");
    node.add("dco:scheduleType", class);
    node.add("dco:scheduleID", s.schedule_id.to_string());
    node.add("dco:updateID", s.update_id.to_string());
    if let Some(t) = &s.start_time {
        node.add("dco:startTime", datetime(t));
    }
    let mut slices = Vec::with_capacity(s.slices.len());
    for (i, sl) in s.slices.iter().enumerate() {
        let slice_iri = format!("<{base}#{tag}-slice-{}>", i + 1);
        let mut n = Node::new(slice_iri.clone(), "dco:Slice");
        n.add("dco:sliceIndex", (i + 1).to_string());
        if let Some(d) = sl.duration {
            n.add("s4ener:DefaultDuration", d.to_string());
        }
        n.add("s4ener:EnergyExpected", decimal(sl.energy_amount));
        if let Some(p) = sl.price {
            n.add("dco:hasPrice", decimal(p));
        }
        slices.push(n);
        node.add("dco:hasSlice", slice_iri);
    }
    nodes.push(node);
    nodes.extend(slices);
    iri
}

/// IRI of an FO individual.
pub fn fo_iri(fo: &FlexOffer) -> String {
    format!("urn:flexoffer:{}", iri_segment(&fo.id))
}

pub fn fo_to_turtle(fo: &FlexOffer) -> String {
    fo_to_turtle_with(fo, DEFAULT_THRESHOLD)
}

/// Turtle document for `fo`; `threshold` is attached to uncertain constraints.
pub fn fo_to_turtle_with(fo: &FlexOffer, threshold: f64) -> String {
    let base = fo_iri(fo);
    let mut root = Node::new(format!("<{base}>"), "dco:FlexOffer");
    let mut nodes = Vec::new();

    root.add("dco:flexOfferID", escape(&fo.id));
    root.add("dco:hasState", escape(fo.state.as_str()));
    if let Some(r) = &fo.state_reason {
        root.add("dco:stateReason", escape(r));
    }
    root.add("dco:numSecondsPerInterval", fo.num_seconds_per_interval.to_string());
    root.add("dco:creationTime", datetime(&fo.creation_time));
    let intervals: [(&'static str, Option<i64>); 7] = [
        ("dco:creationInterval", fo.creation_interval),
        ("dco:acceptBeforeInterval", fo.accept_before_interval),
        ("dco:assignmentBeforeInterval", fo.assignment_before_interval),
        ("dco:startAfterInterval", fo.start_after_interval),
        ("dco:startBeforeInterval", fo.start_before_interval),
        ("dco:endAfterInterval", fo.end_after_interval),
        ("dco:endBeforeInterval", fo.end_before_interval),
    ];
    root.add("dco:offeredByID", escape(&fo.offered_by_id));
    if let Some(loc) = &fo.location {
        let text = match loc {
            Location::Geo { longitude, latitude } => format!(
                "{{\"longitude\":{},\"latitude\":{}}}",
                format_number(*longitude),
                format_number(*latitude)
            ),
            Location::Named(s) => s.clone(),
        };
        root.add("dco:locationID", escape(&text));
    }
    for (p, v) in intervals {
        if let Some(v) = v {
            root.add(p, v.to_string());
        }
    }
    let times: [(&'static str, Option<&DateTime<Utc>>); 7] = [
        ("dco:acceptanceBeforeTime", fo.accept_before_time.as_ref()),
        ("dco:assignmentBeforeTime", fo.assignment_before_time.as_ref()),
        ("dco:startAfterTime", Some(&fo.start_after_time)),
        ("dco:startBeforeTime", Some(&fo.start_before_time)),
        ("dco:endAfterTime", fo.end_after_time.as_ref()),
        ("dco:endBeforeTime", fo.end_before_time.as_ref()),
        ("dco:priceConstraintStartTime", fo.price_constraint_start_time.as_ref()),
    ];
    for (p, t) in times {
        if let Some(t) = t {
            root.add(p, datetime(t));
        }
    }

    for (t, slice) in fo.profile.iter().enumerate() {
        let iri = format!("<{base}#constraint-{}>", t + 1);
        let mut n = Node::new(iri.clone(), "dco:FlexOfferProfileConstraint");
        n.add("dco:sliceIndex", (t + 1).to_string());
        let domain = fo.uncertain.as_ref().map(|u| u[t].domain);
        if let Some(e) = slice.energy.or(domain) {
            n.add("dco:hasEnergyConstraintList", energy_node(e));
        }
        if let Some(p) = slice.price {
            n.add(
                "saref:hasPrice",
                format!(
                    "[ a saref:Price ; dco:minPrice {} ; dco:maxPrice {} ]",
                    decimal(p.min_price),
                    decimal(p.max_price)
                ),
            );
        }
        if let Some(d) = slice.min_duration {
            n.add("s4ener:ActiveDurationMin", d.to_string());
        }
        if let Some(d) = slice.max_duration {
            n.add("s4ener:ActiveDurationMax", d.to_string());
        }
        if let Some(m) = fo.dependency.as_ref().map(|d| &d[t]) {
            let rows = json_rows(m.rows().iter().map(|r| [r.a, r.b, r.c]));
            n.add("dco:dependencyEnergyConstraintList", escape(&rows));
        }
        if let Some(u) = fo.uncertain.as_ref().map(|u| &u[t]) {
            let polys = json_rows(u.polys.iter().map(|p| p.0.iter().copied()));
            n.add("dco:uncertainFunctions", escape(&polys));
            n.add("dco:uncertainThreshold", decimal(threshold));
        }
        nodes.push(n);
        root.add("dco:hasProfileConstraint", iri);
    }

    if let Some(te) = fo.total_energy {
        let iri = format!("<{base}#total-energy>");
        let mut n = Node::new(iri.clone(), "dco:TotalEnergyConstraint");
        n.add("s4ener:EnergyMin", decimal(te.lower));
        n.add("s4ener:EnergyMax", decimal(te.upper));
        nodes.push(n);
        root.add("dco:totalEnergyConstraint", iri);
    }
    if let Some(tc) = fo.total_cost {
        root.add(
            "dco:totalCostConstraint",
            format!(
                "[ a dco:TotalCostConstraint ; dco:minCost {} ; dco:maxCost {} ]",
                decimal(tc.lower),
                decimal(tc.upper)
            ),
        );
    }
    if let Some(s) = &fo.default_schedule {
        let iri = schedule_nodes(&base, s, &mut nodes);
        root.add("dco:defaultSchedule", iri);
    }
    if let Some(s) = &fo.flexoffer_schedule {
        let iri = schedule_nodes(&base, s, &mut nodes);
        root.add("dco:flexOfferSchedule", iri);
    }

    let mut out = String::new();
    for (prefix, ns) in [("dco", DCO), ("s4ener", S4ENER), ("saref", SAREF), ("xsd", XSD)] {
        let _ = writeln!(out, "@prefix {prefix}: <{ns}> .");
    }
    out.push('\n');
    root.write(&mut out);
    for n in &nodes {
        n.write(&mut out);
    }
    out
}
