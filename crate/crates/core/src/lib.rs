//! FlexOffer engine.
//!
//! Parses and serializes FlexOffer messages, checks and optimizes schedules
//! for the standard, total-energy, dependency and uncertain constraint
//! families, aggregates pools of offers, generates offers from a heat-pump
//! room model, scores representations economically, drives the offer
//! lifecycle and exports RDF.

pub mod aggregate;
pub mod codec;
pub mod error;
pub mod heatpump;
pub mod lifecycle;
pub mod lp;
pub mod metric;
pub mod model;
pub mod optimize;
pub mod rdf;
pub mod uncertain;

pub use error::{FlexError, Result};
pub use model::{
    check_schedule, EnergyBounds, FeasibilityReport, FlexOffer, FoKind, HalfspaceMatrix,
    LifecycleState, Schedule, ScheduleKind, SliceConstraint,
};
