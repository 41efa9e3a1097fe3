#![allow(dead_code)]

use std::path::PathBuf;

use flexkit::codec::parse_message;
use flexkit::FlexOffer;
use rio_api::model::Triple;
use rio_api::parser::TriplesParser;
use rio_turtle::{TurtleError, TurtleParser};

pub const PRICES: [f64; 8] = [0.05, 0.1, 0.1, 0.03, 0.03, 0.05, 0.07, 0.07];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

pub fn fixture(name: &str) -> FlexOffer {
    parse_message(&fixture_bytes(name)).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

/// (subject, predicate IRI, object) of every triple, as rendered by the parser.
pub fn parse_turtle(text: &str) -> Result<Vec<(String, String, String)>, TurtleError> {
    let mut out = Vec::new();
    TurtleParser::new(text.as_bytes(), None).parse_all(&mut |t: Triple<'_>| {
        out.push((t.subject.to_string(), t.predicate.iri.to_owned(), t.object.to_string()));
        Ok::<_, TurtleError>(())
    })?;
    Ok(out)
}
