//! H-representation of dependency slices.
//!
//! Every row `[a, b, c]` encodes `a·x + b·y ≤ c` where `x` is the energy
//! consumed before the slice and `y` the energy consumed in the slice.
//! Lower bounds are stored negated, so there is a single evaluation path.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceRow {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfspaceRow {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// Left-hand side minus right-hand side; positive means violated.
    pub fn excess(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y - self.c
    }

    pub fn holds(&self, x: f64, y: f64, tolerance: f64) -> bool {
        self.excess(x, y) <= tolerance
    }
}

impl fmt::Display for HalfspaceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}]",
            crate::codec::format_number(self.a),
            crate::codec::format_number(self.b),
            crate::codec::format_number(self.c)
        )
    }
}

/// Polygon over (cumulative energy, slice energy) given by its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceMatrix {
    rows: Vec<HalfspaceRow>,
}

impl HalfspaceMatrix {
    pub fn new(rows: Vec<HalfspaceRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(FlexError::Invariant(
                "a dependency matrix needs at least one row".into(),
            ));
        }
        if rows
            .iter()
            .any(|r| !(r.a.is_finite() && r.b.is_finite() && r.c.is_finite()))
        {
            return Err(FlexError::Invariant(
                "dependency matrix coefficients must be finite".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn from_triples(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| HalfspaceRow::new(r[0], r[1], r[2])).collect())
    }

    pub fn rows(&self) -> &[HalfspaceRow] {
        &self.rows
    }

    /// Axis-aligned box `lower ≤ y ≤ upper` with no dependency on `x`.
    pub fn box_rows(lower: f64, upper: f64) -> Self {
        Self {
            rows: vec![
                HalfspaceRow::new(0.0, -1.0, -lower),
                HalfspaceRow::new(0.0, 1.0, upper),
            ],
        }
    }

    /// Indices (0-based) of rows violated at `(x, y)`.
    pub fn violated_rows(&self, x: f64, y: f64, tolerance: f64) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.holds(x, y, tolerance))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn contains(&self, x: f64, y: f64, tolerance: f64) -> bool {
        self.rows.iter().all(|r| r.holds(x, y, tolerance))
    }

    /// Allowed slice energies once `x` is fixed, or `None` when empty.
    /// Open sides are reported as infinities.
    pub fn y_range_at(&self, x: f64, tolerance: f64) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for r in &self.rows {
            if r.b.abs() < 1e-15 {
                if r.a * x > r.c + tolerance {
                    return None;
                }
            } else if r.b > 0.0 {
                hi = hi.min((r.c - r.a * x) / r.b);
            } else {
                lo = lo.max((r.c - r.a * x) / r.b);
            }
        }
        (lo <= hi + tolerance).then_some((lo, hi.max(lo)))
    }

    /// Vertices of the polygon in counter-clockwise order.
    ///
    /// Pairwise intersections filtered by feasibility; fine for the handful
    /// of rows a slice carries. Returns an empty list for an empty or
    /// unbounded polygon.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        const TOL: f64 = 1e-9;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for s in &self.rows[i + 1..] {
                let det = r.a * s.b - r.b * s.a;
                if det.abs() < 1e-14 {
                    continue;
                }
                let x = (r.c * s.b - r.b * s.c) / det;
                let y = (r.a * s.c - r.c * s.a) / det;
                if self.contains(x, y, TOL)
                    && !points
                        .iter()
                        .any(|p| (p.0 - x).abs() < 1e-10 && (p.1 - y).abs() < 1e-10)
                {
                    points.push((x, y));
                }
            }
        }
        if points.is_empty() || !self.is_bounded() {
            return Vec::new();
        }
        let n = points.len() as f64;
        let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
        points.sort_by(|p, q| {
            let ap = (p.1 - cy).atan2(p.0 - cx);
            let aq = (q.1 - cy).atan2(q.0 - cx);
            ap.total_cmp(&aq)
        });
        points
    }

    /// True when the row normals positively span the plane, i.e. no
    /// direction escapes every row.
    pub fn is_bounded(&self) -> bool {
        // Sweep candidate escape directions: each row normal's perpendiculars
        // bound the recession cone, so testing them is sufficient.
        let mut dirs = Vec::with_capacity(self.rows.len() * 2);
        for r in &self.rows {
            dirs.push((-r.b, r.a));
            dirs.push((r.b, -r.a));
        }
        !dirs.iter().any(|&(dx, dy)| {
            let norm = (dx * dx + dy * dy).sqrt();
            norm > 0.0
                && self
                    .rows
                    .iter()
                    .all(|r| (r.a * dx + r.b * dy) / norm <= 1e-12)
        })
    }

    /// Range of `y` over the whole polygon. Rows that ignore `x` (as on a
    /// first slice) give a band, and its `y` range is reported.
    pub fn y_projection(&self) -> Option<(f64, f64)> {
        if self.rows.iter().all(|r| r.a == 0.0) {
            return self
                .y_range_at(0.0, 0.0)
                .filter(|(lo, hi)| lo.is_finite() && hi.is_finite());
        }
        project(&self.vertices(), |p| p.1)
    }

    /// Range of `x` over the whole polygon.
    pub fn x_projection(&self) -> Option<(f64, f64)> {
        project(&self.vertices(), |p| p.0)
    }

    /// Range of `x + y`, the cumulative energy after the slice.
    pub fn sum_projection(&self) -> Option<(f64, f64)> {
        project(&self.vertices(), |p| p.0 + p.1)
    }
}

fn project(vertices: &[(f64, f64)], f: impl Fn(&(f64, f64)) -> f64) -> Option<(f64, f64)> {
    if vertices.is_empty() {
        return None;
    }
    let lo = vertices.iter().map(&f).fold(f64::INFINITY, f64::min);
    let hi = vertices.iter().map(&f).fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}
