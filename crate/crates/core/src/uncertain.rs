//! Uncertain FO probability functions.
//!
//! Each slice carries `f(e) = clamp(min_i p_i(e), 0, 1)` over an energy
//! domain; thresholding at a probability `p0` yields the energy values that
//! are available with at least that probability.

use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::model::{EnergyBounds, Kwh};

pub const MAX_DEGREE: usize = 3;

/// Threshold used when visualizing a UFO without an explicit choice.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

const BISECTION_TOL: f64 = 1e-12;

/// Polynomial with coefficients in ascending degree, constant first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn shifted(&self, by: f64) -> Polynomial {
        let mut c = self.0.clone();
        c[0] -= by;
        Polynomial(c)
    }

    fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial(vec![0.0]);
        }
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    /// Real roots strictly inside `(lo, hi)`, sorted.
    fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let c = trimmed(&self.0);
        let mut roots = match c.len() {
            0 | 1 => Vec::new(),
            2 => vec![-c[0] / c[1]],
            3 => quadratic_roots(c[2], c[1], c[0]),
            _ => {
                // Split at critical points so each piece is monotone, then bisect.
                let mut cuts = vec![lo];
                cuts.extend(self.derivative().roots_in(lo, hi));
                cuts.push(hi);
                cuts.windows(2)
                    .filter_map(|w| bisect(self, w[0], w[1]))
                    .collect()
            }
        };
        roots.retain(|&r| r > lo && r < hi);
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        roots
    }
}

fn trimmed(c: &[f64]) -> &[f64] {
    let mut n = c.len();
    while n > 1 && c[n - 1] == 0.0 {
        n -= 1;
    }
    &c[..n]
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Numerically stable form.
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = Vec::with_capacity(2);
    if q != 0.0 {
        r.push(q / a);
        r.push(c / q);
    } else {
        r.push(0.0);
    }
    r
}

fn bisect(p: &Polynomial, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut flo = p.eval(lo);
    let fhi = p.eval(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = p.eval(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainFunction {
    pub domain: EnergyBounds,
    pub polys: Vec<Polynomial>,
}

impl UncertainFunction {
    pub fn new(domain: EnergyBounds, polys: Vec<Vec<f64>>) -> Result<Self> {
        let f = Self {
            domain,
            polys: polys.into_iter().map(Polynomial).collect(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.polys.is_empty() {
            return Err(FlexError::Invariant(
                "an uncertain function needs at least one polynomial".into(),
            ));
        }
        for p in &self.polys {
            if p.0.is_empty() {
                return Err(FlexError::Invariant("empty polynomial".into()));
            }
            if p.degree() > MAX_DEGREE {
                return Err(FlexError::Unsupported(format!(
                    "polynomial degree {} exceeds {MAX_DEGREE}",
                    p.degree()
                )));
            }
            if p.0.iter().any(|c| !c.is_finite()) {
                return Err(FlexError::Invariant("non-finite coefficient".into()));
            }
        }
        EnergyBounds::new(self.domain.lower, self.domain.upper).map(|_| ())
    }

    fn raw_min(&self, e: f64) -> f64 {
        self.polys
            .iter()
            .map(|p| p.eval(e))
            .fold(f64::INFINITY, f64::min)
    }

    /// Probability that energy `e` is available.
    pub fn evaluate(&self, e: Kwh) -> Result<f64> {
        if !self.domain.contains(e, 1e-12) {
            return Err(FlexError::Domain {
                value: e,
                lower: self.domain.lower,
                upper: self.domain.upper,
            });
        }
        Ok(self.raw_min(e).clamp(0.0, 1.0))
    }

    /// The set `{e in domain : f(e) ≥ p0}` as sorted disjoint closed
    /// intervals; empty when nothing qualifies.
    pub fn threshold_intervals(&self, p0: f64) -> Result<Vec<EnergyBounds>> {
        if !(0.0..=1.0).contains(&p0) {
            return Err(FlexError::Domain {
                value: p0,
                lower: 0.0,
                upper: 1.0,
            });
        }
        let (lo, hi) = (self.domain.lower, self.domain.upper);
        if p0 <= 0.0 {
            return Ok(vec![self.domain]);
        }
        // With 0 < p0 ≤ 1 the clamp is irrelevant: f ≥ p0 iff every p_i ≥ p0.
        let mut acc = vec![(lo, hi)];
        for p in &self.polys {
            let sets = superlevel(p, p0, lo, hi);
            acc = intersect(&acc, &sets);
            if acc.is_empty() {
                break;
            }
        }
        Ok(acc
            .into_iter()
            .map(|(lower, upper)| EnergyBounds { lower, upper })
            .collect())
    }
}

fn superlevel(p: &Polynomial, p0: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let q = p.shifted(p0);
    let mut cuts = vec![lo];
    cuts.extend(q.roots_in(lo, hi));
    cuts.push(hi);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let inside = if b > a {
            q.eval(0.5 * (a + b)) >= -1e-12
        } else {
            q.eval(a) >= -1e-12
        };
        if inside {
            match out.last_mut() {
                Some(last) if (last.1 - a).abs() <= 1e-15 => last.1 = b,
                _ => out.push((a, b)),
            }
        }
    }
    // Tangent touch points where q reaches zero from below on both sides.
    for &r in &cuts[1..cuts.len() - 1] {
        if q.eval(r).abs() < 1e-9 && !out.iter().any(|&(a, b)| r >= a && r <= b) {
            out.push((r, r));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo <= hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}
