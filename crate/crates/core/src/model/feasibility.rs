use std::fmt;

use serde::Serialize;

use super::{FlexOffer, HalfspaceRow, Kwh, Schedule, ScheduleSlice, DEFAULT_TOLERANCE};
use crate::error::{FlexError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ConstraintFamily {
    SliceBound,
    TotalEnergy,
    Dependency { row: usize, coefficients: HalfspaceRow },
    UncertainDomain,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintFamily::SliceBound => f.write_str("slice-bound"),
            ConstraintFamily::TotalEnergy => f.write_str("total-energy"),
            ConstraintFamily::Dependency { row, coefficients } => {
                write!(f, "dependency row {} {}", row + 1, coefficients)
            }
            ConstraintFamily::UncertainDomain => f.write_str("uncertain-domain"),
        }
    }
}

/// One violated constraint. `slice` is 1-based and absent for the
/// whole-horizon total energy constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub slice: Option<usize>,
    pub family: ConstraintFamily,
    /// Amount by which the constraint is exceeded (kWh-scaled).
    pub excess: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slice {
            Some(t) => write!(f, "slice {t}: {} violated by {:.6}", self.family, self.excess),
            None => write!(f, "{} violated by {:.6}", self.family, self.excess),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    /// Violations located at the given 1-based slice.
    pub fn at_slice(&self, t: usize) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.slice == Some(t))
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.feasible {
            return f.write_str("feasible");
        }
        f.write_str("infeasible")?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

/// Splits every multi-unit slice into unit slices of equal energy.
pub fn unit_expand(schedule: &Schedule) -> Schedule {
    let slices = schedule
        .slices
        .iter()
        .flat_map(|s| {
            let d = s.units().max(1);
            let share = s.energy_amount / f64::from(d);
            (0..d).map(move |_| ScheduleSlice::unit(share, s.price))
        })
        .collect();
    Schedule {
        slices,
        ..schedule.clone()
    }
}

pub fn check_schedule(fo: &FlexOffer, schedule: &Schedule) -> Result<FeasibilityReport> {
    check_schedule_with(fo, schedule, DEFAULT_TOLERANCE)
}

/// Checks every constraint family of `fo` against `schedule` and lists all
/// violations.
pub fn check_schedule_with(
    fo: &FlexOffer,
    schedule: &Schedule,
    tolerance: f64,
) -> Result<FeasibilityReport> {
    let energies: Vec<Kwh> = schedule.unit_energies();
    if energies.len() != fo.len() {
        return Err(FlexError::Shape {
            expected: fo.len(),
            actual: energies.len(),
        });
    }
    let mut violations = Vec::new();

    for (t, (slice, &e)) in fo.profile.iter().zip(&energies).enumerate() {
        if let Some(b) = slice.energy {
            let excess = (b.lower - e).max(e - b.upper);
            if excess > tolerance {
                violations.push(Violation {
                    slice: Some(t + 1),
                    family: ConstraintFamily::SliceBound,
                    excess,
                });
            }
        }
    }

    if let Some(te) = fo.total_energy {
        let total: Kwh = energies.iter().sum();
        let excess = (te.lower - total).max(total - te.upper);
        if excess > tolerance {
            violations.push(Violation {
                slice: None,
                family: ConstraintFamily::TotalEnergy,
                excess,
            });
        }
    }

    if let Some(dep) = &fo.dependency {
        let mut consumed = 0.0;
        for (t, (matrix, &y)) in dep.iter().zip(&energies).enumerate() {
            for (i, row) in matrix.rows().iter().enumerate() {
                let excess = row.excess(consumed, y);
                if excess > tolerance {
                    violations.push(Violation {
                        slice: Some(t + 1),
                        family: ConstraintFamily::Dependency {
                            row: i,
                            coefficients: *row,
                        },
                        excess,
                    });
                }
            }
            consumed += y;
        }
    }

    if let Some(unc) = &fo.uncertain {
        for (t, (f, &e)) in unc.iter().zip(&energies).enumerate() {
            let excess = (f.domain.lower - e).max(e - f.domain.upper);
            if excess > tolerance {
                violations.push(Violation {
                    slice: Some(t + 1),
                    family: ConstraintFamily::UncertainDomain,
                    excess,
                });
            }
        }
    }

    Ok(FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    })
}
