//! Dense two-phase simplex for the small linear programs in this crate.
//!
//! Variables are free; bounds are ordinary constraints. Pivoting follows
//! Bland's rule, so the method terminates on degenerate problems.

use crate::error::{FlexError, Result};

const EPS: f64 = 1e-11;
const PHASE_ONE_TOL: f64 = 1e-9;
pub const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize c·x` subject to the listed constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn minimize(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.vars(), "constraint width must match the objective");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    /// `lower ≤ x_j ≤ upper`.
    pub fn bound(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        let mut e = vec![0.0; self.vars()];
        e[j] = 1.0;
        self.add(e.clone(), Relation::Ge, lower);
        self.add(e, Relation::Le, upper)
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau {
    /// Row-major `m × (cols + 1)`, last column is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    /// First artificial column.
    art: usize,
    cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.vars();
        let m = lp.constraints.len();
        let slacks = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();
        let art = 2 * n + slacks;
        let cols = art + m;
        let mut a = vec![vec![0.0; cols + 1]; m];
        let mut basis = vec![0; m];
        let mut slack = 2 * n;
        for (i, c) in lp.constraints.iter().enumerate() {
            let row = &mut a[i];
            for (j, &v) in c.coeffs.iter().enumerate() {
                row[j] = v;
                row[n + j] = -v;
            }
            match c.relation {
                Relation::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row[cols] = c.rhs;
            if c.rhs < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row[art + i] = 1.0;
            basis[i] = art + i;
        }
        Self {
            a,
            basis,
            n,
            art,
            cols,
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        self.a[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations for `cost` over columns `< limit`.
    /// Returns false when the objective is unbounded below.
    fn optimize(&mut self, cost: &[f64], limit: usize, pivots: &mut usize) -> Result<bool> {
        loop {
            let entering = (0..limit).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.a)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                reduced < -EPS
            });
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                if row[c] > EPS {
                    let ratio = row[self.cols] / row[c];
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - EPS
                                || (ratio <= br + EPS && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(FlexError::IterationLimit(MAX_PIVOTS));
            }
            self.pivot(r, c);
        }
    }

    fn solve(mut self, objective: &[f64]) -> Result<LpOutcome> {
        let mut pivots = 0;
        let total = self.cols;
        let mut phase_one = vec![0.0; total];
        phase_one[self.art..].iter_mut().for_each(|v| *v = 1.0);
        self.optimize(&phase_one, total, &mut pivots)?;
        let infeasibility: f64 = self
            .basis
            .iter()
            .zip(&self.a)
            .filter(|(&b, _)| b >= self.art)
            .map(|(_, row)| row[total])
            .sum();
        if infeasibility > PHASE_ONE_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // Push zero-level artificials out of the basis where possible.
        for r in 0..self.basis.len() {
            if self.basis[r] >= self.art {
                if let Some(c) = (0..self.art).find(|&c| self.a[r][c].abs() > 1e-9) {
                    self.pivot(r, c);
                }
            }
        }

        let mut cost = vec![0.0; total];
        for (j, &c) in objective.iter().enumerate() {
            cost[j] = c;
            cost[self.n + j] = -c;
        }
        if !self.optimize(&cost, self.art, &mut pivots)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut split = vec![0.0; total];
        for (&b, row) in self.basis.iter().zip(&self.a) {
            split[b] = row[total];
        }
        let x: Vec<f64> = (0..self.n).map(|j| split[j] - split[self.n + j]).collect();
        let objective_value = x.iter().zip(objective).map(|(x, c)| x * c).sum();
        Ok(LpOutcome::Optimal {
            x,
            objective: objective_value,
        })
    }
}
