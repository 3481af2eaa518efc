//! Dense bounded revised simplex with primal and dual certificates, and a
//! best-first branch-and-bound layer for 0/1 variables.
//!
//! Problems are always minimizations. Every row gets a slack column with bounds
//! that encode its relation, so the working form is `A x + s = b` with box
//! bounds on every column. Phase one drives artificial columns to zero; phase
//! two optimizes the real objective. Pricing is Dantzig's rule and falls back to
//! Bland's rule while pivots stay degenerate, which keeps runs deterministic and
//! cycle-free.

mod branch;
mod revised;

use std::fmt;

use crate::error::{Error, Result};

pub use branch::solve_milp;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
/// Integrality tolerance for branch-and-bound.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min c^T x` subject to linear rows, per-variable bounds and an optional
/// integrality mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
}

impl LinearProgram {
    /// `n` variables, zero cost, bounds `[0, +inf)`, no rows.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            cost: vec![0.0; n],
            constraints: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            integer: vec![false; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Adds a row given as `(variable, coefficient)` pairs.
    pub fn add_sparse_constraint(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, relation, rhs);
    }

    /// Copy with the integrality mask cleared.
    pub fn relaxed(&self) -> Self {
        let mut lp = self.clone();
        lp.integer.iter_mut().for_each(|b| *b = false);
        lp
    }

    pub fn has_integers(&self) -> bool {
        self.integer.iter().any(|&b| b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::invalid("linear program has no variables"));
        }
        if self.lower.len() != n || self.upper.len() != n || self.integer.len() != n {
            return Err(Error::invalid("bound or mask length mismatch"));
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite cost coefficient"));
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY
            {
                return Err(Error::invalid(format!("invalid bounds on variable {j}")));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::invalid(format!("row {i} is not rectangular")));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::invalid(format!("row {i} has non-finite data")));
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let viol = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Plain-text fixed-format listing, meant for bug reports.
impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "LP MIN vars={} rows={}", self.num_vars(), self.num_rows())?;
        write!(f, "OBJ")?;
        for c in &self.cost {
            write!(f, " {c:>14.6e}")?;
        }
        writeln!(f)?;
        for (i, row) in self.constraints.iter().enumerate() {
            write!(f, "R{i:<5}")?;
            for a in &row.coeffs {
                write!(f, " {a:>14.6e}")?;
            }
            writeln!(f, " {:>2} {:>14.6e}", row.relation, row.rhs)?;
        }
        for j in 0..self.num_vars() {
            writeln!(
                f,
                "B{j:<5} {:>14.6e} {:>14.6e}{}",
                self.lower[j],
                self.upper[j],
                if self.integer[j] { " INT" } else { "" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. For a minimization, the dual of a `<=` row is
/// nonpositive and the dual of a `>=` row nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    /// Dual objective `b^T y` plus the bound terms of the reduced costs.
    pub dual_objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn without_solution(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        let objective = match status {
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
            LpStatus::Optimal => f64::NAN,
        };
        LpSolution {
            status,
            primal: vec![f64::NAN; n],
            duals: vec![f64::NAN; m],
            objective,
            dual_objective: objective,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs()
    }
}

/// Solves a continuous linear program.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    if lp.has_integers() {
        return Err(Error::invalid(
            "solve_lp received integer variables; use solve_milp or relaxed()",
        ));
    }
    revised::solve(lp)
}
