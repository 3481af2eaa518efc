//! The worst-case subproblem shared by DRCSO, DRCRO and the DRPCR ratio
//! search:
//!
//! ```text
//! min_{x in X, t, s >= 0}  t + cap * sum_k p_k s_k
//!     s.t.  s_k >= xi_k^T x - c_k - t     for every k with p_k > 0
//! ```
//!
//! which equals `min_x max_{q in capped simplex} E_q[xi^T x - c]`.

use super::paths::{certificate, PathGeneration};
use super::shortest_path_lp;
use crate::cvar::AmbiguityLevel;
use crate::error::{Error, Result};
use crate::model::{CostVector, Decision, DirectedGraph};
use crate::simplex::{solve_lp, solve_milp, LpStatus, Relation};

#[derive(Debug, Clone)]
pub struct RobustSubproblem<'a> {
    pub graph: &'a DirectedGraph,
    pub scenarios: &'a [CostVector],
    pub weights: &'a [f64],
    /// Per-scenario constant `c_k` subtracted from the cost.
    pub offsets: Vec<f64>,
    pub level: AmbiguityLevel,
    pub binary: bool,
}

/// Optimal decision of a [`RobustSubproblem`] with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub value: f64,
    pub decision: Decision,
    /// Worst-case distribution over the full scenario pool.
    pub worst_weights: Vec<f64>,
    /// Optimal `t`.
    pub var_level: f64,
    /// Optimal `s`, zero on scenarios without weight.
    pub excess: Vec<f64>,
}

impl<'a> RobustSubproblem<'a> {
    pub fn new(
        graph: &'a DirectedGraph,
        scenarios: &'a [CostVector],
        weights: &'a [f64],
        offsets: Vec<f64>,
        level: AmbiguityLevel,
        binary: bool,
    ) -> Result<Self> {
        if scenarios.is_empty() || scenarios.len() != weights.len() || offsets.len() != weights.len() {
            return Err(Error::invalid("scenarios, weights and offsets must align"));
        }
        if scenarios.iter().any(|s| s.len() != graph.arc_count()) {
            return Err(Error::invalid("cost vector length differs from the arc count"));
        }
        if offsets.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("offsets must be finite"));
        }
        Ok(RobustSubproblem {
            graph,
            scenarios,
            weights,
            offsets,
            level,
            binary,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.weights[k] > 0.0).collect()
    }

    pub(super) fn mean_costs(&self, active: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.graph.arc_count()];
        for &k in active {
            for (a, c) in self.scenarios[k].as_slice().iter().enumerate() {
                mean[a] += self.weights[k] * c;
            }
        }
        mean
    }

    /// Losses `xi_k^T x - c_k` of a decision on every scenario.
    pub fn losses(&self, decision: &Decision) -> Vec<f64> {
        self.scenarios
            .iter()
            .zip(&self.offsets)
            .map(|(s, c)| {
                s.as_slice()
                    .iter()
                    .zip(&decision.flow)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    - c
            })
            .collect()
    }

    /// Worst-case objective of a fixed decision.
    pub fn objective_at(&self, decision: &Decision) -> Result<f64> {
        Ok(certificate(&self.losses(decision), self.weights, self)?.0)
    }

    /// Packages a decision: the value is the exact worst case at the decision,
    /// and `dual_weights` are kept if they certify that value.
    pub(super) fn finish(
        &self,
        decision: Decision,
        dual_weights: Option<Vec<f64>>,
    ) -> Result<RobustSolution> {
        let g = self.losses(&decision);
        let (value, greedy, t, excess) = certificate(&g, self.weights, self)?;
        let cap = self.level.cap();
        let certifies = |q: &Vec<f64>| {
            let total: f64 = q.iter().sum();
            let within = q
                .iter()
                .zip(self.weights)
                .all(|(qk, p)| *qk >= 0.0 && *qk <= cap * p * (1.0 + 1e-9) + 1e-12);
            let v: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
            within && (total - 1.0).abs() < 1e-9 && (v - value).abs() <= 1e-7 * (1.0 + value.abs())
        };
        let worst_weights = match dual_weights {
            Some(q) if certifies(&q) => q,
            _ => greedy,
        };
        Ok(RobustSolution {
            value,
            decision,
            worst_weights,
            var_level: t,
            excess,
        })
    }
}

/// A method for solving [`RobustSubproblem`]s.
pub trait SubproblemSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &RobustSubproblem<'_>) -> Result<RobustSolution>;
}

/// The full epigraph LP (MILP when binary); worst-case weights come from the
/// duals of the epigraph rows.
pub struct Epigraph;

impl SubproblemSolver for Epigraph {
    fn name(&self) -> &'static str {
        "epigraph"
    }

    fn solve(&self, problem: &RobustSubproblem<'_>) -> Result<RobustSolution> {
        let graph = problem.graph;
        let n_arcs = graph.arc_count();
        let active = problem.active();
        let mut lp = shortest_path_lp(graph, &vec![0.0; n_arcs], problem.binary);
        let flow_rows = lp.num_rows();
        let t = n_arcs;
        lp.cost.push(1.0);
        lp.lower.push(f64::NEG_INFINITY);
        lp.upper.push(f64::INFINITY);
        lp.integer.push(false);
        for &k in &active {
            lp.cost.push(problem.level.cap() * problem.weights[k]);
            lp.lower.push(0.0);
            lp.upper.push(f64::INFINITY);
            lp.integer.push(false);
        }
        for row in lp.constraints.iter_mut() {
            row.coeffs.resize(n_arcs + 1 + active.len(), 0.0);
        }
        for (i, &k) in active.iter().enumerate() {
            let mut terms: Vec<(usize, f64)> = problem.scenarios[k]
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(a, c)| (a, *c))
                .collect();
            terms.push((t, -1.0));
            terms.push((t + 1 + i, -1.0));
            lp.add_sparse_constraint(&terms, Relation::Le, problem.offsets[k]);
        }
        let sol = if problem.binary {
            solve_milp(&lp)?
        } else {
            solve_lp(&lp)?
        };
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => return Err(Error::Unbounded),
        }
        let flow: Vec<f64> = sol.primal[..n_arcs]
            .iter()
            .map(|v| {
                if problem.binary {
                    v.round()
                } else {
                    v.clamp(0.0, 1.0)
                }
            })
            .collect();
        let mut q = vec![0.0; problem.len()];
        for (i, &k) in active.iter().enumerate() {
            q[k] = (-sol.duals[flow_rows + i]).max(0.0);
        }
        let total: f64 = q.iter().sum();
        let q = (total > 0.0).then(|| q.into_iter().map(|v| v / total).collect());
        problem.finish(Decision::new(flow, problem.binary)?, q)
    }
}

/// Path generation for relaxed problems, the epigraph program otherwise.
pub struct Auto;

impl SubproblemSolver for Auto {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve(&self, problem: &RobustSubproblem<'_>) -> Result<RobustSolution> {
        if problem.binary {
            Epigraph.solve(problem)
        } else {
            PathGeneration.solve(problem)
        }
    }
}

/// Names accepted by [`subproblem_solver`].
pub const SUBPROBLEM_SOLVERS: &[&str] = &["auto", "epigraph", "paths"];

/// Looks up a solver among the built-in strategies.
pub fn subproblem_solver(name: &str) -> Result<&'static dyn SubproblemSolver> {
    match name {
        "auto" => Ok(&Auto),
        "epigraph" => Ok(&Epigraph),
        "paths" => Ok(&PathGeneration),
        other => Err(Error::UnknownStrategy {
            kind: "subproblem solver",
            name: other.to_string(),
        }),
    }
}
