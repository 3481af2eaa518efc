//! Distributionally robust prescriptiveness: the per-context subproblem
//! `phi_omega(gamma)`, its aggregate `psi(gamma)`, the search for the largest
//! `gamma` with `psi(gamma) <= 0`, and policy retrieval at that ratio.

mod search;

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvar::AmbiguityLevel;
use crate::error::{Error, Result};
use crate::model::{
    evaluate_cost, CovariateVector, Decision, DirectedGraph, DiscreteConditional, JointModel,
    FEAS_TOL,
};
use crate::solvers::{
    shortest_path, shortest_path_dijkstra, solve_cso, HindsightTable, RobustSolution,
    RobustSubproblem, SubproblemSolver,
};

pub use search::{
    gamma_search, AcceleratedBisection, Bisection, GammaSearch, SearchOutcome, GAMMA_SEARCHES,
};

/// Solution of one `phi_omega(gamma)` subproblem: value, decision, worst-case
/// weights, optimal `t` and `s`.
pub type PhiResult = RobustSolution;

/// Bracket `[lo, hi]` on the optimal ratio with target width `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaInterval {
    lo: f64,
    hi: f64,
    epsilon: f64,
}

impl GammaInterval {
    pub fn new(lo: f64, hi: f64, epsilon: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("invalid gamma interval [{lo}, {hi}]")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(GammaInterval { lo, hi, epsilon })
    }

    pub fn unit(epsilon: f64) -> Result<Self> {
        Self::new(0.0, 1.0, epsilon)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn converged(&self) -> bool {
        self.width() <= self.epsilon
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Raises the lower end; never moves outward.
    pub fn raise_lo(&mut self, lo: f64) {
        self.lo = lo.clamp(self.lo, self.hi);
    }

    /// Lowers the upper end; never moves outward.
    pub fn lower_hi(&mut self, hi: f64) {
        self.hi = hi.clamp(self.lo, self.hi);
    }
}

/// One evaluated midpoint of a ratio search, with the bracket after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub gamma_mid: f64,
    pub psi_value: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "gamma_mid", "psi_value", "lo", "hi"])?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            row.gamma_mid.to_string(),
            row.psi_value.to_string(),
            row.lo.to_string(),
            row.hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything `psi` depends on besides `gamma`. All conditionals must share
/// the scenario pool the hindsight table was computed on.
#[derive(Clone)]
pub struct DrpcrProblem<'a> {
    pub graph: &'a DirectedGraph,
    pub joint: &'a JointModel,
    pub level: AmbiguityLevel,
    pub benchmark: &'a Decision,
    pub hindsight: &'a HindsightTable,
    pub binary: bool,
    pub solver: &'a dyn SubproblemSolver,
    benchmark_costs: Arc<Vec<f64>>,
}

/// Checks `benchmark` and `hindsight` against a conditional's support and
/// returns the benchmark cost on every scenario.
fn benchmark_costs(
    graph: &DirectedGraph,
    cond: &DiscreteConditional,
    benchmark: &Decision,
    hindsight: &HindsightTable,
) -> Result<Vec<f64>> {
    benchmark.validate(graph)?;
    if hindsight.len() != cond.len() {
        return Err(Error::invalid(format!(
            "hindsight table has {} entries for {} scenarios",
            hindsight.len(),
            cond.len()
        )));
    }
    cond.support().iter().map(|xi| evaluate_cost(benchmark, xi)).collect()
}

fn gamma_offsets(bench: &[f64], hindsight: &HindsightTable, gamma: f64) -> Vec<f64> {
    bench
        .iter()
        .zip(hindsight.values())
        .map(|(b, h)| (1.0 - gamma) * b + gamma * h)
        .collect()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1], got {gamma}")));
    }
    Ok(())
}

/// `phi_omega(gamma)`: worst-case expectation of
/// `xi^T x - (1 - gamma) xi^T xbar - gamma min_x' xi^T x'`, minimized over `x`.
#[allow(clippy::too_many_arguments)]
pub fn phi_omega(
    graph: &DirectedGraph,
    cond: &DiscreteConditional,
    gamma: f64,
    level: AmbiguityLevel,
    benchmark: &Decision,
    hindsight: &HindsightTable,
    binary: bool,
    solver: &dyn SubproblemSolver,
) -> Result<PhiResult> {
    check_gamma(gamma)?;
    let bench = benchmark_costs(graph, cond, benchmark, hindsight)?;
    let problem = RobustSubproblem::new(
        graph,
        cond.support(),
        cond.weights(),
        gamma_offsets(&bench, hindsight, gamma),
        level,
        binary,
    )?;
    solver.solve(&problem)
}

/// `psi(gamma)` with the per-context solutions, in context order.
#[derive(Debug, Clone)]
pub struct PsiEvaluation {
    pub gamma: f64,
    pub value: f64,
    pub phis: Vec<PhiResult>,
}

impl<'a> DrpcrProblem<'a> {
    pub fn new(
        graph: &'a DirectedGraph,
        joint: &'a JointModel,
        level: AmbiguityLevel,
        benchmark: &'a Decision,
        hindsight: &'a HindsightTable,
        binary: bool,
        solver: &'a dyn SubproblemSolver,
    ) -> Result<Self> {
        let first = &joint.conditionals()[0];
        for cond in joint.conditionals() {
            if !Arc::ptr_eq(cond.support(), first.support()) && cond.support() != first.support() {
                return Err(Error::invalid("conditionals must share one scenario pool"));
            }
        }
        let bench = benchmark_costs(graph, first, benchmark, hindsight)?;
        Ok(DrpcrProblem {
            graph,
            joint,
            level,
            benchmark,
            hindsight,
            binary,
            solver,
            benchmark_costs: Arc::new(bench),
        })
    }

    /// Benchmark cost on every pooled scenario.
    pub fn benchmark_costs(&self) -> &[f64] {
        &self.benchmark_costs
    }

    /// Expected benchmark cost under the nominal joint model; sets the scale
    /// of the feasibility tolerance on `psi`.
    pub fn nominal_benchmark_cost(&self) -> f64 {
        self.joint
            .context_weights()
            .iter()
            .zip(self.joint.conditionals())
            .map(|(pw, c)| pw * dot(c.weights(), &self.benchmark_costs))
            .sum()
    }

    /// Tolerance below which `psi` counts as nonpositive.
    pub fn feasibility_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.nominal_benchmark_cost().abs())
    }

    pub fn phi(&self, omega: usize, gamma: f64) -> Result<PhiResult> {
        check_gamma(gamma)?;
        let cond = &self.joint.conditionals()[omega];
        let problem = RobustSubproblem::new(
            self.graph,
            cond.support(),
            cond.weights(),
            gamma_offsets(&self.benchmark_costs, self.hindsight, gamma),
            self.level,
            self.binary,
        )?;
        self.solver.solve(&problem)
    }

    /// Evaluates every context in parallel and sums in context order.
    pub fn psi(&self, gamma: f64) -> Result<PsiEvaluation> {
        check_gamma(gamma)?;
        let phis = (0..self.joint.len())
            .into_par_iter()
            .map(|omega| {
                if self.joint.context_weights()[omega] == 0.0 {
                    return Ok(None);
                }
                self.phi(omega, gamma).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut value = 0.0;
        let mut kept = Vec::with_capacity(phis.len());
        for (omega, phi) in phis.into_iter().enumerate() {
            let phi = match phi {
                Some(p) => p,
                None => {
                    // Zero-probability contexts contribute nothing; keep the
                    // benchmark as a placeholder decision.
                    RobustSolution {
                        value: 0.0,
                        decision: self.benchmark.clone(),
                        worst_weights: self.joint.conditionals()[omega].weights().to_vec(),
                        var_level: 0.0,
                        excess: vec![0.0; self.hindsight.len()],
                    }
                }
            };
            value += self.joint.context_weights()[omega] * phi.value;
            kept.push(phi);
        }
        Ok(PsiEvaluation {
            gamma,
            value,
            phis: kept,
        })
    }

    /// Affine minorant `a + b gamma` of `psi` built from the worst-case
    /// weights of an evaluation: for each context the weights `q` are held
    /// fixed, giving `min_x E_q[xi^T x] - E_q[xi^T xbar] + gamma E_q[xi^T xbar - h]`.
    pub fn underestimator(&self, eval: &PsiEvaluation) -> Result<(f64, f64)> {
        let pool = self.joint.conditionals()[0].support();
        let terms = eval
            .phis
            .par_iter()
            .enumerate()
            .map(|(omega, phi)| {
                let pw = self.joint.context_weights()[omega];
                if pw == 0.0 {
                    return Ok((0.0, 0.0));
                }
                let q = &phi.worst_weights;
                let mut avg = vec![0.0; self.graph.arc_count()];
                for (k, qk) in q.iter().enumerate() {
                    if *qk > 0.0 {
                        for (a, c) in pool[k].as_slice().iter().enumerate() {
                            avg[a] += qk * c;
                        }
                    }
                }
                let best = if avg.iter().all(|c| *c >= 0.0) {
                    shortest_path_dijkstra(self.graph, &avg)?.0
                } else {
                    shortest_path(self.graph, &avg, false)?.0
                };
                let bench = dot(q, &self.benchmark_costs);
                let hind = dot(q, self.hindsight.values());
                Ok((pw * (best - bench), pw * (bench - hind)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(terms
            .into_iter()
            .fold((0.0, 0.0), |(a, b), (da, db)| (a + da, b + db)))
    }

    /// Closed-form ratio when `alpha = 0`:
    /// `(E[h(xbar)] - E_zeta[min_x E[h | zeta]]) / (E[h(xbar)] - E[hindsight])`,
    /// or one when the benchmark already attains the hindsight value.
    pub fn nominal_ratio(&self) -> Result<f64> {
        let mut bench = 0.0;
        let mut best = 0.0;
        let mut hind = 0.0;
        for (pw, cond) in self.joint.context_weights().iter().zip(self.joint.conditionals()) {
            if *pw == 0.0 {
                continue;
            }
            bench += pw * dot(cond.weights(), &self.benchmark_costs);
            hind += pw * dot(cond.weights(), self.hindsight.values());
            best += pw * solve_cso(self.graph, cond, self.binary)?.0;
        }
        let denom = bench - hind;
        let tau = 1e-9 * (1.0 + hind.abs());
        if denom <= tau {
            return Ok(1.0);
        }
        Ok(((bench - best) / denom).clamp(0.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How a policy computed on training contexts is extended to a new `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyExtension {
    /// Re-solve the subproblem with the estimator's weights at the new `zeta`.
    #[default]
    FreshWeights,
    /// Re-use the conditional of the nearest training context (Euclidean,
    /// lower index on ties).
    NearestScenario,
}

/// Index of the training context closest to `zeta`.
pub fn nearest_context(contexts: &[CovariateVector], zeta: &CovariateVector) -> Result<usize> {
    contexts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() != zeta.len() {
                return Err(Error::invalid("covariate dimension mismatch"));
            }
            let d: f64 = c
                .as_slice()
                .iter()
                .zip(zeta.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok((d, i))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .ok_or_else(|| Error::invalid("no training contexts"))
}

/// Decision for a new context: the subproblem at `gamma_star` under `cond`.
#[allow(clippy::too_many_arguments)]
pub fn extract_policy(
    graph: &DirectedGraph,
    cond: &DiscreteConditional,
    gamma_star: f64,
    level: AmbiguityLevel,
    benchmark: &Decision,
    hindsight: &HindsightTable,
    binary: bool,
    solver: &dyn SubproblemSolver,
) -> Result<Decision> {
    let phi = phi_omega(graph, cond, gamma_star, level, benchmark, hindsight, binary, solver)?;
    debug_assert!(crate::model::feasibility_residual(&phi.decision, graph) <= FEAS_TOL);
    Ok(phi.decision)
}
