//! Benchmark decision rules on the shortest-path feasible set: SAA, CSO,
//! DRCSO, DRCRO, and per-scenario hindsight values.

mod paths;
mod robust;

use crate::cvar::AmbiguityLevel;
use crate::error::{Error, Result};
use crate::model::{CostVector, Decision, DirectedGraph, DiscreteConditional};
use crate::simplex::{solve_lp, solve_milp, LinearProgram, LpStatus, Relation};

pub use paths::{shortest_path_dijkstra, PathGeneration};
pub use robust::{
    subproblem_solver, Auto, Epigraph, RobustSolution, RobustSubproblem, SubproblemSolver,
    SUBPROBLEM_SOLVERS,
};

/// Unit o-d flow program with arc costs `costs`. Flow balance is imposed on
/// every node except the destination (that row is implied). Arc flows are
/// bounded by one and flagged integral when `binary`.
pub fn shortest_path_lp(graph: &DirectedGraph, costs: &[f64], binary: bool) -> LinearProgram {
    let n = graph.arc_count();
    let mut lp = LinearProgram::new(n);
    lp.cost.copy_from_slice(costs);
    for a in 0..n {
        lp.set_bounds(a, 0.0, 1.0);
        lp.integer[a] = binary;
    }
    for v in 0..graph.node_count() {
        if v == graph.destination() {
            continue;
        }
        let mut terms: Vec<(usize, f64)> = graph.out_arcs(v).iter().map(|&a| (a, 1.0)).collect();
        terms.extend(graph.in_arcs(v).iter().map(|&a| (a, -1.0)));
        lp.add_sparse_constraint(&terms, Relation::Eq, graph.supply(v));
    }
    lp
}

/// Minimum of `x^T costs` over the feasible set, by LP (MILP when `binary`).
pub fn shortest_path(graph: &DirectedGraph, costs: &[f64], binary: bool) -> Result<(f64, Decision)> {
    if costs.len() != graph.arc_count() {
        return Err(Error::invalid("arc cost vector has the wrong length"));
    }
    let lp = shortest_path_lp(graph, costs, binary);
    let sol = if binary { solve_milp(&lp)? } else { solve_lp(&lp)? };
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let flow: Vec<f64> = sol
        .primal
        .iter()
        .map(|v| if binary { v.round() } else { v.clamp(0.0, 1.0) })
        .collect();
    let decision = Decision::new(flow, binary)?;
    let value = decision.flow.iter().zip(costs).map(|(x, c)| x * c).sum();
    Ok((value, decision))
}

/// Fully anticipative value `min_x x^T xi` and its decision.
pub fn hindsight(graph: &DirectedGraph, xi: &CostVector, binary: bool) -> Result<(f64, Decision)> {
    shortest_path(graph, xi.as_slice(), binary)
}

/// Hindsight values and decisions for every scenario of a pool, by index.
#[derive(Debug, Clone, PartialEq)]
pub struct HindsightTable {
    values: Vec<f64>,
    decisions: Vec<Decision>,
}

impl HindsightTable {
    pub fn compute(graph: &DirectedGraph, scenarios: &[CostVector], binary: bool) -> Result<Self> {
        let (values, decisions) = scenarios
            .iter()
            .map(|xi| hindsight(graph, xi, binary))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(HindsightTable { values, decisions })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn decision(&self, index: usize) -> &Decision {
        &self.decisions[index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_covers(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::invalid(format!(
                "hindsight table has {} entries for {n} scenarios",
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Sample-average decision: shortest path under the mean training costs.
pub fn solve_saa(graph: &DirectedGraph, costs: &[CostVector], binary: bool) -> Result<(f64, Decision)> {
    if costs.is_empty() {
        return Err(Error::invalid("SAA needs at least one scenario"));
    }
    let mut mean = vec![0.0; graph.arc_count()];
    for xi in costs {
        if xi.len() != mean.len() {
            return Err(Error::invalid("cost vector length differs from the arc count"));
        }
        for (m, c) in mean.iter_mut().zip(xi.as_slice()) {
            *m += c;
        }
    }
    let n = costs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    shortest_path(graph, &mean, binary)
}

/// Conditional stochastic optimization: shortest path under the
/// weight-averaged costs.
pub fn solve_cso(graph: &DirectedGraph, cond: &DiscreteConditional, binary: bool) -> Result<(f64, Decision)> {
    shortest_path(graph, &cond.mean_costs(), binary)
}

/// Worst-case expected cost over the nested-CVaR ambiguity set.
pub fn solve_drcso(
    graph: &DirectedGraph,
    cond: &DiscreteConditional,
    level: AmbiguityLevel,
    binary: bool,
    solver: &dyn SubproblemSolver,
) -> Result<RobustSolution> {
    let problem = RobustSubproblem::new(
        graph,
        cond.support(),
        cond.weights(),
        vec![0.0; cond.len()],
        level,
        binary,
    )?;
    solver.solve(&problem)
}

/// Worst-case expected regret against the per-scenario hindsight values.
pub fn solve_drcro(
    graph: &DirectedGraph,
    cond: &DiscreteConditional,
    level: AmbiguityLevel,
    hindsight: &HindsightTable,
    binary: bool,
    solver: &dyn SubproblemSolver,
) -> Result<RobustSolution> {
    hindsight.check_covers(cond.len())?;
    let problem = RobustSubproblem::new(
        graph,
        cond.support(),
        cond.weights(),
        hindsight.values().to_vec(),
        level,
        binary,
    )?;
    solver.solve(&problem)
}
