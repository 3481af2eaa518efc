//! Label-setting shortest paths and the column-generation subproblem solver.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::robust::{RobustSolution, RobustSubproblem, SubproblemSolver};
use crate::cvar::{value_at_risk, worst_case_expectation};
use crate::error::{Error, Result};
use crate::model::{Decision, DirectedGraph};
use crate::simplex::{solve_lp, LinearProgram, LpStatus, Relation};

/// Column-generation rounds before giving up.
const MAX_ROUNDS: usize = 500;

#[derive(PartialEq)]
struct Label {
    dist: f64,
    node: usize,
}
impl Eq for Label {}
impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Dijkstra from origin to destination under nonnegative arc costs. Returns
/// the path length and its arcs in travel order.
pub fn shortest_path_dijkstra(graph: &DirectedGraph, arc_costs: &[f64]) -> Result<(f64, Vec<usize>)> {
    if arc_costs.len() != graph.arc_count() {
        return Err(Error::invalid("arc cost vector has the wrong length"));
    }
    if arc_costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid("Dijkstra needs finite nonnegative arc costs"));
    }
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[graph.origin()] = 0.0;
    heap.push(Label {
        dist: 0.0,
        node: graph.origin(),
    });
    while let Some(Label { dist: d, node: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        if v == graph.destination() {
            break;
        }
        for &a in graph.out_arcs(v) {
            let w = graph.arcs()[a].1;
            let nd = d + arc_costs[a];
            if nd < dist[w] {
                dist[w] = nd;
                pred[w] = Some(a);
                heap.push(Label { dist: nd, node: w });
            }
        }
    }
    let mut path = Vec::new();
    let mut v = graph.destination();
    while v != graph.origin() {
        let a = pred[v].ok_or(Error::Infeasible)?;
        path.push(a);
        v = graph.arcs()[a].0;
    }
    path.reverse();
    Ok((dist[graph.destination()], path))
}

/// Solves the relaxed robust subproblem over the convex hull of o-d paths by
/// generating paths on demand. The restricted master is the dual
/// `max_{q, mu} mu - sum q_k c_k` with `mu <= sum_k q_k v_rk` for each known
/// path `r` and `q` in the capped simplex; pricing is one Dijkstra call under
/// the `q`-averaged costs.
pub struct PathGeneration;

impl SubproblemSolver for PathGeneration {
    fn name(&self) -> &'static str {
        "paths"
    }

    fn solve(&self, problem: &RobustSubproblem<'_>) -> Result<RobustSolution> {
        if problem.binary {
            return Err(Error::invalid("path generation solves relaxed problems only"));
        }
        let graph = problem.graph;
        let active = problem.active();
        let k = active.len();
        let cap = problem.level.cap();

        let mut paths: Vec<Vec<usize>> = Vec::new();
        // Path costs per active scenario, row-major by path.
        let mut values: Vec<Vec<f64>> = Vec::new();
        let seed_costs = problem.mean_costs(&active);
        let (_, first) = shortest_path_dijkstra(graph, &seed_costs)?;
        let add_path = |path: Vec<usize>, paths: &mut Vec<Vec<usize>>, values: &mut Vec<Vec<f64>>| {
            values.push(
                active
                    .iter()
                    .map(|&j| path.iter().map(|&a| problem.scenarios[j].as_slice()[a]).sum())
                    .collect(),
            );
            paths.push(path);
        };
        add_path(first, &mut paths, &mut values);

        for _round in 0..MAX_ROUNDS {
            // Master variables: q_0..q_{k-1}, mu.
            let mut lp = LinearProgram::new(k + 1);
            for (i, &j) in active.iter().enumerate() {
                lp.cost[i] = problem.offsets[j];
                lp.set_bounds(i, 0.0, (cap * problem.weights[j]).min(1.0));
            }
            lp.cost[k] = -1.0;
            lp.set_bounds(k, f64::NEG_INFINITY, f64::INFINITY);
            for v in &values {
                let mut terms: Vec<(usize, f64)> = v.iter().enumerate().map(|(i, &c)| (i, -c)).collect();
                terms.push((k, 1.0));
                lp.add_sparse_constraint(&terms, Relation::Le, 0.0);
            }
            let ones: Vec<(usize, f64)> = (0..k).map(|i| (i, 1.0)).collect();
            lp.add_sparse_constraint(&ones, Relation::Eq, 1.0);
            let sol = solve_lp(&lp)?;
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => return Err(Error::Infeasible),
                LpStatus::Unbounded => return Err(Error::Unbounded),
            }
            let upper = -sol.objective;
            let q: Vec<f64> = sol.primal[..k].iter().map(|v| v.max(0.0)).collect();

            let mut avg = vec![0.0; graph.arc_count()];
            let mut offset = 0.0;
            for (i, &j) in active.iter().enumerate() {
                if q[i] == 0.0 {
                    continue;
                }
                offset += q[i] * problem.offsets[j];
                for (a, c) in problem.scenarios[j].as_slice().iter().enumerate() {
                    avg[a] += q[i] * c;
                }
            }
            let (len, path) = shortest_path_dijkstra(graph, &avg)?;
            let lower = len - offset;
            let known = paths.contains(&path);
            if upper - lower <= 1e-9 * (1.0 + upper.abs()) || known {
                let lambda: Vec<f64> = sol.duals[..paths.len()].iter().map(|y| (-y).max(0.0)).collect();
                let total: f64 = lambda.iter().sum();
                let mut flow = vec![0.0; graph.arc_count()];
                for (r, path) in paths.iter().enumerate() {
                    let w = lambda[r] / total;
                    if w > 0.0 {
                        for &a in path {
                            flow[a] += w;
                        }
                    }
                }
                let mut worst = vec![0.0; problem.len()];
                let qsum: f64 = q.iter().sum();
                for (i, &j) in active.iter().enumerate() {
                    worst[j] = q[i] / qsum;
                }
                return problem.finish(Decision::new(flow, false)?, Some(worst));
            }
            add_path(path, &mut paths, &mut values);
        }
        Err(Error::SolverStalled {
            iterations: MAX_ROUNDS,
        })
    }
}

/// Helper shared by the solvers: greedy worst case, its VaR level and the
/// excess vector for the losses `g` of a fixed decision.
pub(super) fn certificate(
    g: &[f64],
    weights: &[f64],
    problem: &RobustSubproblem<'_>,
) -> Result<(f64, Vec<f64>, f64, Vec<f64>)> {
    let wc = worst_case_expectation(g, weights, problem.level)?;
    let t = value_at_risk(g, weights, problem.level)?;
    let excess = g
        .iter()
        .zip(weights)
        .map(|(v, p)| if *p > 0.0 { (v - t).max(0.0) } else { 0.0 })
        .collect();
    Ok((wc.value, wc.distribution, t, excess))
}
