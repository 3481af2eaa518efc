use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{revised, LinearProgram, LpSolution, LpStatus, INT_TOL};
use crate::error::{Error, Result};

/// Open nodes allowed before the search gives up.
const NODE_LIMIT: usize = 200_000;

struct Node {
    bound: f64,
    id: usize,
    depth: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Best-bound branch-and-bound over the integrality mask. Masked variables must
/// have bounds inside `[0, 1]`; branching fixes the most fractional one.
pub fn solve_milp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let ints: Vec<usize> = (0..lp.num_vars()).filter(|&j| lp.integer[j]).collect();
    for &j in &ints {
        if lp.lower[j] < 0.0 || lp.upper[j] > 1.0 {
            return Err(Error::invalid(format!(
                "integer variable {j} must have bounds within [0,1]"
            )));
        }
    }
    let max_depth = 10 * ints.len();
    let mut relaxed = lp.relaxed();

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: 0,
        depth: 0,
        lower: lp.lower.clone(),
        upper: lp.upper.clone(),
    });
    let mut next_id = 1;
    let mut incumbent: Option<LpSolution> = None;
    let mut explored = 0usize;
    let mut saw_unbounded = false;

    while let Some(node) = heap.pop() {
        if let Some(best) = &incumbent {
            if node.bound >= best.objective - 1e-9 {
                break;
            }
        }
        explored += 1;
        if explored > NODE_LIMIT {
            return Err(Error::SolverStalled {
                iterations: explored,
            });
        }
        relaxed.lower.clone_from(&node.lower);
        relaxed.upper.clone_from(&node.upper);
        let sol = revised::solve(&relaxed)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                saw_unbounded = true;
                continue;
            }
            LpStatus::Optimal => {}
        }
        if let Some(best) = &incumbent {
            if sol.objective >= best.objective - 1e-9 {
                continue;
            }
        }
        let branch_var = ints
            .iter()
            .copied()
            .map(|j| (j, (sol.primal[j] - sol.primal[j].round()).abs()))
            .filter(|&(_, frac)| frac > INT_TOL)
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        match branch_var {
            None => {
                let mut sol = sol;
                for &j in &ints {
                    sol.primal[j] = sol.primal[j].round();
                }
                sol.objective = lp.objective_at(&sol.primal);
                incumbent = Some(sol);
            }
            Some((j, _)) => {
                if node.depth >= max_depth {
                    continue;
                }
                for value in [0.0, 1.0] {
                    let mut lower = node.lower.clone();
                    let mut upper = node.upper.clone();
                    lower[j] = value;
                    upper[j] = value;
                    heap.push(Node {
                        bound: sol.objective,
                        id: next_id,
                        depth: node.depth + 1,
                        lower,
                        upper,
                    });
                    next_id += 1;
                }
            }
        }
    }

    match incumbent {
        Some(sol) => Ok(sol),
        None if saw_unbounded => Ok(LpSolution::without_solution(
            LpStatus::Unbounded,
            lp.num_vars(),
            lp.num_rows(),
            explored,
        )),
        None => Ok(LpSolution::without_solution(
            LpStatus::Infeasible,
            lp.num_vars(),
            lp.num_rows(),
            explored,
        )),
    }
}
