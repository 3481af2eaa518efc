//! Domain types shared by every solver: the network, scenario sets, discrete
//! conditional distributions, decisions and the policy table.
//!
//! Arcs are indexed densely in the order they appear in the graph file and every
//! [`CostVector`] follows that order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance shared by the solvers and the decision checks.
pub const FEAS_TOL: f64 = 1e-7;

/// Tolerance on the total mass of a probability vector.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    nodes: usize,
    arcs: Vec<[usize; 2]>,
    origin: usize,
    destination: usize,
}

/// Directed graph with a designated origin and destination.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    node_count: usize,
    arcs: Vec<(usize, usize)>,
    origin: usize,
    destination: usize,
    out_arcs: Vec<Vec<usize>>,
    in_arcs: Vec<Vec<usize>>,
}

impl DirectedGraph {
    pub fn new(
        node_count: usize,
        arcs: Vec<(usize, usize)>,
        origin: usize,
        destination: usize,
    ) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::invalid("graph needs at least two nodes"));
        }
        if origin >= node_count || destination >= node_count {
            return Err(Error::invalid("origin/destination out of range"));
        }
        if origin == destination {
            return Err(Error::invalid("origin and destination coincide"));
        }
        if arcs.is_empty() {
            return Err(Error::invalid("graph has no arcs"));
        }
        let mut out_arcs = vec![Vec::new(); node_count];
        let mut in_arcs = vec![Vec::new(); node_count];
        let mut seen = std::collections::HashSet::new();
        for (a, &(tail, head)) in arcs.iter().enumerate() {
            if tail >= node_count || head >= node_count {
                return Err(Error::invalid(format!("arc {a} references a missing node")));
            }
            if tail == head {
                return Err(Error::invalid(format!("arc {a} is a self-loop")));
            }
            if !seen.insert((tail, head)) {
                return Err(Error::invalid(format!("arc {a} duplicates ({tail},{head})")));
            }
            out_arcs[tail].push(a);
            in_arcs[head].push(a);
        }
        let graph = DirectedGraph {
            node_count,
            arcs,
            origin,
            destination,
            out_arcs,
            in_arcs,
        };
        let forward = graph.reachable(origin, true);
        let backward = graph.reachable(destination, false);
        if let Some(v) = (0..node_count).find(|&v| !forward[v] || !backward[v]) {
            return Err(Error::invalid(format!(
                "node {v} is not on any origin-destination walk"
            )));
        }
        Ok(graph)
    }

    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            let arcs = if forward { &self.out_arcs[v] } else { &self.in_arcs[v] };
            for &a in arcs {
                let (t, h) = self.arcs[a];
                let next = if forward { h } else { t };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn destination(&self) -> usize {
        self.destination
    }

    pub fn out_arcs(&self, node: usize) -> &[usize] {
        &self.out_arcs[node]
    }

    pub fn in_arcs(&self, node: usize) -> &[usize] {
        &self.in_arcs[node]
    }

    /// Net outflow required at `node`: +1 at the origin, -1 at the destination.
    pub fn supply(&self, node: usize) -> f64 {
        if node == self.origin {
            1.0
        } else if node == self.destination {
            -1.0
        } else {
            0.0
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        DirectedGraph::new(
            file.nodes,
            file.arcs.into_iter().map(|[t, h]| (t, h)).collect(),
            file.origin,
            file.destination,
        )
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            nodes: self.node_count,
            arcs: self.arcs.iter().map(|&(t, h)| [t, h]).collect(),
            origin: self.origin,
            destination: self.destination,
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// Arc travel times, indexed like the graph's arc list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!(
                "cost entries must be finite and nonnegative, got {c}"
            )));
        }
        Ok(CostVector(costs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observed side information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateVector(Vec<f64>);

impl CovariateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        Ok(CovariateVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shared, immutable pool of cost scenarios. Conditionals over the same pool
/// keep stable scenario indices.
pub type ScenarioPool = Arc<Vec<CostVector>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// Paired observations `(zeta_i, xi_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    contexts: Vec<CovariateVector>,
    costs: ScenarioPool,
    role: Role,
}

impl Dataset {
    pub fn new(contexts: Vec<CovariateVector>, costs: Vec<CostVector>, role: Role) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if contexts.len() != costs.len() {
            return Err(Error::invalid("covariate and cost counts differ"));
        }
        let p = contexts[0].len();
        let q = costs[0].len();
        if q == 0 {
            return Err(Error::invalid("cost vectors are empty"));
        }
        if contexts.iter().any(|z| z.len() != p) || costs.iter().any(|c| c.len() != q) {
            return Err(Error::invalid("dataset rows have inconsistent dimensions"));
        }
        Ok(Dataset {
            contexts,
            costs: Arc::new(costs),
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn contexts(&self) -> &[CovariateVector] {
        &self.contexts
    }

    pub fn costs(&self) -> &[CostVector] {
        &self.costs
    }

    pub fn scenario_pool(&self) -> ScenarioPool {
        Arc::clone(&self.costs)
    }

    pub fn covariate_dim(&self) -> usize {
        self.contexts[0].len()
    }

    pub fn cost_dim(&self) -> usize {
        self.costs[0].len()
    }

    /// Writes the `z_1..z_p,c_1..c_q` CSV layout. Floats use the shortest
    /// round-trip representation, so reading the file back is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.covariate_dim())
            .map(|i| format!("z_{i}"))
            .chain((1..=self.cost_dim()).map(|i| format!("c_{i}")))
            .collect();
        w.write_record(&header)?;
        for (z, c) in self.contexts.iter().zip(self.costs.iter()) {
            let row: Vec<String> = z
                .as_slice()
                .iter()
                .chain(c.as_slice())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, role: Role) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let mut p = 0;
        let mut q = 0;
        for (i, h) in headers.iter().enumerate() {
            if let Some(k) = h.strip_prefix("z_") {
                if q > 0 || k.parse::<usize>().ok() != Some(p + 1) {
                    return Err(Error::invalid(format!("unexpected header column `{h}` at {i}")));
                }
                p += 1;
            } else if let Some(k) = h.strip_prefix("c_") {
                if k.parse::<usize>().ok() != Some(q + 1) {
                    return Err(Error::invalid(format!("unexpected header column `{h}` at {i}")));
                }
                q += 1;
            } else {
                return Err(Error::invalid(format!("unexpected header column `{h}`")));
            }
        }
        let mut contexts = Vec::new();
        let mut costs = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != p + q {
                return Err(Error::invalid("row length differs from header"));
            }
            let values = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            contexts.push(CovariateVector::new(values[..p].to_vec())?);
            costs.push(CostVector::new(values[p..].to_vec())?);
        }
        Dataset::new(contexts, costs, role)
    }

    pub fn load(path: impl AsRef<Path>, role: Role) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, role)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Discrete conditional distribution over a shared scenario pool. Zero-weight
/// scenarios stay in the support so indices are stable.
#[derive(Debug, Clone)]
pub struct DiscreteConditional {
    support: ScenarioPool,
    weights: Vec<f64>,
}

impl DiscreteConditional {
    pub fn new(support: ScenarioPool, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("conditional support is empty"));
        }
        if support.len() != weights.len() {
            return Err(Error::invalid("support and weight lengths differ"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(DiscreteConditional { support, weights })
    }

    /// Uniform weights over the whole pool.
    pub fn uniform(support: ScenarioPool) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    /// All mass on scenario `index`.
    pub fn point_mass(support: ScenarioPool, index: usize) -> Result<Self> {
        let mut weights = vec![0.0; support.len()];
        *weights
            .get_mut(index)
            .ok_or_else(|| Error::invalid("point mass index out of range"))? = 1.0;
        Self::new(support, weights)
    }

    pub fn support(&self) -> &ScenarioPool {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices with strictly positive weight, in increasing order.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
    }

    /// Weighted average cost vector.
    pub fn mean_costs(&self) -> Vec<f64> {
        let dim = self.support[0].len();
        let mut mean = vec![0.0; dim];
        for i in self.active() {
            let w = self.weights[i];
            for (m, c) in mean.iter_mut().zip(self.support[i].as_slice()) {
                *m += w * c;
            }
        }
        mean
    }
}

/// Nominal joint distribution: a discrete context marginal and one conditional
/// per context.
#[derive(Debug, Clone)]
pub struct JointModel {
    contexts: Vec<CovariateVector>,
    context_weights: Vec<f64>,
    conditionals: Vec<DiscreteConditional>,
}

impl JointModel {
    pub fn new(
        contexts: Vec<CovariateVector>,
        context_weights: Vec<f64>,
        conditionals: Vec<DiscreteConditional>,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("joint model has no contexts"));
        }
        if contexts.len() != context_weights.len() || contexts.len() != conditionals.len() {
            return Err(Error::invalid("joint model lengths differ"));
        }
        if context_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("context weights must be nonnegative"));
        }
        let total: f64 = context_weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("context weights sum to {total}")));
        }
        Ok(JointModel {
            contexts,
            context_weights,
            conditionals,
        })
    }

    /// Empirical context marginal (uniform) paired with given conditionals.
    pub fn empirical(
        contexts: Vec<CovariateVector>,
        conditionals: Vec<DiscreteConditional>,
    ) -> Result<Self> {
        let n = contexts.len().max(1);
        Self::new(contexts, vec![1.0 / n as f64; n], conditionals)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn contexts(&self) -> &[CovariateVector] {
        &self.contexts
    }

    pub fn context_weights(&self) -> &[f64] {
        &self.context_weights
    }

    pub fn conditionals(&self) -> &[DiscreteConditional] {
        &self.conditionals
    }
}

/// Arc flow vector; a unit o-d flow in the feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub flow: Vec<f64>,
    pub binary: bool,
}

impl Decision {
    pub fn new(flow: Vec<f64>, binary: bool) -> Result<Self> {
        if binary && flow.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::invalid("binary decision has fractional entries"));
        }
        Ok(Decision { flow, binary })
    }

    /// Unit flow along the given arcs.
    pub fn from_arcs(arc_count: usize, arcs: &[usize]) -> Self {
        let mut flow = vec![0.0; arc_count];
        for &a in arcs {
            flow[a] = 1.0;
        }
        Decision { flow, binary: true }
    }

    /// Checks the flow against `graph`.
    pub fn validate(&self, graph: &DirectedGraph) -> Result<()> {
        let r = feasibility_residual(self, graph);
        if r > FEAS_TOL {
            return Err(Error::invalid(format!("decision violates X by {r}")));
        }
        Ok(())
    }
}

/// Total cost `x^T xi` of a decision.
pub fn evaluate_cost(decision: &Decision, xi: &CostVector) -> Result<f64> {
    if decision.flow.len() != xi.len() {
        return Err(Error::invalid(format!(
            "decision has {} arcs, cost vector {}",
            decision.flow.len(),
            xi.len()
        )));
    }
    Ok(decision
        .flow
        .iter()
        .zip(xi.as_slice())
        .map(|(x, c)| x * c)
        .sum())
}

/// Largest violation of flow balance or of the `[0,1]` arc bounds. Returns
/// infinity if the decision does not have one entry per arc.
pub fn feasibility_residual(decision: &Decision, graph: &DirectedGraph) -> f64 {
    if decision.flow.len() != graph.arc_count() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for &x in &decision.flow {
        worst = worst.max(-x).max(x - 1.0);
    }
    for v in 0..graph.node_count() {
        let out: f64 = graph.out_arcs(v).iter().map(|&a| decision.flow[a]).sum();
        let inn: f64 = graph.in_arcs(v).iter().map(|&a| decision.flow[a]).sum();
        worst = worst.max((out - inn - graph.supply(v)).abs());
    }
    worst
}

/// Decisions for known context indices with a fallback for unseen contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    entries: BTreeMap<usize, Decision>,
    fallback: Decision,
}

impl PolicyTable {
    pub fn new(fallback: Decision) -> Self {
        PolicyTable {
            entries: BTreeMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, context: usize, decision: Decision) {
        self.entries.insert(context, decision);
    }

    pub fn get(&self, context: usize) -> &Decision {
        self.entries.get(&context).unwrap_or(&self.fallback)
    }

    pub fn fallback(&self) -> &Decision {
        &self.fallback
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Decision)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// o=0, m=1, d=2 with arcs (o->d, o->m, m->d).
    pub fn triangle() -> DirectedGraph {
        DirectedGraph::new(3, vec![(0, 2), (0, 1), (1, 2)], 0, 2).unwrap()
    }

    pub fn costs(values: &[f64]) -> CostVector {
        CostVector::new(values.to_vec()).unwrap()
    }

    pub fn pool(rows: &[&[f64]]) -> ScenarioPool {
        Arc::new(rows.iter().map(|r| costs(r)).collect())
    }
}
