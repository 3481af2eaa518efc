//! Choosing the ambiguity level on validation data, for DRPCR and for the
//! CSO / DRCSO / DRCRO baselines.

use std::io::Write;

use rayon::prelude::*;

use crate::cvar::AmbiguityLevel;
use crate::drpcr::{
    extract_policy, nearest_context, DrpcrProblem, GammaSearch, PolicyExtension, SearchOutcome,
};
use crate::error::{Error, Result};
use crate::estimators::WeightModel;
use crate::metrics::{format_score, pcr, CostTriple};
use crate::model::{
    evaluate_cost, CovariateVector, Dataset, Decision, DirectedGraph, DiscreteConditional,
    JointModel,
};
use crate::solvers::{solve_cso, solve_drcro, solve_drcso, solve_saa, HindsightTable, SubproblemSolver};

/// Sorted, deduplicated ambiguity levels in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid(Vec<f64>);

impl AlphaGrid {
    pub fn new(mut alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("alpha grid is empty"));
        }
        if alphas.iter().any(|a| !(0.0..1.0).contains(a)) {
            return Err(Error::invalid("alpha values must lie in [0, 1)"));
        }
        alphas.sort_by(f64::total_cmp);
        alphas.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        Ok(AlphaGrid(alphas))
    }

    pub fn single(alpha: f64) -> Result<Self> {
        Self::new(vec![alpha])
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

/// Union of 20 log-spaced levels on `[0.01, 0.99]` and 20 evenly spaced
/// levels on `[0, 1)`.
pub fn alpha_grid() -> AlphaGrid {
    let (lo, hi) = (0.01f64.log10(), 0.99f64.log10());
    let mut v: Vec<f64> = (0..20)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 19.0))
        .collect();
    v[0] = 0.01;
    v[19] = 0.99;
    v.extend((0..20).map(|i| i as f64 / 20.0));
    AlphaGrid::new(v).expect("grid is valid")
}

/// Everything fixed by the training data: the fitted weight model, the
/// training conditionals, the SAA benchmark and the pool's hindsight values.
pub struct TrainedModel<'a> {
    pub graph: &'a DirectedGraph,
    pub train: &'a Dataset,
    pub weights: &'a WeightModel,
    pub joint: JointModel,
    pub benchmark: Decision,
    pub hindsight: HindsightTable,
    pub binary: bool,
    pub solver: &'a dyn SubproblemSolver,
    pub search: &'a dyn GammaSearch,
    pub epsilon: f64,
    pub extension: PolicyExtension,
}

impl<'a> TrainedModel<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        graph: &'a DirectedGraph,
        train: &'a Dataset,
        weights: &'a WeightModel,
        binary: bool,
        solver: &'a dyn SubproblemSolver,
        search: &'a dyn GammaSearch,
        epsilon: f64,
        extension: PolicyExtension,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if weights.pool().len() != train.len() {
            return Err(Error::invalid("weight model was fitted on a different training set"));
        }
        let conds = train
            .contexts()
            .par_iter()
            .map(|z| weights.weights(z))
            .collect::<Result<Vec<_>>>()?;
        let joint = JointModel::empirical(train.contexts().to_vec(), conds)?;
        let (_, benchmark) = solve_saa(graph, train.costs(), binary)?;
        let hindsight = HindsightTable::compute(graph, train.costs(), binary)?;
        Ok(TrainedModel {
            graph,
            train,
            weights,
            joint,
            benchmark,
            hindsight,
            binary,
            solver,
            search,
            epsilon,
            extension,
        })
    }

    /// Nominal conditional used for a new covariate under the configured
    /// extension rule.
    pub fn conditional(&self, zeta: &CovariateVector) -> Result<DiscreteConditional> {
        match self.extension {
            PolicyExtension::FreshWeights => self.weights.weights(zeta),
            PolicyExtension::NearestScenario => {
                let i = nearest_context(self.train.contexts(), zeta)?;
                Ok(self.joint.conditionals()[i].clone())
            }
        }
    }

    pub fn conditionals(&self, contexts: &[CovariateVector]) -> Result<Vec<DiscreteConditional>> {
        contexts.par_iter().map(|z| self.conditional(z)).collect()
    }

    pub fn drpcr_problem(&self, level: AmbiguityLevel) -> Result<DrpcrProblem<'_>> {
        DrpcrProblem::new(
            self.graph,
            &self.joint,
            level,
            &self.benchmark,
            &self.hindsight,
            self.binary,
            self.solver,
        )
    }
}

/// A method fixed at one ambiguity level, ready to decide.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub search: Option<SearchOutcome>,
}

/// A decision rule family indexed by the ambiguity level.
pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;

    /// Levels searched when the caller does not override them.
    fn default_grid(&self) -> AlphaGrid {
        alpha_grid()
    }

    /// Work that depends on the level but not on the new context.
    fn prepare(&self, _model: &TrainedModel<'_>, alpha: f64) -> Result<Prepared> {
        AmbiguityLevel::new(alpha)?;
        Ok(Prepared {
            alpha,
            gamma: None,
            search: None,
        })
    }

    fn decide(&self, model: &TrainedModel<'_>, prepared: &Prepared, cond: &DiscreteConditional) -> Result<Decision>;
}

pub struct Cso;
pub struct Drcso;
pub struct Drcro;
pub struct Drpcr;

impl Method for Cso {
    fn name(&self) -> &'static str {
        "cso"
    }

    fn default_grid(&self) -> AlphaGrid {
        AlphaGrid::single(0.0).expect("valid")
    }

    fn decide(&self, model: &TrainedModel<'_>, _: &Prepared, cond: &DiscreteConditional) -> Result<Decision> {
        Ok(solve_cso(model.graph, cond, model.binary)?.1)
    }
}

impl Method for Drcso {
    fn name(&self) -> &'static str {
        "drcso"
    }

    fn decide(&self, model: &TrainedModel<'_>, p: &Prepared, cond: &DiscreteConditional) -> Result<Decision> {
        let level = AmbiguityLevel::new(p.alpha)?;
        Ok(solve_drcso(model.graph, cond, level, model.binary, model.solver)?.decision)
    }
}

impl Method for Drcro {
    fn name(&self) -> &'static str {
        "drcro"
    }

    fn decide(&self, model: &TrainedModel<'_>, p: &Prepared, cond: &DiscreteConditional) -> Result<Decision> {
        let level = AmbiguityLevel::new(p.alpha)?;
        Ok(solve_drcro(model.graph, cond, level, &model.hindsight, model.binary, model.solver)?.decision)
    }
}

impl Method for Drpcr {
    fn name(&self) -> &'static str {
        "drpcr"
    }

    fn prepare(&self, model: &TrainedModel<'_>, alpha: f64) -> Result<Prepared> {
        let level = AmbiguityLevel::new(alpha)?;
        let problem = model.drpcr_problem(level)?;
        let outcome = model.search.search(&problem, model.epsilon)?;
        Ok(Prepared {
            alpha,
            gamma: Some(outcome.gamma_star),
            search: Some(outcome),
        })
    }

    fn decide(&self, model: &TrainedModel<'_>, p: &Prepared, cond: &DiscreteConditional) -> Result<Decision> {
        let gamma = p.gamma.ok_or_else(|| Error::invalid("drpcr policy has no ratio"))?;
        extract_policy(
            model.graph,
            cond,
            gamma,
            AmbiguityLevel::new(p.alpha)?,
            &model.benchmark,
            &model.hindsight,
            model.binary,
            model.solver,
        )
    }
}

pub const METHODS: [&str; 4] = ["cso", "drcso", "drcro", "drpcr"];

pub fn method(name: &str) -> Result<&'static dyn Method> {
    match name {
        "cso" => Ok(&Cso),
        "drcso" => Ok(&Drcso),
        "drcro" => Ok(&Drcro),
        "drpcr" => Ok(&Drpcr),
        other => Err(Error::UnknownStrategy {
            kind: "method",
            name: other.to_string(),
        }),
    }
}

/// Prepares a method at every level of a grid (in parallel, grid order kept).
pub fn prepare_grid(model: &TrainedModel<'_>, method: &dyn Method, grid: &AlphaGrid) -> Result<Vec<Prepared>> {
    grid.as_slice()
        .par_iter()
        .map(|a| method.prepare(model, *a))
        .collect()
}

/// Decisions for a batch of nominal conditionals.
pub fn decide_all(
    model: &TrainedModel<'_>,
    method: &dyn Method,
    prepared: &Prepared,
    conds: &[DiscreteConditional],
) -> Result<Vec<Decision>> {
    conds
        .par_iter()
        .map(|c| method.decide(model, prepared, c))
        .collect()
}

/// Realized policy, benchmark and hindsight costs on a labelled dataset.
pub fn cost_triple(
    decisions: &[Decision],
    data: &Dataset,
    benchmark: &Decision,
    hindsight: &HindsightTable,
) -> Result<CostTriple> {
    if decisions.len() != data.len() || hindsight.len() != data.len() {
        return Err(Error::invalid("decisions, data and hindsight differ in length"));
    }
    let policy = decisions
        .iter()
        .zip(data.costs())
        .map(|(d, xi)| evaluate_cost(d, xi))
        .collect::<Result<Vec<_>>>()?;
    let bench = data
        .costs()
        .iter()
        .map(|xi| evaluate_cost(benchmark, xi))
        .collect::<Result<Vec<_>>>()?;
    CostTriple::new(policy, bench, hindsight.values().to_vec())
}

/// Validation score of one grid level.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScore {
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub method: &'static str,
    pub alpha_star: f64,
    pub gamma_star: Option<f64>,
    pub scores: Vec<AlphaScore>,
    /// The chosen level's preparation (ratio search included for DRPCR).
    pub prepared: Prepared,
    /// Validation decisions and costs at the chosen level.
    pub decisions: Vec<Decision>,
    pub costs: CostTriple,
}

impl CalibrationResult {
    pub fn best_score(&self) -> f64 {
        self.scores
            .iter()
            .find(|s| s.alpha == self.alpha_star)
            .map(|s| s.score)
            .unwrap_or(f64::NAN)
    }
}

/// Index of the highest score; the first (smallest level) wins ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores every level of `grid` on `val` and keeps the best.
pub fn calibrate(
    model: &TrainedModel<'_>,
    method: &dyn Method,
    grid: &AlphaGrid,
    val: &Dataset,
) -> Result<CalibrationResult> {
    let conds = model.conditionals(val.contexts())?;
    let hindsight = HindsightTable::compute(model.graph, val.costs(), model.binary)?;
    let prepared = prepare_grid(model, method, grid)?;
    let evaluated = prepared
        .into_par_iter()
        .map(|p| {
            let decisions = decide_all(model, method, &p, &conds)?;
            let costs = cost_triple(&decisions, val, &model.benchmark, &hindsight)?;
            Ok((p, decisions, costs))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<AlphaScore> = evaluated
        .iter()
        .map(|(p, _, c)| AlphaScore {
            alpha: p.alpha,
            gamma: p.gamma,
            score: pcr(c),
        })
        .collect();
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let best = select_best(&raw).ok_or_else(|| Error::NumericalError("no finite validation score".into()))?;
    let (prepared, decisions, costs) = evaluated.into_iter().nth(best).expect("index in range");
    Ok(CalibrationResult {
        method: method.name(),
        alpha_star: prepared.alpha,
        gamma_star: prepared.gamma,
        scores,
        prepared,
        decisions,
        costs,
    })
}

pub fn calibrate_drpcr(model: &TrainedModel<'_>, grid: &AlphaGrid, val: &Dataset) -> Result<CalibrationResult> {
    calibrate(model, &Drpcr, grid, val)
}

/// Baseline calibration; `method` is `drcso` or `drcro` (`cso` is `drcso`
/// restricted to the grid `{0}`).
pub fn calibrate_dr(
    model: &TrainedModel<'_>,
    method: &str,
    grid: &AlphaGrid,
    val: &Dataset,
) -> Result<CalibrationResult> {
    match method {
        "drcso" => calibrate(model, &Drcso, grid, val),
        "drcro" => calibrate(model, &Drcro, grid, val),
        other => Err(Error::invalid(format!("`{other}` is not a robust baseline"))),
    }
}

/// `alpha,gamma_or_blank,validation_pcr`, one row per grid level.
pub fn write_report_csv<W: Write>(scores: &[AlphaScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["alpha", "gamma_or_blank", "validation_pcr"])?;
    for s in scores {
        w.write_record([
            s.alpha.to_string(),
            s.gamma.map(|g| g.to_string()).unwrap_or_default(),
            format_score(s.score),
        ])?;
    }
    w.flush()?;
    Ok(())
}
