//! The distribution-shift study: for every instance, train once on unshifted
//! data, calibrate each method on shifted validation data, and score it on
//! shifted test data.
//!
//! Within an instance, the validation and test covariates do not depend on
//! the shift level (the sampler reuses its noise and only travel-time means
//! move), so per-level work reduces to re-scoring cached decisions.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    alpha_grid, cost_triple, decide_all, method, prepare_grid, select_best, AlphaGrid, TrainedModel,
    METHODS,
};
use crate::datagen::{perturb_means, Problem, ProblemSpec};
use crate::drpcr::{gamma_search, PolicyExtension};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, WeightModel};
use crate::metrics::{format_score, parse_score, pcr, quantile, CostTriple};
use crate::model::{Dataset, Decision, DirectedGraph, Role};
use crate::plot::{boxplot_svg, line_svg};
use crate::seeds::{derive_seed, stage};
use crate::solvers::{subproblem_solver, HindsightTable};

/// Environment variable that overrides the worker count.
pub const JOBS_ENV: &str = "PRESCRIPT_OPT_JOBS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Graph JSON to use instead of the `rows x cols` grid.
    pub graph_file: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub instances: usize,
    pub perturbations: Vec<f64>,
    pub methods: Vec<String>,
    pub estimator: EstimatorSpec,
    pub epsilon: f64,
    pub binary: bool,
    pub accelerated: bool,
    pub master_seed: u64,
    /// Levels for the robust methods; the standard grid when absent. CSO
    /// always uses `{0}`.
    pub alpha_grid: Option<Vec<f64>>,
    pub extension: PolicyExtension,
    pub subproblem_solver: String,
    /// Writes measured wall times; off by default so that reruns produce
    /// byte-identical results.
    pub record_timing: bool,
    pub write_costs: bool,
    pub plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemSpec::default(),
            graph_file: None,
            n_train: 100,
            n_val: 100,
            n_test: 300,
            instances: 30,
            perturbations: vec![0.0, 0.2, 0.4, 0.6],
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            estimator: EstimatorSpec::default(),
            epsilon: 1e-3,
            binary: false,
            accelerated: false,
            master_seed: 2024,
            alpha_grid: None,
            extension: PolicyExtension::FreshWeights,
            subproblem_solver: "auto".into(),
            record_timing: false,
            write_costs: true,
            plots: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.instances == 0 {
            return Err(Error::invalid("sizes and instance count must be positive"));
        }
        if self.perturbations.is_empty() {
            return Err(Error::invalid("no perturbation levels"));
        }
        if self.perturbations.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid("perturbation levels must lie in [0, 1]"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        for m in &self.methods {
            method(m)?;
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        if let Some(g) = &self.alpha_grid {
            AlphaGrid::new(g.clone())?;
        }
        subproblem_solver(&self.subproblem_solver)?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn search_name(&self) -> &'static str {
        if self.accelerated {
            "accelerated"
        } else {
            "bisection"
        }
    }

    fn grid_for(&self, name: &str) -> Result<AlphaGrid> {
        if name == "cso" {
            return method(name).map(|m| m.default_grid());
        }
        match &self.alpha_grid {
            Some(g) => AlphaGrid::new(g.clone()),
            None => Ok(alpha_grid()),
        }
    }

    /// The generated problem shared by every instance.
    pub fn problem(&self) -> Result<Problem> {
        let seed = derive_seed(self.master_seed, &[stage::PROBLEM]);
        match &self.graph_file {
            Some(path) => Problem::generate_on(DirectedGraph::load(path)?, &self.problem, seed),
            None => Problem::generate(&self.problem, seed),
        }
    }
}

/// Worker count: the environment override, else the flag, else all cores.
pub fn effective_jobs(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(JOBS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{JOBS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::invalid(format!("{JOBS_ENV} must be positive")));
        }
        return Ok(n);
    }
    match flag {
        Some(0) => Err(Error::invalid("--jobs must be positive")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// One out-of-sample measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub instance: usize,
    pub method: String,
    pub perturbation: f64,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub oos_pcr: Option<f64>,
    pub wall_time_ms: u64,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const RESULTS_HEADER: [&str; 8] = [
    "instance",
    "method",
    "perturbation",
    "alpha",
    "gamma",
    "oos_pcr",
    "wall_time_ms",
    "status",
];

pub fn write_results_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.instance.to_string(),
            r.method.clone(),
            r.perturbation.to_string(),
            opt(r.alpha),
            opt(r.gamma),
            r.oos_pcr.map(format_score).unwrap_or_default(),
            r.wall_time_ms.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::invalid("not a results file"));
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse_score(s).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(ResultRow {
            instance: rec[0].parse().map_err(|_| Error::invalid("bad instance id"))?,
            method: rec[1].to_string(),
            perturbation: parse_score(&rec[2])?,
            alpha: opt(&rec[3])?,
            gamma: opt(&rec[4])?,
            oos_pcr: opt(&rec[5])?,
            wall_time_ms: rec[6].parse().map_err(|_| Error::invalid("bad wall time"))?,
            status: rec[7].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub perturbation: f64,
    pub mean_pcr: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Per-(method, level) statistics over the rows with status `ok`, methods in
/// first-appearance order and levels ascending.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let mi = match order.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                order.push(&r.method);
                order.len() - 1
            }
        };
        let entry = groups.entry((mi, r.perturbation.to_bits())).or_default();
        if let (true, Some(p)) = (r.is_ok(), r.oos_pcr) {
            entry.push(p);
        }
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((mi, m), v)| SummaryRow {
            method: order[mi].to_string(),
            perturbation: f64::from_bits(m),
            mean_pcr: v.iter().sum::<f64>() / v.len() as f64,
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
        })
        .collect();
    out.sort_by(|a, b| {
        let ia = order.iter().position(|m| *m == a.method);
        let ib = order.iter().position(|m| *m == b.method);
        ia.cmp(&ib).then(a.perturbation.total_cmp(&b.perturbation))
    });
    out
}

pub const SUMMARY_HEADER: [&str; 6] = ["method", "perturbation", "mean_pcr", "q25", "median", "q75"];

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.perturbation.to_string(),
            format_score(r.mean_pcr),
            format_score(r.q25),
            format_score(r.median),
            format_score(r.q75),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(Error::invalid("not a summary file"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(SummaryRow {
            method: rec[0].to_string(),
            perturbation: parse_score(&rec[1])?,
            mean_pcr: parse_score(&rec[2])?,
            q25: parse_score(&rec[3])?,
            median: parse_score(&rec[4])?,
            q75: parse_score(&rec[5])?,
        });
    }
    Ok(rows)
}

/// Mean out-of-sample PCR against the shift level, one series per method.
pub fn trend_svg(summary: &[SummaryRow]) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in summary {
        match series.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, pts)) => pts.push((r.perturbation, r.mean_pcr)),
            None => series.push((r.method.clone(), vec![(r.perturbation, r.mean_pcr)])),
        }
    }
    line_svg("Mean out-of-sample PCR", "maximum perturbation m", "PCR", &series)
}

/// Box plot of out-of-sample PCR per method at one shift level.
pub fn level_boxplot_svg(rows: &[ResultRow], perturbation: f64) -> String {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.perturbation == perturbation && r.is_ok()) {
        let v = r.oos_pcr.unwrap_or(f64::NAN);
        match groups.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((r.method.clone(), vec![v])),
        }
    }
    boxplot_svg(&format!("Out-of-sample PCR, m = {perturbation}"), "PCR", &groups)
}

/// A result row plus the per-point test costs it was computed from.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub row: ResultRow,
    pub costs: Option<CostTriple>,
}

struct LevelData {
    perturbation: f64,
    val: Dataset,
    val_hindsight: HindsightTable,
    test: Dataset,
    test_hindsight: HindsightTable,
}

fn millis(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn error_rows(config: &ExperimentConfig, instance: usize, names: &[String], err: &Error) -> Vec<Measurement> {
    names
        .iter()
        .flat_map(|name| {
            config.perturbations.iter().map(move |m| Measurement {
                row: ResultRow {
                    instance,
                    method: name.clone(),
                    perturbation: *m,
                    alpha: None,
                    gamma: None,
                    oos_pcr: None,
                    wall_time_ms: 0,
                    status: format!("error: {err}"),
                },
                costs: None,
            })
        })
        .collect()
}

/// Runs one instance; stage failures become `error: ...` rows.
pub fn run_instance(config: &ExperimentConfig, problem: &Problem, instance: usize) -> Vec<Measurement> {
    let prepared = prepare_instance(config, problem, instance);
    let (train, weights, levels) = match prepared {
        Ok(p) => p,
        Err(e) => return error_rows(config, instance, &config.methods, &e),
    };
    let start = Instant::now();
    let model = match trained_model(config, problem, &train, &weights) {
        Ok(m) => m,
        Err(e) => return error_rows(config, instance, &config.methods, &e),
    };
    let train_ms = millis(start);
    config
        .methods
        .iter()
        .flat_map(|name| {
            run_method(config, &model, &levels, instance, name, train_ms)
                .unwrap_or_else(|e| error_rows(config, instance, std::slice::from_ref(name), &e))
        })
        .collect()
}

fn trained_model<'a>(
    config: &ExperimentConfig,
    problem: &'a Problem,
    train: &'a Dataset,
    weights: &'a WeightModel,
) -> Result<TrainedModel<'a>> {
    TrainedModel::new(
        &problem.graph,
        train,
        weights,
        config.binary,
        subproblem_solver(&config.subproblem_solver)?,
        gamma_search(config.search_name())?,
        config.epsilon,
        config.extension,
    )
}

/// Seed of one stage of one instance.
pub fn instance_seed(config: &ExperimentConfig, stage: u64, instance: usize) -> u64 {
    derive_seed(config.master_seed, &[stage, instance as u64])
}

/// Train, validation and test sets of one instance at one shift level,
/// exactly as the study draws them, with the seeds used.
pub fn sample_instance(
    config: &ExperimentConfig,
    problem: &Problem,
    instance: usize,
    perturbation: f64,
) -> Result<(Dataset, Dataset, Dataset, BTreeMap<String, u64>)> {
    let seed = |s: u64| instance_seed(config, s, instance);
    let mu = problem.mean_xi();
    let train = problem.sample(mu, config.n_train, seed(stage::TRAIN), Role::Train)?;
    let val_mu = perturb_means(mu, perturbation, seed(stage::VALIDATION_SHIFT))?;
    let test_mu = perturb_means(mu, perturbation, seed(stage::TEST_SHIFT))?;
    let val = problem.sample(&val_mu, config.n_val, seed(stage::VALIDATION), Role::Validation)?;
    let test = problem.sample(&test_mu, config.n_test, seed(stage::TEST), Role::Test)?;
    let seeds = [
        ("problem", derive_seed(config.master_seed, &[stage::PROBLEM])),
        ("train", seed(stage::TRAIN)),
        ("validation", seed(stage::VALIDATION)),
        ("test", seed(stage::TEST)),
        ("validation_shift", seed(stage::VALIDATION_SHIFT)),
        ("test_shift", seed(stage::TEST_SHIFT)),
        ("estimator", seed(stage::ESTIMATOR)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok((train, val, test, seeds))
}

fn prepare_instance(
    config: &ExperimentConfig,
    problem: &Problem,
    instance: usize,
) -> Result<(Dataset, WeightModel, Vec<LevelData>)> {
    let mut train = None;
    let levels = config
        .perturbations
        .iter()
        .map(|&m| {
            let (tr, val, test, _) = sample_instance(config, problem, instance, m)?;
            train.get_or_insert(tr);
            Ok(LevelData {
                perturbation: m,
                val_hindsight: HindsightTable::compute(&problem.graph, val.costs(), config.binary)?,
                test_hindsight: HindsightTable::compute(&problem.graph, test.costs(), config.binary)?,
                val,
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let train = train.expect("at least one level");
    let weights = WeightModel::fit(&train, &config.estimator, instance_seed(config, stage::ESTIMATOR, instance))?;
    Ok((train, weights, levels))
}

fn run_method(
    config: &ExperimentConfig,
    model: &TrainedModel<'_>,
    levels: &[LevelData],
    instance: usize,
    name: &str,
    train_ms: u64,
) -> Result<Vec<Measurement>> {
    let start = Instant::now();
    let meth = method(name)?;
    let grid = config.grid_for(name)?;
    // Covariates are shared by every level.
    let val_conds = model.conditionals(levels[0].val.contexts())?;
    let test_conds = model.conditionals(levels[0].test.contexts())?;
    let prepared = prepare_grid(model, meth, &grid)?;
    let val_decisions = prepared
        .par_iter()
        .map(|p| decide_all(model, meth, p, &val_conds))
        .collect::<Result<Vec<_>>>()?;
    let shared_ms = train_ms + millis(start);

    let mut test_cache: BTreeMap<usize, Vec<Decision>> = BTreeMap::new();
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let start = Instant::now();
        let scores = val_decisions
            .iter()
            .map(|d| cost_triple(d, &level.val, &model.benchmark, &level.val_hindsight).map(|t| pcr(&t)))
            .collect::<Result<Vec<_>>>()?;
        let best = select_best(&scores)
            .ok_or_else(|| Error::NumericalError("no usable validation score".into()))?;
        if !test_cache.contains_key(&best) {
            let d = decide_all(model, meth, &prepared[best], &test_conds)?;
            test_cache.insert(best, d);
        }
        let triple = cost_triple(&test_cache[&best], &level.test, &model.benchmark, &level.test_hindsight)?;
        let wall = if config.record_timing {
            shared_ms + millis(start)
        } else {
            0
        };
        out.push(Measurement {
            row: ResultRow {
                instance,
                method: name.to_string(),
                perturbation: level.perturbation,
                alpha: Some(prepared[best].alpha),
                gamma: prepared[best].gamma,
                oos_pcr: Some(pcr(&triple)),
                wall_time_ms: wall,
                status: "ok".into(),
            },
            costs: Some(triple),
        });
    }
    Ok(out)
}

/// Runs every instance on a pool of `jobs` workers, rows ordered by
/// instance, then method (config order), then level (config order).
pub fn run_measurements(config: &ExperimentConfig, jobs: usize) -> Result<Vec<Measurement>> {
    config.validate()?;
    let problem = config.problem()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::NumericalError(format!("thread pool: {e}")))?;
    let per_instance: Vec<Vec<Measurement>> = pool.install(|| {
        (0..config.instances)
            .into_par_iter()
            .map(|i| run_instance(config, &problem, i))
            .collect()
    });
    Ok(per_instance.into_iter().flatten().collect())
}

/// File name of the per-point test costs behind one result row.
pub fn costs_file_name(row: &ResultRow) -> String {
    format!("instance{}_{}_m{}.csv", row.instance, row.method, row.perturbation)
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub rows: Vec<ResultRow>,
}

/// Runs the study and writes `results.csv`, `summary.csv`, the resolved
/// `config.json`, per-point cost files under `costs/` and SVG plots.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    let measurements = run_measurements(config, jobs)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.json"), config.to_json_string())?;
    if config.write_costs {
        let dir = out_dir.join("costs");
        fs::create_dir_all(&dir)?;
        for m in &measurements {
            if let Some(c) = &m.costs {
                c.write_csv(fs::File::create(dir.join(costs_file_name(&m.row)))?)?;
            }
        }
    }
    let rows: Vec<ResultRow> = measurements.into_iter().map(|m| m.row).collect();
    let results = out_dir.join("results.csv");
    write_results_csv(&rows, fs::File::create(&results)?)?;
    let summary_rows = summarize(&rows);
    let summary = out_dir.join("summary.csv");
    write_summary_csv(&summary_rows, fs::File::create(&summary)?)?;
    if config.plots {
        fs::write(out_dir.join("pcr_trend.svg"), trend_svg(&summary_rows))?;
        for m in &config.perturbations {
            fs::write(out_dir.join(format!("pcr_box_m{m}.svg")), level_boxplot_svg(&rows, *m))?;
        }
    }
    Ok(ExperimentOutput { results, summary, rows })
}
