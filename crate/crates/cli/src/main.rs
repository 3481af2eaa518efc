use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prescript_core::calibration::{
    calibrate, cost_triple, decide_all, method, write_report_csv, AlphaGrid, Prepared, TrainedModel,
};
use prescript_core::cvar::AmbiguityLevel;
use prescript_core::datagen::Manifest;
use prescript_core::drpcr::{gamma_search, write_trace_csv, PolicyExtension};
use prescript_core::estimators::{EstimatorSpec, WeightModel};
use prescript_core::experiment::{
    costs_file_name, effective_jobs, level_boxplot_svg, read_results_csv, read_summary_csv,
    run_experiment, sample_instance, trend_svg, ExperimentConfig,
};
use prescript_core::metrics::{format_score, pcr, CostTriple};
use prescript_core::model::{Dataset, DirectedGraph, Role};
use prescript_core::solvers::{subproblem_solver, HindsightTable};

#[derive(Parser)]
#[command(name = "prescript-opt", version, about = "Distributionally robust prescriptiveness toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one instance (graph, train/validation/test sets, manifest).
    Generate(GenerateArgs),
    /// Fit the conditional weight model on a training set.
    Fit(FitArgs),
    /// Choose the ambiguity level of a method on validation data.
    Calibrate(CalibrateArgs),
    /// Decide on every point of a dataset at a fixed level.
    Solve(SolveArgs),
    /// Recompute PCR from per-point cost files.
    Evaluate(EvaluateArgs),
    /// Draw SVG plots from a results or summary CSV.
    Plot(PlotArgs),
    /// Run the full distribution-shift study.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SolverFlags {
    /// Bisection tolerance on the ratio [default: 1e-3, or the configuration's]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Binary arc decisions.
    #[arg(long)]
    binary: bool,
    /// Accelerated bisection (relaxed decisions only).
    #[arg(long)]
    accelerated: bool,
    /// Use the nearest training context's weights for new covariates.
    #[arg(long)]
    nearest_scenario: bool,
}

impl SolverFlags {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(e) = self.epsilon {
            c.epsilon = e;
        }
        c.binary |= self.binary;
        c.accelerated |= self.accelerated;
        if self.nearest_scenario {
            c.extension = PolicyExtension::NearestScenario;
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Instance index.
    #[arg(long, default_value_t = 0)]
    instance: usize,
    /// Maximum mean perturbation of validation and test sets.
    #[arg(long, default_value_t = 0.0)]
    perturbation: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Estimator family (overrides the configuration).
    #[arg(long)]
    estimator: Option<String>,
    /// Output model JSON [default: DATA/model.json]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    data: PathBuf,
    /// Weight model [default: DATA/model.json]
    #[arg(long)]
    model: Option<PathBuf>,
    /// cso, drcso, drcro or drpcr.
    #[arg(long)]
    method: String,
    /// Comma-separated levels [default: the standard grid; `0` for cso]
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Output directory for the report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Ratio for drpcr; searched on the training data when absent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Which dataset of DATA to decide on.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Cost files (`policy,benchmark,hindsight`).
    files: Vec<PathBuf>,
    /// Check every row of DIR/results.csv against DIR/costs/.
    #[arg(long)]
    check: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// results.csv or summary.csv.
    #[arg(long)]
    input: PathBuf,
    /// Output SVG (summary) or directory (results, one box plot per level).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; PRESCRIPT_OPT_JOBS overrides.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Solve(a) => solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Plot(a) => plot(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let config = a.common.load()?;
    if !(0.0..=1.0).contains(&a.perturbation) {
        bail!("--perturbation must lie in [0, 1]");
    }
    let problem = config.problem()?;
    let (train, val, test, seeds) = sample_instance(&config, &problem, a.instance, a.perturbation)?;
    fs::create_dir_all(&a.out)?;
    problem.graph.save(a.out.join("graph.json"))?;
    train.save(a.out.join("train.csv"))?;
    val.save(a.out.join("validation.csv"))?;
    test.save(a.out.join("test.csv"))?;
    let manifest = Manifest {
        master_seed: config.master_seed,
        problem: config.problem.clone(),
        seeds,
        sizes: [("train", train.len()), ("validation", val.len()), ("test", test.len())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        perturbation: a.perturbation,
    };
    manifest.save(a.out.join("manifest.json"))?;
    println!("wrote instance {} to {}", a.instance, a.out.display());
    Ok(())
}

struct DataDir {
    graph: DirectedGraph,
    train: Dataset,
}

fn load_data(dir: &Path) -> Result<DataDir> {
    let graph = DirectedGraph::load(dir.join("graph.json"))
        .with_context(|| format!("reading {}", dir.join("graph.json").display()))?;
    let train = Dataset::load(dir.join("train.csv"), Role::Train)
        .with_context(|| format!("reading {}", dir.join("train.csv").display()))?;
    Ok(DataDir { graph, train })
}

fn load_split(dir: &Path, split: &str) -> Result<Dataset> {
    let (file, role) = match split {
        "train" => ("train.csv", Role::Train),
        "validation" => ("validation.csv", Role::Validation),
        "test" => ("test.csv", Role::Test),
        other => bail!("unknown split `{other}` (train, validation, test)"),
    };
    Dataset::load(dir.join(file), role).with_context(|| format!("reading {}", dir.join(file).display()))
}

fn model_path(data: &Path, model: &Option<PathBuf>) -> PathBuf {
    model.clone().unwrap_or_else(|| data.join("model.json"))
}

fn fit(a: FitArgs) -> Result<()> {
    let config = a.common.load()?;
    let d = load_data(&a.data)?;
    let mut spec: EstimatorSpec = config.estimator.clone();
    if let Some(kind) = a.estimator {
        spec.kind = kind;
    }
    let seed = a.common.seed.unwrap_or(config.master_seed);
    let model = WeightModel::fit(&d.train, &spec, seed)?;
    let out = model_path(&a.data, &a.out);
    model.save(&out)?;
    println!("fitted {} on {} points -> {}", model.kind(), d.train.len(), out.display());
    Ok(())
}

fn trained<'a>(
    config: &ExperimentConfig,
    d: &'a DataDir,
    weights: &'a WeightModel,
) -> Result<TrainedModel<'a>> {
    Ok(TrainedModel::new(
        &d.graph,
        &d.train,
        weights,
        config.binary,
        subproblem_solver(&config.subproblem_solver)?,
        gamma_search(config.search_name())?,
        config.epsilon,
        config.extension,
    )?)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.solver.apply(&mut config);
    let d = load_data(&a.data)?;
    let val = load_split(&a.data, "validation")?;
    let weights = WeightModel::load(model_path(&a.data, &a.model), &d.train).context("reading the weight model")?;
    let model = trained(&config, &d, &weights)?;
    let meth = method(&a.method)?;
    let grid = match a.alphas {
        Some(v) => AlphaGrid::new(v)?,
        None => meth.default_grid(),
    };
    let r = calibrate(&model, meth, &grid, &val)?;
    fs::create_dir_all(&a.out)?;
    write_report_csv(&r.scores, fs::File::create(a.out.join("report.csv"))?)?;
    r.costs.write_csv(fs::File::create(a.out.join("validation_costs.csv"))?)?;
    if let Some(search) = &r.prepared.search {
        write_trace_csv(&search.trace, fs::File::create(a.out.join("trace.csv"))?)?;
    }
    let summary = serde_json::json!({
        "method": r.method,
        "alpha_star": r.alpha_star,
        "gamma_star": r.gamma_star,
        "validation_pcr": format_score(r.best_score()),
    });
    fs::write(a.out.join("calibration.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{}: alpha* = {}, gamma* = {}, validation pcr = {}",
        r.method,
        r.alpha_star,
        r.gamma_star.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
        format_score(r.best_score())
    );
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.solver.apply(&mut config);
    let d = load_data(&a.data)?;
    let data = load_split(&a.data, &a.split)?;
    let weights = WeightModel::load(model_path(&a.data, &a.model), &d.train).context("reading the weight model")?;
    let model = trained(&config, &d, &weights)?;
    let meth = method(&a.method)?;
    AmbiguityLevel::new(a.alpha)?;
    let prepared = match (a.method.as_str(), a.gamma) {
        ("drpcr", Some(g)) => {
            if !(0.0..=1.0).contains(&g) {
                bail!("--gamma must lie in [0, 1]");
            }
            Prepared {
                alpha: a.alpha,
                gamma: Some(g),
                search: None,
            }
        }
        _ => meth.prepare(&model, a.alpha)?,
    };
    let conds = model.conditionals(data.contexts())?;
    let decisions = decide_all(&model, meth, &prepared, &conds)?;
    // Nominal expected cost of each decision under its own conditional.
    let objective = decisions
        .iter()
        .zip(&conds)
        .map(|(d, c)| d.flow.iter().zip(c.mean_costs()).map(|(x, m)| x * m).sum::<f64>())
        .sum::<f64>()
        / decisions.len() as f64;
    let hindsight = HindsightTable::compute(&d.graph, data.costs(), config.binary)?;
    let costs = cost_triple(&decisions, &data, &model.benchmark, &hindsight)?;
    fs::create_dir_all(&a.out)?;
    costs.write_csv(fs::File::create(a.out.join("costs.csv"))?)?;
    let mut w = fs::File::create(a.out.join("decisions.csv"))?;
    let header: Vec<String> = (0..d.graph.arc_count()).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for dec in &decisions {
        let row: Vec<String> = dec.flow.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    let summary = serde_json::json!({
        "method": a.method,
        "alpha": a.alpha,
        "gamma": prepared.gamma,
        "objective": objective,
        "pcr": format_score(pcr(&costs)),
    });
    fs::write(a.out.join("solve.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("objective = {objective}");
    println!("pcr = {}", format_score(pcr(&costs)));
    Ok(())
}

fn read_costs(path: &Path) -> Result<CostTriple> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CostTriple::read_csv(f).with_context(|| format!("reading {}", path.display()))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.files.is_empty() && a.check.is_none() {
        bail!("give cost files or --check DIR");
    }
    for f in &a.files {
        println!("{},{}", f.display(), format_score(pcr(&read_costs(f)?)));
    }
    if let Some(dir) = a.check {
        let rows = read_results_csv(fs::File::open(dir.join("results.csv")).context("opening results.csv")?)?;
        let mut checked = 0;
        for r in rows.iter().filter(|r| r.is_ok()) {
            let path = dir.join("costs").join(costs_file_name(r));
            let recomputed = pcr(&read_costs(&path)?);
            let stored = r.oos_pcr.context("ok row without a score")?;
            if recomputed.to_bits() != stored.to_bits() {
                bail!("{}: stored {} but cost file gives {}", path.display(), stored, recomputed);
            }
            checked += 1;
        }
        println!("{checked} rows match their cost files");
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let header = text.lines().next().unwrap_or_default();
    if header.starts_with("method,perturbation,mean_pcr") {
        let summary = read_summary_csv(text.as_bytes())?;
        fs::write(&a.out, trend_svg(&summary))?;
        println!("wrote {}", a.out.display());
    } else if header.starts_with("instance,method") {
        let rows = read_results_csv(text.as_bytes())?;
        let mut levels: Vec<f64> = rows.iter().map(|r| r.perturbation).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        fs::create_dir_all(&a.out)?;
        for m in levels {
            let p = a.out.join(format!("pcr_box_m{m}.svg"));
            fs::write(&p, level_boxplot_svg(&rows, m))?;
            println!("wrote {}", p.display());
        }
    } else {
        bail!("{} is neither a results nor a summary CSV", a.input.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.solver.apply(&mut config);
    config.validate()?;
    let jobs = effective_jobs(a.jobs)?;
    let out = run_experiment(&config, &a.out, jobs)?;
    let failed = out.rows.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} rows ({} failed) -> {}, {}",
        out.rows.len(),
        failed,
        out.results.display(),
        out.summary.display()
    );
    Ok(())
}
