use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use erosegm::inference::{threshold_test, EdgeOutcome, EdgeRecord};
use erosegm::multitest::{fdp_power, fdr_select, holm, Edge, FdpPower, FdrSummary, PvalueEntry, PvalueTable};
use erosegm::obsmodel::{load_masked_csv, write_masked_csv, MaskedDataset};
use erosegm::simlab::{
    run_edge_study, run_study, selection_metrics, stability_select, write_csv, EdgeStudyConfig, SelectionMetrics,
    StabilityConfig, StabilityOutcome, StudyConfig, StudySetup,
};
use erosegm::{pairwise_counts, project_psd_weighted, unbiased_cov, EdgeTester, Error, LassoConfig, ProjectionConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Exit status for a degenerate variance estimate.
const EXIT_DEGENERATE: u8 = 3;
/// Exit status for invalid arguments detected after parsing.
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "erosegm", version, about = "Graph selection and edge inference from unevenly co-observed variables")]
struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Entrywise covariance, pair counts and the projected covariance.
    Estimate(EstimateArgs),
    /// Debiased test and confidence interval for one pair.
    TestEdge(TestEdgeArgs),
    /// Test every pair and apply Holm and/or FDR selection.
    TestGraph(TestGraphArgs),
    /// Run a simulation study from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct AdmmArgs {
    #[arg(long = "admm-mu", default_value_t = 1.0)]
    mu: f64,
    #[arg(long = "admm-eps", default_value_t = 1e-3)]
    eps: f64,
    #[arg(long = "admm-max-iter", default_value_t = 2000)]
    max_iter: usize,
    #[arg(long = "admm-tol-primal", default_value_t = 1e-7)]
    tol_primal: f64,
    #[arg(long = "admm-tol-change", default_value_t = 1e-9)]
    tol_change: f64,
}

impl AdmmArgs {
    fn config(&self) -> ProjectionConfig {
        ProjectionConfig {
            mu: self.mu,
            eps: self.eps,
            max_iter: self.max_iter,
            tol_primal: self.tol_primal,
            tol_change: self.tol_change,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct LassoArgs {
    #[arg(long = "lasso-tol", default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "lasso-max-sweeps", default_value_t = 10_000)]
    max_sweeps: usize,
}

impl LassoArgs {
    fn config(&self) -> LassoConfig {
        LassoConfig { tol: self.tol, max_sweeps: self.max_sweeps }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct PenaltyArgs {
    /// Penalty constant C in `C sqrt(log p / min_k n_jk)`.
    #[arg(long, default_value_t = 1.0, conflicts_with = "stability")]
    penalty_c: f64,
    /// Choose C by subsample stability over `--stability-grid`.
    #[arg(long)]
    stability: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1,1.5,2")]
    stability_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    stability_subsamples: usize,
    /// Seed for stability subsampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EstimateArgs {
    /// Masked CSV: header of variable names, empty or NaN cells missing.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Subtract pairwise means before forming products.
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    admm: AdmmArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TestEdgeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Regressed node (zero-based).
    #[arg(long)]
    a: usize,
    /// Tested coordinate (zero-based).
    #[arg(long)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Also test `|Θ_ab / Θ_aa| <= threshold`.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    admm: AdmmArgs,
    #[command(flatten)]
    lasso: LassoArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Holm,
    Fdr,
    Both,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TestGraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Method::Both)]
    method: Method,
    /// True edge list (`a,b` per line, zero-based) for FDP and power.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    admm: AdmmArgs,
    #[command(flatten)]
    lasso: LassoArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    /// JSON study config with `"study": "graph"` or `"study": "edge"`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Output prefix: `<out>.json`, plus `<out>.replicates.csv` and
    /// `<out>.aggregate.csv` for graph studies.
    #[arg(long)]
    out: PathBuf,
    /// Also write the first replicate's dataset as masked CSV.
    #[arg(long)]
    export_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "lowercase")]
enum SimConfig {
    Graph(StudyConfig),
    Edge(EdgeStudyConfig),
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    config: &'a T,
}

fn provenance<'a, T: Serialize>(command: &'a str, config: &'a T) -> Provenance<'a, T> {
    Provenance {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        config,
    }
}

fn load(path: &Path) -> Result<MaskedDataset> {
    load_masked_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_matrix(path: &Path, m: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(names)?;
    for r in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])))?;
    }
    w.flush()?;
    Ok(())
}

fn names_of(data: &MaskedDataset) -> Vec<String> {
    data.var_names()
        .map(|n| n.to_vec())
        .unwrap_or_else(|| (0..data.n_vars()).map(|j| format!("x{j}")).collect())
}

#[derive(Serialize)]
struct EstimateDiagnostics<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a, EstimateArgs>,
    n_samples: usize,
    n_vars: usize,
    zero_count_pairs: Vec<(usize, usize)>,
    projection_iterations: usize,
    projection_converged: bool,
    projection_residual: f64,
    projection_objective: f64,
    min_eigenvalue_before: f64,
    min_eigenvalue_after: f64,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let cfg = args.admm.config();
    cfg.validate()?;
    let data = load(&args.input)?;
    let counts = pairwise_counts(&data);
    let cov = unbiased_cov(&data, &counts, args.center);
    let proj = project_psd_weighted(&cov, &cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let names = names_of(&data);
    let p = data.n_vars();
    let count_mat = DMatrix::from_fn(p, p, |j, k| counts.get(j, k) as f64);
    write_matrix(&args.out.join("sigma_hat.csv"), &cov.sigma_hat, &names)?;
    write_matrix(&args.out.join("sigma_tilde.csv"), &proj.sigma_tilde, &names)?;
    let mut w = csv::Writer::from_path(args.out.join("counts.csv"))?;
    w.write_record(&names)?;
    for j in 0..p {
        w.write_record((0..p).map(|k| (count_mat[(j, k)] as usize).to_string()))?;
    }
    w.flush()?;
    let diag = EstimateDiagnostics {
        provenance: provenance("estimate", args),
        n_samples: data.n_samples(),
        n_vars: p,
        zero_count_pairs: cov.zero_count_pairs.clone(),
        projection_iterations: proj.iterations_used,
        projection_converged: proj.converged,
        projection_residual: proj.final_residual,
        projection_objective: proj.objective,
        min_eigenvalue_before: erosegm::psdproj::min_eigenvalue(&cov.sigma_hat),
        min_eigenvalue_after: erosegm::psdproj::min_eigenvalue(&proj.sigma_tilde),
    };
    write_json(&diag, Some(&args.out.join("diagnostics.json")))
}

fn resolve_penalty(
    data: &MaskedDataset,
    pen: &PenaltyArgs,
    projection: &ProjectionConfig,
    lasso: &LassoConfig,
) -> Result<(f64, Option<StabilityOutcome>)> {
    if !pen.stability {
        return Ok((pen.penalty_c, None));
    }
    let cfg = StabilityConfig { n_subsamples: pen.stability_subsamples, seed: pen.seed, ..StabilityConfig::default() };
    let out = stability_select(data, &pen.stability_grid, &cfg, projection, lasso)?;
    Ok((out.chosen_c, Some(out)))
}

#[derive(Serialize)]
struct EdgeOutput<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a, TestEdgeArgs>,
    penalty_c: f64,
    stability: Option<StabilityOutcome>,
    result: EdgeRecord,
    threshold_p: Option<f64>,
}

fn cmd_test_edge(args: &TestEdgeArgs) -> Result<ExitCode> {
    let projection = args.admm.config();
    let lasso = args.lasso.config();
    let data = load(&args.input)?;
    let p = data.n_vars();
    if args.a >= p || args.b >= p || args.a == args.b {
        eprintln!("error: need distinct node indices below {p}, got a={} b={}", args.a, args.b);
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let (c, stability) = resolve_penalty(&data, &args.penalty, &projection, &lasso)?;
    let tester = EdgeTester::prepare(&data, c, &projection, &lasso)?;
    let result = tester.edge_test(args.a, args.b, args.alpha);
    let (threshold_p, code) = match &result {
        Ok(e) => (args.threshold.map(|t| threshold_test(e, t)).transpose()?, ExitCode::SUCCESS),
        Err(Error::DegenerateVariance { value, .. }) => {
            eprintln!("degenerate variance estimate {value:e} for pair ({}, {})", args.a, args.b);
            (None, ExitCode::from(EXIT_DEGENERATE))
        }
        Err(_) => return Err(result.unwrap_err().into()),
    };
    let record = EdgeOutcome { a: args.a, b: args.b, result, flags: Vec::new() }.to_record();
    let out = EdgeOutput {
        provenance: provenance("test-edge", args),
        penalty_c: c,
        stability,
        result: record,
        threshold_p,
    };
    write_json(&out, args.out.as_deref())?;
    Ok(code)
}

#[derive(Serialize)]
struct SelectionOutput {
    selected: Vec<Edge>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<FdrSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<TruthComparison>,
}

#[derive(Serialize)]
struct TruthComparison {
    #[serde(flatten)]
    fdp: FdpPower,
    #[serde(flatten)]
    metrics: SelectionMetrics,
}

#[derive(Serialize)]
struct GraphOutput<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a, TestGraphArgs>,
    penalty_c: f64,
    stability: Option<StabilityOutcome>,
    m: usize,
    untestable: usize,
    edges: Vec<EdgeRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    holm: Option<SelectionOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fdr: Option<SelectionOutput>,
}

fn read_truth(path: &Path, p: usize) -> Result<BTreeSet<Edge>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut edges = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (parts.len() == 2)
            .then(|| Some((parts[0].parse::<usize>().ok()?, parts[1].parse::<usize>().ok()?)))
            .flatten();
        match parsed {
            Some((a, b)) if a != b && a < p && b < p => {
                edges.insert((a.min(b), a.max(b)));
            }
            _ => bail!("{}:{}: expected `a,b` with distinct zero-based indices below {p}", path.display(), i + 1),
        }
    }
    Ok(edges)
}

fn cmd_test_graph(args: &TestGraphArgs) -> Result<()> {
    let projection = args.admm.config();
    let lasso = args.lasso.config();
    let data = load(&args.input)?;
    let p = data.n_vars();
    let truth = args.truth.as_deref().map(|t| read_truth(t, p)).transpose()?;
    let (c, stability) = resolve_penalty(&data, &args.penalty, &projection, &lasso)?;
    let tester = EdgeTester::prepare(&data, c, &projection, &lasso)?;
    let outcomes = tester.test_all_pairs(args.alpha, rayon::current_num_threads() > 1);
    let table = PvalueTable::new(
        outcomes
            .iter()
            .map(|o| PvalueEntry { a: o.a, b: o.b, p_value: o.p_value() })
            .collect(),
    )?;
    let compare = |sel: &BTreeSet<Edge>| {
        truth.as_ref().map(|t| TruthComparison { fdp: fdp_power(sel, t), metrics: selection_metrics(sel, t, p) })
    };
    let holm_out = matches!(args.method, Method::Holm | Method::Both)
        .then(|| -> Result<SelectionOutput> {
            let sel = holm(&table, args.alpha)?;
            Ok(SelectionOutput { truth: compare(&sel), selected: sel.into_iter().collect(), summary: None })
        })
        .transpose()?;
    let fdr_out = matches!(args.method, Method::Fdr | Method::Both)
        .then(|| -> Result<SelectionOutput> {
            let sel = fdr_select(&table, args.alpha)?;
            Ok(SelectionOutput {
                truth: compare(&sel.selected),
                selected: sel.selected.into_iter().collect(),
                summary: Some(sel.summary),
            })
        })
        .transpose()?;
    let out = GraphOutput {
        provenance: provenance("test-graph", args),
        penalty_c: c,
        stability,
        m: table.m(),
        untestable: outcomes.len() - table.m(),
        edges: outcomes.iter().map(|o| o.to_record()).collect(),
        holm: holm_out,
        fdr: fdr_out,
    };
    write_json(&out, args.out.as_deref())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// CSV preceded by a `#` line holding the resolved config as JSON.
fn write_csv_with_config<T: Serialize, C: Serialize>(path: &Path, rows: &[T], config: &C) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(f, "# {}", serde_json::to_string(config)?)?;
    write_csv(rows, &mut f)?;
    f.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg: SimConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    match &mut cfg {
        SimConfig::Graph(c) => {
            c.master_seed = args.seed.unwrap_or(c.master_seed);
            c.replicates = args.replicates.unwrap_or(c.replicates);
        }
        SimConfig::Edge(c) => {
            c.master_seed = args.seed.unwrap_or(c.master_seed);
            c.replicates = args.replicates.unwrap_or(c.replicates);
        }
    }
    let prov = provenance("simulate", &cfg);
    if let Some(path) = &args.export_data {
        let (setup, measurement, master) = match &cfg {
            SimConfig::Graph(c) => (StudySetup::new(&c.graph, &c.precision, &c.measurement)?, &c.measurement, c.master_seed),
            SimConfig::Edge(c) => (StudySetup::new(&c.graph, &c.precision, &c.measurement)?, &c.measurement, c.master_seed),
        };
        let data = setup.replicate_data(measurement, erosegm::simlab::derive_seed(master, 0))?;
        let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        write_masked_csv(&data, BufWriter::new(f))?;
    }
    match &cfg {
        SimConfig::Graph(c) => {
            let report = run_study(c)?;
            write_csv_with_config(&with_suffix(&args.out, ".replicates.csv"), &report.rows, &prov)?;
            write_csv_with_config(&with_suffix(&args.out, ".aggregate.csv"), &report.aggregate, &prov)?;
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                provenance: &'a Provenance<'a, SimConfig>,
                report: &'a erosegm::simlab::StudyReport,
            }
            write_json(&Out { provenance: &prov, report: &report }, Some(&with_suffix(&args.out, ".json")))?;
        }
        SimConfig::Edge(c) => {
            let report = run_edge_study(c)?;
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                provenance: &'a Provenance<'a, SimConfig>,
                report: &'a erosegm::simlab::EdgeStudyReport,
            }
            write_json(&Out { provenance: &prov, report: &report }, Some(&with_suffix(&args.out, ".json")))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return Ok(ExitCode::from(EXIT_USAGE));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a).map(|_| ExitCode::SUCCESS),
        Command::TestEdge(a) => cmd_test_edge(a),
        Command::TestGraph(a) => cmd_test_graph(a).map(|_| ExitCode::SUCCESS),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::InvalidArgument(_) | Error::IndexOutOfRange { .. }));
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}
