use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mutual_forest::analysis::{analyze, related_pairs, relations, AnalysisConfig};
use mutual_forest::data::mtry_three_quarters;
use mutual_forest::io::{self, IngestConfig, OutcomeSpec};
use mutual_forest::selection::{NullMethod, DEFAULT_ALPHA, DEFAULT_MIN_NONPOSITIVE, DEFAULT_REPETITIONS};
use mutual_forest::simulation::{run_experiment, ExperimentConfig, OutcomeType, Scenario, ScenarioSpec};
use mutual_forest::{Dataset, FeatureKind, ForestParams};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mutforest",
    version,
    about = "Relation analysis and feature selection with surrogate-split random forests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Importance measures, relations and selections for a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Only the relation matrices (adjusted agreement and MFI).
    Relations(AnalyzeArgs),
    /// Run a simulation scenario and summarize selection metrics.
    Simulate(SimulateArgs),
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Classification,
    Regression,
    Survival,
}

#[derive(Clone, Copy, ValueEnum)]
enum NullArg {
    Auto,
    Janitza,
    Permutation,
}

impl From<NullArg> for NullMethod {
    fn from(a: NullArg) -> Self {
        match a {
            NullArg::Auto => NullMethod::Auto,
            NullArg::Janitza => NullMethod::Janitza,
            NullArg::Permutation => NullMethod::Permutation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    NullA,
    NullB,
    Correlation,
    NullBinary,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 500)]
    ntree: usize,
    /// Candidate features per node [default: floor(p^0.75)].
    #[arg(long)]
    mtry: Option<usize>,
    /// Use floor(sqrt(p)) candidates per node instead.
    #[arg(long, conflicts_with = "mtry")]
    mtry_sqrt: bool,
    #[arg(long, default_value_t = 1)]
    min_node_size: usize,
    /// Surrogate splits per node [default: 1% of p, at least 1].
    #[arg(long)]
    s: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads [default: $MUTFOREST_THREADS, else all available cores].
    #[arg(long, env = "MUTFOREST_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = NullArg::Auto)]
    null_method: NullArg,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_NONPOSITIVE)]
    min_nonpositive: usize,
    /// Select on Benjamini-Hochberg adjusted p-values.
    #[arg(long)]
    bh: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Outcome column (classification and regression).
    #[arg(long, required_unless_present = "time")]
    outcome: Option<String>,
    #[arg(long, value_enum, default_value_t = OutcomeArg::Classification)]
    outcome_type: OutcomeArg,
    /// Survival time column.
    #[arg(long, requires = "status")]
    time: Option<String>,
    /// Survival status column (1 = event).
    #[arg(long, requires = "time")]
    status: Option<String>,
    /// Treat these columns as genotypes (0/1/2), comma separated.
    #[arg(long, value_delimiter = ',')]
    genotype: Vec<String>,
    /// Treat these columns as continuous, comma separated.
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Samples [default: 100].
    #[arg(long)]
    n: Option<usize>,
    /// Total features (correlation and null-binary scenarios) [default: 1000].
    #[arg(long)]
    p_total: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutcomeArg::Classification)]
    outcome_type: OutcomeArg,
    /// Record relation values for every feature pair.
    #[arg(long)]
    pairs: bool,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn default_s(p: usize) -> usize {
    (p / 100).max(1)
}

fn threads(a: &ForestArgs) -> Result<usize, Failure> {
    match a.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(t) => Ok(t),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn forest_params(a: &ForestArgs, p: usize) -> Result<ForestParams, Failure> {
    let mtry = match a.mtry {
        Some(m) => m,
        None if a.mtry_sqrt => ((p as f64).sqrt().floor() as usize).max(1),
        None => mtry_three_quarters(p),
    };
    Ok(ForestParams {
        ntree: a.ntree,
        mtry,
        min_node_size: a.min_node_size,
        surrogates: a.s.unwrap_or_else(|| default_s(p)),
        seed: a.seed,
        threads: threads(a)?,
    })
}

fn analysis_config(f: &ForestArgs, t: &TestArgs, p: usize) -> Result<AnalysisConfig, Failure> {
    if !(t.alpha > 0.0 && t.alpha < 1.0) {
        return Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {}", t.alpha)));
    }
    Ok(AnalysisConfig {
        params: forest_params(f, p)?,
        alpha: t.alpha,
        null_method: t.null_method.into(),
        min_nonpositive: t.min_nonpositive,
        repetitions: t.repetitions,
        adjust_bh: t.bh,
    })
}

fn load(a: &AnalyzeArgs) -> Result<Dataset, Failure> {
    let outcome = match (a.outcome_type, &a.outcome, &a.time, &a.status) {
        (OutcomeArg::Survival, _, Some(time), Some(status)) | (_, None, Some(time), Some(status)) => {
            OutcomeSpec::Survival { time: time.clone(), status: status.clone() }
        }
        (OutcomeArg::Survival, _, _, _) => {
            return Err(Failure::Usage("survival outcomes need --time and --status".into()));
        }
        (OutcomeArg::Classification, Some(c), _, _) => OutcomeSpec::Classification { column: c.clone() },
        (OutcomeArg::Regression, Some(c), _, _) => OutcomeSpec::Regression { column: c.clone() },
        _ => return Err(Failure::Usage("--outcome is required".into())),
    };
    let mut kinds = BTreeMap::new();
    for name in &a.genotype {
        kinds.insert(name.clone(), FeatureKind::Genotype);
    }
    for name in &a.continuous {
        kinds.insert(name.clone(), FeatureKind::Continuous);
    }
    io::ingest_csv(&a.input, &IngestConfig { outcome: Some(outcome), kinds }).map_err(data)
}

fn write(dir: &Path, file: &str, text: &str) -> Result<(), Failure> {
    io::write_text(&dir.join(file), text).map_err(data)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let ds = load(a)?;
    let cfg = analysis_config(&a.forest, &a.test, ds.n_features())?;
    let res = analyze(&ds, &cfg).map_err(data)?;
    prepare_out(&a.out)?;
    write(&a.out, "importance.json", &io::importance_json(&res, &cfg).map_err(data)?)?;
    write(&a.out, "importance.tsv", &io::importance_tsv(&res))?;
    write(&a.out, "mfi.tsv", &io::matrix_tsv(ds.names(), &res.mfi.mfi.values))?;
    write(&a.out, "mfi_pvalues.tsv", &io::matrix_tsv(ds.names(), &res.mfi_pvalues))?;
    write(&a.out, "selections.json", &io::selections_json(&res, &cfg).map_err(data)?)?;
    log::info!(
        "selected {} (AIR), {} (MIR), {} related pairs",
        res.selections.air.selected.len(),
        res.selections.mir.selected.len(),
        res.selections.related_pairs.len()
    );
    Ok(())
}

fn cmd_relations(a: &AnalyzeArgs) -> Result<(), Failure> {
    let ds = load(a)?;
    let cfg = analysis_config(&a.forest, &a.test, ds.n_features())?;
    let an = relations(&ds, &cfg.params).map_err(data)?;
    let related = related_pairs(&an, ds.names(), &cfg).map_err(data)?;
    prepare_out(&a.out)?;
    write(&a.out, "agreement.tsv", &io::matrix_tsv(ds.names(), &an.mfi.m_x))?;
    write(&a.out, "mfi.tsv", &io::matrix_tsv(ds.names(), &an.mfi.values))?;
    write(&a.out, "mfi_pvalues.tsv", &io::matrix_tsv(ds.names(), &related.pvalues))?;
    write(&a.out, "related.json", &io::related_json(&related, &cfg).map_err(data)?)?;
    log::info!("{} related pairs", related.pairs.len());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let scenario = match a.scenario {
        ScenarioArg::NullA => Scenario::NullA,
        ScenarioArg::NullB => Scenario::NullB,
        ScenarioArg::Correlation => Scenario::Correlation,
        ScenarioArg::NullBinary => Scenario::NullBinary,
    };
    let mut spec = ScenarioSpec::new(scenario);
    spec.replicates = a.replicates;
    spec.seed = a.forest.seed;
    spec.n = a.n.unwrap_or(spec.n);
    spec.p_total = a.p_total.unwrap_or(spec.p_total);
    spec.outcome = match a.outcome_type {
        OutcomeArg::Classification => OutcomeType::Classification,
        OutcomeArg::Regression => OutcomeType::Regression,
        OutcomeArg::Survival => OutcomeType::Survival,
    };
    let p = spec.generate(0).map_err(data)?.0.n_features();
    let mut analysis = analysis_config(&a.forest, &a.test, p)?;
    // replicates run in parallel; each forest stays single-threaded
    analysis.params.threads = 1;
    let cfg = ExperimentConfig { analysis, record_pairs: a.pairs, threads: threads(&a.forest)?, ..Default::default() };
    let out = run_experiment(&spec, &cfg).map_err(data)?;
    for f in &out.metrics.failures {
        log::warn!("replicate {} failed: {}", f.replicate, f.error);
    }
    prepare_out(&a.out)?;
    write(&a.out, "metrics.json", &io::metrics_json(&out.metrics).map_err(data)?)?;
    write(&a.out, "raw.tsv", &io::raw_tsv(&out.raw))?;
    if out.metrics.replicates_ok == 0 {
        return Err(Failure::Data("every replicate failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Relations(a) => cmd_relations(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Version => {
            println!("mutforest {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
