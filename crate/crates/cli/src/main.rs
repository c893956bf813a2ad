use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use probcbma::cbma::{
    self, forward_map, parse_term_query, CbmaDataset, ThresholdConfig, DEFAULT_ALPHA, DEFAULT_SIGNIFICANCE,
    DEFAULT_TAU,
};
use probcbma::dsl::{parse_program, parse_query, validate_program, ValidatedProgram};
use probcbma::engine::{self, Engine, EngineError};
use probcbma::experiments::{
    init_thread_pool, run_consistency_benchmark, run_f1_benchmark, ConsistencyBenchConfig, F1BenchConfig,
};
use probcbma::probdb::ProbDatabase;
use probcbma::sim::{generate, GenConfig};

#[derive(Parser)]
#[command(name = "probcbma", version, about = "Probabilistic term-based queries over CBMA databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer a conditional or marginal query.
    Query(QueryArgs),
    /// Print the extensional plan the lifted engine would run.
    Explain(InputArgs),
    /// Sample a synthetic CBMA database.
    Simulate(SimulateArgs),
    /// Soft vs hard F1 on simulated databases across sample sizes.
    BenchF1(BenchF1Args),
    /// Consistency of forward maps over random sub-samples of a database.
    BenchConsistency(BenchConsistencyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Estimator,
    Lifted,
    Oracle,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Estimator => Engine::Estimator,
            EngineArg::Lifted => Engine::Lifted,
            EngineArg::Oracle => Engine::Oracle,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Directory holding features.tsv and activations.tsv.
    #[arg(long, conflicts_with = "program", required_unless_present = "program")]
    dataset: Option<PathBuf>,
    /// Program file in the rule language.
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "soft")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// With --dataset: `Activation(v) | <terms with & | ! and parentheses>`.
    /// With --program: a query in the rule language.
    query: String,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "estimator")]
    engine: EngineArg,
    /// Accepted for interface uniformity; query answering is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a thresholded forward-inference map (dataset queries only).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Bonferroni base level for --map.
    #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
    significance: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML generator configuration (defaults when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchF1Args {
    /// TOML file with optional [generator] and [bench] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for f1.tsv and f1_summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchConsistencyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// TOML file with an optional [bench] table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for consistency.tsv and consistency_summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct F1File {
    generator: GenConfig,
    bench: F1BenchConfig,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConsistencyFile {
    bench: ConsistencyBenchConfig,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn user(message: impl Display) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure {
            code: if e.is_verdict() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool(None);
    let result = match cli.command {
        Command::Query(a) => cmd_query(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::BenchF1(a) => cmd_bench_f1(a),
        Command::BenchConsistency(a) => cmd_bench_consistency(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("probcbma: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn threshold(input: &InputArgs) -> Result<ThresholdConfig, Failure> {
    match input.mode {
        ModeArg::Hard => ThresholdConfig::hard(input.tau),
        ModeArg::Soft => ThresholdConfig::soft(input.alpha, input.tau),
    }
    .map_err(Failure::user)
}

fn load_dataset(dir: &Path) -> Result<CbmaDataset, Failure> {
    CbmaDataset::load(dir).map_err(Failure::user)
}

fn load_program(path: &Path) -> Result<(ValidatedProgram, ProbDatabase), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
    let at = |e: &dyn Display| Failure::user(format!("{}:{e}", path.display()));
    let program = parse_program(&text).map_err(|e| at(&e))?;
    let program = validate_program(program).map_err(|e| at(&e))?;
    let db = ProbDatabase::from_program(&program).map_err(|e| at(&e))?;
    Ok((program, db))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::user(format!("{}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::user(format!("stdout: {e}"))),
    }
}

fn cmd_query(a: QueryArgs) -> Outcome {
    let engine = Engine::from(a.engine);
    let table = if let Some(dir) = &a.input.dataset {
        let ds = load_dataset(dir)?;
        let cfg = threshold(&a.input)?;
        let q = parse_term_query(&a.input.query).map_err(Failure::user)?;
        if let Some(map_path) = &a.map {
            let est = cbma::estimate(&ds, &cfg, &q.condition).map_err(Failure::user)?;
            emit(Some(map_path), &forward_map(&est, a.significance).to_tsv(&ds))?;
        }
        engine::term_query(&ds, &cfg, &q, engine)?
    } else {
        if a.map.is_some() {
            return Err(Failure::user("--map requires --dataset"));
        }
        let path = a.input.program.as_deref().expect("clap enforces an input");
        let (program, db) = load_program(path)?;
        let q = parse_query(&a.input.query).map_err(|e| Failure::user(format!("query:{e}")))?;
        engine::program_query(&program, &db, &q, engine)?
    };
    emit(a.out.as_deref(), &table.to_tsv())
}

fn cmd_explain(a: InputArgs) -> Outcome {
    let plans = if let Some(dir) = &a.dataset {
        let ds = load_dataset(dir)?;
        let q = parse_term_query(&a.query).map_err(Failure::user)?;
        engine::explain_term_query(&ds, &threshold(&a)?, &q)?
    } else {
        let (program, db) = load_program(a.program.as_deref().expect("clap enforces an input"))?;
        let q = parse_query(&a.query).map_err(|e| Failure::user(format!("query:{e}")))?;
        engine::compile_query(&program, &db.schema(), &q)?
    };
    emit(None, &plans.to_string())
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::user(format!("{}: {e}", dir.display())))
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => GenConfig::from_toml_file(p).map_err(Failure::user)?,
        None => GenConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let sim = generate(&cfg).map_err(Failure::user)?;
    create_dir(&a.out)?;
    sim.write(&a.out).map_err(Failure::user)
}

fn cmd_bench_f1(a: BenchF1Args) -> Outcome {
    let mut file: F1File = read_toml(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        file.generator.seed = seed;
        file.bench.seed = seed;
    }
    let results = run_f1_benchmark(&file.generator, &file.bench).map_err(Failure::user)?;
    create_dir(&a.out)?;
    emit(Some(&a.out.join("f1.tsv")), &results.to_tsv())?;
    emit(Some(&a.out.join("f1_summary.json")), &results.to_json())
}

fn cmd_bench_consistency(a: BenchConsistencyArgs) -> Outcome {
    let mut file: ConsistencyFile = read_toml(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        file.bench.seed = seed;
    }
    let ds = load_dataset(&a.dataset)?;
    let results = run_consistency_benchmark(&ds, &file.bench).map_err(Failure::user)?;
    create_dir(&a.out)?;
    emit(Some(&a.out.join("consistency.tsv")), &results.to_tsv())?;
    emit(Some(&a.out.join("consistency_summary.json")), &results.to_json())
}
