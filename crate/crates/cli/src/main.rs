use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;

use joinsample::gof::{continuous_convert, ks_critical, ks_statistic, KsReport, ReferenceCdf};
use joinsample::model::{JoinQuery, Method};
use joinsample::multinomial::seeded_rng;
use joinsample::oracle::{enumerate_join, exact_multinomial, EnumeratedJoin};
use joinsample::output::{write_enumeration, write_samples};
use joinsample::pipeline::SampleSet;
use joinsample::{Error, Runner};

#[derive(Parser)]
#[command(name = "joinsample", version, about = "Weighted random samples over joins of delimited files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a weighted sample with replacement and write it as TSV.
    Sample(SampleArgs),
    /// Check the sampler against the enumerated join with KS tests.
    Validate(ValidateArgs),
    /// Enumerate the full join with exact weights and probabilities.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct QueryArgs {
    /// JSON query spec.
    spec: PathBuf,
    /// Sample size (overrides the spec).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// stream, economic, auto, fk or hashed.
    #[arg(long)]
    method: Option<Method>,
    /// Hash universe size for the hashed sampler.
    #[arg(long)]
    universe: Option<u64>,
    /// Directory for pre-joined temporary tables.
    #[arg(long)]
    temp_dir: Option<PathBuf>,
}

impl QueryArgs {
    fn load(&self) -> Result<JoinQuery, Error> {
        let mut q = JoinQuery::from_file(&self.spec)?;
        if let Some(n) = self.n {
            q.sample_size = n;
        }
        if let Some(s) = self.seed {
            q.seed = s;
        }
        if let Some(m) = self.method {
            q.method = m;
        }
        if let Some(u) = self.universe {
            q.options.hashed.universe = Some(u);
        }
        if let Some(d) = &self.temp_dir {
            q.options.temp_dir = Some(d.clone());
        }
        Ok(q)
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Output file (standard output if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the run report here instead of standard error.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value_t = 100)]
    validate_runs: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Draw from deliberately wrong probabilities (tests the test).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct OracleArgs {
    spec: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    method: &'a str,
    seed: u64,
    n: usize,
    passes: &'a BTreeMap<String, u64>,
    peak_index_entries: usize,
    total_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    purge_rate: Option<f64>,
    rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fallback: Option<&'a str>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    merged_tables: &'a [String],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    warnings: &'a [String],
    wall_time_ms: f64,
}

#[derive(Serialize)]
struct ValidationReport {
    alpha: f64,
    n: usize,
    critical: f64,
    join_rows: usize,
    pass_fraction: f64,
    runs: Vec<KsReport>,
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut f = create(p)?;
            writeln!(f, "{text}").and_then(|_| f.flush()).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })
        }
        None => {
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn cmd_sample(args: &SampleArgs) -> Result<(), Error> {
    let start = Instant::now();
    let query = args.query.load()?;
    let runner = Runner::new(&query)?;
    let sample = runner.sample(query.sample_size, query.seed)?;
    write_samples(&sample, sink(args.output.as_deref())?)?;
    let s = &sample.stats;
    let report = RunReport {
        method: &s.method,
        seed: sample.seed,
        n: sample.len(),
        passes: &s.passes,
        peak_index_entries: s.peak_index_entries,
        total_weight: s.total_weight,
        acceptance_rate: s.acceptance_rate,
        purge_rate: s.purge_rate,
        rounds: s.rounds,
        fallback: s.fallback.as_deref(),
        merged_tables: runner.merged(),
        warnings: &s.warnings,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    write_json(&report, args.report.as_deref())
}

/// Doubles the weight of the first half of the join rows.
fn corrupted(join: &EnumeratedJoin) -> EnumeratedJoin {
    let mut bad = join.clone();
    let half = bad.trees.len() / 2;
    for t in &mut bad.trees[..half.max(1)] {
        t.weight *= 2.0;
    }
    bad.total_weight = bad.trees.iter().map(|t| t.weight).sum();
    bad
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Error> {
    let query = args.query.load()?;
    let n = query.sample_size;
    let runner = Runner::new(&query)?;
    let join = enumerate_join(runner.plan())?;
    let cdf = ReferenceCdf::from_weights(&join.weights())?;
    let bad = args.corrupt.then(|| corrupted(&join));
    let mut runs = Vec::with_capacity(args.validate_runs);
    for r in 0..args.validate_runs as u64 {
        let seed = query.seed.wrapping_add(r);
        let sample: SampleSet = match &bad {
            Some(b) => exact_multinomial(b, n, seed)?,
            None => runner.sample(n, seed)?,
        };
        let events = join.event_indices(&sample)?;
        let values = continuous_convert(&events, join.len(), &mut seeded_rng(seed, u64::MAX))?;
        let d = ks_statistic(&values, &cdf)?;
        runs.push(KsReport::with_alphas(d, values.len(), &[args.alpha]));
    }
    let passed = runs.iter().filter(|r| r.passes(args.alpha)).count();
    let report = ValidationReport {
        alpha: args.alpha,
        n,
        critical: ks_critical(args.alpha, n),
        join_rows: join.len(),
        pass_fraction: passed as f64 / runs.len().max(1) as f64,
        runs,
    };
    let text = serde_json::to_string_pretty(&report)?;
    match &args.report {
        Some(p) => write_json(&report, Some(p))?,
        None => println!("{text}"),
    }
    eprintln!(
        "{passed}/{} runs below the critical value {:.6} (alpha {})",
        report.runs.len(),
        report.critical,
        args.alpha
    );
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Error> {
    let query = JoinQuery::from_file(&args.spec)?;
    let runner = Runner::new(&query)?;
    let join = enumerate_join(runner.plan())?;
    if join.is_empty() {
        warn!("the join is empty");
    }
    write_enumeration(&join, sink(args.output.as_deref())?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let line = serde_json::json!({ "error": category.as_str(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
