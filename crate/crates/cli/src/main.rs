//! Command line surface: `run` drives a fuzzing campaign, `attribute`
//! computes exact per-byte attributions for a seed, `stats` summarizes a
//! finished campaign directory.
//!
//! Diagnostics go to stderr; stdout is reserved for the documented
//! machine-readable output (CSV for `attribute`, summary for `stats`).
//! Exit codes: 0 success, 1 runtime error, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use covshap_core::engine::{Campaign, EngineConfig, ModePolicy};
use covshap_core::shapley::{attribution_report, report_to_csv, MAX_EXACT_PLAYERS};
use covshap_core::targets::{CoupledChecker, ExternalTarget, MagicChain, Target};

#[derive(Parser)]
#[command(name = "covshap", version, about = "Coverage-guided fuzzer with Shapley byte attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Run(RunArgs),
    /// Exact Shapley attribution for selected byte positions of a seed.
    Attribute(AttributeArgs),
    /// Summarize a campaign output directory.
    Stats(StatsArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Auto,
    Shapley,
    Random,
}

impl From<ModeArg> for ModePolicy {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => ModePolicy::Auto,
            ModeArg::Shapley => ModePolicy::Shapley,
            ModeArg::Random => ModePolicy::Random,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Target name (coupled_checker, magic_chain) or an external command
    /// template containing `@@`.
    #[arg(long)]
    target: String,
    /// Directory with initial seed files.
    #[arg(long)]
    seeds: PathBuf,
    /// Output directory for stats.csv, corpus/ and crashes/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    max_execs: u64,
    /// Wall-clock budget in seconds; 0 disables the limit.
    #[arg(long, default_value_t = 0)]
    max_seconds: u64,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    /// Mutation trials per seed selection.
    #[arg(long, default_value_t = 256)]
    energy: u64,
    /// Number of center seeds for context features.
    #[arg(long, default_value_t = 10)]
    centers: usize,
    /// Exploration coefficient on the confidence bound.
    #[arg(long, default_value_t = 0.5)]
    alpha_ucb: f64,
    /// Report real wall time in stats instead of the deterministic
    /// execution-derived clock.
    #[arg(long)]
    real_clock: bool,
    /// Working directory for external targets.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
}

#[derive(Args)]
struct AttributeArgs {
    /// Seed file to analyze.
    #[arg(long)]
    seed_file: PathBuf,
    /// Target name or external command template.
    #[arg(long)]
    target: String,
    /// Comma-separated byte positions (at most 20).
    #[arg(long, value_delimiter = ',')]
    positions: Vec<usize>,
    /// Probe byte values, comma-separated hex (e.g. 4a,b7). One value is
    /// applied to every position; otherwise one per position.
    #[arg(long, value_delimiter = ',', default_value = "5a")]
    probe: Vec<String>,
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Campaign output directory.
    #[arg(long)]
    out: PathBuf,
}

/// An error paired with the exit code it should produce.
enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e,
        }
    }
}

impl From<covshap_core::error::Error> for CliError {
    fn from(err: covshap_core::error::Error) -> Self {
        CliError::Runtime(err.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(err: anyhow::Error) -> CliError {
    CliError::Usage(err)
}

fn runtime(err: anyhow::Error) -> CliError {
    CliError::Runtime(err)
}

fn make_target(name: &str, workdir: &Path) -> CliResult<Box<dyn Target>> {
    if name.contains("@@") {
        return Ok(Box::new(
            ExternalTarget::new(name, workdir).map_err(|e| usage(e.into()))?,
        ));
    }
    match name {
        "coupled_checker" => Ok(Box::new(CoupledChecker)),
        "magic_chain" => Ok(Box::new(MagicChain)),
        other => Err(usage(anyhow!(
            "unknown target {other:?}; expected coupled_checker, magic_chain, \
             or an external command template containing `@@`"
        ))),
    }
}

fn load_seed_files(dir: &Path) -> CliResult<Vec<Vec<u8>>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("reading seed directory {}", dir.display()))
        .map_err(usage)?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(anyhow!(
            "seed directory {} contains no files",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            std::fs::read(p)
                .with_context(|| format!("reading seed {}", p.display()))
                .map_err(usage)
        })
        .collect()
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let target = make_target(&args.target, &args.workdir)?;
    let seeds = load_seed_files(&args.seeds)?;
    if args.alpha_ucb < 0.0 {
        return Err(usage(anyhow!("--alpha-ucb must be non-negative")));
    }
    if args.energy == 0 {
        return Err(usage(anyhow!("--energy must be positive")));
    }
    let config = EngineConfig {
        max_execs: args.max_execs,
        max_seconds: args.max_seconds,
        rng_seed: args.rng_seed,
        mode: args.mode.into(),
        energy: args.energy,
        centers: args.centers,
        alpha_ucb: args.alpha_ucb,
        real_clock: args.real_clock,
    };
    let mut campaign = Campaign::new(config, target.as_ref(), seeds)?;
    let row = campaign.run_to_dir(target.as_ref(), &args.out)?;
    log::info!(
        "campaign finished: {} execs, {} edges, {} seeds in {} families, {} crashes",
        row.execs,
        row.unique_edges,
        row.n_seeds,
        row.n_families,
        campaign.crashes.len()
    );
    Ok(())
}

fn parse_probe(args: &AttributeArgs) -> CliResult<Vec<u8>> {
    let parsed: Vec<u8> = args
        .probe
        .iter()
        .map(|s| {
            u8::from_str_radix(s.trim(), 16)
                .with_context(|| format!("bad probe byte {s:?}"))
                .map_err(usage)
        })
        .collect::<CliResult<_>>()?;
    match parsed.len() {
        1 => Ok(vec![parsed[0]; args.positions.len()]),
        n if n == args.positions.len() => Ok(parsed),
        n => Err(usage(anyhow!(
            "expected 1 or {} probe bytes, got {n}",
            args.positions.len()
        ))),
    }
}

fn cmd_attribute(args: AttributeArgs) -> CliResult<()> {
    if args.positions.is_empty() {
        return Err(usage(anyhow!("--positions must name at least one byte")));
    }
    if args.positions.len() > MAX_EXACT_PLAYERS {
        return Err(usage(anyhow!(
            "at most {MAX_EXACT_PLAYERS} positions supported, got {}",
            args.positions.len()
        )));
    }
    let target = make_target(&args.target, &args.workdir)?;
    let original = std::fs::read(&args.seed_file)
        .with_context(|| format!("reading {}", args.seed_file.display()))
        .map_err(usage)?;
    for &p in &args.positions {
        if p >= original.len() {
            return Err(usage(anyhow!(
                "position {p} beyond seed length {}",
                original.len()
            )));
        }
    }
    let probe = parse_probe(&args)?;

    let base_edges = target.run(&original)?.edges;
    let positions = args.positions.clone();
    let characteristic = |mask: u32| -> f64 {
        let mut input = original.clone();
        for (i, &pos) in positions.iter().enumerate() {
            if mask & (1 << i) != 0 {
                input[pos] = probe[i];
            }
        }
        match target.run(&input) {
            Ok(result) => result.edges.difference(&base_edges).len() as f64,
            Err(err) => {
                log::warn!("attribution execution failed: {err}");
                0.0
            }
        }
    };

    let mut rows = attribution_report(characteristic, positions.len())?;
    // Report in original byte coordinates rather than player indices.
    for row in &mut rows {
        row.position = positions[row.position];
    }
    print!("{}", report_to_csv(&rows));
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> CliResult<()> {
    let csv_path = args.out.join("stats.csv");
    let text = std::fs::read_to_string(&csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))
        .map_err(usage)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| usage(anyhow!("stats.csv is empty")))?;
    let columns = header.split(',').count();
    let mut last: Option<(usize, &str)> = None;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if line.split(',').count() != columns {
            return Err(runtime(anyhow!(
                "stats.csv line {}: expected {columns} columns, got {line:?}",
                idx + 1
            )));
        }
        last = Some((idx, line));
    }
    let (_, final_row) =
        last.ok_or_else(|| usage(anyhow!("stats.csv has a header but no data rows")))?;

    println!("final: {final_row}");

    let corpus_dir = args.out.join("corpus");
    let (families, _seeds) = covshap_core::corpus::load(&corpus_dir)?;
    println!("families: {}", families.len());
    for family in families.values() {
        let mut ranked: Vec<(usize, f64)> = family
            .shapley
            .values()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, phi)| phi > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(10);
        let rendered: Vec<String> = ranked
            .iter()
            .map(|(p, phi)| format!("{p}:{phi}"))
            .collect();
        println!(
            "family {} len {} top_phi [{}]",
            family.id.0,
            family.original_length,
            rendered.join(" ")
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Attribute(args) => cmd_attribute(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.inner());
            ExitCode::from(err.code())
        }
    }
}
