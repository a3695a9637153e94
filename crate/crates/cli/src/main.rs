use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ebf_core::corpus::{self, SuiteConfig};
use ebf_core::exec::PropertySet;
use ebf_core::goto::UnwindBound;
use ebf_core::lang::SourceProgram;
use ebf_core::pipeline::{self, Mode, PipelineConfig};

const TOOL_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "ebf", version, about = "Hybrid bounded model checking and schedule-aware fuzzing for MCL programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    Bmc,
    Fuzz,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Hybrid => Mode::Hybrid,
            ModeArg::Bmc => Mode::Bmc,
            ModeArg::Fuzz => Mode::Fuzz,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify one program.
    Verify(VerifyArgs),
    /// Compare modes over a directory of tasks.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct VerifyArgs {
    file: PathBuf,
    #[arg(long, value_enum, default_value = "hybrid")]
    mode: ModeArg,
    /// Loop unwinding bound for the BMC phase.
    #[arg(long, default_value_t = UnwindBound::default().k)]
    unwind: u32,
    #[arg(long)]
    unreach_call: bool,
    #[arg(long)]
    data_races_check: bool,
    #[arg(long)]
    overflow_check: bool,
    #[arg(long)]
    memory_safety: bool,
    /// Total wall-clock budget in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long)]
    max_execs: Option<u64>,
    /// Directory of extra initial fuzzer seeds.
    #[arg(long)]
    seed_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Report path; crash inputs go to a `crashes` directory beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_instrument: bool,
    #[arg(long)]
    delay_max: Option<u64>,
    /// Print the lowered program and exit.
    #[arg(long)]
    dump_goto: bool,
    /// Zero timing and memory fields in the report.
    #[arg(long)]
    stable_report: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    corpus_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "bmc,fuzz,hybrid")]
    modes: Vec<ModeArg>,
    /// Wall-clock budget per task and mode.
    #[arg(long, default_value_t = 60)]
    budget_secs: u64,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_EXECS)]
    max_execs: u64,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Zero timing and memory columns.
    #[arg(long)]
    stable: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("ebf: {e:#}");
            ExitCode::from(TOOL_ERROR)
        }
    }
}

fn properties(a: &VerifyArgs) -> PropertySet {
    let mut p = PropertySet::none();
    p.unreach_call = a.unreach_call;
    p.data_races = a.data_races_check;
    p.no_overflow = a.overflow_check;
    p.valid_memsafety = a.memory_safety;
    if p.is_empty() {
        PropertySet::default()
    } else {
        p
    }
}

fn verify(a: VerifyArgs) -> Result<u8> {
    let source = SourceProgram::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    if a.dump_goto {
        print!("{}", pipeline::compile(&source)?.dump());
        return Ok(0);
    }
    if a.timeout == 0 {
        bail!("--timeout must be positive");
    }
    let mut cfg = PipelineConfig {
        mode: a.mode.into(),
        props: properties(&a),
        timeout: Some(Duration::from_secs(a.timeout)),
        max_execs: a.max_execs,
        rng_seed: a.rng_seed,
        seed_dir: a.seed_dir.clone(),
        artifact_dir: a.out.as_deref().map(|p| p.parent().unwrap_or(Path::new("")).join("crashes")),
        ..Default::default()
    };
    cfg.bmc.unwind = UnwindBound { k: a.unwind };
    cfg.instrument.enabled = !a.no_instrument;
    if let Some(max) = a.delay_max {
        cfg.instrument.delay_max_ns = max;
    }
    let mut report = pipeline::verify(&source, &cfg)?.report;
    if a.stable_report {
        report.stabilize();
    }
    match &a.out {
        Some(path) => pipeline::write_report(&report, path)?,
        None => print!("{}", report.to_json()),
    }
    eprint!("{}", report.summary());
    Ok(report.verdict.exit_code() as u8)
}

fn bench(a: BenchArgs) -> Result<u8> {
    let tasks = corpus::load_corpus(&a.corpus_dir)?;
    if tasks.is_empty() {
        bail!("no .mcl tasks in {}", a.corpus_dir.display());
    }
    let suite = SuiteConfig {
        modes: a.modes.iter().map(|&m| m.into()).collect(),
        budget: Duration::from_secs(a.budget_secs),
        max_execs: a.max_execs,
        rng_seed: a.rng_seed,
        jobs: a.jobs,
        stable: a.stable,
    };
    let result = corpus::run_suite(&tasks, &suite)?;
    std::fs::write(&a.out, result.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    let md = a.out.with_extension("md");
    std::fs::write(&md, result.to_markdown()).with_context(|| format!("writing {}", md.display()))?;
    print!("{}", result.to_markdown());
    Ok(0)
}
