//! Runs the phases end to end: BMC on the unwound program, seeds from its
//! counterexample (or random ones), then fuzzing of the instrumented,
//! non-unwound program. Findings from both phases are merged into one report.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmc::{self, BmcConfig, BmcResult};
use crate::exec::{self, BugKind, BugReport, ExecConfig, PropertySet};
use crate::fuzz::{self, FuzzBudget, FuzzConfig, FuzzOutcome, SeedInput};
use crate::goto::{self, GotoProgram, LoweringError};
use crate::instrument::{self, InstrumentError, InstrumentationConfig};
use crate::lang::{self, ParseError, SourceProgram};

/// Share of the total time budget BMC may use in hybrid mode.
pub const BMC_TIME_SHARE: f64 = 0.4;
pub const DEFAULT_FALLBACK_SEEDS: usize = 10;
/// New edges found within this final fraction of executions count as
/// coverage still growing. Bucket-only changes do not.
pub const GROWTH_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bmc,
    Fuzz,
    Hybrid,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Bmc, Mode::Fuzz, Mode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bmc => "bmc",
            Mode::Fuzz => "fuzz",
            Mode::Hybrid => "hybrid",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    fn runs_bmc(self) -> bool {
        self != Mode::Fuzz
    }

    fn runs_fuzz(self) -> bool {
        self != Mode::Bmc
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub props: PropertySet,
    pub bmc: BmcConfig,
    pub instrument: InstrumentationConfig,
    /// Wall-clock budget for the whole run.
    pub timeout: Option<Duration>,
    pub max_execs: Option<u64>,
    pub fallback_seed_count: usize,
    pub rng_seed: u64,
    /// Extra initial seeds for the fuzzer.
    pub seed_dir: Option<PathBuf>,
    /// Where crash inputs and traces go; nothing is written when unset.
    pub artifact_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Hybrid,
            props: PropertySet::default(),
            bmc: BmcConfig::default(),
            instrument: InstrumentationConfig::default(),
            timeout: Some(Duration::from_secs(60)),
            max_execs: None,
            fallback_seed_count: DEFAULT_FALLBACK_SEEDS,
            rng_seed: 0,
            seed_dir: None,
            artifact_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{file}: {source}")]
    Parse { file: String, source: ParseError },
    #[error("{file}: {source}")]
    Lower { file: String, source: LoweringError },
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error("no execution budget: give a timeout or a maximum number of executions")]
    NoBudget,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    VerificationFailed,
    VerificationSuccessful,
    Inconclusive,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::VerificationSuccessful => 0,
            Verdict::VerificationFailed => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Bmc,
    Fuzz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBug {
    pub kind: BugKind,
    pub file: String,
    pub line: u32,
    pub second_file: Option<String>,
    pub second_line: Option<u32>,
    pub input_file: Option<String>,
    pub trace_file: Option<String>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseStats {
    pub bmc_seconds: f64,
    pub bmc_states: u64,
    pub bound_hit: bool,
    pub fuzz_seconds: f64,
    pub fuzz_execs: u64,
    pub coverage_edges: usize,
    pub unique_crashes: usize,
    pub peak_mem_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub bugs: Vec<ReportBug>,
    pub stats: PhaseStats,
}

impl VerificationReport {
    /// Zeroes the fields that depend on wall-clock time or the machine.
    pub fn stabilize(&mut self) {
        self.stats.bmc_seconds = 0.0;
        self.stats.fuzz_seconds = 0.0;
        self.stats.peak_mem_bytes = 0;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("verdict: {:?}\n", self.verdict);
        for b in &self.bugs {
            s.push_str(&format!("  {} at {}:{}", b.kind, b.file, b.line));
            if let (Some(f), Some(l)) = (&b.second_file, b.second_line) {
                s.push_str(&format!(" and {f}:{l}"));
            }
            s.push_str(&format!(" [{}]\n", match b.phase {
                Phase::Bmc => "bmc",
                Phase::Fuzz => "fuzz",
            }));
        }
        let st = &self.stats;
        s.push_str(&format!(
            "bmc: {:.3}s, {} states, bound hit: {}\nfuzz: {:.3}s, {} execs, {} edges, {} unique crashes\npeak memory: {} bytes\n",
            st.bmc_seconds, st.bmc_states, st.bound_hit, st.fuzz_seconds, st.fuzz_execs, st.coverage_edges,
            st.unique_crashes, st.peak_mem_bytes
        ));
        s
    }
}

/// A reported bug with the concrete input that reproduces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub phase: Phase,
    pub report: BugReport,
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub report: VerificationReport,
    /// One per entry of `report.bugs`, in the same order.
    pub findings: Vec<Finding>,
    pub bmc: Option<BmcResult>,
    /// The program the fuzzer ran and stored inputs replay against.
    pub fuzz_program: GotoProgram,
}

pub fn compile(source: &SourceProgram) -> Result<GotoProgram, PipelineError> {
    let file = source.file_name();
    let ast = lang::parse(source).map_err(|e| PipelineError::Parse { file: file.clone(), source: e })?;
    goto::lower(&ast, &file).map_err(|e| PipelineError::Lower { file, source: e })
}

pub fn verify(source: &SourceProgram, cfg: &PipelineConfig) -> Result<Verification, PipelineError> {
    if cfg.timeout.is_none() && cfg.max_execs.is_none() {
        return Err(PipelineError::NoBudget);
    }
    let start = Instant::now();
    let plain = compile(source)?;
    let fuzz_program = instrument::inject(&plain, &cfg.instrument)?;
    let exec_cfg = ExecConfig {
        props: cfg.props,
        delay_min_ns: cfg.instrument.delay_min_ns,
        delay_max_ns: cfg.instrument.delay_max_ns,
        ..Default::default()
    };

    let mut findings: Vec<Finding> = Vec::new();
    let mut stats = PhaseStats::default();
    let mut corpus: Vec<SeedInput> = Vec::new();
    let mut bmc_result = None;
    let mut inconclusive = false;

    if cfg.mode.runs_bmc() {
        let mut bcfg = cfg.bmc.clone();
        let share = match cfg.mode {
            Mode::Hybrid => BMC_TIME_SHARE,
            _ => 1.0,
        };
        if let Some(t) = cfg.timeout {
            let cap = t.mul_f64(share);
            bcfg.time_budget = Some(bcfg.time_budget.map_or(cap, |b| b.min(cap)));
        }
        let unwound = goto::unwind(&plain, bcfg.unwind);
        let r = bmc::check(&unwound, &cfg.props, &bcfg);
        stats.bmc_seconds = r.elapsed.as_secs_f64();
        stats.bmc_states = r.states;
        stats.bound_hit = r.bound_hit;
        match &r.verdict {
            bmc::Verdict::Violation(cx) => {
                let seed = bmc::extract_seeds(cx, &fuzz_program, &cfg.props);
                findings.push(Finding { phase: Phase::Bmc, report: bmc_finding(&fuzz_program, cx, &seed, &exec_cfg) });
                corpus.push(seed);
            }
            bmc::Verdict::NoViolationWithinBound => inconclusive |= r.bound_hit,
            bmc::Verdict::ResourceExhausted(_) => inconclusive = true,
        }
        bmc_result = Some(r);
    }

    if cfg.mode.runs_fuzz() {
        if corpus.is_empty() {
            corpus = bmc::fallback_seeds(cfg.fallback_seed_count, cfg.rng_seed);
        }
        if let Some(dir) = &cfg.seed_dir {
            corpus.extend(fuzz::read_corpus(dir).map_err(io_err(dir))?);
        }
        let fcfg = FuzzConfig {
            budget: FuzzBudget {
                max_execs: cfg.max_execs,
                time: cfg.timeout.map(|t| t.saturating_sub(start.elapsed())),
            },
            rng_seed: cfg.rng_seed,
            exec: exec_cfg,
        };
        let out = fuzz::fuzz_loop(&fuzz_program, &corpus, &fcfg);
        stats.fuzz_seconds = out.stats.elapsed.as_secs_f64();
        stats.fuzz_execs = out.stats.execs;
        stats.coverage_edges = out.stats.coverage_edges;
        stats.unique_crashes = out.crashes.len();
        inconclusive |= still_growing(&out);
        findings.extend(out.crashes.crashes().into_iter().map(|c| Finding { phase: Phase::Fuzz, report: c.report.clone() }));
    }

    let findings = dedup(findings);
    let mut bugs = Vec::with_capacity(findings.len());
    for f in &findings {
        bugs.push(report_bug(f, cfg.artifact_dir.as_deref())?);
    }
    stats.peak_mem_bytes = peak_mem_bytes();
    let verdict = if !bugs.is_empty() {
        Verdict::VerificationFailed
    } else if inconclusive {
        Verdict::Inconclusive
    } else {
        Verdict::VerificationSuccessful
    };
    Ok(Verification {
        report: VerificationReport { verdict, bugs, stats },
        findings,
        bmc: bmc_result,
        fuzz_program,
    })
}

/// Prefers the extracted seed replayed on the fuzzed program, so the stored
/// input works with `exec::run`; falls back to the BMC's own replay.
fn bmc_finding(program: &GotoProgram, cx: &bmc::Counterexample, seed: &SeedInput, cfg: &ExecConfig) -> BugReport {
    let traced = ExecConfig { record_trace: true, ..*cfg };
    let run = exec::run(program, seed, &traced);
    match run.bug() {
        Some(b) if b.kind == cx.violation.kind && b.loc == cx.violation.loc => b.clone(),
        _ => cx.violation.clone(),
    }
}

fn still_growing(out: &FuzzOutcome) -> bool {
    let execs = out.stats.execs;
    out.stats.budget_exhausted
        && execs > 0
        && out.stats.last_new_edge as f64 > execs as f64 * (1.0 - GROWTH_WINDOW)
}

fn dedup_key(r: &BugReport) -> (BugKind, String, u32, Option<u32>) {
    (r.kind, r.file.clone(), r.loc.line, r.second_loc.map(|l| l.line))
}

/// Keeps the first finding per (kind, file, line, second line), sorted.
fn dedup(findings: Vec<Finding>) -> Vec<Finding> {
    let mut out: Vec<Finding> = Vec::new();
    for f in findings {
        if !out.iter().any(|g| dedup_key(&g.report) == dedup_key(&f.report)) {
            out.push(f);
        }
    }
    out.sort_by_key(|f| dedup_key(&f.report));
    out
}

fn report_bug(f: &Finding, artifact_dir: Option<&Path>) -> Result<ReportBug, PipelineError> {
    let r = &f.report;
    let (input_file, trace_file) = match artifact_dir {
        Some(dir) => {
            let files = fuzz::write_crash(dir, r).map_err(io_err(dir))?;
            let name = |p: &Path| dir_relative(dir, p);
            (Some(name(&files.input)), Some(name(&files.trace)))
        }
        None => (None, None),
    };
    Ok(ReportBug {
        kind: r.kind,
        file: r.file.clone(),
        line: r.loc.line,
        second_file: r.second_loc.map(|_| r.file.clone()),
        second_line: r.second_loc.map(|l| l.line),
        input_file,
        trace_file,
        phase: f.phase,
    })
}

/// `crashes/crash-X.bin` for an artifact directory named `crashes`.
fn dir_relative(dir: &Path, file: &Path) -> String {
    let leaf = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = file.file_name().unwrap().to_string_lossy();
    if leaf.is_empty() {
        name.into_owned()
    } else {
        format!("{leaf}/{name}")
    }
}

/// High-water resident set size from `/proc`, or 0 where unavailable.
pub fn peak_mem_bytes() -> u64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else { return 0 };
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map_or(0, |kb| kb * 1024)
}

/// Writes the JSON report at `path` and a text summary next to it.
pub fn write_report(r: &VerificationReport, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, r.to_json()).map_err(io_err(path))?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, r.summary()).map_err(io_err(&txt))
}
