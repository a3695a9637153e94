//! Coverage-guided fuzzing of the instrumented program.
//!
//! Inputs carry both NONDET values and schedule bytes, so mutations explore
//! data and interleavings at once. Everything random comes from one ChaCha
//! stream seeded by `rng_seed`; with an execution-count budget a session is
//! fully deterministic.

mod input;
mod mutate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::exec::{self, BugKind, BugReport, CoverageMap, EndedBy, ExecConfig};
use crate::goto::GotoProgram;
use crate::lang::SourceLoc;

pub use input::{SeedInput, HEADER_LEN, MIN_LEN};
pub use mutate::{
    deterministic_stage, havoc_stage, DeterministicStage, ARITH_MAX, HAVOC_MAX_OPS, INTERESTING_BYTES,
    INTERESTING_WORDS, MAX_LEN,
};

pub const BASE_ENERGY: u32 = 64;
pub const MAX_ENERGY: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedMeta {
    /// Admitted because it reached a new coverage bucket.
    pub found_new: bool,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct SeedEntry {
    pub input: SeedInput,
    pub meta: SeedMeta,
    /// Remaining deterministic mutants; `None` once the stage is done.
    det: Option<DeterministicStage>,
    selected: u32,
}

/// Number of mutants to derive from a seed on one selection.
pub fn mutation_budget(meta: &SeedMeta, median_steps: Option<u64>) -> u32 {
    let mut n = BASE_ENERGY;
    if meta.found_new {
        n *= 4;
    }
    if median_steps.is_some_and(|m| meta.steps < m) {
        n *= 2;
    }
    n.clamp(1, MAX_ENERGY)
}

#[derive(Debug, Clone, Default)]
pub struct SeedQueue {
    entries: Vec<SeedEntry>,
    cursor: usize,
}

impl SeedQueue {
    pub fn push(&mut self, input: SeedInput, meta: SeedMeta) {
        let det = Some(deterministic_stage(&input));
        self.entries.push(SeedEntry { input, meta, det, selected: 0 });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SeedEntry] {
        &self.entries
    }

    pub fn inputs(&self) -> impl Iterator<Item = &SeedInput> {
        self.entries.iter().map(|e| &e.input)
    }

    pub fn median_steps(&self) -> Option<u64> {
        let mut steps: Vec<u64> = self.entries.iter().map(|e| e.meta.steps).collect();
        steps.sort_unstable();
        steps.get(steps.len() / 2).copied()
    }

    /// Seeds that found new coverage and were never fuzzed go first, oldest
    /// first; otherwise round-robin.
    pub fn select(&mut self) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        let i = match self.entries.iter().position(|e| e.meta.found_new && e.selected == 0) {
            Some(i) => i,
            None => {
                let i = self.cursor % self.entries.len();
                self.cursor = i + 1;
                i
            }
        };
        self.entries[i].selected += 1;
        Some(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrashKey {
    pub kind: BugKind,
    pub loc: SourceLoc,
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crash {
    pub report: BugReport,
    pub digest: [u8; 32],
    /// Position in discovery order.
    pub order: usize,
}

/// Unique findings keyed by kind, primary location and path digest.
#[derive(Debug, Clone, Default)]
pub struct CrashSet {
    map: BTreeMap<CrashKey, Crash>,
}

impl CrashSet {
    /// Returns `true` if the finding is new.
    pub fn insert(&mut self, report: BugReport, digest: [u8; 32]) -> bool {
        let key = CrashKey { kind: report.kind, loc: report.loc, digest };
        if self.map.contains_key(&key) {
            return false;
        }
        let order = self.map.len();
        self.map.insert(key, Crash { report, digest, order });
        true
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Crashes in discovery order.
    pub fn crashes(&self) -> Vec<&Crash> {
        let mut v: Vec<&Crash> = self.map.values().collect();
        v.sort_by_key(|c| c.order);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuzzBudget {
    pub max_execs: Option<u64>,
    pub time: Option<Duration>,
}

impl FuzzBudget {
    pub fn execs(n: u64) -> Self {
        FuzzBudget { max_execs: Some(n), time: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzConfig {
    pub budget: FuzzBudget,
    pub rng_seed: u64,
    pub exec: ExecConfig,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig { budget: FuzzBudget::execs(10_000), rng_seed: 0, exec: ExecConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FuzzStats {
    pub execs: u64,
    /// Runs that hit the step budget.
    pub timeouts: u64,
    pub coverage_edges: usize,
    /// Execution count at which coverage last grew, in any bucket.
    pub last_new_coverage: u64,
    /// Execution count at which a never-seen edge last appeared.
    pub last_new_edge: u64,
    pub budget_exhausted: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct FuzzOutcome {
    pub queue: SeedQueue,
    pub crashes: CrashSet,
    pub coverage: CoverageMap,
    pub stats: FuzzStats,
}

struct Session<'a> {
    program: &'a GotoProgram,
    cfg: FuzzConfig,
    start: Instant,
    coverage: CoverageMap,
    crashes: CrashSet,
    stats: FuzzStats,
}

impl Session<'_> {
    fn out_of_budget(&self) -> bool {
        self.cfg.budget.max_execs.is_some_and(|n| self.stats.execs >= n)
            || self.cfg.budget.time.is_some_and(|t| self.start.elapsed() >= t)
    }

    /// Runs one input and returns its step count and whether it belongs in
    /// the queue.
    fn execute(&mut self, input: &SeedInput) -> (u64, bool) {
        let run = exec::run(self.program, input, &self.cfg.exec);
        self.stats.execs += 1;
        if run.ended_by == EndedBy::StepBudget {
            self.stats.timeouts += 1;
        }
        let novel = self.coverage.has_new_bucket(&run.coverage);
        let edges = self.coverage.edge_count();
        if self.coverage.merge(&run.coverage) {
            self.stats.last_new_coverage = self.stats.execs;
        }
        if self.coverage.edge_count() > edges {
            self.stats.last_new_edge = self.stats.execs;
        }
        if let Some(bug) = run.bug() {
            let digest = run.coverage.digest();
            let key = CrashKey { kind: bug.kind, loc: bug.loc, digest };
            if !self.crashes.map.contains_key(&key) {
                let traced = ExecConfig { record_trace: true, ..self.cfg.exec };
                let replay = exec::run(self.program, input, &traced);
                let report = replay.bug().cloned().unwrap_or_else(|| bug.clone());
                self.crashes.insert(report, digest);
            }
            return (run.steps, false);
        }
        (run.steps, novel)
    }
}

/// Fuzzes `program` starting from `corpus` until the budget runs out.
///
/// Corpus seeds are executed once and always queued, so the queue is never
/// empty. Each selected seed gets [`mutation_budget`] mutants: deterministic
/// ones while its deterministic stage lasts, havoc after that.
pub fn fuzz_loop(program: &GotoProgram, corpus: &[SeedInput], cfg: &FuzzConfig) -> FuzzOutcome {
    let mut s = Session {
        program,
        cfg: *cfg,
        start: Instant::now(),
        coverage: CoverageMap::new(),
        crashes: CrashSet::default(),
        stats: FuzzStats::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut queue = SeedQueue::default();

    for seed in corpus {
        let mut seed = seed.clone();
        seed.repair();
        let (steps, _) = s.execute(&seed);
        queue.push(seed, SeedMeta { found_new: false, steps });
    }

    'outer: while !s.out_of_budget() {
        let Some(i) = queue.select() else { break };
        let n = mutation_budget(&queue.entries[i].meta, queue.median_steps());
        for _ in 0..n {
            if s.out_of_budget() {
                break 'outer;
            }
            let entry = &mut queue.entries[i];
            let mutant = match entry.det.as_mut().and_then(Iterator::next) {
                Some(m) => m,
                None => {
                    entry.det = None;
                    havoc_stage(&entry.input, &mut rng)
                }
            };
            if let (steps, true) = s.execute(&mutant) {
                queue.push(mutant, SeedMeta { found_new: true, steps });
            }
        }
    }

    s.stats.budget_exhausted = s.out_of_budget();
    s.stats.coverage_edges = s.coverage.edge_count();
    s.stats.elapsed = s.start.elapsed();
    FuzzOutcome { queue, crashes: s.crashes, coverage: s.coverage, stats: s.stats }
}

/// Reads every regular file in `dir` as a seed, in file-name order.
pub fn read_corpus(dir: &Path) -> std::io::Result<Vec<SeedInput>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let mut s = SeedInput::from_bytes(std::fs::read(p)?);
            s.repair();
            Ok(s)
        })
        .collect()
}

pub fn input_hash(input: &SeedInput) -> String {
    hex::encode(&Sha256::digest(&input.bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashFiles {
    pub input: PathBuf,
    pub meta: PathBuf,
    pub trace: PathBuf,
}

#[derive(Serialize)]
struct CrashMeta<'a> {
    kind: &'a str,
    file: &'a str,
    line: u32,
    col: u32,
    second_line: Option<u32>,
    trace: String,
}

/// Writes `crash-<kind>-<hash>.bin` with `.json` and `.trace` sidecars.
pub fn write_crash(dir: &Path, report: &BugReport) -> std::io::Result<CrashFiles> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("crash-{}-{}", report.kind, input_hash(&report.input));
    let files = CrashFiles {
        input: dir.join(format!("{stem}.bin")),
        meta: dir.join(format!("{stem}.json")),
        trace: dir.join(format!("{stem}.trace")),
    };
    std::fs::write(&files.input, &report.input.bytes)?;
    std::fs::write(&files.trace, exec::format_trace(&report.trace, &report.file))?;
    let meta = CrashMeta {
        kind: report.kind.name(),
        file: &report.file,
        line: report.loc.line,
        col: report.loc.column,
        second_line: report.second_loc.map(|l| l.line),
        trace: files.trace.file_name().unwrap().to_string_lossy().into_owned(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("crash metadata serializes");
    std::fs::write(&files.meta, json + "\n")?;
    Ok(files)
}
