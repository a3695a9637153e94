//! Benchmark tasks and the mode-comparison harness.
//!
//! A task is `name.mcl` plus a `name.yml` sidecar:
//!
//! ```yaml
//! expected_bug: true
//! kinds: [DataRace]
//! properties: [data_races]
//! extra_domain: [65324]   # optional, widens the BMC value domain
//! max_execs: 50000        # optional
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, BugKind, ExecConfig, PropertySet};
use crate::lang::SourceProgram;
use crate::pipeline::{self, Mode, PipelineConfig, PipelineError, Verdict};

pub const DEFAULT_MAX_EXECS: u64 = 50_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad sidecar: {source}")]
    Sidecar { path: PathBuf, source: serde_yaml::Error },
    #[error("{path}: unknown property `{name}`")]
    Property { path: PathBuf, name: String },
    #[error("task file missing: {0}")]
    Missing(PathBuf),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Deserialize)]
struct Sidecar {
    expected_bug: bool,
    #[serde(default)]
    kinds: Vec<BugKind>,
    #[serde(default)]
    properties: Vec<String>,
    #[serde(default)]
    extra_domain: Vec<i32>,
    max_execs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub has_bug: bool,
    pub kinds: BTreeSet<BugKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkTask {
    pub name: String,
    pub file: PathBuf,
    pub expected: Expected,
    pub properties: PropertySet,
    pub extra_domain: Vec<i32>,
    pub max_execs: Option<u64>,
}

impl BenchmarkTask {
    /// Loads `path` and the `.yml` sidecar next to it.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        if !path.is_file() {
            return Err(CorpusError::Missing(path.to_path_buf()));
        }
        let side = path.with_extension("yml");
        let text = std::fs::read_to_string(&side).map_err(|source| CorpusError::Io { path: side.clone(), source })?;
        let sc: Sidecar =
            serde_yaml::from_str(&text).map_err(|source| CorpusError::Sidecar { path: side.clone(), source })?;
        let mut properties = PropertySet::none();
        for name in &sc.properties {
            if !properties.enable(name) {
                return Err(CorpusError::Property { path: side, name: name.clone() });
            }
        }
        if properties.is_empty() {
            properties = PropertySet::default();
        }
        Ok(BenchmarkTask {
            name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            file: path.to_path_buf(),
            expected: Expected { has_bug: sc.expected_bug, kinds: sc.kinds.into_iter().collect() },
            properties,
            extra_domain: sc.extra_domain,
            max_execs: sc.max_execs,
        })
    }

    pub fn source(&self) -> Result<SourceProgram, CorpusError> {
        SourceProgram::read(&self.file).map_err(|source| CorpusError::Io { path: self.file.clone(), source })
    }

    /// Pipeline settings for this task in `mode`.
    pub fn pipeline_config(&self, mode: Mode, suite: &SuiteConfig) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            mode,
            props: self.properties,
            timeout: Some(suite.budget),
            max_execs: Some(self.max_execs.unwrap_or(suite.max_execs)),
            rng_seed: suite.rng_seed,
            ..Default::default()
        };
        cfg.bmc.domain.extend(&self.extra_domain);
        cfg
    }
}

/// Every `*.mcl` in `dir` with its sidecar, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<BenchmarkTask>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mcl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| BenchmarkTask::load(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub modes: Vec<Mode>,
    /// Wall-clock budget per (task, mode) run.
    pub budget: Duration,
    pub max_execs: u64,
    pub rng_seed: u64,
    pub jobs: usize,
    /// Zero timing and memory columns so reruns compare byte for byte.
    pub stable: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            modes: Mode::ALL.to_vec(),
            budget: Duration::from_secs(60),
            max_execs: DEFAULT_MAX_EXECS,
            rng_seed: 0,
            jobs: 1,
            stable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub verdict: Verdict,
    /// A bug was reported and its stored input reproduced it.
    pub found: bool,
    pub kinds: BTreeSet<BugKind>,
    pub seconds: f64,
    pub execs: u64,
    pub bmc_states: u64,
    pub peak_mem: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub task: String,
    pub expected: Expected,
    pub cells: BTreeMap<Mode, Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTotal {
    pub found: usize,
    pub seconds: f64,
    pub peak_mem: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub rows: Vec<ComparisonRow>,
    pub totals: BTreeMap<Mode, ModeTotal>,
}

/// Runs one task in one mode and checks every finding replays.
pub fn run_cell(task: &BenchmarkTask, mode: Mode, suite: &SuiteConfig) -> Result<Cell, CorpusError> {
    let start = Instant::now();
    let v = pipeline::verify(&task.source()?, &task.pipeline_config(mode, suite))?;
    let seconds = start.elapsed().as_secs_f64();
    let cfg = ExecConfig { props: task.properties, ..Default::default() };
    let replays = v.findings.iter().all(|f| {
        exec::run(&v.fuzz_program, &f.report.input, &cfg)
            .bug()
            .is_some_and(|b| b.kind == f.report.kind && b.loc == f.report.loc)
    });
    let stats = &v.report.stats;
    let mut cell = Cell {
        verdict: v.report.verdict,
        found: !v.findings.is_empty() && replays,
        kinds: v.findings.iter().map(|f| f.report.kind).collect(),
        seconds,
        execs: stats.fuzz_execs,
        bmc_states: stats.bmc_states,
        peak_mem: stats.peak_mem_bytes,
    };
    if suite.stable {
        cell.seconds = 0.0;
        cell.peak_mem = 0;
    }
    Ok(cell)
}

/// Runs every (task, mode) pair. With `jobs > 1` tasks run in parallel;
/// each cell is still a single deterministic run.
pub fn run_suite(tasks: &[BenchmarkTask], suite: &SuiteConfig) -> Result<SuiteResult, CorpusError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ComparisonRow, CorpusError>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(task) = tasks.get(i) else { break };
        let row = (|| {
            let mut cells = BTreeMap::new();
            for &mode in &suite.modes {
                cells.insert(mode, run_cell(task, mode, suite)?);
            }
            Ok(ComparisonRow { task: task.name.clone(), expected: task.expected.clone(), cells })
        })();
        *slots[i].lock().unwrap() = Some(row);
    };
    std::thread::scope(|s| {
        for _ in 0..suite.jobs.max(1) {
            s.spawn(work);
        }
    });
    let rows = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every task ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let totals = suite
        .modes
        .iter()
        .map(|&mode| {
            let cells = rows.iter().filter_map(|r| r.cells.get(&mode));
            let mut t = ModeTotal { found: 0, seconds: 0.0, peak_mem: 0 };
            for c in cells {
                t.found += c.found as usize;
                t.seconds += c.seconds;
                t.peak_mem = t.peak_mem.max(c.peak_mem);
            }
            (mode, t)
        })
        .collect();
    Ok(SuiteResult { rows, totals })
}

fn kinds_field(kinds: &BTreeSet<BugKind>) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(";")
}

impl SuiteResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "task", "mode", "expected_bug", "found", "verdict", "kinds", "seconds", "execs", "bmc_states", "peak_mem_bytes",
        ])
        .expect("in-memory csv");
        for row in &self.rows {
            for (mode, c) in &row.cells {
                w.write_record([
                    row.task.clone(),
                    mode.to_string(),
                    row.expected.has_bug.to_string(),
                    c.found.to_string(),
                    format!("{:?}", c.verdict),
                    kinds_field(&c.kinds),
                    format!("{:.3}", c.seconds),
                    c.execs.to_string(),
                    c.bmc_states.to_string(),
                    c.peak_mem.to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let modes: Vec<Mode> = self.totals.keys().copied().collect();
        let mut s = String::from("| task | expected |");
        for m in &modes {
            s.push_str(&format!(" {m} |"));
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---|".repeat(modes.len()));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("| {} | {} |", row.task, if row.expected.has_bug { "bug" } else { "safe" }));
            for m in &modes {
                let mark = match row.cells.get(m) {
                    Some(c) if c.found => format!("found ({})", kinds_field(&c.kinds)),
                    Some(c) => format!("{:?}", c.verdict),
                    None => "-".into(),
                };
                s.push_str(&format!(" {mark} |"));
            }
            s.push('\n');
        }
        s.push_str("\n| mode | tasks with bug found | total seconds | peak memory (bytes) |\n|---|---|---|---|\n");
        for (m, t) in &self.totals {
            s.push_str(&format!("| {m} | {} | {:.3} | {} |\n", t.found, t.seconds, t.peak_mem));
        }
        s
    }
}
