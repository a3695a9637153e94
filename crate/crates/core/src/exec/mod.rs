//! Deterministic interpreter for GOTO programs.
//!
//! A run is a pure function of the program and a [`SeedInput`]: NONDET
//! reads consume the value region four bytes at a time, and active delay
//! points consume the schedule region. Detectors run online and the first
//! finding stops the run.

mod coverage;
mod machine;
pub mod race;
mod sched;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fuzz::SeedInput;
use crate::goto::InstrKind;
use crate::lang::SourceLoc;

pub use coverage::{bucket, edge_index, CoverageMap, MAP_SIZE};
pub use machine::{Halt, HeapBlock, Machine, ThreadState, MAX_ALLOC, MAX_THREADS};
pub use race::{race_check, AccessEvent, HbClocks, RacePair, RaceDetector, VectorClock};
pub use sched::{ByteScheduler, Scheduler, SegmentScheduler, PREEMPT_BELOW};

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugKind {
    DataRace,
    ThreadLeak,
    AssertViolation,
    ReachError,
    SignedOverflow,
    OutOfBounds,
    UseAfterFree,
    DoubleFree,
    MemoryLeak,
    Deadlock,
}

impl BugKind {
    pub const ALL: [BugKind; 10] = [
        BugKind::DataRace,
        BugKind::ThreadLeak,
        BugKind::AssertViolation,
        BugKind::ReachError,
        BugKind::SignedOverflow,
        BugKind::OutOfBounds,
        BugKind::UseAfterFree,
        BugKind::DoubleFree,
        BugKind::MemoryLeak,
        BugKind::Deadlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BugKind::DataRace => "DataRace",
            BugKind::ThreadLeak => "ThreadLeak",
            BugKind::AssertViolation => "AssertViolation",
            BugKind::ReachError => "ReachError",
            BugKind::SignedOverflow => "SignedOverflow",
            BugKind::OutOfBounds => "OutOfBounds",
            BugKind::UseAfterFree => "UseAfterFree",
            BugKind::DoubleFree => "DoubleFree",
            BugKind::MemoryLeak => "MemoryLeak",
            BugKind::Deadlock => "Deadlock",
        }
    }

    pub fn from_name(s: &str) -> Option<BugKind> {
        BugKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for BugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which detectors report. Deadlocks are always reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertySet {
    pub unreach_call: bool,
    pub valid_memsafety: bool,
    pub no_overflow: bool,
    pub data_races: bool,
}

impl Default for PropertySet {
    fn default() -> Self {
        PropertySet { unreach_call: true, valid_memsafety: true, no_overflow: true, data_races: true }
    }
}

impl PropertySet {
    pub fn none() -> Self {
        PropertySet { unreach_call: false, valid_memsafety: false, no_overflow: false, data_races: false }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::none()
    }

    pub fn covers(&self, kind: BugKind) -> bool {
        match kind {
            BugKind::AssertViolation | BugKind::ReachError => self.unreach_call,
            BugKind::OutOfBounds | BugKind::UseAfterFree | BugKind::DoubleFree | BugKind::MemoryLeak => {
                self.valid_memsafety
            }
            BugKind::SignedOverflow => self.no_overflow,
            BugKind::DataRace | BugKind::ThreadLeak => self.data_races,
            BugKind::Deadlock => true,
        }
    }

    /// Turns on the flag named `unreach_call`, `valid_memsafety`,
    /// `no_overflow` or `data_races`.
    pub fn enable(&mut self, name: &str) -> bool {
        let flag = match name {
            "unreach_call" => &mut self.unreach_call,
            "valid_memsafety" => &mut self.valid_memsafety,
            "no_overflow" => &mut self.no_overflow,
            "data_races" => &mut self.data_races,
            _ => return false,
        };
        *flag = true;
        true
    }
}

/// A raw finding: what went wrong and where. Races carry both locations,
/// smaller first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bug {
    pub kind: BugKind,
    pub loc: SourceLoc,
    pub second: Option<SourceLoc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub thread: usize,
    pub pc: usize,
    pub kind: &'static str,
    pub loc: SourceLoc,
    pub addr: Option<String>,
    pub vc: Option<String>,
}

impl TraceEvent {
    /// `t1@4 ASSIGN racy.mcl:7 addr=x vc=[2,1]`
    pub fn line(&self, file: &str) -> String {
        let mut s = format!("t{}@{} {} {}:{}", self.thread, self.pc, self.kind, file, self.loc.line);
        if let Some(a) = &self.addr {
            s.push_str(" addr=");
            s.push_str(a);
        }
        if let Some(vc) = &self.vc {
            s.push_str(" vc=");
            s.push_str(vc);
        }
        s
    }
}

pub fn format_trace(trace: &[TraceEvent], file: &str) -> String {
    let mut out = String::new();
    for ev in trace {
        out.push_str(&ev.line(file));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugReport {
    pub kind: BugKind,
    pub file: String,
    pub loc: SourceLoc,
    pub second_loc: Option<SourceLoc>,
    pub trace: Vec<TraceEvent>,
    pub input: SeedInput,
}

impl BugReport {
    pub fn bug(&self) -> Bug {
        Bug { kind: self.kind, loc: self.loc, second: self.second_loc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndedBy {
    Completion,
    Bug,
    StepBudget,
    UnwindTruncation,
    AssumeFailed,
    ThreadLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecVerdict {
    Ok,
    Bug(BugReport),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecStats {
    pub verdict: ExecVerdict,
    pub coverage: CoverageMap,
    pub steps: u64,
    pub counted_steps: u64,
    pub ended_by: EndedBy,
    pub globals: Vec<i32>,
    pub nondets_read: usize,
    /// Virtual delays drawn at preemptions, in order.
    pub delays: Vec<u64>,
}

impl ExecStats {
    pub fn bug(&self) -> Option<&BugReport> {
        match &self.verdict {
            ExecVerdict::Bug(b) => Some(b),
            ExecVerdict::Ok => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub props: PropertySet,
    pub step_budget: u64,
    pub delay_min_ns: u64,
    pub delay_max_ns: u64,
    pub record_trace: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            props: PropertySet::default(),
            step_budget: DEFAULT_STEP_BUDGET,
            delay_min_ns: 1,
            delay_max_ns: 100_000,
            record_trace: false,
        }
    }
}

/// Runs `input` with the schedule region driving delay points.
pub fn run(program: &crate::goto::GotoProgram, input: &SeedInput, cfg: &ExecConfig) -> ExecStats {
    let mut sched = ByteScheduler::new(input.schedule_region(), cfg.delay_min_ns, cfg.delay_max_ns);
    let mut stats = run_with(program, input, cfg, &mut sched);
    stats.delays = sched.delays;
    stats
}

/// Runs with an explicit scheduler; NONDET values still come from `input`.
pub fn run_with(
    program: &crate::goto::GotoProgram,
    input: &SeedInput,
    cfg: &ExecConfig,
    sched: &mut dyn Scheduler,
) -> ExecStats {
    let mut m = Machine::new(program, cfg.props).with_coverage();
    if cfg.record_trace {
        m = m.with_trace();
    }
    let values = input.value_region();
    let mut value_cursor = 0usize;
    let mut nondets_read = 0usize;

    let ended_by = loop {
        if let Some(h) = m.halt() {
            break match h {
                Halt::Completed => EndedBy::Completion,
                Halt::Bug(_) => EndedBy::Bug,
                Halt::UnwindTruncation => EndedBy::UnwindTruncation,
                Halt::AssumeFailed => EndedBy::AssumeFailed,
                Halt::ThreadLimit => EndedBy::ThreadLimit,
            };
        }
        if m.steps >= cfg.step_budget {
            break EndedBy::StepBudget;
        }
        let cur = m.cur;
        if !m.can_step(cur) {
            match m.round_robin(cur) {
                Some(next) => {
                    m.cur = sched.forced_switch(cur, next, &m.runnable());
                }
                None => {
                    m.check_deadlock();
                }
            }
            continue;
        }
        let ins = m.instruction(cur);
        if ins.kind == InstrKind::DelayPoint {
            m.step(cur, None);
            if m.active > 0 {
                let runnable = m.runnable();
                if let Some((to, delay)) = sched.delay_point(cur, &runnable) {
                    m.add_delay(cur, delay);
                    m.cur = to;
                }
            }
            continue;
        }
        if ins.kind.is_counted() {
            if let Some(to) = sched.before_instruction(cur, &m.runnable()) {
                m.cur = to;
                continue;
            }
        }
        let nondet = if matches!(ins.kind, InstrKind::Nondet(_)) {
            nondets_read += 1;
            let v = values
                .get(value_cursor..value_cursor + 4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .unwrap_or(0);
            value_cursor += 4;
            Some(v)
        } else {
            None
        };
        m.step(cur, nondet);
        if ins.kind.is_counted() {
            sched.counted(cur);
        }
    };

    let verdict = match m.halt() {
        Some(Halt::Bug(bug)) => ExecVerdict::Bug(BugReport {
            kind: bug.kind,
            file: program.file.clone(),
            loc: bug.loc,
            second_loc: bug.second,
            trace: m.take_trace(),
            input: input.clone(),
        }),
        _ => ExecVerdict::Ok,
    };
    ExecStats {
        verdict,
        coverage: m.take_coverage(),
        steps: m.steps,
        counted_steps: m.counted,
        ended_by,
        globals: m.globals.clone(),
        nondets_read,
        delays: Vec::new(),
    }
}
