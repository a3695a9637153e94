//! Bounded checking of unwound programs by explicit-state search.
//!
//! The search is depth-first over thread choices and NONDET values drawn from
//! a finite domain. Preemptions happen only in front of visible instructions
//! and at most `context_bound` times per path; a thread that blocks or
//! finishes may hand over to any runnable thread, which costs nothing. States already seen
//! with no more preemptions spent are pruned.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, BugReport, ExecConfig, Halt, Machine, SegmentScheduler};
use crate::fuzz::SeedInput;
use crate::goto::{GotoProgram, InstrKind, UnwindBound};

pub use crate::exec::PropertySet;

pub const DEFAULT_DOMAIN: [i32; 6] = [-1, 0, 1, 2, 255, 300];

/// Values per fallback seed and the range they are drawn from.
pub const FALLBACK_VALUES: usize = 8;
pub const FALLBACK_RANGE: std::ops::RangeInclusive<i32> = 0..=300;
pub const FALLBACK_SCHEDULE_LEN: usize = 64;
/// Never-preempt bytes appended after an extracted schedule.
pub const SCHEDULE_PADDING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmcConfig {
    pub unwind: UnwindBound,
    pub domain: Vec<i32>,
    pub context_bound: u32,
    pub max_states: u64,
    pub time_budget: Option<Duration>,
}

impl Default for BmcConfig {
    fn default() -> Self {
        BmcConfig {
            unwind: UnwindBound::default(),
            domain: DEFAULT_DOMAIN.to_vec(),
            context_bound: 2,
            max_states: 2_000_000,
            time_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub assumption_values: Vec<i32>,
    /// `(thread, counted steps)` segments in execution order.
    pub schedule: Vec<(usize, u64)>,
    pub violation: BugReport,
}

#[derive(Serialize, Deserialize)]
struct CxBug {
    kind: String,
    file: String,
    line: u32,
}

#[derive(Serialize, Deserialize)]
struct CxJson {
    values: Vec<i32>,
    schedule: Vec<(usize, u64)>,
    bug: CxBug,
}

impl Counterexample {
    pub fn to_json(&self) -> String {
        let j = CxJson {
            values: self.assumption_values.clone(),
            schedule: self.schedule.clone(),
            bug: CxBug {
                kind: self.violation.kind.name().to_string(),
                file: self.violation.file.clone(),
                line: self.violation.loc.line,
            },
        };
        serde_json::to_string(&j).expect("counterexample serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Violation(Box<Counterexample>),
    NoViolationWithinBound,
    ResourceExhausted(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmcResult {
    pub verdict: Verdict,
    pub states: u64,
    /// Some path was cut short by an unwinding assumption.
    pub bound_hit: bool,
    pub elapsed: Duration,
}

struct Node<'p> {
    m: Machine<'p>,
    /// The current thread has executed a counted instruction since it was scheduled.
    ran: bool,
    preempts: u32,
    values: Vec<i32>,
    segments: Vec<(usize, u64)>,
}

/// Explores `program`, which should already be unwound with `cfg.unwind`.
pub fn check(program: &GotoProgram, props: &PropertySet, cfg: &BmcConfig) -> BmcResult {
    let start = Instant::now();
    let mut visited: HashMap<(u64, usize, bool), u32> = HashMap::new();
    let mut states = 0u64;
    let mut bound_hit = false;
    let finish = |verdict, states, bound_hit| BmcResult { verdict, states, bound_hit, elapsed: start.elapsed() };

    let root = Node {
        m: Machine::new(program, *props),
        ran: false,
        preempts: 0,
        values: Vec::new(),
        segments: vec![(0, 0)],
    };
    let mut stack = vec![root];

    while let Some(mut node) = stack.pop() {
        loop {
            if let Some(h) = node.m.halt() {
                match h {
                    Halt::Bug(_) => {
                        let cx = build_counterexample(program, props, node.values, node.segments);
                        return finish(Verdict::Violation(Box::new(cx)), states, bound_hit);
                    }
                    Halt::UnwindTruncation => bound_hit = true,
                    Halt::Completed | Halt::AssumeFailed | Halt::ThreadLimit => {}
                }
                break;
            }
            if node.m.steps >= exec::DEFAULT_STEP_BUDGET {
                break;
            }
            states += 1;
            if states > cfg.max_states {
                return finish(Verdict::ResourceExhausted("state limit reached".into()), states, bound_hit);
            }
            if states.is_multiple_of(1024) {
                if let Some(budget) = cfg.time_budget {
                    if start.elapsed() >= budget {
                        return finish(Verdict::ResourceExhausted("time budget exhausted".into()), states, bound_hit);
                    }
                }
            }

            let cur = node.m.cur;
            if !node.m.can_step(cur) {
                match node.m.round_robin(cur) {
                    Some(next) => {
                        // Any runnable thread may take over from a blocked
                        // one; that choice costs no preemption.
                        for &u in node.m.runnable().iter().rev().filter(|&&u| u != next && u != cur) {
                            let mut alt = Node {
                                m: node.m.clone(),
                                ran: false,
                                preempts: node.preempts,
                                values: node.values.clone(),
                                segments: node.segments.clone(),
                            };
                            alt.m.cur = u;
                            alt.segments.push((u, 0));
                            stack.push(alt);
                        }
                        node.m.cur = next;
                        node.ran = false;
                        node.segments.push((next, 0));
                    }
                    None => {
                        node.m.check_deadlock();
                    }
                }
                continue;
            }

            let key = (node.m.state_hash(), cur, node.ran);
            match visited.get(&key) {
                Some(&p) if p <= node.preempts => break,
                _ => {
                    visited.insert(key, node.preempts);
                }
            }

            let ins = node.m.instruction(cur);
            // Alternatives go on the stack first so that continuing the
            // current thread with the first domain value is explored first.
            if node.ran && node.m.active > 0 && ins.kind.is_visible() && node.preempts < cfg.context_bound {
                for &u in node.m.runnable().iter().rev().filter(|&&u| u != cur) {
                    let mut alt = Node {
                        m: node.m.clone(),
                        ran: false,
                        preempts: node.preempts + 1,
                        values: node.values.clone(),
                        segments: node.segments.clone(),
                    };
                    alt.m.cur = u;
                    alt.segments.push((u, 0));
                    stack.push(alt);
                }
            }

            let nondet = if matches!(ins.kind, InstrKind::Nondet(_)) {
                for &v in cfg.domain.iter().skip(1).rev() {
                    let mut alt = Node {
                        m: node.m.clone(),
                        ran: node.ran,
                        preempts: node.preempts,
                        values: node.values.clone(),
                        segments: node.segments.clone(),
                    };
                    apply_step(&mut alt, cur, Some(v));
                    stack.push(alt);
                }
                Some(cfg.domain[0])
            } else {
                None
            };
            apply_step(&mut node, cur, nondet);
        }
    }
    finish(Verdict::NoViolationWithinBound, states, bound_hit)
}

fn apply_step(node: &mut Node<'_>, tid: usize, nondet: Option<i32>) {
    let counted = node.m.instruction(tid).kind.is_counted();
    if let Some(v) = nondet {
        node.values.push(v);
    }
    node.m.step(tid, nondet);
    if counted {
        node.ran = true;
        node.segments.last_mut().expect("segments start nonempty").1 += 1;
    }
}

/// Replays the path through the executor to obtain a trace.
fn build_counterexample(
    program: &GotoProgram,
    props: &PropertySet,
    values: Vec<i32>,
    mut segments: Vec<(usize, u64)>,
) -> Counterexample {
    segments.retain(|&(_, n)| n > 0);
    let violation = replay(program, props, &values, &segments)
        .expect("a counterexample path replays to its bug through the executor");
    Counterexample { assumption_values: values, schedule: segments, violation }
}

/// Runs `values` + `segments` on an un-instrumented program.
pub fn replay(
    program: &GotoProgram,
    props: &PropertySet,
    values: &[i32],
    segments: &[(usize, u64)],
) -> Option<BugReport> {
    let cfg = ExecConfig { props: *props, record_trace: true, ..Default::default() };
    let mut sched = SegmentScheduler::replay(segments.to_vec());
    let input = SeedInput::from_parts(values, &[]);
    exec::run_with(program, &input, &cfg, &mut sched).bug().cloned()
}

/// Encodes a counterexample as a fuzzer input for the instrumented,
/// non-unwound program.
///
/// The instrumented program is run with a recording segment scheduler: each
/// active delay point where the counterexample switches threads becomes
/// `[0, index, 0, 0]`, every other one `[255]`.
pub fn extract_seeds(cx: &Counterexample, instrumented: &GotoProgram, props: &PropertySet) -> SeedInput {
    let cfg = ExecConfig { props: *props, ..Default::default() };
    let mut sched = SegmentScheduler::recording(cx.schedule.clone());
    let values_only = SeedInput::from_parts(&cx.assumption_values, &[]);
    exec::run_with(instrumented, &values_only, &cfg, &mut sched);
    let mut schedule = sched.recorded().to_vec();
    schedule.extend(std::iter::repeat_n(255u8, SCHEDULE_PADDING));
    SeedInput::from_parts(&cx.assumption_values, &schedule)
}

/// Random seeds for when there is no counterexample: values uniform in
/// `[0, 300]`, schedule bytes uniform.
pub fn fallback_seeds(count: usize, rng_seed: u64) -> Vec<SeedInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|_| {
            let values: Vec<i32> = (0..FALLBACK_VALUES).map(|_| rng.random_range(FALLBACK_RANGE)).collect();
            let schedule: Vec<u8> = (0..FALLBACK_SCHEDULE_LEN).map(|_| rng.random()).collect();
            SeedInput::from_parts(&values, &schedule)
        })
        .collect()
}

/// Writes seeds as `seed-000.bin`, `seed-001.bin`, ... and returns the paths.
pub fn write_seeds(dir: &Path, seeds: &[SeedInput]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    seeds
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("seed-{i:03}.bin"));
            std::fs::write(&path, &s.bytes)?;
            Ok(path)
        })
        .collect()
}
