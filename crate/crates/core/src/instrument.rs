//! Delay-point instrumentation.
//!
//! Every original instruction except RETURN is followed by a DELAY_POINT, the
//! place where the executor may hand control to another thread and charge a
//! delay to the yielding one. Thread creation and join also adjust an
//! active-thread counter; delay points are inert while it is zero, so
//! single-threaded prefixes consume no schedule bytes.

use thiserror::Error;

use crate::goto::{GotoProgram, InstrKind, Instruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstrumentationConfig {
    pub delay_min_ns: u64,
    pub delay_max_ns: u64,
    pub enabled: bool,
}

impl Default for InstrumentationConfig {
    fn default() -> Self {
        InstrumentationConfig { delay_min_ns: 1, delay_max_ns: 100_000, enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("program is already instrumented")]
    AlreadyInstrumented,
    #[error("delay range {min}..={max} is empty")]
    BadDelayRange { min: u64, max: u64 },
}

pub fn inject(program: &GotoProgram, cfg: &InstrumentationConfig) -> Result<GotoProgram, InstrumentError> {
    if cfg.delay_min_ns > cfg.delay_max_ns {
        return Err(InstrumentError::BadDelayRange { min: cfg.delay_min_ns, max: cfg.delay_max_ns });
    }
    if program.is_instrumented() {
        return Err(InstrumentError::AlreadyInstrumented);
    }
    if !cfg.enabled {
        return Ok(program.clone());
    }
    let mut next_id = program.instructions().map(|i| i.id + 1).max().unwrap_or(0);
    let mut out = program.clone();
    for f in &mut out.functions {
        let old = std::mem::take(&mut f.body);
        let mut body = Vec::with_capacity(old.len() * 2);
        // entry[i]: where a jump to old instruction i lands.
        let mut entry = Vec::with_capacity(old.len());
        let mut pending_delay: Option<usize> = None;
        for ins in &old {
            entry.push(pending_delay.take().unwrap_or(body.len()));
            let loc = ins.loc;
            let extra = match ins.kind {
                InstrKind::ThreadCreate { .. } => Some(InstrKind::ThreadAdd),
                InstrKind::ThreadJoin(_) => Some(InstrKind::ThreadRelease),
                _ => None,
            };
            let is_return = ins.kind == InstrKind::Return;
            body.push(ins.clone());
            if let Some(kind) = extra {
                body.push(Instruction { kind, loc, id: next_id });
                next_id += 1;
            }
            if !is_return {
                pending_delay = Some(body.len());
                body.push(Instruction { kind: InstrKind::DelayPoint, loc, id: next_id });
                next_id += 1;
            }
        }
        for ins in &mut body {
            if let Some(t) = ins.kind.jump_target_mut() {
                *t = entry[*t];
            }
        }
        f.body = body;
        // Loop regions now point into the instrumented body.
        for lp in &mut f.loops {
            lp.head = entry[lp.head];
            lp.back = entry[lp.back];
        }
    }
    Ok(out)
}

/// Removes all instrumentation. A jump to a removed instruction lands on the
/// next kept one, so `strip(inject(p)) == p`.
pub fn strip(program: &GotoProgram) -> GotoProgram {
    let mut out = program.clone();
    for f in &mut out.functions {
        let old = std::mem::take(&mut f.body);
        let mut remap = vec![0; old.len() + 1];
        let mut new_index = old.iter().filter(|i| !i.kind.is_instrumentation()).count();
        remap[old.len()] = new_index;
        for i in (0..old.len()).rev() {
            if !old[i].kind.is_instrumentation() {
                new_index -= 1;
                remap[i] = new_index;
            } else {
                remap[i] = remap[i + 1];
            }
        }
        f.body = old.into_iter().filter(|i| !i.kind.is_instrumentation()).collect();
        for ins in &mut f.body {
            if let Some(t) = ins.kind.jump_target_mut() {
                *t = remap[*t];
            }
        }
        for lp in &mut f.loops {
            lp.head = remap[lp.head];
            lp.back = remap[lp.back];
        }
    }
    out
}
