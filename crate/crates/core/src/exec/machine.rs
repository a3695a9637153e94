use std::hash::{Hash, Hasher};

use super::coverage::{edge_index, CoverageMap};
use super::race::{AccessEvent, HbClocks, RaceDetector};
use super::{Bug, BugKind, PropertySet, TraceEvent};
use crate::goto::{FuncId, GExpr, GotoProgram, InstrKind, Instruction, Place, VarRef};
use crate::lang::{BinOp, SourceLoc, UnOp};

pub const MAX_THREADS: usize = 64;
pub const MAX_ALLOC: i32 = 65536;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThreadState {
    pub func: FuncId,
    pub pc: usize,
    pub locals: Vec<i32>,
    pub finished: bool,
    /// Some thread has passed this one to thread_join.
    pub joined: bool,
    /// Set by a first join, consumed by the following THREAD_RELEASE.
    release_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeapBlock {
    pub data: Vec<i32>,
    pub freed: bool,
}

/// How a run stopped, when it has.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Completed,
    Bug(Bug),
    UnwindTruncation,
    AssumeFailed,
    ThreadLimit,
}

/// Interpreter state for one execution. Stepping is driven from outside so
/// the same machine serves the executor, the model checker and replay.
#[derive(Clone)]
pub struct Machine<'p> {
    prog: &'p GotoProgram,
    props: PropertySet,
    instrumented: bool,
    pub globals: Vec<i32>,
    pub heap: Vec<HeapBlock>,
    /// Owner of each mutex.
    pub mutexes: Vec<Option<usize>>,
    pub threads: Vec<ThreadState>,
    pub active: u32,
    pub cur: usize,
    /// Virtual time charged to each thread by delay points.
    pub clocks_ns: Vec<u64>,
    hb: HbClocks,
    races: RaceDetector,
    /// Every executed instruction, including jumps and instrumentation.
    pub steps: u64,
    pub counted: u64,
    halt: Option<Halt>,
    coverage: Option<CoverageMap>,
    /// Last instruction id per thread, for edge coverage.
    prev_id: Vec<u32>,
    trace: Option<Vec<TraceEvent>>,
    last_addr: Option<u64>,
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p GotoProgram, props: PropertySet) -> Self {
        let entry = &prog.functions[prog.entry];
        let mut m = Machine {
            prog,
            props,
            instrumented: prog.is_instrumented(),
            globals: vec![0; prog.globals.size as usize],
            heap: Vec::new(),
            mutexes: vec![None; prog.mutexes.len()],
            threads: vec![ThreadState {
                func: prog.entry,
                pc: 0,
                locals: vec![0; entry.locals.len()],
                finished: false,
                joined: false,
                release_pending: false,
            }],
            active: 0,
            cur: 0,
            clocks_ns: vec![0],
            hb: HbClocks::new(),
            races: RaceDetector::new(),
            steps: 0,
            counted: 0,
            halt: None,
            coverage: None,
            prev_id: vec![u32::MAX],
            trace: None,
            last_addr: None,
        };
        m.follow_gotos(0);
        m
    }

    pub fn with_coverage(mut self) -> Self {
        self.coverage = Some(CoverageMap::new());
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn program(&self) -> &'p GotoProgram {
        self.prog
    }

    pub fn halt(&self) -> Option<&Halt> {
        self.halt.as_ref()
    }

    pub fn take_coverage(&mut self) -> CoverageMap {
        self.coverage.take().unwrap_or_default()
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.take().unwrap_or_default()
    }

    pub fn instruction(&self, tid: usize) -> &'p Instruction {
        let t = &self.threads[tid];
        &self.prog.functions[t.func].body[t.pc]
    }

    /// Next instruction that does real work: instrumentation and jumps are
    /// looked through since they never block.
    pub fn effective_instruction(&self, tid: usize) -> &'p Instruction {
        let t = &self.threads[tid];
        let body = &self.prog.functions[t.func].body;
        let mut pc = t.pc;
        loop {
            let ins = &body[pc];
            match ins.kind {
                InstrKind::Goto(target) => pc = target,
                InstrKind::DelayPoint | InstrKind::ThreadAdd | InstrKind::ThreadRelease => pc += 1,
                _ => return ins,
            }
        }
    }

    fn value_of(&self, tid: usize, v: VarRef) -> i32 {
        match v {
            VarRef::Global(a) => self.globals[a as usize],
            VarRef::Local(s) => self.threads[tid].locals[s as usize],
        }
    }

    fn live_thread(&self, tid: usize, handle: i32) -> Option<usize> {
        let t = usize::try_from(handle).ok()?;
        (t != 0 && t != tid && t < self.threads.len()).then_some(t)
    }

    /// Whether `tid` could make progress. Instrumentation ahead of the
    /// thread is looked through, so a thread parked on a delay point in
    /// front of a held lock counts as blocked.
    pub fn is_enabled(&self, tid: usize) -> bool {
        self.enabled_at(tid, self.effective_instruction(tid))
    }

    /// Whether the instruction `tid` is parked on can execute right now.
    pub fn can_step(&self, tid: usize) -> bool {
        self.enabled_at(tid, self.instruction(tid))
    }

    fn enabled_at(&self, tid: usize, ins: &Instruction) -> bool {
        if self.threads[tid].finished || self.halt.is_some() {
            return false;
        }
        match ins.kind {
            InstrKind::Lock(m) => self.mutexes[m as usize].is_none(),
            InstrKind::ThreadJoin(v) => match self.live_thread(tid, self.value_of(tid, v)) {
                Some(child) => self.threads[child].finished,
                None => true,
            },
            _ => true,
        }
    }

    /// Enabled threads in ascending id order.
    pub fn runnable(&self) -> Vec<usize> {
        (0..self.threads.len()).filter(|&t| self.is_enabled(t)).collect()
    }

    /// The first enabled thread after `from`, wrapping around.
    pub fn round_robin(&self, from: usize) -> Option<usize> {
        let n = self.threads.len();
        (1..=n).map(|k| (from + k) % n).find(|&t| self.is_enabled(t))
    }

    /// Reports a deadlock if nothing can run. The location is that of the
    /// lowest-numbered blocked thread, which keeps it schedule-stable.
    pub fn check_deadlock(&mut self) -> bool {
        if self.halt.is_some() || !self.runnable().is_empty() {
            return false;
        }
        let tid = (0..self.threads.len()).find(|&t| !self.threads[t].finished).unwrap_or(0);
        let loc = self.effective_instruction(tid).loc;
        self.halt = Some(Halt::Bug(Bug { kind: BugKind::Deadlock, loc, second: None }));
        true
    }

    pub fn add_delay(&mut self, tid: usize, ns: u64) {
        self.clocks_ns[tid] = self.clocks_ns[tid].saturating_add(ns);
    }

    /// Executes one instruction of `tid`, then any jumps that follow it.
    /// `nondet` supplies the value for a NONDET (0 when absent).
    pub fn step(&mut self, tid: usize, nondet: Option<i32>) {
        debug_assert!(self.halt.is_none());
        self.cur = tid;
        let ins = self.instruction(tid);
        let pc = self.threads[tid].pc;
        self.last_addr = None;
        let res = self.exec(tid, ins, nondet);
        self.record(tid, pc, ins);
        match res {
            Ok(()) => {
                if self.halt.is_none() && !self.threads[tid].finished {
                    self.follow_gotos(tid);
                }
            }
            Err(bug) => self.halt = Some(Halt::Bug(bug)),
        }
    }

    fn follow_gotos(&mut self, tid: usize) {
        loop {
            let ins = self.instruction(tid);
            let InstrKind::Goto(target) = ins.kind else { break };
            self.last_addr = None;
            self.record(tid, self.threads[tid].pc, ins);
            self.threads[tid].pc = target;
        }
    }

    fn record(&mut self, tid: usize, pc: usize, ins: &Instruction) {
        self.steps += 1;
        if ins.kind.is_counted() {
            self.counted += 1;
        }
        if let Some(cov) = &mut self.coverage {
            if !ins.kind.is_instrumentation() {
                cov.hit(edge_index(self.prev_id[tid], ins.id));
                self.prev_id[tid] = ins.id;
            }
        }
        if let Some(trace) = &mut self.trace {
            let addr = self.last_addr.map(|a| addr_name(self.prog, a));
            let vc = ins.kind.is_visible().then(|| self.hb.thread(tid).to_string());
            trace.push(TraceEvent { thread: tid, pc, kind: ins.kind.name(), loc: ins.loc, addr, vc });
        }
    }

    fn advance(&mut self, tid: usize) {
        self.threads[tid].pc += 1;
    }

    /// Returns `Err` only for findings whose property is enabled.
    fn report(&self, kind: BugKind, loc: SourceLoc, second: Option<SourceLoc>) -> Result<(), Bug> {
        if self.props.covers(kind) {
            Err(Bug { kind, loc, second })
        } else {
            Ok(())
        }
    }

    fn shared(&mut self, tid: usize, addr: u64, write: bool, loc: SourceLoc) -> Result<(), Bug> {
        if self.last_addr.is_none() || write {
            self.last_addr = Some(addr);
        }
        let ev = AccessEvent { thread: tid, addr, write, vc: self.hb.thread(tid).clone(), loc };
        if let Some(race) = self.races.access(&ev) {
            let (a, b) = (race.first_loc.min(race.second_loc), race.first_loc.max(race.second_loc));
            self.report(BugKind::DataRace, a, Some(b))?;
        }
        Ok(())
    }

    /// Resolves a heap cell to its block and offset.
    fn heap_cell(&self, handle: i32, index: i32) -> Result<(usize, usize), BugKind> {
        let Some(b) = usize::try_from(handle).ok().filter(|&h| h >= 1 && h <= self.heap.len()) else {
            return Err(BugKind::OutOfBounds);
        };
        let block = &self.heap[b - 1];
        if block.freed {
            return Err(BugKind::UseAfterFree);
        }
        match usize::try_from(index).ok().filter(|&i| i < block.data.len()) {
            Some(i) => Ok((b - 1, i)),
            None => Err(BugKind::OutOfBounds),
        }
    }

    fn read_var(&mut self, tid: usize, v: VarRef, loc: SourceLoc) -> Result<i32, Bug> {
        if let VarRef::Global(a) = v {
            self.shared(tid, a as u64, false, loc)?;
        }
        Ok(self.value_of(tid, v))
    }

    fn write_var(&mut self, tid: usize, v: VarRef, value: i32, loc: SourceLoc) -> Result<(), Bug> {
        match v {
            VarRef::Global(a) => {
                self.shared(tid, a as u64, true, loc)?;
                self.globals[a as usize] = value;
            }
            VarRef::Local(s) => self.threads[tid].locals[s as usize] = value,
        }
        Ok(())
    }

    fn read_place(&mut self, tid: usize, place: &Place, loc: SourceLoc) -> Result<i32, Bug> {
        match place {
            Place::Var(v) => self.read_var(tid, *v, loc),
            Place::Array { base, len, index } => {
                let i = self.eval(tid, index, loc)?;
                if i < 0 || i as u32 >= *len {
                    self.report(BugKind::OutOfBounds, loc, None)?;
                    return Ok(0);
                }
                let addr = base + i as u32;
                self.shared(tid, addr as u64, false, loc)?;
                Ok(self.globals[addr as usize])
            }
            Place::Heap { handle, index } => {
                let h = self.read_var(tid, *handle, loc)?;
                let i = self.eval(tid, index, loc)?;
                match self.heap_cell(h, i) {
                    Ok((b, i)) => {
                        self.shared(tid, heap_addr(b, i), false, loc)?;
                        Ok(self.heap[b].data[i])
                    }
                    Err(kind) => {
                        self.report(kind, loc, None)?;
                        Ok(0)
                    }
                }
            }
        }
    }

    fn write_place(&mut self, tid: usize, place: &Place, value: i32, loc: SourceLoc) -> Result<(), Bug> {
        match place {
            Place::Var(v) => self.write_var(tid, *v, value, loc),
            Place::Array { base, len, index } => {
                let i = self.eval(tid, index, loc)?;
                if i < 0 || i as u32 >= *len {
                    return self.report(BugKind::OutOfBounds, loc, None);
                }
                let addr = base + i as u32;
                self.shared(tid, addr as u64, true, loc)?;
                self.globals[addr as usize] = value;
                Ok(())
            }
            Place::Heap { handle, index } => {
                let h = self.read_var(tid, *handle, loc)?;
                let i = self.eval(tid, index, loc)?;
                match self.heap_cell(h, i) {
                    Ok((b, i)) => {
                        self.shared(tid, heap_addr(b, i), true, loc)?;
                        self.heap[b].data[i] = value;
                        Ok(())
                    }
                    Err(kind) => self.report(kind, loc, None),
                }
            }
        }
    }

    fn overflow(&self, checked: Option<i32>, wrapped: i32, loc: SourceLoc) -> Result<i32, Bug> {
        match checked {
            Some(v) => Ok(v),
            None => {
                self.report(BugKind::SignedOverflow, loc, None)?;
                Ok(wrapped)
            }
        }
    }

    fn eval(&mut self, tid: usize, e: &GExpr, loc: SourceLoc) -> Result<i32, Bug> {
        match e {
            GExpr::Const(v) => Ok(*v),
            GExpr::Load(p) => self.read_place(tid, p, loc),
            GExpr::Unary(UnOp::Neg, inner) => {
                let v = self.eval(tid, inner, loc)?;
                self.overflow(v.checked_neg(), v.wrapping_neg(), loc)
            }
            GExpr::Unary(UnOp::Not, inner) => Ok((self.eval(tid, inner, loc)? == 0) as i32),
            GExpr::Binary(BinOp::And, l, r) => {
                if self.eval(tid, l, loc)? == 0 {
                    return Ok(0);
                }
                Ok((self.eval(tid, r, loc)? != 0) as i32)
            }
            GExpr::Binary(BinOp::Or, l, r) => {
                if self.eval(tid, l, loc)? != 0 {
                    return Ok(1);
                }
                Ok((self.eval(tid, r, loc)? != 0) as i32)
            }
            GExpr::Binary(op, l, r) => {
                let a = self.eval(tid, l, loc)?;
                let b = self.eval(tid, r, loc)?;
                match op {
                    BinOp::Add => self.overflow(a.checked_add(b), a.wrapping_add(b), loc),
                    BinOp::Sub => self.overflow(a.checked_sub(b), a.wrapping_sub(b), loc),
                    BinOp::Mul => self.overflow(a.checked_mul(b), a.wrapping_mul(b), loc),
                    // Division by zero is defined as 0; only INT_MIN / -1 overflows.
                    BinOp::Div if b == 0 => Ok(0),
                    BinOp::Rem if b == 0 => Ok(0),
                    BinOp::Div => self.overflow(a.checked_div(b), a.wrapping_div(b), loc),
                    BinOp::Rem => self.overflow(a.checked_rem(b), a.wrapping_rem(b), loc),
                    BinOp::Eq => Ok((a == b) as i32),
                    BinOp::Ne => Ok((a != b) as i32),
                    BinOp::Lt => Ok((a < b) as i32),
                    BinOp::Le => Ok((a <= b) as i32),
                    BinOp::Gt => Ok((a > b) as i32),
                    BinOp::Ge => Ok((a >= b) as i32),
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
        }
    }

    fn exec(&mut self, tid: usize, ins: &Instruction, nondet: Option<i32>) -> Result<(), Bug> {
        let loc = ins.loc;
        match &ins.kind {
            InstrKind::Assign { target, value } => {
                let v = self.eval(tid, value, loc)?;
                self.write_place(tid, target, v, loc)?;
                self.advance(tid);
            }
            InstrKind::CondGoto { cond, target } => {
                if self.eval(tid, cond, loc)? != 0 {
                    self.threads[tid].pc = *target;
                } else {
                    self.advance(tid);
                }
            }
            InstrKind::Goto(target) => self.threads[tid].pc = *target,
            InstrKind::Assert(cond) => {
                if self.eval(tid, cond, loc)? == 0 {
                    self.report(BugKind::AssertViolation, loc, None)?;
                }
                self.advance(tid);
            }
            InstrKind::Assume(cond) => {
                if self.eval(tid, cond, loc)? == 0 {
                    self.halt = Some(Halt::AssumeFailed);
                }
                self.advance(tid);
            }
            InstrKind::UnwindAssume(cond) => {
                if self.eval(tid, cond, loc)? == 0 {
                    self.halt = Some(Halt::UnwindTruncation);
                }
                self.advance(tid);
            }
            InstrKind::ReachError => {
                self.report(BugKind::ReachError, loc, None)?;
                self.advance(tid);
            }
            InstrKind::Lock(m) => {
                debug_assert!(self.mutexes[*m as usize].is_none());
                self.mutexes[*m as usize] = Some(tid);
                self.hb.lock(tid, *m);
                self.advance(tid);
            }
            InstrKind::Unlock(m) => {
                // Unlocking a mutex this thread does not hold is a no-op.
                if self.mutexes[*m as usize] == Some(tid) {
                    self.mutexes[*m as usize] = None;
                    self.hb.unlock(tid, *m);
                }
                self.advance(tid);
            }
            InstrKind::ThreadCreate { target, func, arg } => {
                let a = match arg {
                    Some(e) => Some(self.eval(tid, e, loc)?),
                    None => None,
                };
                if self.threads.len() >= MAX_THREADS {
                    self.halt = Some(Halt::ThreadLimit);
                    return Ok(());
                }
                let child = self.threads.len();
                let f = &self.prog.functions[*func];
                let mut locals = vec![0; f.locals.len()];
                if let Some(a) = a {
                    locals[0] = a;
                }
                self.threads.push(ThreadState {
                    func: *func,
                    pc: 0,
                    locals,
                    finished: false,
                    joined: false,
                    release_pending: false,
                });
                self.clocks_ns.push(0);
                self.prev_id.push(u32::MAX);
                self.hb.create(tid, child);
                self.write_var(tid, *target, child as i32, loc)?;
                if !self.instrumented {
                    self.active += 1;
                }
                self.advance(tid);
            }
            InstrKind::ThreadJoin(v) => {
                let h = self.read_var(tid, *v, loc)?;
                if let Some(child) = self.live_thread(tid, h) {
                    debug_assert!(self.threads[child].finished);
                    self.hb.join(tid, child);
                    if !self.threads[child].joined {
                        self.threads[child].joined = true;
                        if self.instrumented {
                            self.threads[tid].release_pending = true;
                        } else {
                            self.active = self.active.saturating_sub(1);
                        }
                    }
                }
                self.advance(tid);
            }
            InstrKind::Nondet(v) => {
                self.write_var(tid, *v, nondet.unwrap_or(0), loc)?;
                self.advance(tid);
            }
            InstrKind::Alloc { target, size } => {
                let n = self.eval(tid, size, loc)?;
                let handle = if (0..=MAX_ALLOC).contains(&n) {
                    self.heap.push(HeapBlock { data: vec![0; n as usize], freed: false });
                    self.heap.len() as i32
                } else {
                    0
                };
                self.write_var(tid, *target, handle, loc)?;
                self.advance(tid);
            }
            InstrKind::Free(v) => {
                let h = self.read_var(tid, *v, loc)?;
                if h != 0 {
                    match usize::try_from(h).ok().filter(|&b| b >= 1 && b <= self.heap.len()) {
                        None => self.report(BugKind::OutOfBounds, loc, None)?,
                        Some(b) if self.heap[b - 1].freed => self.report(BugKind::DoubleFree, loc, None)?,
                        Some(b) => {
                            // Freeing counts as a write to every cell.
                            for i in 0..self.heap[b - 1].data.len() {
                                self.shared(tid, heap_addr(b - 1, i), true, loc)?;
                            }
                            self.heap[b - 1].freed = true;
                        }
                    }
                }
                self.advance(tid);
            }
            InstrKind::Return => {
                if tid == 0 {
                    self.main_return(loc)?;
                    self.halt = Some(Halt::Completed);
                }
                self.threads[tid].finished = true;
            }
            InstrKind::DelayPoint => self.advance(tid),
            InstrKind::ThreadAdd => {
                self.active += 1;
                self.advance(tid);
            }
            InstrKind::ThreadRelease => {
                if std::mem::take(&mut self.threads[tid].release_pending) {
                    self.active = self.active.saturating_sub(1);
                }
                self.advance(tid);
            }
        }
        Ok(())
    }

    fn main_return(&self, loc: SourceLoc) -> Result<(), Bug> {
        if self.threads.iter().skip(1).any(|t| !t.joined) {
            self.report(BugKind::ThreadLeak, loc, None)?;
        }
        if self.heap.iter().any(|b| !b.freed) {
            self.report(BugKind::MemoryLeak, loc, None)?;
        }
        Ok(())
    }

    /// Hash of the program-visible state: memory, threads, mutex owners and
    /// the active counter. Happens-before clocks are left out on purpose.
    pub fn state_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.globals.hash(&mut h);
        self.heap.hash(&mut h);
        self.mutexes.hash(&mut h);
        self.threads.hash(&mut h);
        self.active.hash(&mut h);
        h.finish()
    }
}

fn heap_addr(block: usize, index: usize) -> u64 {
    ((block as u64 + 1) << 32) | index as u64
}

fn addr_name(prog: &GotoProgram, addr: u64) -> String {
    match addr >> 32 {
        0 => prog.globals.name_of(addr as u32),
        h => format!("heap{}[{}]", h, addr & 0xFFFF_FFFF),
    }
}
