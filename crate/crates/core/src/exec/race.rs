//! Happens-before race detection with vector clocks.
//!
//! Clocks advance only at release-like events (unlock, thread create), so an
//! access by thread `t` at epoch `e` happens before a later event `j` exactly
//! when `vc_j[t] >= e`.

use std::collections::HashMap;

use crate::lang::SourceLoc;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct VectorClock(Vec<u32>);

impl VectorClock {
    pub fn get(&self, tid: usize) -> u32 {
        self.0.get(tid).copied().unwrap_or(0)
    }

    pub fn set(&mut self, tid: usize, v: u32) {
        if self.0.len() <= tid {
            self.0.resize(tid + 1, 0);
        }
        self.0[tid] = v;
    }

    pub fn tick(&mut self, tid: usize) {
        let v = self.get(tid);
        self.set(tid, v + 1);
    }

    pub fn join(&mut self, other: &VectorClock) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), 0);
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = (*a).max(*b);
        }
    }

    /// Component-wise `self <= other`.
    pub fn leq(&self, other: &VectorClock) -> bool {
        self.0.iter().enumerate().all(|(i, v)| *v <= other.get(i))
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }
}

impl std::fmt::Display for VectorClock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

/// Per-thread and per-mutex clocks, updated by synchronization events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HbClocks {
    threads: Vec<VectorClock>,
    locks: HashMap<u32, VectorClock>,
}

impl HbClocks {
    /// Clocks for a program whose only thread is 0.
    pub fn new() -> Self {
        let mut main = VectorClock::default();
        main.set(0, 1);
        HbClocks { threads: vec![main], locks: HashMap::new() }
    }

    pub fn thread(&self, tid: usize) -> &VectorClock {
        &self.threads[tid]
    }

    pub fn create(&mut self, parent: usize, child: usize) {
        let mut vc = self.threads[parent].clone();
        vc.set(child, 1);
        if self.threads.len() <= child {
            self.threads.resize(child + 1, VectorClock::default());
        }
        self.threads[child] = vc;
        self.threads[parent].tick(parent);
    }

    pub fn join(&mut self, parent: usize, child: usize) {
        let child_vc = self.threads[child].clone();
        self.threads[parent].join(&child_vc);
    }

    pub fn lock(&mut self, tid: usize, mutex: u32) {
        if let Some(l) = self.locks.get(&mutex) {
            let l = l.clone();
            self.threads[tid].join(&l);
        }
    }

    pub fn unlock(&mut self, tid: usize, mutex: u32) {
        self.locks.insert(mutex, self.threads[tid].clone());
        self.threads[tid].tick(tid);
    }
}

/// One shared-memory access with the accessing thread's clock at that time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEvent {
    pub thread: usize,
    pub addr: u64,
    pub write: bool,
    pub vc: VectorClock,
    pub loc: SourceLoc,
}

/// Two conflicting accesses not ordered by happens-before. `first` is the
/// earlier event's index in the access sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RacePair {
    pub first: usize,
    pub second: usize,
    pub first_loc: SourceLoc,
    pub second_loc: SourceLoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Epoch {
    thread: usize,
    clock: u32,
    index: usize,
    loc: SourceLoc,
}

impl Epoch {
    fn before(&self, vc: &VectorClock) -> bool {
        self.clock <= vc.get(self.thread)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Shadow {
    write: Option<Epoch>,
    /// Latest read per thread since the last write.
    reads: Vec<Epoch>,
}

/// Incremental detector: feed accesses in execution order.
///
/// Only the last write and the latest read per thread are kept. That is
/// enough to find the first race: any earlier access to the same address is
/// ordered before one of the kept ones, or a race would already have fired.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RaceDetector {
    shadow: HashMap<u64, Shadow>,
    count: usize,
}

impl RaceDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an access; returns the race it completes, if any. The partner
    /// is the latest earlier access that races with this one.
    pub fn access(&mut self, ev: &AccessEvent) -> Option<RacePair> {
        let index = self.count;
        self.count += 1;
        let me = Epoch { thread: ev.thread, clock: ev.vc.get(ev.thread), index, loc: ev.loc };
        let sh = self.shadow.entry(ev.addr).or_default();

        let mut partner: Option<Epoch> = None;
        let mut consider = |e: &Epoch| {
            if e.thread != ev.thread && !e.before(&ev.vc) && partner.is_none_or(|p| e.index > p.index) {
                partner = Some(*e);
            }
        };
        if let Some(w) = &sh.write {
            consider(w);
        }
        if ev.write {
            for r in &sh.reads {
                consider(r);
            }
        }

        if ev.write {
            sh.write = Some(me);
            sh.reads.clear();
        } else if let Some(r) = sh.reads.iter_mut().find(|r| r.thread == ev.thread) {
            *r = me;
        } else {
            sh.reads.push(me);
        }

        partner.map(|p| RacePair { first: p.index, second: index, first_loc: p.loc, second_loc: ev.loc })
    }
}

/// First racing pair in an access log, by the index of its later event.
pub fn race_check(events: &[AccessEvent]) -> Option<RacePair> {
    let mut det = RaceDetector::new();
    events.iter().find_map(|e| det.access(e))
}
