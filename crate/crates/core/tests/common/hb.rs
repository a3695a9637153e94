//! Random synchronization traces and a graph-based happens-before check.
//!
//! The reference builds the happens-before relation explicitly (program
//! order, create, join, unlock to every later lock of the same mutex), takes
//! its transitive closure, and scans all access pairs.

use ebf_core::exec::{AccessEvent, HbClocks};
use ebf_core::lang::SourceLoc;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Access { thread: usize, addr: u64, write: bool },
    Lock { thread: usize, mutex: u32 },
    Unlock { thread: usize, mutex: u32 },
    Create { parent: usize, child: usize },
    Join { parent: usize, child: usize },
}

impl Op {
    fn thread(&self) -> usize {
        match *self {
            Op::Access { thread, .. } | Op::Lock { thread, .. } | Op::Unlock { thread, .. } => thread,
            Op::Create { parent, .. } | Op::Join { parent, .. } => parent,
        }
    }
}

const THREADS: usize = 4;
const MUTEXES: u32 = 2;
const ADDRS: u64 = 3;

/// A well-formed trace of at most `max_len` operations.
pub fn random_trace(rng: &mut impl Rng, max_len: usize) -> Vec<Op> {
    let len = rng.random_range(1..=max_len);
    let mut live = vec![0usize];
    let mut spawned = 1;
    let mut owner: [Option<usize>; MUTEXES as usize] = [None; MUTEXES as usize];
    let mut ops = Vec::new();
    while ops.len() < len {
        let t = live[rng.random_range(0..live.len())];
        let op = match rng.random_range(0..10) {
            0..=4 => Op::Access { thread: t, addr: rng.random_range(0..ADDRS), write: rng.random() },
            5 | 6 => {
                let m = rng.random_range(0..MUTEXES);
                match owner[m as usize] {
                    None => {
                        owner[m as usize] = Some(t);
                        Op::Lock { thread: t, mutex: m }
                    }
                    Some(o) if o == t => {
                        owner[m as usize] = None;
                        Op::Unlock { thread: t, mutex: m }
                    }
                    Some(_) => continue,
                }
            }
            7 if spawned < THREADS => {
                live.push(spawned);
                spawned += 1;
                Op::Create { parent: t, child: spawned - 1 }
            }
            8 => {
                // A child that holds no lock finishes and is joined.
                let Some(pos) = live.iter().position(|&c| c != t && c != 0 && !owner.contains(&Some(c))) else {
                    continue;
                };
                let c = live.remove(pos);
                Op::Join { parent: t, child: c }
            }
            _ => continue,
        };
        ops.push(op);
    }
    ops
}

/// Access events with clocks from the implementation under test.
pub fn clocked_accesses(ops: &[Op]) -> Vec<AccessEvent> {
    let mut hb = HbClocks::new();
    let mut out = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        match *op {
            Op::Access { thread, addr, write } => out.push(AccessEvent {
                thread,
                addr,
                write,
                vc: hb.thread(thread).clone(),
                loc: SourceLoc::new(i as u32 + 1, 1),
            }),
            Op::Lock { thread, mutex } => hb.lock(thread, mutex),
            Op::Unlock { thread, mutex } => hb.unlock(thread, mutex),
            Op::Create { parent, child } => hb.create(parent, child),
            Op::Join { parent, child } => hb.join(parent, child),
        }
    }
    out
}

/// `(earlier, later)` access indices of the first race: the smallest later
/// index, paired with the latest earlier access that races with it.
pub fn first_race(ops: &[Op]) -> Option<(usize, usize)> {
    let n = ops.len();
    let mut hb = vec![vec![false; n]; n];
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (ops[i], ops[j]);
            let edge = a.thread() == b.thread()
                || matches!(a, Op::Create { child, .. } if child == b.thread())
                || matches!(b, Op::Join { child, .. } if child == a.thread())
                // Covers children that never run an operation of their own.
                || matches!((a, b), (Op::Create { child: c1, .. }, Op::Join { child: c2, .. }) if c1 == c2)
                || matches!((a, b), (Op::Unlock { mutex: m1, .. }, Op::Lock { mutex: m2, .. }) if m1 == m2);
            hb[i][j] = edge;
        }
    }
    for k in 0..n {
        let via = hb[k].clone();
        for row in hb.iter_mut() {
            if row[k] {
                for (cell, &reach) in row.iter_mut().zip(&via) {
                    *cell |= reach;
                }
            }
        }
    }
    let accesses: Vec<usize> = (0..n).filter(|&i| matches!(ops[i], Op::Access { .. })).collect();
    for (aj, &j) in accesses.iter().enumerate() {
        let Op::Access { thread: tj, addr: xj, write: wj } = ops[j] else { unreachable!() };
        let partner = (0..aj).rev().find(|&ai| {
            let i = accesses[ai];
            let Op::Access { thread: ti, addr: xi, write: wi } = ops[i] else { unreachable!() };
            ti != tj && xi == xj && (wi || wj) && !hb[i][j]
        });
        if let Some(ai) = partner {
            return Some((ai, aj));
        }
    }
    None
}
