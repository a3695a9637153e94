//! Reference semantics for MCL, written directly against the syntax tree.
//!
//! `explore` enumerates every interleaving at statement granularity and every
//! NONDET value from a domain, with no context bound and no reduction beyond
//! merging identical states. Races are decided by knowledge sets: each past
//! access records which threads and mutexes have "seen" it through program
//! order, create, join and unlock/lock, and a conflicting access by a thread
//! outside that set is a race. None of this shares code with the machine.

use std::collections::{BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use ebf_core::exec::BugKind;
use ebf_core::lang::{Ast, BinOp, Block, Expr, ExprKind, GlobalKind, LValue, Stmt, StmtKind, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Props {
    pub unreach_call: bool,
    pub memsafety: bool,
    pub overflow: bool,
    pub races: bool,
}

impl Props {
    pub fn all() -> Self {
        Props { unreach_call: true, memsafety: true, overflow: true, races: true }
    }

    fn reports(&self, kind: BugKind) -> bool {
        use BugKind::*;
        match kind {
            AssertViolation | ReachError => self.unreach_call,
            OutOfBounds | UseAfterFree | DoubleFree | MemoryLeak => self.memsafety,
            SignedOverflow => self.overflow,
            DataRace | ThreadLeak => self.races,
            Deadlock => true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Every bug kind some path stops at.
    pub kinds: BTreeSet<BugKind>,
    pub states: usize,
    /// Most iterations any single loop entry ran.
    pub max_loop_iters: u32,
    pub completed_paths: bool,
}

#[derive(Clone, Copy)]
enum Global {
    Int(usize),
    Array(usize, usize),
    Mutex(usize),
}

#[derive(Clone)]
struct Frame<'a> {
    block: &'a Block,
    idx: usize,
    /// Iterations of the loop at `idx`, while it is running.
    iters: u32,
    scope: Vec<(&'a str, i32)>,
}

impl PartialEq for Frame<'_> {
    fn eq(&self, o: &Self) -> bool {
        std::ptr::eq(self.block, o.block) && self.idx == o.idx && self.iters == o.iters && self.scope == o.scope
    }
}
impl Eq for Frame<'_> {}
impl Hash for Frame<'_> {
    fn hash<H: Hasher>(&self, h: &mut H) {
        (self.block as *const Block as usize).hash(h);
        self.idx.hash(h);
        self.iters.hash(h);
        self.scope.hash(h);
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Thread<'a> {
    frames: Vec<Frame<'a>>,
    finished: bool,
    joined: bool,
}

/// A past access: location, thread, write flag, and who knows about it
/// (bit t for thread t, bit 32 + m for mutex m).
type Access = ((usize, usize), usize, bool, u64);

#[derive(Clone, PartialEq, Eq, Hash)]
struct State<'a> {
    globals: Vec<i32>,
    heap: Vec<(Vec<i32>, bool)>,
    owners: Vec<Option<usize>>,
    threads: Vec<Thread<'a>>,
    seen: BTreeSet<Access>,
}

enum Step<'a> {
    Next(State<'a>),
    Bug(BugKind),
    /// An assumption failed; the path is dropped.
    Dropped,
    /// Main returned cleanly.
    Done,
}

pub struct Explorer<'a> {
    ast: &'a Ast,
    props: Props,
    domain: Vec<i32>,
    globals: Vec<(&'a str, Global)>,
    pub max_states: usize,
}

const MUTEX_BIT: usize = 32;

impl<'a> Explorer<'a> {
    pub fn new(ast: &'a Ast, props: Props, domain: &[i32]) -> Self {
        let mut next = 0;
        let mut mutexes = 0;
        let globals = ast
            .globals
            .iter()
            .map(|g| {
                let slot = match g.kind {
                    GlobalKind::Int => {
                        next += 1;
                        Global::Int(next - 1)
                    }
                    GlobalKind::Array(n) => {
                        next += n as usize;
                        Global::Array(next - n as usize, n as usize)
                    }
                    GlobalKind::Mutex => {
                        mutexes += 1;
                        Global::Mutex(mutexes - 1)
                    }
                };
                (g.name.as_str(), slot)
            })
            .collect::<Vec<_>>();
        let _ = mutexes;
        Explorer { ast, props, domain: domain.to_vec(), globals, max_states: 5_000_000 }
    }

    fn initial(&self) -> State<'a> {
        let size = self
            .globals
            .iter()
            .map(|(_, g)| match g {
                Global::Int(a) => a + 1,
                Global::Array(b, n) => b + n,
                Global::Mutex(_) => 0,
            })
            .max()
            .unwrap_or(0);
        let mutexes = self.globals.iter().filter(|(_, g)| matches!(g, Global::Mutex(_))).count();
        let main = &self.ast.functions[self.ast.main];
        State {
            globals: vec![0; size],
            heap: Vec::new(),
            owners: vec![None; mutexes],
            threads: vec![Thread {
                frames: vec![Frame { block: &main.body, idx: 0, iters: 0, scope: Vec::new() }],
                finished: false,
                joined: false,
            }],
            seen: BTreeSet::new(),
        }
    }

    pub fn explore(&self) -> Outcome {
        let mut out = Outcome::default();
        let mut visited: HashSet<State<'a>> = HashSet::new();
        let mut stack = vec![self.settle(self.initial())];
        while let Some(st) = stack.pop() {
            if !visited.insert(st.clone()) {
                continue;
            }
            assert!(visited.len() <= self.max_states, "oracle state limit reached");
            for t in &st.threads {
                for f in &t.frames {
                    out.max_loop_iters = out.max_loop_iters.max(f.iters);
                }
            }
            let enabled: Vec<usize> = (0..st.threads.len()).filter(|&t| self.enabled(&st, t)).collect();
            if enabled.is_empty() {
                out.kinds.insert(BugKind::Deadlock);
                continue;
            }
            for t in enabled {
                for step in self.successors(&st, t) {
                    match step {
                        Step::Next(s) => stack.push(self.settle(s)),
                        Step::Bug(k) => {
                            out.kinds.insert(k);
                        }
                        Step::Dropped => {}
                        Step::Done => out.completed_paths = true,
                    }
                }
            }
        }
        out.states = visited.len();
        out
    }

    /// Pops finished blocks. A loop body's frame pops back to its `while`,
    /// which runs its condition again as the next step.
    fn settle(&self, mut st: State<'a>) -> State<'a> {
        for t in &mut st.threads {
            while let Some(f) = t.frames.last() {
                if f.idx < f.block.stmts.len() {
                    break;
                }
                if t.frames.len() == 1 {
                    break;
                }
                t.frames.pop();
            }
        }
        st
    }

    fn next_stmt(&self, st: &State<'a>, t: usize) -> Option<&'a Stmt> {
        let f = st.threads[t].frames.last()?;
        f.block.stmts.get(f.idx)
    }

    fn live_child(&self, st: &State<'a>, t: usize, handle: i32) -> Option<usize> {
        let c = usize::try_from(handle).ok()?;
        (c != 0 && c != t && c < st.threads.len()).then_some(c)
    }

    fn enabled(&self, st: &State<'a>, t: usize) -> bool {
        if st.threads[t].finished {
            return false;
        }
        match self.next_stmt(st, t).map(|s| &s.kind) {
            Some(StmtKind::Lock(m)) => st.owners[self.mutex(m)].is_none(),
            Some(StmtKind::ThreadJoin(v)) => {
                let h = self.peek_var(st, t, v);
                self.live_child(st, t, h).is_none_or(|c| st.threads[c].finished)
            }
            _ => true,
        }
    }

    fn mutex(&self, name: &str) -> usize {
        match self.global(name) {
            Some(Global::Mutex(m)) => m,
            _ => panic!("`{name}` is not a mutex"),
        }
    }

    fn global(&self, name: &str) -> Option<Global> {
        self.globals.iter().find(|(n, _)| *n == name).map(|(_, g)| *g)
    }

    fn find_local(&self, st: &State<'a>, t: usize, name: &str) -> Option<(usize, usize)> {
        let frames = &st.threads[t].frames;
        (0..frames.len())
            .rev()
            .find_map(|fi| frames[fi].scope.iter().rposition(|(n, _)| *n == name).map(|si| (fi, si)))
    }

    fn peek_var(&self, st: &State<'a>, t: usize, name: &str) -> i32 {
        match self.find_local(st, t, name) {
            Some((f, s)) => st.threads[t].frames[f].scope[s].1,
            None => match self.global(name) {
                Some(Global::Int(a)) => st.globals[a],
                _ => panic!("`{name}` is not a scalar"),
            },
        }
    }

    fn successors(&self, st: &State<'a>, t: usize) -> Vec<Step<'a>> {
        let Some(stmt) = self.next_stmt(st, t) else {
            return vec![self.ret(st.clone(), t)];
        };
        if let StmtKind::Nondet(name) = &stmt.kind {
            return self
                .domain
                .iter()
                .map(|&v| {
                    let mut s = st.clone();
                    match self.write_var(&mut s, t, name, v) {
                        Ok(()) => {
                            advance(&mut s, t);
                            Step::Next(s)
                        }
                        Err(k) => Step::Bug(k),
                    }
                })
                .collect();
        }
        let mut s = st.clone();
        vec![match self.exec(&mut s, t, stmt) {
            Ok(true) => Step::Next(s),
            Ok(false) => Step::Dropped,
            Err(k) => Step::Bug(k),
        }]
    }

    fn ret(&self, mut st: State<'a>, t: usize) -> Step<'a> {
        if t != 0 {
            st.threads[t].finished = true;
            return Step::Next(st);
        }
        if st.threads.iter().skip(1).any(|c| !c.joined) && self.props.reports(BugKind::ThreadLeak) {
            return Step::Bug(BugKind::ThreadLeak);
        }
        if st.heap.iter().any(|(_, freed)| !freed) && self.props.reports(BugKind::MemoryLeak) {
            return Step::Bug(BugKind::MemoryLeak);
        }
        Step::Done
    }

    fn report(&self, kind: BugKind) -> Result<(), BugKind> {
        if self.props.reports(kind) {
            Err(kind)
        } else {
            Ok(())
        }
    }

    fn access(&self, st: &mut State<'a>, t: usize, loc: (usize, usize), write: bool) -> Result<(), BugKind> {
        let me = 1u64 << t;
        let racy = st.seen.iter().any(|&(l, u, w, knows)| l == loc && u != t && (w || write) && knows & me == 0);
        if racy {
            self.report(BugKind::DataRace)?;
        }
        st.seen.insert((loc, t, write, me));
        Ok(())
    }

    /// Everyone who knows `from` now also knows `to` (or exactly `to` knows
    /// what `from` knows, with `replace`).
    fn propagate(st: &mut State<'a>, from: usize, to: usize, replace: bool) {
        let (fb, tb) = (1u64 << from, 1u64 << to);
        st.seen = std::mem::take(&mut st.seen)
            .into_iter()
            .map(|(l, u, w, k)| {
                let knows = k & fb != 0;
                let k = if knows { k | tb } else if replace { k & !tb } else { k };
                (l, u, w, k)
            })
            .collect();
    }

    fn read_var(&self, st: &mut State<'a>, t: usize, name: &str) -> Result<i32, BugKind> {
        if self.find_local(st, t, name).is_none() {
            if let Some(Global::Int(a)) = self.global(name) {
                self.access(st, t, (0, a), false)?;
            }
        }
        Ok(self.peek_var(st, t, name))
    }

    fn write_var(&self, st: &mut State<'a>, t: usize, name: &str, v: i32) -> Result<(), BugKind> {
        match self.find_local(st, t, name) {
            Some((f, s)) => st.threads[t].frames[f].scope[s].1 = v,
            None => match self.global(name) {
                Some(Global::Int(a)) => {
                    self.access(st, t, (0, a), true)?;
                    st.globals[a] = v;
                }
                _ => panic!("`{name}` is not assignable"),
            },
        }
        Ok(())
    }

    /// Resolves `name[i]` to a memory cell, or the bug that prevents it.
    fn cell(&self, st: &mut State<'a>, t: usize, name: &str, index: &Expr) -> Result<Result<(usize, usize), BugKind>, BugKind> {
        if self.find_local(st, t, name).is_none() {
            if let Some(Global::Array(base, len)) = self.global(name) {
                let i = self.eval(st, t, index)?;
                return Ok(if i < 0 || i as usize >= len { Err(BugKind::OutOfBounds) } else { Ok((0, base + i as usize)) });
            }
        }
        let h = self.read_var(st, t, name)?;
        let i = self.eval(st, t, index)?;
        if h < 1 || h as usize > st.heap.len() {
            return Ok(Err(BugKind::OutOfBounds));
        }
        let (data, freed) = &st.heap[h as usize - 1];
        Ok(if *freed {
            Err(BugKind::UseAfterFree)
        } else if i < 0 || i as usize >= data.len() {
            Err(BugKind::OutOfBounds)
        } else {
            Ok((h as usize, i as usize))
        })
    }

    fn load(st: &State<'a>, c: (usize, usize)) -> i32 {
        match c {
            (0, a) => st.globals[a],
            (h, i) => st.heap[h - 1].0[i],
        }
    }

    fn store(st: &mut State<'a>, c: (usize, usize), v: i32) {
        match c {
            (0, a) => st.globals[a] = v,
            (h, i) => st.heap[h - 1].0[i] = v,
        }
    }

    fn arith(&self, checked: Option<i32>, wrapped: i32) -> Result<i32, BugKind> {
        match checked {
            Some(v) => Ok(v),
            None => self.report(BugKind::SignedOverflow).map(|_| wrapped),
        }
    }

    fn eval(&self, st: &mut State<'a>, t: usize, e: &Expr) -> Result<i32, BugKind> {
        Ok(match &e.kind {
            ExprKind::Int(v) => *v,
            ExprKind::Var(n) => self.read_var(st, t, n)?,
            ExprKind::Index(n, i) => match self.cell(st, t, n, i)? {
                Ok(c) => {
                    self.access(st, t, c, false)?;
                    Self::load(st, c)
                }
                Err(k) => {
                    self.report(k)?;
                    0
                }
            },
            ExprKind::Unary(UnOp::Neg, a) => {
                let v = self.eval(st, t, a)?;
                self.arith(v.checked_neg(), v.wrapping_neg())?
            }
            ExprKind::Unary(UnOp::Not, a) => (self.eval(st, t, a)? == 0) as i32,
            ExprKind::Binary(BinOp::And, a, b) => (self.eval(st, t, a)? != 0 && self.eval(st, t, b)? != 0) as i32,
            ExprKind::Binary(BinOp::Or, a, b) => (self.eval(st, t, a)? != 0 || self.eval(st, t, b)? != 0) as i32,
            ExprKind::Binary(op, a, b) => {
                let x = self.eval(st, t, a)?;
                let y = self.eval(st, t, b)?;
                match op {
                    BinOp::Add => self.arith(x.checked_add(y), x.wrapping_add(y))?,
                    BinOp::Sub => self.arith(x.checked_sub(y), x.wrapping_sub(y))?,
                    BinOp::Mul => self.arith(x.checked_mul(y), x.wrapping_mul(y))?,
                    BinOp::Div | BinOp::Rem if y == 0 => 0,
                    BinOp::Div => self.arith(x.checked_div(y), x.wrapping_div(y))?,
                    BinOp::Rem => self.arith(x.checked_rem(y), x.wrapping_rem(y))?,
                    BinOp::Eq => (x == y) as i32,
                    BinOp::Ne => (x != y) as i32,
                    BinOp::Lt => (x < y) as i32,
                    BinOp::Le => (x <= y) as i32,
                    BinOp::Gt => (x > y) as i32,
                    BinOp::Ge => (x >= y) as i32,
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
        })
    }

    /// Runs one statement. `Ok(false)` means a failed assumption.
    fn exec(&self, st: &mut State<'a>, t: usize, stmt: &'a Stmt) -> Result<bool, BugKind> {
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(st, t, value)?;
                match target {
                    LValue::Var(n) => self.write_var(st, t, n, v)?,
                    LValue::Index(n, i) => match self.cell(st, t, n, i)? {
                        Ok(c) => {
                            self.access(st, t, c, true)?;
                            Self::store(st, c, v);
                        }
                        Err(k) => self.report(k)?,
                    },
                }
                advance(st, t);
            }
            StmtKind::Local { name, init } => {
                let v = match init {
                    Some(e) => self.eval(st, t, e)?,
                    None => 0,
                };
                let f = st.threads[t].frames.last_mut().unwrap();
                f.scope.retain(|(n, _)| n != name);
                f.scope.push((name.as_str(), v));
                advance(st, t);
            }
            StmtKind::If { cond, then_block, else_block } => {
                let c = self.eval(st, t, cond)?;
                advance(st, t);
                let block = if c != 0 { Some(then_block) } else { else_block.as_ref() };
                if let Some(b) = block {
                    st.threads[t].frames.push(Frame { block: b, idx: 0, iters: 0, scope: Vec::new() });
                }
            }
            StmtKind::While { cond, body } => {
                let c = self.eval(st, t, cond)?;
                let f = st.threads[t].frames.last_mut().unwrap();
                if c != 0 {
                    f.iters += 1;
                    st.threads[t].frames.push(Frame { block: body, idx: 0, iters: 0, scope: Vec::new() });
                } else {
                    f.iters = 0;
                    f.idx += 1;
                }
            }
            StmtKind::Lock(m) => {
                let m = self.mutex(m);
                st.owners[m] = Some(t);
                Self::propagate(st, MUTEX_BIT + m, t, false);
                advance(st, t);
            }
            StmtKind::Unlock(m) => {
                let m = self.mutex(m);
                if st.owners[m] == Some(t) {
                    st.owners[m] = None;
                    Self::propagate(st, t, MUTEX_BIT + m, true);
                }
                advance(st, t);
            }
            StmtKind::ThreadCreate { target, func, arg } => {
                let a = match arg {
                    Some(e) => Some(self.eval(st, t, e)?),
                    None => None,
                };
                let f = self.ast.function(func).expect("thread function exists");
                let scope = match (&f.param, a) {
                    (Some(p), Some(v)) => vec![(p.as_str(), v)],
                    (Some(p), None) => vec![(p.as_str(), 0)],
                    _ => Vec::new(),
                };
                let child = st.threads.len();
                st.threads.push(Thread {
                    frames: vec![Frame { block: &f.body, idx: 0, iters: 0, scope }],
                    finished: false,
                    joined: false,
                });
                Self::propagate(st, t, child, false);
                self.write_var(st, t, target, child as i32)?;
                advance(st, t);
            }
            StmtKind::ThreadJoin(v) => {
                let h = self.read_var(st, t, v)?;
                if let Some(c) = self.live_child(st, t, h) {
                    Self::propagate(st, c, t, false);
                    st.threads[c].joined = true;
                }
                advance(st, t);
            }
            StmtKind::Nondet(_) => unreachable!("handled by successors"),
            StmtKind::Alloc { target, size } => {
                let n = self.eval(st, t, size)?;
                let h = if (0..=65536).contains(&n) {
                    st.heap.push((vec![0; n as usize], false));
                    st.heap.len() as i32
                } else {
                    0
                };
                self.write_var(st, t, target, h)?;
                advance(st, t);
            }
            StmtKind::Free(v) => {
                let h = self.read_var(st, t, v)?;
                if h != 0 {
                    if h < 1 || h as usize > st.heap.len() {
                        self.report(BugKind::OutOfBounds)?;
                    } else if st.heap[h as usize - 1].1 {
                        self.report(BugKind::DoubleFree)?;
                    } else {
                        for i in 0..st.heap[h as usize - 1].0.len() {
                            self.access(st, t, (h as usize, i), true)?;
                        }
                        st.heap[h as usize - 1].1 = true;
                    }
                }
                advance(st, t);
            }
            StmtKind::Assert(e) => {
                if self.eval(st, t, e)? == 0 {
                    self.report(BugKind::AssertViolation)?;
                }
                advance(st, t);
            }
            StmtKind::Assume(e) => {
                if self.eval(st, t, e)? == 0 {
                    return Ok(false);
                }
                advance(st, t);
            }
            StmtKind::ReachError => {
                self.report(BugKind::ReachError)?;
                advance(st, t);
            }
        }
        Ok(true)
    }
}

fn advance(st: &mut State<'_>, t: usize) {
    st.threads[t].frames.last_mut().unwrap().idx += 1;
}

/// Final globals and first bug of a single-threaded program fed `values`
/// in order (zeros once they run out).
pub fn run_sequential(ast: &Ast, props: Props, values: &[i32]) -> (Vec<i32>, Option<BugKind>) {
    let ex = Explorer::new(ast, props, &[0]);
    let mut st = ex.settle(ex.initial());
    let mut next = values.iter().copied();
    let mut steps = 0;
    loop {
        steps += 1;
        if steps > 100_000 {
            return (st.globals, None);
        }
        let Some(stmt) = ex.next_stmt(&st, 0) else {
            return match ex.ret(st.clone(), 0) {
                Step::Bug(k) => (st.globals, Some(k)),
                _ => (st.globals, None),
            };
        };
        let r = if let StmtKind::Nondet(name) = &stmt.kind {
            let v = next.next().unwrap_or(0);
            ex.write_var(&mut st, 0, name, v).map(|_| {
                advance(&mut st, 0);
                true
            })
        } else {
            assert!(!matches!(stmt.kind, StmtKind::ThreadCreate { .. }), "single-threaded programs only");
            ex.exec(&mut st, 0, stmt)
        };
        match r {
            Ok(true) => st = ex.settle(st),
            Ok(false) => return (st.globals, None),
            Err(k) => return (st.globals, Some(k)),
        }
    }
}

/// Static shape of a program, for deciding which tasks the oracle covers.
pub struct Shape {
    pub nondets: usize,
    pub creates: usize,
}

pub fn shape(ast: &Ast) -> Shape {
    fn walk(b: &Block, s: &mut Shape) {
        for st in &b.stmts {
            match &st.kind {
                StmtKind::Nondet(_) => s.nondets += 1,
                StmtKind::ThreadCreate { .. } => s.creates += 1,
                StmtKind::If { then_block, else_block, .. } => {
                    walk(then_block, s);
                    if let Some(e) = else_block {
                        walk(e, s);
                    }
                }
                StmtKind::While { body, .. } => walk(body, s),
                _ => {}
            }
        }
    }
    let mut s = Shape { nondets: 0, creates: 0 };
    for f in &ast.functions {
        walk(&f.body, &mut s);
    }
    s
}
