use std::collections::HashMap;

use super::*;

/// Number of loop-body copies kept by [`unwind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnwindBound {
    pub k: u32,
}

impl Default for UnwindBound {
    fn default() -> Self {
        UnwindBound { k: 20 }
    }
}

/// Replaces every loop with `k` guarded copies of its body followed by an
/// UNWIND_ASSUME of the exit condition. The result is loop-free.
///
/// Copies keep the instruction ids of the original so coverage and lockstep
/// replay treat them as the same program point.
pub fn unwind(program: &GotoProgram, bound: UnwindBound) -> GotoProgram {
    let mut out = program.clone();
    for f in &mut out.functions {
        if f.loops.is_empty() {
            continue;
        }
        let mut u = Unwinder {
            src: &f.body,
            heads: f.loops.iter().map(|l| (l.head, l.back)).collect(),
            k: bound.k,
            out: Vec::new(),
            labels: Vec::new(),
            fixups: Vec::new(),
            frames: Vec::new(),
        };
        u.emit_range(0, f.body.len(), HashMap::new());
        for (at, label) in u.fixups {
            let target = u.labels[label].expect("every label is bound");
            *u.out[at].kind.jump_target_mut().unwrap() = target;
        }
        f.body = u.out;
        f.loops.clear();
    }
    out
}

type Label = usize;

struct Frame {
    lo: usize,
    hi: usize,
    local: HashMap<usize, Label>,
    overrides: HashMap<usize, Label>,
}

struct Unwinder<'a> {
    src: &'a [Instruction],
    heads: HashMap<usize, usize>,
    k: u32,
    out: Vec<Instruction>,
    labels: Vec<Option<usize>>,
    fixups: Vec<(usize, Label)>,
    frames: Vec<Frame>,
}

impl Unwinder<'_> {
    fn new_label(&mut self) -> Label {
        self.labels.push(None);
        self.labels.len() - 1
    }

    fn bind(&mut self, label: Label) {
        self.labels[label] = Some(self.out.len());
    }

    /// Label for original index `t`, looked up from the innermost range out.
    fn label_for(&mut self, t: usize) -> Label {
        for fi in (0..self.frames.len()).rev() {
            if let Some(&l) = self.frames[fi].overrides.get(&t) {
                return l;
            }
            let f = &self.frames[fi];
            if t >= f.lo && t <= f.hi {
                if let Some(&l) = f.local.get(&t) {
                    return l;
                }
                let l = self.new_label();
                self.frames[fi].local.insert(t, l);
                return l;
            }
        }
        unreachable!("jump to {t} leaves every enclosing range")
    }

    fn bind_local(&mut self, i: usize) {
        let l = match self.frames.last().unwrap().local.get(&i) {
            Some(&l) => l,
            None => {
                let l = self.new_label();
                self.frames.last_mut().unwrap().local.insert(i, l);
                l
            }
        };
        self.bind(l);
    }

    fn push(&mut self, ins: &Instruction) {
        let mut ins = ins.clone();
        if let Some(t) = ins.kind.jump_target() {
            let l = self.label_for(t);
            self.fixups.push((self.out.len(), l));
            *ins.kind.jump_target_mut().unwrap() = usize::MAX;
        }
        self.out.push(ins);
    }

    /// Emits original instructions `lo..hi`; index `hi` is bound at the end.
    fn emit_range(&mut self, lo: usize, hi: usize, overrides: HashMap<usize, Label>) {
        self.frames.push(Frame { lo, hi, local: HashMap::new(), overrides });
        let mut i = lo;
        while i < hi {
            self.bind_local(i);
            match self.heads.get(&i).copied() {
                Some(back) => {
                    self.emit_loop(i, back);
                    i = back + 1;
                }
                None => {
                    self.push(&self.src[i]);
                    i += 1;
                }
            }
        }
        self.bind_local(hi);
        self.frames.pop();
    }

    fn emit_loop(&mut self, head: usize, back: usize) {
        let exit = self.new_label();
        let head_ins = &self.src[head];
        let InstrKind::CondGoto { cond, .. } = &head_ins.kind else {
            unreachable!("loop head is a COND_GOTO")
        };
        let cond = cond.clone();
        for _ in 0..self.k {
            let next = self.new_label();
            self.fixups.push((self.out.len(), exit));
            self.out.push(Instruction {
                kind: InstrKind::CondGoto { cond: cond.clone(), target: usize::MAX },
                loc: head_ins.loc,
                id: head_ins.id,
            });
            // The back-edge GOTO at `back` is dropped: the body range ends
            // there and falls through into the next copy.
            let overrides = HashMap::from([(head, next), (back + 1, exit)]);
            self.emit_range(head + 1, back, overrides);
            // Anything bound to `back` now sits where `next` belongs.
            self.bind(next);
        }
        // The loop would exit iff the negated head condition holds.
        self.out.push(Instruction {
            kind: InstrKind::UnwindAssume(cond),
            loc: head_ins.loc,
            id: head_ins.id,
        });
        self.bind(exit);
    }
}
