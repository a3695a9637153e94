//! GOTO programs: the flat, control-flow-lowered form every later phase
//! consumes. One instruction is the unit of atomicity for the scheduler.

mod dump;
mod lower;
mod unwind;

use thiserror::Error;

use crate::lang::{BinOp, SourceLoc, UnOp};

pub use lower::lower;
pub use unwind::{unwind, UnwindBound};

pub type FuncId = usize;

/// A scalar storage location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarRef {
    /// Address in global memory.
    Global(u32),
    /// Slot in the current thread's frame.
    Local(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Place {
    Var(VarRef),
    /// Element of a global array starting at `base`.
    Array { base: u32, len: u32, index: Box<GExpr> },
    /// Element of a heap block whose handle is held in `handle`.
    Heap { handle: VarRef, index: Box<GExpr> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GExpr {
    Const(i32),
    Load(Place),
    Unary(UnOp, Box<GExpr>),
    Binary(BinOp, Box<GExpr>, Box<GExpr>),
}

impl GExpr {
    /// True if evaluating this expression touches global or heap memory.
    pub fn touches_shared(&self) -> bool {
        match self {
            GExpr::Const(_) => false,
            GExpr::Load(p) => p.touches_shared(),
            GExpr::Unary(_, e) => e.touches_shared(),
            GExpr::Binary(_, l, r) => l.touches_shared() || r.touches_shared(),
        }
    }

    pub fn negated(self) -> GExpr {
        GExpr::Unary(UnOp::Not, Box::new(self))
    }
}

impl Place {
    pub fn touches_shared(&self) -> bool {
        match self {
            Place::Var(VarRef::Local(_)) => false,
            Place::Var(VarRef::Global(_)) | Place::Array { .. } | Place::Heap { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InstrKind {
    Assign { target: Place, value: GExpr },
    /// Jump to `target` when `cond` is nonzero.
    CondGoto { cond: GExpr, target: usize },
    Goto(usize),
    Assert(GExpr),
    Assume(GExpr),
    Lock(u32),
    Unlock(u32),
    ThreadCreate { target: VarRef, func: FuncId, arg: Option<GExpr> },
    ThreadJoin(VarRef),
    Nondet(VarRef),
    Alloc { target: VarRef, size: GExpr },
    Free(VarRef),
    ReachError,
    Return,
    DelayPoint,
    ThreadAdd,
    ThreadRelease,
    /// Truncates the execution unless `cond` holds; marks loop-bound exhaustion.
    UnwindAssume(GExpr),
}

impl InstrKind {
    pub fn name(&self) -> &'static str {
        match self {
            InstrKind::Assign { .. } => "ASSIGN",
            InstrKind::CondGoto { .. } => "COND_GOTO",
            InstrKind::Goto(_) => "GOTO",
            InstrKind::Assert(_) => "ASSERT",
            InstrKind::Assume(_) => "ASSUME",
            InstrKind::Lock(_) => "LOCK",
            InstrKind::Unlock(_) => "UNLOCK",
            InstrKind::ThreadCreate { .. } => "TCREATE",
            InstrKind::ThreadJoin(_) => "TJOIN",
            InstrKind::Nondet(_) => "NONDET",
            InstrKind::Alloc { .. } => "ALLOC",
            InstrKind::Free(_) => "FREE",
            InstrKind::ReachError => "REACH_ERROR",
            InstrKind::Return => "RETURN",
            InstrKind::DelayPoint => "DELAY_POINT",
            InstrKind::ThreadAdd => "THREAD_ADD",
            InstrKind::ThreadRelease => "THREAD_RELEASE",
            InstrKind::UnwindAssume(_) => "UNWIND_ASSUME",
        }
    }

    pub fn jump_target(&self) -> Option<usize> {
        match self {
            InstrKind::CondGoto { target, .. } | InstrKind::Goto(target) => Some(*target),
            _ => None,
        }
    }

    pub fn jump_target_mut(&mut self) -> Option<&mut usize> {
        match self {
            InstrKind::CondGoto { target, .. } | InstrKind::Goto(target) => Some(target),
            _ => None,
        }
    }

    pub fn is_instrumentation(&self) -> bool {
        matches!(self, InstrKind::DelayPoint | InstrKind::ThreadAdd | InstrKind::ThreadRelease)
    }

    /// Instructions that count as a schedule step. Unconditional jumps and
    /// instrumentation are excluded so that a loop and its unwound copy
    /// advance the same counter in lockstep.
    pub fn is_counted(&self) -> bool {
        !matches!(self, InstrKind::Goto(_)) && !self.is_instrumentation()
    }

    /// Whether this instruction can observe or affect other threads. ALLOC
    /// counts because handle numbering depends on allocation order.
    pub fn is_visible(&self) -> bool {
        match self {
            InstrKind::Assign { target, value } => target.touches_shared() || value.touches_shared(),
            InstrKind::CondGoto { cond, .. }
            | InstrKind::Assert(cond)
            | InstrKind::Assume(cond)
            | InstrKind::UnwindAssume(cond) => cond.touches_shared(),
            InstrKind::Nondet(v) => matches!(v, VarRef::Global(_)),
            InstrKind::Lock(_)
            | InstrKind::Unlock(_)
            | InstrKind::ThreadCreate { .. }
            | InstrKind::ThreadJoin(_)
            | InstrKind::Alloc { .. }
            | InstrKind::Free(_)
            | InstrKind::Return => true,
            InstrKind::Goto(_)
            | InstrKind::ReachError
            | InstrKind::DelayPoint
            | InstrKind::ThreadAdd
            | InstrKind::ThreadRelease => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub kind: InstrKind,
    pub loc: SourceLoc,
    /// Stable identity used for edge coverage; copies made by unwinding share it.
    pub id: u32,
}

/// A structured loop left by lowering: `head` is the exit test, `back` the
/// jump back to it. The loop occupies `head..=back`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LoopRegion {
    pub head: usize,
    pub back: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GotoFunction {
    pub name: String,
    pub has_param: bool,
    /// Names of local slots; slot 0 is the parameter when `has_param`.
    pub locals: Vec<String>,
    pub body: Vec<Instruction>,
    pub loops: Vec<LoopRegion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalVar {
    pub name: String,
    pub addr: u32,
    /// `Some(n)` for arrays of `n` elements.
    pub len: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GlobalLayout {
    pub vars: Vec<GlobalVar>,
    pub size: u32,
}

impl GlobalLayout {
    pub fn name_of(&self, addr: u32) -> String {
        for v in &self.vars {
            let len = v.len.unwrap_or(1);
            if addr >= v.addr && addr < v.addr + len {
                return match v.len {
                    Some(_) => format!("{}[{}]", v.name, addr - v.addr),
                    None => v.name.clone(),
                };
            }
        }
        format!("g{addr}")
    }

    pub fn lookup(&self, name: &str) -> Option<&GlobalVar> {
        self.vars.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GotoProgram {
    /// Source file name, used for report locations.
    pub file: String,
    pub globals: GlobalLayout,
    pub mutexes: Vec<String>,
    pub functions: Vec<GotoFunction>,
    pub entry: FuncId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoweringError {
    #[error("{loc}: recursive thread creation through `{name}`")]
    Recursion { loc: SourceLoc, name: String },
}

impl GotoProgram {
    pub fn function(&self, name: &str) -> Option<&GotoFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.functions.iter().flat_map(|f| f.body.iter())
    }

    pub fn is_instrumented(&self) -> bool {
        self.instructions().any(|i| i.kind.is_instrumentation())
    }

    pub fn has_loops(&self) -> bool {
        self.functions.iter().any(|f| !f.loops.is_empty())
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(|f| f.body.len()).sum()
    }

    /// Checks the structural invariants every transformation must preserve.
    pub fn validate(&self) -> Result<(), String> {
        if self.entry >= self.functions.len() {
            return Err("entry function out of range".into());
        }
        for f in &self.functions {
            let Some(last) = f.body.last() else {
                return Err(format!("function `{}` is empty", f.name));
            };
            if last.kind != InstrKind::Return {
                return Err(format!("function `{}` does not end with RETURN", f.name));
            }
            for (i, ins) in f.body.iter().enumerate() {
                if let Some(t) = ins.kind.jump_target() {
                    if t >= f.body.len() {
                        return Err(format!("{}:{i}: jump target {t} out of range", f.name));
                    }
                }
                if let InstrKind::ThreadCreate { func, .. } = ins.kind {
                    if func >= self.functions.len() {
                        return Err(format!("{}:{i}: bad thread entry", f.name));
                    }
                }
            }
            for lp in &f.loops {
                if lp.head >= lp.back || lp.back >= f.body.len() {
                    return Err(format!("{}: malformed loop region {lp:?}", f.name));
                }
            }
        }
        Ok(())
    }
}
