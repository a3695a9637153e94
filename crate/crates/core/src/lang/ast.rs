//! Syntax tree for MCL programs.

use std::fmt;

use serde::{Deserialize, Serialize};

/// 1-based line/column position in a source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLoc {
    pub line: u32,
    pub column: u32,
}

impl SourceLoc {
    pub const fn new(line: u32, column: u32) -> Self {
        SourceLoc { line, column }
    }
}

impl Default for SourceLoc {
    fn default() -> Self {
        SourceLoc::new(1, 1)
    }
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlobalKind {
    Int,
    Array(u32),
    Mutex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDecl {
    pub name: String,
    pub kind: GlobalKind,
    pub loc: SourceLoc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub param: Option<String>,
    pub body: Block,
    pub loc: SourceLoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub loc: SourceLoc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LValue {
    Var(String),
    Index(String, Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Assign { target: LValue, value: Expr },
    Local { name: String, init: Option<Expr> },
    If { cond: Expr, then_block: Block, else_block: Option<Block> },
    While { cond: Expr, body: Block },
    Lock(String),
    Unlock(String),
    ThreadCreate { target: String, func: String, arg: Option<Expr> },
    ThreadJoin(String),
    Nondet(String),
    Alloc { target: String, size: Expr },
    Free(String),
    Assert(Expr),
    Assume(Expr),
    ReachError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter. All binary operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    pub loc: SourceLoc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    Int(i32),
    Var(String),
    Index(String, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn new(kind: ExprKind, loc: SourceLoc) -> Self {
        Expr { kind, loc }
    }
}

/// A parsed and checked MCL program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<Function>,
    /// Index of `main` in `functions`.
    pub main: usize,
}

impl Ast {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// Copy of the tree with every location reset, for structural comparison.
    pub fn without_locs(&self) -> Ast {
        let mut ast = self.clone();
        for g in &mut ast.globals {
            g.loc = SourceLoc::default();
        }
        for f in &mut ast.functions {
            f.loc = SourceLoc::default();
            clear_block(&mut f.body);
        }
        ast
    }
}

fn clear_block(block: &mut Block) {
    for stmt in &mut block.stmts {
        stmt.loc = SourceLoc::default();
        match &mut stmt.kind {
            StmtKind::Assign { target, value } => {
                if let LValue::Index(_, idx) = target {
                    clear_expr(idx);
                }
                clear_expr(value);
            }
            StmtKind::Local { init, .. } => {
                if let Some(e) = init {
                    clear_expr(e);
                }
            }
            StmtKind::If { cond, then_block, else_block } => {
                clear_expr(cond);
                clear_block(then_block);
                if let Some(b) = else_block {
                    clear_block(b);
                }
            }
            StmtKind::While { cond, body } => {
                clear_expr(cond);
                clear_block(body);
            }
            StmtKind::ThreadCreate { arg, .. } => {
                if let Some(e) = arg {
                    clear_expr(e);
                }
            }
            StmtKind::Alloc { size, .. } => clear_expr(size),
            StmtKind::Assert(e) | StmtKind::Assume(e) => clear_expr(e),
            StmtKind::Lock(_)
            | StmtKind::Unlock(_)
            | StmtKind::ThreadJoin(_)
            | StmtKind::Nondet(_)
            | StmtKind::Free(_)
            | StmtKind::ReachError => {}
        }
    }
}

fn clear_expr(expr: &mut Expr) {
    expr.loc = SourceLoc::default();
    match &mut expr.kind {
        ExprKind::Int(_) | ExprKind::Var(_) => {}
        ExprKind::Index(_, e) | ExprKind::Unary(_, e) => clear_expr(e),
        ExprKind::Binary(_, l, r) => {
            clear_expr(l);
            clear_expr(r);
        }
    }
}
