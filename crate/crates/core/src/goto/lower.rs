use std::collections::HashMap;

use super::*;
use crate::lang::{self, Ast, Block, Expr, ExprKind, GlobalKind, LValue, StmtKind};

#[derive(Clone, Copy)]
enum Global {
    Scalar(u32),
    Array(u32, u32),
    Mutex(u32),
}

struct Ctx<'a> {
    globals: &'a HashMap<String, Global>,
    funcs: &'a HashMap<&'a str, FuncId>,
    scopes: Vec<HashMap<String, u32>>,
    locals: Vec<String>,
    body: Vec<Instruction>,
    loops: Vec<LoopRegion>,
    next_id: &'a mut u32,
}

/// Lowers structured control flow to COND_GOTO/GOTO form.
///
/// `while (c) B` becomes `head: COND_GOTO !c, exit; B; GOTO head; exit:` and
/// `if (c) A else B` becomes `COND_GOTO !c, else; A; GOTO end; else: B; end:`.
pub fn lower(ast: &Ast, file: &str) -> Result<GotoProgram, LoweringError> {
    if let Some((loc, name)) = lang::thread_cycle(&ast.functions) {
        return Err(LoweringError::Recursion { loc, name });
    }

    let mut layout = GlobalLayout::default();
    let mut mutexes = Vec::new();
    let mut globals = HashMap::new();
    for g in &ast.globals {
        let entry = match g.kind {
            GlobalKind::Int => {
                let addr = layout.size;
                layout.vars.push(GlobalVar { name: g.name.clone(), addr, len: None });
                layout.size += 1;
                Global::Scalar(addr)
            }
            GlobalKind::Array(n) => {
                let addr = layout.size;
                layout.vars.push(GlobalVar { name: g.name.clone(), addr, len: Some(n) });
                layout.size += n;
                Global::Array(addr, n)
            }
            GlobalKind::Mutex => {
                mutexes.push(g.name.clone());
                Global::Mutex(mutexes.len() as u32 - 1)
            }
        };
        globals.insert(g.name.clone(), entry);
    }

    let funcs: HashMap<&str, FuncId> =
        ast.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();

    let mut next_id = 0u32;
    let mut functions = Vec::with_capacity(ast.functions.len());
    for f in &ast.functions {
        let mut ctx = Ctx {
            globals: &globals,
            funcs: &funcs,
            scopes: vec![HashMap::new()],
            locals: Vec::new(),
            body: Vec::new(),
            loops: Vec::new(),
            next_id: &mut next_id,
        };
        if let Some(p) = &f.param {
            ctx.declare(p);
        }
        ctx.block(&f.body, false);
        let end_loc = f.body.stmts.last().map(|s| s.loc).unwrap_or(f.loc);
        ctx.emit(InstrKind::Return, end_loc);
        functions.push(GotoFunction {
            name: f.name.clone(),
            has_param: f.param.is_some(),
            locals: ctx.locals,
            body: ctx.body,
            loops: ctx.loops,
        });
    }

    Ok(GotoProgram {
        file: file.to_string(),
        globals: layout,
        mutexes,
        functions,
        entry: ast.main,
    })
}

impl Ctx<'_> {
    fn emit(&mut self, kind: InstrKind, loc: lang::SourceLoc) -> usize {
        let id = *self.next_id;
        *self.next_id += 1;
        self.body.push(Instruction { kind, loc, id });
        self.body.len() - 1
    }

    fn patch(&mut self, at: usize, target: usize) {
        *self.body[at].kind.jump_target_mut().expect("patching a jump") = target;
    }

    fn declare(&mut self, name: &str) -> u32 {
        let slot = self.locals.len() as u32;
        self.locals.push(name.to_string());
        self.scopes.last_mut().unwrap().insert(name.to_string(), slot);
        slot
    }

    fn var(&self, name: &str) -> VarRef {
        for scope in self.scopes.iter().rev() {
            if let Some(&slot) = scope.get(name) {
                return VarRef::Local(slot);
            }
        }
        match self.globals.get(name) {
            Some(Global::Scalar(addr)) => VarRef::Global(*addr),
            _ => unreachable!("checked program: `{name}` is an int variable"),
        }
    }

    fn mutex(&self, name: &str) -> u32 {
        match self.globals.get(name) {
            Some(Global::Mutex(id)) => *id,
            _ => unreachable!("checked program: `{name}` is a mutex"),
        }
    }

    fn is_local(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains_key(name))
    }

    fn indexed(&self, name: &str, index: GExpr) -> Place {
        if !self.is_local(name) {
            if let Some(Global::Array(base, len)) = self.globals.get(name) {
                return Place::Array { base: *base, len: *len, index: Box::new(index) };
            }
        }
        Place::Heap { handle: self.var(name), index: Box::new(index) }
    }

    fn expr(&self, e: &Expr) -> GExpr {
        match &e.kind {
            ExprKind::Int(v) => GExpr::Const(*v),
            ExprKind::Var(name) => GExpr::Load(Place::Var(self.var(name))),
            ExprKind::Index(name, idx) => GExpr::Load(self.indexed(name, self.expr(idx))),
            ExprKind::Unary(op, inner) => GExpr::Unary(*op, Box::new(self.expr(inner))),
            ExprKind::Binary(op, l, r) => {
                GExpr::Binary(*op, Box::new(self.expr(l)), Box::new(self.expr(r)))
            }
        }
    }

    fn block(&mut self, block: &Block, scoped: bool) {
        if scoped {
            self.scopes.push(HashMap::new());
        }
        for stmt in &block.stmts {
            self.stmt(stmt);
        }
        if scoped {
            self.scopes.pop();
        }
    }

    fn stmt(&mut self, stmt: &lang::Stmt) {
        let loc = stmt.loc;
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                let value = self.expr(value);
                let target = match target {
                    LValue::Var(name) => Place::Var(self.var(name)),
                    LValue::Index(name, idx) => {
                        let idx = self.expr(idx);
                        self.indexed(name, idx)
                    }
                };
                self.emit(InstrKind::Assign { target, value }, loc);
            }
            StmtKind::Local { name, init } => {
                // The initializer is evaluated before the new name is in scope.
                let value = init.as_ref().map(|e| self.expr(e)).unwrap_or(GExpr::Const(0));
                let slot = self.declare(name);
                self.emit(
                    InstrKind::Assign { target: Place::Var(VarRef::Local(slot)), value },
                    loc,
                );
            }
            StmtKind::If { cond, then_block, else_block } => {
                let test = self.emit(
                    InstrKind::CondGoto { cond: self.expr(cond).negated(), target: usize::MAX },
                    loc,
                );
                self.block(then_block, true);
                match else_block {
                    Some(els) => {
                        let skip = self.emit(InstrKind::Goto(usize::MAX), loc);
                        let else_start = self.body.len();
                        self.patch(test, else_start);
                        self.block(els, true);
                        let end = self.body.len();
                        self.patch(skip, end);
                    }
                    None => {
                        let end = self.body.len();
                        self.patch(test, end);
                    }
                }
            }
            StmtKind::While { cond, body } => {
                let head = self.emit(
                    InstrKind::CondGoto { cond: self.expr(cond).negated(), target: usize::MAX },
                    loc,
                );
                self.block(body, true);
                let back = self.emit(InstrKind::Goto(head), loc);
                let exit = self.body.len();
                self.patch(head, exit);
                self.loops.push(LoopRegion { head, back });
            }
            StmtKind::Lock(m) => {
                let id = self.mutex(m);
                self.emit(InstrKind::Lock(id), loc);
            }
            StmtKind::Unlock(m) => {
                let id = self.mutex(m);
                self.emit(InstrKind::Unlock(id), loc);
            }
            StmtKind::ThreadCreate { target, func, arg } => {
                let kind = InstrKind::ThreadCreate {
                    target: self.var(target),
                    func: self.funcs[func.as_str()],
                    arg: arg.as_ref().map(|a| self.expr(a)),
                };
                self.emit(kind, loc);
            }
            StmtKind::ThreadJoin(t) => {
                let v = self.var(t);
                self.emit(InstrKind::ThreadJoin(v), loc);
            }
            StmtKind::Nondet(t) => {
                let v = self.var(t);
                self.emit(InstrKind::Nondet(v), loc);
            }
            StmtKind::Alloc { target, size } => {
                let kind = InstrKind::Alloc { target: self.var(target), size: self.expr(size) };
                self.emit(kind, loc);
            }
            StmtKind::Free(p) => {
                let v = self.var(p);
                self.emit(InstrKind::Free(v), loc);
            }
            StmtKind::Assert(e) => {
                let e = self.expr(e);
                self.emit(InstrKind::Assert(e), loc);
            }
            StmtKind::Assume(e) => {
                let e = self.expr(e);
                self.emit(InstrKind::Assume(e), loc);
            }
            StmtKind::ReachError => {
                self.emit(InstrKind::ReachError, loc);
            }
        }
    }
}
