//! Name resolution and type checking.

use std::collections::{HashMap, HashSet};

use super::ast::*;
use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Array,
    Mutex,
}

struct Scopes<'a> {
    globals: &'a HashMap<&'a str, Ty>,
    blocks: Vec<HashSet<String>>,
}

impl Scopes<'_> {
    fn lookup(&self, name: &str) -> Option<Ty> {
        if self.blocks.iter().any(|b| b.contains(name)) {
            return Some(Ty::Int);
        }
        self.globals.get(name).copied()
    }
}

pub(crate) fn check(globals: &[GlobalDecl], functions: &[Function]) -> Result<usize, ParseError> {
    let mut global_tys: HashMap<&str, Ty> = HashMap::new();
    for g in globals {
        let ty = match g.kind {
            GlobalKind::Int => Ty::Int,
            GlobalKind::Array(_) => Ty::Array,
            GlobalKind::Mutex => Ty::Mutex,
        };
        if global_tys.insert(&g.name, ty).is_some() {
            return Err(ParseError::Duplicate { loc: g.loc, name: g.name.clone() });
        }
    }
    let mut funcs: HashMap<&str, &Function> = HashMap::new();
    for f in functions {
        if global_tys.contains_key(f.name.as_str()) || funcs.insert(&f.name, f).is_some() {
            return Err(ParseError::Duplicate { loc: f.loc, name: f.name.clone() });
        }
    }
    let main = functions
        .iter()
        .position(|f| f.name == "main")
        .ok_or_else(|| ParseError::Resolve { loc: SourceLoc::default(), name: "main".into() })?;
    if functions[main].param.is_some() {
        return Err(ParseError::Type {
            loc: functions[main].loc,
            message: "`main` takes no parameters".into(),
        });
    }

    // Globals must be declared before the functions that use them.
    let mut visible: HashMap<&str, Ty> = HashMap::new();
    let mut gi = 0;
    for f in functions {
        while gi < globals.len() && globals[gi].loc < f.loc {
            let g = &globals[gi];
            visible.insert(&g.name, global_tys[g.name.as_str()]);
            gi += 1;
        }
        let mut scopes = Scopes { globals: &visible, blocks: vec![HashSet::new()] };
        if let Some(p) = &f.param {
            scopes.blocks[0].insert(p.clone());
        }
        check_block(&f.body, &mut scopes, &funcs, false)?;
    }

    if let Some((loc, name)) = thread_cycle(functions) {
        return Err(ParseError::Recursion { loc, name });
    }
    Ok(main)
}

fn check_block(
    block: &Block,
    scopes: &mut Scopes<'_>,
    funcs: &HashMap<&str, &Function>,
    push: bool,
) -> Result<(), ParseError> {
    if push {
        scopes.blocks.push(HashSet::new());
    }
    for stmt in &block.stmts {
        check_stmt(stmt, scopes, funcs)?;
    }
    if push {
        scopes.blocks.pop();
    }
    Ok(())
}

fn expect_ty(scopes: &Scopes<'_>, name: &str, want: Ty, loc: SourceLoc, what: &str) -> Result<(), ParseError> {
    match scopes.lookup(name) {
        None => Err(ParseError::Resolve { loc, name: name.to_string() }),
        Some(ty) if ty == want => Ok(()),
        Some(ty) => Err(ParseError::Type {
            loc,
            message: format!("{what} `{name}` has type {}", ty_name(ty)),
        }),
    }
}

fn ty_name(ty: Ty) -> &'static str {
    match ty {
        Ty::Int => "int",
        Ty::Array => "int array",
        Ty::Mutex => "mutex",
    }
}

fn check_indexable(scopes: &Scopes<'_>, name: &str, loc: SourceLoc) -> Result<(), ParseError> {
    match scopes.lookup(name) {
        None => Err(ParseError::Resolve { loc, name: name.to_string() }),
        Some(Ty::Mutex) => Err(ParseError::Type {
            loc,
            message: format!("mutex `{name}` cannot be indexed"),
        }),
        Some(_) => Ok(()),
    }
}

fn check_stmt(
    stmt: &Stmt,
    scopes: &mut Scopes<'_>,
    funcs: &HashMap<&str, &Function>,
) -> Result<(), ParseError> {
    let loc = stmt.loc;
    match &stmt.kind {
        StmtKind::Assign { target, value } => {
            check_expr(value, scopes)?;
            match target {
                LValue::Var(name) => expect_ty(scopes, name, Ty::Int, loc, "assignment target")?,
                LValue::Index(name, idx) => {
                    check_indexable(scopes, name, loc)?;
                    check_expr(idx, scopes)?;
                }
            }
        }
        StmtKind::Local { name, init } => {
            if let Some(e) = init {
                check_expr(e, scopes)?;
            }
            let top = scopes.blocks.last_mut().expect("scope stack is never empty");
            if !top.insert(name.clone()) {
                return Err(ParseError::Duplicate { loc, name: name.clone() });
            }
        }
        StmtKind::If { cond, then_block, else_block } => {
            check_expr(cond, scopes)?;
            check_block(then_block, scopes, funcs, true)?;
            if let Some(b) = else_block {
                check_block(b, scopes, funcs, true)?;
            }
        }
        StmtKind::While { cond, body } => {
            check_expr(cond, scopes)?;
            check_block(body, scopes, funcs, true)?;
        }
        StmtKind::Lock(m) | StmtKind::Unlock(m) => expect_ty(scopes, m, Ty::Mutex, loc, "lock operand")?,
        StmtKind::ThreadCreate { target, func, arg } => {
            let Some(f) = funcs.get(func.as_str()) else {
                return Err(ParseError::Resolve { loc, name: func.clone() });
            };
            if let Some(e) = arg {
                check_expr(e, scopes)?;
            }
            if f.param.is_some() != arg.is_some() {
                return Err(ParseError::Type {
                    loc,
                    message: format!(
                        "`{func}` takes {} argument(s)",
                        usize::from(f.param.is_some())
                    ),
                });
            }
            expect_ty(scopes, target, Ty::Int, loc, "thread id target")?;
        }
        StmtKind::ThreadJoin(v) => expect_ty(scopes, v, Ty::Int, loc, "thread_join operand")?,
        StmtKind::Nondet(v) => expect_ty(scopes, v, Ty::Int, loc, "nondet target")?,
        StmtKind::Alloc { target, size } => {
            check_expr(size, scopes)?;
            expect_ty(scopes, target, Ty::Int, loc, "alloc target")?;
        }
        StmtKind::Free(v) => expect_ty(scopes, v, Ty::Int, loc, "free operand")?,
        StmtKind::Assert(e) | StmtKind::Assume(e) => check_expr(e, scopes)?,
        StmtKind::ReachError => {}
    }
    Ok(())
}

fn check_expr(expr: &Expr, scopes: &Scopes<'_>) -> Result<(), ParseError> {
    match &expr.kind {
        ExprKind::Int(_) => Ok(()),
        ExprKind::Var(name) => expect_ty(scopes, name, Ty::Int, expr.loc, "operand"),
        ExprKind::Index(name, idx) => {
            check_indexable(scopes, name, expr.loc)?;
            check_expr(idx, scopes)
        }
        ExprKind::Unary(_, e) => check_expr(e, scopes),
        ExprKind::Binary(_, l, r) => {
            check_expr(l, scopes)?;
            check_expr(r, scopes)
        }
    }
}

/// Thread-creation graph edges: function -> functions it spawns.
pub(crate) fn spawn_edges(f: &Function) -> Vec<(&str, SourceLoc)> {
    fn walk<'a>(block: &'a Block, out: &mut Vec<(&'a str, SourceLoc)>) {
        for s in &block.stmts {
            match &s.kind {
                StmtKind::ThreadCreate { func, .. } => out.push((func, s.loc)),
                StmtKind::If { then_block, else_block, .. } => {
                    walk(then_block, out);
                    if let Some(b) = else_block {
                        walk(b, out);
                    }
                }
                StmtKind::While { body, .. } => walk(body, out),
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&f.body, &mut out);
    out
}

/// Returns the location of a thread-create that closes a cycle, if any.
pub(crate) fn thread_cycle(functions: &[Function]) -> Option<(SourceLoc, String)> {
    let index: HashMap<&str, usize> =
        functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; functions.len()];

    fn dfs(
        i: usize,
        functions: &[Function],
        index: &HashMap<&str, usize>,
        state: &mut [u8],
    ) -> Option<(SourceLoc, String)> {
        state[i] = 1;
        for (callee, loc) in spawn_edges(&functions[i]) {
            let Some(&j) = index.get(callee) else { continue };
            match state[j] {
                1 => return Some((loc, callee.to_string())),
                0 => {
                    if let Some(hit) = dfs(j, functions, index, state) {
                        return Some(hit);
                    }
                }
                _ => {}
            }
        }
        state[i] = 2;
        None
    }

    (0..functions.len()).find_map(|i| {
        if state[i] == 0 {
            dfs(i, functions, &index, &mut state)
        } else {
            None
        }
    })
}
