use std::fmt::Write;

use super::ast::*;

const INDENT: &str = "    ";

pub(crate) fn print_ast(ast: &Ast) -> String {
    let mut out = String::new();
    for g in &ast.globals {
        match g.kind {
            GlobalKind::Int => writeln!(out, "int {};", g.name),
            GlobalKind::Array(n) => writeln!(out, "int {}[{}];", g.name, n),
            GlobalKind::Mutex => writeln!(out, "mutex {};", g.name),
        }
        .unwrap();
    }
    for f in &ast.functions {
        if !out.is_empty() {
            out.push('\n');
        }
        match &f.param {
            Some(p) => writeln!(out, "void {}(int {}) {{", f.name, p),
            None => writeln!(out, "void {}() {{", f.name),
        }
        .unwrap();
        print_stmts(&f.body, 1, &mut out);
        out.push_str("}\n");
    }
    out
}

fn print_stmts(block: &Block, depth: usize, out: &mut String) {
    for stmt in &block.stmts {
        print_stmt(stmt, depth, out);
    }
}

fn print_block_tail(block: &Block, depth: usize, out: &mut String) {
    out.push_str("{\n");
    print_stmts(block, depth + 1, out);
    out.push_str(&INDENT.repeat(depth));
    out.push('}');
}

fn print_stmt(stmt: &Stmt, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    out.push_str(&pad);
    match &stmt.kind {
        StmtKind::Assign { target, value } => {
            match target {
                LValue::Var(v) => out.push_str(v),
                LValue::Index(v, idx) => {
                    let _ = write!(out, "{}[{}]", v, expr_to_string(idx));
                }
            }
            let _ = write!(out, " = {};", expr_to_string(value));
        }
        StmtKind::Local { name, init } => match init {
            Some(e) => {
                let _ = write!(out, "int {} = {};", name, expr_to_string(e));
            }
            None => {
                let _ = write!(out, "int {};", name);
            }
        },
        StmtKind::If { cond, then_block, else_block } => {
            let _ = write!(out, "if ({}) ", expr_to_string(cond));
            print_block_tail(then_block, depth, out);
            if let Some(b) = else_block {
                out.push_str(" else ");
                print_block_tail(b, depth, out);
            }
        }
        StmtKind::While { cond, body } => {
            let _ = write!(out, "while ({}) ", expr_to_string(cond));
            print_block_tail(body, depth, out);
        }
        StmtKind::Lock(m) => {
            let _ = write!(out, "lock({m});");
        }
        StmtKind::Unlock(m) => {
            let _ = write!(out, "unlock({m});");
        }
        StmtKind::ThreadCreate { target, func, arg } => match arg {
            Some(a) => {
                let _ = write!(out, "{target} = thread_create({func}, {});", expr_to_string(a));
            }
            None => {
                let _ = write!(out, "{target} = thread_create({func});");
            }
        },
        StmtKind::ThreadJoin(t) => {
            let _ = write!(out, "thread_join({t});");
        }
        StmtKind::Nondet(v) => {
            let _ = write!(out, "{v} = nondet();");
        }
        StmtKind::Alloc { target, size } => {
            let _ = write!(out, "{target} = alloc({});", expr_to_string(size));
        }
        StmtKind::Free(v) => {
            let _ = write!(out, "free({v});");
        }
        StmtKind::Assert(e) => {
            let _ = write!(out, "assert({});", expr_to_string(e));
        }
        StmtKind::Assume(e) => {
            let _ = write!(out, "assume({});", expr_to_string(e));
        }
        StmtKind::ReachError => out.push_str("reach_error();"),
    }
    out.push('\n');
}

/// Minimal-parenthesis rendering that reparses to the same tree.
pub fn expr_to_string(expr: &Expr) -> String {
    let mut s = String::new();
    write_expr(expr, 0, &mut s);
    s
}

// Unary operators bind tighter than every binary operator.
const UNARY_PREC: u8 = 7;

fn write_expr(expr: &Expr, min_prec: u8, out: &mut String) {
    match &expr.kind {
        ExprKind::Int(v) => {
            let _ = write!(out, "{v}");
        }
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Index(name, idx) => {
            out.push_str(name);
            out.push('[');
            write_expr(idx, 0, out);
            out.push(']');
        }
        ExprKind::Unary(op, inner) => {
            let wrap = min_prec > UNARY_PREC;
            if wrap {
                out.push('(');
            }
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            // `- -x` would lex fine, but `-(-x)` reads better.
            if matches!(inner.kind, ExprKind::Unary(..)) {
                out.push('(');
                write_expr(inner, 0, out);
                out.push(')');
            } else {
                write_expr(inner, UNARY_PREC + 1, out);
            }
            if wrap {
                out.push(')');
            }
        }
        ExprKind::Binary(op, l, r) => {
            let p = op.precedence();
            let wrap = p < min_prec;
            if wrap {
                out.push('(');
            }
            write_expr(l, p, out);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(r, p + 1, out);
            if wrap {
                out.push(')');
            }
        }
    }
}
