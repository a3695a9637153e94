use std::fmt::Write;

use super::*;

impl GotoProgram {
    /// Human-readable listing, one instruction per line:
    /// `  3: ASSIGN x = x + 1  // file.mcl:7`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (fi, f) in self.functions.iter().enumerate() {
            if fi > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "function {}:", f.name);
            for (i, ins) in f.body.iter().enumerate() {
                let ops = self.operands(f, &ins.kind);
                let kind = ins.kind.name();
                let text = if ops.is_empty() { kind.to_string() } else { format!("{kind} {ops}") };
                let _ = writeln!(out, "{i:>4}: {text}  // {}:{}", self.file, ins.loc.line);
            }
        }
        out
    }

    pub fn var_name(&self, f: &GotoFunction, v: VarRef) -> String {
        match v {
            VarRef::Global(a) => self.globals.name_of(a),
            VarRef::Local(s) => f.locals.get(s as usize).cloned().unwrap_or_else(|| format!("l{s}")),
        }
    }

    pub fn expr_string(&self, f: &GotoFunction, e: &GExpr) -> String {
        let mut s = String::new();
        self.write_expr(f, e, 0, &mut s);
        s
    }

    fn place_string(&self, f: &GotoFunction, p: &Place) -> String {
        match p {
            Place::Var(v) => self.var_name(f, *v),
            Place::Array { base, index, .. } => {
                let name = self
                    .globals
                    .vars
                    .iter()
                    .find(|g| g.addr == *base)
                    .map(|g| g.name.clone())
                    .unwrap_or_else(|| format!("g{base}"));
                format!("{name}[{}]", self.expr_string(f, index))
            }
            Place::Heap { handle, index } => {
                format!("{}[{}]", self.var_name(f, *handle), self.expr_string(f, index))
            }
        }
    }

    fn write_expr(&self, f: &GotoFunction, e: &GExpr, min_prec: u8, out: &mut String) {
        match e {
            GExpr::Const(v) => {
                let _ = write!(out, "{v}");
            }
            GExpr::Load(p) => out.push_str(&self.place_string(f, p)),
            GExpr::Unary(op, inner) => {
                out.push(match op {
                    UnOp::Neg => '-',
                    UnOp::Not => '!',
                });
                let wrap = !matches!(**inner, GExpr::Const(_) | GExpr::Load(_));
                if wrap {
                    out.push('(');
                }
                self.write_expr(f, inner, 0, out);
                if wrap {
                    out.push(')');
                }
            }
            GExpr::Binary(op, l, r) => {
                let p = op.precedence();
                if p < min_prec {
                    out.push('(');
                }
                self.write_expr(f, l, p, out);
                let _ = write!(out, " {} ", op.symbol());
                self.write_expr(f, r, p + 1, out);
                if p < min_prec {
                    out.push(')');
                }
            }
        }
    }

    fn operands(&self, f: &GotoFunction, kind: &InstrKind) -> String {
        match kind {
            InstrKind::Assign { target, value } => {
                format!("{} = {}", self.place_string(f, target), self.expr_string(f, value))
            }
            InstrKind::CondGoto { cond, target } => {
                format!("{} -> {target}", self.expr_string(f, cond))
            }
            InstrKind::Goto(t) => format!("-> {t}"),
            InstrKind::Assert(e) | InstrKind::Assume(e) | InstrKind::UnwindAssume(e) => {
                self.expr_string(f, e)
            }
            InstrKind::Lock(m) | InstrKind::Unlock(m) => self
                .mutexes
                .get(*m as usize)
                .cloned()
                .unwrap_or_else(|| format!("m{m}")),
            InstrKind::ThreadCreate { target, func, arg } => {
                let callee = &self.functions[*func].name;
                match arg {
                    Some(a) => format!("{} = {callee}({})", self.var_name(f, *target), self.expr_string(f, a)),
                    None => format!("{} = {callee}()", self.var_name(f, *target)),
                }
            }
            InstrKind::ThreadJoin(v) | InstrKind::Nondet(v) | InstrKind::Free(v) => self.var_name(f, *v),
            InstrKind::Alloc { target, size } => {
                format!("{} = {}", self.var_name(f, *target), self.expr_string(f, size))
            }
            InstrKind::ReachError
            | InstrKind::Return
            | InstrKind::DelayPoint
            | InstrKind::ThreadAdd
            | InstrKind::ThreadRelease => String::new(),
        }
    }
}
