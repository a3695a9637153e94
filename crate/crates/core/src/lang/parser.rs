use super::ast::*;
use super::lexer::{Keyword, Tok, Token};
use super::ParseError;

pub(crate) struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

/// Program as parsed, before name resolution picks out `main`.
pub(crate) struct RawProgram {
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<Function>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    pub fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, pos: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn loc(&self) -> SourceLoc {
        self.tokens[self.pos].loc
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax {
            loc: self.loc(),
            message: message.into(),
        })
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Kw(k) => format!("keyword `{k:?}`").to_lowercase(),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of file".to_string(),
        }
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<SourceLoc> {
        if self.is_sym(sym) {
            Ok(self.bump().loc)
        } else {
            self.error(format!("expected `{sym}`, found {}", Self::describe(self.peek())))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: Keyword) -> PResult<SourceLoc> {
        if *self.peek() == Tok::Kw(kw) {
            Ok(self.bump().loc)
        } else {
            self.error(format!(
                "expected `{}`, found {}",
                format!("{kw:?}").to_lowercase(),
                Self::describe(self.peek())
            ))
        }
    }

    fn ident(&mut self) -> PResult<(String, SourceLoc)> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let loc = self.bump().loc;
                Ok((name, loc))
            }
            other => self.error(format!("expected identifier, found {}", Self::describe(&other))),
        }
    }

    pub fn program(&mut self) -> PResult<RawProgram> {
        let mut globals = Vec::new();
        let mut functions = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::Kw(Keyword::Int) => {
                    let loc = self.bump().loc;
                    let (name, _) = self.ident()?;
                    let kind = if self.eat_sym("[") {
                        let size = match *self.peek() {
                            Tok::Int(v) if v >= 1 => v as u32,
                            _ => return self.error("array size must be a positive integer literal"),
                        };
                        self.bump();
                        self.expect_sym("]")?;
                        GlobalKind::Array(size)
                    } else {
                        GlobalKind::Int
                    };
                    self.expect_sym(";")?;
                    globals.push(GlobalDecl { name, kind, loc });
                }
                Tok::Kw(Keyword::Mutex) => {
                    let loc = self.bump().loc;
                    let (name, _) = self.ident()?;
                    self.expect_sym(";")?;
                    globals.push(GlobalDecl { name, kind: GlobalKind::Mutex, loc });
                }
                Tok::Kw(Keyword::Void) => functions.push(self.function()?),
                other => {
                    return self.error(format!(
                        "expected declaration or function, found {}",
                        Self::describe(other)
                    ))
                }
            }
        }
        Ok(RawProgram { globals, functions })
    }

    fn function(&mut self) -> PResult<Function> {
        let loc = self.expect_kw(Keyword::Void)?;
        let (name, _) = self.ident()?;
        self.expect_sym("(")?;
        let param = if *self.peek() == Tok::Kw(Keyword::Int) {
            self.bump();
            Some(self.ident()?.0)
        } else {
            None
        };
        self.expect_sym(")")?;
        let body = self.block()?;
        Ok(Function { name, param, body, loc })
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.eat_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.error("unterminated block, expected `}`");
            }
            stmts.push(self.stmt()?);
        }
        Ok(Block { stmts })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let loc = self.loc();
        let kind = match self.peek().clone() {
            Tok::Kw(Keyword::Int) => {
                self.bump();
                let (name, _) = self.ident()?;
                let init = if self.eat_sym("=") { Some(self.expr()?) } else { None };
                self.expect_sym(";")?;
                StmtKind::Local { name, init }
            }
            Tok::Kw(Keyword::If) => {
                self.bump();
                self.expect_sym("(")?;
                let cond = self.expr()?;
                self.expect_sym(")")?;
                let then_block = self.block()?;
                let else_block = if *self.peek() == Tok::Kw(Keyword::Else) {
                    self.bump();
                    Some(self.block()?)
                } else {
                    None
                };
                StmtKind::If { cond, then_block, else_block }
            }
            Tok::Kw(Keyword::While) => {
                self.bump();
                self.expect_sym("(")?;
                let cond = self.expr()?;
                self.expect_sym(")")?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Kw(kw @ (Keyword::Lock | Keyword::Unlock | Keyword::ThreadJoin | Keyword::Free)) => {
                self.bump();
                self.expect_sym("(")?;
                let (name, _) = self.ident()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                match kw {
                    Keyword::Lock => StmtKind::Lock(name),
                    Keyword::Unlock => StmtKind::Unlock(name),
                    Keyword::ThreadJoin => StmtKind::ThreadJoin(name),
                    _ => StmtKind::Free(name),
                }
            }
            Tok::Kw(kw @ (Keyword::Assert | Keyword::Assume)) => {
                self.bump();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                if kw == Keyword::Assert {
                    StmtKind::Assert(e)
                } else {
                    StmtKind::Assume(e)
                }
            }
            Tok::Kw(Keyword::ReachError) => {
                self.bump();
                self.expect_sym("(")?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                StmtKind::ReachError
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat_sym("[") {
                    let idx = self.expr()?;
                    self.expect_sym("]")?;
                    self.expect_sym("=")?;
                    let value = self.expr()?;
                    self.expect_sym(";")?;
                    StmtKind::Assign { target: LValue::Index(name, idx), value }
                } else {
                    self.expect_sym("=")?;
                    let kind = self.special_rhs(name)?;
                    self.expect_sym(";")?;
                    kind
                }
            }
            other => {
                return self.error(format!("expected statement, found {}", Self::describe(&other)))
            }
        };
        Ok(Stmt { kind, loc })
    }

    /// Right-hand side of `IDENT = ...`, which may be one of the special forms.
    fn special_rhs(&mut self, target: String) -> PResult<StmtKind> {
        match self.peek() {
            Tok::Kw(Keyword::ThreadCreate) => {
                self.bump();
                self.expect_sym("(")?;
                let (func, _) = self.ident()?;
                let arg = if self.eat_sym(",") { Some(self.expr()?) } else { None };
                self.expect_sym(")")?;
                Ok(StmtKind::ThreadCreate { target, func, arg })
            }
            Tok::Kw(Keyword::Nondet) => {
                self.bump();
                self.expect_sym("(")?;
                self.expect_sym(")")?;
                Ok(StmtKind::Nondet(target))
            }
            Tok::Kw(Keyword::Alloc) => {
                self.bump();
                self.expect_sym("(")?;
                let size = self.expr()?;
                self.expect_sym(")")?;
                Ok(StmtKind::Alloc { target, size })
            }
            _ => {
                let value = self.expr()?;
                Ok(StmtKind::Assign { target: LValue::Var(target), value })
            }
        }
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            if op.precedence() < min_prec {
                break;
            }
            let loc = self.bump().loc;
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), loc);
        }
        Ok(lhs)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Sym(s) = self.peek() else { return None };
        Some(match *s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    fn unary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        if self.eat_sym("-") {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(e)), loc));
        }
        if self.eat_sym("!") {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(e)), loc));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Int(v as i32), loc))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat_sym("[") {
                    let idx = self.expr()?;
                    self.expect_sym("]")?;
                    Ok(Expr::new(ExprKind::Index(name, Box::new(idx)), loc))
                } else {
                    Ok(Expr::new(ExprKind::Var(name), loc))
                }
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Kw(Keyword::Nondet | Keyword::Alloc | Keyword::ThreadCreate)
                if matches!(self.peek_at(1), Tok::Sym("(")) =>
            {
                self.error("special form is only allowed as `IDENT = ...;`")
            }
            other => self.error(format!("expected expression, found {}", Self::describe(&other))),
        }
    }
}
