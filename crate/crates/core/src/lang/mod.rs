//! MCL: a small C-like language with threads, mutexes and a handle-based heap.
//!
//! ```text
//! int x;
//! mutex m;
//!
//! void worker(int id) {
//!     lock(m);
//!     x = x + id;
//!     unlock(m);
//! }
//!
//! void main() {
//!     int t;
//!     t = thread_create(worker, 1);
//!     thread_join(t);
//!     assert(x == 1);
//! }
//! ```
//!
//! There is a single value type, 32-bit signed integers. Thread ids and heap
//! handles are stored in `int` variables; arrays are global and fixed-size.

mod ast;
mod check;
mod lexer;
mod parser;
mod printer;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use ast::*;
pub use printer::expr_to_string;

pub(crate) use check::thread_cycle;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{loc}: syntax error: {message}")]
    Syntax { loc: SourceLoc, message: String },
    #[error("{loc}: undeclared identifier `{name}`")]
    Resolve { loc: SourceLoc, name: String },
    #[error("{loc}: type error: {message}")]
    Type { loc: SourceLoc, message: String },
    #[error("{loc}: `{name}` is already defined")]
    Duplicate { loc: SourceLoc, name: String },
    #[error("{loc}: recursive thread creation through `{name}`")]
    Recursion { loc: SourceLoc, name: String },
    #[error("source file is empty")]
    Empty,
}

impl ParseError {
    pub fn loc(&self) -> Option<SourceLoc> {
        match self {
            ParseError::Syntax { loc, .. }
            | ParseError::Resolve { loc, .. }
            | ParseError::Type { loc, .. }
            | ParseError::Duplicate { loc, .. }
            | ParseError::Recursion { loc, .. } => Some(*loc),
            ParseError::Empty => None,
        }
    }
}

/// A source file handed to the verifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceProgram {
    pub path: PathBuf,
    pub text: String,
}

impl SourceProgram {
    pub fn new(path: impl Into<PathBuf>, text: impl Into<String>) -> Self {
        SourceProgram { path: path.into(), text: text.into() }
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        Ok(SourceProgram::new(path, std::fs::read_to_string(path)?))
    }

    /// File name used in reports (`racy_counter.mcl`).
    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

pub fn parse(source: &SourceProgram) -> Result<Ast, ParseError> {
    parse_str(&source.text)
}

pub fn parse_str(text: &str) -> Result<Ast, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = lexer::tokenize(text)?;
    let raw = parser::Parser::new(tokens).program()?;
    let main = check::check(&raw.globals, &raw.functions)?;
    Ok(Ast { globals: raw.globals, functions: raw.functions, main })
}

pub fn pretty_print(ast: &Ast) -> SourceProgram {
    SourceProgram::new("<pretty>", printer::print_ast(ast))
}
