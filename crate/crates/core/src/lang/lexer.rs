use super::ast::SourceLoc;
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Kw(Keyword),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Keyword {
    Int,
    Mutex,
    Void,
    If,
    Else,
    While,
    Lock,
    Unlock,
    ThreadCreate,
    ThreadJoin,
    Nondet,
    Alloc,
    Free,
    Assert,
    Assume,
    ReachError,
}

impl Keyword {
    fn from_ident(s: &str) -> Option<Keyword> {
        Some(match s {
            "int" => Keyword::Int,
            "mutex" => Keyword::Mutex,
            "void" => Keyword::Void,
            "if" => Keyword::If,
            "else" => Keyword::Else,
            "while" => Keyword::While,
            "lock" => Keyword::Lock,
            "unlock" => Keyword::Unlock,
            "thread_create" => Keyword::ThreadCreate,
            "thread_join" => Keyword::ThreadJoin,
            "nondet" => Keyword::Nondet,
            "alloc" => Keyword::Alloc,
            "free" => Keyword::Free,
            "assert" => Keyword::Assert,
            "assume" => Keyword::Assume,
            "reach_error" => Keyword::ReachError,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub loc: SourceLoc,
}

// Two-character symbols first so that they win over their prefixes.
const SYMBOLS: [&str; 23] = [
    "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", ";", ",", "=", "<", ">",
    "+", "-", "*", "/", "%", "!",
];

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        let loc = SourceLoc::new(line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let tok = match Keyword::from_ident(&word) {
                Some(kw) => Tok::Kw(kw),
                None => Tok::Ident(word),
            };
            tokens.push(Token { tok, loc });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let value = digits
                .parse::<i64>()
                .ok()
                .filter(|v| *v <= i32::MAX as i64)
                .ok_or_else(|| ParseError::Syntax {
                    loc,
                    message: format!("integer literal `{digits}` out of range"),
                })?;
            tokens.push(Token { tok: Tok::Int(value), loc });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            let mut it = s.chars();
            let first = it.next();
            let second = it.next();
            first == Some(c) && second.is_none_or(|s2| chars.get(i + 1) == Some(&s2))
        });
        match sym {
            Some(s) => {
                let n = s.len();
                i += n;
                col += n as u32;
                tokens.push(Token { tok: Tok::Sym(s), loc });
            }
            None => {
                return Err(ParseError::Syntax {
                    loc,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        loc: SourceLoc::new(line, col),
    });
    Ok(tokens)
}
