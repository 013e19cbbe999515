//! Event expressions for `capacity`.
//!
//! ```text
//! event   := atom ("&&" atom)*
//! atom    := "true" | "false" | operand cmp operand
//! operand := "|x(T)|" | "|x(0)|" | "max|x(t)|" | "min|x(t)|" | number
//! cmp     := "<" | "<=" | ">" | ">=" | "==" | "!="
//! ```

use std::fmt;

use gsde::engine::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stat {
    Terminal,
    Initial,
    MaxNorm,
    MinNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Stat(Stat),
    Number(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    Const(bool),
    Compare(Operand, Cmp, Operand),
}

/// A conjunction of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub source: String,
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// Byte offset into the source.
    pub position: usize,
    pub message: String,
    pub source: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let column = self.source[..self.position.min(self.source.len())]
            .chars()
            .count()
            + 1;
        writeln!(f, "event parse error at column {column}: {}", self.message)?;
        writeln!(f, "  {}", self.source)?;
        write!(f, "  {}^", " ".repeat(column - 1))
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Operand(Operand),
    Cmp(Cmp),
    And,
    Bool(bool),
}

const KEYWORDS: &[(&str, Token)] = &[
    ("max|x(t)|", Token::Operand(Operand::Stat(Stat::MaxNorm))),
    ("min|x(t)|", Token::Operand(Operand::Stat(Stat::MinNorm))),
    ("|x(T)|", Token::Operand(Operand::Stat(Stat::Terminal))),
    ("|x(0)|", Token::Operand(Operand::Stat(Stat::Initial))),
    ("&&", Token::And),
    ("<=", Token::Cmp(Cmp::Le)),
    (">=", Token::Cmp(Cmp::Ge)),
    ("==", Token::Cmp(Cmp::Eq)),
    ("!=", Token::Cmp(Cmp::Ne)),
    ("<", Token::Cmp(Cmp::Lt)),
    (">", Token::Cmp(Cmp::Gt)),
    ("true", Token::Bool(true)),
    ("false", Token::Bool(false)),
];

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let err = |position, message: String| ParseError {
        position,
        message,
        source: src.to_string(),
    };
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < src.len() {
        let rest = &src[pos..];
        let c = rest.chars().next().unwrap();
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        if let Some((kw, tok)) = KEYWORDS.iter().find(|(kw, _)| rest.starts_with(kw)) {
            out.push((pos, *tok));
            pos += kw.len();
            continue;
        }
        if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' {
            let mut end = c.len_utf8();
            let bytes = rest.as_bytes();
            while end < bytes.len() {
                let b = bytes[end];
                let exp_sign = (b == b'-' || b == b'+') && matches!(bytes[end - 1], b'e' | b'E');
                if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                    end += 1;
                } else {
                    break;
                }
            }
            let text = &rest[..end];
            let value: f64 = text
                .parse()
                .map_err(|_| err(pos, format!("invalid number `{text}`")))?;
            if !value.is_finite() {
                return Err(err(pos, format!("number `{text}` is not finite")));
            }
            out.push((pos, Token::Operand(Operand::Number(value))));
            pos += end;
            continue;
        }
        return Err(err(
            pos,
            format!("unexpected `{c}`; expected |x(T)|, |x(0)|, max|x(t)|, min|x(t)|, a number, a comparison, && or true/false"),
        ));
    }
    Ok(out)
}

pub fn parse(src: &str) -> Result<Event, ParseError> {
    let err = |position, message: &str| ParseError {
        position,
        message: message.into(),
        source: src.to_string(),
    };
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(err(0, "empty event"));
    }
    let mut atoms = Vec::new();
    let mut i = 0;
    loop {
        let (pos, tok) = tokens
            .get(i)
            .copied()
            .ok_or_else(|| err(src.len(), "expected a comparison or true/false"))?;
        match tok {
            Token::Bool(b) => {
                atoms.push(Atom::Const(b));
                i += 1;
            }
            Token::Operand(lhs) => {
                let (cpos, ctok) = tokens
                    .get(i + 1)
                    .copied()
                    .ok_or_else(|| err(src.len(), "expected a comparison operator"))?;
                let Token::Cmp(cmp) = ctok else {
                    return Err(err(cpos, "expected a comparison operator"));
                };
                let (rpos, rtok) = tokens
                    .get(i + 2)
                    .copied()
                    .ok_or_else(|| err(src.len(), "expected a statistic or number"))?;
                let Token::Operand(rhs) = rtok else {
                    return Err(err(rpos, "expected a statistic or number"));
                };
                atoms.push(Atom::Compare(lhs, cmp, rhs));
                i += 3;
            }
            _ => return Err(err(pos, "expected a statistic, a number or true/false")),
        }
        match tokens.get(i) {
            None => break,
            Some((_, Token::And)) => i += 1,
            Some((pos, _)) => return Err(err(*pos, "expected && or end of event")),
        }
    }
    Ok(Event {
        source: src.trim().to_string(),
        atoms,
    })
}

fn value(op: Operand, t: &Trajectory) -> f64 {
    match op {
        Operand::Number(v) => v,
        Operand::Stat(Stat::Terminal) => t.terminal_norm(),
        Operand::Stat(Stat::Initial) => t.initial_norm(),
        Operand::Stat(Stat::MaxNorm) => t.max_norm,
        Operand::Stat(Stat::MinNorm) => t.min_norm,
    }
}

impl Event {
    pub fn holds(&self, t: &Trajectory) -> bool {
        self.atoms.iter().all(|a| match *a {
            Atom::Const(b) => b,
            Atom::Compare(l, c, r) => {
                let (l, r) = (value(l, t), value(r, t));
                match c {
                    Cmp::Lt => l < r,
                    Cmp::Le => l <= r,
                    Cmp::Gt => l > r,
                    Cmp::Ge => l >= r,
                    Cmp::Eq => l == r,
                    Cmp::Ne => l != r,
                }
            }
        })
    }
}
