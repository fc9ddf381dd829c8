//! Tokenizer and token cursor shared by the pattern grammar, the SAN
//! document grammar and embedded expressions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Identifier, possibly with `{placeholder}` segments (`fuel_{z.truck}`).
    Ident(String),
    Str(String),
    Int(i64),
    Dec(f64),
    /// Clock-of-day literal in minutes (`17:00`).
    Clock(u32),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Int(v) => write!(f, "{v}"),
            Tok::Dec(v) => write!(f, "{v:?}"),
            Tok::Clock(m) => write!(f, "{:02}:{:02}", m / 60, m % 60),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: {msg}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub msg: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, msg: impl Into<String>) -> Self {
        SyntaxError {
            pos,
            msg: msg.into(),
        }
    }
}

const SYMBOLS: [&str; 20] = [
    "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "(", ")", ",", ":", "=", "{", "}", ".",
    ";", "!",
];

pub fn tokenize(src: &str) -> Result<Vec<(Tok, Pos)>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(SyntaxError::new(pos, "unterminated string"));
                }
                match chars[i] {
                    '"' => {
                        bump!();
                        break;
                    }
                    '\\' if i + 1 < chars.len() => {
                        bump!();
                        s.push(match chars[i] {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        bump!();
                    }
                    other => {
                        s.push(other);
                        bump!();
                    }
                }
            }
            out.push((Tok::Str(s), pos));
            continue;
        }
        if c.is_ascii_digit() {
            let mut digits = String::new();
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                if chars[i] != '_' {
                    digits.push(chars[i]);
                }
                bump!();
            }
            // HH:MM clock literal
            if i + 2 < chars.len()
                && chars[i] == ':'
                && chars[i + 1].is_ascii_digit()
                && chars[i + 2].is_ascii_digit()
                && chars.get(i + 3).is_none_or(|c| !c.is_ascii_alphanumeric())
            {
                let hours: u32 = digits
                    .parse()
                    .map_err(|_| SyntaxError::new(pos, "bad clock literal"))?;
                let minutes = chars[i + 1].to_digit(10).unwrap_or(0) * 10
                    + chars[i + 2].to_digit(10).unwrap_or(0);
                if hours > 23 || minutes > 59 {
                    return Err(SyntaxError::new(pos, "clock literal out of range"));
                }
                for _ in 0..3 {
                    bump!();
                }
                out.push((Tok::Clock(hours * 60 + minutes), pos));
                continue;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                digits.push('.');
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    digits.push(chars[i]);
                    bump!();
                }
                let v: f64 = digits
                    .parse()
                    .map_err(|_| SyntaxError::new(pos, "bad decimal literal"))?;
                out.push((Tok::Dec(v), pos));
            } else {
                let v: i64 = digits
                    .parse()
                    .map_err(|_| SyntaxError::new(pos, "integer literal out of range"))?;
                out.push((Tok::Int(v), pos));
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            loop {
                if i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    s.push(chars[i]);
                    bump!();
                } else if i < chars.len() && chars[i] == '{' {
                    // placeholder segment only if it closes as `{name}` or `{var.attr}`
                    let mut j = i + 1;
                    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '.') {
                        j += 1;
                    }
                    if j > i + 1 && j < chars.len() && chars[j] == '}' {
                        while i <= j {
                            s.push(chars[i]);
                            bump!();
                        }
                    } else {
                        break;
                    }
                } else {
                    break;
                }
            }
            out.push((Tok::Ident(s), pos));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            for _ in 0..sym.len() {
                bump!();
            }
            out.push((Tok::Sym(sym), pos));
            continue;
        }
        return Err(SyntaxError::new(pos, format!("unexpected character {c:?}")));
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

/// Forward-only cursor over a token stream.
pub struct Cursor {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Cursor {
    pub fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Cursor {
            toks: tokenize(src)?,
            at: 0,
        })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    pub fn peek_at(&self, ahead: usize) -> &Tok {
        let idx = (self.at + ahead).min(self.toks.len() - 1);
        &self.toks[idx].0
    }

    pub fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    pub fn advance(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    pub fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.advance();
            true
        } else {
            false
        }
    }

    pub fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    pub fn error(&self, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.pos(), msg)
    }

    pub fn unexpected(&self, wanted: &str) -> SyntaxError {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    pub fn expect_sym(&mut self, sym: &str) -> Result<(), SyntaxError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{sym}`")))
        }
    }

    pub fn expect_kw(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    pub fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    /// Identifier without placeholder segments.
    pub fn plain_ident(&mut self) -> Result<String, SyntaxError> {
        let pos = self.pos();
        let s = self.ident()?;
        if s.contains('{') {
            return Err(SyntaxError::new(pos, format!("placeholder not allowed in `{s}`")));
        }
        Ok(s)
    }

    pub fn string(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Tok::Str(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.unexpected("string literal")),
        }
    }

    /// Integer literal with optional leading minus.
    pub fn int(&mut self) -> Result<i64, SyntaxError> {
        let neg = self.eat_sym("-");
        match self.peek() {
            Tok::Int(v) => {
                let v = *v;
                self.advance();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.unexpected("integer")),
        }
    }
}

/// Placeholders (`{name}`) appearing in a template string or identifier.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        match rest[open + 1..].find('}') {
            Some(close) => {
                out.push(rest[open + 1..open + 1 + close].to_string());
                rest = &rest[open + 2 + close..];
            }
            None => break,
        }
    }
    out
}

/// Substitute every `{name}` placeholder using `lookup`; the error carries
/// the first placeholder that could not be resolved.
pub fn render_template(
    template: &str,
    mut lookup: impl FnMut(&str) -> Option<String>,
) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open + 1..].find('}') else {
            break;
        };
        out.push_str(&rest[..open]);
        let name = &rest[open + 1..open + 1 + close];
        out.push_str(&lookup(name).ok_or_else(|| name.to_string())?);
        rest = &rest[open + 2 + close..];
    }
    out.push_str(rest);
    Ok(out)
}
