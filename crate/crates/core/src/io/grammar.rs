//! The configuration grammar: `name = value` settings, `{}` groups, `()`
//! lists, `[]` arrays, quoted strings, bare numbers and booleans. Settings
//! may end with `;` or `,`; comments are `#`, `//` and `/* */`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Array(Vec<Value>),
    List(Vec<Value>),
    Group(Vec<(String, Value)>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Elements of an array or a list.
    pub fn as_seq(&self) -> Option<&[Value]> {
        match self {
            Value::Array(v) | Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_group(&self) -> Option<&[(String, Value)]> {
        match self {
            Value::Group(g) => Some(g),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "number",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
            Value::Array(_) => "array",
            Value::List(_) => "list",
            Value::Group(_) => "group",
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::parse(format!("line {}, column {}", self.line, self.col), msg)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'#') => self.skip_line(),
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => self.skip_line(),
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'*') => {
                    self.bump();
                    self.bump();
                    loop {
                        match self.bump() {
                            None => return Err(self.error("unterminated comment")),
                            Some(b'*') if self.peek() == Some(b'/') => {
                                self.bump();
                                break;
                            }
                            _ => {}
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.bump() {
            if c == b'\n' {
                break;
            }
        }
    }

    fn name(&mut self) -> Result<String> {
        self.skip_trivia()?;
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == b'*' || c == b'_' => {}
            Some(c) => return Err(self.error(format!("expected a setting name, found '{}'", c as char))),
            None => return Err(self.error("expected a setting name, found end of input")),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_' || c == b'-' || c == b'*') {
            self.bump();
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    /// Settings up to `close` (or end of input when `close` is `None`).
    fn settings(&mut self, close: Option<u8>) -> Result<Vec<(String, Value)>> {
        let mut out: Vec<(String, Value)> = Vec::new();
        loop {
            self.skip_trivia()?;
            match (self.peek(), close) {
                (None, None) => return Ok(out),
                (None, Some(c)) => return Err(self.error(format!("expected '{}' before end of input", c as char))),
                (Some(c), Some(cl)) if c == cl => {
                    self.bump();
                    return Ok(out);
                }
                _ => {}
            }
            let (line, col) = (self.line, self.col);
            let name = self.name()?;
            self.skip_trivia()?;
            match self.peek() {
                Some(b'=') | Some(b':') => {
                    self.bump();
                }
                _ => return Err(self.error(format!("expected '=' after '{name}'"))),
            }
            let value = self.value()?;
            if out.iter().any(|(n, _)| *n == name) {
                return Err(Error::parse(
                    format!("line {line}, column {col}"),
                    format!("duplicate setting '{name}'"),
                ));
            }
            out.push((name, value));
            self.skip_trivia()?;
            if matches!(self.peek(), Some(b';') | Some(b',')) {
                self.bump();
            }
        }
    }

    fn sequence(&mut self, close: u8) -> Result<Vec<Value>> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            if self.peek() == Some(close) {
                self.bump();
                return Ok(out);
            }
            out.push(self.value()?);
            self.skip_trivia()?;
            match self.peek() {
                Some(b',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                Some(c) => return Err(self.error(format!("expected ',' or '{}', found '{}'", close as char, c as char))),
                None => return Err(self.error(format!("expected '{}' before end of input", close as char))),
            }
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_trivia()?;
        match self.peek() {
            Some(b'{') => {
                self.bump();
                Ok(Value::Group(self.settings(Some(b'}'))?))
            }
            Some(b'(') => {
                self.bump();
                Ok(Value::List(self.sequence(b')')?))
            }
            Some(b'[') => {
                self.bump();
                Ok(Value::Array(self.sequence(b']')?))
            }
            Some(b'"') => self.string(),
            Some(c) if c == b'-' || c == b'+' || c == b'.' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let word = self.name()?;
                match word.to_ascii_lowercase().as_str() {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    _ => Err(self.error(format!("unexpected word '{word}' (strings must be quoted)"))),
                }
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("expected a value, found end of input")),
        }
    }

    fn string(&mut self) -> Result<Value> {
        let mut s = Vec::new();
        self.bump();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string")),
                Some(b'"') => break,
                Some(b'\\') => match self.bump() {
                    Some(b'n') => s.push(b'\n'),
                    Some(b't') => s.push(b'\t'),
                    Some(b'"') => s.push(b'"'),
                    Some(b'\\') => s.push(b'\\'),
                    Some(c) => return Err(self.error(format!("unknown escape '\\{}'", c as char))),
                    None => return Err(self.error("unterminated string")),
                },
                Some(c) => s.push(c),
            }
        }
        // adjacent literals concatenate
        self.skip_trivia()?;
        let mut out = String::from_utf8(s).map_err(|_| self.error("string is not UTF-8"))?;
        if self.peek() == Some(b'"') {
            if let Value::Str(more) = self.string()? {
                out.push_str(&more);
            }
        }
        Ok(Value::Str(out))
    }

    fn number(&mut self) -> Result<Value> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || matches!(c, b'.' | b'-' | b'+')) {
            // a sign is part of the number only at the start or after an exponent
            if matches!(self.peek(), Some(b'-') | Some(b'+'))
                && self.pos > start
                && !matches!(self.src[self.pos - 1], b'e' | b'E')
            {
                break;
            }
            self.bump();
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let digits = text.trim_start_matches(['+', '-']);
        if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
            let v = i64::from_str_radix(hex, 16).map_err(|_| self.error(format!("bad number '{text}'")))?;
            return Ok(Value::Int(if text.starts_with('-') { -v } else { v }));
        }
        let int_text = text.strip_suffix('L').unwrap_or(text);
        if let Ok(i) = int_text.parse::<i64>() {
            return Ok(Value::Int(i));
        }
        text.parse::<f64>()
            .map(Value::Float)
            .map_err(|_| self.error(format!("bad number '{text}'")))
    }
}

/// Parse a whole document into its top-level settings.
pub fn parse_document(text: &str) -> Result<Vec<(String, Value)>> {
    let mut lx = Lexer {
        src: text.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    lx.settings(None)
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Int(i) => write!(out, "{i}").unwrap(),
        Value::Float(f) => {
            // always keep a decimal point or exponent so the type survives
            let s = format!("{f:?}");
            out.push_str(&s);
        }
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
        Value::Array(items) | Value::List(items) => {
            let (open, close) = if matches!(v, Value::Array(_)) { ('[', ']') } else { ('(', ')') };
            out.push(open);
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(close);
        }
        Value::Group(settings) => {
            out.push_str("{\n");
            write_settings(out, settings, indent + 2);
            out.push_str(&" ".repeat(indent));
            out.push('}');
        }
    }
}

fn write_settings(out: &mut String, settings: &[(String, Value)], indent: usize) {
    for (name, v) in settings {
        out.push_str(&" ".repeat(indent));
        out.push_str(name);
        out.push_str(" = ");
        write_value(out, v, indent);
        out.push('\n');
    }
}

/// Render settings back into the grammar.
pub fn write_document(settings: &[(String, Value)]) -> String {
    let mut out = String::new();
    write_settings(&mut out, settings, 0);
    out
}
