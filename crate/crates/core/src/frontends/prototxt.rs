//! Recursive-descent parser for the protobuf text-format subset used by
//! network definitions:
//!
//! ```text
//! file  = { stmt } ;
//! stmt  = field | block ;
//! field = ident ':' value ;
//! block = ident [ ':' ] '{' { stmt } '}' ;
//! value = number | string | ident ;
//! ```
//!
//! `#` starts a comment; `;` and `,` between statements are ignored.

use std::fmt;

use thiserror::Error;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {column}: expected {expected}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Numeric literal, kept as written.
    Number(String),
    Str(String),
    /// Bare identifier: enum values, `true`/`false`, `inf`, `nan`.
    Ident(String),
    Message(Message),
}

impl Value {
    pub fn as_message(&self) -> Option<&Message> {
        match self {
            Value::Message(m) => Some(m),
            _ => None,
        }
    }

    /// Text of a scalar of any flavour.
    pub fn as_scalar(&self) -> Option<&str> {
        match self {
            Value::Number(s) | Value::Str(s) | Value::Ident(s) => Some(s),
            Value::Message(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(s) | Value::Ident(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Number(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Ident(s) if s == "true" => Some(true),
            Value::Ident(s) if s == "false" => Some(false),
            Value::Number(s) if s == "1" => Some(true),
            Value::Number(s) if s == "0" => Some(false),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(s) | Value::Ident(s) => f.write_str(s),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Message(_) => f.write_str("{...}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub value: Value,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Message {
    pub fields: Vec<Field>,
}

impl Message {
    /// Last occurrence wins, as in protobuf for singular fields.
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.iter().rev().find(|f| f.name == name).map(|f| &f.value)
    }

    pub fn all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Value> + 'a {
        self.fields.iter().filter(move |f| f.name == name).map(|f| &f.value)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Value::as_scalar)
    }

    pub fn message(&self, name: &str) -> Option<&Message> {
        self.get(name).and_then(Value::as_message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Colon,
    Open,
    Close,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Colon => "`:`".into(),
            Tok::Open => "`{`".into(),
            Tok::Close => "`}`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            src: text.as_bytes(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek_byte()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.column = 1;
        } else if b & 0xC0 != 0x80 {
            // count columns in characters, not UTF-8 continuation bytes
            self.column += 1;
        }
        Some(b)
    }

    fn error(&self, expected: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line,
            column: self.column,
            expected: expected.into(),
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(b) = self.peek_byte() {
            match b {
                b' ' | b'\t' | b'\r' | b'\n' | b';' | b',' => {
                    self.bump();
                }
                b'#' => {
                    while let Some(c) = self.bump() {
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    /// Returns the next token with the position where it starts.
    fn next(&mut self) -> Result<(Tok, usize, usize), SyntaxError> {
        self.skip_trivia();
        let (line, column) = (self.line, self.column);
        let Some(b) = self.peek_byte() else {
            return Ok((Tok::Eof, line, column));
        };
        let tok = match b {
            b':' => {
                self.bump();
                Tok::Colon
            }
            b'{' | b'<' => {
                self.bump();
                Tok::Open
            }
            b'}' | b'>' => {
                self.bump();
                Tok::Close
            }
            b'"' | b'\'' => Tok::Str(self.string(b)?),
            b'-' | b'+' | b'.' | b'0'..=b'9' => self.number()?,
            b if b.is_ascii_alphabetic() || b == b'_' => {
                let start = self.pos;
                while matches!(self.peek_byte(), Some(c) if c.is_ascii_alphanumeric() || c == b'_' || c == b'.') {
                    self.bump();
                }
                Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
            }
            _ => return Err(self.error("identifier, value, `{` or `}`")),
        };
        Ok((tok, line, column))
    }

    fn number(&mut self) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        if matches!(self.peek_byte(), Some(b'-' | b'+')) {
            self.bump();
        }
        // signed identifiers such as -inf
        if matches!(self.peek_byte(), Some(c) if c.is_ascii_alphabetic()) {
            while matches!(self.peek_byte(), Some(c) if c.is_ascii_alphanumeric()) {
                self.bump();
            }
        } else {
            while let Some(c) = self.peek_byte() {
                let exp_sign =
                    matches!(c, b'-' | b'+') && matches!(self.src.get(self.pos.wrapping_sub(1)), Some(b'e' | b'E'));
                if c.is_ascii_alphanumeric() || c == b'.' || exp_sign {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let text = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        let body = text.trim_start_matches(['-', '+']);
        let numeric = body.parse::<f64>().is_ok()
            || body.strip_suffix(['f', 'F']).is_some_and(|b| b.parse::<f64>().is_ok())
            || (body.starts_with("0x") && i64::from_str_radix(&body[2..], 16).is_ok());
        if !numeric || body.is_empty() {
            return Err(SyntaxError {
                line: self.line,
                column: self.column,
                expected: format!("number, found `{text}`"),
            });
        }
        Ok(Tok::Number(text))
    }

    fn string(&mut self, quote: u8) -> Result<String, SyntaxError> {
        self.bump();
        let mut out = Vec::new();
        loop {
            let Some(b) = self.bump() else {
                return Err(self.error("closing quote"));
            };
            match b {
                b'\n' => return Err(self.error("closing quote before end of line")),
                b'\\' => {
                    let Some(esc) = self.bump() else {
                        return Err(self.error("escape sequence"));
                    };
                    out.push(match esc {
                        b'n' => b'\n',
                        b't' => b'\t',
                        b'r' => b'\r',
                        b'0' => 0,
                        other => other,
                    });
                }
                b if b == quote => break,
                b => out.push(b),
            }
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<(Tok, usize, usize)>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&(Tok, usize, usize), SyntaxError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next()?);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn advance(&mut self) -> Result<(Tok, usize, usize), SyntaxError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn fail<T>(found: &(Tok, usize, usize), expected: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            line: found.1,
            column: found.2,
            expected: format!("{expected}, found {}", found.0.describe()),
        })
    }

    fn statements(&mut self, depth: usize, closing: bool) -> Result<Message, SyntaxError> {
        let mut msg = Message::default();
        loop {
            let tok = self.advance()?;
            let (name, line) = match tok {
                (Tok::Ident(name), line, _) => (name, line),
                (Tok::Close, ..) if closing => return Ok(msg),
                (Tok::Eof, ..) if !closing => return Ok(msg),
                other => return Self::fail(&other, if closing { "field name or `}`" } else { "field name" }),
            };
            let mut next = self.advance()?;
            let mut had_colon = false;
            if next.0 == Tok::Colon {
                had_colon = true;
                next = self.advance()?;
            }
            let value = match next {
                (Tok::Open, ..) => {
                    if depth >= MAX_DEPTH {
                        return Self::fail(&next, "shallower nesting");
                    }
                    Value::Message(self.statements(depth + 1, true)?)
                }
                (Tok::Number(n), ..) if had_colon => Value::Number(n),
                (Tok::Str(mut s), ..) if had_colon => {
                    // adjacent string literals concatenate
                    while let (Tok::Str(_), ..) = self.peek()? {
                        if let (Tok::Str(more), ..) = self.advance()? {
                            s.push_str(&more);
                        }
                    }
                    Value::Str(s)
                }
                (Tok::Ident(i), ..) if had_colon => Value::Ident(i),
                other => {
                    return Self::fail(&other, if had_colon { "value or `{`" } else { "`:` or `{`" });
                }
            };
            msg.fields.push(Field { name, value, line });
        }
    }
}

/// Parses a text-format document into a generic message tree.
pub fn parse_text_proto(text: &str) -> Result<Message, SyntaxError> {
    let mut parser = Parser {
        lexer: Lexer::new(text),
        peeked: None,
    };
    parser.statements(0, false)
}
