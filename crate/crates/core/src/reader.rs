//! Textual datum reader.
//!
//! Supported syntax: decimal fixnums, identifiers (case-sensitive, plus the
//! reserved `##name` form), `#t`/`#f`, characters (`#\a`, `#\space`,
//! `#\newline`), strings with `\\`, `\"` and `\n` escapes, proper and dotted
//! lists, vectors, `'` quote sugar and `;` line comments. Characters read as
//! their integer code point.
//!
//! The reader keeps its own explicit stack of open lists, so nesting depth is
//! bounded by memory rather than the host stack.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::object::{Store, StoreError, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadErrorKind {
    UnexpectedClose,
    /// Input ended inside a datum.
    UnexpectedEof,
    BadHashSyntax(String),
    BadToken(String),
    IntegerOutOfRange(String),
    BadEscape(char),
    BadDot,
    /// Quasiquote and unquote.
    Unsupported(char),
    Store(StoreError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadError {
    pub kind: ReadErrorKind,
    /// Byte offset into the input.
    pub offset: usize,
}

impl ReadError {
    /// True when more input could complete the datum.
    pub fn is_incomplete(&self) -> bool {
        self.kind == ReadErrorKind::UnexpectedEof
    }
}

impl fmt::Display for ReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ReadErrorKind::UnexpectedClose => write!(f, "unexpected \")\"")?,
            ReadErrorKind::UnexpectedEof => write!(f, "premature end of input")?,
            ReadErrorKind::BadHashSyntax(t) => write!(f, "bad # syntax \"{t}\"")?,
            ReadErrorKind::BadToken(t) => write!(f, "bad token \"{t}\"")?,
            ReadErrorKind::IntegerOutOfRange(t) => write!(f, "integer out of range: {t}")?,
            ReadErrorKind::BadEscape(c) => write!(f, "unknown string escape \\{c}")?,
            ReadErrorKind::BadDot => write!(f, "misplaced \".\"")?,
            ReadErrorKind::Unsupported(c) => write!(f, "unsupported syntax '{c}'")?,
            ReadErrorKind::Store(e) => write!(f, "{e}")?,
        }
        write!(f, " at offset {}", self.offset)
    }
}

enum Open {
    List { items: Vec<Value>, dotted: bool, tail: Option<Value> },
    Vector(Vec<Value>),
    Quote,
}

pub struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '(' | ')' | '"' | ';' | '\'')
}

fn is_initial(c: char) -> bool {
    c.is_alphabetic() || "!$%&*/:<=>?~_^".contains(c)
}

fn is_subsequent(c: char) -> bool {
    is_initial(c) || c.is_ascii_digit() || "+-.@".contains(c)
}

fn is_identifier(token: &str) -> bool {
    if matches!(token, "+" | "-" | "...") {
        return true;
    }
    let body = token.strip_prefix("##").unwrap_or(token);
    let mut chars = body.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    let first_ok = if body.len() < token.len() {
        is_subsequent(first)
    } else {
        // "->x" and friends: a sign followed by a non-digit.
        is_initial(first)
            || ((first == '+' || first == '-')
                && chars.clone().next().is_some_and(|c| !c.is_ascii_digit()))
    };
    first_ok && chars.all(is_subsequent)
}

fn parse_integer(token: &str) -> Option<Result<i64, ()>> {
    let digits = token.strip_prefix(['-', '+']).unwrap_or(token);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(token.parse::<i64>().map_err(|_| ()))
}

impl<'a> Reader<'a> {
    pub fn new(src: &'a str) -> Reader<'a> {
        Reader { src, pos: 0 }
    }

    /// Byte offset of the next unread character.
    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn err(&self, kind: ReadErrorKind, offset: usize) -> ReadError {
        ReadError { kind, offset }
    }

    fn skip_atmosphere(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_delimiter(c) {
                break;
            }
            self.bump();
        }
        &self.src[start..self.pos]
    }

    /// Reads the next datum, or `None` at a clean end of input.
    pub fn next_datum(&mut self, store: &mut Store) -> Result<Option<Value>, ReadError> {
        let mut open: Vec<Open> = Vec::new();
        loop {
            self.skip_atmosphere();
            let start = self.pos;
            let Some(c) = self.peek() else {
                return if open.is_empty() {
                    Ok(None)
                } else {
                    Err(self.err(ReadErrorKind::UnexpectedEof, self.pos))
                };
            };
            let store_err = |e| ReadError { kind: ReadErrorKind::Store(e), offset: start };
            let mut value = match c {
                '(' => {
                    self.bump();
                    open.push(Open::List { items: Vec::new(), dotted: false, tail: None });
                    continue;
                }
                ')' => {
                    self.bump();
                    match open.pop() {
                        Some(Open::List { items, dotted, tail }) => {
                            if dotted && tail.is_none() {
                                return Err(self.err(ReadErrorKind::BadDot, start));
                            }
                            let tail = tail.unwrap_or(store.nil());
                            store.list_with_tail(items, tail).map_err(store_err)?
                        }
                        Some(Open::Vector(items)) => {
                            Value::Ref(store.make_vector(&items).map_err(store_err)?)
                        }
                        Some(Open::Quote) | None => {
                            return Err(self.err(ReadErrorKind::UnexpectedClose, start))
                        }
                    }
                }
                '\'' => {
                    self.bump();
                    open.push(Open::Quote);
                    continue;
                }
                '`' | ',' => return Err(self.err(ReadErrorKind::Unsupported(c), start)),
                '"' => self.string(store)?,
                '#' => match self.src[self.pos..].chars().nth(1) {
                    Some('(') => {
                        self.pos += 2;
                        open.push(Open::Vector(Vec::new()));
                        continue;
                    }
                    Some('\\') => self.character()?,
                    _ => {
                        let tok = self.token();
                        match tok {
                            "#t" => store.true_value(),
                            "#f" => store.false_value(),
                            "#!eof" => store.eof(),
                            _ if tok.starts_with("##") && is_identifier(tok) => {
                                Value::Ref(store.intern(tok).map_err(store_err)?)
                            }
                            _ => {
                                return Err(self.err(
                                    ReadErrorKind::BadHashSyntax(String::from(tok)),
                                    start,
                                ))
                            }
                        }
                    }
                },
                _ => {
                    let tok = self.token();
                    if tok == "." {
                        match open.last_mut() {
                            Some(Open::List { items, dotted, .. }) if !items.is_empty() && !*dotted => {
                                *dotted = true;
                                continue;
                            }
                            _ => return Err(self.err(ReadErrorKind::BadDot, start)),
                        }
                    }
                    match parse_integer(tok) {
                        Some(Ok(n)) => Value::Int(n),
                        Some(Err(())) => {
                            return Err(self.err(
                                ReadErrorKind::IntegerOutOfRange(String::from(tok)),
                                start,
                            ))
                        }
                        None if is_identifier(tok) => {
                            Value::Ref(store.intern(tok).map_err(store_err)?)
                        }
                        None => {
                            return Err(self.err(ReadErrorKind::BadToken(String::from(tok)), start))
                        }
                    }
                }
            };

            // Hand the finished datum to the innermost open construct.
            loop {
                match open.last_mut() {
                    None => return Ok(Some(value)),
                    Some(Open::Quote) => {
                        open.pop();
                        let quote = store.intern("quote").map_err(store_err)?;
                        value = store.list([Value::Ref(quote), value]).map_err(store_err)?;
                    }
                    Some(Open::List { items, dotted, tail }) => {
                        if *dotted {
                            if tail.is_some() {
                                return Err(self.err(ReadErrorKind::BadDot, start));
                            }
                            *tail = Some(value);
                        } else {
                            items.push(value);
                        }
                        break;
                    }
                    Some(Open::Vector(items)) => {
                        items.push(value);
                        break;
                    }
                }
            }
        }
    }

    fn string(&mut self, store: &mut Store) -> Result<Value, ReadError> {
        let start = self.pos;
        self.bump();
        let mut codes = Vec::new();
        loop {
            let at = self.pos;
            match self.bump() {
                None => return Err(self.err(ReadErrorKind::UnexpectedEof, self.pos)),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some('\\') => codes.push('\\' as i64),
                    Some('"') => codes.push('"' as i64),
                    Some('n') => codes.push('\n' as i64),
                    Some(c) => return Err(self.err(ReadErrorKind::BadEscape(c), at)),
                    None => return Err(self.err(ReadErrorKind::UnexpectedEof, self.pos)),
                },
                Some(c) => codes.push(c as i64),
            }
        }
        store
            .make_string_from_codes(&codes)
            .map(Value::Ref)
            .map_err(|e| self.err(ReadErrorKind::Store(e), start))
    }

    fn character(&mut self) -> Result<Value, ReadError> {
        let start = self.pos;
        self.pos += 2;
        let Some(first) = self.bump() else {
            return Err(self.err(ReadErrorKind::UnexpectedEof, self.pos));
        };
        let rest = self.token();
        if rest.is_empty() {
            return Ok(Value::Int(first as i64));
        }
        let name = &self.src[start + 2..self.pos];
        match name {
            "space" => Ok(Value::Int(' ' as i64)),
            "newline" => Ok(Value::Int('\n' as i64)),
            _ => Err(self.err(ReadErrorKind::BadHashSyntax(alloc::format!("#\\{name}")), start)),
        }
    }
}

/// Reads one datum from the front of `text`, returning it and the unread remainder.
pub fn read_datum<'a>(text: &'a str, store: &mut Store) -> Result<(Value, &'a str), ReadError> {
    let mut reader = Reader::new(text);
    match reader.next_datum(store)? {
        Some(v) => Ok((v, reader.rest())),
        None => Err(ReadError { kind: ReadErrorKind::UnexpectedEof, offset: text.len() }),
    }
}

pub fn read_all(text: &str, store: &mut Store) -> Result<Vec<Value>, ReadError> {
    let mut reader = Reader::new(text);
    let mut out = Vec::new();
    while let Some(v) = reader.next_datum(store)? {
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> (Store, Value) {
        let mut s = Store::new();
        let (v, _) = read_datum(text, &mut s).unwrap();
        (s, v)
    }

    fn kind(text: &str) -> ReadErrorKind {
        let mut s = Store::new();
        read_all(text, &mut s).unwrap_err().kind
    }

    #[test]
    fn application_list() {
        let (mut s, v) = one("(+ 1 2)");
        let items = s.list_to_vec(v).unwrap();
        assert_eq!(items[0], Value::Ref(s.intern("+").unwrap()));
        assert_eq!(&items[1..], &[Value::Int(1), Value::Int(2)]);
    }

    #[test]
    fn quote_sugar() {
        let (mut s, v) = one("'x");
        let items = s.list_to_vec(v).unwrap();
        assert_eq!(items, [Value::Ref(s.intern("quote").unwrap()), Value::Ref(s.intern("x").unwrap())]);
    }

    #[test]
    fn dotted_pair() {
        let (s, v) = one("(1 . 2)");
        assert_eq!(s.car(v), Some(Value::Int(1)));
        assert_eq!(s.cdr(v), Some(Value::Int(2)));
    }

    #[test]
    fn atoms() {
        assert_eq!(one("-17").1, Value::Int(-17));
        assert_eq!(one("+5").1, Value::Int(5));
        assert_eq!(one("#\\a").1, Value::Int(97));
        assert_eq!(one("#\\space").1, Value::Int(32));
        assert_eq!(one("#\\newline").1, Value::Int(10));
        assert_eq!(one("#\\(").1, Value::Int(40));
        let (s, t) = one("#t");
        assert_eq!(t, s.true_value());
        let (mut s, v) = one("##field0-set!");
        assert_eq!(v, Value::Ref(s.intern("##field0-set!").unwrap()));
        for name in ["-", "+", "...", "->x", "a.b", "set-car!", "<=?", "Hello"] {
            let (mut s, v) = one(name);
            assert_eq!(v, Value::Ref(s.intern(name).unwrap()), "{name}");
        }
    }

    #[test]
    fn strings_and_escapes() {
        let (s, v) = one(r#""a\"b\\c\nd""#);
        assert_eq!(s.text_of(v.as_ref().unwrap()).unwrap(), "a\"b\\c\nd");
        assert_eq!(kind(r#""a\qb""#), ReadErrorKind::BadEscape('q'));
    }

    #[test]
    fn vectors_and_comments() {
        let (s, v) = one("; comment\n #(1 ; two\n 2)");
        assert_eq!(s.vector_items(v.as_ref().unwrap()).unwrap(), [Value::Int(1), Value::Int(2)]);
    }

    #[test]
    fn read_all_cases() {
        let mut s = Store::new();
        assert_eq!(read_all("1 2", &mut s).unwrap(), [Value::Int(1), Value::Int(2)]);
        assert!(read_all("", &mut s).unwrap().is_empty());
        assert!(read_all("  ; only a comment", &mut s).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        assert_eq!(kind("(a"), ReadErrorKind::UnexpectedEof);
        assert_eq!(kind(")"), ReadErrorKind::UnexpectedClose);
        assert_eq!(kind("#q"), ReadErrorKind::BadHashSyntax("#q".into()));
        assert_eq!(kind("#!x"), ReadErrorKind::BadHashSyntax("#!x".into()));
        assert_eq!(kind("`a"), ReadErrorKind::Unsupported('`'));
        assert_eq!(kind(",a"), ReadErrorKind::Unsupported(','));
        assert_eq!(kind("(. 1)"), ReadErrorKind::BadDot);
        assert_eq!(kind("(1 . 2 3)"), ReadErrorKind::BadDot);
        assert_eq!(kind("(1 .)"), ReadErrorKind::BadDot);
        assert_eq!(kind("1abc"), ReadErrorKind::BadToken("1abc".into()));
        assert!(matches!(kind("99999999999999999999"), ReadErrorKind::IntegerOutOfRange(_)));
        assert_eq!(kind("\"abc"), ReadErrorKind::UnexpectedEof);
    }

    #[test]
    fn error_offsets() {
        let mut s = Store::new();
        let e = read_all("(a b) )", &mut s).unwrap_err();
        assert_eq!(e.offset, 6);
        assert!(!e.is_incomplete());
        assert!(read_all("(a (b", &mut s).unwrap_err().is_incomplete());
    }

    #[test]
    fn deep_nesting_does_not_recurse() {
        let mut text = String::new();
        for _ in 0..100_000 {
            text.push('(');
        }
        for _ in 0..100_000 {
            text.push(')');
        }
        let mut s = Store::new();
        assert_eq!(read_all(&text, &mut s).unwrap().len(), 1);
    }

    #[test]
    fn remaining_text() {
        let mut s = Store::new();
        let (v, rest) = read_datum("42 (b)", &mut s).unwrap();
        assert_eq!(v, Value::Int(42));
        assert_eq!(rest, " (b)");
    }
}
