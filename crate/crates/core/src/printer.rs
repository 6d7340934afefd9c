//! External representation of data, in `write` and `display` flavors.

use alloc::collections::BTreeSet;
use alloc::string::String;
use core::fmt::{self, Write as _};

use crate::object::{tag, Ref, Store, StoreError, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WriteError {
    /// The datum contains a cycle.
    Cyclic,
    Malformed(StoreError),
}

impl fmt::Display for WriteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WriteError::Cyclic => write!(f, "cannot print cyclic data"),
            WriteError::Malformed(e) => write!(f, "{e}"),
        }
    }
}

impl From<StoreError> for WriteError {
    fn from(e: StoreError) -> Self {
        WriteError::Malformed(e)
    }
}

/// `write` notation: strings quoted and escaped.
pub fn write_datum(store: &Store, v: Value) -> Result<String, WriteError> {
    render(store, v, false)
}

/// `display` notation: strings printed raw.
pub fn display_datum(store: &Store, v: Value) -> Result<String, WriteError> {
    render(store, v, true)
}

fn render(store: &Store, v: Value, display: bool) -> Result<String, WriteError> {
    let mut p = Printer { store, out: String::new(), active: BTreeSet::new(), display };
    p.print(v)?;
    Ok(p.out)
}

struct Printer<'s> {
    store: &'s Store,
    out: String,
    active: BTreeSet<Ref>,
    display: bool,
}

fn scalar(code: i64) -> char {
    u32::try_from(code).ok().and_then(char::from_u32).unwrap_or('\u{FFFD}')
}

impl Printer<'_> {
    fn enter(&mut self, r: Ref) -> Result<(), WriteError> {
        if self.active.insert(r) {
            Ok(())
        } else {
            Err(WriteError::Cyclic)
        }
    }

    fn print(&mut self, v: Value) -> Result<(), WriteError> {
        let s = self.store;
        let r = match v {
            Value::Int(n) => {
                let _ = write!(self.out, "{n}");
                return Ok(());
            }
            Value::Ref(r) => r,
        };
        if v == s.nil() {
            self.out.push_str("()");
        } else if v == s.true_value() {
            self.out.push_str("#t");
        } else if v == s.false_value() {
            self.out.push_str("#f");
        } else if v == s.undef() {
            self.out.push_str("#<undefined>");
        } else if v == s.eof() {
            self.out.push_str("#<eof>");
        } else {
            match s.tag_of(v) {
                Some(tag::PAIR) => self.list(r)?,
                Some(tag::PROCEDURE) => self.out.push_str("#<procedure>"),
                Some(tag::SYMBOL) => {
                    let name = s.symbol_name(r)?;
                    self.out.push_str(&name);
                }
                Some(tag::STRING) => {
                    let codes = s.string_codes(r)?;
                    if self.display {
                        self.out.extend(codes.into_iter().map(scalar));
                    } else {
                        self.out.push('"');
                        for c in codes.into_iter().map(scalar) {
                            match c {
                                '"' => self.out.push_str("\\\""),
                                '\\' => self.out.push_str("\\\\"),
                                '\n' => self.out.push_str("\\n"),
                                c => self.out.push(c),
                            }
                        }
                        self.out.push('"');
                    }
                }
                Some(tag::VECTOR) => {
                    self.enter(r)?;
                    self.out.push_str("#(");
                    for (i, item) in s.vector_items(r)?.into_iter().enumerate() {
                        if i > 0 {
                            self.out.push(' ');
                        }
                        self.print(item)?;
                    }
                    self.out.push(')');
                    self.active.remove(&r);
                }
                Some(tag::SPECIAL) => self.out.push_str("#<special>"),
                _ => self.out.push_str("#<rib>"),
            }
        }
        Ok(())
    }

    fn list(&mut self, first: Ref) -> Result<(), WriteError> {
        let s = self.store;
        let mut entered = alloc::vec::Vec::new();
        let mut cell = first;
        self.out.push('(');
        loop {
            self.enter(cell)?;
            entered.push(cell);
            self.print(s.f0(cell))?;
            let next = s.f1(cell);
            if next == s.nil() {
                break;
            }
            if s.is_pair(next) {
                self.out.push(' ');
                cell = next.as_ref().unwrap();
            } else {
                self.out.push_str(" . ");
                self.print(next)?;
                break;
            }
        }
        self.out.push(')');
        for r in entered {
            self.active.remove(&r);
        }
        Ok(())
    }
}
