//! Printable image format for compiled programs.
//!
//! An image is the magic `RSC1\n` followed by a symbol table, a node table
//! and the root node reference, all as base-46 varints over the bytes
//! `35..=126`. Nodes are listed so that every node appears after the nodes it
//! refers to; a reference is the node's position plus one, and `0` means
//! "none" (the next of a tail call).
//!
//! Encoding and decoding go through [`Image`], a plain table form of the
//! file. Parsing bytes into an `Image` never touches a store, which keeps
//! the validation of untrusted input separate from materialization.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::object::{tag, Ref, Store, StoreError, Value};
use crate::rvm::op;

pub const MAGIC: &[u8] = b"RSC1\n";

const BASE: u64 = 46;
const FIRST: u8 = 35;
const LAST: u8 = 126;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CodecError {
    /// The bytes are not a well-formed image.
    Malformed { offset: usize, message: String },
    /// The graph holds something the format cannot express.
    Unencodable(String),
    Store(StoreError),
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::Malformed { offset, message } => write!(f, "{message} at byte {offset}"),
            CodecError::Unencodable(m) => write!(f, "cannot encode: {m}"),
            CodecError::Store(e) => write!(f, "{e}"),
        }
    }
}

impl From<StoreError> for CodecError {
    fn from(e: StoreError) -> Self {
        CodecError::Store(e)
    }
}

fn unencodable<T>(message: impl Into<String>) -> Result<T, CodecError> {
    Err(CodecError::Unencodable(message.into()))
}

pub fn put_varint(mut n: u64, out: &mut Vec<u8>) {
    let mut digits = [0u8; 12];
    let mut len = 0;
    loop {
        digits[len] = (n % BASE) as u8;
        len += 1;
        n /= BASE;
        if n == 0 {
            break;
        }
    }
    for i in (1..len).rev() {
        out.push(FIRST + BASE as u8 + digits[i]);
    }
    out.push(FIRST + digits[0]);
}

/// Reads a varint at `pos`, returning it and the position after it.
pub fn get_varint(bytes: &[u8], mut pos: usize) -> Result<(u64, usize), CodecError> {
    let mut n: u64 = 0;
    loop {
        let b = *bytes.get(pos).ok_or_else(|| malformed(pos, "truncated image"))?;
        if !(FIRST..=LAST).contains(&b) {
            return Err(malformed(pos, "non-printable byte"));
        }
        let code = (b - FIRST) as u64;
        let digit = if code >= BASE { code - BASE } else { code };
        n = n
            .checked_mul(BASE)
            .and_then(|n| n.checked_add(digit))
            .ok_or_else(|| malformed(pos, "integer overflow"))?;
        pos += 1;
        if code < BASE {
            return Ok((n, pos));
        }
    }
}

pub fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

pub fn unzigzag(z: u64) -> i64 {
    ((z >> 1) as i64) ^ -((z & 1) as i64)
}

fn malformed(offset: usize, message: impl Into<String>) -> CodecError {
    CodecError::Malformed { offset, message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locator {
    Slot(u64),
    Symbol(usize),
}

/// One instruction. Node references are positions plus one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Call { nargs: u64, locator: Locator, next: usize },
    Set { locator: Locator, next: usize },
    Get { locator: Locator, next: usize },
    Const { datum: usize, next: usize },
    If { then: usize, alt: usize },
    Return,
    Halt,
}

/// A literal. Children are indices into [`Image::data`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Datum {
    Int(i64),
    Symbol(usize),
    Nil,
    True,
    False,
    Str(Vec<u32>),
    Pair(usize, usize),
    Template { arity: u64, body: usize },
    Char(u32),
    Vector(Vec<usize>),
    Undef,
    Eof,
}

mod kind {
    pub const INT: u64 = 0;
    pub const SYMBOL: u64 = 1;
    pub const NIL: u64 = 2;
    pub const TRUE: u64 = 3;
    pub const FALSE: u64 = 4;
    pub const STRING: u64 = 5;
    pub const PAIR: u64 = 6;
    pub const TEMPLATE: u64 = 7;
    pub const CHAR: u64 = 8;
    pub const VECTOR: u64 = 9;
    pub const UNDEF: u64 = 10;
    pub const EOF: u64 = 11;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Image {
    pub symbols: Vec<String>,
    pub nodes: Vec<Node>,
    pub data: Vec<Datum>,
    pub root: usize,
}

impl Image {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::from(MAGIC);
        put_varint(self.symbols.len() as u64, &mut out);
        for name in &self.symbols {
            put_varint(name.chars().count() as u64, &mut out);
            for c in name.chars() {
                put_varint(c as u64, &mut out);
            }
        }
        put_varint(self.nodes.len() as u64, &mut out);
        for node in &self.nodes {
            self.put_node(node, &mut out);
        }
        put_varint(self.root as u64, &mut out);
        out
    }

    fn put_node(&self, node: &Node, out: &mut Vec<u8>) {
        let put_loc = |l: &Locator, out: &mut Vec<u8>| match *l {
            Locator::Slot(k) => {
                put_varint(0, out);
                put_varint(k, out);
            }
            Locator::Symbol(i) => {
                put_varint(1, out);
                put_varint(i as u64, out);
            }
        };
        match node {
            Node::Call { nargs, locator, next } => {
                put_varint(op::CALL as u64, out);
                put_varint(*nargs, out);
                put_loc(locator, out);
                put_varint(*next as u64, out);
            }
            Node::Set { locator, next } | Node::Get { locator, next } => {
                let code = if matches!(node, Node::Set { .. }) { op::SET } else { op::GET };
                put_varint(code as u64, out);
                put_loc(locator, out);
                put_varint(*next as u64, out);
            }
            Node::Const { datum, next } => {
                put_varint(op::CONST as u64, out);
                self.put_datum(*datum, out);
                put_varint(*next as u64, out);
            }
            Node::If { then, alt } => {
                put_varint(op::IF as u64, out);
                put_varint(*then as u64, out);
                put_varint(*alt as u64, out);
            }
            Node::Return => put_varint(op::RETURN as u64, out),
            Node::Halt => put_varint(op::HALT as u64, out),
        }
    }

    fn put_datum(&self, root: usize, out: &mut Vec<u8>) {
        let mut work = vec![root];
        while let Some(i) = work.pop() {
            match &self.data[i] {
                Datum::Int(n) => {
                    put_varint(kind::INT, out);
                    put_varint(zigzag(*n), out);
                }
                Datum::Symbol(s) => {
                    put_varint(kind::SYMBOL, out);
                    put_varint(*s as u64, out);
                }
                Datum::Nil => put_varint(kind::NIL, out),
                Datum::True => put_varint(kind::TRUE, out),
                Datum::False => put_varint(kind::FALSE, out),
                Datum::Undef => put_varint(kind::UNDEF, out),
                Datum::Eof => put_varint(kind::EOF, out),
                Datum::Str(codes) => {
                    put_varint(kind::STRING, out);
                    put_varint(codes.len() as u64, out);
                    for &c in codes {
                        put_varint(c as u64, out);
                    }
                }
                Datum::Pair(a, d) => {
                    put_varint(kind::PAIR, out);
                    work.push(*d);
                    work.push(*a);
                }
                Datum::Template { arity, body } => {
                    put_varint(kind::TEMPLATE, out);
                    put_varint(*arity, out);
                    put_varint(*body as u64, out);
                }
                Datum::Char(c) => {
                    put_varint(kind::CHAR, out);
                    put_varint(*c as u64, out);
                }
                Datum::Vector(items) => {
                    put_varint(kind::VECTOR, out);
                    put_varint(items.len() as u64, out);
                    work.extend(items.iter().rev());
                }
            }
        }
    }

    /// Parses and validates an image without touching any store.
    pub fn parse(bytes: &[u8]) -> Result<Image, CodecError> {
        if !bytes.starts_with(MAGIC) {
            let at = bytes.iter().zip(MAGIC).take_while(|(a, b)| a == b).count();
            return Err(malformed(at, "bad magic"));
        }
        let mut p = Parser { bytes, pos: MAGIC.len(), image: Image::default() };
        let m = p.count()?;
        for _ in 0..m {
            let len = p.count()?;
            let mut name = String::new();
            for _ in 0..len {
                name.push(p.scalar()?);
            }
            p.image.symbols.push(name);
        }
        let n = p.count()?;
        for _ in 0..n {
            let node = p.node()?;
            p.image.nodes.push(node);
        }
        let at = p.pos;
        let root = p.varint()? as usize;
        if root == 0 || root > p.image.nodes.len() {
            return Err(malformed(at, "bad root reference"));
        }
        p.image.root = root;
        if p.pos != bytes.len() {
            return Err(malformed(p.pos, "trailing bytes"));
        }
        Ok(p.image)
    }

    /// Human-readable listing of symbols and nodes.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "symbols: {}", self.symbols.len());
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "  s{i}: {s}");
        }
        let _ = writeln!(out, "nodes: {}", self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let _ = write!(out, "  {}: ", i + 1);
            let loc = |l: &Locator| match *l {
                Locator::Slot(k) => format!("slot {k}"),
                Locator::Symbol(s) => self.symbols[s].clone(),
            };
            let _ = match node {
                Node::Call { nargs, locator, next: 0 } => {
                    writeln!(out, "jump {} nargs {nargs}", loc(locator))
                }
                Node::Call { nargs, locator, next } => {
                    writeln!(out, "call {} nargs {nargs} -> {next}", loc(locator))
                }
                Node::Set { locator, next } => writeln!(out, "set {} -> {next}", loc(locator)),
                Node::Get { locator, next } => writeln!(out, "get {} -> {next}", loc(locator)),
                Node::Const { datum, next } => {
                    writeln!(out, "const {} -> {next}", self.render_datum(*datum))
                }
                Node::If { then, alt } => writeln!(out, "if -> {then} else {alt}"),
                Node::Return => writeln!(out, "return"),
                Node::Halt => writeln!(out, "halt"),
            };
        }
        let _ = writeln!(out, "root: {}", self.root);
        out
    }

    fn render_datum(&self, root: usize) -> String {
        enum Item {
            Text(&'static str),
            Datum(usize),
            Tail(usize),
        }
        let mut out = String::new();
        let mut work = vec![Item::Datum(root)];
        while let Some(item) = work.pop() {
            match item {
                Item::Text(t) => out.push_str(t),
                Item::Tail(i) => match &self.data[i] {
                    Datum::Nil => out.push(')'),
                    Datum::Pair(a, d) => {
                        out.push(' ');
                        work.push(Item::Tail(*d));
                        work.push(Item::Datum(*a));
                    }
                    _ => {
                        out.push_str(" . ");
                        work.push(Item::Text(")"));
                        work.push(Item::Datum(i));
                    }
                },
                Item::Datum(i) => match &self.data[i] {
                    Datum::Int(n) => {
                        let _ = write!(out, "{n}");
                    }
                    Datum::Symbol(s) => {
                        let _ = write!(out, "'{}", self.symbols[*s]);
                    }
                    Datum::Nil => out.push_str("'()"),
                    Datum::True => out.push_str("#t"),
                    Datum::False => out.push_str("#f"),
                    Datum::Undef => out.push_str("#<undefined>"),
                    Datum::Eof => out.push_str("#<eof>"),
                    Datum::Str(codes) => {
                        let text: String = codes
                            .iter()
                            .map(|&c| char::from_u32(c).unwrap_or('\u{FFFD}'))
                            .collect();
                        let _ = write!(out, "{text:?}");
                    }
                    Datum::Char(c) => {
                        let _ = write!(out, "#\\x{c:x}");
                    }
                    Datum::Template { arity, body } => {
                        let _ = write!(out, "#<code arity {arity} entry {body}>");
                    }
                    Datum::Pair(a, d) => {
                        out.push('(');
                        work.push(Item::Tail(*d));
                        work.push(Item::Datum(*a));
                    }
                    Datum::Vector(items) => {
                        out.push_str("#(");
                        work.push(Item::Text(")"));
                        for (k, &item) in items.iter().enumerate().rev() {
                            work.push(Item::Datum(item));
                            if k > 0 {
                                work.push(Item::Text(" "));
                            }
                        }
                    }
                },
            }
        }
        out
    }

    /// Builds the graph in `store`, returning the root instruction.
    pub fn materialize(&self, store: &mut Store) -> Result<Ref, CodecError> {
        let mut symbols = Vec::with_capacity(self.symbols.len());
        for name in &self.symbols {
            symbols.push(store.intern(name)?);
        }
        let mut nodes: Vec<Ref> = Vec::with_capacity(self.nodes.len());
        let mut data: BTreeMap<usize, Value> = BTreeMap::new();
        let node_ref = |nodes: &[Ref], r: usize| -> Value {
            if r == 0 {
                Value::ZERO
            } else {
                Value::Ref(nodes[r - 1])
            }
        };
        let locator = |l: &Locator| match *l {
            Locator::Slot(k) => Value::Int(k as i64),
            Locator::Symbol(s) => Value::Ref(symbols[s]),
        };
        for node in &self.nodes {
            let (code, operand, next) = match node {
                Node::Call { nargs, locator: l, next } => {
                    let desc = store.alloc(Value::Int(*nargs as i64), locator(l), Value::ZERO)?;
                    (op::CALL, Value::Ref(desc), node_ref(&nodes, *next))
                }
                Node::Set { locator: l, next } => (op::SET, locator(l), node_ref(&nodes, *next)),
                Node::Get { locator: l, next } => (op::GET, locator(l), node_ref(&nodes, *next)),
                Node::Const { datum, next } => {
                    let v = self.build_datum(*datum, store, &symbols, &nodes, &mut data)?;
                    (op::CONST, v, node_ref(&nodes, *next))
                }
                Node::If { then, alt } => (op::IF, node_ref(&nodes, *then), node_ref(&nodes, *alt)),
                Node::Return => (op::RETURN, Value::ZERO, Value::ZERO),
                Node::Halt => (op::HALT, Value::ZERO, Value::ZERO),
            };
            nodes.push(store.alloc(Value::Int(code), operand, next)?);
        }
        Ok(nodes[self.root - 1])
    }

    fn build_datum(
        &self,
        root: usize,
        store: &mut Store,
        symbols: &[Ref],
        nodes: &[Ref],
        built: &mut BTreeMap<usize, Value>,
    ) -> Result<Value, CodecError> {
        // Children always have larger indices than their parent, so the
        // subtree rooted at `root` can be built from the highest index down.
        let mut subtree = vec![root];
        let mut k = 0;
        while k < subtree.len() {
            match &self.data[subtree[k]] {
                Datum::Pair(a, d) => subtree.extend([*a, *d]),
                Datum::Vector(items) => subtree.extend(items),
                _ => {}
            }
            k += 1;
        }
        subtree.sort_unstable();
        for &i in subtree.iter().rev() {
            let v = match &self.data[i] {
                Datum::Int(n) => Value::Int(*n),
                Datum::Char(c) => Value::Int(*c as i64),
                Datum::Symbol(s) => Value::Ref(symbols[*s]),
                Datum::Nil => store.nil(),
                Datum::True => store.true_value(),
                Datum::False => store.false_value(),
                Datum::Undef => store.undef(),
                Datum::Eof => store.eof(),
                Datum::Str(codes) => {
                    let codes: Vec<i64> = codes.iter().map(|&c| c as i64).collect();
                    Value::Ref(store.make_string_from_codes(&codes)?)
                }
                Datum::Pair(a, d) => store.cons(built[a], built[d])?,
                Datum::Vector(items) => {
                    let items: Vec<Value> = items.iter().map(|i| built[i]).collect();
                    Value::Ref(store.make_vector(&items)?)
                }
                Datum::Template { arity, body } => {
                    let entry = Value::Ref(nodes[body - 1]);
                    Value::Ref(store.alloc(Value::Int(*arity as i64), Value::ZERO, entry)?)
                }
            };
            built.insert(i, v);
        }
        let v = built[&root];
        built.clear();
        Ok(v)
    }
}

struct Parser<'b> {
    bytes: &'b [u8],
    pos: usize,
    image: Image,
}

impl Parser<'_> {
    fn varint(&mut self) -> Result<u64, CodecError> {
        let (n, pos) = get_varint(self.bytes, self.pos)?;
        self.pos = pos;
        Ok(n)
    }

    /// A length or count. Anything beyond the remaining bytes must be truncated.
    fn count(&mut self) -> Result<u64, CodecError> {
        let at = self.pos;
        let n = self.varint()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(malformed(at, "count exceeds image size"));
        }
        Ok(n)
    }

    fn bounded(&mut self, limit: u64, what: &str) -> Result<usize, CodecError> {
        let at = self.pos;
        let n = self.varint()?;
        if n >= limit {
            return Err(malformed(at, format!("bad {what}")));
        }
        Ok(n as usize)
    }

    fn scalar(&mut self) -> Result<char, CodecError> {
        let at = self.pos;
        let n = self.varint()?;
        u32::try_from(n)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| malformed(at, "bad character code"))
    }

    /// A reference to an already-listed node, or 0 when `absent_ok`.
    fn node_ref(&mut self, absent_ok: bool) -> Result<usize, CodecError> {
        let at = self.pos;
        let r = self.varint()?;
        if r == 0 && absent_ok {
            return Ok(0);
        }
        if r == 0 || r > self.image.nodes.len() as u64 {
            return Err(malformed(at, "dangling node reference"));
        }
        Ok(r as usize)
    }

    fn locator(&mut self) -> Result<Locator, CodecError> {
        let at = self.pos;
        match self.varint()? {
            0 => {
                let k = self.varint()?;
                if k > i64::MAX as u64 {
                    return Err(malformed(at, "bad slot"));
                }
                Ok(Locator::Slot(k))
            }
            1 => Ok(Locator::Symbol(self.bounded(self.image.symbols.len() as u64, "symbol index")?)),
            _ => Err(malformed(at, "bad locator kind")),
        }
    }

    fn node(&mut self) -> Result<Node, CodecError> {
        let at = self.pos;
        let code = self.varint()?;
        Ok(match code as i64 {
            op::CALL => {
                let nargs = self.varint()?;
                if nargs > i64::MAX as u64 {
                    return Err(malformed(at, "bad argument count"));
                }
                let locator = self.locator()?;
                Node::Call { nargs, locator, next: self.node_ref(true)? }
            }
            op::SET => {
                let locator = self.locator()?;
                Node::Set { locator, next: self.node_ref(false)? }
            }
            op::GET => {
                let locator = self.locator()?;
                Node::Get { locator, next: self.node_ref(false)? }
            }
            op::CONST => {
                let datum = self.datum()?;
                Node::Const { datum, next: self.node_ref(false)? }
            }
            op::IF => {
                let then = self.node_ref(false)?;
                Node::If { then, alt: self.node_ref(false)? }
            }
            op::RETURN => Node::Return,
            op::HALT => Node::Halt,
            _ => return Err(malformed(at, "bad opcode")),
        })
    }

    fn push_datum(&mut self, d: Datum) -> usize {
        self.image.data.push(d);
        self.image.data.len() - 1
    }

    fn datum(&mut self) -> Result<usize, CodecError> {
        // Open compound data waiting for children: the datum index and how
        // many children it still needs.
        let mut open: Vec<(usize, usize)> = Vec::new();
        let mut root = None;
        loop {
            let at = self.pos;
            let index = self.image.data.len();
            let (datum, children) = match self.varint()? {
                kind::INT => (Datum::Int(unzigzag(self.varint()?)), 0),
                kind::SYMBOL => {
                    let s = self.bounded(self.image.symbols.len() as u64, "symbol index")?;
                    (Datum::Symbol(s), 0)
                }
                kind::NIL => (Datum::Nil, 0),
                kind::TRUE => (Datum::True, 0),
                kind::FALSE => (Datum::False, 0),
                kind::UNDEF => (Datum::Undef, 0),
                kind::EOF => (Datum::Eof, 0),
                kind::STRING => {
                    let len = self.count()?;
                    let mut codes = Vec::new();
                    for _ in 0..len {
                        codes.push(self.scalar()? as u32);
                    }
                    (Datum::Str(codes), 0)
                }
                kind::PAIR => (Datum::Pair(0, 0), 2),
                kind::TEMPLATE => {
                    let arity = self.varint()?;
                    if arity > i64::MAX as u64 {
                        return Err(malformed(at, "bad arity"));
                    }
                    (Datum::Template { arity, body: self.node_ref(false)? }, 0)
                }
                kind::CHAR => (Datum::Char(self.scalar()? as u32), 0),
                kind::VECTOR => {
                    let len = self.count()? as usize;
                    (Datum::Vector(Vec::new()), len)
                }
                _ => return Err(malformed(at, "bad datum kind")),
            };
            self.push_datum(datum);
            if let Some(&(parent, _)) = open.last() {
                match &mut self.image.data[parent] {
                    Datum::Pair(a, d) => {
                        if *a == 0 {
                            *a = index;
                        } else {
                            *d = index;
                        }
                    }
                    Datum::Vector(items) => items.push(index),
                    _ => unreachable!(),
                }
                open.last_mut().unwrap().1 -= 1;
            } else {
                root = Some(index);
            }
            if children > 0 {
                open.push((index, children));
            }
            while open.last().is_some_and(|&(_, left)| left == 0) {
                open.pop();
            }
            if open.is_empty() {
                return Ok(root.unwrap());
            }
        }
    }
}

/// Encodes the program rooted at `entry`. Symbols in `named` come first in
/// the symbol table, in the given order; others follow in first-use order.
pub fn encode_program(store: &Store, entry: Ref, named: &[Ref]) -> Result<Vec<u8>, CodecError> {
    Ok(build_image(store, entry, named)?.to_bytes())
}

/// Parses `bytes` and builds the program in `store`, returning its entry.
pub fn decode_program(bytes: &[u8], store: &mut Store) -> Result<Ref, CodecError> {
    Image::parse(bytes)?.materialize(store)
}

fn instruction(store: &Store, r: Ref) -> Result<i64, CodecError> {
    match store.f0(r) {
        Value::Int(code) if (op::CALL..=op::HALT).contains(&code) => Ok(code),
        _ => unencodable("not an instruction"),
    }
}

fn expect_ref(v: Value) -> Result<Ref, CodecError> {
    v.as_ref().map_or_else(|| unencodable("missing instruction"), Ok)
}

/// A code rib: `(arity, 0, entry)` with an instruction in the last field.
fn template_body(store: &Store, v: Value) -> Option<Ref> {
    let r = v.as_ref()?;
    match (store.f0(r), store.f2(r)) {
        (Value::Int(a), Value::Ref(body)) if a >= 0 => Some(body),
        _ => None,
    }
}

/// Instructions referenced by `r`, in record order.
fn successors(store: &Store, r: Ref) -> Result<Vec<Ref>, CodecError> {
    let mut out = Vec::new();
    match instruction(store, r)? {
        op::CALL => {
            if let Value::Ref(next) = store.f2(r) {
                out.push(next);
            }
        }
        op::SET | op::GET => out.push(expect_ref(store.f2(r))?),
        op::CONST => {
            scan_templates(store, store.f1(r), &mut out)?;
            out.push(expect_ref(store.f2(r))?);
        }
        op::IF => {
            out.push(expect_ref(store.f1(r))?);
            out.push(expect_ref(store.f2(r))?);
        }
        _ => {}
    }
    Ok(out)
}

fn is_singleton(store: &Store, v: Value) -> bool {
    v == store.nil()
        || v == store.true_value()
        || v == store.false_value()
        || v == store.undef()
        || v == store.eof()
}

/// Code bodies inside a literal, in datum pre-order.
fn scan_templates(store: &Store, v: Value, out: &mut Vec<Ref>) -> Result<(), CodecError> {
    let mut work = vec![v];
    let mut budget = store.len() * 4 + 16;
    while let Some(v) = work.pop() {
        budget = budget.checked_sub(1).map_or_else(|| unencodable("cyclic literal"), Ok)?;
        if is_singleton(store, v) {
            continue;
        }
        if let Some(body) = template_body(store, v) {
            out.push(body);
            continue;
        }
        match (store.tag_of(v), v) {
            (Some(tag::PAIR), Value::Ref(r)) => {
                work.push(store.f1(r));
                work.push(store.f0(r));
            }
            (Some(tag::VECTOR), Value::Ref(r)) => work.extend(store.vector_items(r)?.into_iter().rev()),
            _ => {}
        }
    }
    Ok(())
}

/// Converts `store`'s graph to table form.
pub fn build_image(store: &Store, entry: Ref, named: &[Ref]) -> Result<Image, CodecError> {
    instruction(store, entry)?;
    // Iterative post-order: a node is numbered once all its successors are.
    let mut number: BTreeMap<Ref, usize> = BTreeMap::new();
    let mut order: Vec<Ref> = Vec::new();
    let mut active: BTreeSet<Ref> = BTreeSet::new();
    let mut stack: Vec<(Ref, Vec<Ref>, usize)> = vec![(entry, successors(store, entry)?, 0)];
    active.insert(entry);
    while let Some((node, succ, k)) = stack.last_mut() {
        if *k < succ.len() {
            let s = succ[*k];
            *k += 1;
            if number.contains_key(&s) {
                continue;
            }
            if active.contains(&s) {
                return unencodable("cyclic code");
            }
            let next = successors(store, s)?;
            active.insert(s);
            stack.push((s, next, 0));
        } else {
            let node = *node;
            stack.pop();
            active.remove(&node);
            order.push(node);
            number.insert(node, order.len());
        }
    }

    let mut enc = Encoder { store, image: Image::default(), symbols: BTreeMap::new() };
    for &s in named {
        enc.symbol(s)?;
    }
    for &r in &order {
        let node = enc.node(r, &number)?;
        enc.image.nodes.push(node);
    }
    enc.image.root = number[&entry];
    Ok(enc.image)
}

struct Encoder<'s> {
    store: &'s Store,
    image: Image,
    symbols: BTreeMap<Ref, usize>,
}

impl Encoder<'_> {
    fn symbol(&mut self, s: Ref) -> Result<usize, CodecError> {
        if let Some(&i) = self.symbols.get(&s) {
            return Ok(i);
        }
        if !self.store.is_symbol(Value::Ref(s)) {
            return unencodable("locator is not a symbol");
        }
        let name = self.store.symbol_name(s)?;
        self.image.symbols.push(name);
        let i = self.image.symbols.len() - 1;
        self.symbols.insert(s, i);
        Ok(i)
    }

    fn locator(&mut self, v: Value) -> Result<Locator, CodecError> {
        match v {
            Value::Int(k) if k >= 0 => Ok(Locator::Slot(k as u64)),
            Value::Int(_) => unencodable("negative slot"),
            Value::Ref(s) => Ok(Locator::Symbol(self.symbol(s)?)),
        }
    }

    fn node(&mut self, r: Ref, number: &BTreeMap<Ref, usize>) -> Result<Node, CodecError> {
        let s = self.store;
        let num = |v: Value| v.as_ref().map_or(0, |r| number[&r]);
        Ok(match instruction(s, r)? {
            op::CALL => {
                let desc = expect_ref(s.f1(r))?;
                let nargs = match s.f0(desc) {
                    Value::Int(n) if n >= 0 => n as u64,
                    _ => return unencodable("bad call descriptor"),
                };
                let locator = self.locator(s.f1(desc))?;
                if !matches!(s.f2(r), Value::Ref(_) | Value::Int(0)) {
                    return unencodable("bad call continuation");
                }
                Node::Call { nargs, locator, next: num(s.f2(r)) }
            }
            op::SET => Node::Set { locator: self.locator(s.f1(r))?, next: num(s.f2(r)) },
            op::GET => Node::Get { locator: self.locator(s.f1(r))?, next: num(s.f2(r)) },
            op::CONST => Node::Const { datum: self.datum(s.f1(r), number)?, next: num(s.f2(r)) },
            op::IF => Node::If { then: num(s.f1(r)), alt: num(s.f2(r)) },
            op::RETURN => Node::Return,
            _ => Node::Halt,
        })
    }

    fn datum(&mut self, v: Value, number: &BTreeMap<Ref, usize>) -> Result<usize, CodecError> {
        let s = self.store;
        let root = self.image.data.len();
        // (value, parent slot to patch)
        let mut work: Vec<(Value, Option<(usize, bool)>)> = vec![(v, None)];
        let mut budget = s.len() * 4 + 16;
        while let Some((v, parent)) = work.pop() {
            budget = budget.checked_sub(1).map_or_else(|| unencodable("cyclic literal"), Ok)?;
            let index = self.image.data.len();
            let datum = if let Value::Int(n) = v {
                Datum::Int(n)
            } else if v == s.nil() {
                Datum::Nil
            } else if v == s.true_value() {
                Datum::True
            } else if v == s.false_value() {
                Datum::False
            } else if v == s.undef() {
                Datum::Undef
            } else if v == s.eof() {
                Datum::Eof
            } else if let Some(body) = template_body(s, v) {
                let arity = s.f0(v.as_ref().unwrap()).as_int().unwrap() as u64;
                Datum::Template { arity, body: number[&body] }
            } else {
                let r = v.as_ref().unwrap();
                match s.tag_of(v) {
                    Some(tag::SYMBOL) => Datum::Symbol(self.symbol(r)?),
                    Some(tag::STRING) => {
                        let mut codes = Vec::new();
                        for c in s.string_codes(r)? {
                            match u32::try_from(c).ok().and_then(char::from_u32) {
                                Some(c) => codes.push(c as u32),
                                None => return unencodable("string holds a non-character"),
                            }
                        }
                        Datum::Str(codes)
                    }
                    Some(tag::PAIR) => {
                        work.push((s.f1(r), Some((index, true))));
                        work.push((s.f0(r), Some((index, false))));
                        Datum::Pair(0, 0)
                    }
                    Some(tag::VECTOR) => {
                        let items = s.vector_items(r)?;
                        for &item in items.iter().rev() {
                            work.push((item, Some((index, false))));
                        }
                        Datum::Vector(Vec::with_capacity(items.len()))
                    }
                    _ => return unencodable("literal is a procedure or opaque object"),
                }
            };
            self.image.data.push(datum);
            if let Some((p, second)) = parent {
                match &mut self.image.data[p] {
                    Datum::Pair(a, d) => *(if second { d } else { a }) = index,
                    Datum::Vector(items) => items.push(index),
                    _ => unreachable!(),
                }
            }
        }
        Ok(root)
    }
}

/// Checks that two code graphs are isomorphic: same instructions, same
/// descriptor contents, equal literals, and the same sharing of instructions.
pub fn isomorphic(a: &Store, ea: Ref, b: &Store, eb: Ref) -> Result<(), String> {
    let mut ab: BTreeMap<Ref, Ref> = BTreeMap::new();
    let mut ba: BTreeMap<Ref, Ref> = BTreeMap::new();
    let mut work = vec![(ea, eb)];
    while let Some((x, y)) = work.pop() {
        match (ab.get(&x), ba.get(&y)) {
            (Some(&y2), Some(&x2)) if y2 == y && x2 == x => continue,
            (None, None) => {
                ab.insert(x, y);
                ba.insert(y, x);
            }
            _ => return Err(format!("sharing differs at node {}", x.index())),
        }
        let (ox, oy) = (a.f0(x), b.f0(y));
        if ox != oy {
            return Err(format!("opcode {ox:?} vs {oy:?}"));
        }
        let code = ox.as_int().ok_or("not an instruction")?;
        let pair = |vx: Value, vy: Value, work: &mut Vec<(Ref, Ref)>| match (vx, vy) {
            (Value::Ref(rx), Value::Ref(ry)) => {
                work.push((rx, ry));
                Ok(())
            }
            (Value::Int(0), Value::Int(0)) => Ok(()),
            _ => Err(String::from("successor mismatch")),
        };
        match code {
            op::CALL => {
                let (dx, dy) = (expect(a.f1(x))?, expect(b.f1(y))?);
                if a.f0(dx) != b.f0(dy) {
                    return Err(String::from("argument count differs"));
                }
                same_locator(a, a.f1(dx), b, b.f1(dy))?;
                pair(a.f2(x), b.f2(y), &mut work)?;
            }
            op::SET | op::GET => {
                same_locator(a, a.f1(x), b, b.f1(y))?;
                pair(a.f2(x), b.f2(y), &mut work)?;
            }
            op::CONST => {
                same_literal(a, a.f1(x), b, b.f1(y), &mut work)?;
                pair(a.f2(x), b.f2(y), &mut work)?;
            }
            op::IF => {
                pair(a.f1(x), b.f1(y), &mut work)?;
                pair(a.f2(x), b.f2(y), &mut work)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn expect(v: Value) -> Result<Ref, String> {
    v.as_ref().ok_or_else(|| String::from("expected a reference"))
}

fn same_locator(a: &Store, la: Value, b: &Store, lb: Value) -> Result<(), String> {
    match (la, lb) {
        (Value::Int(x), Value::Int(y)) if x == y => Ok(()),
        (Value::Ref(x), Value::Ref(y)) if a.symbol_name(x).ok() == b.symbol_name(y).ok() => Ok(()),
        _ => Err(String::from("locator differs")),
    }
}

fn same_literal(a: &Store, va: Value, b: &Store, vb: Value, code: &mut Vec<(Ref, Ref)>) -> Result<(), String> {
    let mut work = vec![(va, vb)];
    while let Some((x, y)) = work.pop() {
        let differs = || Err(String::from("literal differs"));
        match (x, y) {
            (Value::Int(m), Value::Int(n)) => {
                if m != n {
                    return differs();
                }
            }
            (Value::Ref(rx), Value::Ref(ry)) => {
                let special = |s: &Store, v: Value| {
                    [s.nil(), s.true_value(), s.false_value(), s.undef(), s.eof()]
                        .iter()
                        .position(|&t| t == v)
                };
                match (special(a, x), special(b, y)) {
                    (Some(i), Some(j)) if i == j => continue,
                    (None, None) => {}
                    _ => return differs(),
                }
                match (template_body(a, x), template_body(b, y)) {
                    (Some(bx), Some(by)) => {
                        if a.f0(rx) != b.f0(ry) {
                            return differs();
                        }
                        code.push((bx, by));
                        continue;
                    }
                    (None, None) => {}
                    _ => return differs(),
                }
                if a.tag_of(x) != b.tag_of(y) {
                    return differs();
                }
                match a.tag_of(x) {
                    Some(tag::SYMBOL) => {
                        if a.symbol_name(rx).ok() != b.symbol_name(ry).ok() {
                            return differs();
                        }
                    }
                    Some(tag::STRING) => {
                        if a.string_codes(rx).ok() != b.string_codes(ry).ok() {
                            return differs();
                        }
                    }
                    Some(tag::PAIR) => {
                        work.push((a.f1(rx), b.f1(ry)));
                        work.push((a.f0(rx), b.f0(ry)));
                    }
                    Some(tag::VECTOR) => {
                        let (ix, iy) = (a.vector_items(rx), b.vector_items(ry));
                        match (ix, iy) {
                            (Ok(ix), Ok(iy)) if ix.len() == iy.len() => work.extend(ix.into_iter().zip(iy)),
                            _ => return differs(),
                        }
                    }
                    _ => return differs(),
                }
            }
            _ => return differs(),
        }
    }
    Ok(())
}
