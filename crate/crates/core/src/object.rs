//! The rib object model.
//!
//! Every heap object is a [`Rib`]: three [`Value`] fields. A value is either
//! an exact integer or a [`Ref`] into the [`Store`]. Data ribs carry a type
//! tag in their third field; instruction ribs carry an opcode in their first
//! field and are only ever found by following code references.
//!
//! Layout conventions:
//!
//! | object    | f0                      | f1                   | f2          |
//! |-----------|-------------------------|----------------------|-------------|
//! | pair      | car                     | cdr                  | `0`         |
//! | procedure | code                    | captured stack       | `1`         |
//! | symbol    | global value            | name string          | `2`         |
//! | string    | chain of character cells| length               | `3`         |
//! | vector    | chain of element cells  | length               | `4`         |
//! | special   | `0`                     | `0`                  | `5`         |
//! | code      | `2*nparams + variadic`  | `0`                  | entry instr |
//!
//! Procedure code is a code rib, a non-negative primitive index, or `-1` for a
//! continuation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Type tags stored in the third field of data ribs.
pub mod tag {
    pub const PAIR: i64 = 0;
    pub const PROCEDURE: i64 = 1;
    pub const SYMBOL: i64 = 2;
    pub const STRING: i64 = 3;
    pub const VECTOR: i64 = 4;
    pub const SPECIAL: i64 = 5;
}

/// Index of a rib in a [`Store`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ref(u32);

impl Ref {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Ref(Ref),
}

impl Value {
    pub const ZERO: Value = Value::Int(0);

    pub fn as_int(self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(n),
            Value::Ref(_) => None,
        }
    }

    pub fn as_ref(self) -> Option<Ref> {
        match self {
            Value::Ref(r) => Some(r),
            Value::Int(_) => None,
        }
    }

    pub fn is_int(self) -> bool {
        matches!(self, Value::Int(_))
    }
}

impl From<Ref> for Value {
    fn from(r: Ref) -> Value {
        Value::Ref(r)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Value {
        Value::Int(n)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Ref(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rib {
    pub fields: [Value; 3],
}

impl Rib {
    pub fn new(f0: Value, f1: Value, f2: Value) -> Rib {
        Rib { fields: [f0, f1, f2] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreError {
    /// The heap limit was reached.
    Exhausted { limit: usize },
    /// Field index outside `0..3`.
    BadField(usize),
    /// A value did not have the expected layout.
    WrongType { expected: &'static str, found: Value },
    /// A string or vector chain disagrees with its cached length.
    Malformed(&'static str),
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreError::Exhausted { limit } => write!(f, "heap exhausted ({limit} ribs)"),
            StoreError::BadField(i) => write!(f, "internal error: field index {i} out of range"),
            StoreError::WrongType { expected, found } => {
                write!(f, "expected {expected}, found {found}")
            }
            StoreError::Malformed(what) => write!(f, "malformed {what}"),
        }
    }
}

/// Result of a compaction: maps pre-compaction refs to their new location.
#[derive(Clone, Debug)]
pub struct Relocation {
    forward: Vec<u32>,
    live: usize,
}

const RECLAIMED: u32 = u32::MAX;

impl Relocation {
    /// New location of `old`, or `None` if it was reclaimed.
    pub fn get(&self, old: Ref) -> Option<Ref> {
        match self.forward.get(old.index()) {
            Some(&i) if i != RECLAIMED => Some(Ref(i)),
            _ => None,
        }
    }

    pub fn apply(&self, v: Value) -> Value {
        match v {
            Value::Ref(r) => Value::Ref(self.get(r).expect("relocating a reclaimed rib")),
            n => n,
        }
    }

    /// Number of ribs that survived.
    pub fn live(&self) -> usize {
        self.live
    }
}

/// Growable rib heap with a symbol table and the boot singletons.
#[derive(Clone, Debug)]
pub struct Store {
    ribs: Vec<Rib>,
    symbols: BTreeMap<String, Ref>,
    nil: Ref,
    true_: Ref,
    false_: Ref,
    undef: Ref,
    eof: Ref,
    limit: Option<usize>,
    allocations: u64,
}

impl Default for Store {
    fn default() -> Self {
        Store::new()
    }
}

impl Store {
    pub fn new() -> Store {
        let mut ribs = Vec::with_capacity(1024);
        for i in 0..5 {
            ribs.push(Rib::new(Value::Int(i), Value::ZERO, Value::Int(tag::SPECIAL)));
        }
        Store {
            ribs,
            symbols: BTreeMap::new(),
            nil: Ref(0),
            true_: Ref(1),
            false_: Ref(2),
            undef: Ref(3),
            eof: Ref(4),
            limit: None,
            allocations: 0,
        }
    }

    /// A store that refuses to grow past `limit` ribs (singletons included).
    pub fn with_limit(limit: usize) -> Store {
        let mut store = Store::new();
        store.limit = Some(limit);
        store
    }

    pub fn limit(&self) -> Option<usize> {
        self.limit
    }

    pub fn set_limit(&mut self, limit: Option<usize>) {
        self.limit = limit;
    }

    /// Number of ribs currently in the store.
    pub fn len(&self) -> usize {
        self.ribs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ribs.is_empty()
    }

    /// Total allocations performed over the store's lifetime.
    pub fn allocations(&self) -> u64 {
        self.allocations
    }

    pub fn alloc(&mut self, f0: Value, f1: Value, f2: Value) -> Result<Ref, StoreError> {
        if let Some(limit) = self.limit {
            if self.ribs.len() >= limit {
                return Err(StoreError::Exhausted { limit });
            }
        }
        let r = Ref(self.ribs.len() as u32);
        self.ribs.push(Rib::new(f0, f1, f2));
        self.allocations += 1;
        Ok(r)
    }

    pub fn rib(&self, r: Ref) -> Rib {
        self.ribs[r.index()]
    }

    pub fn field(&self, r: Ref, i: usize) -> Result<Value, StoreError> {
        if i > 2 {
            return Err(StoreError::BadField(i));
        }
        Ok(self.ribs[r.index()].fields[i])
    }

    /// Writes field `i` and returns the stored value.
    pub fn set_field(&mut self, r: Ref, i: usize, v: Value) -> Result<Value, StoreError> {
        if i > 2 {
            return Err(StoreError::BadField(i));
        }
        self.ribs[r.index()].fields[i] = v;
        Ok(v)
    }

    #[inline]
    pub fn f0(&self, r: Ref) -> Value {
        self.ribs[r.index()].fields[0]
    }

    #[inline]
    pub fn f1(&self, r: Ref) -> Value {
        self.ribs[r.index()].fields[1]
    }

    #[inline]
    pub fn f2(&self, r: Ref) -> Value {
        self.ribs[r.index()].fields[2]
    }

    #[inline]
    pub fn set_f0(&mut self, r: Ref, v: Value) {
        self.ribs[r.index()].fields[0] = v;
    }

    #[inline]
    pub fn set_f1(&mut self, r: Ref, v: Value) {
        self.ribs[r.index()].fields[1] = v;
    }

    #[inline]
    pub fn set_f2(&mut self, r: Ref, v: Value) {
        self.ribs[r.index()].fields[2] = v;
    }

    // Singletons.

    pub fn nil(&self) -> Value {
        Value::Ref(self.nil)
    }

    pub fn true_value(&self) -> Value {
        Value::Ref(self.true_)
    }

    pub fn false_value(&self) -> Value {
        Value::Ref(self.false_)
    }

    pub fn undef(&self) -> Value {
        Value::Ref(self.undef)
    }

    pub fn eof(&self) -> Value {
        Value::Ref(self.eof)
    }

    pub fn boolean(&self, b: bool) -> Value {
        if b {
            self.true_value()
        } else {
            self.false_value()
        }
    }

    /// The data tag of `v`, if it is a rib whose third field is an integer.
    pub fn tag_of(&self, v: Value) -> Option<i64> {
        match v {
            Value::Ref(r) => self.f2(r).as_int(),
            Value::Int(_) => None,
        }
    }

    fn has_tag(&self, v: Value, t: i64) -> bool {
        self.tag_of(v) == Some(t)
    }

    pub fn is_pair(&self, v: Value) -> bool {
        self.has_tag(v, tag::PAIR)
    }

    pub fn is_procedure(&self, v: Value) -> bool {
        self.has_tag(v, tag::PROCEDURE)
    }

    pub fn is_symbol(&self, v: Value) -> bool {
        self.has_tag(v, tag::SYMBOL)
    }

    pub fn is_string(&self, v: Value) -> bool {
        self.has_tag(v, tag::STRING)
    }

    pub fn is_vector(&self, v: Value) -> bool {
        self.has_tag(v, tag::VECTOR)
    }

    /// Identity on refs, numeric equality on integers.
    pub fn eqv(&self, a: Value, b: Value) -> bool {
        a == b
    }

    // Pairs and lists.

    pub fn cons(&mut self, car: Value, cdr: Value) -> Result<Value, StoreError> {
        self.alloc(car, cdr, Value::Int(tag::PAIR)).map(Value::Ref)
    }

    pub fn car(&self, pair: Value) -> Option<Value> {
        match pair {
            Value::Ref(r) if self.is_pair(pair) => Some(self.f0(r)),
            _ => None,
        }
    }

    pub fn cdr(&self, pair: Value) -> Option<Value> {
        match pair {
            Value::Ref(r) if self.is_pair(pair) => Some(self.f1(r)),
            _ => None,
        }
    }

    /// Builds a proper list from `items`.
    pub fn list<I>(&mut self, items: I) -> Result<Value, StoreError>
    where
        I: IntoIterator<Item = Value>,
        I::IntoIter: DoubleEndedIterator,
    {
        self.list_with_tail(items, self.nil())
    }

    pub fn list_with_tail<I>(&mut self, items: I, tail: Value) -> Result<Value, StoreError>
    where
        I: IntoIterator<Item = Value>,
        I::IntoIter: DoubleEndedIterator,
    {
        let mut acc = tail;
        for v in items.into_iter().rev() {
            acc = self.cons(v, acc)?;
        }
        Ok(acc)
    }

    /// Elements of a proper list, or `None` for improper or cyclic input.
    pub fn list_to_vec(&self, mut v: Value) -> Option<Vec<Value>> {
        let mut out = Vec::new();
        while v != self.nil() {
            if !self.is_pair(v) || out.len() > self.ribs.len() {
                return None;
            }
            let r = v.as_ref()?;
            out.push(self.f0(r));
            v = self.f1(r);
        }
        Some(out)
    }

    // Strings and vectors.

    fn make_sequence(&mut self, items: &[Value], t: i64) -> Result<Ref, StoreError> {
        let chain = self.list(items.iter().copied())?;
        self.alloc(chain, Value::Int(items.len() as i64), Value::Int(t))
    }

    fn sequence_items(&self, r: Ref, t: i64, what: &'static str) -> Result<Vec<Value>, StoreError> {
        if self.f2(r) != Value::Int(t) {
            return Err(StoreError::WrongType { expected: what, found: Value::Ref(r) });
        }
        let len = match self.f1(r) {
            Value::Int(n) if n >= 0 => n as usize,
            _ => return Err(StoreError::Malformed(what)),
        };
        let mut out = Vec::with_capacity(len.min(self.ribs.len()));
        let mut cell = self.f0(r);
        for _ in 0..len {
            if !self.is_pair(cell) {
                return Err(StoreError::Malformed(what));
            }
            let c = cell.as_ref().unwrap();
            out.push(self.f0(c));
            cell = self.f1(c);
        }
        Ok(out)
    }

    pub fn make_string(&mut self, text: &str) -> Result<Ref, StoreError> {
        let codes: Vec<Value> = text.chars().map(|c| Value::Int(c as i64)).collect();
        self.make_sequence(&codes, tag::STRING)
    }

    pub fn make_string_from_codes(&mut self, codes: &[i64]) -> Result<Ref, StoreError> {
        let codes: Vec<Value> = codes.iter().map(|&c| Value::Int(c)).collect();
        self.make_sequence(&codes, tag::STRING)
    }

    /// Character codes of a string rib.
    pub fn string_codes(&self, r: Ref) -> Result<Vec<i64>, StoreError> {
        self.sequence_items(r, tag::STRING, "string")?
            .into_iter()
            .map(|v| v.as_int().ok_or(StoreError::Malformed("string")))
            .collect()
    }

    /// Text of a string rib. Codes that are not Unicode scalar values become U+FFFD.
    pub fn text_of(&self, r: Ref) -> Result<String, StoreError> {
        Ok(self
            .string_codes(r)?
            .into_iter()
            .map(|c| u32::try_from(c).ok().and_then(char::from_u32).unwrap_or('\u{FFFD}'))
            .collect())
    }

    pub fn make_vector(&mut self, items: &[Value]) -> Result<Ref, StoreError> {
        self.make_sequence(items, tag::VECTOR)
    }

    pub fn vector_items(&self, r: Ref) -> Result<Vec<Value>, StoreError> {
        self.sequence_items(r, tag::VECTOR, "vector")
    }

    // Symbols.

    /// Returns the unique symbol named `name`, creating it unbound on first use.
    pub fn intern(&mut self, name: &str) -> Result<Ref, StoreError> {
        if let Some(&r) = self.symbols.get(name) {
            return Ok(r);
        }
        let text = self.make_string(name)?;
        let undef = self.undef();
        let sym = self.alloc(undef, Value::Ref(text), Value::Int(tag::SYMBOL))?;
        self.symbols.insert(String::from(name), sym);
        Ok(sym)
    }

    pub fn lookup_symbol(&self, name: &str) -> Option<Ref> {
        self.symbols.get(name).copied()
    }

    pub fn symbol_name(&self, r: Ref) -> Result<String, StoreError> {
        if !self.is_symbol(Value::Ref(r)) {
            return Err(StoreError::WrongType { expected: "symbol", found: Value::Ref(r) });
        }
        match self.f1(r) {
            Value::Ref(name) => self.text_of(name),
            _ => Err(StoreError::Malformed("symbol")),
        }
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    /// Interned symbols in name order.
    pub fn symbols(&self) -> impl Iterator<Item = (&str, Ref)> + '_ {
        self.symbols.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn global(&self, sym: Ref) -> Value {
        self.f0(sym)
    }

    pub fn set_global(&mut self, sym: Ref, v: Value) {
        self.set_f0(sym, v);
    }

    /// Sliding compaction. Everything reachable from `roots`, the symbol
    /// table and the singletons survives in its original order; `roots` are
    /// rewritten in place.
    pub fn compact(&mut self, roots: &mut [Value]) -> Relocation {
        let n = self.ribs.len();
        let mut marked = alloc::vec![false; n];
        let mut work: Vec<Ref> = Vec::new();
        work.extend([self.nil, self.true_, self.false_, self.undef, self.eof]);
        work.extend(self.symbols.values().copied());
        work.extend(roots.iter().filter_map(|v| v.as_ref()));
        while let Some(r) = work.pop() {
            let i = r.index();
            if marked[i] {
                continue;
            }
            marked[i] = true;
            for f in self.ribs[i].fields {
                if let Value::Ref(c) = f {
                    if !marked[c.index()] {
                        work.push(c);
                    }
                }
            }
        }

        let mut forward = alloc::vec![RECLAIMED; n];
        let mut next = 0u32;
        for i in 0..n {
            if marked[i] {
                forward[i] = next;
                next += 1;
            }
        }
        let reloc = Relocation { forward, live: next as usize };

        for i in 0..n {
            if marked[i] {
                let mut rib = self.ribs[i];
                for f in rib.fields.iter_mut() {
                    *f = reloc.apply(*f);
                }
                self.ribs[reloc.forward[i] as usize] = rib;
            }
        }
        self.ribs.truncate(reloc.live);

        for r in self.symbols.values_mut() {
            *r = reloc.get(*r).unwrap();
        }
        for s in [&mut self.nil, &mut self.true_, &mut self.false_, &mut self.undef, &mut self.eof] {
            *s = reloc.get(*s).unwrap();
        }
        for v in roots.iter_mut() {
            *v = reloc.apply(*v);
        }
        reloc
    }
}
