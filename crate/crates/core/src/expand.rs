//! Derived-form expansion.
//!
//! Rewrites surface Scheme into the core language: `quote`, `if`, `set!`,
//! `define` (top level only), `lambda`, `begin` and application. Expansion
//! output is ordinary datums in the store; [`Keywords::classify`] gives
//! consumers a structured view of a core datum.
//!
//! Applications keep an identifier operator, or a `lambda` operator whose
//! fixed parameter list matches the argument count (a let-style binding).
//! Any other operator is bound first: `(f-expr a ...)` becomes
//! `((lambda (##op) (##op a ...)) f-expr)`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::object::{Ref, Store, StoreError, Value};
use crate::rvm::PRIMITIVE_PREFIX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandError {
    /// Name of the offending special form.
    pub form: String,
    pub message: String,
}

impl fmt::Display for ExpandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.form, self.message)
    }
}

fn error(form: &str, message: &str) -> ExpandError {
    ExpandError { form: form.to_string(), message: message.to_string() }
}

impl From<StoreError> for ExpandError {
    fn from(e: StoreError) -> Self {
        ExpandError { form: String::from("store"), message: e.to_string() }
    }
}

/// Interned symbols for every keyword the expander and compiler recognize.
#[derive(Clone, Copy, Debug)]
pub struct Keywords {
    pub quote: Ref,
    pub if_: Ref,
    pub set: Ref,
    pub define: Ref,
    pub lambda: Ref,
    pub begin: Ref,
    pub let_: Ref,
    pub let_star: Ref,
    pub letrec: Ref,
    pub cond: Ref,
    pub else_: Ref,
    pub arrow: Ref,
    pub and: Ref,
    pub or: Ref,
    pub when: Ref,
    pub unless: Ref,
    op_var: Ref,
    or_var: Ref,
    cond_var: Ref,
}

impl Keywords {
    pub fn new(store: &mut Store) -> Result<Keywords, StoreError> {
        Ok(Keywords {
            quote: store.intern("quote")?,
            if_: store.intern("if")?,
            set: store.intern("set!")?,
            define: store.intern("define")?,
            lambda: store.intern("lambda")?,
            begin: store.intern("begin")?,
            let_: store.intern("let")?,
            let_star: store.intern("let*")?,
            letrec: store.intern("letrec")?,
            cond: store.intern("cond")?,
            else_: store.intern("else")?,
            arrow: store.intern("=>")?,
            and: store.intern("and")?,
            or: store.intern("or")?,
            when: store.intern("when")?,
            unless: store.intern("unless")?,
            op_var: store.intern("##op")?,
            or_var: store.intern("##or")?,
            cond_var: store.intern("##t")?,
        })
    }

    /// Structured view of an expanded (core) datum.
    pub fn classify(&self, store: &Store, v: Value) -> Result<Core, ExpandError> {
        if store.is_symbol(v) {
            return Ok(Core::Var(v.as_ref().unwrap()));
        }
        if !store.is_pair(v) {
            return Ok(Core::Const(v));
        }
        let items = store.list_to_vec(v).ok_or_else(|| error("application", "improper list"))?;
        let head = items[0];
        let sym = head.as_ref().filter(|_| store.is_symbol(head));
        let symbol_at = |i: usize, form: &str| -> Result<Ref, ExpandError> {
            items
                .get(i)
                .copied()
                .filter(|x| store.is_symbol(*x))
                .and_then(Value::as_ref)
                .ok_or_else(|| error(form, "expected an identifier"))
        };
        match sym {
            Some(s) if s == self.quote && items.len() == 2 => Ok(Core::Quote(items[1])),
            Some(s) if s == self.if_ && (items.len() == 3 || items.len() == 4) => {
                Ok(Core::If(items[1], items[2], items.get(3).copied()))
            }
            Some(s) if s == self.set && items.len() == 3 => {
                Ok(Core::Set(symbol_at(1, "set!")?, items[2]))
            }
            Some(s) if s == self.define && items.len() == 3 => {
                Ok(Core::Define(symbol_at(1, "define")?, items[2]))
            }
            Some(s) if s == self.lambda && items.len() >= 3 => {
                let (params, rest) = parse_params(store, items[1])?;
                Ok(Core::Lambda(Lambda { params, rest, body: items[2..].to_vec() }))
            }
            Some(s) if s == self.begin && items.len() >= 2 => Ok(Core::Begin(items[1..].to_vec())),
            Some(s) if self.is_core_keyword(s) => Err(error(&keyword_name(store, s), "malformed")),
            _ => Ok(Core::App(head, items[1..].to_vec())),
        }
    }

    fn is_core_keyword(&self, s: Ref) -> bool {
        [self.quote, self.if_, self.set, self.define, self.lambda, self.begin].contains(&s)
    }
}

fn keyword_name(store: &Store, s: Ref) -> String {
    store.symbol_name(s).unwrap_or_default()
}

/// A core form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Core {
    /// Self-evaluating datum.
    Const(Value),
    Var(Ref),
    Quote(Value),
    If(Value, Value, Option<Value>),
    Set(Ref, Value),
    /// Global definition; only produced at top level.
    Define(Ref, Value),
    Lambda(Lambda),
    Begin(Vec<Value>),
    App(Value, Vec<Value>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lambda {
    pub params: Vec<Ref>,
    pub rest: Option<Ref>,
    pub body: Vec<Value>,
}

fn parse_params(store: &Store, mut v: Value) -> Result<(Vec<Ref>, Option<Ref>), ExpandError> {
    let mut params = Vec::new();
    while store.is_pair(v) {
        let p = store.car(v).unwrap();
        if !store.is_symbol(p) {
            return Err(error("lambda", "parameter is not an identifier"));
        }
        params.push(p.as_ref().unwrap());
        v = store.cdr(v).unwrap();
        if params.len() > store.len() {
            return Err(error("lambda", "cyclic parameter list"));
        }
    }
    let rest = if v == store.nil() {
        None
    } else if store.is_symbol(v) {
        Some(v.as_ref().unwrap())
    } else {
        return Err(error("lambda", "bad parameter list"));
    };
    Ok((params, rest))
}

pub struct Expander<'s> {
    store: &'s mut Store,
    kw: Keywords,
}

/// Expands one top-level form.
pub fn expand(store: &mut Store, datum: Value) -> Result<Value, ExpandError> {
    Expander::new(store)?.expand_toplevel(datum)
}

/// Expands a sequence of top-level forms.
pub fn expand_program(store: &mut Store, forms: &[Value]) -> Result<Vec<Value>, ExpandError> {
    let mut ex = Expander::new(store)?;
    forms.iter().map(|&f| ex.expand_toplevel(f)).collect()
}

impl<'s> Expander<'s> {
    pub fn new(store: &'s mut Store) -> Result<Expander<'s>, ExpandError> {
        let kw = Keywords::new(store)?;
        Ok(Expander { store, kw })
    }

    pub fn keywords(&self) -> Keywords {
        self.kw
    }

    fn list(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        Ok(self.store.list(items.iter().copied())?)
    }

    fn sym(&self, r: Ref) -> Value {
        Value::Ref(r)
    }

    fn head_is(&self, v: Value, kw: Ref) -> bool {
        self.store.car(v) == Some(Value::Ref(kw))
    }

    fn check_name(&self, form: &str, v: Value) -> Result<Ref, ExpandError> {
        if !self.store.is_symbol(v) {
            return Err(error(form, "expected an identifier"));
        }
        let r = v.as_ref().unwrap();
        let name = self.store.symbol_name(r)?;
        if name.starts_with(PRIMITIVE_PREFIX) {
            return Err(ExpandError {
                form: form.to_string(),
                message: alloc::format!("cannot bind reserved name {name}"),
            });
        }
        Ok(r)
    }

    fn items(&self, form: &str, v: Value) -> Result<Vec<Value>, ExpandError> {
        self.store.list_to_vec(v).ok_or_else(|| error(form, "improper form"))
    }

    pub fn expand_toplevel(&mut self, v: Value) -> Result<Value, ExpandError> {
        if self.head_is(v, self.kw.define) {
            let (name, value) = self.split_define(v)?;
            let value = self.expand_expr(value)?;
            return self.list(&[self.sym(self.kw.define), self.sym(name), value]);
        }
        if self.head_is(v, self.kw.begin) {
            let items = self.items("begin", v)?;
            if items.len() < 2 {
                return Err(error("begin", "empty begin"));
            }
            let mut out = alloc::vec![self.sym(self.kw.begin)];
            for &f in &items[1..] {
                out.push(self.expand_toplevel(f)?);
            }
            return if out.len() == 2 { Ok(out[1]) } else { self.list(&out) };
        }
        self.expand_expr(v)
    }

    /// `(define name e)` or `(define (name . params) body ...)` as (name, value datum).
    fn split_define(&mut self, v: Value) -> Result<(Ref, Value), ExpandError> {
        let items = self.items("define", v)?;
        if items.len() < 2 {
            return Err(error("define", "missing name"));
        }
        let target = items[1];
        if self.store.is_pair(target) {
            let name = self.check_name("define", self.store.car(target).unwrap())?;
            if items.len() < 3 {
                return Err(error("define", "empty body"));
            }
            let params = self.store.cdr(target).unwrap();
            let mut lam = alloc::vec![self.sym(self.kw.lambda), params];
            lam.extend_from_slice(&items[2..]);
            let lam = self.list(&lam)?;
            Ok((name, lam))
        } else {
            let name = self.check_name("define", target)?;
            if items.len() != 3 {
                return Err(error("define", "expected (define name expression)"));
            }
            Ok((name, items[2]))
        }
    }

    pub fn expand_expr(&mut self, v: Value) -> Result<Value, ExpandError> {
        let s = &*self.store;
        if !s.is_pair(v) {
            return Ok(v);
        }
        let items = self.items("application", v)?;
        let head = items[0];
        let kw = self.kw;
        if let Some(h) = head.as_ref().filter(|_| s.is_symbol(head)) {
            if h == kw.quote {
                if items.len() != 2 {
                    return Err(error("quote", "expected exactly one datum"));
                }
                return Ok(v);
            }
            if h == kw.if_ {
                if items.len() != 3 && items.len() != 4 {
                    return Err(error("if", "expected (if test then [else])"));
                }
                let mut out = alloc::vec![head];
                for &x in &items[1..] {
                    out.push(self.expand_expr(x)?);
                }
                return self.list(&out);
            }
            if h == kw.set {
                if items.len() != 3 {
                    return Err(error("set!", "expected (set! name expression)"));
                }
                let name = self.check_name("set!", items[1])?;
                let value = self.expand_expr(items[2])?;
                return self.list(&[head, self.sym(name), value]);
            }
            if h == kw.define {
                return Err(error("define", "definition not allowed in expression context"));
            }
            if h == kw.lambda {
                return self.expand_lambda(&items);
            }
            if h == kw.begin {
                if items.len() < 2 {
                    return Err(error("begin", "empty begin"));
                }
                return self.sequence(&items[1..], "begin");
            }
            if h == kw.let_ {
                return self.expand_let(&items);
            }
            if h == kw.let_star {
                return self.expand_let_star(&items);
            }
            if h == kw.letrec {
                return self.expand_letrec(&items);
            }
            if h == kw.cond {
                return self.expand_cond(&items[1..]);
            }
            if h == kw.and {
                return self.expand_and(&items[1..]);
            }
            if h == kw.or {
                return self.expand_or(&items[1..]);
            }
            if h == kw.when || h == kw.unless {
                let name = if h == kw.when { "when" } else { "unless" };
                if items.len() < 3 {
                    return Err(error(name, "expected a test and a body"));
                }
                let test = self.expand_expr(items[1])?;
                let body = self.sequence(&items[2..], name)?;
                let undef = self.unspecified()?;
                return if h == kw.when {
                    self.list(&[self.sym(kw.if_), test, body])
                } else {
                    self.list(&[self.sym(kw.if_), test, undef, body])
                };
            }
        }
        self.expand_application(&items)
    }

    /// `(if #f #f)`, the core spelling of the unspecified value.
    fn unspecified(&mut self) -> Result<Value, ExpandError> {
        let f = self.store.false_value();
        self.list(&[self.sym(self.kw.if_), f, f])
    }

    /// Expands a non-empty expression sequence into one expression.
    fn sequence(&mut self, forms: &[Value], form: &str) -> Result<Value, ExpandError> {
        if forms.is_empty() {
            return Err(error(form, "empty body"));
        }
        if forms.len() == 1 {
            return self.expand_expr(forms[0]);
        }
        let mut out = alloc::vec![self.sym(self.kw.begin)];
        for &f in forms {
            out.push(self.expand_expr(f)?);
        }
        self.list(&out)
    }

    fn expand_lambda(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        if items.len() < 3 {
            return Err(error("lambda", "expected parameters and a body"));
        }
        let (params, rest) = parse_params(self.store, items[1])?;
        let mut seen = Vec::new();
        for p in params.iter().chain(rest.iter()) {
            self.check_name("lambda", Value::Ref(*p))?;
            if seen.contains(p) {
                return Err(error("lambda", "duplicate parameter"));
            }
            seen.push(*p);
        }
        let body = self.expand_body(&items[2..], "lambda")?;
        let mut out = alloc::vec![items[0], items[1]];
        out.extend(body);
        self.list(&out)
    }

    /// Body with optional leading internal definitions, which become a
    /// binding of every defined name followed by assignments.
    fn expand_body(&mut self, forms: &[Value], form: &str) -> Result<Vec<Value>, ExpandError> {
        let split = forms.iter().take_while(|f| self.head_is(**f, self.kw.define)).count();
        let (defs, rest) = forms.split_at(split);
        if rest.iter().any(|f| self.head_is(*f, self.kw.define)) {
            return Err(error("define", "internal definition after an expression"));
        }
        if rest.is_empty() {
            return Err(error(form, "body has no expressions"));
        }
        if defs.is_empty() {
            return rest.iter().map(|&f| self.expand_expr(f)).collect();
        }
        let mut names = Vec::new();
        let mut inits = Vec::new();
        for &d in defs {
            let (name, value) = self.split_define(d)?;
            names.push(Value::Ref(name));
            let set = self.list(&[self.sym(self.kw.set), Value::Ref(name), value])?;
            inits.push(set);
        }
        let params = self.list(&names)?;
        let mut lam = alloc::vec![self.sym(self.kw.lambda), params];
        lam.extend(inits);
        lam.extend_from_slice(rest);
        let lam = self.list(&lam)?;
        let mut app = alloc::vec![lam];
        app.extend(core::iter::repeat(self.store.false_value()).take(names.len()));
        let app = self.list(&app)?;
        Ok(alloc::vec![self.expand_expr(app)?])
    }

    fn bindings(&mut self, form: &str, v: Value) -> Result<(Vec<Value>, Vec<Value>), ExpandError> {
        let mut names = Vec::new();
        let mut inits = Vec::new();
        for b in self.items(form, v)? {
            let pair = self
                .store
                .list_to_vec(b)
                .filter(|p| p.len() == 2)
                .ok_or_else(|| error(form, "binding must be (name expression)"))?;
            names.push(Value::Ref(self.check_name(form, pair[0])?));
            inits.push(pair[1]);
        }
        Ok((names, inits))
    }

    fn expand_let(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        if items.len() >= 2 && self.store.is_symbol(items[1]) {
            return Err(error("let", "named let is not supported"));
        }
        if items.len() < 3 {
            return Err(error("let", "expected bindings and a body"));
        }
        let (names, inits) = self.bindings("let", items[1])?;
        let params = self.list(&names)?;
        let mut lam = alloc::vec![self.sym(self.kw.lambda), params];
        lam.extend_from_slice(&items[2..]);
        let lam = self.list(&lam)?;
        let lam = self.expand_expr(lam)?;
        let mut app = alloc::vec![lam];
        for init in inits {
            app.push(self.expand_expr(init)?);
        }
        self.list(&app)
    }

    fn expand_let_star(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        if items.len() < 3 {
            return Err(error("let*", "expected bindings and a body"));
        }
        let bindings = self.items("let*", items[1])?;
        let body = &items[2..];
        if bindings.len() <= 1 {
            let mut out = alloc::vec![self.sym(self.kw.let_), items[1]];
            out.extend_from_slice(body);
            let out = self.list(&out)?;
            return self.expand_expr(out);
        }
        let rest = self.list(&bindings[1..])?;
        let mut inner = alloc::vec![self.sym(self.kw.let_star), rest];
        inner.extend_from_slice(body);
        let inner = self.list(&inner)?;
        let first = self.list(&bindings[..1])?;
        let outer = self.list(&[self.sym(self.kw.let_), first, inner])?;
        self.expand_expr(outer)
    }

    fn expand_letrec(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        if items.len() < 3 {
            return Err(error("letrec", "expected bindings and a body"));
        }
        let (names, inits) = self.bindings("letrec", items[1])?;
        let f = self.store.false_value();
        let mut binds = Vec::new();
        for &n in &names {
            binds.push(self.list(&[n, f])?);
        }
        let binds = self.list(&binds)?;
        let mut out = alloc::vec![self.sym(self.kw.let_), binds];
        for (&n, &init) in names.iter().zip(&inits) {
            out.push(self.list(&[self.sym(self.kw.set), n, init])?);
        }
        out.extend_from_slice(&items[2..]);
        let out = self.list(&out)?;
        self.expand_expr(out)
    }

    fn expand_cond(&mut self, clauses: &[Value]) -> Result<Value, ExpandError> {
        let Some((&clause, rest)) = clauses.split_first() else {
            return self.unspecified();
        };
        let parts = self
            .store
            .list_to_vec(clause)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| error("cond", "clause must be a non-empty list"))?;
        let kw = self.kw;
        if parts[0] == Value::Ref(kw.else_) {
            if !rest.is_empty() {
                return Err(error("cond", "else clause must be last"));
            }
            return self.sequence(&parts[1..], "cond");
        }
        let test = self.expand_expr(parts[0])?;
        if parts.len() == 1 {
            let tail = self.expand_cond(rest)?;
            return self.or_pair(test, tail);
        }
        if parts[1] == Value::Ref(kw.arrow) {
            if parts.len() != 3 {
                return Err(error("cond", "expected (test => receiver)"));
            }
            let receiver = self.expand_expr(parts[2])?;
            let tail = self.expand_cond(rest)?;
            let t = self.sym(kw.cond_var);
            let call = self.expand_application(&[receiver, t])?;
            let body = self.list(&[self.sym(kw.if_), t, call, tail])?;
            return self.bind(kw.cond_var, body, test);
        }
        let body = self.sequence(&parts[1..], "cond")?;
        if rest.is_empty() {
            return self.list(&[self.sym(kw.if_), test, body]);
        }
        let tail = self.expand_cond(rest)?;
        self.list(&[self.sym(kw.if_), test, body, tail])
    }

    /// Core `((lambda (var) body) value)`.
    fn bind(&mut self, var: Ref, body: Value, value: Value) -> Result<Value, ExpandError> {
        let params = self.list(&[Value::Ref(var)])?;
        let lam = self.list(&[self.sym(self.kw.lambda), params, body])?;
        self.list(&[lam, value])
    }

    fn expand_and(&mut self, args: &[Value]) -> Result<Value, ExpandError> {
        match args {
            [] => Ok(self.store.true_value()),
            [x] => self.expand_expr(*x),
            [x, rest @ ..] => {
                let test = self.expand_expr(*x)?;
                let tail = self.expand_and(rest)?;
                let f = self.store.false_value();
                self.list(&[self.sym(self.kw.if_), test, tail, f])
            }
        }
    }

    fn expand_or(&mut self, args: &[Value]) -> Result<Value, ExpandError> {
        match args {
            [] => Ok(self.store.false_value()),
            [x] => self.expand_expr(*x),
            [x, rest @ ..] => {
                let first = self.expand_expr(*x)?;
                let tail = self.expand_or(rest)?;
                self.or_pair(first, tail)
            }
        }
    }

    /// `first` if true, else `tail`; both already expanded.
    fn or_pair(&mut self, first: Value, tail: Value) -> Result<Value, ExpandError> {
        let t = self.sym(self.kw.or_var);
        let body = self.list(&[self.sym(self.kw.if_), t, t, tail])?;
        self.bind(self.kw.or_var, body, first)
    }

    fn expand_application(&mut self, items: &[Value]) -> Result<Value, ExpandError> {
        let mut out = Vec::with_capacity(items.len());
        for &x in items {
            out.push(self.expand_expr(x)?);
        }
        let op = out[0];
        let nargs = out.len() - 1;
        let direct = self.store.is_symbol(op)
            || (self.head_is(op, self.kw.lambda) && {
                let lam = self.store.list_to_vec(op).unwrap();
                matches!(parse_params(self.store, lam[1]), Ok((p, None)) if p.len() == nargs)
            });
        if direct {
            return self.list(&out);
        }
        let var = self.sym(self.kw.op_var);
        out[0] = var;
        let call = self.list(&out)?;
        self.bind(self.kw.op_var, call, op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::printer::write_datum;
    use crate::reader::read_datum;

    fn ex(text: &str) -> String {
        let mut s = Store::new();
        let (d, _) = read_datum(text, &mut s).unwrap();
        let core = expand(&mut s, d).unwrap();
        write_datum(&s, core).unwrap()
    }

    fn ex_err(text: &str) -> ExpandError {
        let mut s = Store::new();
        let (d, _) = read_datum(text, &mut s).unwrap();
        expand(&mut s, d).unwrap_err()
    }

    #[test]
    fn let_becomes_lambda_application() {
        assert_eq!(ex("(let ((x 1)) x)"), "((lambda (x) x) 1)");
        assert_eq!(ex("(let* ((x 1) (y x)) y)"), "((lambda (x) ((lambda (y) y) x)) 1)");
    }

    #[test]
    fn and_or() {
        assert_eq!(ex("(and)"), "#t");
        assert_eq!(ex("(and a b)"), "(if a b #f)");
        assert_eq!(ex("(and a b c)"), "(if a (if b c #f) #f)");
        assert_eq!(ex("(or)"), "#f");
        assert_eq!(ex("(or a)"), "a");
        assert_eq!(ex("(or a b)"), "((lambda (##or) (if ##or ##or b)) a)");
    }

    #[test]
    fn cond_forms() {
        assert_eq!(ex("(cond (a 1) (else 2))"), "(if a 1 2)");
        assert_eq!(ex("(cond (a 1))"), "(if a 1)");
        assert_eq!(ex("(cond (a 1 2) (b 3))"), "(if a (begin 1 2) (if b 3))");
        assert_eq!(ex("(cond)"), "(if #f #f)");
        assert_eq!(
            ex("(cond (a => f) (else 0))"),
            "((lambda (##t) (if ##t (f ##t) 0)) a)"
        );
    }

    #[test]
    fn when_unless() {
        assert_eq!(ex("(when a 1 2)"), "(if a (begin 1 2))");
        assert_eq!(ex("(unless a 1)"), "(if a (if #f #f) 1)");
    }

    #[test]
    fn define_shorthand() {
        assert_eq!(ex("(define (f . a) a)"), "(define f (lambda a a))");
        assert_eq!(ex("(define (f x) (g x))"), "(define f (lambda (x) (g x)))");
    }

    #[test]
    fn internal_defines() {
        assert_eq!(
            ex("(lambda (x) (define a 1) (define (g) a) (g))"),
            "(lambda (x) ((lambda (a g) (set! a 1) (set! g (lambda () a)) (g)) #f #f))"
        );
        assert_eq!(ex_err("(lambda () 1 (define a 2) a)").form, "define");
        assert_eq!(ex_err("(lambda () (define a 2))").form, "lambda");
    }

    #[test]
    fn computed_operator_is_bound() {
        assert_eq!(ex("((f) 1 2)"), "((lambda (##op) (##op 1 2)) (f))");
        assert_eq!(ex("((lambda (x) x) 1)"), "((lambda (x) x) 1)");
        assert_eq!(
            ex("((lambda x x) 1)"),
            "((lambda (##op) (##op 1)) (lambda x x))"
        );
    }

    #[test]
    fn letrec_is_let_over_set() {
        assert_eq!(
            ex("(letrec ((f (lambda () (f)))) f)"),
            "((lambda (f) (set! f (lambda () (f))) f) #f)"
        );
    }

    #[test]
    fn toplevel_begin_keeps_defines() {
        assert_eq!(ex("(begin (define x 1) x)"), "(begin (define x 1) x)");
    }

    #[test]
    fn errors_name_the_form() {
        assert_eq!(ex_err("(let loop ((i 0)) i)").form, "let");
        assert_eq!(ex_err("(if)").form, "if");
        assert_eq!(ex_err("(lambda (x))").form, "lambda");
        assert_eq!(ex_err("(lambda (x x) x)").form, "lambda");
        assert_eq!(ex_err("(set! 1 2)").form, "set!");
        assert_eq!(ex_err("(quote)").form, "quote");
        assert_eq!(ex_err("(f (define x 1))").form, "define");
        assert_eq!(ex_err("(define ##+ 1)").form, "define");
        assert_eq!(ex_err("(set! ##car 1)").form, "set!");
        assert_eq!(ex_err("(lambda (##x) 1)").form, "lambda");
    }

    #[test]
    fn classify_core() {
        let mut s = Store::new();
        let kw = Keywords::new(&mut s).unwrap();
        let (d, _) = read_datum("(lambda (a . r) a)", &mut s).unwrap();
        match kw.classify(&s, d).unwrap() {
            Core::Lambda(l) => {
                assert_eq!(l.params.len(), 1);
                assert!(l.rest.is_some());
                assert_eq!(l.body.len(), 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(kw.classify(&s, Value::Int(3)).unwrap(), Core::Const(Value::Int(3)));
        let (d, _) = read_datum("(if a)", &mut s).unwrap();
        assert!(kw.classify(&s, d).is_err());
    }
}
