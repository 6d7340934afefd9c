//! Reference evaluator for differential testing.
//!
//! A direct tree walk over expanded code with environments as chains of
//! frames. It shares the reader, expander and data representation with the
//! compiled path but none of the compiler or machine, so a disagreement
//! points at code generation or execution. Procedures are still store
//! values, so they can sit in lists and compare with `eqv?`.
//!
//! `call/cc`, `eval` and `##close` are outside the supported subset.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;

use crate::compiler::{compile_program, ProgramError};
use crate::expand::{self, Core, Keywords, Lambda};
use crate::object::{tag, Ref, Store, Value};
use crate::printer::write_datum;
use crate::reader;
use crate::rvm::{
    install_primitives, prim, read_char, write_char, BufferIo, Io, Machine, Options, Outcome,
    TrapKind, PRIMITIVES,
};

/// Why evaluation stopped early.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Signal {
    Trap(TrapKind, String),
    Exit(i64),
    Unsupported(String),
}

struct Frame {
    vars: Vec<(Ref, Cell<Value>)>,
    parent: Env,
}

type Env = Option<Rc<Frame>>;

struct Closure {
    lambda: Rc<Lambda>,
    env: Env,
}

enum Step {
    Done(Value),
    Continue(Value, Env),
}

pub struct Oracle<'s, 'io> {
    store: &'s mut Store,
    kw: Keywords,
    io: &'io mut dyn Io,
    closures: Vec<Closure>,
}

fn trap<T>(kind: TrapKind, message: impl Into<String>) -> Result<T, Signal> {
    Err(Signal::Trap(kind, message.into()))
}

impl<'s, 'io> Oracle<'s, 'io> {
    pub fn new(store: &'s mut Store, io: &'io mut dyn Io) -> Result<Self, Signal> {
        install_primitives(store).map_err(|e| Signal::Trap(TrapKind::AllocationFailure, e.to_string()))?;
        let kw = Keywords::new(store).map_err(|e| Signal::Trap(TrapKind::AllocationFailure, e.to_string()))?;
        Ok(Oracle { store, kw, io, closures: Vec::new() })
    }

    pub fn store(&self) -> &Store {
        self.store
    }

    fn alloc(&mut self, f0: Value, f1: Value, f2: Value) -> Result<Value, Signal> {
        match self.store.alloc(f0, f1, f2) {
            Ok(r) => Ok(Value::Ref(r)),
            Err(e) => trap(TrapKind::AllocationFailure, e.to_string()),
        }
    }

    /// Evaluates expanded top-level forms in order, returning the last value.
    pub fn run_forms(&mut self, forms: &[Value]) -> Result<Value, Signal> {
        let mut last = self.store.undef();
        for &f in forms {
            last = self.eval(f, None)?;
        }
        Ok(last)
    }

    fn lookup(&self, name: Ref, env: &Env) -> Result<Value, Signal> {
        let mut frame = env.as_deref();
        while let Some(f) = frame {
            if let Some((_, cell)) = f.vars.iter().find(|(n, _)| *n == name) {
                return Ok(cell.get());
            }
            frame = f.parent.as_deref();
        }
        let v = self.store.global(name);
        if v == self.store.undef() {
            let label = self.store.symbol_name(name).unwrap_or_default();
            return trap(TrapKind::UnboundGlobal, label);
        }
        Ok(v)
    }

    fn assign(&mut self, name: Ref, v: Value, env: &Env) {
        let mut frame = env.as_deref();
        while let Some(f) = frame {
            if let Some((_, cell)) = f.vars.iter().find(|(n, _)| *n == name) {
                cell.set(v);
                return;
            }
            frame = f.parent.as_deref();
        }
        self.store.set_global(name, v);
    }

    fn eval(&mut self, mut expr: Value, mut env: Env) -> Result<Value, Signal> {
        loop {
            let core = self
                .kw
                .classify(self.store, expr)
                .map_err(|e| Signal::Trap(TrapKind::TypeError, e.to_string()))?;
            match core {
                Core::Const(v) | Core::Quote(v) => return Ok(v),
                Core::Var(name) => return self.lookup(name, &env),
                Core::Set(name, e) => {
                    let v = self.eval(e, env.clone())?;
                    self.assign(name, v, &env);
                    return Ok(self.store.undef());
                }
                Core::Define(name, e) => {
                    let v = self.eval(e, env.clone())?;
                    self.store.set_global(name, v);
                    return Ok(self.store.undef());
                }
                Core::If(test, then, alt) => {
                    if self.eval(test, env.clone())? != self.store.false_value() {
                        expr = then;
                    } else if let Some(alt) = alt {
                        expr = alt;
                    } else {
                        return Ok(self.store.undef());
                    }
                }
                Core::Lambda(lambda) => return self.close(lambda, env),
                Core::Begin(forms) => {
                    let (last, init) = forms.split_last().expect("expander never yields empty begin");
                    for &f in init {
                        self.eval(f, env.clone())?;
                    }
                    expr = *last;
                }
                Core::App(op, args) => {
                    let mut values = Vec::with_capacity(args.len());
                    for &a in &args {
                        values.push(self.eval(a, env.clone())?);
                    }
                    let f = match op {
                        Value::Ref(name) if self.store.is_symbol(op) => self.lookup(name, &env)?,
                        _ => self.eval(op, env.clone())?,
                    };
                    match self.apply(f, values)? {
                        Step::Done(v) => return Ok(v),
                        Step::Continue(e, new_env) => {
                            expr = e;
                            env = new_env;
                        }
                    }
                }
            }
        }
    }

    fn close(&mut self, lambda: Lambda, env: Env) -> Result<Value, Signal> {
        let id = self.closures.len() as i64;
        self.closures.push(Closure { lambda: Rc::new(lambda), env });
        let nil = self.store.nil();
        self.alloc(Value::Int(-2 - id), nil, Value::Int(tag::PROCEDURE))
    }

    /// Applies `f`. A closure body comes back as a tail expression so loops
    /// do not grow the host stack.
    fn apply(&mut self, mut f: Value, mut args: Vec<Value>) -> Result<Step, Signal> {
        loop {
            let code = match f {
                Value::Ref(r) if self.store.is_procedure(f) => self.store.f0(r),
                _ => return trap(TrapKind::TypeError, "call of a non-procedure"),
            };
            match code {
                Value::Int(c) if c <= -2 => {
                    let closure = &self.closures[(-2 - c) as usize];
                    let (lambda, outer) = (closure.lambda.clone(), closure.env.clone());
                    let np = lambda.params.len();
                    if args.len() < np || (lambda.rest.is_none() && args.len() != np) {
                        return trap(TrapKind::ArityMismatch, "closure arity");
                    }
                    let mut vars: Vec<(Ref, Cell<Value>)> =
                        lambda.params.iter().zip(&args).map(|(&p, &a)| (p, Cell::new(a))).collect();
                    if let Some(rest) = lambda.rest {
                        let mut list = self.store.nil();
                        for &a in args[np..].iter().rev() {
                            list = self.alloc(a, list, Value::Int(tag::PAIR))?;
                        }
                        vars.push((rest, Cell::new(list)));
                    }
                    let env = Some(Rc::new(Frame { vars, parent: outer }));
                    let (last, init) = lambda.body.split_last().expect("lambda body is never empty");
                    for &e in init {
                        self.eval(e, env.clone())?;
                    }
                    return Ok(Step::Continue(*last, env));
                }
                Value::Int(p) if p >= 0 && (p as usize) < PRIMITIVES.len() => {
                    if args.len() != PRIMITIVES[p as usize].arity {
                        return trap(TrapKind::ArityMismatch, PRIMITIVES[p as usize].name);
                    }
                    if p == prim::APPLY {
                        let mut items = Vec::new();
                        let mut cell = args[1];
                        while cell != self.store.nil() {
                            if !self.store.is_pair(cell) {
                                return trap(TrapKind::TypeError, "apply: improper list");
                            }
                            let r = cell.as_ref().unwrap();
                            items.push(self.store.f0(r));
                            cell = self.store.f1(r);
                        }
                        f = args[0];
                        args = items;
                        continue;
                    }
                    return self.primitive(p, &args).map(Step::Done);
                }
                Value::Int(-1) => return Err(Signal::Unsupported(String::from("continuation"))),
                _ => return Err(Signal::Unsupported(String::from("compiled procedure"))),
            }
        }
    }

    fn int(&self, v: Value, what: &str) -> Result<i64, Signal> {
        v.as_int().map_or_else(|| trap(TrapKind::TypeError, format!("{what}: not an integer")), Ok)
    }

    fn rib(&self, v: Value, what: &str) -> Result<Ref, Signal> {
        v.as_ref().map_or_else(|| trap(TrapKind::TypeError, format!("{what}: not a rib")), Ok)
    }

    fn primitive(&mut self, p: i64, a: &[Value]) -> Result<Value, Signal> {
        Ok(match p {
            prim::RIB => return self.alloc(a[0], a[1], a[2]),
            prim::ID => a[0],
            prim::ARG1 => a[0],
            prim::ARG2 => a[1],
            prim::IS_RIB => self.store.boolean(matches!(a[0], Value::Ref(_))),
            prim::FIELD0 | prim::FIELD1 | prim::FIELD2 => {
                let r = self.rib(a[0], PRIMITIVES[p as usize].name)?;
                self.store.rib(r).fields[(p - prim::FIELD0) as usize]
            }
            prim::FIELD0_SET | prim::FIELD1_SET | prim::FIELD2_SET => {
                let r = self.rib(a[0], "field-set")?;
                let s = &mut *self.store;
                match p {
                    prim::FIELD0_SET => s.set_f0(r, a[1]),
                    prim::FIELD1_SET => s.set_f1(r, a[1]),
                    _ => s.set_f2(r, a[1]),
                }
                a[1]
            }
            prim::EQV => self.store.boolean(a[0] == a[1]),
            prim::LT | prim::ADD | prim::SUB | prim::MUL | prim::QUOTIENT => {
                let name = PRIMITIVES[p as usize].name;
                let y = self.int(a[1], name)?;
                let x = self.int(a[0], name)?;
                let s = &*self.store;
                match p {
                    prim::LT => s.boolean(x < y),
                    prim::ADD => Value::Int(x.wrapping_add(y)),
                    prim::SUB => Value::Int(x.wrapping_sub(y)),
                    prim::MUL => Value::Int(x.wrapping_mul(y)),
                    _ if y == 0 => return trap(TrapKind::DivideByZero, "quotient"),
                    _ => Value::Int(x.wrapping_div(y)),
                }
            }
            prim::GETCHAR => Value::Int(read_char(self.io).map_or(-1, i64::from)),
            prim::PUTCHAR => {
                let c = a[0]
                    .as_int()
                    .and_then(|n| u32::try_from(n).ok())
                    .and_then(char::from_u32);
                match c {
                    Some(c) => write_char(self.io, c),
                    None => return trap(TrapKind::TypeError, "putchar: not a character"),
                }
                a[0]
            }
            prim::EXIT => return Err(Signal::Exit(self.int(a[0], "exit")?)),
            prim::ERROR => return trap(TrapKind::UserError, "error"),
            prim::INTERN => {
                let s = &mut *self.store;
                if !s.is_string(a[0]) {
                    return trap(TrapKind::TypeError, "intern: not a string");
                }
                let text = s.text_of(a[0].as_ref().unwrap()).unwrap_or_default();
                match s.intern(&text) {
                    Ok(r) => Value::Ref(r),
                    Err(e) => return trap(TrapKind::AllocationFailure, e.to_string()),
                }
            }
            _ => {
                let name = PRIMITIVES[p as usize].name;
                return Err(Signal::Unsupported(format!("##{name}")));
            }
        })
    }
}

/// How a program run ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ending {
    /// Halted with this value, in `write` notation.
    Value(String),
    Exit(i64),
    Trap(TrapKind),
    /// Reader, expander or compiler rejected the program.
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub output: String,
    pub ending: Ending,
}

fn shown(store: &Store, v: Value) -> String {
    write_datum(store, v).unwrap_or_else(|e| format!("#<unprintable: {e}>"))
}

fn rejected(e: ProgramError) -> Ending {
    Ending::Rejected(e.to_string())
}

/// Compiles and runs `text` on the machine.
pub fn run_compiled(text: &str, input: &[u8], options: Options) -> Report {
    let mut store = Store::new();
    let mut io = BufferIo::with_input(input);
    let entry = match compile_program(&mut store, text) {
        Ok(e) => e,
        Err(e) => return Report { output: String::new(), ending: rejected(e) },
    };
    let ending = match Machine::boot(store, options) {
        Err(t) => Ending::Trap(t.kind),
        Ok(mut m) => {
            m.set_compile_hook(crate::compiler::compile_eval);
            match m.run(entry, &mut io) {
                Ok(Outcome::Halted(v)) => Ending::Value(shown(m.store(), v)),
                Ok(Outcome::Exited(code)) => Ending::Exit(code),
                Err(t) => Ending::Trap(t.kind),
            }
        }
    };
    Report { output: io.output_text(), ending }
}

/// Evaluates `text` with the reference evaluator. `Err` means the program
/// left the supported subset.
pub fn run_oracle(text: &str, input: &[u8]) -> Result<Report, String> {
    let mut store = Store::new();
    let mut io = BufferIo::with_input(input);
    let forms = match reader::read_all(text, &mut store)
        .map_err(ProgramError::from)
        .and_then(|f| expand::expand_program(&mut store, &f).map_err(ProgramError::from))
    {
        Ok(f) => f,
        Err(e) => return Ok(Report { output: String::new(), ending: rejected(e) }),
    };
    let ending = {
        let mut oracle = Oracle::new(&mut store, &mut io).map_err(|e| format!("{e:?}"))?;
        match oracle.run_forms(&forms) {
            Ok(v) => Ending::Value(shown(oracle.store(), v)),
            Err(Signal::Exit(code)) => Ending::Exit(code),
            Err(Signal::Trap(kind, _)) => Ending::Trap(kind),
            Err(Signal::Unsupported(what)) => return Err(format!("unsupported: {what}")),
        }
    };
    Ok(Report { output: io.output_text(), ending })
}

/// Runs `text` both ways and compares output and ending exactly.
pub fn differential_check(text: &str) -> Result<Report, String> {
    let expected = run_oracle(text, b"")?;
    let actual = run_compiled(text, b"", Options::default());
    if expected == actual {
        Ok(actual)
    } else {
        Err(format!("oracle {expected:?}\nmachine {actual:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_value(text: &str) -> Ending {
        run_oracle(text, b"").unwrap().ending
    }

    fn value(s: &str) -> Ending {
        Ending::Value(String::from(s))
    }

    #[test]
    fn evaluates_core_forms() {
        assert_eq!(oracle_value("(##+ 1 2)"), value("3"));
        assert_eq!(oracle_value("((lambda (x) (##* x x)) 7)"), value("49"));
        assert_eq!(oracle_value("(define (f . r) r) (f 1 2)"), value("(1 2)"));
        assert_eq!(oracle_value("(let ((x 1)) (set! x 2) x)"), value("2"));
        assert_eq!(oracle_value(""), value("#<undefined>"));
        assert_eq!(oracle_value("(##apply ##+ '(1 2))"), value("3"));
        assert_eq!(oracle_value("(##putchar 104) (##exit 3)"), Ending::Exit(3));
    }

    #[test]
    fn mirrors_trap_kinds() {
        assert_eq!(oracle_value("nope"), Ending::Trap(TrapKind::UnboundGlobal));
        assert_eq!(oracle_value("(##quotient 1 0)"), Ending::Trap(TrapKind::DivideByZero));
        assert_eq!(oracle_value("((lambda (x) x))"), Ending::Trap(TrapKind::ArityMismatch));
        assert_eq!(oracle_value("(1 2)"), Ending::Trap(TrapKind::TypeError));
        assert_eq!(oracle_value("(define x 1) (x)"), Ending::Trap(TrapKind::TypeError));
        assert_eq!(oracle_value("(##error \"boom\")"), Ending::Trap(TrapKind::UserError));
    }

    #[test]
    fn named_let_is_rejected_on_both_paths() {
        let text = "(let loop ((i 0)) i)";
        let oracle = oracle_value(text);
        assert!(matches!(oracle, Ending::Rejected(ref m) if m.starts_with("expand-error")));
        assert_eq!(run_compiled(text, b"", Options::default()).ending, oracle);
    }

    #[test]
    fn tail_loops_do_not_grow_the_host_stack() {
        let text = "(define (loop n) (if (##< 0 n) (loop (##- n 1)) 'done)) (loop 100000)";
        assert_eq!(oracle_value(text), value("done"));
    }

    #[test]
    fn call_cc_is_outside_the_subset() {
        assert!(run_oracle("(##callcc (lambda (k) 1))", b"").is_err());
    }

    #[test]
    fn differential_examples() {
        let fact = "(define (fact n) (if (##< n 2) 1 (##* n (fact (##- n 1))))) (fact 10)";
        assert_eq!(differential_check(fact).unwrap().ending, value("3628800"));
        let fib = "(define (fib n) (if (##< n 2) n (##+ (fib (##- n 1)) (fib (##- n 2))))) (fib 20)";
        assert_eq!(differential_check(fib).unwrap().ending, value("6765"));
        let out = "(define (p c) (##putchar c)) (p 104) (p 105) (##rib 1 2 0)";
        let report = differential_check(out).unwrap();
        assert_eq!(report.output, "hi");
        assert_eq!(report.ending, value("(1 . 2)"));
        differential_check("(define x 1) (##putchar 65) y").unwrap();
    }
}
