//! Compiles core Scheme into instruction graphs.
//!
//! Code is generated back to front: every expression is compiled knowing the
//! instruction that consumes its value. A continuation is either a concrete
//! next instruction or "tail", meaning the value is the result of the
//! enclosing procedure. Calls in tail position are emitted as jumps (next =
//! `0`), so they reuse the caller's frame.
//!
//! Variables are addressed by their distance from the top of the runtime
//! stack. The compile-time environment mirrors that stack exactly: each
//! pushed temporary, bound variable, and the frame/procedure cell pair that
//! separates a procedure's parameters from its captured environment.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::expand::{self, Core, ExpandError, Keywords, Lambda};
use crate::object::{Ref, Store, StoreError, Value};
use crate::reader::{self, ReadError};
use crate::rvm::op;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileError {
    pub message: String,
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<StoreError> for CompileError {
    fn from(e: StoreError) -> Self {
        CompileError { message: e.to_string() }
    }
}

impl From<ExpandError> for CompileError {
    fn from(e: ExpandError) -> Self {
        CompileError { message: e.to_string() }
    }
}

/// Any failure turning program text into code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProgramError {
    Read(ReadError),
    Expand(ExpandError),
    Compile(CompileError),
}

impl fmt::Display for ProgramError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramError::Read(e) => write!(f, "reader-error: {e}"),
            ProgramError::Expand(e) => write!(f, "expand-error: {e}"),
            ProgramError::Compile(e) => write!(f, "compile-error: {e}"),
        }
    }
}

impl From<ReadError> for ProgramError {
    fn from(e: ReadError) -> Self {
        ProgramError::Read(e)
    }
}

impl From<ExpandError> for ProgramError {
    fn from(e: ExpandError) -> Self {
        ProgramError::Expand(e)
    }
}

impl From<CompileError> for ProgramError {
    fn from(e: CompileError) -> Self {
        ProgramError::Compile(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CteEntry {
    Var(Ref),
    Temp,
}

/// Compile-time environment. The last entry stands for the top of the stack.
#[derive(Clone, Debug, Default)]
pub struct Cte {
    entries: Vec<CteEntry>,
}

impl Cte {
    pub fn new() -> Cte {
        Cte::default()
    }

    /// Builds an environment from entries listed top of stack first.
    pub fn from_top_first(entries: &[CteEntry]) -> Cte {
        Cte { entries: entries.iter().rev().copied().collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push_var(&mut self, name: Ref) {
        self.entries.push(CteEntry::Var(name));
    }

    pub fn push_temp(&mut self) {
        self.entries.push(CteEntry::Temp);
    }

    /// The frame cell and procedure cell that precede a closure's captured stack.
    pub fn push_boundary(&mut self) {
        self.push_temp();
        self.push_temp();
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    /// Stack-walk distance of the innermost binding of `name`.
    pub fn slot(&self, name: Ref) -> Option<usize> {
        self.entries.iter().rev().position(|e| *e == CteEntry::Var(name))
    }

    /// Locator for `name`: a slot index, or the global symbol itself.
    pub fn lookup(&self, name: Ref) -> Value {
        match self.slot(name) {
            Some(i) => Value::Int(i as i64),
            None => Value::Ref(name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cont {
    Tail,
    Next(Ref),
}

pub struct Compiler<'s> {
    store: &'s mut Store,
    kw: Keywords,
    close: Ref,
    arg2: Ref,
    ret: Option<Ref>,
}

impl<'s> Compiler<'s> {
    pub fn new(store: &'s mut Store) -> Result<Compiler<'s>, CompileError> {
        let kw = Keywords::new(store)?;
        let close = store.intern("##close")?;
        let arg2 = store.intern("##arg2")?;
        Ok(Compiler { store, kw, close, arg2, ret: None })
    }

    fn instr(&mut self, opcode: i64, operand: Value, next: Value) -> Result<Ref, CompileError> {
        Ok(self.store.alloc(Value::Int(opcode), operand, next)?)
    }

    /// Concrete next instruction for a value-producing instruction.
    fn next_of(&mut self, cont: Cont) -> Result<Value, CompileError> {
        match cont {
            Cont::Next(r) => Ok(Value::Ref(r)),
            Cont::Tail => {
                let ret = match self.ret {
                    Some(r) => r,
                    None => {
                        let r = self.instr(op::RETURN, Value::ZERO, Value::ZERO)?;
                        self.ret = Some(r);
                        r
                    }
                };
                Ok(Value::Ref(ret))
            }
        }
    }

    fn call(&mut self, nargs: usize, locator: Value, cont: Cont) -> Result<Ref, CompileError> {
        let desc = self.store.alloc(Value::Int(nargs as i64), locator, Value::ZERO)?;
        let next = match cont {
            Cont::Tail => Value::ZERO,
            Cont::Next(r) => Value::Ref(r),
        };
        self.instr(op::CALL, Value::Ref(desc), next)
    }

    fn constant(&mut self, v: Value, cont: Cont) -> Result<Ref, CompileError> {
        let next = self.next_of(cont)?;
        self.instr(op::CONST, v, next)
    }

    /// Compiles top-level forms (already expanded) into a program ending in `halt`.
    pub fn compile_toplevel(&mut self, forms: &[Value]) -> Result<Ref, CompileError> {
        let halt = self.instr(op::HALT, Value::ZERO, Value::ZERO)?;
        if forms.is_empty() {
            let undef = self.store.undef();
            return self.constant(undef, Cont::Next(halt));
        }
        self.sequence(forms, &mut Cte::new(), Cont::Next(halt))
    }

    /// Compiles `expr` so that its value flows into `next`.
    pub fn compile_expr(&mut self, expr: Value, cte: &mut Cte, next: Ref) -> Result<Ref, CompileError> {
        self.expr(expr, cte, Cont::Next(next))
    }

    /// Compiles `expr` in tail position of the procedure whose environment is `cte`.
    pub fn compile_tail(&mut self, expr: Value, cte: &mut Cte) -> Result<Ref, CompileError> {
        self.expr(expr, cte, Cont::Tail)
    }

    fn expr(&mut self, expr: Value, cte: &mut Cte, cont: Cont) -> Result<Ref, CompileError> {
        match self.kw.classify(self.store, expr)? {
            Core::Const(v) | Core::Quote(v) => self.constant(v, cont),
            Core::Var(name) => {
                let next = self.next_of(cont)?;
                self.instr(op::GET, cte.lookup(name), next)
            }
            Core::Set(name, value) => {
                let locator = cte.lookup(name);
                self.assign(locator, value, cte, cont)
            }
            Core::Define(name, value) => self.assign(Value::Ref(name), value, cte, cont),
            Core::If(test, then, alt) => {
                let then = self.expr(then, cte, cont)?;
                let alt = match alt {
                    Some(e) => self.expr(e, cte, cont)?,
                    None => {
                        let undef = self.store.undef();
                        self.constant(undef, cont)?
                    }
                };
                let branch = self.instr(op::IF, Value::Ref(then), Value::Ref(alt))?;
                self.expr(test, cte, Cont::Next(branch))
            }
            Core::Lambda(lambda) => {
                let code = self.lambda(&lambda, cte)?;
                let close = self.call(1, Value::Ref(self.close), cont)?;
                self.instr(op::CONST, Value::Ref(code), Value::Ref(close))
            }
            Core::Begin(forms) => self.sequence(&forms, cte, cont),
            Core::App(operator, args) => {
                if self.store.is_symbol(operator) {
                    let name = operator.as_ref().unwrap();
                    let base = cte.len();
                    for _ in 0..args.len() {
                        cte.push_temp();
                    }
                    let locator = cte.lookup(name);
                    cte.truncate(base);
                    let call = self.call(args.len(), locator, cont)?;
                    return self.arguments(&args, cte, call);
                }
                match self.kw.classify(self.store, operator)? {
                    Core::Lambda(l) if l.rest.is_none() && l.params.len() == args.len() => {
                        self.binding(&l, &args, cte, cont)
                    }
                    _ => Err(CompileError {
                        message: String::from("operator must be an identifier or a lambda"),
                    }),
                }
            }
        }
    }

    /// `value`, then store it through `locator`; the expression yields the unspecified value.
    fn assign(&mut self, locator: Value, value: Value, cte: &mut Cte, cont: Cont) -> Result<Ref, CompileError> {
        let undef = self.store.undef();
        let result = self.constant(undef, cont)?;
        let set = self.instr(op::SET, locator, Value::Ref(result))?;
        self.expr(value, cte, Cont::Next(set))
    }

    /// Pushes `args` left to right, then continues at `next`.
    fn arguments(&mut self, args: &[Value], cte: &mut Cte, next: Ref) -> Result<Ref, CompileError> {
        let base = cte.len();
        let mut k = next;
        for (i, &arg) in args.iter().enumerate().rev() {
            cte.truncate(base);
            for _ in 0..i {
                cte.push_temp();
            }
            k = self.expr(arg, cte, Cont::Next(k))?;
        }
        cte.truncate(base);
        Ok(k)
    }

    /// Evaluates each form in turn; only the last value survives.
    fn sequence(&mut self, forms: &[Value], cte: &mut Cte, cont: Cont) -> Result<Ref, CompileError> {
        let (first, rest) = forms.split_first().ok_or_else(|| CompileError {
            message: String::from("empty sequence"),
        })?;
        if rest.is_empty() {
            return self.expr(*first, cte, cont);
        }
        // After the first form one value is always on the stack; each later
        // form pushes its own and `##arg2` drops the older one. In tail
        // position the leftover is discarded by the return or tail call.
        let base = cte.len();
        cte.push_temp();
        let mut k = cont;
        for (i, &form) in rest.iter().enumerate().rev() {
            let after = if i == rest.len() - 1 && cont == Cont::Tail {
                Cont::Tail
            } else {
                Cont::Next(self.call(2, Value::Ref(self.arg2), k)?)
            };
            k = Cont::Next(self.expr(form, cte, after)?);
        }
        cte.truncate(base);
        match k {
            Cont::Next(r) => self.expr(*first, cte, Cont::Next(r)),
            Cont::Tail => unreachable!(),
        }
    }

    /// `((lambda (p ...) body) a ...)` compiled inline: the arguments stay on
    /// the stack as the parameters' cells and are dropped after the body.
    fn binding(&mut self, l: &Lambda, args: &[Value], cte: &mut Cte, cont: Cont) -> Result<Ref, CompileError> {
        let body_cont = match cont {
            Cont::Tail => Cont::Tail,
            Cont::Next(mut k) => {
                for _ in 0..args.len() {
                    k = self.call(2, Value::Ref(self.arg2), Cont::Next(k))?;
                }
                Cont::Next(k)
            }
        };
        let base = cte.len();
        for &p in &l.params {
            cte.push_var(p);
        }
        let body = self.sequence(&l.body, cte, body_cont)?;
        cte.truncate(base);
        self.arguments(args, cte, body)
    }

    /// Builds the code rib for a procedure body.
    fn lambda(&mut self, l: &Lambda, cte: &mut Cte) -> Result<Ref, CompileError> {
        let base = cte.len();
        cte.push_boundary();
        if let Some(rest) = l.rest {
            cte.push_var(rest);
        }
        for &p in l.params.iter().rev() {
            cte.push_var(p);
        }
        let entry = self.sequence(&l.body, cte, Cont::Tail)?;
        cte.truncate(base);
        let arity = 2 * l.params.len() as i64 + l.rest.is_some() as i64;
        Ok(self.store.alloc(Value::Int(arity), Value::ZERO, Value::Ref(entry))?)
    }
}

/// Expands and compiles top-level forms.
pub fn compile_forms(store: &mut Store, forms: &[Value]) -> Result<Ref, ProgramError> {
    let core = expand::expand_program(store, forms)?;
    Ok(Compiler::new(store)?.compile_toplevel(&core)?)
}

/// Reads, expands and compiles a whole program.
pub fn compile_program(store: &mut Store, text: &str) -> Result<Ref, ProgramError> {
    let forms = reader::read_all(text, store)?;
    compile_forms(store, &forms)
}

/// Compiles one datum as the body of a zero-argument procedure, returning
/// its code rib. This is the machine's `eval` hook.
pub fn compile_eval(store: &mut Store, datum: Value) -> Result<Ref, String> {
    let core = expand::expand(store, datum).map_err(|e| alloc::format!("expand-error: {e}"))?;
    let mut compiler = Compiler::new(store).map_err(|e| e.message)?;
    let mut cte = Cte::new();
    cte.push_boundary();
    let entry = compiler.compile_tail(core, &mut cte).map_err(|e| e.message)?;
    store
        .alloc(Value::ZERO, Value::ZERO, Value::Ref(entry))
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_slots() {
        let mut s = Store::new();
        let x = s.intern("x").unwrap();
        let p = s.intern("p").unwrap();
        let q = s.intern("q").unwrap();
        let g = s.intern("g").unwrap();
        assert_eq!(Cte::from_top_first(&[CteEntry::Var(x)]).lookup(x), Value::Int(0));
        assert_eq!(Cte::from_top_first(&[CteEntry::Temp, CteEntry::Var(x)]).lookup(x), Value::Int(1));
        let nested = Cte::from_top_first(&[
            CteEntry::Var(p),
            CteEntry::Temp,
            CteEntry::Temp,
            CteEntry::Var(q),
        ]);
        assert_eq!(nested.lookup(q), Value::Int(3));
        assert_eq!(nested.lookup(g), Value::Ref(g));
    }

    #[test]
    fn shadowing_finds_innermost() {
        let mut s = Store::new();
        let x = s.intern("x").unwrap();
        let cte = Cte::from_top_first(&[CteEntry::Temp, CteEntry::Var(x), CteEntry::Var(x)]);
        assert_eq!(cte.lookup(x), Value::Int(1));
    }

    #[test]
    fn constant_program_shape() {
        let mut s = Store::new();
        let entry = compile_program(&mut s, "42").unwrap();
        assert_eq!(s.f0(entry), Value::Int(op::CONST));
        assert_eq!(s.f1(entry), Value::Int(42));
        let halt = s.f2(entry).as_ref().unwrap();
        assert_eq!(s.f0(halt), Value::Int(op::HALT));
    }

    #[test]
    fn empty_program_is_undef_then_halt() {
        let mut s = Store::new();
        let entry = compile_program(&mut s, "").unwrap();
        assert_eq!(s.f0(entry), Value::Int(op::CONST));
        assert_eq!(s.f1(entry), s.undef());
        let halt = s.f2(entry).as_ref().unwrap();
        assert_eq!(s.f0(halt), Value::Int(op::HALT));
    }

    #[test]
    fn tail_call_is_a_jump() {
        let mut s = Store::new();
        let entry = compile_program(&mut s, "(lambda (n) (g n))").unwrap();
        // const code -> call ##close -> halt
        let code = s.f1(entry).as_ref().unwrap();
        assert_eq!(s.f0(code), Value::Int(2));
        let get_n = s.f2(code).as_ref().unwrap();
        assert_eq!(s.f0(get_n), Value::Int(op::GET));
        assert_eq!(s.f1(get_n), Value::Int(0));
        let call = s.f2(get_n).as_ref().unwrap();
        assert_eq!(s.f0(call), Value::Int(op::CALL));
        assert_eq!(s.f2(call), Value::ZERO);
        let desc = s.f1(call).as_ref().unwrap();
        assert_eq!(s.f0(desc), Value::Int(1));
        assert_eq!(s.f1(desc), Value::Ref(s.intern("g").unwrap()));
    }

    #[test]
    fn variadic_arity_encoding() {
        let mut s = Store::new();
        let entry = compile_program(&mut s, "(lambda (a b . c) c)").unwrap();
        let code = s.f1(entry).as_ref().unwrap();
        assert_eq!(s.f0(code), Value::Int(5));
        // c sits just above the boundary, after a and b.
        let get = s.f2(code).as_ref().unwrap();
        assert_eq!(s.f1(get), Value::Int(2));
    }

    fn run(text: &str) -> (String, String) {
        use crate::rvm::{BufferIo, Machine, Options, Outcome};
        let mut s = Store::new();
        let entry = compile_program(&mut s, text).unwrap();
        let mut m = Machine::boot(s, Options::default()).unwrap();
        m.set_compile_hook(compile_eval);
        let mut io = BufferIo::new();
        let shown = match m.run(entry, &mut io) {
            Ok(Outcome::Halted(v)) => crate::printer::write_datum(m.store(), v).unwrap(),
            Ok(Outcome::Exited(c)) => alloc::format!("exit {c}"),
            Err(t) => alloc::format!("trap {}", t.kind.as_str()),
        };
        (shown, io.output_text())
    }

    #[test]
    fn runs_small_programs() {
        assert_eq!(run("(if #t 1 2)").0, "1");
        assert_eq!(run("(if #f 1)").0, "#<undefined>");
        assert_eq!(run("(define x 2) x").0, "2");
        assert_eq!(run("(define (f) 1) (f)").0, "1");
        assert_eq!(run("(define (f . r) r) (f 1 2)").0, "(1 2)");
        assert_eq!(run("(let ((a 1) (b 2)) (##- a b))").0, "-1");
        assert_eq!(run("(let* ((a 1) (b (##+ a 1))) (##* a b))").0, "2");
        assert_eq!(run("((lambda (x) (set! x 5) x) 1)").0, "5");
        assert_eq!(run("(begin 1 2 3)").0, "3");
        assert_eq!(run("(and 1 2)").0, "2");
        assert_eq!(run("(or #f 7)").0, "7");
        assert_eq!(run("(cond (#f 1) ((##+ 1 2) => (lambda (v) (##* v v))) (else 0))").0, "9");
        assert_eq!(run("(define (g) (define a 3) (define b 4) (##+ a b)) (g)").0, "7");
        assert_eq!(run("(quote (a . b))").0, "(a . b)");
    }

    #[test]
    fn factorial_and_closures() {
        let fact = "(define (fact n) (if (##< n 2) 1 (##* n (fact (##- n 1))))) (fact 10)";
        assert_eq!(run(fact).0, "3628800");
        let counter = "(define (make) (let ((n 0)) (lambda () (set! n (##+ n 1)) n)))
                       (define c (make)) (c) (c) (c)";
        assert_eq!(run(counter).0, "3");
        let adder = "(define (add a) (lambda (b) (lambda (c) (##+ a (##+ b c))))) (((add 1) 20) 300)";
        assert_eq!(run(adder).0, "321");
    }

    #[test]
    fn inline_bindings_unwind_in_non_tail_position() {
        let text = "(define (f x) (##+ (let ((a 1) (b 2)) (##+ a b)) x)) (f 10)";
        assert_eq!(run(text).0, "13");
        let nested = "(let ((a 1)) (let ((b 2)) (let ((c 3)) (##rib a (##rib b c 0) 0))))";
        assert_eq!(run(nested).0, "(1 2 . 3)");
        let seq = "(define (h y) (let ((t 4)) (##putchar 65) (##+ t y))) (##+ (h 1) (h 2))";
        assert_eq!(run(seq), (String::from("11"), String::from("AA")));
    }

    #[test]
    fn continuations_and_eval() {
        assert_eq!(run("(##+ 1 (##callcc (lambda (k) (k 41))))").0, "42");
        assert_eq!(run("(##callcc (lambda (k) (##+ 1 (k 42))))").0, "42");
        assert_eq!(run("(##eval '(##+ 40 2))").0, "42");
        assert_eq!(run("(##apply ##+ '(40 2))").0, "42");
    }

    #[test]
    fn traps_and_exit() {
        assert_eq!(run("nope").0, "trap unbound-global");
        assert_eq!(run("(##exit 3) 4").0, "exit 3");
    }

    #[test]
    fn non_core_operator_is_rejected() {
        let mut s = Store::new();
        let (d, _) = reader::read_datum("((f) 1)", &mut s).unwrap();
        let err = Compiler::new(&mut s).unwrap().compile_toplevel(&[d]).unwrap_err();
        assert!(err.message.contains("operator"));
    }
}
