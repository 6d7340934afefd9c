//! The rib virtual machine.
//!
//! Code is a DAG of instruction ribs `(opcode, operand, next)`. The stack is a
//! chain of ribs linked through f1; plain cells have f2 = 0, frame cells hold
//! the return instruction in f2, the caller's stack in f0 and the callee
//! procedure in f1. Since a procedure's f1 is its captured stack, walking past
//! a frame continues into the closure's environment, so compiled code reaches
//! captured variables with plain stack-walk offsets.
//!
//! [`Machine::step`] executes one instruction and never recurses on the host
//! stack; calls, returns, tail calls and continuation jumps all just rewrite
//! `stack` and `pc`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::object::{tag, Ref, Store, StoreError, Value};

/// Instruction opcodes (field 0 of an instruction rib).
pub mod op {
    pub const CALL: i64 = 0;
    pub const SET: i64 = 1;
    pub const GET: i64 = 2;
    pub const CONST: i64 = 3;
    pub const IF: i64 = 4;
    pub const RETURN: i64 = 5;
    pub const HALT: i64 = 6;

    pub fn name(opcode: i64) -> &'static str {
        match opcode {
            CALL => "call",
            SET => "set",
            GET => "get",
            CONST => "const",
            IF => "if",
            RETURN => "return",
            HALT => "halt",
            _ => "?",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Primitive {
    pub name: &'static str,
    pub arity: usize,
}

const fn prim(name: &'static str, arity: usize) -> Primitive {
    Primitive { name, arity }
}

/// The primitive table. Each entry is bound at boot to the global `##<name>`.
pub const PRIMITIVES: [Primitive; 26] = [
    prim("rib", 3),
    prim("id", 1),
    prim("arg1", 2),
    prim("arg2", 2),
    prim("close", 1),
    prim("rib?", 1),
    prim("field0", 1),
    prim("field1", 1),
    prim("field2", 1),
    prim("field0-set!", 2),
    prim("field1-set!", 2),
    prim("field2-set!", 2),
    prim("eqv?", 2),
    prim("<", 2),
    prim("+", 2),
    prim("-", 2),
    prim("*", 2),
    prim("quotient", 2),
    prim("getchar", 0),
    prim("putchar", 1),
    prim("exit", 1),
    prim("apply", 2),
    prim("callcc", 1),
    prim("eval", 1),
    prim("error", 1),
    prim("intern", 1),
];

pub mod prim {
    pub const RIB: i64 = 0;
    pub const ID: i64 = 1;
    pub const ARG1: i64 = 2;
    pub const ARG2: i64 = 3;
    pub const CLOSE: i64 = 4;
    pub const IS_RIB: i64 = 5;
    pub const FIELD0: i64 = 6;
    pub const FIELD1: i64 = 7;
    pub const FIELD2: i64 = 8;
    pub const FIELD0_SET: i64 = 9;
    pub const FIELD1_SET: i64 = 10;
    pub const FIELD2_SET: i64 = 11;
    pub const EQV: i64 = 12;
    pub const LT: i64 = 13;
    pub const ADD: i64 = 14;
    pub const SUB: i64 = 15;
    pub const MUL: i64 = 16;
    pub const QUOTIENT: i64 = 17;
    pub const GETCHAR: i64 = 18;
    pub const PUTCHAR: i64 = 19;
    pub const EXIT: i64 = 20;
    pub const APPLY: i64 = 21;
    pub const CALLCC: i64 = 22;
    pub const EVAL: i64 = 23;
    pub const ERROR: i64 = 24;
    pub const INTERN: i64 = 25;
}

/// Prefix of the reserved globals bound to primitives.
pub const PRIMITIVE_PREFIX: &str = "##";

pub fn primitive_index(name: &str) -> Option<usize> {
    let bare = name.strip_prefix(PRIMITIVE_PREFIX)?;
    PRIMITIVES.iter().position(|p| p.name == bare)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrapKind {
    UnboundGlobal,
    ArityMismatch,
    TypeError,
    DivideByZero,
    StackUnderflow,
    BadOpcode,
    AllocationFailure,
    UserError,
}

impl TrapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrapKind::UnboundGlobal => "unbound-global",
            TrapKind::ArityMismatch => "arity-mismatch",
            TrapKind::TypeError => "type-error",
            TrapKind::DivideByZero => "divide-by-zero",
            TrapKind::StackUnderflow => "stack-underflow",
            TrapKind::BadOpcode => "bad-opcode",
            TrapKind::AllocationFailure => "allocation-failure",
            TrapKind::UserError => "user-error",
        }
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A runtime fault. The run stops; the store is left as it was at the fault.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub message: String,
    pub value: Value,
}

impl Trap {
    pub fn new(kind: TrapKind, message: impl Into<String>, value: Value) -> Trap {
        Trap { kind, message: message.into(), value }
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<StoreError> for Trap {
    fn from(e: StoreError) -> Trap {
        let kind = match e {
            StoreError::Exhausted { .. } => TrapKind::AllocationFailure,
            _ => TrapKind::TypeError,
        };
        Trap::new(kind, e.to_string(), Value::ZERO)
    }
}

/// Byte-oriented input/output channels.
pub trait Io {
    fn read_byte(&mut self) -> Option<u8>;
    fn write_byte(&mut self, byte: u8);
}

/// In-memory channels.
#[derive(Clone, Debug, Default)]
pub struct BufferIo {
    pub input: Vec<u8>,
    pub pos: usize,
    pub output: Vec<u8>,
}

impl BufferIo {
    pub fn new() -> BufferIo {
        BufferIo::default()
    }

    pub fn with_input(input: &[u8]) -> BufferIo {
        BufferIo { input: input.to_vec(), ..BufferIo::default() }
    }

    pub fn output_text(&self) -> String {
        String::from_utf8_lossy(&self.output).into_owned()
    }
}

impl Io for BufferIo {
    fn read_byte(&mut self) -> Option<u8> {
        let b = self.input.get(self.pos).copied();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn write_byte(&mut self, byte: u8) {
        self.output.push(byte);
    }
}

/// Reads one UTF-8 encoded character; malformed sequences yield U+FFFD.
pub fn read_char(io: &mut dyn Io) -> Option<u32> {
    let lead = io.read_byte()?;
    let (len, init) = match lead {
        0x00..=0x7f => return Some(lead as u32),
        0xc0..=0xdf => (1, (lead & 0x1f) as u32),
        0xe0..=0xef => (2, (lead & 0x0f) as u32),
        0xf0..=0xf7 => (3, (lead & 0x07) as u32),
        _ => return Some(0xfffd),
    };
    let mut code = init;
    for _ in 0..len {
        match io.read_byte() {
            Some(b) if b & 0xc0 == 0x80 => code = (code << 6) | (b & 0x3f) as u32,
            _ => return Some(0xfffd),
        }
    }
    Some(char::from_u32(code).map_or(0xfffd, |c| c as u32))
}

pub fn write_char(io: &mut dyn Io, c: char) {
    let mut buf = [0u8; 4];
    for b in c.encode_utf8(&mut buf).bytes() {
        io.write_byte(b);
    }
}

/// Compiles a datum for the `eval` primitive, returning a zero-argument code rib.
pub type CompileHook = fn(&mut Store, Value) -> Result<Ref, String>;

#[derive(Clone, Debug)]
pub struct Options {
    /// Compact automatically at step boundaries once the store grows past a threshold.
    pub collect: bool,
    /// Force a compaction after every `n` allocations (for testing relocation).
    pub collect_every: Option<u64>,
    /// Initial automatic compaction threshold, in ribs.
    pub collect_threshold: usize,
    /// Record the host stack span of the dispatch loop.
    pub probe_host_stack: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            collect: true,
            collect_every: None,
            collect_threshold: 1 << 20,
            probe_host_stack: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Idle,
    Running,
    Halted(Value),
    Exited(i64),
    Trapped(Trap),
}

/// How a run ended, when it did not trap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Halted(Value),
    Exited(i64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: u64,
    pub collections: u64,
}

pub struct Machine {
    store: Store,
    stack: Value,
    pc: Value,
    status: Status,
    hook: Option<CompileHook>,
    options: Options,
    next_collect: usize,
    collected_at: u64,
    stats: Stats,
    stack_probe: Option<(usize, usize)>,
}

/// Binds every primitive to its `##` global. Idempotent.
pub fn install_primitives(store: &mut Store) -> Result<(), StoreError> {
    for (i, p) in PRIMITIVES.iter().enumerate() {
        let mut name = String::from(PRIMITIVE_PREFIX);
        name.push_str(p.name);
        let sym = store.intern(&name)?;
        let current = store.global(sym);
        let bound = store.is_procedure(current)
            && current.as_ref().map(|r| store.f0(r)) == Some(Value::Int(i as i64));
        if !bound {
            let nil = store.nil();
            let proc = store.alloc(Value::Int(i as i64), nil, Value::Int(tag::PROCEDURE))?;
            store.set_global(sym, Value::Ref(proc));
        }
    }
    Ok(())
}

fn trap(kind: TrapKind, message: impl Into<String>, value: Value) -> Trap {
    Trap::new(kind, message, value)
}

impl Machine {
    pub fn boot(mut store: Store, options: Options) -> Result<Machine, Trap> {
        install_primitives(&mut store)?;
        let next_collect = match store.limit() {
            Some(limit) => options.collect_threshold.min(limit - limit / 4),
            None => options.collect_threshold,
        };
        Ok(Machine {
            store,
            stack: Value::ZERO,
            pc: Value::ZERO,
            status: Status::Idle,
            hook: None,
            options,
            next_collect,
            collected_at: 0,
            stats: Stats::default(),
            stack_probe: None,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn into_store(self) -> Store {
        self.store
    }

    pub fn set_compile_hook(&mut self, hook: CompileHook) {
        self.hook = Some(hook);
    }

    pub fn options(&self) -> &Options {
        &self.options
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn stack(&self) -> Value {
        self.stack
    }

    pub fn pc(&self) -> Value {
        self.pc
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    /// Byte span of host stack addresses observed by the dispatch loop, when probing.
    pub fn host_stack_span(&self) -> Option<usize> {
        self.stack_probe.map(|(lo, hi)| hi - lo)
    }

    /// Prepares to run from `entry` on an empty stack.
    pub fn start(&mut self, entry: Ref) {
        self.stack = Value::ZERO;
        self.pc = Value::Ref(entry);
        self.status = Status::Running;
        self.stack_probe = None;
    }

    pub fn run(&mut self, entry: Ref, io: &mut dyn Io) -> Result<Outcome, Trap> {
        self.start(entry);
        self.resume(io)
    }

    /// Steps until the machine stops.
    pub fn resume(&mut self, io: &mut dyn Io) -> Result<Outcome, Trap> {
        while self.status == Status::Running {
            self.maybe_collect();
            self.step(io);
        }
        match &self.status {
            Status::Halted(v) => Ok(Outcome::Halted(*v)),
            Status::Exited(code) => Ok(Outcome::Exited(*code)),
            Status::Trapped(t) => Err(t.clone()),
            Status::Idle | Status::Running => unreachable!(),
        }
    }

    /// Executes a single instruction.
    pub fn step(&mut self, io: &mut dyn Io) {
        if self.status != Status::Running {
            return;
        }
        self.probe();
        self.stats.steps += 1;
        if let Err(t) = self.exec(io) {
            self.status = Status::Trapped(t);
        }
    }

    /// Compacts the store now, keeping the machine's stack and pc alive.
    pub fn collect(&mut self) {
        let mut roots = [self.stack, self.pc];
        let reloc = self.store.compact(&mut roots);
        self.stack = roots[0];
        self.pc = roots[1];
        if let Status::Halted(v) = self.status {
            self.status = Status::Halted(reloc.apply(v));
        }
        self.collected_at = self.store.allocations();
        self.stats.collections += 1;
        let live = reloc.live();
        let mut threshold = self.options.collect_threshold.max(live * 2);
        if let Some(limit) = self.store.limit() {
            // Near the limit, keep half the remaining headroom so collections
            // stay geometric instead of running on every step.
            threshold = threshold.min(limit - limit / 4).max(live + (limit.saturating_sub(live)) / 2);
        }
        self.next_collect = threshold;
    }

    /// Compacts if a collection is due. [`Machine::resume`] calls this before every step.
    pub fn maybe_collect(&mut self) {
        let forced = match self.options.collect_every {
            Some(n) => self.store.allocations() - self.collected_at >= n,
            None => false,
        };
        let grown = self.options.collect && self.store.len() >= self.next_collect;
        if forced || grown {
            self.collect();
        }
    }

    #[inline(never)]
    fn probe(&mut self) {
        if !self.options.probe_host_stack {
            return;
        }
        let marker = 0u8;
        let addr = core::hint::black_box(&marker) as *const u8 as usize;
        self.stack_probe = Some(match self.stack_probe {
            None => (addr, addr),
            Some((lo, hi)) => (lo.min(addr), hi.max(addr)),
        });
    }

    /// Number of frames on the dynamic chain from the current stack.
    pub fn live_frames(&self) -> usize {
        let mut count = 0;
        let mut cell = self.stack;
        let mut budget = self.store.len() + 1;
        while let Value::Ref(r) = cell {
            budget -= 1;
            if budget == 0 {
                break;
            }
            if self.store.f2(r).as_ref().is_some() {
                count += 1;
                cell = self.store.f0(r);
            } else {
                cell = self.store.f1(r);
            }
        }
        count
    }

    // Stack helpers.

    fn push(&mut self, v: Value) -> Result<(), Trap> {
        self.stack = Value::Ref(self.store.alloc(v, self.stack, Value::ZERO)?);
        Ok(())
    }

    fn pop(&mut self) -> Result<Value, Trap> {
        match self.stack {
            Value::Ref(r) if self.store.f2(r) == Value::ZERO => {
                self.stack = self.store.f1(r);
                Ok(self.store.f0(r))
            }
            _ => Err(trap(TrapKind::StackUnderflow, "pop from empty stack region", self.stack)),
        }
    }

    fn pop_int(&mut self, what: &str) -> Result<i64, Trap> {
        let v = self.pop()?;
        v.as_int().ok_or_else(|| type_error(what, "an integer", v))
    }

    fn pop_rib(&mut self, what: &str) -> Result<Ref, Trap> {
        let v = self.pop()?;
        v.as_ref().ok_or_else(|| type_error(what, "a rib", v))
    }

    fn collect_label(&self, sym: Ref) -> String {
        self.store.symbol_name(sym).unwrap_or_else(|_| String::from("?"))
    }

    fn exec(&mut self, io: &mut dyn Io) -> Result<(), Trap> {
        let instr = match self.pc {
            Value::Ref(r) => r,
            v => return Err(trap(TrapKind::BadOpcode, "pc is not an instruction", v)),
        };
        let [opcode, operand, next] = self.store.rib(instr).fields;
        match opcode {
            Value::Int(op::CALL) => {
                let desc = operand
                    .as_ref()
                    .ok_or_else(|| trap(TrapKind::BadOpcode, "call without descriptor", operand))?;
                let nargs = match self.store.f0(desc) {
                    Value::Int(n) if n >= 0 => n as usize,
                    v => return Err(trap(TrapKind::BadOpcode, "bad argument count", v)),
                };
                let proc = self.load(self.store.f1(desc))?;
                let tail = match next {
                    Value::Int(0) => true,
                    Value::Ref(_) => false,
                    v => return Err(trap(TrapKind::BadOpcode, "bad call continuation", v)),
                };
                self.apply_procedure(proc, nargs, tail, next, io)
            }
            Value::Int(op::SET) => {
                let v = self.pop()?;
                let cell = resolve(&self.store, operand, self.stack)?;
                self.store.set_f0(cell, v);
                self.pc = next;
                Ok(())
            }
            Value::Int(op::GET) => {
                let v = self.load(operand)?;
                self.push(v)?;
                self.pc = next;
                Ok(())
            }
            Value::Int(op::CONST) => {
                self.push(operand)?;
                self.pc = next;
                Ok(())
            }
            Value::Int(op::IF) => {
                let v = self.pop()?;
                self.pc = if v != self.store.false_value() { operand } else { next };
                Ok(())
            }
            Value::Int(op::RETURN) => {
                let v = self.pop()?;
                let frame = current_frame(&self.store, self.stack)?;
                let caller = self.store.f0(frame);
                self.stack = Value::Ref(self.store.alloc(v, caller, Value::ZERO)?);
                self.pc = self.store.f2(frame);
                Ok(())
            }
            Value::Int(op::HALT) => {
                let result = match self.stack {
                    Value::Ref(r) if self.store.f2(r) == Value::ZERO => self.store.f0(r),
                    _ => self.store.undef(),
                };
                self.status = Status::Halted(result);
                Ok(())
            }
            v => Err(trap(TrapKind::BadOpcode, "unknown opcode", v)),
        }
    }

    /// Value designated by a locator; unbound globals trap.
    fn load(&self, locator: Value) -> Result<Value, Trap> {
        let cell = resolve(&self.store, locator, self.stack)?;
        let v = self.store.f0(cell);
        if locator.as_ref().is_some() && v == self.store.undef() {
            return Err(trap(
                TrapKind::UnboundGlobal,
                self.collect_label(cell),
                Value::Ref(cell),
            ));
        }
        Ok(v)
    }

    /// Applies `proc` to the top `nargs` stack values. `retpc` is the return
    /// instruction for a non-tail call; a tail call reuses the current frame.
    fn apply_procedure(
        &mut self,
        mut proc: Value,
        mut nargs: usize,
        tail: bool,
        retpc: Value,
        io: &mut dyn Io,
    ) -> Result<(), Trap> {
        loop {
            self.probe();
            let pr = match proc {
                Value::Ref(r) if self.store.is_procedure(proc) => r,
                _ => return Err(trap(TrapKind::TypeError, "call of a non-procedure", proc)),
            };
            match self.store.f0(pr) {
                Value::Ref(code) => return self.enter_closure(pr, code, nargs, tail, retpc),
                Value::Int(-1) => {
                    if nargs != 1 {
                        return Err(trap(
                            TrapKind::ArityMismatch,
                            "continuation expects 1 argument",
                            proc,
                        ));
                    }
                    let v = self.pop()?;
                    let k = self.store.f1(pr).as_ref().ok_or_else(|| {
                        trap(TrapKind::TypeError, "malformed continuation", proc)
                    })?;
                    let saved = self.store.f0(k);
                    self.stack = Value::Ref(self.store.alloc(v, saved, Value::ZERO)?);
                    self.pc = self.store.f2(k);
                    return Ok(());
                }
                Value::Int(p) if p >= 0 && (p as usize) < PRIMITIVES.len() => {
                    let spec = PRIMITIVES[p as usize];
                    if nargs != spec.arity {
                        return Err(trap(
                            TrapKind::ArityMismatch,
                            arity_message(spec.name, spec.arity, nargs),
                            proc,
                        ));
                    }
                    match p {
                        prim::APPLY => {
                            let list = self.pop()?;
                            let f = self.pop()?;
                            let items = self
                                .store
                                .list_to_vec(list)
                                .ok_or_else(|| type_error("apply", "a proper list", list))?;
                            nargs = items.len();
                            for v in items {
                                self.push(v)?;
                            }
                            proc = f;
                        }
                        prim::CALLCC => {
                            let receiver = self.pop()?;
                            let (saved, resume) = if tail {
                                let frame = current_frame(&self.store, self.stack)?;
                                (self.store.f0(frame), self.store.f2(frame))
                            } else {
                                (self.stack, retpc)
                            };
                            let holder = self.store.alloc(saved, Value::ZERO, resume)?;
                            let k = self.store.alloc(
                                Value::Int(-1),
                                Value::Ref(holder),
                                Value::Int(tag::PROCEDURE),
                            )?;
                            self.push(Value::Ref(k))?;
                            proc = receiver;
                            nargs = 1;
                        }
                        prim::EVAL => {
                            let datum = self.pop()?;
                            let hook = self.hook.ok_or_else(|| {
                                trap(TrapKind::UserError, "eval: no compiler available", datum)
                            })?;
                            let code = hook(&mut self.store, datum)
                                .map_err(|m| trap(TrapKind::UserError, m, datum))?;
                            let closure = self.store.alloc(
                                Value::Ref(code),
                                Value::ZERO,
                                Value::Int(tag::PROCEDURE),
                            )?;
                            proc = Value::Ref(closure);
                            nargs = 0;
                        }
                        _ => {
                            let result = match self.primitive(p, io)? {
                                Some(v) => v,
                                None => return Ok(()),
                            };
                            return self.deliver(result, tail, retpc);
                        }
                    }
                }
                v => return Err(trap(TrapKind::TypeError, "bad procedure code", v)),
            }
        }
    }

    fn enter_closure(
        &mut self,
        proc: Ref,
        code: Ref,
        nargs: usize,
        tail: bool,
        retpc: Value,
    ) -> Result<(), Trap> {
        let arity = self
            .store
            .f0(code)
            .as_int()
            .filter(|a| *a >= 0)
            .ok_or_else(|| trap(TrapKind::TypeError, "bad code rib", Value::Ref(code)))?;
        let nparams = (arity / 2) as usize;
        let variadic = arity % 2 == 1;
        if nargs < nparams || (!variadic && nargs != nparams) {
            return Err(trap(
                TrapKind::ArityMismatch,
                arity_message("procedure", nparams, nargs),
                Value::Ref(proc),
            ));
        }

        // Arguments come off the stack last-first.
        let mut args = Vec::with_capacity(nargs);
        for _ in 0..nargs {
            args.push(self.pop()?);
        }
        args.reverse();

        let frame = self.store.alloc(Value::ZERO, Value::Ref(proc), Value::ZERO)?;
        let mut chain = Value::Ref(frame);
        if variadic {
            let rest = self.store.list(args[nparams..].iter().copied())?;
            chain = Value::Ref(self.store.alloc(rest, chain, Value::ZERO)?);
        }
        for &a in args[..nparams].iter().rev() {
            chain = Value::Ref(self.store.alloc(a, chain, Value::ZERO)?);
        }

        let (caller, ret) = if tail {
            let current = current_frame(&self.store, self.stack)?;
            (self.store.f0(current), self.store.f2(current))
        } else {
            (self.stack, retpc)
        };
        self.store.set_f0(frame, caller);
        self.store.set_f2(frame, ret);
        self.stack = chain;
        self.pc = self.store.f2(code);
        Ok(())
    }

    fn deliver(&mut self, result: Value, tail: bool, retpc: Value) -> Result<(), Trap> {
        if tail {
            let frame = current_frame(&self.store, self.stack)?;
            let caller = self.store.f0(frame);
            self.stack = Value::Ref(self.store.alloc(result, caller, Value::ZERO)?);
            self.pc = self.store.f2(frame);
        } else {
            self.push(result)?;
            self.pc = retpc;
        }
        Ok(())
    }

    /// Runs an ordinary primitive. `None` means the machine stopped.
    fn primitive(&mut self, p: i64, io: &mut dyn Io) -> Result<Option<Value>, Trap> {
        let v = match p {
            prim::RIB => {
                let f2 = self.pop()?;
                let f1 = self.pop()?;
                let f0 = self.pop()?;
                Value::Ref(self.store.alloc(f0, f1, f2)?)
            }
            prim::ID => self.pop()?,
            prim::ARG1 => {
                self.pop()?;
                self.pop()?
            }
            prim::ARG2 => {
                let y = self.pop()?;
                self.pop()?;
                y
            }
            prim::CLOSE => {
                let code = self.pop_rib("close")?;
                let env = self.stack;
                Value::Ref(self.store.alloc(Value::Ref(code), env, Value::Int(tag::PROCEDURE))?)
            }
            prim::IS_RIB => {
                let v = self.pop()?;
                self.store.boolean(v.as_ref().is_some())
            }
            prim::FIELD0 | prim::FIELD1 | prim::FIELD2 => {
                let r = self.pop_rib(PRIMITIVES[p as usize].name)?;
                self.store.rib(r).fields[(p - prim::FIELD0) as usize]
            }
            prim::FIELD0_SET | prim::FIELD1_SET | prim::FIELD2_SET => {
                let v = self.pop()?;
                let r = self.pop_rib(PRIMITIVES[p as usize].name)?;
                self.store.set_field(r, (p - prim::FIELD0_SET) as usize, v)?
            }
            prim::EQV => {
                let y = self.pop()?;
                let x = self.pop()?;
                let s = &self.store;
                s.boolean(s.eqv(x, y))
            }
            prim::LT | prim::ADD | prim::SUB | prim::MUL | prim::QUOTIENT => {
                let name = PRIMITIVES[p as usize].name;
                let y = self.pop_int(name)?;
                let x = self.pop_int(name)?;
                match p {
                    prim::LT => self.store.boolean(x < y),
                    prim::ADD => Value::Int(x.wrapping_add(y)),
                    prim::SUB => Value::Int(x.wrapping_sub(y)),
                    prim::MUL => Value::Int(x.wrapping_mul(y)),
                    _ => {
                        if y == 0 {
                            return Err(trap(TrapKind::DivideByZero, "quotient", Value::Int(x)));
                        }
                        Value::Int(x.wrapping_div(y))
                    }
                }
            }
            prim::GETCHAR => Value::Int(read_char(io).map_or(-1, |c| c as i64)),
            prim::PUTCHAR => {
                let v = self.pop()?;
                let c = v
                    .as_int()
                    .and_then(|n| u32::try_from(n).ok())
                    .and_then(char::from_u32)
                    .ok_or_else(|| type_error("putchar", "a character code", v))?;
                write_char(io, c);
                v
            }
            prim::EXIT => {
                let code = self.pop_int("exit")?;
                self.status = Status::Exited(code);
                return Ok(None);
            }
            prim::ERROR => {
                let v = self.pop()?;
                let s = &self.store;
                let message = match v {
                    Value::Ref(r) if s.is_string(v) => s.text_of(r)?,
                    Value::Ref(r) if s.is_symbol(v) => s.symbol_name(r)?,
                    Value::Int(n) => n.to_string(),
                    _ => String::from("error"),
                };
                return Err(trap(TrapKind::UserError, message, v));
            }
            prim::INTERN => {
                let v = self.pop()?;
                let text = match v {
                    Value::Ref(r) if self.store.is_string(v) => self.store.text_of(r)?,
                    _ => return Err(type_error("intern", "a string", v)),
                };
                Value::Ref(self.store.intern(&text)?)
            }
            _ => return Err(trap(TrapKind::BadOpcode, "unknown primitive", Value::Int(p))),
        };
        Ok(Some(v))
    }
}

fn type_error(what: &str, expected: &str, found: Value) -> Trap {
    let mut message = String::from(what);
    message.push_str(": expected ");
    message.push_str(expected);
    trap(TrapKind::TypeError, message, found)
}

fn arity_message(what: &str, expected: usize, got: usize) -> String {
    alloc::format!("{what}: expected {expected} argument(s), got {got}")
}

/// The innermost frame: the first cell on the stack chain whose f2 is a ref.
pub fn current_frame(store: &Store, stack: Value) -> Result<Ref, Trap> {
    let mut cell = stack;
    let mut budget = store.len();
    loop {
        match cell {
            Value::Ref(r) if budget > 0 => {
                if store.f2(r).as_ref().is_some() {
                    return Ok(r);
                }
                cell = store.f1(r);
                budget -= 1;
            }
            _ => return Err(trap(TrapKind::StackUnderflow, "no enclosing frame", stack)),
        }
    }
}

/// Cell designated by a locator: the k-th cell down the stack, or a global's symbol.
pub fn resolve(store: &Store, locator: Value, stack: Value) -> Result<Ref, Trap> {
    match locator {
        Value::Int(k) if k >= 0 => {
            let mut cell = stack;
            for _ in 0..k {
                cell = match cell {
                    Value::Ref(r) => store.f1(r),
                    _ => break,
                };
            }
            cell.as_ref()
                .ok_or_else(|| trap(TrapKind::StackUnderflow, "slot beyond stack", locator))
        }
        Value::Ref(r) => Ok(r),
        _ => Err(trap(TrapKind::BadOpcode, "bad locator", locator)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine() -> Machine {
        Machine::boot(Store::new(), Options::default()).unwrap()
    }

    fn instr(m: &mut Machine, opcode: i64, f1: Value, f2: Value) -> Ref {
        m.store_mut().alloc(Value::Int(opcode), f1, f2).unwrap()
    }

    fn call_desc(m: &mut Machine, nargs: i64, locator: Value) -> Value {
        Value::Ref(m.store_mut().alloc(Value::Int(nargs), locator, Value::ZERO).unwrap())
    }

    #[test]
    fn boot_binds_primitives() {
        let mut m = machine();
        let plus = m.store().lookup_symbol("##+").unwrap();
        let proc = m.store().global(plus).as_ref().unwrap();
        assert_eq!(m.store().f0(proc), Value::Int(14));
        assert_eq!(m.store().f2(proc), Value::Int(tag::PROCEDURE));
        let before = m.store().len();
        install_primitives(m.store_mut()).unwrap();
        assert_eq!(m.store().len(), before);
        assert_eq!(m.store().global(plus).as_ref().unwrap(), proc);
        let other = m.store_mut().intern("plain").unwrap();
        assert_eq!(m.store().global(other), m.store().undef());
    }

    #[test]
    fn primitive_names_index() {
        assert_eq!(primitive_index("##+"), Some(14));
        assert_eq!(primitive_index("##callcc"), Some(22));
        assert_eq!(primitive_index("+"), None);
    }

    #[test]
    fn current_frame_walks_to_first_frame() {
        let mut s = Store::new();
        let halt = s.alloc(Value::Int(op::HALT), Value::ZERO, Value::ZERO).unwrap();
        let frame = s.alloc(Value::ZERO, Value::ZERO, Value::Ref(halt)).unwrap();
        let top = s.alloc(Value::Int(1), Value::Ref(frame), Value::ZERO).unwrap();
        assert_eq!(current_frame(&s, Value::Ref(top)).unwrap(), frame);
        assert_eq!(current_frame(&s, Value::Ref(frame)).unwrap(), frame);
        let lone = s.alloc(Value::Int(1), Value::ZERO, Value::ZERO).unwrap();
        let err = current_frame(&s, Value::Ref(lone)).unwrap_err();
        assert_eq!(err.kind, TrapKind::StackUnderflow);
    }

    #[test]
    fn resolve_slots_and_globals() {
        let mut s = Store::new();
        let b = s.alloc(Value::Int(20), Value::ZERO, Value::ZERO).unwrap();
        let a = s.alloc(Value::Int(10), Value::Ref(b), Value::ZERO).unwrap();
        let stack = Value::Ref(a);
        assert_eq!(resolve(&s, Value::Int(0), stack).unwrap(), a);
        assert_eq!(resolve(&s, Value::Int(1), stack).unwrap(), b);
        assert_eq!(resolve(&s, Value::Int(2), stack).unwrap_err().kind, TrapKind::StackUnderflow);
        let x = s.intern("x").unwrap();
        assert_eq!(resolve(&s, Value::Ref(x), stack).unwrap(), x);
    }

    #[test]
    fn const_then_halt() {
        let mut m = machine();
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let entry = instr(&mut m, op::CONST, Value::Int(42), Value::Ref(halt));
        let out = m.run(entry, &mut BufferIo::new()).unwrap();
        assert_eq!(out, Outcome::Halted(Value::Int(42)));
    }

    #[test]
    fn single_steps() {
        let mut m = machine();
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let c = instr(&mut m, op::CONST, Value::Int(42), Value::Ref(halt));
        m.start(c);
        m.step(&mut BufferIo::new());
        assert_eq!(m.pc(), Value::Ref(halt));
        let top = m.stack().as_ref().unwrap();
        assert_eq!(m.store().f0(top), Value::Int(42));

        let then = instr(&mut m, op::CONST, Value::Int(1), Value::Ref(halt));
        let els = instr(&mut m, op::CONST, Value::Int(2), Value::Ref(halt));
        let test = instr(&mut m, op::IF, Value::Ref(then), Value::Ref(els));
        let t = m.store().true_value();
        let entry = instr(&mut m, op::CONST, t, Value::Ref(test));
        m.start(entry);
        m.step(&mut BufferIo::new());
        m.step(&mut BufferIo::new());
        assert_eq!(m.pc(), Value::Ref(then));
    }

    #[test]
    fn primitive_call() {
        let mut m = machine();
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let plus = Value::Ref(m.store_mut().intern("##+").unwrap());
        let desc = call_desc(&mut m, 2, plus);
        let call = instr(&mut m, op::CALL, desc, Value::Ref(halt));
        let two = instr(&mut m, op::CONST, Value::Int(2), Value::Ref(call));
        let one = instr(&mut m, op::CONST, Value::Int(1), Value::Ref(two));
        assert_eq!(m.run(one, &mut BufferIo::new()).unwrap(), Outcome::Halted(Value::Int(3)));
    }

    #[test]
    fn unbound_global_traps() {
        let mut m = machine();
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let nope = Value::Ref(m.store_mut().intern("nope").unwrap());
        let get = instr(&mut m, op::GET, nope, Value::Ref(halt));
        let t = m.run(get, &mut BufferIo::new()).unwrap_err();
        assert_eq!(t.kind, TrapKind::UnboundGlobal);
        assert_eq!(t.message, "nope");
    }

    #[test]
    fn bad_opcode_and_underflow() {
        let mut m = machine();
        let bad = instr(&mut m, 9, Value::ZERO, Value::ZERO);
        assert_eq!(m.run(bad, &mut BufferIo::new()).unwrap_err().kind, TrapKind::BadOpcode);
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let test = instr(&mut m, op::IF, Value::Ref(halt), Value::Ref(halt));
        assert_eq!(m.run(test, &mut BufferIo::new()).unwrap_err().kind, TrapKind::StackUnderflow);
        let ret = instr(&mut m, op::RETURN, Value::ZERO, Value::ZERO);
        let c = instr(&mut m, op::CONST, Value::Int(1), Value::Ref(ret));
        assert_eq!(m.run(c, &mut BufferIo::new()).unwrap_err().kind, TrapKind::StackUnderflow);
    }

    #[test]
    fn halt_on_empty_stack_is_undef() {
        let mut m = machine();
        let halt = instr(&mut m, op::HALT, Value::ZERO, Value::ZERO);
        let undef = m.store().undef();
        assert_eq!(m.run(halt, &mut BufferIo::new()).unwrap(), Outcome::Halted(undef));
    }

    #[test]
    fn utf8_channels() {
        let mut io = BufferIo::with_input("é".as_bytes());
        assert_eq!(read_char(&mut io), Some(0xe9));
        assert_eq!(read_char(&mut io), None);
        write_char(&mut io, 'é');
        assert_eq!(io.output_text(), "é");
        let mut bad = BufferIo::with_input(&[0xc3, 0x41]);
        assert_eq!(read_char(&mut bad), Some(0xfffd));
    }
}
