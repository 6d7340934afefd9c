//! A booted machine plus the library, shared by every CLI mode.

use std::fmt;
use std::io::Write;

use ribforge_core::compiler::{compile_eval, compile_forms, ProgramError};
use ribforge_core::object::tag;
use ribforge_core::printer::write_datum;
use ribforge_core::reader::read_all;
use ribforge_core::rvm::{op, Status};
use ribforge_core::{Io, Machine, Options, Outcome, Ref, Store, Trap, Value};

use crate::stdlib;

pub mod exit {
    pub const OK: i32 = 0;
    pub const DATA: i32 = 65;
    pub const SOFTWARE: i32 = 70;
    pub const IO: i32 = 74;
}

#[derive(Clone, Debug, Default)]
pub struct Config {
    pub no_stdlib: bool,
    /// Maximum number of live ribs.
    pub heap_limit: Option<usize>,
    /// Library source to load instead of the embedded one.
    pub lib_path: Option<std::path::PathBuf>,
    /// Print each executed instruction on stderr.
    pub trace: bool,
}

impl Config {
    /// The library text this configuration boots with, if any.
    pub fn library(&self) -> Result<Option<String>, SessionError> {
        if self.no_stdlib {
            return Ok(None);
        }
        match &self.lib_path {
            Some(path) => std::fs::read_to_string(path)
                .map(Some)
                .map_err(|e| SessionError::Io(format!("{}: {e}", path.display()))),
            None => Ok(Some(stdlib::LIB.to_string())),
        }
    }

    pub fn store(&self) -> Store {
        match self.heap_limit {
            Some(n) => Store::with_limit(n),
            None => Store::new(),
        }
    }
}

#[derive(Debug)]
pub enum SessionError {
    Program(ProgramError),
    Trap(Trap),
    /// A library definition trapped while booting.
    Boot { definition: String, trap: Trap },
    Io(String),
}

impl SessionError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Program(_) => exit::DATA,
            SessionError::Trap(_) | SessionError::Boot { .. } => exit::SOFTWARE,
            SessionError::Io(_) => exit::IO,
        }
    }
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionError::Program(e) => write!(f, "{e}"),
            SessionError::Trap(t) => write!(f, "{t}"),
            SessionError::Boot { definition, trap } => {
                write!(f, "boot failure in library definition {definition}: {trap}")
            }
            SessionError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ProgramError> for SessionError {
    fn from(e: ProgramError) -> Self {
        SessionError::Program(e)
    }
}

impl From<Trap> for SessionError {
    fn from(t: Trap) -> Self {
        SessionError::Trap(t)
    }
}

pub struct Session {
    machine: Machine,
    trace: bool,
}

impl Session {
    /// Boots a machine over `store` without loading anything.
    pub fn bare(store: Store, config: &Config) -> Result<Session, SessionError> {
        let mut machine = Machine::boot(store, Options::default())?;
        machine.set_compile_hook(compile_eval);
        Ok(Session { machine, trace: config.trace })
    }

    /// Boots and loads the library unless disabled.
    pub fn new(config: &Config, io: &mut dyn Io) -> Result<Session, SessionError> {
        let mut session = Session::bare(config.store(), config)?;
        if let Some(lib) = config.library()? {
            session.load_library(&lib, io)?;
        }
        Ok(session)
    }

    /// Runs the library one top-level form at a time, so a failure can name
    /// the definition that caused it.
    pub fn load_library(&mut self, text: &str, io: &mut dyn Io) -> Result<(), SessionError> {
        let forms = read_all(text, self.machine.store_mut()).map_err(ProgramError::from)?;
        // Compaction between forms would move the unread ones, so keep them
        // reachable from a global no program can name. The symbol moves too,
        // so it is looked up again each time.
        const HOLDER: &str = " library";
        let store = self.machine.store_mut();
        let pending = store.list(forms).map_err(Trap::from)?;
        let holder = store.intern(HOLDER).map_err(Trap::from)?;
        store.set_global(holder, pending);
        loop {
            let store = self.machine.store_mut();
            let holder = store.intern(HOLDER).map_err(Trap::from)?;
            let pending = store.global(holder);
            let (Some(form), Some(rest)) = (store.car(pending), store.cdr(pending)) else {
                break;
            };
            store.set_global(holder, rest);
            let name = definition_name(self.machine.store(), form);
            let entry = compile_forms(self.machine.store_mut(), &[form])?;
            match self.run_entry(entry, io) {
                Ok(_) => {}
                Err(SessionError::Trap(trap)) => return Err(SessionError::Boot { definition: name, trap }),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn store(&self) -> &Store {
        self.machine.store()
    }

    pub fn store_mut(&mut self) -> &mut Store {
        self.machine.store_mut()
    }

    pub fn compile_text(&mut self, text: &str) -> Result<Ref, SessionError> {
        let forms = read_all(text, self.machine.store_mut()).map_err(ProgramError::from)?;
        self.compile(&forms)
    }

    pub fn compile(&mut self, forms: &[Value]) -> Result<Ref, SessionError> {
        Ok(compile_forms(self.machine.store_mut(), forms)?)
    }

    pub fn run_entry(&mut self, entry: Ref, io: &mut dyn Io) -> Result<Outcome, SessionError> {
        if !self.trace {
            return Ok(self.machine.run(entry, io)?);
        }
        self.machine.start(entry);
        let stderr = std::io::stderr();
        let mut err = stderr.lock();
        while *self.machine.status() == Status::Running {
            self.machine.maybe_collect();
            let _ = writeln!(err, "{}", describe(self.machine.store(), self.machine.pc()));
            self.machine.step(io);
        }
        match self.machine.status() {
            Status::Halted(v) => Ok(Outcome::Halted(*v)),
            Status::Exited(code) => Ok(Outcome::Exited(*code)),
            Status::Trapped(t) => Err(SessionError::Trap(t.clone())),
            Status::Idle | Status::Running => unreachable!(),
        }
    }

    pub fn run_text(&mut self, text: &str, io: &mut dyn Io) -> Result<Outcome, SessionError> {
        let entry = self.compile_text(text)?;
        self.run_entry(entry, io)
    }

    /// `write` notation for a result.
    pub fn show(&self, v: Value) -> String {
        write_datum(self.store(), v).unwrap_or_else(|e| format!("#<{e}>"))
    }
}

/// Maps how a run ended to a process exit code.
pub fn exit_code(result: &Result<Outcome, SessionError>) -> i32 {
    match result {
        Ok(Outcome::Halted(_)) => exit::OK,
        Ok(Outcome::Exited(code)) => *code as i32,
        Err(e) => e.exit_code(),
    }
}

/// The name a top-level library form binds, or a short rendering of it.
fn definition_name(store: &Store, form: Value) -> String {
    let items = store.list_to_vec(form).unwrap_or_default();
    let is_define = items.first().and_then(|h| h.as_ref()).and_then(|h| store.symbol_name(h).ok());
    if is_define.as_deref() == Some("define") && items.len() > 1 {
        let target = store.car(items[1]).unwrap_or(items[1]);
        if let Ok(name) = write_datum(store, target) {
            return name;
        }
    }
    let text = write_datum(store, form).unwrap_or_default();
    text.chars().take(40).collect()
}

/// One trace line: the instruction at `pc`.
pub fn describe(store: &Store, pc: Value) -> String {
    let Some(r) = pc.as_ref() else {
        return format!("pc {pc:?}");
    };
    let opcode = store.f0(r).as_int().unwrap_or(-1);
    let operand = store.f1(r);
    let detail = match opcode {
        op::CALL => match operand.as_ref() {
            Some(d) => {
                let kind = if store.f2(r) == Value::ZERO { "jump" } else { "call" };
                format!("{kind} {} nargs {}", locator(store, store.f1(d)), store.f0(d).as_int().unwrap_or(-1))
            }
            None => "call ?".into(),
        },
        op::SET | op::GET => format!("{} {}", op::name(opcode), locator(store, operand)),
        op::CONST => {
            let shown = if store.tag_of(operand) == Some(tag::PROCEDURE) {
                "#<procedure>".to_string()
            } else {
                write_datum(store, operand).unwrap_or_else(|_| "#<code>".into())
            };
            format!("const {}", shown.chars().take(60).collect::<String>())
        }
        other => op::name(other).to_string(),
    };
    format!("[{}] {detail}", r.index())
}

fn locator(store: &Store, v: Value) -> String {
    match v {
        Value::Int(n) => format!("@{n}"),
        Value::Ref(s) => store.symbol_name(s).unwrap_or_else(|_| "?".into()),
    }
}
