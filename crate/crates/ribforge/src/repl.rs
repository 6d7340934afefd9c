//! The interactive loop.

use ribforge_core::reader::Reader;
use ribforge_core::{Outcome, Value};

use crate::channels::Channels;
use crate::session::{exit, Session, SessionError};

pub const PROMPT: &str = "> ";

enum Next {
    Datum(Value),
    Error(String),
    End,
}

/// Reads the next datum from buffered input, pulling more lines while the
/// datum is incomplete.
fn next_datum(session: &mut Session, ch: &mut Channels) -> Next {
    loop {
        let pending = ch.pending();
        let text = match std::str::from_utf8(pending) {
            Ok(t) => t,
            // A line is always whole, so bad UTF-8 here is really bad input.
            Err(_) => {
                ch.discard_pending();
                return Next::Error("reader-error: input is not UTF-8".into());
            }
        };
        let mut reader = Reader::new(text);
        match reader.next_datum(session.store_mut()) {
            Ok(Some(v)) => {
                let used = reader.offset();
                ch.consume(used);
                return Next::Datum(v);
            }
            Ok(None) => {
                let used = text.len();
                ch.consume(used);
                if !ch.fill_line() {
                    return Next::End;
                }
            }
            Err(e) if e.is_incomplete() && !ch.at_eof() => {
                ch.fill_line();
            }
            Err(e) => {
                ch.discard_pending();
                return Next::Error(format!("reader-error: {e}"));
            }
        }
    }
}

/// Runs the loop until input ends. Returns the process exit code.
pub fn run(session: &mut Session, ch: &mut Channels) -> i32 {
    loop {
        ch.write_str(PROMPT);
        ch.flush();
        let datum = match next_datum(session, ch) {
            Next::Datum(v) => v,
            Next::Error(message) => {
                ch.write_str(&format!("error: {message}\n"));
                continue;
            }
            Next::End => break,
        };
        let result = session.compile(&[datum]).and_then(|entry| session.run_entry(entry, ch));
        match result {
            Ok(Outcome::Halted(v)) => {
                if v != session.store().undef() {
                    let shown = session.show(v);
                    ch.write_str(&shown);
                    ch.write_str("\n");
                }
            }
            Ok(Outcome::Exited(code)) => {
                ch.flush();
                return code as i32;
            }
            Err(SessionError::Trap(t)) => ch.write_str(&format!("error: {}: {}\n", t.kind, t.message)),
            Err(e) => ch.write_str(&format!("error: {e}\n")),
        }
        if ch.take_error().is_some() {
            return exit::IO;
        }
    }
    ch.flush();
    match ch.take_error() {
        Some(_) => exit::IO,
        None => exit::OK,
    }
}
