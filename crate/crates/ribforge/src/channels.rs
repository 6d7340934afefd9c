//! Machine IO over host streams.
//!
//! Input is pulled a line at a time into a buffer that both the REPL reader
//! and the `getchar` primitive consume, so a program reading characters sees
//! exactly the text after the datum the REPL just read.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};

use ribforge_core::Io;

pub struct Channels<'a> {
    input: Box<dyn BufRead + 'a>,
    pending: VecDeque<u8>,
    at_eof: bool,
    output: Box<dyn Write + 'a>,
    error: Option<io::Error>,
}

impl<'a> Channels<'a> {
    pub fn new(input: impl BufRead + 'a, output: impl Write + 'a) -> Channels<'a> {
        Channels {
            input: Box::new(input),
            pending: VecDeque::new(),
            at_eof: false,
            output: Box::new(output),
            error: None,
        }
    }

    /// Appends the next input line to the buffer. Returns false at end of input.
    pub fn fill_line(&mut self) -> bool {
        if self.at_eof {
            return false;
        }
        let mut line = Vec::new();
        match self.input.read_until(b'\n', &mut line) {
            Ok(0) => {
                self.at_eof = true;
                false
            }
            Ok(_) => {
                self.pending.extend(line);
                true
            }
            Err(e) => {
                self.error.get_or_insert(e);
                self.at_eof = true;
                false
            }
        }
    }

    pub fn at_eof(&self) -> bool {
        self.at_eof
    }

    /// Buffered input not yet consumed.
    pub fn pending(&mut self) -> &[u8] {
        self.pending.make_contiguous()
    }

    pub fn consume(&mut self, n: usize) {
        self.pending.drain(..n.min(self.pending.len()));
    }

    pub fn discard_pending(&mut self) {
        self.pending.clear();
    }

    pub fn write_str(&mut self, s: &str) {
        if let Err(e) = self.output.write_all(s.as_bytes()) {
            self.error.get_or_insert(e);
        }
    }

    pub fn flush(&mut self) {
        if let Err(e) = self.output.flush() {
            self.error.get_or_insert(e);
        }
    }

    /// The first host IO error seen, if any.
    pub fn take_error(&mut self) -> Option<io::Error> {
        self.error.take()
    }
}

impl Io for Channels<'_> {
    fn read_byte(&mut self) -> Option<u8> {
        if self.pending.is_empty() {
            self.fill_line();
        }
        self.pending.pop_front()
    }

    fn write_byte(&mut self, byte: u8) {
        if let Err(e) = self.output.write_all(&[byte]) {
            self.error.get_or_insert(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_lines_on_demand() {
        let mut out = Vec::new();
        let mut ch = Channels::new(&b"ab\ncd"[..], &mut out);
        assert_eq!(ch.read_byte(), Some(b'a'));
        assert_eq!(ch.pending(), b"b\n");
        ch.consume(2);
        assert!(ch.fill_line());
        assert_eq!(ch.pending(), b"cd");
        assert!(!ch.fill_line());
        assert!(ch.at_eof());
        ch.write_byte(b'x');
        ch.write_str("yz");
        ch.flush();
        drop(ch);
        assert_eq!(out, b"xyz");
    }
}
