//! A compact Scheme system built on ribs: three-field heap objects that
//! represent data, code and the control stack alike.
//!
//! The crate is `no_std` and only needs `alloc`. Host IO goes through the
//! [`rvm::Io`] trait.

#![no_std]
extern crate alloc;

pub mod codec;
pub mod compiler;
pub mod expand;
pub mod object;
pub mod oracle;
pub mod printer;
pub mod reader;
pub mod rvm;

pub use object::{Ref, Rib, Store, StoreError, Value};
pub use rvm::{BufferIo, Io, Machine, Options, Outcome, Trap, TrapKind};
