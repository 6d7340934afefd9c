//! Host side of the ribforge Scheme system: the REPL, file runner, image
//! tools and the embedded runtime library.

pub mod channels;
pub mod cli;
pub mod corpus;
pub mod gen;
pub mod image;
pub mod repl;
pub mod selftest;
pub mod session;
pub mod stdlib;
