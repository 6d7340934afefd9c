//! Compiling programs to images and booting from them.

use ribforge_core::codec::{decode_program, encode_program, CodecError, Image};
use ribforge_core::compiler::{compile_forms, ProgramError};
use ribforge_core::reader::read_all;
use ribforge_core::{Io, Outcome, Store};

use crate::session::{Config, Session, SessionError};
use crate::stdlib;

/// Reference image size, in bytes, that the size report compares against.
pub const REFERENCE_BYTES: usize = 7168;

#[derive(Debug)]
pub enum ImageError {
    Program(ProgramError),
    Codec(CodecError),
    Session(SessionError),
}

impl std::fmt::Display for ImageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageError::Program(e) => write!(f, "{e}"),
            ImageError::Codec(CodecError::Malformed { offset, message }) => {
                write!(f, "malformed-image: {message} at byte {offset}")
            }
            ImageError::Codec(e) => write!(f, "image-error: {e}"),
            ImageError::Session(e) => write!(f, "{e}"),
        }
    }
}

impl ImageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ImageError::Session(e) => e.exit_code(),
            _ => crate::session::exit::DATA,
        }
    }
}

impl From<ProgramError> for ImageError {
    fn from(e: ProgramError) -> Self {
        ImageError::Program(e)
    }
}

impl From<CodecError> for ImageError {
    fn from(e: CodecError) -> Self {
        ImageError::Codec(e)
    }
}

/// Compiles `sources` in order as one program and encodes it.
pub fn compile_sources(sources: &[&str]) -> Result<Vec<u8>, ImageError> {
    let mut store = Store::new();
    let mut forms = Vec::new();
    for text in sources {
        forms.extend(read_all(text, &mut store).map_err(ProgramError::from)?);
    }
    let entry = compile_forms(&mut store, &forms)?;
    Ok(encode_program(&store, entry, &[])?)
}

/// Compiles a program, with the configured library in front of it.
pub fn compile(text: &str, config: &Config) -> Result<Vec<u8>, ImageError> {
    let library = config.library().map_err(ImageError::Session)?;
    match &library {
        Some(lib) => compile_sources(&[lib, text]),
        None => compile_sources(&[text]),
    }
}

/// Decodes an image and runs it on a fresh machine.
pub fn run(bytes: &[u8], config: &Config, io: &mut dyn Io) -> Result<Outcome, ImageError> {
    let mut store = config.store();
    let entry = decode_program(bytes, &mut store)?;
    let mut session = Session::bare(store, config).map_err(ImageError::Session)?;
    session.run_entry(entry, io).map_err(ImageError::Session)
}

pub fn listing(bytes: &[u8]) -> Result<String, ImageError> {
    Ok(Image::parse(bytes)?.listing())
}

/// The library plus the in-image REPL, booting into the loop.
pub fn support_image() -> Result<Vec<u8>, ImageError> {
    compile_sources(&[stdlib::LIB, stdlib::REPL_SUPPORT, "(repl)"])
}

pub fn size_report() -> Result<String, ImageError> {
    let n = support_image()?.len();
    Ok(format!(
        "image-bytes: {n}\nreference-bytes: {REFERENCE_BYTES}\nratio: {:.2}\n",
        n as f64 / REFERENCE_BYTES as f64
    ))
}
