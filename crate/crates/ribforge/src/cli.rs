//! Command-line entry point.

use std::io::{self, BufWriter};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ribforge_core::Outcome;

use crate::channels::Channels;
use crate::session::{exit, exit_code, Config, Session, SessionError};
use crate::{image, repl, selftest};

#[derive(Parser, Debug)]
#[command(name = "ribforge", version, about = "A compact Scheme on a rib virtual machine")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    /// Source file to run; without one, start the REPL.
    pub file: Option<PathBuf>,

    /// Evaluate an expression and print its value.
    #[arg(short = 'e', value_name = "EXPR", conflicts_with = "file")]
    pub expr: Option<String>,

    /// Run the differential self-test (corpus and random programs).
    #[arg(long, conflicts_with_all = ["file", "expr"])]
    pub selftest: bool,

    #[command(flatten)]
    pub flags: Flags,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// Do not load the runtime library.
    #[arg(long, global = true)]
    pub no_stdlib: bool,

    /// Maximum number of live ribs.
    #[arg(long, global = true, value_name = "N")]
    pub heap_limit: Option<usize>,

    /// Load the runtime library from PATH instead of the built-in copy.
    #[arg(long, global = true, value_name = "PATH")]
    pub lib: Option<PathBuf>,

    /// Print every executed instruction on stderr.
    #[arg(long, global = true)]
    pub trace: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compile a source file to an image.
    Compile {
        input: PathBuf,
        #[arg(short = 'o', value_name = "OUT")]
        output: PathBuf,
    },
    /// Run an image.
    Run { image: PathBuf },
    /// Print an image's symbols and instruction nodes.
    Decode { image: PathBuf },
    /// Report the encoded size of the library image.
    Size,
}

impl Flags {
    pub fn config(&self) -> Config {
        Config {
            no_stdlib: self.no_stdlib,
            heap_limit: self.heap_limit,
            lib_path: self.lib.clone(),
            trace: self.trace,
        }
    }
}

fn fail(message: impl std::fmt::Display, code: i32) -> i32 {
    eprintln!("error: {message}");
    code
}

fn read_text(path: &PathBuf) -> Result<String, i32> {
    std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display()), exit::IO))
}

fn read_bytes(path: &PathBuf) -> Result<Vec<u8>, i32> {
    std::fs::read(path).map_err(|e| fail(format!("{}: {e}", path.display()), exit::IO))
}

/// Parses arguments and runs. Returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let config = cli.flags.config();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut ch = Channels::new(stdin.lock(), BufWriter::new(stdout.lock()));
    let code = dispatch(cli, &config, &mut ch);
    ch.flush();
    match ch.take_error() {
        // A closed pipe on stdout is not worth a second complaint.
        Some(e) if code == exit::OK => fail(e, exit::IO),
        _ => code,
    }
}

fn dispatch(cli: Cli, config: &Config, ch: &mut Channels) -> i32 {
    if cli.selftest {
        let summary = selftest::run(selftest::RANDOM_PROGRAMS, selftest::SEED);
        ch.write_str(&summary.to_string());
        return if summary.passed() { exit::OK } else { 1 };
    }
    match cli.command {
        Some(Command::Compile { input, output }) => {
            let text = match read_text(&input) {
                Ok(t) => t,
                Err(code) => return code,
            };
            match image::compile(&text, config) {
                Ok(bytes) => match std::fs::write(&output, bytes) {
                    Ok(()) => exit::OK,
                    Err(e) => fail(format!("{}: {e}", output.display()), exit::IO),
                },
                Err(e) => fail(&e, e.exit_code()),
            }
        }
        Some(Command::Run { image: path }) => {
            let bytes = match read_bytes(&path) {
                Ok(b) => b,
                Err(code) => return code,
            };
            match image::run(&bytes, config, ch) {
                Ok(Outcome::Halted(_)) => exit::OK,
                Ok(Outcome::Exited(code)) => code as i32,
                Err(e) => {
                    ch.flush();
                    fail(&e, e.exit_code())
                }
            }
        }
        Some(Command::Decode { image: path }) => {
            let bytes = match read_bytes(&path) {
                Ok(b) => b,
                Err(code) => return code,
            };
            match image::listing(&bytes) {
                Ok(text) => {
                    ch.write_str(&text);
                    exit::OK
                }
                Err(e) => fail(&e, e.exit_code()),
            }
        }
        Some(Command::Size) => match image::size_report() {
            Ok(text) => {
                ch.write_str(&text);
                exit::OK
            }
            Err(e) => fail(&e, e.exit_code()),
        },
        None => {
            let mut session = match Session::new(config, ch) {
                Ok(s) => s,
                Err(e) => return fail(&e, e.exit_code()),
            };
            if let Some(expr) = cli.expr {
                let result = session.run_text(&expr, ch);
                if let Ok(Outcome::Halted(v)) = result {
                    if v != session.store().undef() {
                        let shown = session.show(v);
                        ch.write_str(&shown);
                        ch.write_str("\n");
                    }
                }
                finish(result, ch)
            } else if let Some(path) = cli.file {
                let text = match read_text(&path) {
                    Ok(t) => t,
                    Err(code) => return code,
                };
                let result = session.run_text(&text, ch);
                finish(result, ch)
            } else {
                repl::run(&mut session, ch)
            }
        }
    }
}

fn finish(result: Result<Outcome, SessionError>, ch: &mut Channels) -> i32 {
    if let Err(e) = &result {
        ch.flush();
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_modes() {
        let cli = Cli::try_parse_from(["ribforge", "compile", "a.scm", "-o", "a.rvm", "--no-stdlib"]).unwrap();
        assert!(cli.flags.no_stdlib);
        assert!(matches!(cli.command, Some(Command::Compile { .. })));
        let cli = Cli::try_parse_from(["ribforge", "-e", "(+ 1 2)", "--heap-limit", "1000"]).unwrap();
        assert_eq!(cli.expr.as_deref(), Some("(+ 1 2)"));
        assert_eq!(cli.flags.heap_limit, Some(1000));
        let cli = Cli::try_parse_from(["ribforge", "prog.scm"]).unwrap();
        assert_eq!(cli.file, Some(PathBuf::from("prog.scm")));
        assert!(Cli::try_parse_from(["ribforge", "a.scm", "-e", "1"]).is_err());
    }
}
