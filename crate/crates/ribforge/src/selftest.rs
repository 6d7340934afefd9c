//! Differential self-test: machine against oracle over the corpus and random programs.

use std::fmt;
use std::time::{Duration, Instant};

use ribforge_core::oracle::differential_check;

use crate::{corpus, gen};

pub const RANDOM_PROGRAMS: usize = 200;
pub const SEED: u64 = 0x5EED;

#[derive(Debug)]
pub struct Failure {
    pub name: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct Summary {
    pub corpus: usize,
    pub random: usize,
    pub failures: Vec<Failure>,
    pub elapsed: Duration,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fail in &self.failures {
            writeln!(f, "FAIL {}\n{}", fail.name, fail.detail)?;
        }
        writeln!(
            f,
            "selftest: {} corpus + {} random programs, {} failed, {:.2}s",
            self.corpus,
            self.random,
            self.failures.len(),
            self.elapsed.as_secs_f64()
        )
    }
}

/// Random program `i` of the suite seeded with `seed`.
pub fn random_program(seed: u64, i: usize) -> String {
    gen::program(seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
}

/// Stack for the oracle, which recurses on the host for every nested call.
pub const ORACLE_STACK: usize = 1 << 30;

/// Runs `f` on a thread with room for deep oracle recursion.
pub fn with_oracle_stack<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    std::thread::Builder::new()
        .stack_size(ORACLE_STACK)
        .spawn(f)
        .expect("spawn oracle thread")
        .join()
        .unwrap_or_else(|e| std::panic::resume_unwind(e))
}

pub fn run(random: usize, seed: u64) -> Summary {
    with_oracle_stack(move || run_here(random, seed))
}

fn run_here(random: usize, seed: u64) -> Summary {
    let start = Instant::now();
    let mut failures = Vec::new();
    let programs = corpus::programs();
    for p in &programs {
        if let Err(detail) = differential_check(&p.text) {
            failures.push(Failure { name: p.name.clone(), detail });
        }
    }
    for i in 0..random {
        let text = random_program(seed, i);
        if let Err(detail) = differential_check(&text) {
            failures.push(Failure { name: format!("random #{i}"), detail: format!("{detail}\n{text}") });
        }
    }
    Summary { corpus: programs.len(), random, failures, elapsed: start.elapsed() }
}
