//! The embedded runtime library and its manifest.

pub const LIB: &str = include_str!("../lib/lib.scm");

/// The in-image REPL loop, counted in the size report.
pub const REPL_SUPPORT: &str = include_str!("../lib/repl.scm");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// A direct wrapper over one `##` primitive.
    PrimitiveAlias,
    /// Written in Scheme over the primitives.
    LibDefined,
}

use Provenance::{LibDefined as L, PrimitiveAlias as P};

/// Every procedure the library promises to bind, in manifest order.
pub const MANIFEST: &[(&str, Provenance)] = &[
    // pairs and lists
    ("cons", L),
    ("car", L),
    ("cdr", L),
    ("set-car!", L),
    ("set-cdr!", L),
    ("caar", L),
    ("cadr", L),
    ("cdar", L),
    ("cddr", L),
    ("caddr", L),
    ("pair?", L),
    ("null?", L),
    ("list?", L),
    ("list", L),
    ("length", L),
    ("append", L),
    ("reverse", L),
    ("list-tail", L),
    ("list-ref", L),
    ("memq", L),
    ("memv", L),
    ("member", L),
    ("assq", L),
    ("assv", L),
    ("assoc", L),
    ("map", L),
    ("for-each", L),
    // predicates and equality
    ("not", L),
    ("boolean?", L),
    ("symbol?", L),
    ("number?", L),
    ("integer?", L),
    ("string?", L),
    ("char?", L),
    ("vector?", L),
    ("procedure?", L),
    ("eq?", P),
    ("eqv?", P),
    ("equal?", L),
    // integers
    ("=", L),
    ("<", L),
    (">", L),
    ("<=", L),
    (">=", L),
    ("+", L),
    ("-", L),
    ("*", L),
    ("zero?", L),
    ("positive?", L),
    ("negative?", L),
    ("even?", L),
    ("odd?", L),
    ("max", L),
    ("min", L),
    ("abs", L),
    ("modulo", L),
    ("remainder", L),
    ("quotient", P),
    ("gcd", L),
    ("lcm", L),
    ("number->string", L),
    ("string->number", L),
    // characters
    ("char->integer", L),
    ("integer->char", L),
    ("char=?", L),
    ("char<?", L),
    ("char>?", L),
    ("char<=?", L),
    ("char>=?", L),
    ("char-alphabetic?", L),
    ("char-numeric?", L),
    ("char-whitespace?", L),
    ("char-upper-case?", L),
    ("char-lower-case?", L),
    ("char-upcase", L),
    ("char-downcase", L),
    // strings
    ("make-string", L),
    ("string", L),
    ("string-length", L),
    ("string-ref", L),
    ("string-set!", L),
    ("substring", L),
    ("string-append", L),
    ("string->list", L),
    ("list->string", L),
    ("string-copy", L),
    ("string=?", L),
    ("string<?", L),
    ("string>?", L),
    ("string<=?", L),
    ("string>=?", L),
    ("string->symbol", P),
    ("symbol->string", L),
    // vectors
    ("make-vector", L),
    ("vector", L),
    ("vector-length", L),
    ("vector-ref", L),
    ("vector-set!", L),
    ("vector->list", L),
    ("list->vector", L),
    ("vector-fill!", L),
    // control
    ("apply", L),
    ("call-with-current-continuation", P),
    ("call/cc", P),
    // input and output
    ("read", L),
    ("read-char", L),
    ("peek-char", L),
    ("write", L),
    ("display", L),
    ("write-char", L),
    ("newline", L),
    ("eof-object?", L),
    // system
    ("eval", P),
    ("error", L),
    ("exit", P),
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn manifest_names_are_unique() {
        let mut seen = HashSet::new();
        for (name, _) in MANIFEST {
            assert!(seen.insert(name), "{name} listed twice");
        }
        assert!(MANIFEST.len() >= 75);
    }
}
