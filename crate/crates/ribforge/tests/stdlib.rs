use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ribforge::image;
use ribforge::session::{Config, Session, SessionError};
use ribforge::stdlib::MANIFEST;
use ribforge_core::{BufferIo, Outcome};

fn session() -> Session {
    Session::new(&Config::default(), &mut BufferIo::new()).expect("library boots")
}

/// Value in `write` notation plus anything printed.
fn eval_in(s: &mut Session, text: &str, input: &str) -> Result<(String, String), SessionError> {
    let mut io = BufferIo::with_input(input.as_bytes());
    match s.run_text(text, &mut io)? {
        Outcome::Halted(v) => Ok((s.show(v), io.output_text())),
        Outcome::Exited(code) => Ok((format!("exit {code}"), io.output_text())),
    }
}

fn eval(s: &mut Session, text: &str) -> String {
    eval_in(s, text, "").unwrap_or_else(|e| panic!("{text}: {e}")).0
}

/// (manifest name, expression, expected value in write notation)
const CASES: &[(&str, &str, &str)] = &[
    ("cons", "(cons 1 '(2))", "(1 2)"),
    ("car", "(car '(a b))", "a"),
    ("cdr", "(cdr '(a b))", "(b)"),
    ("set-car!", "(let ((p (list 1 2))) (set-car! p 9) p)", "(9 2)"),
    ("set-cdr!", "(let ((p (list 1 2))) (set-cdr! p 9) p)", "(1 . 9)"),
    ("caar", "(caar '((1) 2))", "1"),
    ("cadr", "(cadr '(1 2 3))", "2"),
    ("cdar", "(cdar '((1 5) 2))", "(5)"),
    ("cddr", "(cddr '(1 2 3))", "(3)"),
    ("caddr", "(caddr '(1 2 3))", "3"),
    ("pair?", "(list (pair? '(1)) (pair? '()) (pair? 5))", "(#t #f #f)"),
    ("null?", "(list (null? '()) (null? '(1)))", "(#t #f)"),
    ("list?", "(list (list? '(1 2)) (list? '(1 . 2)) (list? '()))", "(#t #f #t)"),
    ("list", "(list 1 'a \"s\")", "(1 a \"s\")"),
    ("length", "(length '(1 2 3))", "3"),
    ("append", "(append '(1) '() '(2 3) 4)", "(1 2 3 . 4)"),
    ("reverse", "(reverse '(1 2 3))", "(3 2 1)"),
    ("list-tail", "(list-tail '(1 2 3 4) 2)", "(3 4)"),
    ("list-ref", "(list-ref '(a b c) 1)", "b"),
    ("memq", "(memq 'c '(a b c d))", "(c d)"),
    ("memv", "(memv 101 '(100 101 102))", "(101 102)"),
    ("member", "(member (list 'a) '(b (a) c))", "((a) c)"),
    ("assq", "(assq 'b '((a 1) (b 2)))", "(b 2)"),
    ("assv", "(assv 5 '((2 3) (5 7)))", "(5 7)"),
    ("assoc", "(assoc \"b\" '((\"a\" 1) (\"b\" 2)))", "(\"b\" 2)"),
    ("map", "(map + '(1 2 3) '(10 20 30))", "(11 22 33)"),
    ("for-each", "(let ((acc '())) (for-each (lambda (x) (set! acc (cons x acc))) '(1 2 3)) acc)", "(3 2 1)"),
    ("not", "(list (not #f) (not 0) (not '()))", "(#t #f #f)"),
    ("boolean?", "(list (boolean? #f) (boolean? 0))", "(#t #f)"),
    ("symbol?", "(list (symbol? 'a) (symbol? \"a\"))", "(#t #f)"),
    ("number?", "(list (number? 5) (number? 'a))", "(#t #f)"),
    ("integer?", "(list (integer? -5) (integer? \"5\"))", "(#t #f)"),
    ("string?", "(list (string? \"a\") (string? #\\a))", "(#t #f)"),
    ("char?", "(char? #\\a)", "#t"),
    ("vector?", "(list (vector? #(1)) (vector? '(1)))", "(#t #f)"),
    ("procedure?", "(list (procedure? car) (procedure? (lambda () 1)) (procedure? 'car))", "(#t #t #f)"),
    ("eq?", "(list (eq? 'a 'a) (eq? (list 1) (list 1)))", "(#t #f)"),
    ("eqv?", "(list (eqv? 100 100) (eqv? \"a\" \"a\"))", "(#t #f)"),
    ("equal?", "(list (equal? '(1 #(2 \"x\")) (list 1 (vector 2 \"x\"))) (equal? \"a\" \"b\"))", "(#t #f)"),
    ("=", "(list (= 1 1 1) (= 1 2))", "(#t #f)"),
    ("<", "(list (< 1 2 3) (< 1 3 2))", "(#t #f)"),
    (">", "(list (> 3 2 1) (> 1 2))", "(#t #f)"),
    ("<=", "(list (<= 1 1 2) (<= 2 1))", "(#t #f)"),
    (">=", "(list (>= 2 2 1) (>= 1 2))", "(#t #f)"),
    ("+", "(list (+) (+ 1) (+ 1 2 3))", "(0 1 6)"),
    ("-", "(list (- 5) (- 10 1 2))", "(-5 7)"),
    ("*", "(list (*) (* 2 3 4))", "(1 24)"),
    ("zero?", "(list (zero? 0) (zero? 1))", "(#t #f)"),
    ("positive?", "(list (positive? 1) (positive? 0))", "(#t #f)"),
    ("negative?", "(list (negative? -1) (negative? 0))", "(#t #f)"),
    ("even?", "(list (even? -4) (even? 3))", "(#t #f)"),
    ("odd?", "(list (odd? -3) (odd? 4))", "(#t #f)"),
    ("max", "(max 3 9 -2)", "9"),
    ("min", "(min 3 9 -2)", "-2"),
    ("abs", "(list (abs -7) (abs 7))", "(7 7)"),
    ("modulo", "(modulo -7 2)", "1"),
    ("remainder", "(remainder -7 2)", "-1"),
    ("quotient", "(quotient -7 2)", "-3"),
    ("gcd", "(list (gcd) (gcd 12 -18) (gcd 7 5))", "(0 6 1)"),
    ("lcm", "(list (lcm) (lcm 4 6))", "(1 12)"),
    ("number->string", "(list (number->string -120) (number->string 255 16))", "(\"-120\" \"ff\")"),
    ("string->number", "(list (string->number \"-42\") (string->number \"abc\") (string->number \"ff\" 16))", "(-42 #f 255)"),
    ("char->integer", "(char->integer #\\A)", "65"),
    ("integer->char", "(integer->char 97)", "97"),
    ("char=?", "(list (char=? #\\a #\\a) (char=? #\\a #\\b))", "(#t #f)"),
    ("char<?", "(list (char<? #\\a #\\b) (char<? #\\b #\\a))", "(#t #f)"),
    ("char>?", "(char>? #\\b #\\a)", "#t"),
    ("char<=?", "(char<=? #\\a #\\a)", "#t"),
    ("char>=?", "(char>=? #\\a #\\b)", "#f"),
    ("char-alphabetic?", "(list (char-alphabetic? #\\q) (char-alphabetic? #\\1))", "(#t #f)"),
    ("char-numeric?", "(list (char-numeric? #\\1) (char-numeric? #\\x))", "(#t #f)"),
    ("char-whitespace?", "(list (char-whitespace? #\\space) (char-whitespace? #\\a))", "(#t #f)"),
    ("char-upper-case?", "(char-upper-case? #\\Q)", "#t"),
    ("char-lower-case?", "(char-lower-case? #\\Q)", "#f"),
    ("char-upcase", "(char-upcase #\\a)", "65"),
    ("char-downcase", "(char-downcase #\\A)", "97"),
    ("make-string", "(make-string 3 #\\z)", "\"zzz\""),
    ("string", "(string #\\a #\\b)", "\"ab\""),
    ("string-length", "(string-length \"hello\")", "5"),
    ("string-ref", "(string-ref \"abc\" 2)", "99"),
    ("string-set!", "(let ((s (make-string 2 #\\a))) (string-set! s 1 #\\b) s)", "\"ab\""),
    ("substring", "(substring \"hello\" 1 3)", "\"el\""),
    ("string-append", "(string-append \"a\" \"\" \"bc\")", "\"abc\""),
    ("string->list", "(string->list \"ab\")", "(97 98)"),
    ("list->string", "(list->string '(104 105))", "\"hi\""),
    ("string-copy", "(let* ((a \"ab\") (b (string-copy a))) (string-set! b 0 #\\z) (list a b))", "(\"ab\" \"zb\")"),
    ("string=?", "(list (string=? \"ab\" \"ab\") (string=? \"ab\" \"abc\"))", "(#t #f)"),
    ("string<?", "(list (string<? \"ab\" \"abc\") (string<? \"b\" \"a\"))", "(#t #f)"),
    ("string>?", "(string>? \"b\" \"a\")", "#t"),
    ("string<=?", "(string<=? \"a\" \"a\")", "#t"),
    ("string>=?", "(string>=? \"a\" \"b\")", "#f"),
    ("string->symbol", "(eq? (string->symbol \"abc\") 'abc)", "#t"),
    ("symbol->string", "(symbol->string 'foo)", "\"foo\""),
    ("make-vector", "(make-vector 2 'x)", "#(x x)"),
    ("vector", "(vector 1 \"a\")", "#(1 \"a\")"),
    ("vector-length", "(vector-length #(1 2 3))", "3"),
    ("vector-ref", "(vector-ref #(a b c) 1)", "b"),
    ("vector-set!", "(let ((v (make-vector 2 0))) (vector-set! v 0 'y) v)", "#(y 0)"),
    ("vector->list", "(vector->list #(1 2))", "(1 2)"),
    ("list->vector", "(list->vector '(1 2))", "#(1 2)"),
    ("vector-fill!", "(let ((v (make-vector 2 0))) (vector-fill! v 7) v)", "#(7 7)"),
    ("apply", "(list (apply + 1 2 '(3 4)) (apply list '()))", "(10 ())"),
    ("call-with-current-continuation", "(+ 1 (call-with-current-continuation (lambda (k) (k 41) 99)))", "42"),
    ("call/cc", "(+ 1 (call/cc (lambda (k) 41)))", "42"),
    ("read", "(read)", "(a . \"b\")"),
    ("read-char", "(list (read-char) (read-char))", "(40 97)"),
    ("peek-char", "(list (peek-char) (read-char))", "(40 40)"),
    ("write", "(write '(1 \"a\\n\" #(x)))", "#<undefined>"),
    ("display", "(display '(1 \"a\" #(x)))", "#<undefined>"),
    ("write-char", "(write-char #\\z)", "#<undefined>"),
    ("newline", "(newline)", "#<undefined>"),
    ("eof-object?", "(list (eof-object? (read)) (eof-object? 1))", "(#f #f)"),
    ("eval", "(eval '(* 6 7))", "42"),
    ("error", "(error \"boom\" 1)", "trap"),
    ("exit", "(exit 9)", "exit 9"),
];

/// Expected output, for cases that print.
const OUTPUT: &[(&str, &str)] = &[
    ("write", "(1 \"a\\n\" #(x))"),
    ("display", "(1 a #(x))"),
    ("write-char", "z"),
    ("newline", "\n"),
];

#[test]
fn every_manifest_name_is_bound_after_boot() {
    let mut s = session();
    for (name, _) in MANIFEST {
        assert_eq!(eval(&mut s, &format!("(procedure? {name})")), "#t", "{name}");
    }
}

#[test]
fn every_manifest_name_has_a_case() {
    let covered: HashSet<&str> = CASES.iter().map(|c| c.0).collect();
    let missing: Vec<&str> = MANIFEST.iter().map(|m| m.0).filter(|n| !covered.contains(n)).collect();
    assert!(missing.is_empty(), "no case for {missing:?}");
}

#[test]
fn manifest_cases_pass() {
    let mut s = session();
    for (name, text, expected) in CASES {
        let (value, output) = match eval_in(&mut s, text, "(a . \"b\")") {
            Ok(r) => r,
            Err(SessionError::Trap(t)) if *expected == "trap" => {
                assert_eq!(t.kind.as_str(), "user-error", "{name}");
                assert_eq!(t.message, "boom 1", "{name}");
                continue;
            }
            Err(e) => panic!("{name}: {text}: {e}"),
        };
        assert_eq!(value, *expected, "{name}: {text}");
        let printed = OUTPUT.iter().find(|o| o.0 == *name).map_or("", |o| o.1);
        assert_eq!(output, printed, "{name}: output");
    }
}

#[test]
fn boot_examples() {
    let mut s = session();
    assert_eq!(eval(&mut s, "(length '(1 2 3))"), "3");
    assert_eq!(eval(&mut s, "(assq 'b '((a 1) (b 2)))"), "(b 2)");
    assert_eq!(eval(&mut s, "(eq? (string->symbol \"abc\") 'abc)"), "#t");
}

/// A random datum in canonical write notation.
fn datum(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return match rng.gen_range(0..7) {
            0 => rng.gen::<i64>().to_string(),
            1 => rng.gen_range(-50i64..50).to_string(),
            2 => ["a", "foo", "x1", "hello-world", "+", "-", "...", "<=?", "set-car!"]
                .choose(rng)
                .unwrap()
                .to_string(),
            3 => ["#t", "#f", "()"].choose(rng).unwrap().to_string(),
            _ => {
                let parts = ["a", "\\\"", "\\\\", "\\n", " ", "λ", "(", ")", ";", "#"];
                let n = rng.gen_range(0..5);
                let body: String = (0..n).map(|_| *parts.choose(rng).unwrap()).collect();
                format!("\"{body}\"")
            }
        };
    }
    let n = rng.gen_range(1..4);
    let items: Vec<String> = (0..n).map(|_| datum(rng, depth - 1)).collect();
    match rng.gen_range(0..3) {
        0 => format!("#({})", items.join(" ")),
        1 => {
            let tail = datum(rng, 0);
            if tail.starts_with('(') {
                format!("({})", items.join(" "))
            } else {
                format!("({} . {tail})", items.join(" "))
            }
        }
        _ => format!("({})", items.join(" ")),
    }
}

#[test]
fn write_then_read_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3EAD);
    let mut writer = session();
    let mut reader = session();
    for _ in 0..500 {
        let d = datum(&mut rng, 4);
        let (_, written) = eval_in(&mut writer, &format!("(write '{d})"), "").unwrap();
        assert_eq!(written, d);
        let check = format!("(let ((x (read))) (list (equal? x '{d}) (eof-object? (read))))");
        let (value, _) = eval_in(&mut reader, &check, &written).unwrap();
        assert_eq!(value, "(#t #t)", "{d}");
    }
}

#[test]
fn equal_agrees_with_structural_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0);
    let mut s = session();
    let mut same = 0;
    for _ in 0..500 {
        let a = datum(&mut rng, 3);
        // Half the time compare against a fresh copy of the same text.
        let b = if rng.gen_bool(0.5) { a.clone() } else { datum(&mut rng, 3) };
        let expected = if a == b { "#t" } else { "#f" };
        same += (a == b) as usize;
        assert_eq!(eval(&mut s, &format!("(equal? (list-copy '({a})) '({b}))")), expected, "{a} vs {b}");
    }
    assert!(same > 100);
}

#[test]
fn modulo_and_remainder_sign_laws() {
    let mut s = session();
    let text = "(define (table a b acc)
                  (cond ((< 19 a) (reverse acc))
                        ((< 19 b) (table (+ a 1) -19 acc))
                        ((= b 0) (table a (+ b 1) acc))
                        (else (table a (+ b 1) (cons (list (remainder a b) (modulo a b)) acc)))))
                (table -19 -19 '())";
    let mut expected = Vec::new();
    for a in -19i64..=19 {
        for b in (-19i64..=19).filter(|b| *b != 0) {
            let r = a % b;
            let m = if r != 0 && (r < 0) != (b < 0) { r + b } else { r };
            // Sign laws: remainder follows the dividend, modulo the divisor.
            assert!(r == 0 || (r < 0) == (a < 0));
            assert!(m == 0 || (m < 0) == (b < 0));
            expected.push(format!("({r} {m})"));
        }
    }
    assert_eq!(expected.len(), 39 * 38);
    assert_eq!(eval(&mut s, text), format!("({})", expected.join(" ")));
}

#[test]
fn error_traps_are_recoverable() {
    let mut s = session();
    eval(&mut s, "(define kept 'still-here)");
    match eval_in(&mut s, "(error \"bad thing:\" '(1 \"x\"))", "") {
        Err(SessionError::Trap(t)) => assert_eq!(t.message, "bad thing: (1 \"x\")"),
        other => panic!("{other:?}"),
    }
    assert_eq!(eval(&mut s, "kept"), "still-here");
}

#[test]
fn library_survives_compaction_while_booting() {
    // A small heap forces collections between library definitions.
    let config = Config { heap_limit: Some(12_000), ..Config::default() };
    let mut s = Session::new(&config, &mut BufferIo::new()).expect("boots under a heap limit");
    assert!(s.machine().stats().collections > 0);
    assert_eq!(eval(&mut s, "(map (lambda (x) (* x x)) (list 1 2 3))"), "(1 4 9)");
}

#[test]
fn tiny_heaps_fail_to_boot_cleanly() {
    for limit in (500..12_000).step_by(500) {
        let config = Config { heap_limit: Some(limit), ..Config::default() };
        match Session::new(&config, &mut BufferIo::new()) {
            Ok(mut s) => assert_eq!(eval(&mut s, "(length (list 1 2 3))"), "3", "{limit}"),
            Err(e) => assert!(e.to_string().contains("heap") || e.to_string().contains("alloc"), "{limit}: {e}"),
        }
    }
}

#[test]
fn image_size_is_within_bound() {
    let n = image::support_image().unwrap().len();
    assert!(n <= 65536, "{n}");
}
