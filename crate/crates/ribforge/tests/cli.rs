use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn ribforge(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ribforge"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn runs_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let hi = write(dir.path(), "hi.scm", "(display \"hi\")");
    let o = ribforge(&[&hi], "");
    assert_eq!((stdout(&o).as_str(), o.status.code()), ("hi", Some(0)));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let exit3 = write(dir.path(), "exit.scm", "(display 1) (exit 3) (display 2)");
    let o = ribforge(&[&exit3], "");
    assert_eq!((stdout(&o).as_str(), o.status.code()), ("1", Some(3)));

    let bad = write(dir.path(), "bad.scm", "(display \"unclosed\"");
    let o = ribforge(&[&bad], "");
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).starts_with("error: reader-error: "), "{}", stderr(&o));

    let expand = write(dir.path(), "expand.scm", "(lambda (x x) x)");
    assert_eq!(ribforge(&[&expand], "").status.code(), Some(65));

    let trap = write(dir.path(), "trap.scm", "(display 'before) (car 5)");
    let o = ribforge(&[&trap], "");
    assert_eq!(o.status.code(), Some(70));
    assert_eq!(stdout(&o), "before");
    assert!(stderr(&o).starts_with("error: user-error: car: not a pair"), "{}", stderr(&o));

    let o = ribforge(&["--no-stdlib", "-e", "(##field0 5)"], "");
    assert_eq!(o.status.code(), Some(70));
    assert!(stderr(&o).starts_with("error: type-error: "), "{}", stderr(&o));

    let o = ribforge(&[dir.path().join("missing.scm").to_str().unwrap()], "");
    assert_eq!(o.status.code(), Some(74));
}

#[test]
fn evaluates_expressions() {
    let o = ribforge(&["-e", "(+ 1 2)"], "");
    assert_eq!((stdout(&o).as_str(), o.status.code()), ("3\n", Some(0)));
    let o = ribforge(&["-e", "(define x 1)"], "");
    assert_eq!(stdout(&o), "");
    let o = ribforge(&["--no-stdlib", "-e", "(##+ 40 2)"], "");
    assert_eq!(stdout(&o), "42\n");
    // Programs read stdin.
    let o = ribforge(&["-e", "(read)"], "(a \"b\" #(1))");
    assert_eq!(stdout(&o), "(a \"b\" #(1))\n");
}

#[test]
fn repl_examples() {
    assert_eq!(stdout(&ribforge(&[], "(+ 1 2)\n")), "> 3\n> ");
    assert_eq!(stdout(&ribforge(&[], "(define x 5)\nx\n")), "> > 5\n> ");
    let out = stdout(&ribforge(&[], "(car 1)\n(+ 1 2)\n"));
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("> error: user-error: car: not a pair"), "{out}");
    assert_eq!(lines[1], "> 3");
}

#[test]
fn compile_run_and_decode() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "p.scm", "(display 42)");
    let img = dir.path().join("p.rvm");
    let img = img.to_str().unwrap();
    let o = ribforge(&["compile", &src, "-o", img], "");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = ribforge(&["run", img], "");
    assert_eq!((stdout(&o).as_str(), o.status.code()), ("42", Some(0)));

    let src = write(dir.path(), "42.scm", "42");
    let img = dir.path().join("42.rvm");
    let img = img.to_str().unwrap();
    assert!(ribforge(&["compile", &src, "-o", img, "--no-stdlib"], "").status.success());
    assert_eq!(std::fs::read(img).unwrap(), b"RSC1\n#%)&#RI$%");
    let listing = stdout(&ribforge(&["decode", img], ""));
    assert!(listing.contains("nodes: 2\n"), "{listing}");
    assert!(listing.contains(": const 42"), "{listing}");
    assert!(listing.ends_with("root: 2\n"), "{listing}");
}

#[test]
fn malformed_images_exit_65_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(dir.path(), "bad.rvm", "RSC1\n#%)&#R");
    for cmd in ["run", "decode"] {
        let o = ribforge(&[cmd, &img], "");
        assert_eq!(o.status.code(), Some(65));
        assert!(stderr(&o).contains("malformed-image: "), "{}", stderr(&o));
        assert!(stderr(&o).contains("at byte "), "{}", stderr(&o));
    }
}

#[test]
fn size_report() {
    let out = stdout(&ribforge(&["size"], ""));
    let bytes: usize = out
        .lines()
        .find_map(|l| l.strip_prefix("image-bytes: "))
        .expect("image-bytes line")
        .parse()
        .unwrap();
    assert!(bytes > 0);
    assert!(out.contains("reference-bytes: 7168\n"), "{out}");
    assert!(out.contains("ratio: "), "{out}");
}

#[test]
fn library_flags() {
    let dir = tempfile::tempdir().unwrap();
    let lib = write(dir.path(), "mini.scm", "(define (twice x) (##* 2 x))");
    let o = ribforge(&["--lib", &lib, "-e", "(twice 21)"], "");
    assert_eq!(stdout(&o), "42\n");
    // The custom library replaces the built-in one.
    let o = ribforge(&["--lib", &lib, "-e", "(length '(1))"], "");
    assert_eq!(o.status.code(), Some(70));

    let broken = write(dir.path(), "broken.scm", "(define ok 1)\n(define (f) 2)\n(define bad (##field0 7))\n");
    let o = ribforge(&["--lib", &broken, "-e", "1"], "");
    assert_eq!(o.status.code(), Some(70));
    assert!(stderr(&o).contains("boot failure in library definition bad"), "{}", stderr(&o));
}

#[test]
fn heap_limit_and_trace() {
    let grow = "(define (grow l) (grow (##rib 1 l 0))) (grow '())";
    let o = ribforge(&["--no-stdlib", "--heap-limit", "20000", "-e", grow], "");
    assert_eq!(o.status.code(), Some(70));
    assert!(stderr(&o).contains("allocation-failure"), "{}", stderr(&o));

    let o = ribforge(&["--no-stdlib", "--trace", "-e", "(##+ 1 2)"], "");
    assert_eq!(stdout(&o), "3\n");
    let trace = stderr(&o);
    assert!(trace.contains("const 1"), "{trace}");
    assert!(trace.contains("##+ nargs 2"), "{trace}");
    assert!(trace.lines().last().unwrap().ends_with("halt"), "{trace}");
}

#[test]
fn selftest_flag() {
    let o = ribforge(&["--selftest"], "");
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 failed"), "{}", stdout(&o));
}
