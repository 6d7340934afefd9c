//! The curated program corpus. Every program runs without the library.

pub const PRELUDE: &str = include_str!("../corpus/prelude.scm");
pub const PROGRAMS: &str = include_str!("../corpus/programs.scm");

const MARKER: &str = ";;; ==== ";

#[derive(Clone, Debug)]
pub struct Program {
    pub name: String,
    /// The prelude followed by the program body.
    pub text: String,
}

/// Splits `text` at `;;; ==== name` lines.
pub fn split(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix(MARKER) {
            out.push((name.trim().to_string(), String::new()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    out
}

pub fn programs() -> Vec<Program> {
    split(PROGRAMS)
        .into_iter()
        .map(|(name, body)| Program { name, text: format!("{PRELUDE}\n{body}") })
        .collect()
}
