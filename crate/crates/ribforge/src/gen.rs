//! Random well-typed, terminating programs for differential testing.
//!
//! Programs are built over the corpus prelude. Every expression has a static
//! type (integer, integer list, boolean or string), loops are bounded
//! recursions on a counter, and helpers only call helpers defined before them,
//! so every generated program halts. Traps are still possible (wrapping
//! arithmetic is fine, but `car` of an empty list is not), and the oracle must
//! agree on those too.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PRELUDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ty {
    Int,
    List,
    Bool,
    Str,
}

const TYPES: [Ty; 4] = [Ty::Int, Ty::List, Ty::Bool, Ty::Str];

#[derive(Clone, Debug)]
struct Fun {
    name: String,
    arity: usize,
    /// Bounded recursion; never called from loop bodies or helpers.
    looping: bool,
}

struct Gen {
    rng: ChaCha8Rng,
    fresh: usize,
    globals: Vec<(String, Ty)>,
    funs: Vec<Fun>,
    /// Counter closures `(c delta)` returning an integer.
    closures: Vec<String>,
    vectors: Vec<(String, usize)>,
}

type Scope = Vec<(String, Ty)>;

impl Gen {
    fn name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn var(&mut self, scope: &Scope, ty: Ty) -> Option<String> {
        let found: Vec<&String> = scope
            .iter()
            .chain(self.globals.iter())
            .filter(|(_, t)| *t == ty)
            .map(|(n, _)| n)
            .collect();
        found.choose(&mut self.rng).map(|s| s.to_string())
    }

    fn literal_int(&mut self) -> String {
        match self.rng.gen_range(0..10) {
            0 => self.rng.gen::<i64>().to_string(),
            1..=2 => self.rng.gen_range(-1000i64..1000).to_string(),
            _ => self.rng.gen_range(-10i64..20).to_string(),
        }
    }

    fn expr(&mut self, ty: Ty, depth: u32, scope: &Scope, in_loop: bool) -> String {
        if depth == 0 || self.chance(0.25) {
            return self.leaf(ty, scope);
        }
        match ty {
            Ty::Int => self.int_expr(depth, scope, in_loop),
            Ty::List => self.list_expr(depth, scope, in_loop),
            Ty::Bool => self.bool_expr(depth, scope, in_loop),
            Ty::Str => self.str_expr(depth, scope, in_loop),
        }
    }

    fn leaf(&mut self, ty: Ty, scope: &Scope) -> String {
        if self.chance(0.6) {
            if let Some(v) = self.var(scope, ty) {
                return v;
            }
        }
        match ty {
            Ty::Int => self.literal_int(),
            Ty::Bool => if self.chance(0.5) { "#t" } else { "#f" }.into(),
            Ty::List => {
                let n = self.rng.gen_range(0..5);
                let items: Vec<String> = (0..n).map(|_| self.rng.gen_range(-9i64..30).to_string()).collect();
                format!("'({})", items.join(" "))
            }
            Ty::Str => {
                let n = self.rng.gen_range(0..6);
                let text: String = (0..n)
                    .map(|_| *[b'a', b'b', b'z', b' ', b'"', b'\\', b'Q'].choose(&mut self.rng).unwrap() as char)
                    .map(|c| match c {
                        '"' => "\\\"".to_string(),
                        '\\' => "\\\\".to_string(),
                        c => c.to_string(),
                    })
                    .collect();
                format!("\"{text}\"")
            }
        }
    }

    fn lambda1(&mut self, result: Ty, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let x = self.name("x");
        let mut inner = scope.clone();
        inner.push((x.clone(), Ty::Int));
        let body = self.expr(result, depth, &inner, in_loop);
        format!("(lambda ({x}) {body})")
    }

    fn int_expr(&mut self, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let d = depth - 1;
        match self.rng.gen_range(0..17) {
            0 | 1 => {
                let op = *["+", "-", "*"].choose(&mut self.rng).unwrap();
                format!("({op} {} {})", self.expr(Ty::Int, d, scope, in_loop), self.expr(Ty::Int, d, scope, in_loop))
            }
            2 => {
                let op = *["quotient", "remainder", "modulo"].choose(&mut self.rng).unwrap();
                let mut divisor = self.rng.gen_range(-7i64..8);
                if divisor == 0 {
                    divisor = 3;
                }
                format!("({op} {} {divisor})", self.expr(Ty::Int, d, scope, in_loop))
            }
            3 => format!(
                "(if {} {} {})",
                self.expr(Ty::Bool, d, scope, in_loop),
                self.expr(Ty::Int, d, scope, in_loop),
                self.expr(Ty::Int, d, scope, in_loop)
            ),
            4 => format!("(length {})", self.expr(Ty::List, d, scope, in_loop)),
            5 => format!("(fold + 0 {})", self.expr(Ty::List, d, scope, in_loop)),
            6 => format!("(string-length {})", self.expr(Ty::Str, d, scope, in_loop)),
            7 => {
                let x = self.name("v");
                let ty = *TYPES.choose(&mut self.rng).unwrap();
                let value = self.expr(ty, d, scope, in_loop);
                let mut inner = scope.clone();
                inner.push((x.clone(), ty));
                let kw = if self.chance(0.5) { "let" } else { "let*" };
                format!("({kw} (({x} {value})) {})", self.expr(Ty::Int, d, &inner, in_loop))
            }
            8 => {
                let f = self.lambda1(Ty::Int, d, scope, in_loop);
                format!("({f} {})", self.expr(Ty::Int, d, scope, in_loop))
            }
            9 | 10 => {
                let candidates: Vec<Fun> = self.funs.iter().filter(|f| !(in_loop && f.looping)).cloned().collect();
                match candidates.choose(&mut self.rng) {
                    Some(f) => {
                        let args: Vec<String> = if f.looping {
                            vec![
                                format!("(modulo {} 12)", self.expr(Ty::Int, d, scope, in_loop)),
                                self.expr(Ty::Int, d, scope, in_loop),
                            ]
                        } else {
                            (0..f.arity).map(|_| self.expr(Ty::Int, d, scope, in_loop)).collect()
                        };
                        format!("({} {})", f.name, args.join(" "))
                    }
                    None => self.literal_int(),
                }
            }
            11 => match self.closures.choose(&mut self.rng).cloned() {
                Some(c) => format!("({c} {})", self.expr(Ty::Int, d, scope, in_loop)),
                None => self.literal_int(),
            },
            12 => match self.vectors.choose(&mut self.rng).cloned() {
                Some((v, len)) => format!("(vector-ref {v} (modulo {} {len}))", self.expr(Ty::Int, d, scope, in_loop)),
                None => self.literal_int(),
            },
            13 => {
                // Safe head: fall back when the list is empty.
                let l = self.expr(Ty::List, d, scope, in_loop);
                let x = self.name("l");
                format!("(let (({x} {l})) (if (pair? {x}) (car {x}) {}))", self.literal_int())
            }
            14 => format!("(car {})", self.expr(Ty::List, d, scope, in_loop)),
            15 => {
                // Sequencing with a side effect.
                let effect = self.effect(d, scope, in_loop);
                format!("(begin {effect} {})", self.expr(Ty::Int, d, scope, in_loop))
            }
            _ => format!("(string-ref {} 0)", self.expr(Ty::Str, d, scope, in_loop)),
        }
    }

    fn list_expr(&mut self, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let d = depth - 1;
        match self.rng.gen_range(0..10) {
            0 => {
                let n = self.rng.gen_range(0..4);
                let items: Vec<String> = (0..n).map(|_| self.expr(Ty::Int, d, scope, in_loop)).collect();
                format!("(list {})", items.join(" "))
            }
            1 => format!("(cons {} {})", self.expr(Ty::Int, d, scope, in_loop), self.expr(Ty::List, d, scope, in_loop)),
            2 => {
                let f = self.lambda1(Ty::Int, d, scope, in_loop);
                format!("(map {f} {})", self.expr(Ty::List, d, scope, in_loop))
            }
            3 => {
                let f = self.lambda1(Ty::Bool, d, scope, in_loop);
                format!("(filter {f} {})", self.expr(Ty::List, d, scope, in_loop))
            }
            4 => format!("(reverse {})", self.expr(Ty::List, d, scope, in_loop)),
            5 => format!("(append {} {})", self.expr(Ty::List, d, scope, in_loop), self.expr(Ty::List, d, scope, in_loop)),
            6 => format!("(iota (modulo {} 8))", self.expr(Ty::Int, d, scope, in_loop)),
            7 => match self.vectors.choose(&mut self.rng).cloned() {
                Some((v, _)) => format!("(vector->list {v})"),
                None => "'()".into(),
            },
            8 => format!("(string->list {})", self.expr(Ty::Str, d, scope, in_loop)),
            _ => format!(
                "(if {} {} {})",
                self.expr(Ty::Bool, d, scope, in_loop),
                self.expr(Ty::List, d, scope, in_loop),
                self.expr(Ty::List, d, scope, in_loop)
            ),
        }
    }

    fn bool_expr(&mut self, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let d = depth - 1;
        match self.rng.gen_range(0..7) {
            0 | 1 => {
                let op = *["<", ">", "="].choose(&mut self.rng).unwrap();
                format!("({op} {} {})", self.expr(Ty::Int, d, scope, in_loop), self.expr(Ty::Int, d, scope, in_loop))
            }
            2 => format!("(not {})", self.expr(Ty::Bool, d, scope, in_loop)),
            3 => format!("(null? {})", self.expr(Ty::List, d, scope, in_loop)),
            4 => {
                let op = *["and", "or"].choose(&mut self.rng).unwrap();
                format!("({op} {} {})", self.expr(Ty::Bool, d, scope, in_loop), self.expr(Ty::Bool, d, scope, in_loop))
            }
            5 => format!("(pair? {})", self.expr(Ty::List, d, scope, in_loop)),
            _ => format!("(= 0 (remainder {} 2))", self.expr(Ty::Int, d, scope, in_loop)),
        }
    }

    fn str_expr(&mut self, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let d = depth - 1;
        match self.rng.gen_range(0..3) {
            0 => format!(
                "(list->string (map (lambda (c) (+ 97 (modulo c 26))) {}))",
                self.expr(Ty::List, d, scope, in_loop)
            ),
            1 => format!(
                "(list->string (append (string->list {}) (string->list {})))",
                self.expr(Ty::Str, d, scope, in_loop),
                self.expr(Ty::Str, d, scope, in_loop)
            ),
            _ => format!(
                "(if {} {} {})",
                self.expr(Ty::Bool, d, scope, in_loop),
                self.expr(Ty::Str, d, scope, in_loop),
                self.expr(Ty::Str, d, scope, in_loop)
            ),
        }
    }

    /// An expression evaluated for its side effect.
    fn effect(&mut self, depth: u32, scope: &Scope, in_loop: bool) -> String {
        let ints: Vec<String> =
            self.globals.iter().filter(|(_, t)| *t == Ty::Int).map(|(n, _)| n.clone()).collect();
        match self.rng.gen_range(0..5) {
            0 | 4 if !ints.is_empty() => {
                let g = ints.choose(&mut self.rng).unwrap().clone();
                format!("(set! {g} {})", self.expr(Ty::Int, depth, scope, in_loop))
            }
            1 if !self.vectors.is_empty() => {
                let (v, len) = self.vectors.choose(&mut self.rng).unwrap().clone();
                format!(
                    "(vector-set! {v} (modulo {} {len}) {})",
                    self.expr(Ty::Int, depth, scope, in_loop),
                    self.expr(Ty::Int, depth, scope, in_loop)
                )
            }
            2 if !self.closures.is_empty() => {
                let c = self.closures.choose(&mut self.rng).unwrap().clone();
                format!("({c} {})", self.expr(Ty::Int, depth, scope, in_loop))
            }
            _ => {
                let ty = *TYPES.choose(&mut self.rng).unwrap();
                format!("(print {})", self.expr(ty, depth, scope, in_loop))
            }
        }
    }

    fn toplevel(&mut self) -> String {
        let empty = Scope::new();
        match self.rng.gen_range(0..10) {
            0 | 1 => {
                let ty = *TYPES.choose(&mut self.rng).unwrap();
                let g = self.name("g");
                let value = self.expr(ty, 3, &empty, false);
                self.globals.push((g.clone(), ty));
                format!("(define {g} {value})")
            }
            2 => {
                let f = self.name("f");
                let arity = self.rng.gen_range(0..3);
                let params: Vec<String> = (0..arity).map(|_| self.name("p")).collect();
                let scope: Scope = params.iter().map(|p| (p.clone(), Ty::Int)).collect();
                // Helpers never loop, so loop bodies may call them freely.
                let body = self.expr(Ty::Int, 3, &scope, true);
                self.funs.push(Fun { name: f.clone(), arity, looping: false });
                format!("(define ({f} {}) {body})", params.join(" "))
            }
            3 => {
                let f = self.name("r");
                let (n, acc) = (self.name("n"), self.name("acc"));
                let scope: Scope = vec![(n.clone(), Ty::Int), (acc.clone(), Ty::Int)];
                let step = self.expr(Ty::Int, 3, &scope, true);
                let text = format!("(define ({f} {n} {acc}) (if (< {n} 1) {acc} ({f} (- {n} 1) {step})))");
                self.funs.push(Fun { name: f, arity: 2, looping: true });
                text
            }
            4 => {
                let c = self.name("c");
                let start = self.literal_int();
                let (n, d) = (self.name("n"), self.name("d"));
                self.closures.push(c.clone());
                format!("(define {c} (let (({n} {start})) (lambda ({d}) (set! {n} (+ {n} {d})) {n})))")
            }
            5 => {
                let v = self.name("vec");
                let len = self.rng.gen_range(1..6);
                let fill = self.literal_int();
                self.vectors.push((v.clone(), len));
                format!("(define {v} (make-vector {len} {fill}))")
            }
            6 | 7 => self.effect(3, &empty, false),
            _ => {
                let ty = *TYPES.choose(&mut self.rng).unwrap();
                format!("(print {})", self.expr(ty, 4, &empty, false))
            }
        }
    }
}

/// The body of a random program, to be run after the corpus prelude.
pub fn program_body(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        fresh: 0,
        globals: Vec::new(),
        funs: Vec::new(),
        closures: Vec::new(),
        vectors: Vec::new(),
    };
    let n = g.rng.gen_range(4..14);
    let mut forms: Vec<String> = (0..n).map(|_| g.toplevel()).collect();
    let ty = *TYPES.choose(&mut g.rng).unwrap();
    forms.push(g.expr(ty, 4, &Scope::new(), false));
    forms.join("\n") + "\n"
}

/// A complete random program: prelude plus body.
pub fn program(seed: u64) -> String {
    format!("{PRELUDE}\n{}", program_body(seed))
}
