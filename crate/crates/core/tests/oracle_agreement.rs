//! The reference semantics against the executor and the model checker on
//! generated programs.

mod common;

use std::collections::BTreeSet;

use ebf_core::bmc::{self, BmcConfig};
use ebf_core::exec::{self, BugKind, EndedBy, ExecConfig, PropertySet};
use ebf_core::fuzz::SeedInput;
use ebf_core::goto::{self, UnwindBound};
use ebf_core::lang::{self, SourceProgram};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::{self, Explorer, Props};

fn kinds_of(src: &str, props: Props, domain: &[i32]) -> BTreeSet<BugKind> {
    let ast = lang::parse_str(src).unwrap();
    Explorer::new(&ast, props, domain).explore().kinds
}

#[test]
fn oracle_sees_unordered_increments_race() {
    let src = "int c;\nvoid w() { c = c + 1; }\nvoid main() { int a; int b; a = thread_create(w); b = thread_create(w); thread_join(a); thread_join(b); }\n";
    assert_eq!(kinds_of(src, Props::all(), &[0]), BTreeSet::from([BugKind::DataRace]));
}

#[test]
fn oracle_accepts_locked_increments() {
    let src = "int c;\nmutex m;\nvoid w() { lock(m); c = c + 1; unlock(m); }\nvoid main() { int a; int b; a = thread_create(w); b = thread_create(w); thread_join(a); thread_join(b); assert(c == 2); }\n";
    assert!(kinds_of(src, Props::all(), &[0]).is_empty());
}

#[test]
fn oracle_orders_through_join_and_create() {
    let src = "int c;\nvoid w() { c = 1; }\nvoid main() { int a; c = 5; a = thread_create(w); thread_join(a); c = c + 1; assert(c == 2); }\n";
    assert!(kinds_of(src, Props::all(), &[0]).is_empty());
}

#[test]
fn oracle_finds_lock_order_deadlock() {
    let src = "mutex x;\nmutex y;\nvoid f() { lock(x); lock(y); unlock(y); unlock(x); }\nvoid g() { lock(y); lock(x); unlock(x); unlock(y); }\nvoid main() { int a; int b; a = thread_create(f); b = thread_create(g); thread_join(a); thread_join(b); }\n";
    assert_eq!(kinds_of(src, Props::all(), &[0]), BTreeSet::from([BugKind::Deadlock]));
}

#[test]
fn oracle_enumerates_nondet_domain() {
    let src = "void main() { int v; v = nondet(); if (v == 300) { reach_error(); } }\n";
    assert_eq!(kinds_of(src, Props::all(), &[0, 300]), BTreeSet::from([BugKind::ReachError]));
    assert!(kinds_of(src, Props::all(), &[0, 7]).is_empty());
}

#[test]
fn oracle_respects_disabled_properties() {
    let src = "int g;\nvoid main() { int p; g = 2147483647; g = g + 1; p = alloc(1); }\n";
    let none = Props { unreach_call: false, memsafety: false, overflow: false, races: false };
    assert_eq!(kinds_of(src, Props::all(), &[0]), BTreeSet::from([BugKind::SignedOverflow]));
    assert_eq!(kinds_of(src, Props { overflow: false, ..Props::all() }, &[0]), BTreeSet::from([BugKind::MemoryLeak]));
    assert!(kinds_of(src, none, &[0]).is_empty());
}

/// Random MCL text from a seed.
struct Gen {
    rng: ChaCha8Rng,
    out: String,
    loops: usize,
    nondets: usize,
}

const LITERALS: [&str; 9] = ["0", "1", "2", "3", "-1", "300", "2147483647", "(-2147483647 - 1)", "7"];

impl Gen {
    fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), out: String::new(), loops: 0, nondets: 0 }
    }

    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs[self.rng.random_range(0..xs.len())]
    }

    fn expr(&mut self, vars: &[&str], depth: u32) -> String {
        let leaf = depth == 0 || self.rng.random_bool(0.3);
        if leaf {
            return match self.rng.random_range(0..3) {
                0 => self.pick(&LITERALS).to_string(),
                _ => self.pick(vars).to_string(),
            };
        }
        match self.rng.random_range(0..8) {
            0 => format!("a[{}]", self.expr(vars, depth - 1)),
            1 if vars.contains(&"p") => format!("p[{}]", self.expr(vars, depth - 1)),
            2 => format!("{}({})", self.pick(&["-", "!"]), self.expr(vars, depth - 1)),
            _ => {
                let op = self.pick(&["+", "-", "*", "/", "%", "==", "!=", "<", "<=", ">", ">=", "&&", "||"]);
                format!("({} {op} {})", self.expr(vars, depth - 1), self.expr(vars, depth - 1))
            }
        }
    }

    fn line(&mut self, indent: usize, s: &str) {
        self.out.push_str(&"    ".repeat(indent));
        self.out.push_str(s);
        self.out.push('\n');
    }

    /// Statements for a single-threaded `main` with locals x, y, p.
    fn seq_block(&mut self, indent: usize, n: usize, depth: u32) {
        let vars = ["g0", "g1", "x", "y", "p"];
        for _ in 0..n {
            let e = self.expr(&vars, 2);
            match self.rng.random_range(0..16) {
                0..=3 => {
                    let t = self.pick(&["g0", "g1", "x", "y"]);
                    self.line(indent, &format!("{t} = {e};"));
                }
                4 => {
                    let i = self.expr(&vars, 1);
                    self.line(indent, &format!("a[{i}] = {e};"));
                }
                5 => {
                    let i = self.expr(&vars, 1);
                    self.line(indent, &format!("p[{i}] = {e};"));
                }
                6 if self.nondets < 4 => {
                    self.nondets += 1;
                    let t = self.pick(&["g0", "x", "y"]);
                    self.line(indent, &format!("{t} = nondet();"));
                }
                7 => self.line(indent, &format!("assert({e});")),
                8 if self.rng.random_bool(0.3) => self.line(indent, &format!("assume({e});")),
                9 => self.line(indent, "free(p);"),
                10 => {
                    let size = self.pick(&["0", "1", "2", "3", "-1", "x"]);
                    self.line(indent, &format!("p = alloc({size});"));
                }
                11 if self.rng.random_bool(0.2) => self.line(indent, "reach_error();"),
                12 | 13 if depth > 0 => {
                    self.line(indent, &format!("if ({e}) {{"));
                    self.seq_block(indent + 1, 2, depth - 1);
                    if self.rng.random_bool(0.5) {
                        self.line(indent, "} else {");
                        self.seq_block(indent + 1, 2, depth - 1);
                    }
                    self.line(indent, "}");
                }
                14 if depth > 0 && self.loops < 2 => {
                    let i = format!("i{}", self.loops);
                    self.loops += 1;
                    let bound = self.rng.random_range(0..4);
                    self.line(indent, &format!("{i} = 0;"));
                    self.line(indent, &format!("while ({i} < {bound}) {{"));
                    self.seq_block(indent + 1, 2, depth - 1);
                    self.line(indent + 1, &format!("{i} = {i} + 1;"));
                    self.line(indent, "}");
                }
                _ => self.line(indent, &format!("y = {e};")),
            }
        }
    }

    fn sequential(seed: u64) -> String {
        let mut g = Gen::new(seed);
        g.out.push_str("int g0;\nint g1;\nint a[3];\n\nvoid main() {\n");
        for v in ["x", "y", "p", "i0", "i1"] {
            g.line(1, &format!("int {v};"));
        }
        if g.rng.random_bool(0.7) {
            g.line(1, "p = alloc(2);");
        }
        let n = g.rng.random_range(1..8);
        g.seq_block(1, n, 2);
        g.out.push_str("}\n");
        g.out
    }

    fn thread_body(&mut self, indent: usize, n: usize) {
        let vars = ["g0", "g1", "t"];
        for _ in 0..n {
            let e = self.expr(&vars, 1);
            match self.rng.random_range(0..10) {
                0..=2 => {
                    let t = self.pick(&["g0", "g1", "t"]);
                    self.line(indent, &format!("{t} = {e};"));
                }
                3 => {
                    let i = self.pick(&["0", "1", "t", "3"]);
                    self.line(indent, &format!("a[{i}] = {e};"));
                }
                4 | 5 => {
                    let op = if self.rng.random_bool(0.5) { "lock" } else { "unlock" };
                    let m = self.pick(&["m", "n"]);
                    self.line(indent, &format!("{op}({m});"));
                }
                6 => self.line(indent, &format!("assert({e});")),
                7 if self.nondets < 2 => {
                    self.nondets += 1;
                    let t = self.pick(&["g0", "t"]);
                    self.line(indent, &format!("{t} = nondet();"));
                }
                8 => {
                    self.line(indent, &format!("if ({e}) {{"));
                    self.thread_body(indent + 1, 1);
                    self.line(indent, "}");
                }
                _ => self.line(indent, &format!("t = {e};")),
            }
        }
    }

    /// Two workers and a main that starts them, works, and joins (usually).
    fn concurrent(seed: u64) -> String {
        let mut g = Gen::new(seed);
        g.out.push_str("int g0;\nint g1;\nint a[3];\nmutex m;\nmutex n;\n\n");
        for f in ["f", "h"] {
            g.out.push_str(&format!("void {f}(int t) {{\n"));
            let k = g.rng.random_range(1..4);
            g.thread_body(1, k);
            g.out.push_str("}\n\n");
        }
        g.out.push_str("void main() {\n    int t;\n    int u;\n    int w;\n");
        g.line(1, "u = thread_create(f, 1);");
        if g.rng.random_bool(0.8) {
            g.line(1, "w = thread_create(h, 2);");
        }
        let k = g.rng.random_range(0..3);
        g.thread_body(1, k);
        for v in ["u", "w"] {
            if g.rng.random_bool(0.9) {
                g.line(1, &format!("thread_join({v});"));
            }
        }
        g.out.push_str("}\n");
        g.out
    }
}

fn random_props(bits: u8) -> (PropertySet, Props) {
    let p = PropertySet {
        unreach_call: bits & 1 != 0,
        valid_memsafety: bits & 2 != 0,
        no_overflow: bits & 4 != 0,
        data_races: bits & 8 != 0,
    };
    (p, common::oracle_props(&p))
}

#[test]
fn generated_programs_are_well_formed() {
    for s in 0..200 {
        let src = Gen::sequential(s);
        lang::parse_str(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
        let src = Gen::concurrent(s);
        lang::parse_str(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn executor_matches_reference_on_sequential_programs(
        seed in any::<u64>(),
        bits in 0u8..16,
        values in proptest::collection::vec(prop_oneof![Just(0), Just(1), Just(-1), Just(300), any::<i32>()], 0..8),
    ) {
        let src = Gen::sequential(seed);
        let ast = lang::parse_str(&src).unwrap();
        let (props, oprops) = random_props(bits);
        let program = goto::lower(&ast, "t.mcl").unwrap();
        let mut padded = values.clone();
        padded.resize(16, 0);
        let run = exec::run(&program, &SeedInput::from_parts(&padded, &[]), &ExecConfig { props, ..Default::default() });
        let (globals, bug) = oracle::run_sequential(&ast, oprops, &padded);
        prop_assert_ne!(run.ended_by, EndedBy::StepBudget);
        prop_assert_eq!(run.bug().map(|b| b.kind), bug, "{}", src);
        prop_assert_eq!(&run.globals, &globals, "{}", src);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn model_checker_matches_reference_on_concurrent_programs(seed in any::<u64>(), bits in 0u8..16) {
        let src = Gen::concurrent(seed);
        let ast = lang::parse_str(&src).unwrap();
        let (props, oprops) = random_props(bits);
        let domain = vec![0, 1, 300];
        let truth = Explorer::new(&ast, oprops, &domain).explore();
        let program = goto::lower(&ast, "t.mcl").unwrap();
        let cfg = BmcConfig { domain, context_bound: 16, unwind: UnwindBound { k: 4 }, ..BmcConfig::default() };
        let r = bmc::check(&goto::unwind(&program, cfg.unwind), &props, &cfg);
        match r.verdict {
            bmc::Verdict::Violation(cx) => prop_assert!(
                truth.kinds.contains(&cx.violation.kind),
                "bmc {:?}, reference {:?}\n{}", cx.violation.kind, truth.kinds, src
            ),
            bmc::Verdict::NoViolationWithinBound => prop_assert!(
                truth.kinds.is_empty(), "reference {:?}\n{}", truth.kinds, src
            ),
            bmc::Verdict::ResourceExhausted(why) => prop_assert!(false, "{}", why),
        }
    }
}

#[test]
fn sequential_reference_runs_the_corpus_single_threaded_tasks() {
    let mut checked = 0;
    for task in common::tasks() {
        let ast = lang::parse(&SourceProgram::read(&task.file).unwrap()).unwrap();
        if oracle::shape(&ast).creates > 0 {
            continue;
        }
        let program = goto::lower(&ast, &task.file.file_name().unwrap().to_string_lossy()).unwrap();
        for values in [vec![0; 4], vec![300; 4], vec![2, 2, 2, 2], vec![65324, 1, 1, 1]] {
            let run = exec::run(&program, &SeedInput::from_parts(&values, &[]), &ExecConfig { props: task.properties, ..Default::default() });
            let (globals, bug) = oracle::run_sequential(&ast, common::oracle_props(&task.properties), &values);
            assert_eq!(run.bug().map(|b| b.kind), bug, "{}", task.name);
            assert_eq!(run.globals, globals, "{}", task.name);
        }
        checked += 1;
    }
    assert!(checked >= 5);
}

