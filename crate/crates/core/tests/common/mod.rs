//! Helpers shared by the integration tests: fixture transcripts, budget
//! snapshots, and an exact-fraction Countdown oracle.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use codeloop::budget::{low_turn_warning, render_budget_report, BudgetLimits, BudgetState};
use codeloop::protocol::{
    parse_agent_message, render_feedback, render_nudge_turn, CellResult, INTERRUPTED_MARKER, NO_OUTPUT_TEMPLATE,
};
use codeloop::Role;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub mod scenarios;

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub const TRANSCRIPTS: [&str; 5] = ["collie", "collie_memory", "typos", "zebra", "aime"];

#[derive(Debug, Clone)]
pub struct FixtureTurn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub name: String,
    pub header: String,
    pub turns: Vec<FixtureTurn>,
}

/// Splits a recorded transcript at its 16-dash separators. The chunk before
/// the first separator is the header (score, comment, question).
pub fn load_transcript(name: &str) -> Transcript {
    let text = read_fixture(&format!("traces/{name}.txt"));
    let mut chunks = text.split("\n----------------\n");
    let header = chunks.next().unwrap().to_string();
    let turns = chunks
        .map(|c| {
            let (role, rest) = if let Some(r) = c.strip_prefix("ASSISTANT:\n\n") {
                (Role::Assistant, r)
            } else if let Some(r) = c.strip_prefix("USER:\n\n") {
                (Role::User, r)
            } else {
                panic!("{name}: chunk without a role header: {:?}", &c[..c.len().min(40)]);
            };
            FixtureTurn { role, content: rest.trim_end_matches('\n').to_string() }
        })
        .collect();
    Transcript { name: name.into(), header, turns }
}

/// Numbers in a rendered budget report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub secs_used: u64,
    pub secs_left: u64,
    pub tokens_used: u64,
    pub tokens_left: u64,
    pub steps_done: u32,
    pub steps_left: u32,
}

fn report_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"Remaining budget:\n - (\d+) secs used, (\d+) secs left,\n - (\d+) output tokens used, (\d+) output tokens left,\n - (\d+) thinking steps performed, (\d+) steps left\.",
        )
        .unwrap()
    })
}

pub fn snapshots(text: &str) -> Vec<Snapshot> {
    report_re()
        .captures_iter(text)
        .map(|c| {
            let n = |i: usize| c[i].parse::<u64>().unwrap();
            Snapshot {
                secs_used: n(1),
                secs_left: n(2),
                tokens_used: n(3),
                tokens_left: n(4),
                steps_done: n(5) as u32,
                steps_left: n(6) as u32,
            }
        })
        .collect()
}

/// A ledger state that renders as `snap`: half a second past the floor.
pub fn state_for(snap: &Snapshot) -> BudgetState {
    BudgetState {
        tokens_used: snap.tokens_used,
        time_used: snap.secs_used as f64 + 0.5,
        turns_used: snap.steps_done,
    }
}

pub fn default_limits() -> BudgetLimits {
    BudgetLimits::default()
}

/// `(tag, cell, body)` for every `<output>`/`<error>` block, in order.
pub fn feedback_blocks(text: &str) -> Vec<(String, String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"(?s)<(output|error) cell="([^"]+)">\n(.*?)</(?:output|error)>"#).unwrap()
    });
    re.captures_iter(text).map(|c| (c[1].to_string(), c[2].to_string(), c[3].to_string())).collect()
}

// ---- golden feedback ----

/// Rebuilds the cell results of one feedback turn from the blocks it shows.
pub fn results_from_feedback(cells: &[String], feedback: &str) -> Vec<CellResult> {
    let blocks = feedback_blocks(feedback);
    cells
        .iter()
        .filter_map(|name| {
            let output = blocks.iter().find(|(t, c, _)| t == "output" && c == name).map(|b| b.2.clone());
            let error = blocks.iter().find(|(t, c, _)| t == "error" && c == name).map(|b| b.2.clone());
            let marker_tail = format!("\n{INTERRUPTED_MARKER}\n");
            match (output, error) {
                (Some(o), e) if o.ends_with(&marker_tail) => {
                    let before = &o[..o.len() - marker_tail.len()];
                    Some(CellResult::interrupted(name, before, e.unwrap_or_default(), 1.0))
                }
                (o, Some(e)) => Some(CellResult::error(name, o.unwrap_or_default(), e, 1.0)),
                (Some(o), None) => Some(CellResult::ok(name, o, 1.0)),
                (None, None) => {
                    let sentence = NO_OUTPUT_TEMPLATE.replace("{cell_name}", name);
                    feedback.contains(&sentence).then(|| CellResult::ok(name, "", 1.0))
                }
            }
        })
        .collect()
}

pub struct Checked {
    pub feedback_turns: usize,
    pub nudges: usize,
    pub warnings: usize,
}

/// Re-renders every feedback turn of a recorded transcript and asserts byte
/// equality.
pub fn check_transcript(name: &str) -> Checked {
    let t = load_transcript(name);
    let limits = default_limits();
    let mut out = Checked { feedback_turns: 0, nudges: 0, warnings: 0 };
    for pair in t.turns.windows(2) {
        let (a, u) = (&pair[0], &pair[1]);
        if a.role != Role::Assistant || u.role != Role::User {
            continue;
        }
        let snaps = snapshots(&u.content);
        assert_eq!(snaps.len(), 1, "{name}: one budget report per feedback turn");
        let state = state_for(&snaps[0]);
        let report = render_budget_report(&state, &limits);
        let warnings: Vec<String> = low_turn_warning(&state, &limits).into_iter().collect();
        let parsed = parse_agent_message(&a.content);
        let expected = match parsed.message() {
            None => {
                out.nudges += 1;
                render_nudge_turn(&report, &warnings)
            }
            Some(msg) => {
                let names: Vec<String> = msg.cells.iter().map(|c| c.name.clone()).collect();
                let results = results_from_feedback(&names, &u.content);
                assert_eq!(results.len(), names.len(), "{name}: every cell has feedback");
                render_feedback(&results, &report, &warnings)
            }
        };
        out.warnings += warnings.len();
        out.feedback_turns += 1;
        assert_eq!(expected, u.content, "{name}: feedback turn {} differs", out.feedback_turns);
    }
    out
}

// ---- Countdown oracle: exact fractions on i128 with manual reduction ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn int(n: i64) -> Self {
        Self { num: n as i128, den: 1 }
    }

    fn norm(num: i128, den: i128) -> Self {
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Self { num: s * num / g, den: s * den / g }
    }

    pub fn apply(self, op: char, o: Self) -> Option<Self> {
        Some(match op {
            '+' => Self::norm(self.num * o.den + o.num * self.den, self.den * o.den),
            '-' => Self::norm(self.num * o.den - o.num * self.den, self.den * o.den),
            '*' => Self::norm(self.num * o.num, self.den * o.den),
            '/' => {
                if o.num == 0 {
                    return None;
                }
                Self::norm(self.num * o.den, self.den * o.num)
            }
            _ => unreachable!(),
        })
    }

    pub fn is_int(self, n: i64) -> bool {
        self.den == 1 && self.num == n as i128
    }
}

/// Expression tree the oracle builds, renders, and evaluates itself.
#[derive(Debug, Clone)]
pub enum Tree {
    Leaf(i64),
    Node(char, Box<Tree>, Box<Tree>),
}

impl Tree {
    pub fn eval(&self) -> Option<Frac> {
        match self {
            Tree::Leaf(n) => Some(Frac::int(*n)),
            Tree::Node(op, a, b) => a.eval()?.apply(*op, b.eval()?),
        }
    }

    pub fn leaves(&self, out: &mut Vec<i64>) {
        match self {
            Tree::Leaf(n) => out.push(*n),
            Tree::Node(_, a, b) => {
                a.leaves(out);
                b.leaves(out);
            }
        }
    }

    /// Fully parenthesized.
    pub fn render(&self) -> String {
        match self {
            Tree::Leaf(n) => n.to_string(),
            Tree::Node(op, a, b) => format!("({} {op} {})", a.render(), b.render()),
        }
    }

    /// Oracle judgement: uses exactly `numbers` and equals `target`.
    pub fn solves(&self, numbers: &[i64], target: i64) -> bool {
        let mut used = Vec::new();
        self.leaves(&mut used);
        used.sort_unstable();
        let mut want = numbers.to_vec();
        want.sort_unstable();
        used == want && self.eval().is_some_and(|v| v.is_int(target))
    }
}

pub const OPS: [char; 4] = ['+', '-', '*', '/'];

/// Every binary tree over each permutation of `numbers` with every operator
/// assignment.
pub fn all_trees(numbers: &[i64]) -> Vec<Tree> {
    fn shapes(leaves: &[i64]) -> Vec<Tree> {
        if leaves.len() == 1 {
            return vec![Tree::Leaf(leaves[0])];
        }
        let mut out = Vec::new();
        for split in 1..leaves.len() {
            let (l, r) = leaves.split_at(split);
            for a in shapes(l) {
                for b in shapes(r) {
                    for op in OPS {
                        out.push(Tree::Node(op, Box::new(a.clone()), Box::new(b.clone())));
                    }
                }
            }
        }
        out
    }
    fn perms(items: &[i64]) -> Vec<Vec<i64>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in perms(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    perms(numbers).iter().flat_map(|p| shapes(p)).collect()
}

/// The reduced Countdown family's numbers.
pub const SMALL: [i64; 4] = [1, 2, 3, 4];

pub fn random_tree(rng: &mut ChaCha8Rng, leaves: &[i64]) -> Tree {
    if leaves.len() == 1 {
        return Tree::Leaf(leaves[0]);
    }
    let split = rng.gen_range(1..leaves.len());
    let op = OPS[rng.gen_range(0..4)];
    Tree::Node(op, Box::new(random_tree(rng, &leaves[..split])), Box::new(random_tree(rng, &leaves[split..])))
}

/// `count` random expressions with targets in 1..=30 that the oracle says do
/// not solve the reduced family. Some use exactly {1,2,3,4}; most do not.
pub fn random_non_solutions(seed: u64, count: usize) -> Vec<(Tree, i64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.gen_range(1..=6);
        let mut leaves: Vec<i64> = (0..len).map(|_| rng.gen_range(0..=6)).collect();
        if rng.gen_bool(0.3) {
            leaves = SMALL.to_vec();
            leaves.shuffle(&mut rng);
        }
        let tree = random_tree(&mut rng, &leaves);
        let target = rng.gen_range(1..=30);
        if !tree.solves(&SMALL, target) {
            out.push((tree, target));
        }
    }
    out
}

/// Minimal recursive-descent evaluator with its own grammar, used to judge
/// the frozen solutions file independently of the library parser.
pub fn oracle_eval(src: &str) -> Option<(Frac, Vec<i64>)> {
    struct P<'a> {
        s: &'a [u8],
        i: usize,
        lits: Vec<i64>,
    }
    impl P<'_> {
        fn ws(&mut self) {
            while self.i < self.s.len() && self.s[self.i] == b' ' {
                self.i += 1;
            }
        }
        fn expr(&mut self) -> Option<Frac> {
            let mut v = self.term()?;
            loop {
                self.ws();
                match self.s.get(self.i) {
                    Some(&c) if c == b'+' || c == b'-' => {
                        self.i += 1;
                        let r = self.term()?;
                        v = v.apply(c as char, r)?;
                    }
                    _ => return Some(v),
                }
            }
        }
        fn term(&mut self) -> Option<Frac> {
            let mut v = self.atom()?;
            loop {
                self.ws();
                match self.s.get(self.i) {
                    Some(&c) if c == b'*' || c == b'/' => {
                        self.i += 1;
                        let r = self.atom()?;
                        v = v.apply(c as char, r)?;
                    }
                    _ => return Some(v),
                }
            }
        }
        fn atom(&mut self) -> Option<Frac> {
            self.ws();
            if self.s.get(self.i) == Some(&b'(') {
                self.i += 1;
                let v = self.expr()?;
                self.ws();
                if self.s.get(self.i) != Some(&b')') {
                    return None;
                }
                self.i += 1;
                return Some(v);
            }
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            let n: i64 = std::str::from_utf8(&self.s[start..self.i]).ok()?.parse().ok()?;
            self.lits.push(n);
            Some(Frac::int(n))
        }
    }
    let mut p = P { s: src.as_bytes(), i: 0, lits: Vec::new() };
    let v = p.expr()?;
    p.ws();
    (p.i == p.s.len()).then_some((v, p.lits))
}

/// `(target, expression)` rows of the frozen solutions for numbers 1..=10.
pub fn frozen_countdown_solutions() -> Vec<(i64, String)> {
    read_fixture("countdown_solutions.tsv")
        .lines()
        .map(|l| {
            let (t, e) = l.split_once('\t').unwrap();
            (t.parse().unwrap(), e.to_string())
        })
        .collect()
}
