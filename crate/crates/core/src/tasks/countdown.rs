//! Reach a target from the numbers 1..=10, each used exactly once, with
//! `+ - * /` and parentheses. Division is exact; no floating point anywhere.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::{answer_region, Problem, TaskKind, VerifierReport};

const MAX_DEPTH: usize = 200;
const MAX_TOKENS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountdownPayload {
    pub target: i64,
    #[serde(default = "default_numbers")]
    pub numbers: Vec<i64>,
}

fn default_numbers() -> Vec<i64> {
    (1..=10).collect()
}

pub fn prompt(numbers: &[i64], target: i64) -> String {
    let list = numbers.iter().map(i64::to_string).collect::<Vec<_>>().join(", ");
    format!(
        "Using the numbers {list}, reach the target number {target}. Each number must be used \
         exactly once. You may use addition (+), subtraction (-), multiplication (*), division (/) \
         and parentheses; division must be exact and no other operations or numbers are allowed. \
         Wrap your final answer between <answer> and </answer> tags. The answer must be a single \
         arithmetic expression that uses every number exactly once, with no '=' sign and no \
         other text."
    )
}

pub fn problem(id: impl Into<String>, numbers: Vec<i64>, target: i64) -> Problem {
    Problem {
        id: id.into(),
        prompt: prompt(&numbers, target),
        payload: serde_json::to_value(CountdownPayload { target, numbers }).unwrap(),
        task: TaskKind::Countdown,
    }
}

/// The 100 problems: targets 1..=100 from the numbers 1..=10.
pub fn generate() -> Vec<Problem> {
    (1..=100)
        .map(|n| problem(format!("countdown-{n:03}"), default_numbers(), n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Num(i64),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(i64),
    Bin(char, Box<Expr>, Box<Expr>),
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => {}
            '0'..='9' => {
                let start = i;
                while i + 1 < chars.len() && chars[i + 1].is_ascii_digit() {
                    i += 1;
                }
                let digits: String = chars[start..=i].iter().collect();
                let n = digits
                    .parse::<i64>()
                    .map_err(|_| format!("number too large: {digits}"))?;
                out.push(Token::Num(n));
            }
            '+' => out.push(Token::Op('+')),
            '-' | '−' | '–' => out.push(Token::Op('-')),
            '*' | '×' | '·' => out.push(Token::Op('*')),
            '/' | '÷' => out.push(Token::Op('/')),
            '(' => out.push(Token::LParen),
            ')' => out.push(Token::RParen),
            other => return Err(format!("unexpected character '{other}'")),
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, String> {
        let mut lhs = self.term(depth)?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term(depth)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<Expr, String> {
        let mut lhs = self.atom(depth)?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.atom(depth)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self, depth: usize) -> Result<Expr, String> {
        if depth > MAX_DEPTH {
            return Err("expression nested too deeply".into());
        }
        match self.peek().cloned() {
            Some(Token::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr(depth + 1)?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err("missing closing parenthesis".into()),
                }
            }
            Some(Token::Op(op)) => Err(format!("unexpected operator '{op}'")),
            Some(Token::RParen) => Err("unexpected ')'".into()),
            None => Err("unexpected end of expression".into()),
        }
    }
}

/// Parses an infix expression over non-negative integer literals. Unary
/// operators are rejected.
pub fn parse_expression(src: &str) -> Result<Expr, String> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err("empty expression".into());
    }
    if tokens.len() > MAX_TOKENS {
        return Err("expression too long".into());
    }
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr(0)?;
    if p.pos != p.tokens.len() {
        return Err(format!("unexpected trailing input at token {}", p.pos + 1));
    }
    Ok(e)
}

impl Expr {
    pub fn literals(&self, out: &mut Vec<i64>) {
        match self {
            Expr::Num(n) => out.push(*n),
            Expr::Bin(_, a, b) => {
                a.literals(out);
                b.literals(out);
            }
        }
    }

    /// Exact evaluation; `None` on division by zero.
    pub fn eval(&self) -> Option<BigRational> {
        match self {
            Expr::Num(n) => Some(BigRational::from_integer(BigInt::from(*n))),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval()?, b.eval()?);
                match op {
                    '+' => Some(x + y),
                    '-' => Some(x - y),
                    '*' => Some(x * y),
                    '/' => (!y.is_zero()).then(|| x / y),
                    _ => None,
                }
            }
        }
    }
}

pub fn check(expression: &str, numbers: &[i64], target: i64) -> VerifierReport {
    let expr = match parse_expression(expression.trim()) {
        Ok(e) => e,
        Err(e) => return VerifierReport::fail(format!("parse error: {e}")),
    };
    let mut used = Vec::new();
    expr.literals(&mut used);
    used.sort_unstable();
    let mut want = numbers.to_vec();
    want.sort_unstable();
    if used != want {
        return VerifierReport::fail(format!("numbers used {used:?} differ from required {want:?}"));
    }
    match expr.eval() {
        None => VerifierReport::fail("division by zero"),
        Some(v) if v == BigRational::from_integer(BigInt::from(target)) => {
            VerifierReport::pass(format!("reaches {target}"))
        }
        Some(v) => VerifierReport::fail(format!("evaluates to {v}, not {target}")),
    }
}

pub fn verify(problem: &Problem, answer: &str) -> VerifierReport {
    let payload: CountdownPayload = match serde_json::from_value(problem.payload.clone()) {
        Ok(p) => p,
        Err(e) => return VerifierReport::fail(format!("bad countdown payload: {e}")),
    };
    check(answer_region(answer), &payload.numbers, payload.target)
}
