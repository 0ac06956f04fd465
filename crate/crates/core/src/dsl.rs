//! Ethoscript: a small language for defining behaviors.
//!
//! ```text
//! define chase as social(closest_distance < 40) and social(orientation == front)
//!     and state(speed > 3.4) smooth 25 min 30
//! ```
//!
//! `then` binds looser than `and`, which binds looser than `not`. Keywords
//! are case-insensitive. Names containing spaces are written as strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::behaviors::{builtin_program, BehaviorProgram, BehaviorRegistry, BuiltinKind, ParamMap, Plan, StateKind};
use crate::events::PostProcessSpec;
use crate::relations::{BodypartSelection, CmpOp, ComparisonSpec, Condition, Orientation, RelationKind};
use crate::scalar::Scalar;

const KEYWORDS: [&str; 11] = ["define", "as", "then", "within", "and", "not", "object", "social", "state", "smooth", "min"];
const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A positioned parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub pos: Pos,
    pub message: String,
    pub expected: Vec<String>,
}

impl Diagnostic {
    /// `file:line:col: message`.
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{self}")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.message)?;
        if !self.expected.is_empty() {
            write!(f, "; expected {}", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("in `{def}`: unresolved reference `{name}`")]
    Unresolved { def: String, name: String },
    #[error("reference cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("in `{def}`: {message}")]
    Type { def: String, message: String },
    #[error("`{0}` is a builtin behavior and cannot be redefined")]
    Reserved(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("{0}")]
    Parse(#[from] Diagnostic),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialCond {
    Compare(CmpOp, f64),
    Orient(Orientation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    And(Vec<Expr>),
    Then(Box<Expr>, Box<Expr>, usize),
    Not(Box<Expr>),
    Object {
        object: String,
        relation: String,
        comparison: Option<(CmpOp, f64)>,
        bodyparts: Option<Vec<String>>,
    },
    Social {
        relation: String,
        cond: SocialCond,
        bodyparts: Option<Vec<String>>,
        other_bodyparts: Option<Vec<String>>,
    },
    State {
        state: String,
        op: CmpOp,
        value: f64,
    },
    Ref(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDef {
    pub name: String,
    pub expr: Expr,
    pub post: PostProcessSpec,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num { raw: String, value: f64 },
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Assign,
    Op(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Num { raw, .. } => format!("number `{raw}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }

    fn keyword(&self) -> Option<String> {
        match self {
            Tok::Ident(s) => {
                let l = s.to_ascii_lowercase();
                KEYWORDS.contains(&l.as_str()).then_some(l)
            }
            _ => None,
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |pos: Pos, message: String| Diagnostic { pos, message, expected: Vec::new() };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(1, &mut i, &mut col);
                }
            }
            '(' | ')' | '[' | ']' | ',' => {
                out.push((
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        _ => Tok::Comma,
                    },
                    pos,
                ));
                advance(1, &mut i, &mut col);
            }
            '<' | '>' | '=' | '!' => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                if let Some((op, n)) = CmpOp::parse_prefix(&two) {
                    out.push((Tok::Op(op), pos));
                    advance(n, &mut i, &mut col);
                } else if c == '=' {
                    out.push((Tok::Assign, pos));
                    advance(1, &mut i, &mut col);
                } else {
                    return Err(err(pos, "unexpected character `!`".into()));
                }
            }
            '"' => {
                let mut s = String::new();
                advance(1, &mut i, &mut col);
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(err(pos, "unterminated string".into())),
                        Some('"') => {
                            advance(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => {
                                s.push(e);
                                advance(2, &mut i, &mut col);
                            }
                            _ => return Err(err(Pos { line, col }, "invalid escape; only \\\" and \\\\ are allowed".into())),
                        },
                        Some(&ch) => {
                            s.push(ch);
                            advance(1, &mut i, &mut col);
                        }
                    }
                }
                out.push((Tok::Str(s), pos));
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let start = i;
                advance(1, &mut i, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut col);
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(char::is_ascii_digit) {
                    advance(1, &mut i, &mut col);
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance(1, &mut i, &mut col);
                    }
                }
                let raw: String = chars[start..i].iter().collect();
                let value: f64 = raw.parse().map_err(|_| err(pos, format!("invalid number `{raw}`")))?;
                if !value.is_finite() {
                    return Err(err(pos, format!("number `{raw}` is out of range")));
                }
                out.push((Tok::Num { raw, value }, pos));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    advance(1, &mut i, &mut col);
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            }
            other => return Err(err(pos, format!("unexpected character `{}`", other.escape_default()))),
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    depth: usize,
    starts: Vec<Pos>,
}

type PResult<T> = Result<T, Diagnostic>;

fn expected(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, exp: &[&str]) -> PResult<T> {
        Err(Diagnostic { pos: self.pos(), message: format!("unexpected {}", self.peek().describe()), expected: expected(exp) })
    }

    fn expect(&mut self, tok: Tok, label: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&[label])
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.peek().is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.fail(&[kw])
        }
    }

    fn name(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Str(s) if !s.is_empty() => {
                self.bump();
                Ok(s)
            }
            Tok::Ident(s) if self.peek().keyword().is_none() => {
                self.bump();
                Ok(s)
            }
            _ => self.fail(&[what]),
        }
    }

    fn count(&mut self, what: &str) -> PResult<usize> {
        if let Tok::Num { raw, .. } = self.peek().clone() {
            if let Ok(n) = raw.parse::<usize>() {
                self.bump();
                return Ok(n);
            }
        }
        self.fail(&[what])
    }

    fn number(&mut self) -> PResult<f64> {
        if let Tok::Num { value, .. } = *self.peek() {
            self.bump();
            Ok(value)
        } else {
            self.fail(&["number"])
        }
    }

    fn cmp_op(&mut self) -> PResult<CmpOp> {
        if let Tok::Op(op) = *self.peek() {
            self.bump();
            Ok(op)
        } else {
            self.fail(&["comparison operator"])
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        if let Tok::Ident(s) = self.peek().clone() {
            self.bump();
            Ok(s)
        } else {
            self.fail(&[what])
        }
    }

    fn program(&mut self) -> PResult<Vec<BehaviorDef>> {
        let mut defs: Vec<BehaviorDef> = Vec::new();
        loop {
            if *self.peek() == Tok::Eof && !defs.is_empty() {
                return Ok(defs);
            }
            self.starts.push(self.pos());
            self.expect_kw("define")?;
            let name_pos = self.pos();
            let name = self.name("behavior name")?;
            if defs.iter().any(|d| d.name == name) {
                return Err(Diagnostic {
                    pos: name_pos,
                    message: format!("`{name}` is defined twice"),
                    expected: Vec::new(),
                });
            }
            self.expect_kw("as")?;
            let expr = self.expr()?;
            let post = self.post()?;
            defs.push(BehaviorDef { name, expr, post });
            if !self.peek().is_kw("define") && *self.peek() != Tok::Eof {
                return self.fail(&["then", "and", "smooth", "min", "define", "end of input"]);
            }
        }
    }

    fn post(&mut self) -> PResult<PostProcessSpec> {
        let mut smooth = None;
        let mut min = None;
        loop {
            let pos = self.pos();
            let slot = if self.peek().is_kw("smooth") {
                &mut smooth
            } else if self.peek().is_kw("min") {
                &mut min
            } else {
                break;
            };
            let (kw, _) = self.bump();
            if slot.is_some() {
                return Err(Diagnostic {
                    pos,
                    message: format!("{} given twice", kw.describe()),
                    expected: Vec::new(),
                });
            }
            *slot = Some(self.count("frame count")?);
        }
        Ok(PostProcessSpec::new(smooth.unwrap_or(0), min.unwrap_or(0)))
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(Diagnostic { pos: self.pos(), message: "expression nested too deeply".into(), expected: Vec::new() });
        }
        Ok(())
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut left = self.conj()?;
        while self.peek().is_kw("then") {
            self.bump();
            let gap = if self.peek().is_kw("within") {
                self.bump();
                self.count("maximum gap in frames")?
            } else {
                0
            };
            let right = self.conj()?;
            left = Expr::Then(Box::new(left), Box::new(right), gap);
        }
        self.depth -= 1;
        Ok(left)
    }

    fn conj(&mut self) -> PResult<Expr> {
        let first = self.unary()?;
        if !self.peek().is_kw("and") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek().is_kw("and") {
            self.bump();
            items.push(self.unary()?);
        }
        Ok(Expr::And(items))
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek().is_kw("not") {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            t if t.is_kw("object") => self.object(),
            t if t.is_kw("social") => self.social(),
            t if t.is_kw("state") => self.state(),
            Tok::Str(s) if !s.is_empty() => {
                self.bump();
                Ok(Expr::Ref(s))
            }
            Tok::Ident(s) if self.peek().keyword().is_none() => {
                self.bump();
                Ok(Expr::Ref(s))
            }
            _ => self.fail(&["not", "`(`", "object", "social", "state", "behavior name"]),
        }
    }

    fn list(&mut self) -> PResult<Vec<String>> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut items = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(s) | Tok::Str(s) if !s.is_empty() => {
                    self.bump();
                    items.push(s);
                }
                _ => return self.fail(&["bodypart name"]),
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBracket => {
                    self.bump();
                    return Ok(items);
                }
                _ => return self.fail(&["`,`", "`]`"]),
            }
        }
    }

    /// `key = [..]` where key is one of `keys`.
    fn part_list(&mut self, keys: &[&str]) -> PResult<(String, Vec<String>)> {
        match self.peek().clone() {
            Tok::Ident(k) if keys.iter().any(|x| x.eq_ignore_ascii_case(&k)) => {
                self.bump();
                self.expect(Tok::Assign, "`=`")?;
                Ok((k.to_ascii_lowercase(), self.list()?))
            }
            _ => self.fail(keys),
        }
    }

    fn object(&mut self) -> PResult<Expr> {
        self.bump();
        self.expect(Tok::LParen, "`(`")?;
        let object = match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                s
            }
            _ => return self.fail(&["object name string"]),
        };
        self.expect(Tok::Comma, "`,`")?;
        let relation = self.ident("relation")?.to_ascii_lowercase();
        let mut comparison = None;
        let mut bodyparts = None;
        while *self.peek() == Tok::Comma {
            self.bump();
            match self.peek() {
                Tok::Op(_) if comparison.is_none() && bodyparts.is_none() => {
                    let op = self.cmp_op()?;
                    comparison = Some((op, self.number()?));
                }
                _ if bodyparts.is_none() => bodyparts = Some(self.part_list(&["bodyparts"])?.1),
                _ => return self.fail(&["`)`"]),
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::Object { object, relation, comparison, bodyparts })
    }

    fn social(&mut self) -> PResult<Expr> {
        self.bump();
        self.expect(Tok::LParen, "`(`")?;
        let relation = self.ident("relation")?.to_ascii_lowercase();
        let op = self.cmp_op()?;
        let cond = match self.peek().clone() {
            Tok::Ident(o) if op == CmpOp::Eq => {
                let orient = match o.to_ascii_lowercase().as_str() {
                    "front" => Orientation::Front,
                    "behind" => Orientation::Behind,
                    _ => return self.fail(&["front", "behind"]),
                };
                self.bump();
                SocialCond::Orient(orient)
            }
            _ => SocialCond::Compare(op, self.number()?),
        };
        let mut bodyparts = None;
        let mut other_bodyparts = None;
        while *self.peek() == Tok::Comma {
            self.bump();
            let mut keys = Vec::new();
            if bodyparts.is_none() {
                keys.push("bodyparts");
            }
            if other_bodyparts.is_none() {
                keys.push("other_bodyparts");
            }
            if keys.is_empty() {
                return self.fail(&["`)`"]);
            }
            let (k, v) = self.part_list(&keys)?;
            if k == "bodyparts" {
                bodyparts = Some(v);
            } else {
                other_bodyparts = Some(v);
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::Social { relation, cond, bodyparts, other_bodyparts })
    }

    fn state(&mut self) -> PResult<Expr> {
        self.bump();
        self.expect(Tok::LParen, "`(`")?;
        let state = match self.peek().clone() {
            Tok::Ident(s) if s.eq_ignore_ascii_case("speed") || s.eq_ignore_ascii_case("acceleration") => {
                self.bump();
                s.to_ascii_lowercase()
            }
            _ => return self.fail(&["speed", "acceleration"]),
        };
        let op = self.cmp_op()?;
        let value = self.number()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::State { state, op, value })
    }
}

/// Parses one or more definitions.
pub fn parse(source: &str) -> Result<Vec<BehaviorDef>, Diagnostic> {
    parse_spanned(source).map(|v| v.into_iter().map(|(_, d)| d).collect())
}

/// Like [`parse`], pairing each definition with the position of its `define`.
pub fn parse_spanned(source: &str) -> Result<Vec<(Pos, BehaviorDef)>, Diagnostic> {
    let toks = lex(source)?;
    let mut p = Parser { toks, at: 0, depth: 0, starts: Vec::new() };
    let defs = p.program()?;
    Ok(p.starts.into_iter().zip(defs).collect())
}

fn is_plain_ident(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn print_name(s: &str) -> String {
    if is_plain_ident(s) && !KEYWORDS.contains(&s.to_ascii_lowercase().as_str()) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn print_list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| if is_plain_ident(s) { s.clone() } else { quote(s) }).collect();
    format!("[{}]", parts.join(", "))
}

fn print_num(v: f64) -> String {
    format!("{v}")
}

/// Binding levels: 0 sequence, 1 conjunction, 2 unary.
fn print_expr(e: &Expr, level: u8) -> String {
    let (own, text) = match e {
        Expr::Then(a, b, gap) => {
            let within = if *gap > 0 { format!("within {gap} ") } else { String::new() };
            (0, format!("{} then {within}{}", print_expr(a, 0), print_expr(b, 1)))
        }
        Expr::And(items) => (1, items.iter().map(|x| print_expr(x, 2)).collect::<Vec<_>>().join(" and ")),
        Expr::Not(x) => (2, format!("not {}", print_expr(x, 2))),
        Expr::Object { object, relation, comparison, bodyparts } => {
            let mut s = format!("object({}, {relation}", quote(object));
            if let Some((op, v)) = comparison {
                s.push_str(&format!(", {} {}", op.symbol(), print_num(*v)));
            }
            if let Some(b) = bodyparts {
                s.push_str(&format!(", bodyparts={}", print_list(b)));
            }
            s.push(')');
            (3, s)
        }
        Expr::Social { relation, cond, bodyparts, other_bodyparts } => {
            let mut s = match cond {
                SocialCond::Compare(op, v) => format!("social({relation} {} {}", op.symbol(), print_num(*v)),
                SocialCond::Orient(o) => format!("social({relation} == {o}"),
            };
            if let Some(b) = bodyparts {
                s.push_str(&format!(", bodyparts={}", print_list(b)));
            }
            if let Some(b) = other_bodyparts {
                s.push_str(&format!(", other_bodyparts={}", print_list(b)));
            }
            s.push(')');
            (3, s)
        }
        Expr::State { state, op, value } => (3, format!("state({state} {} {})", op.symbol(), print_num(*value))),
        Expr::Ref(n) => (3, print_name(n)),
    };
    if own < level {
        format!("({text})")
    } else {
        text
    }
}

pub fn print_def(d: &BehaviorDef) -> String {
    let mut s = format!("define {} as {}", print_name(&d.name), print_expr(&d.expr, 0));
    if d.post.smooth_window > 0 {
        s.push_str(&format!(" smooth {}", d.post.smooth_window));
    }
    if d.post.min_window > 0 {
        s.push_str(&format!(" min {}", d.post.min_window));
    }
    s
}

pub fn print_program(defs: &[BehaviorDef]) -> String {
    defs.iter().map(|d| print_def(d) + "\n").collect()
}

fn selection(parts: &Option<Vec<String>>) -> BodypartSelection {
    match parts {
        Some(v) => BodypartSelection::from_list(v.clone()),
        None => BodypartSelection::All,
    }
}

struct Lowering<'a, T> {
    batch: BTreeMap<&'a str, &'a BehaviorDef>,
    registry: &'a BehaviorRegistry<T>,
    done: BTreeMap<String, Plan<T>>,
    stack: Vec<String>,
}

impl<'a, T: Scalar> Lowering<'a, T> {
    fn def(&mut self, name: &str) -> Result<Plan<T>, CompileError> {
        if let Some(p) = self.done.get(name) {
            return Ok(p.clone());
        }
        if let Some(i) = self.stack.iter().position(|s| s == name) {
            let mut cycle = self.stack[i..].to_vec();
            cycle.push(name.to_string());
            return Err(CompileError::Cycle(cycle));
        }
        let d = self.batch[name];
        self.stack.push(name.to_string());
        let plan = self.expr(&d.expr, name)?.with_post(d.post);
        self.stack.pop();
        self.done.insert(name.to_string(), plan.clone());
        Ok(plan)
    }

    fn expr(&mut self, e: &Expr, def: &str) -> Result<Plan<T>, CompileError> {
        let ty = |message: String| CompileError::Type { def: def.to_string(), message };
        let relation = |r: &str| r.parse::<RelationKind>().map_err(|e| ty(e.to_string()));
        Ok(match e {
            Expr::And(items) => {
                if items.is_empty() {
                    return Err(ty("empty conjunction".into()));
                }
                Plan::And(items.iter().map(|x| self.expr(x, def)).collect::<Result<_, _>>()?)
            }
            Expr::Then(a, b, gap) => Plan::Then {
                first: Box::new(self.expr(a, def)?),
                second: Box::new(self.expr(b, def)?),
                max_gap: *gap,
            },
            Expr::Not(x) => Plan::Not(Box::new(self.expr(x, def)?)),
            Expr::Object { object, relation: r, comparison, bodyparts } => {
                let kind = relation(r)?;
                if !kind.applies_to_objects() {
                    return Err(ty(format!("relation `{kind}` does not apply to objects")));
                }
                match (kind.is_numeric(), comparison) {
                    (true, None) => return Err(ty(format!("relation `{kind}` is numeric and needs a comparison"))),
                    (false, Some(_)) => return Err(ty(format!("relation `{kind}` is boolean and takes no comparison"))),
                    _ => {}
                }
                Plan::Object {
                    object: object.clone(),
                    relation: kind,
                    comparison: comparison.map(|(op, v)| ComparisonSpec::new(op, T::lit(v))),
                    bodyparts: selection(bodyparts),
                }
            }
            Expr::Social { relation: r, cond, bodyparts, other_bodyparts } => {
                let kind = relation(r)?;
                if !kind.applies_to_animals() {
                    return Err(ty(format!("relation `{kind}` does not apply between animals")));
                }
                let condition = match (cond, kind == RelationKind::Orientation) {
                    (SocialCond::Orient(o), true) => Condition::Orientation { negated: false, value: *o },
                    (SocialCond::Compare(op, v), false) => Condition::Compare(ComparisonSpec::new(*op, T::lit(*v))),
                    (SocialCond::Orient(_), false) => {
                        return Err(ty(format!("relation `{kind}` is numeric; compare it with a number")))
                    }
                    (SocialCond::Compare(..), true) => {
                        return Err(ty("orientation compares with `== front` or `== behind`".into()))
                    }
                };
                Plan::Social {
                    relation: kind,
                    condition,
                    bodyparts: selection(bodyparts),
                    other_bodyparts: selection(other_bodyparts),
                }
            }
            Expr::State { state, op, value } => Plan::State {
                state: state.parse::<StateKind>().map_err(|e| ty(e.to_string()))?,
                comparison: ComparisonSpec::new(*op, T::lit(*value)),
            },
            Expr::Ref(name) => {
                if self.batch.contains_key(name.as_str()) {
                    self.def(name)?
                } else if let Some(p) = self.registry.get(name) {
                    p.plan.clone()
                } else if let Ok(k) = name.parse::<BuiltinKind>() {
                    builtin_program::<T>(k, &ParamMap::new()).map_err(|e| ty(e.to_string()))?.plan
                } else {
                    return Err(CompileError::Unresolved { def: def.to_string(), name: name.clone() });
                }
            }
        })
    }
}

/// Compiles definitions against `registry` without modifying it. References
/// are inlined, so later redefinitions do not change compiled programs.
pub fn compile<T: Scalar>(defs: &[BehaviorDef], registry: &BehaviorRegistry<T>) -> Result<Vec<BehaviorProgram<T>>, CompileError> {
    if let Some(d) = defs.iter().find(|d| BehaviorRegistry::<T>::is_builtin(&d.name)) {
        return Err(CompileError::Reserved(d.name.clone()));
    }
    let mut low = Lowering {
        batch: defs.iter().map(|d| (d.name.as_str(), d)).collect(),
        registry,
        done: BTreeMap::new(),
        stack: Vec::new(),
    };
    defs.iter()
        .map(|d| {
            let plan = low.def(&d.name)?;
            let mut p = BehaviorProgram::new(&d.name, plan);
            p.source = Some(print_def(d));
            Ok(p)
        })
        .collect()
}

/// Parses, compiles and registers every definition in `source`; all or none.
pub fn define<T: Scalar>(source: &str, registry: &mut BehaviorRegistry<T>) -> Result<Vec<String>, DslError> {
    let defs = parse(source)?;
    let programs = compile(&defs, registry)?;
    let names = programs.iter().map(|p| p.name.clone()).collect();
    for p in programs {
        registry.insert(p).expect("builtin names rejected during compile");
    }
    Ok(names)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolScan {
    pub writes: Vec<String>,
    pub reads: Vec<String>,
    /// `<...>` spans that name no known symbol.
    pub warnings: Vec<String>,
}

fn write_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<\|([^<>|]+)\|>").expect("valid pattern"))
}

fn read_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([^<>|]+)>").expect("valid pattern"))
}

/// `<|name|>` marks a write; `<name>` marks a read only when `name` is
/// already in `known`.
pub fn scan_symbols(text: &str, known: &BTreeSet<String>) -> SymbolScan {
    let mut scan = SymbolScan::default();
    let mut masked = text.to_string();
    for m in write_re().captures_iter(text) {
        let name = m[1].trim().to_string();
        if !scan.writes.contains(&name) {
            scan.writes.push(name);
        }
        let whole = m.get(0).expect("match");
        masked.replace_range(whole.range(), &" ".repeat(whole.len()));
    }
    for m in read_re().captures_iter(&masked) {
        let name = &m[1];
        if known.contains(name) {
            if !scan.reads.iter().any(|r| r == name) {
                scan.reads.push(name.to_string());
            }
        } else {
            scan.warnings.push(format!("`<{name}>` does not name a stored symbol"));
        }
    }
    scan
}

/// Fenced blocks (```` ``` ```` or ```` ```etho ````) inside free text.
pub fn extract_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Option<Vec<&str>> = None;
    for line in text.lines() {
        let t = line.trim();
        match &mut cur {
            None if t == "```" || t.eq_ignore_ascii_case("```etho") => cur = Some(Vec::new()),
            None => {}
            Some(lines) if t == "```" => {
                out.push(lines.join("\n"));
                cur = None;
            }
            Some(lines) => lines.push(line),
        }
    }
    out
}
