//! Pluggable program generation with a bounded self-correction loop, plus
//! the explainer and rephraser adapter slots.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behaviors::{BehaviorError, BehaviorRegistry};
use crate::dsl::{self, CompileError, Pos};
use crate::events::EventDict;
use crate::relations::RelationError;
use crate::retrieval::ModuleDoc;
use crate::scalar::Scalar;
use crate::session::{MemoryItem, Role, ShortTermMemory, DEFAULT_BUDGET};
use crate::trackdata::{DataError, Dataset, ObjectSet};

pub const DEFAULT_MAX_RETRIES: usize = 3;

/// Instructions handed to a generator backend.
pub const SYSTEM_PROMPT: &str = "Answer with ethoscript definitions only, inside a single program. \
Use object(\"NAME\", relation[, cmp][, bodyparts=[..]]) for animal-object relations, \
social(relation cmp) for relations between animals, state(speed|acceleration cmp) for movement, \
`and` for simultaneous events, `then [within k]` for sequential events, `not` for negation, \
and `smooth N` / `min N` to merge and filter bouts. The last definition is the answer.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("generator transport failed: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub system_prompt: String,
    pub history: Vec<MemoryItem>,
    pub retrieved_docs: Vec<ModuleDoc>,
}

impl GeneratorRequest {
    pub fn new(history: &ShortTermMemory, retrieved_docs: Vec<ModuleDoc>) -> Self {
        GeneratorRequest { system_prompt: SYSTEM_PROMPT.into(), history: history.items().cloned().collect(), retrieved_docs }
    }
}

/// Exactly one of a program or a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorResponse {
    ProgramSource(String),
    Refusal(String),
}

pub trait Generator {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<GeneratorResponse, TransportError>;
}

/// Replays a fixed list of responses and records every request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    script: VecDeque<GeneratorResponse>,
    pub requests: Vec<GeneratorRequest>,
}

impl ScriptedGenerator {
    pub fn new(script: impl IntoIterator<Item = GeneratorResponse>) -> Self {
        ScriptedGenerator { script: script.into_iter().collect(), requests: Vec::new() }
    }

    pub fn programs<S: AsRef<str>>(sources: &[S]) -> Self {
        Self::new(sources.iter().map(|s| GeneratorResponse::ProgramSource(s.as_ref().to_string())))
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<GeneratorResponse, TransportError> {
        self.requests.push(req.clone());
        self.script.pop_front().ok_or_else(|| TransportError("script exhausted".into()))
    }
}

/// Sends the request as JSON through `transport` and decodes the JSON reply.
pub struct JsonGenerator<F> {
    transport: F,
}

impl<F: FnMut(&str) -> Result<String, TransportError>> JsonGenerator<F> {
    pub fn new(transport: F) -> Self {
        JsonGenerator { transport }
    }
}

impl<F: FnMut(&str) -> Result<String, TransportError>> Generator for JsonGenerator<F> {
    fn generate(&mut self, req: &GeneratorRequest) -> Result<GeneratorResponse, TransportError> {
        let body = serde_json::to_string(req).map_err(|e| TransportError(e.to_string()))?;
        let reply = (self.transport)(&body)?;
        serde_json::from_str(&reply).map_err(|e| TransportError(format!("bad response: {e}")))
    }
}

/// What the explainer knows about a failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ErrorDetail {
    Syntax { expected: Vec<String> },
    UnknownBodypart { name: String, supported: Vec<String> },
    UnknownObject { name: String, known: Vec<String> },
    UnknownBehavior { name: String, known: Vec<String> },
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecError {
    pub pos: Option<Pos>,
    pub message: String,
    pub detail: ErrorDetail,
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pos {
            Some(p) => write!(f, "{p}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ExecError {}

fn behavior_detail(e: &BehaviorError) -> ErrorDetail {
    match e {
        BehaviorError::Relation(RelationError::UnknownBodypart { name, supported })
        | BehaviorError::Relation(RelationError::MissingBodypart { name, supported, .. }) => {
            ErrorDetail::UnknownBodypart { name: name.clone(), supported: supported.clone() }
        }
        BehaviorError::Data(DataError::UnknownObject { name, known }) => {
            ErrorDetail::UnknownObject { name: name.clone(), known: known.clone() }
        }
        BehaviorError::UnknownBehavior { name, known } => ErrorDetail::UnknownBehavior { name: name.clone(), known: known.clone() },
        _ => ErrorDetail::Other,
    }
}

pub trait Executor {
    fn execute(&mut self, source: &str) -> Result<EventDict, ExecError>;
}

/// Parses, compiles and runs the last definition of a program. Definitions
/// are registered only when the run succeeds.
pub struct DslExecutor<'a, T: Scalar> {
    pub dataset: &'a Dataset<T>,
    pub objects: &'a ObjectSet<T>,
    pub registry: &'a mut BehaviorRegistry<T>,
}

impl<T: Scalar> Executor for DslExecutor<'_, T> {
    fn execute(&mut self, source: &str) -> Result<EventDict, ExecError> {
        let spanned = dsl::parse_spanned(source).map_err(|d| ExecError {
            pos: Some(d.pos),
            message: d.message.clone(),
            detail: ErrorDetail::Syntax { expected: d.expected },
        })?;
        let pos_of = |name: &str| spanned.iter().find(|(_, d)| d.name == name).map(|(p, _)| *p);
        let defs: Vec<_> = spanned.iter().map(|(_, d)| d.clone()).collect();
        let programs = dsl::compile(&defs, self.registry).map_err(|e| {
            let (pos, detail) = match &e {
                CompileError::Unresolved { def, name } => (
                    pos_of(def),
                    ErrorDetail::UnknownBehavior { name: name.clone(), known: self.registry.names() },
                ),
                CompileError::Type { def, .. } => (pos_of(def), ErrorDetail::Other),
                CompileError::Cycle(names) => (names.first().and_then(|n| pos_of(n)), ErrorDetail::Other),
                CompileError::Reserved(name) => (pos_of(name), ErrorDetail::Other),
            };
            ExecError { pos, message: e.to_string(), detail }
        })?;
        let last = programs.last().expect("parser yields at least one definition");
        let events = last.run(self.dataset, self.objects).map_err(|e| ExecError {
            pos: pos_of(&last.name),
            message: e.to_string(),
            detail: behavior_detail(&e),
        })?;
        for p in programs {
            self.registry.insert(p).expect("compile rejects builtin names");
        }
        Ok(events)
    }
}

pub trait Explainer {
    fn explain(&self, query: &str, source: &str, err: &ExecError) -> String;
}

/// Deterministic text explanation of a failure.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateExplainer;

fn nearest<'a>(name: &str, candidates: &'a [String]) -> Option<&'a str> {
    candidates.iter().min_by_key(|c| strsim::levenshtein(name, c)).map(String::as_str)
}

impl Explainer for TemplateExplainer {
    fn explain(&self, query: &str, source: &str, err: &ExecError) -> String {
        explain_error(query, source, err)
    }
}

pub fn explain_error(query: &str, source: &str, err: &ExecError) -> String {
    let mut out = String::new();
    if !query.is_empty() {
        out.push_str(&format!("Request: {query}\n"));
    }
    out.push_str(&format!("Error: {err}\n"));
    if let Some(p) = err.pos {
        if let Some(line) = source.lines().nth(p.line.saturating_sub(1)) {
            out.push_str(&format!("  {line}\n  {}^\n", " ".repeat(p.col.saturating_sub(1))));
        }
    }
    let mut list = |label: &str, name: &str, items: &[String]| {
        out.push_str(&format!("{label}: {}\n", items.join(", ")));
        if let Some(n) = nearest(name, items) {
            out.push_str(&format!("Did you mean `{n}` instead of `{name}`?\n"));
        }
    };
    match &err.detail {
        ErrorDetail::Syntax { expected } if !expected.is_empty() => {
            out.push_str(&format!("Expected: {}\n", expected.join(", ")));
        }
        ErrorDetail::UnknownBodypart { name, supported } => list("Supported bodyparts", name, supported),
        ErrorDetail::UnknownObject { name, known } => list("Known objects", name, known),
        ErrorDetail::UnknownBehavior { name, known } => list("Known behaviors", name, known),
        _ => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Ok,
    Error { error: ExecError },
    Refused { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub source: Option<String>,
    pub outcome: Outcome,
    pub diagnosis: Option<String>,
    /// Index of an earlier failed attempt with the same source; the program
    /// was not run again.
    pub duplicate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub attempts: Vec<Attempt>,
    pub max_retries: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorrectionFailure {
    #[error("no working program after {attempts} attempts")]
    Exhausted { attempts: usize },
    #[error("generator refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectionConfig {
    pub max_retries: usize,
    /// Token budget of the history sent back to the generator.
    pub history_budget: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig { max_retries: DEFAULT_MAX_RETRIES, history_budget: DEFAULT_BUDGET }
    }
}

/// Generate, execute, and on failure feed the error and its diagnosis back
/// to the generator, at most `1 + max_retries` times.
pub fn run_with_self_correction<G, X>(
    generator: &mut G,
    mut request: GeneratorRequest,
    executor: &mut X,
    explainer: &dyn Explainer,
    query: &str,
    cfg: CorrectionConfig,
) -> (Result<EventDict, CorrectionFailure>, CorrectionTrace)
where
    G: Generator + ?Sized,
    X: Executor + ?Sized,
{
    let mut trace = CorrectionTrace { attempts: Vec::new(), max_retries: cfg.max_retries };
    let mut history = ShortTermMemory::new(cfg.history_budget);
    for item in request.history.drain(..) {
        if let Err(e) = history.append(item) {
            return (Err(TransportError(e.to_string()).into()), trace);
        }
    }
    request.history = history.items().cloned().collect();
    for _ in 0..=cfg.max_retries {
        let response = match generator.generate(&request) {
            Ok(r) => r,
            Err(e) => return (Err(e.into()), trace),
        };
        let source = match response {
            GeneratorResponse::ProgramSource(s) => s,
            GeneratorResponse::Refusal(message) => {
                trace.attempts.push(Attempt {
                    source: None,
                    outcome: Outcome::Refused { message: message.clone() },
                    diagnosis: None,
                    duplicate_of: None,
                });
                return (Err(CorrectionFailure::Refused(message)), trace);
            }
        };
        let earlier = trace.attempts.iter().position(|a| a.source.as_deref() == Some(source.as_str()));
        let result = match earlier {
            Some(i) => match &trace.attempts[i].outcome {
                Outcome::Error { error } => Err(error.clone()),
                _ => unreachable!("a successful attempt ends the loop"),
            },
            None => executor.execute(&source),
        };
        match result {
            Ok(events) => {
                trace.attempts.push(Attempt { source: Some(source), outcome: Outcome::Ok, diagnosis: None, duplicate_of: None });
                return (Ok(events), trace);
            }
            Err(error) => {
                let diagnosis = explainer.explain(query, &source, &error);
                let feedback = format!("The program failed.\n{diagnosis}");
                for item in [MemoryItem::new(Role::Assistant, source.clone()), MemoryItem::new(Role::System, feedback)] {
                    // an item larger than the whole budget is dropped from the history
                    let _ = history.append(item);
                }
                request.history = history.items().cloned().collect();
                trace.attempts.push(Attempt {
                    source: Some(source),
                    outcome: Outcome::Error { error },
                    diagnosis: Some(diagnosis),
                    duplicate_of: earlier,
                });
            }
        }
    }
    let attempts = trace.attempts.len();
    (Err(CorrectionFailure::Exhausted { attempts }), trace)
}

pub trait Rephraser {
    fn rephrase(&mut self, text: &str) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRephraser;

impl Rephraser for IdentityRephraser {
    fn rephrase(&mut self, text: &str) -> Result<String, TransportError> {
        Ok(text.to_string())
    }
}

/// Fixed input to output pairs; other inputs pass through.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRephraser {
    pub pairs: BTreeMap<String, String>,
}

impl Rephraser for ScriptedRephraser {
    fn rephrase(&mut self, text: &str) -> Result<String, TransportError> {
        Ok(self.pairs.get(text).cloned().unwrap_or_else(|| text.to_string()))
    }
}

impl<F: FnMut(&str) -> Result<String, TransportError>> Rephraser for F {
    fn rephrase(&mut self, text: &str) -> Result<String, TransportError> {
        self(text)
    }
}

/// Falls back to the input, with a warning, when the backend fails.
pub fn rephrase_or_identity<R: Rephraser + ?Sized>(r: &mut R, text: &str) -> (String, Option<String>) {
    match r.rephrase(text) {
        Ok(s) => (s, None),
        Err(e) => (text.to_string(), Some(format!("rephraser unavailable, using the original text: {e}"))),
    }
}
