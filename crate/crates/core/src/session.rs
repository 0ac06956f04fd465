//! Session memory: a token-budgeted short-term deque, a symbol store, and
//! on-disk persistence of the whole session.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behaviors::{BehaviorProgram, BehaviorRegistry};
use crate::dsl::{self, DslError};
use crate::scalar::Scalar;
use crate::trackdata::ObjectSet;

pub const DEFAULT_BUDGET: usize = 4096;
pub const STATE_VERSION: u64 = 1;

/// Local stand-in for a tokenizer: one token per started 4 bytes.
pub fn token_count(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("item of {tokens} tokens exceeds the {budget}-token budget")]
    Oversize { tokens: usize, budget: usize },
    #[error("symbol names must be non-empty")]
    EmptySymbol,
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("unsupported state file version {found}; expected {expected}")]
    Version { found: String, expected: u64 },
    #[error("state file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub role: Role,
    pub text: String,
    pub tokens: usize,
    /// Insertion order; eviction removes the lowest first.
    #[serde(default)]
    pub seq: u64,
}

impl MemoryItem {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        let text = text.into();
        MemoryItem { role, tokens: token_count(&text), text, seq: 0 }
    }
}

/// Chat history bounded by a token budget. Items can be added at either
/// end; eviction always drops the least recently inserted item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortTermMemory {
    budget: usize,
    items: VecDeque<MemoryItem>,
    next_seq: u64,
}

impl Default for ShortTermMemory {
    fn default() -> Self {
        ShortTermMemory::new(DEFAULT_BUDGET)
    }
}

impl ShortTermMemory {
    pub fn new(budget: usize) -> Self {
        ShortTermMemory { budget, items: VecDeque::new(), next_seq: 0 }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn items(&self) -> impl Iterator<Item = &MemoryItem> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.items.iter().map(|i| i.tokens).sum()
    }

    /// Adds at the back and returns evicted items, oldest first.
    pub fn append(&mut self, item: MemoryItem) -> Result<Vec<MemoryItem>, SessionError> {
        self.add(item, false)
    }

    /// Adds at the front and returns evicted items, oldest first.
    pub fn push_front(&mut self, item: MemoryItem) -> Result<Vec<MemoryItem>, SessionError> {
        self.add(item, true)
    }

    fn add(&mut self, mut item: MemoryItem, front: bool) -> Result<Vec<MemoryItem>, SessionError> {
        item.tokens = token_count(&item.text);
        if item.tokens > self.budget {
            return Err(SessionError::Oversize { tokens: item.tokens, budget: self.budget });
        }
        item.seq = self.next_seq;
        self.next_seq += 1;
        if front {
            self.items.push_front(item);
        } else {
            self.items.push_back(item);
        }
        let mut evicted = Vec::new();
        let mut total = self.total_tokens();
        while total > self.budget {
            let (idx, _) = self.items.iter().enumerate().min_by_key(|(_, i)| i.seq).expect("non-empty while over budget");
            let gone = self.items.remove(idx).expect("index in range");
            total -= gone.tokens;
            evicted.push(gone);
        }
        Ok(evicted)
    }

    /// Rebuilds a memory from stored items, keeping their sequence numbers.
    pub fn from_items(budget: usize, items: Vec<MemoryItem>) -> Result<Self, SessionError> {
        let total: usize = items.iter().map(|i| token_count(&i.text)).sum();
        if total > budget {
            return Err(SessionError::Oversize { tokens: total, budget });
        }
        let next_seq = items.iter().map(|i| i.seq + 1).max().unwrap_or(0);
        let items = items.into_iter().map(|i| MemoryItem { tokens: token_count(&i.text), ..i }).collect();
        Ok(ShortTermMemory { budget, items, next_seq })
    }
}

/// Symbol table; a write replaces any earlier text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LongTermMemory {
    entries: BTreeMap<String, String>,
}

impl LongTermMemory {
    pub fn write(&mut self, symbol: &str, text: &str) -> Result<Option<String>, SessionError> {
        if symbol.is_empty() {
            return Err(SessionError::EmptySymbol);
        }
        Ok(self.entries.insert(symbol.to_string(), text.to_string()))
    }

    pub fn read(&self, symbol: &str) -> Option<&str> {
        self.entries.get(symbol).map(String::as_str)
    }

    pub fn symbols(&self) -> BTreeSet<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceOutcome {
    /// Stored texts of the symbols read, in reading order.
    pub resolved_context: Vec<String>,
    pub writes: Vec<String>,
    pub reads: Vec<String>,
    pub warnings: Vec<String>,
    /// Behaviors defined by fenced blocks in the utterance.
    pub defined: Vec<String>,
    pub evicted: Vec<MemoryItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState<T> {
    pub short: ShortTermMemory,
    pub long: LongTermMemory,
    pub behaviors: BehaviorRegistry<T>,
    pub objects: ObjectSet<T>,
}

impl<T: Scalar> Default for SessionState<T> {
    fn default() -> Self {
        SessionState::new(DEFAULT_BUDGET)
    }
}

impl<T: Scalar> SessionState<T> {
    pub fn new(budget: usize) -> Self {
        SessionState {
            short: ShortTermMemory::new(budget),
            long: LongTermMemory::default(),
            behaviors: BehaviorRegistry::new(),
            objects: ObjectSet::new(),
        }
    }

    /// Handles one user message: stores written symbols, places read symbols
    /// at the front of short-term memory, compiles fenced definitions, then
    /// appends the message. Nothing changes when an error is returned.
    pub fn process_utterance(&mut self, text: &str) -> Result<UtteranceOutcome, SessionError> {
        let scan = dsl::scan_symbols(text, &self.long.symbols());
        if token_count(text) > self.short.budget() {
            return Err(SessionError::Oversize { tokens: token_count(text), budget: self.short.budget() });
        }
        let mut registry = self.behaviors.clone();
        let mut defined = Vec::new();
        for block in dsl::extract_blocks(text) {
            defined.extend(dsl::define(&block, &mut registry)?);
        }
        let mut short = self.short.clone();
        let mut long = self.long.clone();
        let mut out = UtteranceOutcome { warnings: scan.warnings.clone(), defined, ..Default::default() };
        for name in &scan.writes {
            long.write(name, text)?;
        }
        for name in &scan.reads {
            let stored = self.long.read(name).expect("reads are known symbols").to_string();
            let item = MemoryItem::new(Role::System, format!("context for \"{name}\": {stored}"));
            out.evicted.extend(short.push_front(item)?);
            out.resolved_context.push(stored);
        }
        out.evicted.extend(short.append(MemoryItem::new(Role::User, text))?);
        out.writes = scan.writes;
        out.reads = scan.reads;
        self.short = short;
        self.long = long;
        self.behaviors = registry;
        Ok(out)
    }

    pub fn to_json_string(&self) -> String {
        let file = StateFile {
            version: STATE_VERSION,
            budget: self.short.budget(),
            short: self.short.items().cloned().collect(),
            long: self.long.clone(),
            behaviors: self.behaviors.iter().cloned().collect(),
            objects: self.objects.clone(),
        };
        serde_json::to_string_pretty(&file).expect("session state serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, SessionError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("version") {
            Some(v) if v.as_u64() == Some(STATE_VERSION) => {}
            other => {
                return Err(SessionError::Version {
                    found: other.map_or("none".to_string(), ToString::to_string),
                    expected: STATE_VERSION,
                })
            }
        }
        let file: StateFile<T> = serde_json::from_value(raw)?;
        let mut behaviors = BehaviorRegistry::new();
        for p in file.behaviors {
            behaviors.insert(p).map_err(|e| SessionError::Format(serde::de::Error::custom(e.to_string())))?;
        }
        Ok(SessionState {
            short: ShortTermMemory::from_items(file.budget, file.short)?,
            long: file.long,
            behaviors,
            objects: file.objects,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct StateFile<T> {
    version: u64,
    budget: usize,
    short: Vec<MemoryItem>,
    long: LongTermMemory,
    behaviors: Vec<BehaviorProgram<T>>,
    objects: ObjectSet<T>,
}

pub fn save_state<T: Scalar>(s: &SessionState<T>, path: &Path) -> Result<(), SessionError> {
    std::fs::write(path, s.to_json_string()).map_err(|source| SessionError::Io { path: path.display().to_string(), source })
}

pub fn load_state<T: Scalar>(path: &Path) -> Result<SessionState<T>, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io { path: path.display().to_string(), source })?;
    SessionState::from_json_str(&text)
}
