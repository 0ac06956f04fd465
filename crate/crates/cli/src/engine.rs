//! Operations shared by the command line and the HTTP service. Both front
//! ends serialize through the functions here, so their outputs match byte
//! for byte.

use std::fs;
use std::path::Path;

use etho_core::behaviors::{evaluate_f1, parse_labels_csv, BehaviorError, ParamMap};
use etho_core::dsl::{Diagnostic, DslError};
use etho_core::retrieval::ModuleRegistry;
use etho_core::session::SessionError;
use etho_core::trackdata::{self, DataError, DataFormat, LoadOptions};
use etho_core::{BehaviorRegistry, Dataset, EventDict, ObjectSet};
use serde::Serialize;

pub const DATASET_FILE: &str = "dataset.json";
pub const OBJECTS_FILE: &str = "objects.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Validation,
    NotFound,
    Conflict,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub known: Vec<String>,
}

impl EngineError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        EngineError { kind, message: message.into(), diagnostics: Vec::new(), known: Vec::new() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, message)
    }

    /// Process exit status for the command line.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Validation | ErrorKind::NotFound | ErrorKind::Conflict => 2,
            ErrorKind::Runtime => 3,
        }
    }

    /// Positioned lines as `file:line:col: message`, or the plain message.
    pub fn render(&self, file: &str) -> String {
        if self.diagnostics.is_empty() {
            format!("{file}: {}", self.message)
        } else {
            self.diagnostics.iter().map(|d| d.render(file)).collect::<Vec<_>>().join("\n")
        }
    }
}

impl std::fmt::Display for EngineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for EngineError {}

impl From<DslError> for EngineError {
    fn from(e: DslError) -> Self {
        let mut out = EngineError::validation(e.to_string());
        if let DslError::Parse(d) = e {
            out.diagnostics.push(d);
        }
        out
    }
}

impl From<DataError> for EngineError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => EngineError::runtime(e.to_string()),
            DataError::UnknownObject { ref known, .. } => {
                let known = known.clone();
                EngineError { known, ..EngineError::new(ErrorKind::NotFound, e.to_string()) }
            }
            DataError::Duplicate { .. } => EngineError::new(ErrorKind::Conflict, e.to_string()),
            _ => EngineError::validation(e.to_string()),
        }
    }
}

impl From<BehaviorError> for EngineError {
    fn from(e: BehaviorError) -> Self {
        match e {
            BehaviorError::UnknownBehavior { known, .. } => {
                EngineError { known, ..EngineError::new(ErrorKind::NotFound, "unknown behavior") }
            }
            BehaviorError::Data(d) => d.into(),
            BehaviorError::Io { .. } => EngineError::runtime(e.to_string()),
            _ => EngineError::validation(e.to_string()),
        }
    }
}

impl From<SessionError> for EngineError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Dsl(d) => d.into(),
            SessionError::Io { .. } => EngineError::runtime(e.to_string()),
            _ => EngineError::validation(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, EngineError> {
    fs::read_to_string(path).map_err(|e| EngineError::runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), EngineError> {
    fs::write(path, text).map_err(|e| EngineError::runtime(format!("{}: {e}", path.display())))
}

/// Keypoints plus scene objects, as stored in a bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dataset: Dataset,
    pub objects: ObjectSet,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Bundle, EngineError> {
        let dataset = parse_dataset(&read(&dir.join(DATASET_FILE))?)?;
        let objects_path = dir.join(OBJECTS_FILE);
        let objects = if objects_path.exists() { parse_objects(&read(&objects_path)?)? } else { ObjectSet::new() };
        Ok(Bundle { dataset, objects })
    }

    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        fs::create_dir_all(dir).map_err(|e| EngineError::runtime(format!("{}: {e}", dir.display())))?;
        write(&dir.join(DATASET_FILE), &trackdata::dataset_json_string(&self.dataset))?;
        write(&dir.join(OBJECTS_FILE), &objects_json(&self.objects))
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset, EngineError> {
    Ok(trackdata::parse_dataset_json(text, &LoadOptions::default())?.dataset)
}

pub fn parse_objects(text: &str) -> Result<ObjectSet, EngineError> {
    Ok(trackdata::parse_objects_json(text)?)
}

pub fn objects_json(objects: &ObjectSet) -> String {
    serde_json::to_string_pretty(objects).expect("object set serializes")
}

/// Validates raw keypoints (CSV or dataset JSON) and an optional object file
/// into a bundle.
pub fn ingest(keypoints: &str, format: DataFormat, objects: Option<&str>) -> Result<Bundle, EngineError> {
    let opts = LoadOptions::default();
    let dataset = match format {
        DataFormat::Csv => trackdata::parse_keypoint_csv(keypoints, &opts)?.dataset,
        DataFormat::Json => trackdata::parse_dataset_json(keypoints, &opts)?.dataset,
    };
    let objects = match objects {
        Some(text) => parse_objects(text)?,
        None => ObjectSet::new(),
    };
    Ok(Bundle { dataset, objects })
}

/// `key=value` pairs into a parameter map. Repeated keys are rejected.
pub fn parse_params<S: AsRef<str>>(pairs: &[S]) -> Result<ParamMap, EngineError> {
    let mut out = ParamMap::new();
    for p in pairs {
        let p = p.as_ref();
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| EngineError::new(ErrorKind::Usage, format!("parameter `{p}` is not of the form key=value")))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(EngineError::new(ErrorKind::Usage, format!("parameter `{}` given twice", k.trim())));
        }
    }
    Ok(out)
}

pub fn run_behavior(
    registry: &BehaviorRegistry,
    name: &str,
    params: &ParamMap,
    bundle: &Bundle,
) -> Result<EventDict, EngineError> {
    Ok(registry.run(name, params, &bundle.dataset, &bundle.objects)?)
}

pub fn events_json(events: &EventDict) -> String {
    events.to_json_string()
}

pub fn parse_events(text: &str) -> Result<EventDict, EngineError> {
    serde_json::from_str(text).map_err(|e| EngineError::validation(format!("events: {e}")))
}

/// Scores predicted events against per-frame CSV labels.
pub fn eval_json(task: &str, pred: &EventDict, labels_csv: &str) -> Result<String, EngineError> {
    let labels = parse_labels_csv(labels_csv)?;
    let report = evaluate_f1(task, pred, &labels)?;
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

pub fn retrieve_json(modules: &ModuleRegistry, query: &str, k: usize) -> String {
    serde_json::to_string_pretty(&modules.query(query, k)).expect("ranking serializes")
}
