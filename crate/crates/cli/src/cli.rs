//! The `etho` command line. Exit status: 0 success, 1 usage, 2 validation,
//! 3 runtime.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use etho_core::behaviors::{render_ethogram, render_trajectory};
use etho_core::relations::BodypartSelection;
use etho_core::retrieval::{ModuleRegistry, DEFAULT_K};
use etho_core::session::{load_state, save_state};
use etho_core::trackdata::DataFormat;
use etho_core::{dsl, BehaviorRegistry, SessionState};

use crate::engine::{self, Bundle, EngineError, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "etho", version, about = "Rule-based behavior analysis on pose keypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate keypoints and objects into a dataset bundle directory.
    Ingest {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        objects: Option<PathBuf>,
        /// csv or json; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and compile behavior definitions into a session file.
    Define {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        session: PathBuf,
    },
    /// Run a builtin or defined behavior over a bundle.
    Run {
        #[arg(long)]
        behavior: String,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        dataset: PathBuf,
        /// Session file holding user definitions.
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted events against per-frame labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Task name in the report; defaults to the label file stem.
        #[arg(long)]
        task: Option<String>,
    },
    /// Render one or more event files as an SVG ethogram.
    Ethogram {
        #[arg(long, required = true)]
        events: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an animal's trajectory as SVG.
    Traj {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        animal: String,
        /// Comma separated; all bodyparts when omitted.
        #[arg(long)]
        bodyparts: Option<String>,
        /// Restrict the drawing to frames covered by these events.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank analysis modules against a query.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Extra module documents to load before ranking.
        #[arg(long = "module")]
        modules: Vec<PathBuf>,
    },
    /// Save or load session state.
    Session {
        #[command(subcommand)]
        action: SessionAction,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SessionAction {
    /// Write a session file, copied from `--from` or fresh.
    Save {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Load and validate a session file, printing a summary.
    Load {
        #[arg(long)]
        path: PathBuf,
    },
}

/// Runs the command line with explicit streams; returns the exit status.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                1
            } else {
                let _ = out.write_all(text.as_bytes());
                0
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err((file, e)) => {
            let _ = writeln!(err, "{}", e.render(&file));
            e.exit_code()
        }
    }
}

type Failure = (String, EngineError);

fn at(path: &Path) -> impl Fn(EngineError) -> Failure + '_ {
    move |e| (path.display().to_string(), e)
}

fn plain(e: EngineError) -> Failure {
    ("etho".to_string(), e)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| (path.display().to_string(), EngineError::runtime(e.to_string())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| (path.display().to_string(), EngineError::runtime(e.to_string())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    writeln!(out, "{text}").map_err(|e| plain(EngineError::runtime(e.to_string())))
}

fn open_session(path: &Path) -> Result<SessionState, Failure> {
    if path.exists() {
        load_state(path).map_err(|e| at(path)(e.into()))
    } else {
        Ok(SessionState::default())
    }
}

fn format_of(path: &Path, explicit: Option<&str>) -> Result<DataFormat, Failure> {
    let name = explicit.map(str::to_ascii_lowercase).or_else(|| {
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
    });
    match name.as_deref() {
        Some("csv") => Ok(DataFormat::Csv),
        Some("json") => Ok(DataFormat::Json),
        other => Err(plain(EngineError::new(
            ErrorKind::Usage,
            format!("cannot tell the keypoint format from {other:?}; pass --format csv or --format json"),
        ))),
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Ingest { keypoints, objects, format, out: dir } => {
            let fmt = format_of(&keypoints, format.as_deref())?;
            let text = read(&keypoints)?;
            let objects_text = objects.as_deref().map(read).transpose()?;
            let bundle = match engine::ingest(&text, fmt, None) {
                Ok(b) => b,
                Err(e) => return Err(at(&keypoints)(e)),
            };
            let objects = match (&objects, objects_text) {
                (Some(p), Some(t)) => engine::parse_objects(&t).map_err(at(p))?,
                _ => Default::default(),
            };
            let bundle = Bundle { objects, ..bundle };
            bundle.save(&dir).map_err(at(&dir))?;
            let summary = serde_json::json!({
                "dir": dir.display().to_string(),
                "n_frames": bundle.dataset.n_frames(),
                "animals": bundle.dataset.animal_ids(),
                "bodyparts": bundle.dataset.bodypart_names(),
                "objects": bundle.objects.names(),
            });
            emit(out, &serde_json::to_string_pretty(&summary).expect("summary serializes"))
        }
        Command::Define { file, session } => {
            let source = read(&file)?;
            let mut state = open_session(&session)?;
            let defined = dsl::define(&source, &mut state.behaviors).map_err(|e| at(&file)(e.into()))?;
            save_state(&state, &session).map_err(|e| at(&session)(e.into()))?;
            for name in defined {
                emit(out, &name)?;
            }
            Ok(())
        }
        Command::Run { behavior, params, dataset, session, out: dest } => {
            let params = engine::parse_params(&params).map_err(plain)?;
            let bundle = Bundle::load(&dataset).map_err(at(&dataset))?;
            let registry = match &session {
                Some(p) => open_session(p)?.behaviors,
                None => BehaviorRegistry::new(),
            };
            let events = engine::run_behavior(&registry, &behavior, &params, &bundle).map_err(|e| {
                let e = if e.kind == ErrorKind::NotFound && !e.known.is_empty() {
                    EngineError { message: format!("unknown behavior `{behavior}`; known: {}", e.known.join(", ")), ..e }
                } else {
                    e
                };
                plain(e)
            })?;
            let json = engine::events_json(&events);
            match dest {
                Some(p) => write(&p, &json),
                None => emit(out, &json),
            }
        }
        Command::Eval { pred, gt, task } => {
            let events = engine::parse_events(&read(&pred)?).map_err(at(&pred))?;
            let labels = read(&gt)?;
            let task = task.unwrap_or_else(|| gt.file_stem().map_or("task".into(), |s| s.to_string_lossy().into_owned()));
            let report = engine::eval_json(&task, &events, &labels).map_err(at(&gt))?;
            emit(out, &report)
        }
        Command::Ethogram { events, out: dest } => {
            let mut loaded = Vec::new();
            for p in &events {
                let name = p.file_stem().map_or("events".into(), |s| s.to_string_lossy().into_owned());
                loaded.push((name, engine::parse_events(&read(p)?).map_err(at(p))?));
            }
            let refs: Vec<(String, &etho_core::EventDict)> = loaded.iter().map(|(n, d)| (n.clone(), d)).collect();
            let svg = render_ethogram(&refs).map_err(|e| plain(e.into()))?;
            write(&dest, &svg)
        }
        Command::Traj { dataset, animal, bodyparts, events, out: dest } => {
            let bundle = Bundle::load(&dataset).map_err(at(&dataset))?;
            let sel = selection(bodyparts.as_deref());
            let events = match &events {
                Some(p) => Some(engine::parse_events(&read(p)?).map_err(at(p))?),
                None => None,
            };
            let svg = render_trajectory(&bundle.dataset, &animal, &sel, events.as_ref()).map_err(|e| plain(e.into()))?;
            write(&dest, &svg)
        }
        Command::Retrieve { query, k, modules } => {
            let mut registry = ModuleRegistry::with_shipped();
            for p in &modules {
                registry
                    .manual_load(p)
                    .map_err(|e| (p.display().to_string(), EngineError::validation(e.to_string())))?;
            }
            emit(out, &engine::retrieve_json(&registry, &query, k))
        }
        Command::Session { action: SessionAction::Save { path, from } } => {
            let state = match &from {
                Some(p) => load_state(p).map_err(|e| at(p)(e.into()))?,
                None => SessionState::default(),
            };
            save_state(&state, &path).map_err(|e| at(&path)(e.into()))
        }
        Command::Session { action: SessionAction::Load { path } } => {
            let state: SessionState = load_state(&path).map_err(|e| at(&path)(e.into()))?;
            emit(out, &serde_json::to_string_pretty(&session_summary(&state)).expect("summary serializes"))
        }
        Command::Serve { port, host, data_dir } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| plain(EngineError::runtime(e.to_string())))?;
            rt.block_on(crate::server::serve(&host, port, data_dir)).map_err(plain)
        }
    }
}

pub(crate) fn selection(bodyparts: Option<&str>) -> BodypartSelection {
    match bodyparts {
        Some(s) if !s.trim().is_empty() => {
            BodypartSelection::from_list(s.split(',').map(|p| p.trim().to_string()).collect())
        }
        _ => BodypartSelection::All,
    }
}

pub(crate) fn session_summary(state: &SessionState) -> serde_json::Value {
    serde_json::json!({
        "symbols": state.long.symbols(),
        "behaviors": state.behaviors.user_names(),
        "objects": state.objects.names(),
        "short_term_items": state.short.len(),
        "short_term_tokens": state.short.total_tokens(),
        "budget": state.short.budget(),
    })
}
