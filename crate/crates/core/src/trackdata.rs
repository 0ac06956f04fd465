//! Keypoint trajectories, scene objects and their on-disk formats.
//!
//! Keypoint CSV (long format, one row per animal/frame/bodypart):
//!
//! ```text
//! animal,frame,bodypart,x,y,confidence
//! mouse0,0,nose,10.5,20.0,0.98
//! mouse0,0,tail_base,,,
//! ```
//!
//! Empty `x`/`y` cells mark a missing keypoint. The `confidence` column is
//! optional. Frames are 0-indexed and must be dense for every animal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, GeometryError, Mask, Polygon, Vec2};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}, column `{column}`: {message}")]
    Schema { line: u64, column: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("duplicate {kind} `{name}`{}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Duplicate { kind: &'static str, name: String, line: Option<u64> },
    #[error("keypoint out of frame bounds: animal `{animal}`, frame {frame}, bodypart `{bodypart}` at ({x}, {y})")]
    OutOfBounds { animal: String, frame: usize, bodypart: String, x: f64, y: f64 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("object `{name}`: {source}")]
    Geometry { name: String, source: GeometryError },
    #[error("unknown object `{name}`; known objects: {known:?}")]
    UnknownObject { name: String, known: Vec<String> },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub confidence: Option<T>,
}

impl<T: Scalar> Keypoint<T> {
    pub fn pos(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundsPolicy {
    /// Out-of-frame keypoints fail the load.
    #[default]
    Reject,
    /// Out-of-frame keypoints become missing and are reported back.
    MarkMissing,
}

#[derive(Debug, Clone)]
pub struct LoadOptions<T> {
    pub id: Option<String>,
    /// Required to check bounds on CSV input; inferred from the data when absent.
    pub frame_size: Option<(T, T)>,
    pub fps: Option<T>,
    pub px_per_cm: Option<T>,
    /// Keypoints with confidence below this are treated as missing. 0 disables.
    pub confidence_threshold: T,
    pub bounds: BoundsPolicy,
}

impl<T: Scalar> Default for LoadOptions<T> {
    fn default() -> Self {
        LoadOptions {
            id: None,
            frame_size: None,
            fps: None,
            px_per_cm: None,
            confidence_threshold: T::zero(),
            bounds: BoundsPolicy::Reject,
        }
    }
}

/// Position of a single keypoint in the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeypointIndex {
    pub animal: usize,
    pub frame: usize,
    pub bodypart: usize,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub dataset: Dataset<T>,
    pub out_of_bounds: Vec<KeypointIndex>,
}

/// Keypoint tensor indexed `[animal][frame][bodypart]` plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    id: String,
    n_frames: usize,
    fps: Option<T>,
    frame_size: (T, T),
    animal_ids: Vec<String>,
    bodypart_names: Vec<String>,
    keypoints: Vec<Option<Keypoint<T>>>,
    px_per_cm: Option<T>,
}

/// Unvalidated dataset fields.
#[derive(Debug, Clone)]
pub struct DatasetParts<T> {
    pub id: String,
    pub n_frames: usize,
    pub fps: Option<T>,
    pub frame_size: (T, T),
    pub animal_ids: Vec<String>,
    pub bodypart_names: Vec<String>,
    pub keypoints: Vec<Option<Keypoint<T>>>,
    pub px_per_cm: Option<T>,
}

fn check_unique(kind: &'static str, names: &[String]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(DataError::Duplicate { kind, name: n.clone(), line: None });
        }
    }
    Ok(())
}

impl<T: Scalar> Dataset<T> {
    pub fn new(parts: DatasetParts<T>) -> Result<Self, DataError> {
        Self::validate(parts, BoundsPolicy::Reject, T::zero()).map(|l| l.dataset)
    }

    pub fn validate(
        mut parts: DatasetParts<T>,
        bounds: BoundsPolicy,
        confidence_threshold: T,
    ) -> Result<Loaded<T>, DataError> {
        if parts.n_frames == 0 {
            return Err(DataError::Invalid("n_frames must be positive".into()));
        }
        check_unique("animal", &parts.animal_ids)?;
        check_unique("bodypart", &parts.bodypart_names)?;
        let expected = parts.animal_ids.len() * parts.n_frames * parts.bodypart_names.len();
        if parts.keypoints.len() != expected {
            return Err(DataError::Dimension(format!(
                "keypoint tensor has {} entries, expected {} animals x {} frames x {} bodyparts = {}",
                parts.keypoints.len(),
                parts.animal_ids.len(),
                parts.n_frames,
                parts.bodypart_names.len(),
                expected
            )));
        }
        let (w, h) = parts.frame_size;
        if !(w > T::zero() && h > T::zero() && w.is_finite() && h.is_finite()) {
            return Err(DataError::Invalid("frame_size must be positive".into()));
        }
        for (label, v) in [("fps", parts.fps), ("px_per_cm", parts.px_per_cm)] {
            if let Some(v) = v {
                if !(v > T::zero() && v.is_finite()) {
                    return Err(DataError::Invalid(format!("{label} must be a positive number")));
                }
            }
        }
        let nb = parts.bodypart_names.len();
        let nf = parts.n_frames;
        let mut out_of_bounds = Vec::new();
        for (i, slot) in parts.keypoints.iter_mut().enumerate() {
            let Some(kp) = slot else { continue };
            if let Some(c) = kp.confidence {
                if !(c >= T::zero() && c <= T::one()) {
                    return Err(DataError::Invalid(format!("confidence {c} outside [0, 1]")));
                }
                if c < confidence_threshold {
                    *slot = None;
                    continue;
                }
            }
            let ok = kp.x >= T::zero() && kp.x <= w && kp.y >= T::zero() && kp.y <= h;
            if ok {
                continue;
            }
            let idx = KeypointIndex { animal: i / (nf * nb), frame: (i / nb) % nf, bodypart: i % nb };
            match bounds {
                BoundsPolicy::Reject => {
                    return Err(DataError::OutOfBounds {
                        animal: parts.animal_ids[idx.animal].clone(),
                        frame: idx.frame,
                        bodypart: parts.bodypart_names[idx.bodypart].clone(),
                        x: kp.x.as_f64(),
                        y: kp.y.as_f64(),
                    })
                }
                BoundsPolicy::MarkMissing => {
                    *slot = None;
                    out_of_bounds.push(idx);
                }
            }
        }
        let dataset = Dataset {
            id: parts.id,
            n_frames: parts.n_frames,
            fps: parts.fps,
            frame_size: parts.frame_size,
            animal_ids: parts.animal_ids,
            bodypart_names: parts.bodypart_names,
            keypoints: parts.keypoints,
            px_per_cm: parts.px_per_cm,
        };
        Ok(Loaded { dataset, out_of_bounds })
    }

    /// Builds a dataset from a position generator; confidence is left empty.
    pub fn from_fn(
        id: &str,
        animal_ids: &[&str],
        bodypart_names: &[&str],
        n_frames: usize,
        frame_size: (T, T),
        mut position: impl FnMut(usize, usize, usize) -> Option<Vec2<T>>,
    ) -> Result<Self, DataError> {
        let mut keypoints = Vec::with_capacity(animal_ids.len() * n_frames * bodypart_names.len());
        for a in 0..animal_ids.len() {
            for f in 0..n_frames {
                for b in 0..bodypart_names.len() {
                    keypoints.push(position(a, f, b).map(|p| Keypoint { x: p.x, y: p.y, confidence: None }));
                }
            }
        }
        Dataset::new(DatasetParts {
            id: id.to_string(),
            n_frames,
            fps: None,
            frame_size,
            animal_ids: animal_ids.iter().map(|s| s.to_string()).collect(),
            bodypart_names: bodypart_names.iter().map(|s| s.to_string()).collect(),
            keypoints,
            px_per_cm: None,
        })
    }

    pub fn into_parts(self) -> DatasetParts<T> {
        DatasetParts {
            id: self.id,
            n_frames: self.n_frames,
            fps: self.fps,
            frame_size: self.frame_size,
            animal_ids: self.animal_ids,
            bodypart_names: self.bodypart_names,
            keypoints: self.keypoints,
            px_per_cm: self.px_per_cm,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_animals(&self) -> usize {
        self.animal_ids.len()
    }

    pub fn n_bodyparts(&self) -> usize {
        self.bodypart_names.len()
    }

    pub fn fps(&self) -> Option<T> {
        self.fps
    }

    pub fn frame_size(&self) -> (T, T) {
        self.frame_size
    }

    pub fn px_per_cm(&self) -> Option<T> {
        self.px_per_cm
    }

    pub fn animal_ids(&self) -> &[String] {
        &self.animal_ids
    }

    pub fn bodypart_names(&self) -> &[String] {
        &self.bodypart_names
    }

    pub fn animal_index(&self, id: &str) -> Option<usize> {
        self.animal_ids.iter().position(|a| a == id)
    }

    pub fn bodypart_index(&self, name: &str) -> Option<usize> {
        self.bodypart_names.iter().position(|b| b == name)
    }

    /// Panics on out-of-range indices.
    pub fn keypoint(&self, animal: usize, frame: usize, bodypart: usize) -> Option<Keypoint<T>> {
        assert!(animal < self.n_animals() && frame < self.n_frames && bodypart < self.n_bodyparts());
        self.keypoints[(animal * self.n_frames + frame) * self.n_bodyparts() + bodypart]
    }

    pub fn point(&self, animal: usize, frame: usize, bodypart: usize) -> Option<Vec2<T>> {
        self.keypoint(animal, frame, bodypart).map(|k| k.pos())
    }

    pub fn missing_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_none()).count()
    }

    /// Applies `f` to every present position (translation, rotation, ...) and
    /// revalidates against `frame_size`.
    pub fn map_positions(
        &self,
        frame_size: (T, T),
        mut f: impl FnMut(Vec2<T>) -> Vec2<T>,
    ) -> Result<Dataset<T>, DataError> {
        let mut parts = self.clone().into_parts();
        parts.frame_size = frame_size;
        for kp in parts.keypoints.iter_mut().flatten() {
            let p = f(kp.pos());
            kp.x = p.x;
            kp.y = p.y;
        }
        Dataset::new(parts)
    }
}

// ---------------------------------------------------------------------------
// Keypoint CSV / dataset JSON
// ---------------------------------------------------------------------------

const CSV_COLUMNS: [&str; 6] = ["animal", "frame", "bodypart", "x", "y", "confidence"];

fn parse_cell<T: Scalar>(raw: &str, line: u64, column: &str) -> Result<Option<T>, DataError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| DataError::Schema {
        line,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Schema { line, column: column.into(), message: "value must be finite".into() });
    }
    Ok(Some(T::lit(v)))
}

fn infer_frame_size<T: Scalar>(keypoints: &[Option<Keypoint<T>>]) -> (T, T) {
    let (mut w, mut h) = (T::one(), T::one());
    for kp in keypoints.iter().flatten() {
        w = w.max(kp.x.ceil());
        h = h.max(kp.y.ceil());
    }
    (w, h)
}

pub fn parse_keypoint_csv<T: Scalar>(text: &str, opts: &LoadOptions<T>) -> Result<Loaded<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Schema { line: 1, column: "header".into(), message: e.to_string() })?
        .clone();
    let mut col = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if !CSV_COLUMNS.contains(&h) {
            return Err(DataError::Schema { line: 1, column: h.into(), message: "unexpected column".into() });
        }
        if col.insert(h.to_string(), i).is_some() {
            return Err(DataError::Duplicate { kind: "column", name: h.into(), line: Some(1) });
        }
    }
    for required in &CSV_COLUMNS[..5] {
        if !col.contains_key(*required) {
            return Err(DataError::Schema {
                line: 1,
                column: required.to_string(),
                message: "required column missing".into(),
            });
        }
    }
    let conf_col = col.get("confidence").copied();

    let mut animals: Vec<String> = Vec::new();
    let mut bodyparts: Vec<String> = Vec::new();
    let mut animal_idx: HashMap<String, usize> = HashMap::new();
    let mut bodypart_idx: HashMap<String, usize> = HashMap::new();
    let mut rows: HashMap<(usize, usize, usize), Option<Keypoint<T>>> = HashMap::new();
    let mut max_frame = 0usize;

    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Schema {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            column: "row".into(),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |name: &str| rec.get(col[name]).unwrap_or("");
        let animal = get("animal");
        let bodypart = get("bodypart");
        for (name, v) in [("animal", animal), ("bodypart", bodypart)] {
            if v.is_empty() {
                return Err(DataError::Schema { line, column: name.into(), message: "empty name".into() });
            }
        }
        let frame: usize = get("frame").parse().map_err(|_| DataError::Schema {
            line,
            column: "frame".into(),
            message: format!("`{}` is not a non-negative integer", get("frame")),
        })?;
        let x = parse_cell::<T>(get("x"), line, "x")?;
        let y = parse_cell::<T>(get("y"), line, "y")?;
        let confidence = match conf_col {
            Some(c) => parse_cell::<T>(rec.get(c).unwrap_or(""), line, "confidence")?,
            None => None,
        };
        if let Some(c) = confidence {
            if !(c >= T::zero() && c <= T::one()) {
                return Err(DataError::Schema {
                    line,
                    column: "confidence".into(),
                    message: "confidence must lie in [0, 1]".into(),
                });
            }
        }
        let a = *animal_idx.entry(animal.to_string()).or_insert_with(|| {
            animals.push(animal.to_string());
            animals.len() - 1
        });
        let b = *bodypart_idx.entry(bodypart.to_string()).or_insert_with(|| {
            bodyparts.push(bodypart.to_string());
            bodyparts.len() - 1
        });
        let kp = match (x, y) {
            (Some(x), Some(y)) => Some(Keypoint { x, y, confidence }),
            _ => None,
        };
        if rows.insert((a, frame, b), kp).is_some() {
            return Err(DataError::Duplicate {
                kind: "bodypart",
                name: format!("{bodypart} (animal {animal}, frame {frame})"),
                line: Some(line),
            });
        }
        max_frame = max_frame.max(frame);
    }
    if rows.is_empty() {
        return Err(DataError::Dimension("no keypoint rows".into()));
    }
    let n_frames = max_frame + 1;
    let mut keypoints = Vec::with_capacity(animals.len() * n_frames * bodyparts.len());
    for a in 0..animals.len() {
        for f in 0..n_frames {
            for b in 0..bodyparts.len() {
                match rows.get(&(a, f, b)) {
                    Some(kp) => keypoints.push(*kp),
                    None => {
                        return Err(DataError::Dimension(format!(
                            "no row for animal `{}`, frame {f}, bodypart `{}`",
                            animals[a], bodyparts[b]
                        )))
                    }
                }
            }
        }
    }
    let frame_size = opts.frame_size.unwrap_or_else(|| infer_frame_size(&keypoints));
    Dataset::validate(
        DatasetParts {
            id: opts.id.clone().unwrap_or_else(|| "dataset".into()),
            n_frames,
            fps: opts.fps,
            frame_size,
            animal_ids: animals,
            bodypart_names: bodyparts,
            keypoints,
            px_per_cm: opts.px_per_cm,
        },
        opts.bounds,
        opts.confidence_threshold,
    )
}

pub fn keypoint_csv_string<T: Scalar>(d: &Dataset<T>) -> String {
    let mut out = String::from("animal,frame,bodypart,x,y,confidence\n");
    let fmt = |v: Option<T>| v.map(|v| v.to_string()).unwrap_or_default();
    for (a, animal) in d.animal_ids.iter().enumerate() {
        for f in 0..d.n_frames {
            for (b, bp) in d.bodypart_names.iter().enumerate() {
                let kp = d.keypoint(a, f, b);
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    csv_field(animal),
                    f,
                    csv_field(bp),
                    fmt(kp.map(|k| k.x)),
                    fmt(kp.map(|k| k.y)),
                    fmt(kp.and_then(|k| k.confidence)),
                ));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetJson<T> {
    id: String,
    n_frames: usize,
    frame_size: (T, T),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    px_per_cm: Option<T>,
    animals: Vec<String>,
    bodyparts: Vec<String>,
    keypoints: Vec<KeypointRow<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointRow<T> {
    animal: String,
    frame: usize,
    bodypart: String,
    x: Option<T>,
    y: Option<T>,
    #[serde(default)]
    confidence: Option<T>,
}

pub fn dataset_json_string<T: Scalar>(d: &Dataset<T>) -> String {
    let mut rows = Vec::with_capacity(d.keypoints.len());
    for (a, animal) in d.animal_ids.iter().enumerate() {
        for f in 0..d.n_frames {
            for (b, bp) in d.bodypart_names.iter().enumerate() {
                let kp = d.keypoint(a, f, b);
                rows.push(KeypointRow {
                    animal: animal.clone(),
                    frame: f,
                    bodypart: bp.clone(),
                    x: kp.map(|k| k.x),
                    y: kp.map(|k| k.y),
                    confidence: kp.and_then(|k| k.confidence),
                });
            }
        }
    }
    let doc = DatasetJson {
        id: d.id.clone(),
        n_frames: d.n_frames,
        frame_size: d.frame_size,
        fps: d.fps,
        px_per_cm: d.px_per_cm,
        animals: d.animal_ids.clone(),
        bodyparts: d.bodypart_names.clone(),
        keypoints: rows,
    };
    serde_json::to_string(&doc).expect("dataset serializes")
}

pub fn parse_dataset_json<T: Scalar>(text: &str, opts: &LoadOptions<T>) -> Result<Loaded<T>, DataError> {
    let doc: DatasetJson<T> = serde_json::from_str(text)?;
    check_unique("animal", &doc.animals)?;
    check_unique("bodypart", &doc.bodyparts)?;
    let nb = doc.bodyparts.len();
    let nf = doc.n_frames;
    let a_idx: HashMap<&str, usize> = doc.animals.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let b_idx: HashMap<&str, usize> = doc.bodyparts.iter().enumerate().map(|(i, b)| (b.as_str(), i)).collect();
    let mut keypoints: Vec<Option<Option<Keypoint<T>>>> = vec![None; doc.animals.len() * nf * nb];
    for (row_no, row) in doc.keypoints.iter().enumerate() {
        let line = row_no as u64 + 1;
        let a = *a_idx.get(row.animal.as_str()).ok_or_else(|| DataError::Schema {
            line,
            column: "animal".into(),
            message: format!("`{}` not listed in `animals`", row.animal),
        })?;
        let b = *b_idx.get(row.bodypart.as_str()).ok_or_else(|| DataError::Schema {
            line,
            column: "bodypart".into(),
            message: format!("`{}` not listed in `bodyparts`", row.bodypart),
        })?;
        if row.frame >= nf {
            return Err(DataError::Dimension(format!("row {line}: frame {} >= n_frames {nf}", row.frame)));
        }
        let kp = match (row.x, row.y) {
            (Some(x), Some(y)) => Some(Keypoint { x, y, confidence: row.confidence }),
            _ => None,
        };
        let slot = &mut keypoints[(a * nf + row.frame) * nb + b];
        if slot.is_some() {
            return Err(DataError::Duplicate { kind: "bodypart", name: row.bodypart.clone(), line: Some(line) });
        }
        *slot = Some(kp);
    }
    let keypoints = keypoints
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            k.ok_or_else(|| {
                DataError::Dimension(format!(
                    "no row for animal `{}`, frame {}, bodypart `{}`",
                    doc.animals[i / (nf * nb)],
                    (i / nb) % nf,
                    doc.bodyparts[i % nb]
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::validate(
        DatasetParts {
            id: doc.id,
            n_frames: nf,
            fps: doc.fps,
            frame_size: doc.frame_size,
            animal_ids: doc.animals,
            bodypart_names: doc.bodyparts,
            keypoints,
            px_per_cm: doc.px_per_cm,
        },
        opts.bounds,
        opts.confidence_threshold,
    )
}

/// Loads with default options; the dataset id defaults to the file stem.
pub fn load_dataset<T: Scalar>(path: &Path, format: DataFormat) -> Result<Dataset<T>, DataError> {
    load_dataset_with(path, format, &LoadOptions::default()).map(|l| l.dataset)
}

pub fn load_dataset_with<T: Scalar>(
    path: &Path,
    format: DataFormat,
    opts: &LoadOptions<T>,
) -> Result<Loaded<T>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    match format {
        DataFormat::Csv => {
            let mut opts = opts.clone();
            if opts.id.is_none() {
                opts.id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            parse_keypoint_csv(&text, &opts)
        }
        DataFormat::Json => parse_dataset_json(&text, opts),
    }
}

pub fn save_dataset<T: Scalar>(d: &Dataset<T>, path: &Path, format: DataFormat) -> Result<(), DataError> {
    let text = match format {
        DataFormat::Csv => keypoint_csv_string(d),
        DataFormat::Json => dataset_json_string(d),
    };
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Scene objects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    StaticObject,
    Roi,
    AnimalProxy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry<T> {
    Polygon(Polygon<T>),
    Mask(Mask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject<T> {
    pub name: String,
    pub kind: ObjectKind,
    pub geometry: Geometry<T>,
}

impl<T: Scalar> SceneObject<T> {
    pub fn polygon(name: &str, kind: ObjectKind, vertices: Vec<Vec2<T>>) -> Result<Self, DataError> {
        let poly = Polygon::new(vertices).map_err(|source| DataError::Geometry { name: name.into(), source })?;
        Ok(SceneObject { name: name.into(), kind, geometry: Geometry::Polygon(poly) })
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        match &self.geometry {
            Geometry::Polygon(poly) => poly.contains(p),
            Geometry::Mask(m) => m.contains(p),
        }
    }

    pub fn bbox(&self) -> BBox<T> {
        match &self.geometry {
            Geometry::Polygon(poly) => poly.bbox(),
            Geometry::Mask(m) => m.bbox(),
        }
    }

    pub fn centroid(&self) -> Vec2<T> {
        match &self.geometry {
            Geometry::Polygon(poly) => poly.centroid(),
            Geometry::Mask(m) => m.centroid(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectJson<T> {
    name: String,
    kind: ObjectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<(T, T)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Mask>,
}

impl<T: Scalar> Serialize for SceneObject<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (polygon, mask) = match &self.geometry {
            Geometry::Polygon(p) => (Some(p.vertices().iter().map(|v| (v.x, v.y)).collect()), None),
            Geometry::Mask(m) => (None, Some(m.clone())),
        };
        ObjectJson { name: self.name.clone(), kind: self.kind, polygon, mask }.serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for SceneObject<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = ObjectJson::<T>::deserialize(de)?;
        let geometry = match (raw.polygon, raw.mask) {
            (Some(p), None) => Geometry::Polygon(
                Polygon::new(p.into_iter().map(|(x, y)| Vec2::new(x, y)).collect())
                    .map_err(|e| D::Error::custom(format!("object `{}`: {e}", raw.name)))?,
            ),
            (None, Some(m)) => Geometry::Mask(
                m.validated().map_err(|e| D::Error::custom(format!("object `{}`: {e}", raw.name)))?,
            ),
            _ => return Err(D::Error::custom(format!("object `{}` needs exactly one of `polygon` or `mask`", raw.name))),
        };
        Ok(SceneObject { name: raw.name, kind: raw.kind, geometry })
    }
}

/// Named scene objects, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectSet<T> {
    objects: BTreeMap<String, SceneObject<T>>,
}

impl<T: Scalar> ObjectSet<T> {
    pub fn new() -> Self {
        ObjectSet { objects: BTreeMap::new() }
    }

    pub fn from_objects(objects: impl IntoIterator<Item = SceneObject<T>>) -> Result<Self, DataError> {
        let mut set = ObjectSet::new();
        for o in objects {
            set.insert(o)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, object: SceneObject<T>) -> Result<(), DataError> {
        if self.objects.contains_key(&object.name) {
            return Err(DataError::Duplicate { kind: "object", name: object.name, line: None });
        }
        self.objects.insert(object.name.clone(), object);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SceneObject<T>> {
        self.objects.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&SceneObject<T>, DataError> {
        self.get(name).ok_or_else(|| DataError::UnknownObject { name: name.into(), known: self.names() })
    }

    pub fn names(&self) -> Vec<String> {
        self.objects.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SceneObject<T>> {
        self.objects.values()
    }

    /// Returns a new set with an ROI added; the vertex order is normalized.
    pub fn add_roi(&self, name: &str, polygon: Vec<Vec2<T>>) -> Result<ObjectSet<T>, DataError> {
        if self.objects.contains_key(name) {
            return Err(DataError::Duplicate { kind: "object", name: name.into(), line: None });
        }
        let roi = SceneObject::polygon(name, ObjectKind::Roi, polygon)?;
        let mut next = self.clone();
        next.objects.insert(name.to_string(), roi);
        Ok(next)
    }
}

pub fn get_object_names<T: Scalar>(objects: &ObjectSet<T>) -> Vec<String> {
    objects.names()
}

#[derive(Serialize, Deserialize)]
struct ObjectsFile<T: Scalar> {
    #[serde(bound(deserialize = "T: Scalar"))]
    objects: Vec<SceneObject<T>>,
}

impl<T: Scalar> Serialize for ObjectSet<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ObjectsFile { objects: self.objects.values().cloned().collect() }.serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ObjectSet<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = ObjectsFile::<T>::deserialize(de)?;
        ObjectSet::from_objects(raw.objects).map_err(serde::de::Error::custom)
    }
}

pub fn parse_objects_json<T: Scalar>(text: &str) -> Result<ObjectSet<T>, DataError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_objects<T: Scalar>(path: &Path) -> Result<ObjectSet<T>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_objects_json(&text)
}

pub fn save_objects<T: Scalar>(objects: &ObjectSet<T>, path: &Path) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(objects)?;
    fs::write(path, text).map_err(io_err(path))
}
