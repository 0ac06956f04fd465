//! Behavior queries over a dataset, the built-in task programs, frame-level
//! F1 scoring and SVG export.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::events::{
    add_sequential_events, add_simultaneous_events, events_from_mask, negate_events, postprocess, EventDict, EventError,
    EventSeq, PostProcessSpec, SubjectKey,
};
use crate::kinematics::{center_accel_magnitude, center_speed, KinematicsError};
use crate::relations::{
    animal_animal_relation, animal_object_relation, BodypartSelection, ComparisonParseError, ComparisonSpec, Condition,
    Orientation, RelationConfig, RelationError, RelationKind, UnknownRelation,
};
use crate::scalar::Scalar;
use crate::trackdata::{DataError, Dataset, ObjectSet};

#[derive(Debug, thiserror::Error)]
pub enum BehaviorError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Comparison(#[from] ComparisonParseError),
    #[error(transparent)]
    UnknownRelation(#[from] UnknownRelation),
    #[error("relation `{0}` is numeric and needs a comparison")]
    MissingComparison(RelationKind),
    #[error("relation `{0}` is boolean and takes no comparison")]
    UnexpectedComparison(RelationKind),
    #[error("condition `{condition}` does not apply to relation `{relation}`")]
    ConditionMismatch { relation: RelationKind, condition: String },
    #[error("{what}: {left} entries against {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("social queries need at least 2 animals, the dataset has {0}")]
    TooFewAnimals(usize),
    #[error("unknown state `{0}`; expected speed or acceleration")]
    UnknownState(String),
    #[error("unknown builtin `{name}`; known: {known:?}")]
    UnknownBuiltin { name: String, known: Vec<String> },
    #[error("unknown behavior `{name}`; known: {known:?}")]
    UnknownBehavior { name: String, known: Vec<String> },
    #[error("parameter `{key}`: {message}")]
    BadParam { key: String, message: String },
    #[error("labels cover {got} frames, events cover {expected}")]
    LabelLength { expected: usize, got: usize },
    #[error("labels line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Speed,
    Acceleration,
}

impl StateKind {
    pub fn name(self) -> &'static str {
        match self {
            StateKind::Speed => "speed",
            StateKind::Acceleration => "acceleration",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateKind {
    type Err = BehaviorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speed" => Ok(StateKind::Speed),
            "acceleration" => Ok(StateKind::Acceleration),
            _ => Err(BehaviorError::UnknownState(s.to_string())),
        }
    }
}

/// Ordered pairs `(focal, target)` of distinct animals, in animal order.
pub fn ordered_pairs<T: Scalar>(d: &Dataset<T>) -> Vec<(String, String)> {
    let ids = d.animal_ids();
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1));
    for a in ids {
        for b in ids {
            if a != b {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

fn check_comparison<T: Scalar>(relation: RelationKind, comparison: Option<&ComparisonSpec<T>>) -> Result<(), BehaviorError> {
    match (relation.is_numeric(), comparison.is_some()) {
        (true, false) => Err(BehaviorError::MissingComparison(relation)),
        (false, true) => Err(BehaviorError::UnexpectedComparison(relation)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectQuery<T> {
    pub object: String,
    pub relation: RelationKind,
    #[serde(default)]
    pub comparison: Option<ComparisonSpec<T>>,
    #[serde(default)]
    pub bodyparts: BodypartSelection,
    #[serde(default)]
    pub negate: bool,
    #[serde(default)]
    pub post: PostProcessSpec,
}

impl<T: Scalar> ObjectQuery<T> {
    pub fn new(object: &str, relation: RelationKind) -> Self {
        ObjectQuery {
            object: object.into(),
            relation,
            comparison: None,
            bodyparts: BodypartSelection::All,
            negate: false,
            post: PostProcessSpec::default(),
        }
    }
}

/// Every animal gets a key, even when its sequence is empty.
pub fn animals_object_events<T: Scalar>(
    d: &Dataset<T>,
    objects: &ObjectSet<T>,
    q: &ObjectQuery<T>,
    cfg: &RelationConfig<T>,
) -> Result<EventDict, BehaviorError> {
    let object = objects.require(&q.object)?;
    check_comparison(q.relation, q.comparison.as_ref())?;
    let condition = q.comparison.map(Condition::Compare);
    let mut out = EventDict::new(d.n_frames());
    for animal in d.animal_ids() {
        let table = animal_object_relation(d, object, animal, q.relation, &q.bodyparts, cfg)?;
        let mut seq = events_from_mask(&table.mask(condition.as_ref()));
        if q.negate {
            seq = seq.complement(d.n_frames());
        }
        out.insert(SubjectKey::animal(animal), q.post.apply(&seq))?;
    }
    Ok(out)
}

fn state_mask<T: Scalar>(d: &Dataset<T>, a: usize, state: StateKind, cmp: &ComparisonSpec<T>) -> Result<Vec<bool>, BehaviorError> {
    let series = match state {
        StateKind::Speed => center_speed(d, a)?,
        StateKind::Acceleration => center_accel_magnitude(d, a)?,
    };
    Ok(series.into_iter().map(|v| v.is_some_and(|x| cmp.holds(x))).collect())
}

/// Thresholds the center speed or acceleration magnitude of every animal.
pub fn animals_state_events<T: Scalar>(
    d: &Dataset<T>,
    state: StateKind,
    comparison: &ComparisonSpec<T>,
    post: PostProcessSpec,
) -> Result<EventDict, BehaviorError> {
    let mut out = EventDict::new(d.n_frames());
    for (a, animal) in d.animal_ids().iter().enumerate() {
        let seq = events_from_mask(&state_mask(d, a, state, comparison)?);
        out.insert(SubjectKey::animal(animal), post.apply(&seq))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialQuery<T> {
    pub relations: Vec<(RelationKind, Condition<T>)>,
    #[serde(default)]
    pub states: Vec<(StateKind, ComparisonSpec<T>)>,
    #[serde(default)]
    pub bodyparts: BodypartSelection,
    #[serde(default)]
    pub other_bodyparts: BodypartSelection,
    #[serde(default)]
    pub post: PostProcessSpec,
}

impl<T: Scalar> SocialQuery<T> {
    /// Builds a query from parallel string lists, e.g.
    /// `["closest_distance", "orientation"]` with `["<40", "==front"]`.
    pub fn from_lists<S: AsRef<str>>(
        relations: &[S],
        comparisons: &[S],
        state_relations: &[S],
        state_comparisons: &[S],
    ) -> Result<Self, BehaviorError> {
        if relations.len() != comparisons.len() {
            return Err(BehaviorError::LengthMismatch {
                what: "relations vs comparisons",
                left: relations.len(),
                right: comparisons.len(),
            });
        }
        if state_relations.len() != state_comparisons.len() {
            return Err(BehaviorError::LengthMismatch {
                what: "state relations vs state comparisons",
                left: state_relations.len(),
                right: state_comparisons.len(),
            });
        }
        let mut rels = Vec::new();
        for (r, c) in relations.iter().zip(comparisons) {
            let kind: RelationKind = r.as_ref().parse()?;
            rels.push((kind, Condition::parse(c.as_ref())?));
        }
        let mut states = Vec::new();
        for (s, c) in state_relations.iter().zip(state_comparisons) {
            states.push((s.as_ref().parse()?, crate::relations::parse_comparison(c.as_ref())?));
        }
        Ok(SocialQuery {
            relations: rels,
            states,
            bodyparts: BodypartSelection::All,
            other_bodyparts: BodypartSelection::All,
            post: PostProcessSpec::default(),
        })
    }
}

fn relation_mask<T: Scalar>(
    d: &Dataset<T>,
    focal: &str,
    other: &str,
    relation: RelationKind,
    condition: &Condition<T>,
    bodyparts: &BodypartSelection,
    other_bodyparts: &BodypartSelection,
    cfg: &RelationConfig<T>,
) -> Result<Vec<bool>, BehaviorError> {
    if !condition.fits(relation) {
        return Err(BehaviorError::ConditionMismatch { relation, condition: condition.to_string() });
    }
    let table = animal_animal_relation(d, focal, other, relation, bodyparts, other_bodyparts, cfg)?;
    Ok(table.mask(Some(condition)))
}

/// Conjunction of pairwise relation conditions and focal-animal state
/// conditions for every ordered pair, then post-processing.
pub fn animals_social_events<T: Scalar>(
    d: &Dataset<T>,
    q: &SocialQuery<T>,
    cfg: &RelationConfig<T>,
) -> Result<EventDict, BehaviorError> {
    if d.n_animals() < 2 {
        return Err(BehaviorError::TooFewAnimals(d.n_animals()));
    }
    let mut state_masks = Vec::with_capacity(d.n_animals());
    for a in 0..d.n_animals() {
        let mut m = vec![true; d.n_frames()];
        for (state, cmp) in &q.states {
            and_into(&mut m, &state_mask(d, a, *state, cmp)?);
        }
        state_masks.push(m);
    }
    let mut out = EventDict::new(d.n_frames());
    for (focal, other) in ordered_pairs(d) {
        let fi = d.animal_index(&focal).expect("pair from dataset");
        let mut m = state_masks[fi].clone();
        for (rel, cond) in &q.relations {
            and_into(&mut m, &relation_mask(d, &focal, &other, *rel, cond, &q.bodyparts, &q.other_bodyparts, cfg)?);
        }
        out.insert(SubjectKey::pair(&focal, &other), q.post.apply(&events_from_mask(&m)))?;
    }
    Ok(out)
}

fn and_into(acc: &mut [bool], m: &[bool]) {
    for (a, b) in acc.iter_mut().zip(m) {
        *a &= *b;
    }
}

/// Outside bouts immediately followed by inside bouts.
pub fn enter_object<T: Scalar>(
    d: &Dataset<T>,
    objects: &ObjectSet<T>,
    object: &str,
    bodyparts: &BodypartSelection,
    post: PostProcessSpec,
    cfg: &RelationConfig<T>,
) -> Result<EventDict, BehaviorError> {
    let mut q = ObjectQuery::new(object, RelationKind::Overlap);
    q.bodyparts = bodyparts.clone();
    let inside = animals_object_events(d, objects, &q, cfg)?;
    q.negate = true;
    let outside = animals_object_events(d, objects, &q, cfg)?;
    Ok(postprocess(&add_sequential_events(&outside, &inside, 0)?, post))
}

/// Executable behavior plan. Leaves are single predicates; the rest compose
/// event dictionaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan<T> {
    Object {
        object: String,
        relation: RelationKind,
        comparison: Option<ComparisonSpec<T>>,
        bodyparts: BodypartSelection,
    },
    Social {
        relation: RelationKind,
        condition: Condition<T>,
        bodyparts: BodypartSelection,
        other_bodyparts: BodypartSelection,
    },
    State {
        state: StateKind,
        comparison: ComparisonSpec<T>,
    },
    And(Vec<Plan<T>>),
    Then {
        first: Box<Plan<T>>,
        second: Box<Plan<T>>,
        max_gap: usize,
    },
    Not(Box<Plan<T>>),
    Post {
        inner: Box<Plan<T>>,
        spec: PostProcessSpec,
    },
}

impl<T: Scalar> Plan<T> {
    /// Whether the plan yields ordered-pair keys.
    pub fn is_social(&self) -> bool {
        match self {
            Plan::Social { .. } => true,
            Plan::Object { .. } | Plan::State { .. } => false,
            Plan::And(ps) => ps.iter().any(Plan::is_social),
            Plan::Then { first, second, .. } => first.is_social() || second.is_social(),
            Plan::Not(p) | Plan::Post { inner: p, .. } => p.is_social(),
        }
    }

    pub fn with_post(self, spec: PostProcessSpec) -> Self {
        if spec.is_noop() {
            self
        } else {
            Plan::Post { inner: Box::new(self), spec }
        }
    }

    pub fn execute(&self, d: &Dataset<T>, objects: &ObjectSet<T>, cfg: &RelationConfig<T>) -> Result<EventDict, BehaviorError> {
        if self.is_social() && d.n_animals() < 2 {
            return Err(BehaviorError::TooFewAnimals(d.n_animals()));
        }
        let pairs = ordered_pairs(d);
        self.exec(d, objects, cfg, &pairs)
    }

    fn exec(
        &self,
        d: &Dataset<T>,
        objects: &ObjectSet<T>,
        cfg: &RelationConfig<T>,
        pairs: &[(String, String)],
    ) -> Result<EventDict, BehaviorError> {
        match self {
            Plan::Object { object, relation, comparison, bodyparts } => {
                let q = ObjectQuery {
                    object: object.clone(),
                    relation: *relation,
                    comparison: *comparison,
                    bodyparts: bodyparts.clone(),
                    negate: false,
                    post: PostProcessSpec::default(),
                };
                animals_object_events(d, objects, &q, cfg)
            }
            Plan::Social { relation, condition, bodyparts, other_bodyparts } => {
                let q = SocialQuery {
                    relations: vec![(*relation, *condition)],
                    states: Vec::new(),
                    bodyparts: bodyparts.clone(),
                    other_bodyparts: other_bodyparts.clone(),
                    post: PostProcessSpec::default(),
                };
                animals_social_events(d, &q, cfg)
            }
            Plan::State { state, comparison } => animals_state_events(d, *state, comparison, PostProcessSpec::default()),
            Plan::And(ps) => {
                let lift = self.is_social();
                let mut dicts = Vec::with_capacity(ps.len());
                for p in ps {
                    let r = p.exec(d, objects, cfg, pairs)?;
                    dicts.push(if lift && !p.is_social() { r.lift_to_pairs(pairs) } else { r });
                }
                match dicts.len() {
                    0 => Ok(EventDict::new(d.n_frames())),
                    1 => Ok(dicts.pop().expect("one operand")),
                    _ => Ok(add_simultaneous_events(&dicts.iter().collect::<Vec<_>>())?),
                }
            }
            Plan::Then { first, second, max_gap } => {
                let lift = self.is_social();
                let prep = |p: &Plan<T>| -> Result<EventDict, BehaviorError> {
                    let r = p.exec(d, objects, cfg, pairs)?;
                    Ok(if lift && !p.is_social() { r.lift_to_pairs(pairs) } else { r })
                };
                Ok(add_sequential_events(&prep(first)?, &prep(second)?, *max_gap)?)
            }
            Plan::Not(p) => Ok(negate_events(&p.exec(d, objects, cfg, pairs)?, d.n_frames())),
            Plan::Post { inner, spec } => Ok(postprocess(&inner.exec(d, objects, cfg, pairs)?, *spec)),
        }
    }
}

/// String-valued overrides such as `smooth=10` or `bodyparts=nose,neck`.
pub type ParamMap = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKind {
    MabeChase,
    MabeClose,
    MabeContact,
    MabeHuddle,
    MabeOralEarContact,
    MabeWatching,
    EpmOpenArm,
    EpmClosedArm,
    EpmHeadDips,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 9] = [
        BuiltinKind::MabeChase,
        BuiltinKind::MabeClose,
        BuiltinKind::MabeContact,
        BuiltinKind::MabeHuddle,
        BuiltinKind::MabeOralEarContact,
        BuiltinKind::MabeWatching,
        BuiltinKind::EpmOpenArm,
        BuiltinKind::EpmClosedArm,
        BuiltinKind::EpmHeadDips,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinKind::MabeChase => "mabe_chase",
            BuiltinKind::MabeClose => "mabe_close",
            BuiltinKind::MabeContact => "mabe_contact",
            BuiltinKind::MabeHuddle => "mabe_huddle",
            BuiltinKind::MabeOralEarContact => "mabe_oral_ear_contact",
            BuiltinKind::MabeWatching => "mabe_watching",
            BuiltinKind::EpmOpenArm => "epm_open_arm",
            BuiltinKind::EpmClosedArm => "epm_closed_arm",
            BuiltinKind::EpmHeadDips => "epm_head_dips",
        }
    }

    pub fn names() -> Vec<String> {
        BuiltinKind::ALL.iter().map(|k| k.name().to_string()).collect()
    }

    /// Default parameters; every key here is overridable and no other key is accepted.
    pub fn defaults(self) -> ParamMap {
        let kv: &[(&str, &str)] = match self {
            BuiltinKind::MabeChase => &[("distance", "40"), ("speed", "3.4"), ("cone", "90"), ("smooth", "25"), ("min", "30")],
            BuiltinKind::MabeClose => &[("distance", "24"), ("smooth", "0"), ("min", "5")],
            BuiltinKind::MabeContact => &[("distance", "12"), ("smooth", "11"), ("min", "5")],
            BuiltinKind::MabeHuddle => &[("distance", "50"), ("relative_speed", "4"), ("smooth", "61"), ("min", "75")],
            BuiltinKind::MabeOralEarContact => &[
                ("distance", "10"),
                ("bodyparts", "nose"),
                ("other_bodyparts", "left_ear,right_ear"),
                ("smooth", "5"),
                ("min", "15"),
            ],
            BuiltinKind::MabeWatching => &[
                ("min_distance", "50"),
                ("max_distance", "260"),
                ("angle", "15"),
                ("angle_kind", "view_angle"),
                ("smooth", "15"),
                ("min", "100"),
            ],
            BuiltinKind::EpmOpenArm => &[("object", "open arm"), ("bodyparts", "all"), ("smooth", "0"), ("min", "0")],
            BuiltinKind::EpmClosedArm => &[("object", "closed arm"), ("bodyparts", "all"), ("smooth", "0"), ("min", "0")],
            BuiltinKind::EpmHeadDips => &[
                ("object", "ROI0"),
                ("inside", "mouse_center,neck"),
                ("outside", "head_midpoint"),
                ("smooth", "0"),
                ("min", "0"),
            ],
        };
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinKind {
    type Err = BehaviorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BehaviorError::UnknownBuiltin { name: s.into(), known: BuiltinKind::names() })
    }
}

struct Params {
    merged: ParamMap,
}

impl Params {
    fn new(kind: BuiltinKind, overrides: &ParamMap) -> Result<Self, BehaviorError> {
        let mut merged = kind.defaults();
        for (k, v) in overrides {
            if !merged.contains_key(k) {
                let known: Vec<_> = merged.keys().cloned().collect();
                return Err(BehaviorError::BadParam {
                    key: k.clone(),
                    message: format!("not a parameter of {kind}; known: {known:?}"),
                });
            }
            merged.insert(k.clone(), v.clone());
        }
        Ok(Params { merged })
    }

    fn raw(&self, key: &str) -> &str {
        self.merged.get(key).map(String::as_str).expect("defaults list every key")
    }

    fn real<T: Scalar>(&self, key: &str) -> Result<T, BehaviorError> {
        let raw = self.raw(key);
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(T::lit(v)),
            _ => Err(BehaviorError::BadParam { key: key.into(), message: format!("`{raw}` is not a finite number") }),
        }
    }

    fn count(&self, key: &str) -> Result<usize, BehaviorError> {
        let raw = self.raw(key);
        raw.trim()
            .parse()
            .map_err(|_| BehaviorError::BadParam { key: key.into(), message: format!("`{raw}` is not a frame count") })
    }

    fn parts(&self, key: &str) -> BodypartSelection {
        BodypartSelection::from_list(
            self.raw(key).split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        )
    }

    fn post(&self) -> Result<PostProcessSpec, BehaviorError> {
        Ok(PostProcessSpec::new(self.count("smooth")?, self.count("min")?))
    }
}

fn social<T: Scalar>(relation: RelationKind, condition: Condition<T>) -> Plan<T> {
    Plan::Social { relation, condition, bodyparts: BodypartSelection::All, other_bodyparts: BodypartSelection::All }
}

fn lt<T: Scalar>(v: T) -> Condition<T> {
    Condition::Compare(ComparisonSpec::new(crate::relations::CmpOp::Lt, v))
}

fn gt<T: Scalar>(v: T) -> Condition<T> {
    Condition::Compare(ComparisonSpec::new(crate::relations::CmpOp::Gt, v))
}

fn overlap<T: Scalar>(object: &str, bodyparts: BodypartSelection) -> Plan<T> {
    Plan::Object { object: object.into(), relation: RelationKind::Overlap, comparison: None, bodyparts }
}

/// The plan and relation settings of a builtin after applying overrides.
pub fn builtin_program<T: Scalar>(kind: BuiltinKind, overrides: &ParamMap) -> Result<BehaviorProgram<T>, BehaviorError> {
    let p = Params::new(kind, overrides)?;
    let mut cfg = RelationConfig::default();
    let plan = match kind {
        BuiltinKind::MabeChase => {
            cfg.cone_half_angle = p.real("cone")?;
            Plan::And(vec![
                social(RelationKind::ClosestDistance, lt(p.real("distance")?)),
                social(RelationKind::Orientation, Condition::Orientation { negated: false, value: Orientation::Front }),
                Plan::State {
                    state: StateKind::Speed,
                    comparison: ComparisonSpec::new(crate::relations::CmpOp::Gt, p.real("speed")?),
                },
            ])
        }
        BuiltinKind::MabeClose | BuiltinKind::MabeContact => social(RelationKind::ClosestDistance, lt(p.real("distance")?)),
        BuiltinKind::MabeHuddle => Plan::And(vec![
            social(RelationKind::Distance, lt(p.real("distance")?)),
            social(RelationKind::RelativeSpeed, lt(p.real("relative_speed")?)),
        ]),
        BuiltinKind::MabeOralEarContact => Plan::Social {
            relation: RelationKind::ClosestDistance,
            condition: lt(p.real("distance")?),
            bodyparts: p.parts("bodyparts"),
            other_bodyparts: p.parts("other_bodyparts"),
        },
        BuiltinKind::MabeWatching => {
            let angle_kind: RelationKind = p.raw("angle_kind").parse().ok().filter(|k| {
                matches!(k, RelationKind::ViewAngle | RelationKind::Angle | RelationKind::GazingAngle)
            }).ok_or_else(|| BehaviorError::BadParam {
                key: "angle_kind".into(),
                message: "expected view_angle, angle or gazing_angle".into(),
            })?;
            Plan::And(vec![
                social(RelationKind::Distance, gt(p.real("min_distance")?)),
                social(RelationKind::Distance, lt(p.real("max_distance")?)),
                social(angle_kind, lt(p.real("angle")?)),
            ])
        }
        BuiltinKind::EpmOpenArm | BuiltinKind::EpmClosedArm => overlap(p.raw("object"), p.parts("bodyparts")),
        BuiltinKind::EpmHeadDips => Plan::And(vec![
            overlap(p.raw("object"), p.parts("inside")),
            Plan::Not(Box::new(overlap(p.raw("object"), p.parts("outside")))),
        ]),
    };
    Ok(BehaviorProgram {
        name: kind.name().into(),
        plan: plan.with_post(p.post()?),
        config: cfg,
        params: p.merged,
        source: None,
    })
}

pub fn run_builtin<T: Scalar>(
    kind: BuiltinKind,
    d: &Dataset<T>,
    objects: &ObjectSet<T>,
    overrides: &ParamMap,
) -> Result<EventDict, BehaviorError> {
    builtin_program(kind, overrides)?.run(d, objects)
}

/// A named, executable behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProgram<T> {
    pub name: String,
    pub plan: Plan<T>,
    pub config: RelationConfig<T>,
    #[serde(default)]
    pub params: ParamMap,
    /// Definition text, when the program came from a script.
    #[serde(default)]
    pub source: Option<String>,
}

impl<T: Scalar> BehaviorProgram<T> {
    pub fn new(name: &str, plan: Plan<T>) -> Self {
        BehaviorProgram { name: name.into(), plan, config: RelationConfig::default(), params: ParamMap::new(), source: None }
    }

    pub fn run(&self, d: &Dataset<T>, objects: &ObjectSet<T>) -> Result<EventDict, BehaviorError> {
        self.plan.execute(d, objects, &self.config)
    }
}

/// User-defined programs, with builtin names reserved.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BehaviorRegistry<T> {
    programs: BTreeMap<String, BehaviorProgram<T>>,
}

impl<T: Scalar> BehaviorRegistry<T> {
    pub fn new() -> Self {
        BehaviorRegistry { programs: BTreeMap::new() }
    }

    pub fn is_builtin(name: &str) -> bool {
        BuiltinKind::ALL.iter().any(|k| k.name() == name)
    }

    /// Replaces any program of the same name. Builtin names are rejected.
    pub fn insert(&mut self, program: BehaviorProgram<T>) -> Result<Option<BehaviorProgram<T>>, BehaviorError> {
        if Self::is_builtin(&program.name) {
            return Err(BehaviorError::BadParam {
                key: program.name.clone(),
                message: "builtin behaviors cannot be redefined".into(),
            });
        }
        Ok(self.programs.insert(program.name.clone(), program))
    }

    pub fn get(&self, name: &str) -> Option<&BehaviorProgram<T>> {
        self.programs.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.programs.contains_key(name) || Self::is_builtin(name)
    }

    pub fn user_names(&self) -> Vec<String> {
        self.programs.keys().cloned().collect()
    }

    /// User programs followed by builtins.
    pub fn names(&self) -> Vec<String> {
        let mut v = self.user_names();
        v.extend(BuiltinKind::names());
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = &BehaviorProgram<T>> {
        self.programs.values()
    }

    /// A user program or a builtin with the given overrides.
    pub fn resolve(&self, name: &str, overrides: &ParamMap) -> Result<BehaviorProgram<T>, BehaviorError> {
        if let Some(p) = self.programs.get(name) {
            if let Some(k) = overrides.keys().next() {
                return Err(BehaviorError::BadParam {
                    key: k.clone(),
                    message: format!("`{name}` is a defined behavior and takes no parameters"),
                });
            }
            return Ok(p.clone());
        }
        match name.parse::<BuiltinKind>() {
            Ok(k) => builtin_program(k, overrides),
            Err(_) => Err(BehaviorError::UnknownBehavior { name: name.into(), known: self.names() }),
        }
    }

    pub fn run(
        &self,
        name: &str,
        overrides: &ParamMap,
        d: &Dataset<T>,
        objects: &ObjectSet<T>,
    ) -> Result<EventDict, BehaviorError> {
        self.resolve(name, overrides)?.run(d, objects)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_frames: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A frame is predicted positive when any subject's event covers it.
pub fn evaluate_f1(task: &str, pred: &EventDict, labels: &[bool]) -> Result<EvalReport, BehaviorError> {
    if labels.len() != pred.n_frames() {
        return Err(BehaviorError::LabelLength { expected: pred.n_frames(), got: labels.len() });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, g) in pred.any_mask().into_iter().zip(labels) {
        match (p, *g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(EvalReport { task: task.into(), f1, precision, recall, n_frames: labels.len() })
}

/// Parses `frame,label` rows; every frame `0..n` must appear exactly once.
pub fn parse_labels_csv(text: &str) -> Result<Vec<bool>, BehaviorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| BehaviorError::Labels { line: 1, message: e.to_string() })?;
    if header.len() != 2 || &header[0] != "frame" || &header[1] != "label" {
        return Err(BehaviorError::Labels { line: 1, message: "expected header `frame,label`".into() });
    }
    let mut rows: BTreeMap<usize, bool> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| BehaviorError::Labels { line, message: e.to_string() })?;
        let frame: usize = rec[0].parse().map_err(|_| BehaviorError::Labels { line, message: format!("bad frame `{}`", &rec[0]) })?;
        let label = match &rec[1] {
            "0" => false,
            "1" => true,
            other => return Err(BehaviorError::Labels { line, message: format!("label must be 0 or 1, got `{other}`") }),
        };
        if rows.insert(frame, label).is_some() {
            return Err(BehaviorError::Labels { line, message: format!("frame {frame} listed twice") });
        }
    }
    if let Some((i, f)) = rows.keys().enumerate().find(|(i, f)| i != *f) {
        return Err(BehaviorError::Labels { line: 0, message: format!("frame {i} missing (next listed frame is {f})") });
    }
    Ok(rows.into_values().collect())
}

const LABEL_WIDTH: f64 = 200.0;
const PLOT_WIDTH: f64 = 800.0;
const ROW_HEIGHT: f64 = 20.0;
const MARGIN: f64 = 10.0;
const AXIS_HEIGHT: f64 = 30.0;

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// One row per `(name, subject)`; ticks are `<rect class="tick">` with
/// `data-start`/`data-end` frame attributes.
pub fn render_ethogram(dicts: &[(String, &EventDict)]) -> Result<String, BehaviorError> {
    let n = dicts.first().map_or(0, |(_, d)| d.n_frames());
    if let Some((_, d)) = dicts.iter().find(|(_, d)| d.n_frames() != n) {
        return Err(EventError::FrameCountMismatch { expected: n, got: d.n_frames() }.into());
    }
    let rows: Vec<(String, &EventSeq)> = dicts
        .iter()
        .flat_map(|(name, d)| d.iter().map(move |(k, s)| (format!("{name} {k}"), s)))
        .collect();
    let width = LABEL_WIDTH + PLOT_WIDTH + 2.0 * MARGIN;
    let height = 2.0 * MARGIN + rows.len() as f64 * ROW_HEIGHT + AXIS_HEIGHT;
    let scale = if n == 0 { 0.0 } else { PLOT_WIDTH / n as f64 };
    let x0 = MARGIN + LABEL_WIDTH;
    let axis_y = MARGIN + rows.len() as f64 * ROW_HEIGHT;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" data-n-frames="{n}">"#
    )
    .unwrap();
    for (i, (label, seq)) in rows.iter().enumerate() {
        let y = MARGIN + i as f64 * ROW_HEIGHT;
        writeln!(
            s,
            r#"<g class="row" data-label="{l}"><text x="{MARGIN:.0}" y="{ty:.2}" font-size="12">{l}</text>"#,
            l = xml_escape(label),
            ty = y + ROW_HEIGHT * 0.7
        )
        .unwrap();
        for e in seq.events() {
            writeln!(
                s,
                r#"<rect class="tick" x="{x:.3}" y="{ry:.2}" width="{w:.3}" height="{h:.2}" data-start="{st}" data-end="{en}"/>"#,
                x = x0 + e.start as f64 * scale,
                ry = y + 2.0,
                w = e.len() as f64 * scale,
                h = ROW_HEIGHT - 4.0,
                st = e.start,
                en = e.end
            )
            .unwrap();
        }
        s.push_str("</g>\n");
    }
    writeln!(
        s,
        r#"<g class="axis"><line x1="{x0:.0}" y1="{axis_y:.0}" x2="{x1:.0}" y2="{axis_y:.0}" stroke="black"/><text x="{x0:.0}" y="{ty:.0}" font-size="10">0</text><text x="{x1:.0}" y="{ty:.0}" font-size="10" text-anchor="end">{n}</text></g>"#,
        x1 = x0 + PLOT_WIDTH,
        ty = axis_y + 15.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> Result<(), BehaviorError> {
    std::fs::write(path, text).map_err(|source| BehaviorError::Io { path: path.display().to_string(), source })
}

pub fn export_ethogram(dicts: &[(String, &EventDict)], path: &Path) -> Result<(), BehaviorError> {
    write_file(path, &render_ethogram(dicts)?)
}

/// Overlap events of the selected bodyparts with every object, one row each.
pub fn plot_object_ethogram<T: Scalar>(
    d: &Dataset<T>,
    objects: &ObjectSet<T>,
    bodyparts: &BodypartSelection,
    cfg: &RelationConfig<T>,
) -> Result<String, BehaviorError> {
    let mut dicts = Vec::new();
    for name in objects.names() {
        let mut q = ObjectQuery::new(&name, RelationKind::Overlap);
        q.bodyparts = bodyparts.clone();
        dicts.push((name, animals_object_events(d, objects, &q, cfg)?));
    }
    render_ethogram(&dicts.iter().map(|(n, e)| (n.clone(), e)).collect::<Vec<_>>())
}

/// Frames covered by events keyed by `animal` or by pairs where it is focal.
pub fn frames_for_animal(events: &EventDict, animal: &str) -> Vec<bool> {
    let mut mask = vec![false; events.n_frames()];
    for (k, seq) in events.iter() {
        if k.focal() == animal {
            for e in seq.events() {
                mask[e.start..e.end].iter_mut().for_each(|m| *m = true);
            }
        }
    }
    mask
}

/// One `<polyline>` per contiguous run of frames with a present keypoint,
/// carrying `data-bodypart`, `data-start` and `data-end`.
pub fn render_trajectory<T: Scalar>(
    d: &Dataset<T>,
    animal: &str,
    bodyparts: &BodypartSelection,
    events: Option<&EventDict>,
) -> Result<String, BehaviorError> {
    let a = d
        .animal_index(animal)
        .ok_or_else(|| KinematicsError::UnknownAnimal { name: animal.into(), known: d.animal_ids().to_vec() })?;
    let idx = bodyparts.resolve(d)?;
    let keep = match events {
        Some(ev) => {
            if ev.n_frames() != d.n_frames() {
                return Err(EventError::FrameCountMismatch { expected: d.n_frames(), got: ev.n_frames() }.into());
            }
            frames_for_animal(ev, animal)
        }
        None => vec![true; d.n_frames()],
    };
    let (w, h) = d.frame_size();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" data-animal="{an}">"#,
        w = w.as_f64(),
        h = h.as_f64(),
        an = xml_escape(animal)
    )
    .unwrap();
    writeln!(s, r#"<rect class="frame" x="0" y="0" width="{:.0}" height="{:.0}" fill="none" stroke="gray"/>"#, w.as_f64(), h.as_f64())
        .unwrap();
    for &b in &idx {
        let name = xml_escape(&d.bodypart_names()[b]);
        let mut run: Vec<(usize, f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(usize, f64, f64)>, s: &mut String| {
            if let (Some(first), Some(last)) = (run.first(), run.last()) {
                let pts: Vec<String> = run.iter().map(|(_, x, y)| format!("{x:.3},{y:.3}")).collect();
                writeln!(
                    s,
                    r#"<polyline class="track" data-bodypart="{name}" data-start="{}" data-end="{}" fill="none" stroke="black" points="{}"/>"#,
                    first.0,
                    last.0 + 1,
                    pts.join(" ")
                )
                .unwrap();
            }
            run.clear();
        };
        for (f, &k) in keep.iter().enumerate() {
            match d.point(a, f, b).filter(|_| k) {
                Some(p) => run.push((f, p.x.as_f64(), p.y.as_f64())),
                None => flush(&mut run, &mut s),
            }
        }
        flush(&mut run, &mut s);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn export_trajectory<T: Scalar>(
    d: &Dataset<T>,
    animal: &str,
    bodyparts: &BodypartSelection,
    events: Option<&EventDict>,
    path: &Path,
) -> Result<(), BehaviorError> {
    write_file(path, &render_trajectory(d, animal, bodyparts, events)?)
}
