//! Per-frame spatial relations of an animal to a scene object or to another animal.
//!
//! Angles are in degrees. Image coordinates are used throughout, so
//! `to_above` means a smaller y than the object's bounding box.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_between_deg, Vec2};
use crate::kinematics::{center_at, center_velocity, require_animal, KinematicsError};
use crate::scalar::Scalar;
use crate::trackdata::{Dataset, SceneObject};

pub const NECK: &str = "neck";
pub const NOSE: &str = "nose";
pub const TAIL_BASE: &str = "tail_base";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelationError {
    #[error("{name} not defined in the data; supported bodyparts are {supported:?}")]
    UnknownBodypart { name: String, supported: Vec<String> },
    #[error("relation `{kind}` needs bodypart `{name}`, which the data does not have; supported bodyparts are {supported:?}")]
    MissingBodypart { kind: RelationKind, name: String, supported: Vec<String> },
    #[error("relation `{kind}` is not available {context}")]
    Unsupported { kind: RelationKind, context: &'static str },
    #[error("a relation between an animal and itself (`{0}`) is not defined")]
    SameAnimal(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    ToLeft,
    ToRight,
    ToAbove,
    ToBelow,
    Overlap,
    Distance,
    ClosestDistance,
    /// Angle between body axes (neck to tail base).
    Angle,
    /// Angle between head axes (neck to nose).
    GazingAngle,
    /// Angle between the focal head axis and the direction to the other animal.
    ViewAngle,
    Orientation,
    RelativeSpeed,
}

impl RelationKind {
    pub const ALL: [RelationKind; 12] = [
        RelationKind::ToLeft,
        RelationKind::ToRight,
        RelationKind::ToAbove,
        RelationKind::ToBelow,
        RelationKind::Overlap,
        RelationKind::Distance,
        RelationKind::ClosestDistance,
        RelationKind::Angle,
        RelationKind::GazingAngle,
        RelationKind::ViewAngle,
        RelationKind::Orientation,
        RelationKind::RelativeSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::ToLeft => "to_left",
            RelationKind::ToRight => "to_right",
            RelationKind::ToAbove => "to_above",
            RelationKind::ToBelow => "to_below",
            RelationKind::Overlap => "overlap",
            RelationKind::Distance => "distance",
            RelationKind::ClosestDistance => "closest_distance",
            RelationKind::Angle => "angle",
            RelationKind::GazingAngle => "gazing_angle",
            RelationKind::ViewAngle => "view_angle",
            RelationKind::Orientation => "orientation",
            RelationKind::RelativeSpeed => "relative_speed",
        }
    }

    pub fn is_boolean(self) -> bool {
        matches!(
            self,
            RelationKind::ToLeft | RelationKind::ToRight | RelationKind::ToAbove | RelationKind::ToBelow | RelationKind::Overlap
        )
    }

    pub fn is_numeric(self) -> bool {
        !self.is_boolean() && self != RelationKind::Orientation
    }

    pub fn applies_to_objects(self) -> bool {
        self.is_boolean() || self == RelationKind::Distance
    }

    pub fn applies_to_animals(self) -> bool {
        !self.is_boolean()
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation `{0}`")]
pub struct UnknownRelation(pub String);

impl FromStr for RelationKind {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        RelationKind::ALL.into_iter().find(|k| k.name() == norm).ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Front,
    Behind,
}

impl Orientation {
    fn parse(s: &str) -> Option<Orientation> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("orientation.").unwrap_or(&s);
        match s {
            "front" => Some(Orientation::Front),
            "behind" => Some(Orientation::Behind),
            _ => None,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Front => "front",
            Orientation::Behind => "behind",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    /// Longest-match operator prefix of `s` and its byte length.
    pub fn parse_prefix(s: &str) -> Option<(CmpOp, usize)> {
        for (tok, op) in [("<=", CmpOp::Le), (">=", CmpOp::Ge), ("==", CmpOp::Eq), ("!=", CmpOp::Ne)] {
            if s.starts_with(tok) {
                return Some((op, 2));
            }
        }
        match s.as_bytes().first() {
            Some(b'<') => Some((CmpOp::Lt, 1)),
            Some(b'>') => Some((CmpOp::Gt, 1)),
            _ => None,
        }
    }

    pub fn holds<T: PartialOrd>(self, lhs: T, rhs: T) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

/// Threshold such as `<40`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec<T> {
    pub op: CmpOp,
    pub value: T,
}

impl<T: Scalar> ComparisonSpec<T> {
    pub fn new(op: CmpOp, value: T) -> Self {
        ComparisonSpec { op, value }
    }

    pub fn holds(&self, x: T) -> bool {
        self.op.holds(x, self.value)
    }
}

impl<T: Scalar> fmt::Display for ComparisonSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.op.symbol(), self.value)
    }
}

/// Byte offset into the parsed string plus a message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid comparison at position {position}: {message}")]
pub struct ComparisonParseError {
    pub position: usize,
    pub message: String,
}

fn split_operator(s: &str) -> Result<(CmpOp, usize), ComparisonParseError> {
    let lead = s.len() - s.trim_start().len();
    let (op, n) = CmpOp::parse_prefix(&s[lead..]).ok_or_else(|| ComparisonParseError {
        position: lead,
        message: "expected one of <, <=, >, >=, ==, !=".into(),
    })?;
    Ok((op, lead + n))
}

pub fn parse_comparison<T: Scalar>(s: &str) -> Result<ComparisonSpec<T>, ComparisonParseError> {
    let (op, at) = split_operator(s)?;
    let rest = &s[at..];
    let pos = at + (rest.len() - rest.trim_start().len());
    let num = rest.trim();
    if num.is_empty() {
        return Err(ComparisonParseError { position: pos, message: "expected a number".into() });
    }
    match num.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(ComparisonSpec::new(op, T::lit(v))),
        _ => Err(ComparisonParseError { position: pos, message: format!("`{num}` is not a finite number") }),
    }
}

/// A per-frame test on a relation value: a numeric threshold or an orientation match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition<T> {
    Compare(ComparisonSpec<T>),
    Orientation { negated: bool, value: Orientation },
}

impl<T: Scalar> Condition<T> {
    pub fn parse(s: &str) -> Result<Condition<T>, ComparisonParseError> {
        let (op, at) = split_operator(s)?;
        if let Some(value) = Orientation::parse(&s[at..]) {
            return match op {
                CmpOp::Eq => Ok(Condition::Orientation { negated: false, value }),
                CmpOp::Ne => Ok(Condition::Orientation { negated: true, value }),
                _ => Err(ComparisonParseError { position: 0, message: "orientation only supports == and !=".into() }),
            };
        }
        parse_comparison(s).map(Condition::Compare)
    }

    pub fn test(&self, v: &RelationValue<T>) -> bool {
        match (self, v) {
            (Condition::Compare(c), RelationValue::Real(x)) => c.holds(*x),
            (Condition::Orientation { negated, value }, RelationValue::Orientation(o)) => (o == value) != *negated,
            _ => false,
        }
    }

    pub fn fits(&self, kind: RelationKind) -> bool {
        match self {
            Condition::Compare(_) => kind.is_numeric(),
            Condition::Orientation { .. } => kind == RelationKind::Orientation,
        }
    }
}

impl<T: Scalar> fmt::Display for Condition<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Compare(c) => write!(f, "{c}"),
            Condition::Orientation { negated, value } => write!(f, "{}{}", if *negated { "!=" } else { "==" }, value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationValue<T> {
    Bool(bool),
    Real(T),
    Orientation(Orientation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationTable<T> {
    pub subject: String,
    pub target: String,
    pub kind: RelationKind,
    pub values: Vec<Option<RelationValue<T>>>,
}

impl<T: Scalar> RelationTable<T> {
    /// Undefined frames are false.
    pub fn mask(&self, condition: Option<&Condition<T>>) -> Vec<bool> {
        self.values
            .iter()
            .map(|v| match (v, condition) {
                (None, _) => false,
                (Some(RelationValue::Bool(b)), None) => *b,
                (Some(v), Some(c)) => c.test(v),
                (Some(_), None) => false,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,value\n");
        for (f, v) in self.values.iter().enumerate() {
            let cell = match v {
                None => String::new(),
                Some(RelationValue::Bool(b)) => b.to_string(),
                Some(RelationValue::Real(x)) => x.to_string(),
                Some(RelationValue::Orientation(o)) => o.to_string(),
            };
            out.push_str(&format!("{f},{cell}\n"));
        }
        out
    }
}

/// Which bodyparts a relation reads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum BodypartSelection {
    #[default]
    All,
    Named(Vec<String>),
}

impl BodypartSelection {
    pub fn named<S: AsRef<str>>(names: &[S]) -> Self {
        BodypartSelection::from_list(names.iter().map(|s| s.as_ref().to_string()).collect())
    }

    /// `["all"]` (or an empty list) selects every bodypart.
    pub fn from_list(names: Vec<String>) -> Self {
        if names.is_empty() || names.iter().any(|n| n == "all") {
            BodypartSelection::All
        } else {
            BodypartSelection::Named(names)
        }
    }

    pub fn to_list(&self) -> Vec<String> {
        match self {
            BodypartSelection::All => vec!["all".to_string()],
            BodypartSelection::Named(v) => v.clone(),
        }
    }

    pub fn resolve<T: Scalar>(&self, d: &Dataset<T>) -> Result<Vec<usize>, RelationError> {
        match self {
            BodypartSelection::All => Ok((0..d.n_bodyparts()).collect()),
            BodypartSelection::Named(names) => names
                .iter()
                .map(|n| {
                    d.bodypart_index(n).ok_or_else(|| RelationError::UnknownBodypart {
                        name: n.clone(),
                        supported: d.bodypart_names().to_vec(),
                    })
                })
                .collect(),
        }
    }
}

impl Serialize for BodypartSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_list().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BodypartSelection {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        Ok(BodypartSelection::from_list(Vec::<String>::deserialize(de)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationConfig<T> {
    /// Half-angle of the frontal cone used by `orientation`, degrees.
    pub cone_half_angle: T,
    /// How the selected bodyparts combine for boolean object relations.
    pub quantifier: Quantifier,
}

impl<T: Scalar> Default for RelationConfig<T> {
    fn default() -> Self {
        RelationConfig { cone_half_angle: T::lit(90.0), quantifier: Quantifier::All }
    }
}

/// All selected points, or `None` if any is missing.
fn points<T: Scalar>(d: &Dataset<T>, a: usize, f: usize, idx: &[usize]) -> Option<Vec<Vec2<T>>> {
    idx.iter().map(|&b| d.point(a, f, b)).collect()
}

/// Whole-animal center for `All`, otherwise the mean of the selected points.
fn anchor<T: Scalar>(d: &Dataset<T>, a: usize, f: usize, sel: &BodypartSelection, idx: &[usize]) -> Option<Vec2<T>> {
    match sel {
        BodypartSelection::All => center_at(d, a, f),
        BodypartSelection::Named(_) => {
            let pts = points(d, a, f, idx)?;
            let n = T::lit(pts.len() as f64);
            let sum = pts.into_iter().fold(Vec2::new(T::zero(), T::zero()), Vec2::add);
            Some(sum.scale(T::one() / n))
        }
    }
}

fn need_bodypart<T: Scalar>(d: &Dataset<T>, kind: RelationKind, name: &str) -> Result<usize, RelationError> {
    d.bodypart_index(name).ok_or_else(|| RelationError::MissingBodypart {
        kind,
        name: name.into(),
        supported: d.bodypart_names().to_vec(),
    })
}

fn axis<T: Scalar>(d: &Dataset<T>, a: usize, f: usize, from: usize, to: usize) -> Option<Vec2<T>> {
    Some(d.point(a, f, to)?.sub(d.point(a, f, from)?))
}

pub fn animal_object_relation<T: Scalar>(
    d: &Dataset<T>,
    object: &SceneObject<T>,
    animal: &str,
    kind: RelationKind,
    bodyparts: &BodypartSelection,
    cfg: &RelationConfig<T>,
) -> Result<RelationTable<T>, RelationError> {
    if !kind.applies_to_objects() {
        return Err(RelationError::Unsupported { kind, context: "between an animal and an object" });
    }
    let a = require_animal(d, animal)?;
    let idx = bodyparts.resolve(d)?;
    let bbox = object.bbox();
    let centroid = object.centroid();
    let side = |p: &Vec2<T>| match kind {
        RelationKind::ToLeft => p.x < bbox.min.x,
        RelationKind::ToRight => p.x > bbox.max.x,
        RelationKind::ToAbove => p.y < bbox.min.y,
        RelationKind::ToBelow => p.y > bbox.max.y,
        RelationKind::Overlap => object.contains(*p),
        _ => unreachable!("boolean kinds only"),
    };
    let values = (0..d.n_frames())
        .map(|f| {
            if kind == RelationKind::Distance {
                return anchor(d, a, f, bodyparts, &idx).map(|p| RelationValue::Real(p.dist(centroid)));
            }
            let pts = points(d, a, f, &idx)?;
            let hit = match cfg.quantifier {
                Quantifier::All => pts.iter().all(side),
                Quantifier::Any => pts.iter().any(side),
            };
            Some(RelationValue::Bool(hit && !pts.is_empty()))
        })
        .collect();
    Ok(RelationTable { subject: animal.into(), target: object.name.clone(), kind, values })
}

pub fn animal_animal_relation<T: Scalar>(
    d: &Dataset<T>,
    focal: &str,
    other: &str,
    kind: RelationKind,
    bodyparts: &BodypartSelection,
    other_bodyparts: &BodypartSelection,
    cfg: &RelationConfig<T>,
) -> Result<RelationTable<T>, RelationError> {
    if !kind.applies_to_animals() {
        return Err(RelationError::Unsupported { kind, context: "between two animals" });
    }
    if focal == other {
        return Err(RelationError::SameAnimal(focal.into()));
    }
    let a = require_animal(d, focal)?;
    let b = require_animal(d, other)?;
    let ia = bodyparts.resolve(d)?;
    let ib = other_bodyparts.resolve(d)?;
    let nf = d.n_frames();
    let real = |v: Option<T>| v.map(RelationValue::Real);
    let values: Vec<Option<RelationValue<T>>> = match kind {
        RelationKind::Distance => (0..nf)
            .map(|f| real(Some(anchor(d, a, f, bodyparts, &ia)?.dist(anchor(d, b, f, other_bodyparts, &ib)?))))
            .collect(),
        RelationKind::ClosestDistance => (0..nf)
            .map(|f| {
                let pa = points(d, a, f, &ia)?;
                let pb = points(d, b, f, &ib)?;
                let m = pa.iter().flat_map(|p| pb.iter().map(move |q| p.dist(*q))).reduce(T::min);
                real(m)
            })
            .collect(),
        RelationKind::Angle | RelationKind::GazingAngle => {
            let neck = need_bodypart(d, kind, NECK)?;
            let tip = if kind == RelationKind::Angle {
                need_bodypart(d, kind, TAIL_BASE)?
            } else {
                need_bodypart(d, kind, NOSE)?
            };
            (0..nf).map(|f| real(angle_between_deg(axis(d, a, f, neck, tip)?, axis(d, b, f, neck, tip)?))).collect()
        }
        RelationKind::ViewAngle | RelationKind::Orientation => {
            let neck = need_bodypart(d, kind, NECK)?;
            let nose = need_bodypart(d, kind, NOSE)?;
            (0..nf)
                .map(|f| {
                    let head = axis(d, a, f, neck, nose)?;
                    let to_other = center_at(d, b, f)?.sub(center_at(d, a, f)?);
                    let ang = angle_between_deg(head, to_other)?;
                    Some(if kind == RelationKind::ViewAngle {
                        RelationValue::Real(ang)
                    } else if ang <= cfg.cone_half_angle {
                        RelationValue::Orientation(Orientation::Front)
                    } else {
                        RelationValue::Orientation(Orientation::Behind)
                    })
                })
                .collect()
        }
        RelationKind::RelativeSpeed => {
            let va = center_velocity(d, a)?;
            let vb = center_velocity(d, b)?;
            va.iter().zip(&vb).map(|(p, q)| real(Some(p.as_ref()?.sub(*q.as_ref()?).norm()))).collect()
        }
        _ => unreachable!("guarded by applies_to_animals"),
    };
    Ok(RelationTable { subject: focal.into(), target: other.into(), kind, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackdata::ObjectKind;

    fn square() -> SceneObject<f64> {
        SceneObject::polygon(
            "sq",
            ObjectKind::Roi,
            vec![Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), Vec2::new(4.0, 4.0), Vec2::new(0.0, 4.0)],
        )
        .unwrap()
    }

    fn one_point(x: f64, y: f64) -> Dataset<f64> {
        Dataset::from_fn("t", &["a"], &["p"], 1, (100.0, 100.0), |_, _, _| Some(Vec2::new(x, y))).unwrap()
    }

    fn obj_rel(d: &Dataset<f64>, o: &SceneObject<f64>, kind: RelationKind) -> Option<RelationValue<f64>> {
        animal_object_relation(d, o, "a", kind, &BodypartSelection::All, &RelationConfig::default()).unwrap().values[0]
    }

    fn shifted_square() -> SceneObject<f64> {
        SceneObject::polygon(
            "sq",
            ObjectKind::Roi,
            vec![Vec2::new(10.0, 10.0), Vec2::new(14.0, 10.0), Vec2::new(14.0, 14.0), Vec2::new(10.0, 14.0)],
        )
        .unwrap()
    }

    #[test]
    fn object_relation_examples() {
        assert_eq!(obj_rel(&one_point(2.0, 2.0), &square(), RelationKind::Overlap), Some(RelationValue::Bool(true)));
        // (-1, 2) relative to the square, shifted by +10 on both axes
        let d = one_point(9.0, 12.0);
        assert_eq!(obj_rel(&d, &shifted_square(), RelationKind::ToLeft), Some(RelationValue::Bool(true)));
        assert_eq!(obj_rel(&d, &shifted_square(), RelationKind::ToRight), Some(RelationValue::Bool(false)));
        let Some(RelationValue::Real(dist)) = obj_rel(&one_point(10.0, 0.0), &square(), RelationKind::Distance) else {
            panic!()
        };
        assert!((dist - 68f64.sqrt()).abs() < 1e-12);
        assert!((dist - 8.2462).abs() < 1e-4);
    }

    #[test]
    fn boundary_counts_as_overlap() {
        assert_eq!(obj_rel(&one_point(4.0, 1.0), &square(), RelationKind::Overlap), Some(RelationValue::Bool(true)));
    }

    #[test]
    fn above_below_use_image_coordinates() {
        let d = one_point(12.0, 5.0);
        assert_eq!(obj_rel(&d, &shifted_square(), RelationKind::ToAbove), Some(RelationValue::Bool(true)));
        assert_eq!(obj_rel(&d, &shifted_square(), RelationKind::ToBelow), Some(RelationValue::Bool(false)));
    }

    #[test]
    fn object_relation_errors() {
        let d = one_point(1.0, 1.0);
        let cfg = RelationConfig::default();
        let err = animal_object_relation(&d, &square(), "a", RelationKind::Overlap, &BodypartSelection::named(&["center"]), &cfg)
            .unwrap_err();
        assert!(matches!(err, RelationError::UnknownBodypart { .. }));
        assert!(err.to_string().contains("center not defined in the data"));
        assert!(matches!(
            animal_object_relation(&d, &square(), "a", RelationKind::Angle, &BodypartSelection::All, &cfg),
            Err(RelationError::Unsupported { .. })
        ));
    }

    fn two_animals(parts: &[&str], pos: impl Fn(usize, usize) -> (f64, f64)) -> Dataset<f64> {
        Dataset::from_fn("t", &["a", "b"], parts, 1, (100.0, 100.0), |a, _, b| {
            let (x, y) = pos(a, b);
            Some(Vec2::new(x, y))
        })
        .unwrap()
    }

    fn social(d: &Dataset<f64>, kind: RelationKind) -> Option<RelationValue<f64>> {
        animal_animal_relation(d, "a", "b", kind, &BodypartSelection::All, &BodypartSelection::All, &RelationConfig::default())
            .unwrap()
            .values[0]
    }

    #[test]
    fn body_axis_angle() {
        // a: neck (10,10) -> tail_base (11,10); b: neck (20,20) -> tail_base (20,21)
        let d = two_animals(&["neck", "tail_base"], |a, b| match (a, b) {
            (0, 0) => (10.0, 10.0),
            (0, _) => (11.0, 10.0),
            (_, 0) => (20.0, 20.0),
            _ => (20.0, 21.0),
        });
        let Some(RelationValue::Real(ang)) = social(&d, RelationKind::Angle) else { panic!() };
        assert!((ang - 90.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_front_when_ahead() {
        // a head axis neck(10,10) -> nose(11,10); b centered at (15,10)
        let d = two_animals(&["neck", "nose"], |a, b| match (a, b) {
            (0, 0) => (10.0, 10.0),
            (0, _) => (11.0, 10.0),
            (_, 0) => (15.0, 10.0),
            _ => (15.0, 10.0),
        });
        assert_eq!(social(&d, RelationKind::Orientation), Some(RelationValue::Orientation(Orientation::Front)));
        let rev = animal_animal_relation(&d, "b", "a", RelationKind::Orientation, &BodypartSelection::All, &BodypartSelection::All, &RelationConfig::default());
        // b's head axis is zero-length, so orientation is undefined
        assert_eq!(rev.unwrap().values[0], None);
    }

    #[test]
    fn closest_distance_brute_force() {
        // a parts {(10,10),(10,13)}, b parts {(14,10),(14,10)}
        let d = two_animals(&["p", "q"], |a, b| match (a, b) {
            (0, 0) => (10.0, 10.0),
            (0, _) => (10.0, 13.0),
            _ => (14.0, 10.0),
        });
        assert_eq!(social(&d, RelationKind::ClosestDistance), Some(RelationValue::Real(4.0)));
    }

    #[test]
    fn social_errors() {
        let d = two_animals(&["p"], |_, _| (1.0, 1.0));
        let cfg = RelationConfig::default();
        let all = BodypartSelection::All;
        assert!(matches!(
            animal_animal_relation(&d, "a", "b", RelationKind::Angle, &all, &all, &cfg),
            Err(RelationError::MissingBodypart { .. })
        ));
        assert_eq!(
            animal_animal_relation(&d, "a", "a", RelationKind::Distance, &all, &all, &cfg),
            Err(RelationError::SameAnimal("a".into()))
        );
    }

    #[test]
    fn comparison_parsing() {
        assert_eq!(parse_comparison::<f64>("<40"), Ok(ComparisonSpec::new(CmpOp::Lt, 40.0)));
        assert_eq!(parse_comparison::<f64>(">= 3.4"), Ok(ComparisonSpec::new(CmpOp::Ge, 3.4)));
        assert_eq!(parse_comparison::<f64>("  != -2"), Ok(ComparisonSpec::new(CmpOp::Ne, -2.0)));
        let e = parse_comparison::<f64>("<abc").unwrap_err();
        assert_eq!(e.position, 1);
        assert_eq!(parse_comparison::<f64>("40").unwrap_err().position, 0);
        assert!(parse_comparison::<f64>("<inf").is_err());
        assert!(parse_comparison::<f64>("<").is_err());
    }

    #[test]
    fn condition_parsing() {
        assert_eq!(
            Condition::<f64>::parse("==Orientation.FRONT"),
            Ok(Condition::Orientation { negated: false, value: Orientation::Front })
        );
        assert_eq!(
            Condition::<f64>::parse("!= behind"),
            Ok(Condition::Orientation { negated: true, value: Orientation::Behind })
        );
        assert!(Condition::<f64>::parse("<front").is_err());
        assert_eq!(Condition::<f64>::parse("<12"), Ok(Condition::Compare(ComparisonSpec::new(CmpOp::Lt, 12.0))));
    }

    #[test]
    fn relation_names_round_trip() {
        for k in RelationKind::ALL {
            assert_eq!(k.name().parse::<RelationKind>().unwrap(), k);
        }
        assert!("disntace".parse::<RelationKind>().is_err());
    }
}
