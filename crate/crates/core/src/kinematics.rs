//! Velocity, speed and acceleration of keypoints and animal centers.
//!
//! Derivatives use central differences `(p[f+1] - p[f-1]) / 2` on interior
//! frames and one-sided differences on the first and last frame. Units are
//! pixels per frame (per frame squared for acceleration). A value is
//! undefined wherever any keypoint it reads is missing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::events::EventDict;
use crate::geometry::Vec2;
use crate::scalar::Scalar;
use crate::trackdata::{Dataset, DatasetParts};

/// Bodypart that, when present, stands for the whole animal.
pub const CENTER_BODYPART: &str = "mouse_center";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("at least 2 frames are needed for derivatives, dataset has {0}")]
    InsufficientFrames(usize),
    #[error("unknown animal `{name}`; known animals: {known:?}")]
    UnknownAnimal { name: String, known: Vec<String> },
    #[error("frame {frame} out of range (n_frames {n_frames})")]
    FrameOutOfRange { frame: usize, n_frames: usize },
    #[error("median filter window must be odd and positive, got {0}")]
    BadWindow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Velocity,
    Speed,
    Acceleration,
    AccelMagnitude,
}

impl Quantity {
    pub fn is_vector(self) -> bool {
        matches!(self, Quantity::Velocity | Quantity::Acceleration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KinematicValue<T> {
    Vector(Vec2<T>),
    Scalar(T),
}

/// Per-keypoint kinematic values indexed `[animal][frame][bodypart]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSeries<T> {
    pub dataset_id: String,
    pub quantity: Quantity,
    shape: (usize, usize, usize),
    values: Vec<Option<KinematicValue<T>>>,
}

impl<T: Scalar> KinematicSeries<T> {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn get(&self, animal: usize, frame: usize, bodypart: usize) -> Option<KinematicValue<T>> {
        let (na, nf, nb) = self.shape;
        assert!(animal < na && frame < nf && bodypart < nb);
        self.values[(animal * nf + frame) * nb + bodypart]
    }

    pub fn vector(&self, animal: usize, frame: usize, bodypart: usize) -> Option<Vec2<T>> {
        match self.get(animal, frame, bodypart)? {
            KinematicValue::Vector(v) => Some(v),
            KinematicValue::Scalar(_) => None,
        }
    }

    pub fn scalar(&self, animal: usize, frame: usize, bodypart: usize) -> Option<T> {
        match self.get(animal, frame, bodypart)? {
            KinematicValue::Scalar(v) => Some(v),
            KinematicValue::Vector(_) => None,
        }
    }

    /// CSV with `animal,frame,bodypart,value`; vector quantities write
    /// `value_x,value_y` instead. Undefined entries leave the cells empty.
    pub fn to_csv(&self, d: &Dataset<T>) -> String {
        let mut out = if self.quantity.is_vector() {
            String::from("animal,frame,bodypart,value_x,value_y\n")
        } else {
            String::from("animal,frame,bodypart,value\n")
        };
        let (na, nf, nb) = self.shape;
        for a in 0..na {
            for f in 0..nf {
                for b in 0..nb {
                    let cells = match self.get(a, f, b) {
                        Some(KinematicValue::Vector(v)) => format!("{},{}", v.x, v.y),
                        Some(KinematicValue::Scalar(s)) => s.to_string(),
                        None if self.quantity.is_vector() => ",".to_string(),
                        None => String::new(),
                    };
                    out.push_str(&format!("{},{},{},{}\n", d.animal_ids()[a], f, d.bodypart_names()[b], cells));
                }
            }
        }
        out
    }
}

/// Derivative of a track with the central/one-sided stencil.
pub fn differentiate<T: Scalar>(track: &[Option<Vec2<T>>]) -> Result<Vec<Option<Vec2<T>>>, KinematicsError> {
    let n = track.len();
    if n < 2 {
        return Err(KinematicsError::InsufficientFrames(n));
    }
    let half = T::lit(0.5);
    Ok((0..n)
        .map(|f| {
            if f == 0 {
                Some(track[1]?.sub(track[0]?))
            } else if f == n - 1 {
                Some(track[n - 1]?.sub(track[n - 2]?))
            } else {
                Some(track[f + 1]?.sub(track[f - 1]?).scale(half))
            }
        })
        .collect())
}

fn per_keypoint<T: Scalar>(
    d: &Dataset<T>,
    quantity: Quantity,
    order: usize,
) -> Result<KinematicSeries<T>, KinematicsError> {
    let (na, nf, nb) = (d.n_animals(), d.n_frames(), d.n_bodyparts());
    if nf < 2 {
        return Err(KinematicsError::InsufficientFrames(nf));
    }
    let mut values = vec![None; na * nf * nb];
    for a in 0..na {
        for b in 0..nb {
            let mut track: Vec<Option<Vec2<T>>> = (0..nf).map(|f| d.point(a, f, b)).collect();
            for _ in 0..order {
                track = differentiate(&track)?;
            }
            for (f, v) in track.into_iter().enumerate() {
                values[(a * nf + f) * nb + b] = v.map(|v| {
                    if quantity.is_vector() {
                        KinematicValue::Vector(v)
                    } else {
                        KinematicValue::Scalar(v.norm())
                    }
                });
            }
        }
    }
    Ok(KinematicSeries { dataset_id: d.id().to_string(), quantity, shape: (na, nf, nb), values })
}

pub fn compute_velocity<T: Scalar>(d: &Dataset<T>) -> Result<KinematicSeries<T>, KinematicsError> {
    per_keypoint(d, Quantity::Velocity, 1)
}

pub fn compute_speed<T: Scalar>(d: &Dataset<T>) -> Result<KinematicSeries<T>, KinematicsError> {
    per_keypoint(d, Quantity::Speed, 1)
}

pub fn compute_acceleration<T: Scalar>(d: &Dataset<T>) -> Result<KinematicSeries<T>, KinematicsError> {
    per_keypoint(d, Quantity::Acceleration, 2)
}

pub fn compute_accel_magnitude<T: Scalar>(d: &Dataset<T>) -> Result<KinematicSeries<T>, KinematicsError> {
    per_keypoint(d, Quantity::AccelMagnitude, 2)
}

pub fn compute<T: Scalar>(d: &Dataset<T>, quantity: Quantity) -> Result<KinematicSeries<T>, KinematicsError> {
    match quantity {
        Quantity::Velocity => compute_velocity(d),
        Quantity::Speed => compute_speed(d),
        Quantity::Acceleration => compute_acceleration(d),
        Quantity::AccelMagnitude => compute_accel_magnitude(d),
    }
}

pub(crate) fn require_animal<T: Scalar>(d: &Dataset<T>, animal: &str) -> Result<usize, KinematicsError> {
    d.animal_index(animal)
        .ok_or_else(|| KinematicsError::UnknownAnimal { name: animal.into(), known: d.animal_ids().to_vec() })
}

/// `mouse_center` when the dataset has it, else the mean of present bodyparts.
pub(crate) fn center_at<T: Scalar>(d: &Dataset<T>, a: usize, frame: usize) -> Option<Vec2<T>> {
    if let Some(c) = d.bodypart_index(CENTER_BODYPART) {
        return d.point(a, frame, c);
    }
    let mut sum = Vec2::new(T::zero(), T::zero());
    let mut n = 0usize;
    for b in 0..d.n_bodyparts() {
        if let Some(p) = d.point(a, frame, b) {
            sum = sum.add(p);
            n += 1;
        }
    }
    (n > 0).then(|| sum.scale(T::one() / T::lit(n as f64)))
}

pub fn animal_center<T: Scalar>(d: &Dataset<T>, animal: &str, frame: usize) -> Result<Option<Vec2<T>>, KinematicsError> {
    let a = require_animal(d, animal)?;
    if frame >= d.n_frames() {
        return Err(KinematicsError::FrameOutOfRange { frame, n_frames: d.n_frames() });
    }
    Ok(center_at(d, a, frame))
}

pub fn center_track<T: Scalar>(d: &Dataset<T>, animal: usize) -> Vec<Option<Vec2<T>>> {
    (0..d.n_frames()).map(|f| center_at(d, animal, f)).collect()
}

pub fn center_velocity<T: Scalar>(d: &Dataset<T>, animal: usize) -> Result<Vec<Option<Vec2<T>>>, KinematicsError> {
    differentiate(&center_track(d, animal))
}

pub fn center_speed<T: Scalar>(d: &Dataset<T>, animal: usize) -> Result<Vec<Option<T>>, KinematicsError> {
    Ok(center_velocity(d, animal)?.into_iter().map(|v| v.map(Vec2::norm)).collect())
}

pub fn center_accel_magnitude<T: Scalar>(d: &Dataset<T>, animal: usize) -> Result<Vec<Option<T>>, KinematicsError> {
    Ok(differentiate(&center_velocity(d, animal)?)?.into_iter().map(|v| v.map(Vec2::norm)).collect())
}

/// Coordinate-wise moving median over an odd window; missing points stay
/// missing and are excluded from their neighbours' windows.
pub fn median_filter<T: Scalar>(d: &Dataset<T>, window: usize) -> Result<Dataset<T>, KinematicsError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(KinematicsError::BadWindow(window));
    }
    let half = window / 2;
    let (na, nf, nb) = (d.n_animals(), d.n_frames(), d.n_bodyparts());
    let mut parts: DatasetParts<T> = d.clone().into_parts();
    let median = |v: &mut Vec<T>| {
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / T::lit(2.0)
        }
    };
    for a in 0..na {
        for b in 0..nb {
            for f in 0..nf {
                let idx = (a * nf + f) * nb + b;
                if parts.keypoints[idx].is_none() {
                    continue;
                }
                let lo = f.saturating_sub(half);
                let hi = (f + half).min(nf - 1);
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for g in lo..=hi {
                    if let Some(p) = d.point(a, g, b) {
                        xs.push(p.x);
                        ys.push(p.y);
                    }
                }
                let kp = parts.keypoints[idx].as_mut().expect("checked above");
                kp.x = median(&mut xs);
                kp.y = median(&mut ys);
            }
        }
    }
    // medians of in-bounds values stay in bounds
    Ok(Dataset::new(parts).expect("filtered dataset keeps invariants"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTravelled<T> {
    pub distance: T,
    /// Frames inside events whose center was undefined.
    pub skipped_frames: usize,
}

/// Path length of each animal's center over the frames covered by its events.
/// Pair-keyed events are attributed to the focal animal.
pub fn calculate_distance_travelled<T: Scalar>(
    d: &Dataset<T>,
    events: &EventDict,
) -> Result<BTreeMap<String, DistanceTravelled<T>>, KinematicsError> {
    let mut out: BTreeMap<String, DistanceTravelled<T>> = d
        .animal_ids()
        .iter()
        .map(|a| (a.clone(), DistanceTravelled { distance: T::zero(), skipped_frames: 0 }))
        .collect();
    let mut tracks: BTreeMap<usize, Vec<Option<Vec2<T>>>> = BTreeMap::new();
    for (key, seq) in events.iter() {
        let a = require_animal(d, key.focal())?;
        let track = tracks.entry(a).or_insert_with(|| center_track(d, a));
        let entry = out.get_mut(key.focal()).expect("seeded from animal ids");
        for e in seq.events() {
            let end = e.end.min(d.n_frames());
            for f in e.start..end {
                if track[f].is_none() {
                    entry.skipped_frames += 1;
                }
                if f + 1 < end {
                    if let (Some(p), Some(q)) = (track[f], track[f + 1]) {
                        entry.distance = entry.distance + q.dist(p);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventSeq, SubjectKey};

    fn line_dataset(xs: &[f64]) -> Dataset<f64> {
        Dataset::from_fn("t", &["a"], &["nose"], xs.len(), (100.0, 100.0), |_, f, _| Some(Vec2::new(xs[f], 0.0)))
            .unwrap()
    }

    fn vx(s: &KinematicSeries<f64>) -> Vec<f64> {
        (0..s.shape().1).map(|f| s.vector(0, f, 0).unwrap().x).collect()
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(vx(&compute_velocity(&line_dataset(&[0., 2., 4.])).unwrap()), [2., 2., 2.]);
        assert_eq!(vx(&compute_velocity(&line_dataset(&[5., 5., 5.])).unwrap()), [0., 0., 0.]);
        assert_eq!(vx(&compute_velocity(&line_dataset(&[0., 1., 4., 9.])).unwrap()), [1., 2., 4., 5.]);
    }

    #[test]
    fn insufficient_frames() {
        assert_eq!(compute_velocity(&line_dataset(&[1.0])), Err(KinematicsError::InsufficientFrames(1)));
    }

    #[test]
    fn speed_examples() {
        let d = Dataset::from_fn("t", &["a"], &["p"], 3, (100.0, 100.0), |_, f, _| {
            Some(Vec2::new(3.0 * f as f64, 4.0 * f as f64))
        })
        .unwrap();
        let s = compute_speed(&d).unwrap();
        assert!((0..3).all(|f| s.scalar(0, f, 0) == Some(5.0)));
        let d = Dataset::from_fn("t", &["a"], &["p"], 3, (100.0, 100.0), |_, f, _| Some(Vec2::new(f as f64, f as f64)))
            .unwrap();
        assert!((compute_speed(&d).unwrap().scalar(0, 1, 0).unwrap() - 2f64.sqrt()).abs() < 1e-9);
        let s = compute_speed(&line_dataset(&[5., 5., 5.])).unwrap();
        assert_eq!(s.scalar(0, 1, 0), Some(0.0));
    }

    #[test]
    fn missing_points_propagate() {
        let d = Dataset::from_fn("t", &["a"], &["p"], 4, (100.0, 100.0), |_, f, _| {
            (f != 1).then(|| Vec2::new(f as f64, 0.0))
        })
        .unwrap();
        let v = compute_velocity(&d).unwrap();
        // frame 0 reads 0,1; frame 2 reads 1,3; frame 1 reads 0,2; frame 3 reads 2,3
        assert_eq!(v.get(0, 0, 0), None);
        assert!(v.get(0, 1, 0).is_some());
        assert_eq!(v.get(0, 2, 0), None);
        assert!(v.get(0, 3, 0).is_some());
    }

    #[test]
    fn constant_velocity_has_zero_acceleration() {
        let a = compute_accel_magnitude(&line_dataset(&[1., 3., 5., 7., 9.])).unwrap();
        assert!((0..5).all(|f| a.scalar(0, f, 0) == Some(0.0)));
    }

    #[test]
    fn center_rules() {
        let d = Dataset::from_fn("t", &["a"], &["nose", "tail"], 2, (10.0, 10.0), |_, f, b| {
            (f == 0).then(|| Vec2::new(2.0 * b as f64, 2.0 * b as f64))
        })
        .unwrap();
        assert_eq!(animal_center(&d, "a", 0).unwrap(), Some(Vec2::new(1.0, 1.0)));
        assert_eq!(animal_center(&d, "a", 1).unwrap(), None);
        assert!(matches!(animal_center(&d, "zz", 0), Err(KinematicsError::UnknownAnimal { .. })));
        assert!(matches!(animal_center(&d, "a", 9), Err(KinematicsError::FrameOutOfRange { .. })));

        let d = Dataset::from_fn("t", &["a"], &["nose", "mouse_center"], 1, (10.0, 10.0), |_, _, b| {
            Some(if b == 1 { Vec2::new(7.0, 3.0) } else { Vec2::new(0.0, 0.0) })
        })
        .unwrap();
        assert_eq!(animal_center(&d, "a", 0).unwrap(), Some(Vec2::new(7.0, 3.0)));
    }

    fn events(n: usize, key: &str, v: &[(usize, usize)]) -> EventDict {
        let mut e = EventDict::new(n);
        e.insert(SubjectKey::animal(key), EventSeq::from_intervals(v.iter().copied())).unwrap();
        e
    }

    #[test]
    fn distance_travelled_examples() {
        let path = [(0.0, 0.0), (3.0, 4.0)];
        let d = Dataset::from_fn("t", &["a"], &["p"], 2, (10.0, 10.0), |_, f, _| Some(Vec2::new(path[f].0, path[f].1)))
            .unwrap();
        assert_eq!(calculate_distance_travelled(&d, &events(2, "a", &[(0, 2)])).unwrap()["a"].distance, 5.0);
        assert_eq!(calculate_distance_travelled(&d, &EventDict::new(2)).unwrap()["a"].distance, 0.0);

        let path = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)];
        let d = Dataset::from_fn("t", &["a"], &["p"], 3, (10.0, 10.0), |_, f, _| Some(Vec2::new(path[f].0, path[f].1)))
            .unwrap();
        assert_eq!(calculate_distance_travelled(&d, &events(3, "a", &[(0, 3)])).unwrap()["a"].distance, 2.0);
        assert!(calculate_distance_travelled(&d, &events(3, "ghost", &[(0, 3)])).is_err());
    }

    #[test]
    fn distance_travelled_skips_undefined_centers() {
        let d = Dataset::from_fn("t", &["a"], &["p"], 4, (10.0, 10.0), |_, f, _| {
            (f != 2).then(|| Vec2::new(f as f64, 0.0))
        })
        .unwrap();
        let r = calculate_distance_travelled(&d, &events(4, "a", &[(0, 4)])).unwrap()["a"];
        assert_eq!(r, DistanceTravelled { distance: 1.0, skipped_frames: 1 });
    }

    #[test]
    fn median_filter_removes_spike() {
        let d = line_dataset(&[1., 1., 50., 1., 1.]);
        let f = median_filter(&d, 3).unwrap();
        assert_eq!(f.point(0, 2, 0), Some(Vec2::new(1.0, 0.0)));
        assert_eq!(median_filter(&d, 1).unwrap(), d);
        assert_eq!(median_filter(&d, 4), Err(KinematicsError::BadWindow(4)));
    }

    #[test]
    fn generic_over_f32() {
        let d = Dataset::<f32>::from_fn("t", &["a"], &["p"], 3, (10.0, 10.0), |_, f, _| Some(Vec2::new(f as f32, 0.0)))
            .unwrap();
        assert_eq!(compute_speed(&d).unwrap().scalar(0, 1, 0), Some(1.0f32));
    }
}
