//! Shared fixtures: random synthetic worlds, scripted two-mouse scenes and a
//! brute-force per-frame evaluator that shares no code with the library.
#![allow(dead_code)]

pub mod oracle;

use etho_core::geometry::Vec2;
use etho_core::trackdata::{Dataset, ObjectKind, ObjectSet, SceneObject};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub const FRAME_W: f64 = 400.0;
pub const FRAME_H: f64 = 400.0;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Multiples of 0.5 keep cross products exact, so boundary hits are common
/// and both evaluators see the same sign.
pub fn grid(v: f64) -> f64 {
    (v * 2.0).round() / 2.0
}

pub fn random_mask(rng: &mut StdRng, n: usize, density: f64) -> Vec<bool> {
    // runs rather than independent frames, so events have varied lengths
    let mut out = Vec::with_capacity(n);
    let mut on = rng.gen_bool(density);
    while out.len() < n {
        let run = rng.gen_range(1..=12).min(n - out.len());
        out.extend(std::iter::repeat_n(on, run));
        on = rng.gen_bool(density);
    }
    out
}

fn random_polygon(rng: &mut StdRng, name: &str) -> SceneObject<f64> {
    loop {
        let cx = rng.gen_range(60.0..340.0);
        let cy = rng.gen_range(60.0..340.0);
        let k = rng.gen_range(3..=8);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let verts: Vec<Vec2<f64>> = angles
            .iter()
            .map(|t| {
                let r = rng.gen_range(15.0..55.0);
                Vec2::new(grid(cx + r * t.cos()), grid(cy + r * t.sin()))
            })
            .collect();
        if let Ok(o) = SceneObject::polygon(name, ObjectKind::Roi, verts) {
            return o;
        }
    }
}

pub struct World {
    pub dataset: Dataset<f64>,
    pub objects: ObjectSet<f64>,
}

/// 2-3 animals, 200-1000 frames, 5-27 bodyparts, 0-3 polygons, a few
/// missing keypoints.
pub fn random_world(rng: &mut StdRng) -> World {
    let n_animals = rng.gen_range(2..=3);
    let n_frames = rng.gen_range(200..=1000);
    let n_parts = rng.gen_range(5..=27);
    let mut parts: Vec<String> = ["nose", "neck", "tail_base", "left_ear", "right_ear"].iter().map(|s| s.to_string()).collect();
    if rng.gen_bool(0.5) {
        parts.push("mouse_center".into());
    }
    if rng.gen_bool(0.5) {
        parts.push("head_midpoint".into());
    }
    parts.truncate(n_parts);
    let mut i = 0;
    while parts.len() < n_parts {
        parts.push(format!("bp{i}"));
        i += 1;
    }
    let animals: Vec<String> = (0..n_animals).map(|a| format!("mouse{a}")).collect();
    let missing = rng.gen_range(0.0..0.05);

    // each animal is a random walk with a drifting heading; bodyparts sit at
    // fixed offsets in the body frame
    let offsets: Vec<(f64, f64)> = (0..n_parts).map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..5.0))).collect();
    let mut tracks = vec![Vec::with_capacity(n_frames); n_animals];
    for track in tracks.iter_mut() {
        let mut p = (rng.gen_range(40.0..360.0), rng.gen_range(40.0..360.0));
        let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut still = 0usize;
        for _ in 0..n_frames {
            track.push((p, heading));
            if still > 0 {
                still -= 1;
                continue;
            }
            if rng.gen_bool(0.02) {
                still = rng.gen_range(1..30);
            }
            heading += rng.gen_range(-0.4..0.4);
            let step = rng.gen_range(0.0..8.0);
            p.0 = (p.0 + step * heading.cos()).clamp(20.0, 380.0);
            p.1 = (p.1 + step * heading.sin()).clamp(20.0, 380.0);
        }
    }
    let mut holes = vec![false; n_animals * n_frames * n_parts];
    for h in holes.iter_mut() {
        *h = rng.gen_bool(missing);
    }
    let refs: Vec<&str> = animals.iter().map(String::as_str).collect();
    let part_refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let dataset = Dataset::from_fn("synthetic", &refs, &part_refs, n_frames, (FRAME_W, FRAME_H), |a, f, b| {
        if holes[(a * n_frames + f) * n_parts + b] {
            return None;
        }
        let ((x, y), h) = tracks[a][f];
        let (ox, oy) = offsets[b];
        let px = x + ox * h.cos() - oy * h.sin();
        let py = y + ox * h.sin() + oy * h.cos();
        Some(Vec2::new(grid(px).clamp(0.0, FRAME_W), grid(py).clamp(0.0, FRAME_H)))
    })
    .expect("synthetic dataset is valid");

    let n_objects = rng.gen_range(0..=3);
    let objects = ObjectSet::from_objects((0..n_objects).map(|i| random_polygon(rng, &format!("ROI{i}"))))
        .expect("distinct names");
    World { dataset, objects }
}

pub fn random_subset(rng: &mut StdRng, names: &[String]) -> Vec<String> {
    let k = rng.gen_range(1..=names.len().min(4));
    let mut v: Vec<String> = names.choose_multiple(rng, k).cloned().collect();
    v.sort();
    v
}

/// Bodypart offsets of a scripted mouse in its body frame, facing +x.
pub const BODY: [(&str, f64, f64); 6] = [
    ("nose", 6.0, 0.0),
    ("neck", 3.0, 0.0),
    ("tail_base", -6.0, 0.0),
    ("left_ear", 3.0, -2.0),
    ("right_ear", 3.0, 2.0),
    ("mouse_center", 0.0, 0.0),
];

/// A two-mouse scene ("a" and "b"). `pose(animal, frame)` returns the
/// center and heading in degrees.
pub fn scripted(n_frames: usize, pose: impl Fn(usize, usize) -> ((f64, f64), f64)) -> Dataset<f64> {
    let names: Vec<&str> = BODY.iter().map(|b| b.0).collect();
    Dataset::from_fn("scripted", &["a", "b"], &names, n_frames, (1000.0, 1000.0), |a, f, b| {
        let ((x, y), deg) = pose(a, f);
        let (s, c) = deg.to_radians().sin_cos();
        let (_, ox, oy) = BODY[b];
        Some(Vec2::new(x + ox * c - oy * s, y + ox * s + oy * c))
    })
    .expect("scripted scene stays in frame")
}
