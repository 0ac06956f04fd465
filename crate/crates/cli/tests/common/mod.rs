#![allow(dead_code)]

use std::path::{Path, PathBuf};

use etho_core::geometry::Vec2;
use etho_core::trackdata::{dataset_json_string, ObjectKind, SceneObject};
use etho_core::{Dataset, ObjectSet};

pub const PARTS: [&str; 5] = ["nose", "neck", "tail_base", "left_ear", "right_ear"];
const OFFSETS: [(f64, f64); 5] = [(6.0, 0.0), (3.0, 0.0), (-6.0, 0.0), (3.0, -2.0), (3.0, 2.0)];

/// Two mice occupying the same keypoints for 50 frames, walking right.
pub fn glued() -> Dataset {
    Dataset::from_fn("glued", &["m1", "m2"], &PARTS, 50, (400.0, 400.0), |_, f, b| {
        let (ox, oy) = OFFSETS[b];
        Some(Vec2::new(100.0 + f as f64 + ox, 200.0 + oy))
    })
    .unwrap()
}

/// One mouse crossing x = 100..298 along y = 200.
pub fn crossing() -> Dataset {
    Dataset::from_fn("crossing", &["m"], &PARTS, 100, (400.0, 400.0), |_, f, b| {
        let (ox, oy) = OFFSETS[b];
        Some(Vec2::new(100.0 + 2.0 * f as f64 + ox, 200.0 + oy))
    })
    .unwrap()
}

/// The square the crossing mouse passes through.
pub const SQUARE: [[f64; 2]; 4] = [[150.0, 150.0], [250.0, 150.0], [250.0, 250.0], [150.0, 250.0]];

pub fn square_objects(name: &str) -> ObjectSet {
    let verts = SQUARE.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    ObjectSet::from_objects([SceneObject::polygon(name, ObjectKind::Roi, verts).unwrap()]).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn write_dataset(dir: &Path, name: &str, d: &Dataset) -> PathBuf {
    write(dir, name, &dataset_json_string(d))
}

/// Runs the command line, returning status, stdout and stderr.
pub fn etho(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("etho").chain(args.iter().copied());
    let code = etho_cli::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn labels_csv(mask: &[bool]) -> String {
    let mut s = String::from("frame,label\n");
    for (f, m) in mask.iter().enumerate() {
        s.push_str(&format!("{f},{}\n", u8::from(*m)));
    }
    s
}
