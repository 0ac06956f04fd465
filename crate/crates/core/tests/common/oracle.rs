//! Frame-by-frame reference evaluator. Written directly from the relation
//! definitions with plain `f64` tuples; only dataset access is shared.

use etho_core::relations::{CmpOp, Orientation, Quantifier, RelationKind};
use etho_core::trackdata::Dataset;

pub type P = (f64, f64);

pub fn cmp(op: CmpOp, lhs: f64, rhs: f64) -> bool {
    match op {
        CmpOp::Lt => lhs < rhs,
        CmpOp::Le => lhs <= rhs,
        CmpOp::Gt => lhs > rhs,
        CmpOp::Ge => lhs >= rhs,
        CmpOp::Eq => lhs == rhs,
        CmpOp::Ne => lhs != rhs,
    }
}

fn pt(d: &Dataset<f64>, a: usize, f: usize, b: usize) -> Option<P> {
    d.point(a, f, b).map(|p| (p.x, p.y))
}

fn dist(p: P, q: P) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

pub fn center(d: &Dataset<f64>, a: usize, f: usize) -> Option<P> {
    if let Some(c) = d.bodypart_names().iter().position(|n| n == "mouse_center") {
        return pt(d, a, f, c);
    }
    let present: Vec<P> = (0..d.n_bodyparts()).filter_map(|b| pt(d, a, f, b)).collect();
    mean(&present)
}

fn mean(ps: &[P]) -> Option<P> {
    if ps.is_empty() {
        return None;
    }
    let n = ps.len() as f64;
    Some((ps.iter().map(|p| p.0).sum::<f64>() / n, ps.iter().map(|p| p.1).sum::<f64>() / n))
}

/// Central differences inside, one-sided at both ends.
pub fn derivative(track: &[Option<P>]) -> Vec<Option<P>> {
    let n = track.len();
    (0..n)
        .map(|f| {
            let (lo, hi, k) = if f == 0 {
                (0, 1, 1.0)
            } else if f == n - 1 {
                (n - 2, n - 1, 1.0)
            } else {
                (f - 1, f + 1, 2.0)
            };
            let (p, q) = (track[lo]?, track[hi]?);
            Some(((q.0 - p.0) / k, (q.1 - p.1) / k))
        })
        .collect()
}

fn norm(v: P) -> f64 {
    (v.0 * v.0 + v.1 * v.1).sqrt()
}

pub fn center_velocity(d: &Dataset<f64>, a: usize) -> Vec<Option<P>> {
    let track: Vec<Option<P>> = (0..d.n_frames()).map(|f| center(d, a, f)).collect();
    derivative(&track)
}

pub fn speed(d: &Dataset<f64>, a: usize) -> Vec<Option<f64>> {
    center_velocity(d, a).into_iter().map(|v| v.map(norm)).collect()
}

pub fn accel(d: &Dataset<f64>, a: usize) -> Vec<Option<f64>> {
    derivative(&center_velocity(d, a)).into_iter().map(|v| v.map(norm)).collect()
}

/// Winding number, with every point on an edge counted as inside.
pub fn inside(poly: &[P], p: P) -> bool {
    let n = poly.len();
    let mut winding = 0i32;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let dot = (p.0 - a.0) * (p.0 - b.0) + (p.1 - a.1) * (p.1 - b.1);
        if cross == 0.0 && dot <= 0.0 {
            return true;
        }
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                winding += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

pub fn poly_centroid(poly: &[P]) -> P {
    let n = poly.len();
    let mut a = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let w = p.0 * q.1 - q.0 * p.1;
        a += w;
        cx += (p.0 + q.0) * w;
        cy += (p.1 + q.1) * w;
    }
    (cx / (3.0 * a), cy / (3.0 * a))
}

/// `None` selects every bodypart and anchors distances at the center.
fn selected(d: &Dataset<f64>, a: usize, f: usize, sel: Option<&[usize]>) -> Option<Vec<P>> {
    match sel {
        None => (0..d.n_bodyparts()).map(|b| pt(d, a, f, b)).collect(),
        Some(idx) => idx.iter().map(|&b| pt(d, a, f, b)).collect(),
    }
}

fn anchor(d: &Dataset<f64>, a: usize, f: usize, sel: Option<&[usize]>) -> Option<P> {
    match sel {
        None => center(d, a, f),
        Some(_) => mean(&selected(d, a, f, sel)?),
    }
}

pub struct ObjectCase<'a> {
    pub poly: &'a [P],
    pub kind: RelationKind,
    pub comparison: Option<(CmpOp, f64)>,
    pub bodyparts: Option<&'a [usize]>,
    pub quantifier: Quantifier,
    pub negate: bool,
}

pub fn object_mask(d: &Dataset<f64>, a: usize, c: &ObjectCase) -> Vec<bool> {
    let xs = c.poly.iter().map(|p| p.0);
    let ys = c.poly.iter().map(|p| p.1);
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let centroid = poly_centroid(c.poly);
    let mask: Vec<bool> = (0..d.n_frames())
        .map(|f| {
            if c.kind == RelationKind::Distance {
                let (op, v) = c.comparison.expect("distance needs a comparison");
                return anchor(d, a, f, c.bodyparts).is_some_and(|p| cmp(op, dist(p, centroid), v));
            }
            let Some(pts) = selected(d, a, f, c.bodyparts) else { return false };
            let test = |p: &P| match c.kind {
                RelationKind::ToLeft => p.0 < x0,
                RelationKind::ToRight => p.0 > x1,
                RelationKind::ToAbove => p.1 < y0,
                RelationKind::ToBelow => p.1 > y1,
                RelationKind::Overlap => inside(c.poly, *p),
                k => panic!("{k} is not an object relation"),
            };
            !pts.is_empty()
                && match c.quantifier {
                    Quantifier::All => pts.iter().all(test),
                    Quantifier::Any => pts.iter().any(test),
                }
        })
        .collect();
    if c.negate {
        mask.iter().map(|m| !m).collect()
    } else {
        mask
    }
}

pub fn state_mask(values: &[Option<f64>], op: CmpOp, v: f64) -> Vec<bool> {
    values.iter().map(|x| x.is_some_and(|x| cmp(op, x, v))).collect()
}

#[derive(Clone, Copy)]
pub enum SocialTest {
    Compare(CmpOp, f64),
    Orientation { negated: bool, value: Orientation },
}

fn angle_deg(u: P, v: P) -> Option<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let c = ((u.0 * v.0 + u.1 * v.1) / (nu * nv)).clamp(-1.0, 1.0);
    Some(c.acos().to_degrees())
}

fn part(d: &Dataset<f64>, name: &str) -> usize {
    d.bodypart_names().iter().position(|n| n == name).expect("scene has the bodypart")
}

fn vec_between(d: &Dataset<f64>, a: usize, f: usize, from: usize, to: usize) -> Option<P> {
    let (p, q) = (pt(d, a, f, from)?, pt(d, a, f, to)?);
    Some((q.0 - p.0, q.1 - p.1))
}

pub struct SocialCase<'a> {
    pub kind: RelationKind,
    pub test: SocialTest,
    pub bodyparts: Option<&'a [usize]>,
    pub other_bodyparts: Option<&'a [usize]>,
    pub cone: f64,
}

pub fn social_mask(d: &Dataset<f64>, a: usize, b: usize, c: &SocialCase) -> Vec<bool> {
    let va = center_velocity(d, a);
    let vb = center_velocity(d, b);
    (0..d.n_frames())
        .map(|f| {
            let value: Option<f64> = match c.kind {
                RelationKind::Distance => {
                    anchor(d, a, f, c.bodyparts).zip(anchor(d, b, f, c.other_bodyparts)).map(|(p, q)| dist(p, q))
                }
                RelationKind::ClosestDistance => {
                    selected(d, a, f, c.bodyparts).zip(selected(d, b, f, c.other_bodyparts)).and_then(|(pa, pb)| {
                        let mut best: Option<f64> = None;
                        for p in &pa {
                            for q in &pb {
                                let x = dist(*p, *q);
                                best = Some(best.map_or(x, |m| m.min(x)));
                            }
                        }
                        best
                    })
                }
                RelationKind::Angle => {
                    let (n, t) = (part(d, "neck"), part(d, "tail_base"));
                    vec_between(d, a, f, n, t).zip(vec_between(d, b, f, n, t)).and_then(|(u, v)| angle_deg(u, v))
                }
                RelationKind::GazingAngle => {
                    let (n, t) = (part(d, "neck"), part(d, "nose"));
                    vec_between(d, a, f, n, t).zip(vec_between(d, b, f, n, t)).and_then(|(u, v)| angle_deg(u, v))
                }
                RelationKind::ViewAngle | RelationKind::Orientation => {
                    let head = vec_between(d, a, f, part(d, "neck"), part(d, "nose"));
                    let to = center(d, a, f).zip(center(d, b, f)).map(|(p, q)| (q.0 - p.0, q.1 - p.1));
                    head.zip(to).and_then(|(u, v)| angle_deg(u, v))
                }
                RelationKind::RelativeSpeed => va[f].zip(vb[f]).map(|(p, q)| norm((p.0 - q.0, p.1 - q.1))),
                k => panic!("{k} is not an animal relation"),
            };
            let Some(x) = value else { return false };
            match (c.kind, c.test) {
                (RelationKind::Orientation, SocialTest::Orientation { negated, value }) => {
                    let o = if x <= c.cone { Orientation::Front } else { Orientation::Behind };
                    (o == value) != negated
                }
                (RelationKind::Orientation, _) | (_, SocialTest::Orientation { .. }) => panic!("mismatched test"),
                (_, SocialTest::Compare(op, v)) => cmp(op, x, v),
            }
        })
        .collect()
}

/// Fills interior gaps shorter than `smooth`, then clears runs shorter than `min`.
pub fn post(mask: &[bool], smooth: usize, min: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    let runs = |m: &[bool], value: bool| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut f = 0;
        while f < m.len() {
            if m[f] == value {
                let s = f;
                while f < m.len() && m[f] == value {
                    f += 1;
                }
                out.push((s, f));
            } else {
                f += 1;
            }
        }
        out
    };
    for (s, e) in runs(&m, false) {
        let interior = s > 0 && e < m.len();
        if interior && e - s < smooth {
            m[s..e].iter_mut().for_each(|x| *x = true);
        }
    }
    for (s, e) in runs(&m, true) {
        if e - s < min {
            m[s..e].iter_mut().for_each(|x| *x = false);
        }
    }
    m
}

/// Frames covered by an outside run directly followed by an inside run.
pub fn enter_mask(inside: &[bool]) -> Vec<bool> {
    let n = inside.len();
    let mut out = vec![false; n];
    let mut f = 0;
    while f < n {
        if inside[f] {
            f += 1;
            continue;
        }
        let s = f;
        while f < n && !inside[f] {
            f += 1;
        }
        if f == n {
            break;
        }
        let mut e = f;
        while e < n && inside[e] {
            e += 1;
        }
        out[s..e].iter_mut().for_each(|x| *x = true);
        f = e;
    }
    out
}
