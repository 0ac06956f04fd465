//! Planar primitives: points, polygons, rasterized masks.
//!
//! Coordinates are image pixels (x grows right, y grows down). Polygon
//! orientation is expressed through the signed shoelace area: positive means
//! counter-clockwise in the usual x-right/y-up convention.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Vec2 { x, y }
    }

    pub fn sub(self, o: Self) -> Self {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Self) -> Self {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: T) -> Self {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> T {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Unsigned angle between two vectors in degrees, `[0, 180]`.
/// `None` when either vector has zero length.
pub fn angle_between_deg<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> Option<T> {
    if a.norm() == T::zero() || b.norm() == T::zero() {
        return None;
    }
    // atan2 of |cross| and dot is stable near 0 and 180.
    let ang = a.cross(b).abs().atan2(a.dot(b));
    Some(ang.to_degrees_value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is degenerate (zero area or collinear vertices)")]
    Degenerate,
    #[error("polygon is not simple: edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("polygon vertex {0} is not finite")]
    NonFinite(usize),
    #[error("mask has {got} pixels, expected {width}x{height}")]
    MaskSize { width: usize, height: usize, got: usize },
    #[error("mask is empty")]
    EmptyMask,
}

/// A validated simple polygon, stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon<T> {
    vertices: Vec<Vec2<T>>,
}

fn signed_area2<T: Scalar>(v: &[Vec2<T>]) -> T {
    let n = v.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc = acc + v[i].cross(v[(i + 1) % n]);
    }
    acc
}

fn orient<T: Scalar>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> T {
    b.sub(a).cross(c.sub(a))
}

fn within_box<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn on_segment<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> bool {
    orient(a, b, p) == T::zero() && within_box(p, a, b)
}

fn segments_intersect<T: Scalar>(p1: Vec2<T>, p2: Vec2<T>, q1: Vec2<T>, q2: Vec2<T>) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(p1, q1, q2))
        || (d2 == z && on_segment(p2, q1, q2))
        || (d3 == z && on_segment(q1, p1, p2))
        || (d4 == z && on_segment(q2, p1, p2))
}

impl<T: Scalar> Polygon<T> {
    /// Validates and normalizes to counter-clockwise vertex order.
    pub fn new(mut vertices: Vec<Vec2<T>>) -> Result<Self, GeometryError> {
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        // a closing vertex equal to the first is tolerated
        if vertices.len() > 3 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(GeometryError::Degenerate);
            }
        }
        let area2 = signed_area2(&vertices);
        if area2 == T::zero() {
            return Err(GeometryError::Degenerate);
        }
        for i in 0..n {
            let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
            // a vertex folding back onto its own neighbour edge
            let prev = vertices[(i + n - 1) % n];
            if orient(prev, a1, a2) == T::zero() && a2.sub(a1).dot(prev.sub(a1)) > T::zero() {
                return Err(GeometryError::SelfIntersecting((i + n - 1) % n, i));
            }
        }
        if area2 < T::zero() {
            vertices.reverse();
        }
        Ok(Polygon { vertices })
    }

    pub fn vertices(&self) -> &[Vec2<T>] {
        &self.vertices
    }

    /// Positive area (pixels squared).
    pub fn area(&self) -> T {
        signed_area2(&self.vertices).abs() / T::lit(2.0)
    }

    pub fn centroid(&self) -> Vec2<T> {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut a2) = (T::zero(), T::zero(), T::zero());
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let c = p.cross(q);
            a2 = a2 + c;
            cx = cx + (p.x + q.x) * c;
            cy = cy + (p.y + q.y) * c;
        }
        let k = T::lit(3.0) * a2;
        Vec2::new(cx / k, cy / k)
    }

    pub fn bbox(&self) -> BBox<T> {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices[1..] {
            min = Vec2::new(min.x.min(v.x), min.y.min(v.y));
            max = Vec2::new(max.x.max(v.x), max.y.max(v.y));
        }
        BBox { min, max }
    }

    /// Point-in-polygon; points on an edge or vertex count as inside.
    pub fn contains(&self, p: Vec2<T>) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Polygon<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw<T> {
            vertices: Vec<Vec2<T>>,
        }
        let raw = Raw::<T>::deserialize(de)?;
        Polygon::new(raw.vertices).map_err(serde::de::Error::custom)
    }
}

/// Rasterized boolean mask, row-major. Pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    #[serde(with = "rle")]
    pixels: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, GeometryError> {
        if pixels.len() != width * height {
            return Err(GeometryError::MaskSize { width, height, got: pixels.len() });
        }
        if !pixels.iter().any(|&p| p) {
            return Err(GeometryError::EmptyMask);
        }
        Ok(Mask { width, height, pixels })
    }

    /// Re-checks the invariants of a deserialized mask.
    pub fn validated(self) -> Result<Self, GeometryError> {
        Mask::new(self.width, self.height, self.pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.pixels[y * self.width + x]
    }

    pub fn contains<T: Scalar>(&self, p: Vec2<T>) -> bool {
        if !(p.x >= T::zero() && p.y >= T::zero()) {
            return false;
        }
        match (p.x.floor().to_usize(), p.y.floor().to_usize()) {
            (Some(x), Some(y)) => self.get(x, y),
            _ => false,
        }
    }

    fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Mean of pixel centers.
    pub fn centroid<T: Scalar>(&self) -> Vec2<T> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y) in self.set_pixels() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1.0;
        }
        Vec2::new(T::lit(sx / n), T::lit(sy / n))
    }

    pub fn bbox<T: Scalar>(&self) -> BBox<T> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (x, y) in self.set_pixels() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        BBox {
            min: Vec2::new(T::lit(x0 as f64), T::lit(y0 as f64)),
            max: Vec2::new(T::lit(x1 as f64), T::lit(y1 as f64)),
        }
    }
}

/// Run lengths alternating unset/set, starting with unset.
mod rle {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pixels: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let mut runs = Vec::new();
        let mut cur = false;
        let mut len = 0usize;
        for &p in pixels {
            if p == cur {
                len += 1;
            } else {
                runs.push(len);
                cur = p;
                len = 1;
            }
        }
        runs.push(len);
        runs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let runs = Vec::<usize>::deserialize(d)?;
        let mut out = Vec::new();
        for (i, n) in runs.into_iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, n));
        }
        Ok(out)
    }
}
