//! Polyline primitives on 3D streamlines.
//!
//! All quantities are in millimeters (lengths) and 1/mm (curvature). Every
//! operation here is a pure function of its input.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Point3, t: f64) -> Point3 {
        self + (o - self) * t
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

/// An ordered polyline of at least two points with non-degenerate segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Streamline {
    points: Vec<Point3>,
}

impl Streamline {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidStreamline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidStreamline(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidStreamline(format!(
                "points {i} and {} are identical",
                i + 1
            )));
        }
        Ok(Streamline { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn arc_length(&self) -> f64 {
        ordered_sum(self.points.windows(2).map(|w| w[0].distance(w[1])))
    }

    /// Resample to `m` points equally spaced in arc length, using piecewise
    /// linear interpolation. End points are copied exactly.
    pub fn resample(&self, m: usize) -> Result<Streamline> {
        if m < 2 {
            return Err(Error::arg(format!("resample count must be >= 2, got {m}")));
        }
        let seg: Vec<f64> = self
            .points
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .collect();
        let total: f64 = seg.iter().sum();
        let step = total / (m - 1) as f64;

        let mut out = Vec::with_capacity(m);
        out.push(self.first());
        let mut j = 0;
        let mut walked = 0.0;
        for i in 1..m - 1 {
            let target = step * i as f64;
            while j < seg.len() - 1 && walked + seg[j] < target {
                walked += seg[j];
                j += 1;
            }
            let t = ((target - walked) / seg[j]).clamp(0.0, 1.0);
            out.push(self.points[j].lerp(self.points[j + 1], t));
        }
        out.push(self.last());
        Streamline::new(out)
    }

    /// Mean Menger curvature over interior points. Collinear triples count as
    /// zero; streamlines with fewer than 3 points have curvature 0.
    pub fn mean_curvature(&self) -> f64 {
        if self.points.len() < 3 {
            return 0.0;
        }
        let sum = ordered_sum(
            self.points
                .windows(3)
                .map(|w| menger_curvature(w[0], w[1], w[2])),
        );
        sum / (self.points.len() - 2) as f64
    }

    pub fn flip(&self) -> Streamline {
        let mut points = self.points.clone();
        points.reverse();
        Streamline { points }
    }

    /// Sum of unsigned angles between successive segment directions.
    pub fn total_turning_angle(&self) -> f64 {
        ordered_sum(self.points.windows(3).map(|w| {
            let u = w[1] - w[0];
            let v = w[2] - w[1];
            u.cross(v).norm().atan2(u.dot(v))
        }))
    }

    /// Point coordinates as an n×3 matrix, each coordinate multiplied by `scale`.
    pub fn to_matrix(&self, scale: f64) -> Matrix {
        let data = self
            .points
            .iter()
            .flat_map(|p| [p.x * scale, p.y * scale, p.z * scale])
            .collect();
        Matrix::from_vec(self.points.len(), 3, data).expect("n x 3 layout")
    }
}

// Summing in sorted order makes the per-streamline features bitwise
// independent of traversal direction.
fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Reciprocal circumradius of the triangle (a, b, c); 0 for degenerate triples.
pub fn menger_curvature(a: Point3, b: Point3, c: Point3) -> f64 {
    let ab = b - a;
    let bc = c - b;
    let ca = a - c;
    let denom = ab.norm() * bc.norm() * ca.norm();
    if denom == 0.0 {
        return 0.0;
    }
    let twice_area = ab.cross(bc).norm();
    2.0 * twice_area / denom
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonPlausible,
    Plausible,
}

impl Label {
    /// Class index used by the classifiers: 0 = non-plausible, 1 = plausible.
    pub fn class_index(self) -> usize {
        match self {
            Label::NonPlausible => 0,
            Label::Plausible => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Label {
        if i == 1 {
            Label::Plausible
        } else {
            Label::NonPlausible
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Plausible => "p",
            Label::NonPlausible => "np",
        }
    }

    pub fn is_plausible(self) -> bool {
        self == Label::Plausible
    }
}

/// A collection of streamlines with optional per-streamline labels and bundle
/// ids (0 = unassigned).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tractogram {
    pub streamlines: Vec<Streamline>,
    pub labels: Option<Vec<Label>>,
    pub class_ids: Option<Vec<u32>>,
}

impl Tractogram {
    pub fn new(streamlines: Vec<Streamline>) -> Self {
        Tractogram {
            streamlines,
            labels: None,
            class_ids: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.streamlines.len() {
            return Err(Error::arg(format!(
                "{} labels for {} streamlines",
                labels.len(),
                self.streamlines.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_class_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.streamlines.len() {
            return Err(Error::arg(format!(
                "{} class ids for {} streamlines",
                ids.len(),
                self.streamlines.len()
            )));
        }
        self.class_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }

    /// Sub-tractogram at the given indices, carrying labels and class ids along.
    pub fn select(&self, indices: &[usize]) -> Tractogram {
        Tractogram {
            streamlines: indices.iter().map(|&i| self.streamlines[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_ids: self
                .class_ids
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Concatenate tractograms; labels/class ids survive only if every part has them.
    pub fn concat(parts: &[&Tractogram]) -> Tractogram {
        let streamlines = parts
            .iter()
            .flat_map(|t| t.streamlines.iter().cloned())
            .collect();
        let labels = parts
            .iter()
            .map(|t| t.labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let class_ids = parts
            .iter()
            .map(|t| t.class_ids.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Tractogram {
            streamlines,
            labels,
            class_ids,
        }
    }
}
