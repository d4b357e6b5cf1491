//! Classification metrics, the length × curvature breakdown, invariance
//! probes, voxel masks and per-point attribution.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Label, Point3, Streamline, Tractogram};
use crate::models::Model;
use crate::tensor::Rng;

/// Confusion counts with plausible as the positive class. A ratio whose
/// numerator and denominator are both zero is reported as 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub dsc: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,accuracy,precision,recall,dsc";

    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        MetricsReport {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            dsc: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Share of non-plausible fibers accepted as plausible.
    pub fn fp_rate(&self) -> f64 {
        if self.fp + self.tn == 0 {
            0.0
        } else {
            self.fp as f64 / (self.fp + self.tn) as f64
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.tp, self.fp, self.tn, self.fn_, self.accuracy, self.precision, self.recall, self.dsc
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    /// The four rates in CSV column order.
    pub fn rates(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.dsc]
    }
}

pub fn confusion_metrics(preds: &[Label], labels: &[Label]) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::arg("metrics need at least one sample"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, l) in preds.iter().zip(labels) {
        match (p.is_plausible(), l.is_plausible()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}

/// Mean and sample standard deviation of each rate over several reports.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSummary {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl MetricsSummary {
    pub fn of(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::arg("no reports to summarize"));
        }
        let n = reports.len() as f64;
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for m in 0..4 {
            mean[m] = reports.iter().map(|r| r.rates()[m]).sum::<f64>() / n;
            if reports.len() > 1 {
                let ss: f64 = reports.iter().map(|r| (r.rates()[m] - mean[m]).powi(2)).sum();
                std[m] = (ss / (n - 1.0)).sqrt();
            }
        }
        Ok(MetricsSummary { mean, std })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LengthClass {
    Short,
    Medium,
    Long,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CurvatureClass {
    Straight,
    Curved,
    VeryCurved,
}

impl LengthClass {
    pub const ALL: [LengthClass; 3] = [LengthClass::Short, LengthClass::Medium, LengthClass::Long];

    /// Intervals [0, 50), [50, 100), [100, ∞) in millimeters.
    pub fn of(length_mm: f64) -> Self {
        if length_mm < 50.0 {
            LengthClass::Short
        } else if length_mm < 100.0 {
            LengthClass::Medium
        } else {
            LengthClass::Long
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LengthClass::Short => "short",
            LengthClass::Medium => "medium",
            LengthClass::Long => "long",
        }
    }
}

impl CurvatureClass {
    pub const ALL: [CurvatureClass; 3] = [CurvatureClass::Straight, CurvatureClass::Curved, CurvatureClass::VeryCurved];

    /// Intervals [0, 0.05), [0.05, 0.10), [0.10, ∞) in 1/mm.
    pub fn of(curvature: f64) -> Self {
        if curvature < 0.05 {
            CurvatureClass::Straight
        } else if curvature < 0.10 {
            CurvatureClass::Curved
        } else {
            CurvatureClass::VeryCurved
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurvatureClass::Straight => "straight",
            CurvatureClass::Curved => "curved",
            CurvatureClass::VeryCurved => "very_curved",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryCell {
    pub length: LengthClass,
    pub curvature: CurvatureClass,
}

impl CategoryCell {
    pub fn of(length_mm: f64, curvature: f64) -> Self {
        CategoryCell {
            length: LengthClass::of(length_mm),
            curvature: CurvatureClass::of(curvature),
        }
    }

    /// All nine cells, length-major.
    pub fn all() -> impl Iterator<Item = CategoryCell> {
        LengthClass::ALL.into_iter().flat_map(|length| {
            CurvatureClass::ALL
                .into_iter()
                .map(move |curvature| CategoryCell { length, curvature })
        })
    }
}

impl fmt::Display for CategoryCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.length.name(), self.curvature.name())
    }
}

pub fn categorize(s: &Streamline) -> CategoryCell {
    CategoryCell::of(s.arc_length(), s.mean_curvature())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub cell: CategoryCell,
    pub metrics: MetricsReport,
    pub fp_rate: f64,
}

/// Metrics restricted to each populated cell, in [`CategoryCell::all`] order.
pub fn per_category_report(
    preds: &[Label],
    labels: &[Label],
    streamlines: &[Streamline],
) -> Result<Vec<CellReport>> {
    if preds.len() != labels.len() || labels.len() != streamlines.len() {
        return Err(Error::arg(format!(
            "inconsistent lengths: {} predictions, {} labels, {} streamlines",
            preds.len(),
            labels.len(),
            streamlines.len()
        )));
    }
    let cells: Vec<CategoryCell> = streamlines.iter().map(categorize).collect();
    let mut out = Vec::new();
    for cell in CategoryCell::all() {
        let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == cell).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<Label> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<Label> = idx.iter().map(|&i| labels[i]).collect();
        let metrics = confusion_metrics(&p, &l)?;
        out.push(CellReport {
            cell,
            fp_rate: metrics.fp_rate(),
            metrics,
        });
    }
    Ok(out)
}

pub fn category_csv(reports: &[CellReport]) -> String {
    let mut s = format!("length,curvature,count,{},fp_rate\n", MetricsReport::CSV_HEADER);
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.cell.length.name(),
            r.cell.curvature.name(),
            r.metrics.total(),
            r.metrics.csv_row(),
            r.fp_rate
        ));
    }
    s
}

fn resampled(t: &Tractogram, resample_to: Option<usize>) -> Result<Vec<Streamline>> {
    match resample_to {
        Some(m) => t.streamlines.iter().map(|s| s.resample(m)).collect(),
        None => Ok(t.streamlines.clone()),
    }
}

/// Random non-identity permutation of `0..n` (n ≥ 2).
fn shuffled_order(rng: &mut Rng, n: usize) -> Vec<usize> {
    loop {
        let p = rng.permutation(n);
        if p.iter().enumerate().any(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Points of every (resampled) streamline shuffled by a seeded non-identity
/// permutation; streamline `i` uses the sub-stream `i` of `seed`.
pub fn shuffle_points(t: &Tractogram, resample_to: Option<usize>, seed: u64) -> Result<Tractogram> {
    let root = Rng::new(seed);
    let streamlines = resampled(t, resample_to)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = root.split(i as u64);
            let order = shuffled_order(&mut rng, s.len());
            Streamline::new(order.iter().map(|&j| s.points()[j]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tractogram {
        streamlines,
        labels: t.labels.clone(),
        class_ids: t.class_ids.clone(),
    })
}

/// Metrics of predictions on point-shuffled fibers against the original labels.
pub fn permutation_test(
    model: &Model,
    t: &Tractogram,
    labels: &[Label],
    seed: u64,
    resample_to: Option<usize>,
    workers: usize,
) -> Result<MetricsReport> {
    let shuffled = shuffle_points(t, resample_to, seed)?;
    let preds: Vec<Label> = model
        .predict_batch(&shuffled, None, workers)?
        .iter()
        .map(|p| p.label())
        .collect();
    confusion_metrics(&preds, labels)
}

/// Largest componentwise logit change between each fiber and its flip.
pub fn flip_test(model: &Model, t: &Tractogram, resample_to: Option<usize>, workers: usize) -> Result<f64> {
    let base = Tractogram::new(resampled(t, resample_to)?);
    let flipped = Tractogram::new(base.streamlines.iter().map(Streamline::flip).collect());
    let a = model.predict_batch(&base, None, workers)?;
    let b = model.predict_batch(&flipped, None, workers)?;
    Ok(a.iter()
        .zip(&b)
        .flat_map(|(x, y)| x.logits.iter().zip(&y.logits).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max))
}

/// For each point, how many global-descriptor columns took their maximum
/// there. Counts sum to the descriptor width.
pub fn max_activation_attribution(model: &Model, s: &Streamline) -> Result<Vec<usize>> {
    let argmax = model.global_argmax(s)?;
    let mut counts = vec![0usize; s.len()];
    for r in argmax {
        counts[r] += 1;
    }
    Ok(counts)
}

/// Axis-aligned box in millimeters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Bounds {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::arg("bounds must be finite with min < max on every axis"));
        }
        Ok(Bounds { min, max })
    }

    /// Cube centred on the origin with the given half-width.
    pub fn cube(half: f64) -> Result<Self> {
        Bounds::new(Point3::new(-half, -half, -half), Point3::new(half, half, half))
    }

    pub fn contains(&self, p: Point3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

/// Occupancy grid with voxel `(i, j, k)` covering
/// `origin + voxel_mm · [i, i+1) × [j, j+1) × [k, k+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMask {
    pub origin: Point3,
    pub voxel_mm: f64,
    pub dims: [usize; 3],
    occupied: Vec<bool>,
}

impl VoxelMask {
    pub fn empty(bounds: &Bounds, voxel_mm: f64) -> Result<Self> {
        if !(voxel_mm.is_finite() && voxel_mm > 0.0) {
            return Err(Error::arg(format!("voxel size must be positive, got {voxel_mm}")));
        }
        let ext = bounds.max - bounds.min;
        let dims = [ext.x, ext.y, ext.z].map(|e| ((e / voxel_mm).ceil() as usize).max(1));
        Ok(VoxelMask {
            origin: bounds.min,
            voxel_mm,
            dims,
            occupied: vec![false; dims[0] * dims[1] * dims[2]],
        })
    }

    fn index(&self, v: [usize; 3]) -> usize {
        (v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]
    }

    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        self.occupied[self.index(v)]
    }

    pub fn mark(&mut self, v: [usize; 3]) {
        let i = self.index(v);
        self.occupied[i] = true;
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    /// Linear indices (x-major, z fastest) of occupied voxels, ascending.
    pub fn occupied_indices(&self) -> Vec<usize> {
        (0..self.occupied.len()).filter(|&i| self.occupied[i]).collect()
    }

    pub fn from_indices(origin: Point3, voxel_mm: f64, dims: [usize; 3], indices: &[usize]) -> Result<Self> {
        if !(voxel_mm.is_finite() && voxel_mm > 0.0) || dims.contains(&0) || !origin.is_finite() {
            return Err(Error::arg("invalid voxel grid"));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::arg("voxel grid too large"))?;
        let mut occupied = vec![false; len];
        for &i in indices {
            *occupied
                .get_mut(i)
                .ok_or_else(|| Error::arg(format!("voxel index {i} outside a grid of {len}")))? = true;
        }
        Ok(VoxelMask {
            origin,
            voxel_mm,
            dims,
            occupied,
        })
    }

    fn same_grid(&self, o: &VoxelMask) -> bool {
        self.dims == o.dims && self.origin == o.origin && self.voxel_mm == o.voxel_mm
    }

    /// Continuous grid coordinates of a point.
    fn grid_coords(&self, p: Point3) -> [f64; 3] {
        let u = (p - self.origin) * (1.0 / self.voxel_mm);
        [u.x, u.y, u.z]
    }

    /// Voxel containing grid coordinates `u`; points on the upper bound face
    /// fall into the last voxel.
    pub fn voxel_of(&self, p: Point3) -> [usize; 3] {
        let u = self.grid_coords(p);
        [0, 1, 2].map(|a| (u[a].floor().max(0.0) as usize).min(self.dims[a] - 1))
    }

    /// Marks every voxel crossed by segment `a → b` (Amanatides-Woo traversal).
    fn trace_segment(&mut self, a: Point3, b: Point3) {
        let u0 = self.grid_coords(a);
        let u1 = self.grid_coords(b);
        let mut v = self.voxel_of(a).map(|x| x as i64);
        let end = self.voxel_of(b).map(|x| x as i64);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            let d = u1[ax] - u0[ax];
            if d > 0.0 {
                step[ax] = 1;
                t_max[ax] = ((v[ax] + 1) as f64 - u0[ax]) / d;
                t_delta[ax] = 1.0 / d;
            } else if d < 0.0 {
                step[ax] = -1;
                t_max[ax] = (u0[ax] - v[ax] as f64) / -d;
                t_delta[ax] = -1.0 / d;
            }
        }
        loop {
            self.mark([v[0] as usize, v[1] as usize, v[2] as usize]);
            if v == end {
                break;
            }
            let ax = (0..3)
                .min_by(|&i, &j| t_max[i].total_cmp(&t_max[j]))
                .unwrap();
            if t_max[ax] > 1.0 {
                break;
            }
            v[ax] += step[ax];
            if v[ax] < 0 || v[ax] >= self.dims[ax] as i64 {
                break;
            }
            t_max[ax] += t_delta[ax];
        }
    }
}

/// Voxels intersected by any segment of any streamline.
pub fn voxelize(streamlines: &[Streamline], voxel_mm: f64, bounds: &Bounds) -> Result<VoxelMask> {
    let mut mask = VoxelMask::empty(bounds, voxel_mm)?;
    for (i, s) in streamlines.iter().enumerate() {
        if let Some(p) = s.points().iter().find(|p| !bounds.contains(**p)) {
            return Err(Error::arg(format!(
                "streamline {i}: point ({}, {}, {}) lies outside the voxel bounds",
                p.x, p.y, p.z
            )));
        }
        for w in s.points().windows(2) {
            mask.trace_segment(w[0], w[1]);
        }
    }
    Ok(mask)
}

pub fn volumetric_dsc(a: &VoxelMask, b: &VoxelMask) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::arg("voxel masks are defined on different grids"));
    }
    let both = a
        .occupied
        .iter()
        .zip(&b.occupied)
        .filter(|(x, y)| **x && **y)
        .count();
    Ok(ratio(2 * both, a.count() + b.count()))
}
