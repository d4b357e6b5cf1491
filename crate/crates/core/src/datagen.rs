//! Synthetic tractograms: jittered Bézier bundles inside a spherical brain,
//! corrupted artifact fibers, and the rule-based labelers.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Label, Point3, Streamline, Tractogram};
use crate::tensor::Rng;

/// Geometric plausibility rules of the exclusive labeling policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelRules {
    pub min_length_mm: f64,
    pub loop_angle_rad: f64,
    /// Interface shell as fractions of the brain radius.
    pub r_inner: f64,
    pub r_outer: f64,
    pub brain_radius_mm: f64,
}

impl Default for LabelRules {
    fn default() -> Self {
        LabelRules {
            min_length_mm: 20.0,
            loop_angle_rad: 2.0 * PI,
            r_inner: 0.9,
            r_outer: 1.0,
            brain_radius_mm: 70.0,
        }
    }
}

impl LabelRules {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r_inner && self.r_inner < self.r_outer && self.r_outer <= 1.0) {
            return Err(Error::arg("shell fractions must satisfy 0 < inner < outer <= 1"));
        }
        if !(self.min_length_mm > 0.0 && self.loop_angle_rad > 0.0 && self.brain_radius_mm > 0.0) {
            return Err(Error::arg("length, loop angle and brain radius must be positive"));
        }
        Ok(())
    }

    pub fn shell_mm(&self) -> (f64, f64) {
        (self.r_inner * self.brain_radius_mm, self.r_outer * self.brain_radius_mm)
    }

    pub fn in_shell(&self, p: Point3) -> bool {
        let (lo, hi) = self.shell_mm();
        (lo..=hi).contains(&p.norm())
    }

    pub fn is_short(&self, s: &Streamline) -> bool {
        s.arc_length() < self.min_length_mm
    }

    pub fn has_loop(&self, s: &Streamline) -> bool {
        s.total_turning_angle() >= self.loop_angle_rad
    }

    pub fn is_truncated(&self, s: &Streamline) -> bool {
        !(self.in_shell(s.first()) && self.in_shell(s.last()))
    }

    pub fn label(&self, s: &Streamline) -> Label {
        if self.is_short(s) || self.has_loop(s) || self.is_truncated(s) {
            Label::NonPlausible
        } else {
            Label::Plausible
        }
    }
}

/// Non-plausible labels for short, looping or truncated fibers; everything
/// else is plausible.
pub fn apply_exclusive_rules(t: &Tractogram, rules: &LabelRules) -> Vec<Label> {
    t.streamlines.iter().map(|s| rules.label(s)).collect()
}

/// Plausible iff the class id is in `included`; class 0 never is.
pub fn relabel_inclusive(class_ids: &[u32], included: &BTreeSet<u32>) -> Vec<Label> {
    class_ids
        .iter()
        .map(|&c| {
            if c != 0 && included.contains(&c) {
                Label::Plausible
            } else {
                Label::NonPlausible
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleTemplate {
    pub name: String,
    /// Cubic Bézier control points.
    pub control: [Point3; 4],
    pub class_id: u32,
    pub count: usize,
    /// Per-fiber Gaussian offset of every control point (mm).
    pub jitter_mm: f64,
    /// Per-point Gaussian noise (mm).
    pub noise_mm: f64,
}

fn bezier(c: &[Point3; 4], t: f64) -> Point3 {
    let u = 1.0 - t;
    c[0] * (u * u * u) + c[1] * (3.0 * u * u * t) + c[2] * (3.0 * u * t * t) + c[3] * (t * t * t)
}

fn unit(p: Point3) -> Point3 {
    p * (1.0 / p.norm())
}

/// Two unit vectors completing `a` to an orthonormal frame.
fn frame(a: Point3) -> (Point3, Point3) {
    let helper = if a.x.abs() < 0.9 { Point3::new(1.0, 0.0, 0.0) } else { Point3::new(0.0, 1.0, 0.0) };
    let u = unit(a.cross(helper));
    (u, a.cross(u))
}

impl BundleTemplate {
    /// Fiber whose endpoints sit at `radius` on either side of `center_dir`,
    /// `separation_deg` apart. The inner control points are pulled `dip` mm
    /// toward the centre; `bulge` sets how far along the chord they sit
    /// (negative values give an omega shape).
    pub fn on_sphere(
        name: &str,
        class_id: u32,
        center_dir: [f64; 3],
        separation_deg: f64,
        dip: f64,
        bulge: f64,
        radius: f64,
    ) -> BundleTemplate {
        let c = unit(center_dir.into());
        let t = unit(c.cross(Point3::new(0.3, 0.1, 1.0)));
        let h = separation_deg.to_radians() / 2.0;
        let a = (c * h.cos() + t * h.sin()) * radius;
        let b = (c * h.cos() - t * h.sin()) * radius;
        let p1 = a + (b - a) * bulge - unit(a) * dip;
        let p2 = b + (a - b) * bulge - unit(b) * dip;
        BundleTemplate {
            name: name.to_string(),
            control: [a, p1, p2, b],
            class_id,
            count: 0,
            jitter_mm: 1.5,
            noise_mm: 0.02,
        }
    }

    /// Eight bundles covering short, medium and long fibers with straight,
    /// C-shaped and tightly bent trajectories, in distinct octants.
    pub fn default_set(rules: &LabelRules) -> Vec<BundleTemplate> {
        let (lo, hi) = rules.shell_mm();
        let r = 0.5 * (lo + hi);
        vec![
            BundleTemplate::on_sphere("short_straight", 1, [1.0, 1.0, 1.0], 36.0, 0.0, 1.0 / 3.0, r),
            BundleTemplate::on_sphere("short_arc", 2, [-1.0, 1.0, 1.0], 14.0, 25.0, 1.0 / 3.0, r),
            BundleTemplate::on_sphere("short_u", 3, [1.0, -1.0, 1.0], 10.0, 12.0, -0.4, r),
            BundleTemplate::on_sphere("medium_straight", 4, [-1.0, -1.0, 1.0], 70.0, 0.0, 1.0 / 3.0, r),
            BundleTemplate::on_sphere("medium_omega", 5, [1.0, 1.0, -1.0], 22.0, 30.0, -0.4, r),
            BundleTemplate::on_sphere("medium_arc", 6, [-1.0, 1.0, -1.0], 45.0, 30.0, 0.1, r),
            BundleTemplate::on_sphere("long_straight", 7, [1.0, -1.0, -1.0], 130.0, 0.0, 1.0 / 3.0, r),
            BundleTemplate::on_sphere("long_arc", 8, [-1.0, -1.0, -1.0], 70.0, 55.0, 0.05, r),
        ]
    }

    /// Noise-free fiber through the template's control points.
    pub fn nominal(&self, points: usize) -> Result<Streamline> {
        curve(&self.control, points)
    }

    fn sample(&self, rng: &mut Rng, points: usize) -> Result<Streamline> {
        let mut c = self.control;
        for p in c.iter_mut() {
            *p = *p + gaussian3(rng, self.jitter_mm);
        }
        let s = curve(&c, points)?;
        Streamline::new(
            s.points()
                .iter()
                .map(|&p| p + gaussian3(rng, self.noise_mm))
                .collect(),
        )
    }

    /// True when the nominal fiber lies well inside the inner shell boundary
    /// between 40% and 70% of its length, so cutting it there leaves an
    /// endpoint outside the interface.
    fn is_deep(&self, rules: &LabelRules) -> bool {
        let Ok(s) = self.nominal(64) else { return false };
        let (lo, _) = rules.shell_mm();
        (8..=14).all(|i| point_at_fraction(&s, i as f64 / 20.0).norm() < lo - 4.0)
    }
}

fn curve(c: &[Point3; 4], points: usize) -> Result<Streamline> {
    let dense: Vec<Point3> = (0..=256).map(|i| bezier(c, i as f64 / 256.0)).collect();
    Streamline::new(dense)?.resample(points)
}

fn gaussian3(rng: &mut Rng, std: f64) -> Point3 {
    Point3::new(rng.normal(0.0, std), rng.normal(0.0, std), rng.normal(0.0, std))
}

fn point_at_fraction(s: &Streamline, f: f64) -> Point3 {
    let target = f * s.arc_length();
    let mut acc = 0.0;
    for w in s.points().windows(2) {
        let d = w[0].distance(w[1]);
        if acc + d >= target {
            return w[0].lerp(w[1], (target - acc) / d);
        }
        acc += d;
    }
    s.last()
}

/// Points of `s` up to arc fraction `f` (the cut point included).
fn truncate(s: &Streamline, f: f64) -> Result<Streamline> {
    let target = f * s.arc_length();
    let mut pts = vec![s.first()];
    let mut acc = 0.0;
    for w in s.points().windows(2) {
        let d = w[0].distance(w[1]);
        if acc + d >= target {
            let cut = w[0].lerp(w[1], (target - acc) / d);
            if cut != *pts.last().unwrap() {
                pts.push(cut);
            }
            break;
        }
        pts.push(w[1]);
        acc += d;
    }
    Streamline::new(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Corruption {
    Short,
    Loop,
    Truncated,
    UTurn,
    RandomWalk,
}

impl Corruption {
    pub const ALL: [Corruption; 5] = [
        Corruption::Short,
        Corruption::Loop,
        Corruption::Truncated,
        Corruption::UTurn,
        Corruption::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::Short => "short",
            Corruption::Loop => "loop",
            Corruption::Truncated => "truncated",
            Corruption::UTurn => "uturn",
            Corruption::RandomWalk => "random_walk",
        }
    }
}

/// What a generated fiber was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FiberKind {
    Bundle(usize),
    Corrupted(Corruption),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub templates: Vec<BundleTemplate>,
    /// Number of fibers of each corruption type, in [`Corruption::ALL`] order.
    pub corruptions: [usize; 5],
    pub seed: u64,
    /// Points per generated fiber.
    pub points: usize,
    pub rules: LabelRules,
}

impl GenConfig {
    /// Default templates with `round(total · plausible_fraction)` bundle fibers
    /// spread evenly over the templates and the rest spread evenly over the
    /// corruption types.
    pub fn default_mix(total: usize, plausible_fraction: f64, seed: u64) -> Result<GenConfig> {
        if total < 2 {
            return Err(Error::arg(format!("need at least 2 fibers, got {total}")));
        }
        if !(0.0..=1.0).contains(&plausible_fraction) {
            return Err(Error::arg("plausible fraction must lie in [0, 1]"));
        }
        let rules = LabelRules::default();
        let mut templates = BundleTemplate::default_set(&rules);
        let plausible = (total as f64 * plausible_fraction).round() as usize;
        for (i, t) in templates.iter_mut().enumerate() {
            t.count = even_share(plausible, 8, i);
        }
        let np = total - plausible;
        let corruptions = [0, 1, 2, 3, 4].map(|i| even_share(np, 5, i));
        Ok(GenConfig {
            templates,
            corruptions,
            seed,
            points: 24,
            rules,
        })
    }

    pub fn total(&self) -> usize {
        self.templates.iter().map(|t| t.count).sum::<usize>() + self.corruptions.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.total() < 2 {
            return Err(Error::arg("a generated tractogram needs at least 2 fibers"));
        }
        if self.points < 4 {
            return Err(Error::arg("fibers need at least 4 points"));
        }
        let r = self.rules.brain_radius_mm;
        for t in &self.templates {
            if t.control.iter().any(|p| !p.is_finite() || p.norm() > r) {
                return Err(Error::Template {
                    template: t.name.clone(),
                    attempts: 0,
                    reason: "control points must lie inside the brain sphere".into(),
                });
            }
            if !(t.jitter_mm >= 0.0 && t.noise_mm >= 0.0) {
                return Err(Error::arg(format!("template `{}`: negative noise", t.name)));
            }
        }
        Ok(())
    }
}

fn even_share(total: usize, parts: usize, i: usize) -> usize {
    total / parts + usize::from(i < total % parts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Fibers with class ids (template class for bundle fibers, 0 for
    /// corruptions); no labels are attached.
    pub tractogram: Tractogram,
    pub kinds: Vec<FiberKind>,
}

const MAX_ATTEMPTS: usize = 100;

/// Deterministic for a given config. Bundle fibers are rejection-sampled
/// until they satisfy every labeling rule; corruptions are built to violate
/// them. The output order is a seeded shuffle.
pub fn generate(config: &GenConfig) -> Result<Generated> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut fibers: Vec<(Streamline, u32, FiberKind)> = Vec::with_capacity(config.total());

    for (ti, t) in config.templates.iter().enumerate() {
        let mut rng = root.split(ti as u64 + 1);
        for _ in 0..t.count {
            let s = sample_plausible(t, &mut rng, config)?;
            fibers.push((s, t.class_id, FiberKind::Bundle(ti)));
        }
    }

    let deep: Vec<&BundleTemplate> = config.templates.iter().filter(|t| t.is_deep(&config.rules)).collect();
    for (ci, (&kind, &count)) in Corruption::ALL.iter().zip(&config.corruptions).enumerate() {
        let mut rng = root.split(1000 + ci as u64);
        for _ in 0..count {
            let s = corrupt(kind, &mut rng, config, &deep)?;
            fibers.push((s, 0, FiberKind::Corrupted(kind)));
        }
    }

    let order = root.split(0).permutation(fibers.len());
    let mut slots: Vec<Option<(Streamline, u32, FiberKind)>> = fibers.into_iter().map(Some).collect();
    let (mut streamlines, mut ids, mut kinds) = (Vec::new(), Vec::new(), Vec::new());
    for i in order {
        let (s, id, k) = slots[i].take().expect("permutation visits each slot once");
        streamlines.push(s);
        ids.push(id);
        kinds.push(k);
    }
    Ok(Generated {
        tractogram: Tractogram::new(streamlines).with_class_ids(ids)?,
        kinds,
    })
}

fn sample_plausible(t: &BundleTemplate, rng: &mut Rng, config: &GenConfig) -> Result<Streamline> {
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let s = t.sample(rng, config.points)?;
        let rules = &config.rules;
        if rules.is_short(&s) {
            last_reason = format!("too short ({:.1} mm)", s.arc_length());
        } else if rules.has_loop(&s) {
            last_reason = format!("turning {:.2} rad reaches the loop threshold", s.total_turning_angle());
        } else if rules.is_truncated(&s) {
            last_reason = "an endpoint falls outside the interface shell".into();
        } else {
            return Ok(s);
        }
    }
    Err(Error::Template {
        template: t.name.clone(),
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

fn pick<'a>(rng: &mut Rng, templates: &[&'a BundleTemplate]) -> Result<&'a BundleTemplate> {
    if templates.is_empty() {
        return Err(Error::arg("corruptions need at least one suitable template"));
    }
    Ok(templates[rng.below(templates.len())])
}

fn corrupt(kind: Corruption, rng: &mut Rng, config: &GenConfig, deep: &[&BundleTemplate]) -> Result<Streamline> {
    let all: Vec<&BundleTemplate> = config.templates.iter().collect();
    let rules = &config.rules;
    match kind {
        Corruption::Short => {
            let base = pick(rng, &all)?.sample(rng, config.points)?;
            let target = rng.uniform(0.4, 0.9) * rules.min_length_mm;
            let factor = target / base.arc_length();
            let centre = base.points().iter().fold(Point3::ORIGIN, |a, &p| a + p) * (1.0 / base.len() as f64);
            Streamline::new(base.points().iter().map(|&p| centre + (p - centre) * factor).collect())
        }
        Corruption::Loop => {
            let base = pick(rng, &all)?.sample(rng, config.points)?;
            let end = base.last();
            let axis = unit(end) * -1.0;
            let (u, v) = frame(axis);
            let rho = rng.uniform(5.0, 8.0);
            let pitch = rng.uniform(1.0, 3.0);
            let centre = end - u * rho;
            let steps = 30;
            let mut pts = base.into_points();
            for i in 1..=steps {
                let phi = 2.5 * PI * i as f64 / steps as f64;
                pts.push(centre + u * (rho * phi.cos()) + v * (rho * phi.sin()) + axis * (pitch * phi / (2.0 * PI)));
            }
            Streamline::new(pts)
        }
        Corruption::Truncated => {
            let base = pick(rng, deep)?.sample(rng, config.points)?;
            let f = rng.uniform(0.4, 0.7);
            let cut = truncate(&base, f)?;
            let s = if rng.below(2) == 0 { cut } else { cut.flip() };
            s.resample(config.points)
        }
        Corruption::UTurn => {
            let base = pick(rng, deep)?.sample(rng, config.points)?;
            let forward = truncate(&base, rng.uniform(0.4, 0.7))?;
            let pts = forward.points();
            let n = pts.len();
            let tangent = unit(pts[n - 1] - pts[n - 2]);
            let (u, _) = frame(tangent);
            let angle = 170f64.to_radians();
            let back = tangent * angle.cos() + u * angle.sin();
            let length = forward.arc_length() * rng.uniform(0.3, 0.6);
            let steps = (config.points / 2).max(2);
            let turn = pts[n - 1];
            let mut out = forward.into_points();
            for i in 1..=steps {
                out.push(turn + back * (length * i as f64 / steps as f64));
            }
            Streamline::new(out)
        }
        Corruption::RandomWalk => {
            let r = rules.brain_radius_mm * rules.r_inner * 0.7;
            let mut p = Point3::new(rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)) * (1.0 / 3f64.sqrt());
            let mut pts = vec![p];
            for _ in 1..config.points {
                let step = unit(gaussian3(rng, 1.0)) * 2.0;
                p = p + step;
                pts.push(p);
            }
            Streamline::new(pts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(length: f64) -> Streamline {
        // endpoints on the mid-shell sphere, symmetric around the x axis
        let r = 66.5;
        let half = length / 2.0;
        let x = (r * r - half * half).sqrt();
        let a = Point3::new(x, -half, 0.0);
        let b = Point3::new(x, half, 0.0);
        Streamline::new((0..10).map(|i| a.lerp(b, i as f64 / 9.0)).collect()).unwrap()
    }

    #[test]
    fn rule_examples() {
        let r = LabelRules::default();
        assert_eq!(r.label(&straight(10.0)), Label::NonPlausible);
        assert_eq!(r.label(&straight(50.0)), Label::Plausible);
        assert_eq!(r.label(&straight(19.9)), Label::NonPlausible);
        assert_eq!(r.label(&straight(20.1)), Label::Plausible);

        // 2.5π of turning: a flat spiral arc starting and ending in the shell
        let pts: Vec<Point3> = (0..=60)
            .map(|i| {
                let phi = 2.5 * PI * i as f64 / 60.0;
                Point3::new(66.0 + 2.0 * phi.cos(), 2.0 * phi.sin(), 0.1 * phi)
            })
            .collect();
        let looped = Streamline::new(pts).unwrap();
        assert!(looped.total_turning_angle() > 2.0 * PI);
        assert_eq!(r.label(&looped), Label::NonPlausible);

        let inner = Streamline::new(vec![Point3::new(10.0, 0.0, 0.0), Point3::new(66.0, 0.0, 0.0)]).unwrap();
        assert_eq!(r.label(&inner), Label::NonPlausible);
        assert!(LabelRules { r_inner: 1.1, ..r }.validate().is_err());
    }

    #[test]
    fn inclusive_relabeling() {
        let ids = [0, 1, 2, 3, 1, 0];
        let all: BTreeSet<u32> = [0, 1, 2, 3].into_iter().collect();
        let labels = relabel_inclusive(&ids, &all);
        assert_eq!(labels.iter().filter(|l| !l.is_plausible()).count(), 2);
        assert!(relabel_inclusive(&ids, &BTreeSet::new()).iter().all(|l| !l.is_plausible()));
        let a: BTreeSet<u32> = [1].into_iter().collect();
        let b: BTreeSet<u32> = [1, 3].into_iter().collect();
        let (la, lb) = (relabel_inclusive(&ids, &a), relabel_inclusive(&ids, &b));
        assert!(la.iter().zip(&lb).all(|(x, y)| !x.is_plausible() || y.is_plausible()));
    }

    #[test]
    fn bundles_only_satisfy_rules() {
        let mut config = GenConfig::default_mix(400, 1.0, 3).unwrap();
        assert_eq!(config.corruptions, [0; 5]);
        config.seed = 4;
        let g = generate(&config).unwrap();
        let labels = apply_exclusive_rules(&g.tractogram, &config.rules);
        assert!(labels.iter().all(|l| l.is_plausible()));
        assert!(g.tractogram.class_ids.as_ref().unwrap().iter().all(|&c| (1..=8).contains(&c)));
    }

    #[test]
    fn deterministic_and_exact_mix() {
        let config = GenConfig::default_mix(1000, 0.6, 7).unwrap();
        let a = generate(&config).unwrap();
        assert_eq!(a, generate(&config).unwrap());
        let ids = a.tractogram.class_ids.as_ref().unwrap();
        assert_eq!(ids.iter().filter(|&&c| c != 0).count(), 600);
        assert_eq!(ids.iter().filter(|&&c| c == 0).count(), 400);
        let other = generate(&GenConfig { seed: 8, ..config }).unwrap();
        assert_ne!(a.tractogram, other.tractogram);
    }

    #[test]
    fn corruptions_violate_rules() {
        let config = GenConfig::default_mix(2000, 0.0, 11).unwrap();
        let g = generate(&config).unwrap();
        let labels = apply_exclusive_rules(&g.tractogram, &config.rules);
        for kind in Corruption::ALL {
            let idx: Vec<usize> = (0..g.kinds.len()).filter(|&i| g.kinds[i] == FiberKind::Corrupted(kind)).collect();
            let agree = idx.iter().filter(|&&i| !labels[i].is_plausible()).count();
            assert!(agree as f64 >= 0.99 * idx.len() as f64, "{}: {agree}/{}", kind.name(), idx.len());
        }
    }

    #[test]
    fn labels_invariant_to_flip_and_rotation() {
        let config = GenConfig::default_mix(300, 0.5, 12).unwrap();
        let t = generate(&config).unwrap().tractogram;
        let labels = apply_exclusive_rules(&t, &config.rules);
        let (s, c) = 0.7f64.sin_cos();
        let rot = |p: Point3| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
        let moved = Tractogram::new(
            t.streamlines
                .iter()
                .map(|f| Streamline::new(f.points().iter().rev().map(|&p| rot(p)).collect()).unwrap())
                .collect(),
        );
        let moved_labels = apply_exclusive_rules(&moved, &config.rules);
        let same = labels.iter().zip(&moved_labels).filter(|(a, b)| a == b).count();
        // rotation can nudge values sitting exactly on a threshold by an ulp
        assert!(same >= 299, "{same}");
    }

    #[test]
    fn impossible_template_is_named() {
        let mut config = GenConfig::default_mix(10, 1.0, 1).unwrap();
        config.templates.truncate(1);
        config.templates[0].count = 5;
        config.templates[0].name = "tiny".into();
        let p = config.templates[0].control[0];
        config.templates[0].control = [p, p * 0.999, p * 0.998, p * 0.997];
        config.templates[0].jitter_mm = 0.0;
        let err = generate(&config).unwrap_err();
        assert!(err.to_string().contains("tiny"), "{err}");
    }

    #[test]
    fn default_templates_are_deep_enough_for_truncation() {
        let rules = LabelRules::default();
        let deep = BundleTemplate::default_set(&rules).iter().filter(|t| t.is_deep(&rules)).count();
        assert!(deep >= 4, "{deep}");
    }
}
