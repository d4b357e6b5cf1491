//! The sequence edge-convolution classifier and the PointNet / DGCNN
//! baselines, built from the blocks in [`crate::layers`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Label, Streamline, Tractogram};
use crate::layers::{
    Activation, ClassifierHead, EcCache, EcLayer, GlobalCache, GlobalEncoder,
    Mlp, MlpCache, NeighborSource, Segments,
};
use crate::par::map_chunks;
use crate::tensor::{softmax, softmax_cross_entropy, GradStore, Matrix, ParamStore, Pooling, Rng};

/// Streamlines per forward call in batched inference.
pub const INFERENCE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Vf,
    Pn,
    Dgcnn,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Vf, Architecture::Pn, Architecture::Dgcnn];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vf => "vf",
            Architecture::Pn => "pn",
            Architecture::Dgcnn => "dgcnn",
        }
    }

    fn has_graph_layers(self) -> bool {
        self != Architecture::Pn
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vf" => Ok(Architecture::Vf),
            "pn" => Ok(Architecture::Pn),
            "dgcnn" => Ok(Architecture::Dgcnn),
            _ => Err(Error::arg(format!("unknown architecture `{s}` (expected vf, pn or dgcnn)"))),
        }
    }
}

/// Full description of a network; together with the seed it determines the
/// initial parameters exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Perceptron widths of each per-point block (edge convolutions for vf and
    /// dgcnn, a single shared perceptron for pn).
    pub blocks: Vec<Vec<usize>>,
    /// Output width of the global encoder.
    pub global_width: usize,
    /// Hidden widths of the classifier head.
    pub head: Vec<usize>,
    pub classes: usize,
    /// Neighbors per point in k-nn blocks, capped at n − 1 per streamline.
    pub k: usize,
    pub neighbor_pooling: Pooling,
    pub leaky_slope: f64,
    /// Multiplier applied to millimeter coordinates before the first layer.
    pub input_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(architecture: Architecture) -> Self {
        let blocks = match architecture {
            Architecture::Vf => vec![vec![64, 64], vec![64, 128]],
            Architecture::Pn => vec![vec![64, 64, 64, 128]],
            Architecture::Dgcnn => vec![vec![64, 64, 64], vec![64, 64, 64, 128]],
        };
        ModelSpec {
            architecture,
            blocks,
            global_width: 1024,
            head: vec![512, 256],
            classes: 2,
            k: 5,
            neighbor_pooling: Pooling::Max,
            leaky_slope: 0.2,
            input_scale: 0.02,
            seed: 42,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let widths_ok = !self.blocks.is_empty()
            && self.blocks.iter().all(|b| !b.is_empty() && !b.contains(&0))
            && self.global_width > 0
            && !self.head.contains(&0);
        if !widths_ok {
            return Err(Error::arg("layer widths must be positive and every block non-empty"));
        }
        if self.classes < 2 {
            return Err(Error::arg(format!("need at least 2 classes, got {}", self.classes)));
        }
        match self.architecture {
            Architecture::Vf if self.blocks.len() < 2 => {
                return Err(Error::arg("vf needs a sequence block followed by at least one k-nn block"))
            }
            Architecture::Pn if self.blocks.len() != 1 => {
                return Err(Error::arg("pn has exactly one per-point block"))
            }
            _ => {}
        }
        if self.architecture.has_graph_layers() && self.k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::arg("input scale must be positive"));
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return Err(Error::arg("leaky slope must lie in [0, 1)"));
        }
        Ok(())
    }

    fn block_source(&self, b: usize) -> Option<NeighborSource> {
        match (self.architecture, b) {
            (Architecture::Pn, _) => None,
            (Architecture::Vf, 0) => Some(NeighborSource::Sequence),
            (Architecture::Dgcnn, 0) => Some(NeighborSource::Euclidean),
            _ => Some(NeighborSource::Latent),
        }
    }

    /// Width fed to the global encoder: all block outputs side by side.
    pub fn encoder_input_width(&self) -> usize {
        self.blocks.iter().map(|b| *b.last().unwrap()).sum()
    }

    /// Parameter count from layer shapes alone.
    pub fn param_count(&self) -> usize {
        fn mlp(d_in: usize, widths: &[usize]) -> usize {
            let mut prev = d_in;
            let mut n = 0;
            for &w in widths {
                n += prev * w + w;
                prev = w;
            }
            n
        }
        let mut total = 0;
        let mut d = 3;
        for (b, widths) in self.blocks.iter().enumerate() {
            let fan_in = if self.block_source(b).is_some() { 2 * d } else { d };
            total += mlp(fan_in, widths);
            d = *widths.last().unwrap();
        }
        total += mlp(self.encoder_input_width(), &[self.global_width]);
        let mut head = self.head.clone();
        head.push(self.classes);
        total + mlp(self.global_width, &head)
    }

    /// One-line human-readable summary, stored in checkpoints.
    pub fn describe(&self) -> String {
        let blocks: Vec<String> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, w)| {
                let kind = self.block_source(b).map_or("mlp", NeighborSource::name);
                format!("{kind}{w:?}")
            })
            .collect();
        format!(
            "{} blocks={} global={} head={:?} classes={} k={} pooling={}",
            self.architecture,
            blocks.join("+"),
            self.global_width,
            self.head,
            self.classes,
            self.k,
            self.neighbor_pooling.name()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Arg-max class index (ties go to the lower index).
    pub class: usize,
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let probabilities = softmax(logits);
        let class = argmax(&probabilities);
        Prediction {
            logits: logits.to_vec(),
            probabilities,
            class,
        }
    }

    pub fn label(&self) -> Label {
        Label::from_class_index(self.class)
    }

    pub fn prob_plausible(&self) -> f64 {
        self.probabilities[Label::Plausible.class_index()]
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
enum Block {
    Ec(EcLayer),
    Point(Mlp),
}

enum BlockCache {
    Ec(EcCache),
    Point(MlpCache),
}

struct Trace {
    blocks: Vec<BlockCache>,
    global: GlobalCache,
    head: MlpCache,
    z: Matrix,
    logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    blocks: Vec<Block>,
    encoder: GlobalEncoder,
    head: ClassifierHead,
}

/// Sum of per-sample losses and correct predictions over a set of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl LossStats {
    pub fn merge(self, o: LossStats) -> LossStats {
        LossStats {
            loss_sum: self.loss_sum + o.loss_sum,
            correct: self.correct + o.correct,
            count: self.count + o.count,
        }
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }
}

impl Model {
    pub fn build(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut rng = Rng::new(spec.seed);
        let mut params = ParamStore::new();
        let act = Activation::LeakyRelu(spec.leaky_slope);
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut d = 3;
        for (b, widths) in spec.blocks.iter().enumerate() {
            let name = format!("block{b}");
            blocks.push(match spec.block_source(b) {
                Some(source) => Block::Ec(EcLayer::new(
                    &mut params,
                    &name,
                    d,
                    widths,
                    spec.neighbor_pooling,
                    source,
                    spec.k,
                    act,
                    &mut rng,
                )?),
                None => Block::Point(Mlp::new(&mut params, &name, d, widths, act, true, &mut rng)?),
            });
            d = *widths.last().unwrap();
        }
        let encoder = GlobalEncoder::new(
            &mut params,
            "global",
            spec.encoder_input_width(),
            spec.global_width,
            Pooling::Max,
            act,
            &mut rng,
        )?;
        let head = ClassifierHead::new(&mut params, "head", spec.global_width, &spec.head, spec.classes, &mut rng)?;
        Ok(Model {
            spec,
            params,
            blocks,
            encoder,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn stack(&self, streamlines: &[&Streamline]) -> Result<(Matrix, Segments)> {
        if streamlines.is_empty() {
            return Err(Error::arg("no streamlines to evaluate"));
        }
        let segments = Segments::from_lengths(streamlines.iter().map(|s| s.len()));
        let parts: Vec<Matrix> = streamlines
            .iter()
            .map(|s| s.to_matrix(self.spec.input_scale))
            .collect();
        Ok((Matrix::vstack(&parts)?, segments))
    }

    fn run(&self, streamlines: &[&Streamline]) -> Result<Trace> {
        let (x, segments) = self.stack(streamlines)?;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = outputs.last().unwrap_or(&x);
            let (y, cache) = match block {
                Block::Ec(l) => {
                    let (y, c) = l.forward(&self.params, input, &segments)?;
                    (y, BlockCache::Ec(c))
                }
                Block::Point(m) => {
                    let (y, c) = m.forward(&self.params, input)?;
                    (y, BlockCache::Point(c))
                }
            };
            outputs.push(y);
            caches.push(cache);
        }
        let refs: Vec<&Matrix> = outputs.iter().collect();
        let (z, global) = self.encoder.forward(&self.params, &refs, &segments)?;
        let (logits, head) = self.head.forward(&self.params, &z)?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Trace {
            blocks: caches,
            global,
            head,
            z,
            logits,
        })
    }

    fn backprop(&self, trace: &Trace, dlogits: Matrix, grads: &mut GradStore) {
        let dz = self
            .head
            .backward(&self.params, &trace.head, dlogits, grads)
            .expect("head input gradient");
        let mut d_out = self
            .encoder
            .backward(&self.params, &trace.global, &dz, grads, true)
            .expect("encoder input gradient");
        for b in (0..self.blocks.len()).rev() {
            let need_dx = b > 0;
            let dy = &d_out[b];
            let dx = match (&self.blocks[b], &trace.blocks[b]) {
                (Block::Ec(l), BlockCache::Ec(c)) => l.backward(&self.params, c, dy, grads, need_dx),
                (Block::Point(m), BlockCache::Point(c)) => m.backward(&self.params, c, dy.clone(), grads, need_dx),
                _ => unreachable!("cache kind follows block kind"),
            };
            if let Some(dx) = dx {
                d_out[b - 1].add_assign(&dx);
            }
        }
    }

    /// Logits for a set of streamlines evaluated together (one row each).
    pub fn logits(&self, streamlines: &[&Streamline]) -> Result<Matrix> {
        Ok(self.run(streamlines)?.logits)
    }

    pub fn forward(&self, s: &Streamline) -> Result<Prediction> {
        let logits = self.logits(&[s])?;
        Ok(Prediction::from_logits(logits.row(0)))
    }

    /// Resamples (when requested) and classifies every streamline, sharding
    /// fixed-size chunks over `workers`. Output order follows the input.
    pub fn predict_batch(&self, t: &Tractogram, resample_to: Option<usize>, workers: usize) -> Result<Vec<Prediction>> {
        let rows = self.batched(t, resample_to, workers, |m, chunk| {
            let logits = m.logits(chunk)?;
            Ok((0..logits.rows()).map(|i| Prediction::from_logits(logits.row(i))).collect())
        })?;
        Ok(rows)
    }

    /// Pooled global descriptor per streamline (one row each).
    pub fn export_latent(&self, t: &Tractogram, resample_to: Option<usize>, workers: usize) -> Result<Matrix> {
        if !self.spec.architecture.has_graph_layers() {
            return Err(Error::Unsupported(format!(
                "latent export needs a graph-based model, not {}",
                self.spec.architecture
            )));
        }
        let rows = self.batched(t, resample_to, workers, |m, chunk| {
            let z = m.run(chunk)?.z;
            Ok((0..z.rows()).map(|i| z.row(i).to_vec()).collect())
        })?;
        Matrix::from_rows(&rows)
    }

    fn batched<R, F>(&self, t: &Tractogram, resample_to: Option<usize>, workers: usize, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(&Model, &[&Streamline]) -> Result<Vec<R>> + Sync + Send,
    {
        if t.is_empty() {
            return Err(Error::arg("empty tractogram"));
        }
        let indices: Vec<usize> = (0..t.len()).collect();
        let chunks = map_chunks(&indices, INFERENCE_CHUNK, workers, |_, idx| {
            let owned: Vec<Streamline> = match resample_to {
                Some(m) => idx
                    .iter()
                    .map(|&i| t.streamlines[i].resample(m))
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let refs: Vec<&Streamline> = match resample_to {
                Some(_) => owned.iter().collect(),
                None => idx.iter().map(|&i| &t.streamlines[i]).collect(),
            };
            f(self, &refs)
        })?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Adds the gradient of the summed cross-entropy over `streamlines` to
    /// `grads` and returns the loss statistics.
    pub fn accumulate_gradients(
        &self,
        streamlines: &[&Streamline],
        labels: &[usize],
        grads: &mut GradStore,
    ) -> Result<LossStats> {
        let trace = self.run(streamlines)?;
        let (mean, mut dlogits) = softmax_cross_entropy(&trace.logits, labels)?;
        let n = labels.len() as f64;
        dlogits.as_mut_slice().iter_mut().for_each(|g| *g *= n);
        self.backprop(&trace, dlogits, grads);
        Ok(stats(&trace.logits, labels, mean))
    }

    /// Loss statistics without gradients.
    pub fn evaluate(&self, streamlines: &[&Streamline], labels: &[usize]) -> Result<LossStats> {
        let logits = self.logits(streamlines)?;
        let (mean, _) = softmax_cross_entropy(&logits, labels)?;
        Ok(stats(&logits, labels, mean))
    }

    /// For each column of the pooled global descriptor, the index of the point
    /// that supplied the maximum.
    pub fn global_argmax(&self, s: &Streamline) -> Result<Vec<usize>> {
        let trace = self.run(&[s])?;
        Ok(trace.global.argmax().to_vec())
    }

    /// Hash of every discrete choice in the forward pass (activation signs,
    /// pooling winners, k-nn graphs), used to validate finite differences.
    pub fn decision_signature(&self, streamlines: &[&Streamline]) -> Result<u64> {
        let trace = self.run(streamlines)?;
        let ec: Vec<&EcCache> = trace
            .blocks
            .iter()
            .filter_map(|c| match c {
                BlockCache::Ec(c) => Some(c),
                BlockCache::Point(_) => None,
            })
            .collect();
        let mut mlps: Vec<&MlpCache> = trace
            .blocks
            .iter()
            .filter_map(|c| match c {
                BlockCache::Point(c) => Some(c),
                BlockCache::Ec(_) => None,
            })
            .collect();
        mlps.push(&trace.head);
        Ok(crate::layers::decision_signature(&ec, &mlps, Some(&trace.global)))
    }
}

fn stats(logits: &Matrix, labels: &[usize], mean: f64) -> LossStats {
    let correct = (0..logits.rows())
        .filter(|&i| argmax(logits.row(i)) == labels[i])
        .count();
    LossStats {
        loss_sum: mean * labels.len() as f64,
        correct,
        count: labels.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::tensor::gradient_check_at;

    fn random_streamline(rng: &mut Rng, n: usize) -> Streamline {
        let pts = (0..n)
            .map(|_| Point3::new(rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0)))
            .collect();
        Streamline::new(pts).unwrap()
    }

    fn permuted(s: &Streamline, perm: &[usize]) -> Streamline {
        Streamline::new(perm.iter().map(|&i| s.points()[i]).collect()).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn pn_parameter_count_near_800k() {
        let spec = ModelSpec::new(Architecture::Pn);
        let count = Model::build(spec.clone()).unwrap().param_count();
        assert_eq!(count, spec.param_count());
        assert!((count as f64 - 800_000.0).abs() <= 80_000.0, "{count}");
    }

    #[test]
    fn closed_form_counts_match_built_models() {
        // vf: sEC 6→64→64, EC 128→64→128, g 192→1024, head 1024→512→256→2
        let by_hand = (6 * 64 + 64) + (64 * 64 + 64) + (128 * 64 + 64) + (64 * 128 + 128)
            + (192 * 1024 + 1024) + (1024 * 512 + 512) + (512 * 256 + 256) + (256 * 2 + 2);
        assert_eq!(Model::build(ModelSpec::new(Architecture::Vf)).unwrap().param_count(), by_hand);
        for arch in Architecture::ALL {
            let spec = ModelSpec::new(arch);
            assert_eq!(Model::build(spec.clone()).unwrap().param_count(), spec.param_count());
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        for arch in Architecture::ALL {
            let a = Model::build(ModelSpec::new(arch).with_seed(7)).unwrap();
            let b = Model::build(ModelSpec::new(arch).with_seed(7)).unwrap();
            let c = Model::build(ModelSpec::new(arch).with_seed(8)).unwrap();
            assert_eq!(a.params(), b.params());
            assert_ne!(a.params(), c.params());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ModelSpec::new(Architecture::Vf);
        s.classes = 1;
        assert!(Model::build(s).is_err());
        let mut s = ModelSpec::new(Architecture::Pn);
        s.blocks[0][1] = 0;
        assert!(Model::build(s).is_err());
        let mut s = ModelSpec::new(Architecture::Vf);
        s.blocks.truncate(1);
        assert!(Model::build(s).is_err());
        assert!("xyz".parse::<Architecture>().is_err());
    }

    #[test]
    fn flip_invariance_all_architectures() {
        let mut rng = Rng::new(100);
        for arch in Architecture::ALL {
            let model = Model::build(ModelSpec::new(arch).with_seed(3)).unwrap();
            for n in [2, 3, 16, 23] {
                let s = random_streamline(&mut rng, n);
                let a = model.forward(&s).unwrap();
                let b = model.forward(&s.flip()).unwrap();
                assert!(max_diff(&a.logits, &b.logits) < 1e-9, "{arch} n={n}");
                assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_dichotomy() {
        let mut rng = Rng::new(200);
        for arch in [Architecture::Pn, Architecture::Dgcnn] {
            let model = Model::build(ModelSpec::new(arch).with_seed(4)).unwrap();
            for _ in 0..5 {
                let s = random_streamline(&mut rng, 16);
                let p = permuted(&s, &rng.permutation(16));
                let d = max_diff(&model.forward(&s).unwrap().logits, &model.forward(&p).unwrap().logits);
                assert!(d < 1e-9, "{arch}: {d}");
            }
        }
        let vf = Model::build(ModelSpec::new(Architecture::Vf).with_seed(4)).unwrap();
        let mut sensitive = 0;
        for _ in 0..10 {
            let s = random_streamline(&mut rng, 16);
            let p = permuted(&s, &rng.permutation(16));
            if max_diff(&vf.forward(&s).unwrap().logits, &vf.forward(&p).unwrap().logits) > 1e-3 {
                sensitive += 1;
            }
        }
        assert!(sensitive >= 9, "{sensitive}/10");
    }

    #[test]
    fn batch_matches_single_and_preserves_order() {
        let mut rng = Rng::new(300);
        let t = Tractogram::new((0..150).map(|i| random_streamline(&mut rng, 5 + i % 20)).collect());
        let model = Model::build(ModelSpec::new(Architecture::Vf)).unwrap();
        let batch = model.predict_batch(&t, Some(16), 1).unwrap();
        assert_eq!(batch.len(), 150);
        for i in [0, 63, 64, 149] {
            let single = model.forward(&t.streamlines[i].resample(16).unwrap()).unwrap();
            assert!(max_diff(&single.logits, &batch[i].logits) < 1e-12);
        }
        let perm = rng.permutation(150);
        let shuffled = model.predict_batch(&t.select(&perm), Some(16), 1).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!(max_diff(&shuffled[j].logits, &batch[i].logits) < 1e-12);
        }
        let par = model.predict_batch(&t, Some(16), 3).unwrap();
        assert_eq!(par, batch);
        assert!(model.predict_batch(&Tractogram::default(), Some(16), 1).is_err());
    }

    #[test]
    fn short_inputs_cap_k() {
        let mut rng = Rng::new(400);
        for arch in Architecture::ALL {
            let model = Model::build(ModelSpec::new(arch)).unwrap();
            assert!(model.forward(&random_streamline(&mut rng, 2)).is_ok());
        }
    }

    #[test]
    fn latent_export() {
        let mut rng = Rng::new(500);
        let s = random_streamline(&mut rng, 16);
        let t = Tractogram::new(vec![s.clone(), s.flip(), s.clone(), random_streamline(&mut rng, 9)]);
        let vf = Model::build(ModelSpec::new(Architecture::Vf)).unwrap();
        let z = vf.export_latent(&t, None, 1).unwrap();
        assert_eq!(z.shape(), (4, 1024));
        assert_eq!(z.row(0), z.row(2));
        assert!(max_diff(z.row(0), z.row(1)) < 1e-9);
        assert!(Model::build(ModelSpec::new(Architecture::Pn)).unwrap().export_latent(&t, None, 1).is_err());
        assert!(Model::build(ModelSpec::new(Architecture::Dgcnn)).unwrap().export_latent(&t, None, 1).is_ok());
    }

    /// Central differences on a sample of coordinates from every parameter
    /// block, skipping coordinates whose perturbation flips a discrete choice.
    fn model_gradient_check(arch: Architecture) {
        let mut spec = ModelSpec::new(arch);
        spec.seed = 11;
        // small widths keep the check fast without changing the code paths
        spec.blocks = match arch {
            Architecture::Vf => vec![vec![8, 8], vec![8, 12]],
            Architecture::Pn => vec![vec![8, 8, 12]],
            Architecture::Dgcnn => vec![vec![8, 8], vec![8, 12]],
        };
        spec.global_width = 32;
        spec.head = vec![16, 8];
        spec.k = 3;
        spec.input_scale = 0.05;
        let model = Model::build(spec).unwrap();
        let mut rng = Rng::new(12);
        let batch: Vec<Streamline> = (0..3).map(|i| random_streamline(&mut rng, 6 + i)).collect();
        let refs: Vec<&Streamline> = batch.iter().collect();
        let labels = [0, 1, 1];
        let mut grads = GradStore::zeros_like(model.params());
        model.accumulate_gradients(&refs, &labels, &mut grads).unwrap();
        let base_sig = model.decision_signature(&refs).unwrap();

        let mut checked = 0;
        for (bi, block) in model.params().blocks().iter().enumerate() {
            let coords: Vec<usize> = (0..block.len().min(6)).map(|_| rng.below(block.len())).collect();
            for &c in &coords {
                let mut stable = true;
                for delta in [1e-5, -1e-5] {
                    let mut m = model.clone();
                    m.params_mut().blocks_mut()[bi].values[c] += delta;
                    stable &= m.decision_signature(&refs).unwrap() == base_sig;
                }
                if !stable {
                    continue;
                }
                let r = gradient_check_at(
                    |v| {
                        let mut m = model.clone();
                        m.params_mut().blocks_mut()[bi].values = v.to_vec();
                        m.evaluate(&refs, &labels).unwrap().loss_sum
                    },
                    &block.values,
                    &grads.grads[bi],
                    1e-5,
                    &[c],
                );
                assert!(r.max_rel_error < 1e-4, "{arch} {} coord {c}: {r:?}", block.name);
                checked += 1;
            }
        }
        assert!(checked > model.params().blocks().len() * 3, "{arch}: only {checked} checked");
    }

    #[test]
    fn gradient_check_vf() {
        model_gradient_check(Architecture::Vf);
    }

    #[test]
    fn gradient_check_pn() {
        model_gradient_check(Architecture::Pn);
    }

    #[test]
    fn gradient_check_dgcnn() {
        model_gradient_check(Architecture::Dgcnn);
    }
}
