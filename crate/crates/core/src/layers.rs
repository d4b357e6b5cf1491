//! Differentiable building blocks: perceptrons, (sequence) edge convolution,
//! the pooled global encoder and the classification head.
//!
//! Every block works on a *stacked* batch: the points of several streamlines
//! are concatenated row-wise and [`Segments`] records where each streamline
//! starts. Graphs never cross segment boundaries.

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::graph::{euclidean_knn, sequence_graph, FiberGraph};
use crate::tensor::{
    leaky_relu, leaky_relu_backward, linear, linear_backward, max_pool_segments,
    max_pool_segments_backward, neighbor_pool, neighbor_pool_backward, GradStore, Matrix,
    NeighborPoolCache, ParamId, ParamStore, ParameterBlock, Pooling, Rng,
};

/// Row offsets of the streamlines stacked in one batch matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments(Vec<usize>);

impl Segments {
    pub fn single(n: usize) -> Self {
        Segments(vec![0, n])
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Segments(offsets)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.0[s]..self.0[s + 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
}

impl Activation {
    fn slope(self) -> f64 {
        match self {
            Activation::LeakyRelu(s) => s,
            Activation::Relu => 0.0,
        }
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = store.push(ParameterBlock::glorot(format!("{name}.w"), fan_in, fan_out, rng));
        let b = store.push(ParameterBlock::zeros(format!("{name}.b"), 1, fan_out));
        Dense { w, b }
    }
}

/// Stack of dense layers, each followed by the activation (the last one only
/// when `activate_last`).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    widths: Vec<usize>,
    act: Activation,
    activate_last: bool,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        widths: &[usize],
        act: Activation,
        activate_last: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if d_in == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::arg(format!("{name}: widths must be positive and non-empty")));
        }
        let mut all = vec![d_in];
        all.extend_from_slice(widths);
        let layers = all
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense::new(store, &format!("{name}.{l}"), w[0], w[1], rng))
            .collect();
        Ok(Mlp {
            layers,
            widths: all,
            act,
            activate_last,
        })
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn activated(&self, l: usize) -> bool {
        l + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, d) in self.layers.iter().enumerate() {
            let y = linear(&h, store.get(d.w), store.get(d.b))?;
            inputs.push(h);
            h = if self.activated(l) {
                leaky_relu(&y, self.act.slope())
            } else {
                y.clone()
            };
            pre.push(y);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        dy: Matrix,
        grads: &mut GradStore,
        need_dx: bool,
    ) -> Option<Matrix> {
        let mut g = dy;
        for (l, d) in self.layers.iter().enumerate().rev() {
            if self.activated(l) {
                g = leaky_relu_backward(&cache.pre[l], &g, self.act.slope());
            }
            let (dw, db) = grads.pair_mut(d.w, d.b);
            let want_dx = l > 0 || need_dx;
            g = linear_backward(&cache.inputs[l], &g, store.get(d.w), dw, db, want_dx)?;
        }
        Some(g)
    }
}

impl MlpCache {
    fn signature(&self, h: &mut impl Hasher) {
        for p in &self.pre {
            for v in p.as_slice() {
                (*v > 0.0).hash(h);
            }
        }
    }
}

/// Where an edge-convolution layer takes its neighbors from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborSource {
    /// Previous and next point along the streamline.
    Sequence,
    /// k-nn on the raw input coordinates.
    Euclidean,
    /// k-nn on the layer's (learned) input features.
    Latent,
}

impl NeighborSource {
    pub fn name(self) -> &'static str {
        match self {
            NeighborSource::Sequence => "sequence",
            NeighborSource::Euclidean => "euclidean",
            NeighborSource::Latent => "latent",
        }
    }
}

/// Edge convolution: `e_ij = h(x_i ⊕ (x_j − x_i))`, pooled over the out-edges
/// of each node.
#[derive(Clone, Debug)]
pub struct EcLayer {
    pub h: Mlp,
    pub pooling: Pooling,
    pub source: NeighborSource,
    pub k: usize,
    d_in: usize,
}

#[derive(Clone, Debug)]
pub struct EcCache {
    graph: FiberGraph,
    mlp: MlpCache,
    pool: NeighborPoolCache,
    rows: usize,
}

impl EcCache {
    pub fn graph(&self) -> &FiberGraph {
        &self.graph
    }

    fn signature(&self, h: &mut impl Hasher) {
        self.graph.edges().hash(h);
        self.pool.argmax().hash(h);
        self.mlp.signature(h);
    }
}

impl EcLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        widths: &[usize],
        pooling: Pooling,
        source: NeighborSource,
        k: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if source != NeighborSource::Sequence && k == 0 {
            return Err(Error::arg(format!("{name}: k must be at least 1")));
        }
        let h = Mlp::new(store, &format!("{name}.h"), 2 * d_in, widths, act, true, rng)?;
        Ok(EcLayer {
            h,
            pooling,
            source,
            k,
            d_in,
        })
    }

    pub fn in_width(&self) -> usize {
        self.d_in
    }

    pub fn out_width(&self) -> usize {
        self.h.out_width()
    }

    /// Neighbor graph for every segment, with k capped at `n − 1` for short
    /// streamlines.
    pub fn build_graph(&self, x: &Matrix, segments: &Segments) -> Result<FiberGraph> {
        let parts = (0..segments.count())
            .map(|s| {
                let r = segments.range(s);
                let n = r.len();
                match self.source {
                    NeighborSource::Sequence => sequence_graph(n),
                    NeighborSource::Euclidean | NeighborSource::Latent => {
                        if n < 2 {
                            return Err(Error::Graph(format!("segment {s} has {n} rows")));
                        }
                        euclidean_knn(&x.slice_rows(r.start, r.end), self.k.min(n - 1))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FiberGraph::block_diagonal(&parts))
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix, segments: &Segments) -> Result<(Matrix, EcCache)> {
        let graph = self.build_graph(x, segments)?;
        self.forward_with_graph(store, x, graph)
    }

    pub fn forward_with_graph(&self, store: &ParamStore, x: &Matrix, graph: FiberGraph) -> Result<(Matrix, EcCache)> {
        if graph.node_count() != x.rows() {
            return Err(Error::shape(format!(
                "graph has {} nodes for {} rows",
                graph.node_count(),
                x.rows()
            )));
        }
        if x.cols() != self.d_in {
            return Err(Error::shape(format!(
                "edge convolution expects {} input columns, got {}",
                self.d_in,
                x.cols()
            )));
        }
        let d = self.d_in;
        let mut edge_input = Matrix::zeros(graph.edge_count(), 2 * d);
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let (xi, xj) = (x.row(i), x.row(j));
            let row = edge_input.row_mut(e);
            for c in 0..d {
                row[c] = xi[c];
                row[d + c] = xj[c] - xi[c];
            }
        }
        let (edge_feats, mlp) = self.h.forward(store, &edge_input)?;
        let (out, pool) = neighbor_pool(&edge_feats, &graph, self.pooling)?;
        Ok((
            out,
            EcCache {
                graph,
                mlp,
                pool,
                rows: x.rows(),
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &EcCache,
        dy: &Matrix,
        grads: &mut GradStore,
        need_dx: bool,
    ) -> Option<Matrix> {
        let d_edges = neighbor_pool_backward(dy, &cache.graph, &cache.pool);
        let d_input = self.h.backward(store, &cache.mlp, d_edges, grads, need_dx)?;
        let d = self.d_in;
        let mut dx = Matrix::zeros(cache.rows, d);
        for (e, &(i, j)) in cache.graph.edges().iter().enumerate() {
            let g = d_input.row(e);
            for c in 0..d {
                let centre = g[c] - g[d + c];
                dx.as_mut_slice()[i * d + c] += centre;
                dx.as_mut_slice()[j * d + c] += g[d + c];
            }
        }
        Some(dx)
    }
}

/// `z = pool_rows(g(x_1 ⊕ … ⊕ x_m))` per segment.
#[derive(Clone, Debug)]
pub struct GlobalEncoder {
    pub g: Mlp,
    pub pooling: Pooling,
}

#[derive(Clone, Debug)]
pub struct GlobalCache {
    widths: Vec<usize>,
    mlp: MlpCache,
    /// Winning absolute row per (segment, column); max pooling only.
    argmax: Vec<usize>,
    offsets: Vec<usize>,
}

impl GlobalCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    fn signature(&self, h: &mut impl Hasher) {
        self.argmax.hash(h);
        self.mlp.signature(h);
    }
}

impl GlobalEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        width: usize,
        pooling: Pooling,
        act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(GlobalEncoder {
            g: Mlp::new(store, name, d_in, &[width], act, true, rng)?,
            pooling,
        })
    }

    pub fn out_width(&self) -> usize {
        self.g.out_width()
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        parts: &[&Matrix],
        segments: &Segments,
    ) -> Result<(Matrix, GlobalCache)> {
        let rows = parts.first().map_or(0, |m| m.rows());
        if parts.iter().any(|m| m.rows() != rows) {
            return Err(Error::shape("global encoder inputs differ in row count"));
        }
        if rows != segments.total_rows() {
            return Err(Error::shape(format!(
                "{rows} rows for segments covering {}",
                segments.total_rows()
            )));
        }
        let mut x = parts[0].clone();
        for p in &parts[1..] {
            x = Matrix::hconcat(&x, p)?;
        }
        let (y, mlp) = self.g.forward(store, &x)?;
        let (z, argmax) = match self.pooling {
            Pooling::Max => max_pool_segments(&y, segments.offsets()),
            Pooling::Mean => (mean_pool_segments(&y, segments), Vec::new()),
        };
        Ok((
            z,
            GlobalCache {
                widths: parts.iter().map(|p| p.cols()).collect(),
                mlp,
                argmax,
                offsets: segments.offsets().to_vec(),
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &GlobalCache,
        dz: &Matrix,
        grads: &mut GradStore,
        need_dx: bool,
    ) -> Option<Vec<Matrix>> {
        let rows = *cache.offsets.last().unwrap();
        let dy = match self.pooling {
            Pooling::Max => max_pool_segments_backward(dz, &cache.argmax, rows),
            Pooling::Mean => {
                let mut dy = Matrix::zeros(rows, dz.cols());
                for s in 0..dz.rows() {
                    let (a, b) = (cache.offsets[s], cache.offsets[s + 1]);
                    let inv = 1.0 / (b - a) as f64;
                    for r in a..b {
                        for (o, g) in dy.row_mut(r).iter_mut().zip(dz.row(s)) {
                            *o = g * inv;
                        }
                    }
                }
                dy
            }
        };
        let mut dx = self.g.backward(store, &cache.mlp, dy, grads, need_dx)?;
        let mut out = Vec::with_capacity(cache.widths.len());
        for &w in &cache.widths[..cache.widths.len() - 1] {
            let (left, rest) = dx.hsplit(w);
            out.push(left);
            dx = rest;
        }
        out.push(dx);
        Some(out)
    }
}

fn mean_pool_segments(y: &Matrix, segments: &Segments) -> Matrix {
    let mut z = Matrix::zeros(segments.count(), y.cols());
    for s in 0..segments.count() {
        let r = segments.range(s);
        let inv = 1.0 / r.len() as f64;
        let out = z.row_mut(s);
        for i in r {
            for (o, v) in out.iter_mut().zip(y.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
    }
    z
}

/// Fully connected classifier producing raw logits.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub mlp: Mlp,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut widths = hidden.to_vec();
        widths.push(classes);
        Ok(ClassifierHead {
            mlp: Mlp::new(store, name, d_in, &widths, Activation::Relu, false, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, z: &Matrix) -> Result<(Matrix, MlpCache)> {
        if z.cols() != self.mlp.in_width() {
            return Err(Error::shape(format!(
                "head expects width {}, got {}",
                self.mlp.in_width(),
                z.cols()
            )));
        }
        self.mlp.forward(store, z)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        dlogits: Matrix,
        grads: &mut GradStore,
    ) -> Option<Matrix> {
        self.mlp.backward(store, cache, dlogits, grads, true)
    }
}

/// Hash of every discrete decision taken during a forward pass (activation
/// signs, pooling winners, neighbor graphs). Finite differences are only
/// meaningful where this stays constant.
pub(crate) fn decision_signature(
    ec: &[&EcCache],
    mlps: &[&MlpCache],
    global: Option<&GlobalCache>,
) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for c in ec {
        c.signature(&mut h);
    }
    for c in mlps {
        c.signature(&mut h);
    }
    if let Some(g) = global {
        g.signature(&mut h);
    }
    h.finish()
}
