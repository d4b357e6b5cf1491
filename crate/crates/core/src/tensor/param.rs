use super::Rng;
use crate::error::{Error, Result};

/// A named 2D parameter with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBlock {
    pub name: String,
    rows: usize,
    cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl ParameterBlock {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        let len = rows * cols;
        ParameterBlock {
            name: name.into(),
            rows,
            cols,
            values: vec![0.0; len],
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Uniform Glorot initialization for a (fan_in, fan_out) weight.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let mut p = ParameterBlock::zeros(name, fan_in, fan_out);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut p.values {
            *v = rng.uniform(-limit, limit);
        }
        p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// All parameter blocks of one model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParameterBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, block: ParameterBlock) -> ParamId {
        self.blocks.push(block);
        ParamId(self.blocks.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParameterBlock {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParameterBlock] {
        &mut self.blocks
    }

    pub fn scalar_count(&self) -> usize {
        self.blocks.iter().map(ParameterBlock::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.blocks.iter_mut().for_each(ParameterBlock::zero_grad);
    }

    /// Copy accumulated gradients in, scaled by `scale`.
    pub fn set_grads(&mut self, grads: &GradStore, scale: f64) -> Result<()> {
        if grads.grads.len() != self.blocks.len() {
            return Err(Error::shape("gradient store does not match parameters"));
        }
        for (b, g) in self.blocks.iter_mut().zip(&grads.grads) {
            for (dst, src) in b.grad.iter_mut().zip(g) {
                *dst = src * scale;
            }
        }
        Ok(())
    }

    /// Replace values with those from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.blocks.len() != self.blocks.len() {
            return Err(Error::shape(format!(
                "expected {} parameter blocks, got {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            if dst.name != src.name || dst.shape() != src.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    dst.name,
                    dst.shape(),
                    src.name,
                    src.shape()
                )));
            }
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}

/// Gradient buffers shaped like a [`ParamStore`]; one per worker, summed in a
/// fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore {
    pub(crate) grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradStore {
            grads: store.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    /// Mutable gradient slices for a weight and its bias at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.grads.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.grads.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn add_assign(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Gradient of the `i`-th parameter block, in [`ParamStore::blocks`] order.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.grads[i]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.grads.concat()
    }
}
