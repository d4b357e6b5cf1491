use super::{gemm, Matrix, ParameterBlock, View};
use crate::error::{Error, Result};
use crate::graph::FiberGraph;

/// `y = x·W + b` with `W` of shape (in, out) and `b` of shape (1, out).
pub fn linear(x: &Matrix, w: &ParameterBlock, b: &ParameterBlock) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape(format!(
            "linear `{}`: input has {} columns, weight expects {}",
            w.name,
            x.cols(),
            w.rows()
        )));
    }
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::shape(format!(
            "linear `{}`: bias shape {:?} does not match {} outputs",
            b.name,
            b.shape(),
            w.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&b.values);
    }
    gemm(
        View::m(x),
        View::of(&w.values, w.rows(), w.cols()),
        out.as_mut_slice(),
        true,
    );
    Ok(out)
}

/// Accumulates `dW += xᵀ·dy` and `db += Σ_rows dy`; returns `dx = dy·Wᵀ` when
/// requested.
pub fn linear_backward(
    x: &Matrix,
    dy: &Matrix,
    w: &ParameterBlock,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Matrix> {
    debug_assert_eq!(dy.cols(), w.cols());
    debug_assert_eq!(x.rows(), dy.rows());
    gemm(View::m(x).t(), View::m(dy), dw, true);
    for i in 0..dy.rows() {
        for (acc, g) in db.iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
    need_dx.then(|| {
        let mut dx = Matrix::zeros(dy.rows(), w.rows());
        gemm(
            View::m(dy),
            View::of(&w.values, w.rows(), w.cols()).t(),
            dx.as_mut_slice(),
            false,
        );
        dx
    })
}

/// Elementwise `max(x, slope·x)`; `slope = 0` gives ReLU.
pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    let mut y = x.clone();
    for v in y.as_mut_slice() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
    y
}

/// Gradient of [`leaky_relu`] given the pre-activation input.
pub fn leaky_relu_backward(x: &Matrix, dy: &Matrix, slope: f64) -> Matrix {
    let mut dx = dy.clone();
    for (g, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= 0.0 {
            *g *= slope;
        }
    }
    dx
}

/// Column-wise maximum over all rows and the winning row per column. Ties go
/// to the smallest row index.
pub fn max_pool_rows(x: &Matrix) -> (Vec<f64>, Vec<usize>) {
    let (pooled, argmax) = max_pool_segments(x, &[0, x.rows()]);
    (pooled.into_vec(), argmax)
}

pub fn max_pool_rows_backward(dy: &[f64], argmax: &[usize], rows: usize) -> Matrix {
    let dy = Matrix::from_vec(1, dy.len(), dy.to_vec()).expect("row vector");
    max_pool_segments_backward(&dy, argmax, rows)
}

/// Column-wise maximum within each row segment `offsets[s]..offsets[s+1]`.
/// Returns one pooled row per segment and the absolute winning row index per
/// (segment, column).
pub fn max_pool_segments(x: &Matrix, offsets: &[usize]) -> (Matrix, Vec<usize>) {
    let d = x.cols();
    let segments = offsets.len() - 1;
    let mut pooled = Matrix::zeros(segments, d);
    let mut argmax = vec![0usize; segments * d];
    for s in 0..segments {
        let (start, end) = (offsets[s], offsets[s + 1]);
        assert!(end > start, "empty segment {s}");
        let out = pooled.row_mut(s);
        let arg = &mut argmax[s * d..(s + 1) * d];
        out.copy_from_slice(x.row(start));
        arg.iter_mut().for_each(|a| *a = start);
        for r in start + 1..end {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
    }
    (pooled, argmax)
}

pub fn max_pool_segments_backward(dy: &Matrix, argmax: &[usize], total_rows: usize) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(total_rows, d);
    for s in 0..dy.rows() {
        for (c, &g) in dy.row(s).iter().enumerate() {
            let r = argmax[s * d + c];
            dx.as_mut_slice()[r * d + c] += g;
        }
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::arg(format!("unknown pooling `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NeighborPoolCache {
    mode: Pooling,
    edges: usize,
    /// Winning edge index per (node, column); max pooling only.
    argmax: Vec<usize>,
}

impl NeighborPoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Row `i` of the result pools the rows of `edge_features` that belong to the
/// out-edges of node `i`. `edge_features` is aligned with `graph.edges()`.
pub fn neighbor_pool(
    edge_features: &Matrix,
    graph: &FiberGraph,
    mode: Pooling,
) -> Result<(Matrix, NeighborPoolCache)> {
    if edge_features.rows() != graph.edge_count() {
        return Err(Error::shape(format!(
            "{} edge feature rows for {} edges",
            edge_features.rows(),
            graph.edge_count()
        )));
    }
    if let Some(i) = (0..graph.node_count()).find(|&i| graph.out_degree(i) == 0) {
        return Err(Error::Graph(format!("node {i} has no out-edges")));
    }
    let d = edge_features.cols();
    let mut out = Matrix::zeros(graph.node_count(), d);
    let offsets = graph.offsets();
    let argmax = match mode {
        Pooling::Max => {
            let (pooled, argmax) = max_pool_segments(edge_features, offsets);
            out = pooled;
            argmax
        }
        Pooling::Mean => {
            for i in 0..graph.node_count() {
                let (start, end) = (offsets[i], offsets[i + 1]);
                let inv = 1.0 / (end - start) as f64;
                let row = out.row_mut(i);
                for e in start..end {
                    for (o, v) in row.iter_mut().zip(edge_features.row(e)) {
                        *o += v;
                    }
                }
                row.iter_mut().for_each(|o| *o *= inv);
            }
            Vec::new()
        }
    };
    Ok((
        out,
        NeighborPoolCache {
            mode,
            edges: edge_features.rows(),
            argmax,
        },
    ))
}

pub fn neighbor_pool_backward(dy: &Matrix, graph: &FiberGraph, cache: &NeighborPoolCache) -> Matrix {
    match cache.mode {
        Pooling::Max => max_pool_segments_backward(dy, &cache.argmax, cache.edges),
        Pooling::Mean => {
            let d = dy.cols();
            let offsets = graph.offsets();
            let mut dx = Matrix::zeros(cache.edges, d);
            for i in 0..graph.node_count() {
                let (start, end) = (offsets[i], offsets[i + 1]);
                let inv = 1.0 / (end - start) as f64;
                for e in start..end {
                    for (g, v) in dx.row_mut(e).iter_mut().zip(dy.row(i)) {
                        *g = v * inv;
                    }
                }
            }
            dx
        }
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Mean over rows of `-log softmax(logits)[label]`, and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::arg(format!("label {bad} out of range for {c} classes")));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), c);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FiberGraph;
    use crate::tensor::{gradient_check, Rng};

    fn block(name: &str, rows: usize, cols: usize, values: Vec<f64>) -> ParameterBlock {
        let mut p = ParameterBlock::zeros(name, rows, cols);
        p.values = values;
        p
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Matrix::from_rows(&[vec![1., 2.], vec![-3., 4.]]).unwrap();
        let w = block("w", 2, 2, vec![1., 0., 0., 1.]);
        let b = block("b", 1, 2, vec![0., 0.]);
        assert_eq!(linear(&x, &w, &b).unwrap(), x);

        let b = block("b", 1, 2, vec![0.5, -1.5]);
        let y = linear(&Matrix::zeros(3, 2), &w, &b).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), &[0.5, -1.5]);
        }

        assert!(linear(&Matrix::zeros(1, 3), &w, &b).is_err());
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let x = rng.uniform_matrix(2, 3, -1.0, 1.0);
        let w = block("w", 3, 2, rng.uniform_matrix(3, 2, -1.0, 1.0).into_vec());
        let b = block("b", 1, 2, vec![0.25, -0.75]);
        let y = linear(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = b.values[j];
                for k in 0..3 {
                    s += x.get(i, k) * w.values[k * 2 + j];
                }
                assert!((y.get(i, j) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let x = rng.uniform_matrix(4, 3, -1.0, 1.0);
        let w = block("w", 3, 5, rng.uniform_matrix(3, 5, -1.0, 1.0).into_vec());
        let b = block("b", 1, 5, rng.uniform_matrix(1, 5, -1.0, 1.0).into_vec());
        let probe = rng.uniform_matrix(4, 5, -1.0, 1.0);
        let objective = |y: &Matrix| -> f64 {
            y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };

        let mut dw = vec![0.0; 15];
        let mut db = vec![0.0; 5];
        let dx = linear_backward(&x, &probe, &w, &mut dw, &mut db, true).unwrap();

        let report = gradient_check(
            |v: &[f64]| {
                let x = Matrix::from_vec(4, 3, v.to_vec()).unwrap();
                objective(&linear(&x, &w, &b).unwrap())
            },
            x.as_slice(),
            dx.as_slice(),
            1e-5,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");

        let report = gradient_check(
            |v: &[f64]| {
                let w = block("w", 3, 5, v.to_vec());
                objective(&linear(&x, &w, &b).unwrap())
            },
            &w.values,
            &dw,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");

        let report = gradient_check(
            |v: &[f64]| {
                let b = block("b", 1, 5, v.to_vec());
                objective(&linear(&x, &w, &b).unwrap())
            },
            &b.values,
            &db,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn leaky_relu_examples() {
        let x = Matrix::from_rows(&[vec![0.0, 1.5, 3.0]]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2), x);
        let neg = Matrix::from_rows(&[vec![-1.0, -2.0]]).unwrap();
        assert_eq!(leaky_relu(&neg, 0.0).as_slice(), &[0.0, 0.0]);
        let g = leaky_relu_backward(&neg, &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), 0.2);
        assert_eq!(g.as_slice(), &[0.2, 0.2]);
    }

    #[test]
    fn leaky_relu_gradient_away_from_kink() {
        let mut rng = Rng::new(8);
        let mut x = rng.uniform_matrix(5, 4, -2.0, 2.0);
        for v in x.as_mut_slice() {
            if v.abs() < 0.1 {
                *v += 0.5;
            }
        }
        let probe = rng.uniform_matrix(5, 4, -1.0, 1.0);
        let dx = leaky_relu_backward(&x, &probe, 0.2);
        let report = gradient_check(
            |v: &[f64]| {
                let y = leaky_relu(&Matrix::from_vec(5, 4, v.to_vec()).unwrap(), 0.2);
                y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
            },
            x.as_slice(),
            dx.as_slice(),
            1e-5,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn max_pool_rows_examples() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let (v, a) = max_pool_rows(&x);
        assert_eq!(v, vec![1.0, -2.0, 3.0]);
        assert_eq!(a, vec![0, 0, 0]);

        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![4.0, 5.0], vec![2.0, 0.0]]).unwrap();
        let (v, a) = max_pool_rows(&x);
        assert_eq!(v, vec![4.0, 5.0]);
        // column 1 ties between rows 0 and 1
        assert_eq!(a, vec![1, 0]);
        let dx = max_pool_rows_backward(&[1.0, 2.0], &a, 3);
        assert_eq!(dx.as_slice(), &[0.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
    }

    fn random_graph_4() -> FiberGraph {
        FiberGraph::new(4, vec![(0, 1), (0, 3), (1, 2), (2, 0), (2, 1), (2, 3), (3, 0)]).unwrap()
    }

    #[test]
    fn neighbor_pool_matches_direct_loops() {
        let g = random_graph_4();
        let mut rng = Rng::new(21);
        let feats = rng.uniform_matrix(g.edge_count(), 3, -1.0, 1.0);
        for mode in [Pooling::Max, Pooling::Mean] {
            let (out, _) = neighbor_pool(&feats, &g, mode).unwrap();
            for i in 0..4 {
                let rows: Vec<usize> = g
                    .edges()
                    .iter()
                    .enumerate()
                    .filter(|(_, &(s, _))| s == i)
                    .map(|(e, _)| e)
                    .collect();
                for c in 0..3 {
                    let vals = rows.iter().map(|&e| feats.get(e, c));
                    let expected = match mode {
                        Pooling::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                        Pooling::Mean => vals.sum::<f64>() / rows.len() as f64,
                    };
                    assert!((out.get(i, c) - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn neighbor_pool_trivial_cases() {
        let g = FiberGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let feats = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        for mode in [Pooling::Max, Pooling::Mean] {
            assert_eq!(neighbor_pool(&feats, &g, mode).unwrap().0, feats);
        }
        let g = FiberGraph::new(1, vec![]).unwrap();
        assert!(neighbor_pool(&Matrix::zeros(0, 2), &g, Pooling::Max).is_err());

        let g2 = FiberGraph::new(3, vec![(0, 1), (0, 2), (1, 0), (2, 0)]).unwrap();
        let same = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let (out, _) = neighbor_pool(&same, &g2, Pooling::Mean).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn neighbor_pool_gradients() {
        let g = random_graph_4();
        let mut rng = Rng::new(2);
        let feats = rng.uniform_matrix(g.edge_count(), 3, -1.0, 1.0);
        let probe = rng.uniform_matrix(4, 3, -1.0, 1.0);
        for mode in [Pooling::Max, Pooling::Mean] {
            let (_, cache) = neighbor_pool(&feats, &g, mode).unwrap();
            let dx = neighbor_pool_backward(&probe, &g, &cache);
            let report = gradient_check(
                |v: &[f64]| {
                    let f = Matrix::from_vec(g.edge_count(), 3, v.to_vec()).unwrap();
                    let (y, _) = neighbor_pool(&f, &g, mode).unwrap();
                    y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
                },
                feats.as_slice(),
                dx.as_slice(),
                1e-5,
            );
            assert!(report.max_rel_error < 1e-6, "{mode:?} {report:?}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = softmax_cross_entropy(&Matrix::from_rows(&[vec![0.3, 0.3]]).unwrap(), &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let (loss, _) = softmax_cross_entropy(&Matrix::from_rows(&[vec![-10.0, 10.0]]).unwrap(), &[1]).unwrap();
        assert!((0.0..1e-8).contains(&loss));

        assert!(softmax_cross_entropy(&Matrix::zeros(1, 2), &[2]).is_err());
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        // reference values evaluated with 50-digit arithmetic (mpmath)
        let logits = Matrix::from_rows(&[vec![0.5, -1.25], vec![2.0, 0.75], vec![-0.3, -0.2]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1, 1]).unwrap();
        assert!((loss - REF_LOSS).abs() < 1e-14, "{loss}");

        let report = gradient_check(
            |v: &[f64]| softmax_cross_entropy(&Matrix::from_vec(3, 2, v.to_vec()).unwrap(), &[0, 1, 1]).unwrap().0,
            logits.as_slice(),
            grad.as_slice(),
            1e-5,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    const REF_LOSS: f64 = 0.768_849_963_952_343_7;
}
