//! Directed neighbor graphs over the points of a streamline.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Directed edges `i → j` over `n` nodes, stored grouped by source node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl FiberGraph {
    /// Validates indices, rejects self-loops and duplicates, and groups the
    /// edges by source while keeping their relative order.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge {i}->{j} out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop on node {i}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Graph(format!("duplicate edge {i}->{j}")));
            }
        }
        let mut edges = edges;
        edges.sort_by_key(|&(i, _)| i);
        Ok(Self::from_grouped(n, edges))
    }

    fn from_grouped(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(i, _) in &edges {
            offsets[i + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        FiberGraph { n, edges, offsets }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// CSR offsets: out-edges of node `i` are `edges()[offsets[i]..offsets[i+1]]`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges[self.offsets[i]..self.offsets[i + 1]]
            .iter()
            .map(|&(_, j)| j)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// Disjoint union; node indices of later graphs are shifted past earlier ones.
    pub fn block_diagonal(parts: &[FiberGraph]) -> FiberGraph {
        let n = parts.iter().map(|g| g.n).sum();
        let mut edges = Vec::with_capacity(parts.iter().map(|g| g.edges.len()).sum());
        let mut shift = 0;
        for g in parts {
            edges.extend(g.edges.iter().map(|&(i, j)| (i + shift, j + shift)));
            shift += g.n;
        }
        FiberGraph::from_grouped(n, edges)
    }
}

/// Bidirectional chain `i → i±1`.
pub fn sequence_graph(n: usize) -> Result<FiberGraph> {
    if n < 2 {
        return Err(Error::Graph(format!("sequence graph needs n >= 2, got {n}")));
    }
    let mut edges = Vec::with_capacity(2 * (n - 1));
    for i in 0..n {
        if i > 0 {
            edges.push((i, i - 1));
        }
        if i + 1 < n {
            edges.push((i, i + 1));
        }
    }
    Ok(FiberGraph::from_grouped(n, edges))
}

/// k nearest rows by Euclidean distance, self excluded. Exact distance ties go
/// to the smaller index. Neighbors of each node are listed nearest first.
pub fn euclidean_knn(features: &Matrix, k: usize) -> Result<FiberGraph> {
    let n = features.rows();
    if k == 0 {
        return Err(Error::Graph("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Graph(format!(
            "k = {k} needs at least {} rows, got {n}",
            k + 1
        )));
    }
    if !features.is_finite() {
        return Err(Error::Graph("non-finite feature rows".into()));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let xi = features.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = xi
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cand.push((d, j));
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &mut cand[..k];
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(nearest.iter().map(|&(_, j)| (i, j)));
    }
    Ok(FiberGraph::from_grouped(n, edges))
}

/// k-nn over learned feature rows; same contract as [`euclidean_knn`].
pub fn latent_knn(features: &Matrix, k: usize) -> Result<FiberGraph> {
    euclidean_knn(features, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn pts(rows: &[[f64; 3]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn brute_force_knn(x: &Matrix, k: usize) -> BTreeSet<(usize, usize)> {
        let mut set = BTreeSet::new();
        for i in 0..x.rows() {
            let mut all: Vec<(f64, usize)> = (0..x.rows())
                .filter(|&j| j != i)
                .map(|j| {
                    let d = (0..x.cols()).map(|c| (x.get(i, c) - x.get(j, c)).powi(2)).sum::<f64>().sqrt();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in &all[..k] {
                set.insert((i, j));
            }
        }
        set
    }

    #[test]
    fn knn_collinear_points() {
        let g = euclidean_knn(&pts(&[[0., 0., 0.], [1., 0., 0.], [10., 0., 0.]]), 1).unwrap();
        let expected: BTreeSet<_> = [(0, 1), (1, 0), (2, 1)].into_iter().collect();
        assert_eq!(g.edge_set(), expected);
        assert_eq!(expected, brute_force_knn(&pts(&[[0., 0., 0.], [1., 0., 0.], [10., 0., 0.]]), 1));
    }

    #[test]
    fn knn_complete_cases() {
        let h = 3f64.sqrt() / 2.0;
        let tri = pts(&[[0., 0., 0.], [1., 0., 0.], [0.5, h, 0.]]);
        let g = euclidean_knn(&tri, 2).unwrap();
        assert_eq!(g.edge_count(), 6);

        let mut rng = Rng::new(4);
        let x = rng.uniform_matrix(7, 3, -5.0, 5.0);
        let g = euclidean_knn(&x, 6).unwrap();
        assert_eq!(g.edge_count(), 42);

        assert!(euclidean_knn(&x, 7).is_err());
        assert!(euclidean_knn(&x, 0).is_err());
    }

    #[test]
    fn latent_knn_one_hot_tie_break() {
        let mut rows = vec![vec![0.0; 64]; 8];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let g = latent_knn(&x, 1).unwrap();
        for i in 0..8 {
            let expected = if i == 0 { 1 } else { 0 };
            assert_eq!(g.neighbors(i).collect::<Vec<_>>(), vec![expected]);
        }
    }

    #[test]
    fn latent_knn_matches_brute_force() {
        let mut rng = Rng::new(16);
        let x = rng.uniform_matrix(16, 64, -1.0, 1.0);
        let g = latent_knn(&x, 5).unwrap();
        assert_eq!(g.edge_set(), brute_force_knn(&x, 5));
        assert_eq!(latent_knn(&x, 5).unwrap(), euclidean_knn(&x, 5).unwrap());
    }

    #[test]
    fn sequence_graph_examples() {
        assert_eq!(sequence_graph(2).unwrap().edge_set(), [(0, 1), (1, 0)].into_iter().collect());
        let expected: BTreeSet<_> = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)].into_iter().collect();
        assert_eq!(sequence_graph(4).unwrap().edge_set(), expected);
        for n in 2..30 {
            let g = sequence_graph(n).unwrap();
            assert_eq!(g.edge_count(), 2 * (n - 1));
            assert_eq!(g.out_degree(0), 1);
            assert_eq!(g.out_degree(n - 1), 1);
        }
        assert!(sequence_graph(1).is_err());
    }

    #[test]
    fn sequence_graph_reversal_invariant() {
        for n in 2..20 {
            let g = sequence_graph(n).unwrap();
            let reversed: BTreeSet<_> = g.edges().iter().map(|&(i, j)| (n - 1 - i, n - 1 - j)).collect();
            assert_eq!(reversed, g.edge_set());
        }
    }

    #[test]
    fn graph_validation() {
        assert!(FiberGraph::new(2, vec![(0, 0)]).is_err());
        assert!(FiberGraph::new(2, vec![(0, 2)]).is_err());
        assert!(FiberGraph::new(2, vec![(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn block_diagonal_shifts() {
        let g = FiberGraph::block_diagonal(&[sequence_graph(2).unwrap(), sequence_graph(3).unwrap()]);
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.neighbors(3).collect::<Vec<_>>(), vec![2, 4]);
    }

    proptest! {
        #[test]
        fn knn_out_degree_and_rigid_invariance(seed in 0u64..1000, k in 1usize..6, ang in 0.0..std::f64::consts::TAU) {
            let mut rng = Rng::new(seed);
            let x = rng.uniform_matrix(10, 3, -20.0, 20.0);
            let g = euclidean_knn(&x, k).unwrap();
            for i in 0..10 {
                prop_assert_eq!(g.out_degree(i), k);
            }
            let (s, c) = ang.sin_cos();
            let mut y = x.clone();
            for i in 0..10 {
                let (a, b, z) = (x.get(i, 0), x.get(i, 1), x.get(i, 2));
                y.set(i, 0, c * a - s * b + 3.0);
                y.set(i, 1, s * a + c * b - 7.0);
                y.set(i, 2, z + 1.0);
            }
            prop_assert_eq!(euclidean_knn(&y, k).unwrap().edge_set(), g.edge_set());
        }
    }
}
