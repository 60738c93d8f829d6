//! Attributed graphs, inductive batches and a stochastic block model generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// An attributed graph `{A, X, Y}` with CSR adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph<T> {
    adjacency: CsrMatrix<T>,
    features: DenseMatrix<T>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    directed: bool,
}

impl<T: Scalar> SparseGraph<T> {
    /// Validates every structural invariant before constructing.
    pub fn new(
        adjacency: CsrMatrix<T>,
        features: DenseMatrix<T>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        directed: bool,
    ) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::shape("SparseGraph::new", "adjacency is not square"));
        }
        if features.rows() != n {
            return Err(Error::shape("SparseGraph::new", format!("{} feature rows for {n} nodes", features.rows())));
        }
        if labels.len() != n {
            return Err(Error::shape("SparseGraph::new", format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some((node, &Some(label))) =
            labels.iter().enumerate().find(|(_, l)| matches!(l, Some(c) if *c >= num_classes))
        {
            return Err(Error::LabelOutOfRange { node, label: label as i64, num_classes });
        }
        if adjacency.values().iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument("edge weights must be positive and finite".into()));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        if !directed && !adjacency.is_symmetric() {
            return Err(Error::InvalidArgument("undirected graph has an asymmetric adjacency".into()));
        }
        Ok(Self { adjacency, features, labels, num_classes, directed })
    }

    /// Builds an undirected graph from an edge list; each edge is inserted in
    /// both directions and repeated pairs keep their first weight.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize, T)],
        features: DenseMatrix<T>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let adjacency = undirected_adjacency(num_nodes, edges)?;
        Self::new(adjacency, features, labels, num_classes, false)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn adjacency(&self) -> &CsrMatrix<T> {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Undirected edge count (each pair once, self-loops once).
    pub fn num_edges(&self) -> usize {
        if self.directed {
            return self.adjacency.nnz();
        }
        self.adjacency.iter().filter(|&(i, j, _)| i <= j).count()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).0.len()
    }

    /// Labels of a fully labelled graph.
    pub fn dense_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::InvalidArgument(format!("node {i} is unlabeled"))))
            .collect()
    }

    /// The subgraph induced by `ids`, renumbered in the given order.
    pub fn induced_subgraph(&self, ids: &[usize]) -> Result<Self> {
        let adjacency = self.adjacency.induced(ids)?;
        let features = self.features.select_rows(ids)?;
        let labels = ids.iter().map(|&i| self.labels[i]).collect();
        Ok(Self { adjacency, features, labels, num_classes: self.num_classes, directed: self.directed })
    }

    /// Connections of `ids` (as inductive nodes) towards this graph's node
    /// set `base`. Edges to nodes outside `base` are dropped.
    pub fn incremental_batch(&self, base: &[usize], ids: &[usize]) -> Result<IncrementalBatch<T>> {
        let mut base_pos = vec![usize::MAX; self.num_nodes()];
        for (p, &b) in base.iter().enumerate() {
            base_pos[b] = p;
        }
        let mut batch_pos = vec![usize::MAX; self.num_nodes()];
        for (p, &b) in ids.iter().enumerate() {
            if base_pos[b] != usize::MAX {
                return Err(Error::InvalidArgument(format!("node {b} is both a base and a batch node")));
            }
            batch_pos[b] = p;
        }
        let mut cross = Vec::new();
        let mut tilde = Vec::new();
        for (p, &node) in ids.iter().enumerate() {
            let (c, v) = self.adjacency.row(node);
            for (&j, &w) in c.iter().zip(v) {
                if base_pos[j] != usize::MAX {
                    cross.push((p, base_pos[j], w));
                } else if batch_pos[j] != usize::MAX && j != node {
                    tilde.push((p, batch_pos[j], w));
                }
            }
        }
        let a = CsrMatrix::from_triplets(ids.len(), base.len(), &cross)?;
        let a_tilde = CsrMatrix::from_triplets(ids.len(), ids.len(), &tilde)?;
        let x = self.features.select_rows(ids)?;
        let labels = ids.iter().map(|&i| self.labels[i]).collect();
        IncrementalBatch::new(a, x, Some(a_tilde), Some(labels))
    }
}

pub(crate) fn undirected_adjacency<T: Scalar>(n: usize, edges: &[(usize, usize, T)]) -> Result<CsrMatrix<T>> {
    let mut seen = std::collections::HashSet::with_capacity(edges.len());
    let mut trip = Vec::with_capacity(edges.len() * 2);
    for &(u, v, w) in edges {
        if u >= n || v >= n {
            return Err(Error::IndexOutOfRange(format!("edge ({u}, {v}) in a graph with {n} nodes")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            continue;
        }
        trip.push((u, v, w));
        if u != v {
            trip.push((v, u, w));
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// How inductive nodes are connected among themselves at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Inductive nodes arrive in isolation; `ã` is zeroed.
    Node,
    /// Inductive nodes form a connected subgraph; `ã` is used as given.
    Graph,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" | "node_batch" => Ok(BatchMode::Node),
            "graph" | "graph_batch" => Ok(BatchMode::Graph),
            other => Err(Error::InvalidArgument(format!("unknown batch mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for BatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BatchMode::Node => "node",
            BatchMode::Graph => "graph",
        })
    }
}

/// A batch of `n` inductive nodes: their links `a` (n×N) into an existing
/// graph, their features, and optionally their own links `ã` (n×n).
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalBatch<T> {
    pub a: CsrMatrix<T>,
    pub x: DenseMatrix<T>,
    pub a_tilde: Option<CsrMatrix<T>>,
    /// Ground truth, when known; never used for training.
    pub labels: Option<Vec<Option<usize>>>,
}

impl<T: Scalar> IncrementalBatch<T> {
    pub fn new(
        a: CsrMatrix<T>,
        x: DenseMatrix<T>,
        a_tilde: Option<CsrMatrix<T>>,
        labels: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let n = a.rows();
        if x.rows() != n {
            return Err(Error::shape("IncrementalBatch", format!("{} feature rows for {n} nodes", x.rows())));
        }
        if let Some(t) = &a_tilde {
            if t.rows() != n || t.cols() != n {
                return Err(Error::shape("IncrementalBatch", format!("a_tilde is {}x{}", t.rows(), t.cols())));
            }
            if !t.is_symmetric() {
                return Err(Error::InvalidArgument("a_tilde must be symmetric".into()));
            }
            if (0..n).any(|i| t.get(i, i) != T::zero()) {
                return Err(Error::InvalidArgument("self-edges among inductive nodes are not allowed".into()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("IncrementalBatch", "label count differs from node count"));
            }
        }
        Ok(Self { a, x, a_tilde, labels })
    }

    pub fn empty(base_nodes: usize, num_features: usize) -> Self {
        Self {
            a: CsrMatrix::empty(0, base_nodes),
            x: DenseMatrix::zeros(0, num_features),
            a_tilde: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ã` as used under `mode`: `None` in node mode.
    pub fn tilde_for(&self, mode: BatchMode) -> Result<Option<&CsrMatrix<T>>> {
        match mode {
            BatchMode::Node => Ok(None),
            BatchMode::Graph => self
                .a_tilde
                .as_ref()
                .map(Some)
                .ok_or_else(|| Error::InvalidArgument("graph-batch mode requires a_tilde".into())),
        }
    }

    /// Sub-batch of the nodes at positions `rows`, keeping links among them.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.len()];
        for (p, &r) in rows.iter().enumerate() {
            pos[r] = p;
        }
        let mut cross = Vec::new();
        for (p, &r) in rows.iter().enumerate() {
            let (c, v) = self.a.row(r);
            cross.extend(c.iter().zip(v).map(|(&j, &w)| (p, j, w)));
        }
        let a = CsrMatrix::from_triplets(rows.len(), self.a.cols(), &cross)?;
        let a_tilde = match &self.a_tilde {
            None => None,
            Some(t) => {
                let trip: Vec<_> = t
                    .iter()
                    .filter(|&(i, j, _)| pos[i] != usize::MAX && pos[j] != usize::MAX)
                    .map(|(i, j, w)| (pos[i], pos[j], w))
                    .collect();
                Some(CsrMatrix::from_triplets(rows.len(), rows.len(), &trip)?)
            }
        };
        let x = self.x.select_rows(rows)?;
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect());
        Self::new(a, x, a_tilde, labels)
    }

    /// Splits into consecutive chunks of at most `size` nodes.
    pub fn chunks(&self, size: usize) -> Result<Vec<Self>> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|s| {
                let rows: Vec<usize> = (s..(s + size).min(self.len())).collect();
                self.subset(&rows)
            })
            .collect()
    }
}

/// Node-id lists of a transductive/inductive split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut owner = vec![0u8; num_nodes];
        for (tag, ids) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in ids {
                if i >= num_nodes {
                    return Err(Error::IndexOutOfRange(format!("split node {i} with {num_nodes} nodes")));
                }
                if owner[i] != 0 {
                    return Err(Error::InvalidArgument(format!("node {i} appears in more than one split")));
                }
                owner[i] = tag;
            }
        }
        Ok(())
    }

    /// Random per-node split with the given sizes.
    pub fn random(num_nodes: usize, train: usize, val: usize, test: usize, seed: u64) -> Result<Self> {
        if train + val + test > num_nodes {
            return Err(Error::InvalidArgument("split sizes exceed the node count".into()));
        }
        let mut ids: Vec<usize> = (0..num_nodes).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut s = Self {
            train: ids[..train].to_vec(),
            val: ids[train..train + val].to_vec(),
            test: ids[train + val..train + val + test].to_vec(),
        };
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        Ok(s)
    }
}

/// A graph together with its node splits, as stored in a graph bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBundle<T> {
    pub graph: SparseGraph<T>,
    pub splits: Splits,
}

/// The pieces an inductive experiment needs from a split graph.
#[derive(Clone, Debug)]
pub struct InductiveSetup<T> {
    /// Subgraph induced by the training nodes, the graph to condense.
    pub train_graph: SparseGraph<T>,
    /// Validation nodes attached to the training graph (features and edges only).
    pub support: IncrementalBatch<T>,
    /// Test nodes attached to the training graph, with labels for scoring.
    pub test: IncrementalBatch<T>,
}

impl<T: Scalar> GraphBundle<T> {
    pub fn inductive_setup(&self) -> Result<InductiveSetup<T>> {
        self.splits.validate(self.graph.num_nodes())?;
        let train_graph = self.graph.induced_subgraph(&self.splits.train)?;
        let mut support = self.graph.incremental_batch(&self.splits.train, &self.splits.val)?;
        support.labels = None;
        let test = self.graph.incremental_batch(&self.splits.train, &self.splits.test)?;
        Ok(InductiveSetup { train_graph, support, test })
    }
}

/// Parameters of [`sbm_generate`].
#[derive(Clone, Debug)]
pub struct SbmParams {
    pub sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub num_features: usize,
    /// Length of each class-mean vector; noise is unit-variance Gaussian.
    pub mean_separation: f64,
    pub seed: u64,
}

/// Undirected stochastic block model with Gaussian class-mean features.
///
/// Class `c` has mean `mean_separation · e_{c mod d}`; every node gets an
/// independent standard normal perturbation.
pub fn sbm_generate<T: Scalar>(params: &SbmParams) -> Result<SparseGraph<T>> {
    let SbmParams { sizes, p_in, p_out, num_features, mean_separation, seed } = params;
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("every SBM class needs at least one node".into()));
    }
    if !(0.0 <= *p_out && p_out <= p_in && *p_in <= 1.0) {
        return Err(Error::InvalidArgument("SBM requires 0 <= p_out <= p_in <= 1".into()));
    }
    if *num_features == 0 {
        return Err(Error::InvalidArgument("SBM needs at least one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { *p_in } else { *p_out };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((i, j, T::one()));
            }
        }
    }
    let features = DenseMatrix::from_fn(n, *num_features, |i, k| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mean = if k == labels[i] % num_features { *mean_separation } else { 0.0 };
        T::of(mean + noise)
    });
    SparseGraph::from_edges(n, &edges, features, labels.into_iter().map(Some).collect(), sizes.len())
}
