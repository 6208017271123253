//! Graph containers, dataset ingestion, synthetic structure generators, and
//! train/test splitting.

pub mod synthetic;
pub mod tu;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::matrix::Matrix;

pub use synthetic::{make_synthetic, protein_like_set, SyntheticKind, SyntheticSpec};
pub use tu::{load_tu_dataset, write_tu_dataset};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Format { file: String, line: usize, msg: String },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("invalid graph data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single attributed graph: dense adjacency, per-node feature rows, and an
/// optional class label.
#[derive(Clone, Debug)]
pub struct Graph {
    pub id: usize,
    pub features: Matrix,
    pub adjacency: Matrix,
    pub directed: bool,
    pub label: Option<usize>,
}

impl Graph {
    /// Build a graph, validating the adjacency/feature invariants.
    pub fn new(
        id: usize,
        features: Matrix,
        adjacency: Matrix,
        directed: bool,
        label: Option<usize>,
    ) -> Result<Self, DataError> {
        let n = adjacency.rows();
        if n == 0 {
            return Err(DataError::Invalid(format!("graph {id} has no nodes")));
        }
        if adjacency.cols() != n {
            return Err(DataError::Invalid(format!(
                "graph {id}: adjacency is {}x{}, expected square",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if features.rows() != n {
            return Err(DataError::Invalid(format!(
                "graph {id}: {} feature rows for {} nodes",
                features.rows(),
                n
            )));
        }
        if !adjacency.is_binary() {
            return Err(DataError::Invalid(format!("graph {id}: adjacency entries must be 0 or 1")));
        }
        if !directed && !adjacency.is_symmetric(0.0) {
            return Err(DataError::Invalid(format!(
                "graph {id}: undirected graph with asymmetric adjacency"
            )));
        }
        Ok(Graph { id, features, adjacency, directed, label })
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of 1-entries in the adjacency matrix (ordered pairs, so an
    /// undirected edge counts twice and a self-loop once).
    pub fn edge_entries(&self) -> usize {
        self.adjacency.as_slice().iter().filter(|&&v| v == 1.0).count()
    }

    /// Row sums of the adjacency matrix (out-degree for directed graphs).
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n())
            .map(|r| self.adjacency.row(r).iter().filter(|&&v| v == 1.0).count())
            .collect()
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n()).any(|i| self.adjacency.get(i, i) == 1.0)
    }

    /// The induced subgraph on `nodes` (kept in the given order), with
    /// features copied from the host and directedness inherited.
    pub fn induced_subgraph(&self, nodes: &[usize], id: usize) -> Graph {
        Graph {
            id,
            features: self.features.gather_rows(nodes),
            adjacency: self.adjacency.submatrix(nodes),
            directed: self.directed,
            label: self.label,
        }
    }

    /// The same graph with zero columns appended so the feature width
    /// becomes `dim`. Useful when mixing fixtures with different orbit
    /// counts into one set.
    pub fn with_padded_features(mut self, dim: usize) -> Result<Graph, DataError> {
        let d = self.feature_dim();
        if dim < d {
            return Err(DataError::Invalid(format!(
                "cannot pad features of width {d} down to {dim}"
            )));
        }
        if dim > d {
            let mut padded = Matrix::zeros(self.n(), dim);
            for r in 0..self.n() {
                padded.row_mut(r)[..d].copy_from_slice(self.features.row(r));
            }
            self.features = padded;
        }
        Ok(self)
    }
}

/// An ordered collection of graphs sharing a feature width.
#[derive(Clone, Debug)]
pub struct GraphSet {
    pub graphs: Vec<Graph>,
    pub feature_dim: usize,
    pub num_classes: Option<usize>,
    pub name: String,
}

impl GraphSet {
    /// Build a set from graphs, validating shared feature width and unique
    /// ids, and inferring the class count when every graph is labelled.
    pub fn new(name: &str, graphs: Vec<Graph>) -> Result<Self, DataError> {
        let Some(first) = graphs.first() else {
            return Err(DataError::Invalid(format!(
                "graph set {name} is empty; use GraphSet::empty to build one deliberately"
            )));
        };
        let feature_dim = first.feature_dim();
        let mut seen = std::collections::BTreeSet::new();
        let mut labelled = 0usize;
        let mut max_label = 0usize;
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(DataError::Invalid(format!(
                    "graph set {name}: graph {} has feature width {} but the set uses {}",
                    g.id,
                    g.feature_dim(),
                    feature_dim
                )));
            }
            if !seen.insert(g.id) {
                return Err(DataError::Invalid(format!("graph set {name}: duplicate graph id {}", g.id)));
            }
            if let Some(l) = g.label {
                labelled += 1;
                max_label = max_label.max(l);
            }
        }
        let num_classes = if labelled == graphs.len() {
            Some(max_label + 1)
        } else if labelled == 0 {
            None
        } else {
            return Err(DataError::Invalid(format!(
                "graph set {name}: {labelled} of {} graphs are labelled; label all or none",
                graphs.len()
            )));
        };
        Ok(GraphSet { graphs, feature_dim, num_classes, name: name.to_string() })
    }

    pub fn empty(name: &str, feature_dim: usize) -> Self {
        GraphSet { graphs: Vec::new(), feature_dim, num_classes: None, name: name.to_string() }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn mean_nodes(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(|g| g.n() as f64).sum::<f64>() / self.graphs.len() as f64
    }

    pub fn max_degree(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.degrees())
            .max()
            .unwrap_or(0)
    }
}

/// Deterministically shuffle and partition a set into train/test halves.
/// The train side gets `round(len * train_fraction)` graphs, clamped so both
/// sides stay nonempty when the set has at least two graphs.
pub fn split(set: &GraphSet, train_fraction: f64, seed: u64) -> Result<(GraphSet, GraphSet), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut take = (n as f64 * train_fraction).round() as usize;
    if n >= 2 {
        take = take.clamp(1, n - 1);
    }
    let pick = |idx: &[usize], suffix: &str| GraphSet {
        graphs: idx.iter().map(|&i| set.graphs[i].clone()).collect(),
        feature_dim: set.feature_dim,
        num_classes: set.num_classes,
        name: format!("{}-{suffix}", set.name),
    };
    Ok((pick(&order[..take], "train"), pick(&order[take..], "test")))
}

/// One-hot degree encoding with `max_degree + 1` buckets; degrees beyond
/// `max_degree` clamp into the last bucket.
pub fn degree_one_hot_features(graph: &Graph, max_degree: usize) -> Matrix {
    let n = graph.n();
    let mut out = Matrix::zeros(n, max_degree + 1);
    for (i, d) in graph.degrees().into_iter().enumerate() {
        out.set(i, d.min(max_degree), 1.0);
    }
    out
}

/// Sample `count` induced subgraphs from `host` by breadth-first growth from
/// random roots, guaranteeing each sample is connected (in the underlying
/// undirected sense). Sizes are drawn uniformly from `size_range`.
pub fn sample_subgraphs(
    host: &Graph,
    count: usize,
    size_range: (usize, usize),
    seed: u64,
) -> Result<GraphSet, DataError> {
    let (min_size, max_size) = size_range;
    if min_size == 0 || min_size > max_size {
        return Err(DataError::Spec(format!("bad subgraph size range ({min_size}, {max_size})")));
    }
    if host.n() < max_size {
        return Err(DataError::Spec(format!(
            "host has {} nodes, cannot sample subgraphs of size up to {max_size}",
            host.n()
        )));
    }
    let n = host.n();
    // Undirected neighbour lists so growth ignores edge direction.
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (host.adjacency.get(i, j) == 1.0 || host.adjacency.get(j, i) == 1.0) {
                neighbours[i].push(j);
            }
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    for id in 0..count {
        let target = rng.gen_range(min_size..=max_size);
        let mut picked = None;
        for _ in 0..200 {
            let root = rng.gen_range(0..n);
            let mut selected = vec![false; n];
            let mut nodes = vec![root];
            selected[root] = true;
            let mut frontier: Vec<usize> = neighbours[root].clone();
            while nodes.len() < target && !frontier.is_empty() {
                let at = rng.gen_range(0..frontier.len());
                let next = frontier.swap_remove(at);
                if selected[next] {
                    continue;
                }
                selected[next] = true;
                nodes.push(next);
                frontier.extend(neighbours[next].iter().filter(|&&v| !selected[v]));
            }
            if nodes.len() == target {
                nodes.sort_unstable();
                picked = Some(nodes);
                break;
            }
        }
        let Some(nodes) = picked else {
            return Err(DataError::Spec(format!(
                "could not grow a connected subgraph of size {target} from the host"
            )));
        };
        graphs.push(host.induced_subgraph(&nodes, id));
    }
    if graphs.is_empty() {
        return Ok(GraphSet::empty("subgraphs", host.feature_dim()));
    }
    GraphSet::new("subgraphs", graphs)
}

/// All node pairs (i, j), i < j, whose feature rows and adjacency rows are
/// exactly equal: the mirrored pairs of a topologically symmetric graph.
/// Such nodes receive identical embeddings under any permutation-equivariant
/// encoder.
pub fn find_mirror_pairs(graph: &Graph) -> Vec<(usize, usize)> {
    let n = graph.n();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if graph.features.row(i) == graph.features.row(j)
                && graph.adjacency.row(i) == graph.adjacency.row(j)
            {
                pairs.push((i, j));
            }
        }
    }
    pairs
}
