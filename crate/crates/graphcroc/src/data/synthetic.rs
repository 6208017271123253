//! Seeded generators for the pathological structures the decoder study
//! needs: axially and centrally symmetric graphs, islands, plain random
//! graphs, and directed random graphs, plus a protein-like benchmark
//! stand-in. Every generator is a pure function of its spec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{DataError, Graph, GraphSet};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Off-axis nodes come in mirrored pairs with equal features and equal
    /// adjacency rows; mirrored partners are never directly connected.
    Axisymmetric,
    /// One pivot node plus satellites that all share a feature vector and an
    /// adjacency row (a star, or an empty graph when the coin lands on 0).
    Centrosymmetric,
    /// A random graph with at least one guaranteed zero-degree node.
    Island,
    /// Independent Bernoulli edges per ordered pair, zero diagonal.
    DirectedRandom,
    /// Plain undirected Bernoulli edges.
    ErdosRenyi,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Option<SyntheticKind> {
        match s {
            "axisymmetric" => Some(SyntheticKind::Axisymmetric),
            "centrosymmetric" => Some(SyntheticKind::Centrosymmetric),
            "island" => Some(SyntheticKind::Island),
            "directed-random" => Some(SyntheticKind::DirectedRandom),
            "erdos-renyi" => Some(SyntheticKind::ErdosRenyi),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Axisymmetric => "axisymmetric",
            SyntheticKind::Centrosymmetric => "centrosymmetric",
            SyntheticKind::Island => "island",
            SyntheticKind::DirectedRandom => "directed-random",
            SyntheticKind::ErdosRenyi => "erdos-renyi",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub edge_prob: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(DataError::Spec(format!("edge_prob {} outside [0, 1]", self.edge_prob)));
        }
        let min_n = match self.kind {
            SyntheticKind::Axisymmetric | SyntheticKind::Centrosymmetric => 2,
            _ => 1,
        };
        if self.n < min_n {
            return Err(DataError::Spec(format!(
                "{} graphs need at least {min_n} nodes, got {}",
                self.kind.name(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Generate one graph from a spec. All kinds produce a zero diagonal.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Graph, DataError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SyntheticKind::Axisymmetric => axisymmetric(spec.n, spec.edge_prob, &mut rng),
        SyntheticKind::Centrosymmetric => centrosymmetric(spec.n, spec.edge_prob, &mut rng),
        SyntheticKind::Island => island(spec.n, spec.edge_prob, &mut rng),
        SyntheticKind::DirectedRandom => directed_random(spec.n, spec.edge_prob, &mut rng),
        SyntheticKind::ErdosRenyi => erdos_renyi(spec.n, spec.edge_prob, &mut rng),
    }
}

/// Node layout: axis nodes first (indices 0..axis), then mirrored pairs as
/// consecutive indices (axis + 2k, axis + 2k + 1). The graph is built by
/// expanding a random quotient graph over orbits; a quotient edge between
/// two pair-orbits expands to all four cross connections, which keeps the
/// two members' rows literally equal. Pair-internal edges would force a
/// self-loop by that same row equality, so they never appear.
fn axisymmetric(n: usize, edge_prob: f64, rng: &mut ChaCha20Rng) -> Result<Graph, DataError> {
    let pairs = n / 2;
    let axis = n - 2 * pairs;
    let orbits = axis + pairs;
    let member_of = |orbit: usize| -> Vec<usize> {
        if orbit < axis {
            vec![orbit]
        } else {
            let k = orbit - axis;
            vec![axis + 2 * k, axis + 2 * k + 1]
        }
    };
    let mut a = Matrix::zeros(n, n);
    for u in 0..orbits {
        for v in u + 1..orbits {
            if rng.gen_bool(edge_prob) {
                for &i in &member_of(u) {
                    for &j in &member_of(v) {
                        a.set(i, j, 1.0);
                        a.set(j, i, 1.0);
                    }
                }
            }
        }
    }
    // Features identify the orbit, so both members of a pair share a row.
    let mut x = Matrix::zeros(n, orbits);
    for orbit in 0..orbits {
        for &i in &member_of(orbit) {
            x.set(i, orbit, 1.0);
        }
    }
    Graph::new(0, x, a, false, None)
}

/// Node 0 is the pivot; all other nodes are interchangeable satellites.
/// One coin decides between the star on n nodes and the empty graph, the
/// only two centrally symmetric options with a single satellite orbit.
fn centrosymmetric(n: usize, edge_prob: f64, rng: &mut ChaCha20Rng) -> Result<Graph, DataError> {
    let mut a = Matrix::zeros(n, n);
    if rng.gen_bool(edge_prob) {
        for i in 1..n {
            a.set(0, i, 1.0);
            a.set(i, 0, 1.0);
        }
    }
    let mut x = Matrix::zeros(n, 2);
    x.set(0, 0, 1.0);
    for i in 1..n {
        x.set(i, 1, 1.0);
    }
    Graph::new(0, x, a, false, None)
}

/// Random undirected edges among the first n-1 nodes; the last node is kept
/// edge-free so the graph always contains an island.
fn island(n: usize, edge_prob: f64, rng: &mut ChaCha20Rng) -> Result<Graph, DataError> {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        for j in i + 1..n - 1 {
            if rng.gen_bool(edge_prob) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    Graph::new(0, Matrix::identity(n), a, false, None)
}

/// Bernoulli edges per ordered pair. When the probability is interior and
/// the size allows it, resample until the matrix is genuinely asymmetric so
/// the fixture actually exercises direction.
fn directed_random(n: usize, edge_prob: f64, rng: &mut ChaCha20Rng) -> Result<Graph, DataError> {
    let sample = |rng: &mut ChaCha20Rng| {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(edge_prob) {
                    a.set(i, j, 1.0);
                }
            }
        }
        a
    };
    let mut a = sample(rng);
    if n >= 2 && edge_prob > 0.0 && edge_prob < 1.0 {
        for _ in 0..64 {
            if !a.is_symmetric(0.0) {
                break;
            }
            a = sample(rng);
        }
    }
    Graph::new(0, Matrix::identity(n), a, true, None)
}

fn erdos_renyi(n: usize, edge_prob: f64, rng: &mut ChaCha20Rng) -> Result<Graph, DataError> {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_prob) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    Graph::new(0, Matrix::identity(n), a, false, None)
}

/// A desk-scale stand-in for a small protein benchmark: `count` undirected
/// graphs built from a chain backbone with short-range chords and a few
/// long-range contacts, sizes averaging around 39 nodes, and stored
/// self-loops so the diagonal is part of the reconstruction target.
///
/// Class 1 closes more short-range chords (tighter local structure) while
/// class 0 carries more long-range contacts, so a readout classifier has
/// signal. Node features one-hot the degree tertile; structure-correlated
/// categories keep most nodes distinguishable to a message-passing encoder,
/// where uniformly random categories would leave whole chain segments
/// interchangeable and cap reconstruction quality.
pub fn protein_like_set(count: usize, seed: u64) -> Result<GraphSet, DataError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    for id in 0..count {
        let n = rng.gen_range(24..=54);
        let label = id % 2;
        let (chord2, chord4, contacts) =
            if label == 0 { (0.20, 0.10, n / 8) } else { (0.55, 0.25, n / 16) };
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut pos = vec![0usize; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut a = Matrix::zeros(n, n);
        let link = |a: &mut Matrix, u: usize, v: usize| {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        };
        // Backbone path over a random node order.
        for k in 0..n - 1 {
            link(&mut a, order[k], order[k + 1]);
        }
        // Short-range chords, the local secondary structure.
        for k in 0..n - 2 {
            if rng.gen_bool(chord2) {
                link(&mut a, order[k], order[k + 2]);
            }
        }
        for k in 0..n.saturating_sub(4) {
            if rng.gen_bool(chord4) {
                link(&mut a, order[k], order[k + 4]);
            }
        }
        // Long-range contacts between backbone-distant nodes.
        for _ in 0..contacts {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if pos[u].abs_diff(pos[v]) >= 5 {
                link(&mut a, u, v);
            }
        }
        let deg: Vec<f64> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && a.get(i, j) > 0.5).count() as f64)
            .collect();
        let mut sorted = deg.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (t1, t2) = (sorted[n / 3], sorted[2 * n / 3]);
        let mut x = Matrix::zeros(n, 3);
        for i in 0..n {
            let tertile = if deg[i] <= t1 {
                0
            } else if deg[i] <= t2 {
                1
            } else {
                2
            };
            x.set(i, tertile, 1.0);
        }
        for i in 0..n {
            a.set(i, i, 1.0);
        }
        graphs.push(Graph::new(id, x, a, false, Some(label))?);
    }
    if graphs.is_empty() {
        return Ok(GraphSet::empty("protein-like", 3));
    }
    GraphSet::new("protein-like", graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::find_mirror_pairs;

    fn spec(kind: SyntheticKind, n: usize, edge_prob: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec { kind, n, edge_prob, seed }
    }

    #[test]
    fn generators_are_pure_functions_of_the_seed() {
        for kind in [
            SyntheticKind::Axisymmetric,
            SyntheticKind::Centrosymmetric,
            SyntheticKind::Island,
            SyntheticKind::DirectedRandom,
            SyntheticKind::ErdosRenyi,
        ] {
            let a = make_synthetic(&spec(kind, 9, 0.4, 77)).unwrap();
            let b = make_synthetic(&spec(kind, 9, 0.4, 77)).unwrap();
            assert_eq!(a.adjacency.as_slice(), b.adjacency.as_slice(), "{}", kind.name());
            assert_eq!(a.features.as_slice(), b.features.as_slice(), "{}", kind.name());
        }
    }

    #[test]
    fn no_generator_emits_self_loops() {
        for kind in [
            SyntheticKind::Axisymmetric,
            SyntheticKind::Centrosymmetric,
            SyntheticKind::Island,
            SyntheticKind::DirectedRandom,
            SyntheticKind::ErdosRenyi,
        ] {
            for seed in 0..20 {
                let g = make_synthetic(&spec(kind, 8, 0.5, seed)).unwrap();
                assert!(!g.has_self_loops(), "{} seed {seed}", kind.name());
            }
        }
    }

    #[test]
    fn axisymmetric_mirrors_satisfy_row_and_feature_equality() {
        for seed in 0..20 {
            let g = make_synthetic(&spec(SyntheticKind::Axisymmetric, 5, 0.6, seed)).unwrap();
            // Layout: node 0 on the axis, pairs (1,2) and (3,4).
            for (l, r) in [(1usize, 2usize), (3, 4)] {
                assert_eq!(g.features.row(l), g.features.row(r));
                assert_eq!(g.adjacency.row(l), g.adjacency.row(r));
                assert_eq!(g.adjacency.get(l, r), 0.0, "mirrored partners must not touch");
            }
            let pairs = find_mirror_pairs(&g);
            assert!(pairs.contains(&(1, 2)) && pairs.contains(&(3, 4)));
        }
    }

    #[test]
    fn centrosymmetric_satellites_are_interchangeable() {
        for seed in 0..10 {
            let g = make_synthetic(&spec(SyntheticKind::Centrosymmetric, 6, 0.7, seed)).unwrap();
            for i in 2..6 {
                assert_eq!(g.features.row(1), g.features.row(i));
                assert_eq!(g.adjacency.row(1), g.adjacency.row(i));
            }
        }
    }

    #[test]
    fn island_graphs_contain_a_zero_degree_node() {
        for seed in 0..10 {
            let g = make_synthetic(&spec(SyntheticKind::Island, 7, 0.8, seed)).unwrap();
            assert!(g.degrees().iter().any(|&d| d == 0));
        }
        let empty = make_synthetic(&spec(SyntheticKind::Island, 4, 0.0, 0)).unwrap();
        assert!(empty.adjacency.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn directed_random_is_asymmetric() {
        let g = make_synthetic(&spec(SyntheticKind::DirectedRandom, 16, 0.2, 123)).unwrap();
        assert!(g.directed);
        let mut asym = false;
        for i in 0..16 {
            for j in 0..16 {
                if g.adjacency.get(i, j) != g.adjacency.get(j, i) {
                    asym = true;
                }
            }
        }
        assert!(asym, "expected at least one one-way edge");
    }

    #[test]
    fn symmetric_kinds_reject_single_nodes() {
        assert!(make_synthetic(&spec(SyntheticKind::Axisymmetric, 1, 0.5, 0)).is_err());
        assert!(make_synthetic(&spec(SyntheticKind::Centrosymmetric, 1, 0.5, 0)).is_err());
    }

    #[test]
    fn protein_like_set_has_expected_shape() {
        let set = protein_like_set(64, 9).unwrap();
        assert_eq!(set.len(), 64);
        assert_eq!(set.feature_dim, 3);
        assert_eq!(set.num_classes, Some(2));
        let mean = set.mean_nodes();
        assert!((30.0..50.0).contains(&mean), "mean node count {mean}");
        for g in &set.graphs {
            assert!(g.has_self_loops());
            assert!((0..g.n()).all(|i| g.adjacency.get(i, i) == 1.0));
        }
        // The chord-heavy class ends up measurably denser.
        let density = |g: &Graph| g.edge_entries() as f64 / g.n() as f64;
        let d0: f64 = set.graphs.iter().filter(|g| g.label == Some(0)).map(density).sum::<f64>() / 32.0;
        let d1: f64 = set.graphs.iter().filter(|g| g.label == Some(1)).map(density).sum::<f64>() / 32.0;
        assert!(d1 > d0 + 0.4, "class densities too close: {d0} vs {d1}");
    }
}
