//! Structural-reconstruction metrics: ROC-AUC over adjacency entries,
//! 1-WL structural equivalence, exact match, and the per-node embedding
//! divergence statistic.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::data::GraphSet;
use crate::matrix::Matrix;
use crate::model::{predict_edges, GraphCrocModel, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty graph set")]
    EmptySet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mann-Whitney ROC-AUC: the probability that a uniformly random positive
/// outscores a uniformly random negative, ties counting one half. Returns
/// `None` when only one class is present, since the statistic is undefined
/// there; callers exclude those entries from aggregates.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite scores"));

    // Average ranks across tied score groups, then sum the positive ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based: the group spans ranks i+1 ..= j+1.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// AUC of reconstruction logits against a binary adjacency target. Directed
/// graphs score all n² entries; undirected graphs score each unordered pair
/// once via the upper triangle, diagonal included. Both conventions give the
/// same AUC for symmetric inputs, the single-count form just keeps the score
/// lists smaller.
pub fn graph_auc(logits: &Matrix, a: &Matrix, directed: bool) -> Option<f64> {
    assert_eq!(logits.shape(), a.shape(), "logits and target must align");
    let n = a.rows();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let lo = if directed { 0 } else { i };
        for j in lo..n {
            scores.push(logits.get(i, j));
            labels.push(a.get(i, j) != 0.0);
        }
    }
    roc_auc(&scores, &labels)
}

fn neighbor_colors(a: &Matrix, node: usize, colors: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = (0..a.cols())
        .filter(|&j| a.get(node, j) != 0.0)
        .map(|j| colors[j])
        .collect();
    out.sort_unstable();
    out
}

fn sorted_histogram(colors: &[usize]) -> Vec<usize> {
    let mut h = colors.to_vec();
    h.sort_unstable();
    h
}

/// 1-WL color refinement on structure alone: both graphs start with uniform
/// colors and are refined in lockstep through a shared signature table, so
/// the color histograms stay directly comparable. Returns true when the
/// histograms still agree after `iterations` rounds or stabilization,
/// whichever comes first. Once the histograms diverge they can never
/// re-merge, so the loop exits early on the first mismatch. Self-loops count
/// as neighbors, making a diagonal mismatch a structural difference.
pub fn wl_test(a1: &Matrix, a2: &Matrix, iterations: usize) -> bool {
    if a1.rows() != a2.rows() {
        return false;
    }
    let n = a1.rows();
    if n == 0 {
        return true;
    }

    let mut c1 = vec![0usize; n];
    let mut c2 = vec![0usize; n];
    let mut distinct = 1usize;

    for _ in 0..iterations.min(n.max(1)) {
        let mut table: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        let next = |sig: (usize, Vec<usize>), table: &mut BTreeMap<_, usize>| {
            let fresh = table.len();
            *table.entry(sig).or_insert(fresh)
        };
        let new1: Vec<usize> = (0..n)
            .map(|i| next((c1[i], neighbor_colors(a1, i, &c1)), &mut table))
            .collect();
        let new2: Vec<usize> = (0..n)
            .map(|i| next((c2[i], neighbor_colors(a2, i, &c2)), &mut table))
            .collect();

        if sorted_histogram(&new1) != sorted_histogram(&new2) {
            return false;
        }
        let refined = table.len();
        c1 = new1;
        c2 = new2;
        if refined == distinct {
            break; // stable partition, further rounds change nothing
        }
        distinct = refined;
    }
    true
}

/// Exhaustive isomorphism check over all n! node relabelings. Only usable
/// for small n; serves as the reference oracle the WL test is validated
/// against.
pub fn brute_force_isomorphic(a1: &Matrix, a2: &Matrix) -> bool {
    if a1.shape() != a2.shape() {
        return false;
    }
    let n = a1.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    permute_search(a1, a2, &mut perm, 0)
}

fn permute_search(a1: &Matrix, a2: &Matrix, perm: &mut Vec<usize>, k: usize) -> bool {
    let n = perm.len();
    if k == n {
        for i in 0..n {
            for j in 0..n {
                if a1.get(i, j) != a2.get(perm[i], perm[j]) {
                    return false;
                }
            }
        }
        return true;
    }
    for i in k..n {
        perm.swap(k, i);
        // Prune on the partial mapping: rows 0..=k must already be consistent.
        let mut ok = true;
        'outer: for r in 0..=k {
            for c in 0..=k {
                if a1.get(r, c) != a2.get(perm[r], perm[c]) {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok && permute_search(a1, a2, perm, k + 1) {
            return true;
        }
        perm.swap(k, i);
    }
    false
}

/// Entrywise equality of two same-shaped binary matrices.
pub fn exact_match(a: &Matrix, a_hat: &Matrix) -> bool {
    assert_eq!(a.shape(), a_hat.shape(), "exact_match wants equal shapes");
    a.as_slice() == a_hat.as_slice()
}

/// Per-node cosine similarity between paired rows of the two decoder
/// branches. A zero-norm row makes the cosine undefined and is reported as
/// `None` rather than silently zeroed.
pub fn cosine_divergence(p: &Matrix, q: &Matrix) -> Vec<Option<f64>> {
    assert_eq!(p.shape(), q.shape(), "branch embeddings must align");
    (0..p.rows())
        .map(|i| {
            let mut dot = 0.0;
            let mut np = 0.0;
            let mut nq = 0.0;
            for j in 0..p.cols() {
                let (x, y) = (p.get(i, j), q.get(i, j));
                dot += x * y;
                np += x * x;
                nq += y * y;
            }
            if np == 0.0 || nq == 0.0 {
                None
            } else {
                Some(dot / (np.sqrt() * nq.sqrt()))
            }
        })
        .collect()
}

/// One row of an evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct GraphEval {
    pub graph_id: usize,
    /// Absent when the target graph has a single class of entries.
    pub auc: Option<f64>,
    pub wl_pass: bool,
    pub exact: bool,
    pub diag_positive_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub per_graph: Vec<GraphEval>,
    /// Mean over graphs with a defined AUC; absent if none have one.
    pub mean_auc: Option<f64>,
    pub wl_pass_rate: f64,
    pub exact_rate: f64,
    pub mean_diag_positive_rate: f64,
}

impl ReconstructionReport {
    fn from_rows(per_graph: Vec<GraphEval>) -> Self {
        let n = per_graph.len() as f64;
        let aucs: Vec<f64> = per_graph.iter().filter_map(|g| g.auc).collect();
        let mean_auc = if aucs.is_empty() {
            None
        } else {
            Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
        };
        let wl_pass_rate = per_graph.iter().filter(|g| g.wl_pass).count() as f64 / n;
        let exact_rate = per_graph.iter().filter(|g| g.exact).count() as f64 / n;
        let mean_diag_positive_rate =
            per_graph.iter().map(|g| g.diag_positive_rate).sum::<f64>() / n;
        ReconstructionReport {
            per_graph,
            mean_auc,
            wl_pass_rate,
            exact_rate,
            mean_diag_positive_rate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("graph_id,auc,wl_pass,exact,diag_positive_rate\n");
        for g in &self.per_graph {
            let auc = g
                .auc
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                g.graph_id, auc, g.wl_pass, g.exact, g.diag_positive_rate
            ));
        }
        out
    }
}

fn eval_one(model: &GraphCrocModel, graph: &crate::data::Graph, th: f64) -> Result<GraphEval, EvalError> {
    let logits = model.reconstruct(graph)?;
    let auc = graph_auc(&logits, &graph.adjacency, graph.directed);
    let pred = predict_edges(&logits, th)?;
    let exact = exact_match(&graph.adjacency, &pred);
    // Directed reconstructions are compared exactly; the WL test presumes
    // undirected structure.
    let wl_pass = if graph.directed {
        exact
    } else {
        wl_test(&graph.adjacency, &pred, graph.adjacency.rows())
    };
    let n = graph.adjacency.rows();
    let diag_positive = (0..n).filter(|&i| logits.get(i, i) > 0.0).count();
    Ok(GraphEval {
        graph_id: graph.id,
        auc,
        wl_pass,
        exact,
        diag_positive_rate: diag_positive as f64 / n as f64,
    })
}

/// Score every graph in the set against its own reconstruction. Read-only
/// with respect to the model; deterministic.
pub fn evaluate(
    model: &GraphCrocModel,
    set: &GraphSet,
    th: f64,
) -> Result<ReconstructionReport, EvalError> {
    if set.graphs.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut rows = Vec::with_capacity(set.graphs.len());
    for g in &set.graphs {
        rows.push(eval_one(model, g, th)?);
    }
    Ok(ReconstructionReport::from_rows(rows))
}

/// Same as [`evaluate`] but fans per-graph work across `workers` threads.
/// Report order still follows the set order, so single- and multi-thread
/// runs emit identical bytes.
pub fn evaluate_parallel(
    model: &GraphCrocModel,
    set: &GraphSet,
    th: f64,
    workers: usize,
) -> Result<ReconstructionReport, EvalError> {
    if set.graphs.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let workers = workers.max(1).min(set.graphs.len());
    if workers == 1 {
        return evaluate(model, set, th);
    }

    let mut slots: Vec<Option<Result<GraphEval, EvalError>>> = Vec::new();
    slots.resize_with(set.graphs.len(), || None);
    let chunk = set.graphs.len().div_ceil(workers);

    std::thread::scope(|scope| {
        for (graphs, out) in set.graphs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (g, slot) in graphs.iter().zip(out.iter_mut()) {
                    *slot = Some(eval_one(model, g, th));
                }
            });
        }
    });

    let mut rows = Vec::with_capacity(slots.len());
    for slot in slots {
        rows.push(slot.expect("every slot filled by its worker")?);
    }
    Ok(ReconstructionReport::from_rows(rows))
}
