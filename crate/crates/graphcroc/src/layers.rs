//! Graph building blocks: symmetric adjacency normalization, the GCN block
//! (convolution, relu, layer norm, skip), top-k pooling, and the matching
//! zero-fill unpooling.

use crate::autodiff::{Tape, Tensor};
use crate::matrix::Matrix;

/// Layer-norm epsilon used by every GCN block.
pub const LN_EPS: f64 = 1e-5;

/// Division guard for the pooling projection norm.
const PROJ_NORM_GUARD: f64 = 1e-12;

/// How a GCN block reinjects its input after normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    None,
    /// Adds the block input; requires matching input/output widths.
    Add,
    /// Appends the block input columns; output width is d_out + d_in.
    Concat,
}

impl SkipMode {
    pub fn parse(s: &str) -> Option<SkipMode> {
        match s {
            "none" => Some(SkipMode::None),
            "add" => Some(SkipMode::Add),
            "concat" => Some(SkipMode::Concat),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SkipMode::None => "none",
            SkipMode::Add => "add",
            SkipMode::Concat => "concat",
        }
    }

    /// Output width of a block given its convolution output width and input
    /// width.
    pub fn output_dim(&self, d_in: usize, d_out: usize) -> usize {
        match self {
            SkipMode::Concat => d_out + d_in,
            _ => d_out,
        }
    }
}

/// Per-block learnable parameters.
pub struct GcnParams {
    pub w: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

/// What one pooling step saves so the mirrored decoder layer can restore the
/// resolution: the retained indices, the gate that was applied, and the
/// pre-pool adjacency and features.
pub struct PoolRecord {
    pub kept_idx: Vec<usize>,
    pub gate: Tensor,
    pub a_prev: Tensor,
    pub h_prev: Tensor,
    pub n_prev: usize,
}

/// Symmetrically normalize an adjacency matrix with self-loops added:
/// D̂^{-1/2} (Â) D̂^{-1/2} with Â = sym(A) + I. Directed input is
/// symmetrized by OR for message passing only; callers keep the asymmetric
/// matrix as the reconstruction target.
pub fn normalize_adjacency(a: &Matrix) -> Matrix {
    let n = a.rows();
    assert_eq!(a.cols(), n, "normalize_adjacency wants a square matrix");
    let mut hat = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                hat.set(i, j, 1.0);
            } else if a.get(i, j) != 0.0 || a.get(j, i) != 0.0 {
                hat.set(i, j, 1.0);
            }
        }
    }
    let degrees: Vec<f64> = (0..n).map(|i| hat.row(i).iter().sum::<f64>()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = hat.get(i, j);
            if v != 0.0 {
                hat.set(i, j, v / (degrees[i] * degrees[j]).sqrt());
            }
        }
    }
    hat
}

/// Tape version of [`normalize_adjacency`] for adjacencies that carry
/// gradients (the soft reconstructed graphs used in decoder finetuning):
/// M = (A + Aᵀ)/2, Â = M + I, then scale by the outer product of the
/// inverse square-root degree vector.
pub fn normalize_adjacency_tape(tape: &mut Tape, a: Tensor) -> Tensor {
    let n = a.rows();
    assert_eq!(a.cols(), n, "normalize_adjacency wants a square matrix");
    let at = tape.transpose(a);
    let sum = tape.add(a, at);
    let sym = tape.scale(sum, 0.5);
    let eye = tape.constant(Matrix::identity(n));
    let hat = tape.add(sym, eye);
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let degrees = tape.matmul(hat, ones);
    let inv_sqrt = tape.rsqrt(degrees);
    let outer = tape.matmul_nt(inv_sqrt, inv_sqrt);
    tape.mul(hat, outer)
}

/// One GCN block: relu(A_norm · h · W), layer norm, then the skip.
pub fn gcn_block(
    tape: &mut Tape,
    h: Tensor,
    a_norm: Tensor,
    params: &GcnParams,
    skip: SkipMode,
) -> Tensor {
    assert_eq!(a_norm.shape(), (h.rows(), h.rows()), "adjacency/features row mismatch");
    let hw = tape.matmul(h, params.w);
    let ahw = tape.matmul(a_norm, hw);
    let act = tape.relu(ahw);
    let normed = tape.layer_norm(act, params.ln_gain, params.ln_bias, LN_EPS);
    match skip {
        SkipMode::None => normed,
        SkipMode::Add => {
            assert_eq!(
                h.cols(),
                normed.cols(),
                "add skip needs equal input/output widths; use concat or none"
            );
            tape.add(normed, h)
        }
        SkipMode::Concat => tape.concat_cols(normed, h),
    }
}

/// Number of nodes kept by a pooling layer.
pub fn pool_keep_count(n: usize, ratio: f64) -> usize {
    assert!(ratio > 0.0 && ratio <= 1.0, "pooling ratio {ratio} outside (0, 1]");
    ((ratio * n as f64).ceil() as usize).clamp(1, n)
}

/// Top-k pooling: score nodes by the normalized projection y = h·p/‖p‖,
/// keep the k = ⌈ratio·n⌉ best (ties fall to the lower index), gate the kept
/// rows by tanh(y), and induce the adjacency on the kept nodes. Gradients
/// reach h and p through the gate.
pub fn topk_pool(
    tape: &mut Tape,
    h: Tensor,
    a: Tensor,
    ratio: f64,
    p: Tensor,
) -> (Tensor, Tensor, PoolRecord) {
    let n = h.rows();
    assert_eq!(p.shape(), (h.cols(), 1), "projection vector must be {}x1", h.cols());
    assert_eq!(a.shape(), (n, n), "adjacency/features row mismatch");
    let k = pool_keep_count(n, ratio);

    let hp = tape.matmul(h, p);
    let p_sq = tape.mul(p, p);
    let s2 = tape.sum(p_sq);
    let s2_guarded = tape.affine(s2, 1.0, PROJ_NORM_GUARD);
    let inv_norm = tape.rsqrt(s2_guarded);
    let scores = tape.mul_scalar(hp, inv_norm);

    let values = tape.value(scores);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by descending score keeps lower indices first on ties.
    order.sort_by(|&i, &j| values.get(j, 0).partial_cmp(&values.get(i, 0)).unwrap());
    let mut kept_idx: Vec<usize> = order[..k].to_vec();
    kept_idx.sort_unstable();

    let y_kept = tape.row_gather(scores, &kept_idx);
    let gate = tape.tanh(y_kept);
    let h_kept = tape.row_gather(h, &kept_idx);
    let h_pooled = tape.mul_col_broadcast(h_kept, gate);

    let a_rows = tape.row_gather(a, &kept_idx);
    let a_pooled = tape.col_gather(a_rows, &kept_idx);

    let record = PoolRecord { kept_idx, gate, a_prev: a, h_prev: h, n_prev: n };
    (h_pooled, a_pooled, record)
}

/// Undo a pooling step: scatter rows back to their pre-pool positions with
/// zeros elsewhere, and hand back the stored pre-pool adjacency.
pub fn unpool(tape: &mut Tape, h: Tensor, record: &PoolRecord) -> (Tensor, Tensor) {
    assert_eq!(
        h.rows(),
        record.kept_idx.len(),
        "unpool input has {} rows but the record kept {}",
        h.rows(),
        record.kept_idx.len()
    );
    let restored = tape.row_scatter(h, &record.kept_idx, record.n_prev);
    (restored, record.a_prev)
}
