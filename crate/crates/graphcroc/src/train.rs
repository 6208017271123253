//! Reconstruction training: the class-balanced BCE objective on edge
//! logits, a from-scratch AdamW optimizer, the per-graph training loop,
//! and a config heuristic that scales the architecture to a dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::GraphSet;
use crate::layers::SkipMode;
use crate::matrix::Matrix;
use crate::model::{GraphCrocModel, Kernel, ModelConfig, ModelError, ParamFilter};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (non-finite parameters)")]
    Diverged { epoch: usize },
    #[error("non-finite gradient for parameter {0}")]
    BadGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

/// Per-class weights that balance edge and non-edge terms of the loss.
/// For a graph with c0 zeros and c1 ones (over all n² adjacency entries,
/// diagonal included), the balanced weights satisfy α₀c₀ = α₁c₁ and
/// α₀c₀ + α₁c₁ = c₀ + c₁.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha0: f64,
    pub alpha1: f64,
    pub c0: usize,
    pub c1: usize,
}

impl LossWeights {
    /// Unweighted fallback for degenerate graphs (all edges or no edges).
    pub fn uniform(c0: usize, c1: usize) -> LossWeights {
        LossWeights { alpha0: 1.0, alpha1: 1.0, c0, c1 }
    }
}

/// Count zeros and ones in a binary adjacency and derive the balanced
/// weights α₀ = (c₀+c₁)/(2c₀), α₁ = (c₀+c₁)/(2c₁). A single-class matrix
/// has no balancing to do and falls back to uniform weights.
pub fn compute_alphas(a: &Matrix) -> LossWeights {
    assert!(a.is_binary(), "loss weights expect a 0/1 adjacency");
    let total = a.rows() * a.cols();
    let c1 = a.as_slice().iter().filter(|&&v| v == 1.0).count();
    let c0 = total - c1;
    if c0 == 0 || c1 == 0 {
        return LossWeights::uniform(c0, c1);
    }
    let sum = total as f64;
    LossWeights {
        alpha0: sum / (2.0 * c0 as f64),
        alpha1: sum / (2.0 * c1 as f64),
        c0,
        c1,
    }
}

/// Class-weighted binary cross-entropy on logits, summed over all entries:
/// Σ α_{a_ij} · (softplus(x_ij) − x_ij·a_ij). The softplus form never
/// evaluates an exp of a large positive number, so huge logits are safe.
pub fn balanced_bce(tape: &mut Tape, logits: Tensor, a: &Matrix, w: &LossWeights) -> Tensor {
    assert_eq!(logits.shape(), a.shape(), "logits/target shape mismatch");
    let weights = a.map(|v| if v == 1.0 { w.alpha1 } else { w.alpha0 });
    let a_t = tape.constant(a.clone());
    let w_t = tape.constant(weights);
    let sp = tape.softplus(logits);
    let xa = tape.mul(logits, a_t);
    let per_entry = tape.sub(sp, xa);
    let weighted = tape.mul(w_t, per_entry);
    tape.sum(weighted)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-2;

/// AdamW state: first/second moments per parameter plus the shared step
/// count. Weight decay is decoupled from the moment estimates.
pub struct OptState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    pub step: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(shapes: &[(usize, usize)], lr: f64) -> OptState {
        OptState {
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn for_model(model: &GraphCrocModel, lr: f64) -> OptState {
        let shapes: Vec<(usize, usize)> =
            model.param_entries().iter().map(|(_, m)| m.shape()).collect();
        OptState::new(&shapes, lr)
    }

    /// One decoupled-weight-decay Adam step. `grads` is aligned with the
    /// parameter list; `None` slots (frozen or unused parameters) are left
    /// completely untouched, decay included.
    pub fn step(
        &mut self,
        mut params: Vec<(String, &mut Matrix)>,
        grads: &[Option<&Matrix>],
    ) -> Result<(), TrainError> {
        assert_eq!(params.len(), self.m.len(), "optimizer was built for a different model");
        assert_eq!(params.len(), grads.len(), "gradient list is misaligned");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, (name, p)) in params.iter_mut().enumerate() {
            let Some(g) = grads[idx] else { continue };
            if !g.all_finite() {
                return Err(TrainError::BadGradient(name.clone()));
            }
            assert_eq!(g.shape(), p.shape(), "gradient shape mismatch for {name}");
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, (&gi, pi)) in g.as_slice().iter().zip(p.as_mut_slice()).enumerate() {
                let mi = self.beta1 * m.as_slice()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.as_slice()[i] + (1.0 - self.beta2) * gi * gi;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *pi -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pi);
            }
        }
        Ok(())
    }
}

/// What to record while training.
#[derive(Clone, Debug, Default)]
pub struct TraceSpec {
    /// Graph whose diagonal logits (and optionally embeddings) are logged
    /// every time it is visited.
    pub watch_graph: Option<usize>,
    /// Also snapshot the first two decoder-P rows of the watched graph.
    pub embeddings: bool,
}

/// Embedding snapshot for one visit of the watched graph.
#[derive(Clone, Debug)]
pub struct EmbeddingSnapshot {
    pub epoch: usize,
    pub iter: usize,
    pub p_rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    /// Mean per-graph loss for each epoch.
    pub epoch_losses: Vec<f64>,
    /// (epoch, iter, graph_id, loss) for every optimization step.
    pub iter_losses: Vec<(usize, usize, usize, f64)>,
    /// Diagonal logits of the watched graph at each of its visits.
    pub diag_logits: Vec<(usize, usize, Vec<f64>)>,
    pub embeddings: Vec<EmbeddingSnapshot>,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub trace: TraceSpec,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr,
            seed,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            trace: TraceSpec::default(),
        }
    }
}

/// Train the reconstructor on every graph in the set. Graphs are visited
/// one at a time (node counts vary, so there is no batching) in an order
/// reshuffled each epoch from the config seed. Single-threaded and fully
/// deterministic for a fixed seed.
pub fn train(
    model: &mut GraphCrocModel,
    set: &GraphSet,
    cfg: &TrainConfig,
) -> Result<TrainTrace, TrainError> {
    if set.graphs.is_empty() {
        return Err(TrainError::Invalid("cannot train on an empty graph set".into()));
    }
    let mut opt = OptState::for_model(model, cfg.lr);
    opt.weight_decay = cfg.weight_decay;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..set.graphs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (iter, &gi) in order.iter().enumerate() {
            if model.param_entries().iter().any(|(_, m)| !m.all_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            let g = &set.graphs[gi];
            let mut pass = model.forward_graph(g, ParamFilter::All)?;
            let weights = compute_alphas(&g.adjacency);
            let loss_t = balanced_bce(&mut pass.tape, pass.out.logits, &g.adjacency, &weights);
            let loss = pass.tape.scalar(loss_t);
            epoch_sum += loss;
            trace.iter_losses.push((epoch, iter, g.id, loss));
            if cfg.trace.watch_graph == Some(g.id) {
                let logits = pass.tape.value(pass.out.logits);
                let diag: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, i)).collect();
                trace.diag_logits.push((epoch, iter, diag));
                if cfg.trace.embeddings {
                    let p = pass.tape.value(pass.out.p);
                    let keep = p.rows().min(2);
                    let p_rows = (0..keep).map(|r| p.row(r).to_vec()).collect();
                    trace.embeddings.push(EmbeddingSnapshot { epoch, iter, p_rows });
                }
            }

            let grads = pass.tape.backward(loss_t);
            let grad_refs: Vec<Option<&Matrix>> = pass
                .out
                .param_ids
                .iter()
                .map(|id| id.and_then(|t| grads.get(t)))
                .collect();
            opt.step(model.param_entries_mut(), &grad_refs)?;
        }
        trace.epoch_losses.push(epoch_sum / set.graphs.len() as f64);
    }
    Ok(trace)
}

/// Expected node count below which another pooling stage stops paying off:
/// once a stage would leave fewer than three expected nodes, it is dropped
/// and the schedule ends.
pub const POOL_MIN_EXPECTED: f64 = 3.0;

/// Architecture heuristic from the dataset's average graph size: pooling
/// ratios descend 0.9, 0.8, … (never below 0.1) while the expected node
/// count stays at least [`POOL_MIN_EXPECTED`], and the embedding width is
/// the next power of two at or above the average node count, clamped to
/// [8, 1024].
pub fn suggest_config_for(mean_nodes: f64, feature_dim: usize) -> ModelConfig {
    let mut mid = Vec::new();
    let mut expected = mean_nodes;
    for step in 0..9 {
        let ratio = (9 - step) as f64 / 10.0;
        if expected * ratio < POOL_MIN_EXPECTED {
            break;
        }
        mid.push(ratio);
        expected *= ratio;
    }
    let mut pooling_ratios = Vec::with_capacity(mid.len() + 2);
    pooling_ratios.push(1.0);
    pooling_ratios.extend(&mid);
    pooling_ratios.push(1.0);

    let hidden = (mean_nodes.ceil().max(1.0) as usize).next_power_of_two().clamp(8, 1024);
    ModelConfig {
        input_dim: feature_dim.max(1),
        hidden_dim: hidden,
        depth: pooling_ratios.len(),
        pooling_ratios,
        skip_mode: SkipMode::Add,
        kernel: Kernel::Cross,
    }
}

pub fn suggest_config(set: &GraphSet) -> ModelConfig {
    suggest_config_for(set.mean_nodes(), set.feature_dim)
}
