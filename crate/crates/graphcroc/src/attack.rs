//! Downstream classification head on the frozen encoder and latent-space
//! adversarial attacks with decoder fine-tuning and edge-change accounting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::data::{split, DataError, Graph, GraphSet};
use crate::matrix::Matrix;
use crate::model::{predict_edges, GraphCrocModel, LatentCode, ModelError, ParamFilter};
use crate::train::{OptState, TrainError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("graph set has unlabeled graphs: {0}")]
    Unlabeled(String),
    #[error("bad attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

const HEAD_HIDDEN: usize = 64;

/// Mean-and-max readout over latent node rows followed by a three-layer MLP
/// ending in class logits.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub latent_dim: usize,
    pub num_classes: usize,
    w1: Matrix,
    b1: Matrix,
    w2: Matrix,
    b2: Matrix,
    w3: Matrix,
    b3: Matrix,
}

struct BoundHead {
    tensors: [Tensor; 6],
}

impl ClassifierHead {
    pub fn new(latent_dim: usize, num_classes: usize, seed: u64) -> Result<Self, AttackError> {
        if latent_dim == 0 || num_classes < 2 {
            return Err(AttackError::Config(format!(
                "head wants latent_dim > 0 and >= 2 classes, got {latent_dim} and {num_classes}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        Ok(ClassifierHead {
            latent_dim,
            num_classes,
            w1: xavier(2 * latent_dim, HEAD_HIDDEN),
            b1: Matrix::zeros(1, HEAD_HIDDEN),
            w2: xavier(HEAD_HIDDEN, HEAD_HIDDEN),
            b2: Matrix::zeros(1, HEAD_HIDDEN),
            w3: xavier(HEAD_HIDDEN, num_classes),
            b3: Matrix::zeros(1, num_classes),
        })
    }

    pub fn param_entries_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("head.w1".into(), &mut self.w1),
            ("head.b1".into(), &mut self.b1),
            ("head.w2".into(), &mut self.w2),
            ("head.b2".into(), &mut self.b2),
            ("head.w3".into(), &mut self.w3),
            ("head.b3".into(), &mut self.b3),
        ]
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        vec![
            self.w1.shape(),
            self.b1.shape(),
            self.w2.shape(),
            self.b2.shape(),
            self.w3.shape(),
            self.b3.shape(),
        ]
    }

    fn bind(&self, tape: &mut Tape, train: bool) -> BoundHead {
        let mut bind = |m: &Matrix| {
            if train {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        BoundHead {
            tensors: [
                bind(&self.w1),
                bind(&self.b1),
                bind(&self.w2),
                bind(&self.b2),
                bind(&self.w3),
                bind(&self.b3),
            ],
        }
    }

    /// Readout plus MLP on a latent tensor already on the tape. Returns the
    /// 1×C logits.
    fn forward(&self, tape: &mut Tape, z: Tensor, bound: &BoundHead) -> Tensor {
        let [w1, b1, w2, b2, w3, b3] = bound.tensors;
        let mean = tape.mean_rows(z);
        let max = tape.max_rows(z);
        let readout = tape.concat_cols(mean, max);
        let h1 = tape.matmul(readout, w1);
        let h1 = tape.add_row_broadcast(h1, b1);
        let h1 = tape.relu(h1);
        let h2 = tape.matmul(h1, w2);
        let h2 = tape.add_row_broadcast(h2, b2);
        let h2 = tape.relu(h2);
        let out = tape.matmul(h2, w3);
        tape.add_row_broadcast(out, b3)
    }

    /// Class logits for a detached latent matrix.
    pub fn logits_for(&self, z: &Matrix) -> Vec<f64> {
        let mut tape = Tape::new();
        let zt = tape.constant(z.clone());
        let bound = self.bind(&mut tape, false);
        let logits = self.forward(&mut tape, zt, &bound);
        tape.value(logits).row(0).to_vec()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of a graph through the frozen encoder and the head.
pub fn classify(model: &GraphCrocModel, head: &ClassifierHead, g: &Graph) -> Result<usize, AttackError> {
    let code = model.encode(g)?;
    Ok(argmax(&head.logits_for(&code.z)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierMode {
    /// Encoder frozen; only the head trains (the 10-epoch regime).
    Finetune,
    /// Encoder and head train together (the 100-epoch regime).
    Full,
}

#[derive(Debug, Clone)]
pub struct ClassifierReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Majority-class rate of the test split, the floor any useful
    /// classifier must beat.
    pub majority_rate: f64,
    pub epochs: usize,
}

fn require_labels(set: &GraphSet) -> Result<(), AttackError> {
    for g in &set.graphs {
        if g.label.is_none() {
            return Err(AttackError::Unlabeled(format!(
                "graph {} in {} has no label",
                g.id, set.name
            )));
        }
    }
    Ok(())
}

fn accuracy(model: &GraphCrocModel, head: &ClassifierHead, set: &GraphSet) -> Result<f64, AttackError> {
    if set.graphs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for g in &set.graphs {
        if classify(model, head, g)? == g.label.expect("labels checked upfront") {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.graphs.len() as f64)
}

fn majority_rate(set: &GraphSet) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for g in &set.graphs {
        *counts.entry(g.label.unwrap()).or_insert(0usize) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    top as f64 / set.graphs.len().max(1) as f64
}

/// Cross-entropy training of the classification head on latent codes, with
/// the encoder frozen or co-trained depending on `mode`. The set is split
/// 80/20 internally and test accuracy is reported alongside the majority
/// rate.
pub fn train_classifier(
    model: &mut GraphCrocModel,
    head: &mut ClassifierHead,
    set: &GraphSet,
    epochs: usize,
    mode: ClassifierMode,
    lr: f64,
    seed: u64,
) -> Result<ClassifierReport, AttackError> {
    require_labels(set)?;
    let (train_set, test_set) = split(set, 0.8, seed)?;

    let mut head_opt = OptState::new(&head.param_shapes(), lr);
    let mut enc_opt = OptState::for_model(model, lr);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // With a frozen encoder the latent codes never change, so compute them
    // once instead of once per epoch.
    let frozen_codes: Vec<LatentCode> = if mode == ClassifierMode::Finetune {
        train_set.graphs.iter().map(|g| model.encode(g)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..train_set.graphs.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let g = &train_set.graphs[idx];
            let y = g.label.unwrap();
            let mut tape = Tape::new();

            let (z, enc_ids) = match mode {
                ClassifierMode::Finetune => {
                    (tape.constant(frozen_codes[idx].z.clone()), Vec::new())
                }
                ClassifierMode::Full => {
                    let x = tape.constant(g.features.clone());
                    let a = tape.constant(g.adjacency.clone());
                    let enc = model.encode_on_tape(&mut tape, x, a, ParamFilter::All)?;
                    (enc.z, enc.param_ids)
                }
            };
            let bound = head.bind(&mut tape, true);
            let logits = head.forward(&mut tape, z, &bound);
            let loss = tape.cross_entropy(logits, y);
            let grads = tape.backward(loss);

            let head_grads: Vec<Option<&Matrix>> =
                bound.tensors.iter().map(|t| grads.get(*t)).collect();
            head_opt.step(head.param_entries_mut(), &head_grads)?;

            if mode == ClassifierMode::Full {
                let enc_grads: Vec<Option<&Matrix>> = enc_ids
                    .iter()
                    .map(|slot| slot.as_ref().and_then(|t| grads.get(*t)))
                    .collect();
                enc_opt.step(model.param_entries_mut(), &enc_grads)?;
            }
        }
    }

    Ok(ClassifierReport {
        train_accuracy: accuracy(model, head, &train_set)?,
        test_accuracy: accuracy(model, head, &test_set)?,
        majority_rate: majority_rate(&test_set),
        epochs,
    })
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// L1 budget on the latent perturbation.
    pub epsilon: f64,
    /// PGD step size, and the C&W descent rate.
    pub step_size: f64,
    pub steps: usize,
    /// Hard cap on forward passes through the head or encoder.
    pub query_budget: usize,
    /// C&W trade-off constant.
    pub c: f64,
    /// C&W confidence parameter.
    pub kappa: f64,
    /// Decoder fine-tuning steps spent per attack (0 disables it).
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 5.0,
            step_size: 0.05,
            steps: 40,
            query_budget: 400,
            c: 1.0,
            kappa: 0.0,
            finetune_steps: 20,
            finetune_lr: 1e-3,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(AttackError::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.steps == 0 || self.steps > self.query_budget {
            return Err(AttackError::Config(format!(
                "steps {} must be in 1..=query_budget ({})",
                self.steps, self.query_budget
            )));
        }
        if self.step_size <= 0.0 {
            return Err(AttackError::Config("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Forward-pass accounting, split by what was queried.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuerySplit {
    /// Encoder passes: the initial encoding plus fine-tuning distances.
    pub encoder: usize,
    /// Head passes during the attack iterations.
    pub head: usize,
    /// Final success evaluation (re-encode plus classify).
    pub evaluation: usize,
}

impl QuerySplit {
    pub fn total(&self) -> usize {
        self.encoder + self.head + self.evaluation
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub success: bool,
    /// The reconstructed adversarial adjacency.
    pub adversarial: Matrix,
    /// Fraction of edge slots that changed.
    pub delta_edge: f64,
    pub queries: QuerySplit,
    /// L1 norm of the final latent perturbation.
    pub perturbation_l1: f64,
    /// Label the classifier assigns to the adversarial graph.
    pub adversarial_label: usize,
}

/// Exact Euclidean projection onto the L1 ball of radius `eps`, by the
/// sort-and-threshold simplex reduction. Vectors already inside the ball
/// pass through untouched.
pub fn project_l1(v: &mut Matrix, eps: f64) {
    assert!(eps >= 0.0, "L1 radius must be nonnegative");
    let norm: f64 = v.as_slice().iter().map(|x| x.abs()).sum();
    if norm <= eps {
        return;
    }
    if eps == 0.0 {
        for x in v.as_mut_slice() {
            *x = 0.0;
        }
        return;
    }
    let mut mags: Vec<f64> = v.as_slice().iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite perturbations"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - eps) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.as_mut_slice() {
        let shrunk = (x.abs() - theta).max(0.0);
        *x = x.signum() * shrunk;
    }
}

/// Mirror the upper triangle (diagonal kept) onto the lower one, giving the
/// symmetric adjacency an undirected graph requires.
fn symmetrize(pred: &Matrix) -> Matrix {
    let n = pred.rows();
    let mut out = pred.clone();
    for i in 0..n {
        for j in 0..i {
            out.set(i, j, pred.get(j, i));
        }
    }
    out
}

/// Fraction of changed edge slots between two binary adjacencies. Undirected
/// graphs count each unordered off-diagonal pair once; directed graphs count
/// every ordered off-diagonal pair. Self-loops are not edge slots here.
pub fn delta_edge(a: &Matrix, a_adv: &Matrix, directed: bool) -> f64 {
    assert_eq!(a.shape(), a_adv.shape(), "delta_edge wants equal shapes");
    let n = a.rows();
    if n < 2 {
        return 0.0;
    }
    let mut changed = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        let lo = if directed { 0 } else { i + 1 };
        for j in lo..n {
            if i == j {
                continue;
            }
            total += 1;
            if a.get(i, j) != a_adv.get(i, j) {
                changed += 1;
            }
        }
    }
    changed as f64 / total as f64
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub distance_before: f64,
    pub distance_after: f64,
    /// Encoder passes consumed (one per distance evaluation).
    pub encoder_queries: usize,
}

/// One evaluation of ‖z_target − Φ(X, soft-decode(z_target))‖ plus the
/// gradient step on decoder parameters when an optimizer is supplied.
fn finetune_step(
    model: &mut GraphCrocModel,
    code: &LatentCode,
    features: &Matrix,
    opt: Option<&mut OptState>,
) -> Result<f64, AttackError> {
    let mut tape = Tape::new();
    let (z, records, final_a) = model.bind_latent(&mut tape, code);
    let dec = model.decode_on_tape(&mut tape, z, &records, final_a, ParamFilter::DecoderOnly);
    // The hard indicator is non-differentiable, so the encoder reads the
    // sigmoid of the logits as a soft weighted adjacency.
    let soft_a = tape.sigmoid(dec.logits);
    let x = tape.constant(features.clone());
    let enc = model.encode_on_tape(&mut tape, x, soft_a, ParamFilter::Frozen)?;
    let diff = tape.sub(z, enc.z);
    let sq = tape.mul(diff, diff);
    let objective = tape.sum(sq);
    let distance = tape.scalar(objective).sqrt();

    if let Some(opt) = opt {
        let grads = tape.backward(objective);
        let grad_refs: Vec<Option<&Matrix>> = dec
            .param_ids
            .iter()
            .map(|slot| slot.as_ref().and_then(|t| grads.get(*t)))
            .collect();
        opt.step(model.param_entries_mut(), &grad_refs)?;
    }
    Ok(distance)
}

/// Fine-tune the decoder so the graph it reconstructs from `code` re-encodes
/// close to `code` itself. Returns the distance before and after; `steps` 0
/// only measures.
pub fn finetune_reconstructor(
    model: &mut GraphCrocModel,
    code: &LatentCode,
    features: &Matrix,
    steps: usize,
    lr: f64,
) -> Result<FinetuneReport, AttackError> {
    let mut opt = OptState::for_model(model, lr);
    let mut distance_before = None;
    let mut last = 0.0;
    for _ in 0..steps {
        let d = finetune_step(model, code, features, Some(&mut opt))?;
        if distance_before.is_none() {
            distance_before = Some(d);
        }
        last = d;
    }
    let (before, after, queries) = match distance_before {
        // Measure once more to see the effect of the final step.
        Some(b) => (b, finetune_step(model, code, features, None)?, steps + 1),
        None => {
            let d = finetune_step(model, code, features, None)?;
            (d, d, 1)
        }
    };
    let _ = last;
    Ok(FinetuneReport { distance_before: before, distance_after: after, encoder_queries: queries })
}

/// Reconstruct the adversarial graph from a perturbed latent, evaluate the
/// classifier on its re-encoding, and assemble the result record.
fn finish_attack(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    g: &Graph,
    code: &LatentCode,
    delta: &Matrix,
    cfg: &AttackConfig,
    mut queries: QuerySplit,
) -> Result<AttackResult, AttackError> {
    let y = g.label.ok_or_else(|| {
        AttackError::Unlabeled(format!("graph {} carries no label to attack", g.id))
    })?;

    let mut perturbed = code.clone();
    perturbed.z.add_assign(delta);

    // Decoder fine-tuning operates on a private copy so parallel attacks
    // never share mutable state.
    let adversarial_logits = if cfg.finetune_steps > 0 {
        let mut owned = model.clone();
        let report = finetune_reconstructor(
            &mut owned,
            &perturbed,
            &g.features,
            cfg.finetune_steps,
            cfg.finetune_lr,
        )?;
        queries.encoder += report.encoder_queries;
        owned.decode_latent(&perturbed)
    } else {
        model.decode_latent(&perturbed)
    };

    let mut a_adv = predict_edges(&adversarial_logits, 0.5)?;
    if !g.directed {
        a_adv = symmetrize(&a_adv);
    }
    let g_adv = Graph::new(g.id, g.features.clone(), a_adv.clone(), g.directed, g.label)?;
    debug_assert_eq!(g_adv.features.as_slice(), g.features.as_slice());

    let adv_code = model.encode(&g_adv)?;
    let adversarial_label = argmax(&head.logits_for(&adv_code.z));
    queries.evaluation += 2;

    Ok(AttackResult {
        success: adversarial_label != y,
        delta_edge: delta_edge(&g.adjacency, &a_adv, g.directed),
        adversarial: a_adv,
        queries,
        perturbation_l1: delta.l1_norm(),
        adversarial_label,
    })
}

/// How many attack iterations the query budget leaves after reserving the
/// initial encoding, fine-tuning, and the final evaluation.
fn budgeted_steps(cfg: &AttackConfig) -> usize {
    let reserved = 1 + cfg.finetune_steps + 1 + 2;
    cfg.steps.min(cfg.query_budget.saturating_sub(reserved))
}

/// Projected gradient ascent on the classification loss over the latent
/// code, followed by reconstruction and re-encoded evaluation.
pub fn pgd_latent(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    g: &Graph,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    let y = g.label.ok_or_else(|| {
        AttackError::Unlabeled(format!("graph {} carries no label to attack", g.id))
    })?;

    let code = model.encode(g)?;
    let mut queries = QuerySplit { encoder: 1, ..QuerySplit::default() };
    let mut delta = Matrix::zeros(code.z.rows(), code.z.cols());

    for _ in 0..budgeted_steps(cfg) {
        let mut tape = Tape::new();
        let mut z_pert = code.z.clone();
        z_pert.add_assign(&delta);
        let z_leaf = tape.leaf(z_pert);
        let bound = head.bind(&mut tape, false);
        let logits = head.forward(&mut tape, z_leaf, &bound);
        let loss = tape.cross_entropy(logits, y);
        let grads = tape.backward(loss);
        queries.head += 1;

        let g_z = grads.get_or_zeros(z_leaf);
        for (d, g) in delta.as_mut_slice().iter_mut().zip(g_z.as_slice()) {
            *d += cfg.step_size * g.signum();
        }
        project_l1(&mut delta, cfg.epsilon);
        debug_assert!(delta.l1_norm() <= cfg.epsilon + 1e-9);
    }

    finish_attack(model, head, g, &code, &delta, cfg, queries)
}

/// Norm-plus-margin descent over the latent perturbation (fixed trade-off
/// constant, no binary search), same accounting as PGD.
pub fn cw_latent(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    g: &Graph,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    let y = g.label.ok_or_else(|| {
        AttackError::Unlabeled(format!("graph {} carries no label to attack", g.id))
    })?;

    let code = model.encode(g)?;
    let mut queries = QuerySplit { encoder: 1, ..QuerySplit::default() };
    let mut delta = Matrix::zeros(code.z.rows(), code.z.cols());

    for _ in 0..budgeted_steps(cfg) {
        let mut tape = Tape::new();
        let delta_leaf = tape.leaf(delta.clone());
        let z_const = tape.constant(code.z.clone());
        let z_pert = tape.add(z_const, delta_leaf);
        let bound = head.bind(&mut tape, false);
        let logits = head.forward(&mut tape, z_pert, &bound);
        let norm = tape.l1_norm(delta_leaf);
        let margin = tape.cw_margin(logits, y, cfg.kappa);
        let margin_scaled = tape.scale(margin, cfg.c);
        let objective = tape.add(norm, margin_scaled);
        let grads = tape.backward(objective);
        queries.head += 1;

        let g_d = grads.get_or_zeros(delta_leaf);
        for (d, g) in delta.as_mut_slice().iter_mut().zip(g_d.as_slice()) {
            *d -= cfg.step_size * g;
        }
    }

    finish_attack(model, head, g, &code, &delta, cfg, queries)
}

/// Uniform random perturbation scaled to the same L1 radius, the baseline
/// the gradient attacks must beat.
pub fn random_latent(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    g: &Graph,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    let code = model.encode(g)?;
    let queries = QuerySplit { encoder: 1, ..QuerySplit::default() };

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ g.id as u64);
    let mut delta = Matrix::zeros(code.z.rows(), code.z.cols());
    if cfg.epsilon > 0.0 {
        for d in delta.as_mut_slice() {
            *d = rng.gen_range(-1.0..1.0);
        }
        let norm = delta.l1_norm();
        if norm > 0.0 {
            let scale = cfg.epsilon / norm;
            for d in delta.as_mut_slice() {
                *d *= scale;
            }
        }
    }

    finish_attack(model, head, g, &code, &delta, cfg, queries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMethod {
    Random,
    Pgd,
    Cw,
}

impl AttackMethod {
    pub fn parse(s: &str) -> Option<AttackMethod> {
        match s {
            "random" => Some(AttackMethod::Random),
            "pgd" => Some(AttackMethod::Pgd),
            "cw" => Some(AttackMethod::Cw),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::Random => "random",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Cw => "cw",
        }
    }
}

pub fn run_attack(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    g: &Graph,
    method: AttackMethod,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    match method {
        AttackMethod::Random => random_latent(model, head, g, cfg),
        AttackMethod::Pgd => pgd_latent(model, head, g, cfg),
        AttackMethod::Cw => cw_latent(model, head, g, cfg),
    }
}

/// Attack every graph in the set with one method, fanning graphs across
/// `workers` threads. Results follow set order, so thread count never
/// changes the output.
pub fn attack_set(
    model: &GraphCrocModel,
    head: &ClassifierHead,
    set: &GraphSet,
    method: AttackMethod,
    cfg: &AttackConfig,
    workers: usize,
) -> Result<Vec<AttackResult>, AttackError> {
    require_labels(set)?;
    cfg.validate()?;
    let workers = workers.clamp(1, set.graphs.len().max(1));
    if workers <= 1 {
        return set
            .graphs
            .iter()
            .map(|g| run_attack(model, head, g, method, cfg))
            .collect();
    }
    let chunk = set.graphs.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<AttackResult, AttackError>>> = Vec::new();
    slots.resize_with(set.graphs.len(), || None);
    std::thread::scope(|scope| {
        for (graphs, out) in set.graphs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (g, slot) in graphs.iter().zip(out.iter_mut()) {
                    *slot = Some(run_attack(model, head, g, method, cfg));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every chunk slot is written")).collect()
}
