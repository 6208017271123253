//! The full autoencoder: a GCN encoder that pools the graph down to a small
//! latent resolution, two structurally identical decoder branches that unpool
//! back up with skip connections, and an interchangeable scoring kernel that
//! turns the branch outputs into edge logits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::layers::{
    gcn_block, normalize_adjacency, normalize_adjacency_tape, pool_keep_count, topk_pool, unpool,
    GcnParams, PoolRecord, SkipMode,
};
use crate::data::Graph;
use crate::matrix::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Edge-scoring kernel applied to the decoder outputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// logit(i, j) = p_i · q_j, from two independent branches.
    Cross,
    /// logit(i, j) = z_i · z_j from a single branch; always symmetric.
    #[serde(rename = "self")]
    SelfCorr,
    /// logit(i, j) = c · (1 - ‖p_i - q_j‖²) with a fixed temperature.
    L2Fixed { c: f64 },
    /// logit(i, j) = w · ‖p_i - q_j‖² + b with trainable scalars.
    L2Learnable,
}

impl Kernel {
    pub fn parse(s: &str) -> Option<Kernel> {
        match s {
            "cross" => Some(Kernel::Cross),
            "self" => Some(Kernel::SelfCorr),
            "l2" | "l2_fixed" => Some(Kernel::L2Fixed { c: 1.0 }),
            "l2_learnable" => Some(Kernel::L2Learnable),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Cross => "cross",
            Kernel::SelfCorr => "self",
            Kernel::L2Fixed { .. } => "l2_fixed",
            Kernel::L2Learnable => "l2_learnable",
        }
    }

    /// Whether the kernel reads a second decoder branch.
    pub fn uses_q(&self) -> bool {
        !matches!(self, Kernel::SelfCorr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    /// One ratio per layer; 1.0 means the layer does not pool.
    pub pooling_ratios: Vec<f64>,
    pub skip_mode: SkipMode,
    pub kernel: Kernel,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return fail("input_dim and hidden_dim must be positive".into());
        }
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.pooling_ratios.len() != self.depth {
            return fail(format!(
                "expected {} pooling ratios, got {}",
                self.depth,
                self.pooling_ratios.len()
            ));
        }
        for (i, &r) in self.pooling_ratios.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return fail(format!("pooling ratio {r} at layer {} outside (0, 1]", i + 1));
            }
        }
        if self.pooling_ratios[0] != 1.0 || self.pooling_ratios[self.depth - 1] != 1.0 {
            return fail("first and last layers must not pool (ratio 1.0)".into());
        }
        if self.skip_mode == SkipMode::None {
            return fail("skip_mode must be add or concat".into());
        }
        Ok(())
    }

    /// Node count left after running all pooling layers on an n-node graph.
    pub fn latent_node_count(&self, n: usize) -> usize {
        let mut m = n;
        for &r in &self.pooling_ratios {
            if r < 1.0 {
                m = pool_keep_count(m, r);
            }
        }
        m
    }
}

/// Add-skips only make sense when input and output widths agree; the
/// width-changing first layer silently falls back to no skip.
fn effective_skip(mode: SkipMode, d_in: usize, d_out: usize) -> SkipMode {
    match mode {
        SkipMode::Add if d_in != d_out => SkipMode::None,
        m => m,
    }
}

/// The last decoder block never concatenates: appending raw skip lanes to
/// the branch output would leak unweighted inputs straight into the edge
/// scores (their pairwise products could not even change sign). It merges
/// additively when widths allow and plainly otherwise, so each branch ends
/// at exactly hidden_dim columns.
fn final_decoder_skip(d_in: usize, d_out: usize) -> SkipMode {
    if d_in == d_out {
        SkipMode::Add
    } else {
        SkipMode::None
    }
}

struct LayerPlan {
    d_in: usize,
    width_out: usize,
    pooled: bool,
}

struct DimPlan {
    enc: Vec<LayerPlan>,
    dec: Vec<LayerPlan>,
}

/// Walk the config once and work out every layer's input width, output
/// width, and whether it pools, for the encoder and the (shared) decoder
/// branch shape. Concat skips widen the flow, so this cannot be read off
/// the config directly.
fn plan_dims(cfg: &ModelConfig) -> DimPlan {
    let h = cfg.hidden_dim;
    let mut enc = Vec::with_capacity(cfg.depth);
    let mut cur = cfg.input_dim;
    for &ratio in &cfg.pooling_ratios {
        let skip = effective_skip(cfg.skip_mode, cur, h);
        let width_out = skip.output_dim(cur, h);
        enc.push(LayerPlan { d_in: cur, width_out, pooled: ratio < 1.0 });
        cur = width_out;
    }
    let mut dec = Vec::with_capacity(cfg.depth);
    for j in 0..cfg.depth {
        let i = cfg.depth - 1 - j;
        let pooled = enc[i].pooled;
        if pooled && cfg.skip_mode == SkipMode::Concat {
            cur += enc[i].width_out;
        }
        let skip = if j == cfg.depth - 1 {
            final_decoder_skip(cur, h)
        } else {
            effective_skip(cfg.skip_mode, cur, h)
        };
        let width_out = skip.output_dim(cur, h);
        dec.push(LayerPlan { d_in: cur, width_out, pooled });
        cur = width_out;
    }
    DimPlan { enc, dec }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub w: Matrix,
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
    /// Projection vector for top-k pooling; present iff the layer pools.
    pub pool_p: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub w: Matrix,
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
}

/// Trainable scalars for the learnable L2 kernel.
#[derive(Clone, Debug)]
pub struct KernelParams {
    pub w: Matrix,
    pub b: Matrix,
}

#[derive(Clone, Debug)]
pub struct GraphCrocModel {
    pub config: ModelConfig,
    pub encoder: Vec<EncoderLayer>,
    pub decoder_p: Vec<DecoderLayer>,
    /// Second branch; empty under the self kernel, which decodes with P only.
    pub decoder_q: Vec<DecoderLayer>,
    pub kernel_params: Option<KernelParams>,
}

fn xavier(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

impl GraphCrocModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<GraphCrocModel, ModelError> {
        config.validate()?;
        let plan = plan_dims(&config);
        let h = config.hidden_dim;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);

        let encoder = plan
            .enc
            .iter()
            .map(|lp| EncoderLayer {
                w: xavier(&mut rng, lp.d_in, h),
                ln_gain: Matrix::filled(1, h, 1.0),
                ln_bias: Matrix::zeros(1, h),
                pool_p: lp.pooled.then(|| xavier(&mut rng, lp.width_out, 1)),
            })
            .collect();
        let branch = |plan: &[LayerPlan], rng: &mut ChaCha20Rng| -> Vec<DecoderLayer> {
            plan.iter()
                .map(|lp| DecoderLayer {
                    w: xavier(rng, lp.d_in, h),
                    ln_gain: Matrix::filled(1, h, 1.0),
                    ln_bias: Matrix::zeros(1, h),
                })
                .collect()
        };
        let decoder_p = branch(&plan.dec, &mut rng);
        let decoder_q =
            if config.kernel.uses_q() { branch(&plan.dec, &mut rng) } else { Vec::new() };
        let kernel_params = matches!(config.kernel, Kernel::L2Learnable).then(|| KernelParams {
            w: Matrix::filled(1, 1, -1.0),
            b: Matrix::filled(1, 1, 1.0),
        });

        Ok(GraphCrocModel { config, encoder, decoder_p, decoder_q, kernel_params })
    }

    /// Named parameters in a fixed visit order (encoder, branch P, branch Q,
    /// kernel scalars). The optimizer and the checkpoint format both rely on
    /// this order being stable.
    pub fn param_entries(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            let k = i + 1;
            out.push((format!("enc{k}.w"), &l.w));
            out.push((format!("enc{k}.ln_gain"), &l.ln_gain));
            out.push((format!("enc{k}.ln_bias"), &l.ln_bias));
            if let Some(p) = &l.pool_p {
                out.push((format!("enc{k}.pool_p"), p));
            }
        }
        for (name, branch) in [("decP", &self.decoder_p), ("decQ", &self.decoder_q)] {
            for (i, l) in branch.iter().enumerate() {
                let k = i + 1;
                out.push((format!("{name}{k}.w"), &l.w));
                out.push((format!("{name}{k}.ln_gain"), &l.ln_gain));
                out.push((format!("{name}{k}.ln_bias"), &l.ln_bias));
            }
        }
        if let Some(kp) = &self.kernel_params {
            out.push(("kernel.w".into(), &kp.w));
            out.push(("kernel.b".into(), &kp.b));
        }
        out
    }

    /// Mutable view over the same parameters, in the same order as
    /// [`param_entries`](Self::param_entries).
    pub fn param_entries_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            let k = i + 1;
            out.push((format!("enc{k}.w"), &mut l.w));
            out.push((format!("enc{k}.ln_gain"), &mut l.ln_gain));
            out.push((format!("enc{k}.ln_bias"), &mut l.ln_bias));
            if let Some(p) = &mut l.pool_p {
                out.push((format!("enc{k}.pool_p"), p));
            }
        }
        for (name, branch) in
            [("decP", &mut self.decoder_p), ("decQ", &mut self.decoder_q)]
        {
            for (i, l) in branch.iter_mut().enumerate() {
                let k = i + 1;
                out.push((format!("{name}{k}.w"), &mut l.w));
                out.push((format!("{name}{k}.ln_gain"), &mut l.ln_gain));
                out.push((format!("{name}{k}.ln_bias"), &mut l.ln_bias));
            }
        }
        if let Some(kp) = &mut self.kernel_params {
            out.push(("kernel.w".into(), &mut kp.w));
            out.push(("kernel.b".into(), &mut kp.b));
        }
        out
    }
}

/// Which parameters become differentiable leaves on a forward tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamFilter {
    /// Everything trains.
    All,
    /// Everything is constant (evaluation).
    Frozen,
    /// Encoder stays constant; decoder branches and kernel scalars train.
    DecoderOnly,
}

struct BoundEncoderLayer {
    gcn: GcnParams,
    pool_p: Option<Tensor>,
}

/// Tape handles for one full forward pass. `param_ids` is aligned with
/// [`GraphCrocModel::param_entries`]; slots are `None` when the pass never
/// put that parameter on the tape (decoder-only passes skip the encoder).
pub struct ForwardOut {
    pub z: Tensor,
    pub p: Tensor,
    pub q: Tensor,
    pub logits: Tensor,
    pub records: Vec<PoolRecord>,
    pub final_a: Tensor,
    pub param_ids: Vec<Option<Tensor>>,
    pub encoder_node_counts: Vec<usize>,
    pub decoder_node_counts: Vec<usize>,
}

/// Tape handles for a decode-only pass (latent experiments).
pub struct DecodeOut {
    pub p: Tensor,
    pub q: Tensor,
    pub logits: Tensor,
    pub param_ids: Vec<Option<Tensor>>,
}

/// Tape handles for an encode-only pass.
pub struct EncodeOut {
    pub z: Tensor,
    pub records: Vec<PoolRecord>,
    pub final_a: Tensor,
    pub param_ids: Vec<Option<Tensor>>,
    pub node_counts: Vec<usize>,
}

/// A full forward pass bundled with the tape that produced it.
pub struct ForwardPass {
    pub tape: Tape,
    pub out: ForwardOut,
}

/// Pooling bookkeeping with plain values, detached from any tape.
#[derive(Clone, Debug)]
pub struct PlainPoolRecord {
    pub kept_idx: Vec<usize>,
    pub gate: Matrix,
    pub a_prev: Matrix,
    pub h_prev: Matrix,
    pub n_prev: usize,
}

/// Encoder output plus everything the decoder needs to climb back to full
/// resolution: one record per pooled layer (encoder order) and the pooled
/// adjacency at the latent resolution.
#[derive(Clone, Debug)]
pub struct LatentCode {
    pub z: Matrix,
    pub records: Vec<PlainPoolRecord>,
    pub final_a: Matrix,
}

impl LatentCode {
    /// Node count of the graph that produced this code.
    pub fn original_n(&self) -> usize {
        self.records.first().map_or(self.z.rows(), |r| r.n_prev)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    P,
    Q,
}

/// Remembers normalized adjacencies by the raw tensor that produced them,
/// so the decoder (and the second branch) reuse the encoder's work.
struct NormCache {
    entries: Vec<(usize, Tensor)>,
}

impl NormCache {
    fn new() -> NormCache {
        NormCache { entries: Vec::new() }
    }

    fn get(&mut self, tape: &mut Tape, a: Tensor) -> Tensor {
        if let Some(&(_, t)) = self.entries.iter().find(|(id, _)| *id == a.id()) {
            return t;
        }
        // Only build the differentiable normalization when gradients
        // actually flow into the adjacency (soft graphs).
        let normed = if tape.requires_grad(a) {
            normalize_adjacency_tape(tape, a)
        } else {
            let plain = normalize_adjacency(tape.value(a));
            tape.constant(plain)
        };
        self.entries.push((a.id(), normed));
        normed
    }
}

impl GraphCrocModel {
    fn bind_matrix(tape: &mut Tape, m: &Matrix, train: bool) -> Tensor {
        if train {
            tape.leaf(m.clone())
        } else {
            tape.constant(m.clone())
        }
    }

    fn bind_encoder(&self, tape: &mut Tape, train: bool, ids: &mut Vec<Option<Tensor>>) -> Vec<BoundEncoderLayer> {
        self.encoder
            .iter()
            .map(|l| {
                let w = Self::bind_matrix(tape, &l.w, train);
                let ln_gain = Self::bind_matrix(tape, &l.ln_gain, train);
                let ln_bias = Self::bind_matrix(tape, &l.ln_bias, train);
                ids.extend([Some(w), Some(ln_gain), Some(ln_bias)]);
                let pool_p = l.pool_p.as_ref().map(|p| {
                    let t = Self::bind_matrix(tape, p, train);
                    ids.push(Some(t));
                    t
                });
                BoundEncoderLayer { gcn: GcnParams { w, ln_gain, ln_bias }, pool_p }
            })
            .collect()
    }

    fn bind_branch(
        branch: &[DecoderLayer],
        tape: &mut Tape,
        train: bool,
        ids: &mut Vec<Option<Tensor>>,
    ) -> Vec<GcnParams> {
        branch
            .iter()
            .map(|l| {
                let w = Self::bind_matrix(tape, &l.w, train);
                let ln_gain = Self::bind_matrix(tape, &l.ln_gain, train);
                let ln_bias = Self::bind_matrix(tape, &l.ln_bias, train);
                ids.extend([Some(w), Some(ln_gain), Some(ln_bias)]);
                GcnParams { w, ln_gain, ln_bias }
            })
            .collect()
    }

    fn bind_kernel(
        &self,
        tape: &mut Tape,
        train: bool,
        ids: &mut Vec<Option<Tensor>>,
    ) -> Option<(Tensor, Tensor)> {
        self.kernel_params.as_ref().map(|kp| {
            let w = Self::bind_matrix(tape, &kp.w, train);
            let b = Self::bind_matrix(tape, &kp.b, train);
            ids.extend([Some(w), Some(b)]);
            (w, b)
        })
    }

    fn run_encoder(
        &self,
        tape: &mut Tape,
        x: Tensor,
        a: Tensor,
        bound: &[BoundEncoderLayer],
        cache: &mut NormCache,
    ) -> (Tensor, Vec<PoolRecord>, Tensor, Vec<usize>) {
        let mut h = x;
        let mut a_cur = a;
        let mut records = Vec::new();
        let mut node_counts = Vec::with_capacity(self.config.depth);
        for (layer, &ratio) in bound.iter().zip(&self.config.pooling_ratios) {
            node_counts.push(h.rows());
            let a_norm = cache.get(tape, a_cur);
            let skip = effective_skip(self.config.skip_mode, h.cols(), self.config.hidden_dim);
            h = gcn_block(tape, h, a_norm, &layer.gcn, skip);
            if ratio < 1.0 {
                let p = layer.pool_p.expect("pooled layer is missing its projection");
                let (h2, a2, rec) = topk_pool(tape, h, a_cur, ratio, p);
                h = h2;
                a_cur = a2;
                records.push(rec);
            }
        }
        (h, records, a_cur, node_counts)
    }

    fn run_decoder(
        &self,
        tape: &mut Tape,
        z: Tensor,
        records: &[PoolRecord],
        final_a: Tensor,
        branch: &[GcnParams],
        cache: &mut NormCache,
    ) -> (Tensor, Vec<usize>) {
        let l = self.config.depth;
        let mut h = z;
        let mut a_cur = final_a;
        let mut next_record = records.len();
        let mut node_counts = Vec::with_capacity(l);
        for (j, params) in branch.iter().enumerate() {
            let i = l - 1 - j;
            if self.config.pooling_ratios[i] < 1.0 {
                next_record = next_record
                    .checked_sub(1)
                    .expect("more pooled layers than pool records");
                let rec = &records[next_record];
                let (restored, a_prev) = unpool(tape, h, rec);
                a_cur = a_prev;
                h = match self.config.skip_mode {
                    SkipMode::Concat => tape.concat_cols(restored, rec.h_prev),
                    _ => {
                        assert_eq!(
                            restored.cols(),
                            rec.h_prev.cols(),
                            "skip tensor width mismatch at decoder layer {}",
                            j + 1
                        );
                        tape.add(restored, rec.h_prev)
                    }
                };
            }
            node_counts.push(h.rows());
            let a_norm = cache.get(tape, a_cur);
            let skip = if j == l - 1 {
                final_decoder_skip(h.cols(), self.config.hidden_dim)
            } else {
                effective_skip(self.config.skip_mode, h.cols(), self.config.hidden_dim)
            };
            h = gcn_block(tape, h, a_norm, params, skip);
        }
        assert_eq!(next_record, 0, "decoder consumed {next_record} too few pool records");
        (h, node_counts)
    }

    fn kernel_logits(
        &self,
        tape: &mut Tape,
        p: Tensor,
        q: Tensor,
        kernel_scalars: Option<(Tensor, Tensor)>,
    ) -> Tensor {
        match self.config.kernel {
            Kernel::Cross => tape.matmul_nt(p, q),
            Kernel::SelfCorr => tape.matmul_nt(p, p),
            Kernel::L2Fixed { c } => {
                let d = tape.pairwise_sqdist(p, q);
                // c·(1 - d) as one affine op.
                tape.affine(d, -c, c)
            }
            Kernel::L2Learnable => {
                let (w, b) = kernel_scalars.expect("learnable kernel is missing its scalars");
                let d = tape.pairwise_sqdist(p, q);
                let wd = tape.mul_scalar(d, w);
                tape.add_scalar(wd, b)
            }
        }
    }

    /// Forward pass on an existing tape. `x` and `a` are the node features
    /// and the raw adjacency; `a` may carry gradients (soft graphs), in
    /// which case the adjacency normalization is built on-tape.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: Tensor,
        a: Tensor,
        filter: ParamFilter,
    ) -> Result<ForwardOut, ModelError> {
        if x.cols() != self.config.input_dim {
            return Err(ModelError::Config(format!(
                "graph has {} feature columns but the model expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        let enc_train = matches!(filter, ParamFilter::All);
        let dec_train = matches!(filter, ParamFilter::All | ParamFilter::DecoderOnly);

        let mut ids = Vec::new();
        let enc = self.bind_encoder(tape, enc_train, &mut ids);
        let branch_p = Self::bind_branch(&self.decoder_p, tape, dec_train, &mut ids);
        let branch_q = Self::bind_branch(&self.decoder_q, tape, dec_train, &mut ids);
        let kernel_scalars = self.bind_kernel(tape, dec_train, &mut ids);

        let mut cache = NormCache::new();
        let (z, records, final_a, enc_counts) = self.run_encoder(tape, x, a, &enc, &mut cache);
        let (p, dec_counts) = self.run_decoder(tape, z, &records, final_a, &branch_p, &mut cache);
        let q = if self.config.kernel.uses_q() {
            let (q, q_counts) = self.run_decoder(tape, z, &records, final_a, &branch_q, &mut cache);
            debug_assert_eq!(q_counts, dec_counts);
            q
        } else {
            p
        };
        let reversed: Vec<usize> = enc_counts.iter().rev().copied().collect();
        assert_eq!(dec_counts, reversed, "decoder resolutions must mirror the encoder");
        let logits = self.kernel_logits(tape, p, q, kernel_scalars);

        Ok(ForwardOut {
            z,
            p,
            q,
            logits,
            records,
            final_a,
            param_ids: ids,
            encoder_node_counts: enc_counts,
            decoder_node_counts: dec_counts,
        })
    }

    /// Convenience forward over a stored graph: fresh tape, features and
    /// adjacency as constants.
    pub fn forward_graph(&self, g: &Graph, filter: ParamFilter) -> Result<ForwardPass, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(g.features.clone());
        let a = tape.constant(g.adjacency.clone());
        let out = self.forward_on_tape(&mut tape, x, a, filter)?;
        Ok(ForwardPass { tape, out })
    }

    /// Encoder only; the returned code is detached from any tape.
    pub fn encode(&self, g: &Graph) -> Result<LatentCode, ModelError> {
        let pass = self.forward_graph(g, ParamFilter::Frozen)?;
        let tape = &pass.tape;
        let records = pass
            .out
            .records
            .iter()
            .map(|r| PlainPoolRecord {
                kept_idx: r.kept_idx.clone(),
                gate: tape.value(r.gate).clone(),
                a_prev: tape.value(r.a_prev).clone(),
                h_prev: tape.value(r.h_prev).clone(),
                n_prev: r.n_prev,
            })
            .collect();
        Ok(LatentCode {
            z: tape.value(pass.out.z).clone(),
            records,
            final_a: tape.value(pass.out.final_a).clone(),
        })
    }

    /// Encoder half on an existing tape, for callers that consume the latent
    /// directly (classification heads, latent-distance objectives). The
    /// adjacency may be a soft weighted matrix mid-tape. Slots for decoder
    /// and kernel parameters are padded with `None` so `param_ids` still
    /// lines up with [`param_entries`](Self::param_entries).
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        x: Tensor,
        a: Tensor,
        filter: ParamFilter,
    ) -> Result<EncodeOut, ModelError> {
        if x.cols() != self.config.input_dim {
            return Err(ModelError::Config(format!(
                "graph has {} feature columns but the model expects {}",
                x.cols(),
                self.config.input_dim
            )));
        }
        let enc_train = matches!(filter, ParamFilter::All);
        let mut ids = Vec::new();
        let enc = self.bind_encoder(tape, enc_train, &mut ids);
        let decoder_slots = 3 * (self.decoder_p.len() + self.decoder_q.len())
            + if self.kernel_params.is_some() { 2 } else { 0 };
        ids.extend(std::iter::repeat_with(|| None).take(decoder_slots));

        let mut cache = NormCache::new();
        let (z, records, final_a, node_counts) = self.run_encoder(tape, x, a, &enc, &mut cache);
        Ok(EncodeOut { z, records, final_a, param_ids: ids, node_counts })
    }

    /// Put a detached latent code back on a tape as constants. Returns the
    /// `z` tensor separately so callers can swap in a perturbed version.
    pub fn bind_latent(
        &self,
        tape: &mut Tape,
        code: &LatentCode,
    ) -> (Tensor, Vec<PoolRecord>, Tensor) {
        let z = tape.constant(code.z.clone());
        let records = code
            .records
            .iter()
            .map(|r| PoolRecord {
                kept_idx: r.kept_idx.clone(),
                gate: tape.constant(r.gate.clone()),
                a_prev: tape.constant(r.a_prev.clone()),
                h_prev: tape.constant(r.h_prev.clone()),
                n_prev: r.n_prev,
            })
            .collect();
        let final_a = tape.constant(code.final_a.clone());
        (z, records, final_a)
    }

    /// Decode from a latent tensor already on the tape (typically a
    /// perturbed `z`). Pool records and the latent adjacency come from
    /// [`bind_latent`](Self::bind_latent).
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape,
        z: Tensor,
        records: &[PoolRecord],
        final_a: Tensor,
        filter: ParamFilter,
    ) -> DecodeOut {
        let dec_train = matches!(filter, ParamFilter::All | ParamFilter::DecoderOnly);
        // Encoder parameters never enter a decode-only tape; keep the slots
        // so indices still line up with param_entries.
        let mut ids: Vec<Option<Tensor>> = Vec::new();
        for l in &self.encoder {
            ids.extend([None, None, None]);
            if l.pool_p.is_some() {
                ids.push(None);
            }
        }
        let branch_p = Self::bind_branch(&self.decoder_p, tape, dec_train, &mut ids);
        let branch_q = Self::bind_branch(&self.decoder_q, tape, dec_train, &mut ids);
        let kernel_scalars = self.bind_kernel(tape, dec_train, &mut ids);

        let mut cache = NormCache::new();
        let (p, _) = self.run_decoder(tape, z, records, final_a, &branch_p, &mut cache);
        let q = if self.config.kernel.uses_q() {
            let (q, _) = self.run_decoder(tape, z, records, final_a, &branch_q, &mut cache);
            q
        } else {
            p
        };
        let logits = self.kernel_logits(tape, p, q, kernel_scalars);
        DecodeOut { p, q, logits, param_ids: ids }
    }

    /// One decoder branch at full resolution, as a plain matrix.
    pub fn decode_branch(&self, code: &LatentCode, branch: Branch) -> Result<Matrix, ModelError> {
        if branch == Branch::Q && !self.config.kernel.uses_q() {
            return Err(ModelError::Config("the self kernel decodes with branch P only".into()));
        }
        let mut tape = Tape::new();
        let (z, records, final_a) = self.bind_latent(&mut tape, code);
        let out = self.decode_on_tape(&mut tape, z, &records, final_a, ParamFilter::Frozen);
        let t = match branch {
            Branch::P => out.p,
            Branch::Q => out.q,
        };
        Ok(tape.value(t).clone())
    }

    /// Edge logits decoded from a detached latent code.
    pub fn decode_latent(&self, code: &LatentCode) -> Matrix {
        let mut tape = Tape::new();
        let (z, records, final_a) = self.bind_latent(&mut tape, code);
        let out = self.decode_on_tape(&mut tape, z, &records, final_a, ParamFilter::Frozen);
        tape.value(out.logits).clone()
    }

    /// Full-pass edge logits for a graph (pre-sigmoid n×n matrix).
    pub fn reconstruct(&self, g: &Graph) -> Result<Matrix, ModelError> {
        let pass = self.forward_graph(g, ParamFilter::Frozen)?;
        Ok(pass.tape.value(pass.out.logits).clone())
    }
}

/// Threshold logits into a binary adjacency. An entry is 1 when the edge
/// probability reaches `th`, so `th = 0.5` keeps exactly the nonnegative
/// logits (the boundary is inclusive).
pub fn predict_edges(logits: &Matrix, th: f64) -> Result<Matrix, ModelError> {
    if !(th > 0.0 && th < 1.0) {
        return Err(ModelError::Config(format!("threshold {th} outside (0, 1)")));
    }
    let cut = (th / (1.0 - th)).ln();
    Ok(logits.map(|v| if v >= cut { 1.0 } else { 0.0 }))
}

/// How many entries of `a` the thresholded logits get right, as a count
/// and a fraction of all n² entries.
pub fn constraint_satisfaction(logits: &Matrix, a: &Matrix) -> (usize, f64) {
    assert_eq!(logits.shape(), a.shape(), "logits/adjacency shape mismatch");
    let mut hits = 0usize;
    let (n, m) = a.shape();
    for i in 0..n {
        for j in 0..m {
            let pred = if logits.get(i, j) >= 0.0 { 1.0 } else { 0.0 };
            if pred == a.get(i, j) {
                hits += 1;
            }
        }
    }
    (hits, hits as f64 / (n * m) as f64)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GCROCKPT";
const CHECKPOINT_VERSION: u32 = 1;

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

impl GraphCrocModel {
    /// Write config and all parameters to a binary checkpoint. The format
    /// stores raw f64 bits, so a save/load cycle is exact.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| ModelError::Checkpoint(format!("config serialization failed: {e}")))?;
        write_u64(&mut w, cfg.len() as u64)?;
        w.write_all(&cfg)?;
        let entries = self.param_entries();
        write_u64(&mut w, entries.len() as u64)?;
        for (name, m) in entries {
            write_u64(&mut w, name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            write_u64(&mut w, m.rows() as u64)?;
            write_u64(&mut w, m.cols() as u64)?;
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<GraphCrocModel, ModelError> {
        let bad = |msg: String| ModelError::Checkpoint(msg);
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint (bad magic)".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        let version = u32::from_le_bytes(ver);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = read_u64(&mut r)? as usize;
        let mut cfg_buf = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_buf)?;
        let config: ModelConfig = serde_json::from_slice(&cfg_buf)
            .map_err(|e| bad(format!("config parse failed: {e}")))?;

        let mut model = GraphCrocModel::new(config, 0)?;
        let count = read_u64(&mut r)? as usize;
        let mut entries = model.param_entries_mut();
        if count != entries.len() {
            return Err(bad(format!(
                "checkpoint has {count} parameters, model wants {}",
                entries.len()
            )));
        }
        for (name, m) in entries.iter_mut() {
            let name_len = read_u64(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let stored = String::from_utf8(name_buf)
                .map_err(|_| bad("parameter name is not utf-8".into()))?;
            if &stored != name {
                return Err(bad(format!("expected parameter {name}, found {stored}")));
            }
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            if (rows, cols) != m.shape() {
                return Err(bad(format!(
                    "parameter {name} has shape {rows}x{cols}, model wants {}x{}",
                    m.shape().0,
                    m.shape().1
                )));
            }
            let mut data = vec![0.0f64; rows * cols];
            for v in data.iter_mut() {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            **m = Matrix::from_vec(rows, cols, data);
        }
        Ok(model)
    }
}
