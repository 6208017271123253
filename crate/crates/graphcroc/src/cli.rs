//! Command-line front end. Every subcommand resolves a flat dotted-key JSON
//! config (file values, then `--set` overrides), runs deterministically from
//! one seed, writes its data files into `--out`, and finishes with a
//! `manifest.json` holding the fully resolved settings. Feeding that manifest
//! back through `--config` reproduces the run byte for byte.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::attack::{
    attack_set, classify, train_classifier, AttackConfig, AttackError, AttackMethod,
    ClassifierHead, ClassifierMode,
};
use crate::data::synthetic::{make_synthetic, protein_like_set, SyntheticKind, SyntheticSpec};
use crate::data::tu::{load_tu_dataset, write_tu_dataset};
use crate::data::{split, DataError, GraphSet};
use crate::matrix::Matrix;
use crate::metrics::{
    brute_force_isomorphic, cosine_divergence, evaluate_parallel, wl_test, EvalError,
};
use crate::model::{GraphCrocModel, Kernel, ModelError, ParamFilter};
use crate::theory::{
    brute_force_feasibility, check_lemma_2_2, dimension_sweep, enumerate_pair_sign_systems,
    ConstraintMode, ConstraintSystem, Feasibility, TheoryError, SWEEP_TRIALS,
};
use crate::train::{suggest_config, train, TrainConfig, TrainError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable files, malformed configs: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A checked property failed at runtime (divergence, a certified
    /// verdict disagreeing, a soundness violation): exit code 1.
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invariant(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::BadGradient(_) => {
                CliError::Invariant(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Train(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "graphcroc",
    version,
    about = "Graph autoencoder toolkit: cross-correlation decoding, structural evaluation, representability checks, and latent-space attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a reconstructor on a TU-format dataset; writes checkpoint and traces.
    Train(RunArgs),
    /// Score a checkpoint's reconstructions (AUC, WL, exactness, divergence).
    Eval(RunArgs),
    /// Compare the 1-WL test against brute-force isomorphism on random pairs.
    Wltest(RunArgs),
    /// Generate a synthetic dataset and write it in TU format.
    Synth(RunArgs),
    /// Run representability certificates, the dimension sweep, and the mirror-pair checks.
    Theory(RunArgs),
    /// Train a classifier on latent codes and attack it in latent space.
    Attack(RunArgs),
    /// Train and score a latent-code classifier without attacking it.
    Classify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON config with dotted keys; a manifest.json from an earlier run also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Seed for every stochastic component; overrides the config's `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for eval and attack; everything else stays serial.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override one config key, e.g. --set train.epochs=50. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Resolved settings for one run. Getters record the value they return, so
/// after a command finishes `resolved` lists exactly the keys it consumed
/// with the defaults filled in.
struct Config {
    values: BTreeMap<String, Value>,
    resolved: BTreeMap<String, Value>,
    seed: u64,
}

impl Config {
    fn load(args: &RunArgs) -> Result<Config, CliError> {
        let mut values = BTreeMap::new();
        let mut manifest_seed = None;
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{} is not valid JSON: {e}", path.display())))?;
            let object = match &parsed {
                // A manifest from a previous run: unwrap its config block.
                Value::Object(map) if map.contains_key("command") && map.contains_key("config") => {
                    manifest_seed = map.get("seed").and_then(Value::as_u64);
                    match map.get("config") {
                        Some(Value::Object(inner)) => inner.clone(),
                        _ => {
                            return Err(CliError::Usage(format!(
                                "{}: manifest `config` is not an object",
                                path.display()
                            )))
                        }
                    }
                }
                Value::Object(map) => map.clone(),
                _ => {
                    return Err(CliError::Usage(format!(
                        "{} must hold a JSON object of dotted keys",
                        path.display()
                    )))
                }
            };
            for (k, v) in object {
                values.insert(k, v);
            }
        }
        for entry in &args.set {
            let Some((key, raw)) = entry.split_once('=') else {
                return Err(CliError::Usage(format!("--set wants KEY=VALUE, got {entry:?}")));
            };
            let value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
            values.insert(key.to_string(), value);
        }
        let seed = args
            .seed
            .or_else(|| values.get("seed").and_then(Value::as_u64))
            .or(manifest_seed)
            .unwrap_or(0);
        Ok(Config { values, resolved: BTreeMap::new(), seed })
    }

    fn record(&mut self, key: &str, v: Value) {
        self.resolved.insert(key.to_string(), v);
    }

    fn str_opt(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => {
                let s = s.clone();
                self.record(key, Value::String(s.clone()));
                Ok(Some(s))
            }
            Some(other) => {
                Err(CliError::Usage(format!("config key {key} wants a string, got {other}")))
            }
        }
    }

    fn str_or(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        let v = self.str_opt(key)?.unwrap_or_else(|| default.to_string());
        self.record(key, Value::String(v.clone()));
        Ok(v)
    }

    fn require_str(&mut self, key: &str) -> Result<String, CliError> {
        self.str_opt(key)?
            .ok_or_else(|| CliError::Usage(format!("config key {key} is required")))
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => match v.as_u64() {
                Some(n) => {
                    self.record(key, Value::from(n));
                    Ok(Some(n))
                }
                None => Err(CliError::Usage(format!(
                    "config key {key} wants a nonnegative integer, got {v}"
                ))),
            },
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        let v = self.u64_opt(key)?.unwrap_or(default);
        self.record(key, Value::from(v));
        Ok(v)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = match self.values.get(key) {
            None => default,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| CliError::Usage(format!("config key {key} wants a number, got {v}")))?,
        };
        self.record(key, Value::from(v));
        Ok(v)
    }

    /// A ratio schedule: a JSON array of numbers or a comma-separated string.
    fn ratios_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let parsed = match self.values.get(key) {
            None => return Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| CliError::Usage(format!("{key}: {v} is not a number")))
                })
                .collect::<Result<Vec<f64>, _>>()?,
            Some(Value::String(s)) => s
                .split(',')
                .map(|part| {
                    part.trim().parse::<f64>().map_err(|_| {
                        CliError::Usage(format!("{key}: {part:?} is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config key {key} wants an array or comma string, got {other}"
                )))
            }
        };
        self.record(key, Value::from(parsed.clone()));
        Ok(Some(parsed))
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), content)
        .map_err(|e| CliError::Usage(format!("cannot write {name}: {e}")))
}

fn write_manifest(args: &RunArgs, command: &str, cfg: &Config) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "command": command,
        "seed": cfg.seed,
        "workers": args.workers,
        "config": cfg.resolved,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&args.out, "manifest.json", &(text + "\n"))
}

fn ensure_out(args: &RunArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))
}

fn load_dataset(cfg: &mut Config) -> Result<GraphSet, CliError> {
    let dir = cfg.require_str("dataset.dir")?;
    let name = cfg.str_or("dataset.name", "data")?;
    let set = load_tu_dataset(Path::new(&dir), &name)?;
    match cfg.u64_opt("dataset.limit")? {
        Some(limit) => {
            if limit == 0 {
                return Err(CliError::Usage("dataset.limit must be at least 1".into()));
            }
            let take = (limit as usize).min(set.graphs.len());
            Ok(GraphSet::new(&set.name, set.graphs.into_iter().take(take).collect())?)
        }
        None => Ok(set),
    }
}

// ---------------------------------------------------------------- checkpoint

const CHECKPOINT_MAGIC: &[u8; 6] = b"GCROC1";

/// Serialize a model: magic, JSON-encoded architecture, then every named
/// parameter with its shape and little-endian f64 payload.
pub fn save_checkpoint(model: &GraphCrocModel, path: &Path) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    let config = serde_json::to_vec(&model.config).expect("model config serializes");
    bytes.extend_from_slice(&(config.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&config);
    let entries = model.param_entries();
    bytes.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, m) in entries {
        bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        let (rows, cols) = m.shape();
        bytes.extend_from_slice(&(rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(cols as u64).to_le_bytes());
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn take<'a>(rest: &mut &'a [u8], n: usize, path: &Path, what: &str) -> Result<&'a [u8], CliError> {
    if rest.len() < n {
        return Err(CliError::Usage(format!(
            "checkpoint {}: truncated while reading {what}",
            path.display()
        )));
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Ok(head)
}

fn take_u64(rest: &mut &[u8], path: &Path, what: &str) -> Result<usize, CliError> {
    let raw = take(rest, 8, path, what)?;
    Ok(u64::from_le_bytes(raw.try_into().expect("eight bytes")) as usize)
}

pub fn load_checkpoint(path: &Path) -> Result<GraphCrocModel, CliError> {
    let corrupt = |what: &str| {
        CliError::Usage(format!("checkpoint {}: {what}", path.display()))
    };
    let bytes = fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let rest = &mut bytes.as_slice();

    if take(rest, CHECKPOINT_MAGIC.len(), path, "magic")? != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let config_len = take_u64(rest, path, "config length")?;
    let config: crate::model::ModelConfig =
        serde_json::from_slice(take(rest, config_len, path, "config")?)
            .map_err(|e| corrupt(&format!("bad architecture block: {e}")))?;
    let mut model = GraphCrocModel::new(config, 0)?;

    let count = take_u64(rest, path, "parameter count")?;
    if count != model.param_entries().len() {
        return Err(corrupt(&format!(
            "{count} stored parameters but the architecture declares {}",
            model.param_entries().len()
        )));
    }
    for idx in 0..count {
        let name_len = take_u64(rest, path, "name length")?;
        let name = String::from_utf8(take(rest, name_len, path, "name")?.to_vec())
            .map_err(|_| corrupt("parameter name is not UTF-8"))?;
        let rows = take_u64(rest, path, "rows")?;
        let cols = take_u64(rest, path, "cols")?;
        let raw = take(rest, rows * cols * 8, path, &name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let mut entries = model.param_entries_mut();
        let (expect_name, slot) = &mut entries[idx];
        if *expect_name != name || slot.shape() != (rows, cols) {
            return Err(corrupt(&format!(
                "parameter {idx} is {name} ({rows}x{cols}) but the architecture wants {expect_name} {:?}",
                slot.shape()
            )));
        }
        **slot = Matrix::from_vec(rows, cols, data);
    }
    if !rest.is_empty() {
        return Err(corrupt("trailing bytes after the last parameter"));
    }
    Ok(model)
}

// ------------------------------------------------------------------ commands

fn resolve_model_config(
    cfg: &mut Config,
    set: &GraphSet,
) -> Result<crate::model::ModelConfig, CliError> {
    let mut mc = suggest_config(set);
    if let Some(ratios) = cfg.ratios_opt("model.ratios")? {
        mc.depth = ratios.len();
        mc.pooling_ratios = ratios;
    } else {
        cfg.record("model.ratios", Value::from(mc.pooling_ratios.clone()));
    }
    mc.hidden_dim = cfg.u64_or("model.hidden_dim", mc.hidden_dim as u64)? as usize;
    let kernel = cfg.str_or("model.kernel", "cross")?;
    mc.kernel = match kernel.as_str() {
        "cross" => Kernel::Cross,
        "self" => Kernel::SelfCorr,
        "l2-learnable" => Kernel::L2Learnable,
        "l2-fixed" => Kernel::L2Fixed { c: cfg.f64_or("model.kernel_c", 1.0)? },
        other => {
            return Err(CliError::Usage(format!(
                "model.kernel {other:?} is not one of cross, self, l2-learnable, l2-fixed"
            )))
        }
    };
    let skip = cfg.str_or("model.skip", "add")?;
    mc.skip_mode = match skip.as_str() {
        "none" => crate::layers::SkipMode::None,
        "add" => crate::layers::SkipMode::Add,
        "concat" => crate::layers::SkipMode::Concat,
        other => {
            return Err(CliError::Usage(format!(
                "model.skip {other:?} is not one of none, add, concat"
            )))
        }
    };
    Ok(mc)
}

fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let set = load_dataset(&mut cfg)?;
    let model_cfg = resolve_model_config(&mut cfg, &set)?;
    let mut model = GraphCrocModel::new(model_cfg, cfg.seed)?;

    let mut tc = TrainConfig::new(
        cfg.u64_or("train.epochs", 200)? as usize,
        cfg.f64_or("train.lr", 1e-3)?,
        cfg.seed,
    );
    tc.weight_decay = cfg.f64_or("train.weight_decay", tc.weight_decay)?;
    let watch = cfg.u64_or("train.watch_graph", set.graphs[0].id as u64)? as usize;
    tc.trace.watch_graph = Some(watch);

    let trace = train(&mut model, &set, &tc)?;

    let mut loss_csv = String::from("epoch,iter,graph_id,loss\n");
    for (epoch, iter, gid, loss) in &trace.iter_losses {
        loss_csv.push_str(&format!("{epoch},{iter},{gid},{loss}\n"));
    }
    write_file(&args.out, "loss_trace.csv", &loss_csv)?;

    let mut diag_csv = String::from("epoch,iter,node,logit\n");
    for (epoch, iter, diag) in &trace.diag_logits {
        for (node, logit) in diag.iter().enumerate() {
            diag_csv.push_str(&format!("{epoch},{iter},{node},{logit}\n"));
        }
    }
    write_file(&args.out, "diag_logits.csv", &diag_csv)?;

    save_checkpoint(&model, &args.out.join("checkpoint.bin"))?;
    write_manifest(args, "train", &cfg)
}

fn cmd_eval(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let model = load_checkpoint(Path::new(&cfg.require_str("checkpoint")?))?;
    let set = load_dataset(&mut cfg)?;
    if set.feature_dim != model.config.input_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional features but {} provides {}",
            model.config.input_dim, set.name, set.feature_dim
        )));
    }

    let th = cfg.f64_or("eval.threshold", 0.5)?;
    let report = evaluate_parallel(&model, &set, th, args.workers)?;
    write_file(&args.out, "report.json", &(report.to_json() + "\n"))?;
    write_file(&args.out, "report.csv", &report.to_csv())?;

    let bins = cfg.u64_or("divergence.bins", 20)? as usize;
    if bins == 0 {
        return Err(CliError::Usage("divergence.bins must be at least 1".into()));
    }
    let mut counts = vec![0usize; bins];
    for g in &set.graphs {
        let pass = model.forward_graph(g, ParamFilter::Frozen)?;
        let p = pass.tape.value(pass.out.p);
        let q = pass.tape.value(pass.out.q);
        for cos in cosine_divergence(p, q).into_iter().flatten() {
            let norm = (cos + 1.0) / 2.0;
            let idx = ((norm * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
    }
    let mut div_csv = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in counts.iter().enumerate() {
        let lo = -1.0 + 2.0 * i as f64 / bins as f64;
        let hi = -1.0 + 2.0 * (i + 1) as f64 / bins as f64;
        div_csv.push_str(&format!("{lo:.4},{hi:.4},{count}\n"));
    }
    write_file(&args.out, "divergence.csv", &div_csv)?;
    write_manifest(args, "eval", &cfg)
}

fn cmd_synth(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let kind = cfg.str_or("synth.kind", "protein-like")?;
    let count = cfg.u64_or("synth.count", 64)? as usize;
    let name = cfg.str_or("synth.name", "synthetic")?;

    let set = if kind == "protein-like" {
        let set = protein_like_set(count, cfg.seed)?;
        GraphSet::new(&name, set.graphs)?
    } else {
        let parsed = SyntheticKind::parse(&kind).ok_or_else(|| {
            CliError::Usage(format!(
                "synth.kind {kind:?} is not protein-like, axisymmetric, centrosymmetric, island, directed-random, or erdos-renyi"
            ))
        })?;
        if parsed == SyntheticKind::DirectedRandom {
            return Err(CliError::Usage(
                "the TU text format cannot express direction; directed sets are library-only".into(),
            ));
        }
        let n = cfg.u64_or("synth.nodes", 12)? as usize;
        let edge_prob = cfg.f64_or("synth.edge_prob", 0.35)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut graphs = Vec::with_capacity(count);
        for id in 0..count {
            let spec = SyntheticSpec { kind: parsed, n, edge_prob, seed: rng.gen() };
            let g = make_synthetic(&spec)?;
            graphs.push(crate::data::Graph::new(id, g.features, g.adjacency, g.directed, g.label)?);
        }
        GraphSet::new(&name, graphs)?
    };

    write_tu_dataset(&set, &args.out, &set.name)?;
    write_manifest(args, "synth", &cfg)
}

fn cmd_wltest(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let pairs = cfg.u64_or("wl.pairs", 200)? as usize;
    let max_nodes = cfg.u64_or("wl.max_nodes", 7)? as usize;
    if max_nodes < 3 {
        return Err(CliError::Usage("wl.max_nodes must be at least 3".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("pair,n,relabeled,wl_isomorphic,brute_force_isomorphic\n");
    let mut violations = 0usize;
    for pair in 0..pairs {
        let n = rng.gen_range(3..=max_nodes);
        let edge_prob = rng.gen_range(0.2..0.8);
        let spec = SyntheticSpec { kind: SyntheticKind::ErdosRenyi, n, edge_prob, seed: rng.gen() };
        let a1 = make_synthetic(&spec)?.adjacency;
        let relabeled = rng.gen_bool(0.5);
        let a2 = if relabeled {
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let mut out = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out.set(perm[i], perm[j], a1.get(i, j));
                }
            }
            out
        } else {
            let spec =
                SyntheticSpec { kind: SyntheticKind::ErdosRenyi, n, edge_prob, seed: rng.gen() };
            make_synthetic(&spec)?.adjacency
        };

        let wl = wl_test(&a1, &a2, n);
        let bf = brute_force_isomorphic(&a1, &a2);
        // Refinement may fail to split non-isomorphic regular graphs, but it
        // must never reject genuinely isomorphic ones.
        if bf && !wl {
            violations += 1;
        }
        csv.push_str(&format!("{pair},{n},{relabeled},{wl},{bf}\n"));
    }
    write_file(&args.out, "wl_results.csv", &csv)?;
    write_manifest(args, "wltest", &cfg)?;
    if violations > 0 {
        return Err(CliError::Invariant(format!(
            "refinement rejected {violations} isomorphic pair(s); see wl_results.csv"
        )));
    }
    Ok(())
}

fn feasibility_name(f: &Feasibility) -> &'static str {
    match f {
        Feasibility::Feasible(_) => "feasible",
        Feasibility::PresumedInfeasible => "presumed-infeasible",
        Feasibility::ProvenInfeasible { .. } => "proven-infeasible",
    }
}

fn cmd_theory(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let trials = cfg.u64_or("theory.trials", SWEEP_TRIALS as u64)? as usize;
    let mut disagreements = Vec::new();
    let mut cert_csv = String::from("mode,n,d,case,verdict,expected\n");
    let mut certify = |case: &str,
                       mode: ConstraintMode,
                       signs: Matrix,
                       d: usize,
                       feasible: bool,
                       seed: u64|
     -> Result<(), CliError> {
        let n = signs.rows();
        let cs = ConstraintSystem::new(signs, mode)?;
        let verdict = brute_force_feasibility(&cs, d, trials, seed)?;
        let expected = if feasible { "feasible" } else { "proven-infeasible" };
        let got = feasibility_name(&verdict);
        cert_csv.push_str(&format!("{},{n},{d},{case},{got},{expected}\n", mode.name()));
        if got != expected {
            disagreements.push(format!("{case}: expected {expected}, got {got}"));
        }
        Ok(())
    };

    // A triangle of pairwise repulsions with the diagonal attracting: one
    // latent dimension cannot satisfy it, the product of the three pair
    // products is a square.
    let mut neg_off = Matrix::filled(3, 3, -1.0);
    for i in 0..3 {
        neg_off.set(i, i, 1.0);
    }
    certify("self-negative-triangle", ConstraintMode::SelfCorr, neg_off, 1, false, 11)?;

    // Asking a self-correlated node to reject itself fails at any width.
    certify(
        "self-island",
        ConstraintMode::SelfCorr,
        Matrix::filled(3, 3, -1.0),
        2,
        false,
        13,
    )?;

    // Two branches satisfy the all-negative demand even in one dimension.
    certify("cross-all-negative", ConstraintMode::Cross, Matrix::filled(3, 3, -1.0), 1, true, 17)?;

    // Every pairwise sign system on three nodes becomes satisfiable once a
    // second latent dimension is available.
    for (idx, signs) in enumerate_pair_sign_systems(3)?.into_iter().enumerate() {
        certify(&format!("self-pair-system-{idx}"), ConstraintMode::SelfCorr, signs, 2, true, 19 + idx as u64)?;
    }
    write_file(&args.out, "certificates.csv", &cert_csv)?;

    let sweep_n = cfg.u64_or("theory.sweep_n", 3)? as usize;
    let sweep_cases = cfg.u64_or("theory.sweep_cases", 40)? as usize;
    let table = dimension_sweep(sweep_n, sweep_cases, cfg.seed)?;
    write_file(&args.out, "sweep.csv", &table.to_csv())?;

    // Mirror-pair certificates on symmetric synthetic graphs: any randomly
    // initialized self-kernel encoder must already satisfy them.
    let graphs = cfg.u64_or("theory.graphs", 6)? as usize;
    let models = cfg.u64_or("theory.models", 5)? as usize;
    let mut lemma_csv = String::from("graph,kind,model_seed,pass\n");
    let mut lemma_failures = 0usize;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    for gi in 0..graphs {
        let kind = if gi % 2 == 0 {
            SyntheticKind::Axisymmetric
        } else {
            SyntheticKind::Centrosymmetric
        };
        let spec = SyntheticSpec { kind, n: 8, edge_prob: 0.5, seed: rng.gen() };
        let g = make_synthetic(&spec)?;
        for ms in 0..models {
            let mc = crate::model::ModelConfig {
                input_dim: g.features.cols(),
                hidden_dim: 8,
                depth: 3,
                pooling_ratios: vec![1.0, 1.0, 1.0],
                skip_mode: crate::layers::SkipMode::Add,
                kernel: Kernel::SelfCorr,
            };
            let model = GraphCrocModel::new(mc, rng.gen())?;
            let pass = check_lemma_2_2(
                |graph| {
                    let run = model
                        .forward_graph(graph, ParamFilter::Frozen)
                        .expect("dimensions were built to match");
                    run.tape.value(run.out.p).clone()
                },
                &g,
            )?;
            if !pass {
                lemma_failures += 1;
            }
            lemma_csv.push_str(&format!("{gi},{},{ms},{pass}\n", kind.name()));
        }
    }
    write_file(&args.out, "lemma_pairs.csv", &lemma_csv)?;
    write_manifest(args, "theory", &cfg)?;

    if !disagreements.is_empty() {
        return Err(CliError::Invariant(format!(
            "certified verdicts disagreed: {}",
            disagreements.join("; ")
        )));
    }
    if lemma_failures > 0 {
        return Err(CliError::Invariant(format!(
            "{lemma_failures} mirror-pair check(s) failed; see lemma_pairs.csv"
        )));
    }
    Ok(())
}

/// Shared by attack and classify: load everything, train the head, and hand
/// back the pieces.
fn prepare_classifier(
    cfg: &mut Config,
) -> Result<(GraphCrocModel, ClassifierHead, GraphSet, GraphSet, crate::attack::ClassifierReport), CliError>
{
    let mut model = load_checkpoint(Path::new(&cfg.require_str("checkpoint")?))?;
    let set = load_dataset(cfg)?;
    if set.feature_dim != model.config.input_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional features but {} provides {}",
            model.config.input_dim, set.name, set.feature_dim
        )));
    }
    let fraction = cfg.f64_or("classifier.train_fraction", 0.8)?;
    let (train_set, test_set) = split(&set, fraction, cfg.seed)?;
    if train_set.graphs.is_empty() || test_set.graphs.is_empty() {
        return Err(CliError::Usage(format!(
            "{} graphs cannot be split {fraction} for training and testing",
            set.graphs.len()
        )));
    }

    let mode = match cfg.str_or("classifier.mode", "finetune")?.as_str() {
        "finetune" => ClassifierMode::Finetune,
        "full" => ClassifierMode::Full,
        other => {
            return Err(CliError::Usage(format!(
                "classifier.mode {other:?} is not finetune or full"
            )))
        }
    };
    let epochs = cfg.u64_or("classifier.epochs", 30)? as usize;
    let lr = cfg.f64_or("classifier.lr", 1e-2)?;
    let mut head = ClassifierHead::new(
        model.config.hidden_dim,
        train_set.num_classes.unwrap_or(2).max(2),
        cfg.seed ^ 0x5EED,
    )?;
    let report =
        train_classifier(&mut model, &mut head, &train_set, epochs, mode, lr, cfg.seed)?;
    Ok((model, head, train_set, test_set, report))
}

fn classifier_report_json(report: &crate::attack::ClassifierReport) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "train_accuracy": report.train_accuracy,
        "test_accuracy": report.test_accuracy,
        "majority_rate": report.majority_rate,
        "epochs": report.epochs,
    }))
    .expect("report serializes")
        + "\n"
}

fn cmd_classify(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let (model, head, _train_set, test_set, report) = prepare_classifier(&mut cfg)?;

    let mut csv = String::from("graph_id,label,predicted\n");
    for g in &test_set.graphs {
        let predicted = classify(&model, &head, g)?;
        csv.push_str(&format!("{},{},{predicted}\n", g.id, g.label.unwrap_or(0)));
    }
    write_file(&args.out, "predictions.csv", &csv)?;
    write_file(&args.out, "classifier_report.json", &classifier_report_json(&report))?;
    write_manifest(args, "classify", &cfg)
}

fn cmd_attack(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::load(args)?;
    ensure_out(args)?;
    let (model, head, _train_set, test_set, report) = prepare_classifier(&mut cfg)?;

    let attack_cfg = AttackConfig {
        epsilon: cfg.f64_or("attack.epsilon", 5.0)?,
        step_size: cfg.f64_or("attack.step_size", 0.05)?,
        steps: cfg.u64_or("attack.steps", 40)? as usize,
        query_budget: cfg.u64_or("attack.query_budget", 400)? as usize,
        c: cfg.f64_or("attack.c", 1.0)?,
        kappa: cfg.f64_or("attack.kappa", 0.0)?,
        finetune_steps: cfg.u64_or("attack.finetune_steps", 20)? as usize,
        finetune_lr: cfg.f64_or("attack.finetune_lr", 1e-3)?,
        seed: cfg.seed,
    };
    attack_cfg.validate()?;

    let methods: Vec<AttackMethod> = cfg
        .str_or("attack.methods", "random,pgd,cw")?
        .split(',')
        .map(|m| {
            AttackMethod::parse(m.trim()).ok_or_else(|| {
                CliError::Usage(format!("attack.methods entry {m:?} is not random, pgd, or cw"))
            })
        })
        .collect::<Result<_, _>>()?;

    let mut clean_hits = 0usize;
    for g in &test_set.graphs {
        if classify(&model, &head, g)? == g.label.unwrap_or(usize::MAX) {
            clean_hits += 1;
        }
    }
    let clean_accuracy = clean_hits as f64 / test_set.graphs.len() as f64;

    let mut report_csv = String::from("graph_id,method,success,delta_edge,queries\n");
    let mut summary_csv =
        String::from("method,graphs,clean_accuracy,attacked_accuracy,success_rate,mean_delta_edge,mean_queries\n");
    for method in methods {
        let results = attack_set(&model, &head, &test_set, method, &attack_cfg, args.workers)?;
        let graphs = results.len();
        let successes = results.iter().filter(|r| r.success).count();
        let hits = results
            .iter()
            .zip(&test_set.graphs)
            .filter(|(r, g)| r.adversarial_label == g.label.unwrap_or(usize::MAX))
            .count();
        let mean_delta: f64 =
            results.iter().map(|r| r.delta_edge).sum::<f64>() / graphs.max(1) as f64;
        let mean_queries: f64 =
            results.iter().map(|r| r.queries.total() as f64).sum::<f64>() / graphs.max(1) as f64;
        for (r, g) in results.iter().zip(&test_set.graphs) {
            report_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                g.id,
                method.name(),
                r.success,
                r.delta_edge,
                r.queries.total()
            ));
        }
        summary_csv.push_str(&format!(
            "{},{graphs},{clean_accuracy},{},{},{mean_delta},{mean_queries}\n",
            method.name(),
            hits as f64 / graphs.max(1) as f64,
            successes as f64 / graphs.max(1) as f64,
        ));
    }
    write_file(&args.out, "attack_report.csv", &report_csv)?;
    write_file(&args.out, "attack_summary.csv", &summary_csv)?;
    write_file(&args.out, "classifier_report.json", &classifier_report_json(&report))?;
    write_manifest(args, "attack", &cfg)
}

/// Parse arguments and run the chosen command, returning the process exit
/// code: 0 on success, 1 for invariant violations, 2 for usage and IO
/// problems.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Wltest(a) => cmd_wltest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Classify(a) => cmd_classify(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
