//! End-to-end acceptance suite. Each test prints one `criterion N: PASS/FAIL`
//! line (visible with `--show-output`) and asserts the same condition, so the
//! suite doubles as a human-readable checklist and a CI gate.
//!
//! Tolerances and training recipes are pinned here on purpose: every run is
//! deterministic, and the numbers double as a regression fence around the
//! numeric core. Three tests share one expensive training fixture (the
//! 64-graph protein-like set under the reference configuration); it is built
//! once behind a `OnceLock`.

use std::sync::OnceLock;

use graphcroc::attack::{
    attack_set, train_classifier, AttackConfig, AttackMethod, ClassifierHead, ClassifierMode,
};
use graphcroc::autodiff::{Tape, Tensor};
use graphcroc::data::{
    find_mirror_pairs, make_synthetic, protein_like_set, sample_subgraphs, split, Graph, GraphSet,
    SyntheticKind, SyntheticSpec,
};
use graphcroc::layers::{gcn_block, normalize_adjacency, topk_pool, unpool, GcnParams, SkipMode};
use graphcroc::matrix::Matrix;
use graphcroc::metrics::{brute_force_isomorphic, cosine_divergence, evaluate, wl_test};
use graphcroc::model::{predict_edges, GraphCrocModel, Kernel, ModelConfig, ParamFilter};
use graphcroc::theory::{
    brute_force_feasibility, enumerate_pair_sign_systems, enumerate_symmetric_sign_systems,
    ConstraintMode, ConstraintSystem, Feasibility,
};
use graphcroc::train::{balanced_bce, compute_alphas, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared reference fixture: the 64-graph protein-like set trained for 200
// epochs under the reference configuration (depth 7, hidden 128, the usual
// pooling schedule), once per kernel with identical seeds and budgets.
// ---------------------------------------------------------------------------

struct TrainedPair {
    set: GraphSet,
    cross: GraphCrocModel,
    self_model: GraphCrocModel,
    cross_final_loss: f64,
    self_final_loss: f64,
}

fn reference_config(kernel: Kernel) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        hidden_dim: 128,
        depth: 7,
        pooling_ratios: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 1.0],
        skip_mode: SkipMode::Add,
        kernel,
    }
}

fn trained() -> &'static TrainedPair {
    static TRAINED: OnceLock<TrainedPair> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let set = protein_like_set(64, 1).expect("reference set");
        let mut cross = GraphCrocModel::new(reference_config(Kernel::Cross), 17).unwrap();
        let cross_trace = train(&mut cross, &set, &TrainConfig::new(200, 1e-3, 17)).unwrap();
        let mut self_model = GraphCrocModel::new(reference_config(Kernel::SelfCorr), 17).unwrap();
        let self_trace = train(&mut self_model, &set, &TrainConfig::new(200, 1e-3, 17)).unwrap();
        TrainedPair {
            set,
            cross,
            self_model,
            cross_final_loss: *cross_trace.epoch_losses.last().unwrap(),
            self_final_loss: *self_trace.epoch_losses.last().unwrap(),
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient checks.
// ---------------------------------------------------------------------------

/// Worst relative error between tape gradients and central differences over
/// `instances` sampled cases. Entries whose analytic and numeric gradients
/// are both below `floor` sit under finite-difference resolution and are
/// skipped; everything else uses |a - fd| / max(|a|, |fd|, 1e-8).
fn fd_battery(
    instances: usize,
    h: f64,
    floor: f64,
    seed: u64,
    mut case: impl FnMut(&mut ChaCha20Rng) -> (Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Tensor]) -> Tensor>),
) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (inputs, build) = case(&mut rng);
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &leaves);
        assert_eq!(out.shape(), (1, 1), "fd cases must produce a scalar");
        let grads = tape.backward(out);

        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(leaves[k]);
            let eval = |m: &Matrix| -> f64 {
                let mut t = Tape::new();
                let ts: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| t.constant(if j == k { m.clone() } else { v.clone() }))
                    .collect();
                let o = build(&mut t, &ts);
                t.scalar(o)
            };
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let mut plus = x.clone();
                    plus.set(r, c, x.get(r, c) + h);
                    let mut minus = x.clone();
                    minus.set(r, c, x.get(r, c) - h);
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let a = analytic.get(r, c);
                    if a.abs() < floor && fd.abs() < floor {
                        continue;
                    }
                    worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
                }
            }
        }
    }
    worst
}

fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Magnitudes in [0.5, 2] with random sign, so weighted sums stay away from
/// accidental cancellation.
fn signed(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v = rng.gen_range(0.5..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

/// Values nudged away from zero so relu and l1 kinks are never straddled.
fn off_kink(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v = rng.gen_range(0.1..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

fn random_sym_binary(rng: &mut ChaCha20Rng, n: usize, p: f64) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

/// Wrap an op output in sum(output .* weights) so upstream gradients are
/// non-uniform; the weight matrix is itself a checked input.
type CaseBuild = Box<dyn Fn(&mut Tape, &[Tensor]) -> Tensor>;

fn weighted(build: impl Fn(&mut Tape, &[Tensor]) -> Tensor + 'static) -> CaseBuild {
    Box::new(move |tape, ts| {
        let y = build(tape, &ts[..ts.len() - 1]);
        let prod = tape.mul(y, ts[ts.len() - 1]);
        tape.sum(prod)
    })
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    const PRIM_TOL: f64 = 1e-5;
    const BLOCK_TOL: f64 = 1e-4;
    let mut failures: Vec<String> = Vec::new();
    let mut prim_worst = 0.0f64;
    let mut check_prim = |name: &str,
                          seed: u64,
                          case: &mut dyn FnMut(&mut ChaCha20Rng) -> (Vec<Matrix>, CaseBuild)| {
        let err = fd_battery(100, 1e-5, 1e-6, seed, case);
        prim_worst = prim_worst.max(err);
        if err >= PRIM_TOL {
            failures.push(format!("{name} err {err:.2e}"));
        }
    };

    check_prim("matmul", 101, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 4, 2, -2.0, 2.0);
        let c = signed(rng, 3, 2);
        (vec![a, b, c], weighted(|t, ts| t.matmul(ts[0], ts[1])))
    });
    check_prim("matmul_nt", 102, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 2, 4, -2.0, 2.0);
        let c = signed(rng, 3, 2);
        (vec![a, b, c], weighted(|t, ts| t.matmul_nt(ts[0], ts[1])))
    });
    check_prim("add", 103, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, b, c], weighted(|t, ts| t.add(ts[0], ts[1])))
    });
    check_prim("sub", 104, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, b, c], weighted(|t, ts| t.sub(ts[0], ts[1])))
    });
    check_prim("mul", 105, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, b, c], weighted(|t, ts| t.mul(ts[0], ts[1])))
    });
    check_prim("affine", 106, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.affine(ts[0], 1.7, -0.3)))
    });
    check_prim("scale", 107, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.scale(ts[0], -2.5)))
    });
    check_prim("neg", 108, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.neg(ts[0])))
    });
    check_prim("sigmoid", 109, &mut |rng| {
        let a = uniform(rng, 3, 4, -3.0, 3.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.sigmoid(ts[0])))
    });
    check_prim("tanh", 110, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.tanh(ts[0])))
    });
    check_prim("relu", 111, &mut |rng| {
        let a = off_kink(rng, 3, 4);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.relu(ts[0])))
    });
    check_prim("softplus", 112, &mut |rng| {
        let a = uniform(rng, 3, 4, -3.0, 3.0);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.softplus(ts[0])))
    });
    check_prim("sqrt", 113, &mut |rng| {
        let a = uniform(rng, 3, 4, 0.3, 2.5);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.sqrt(ts[0])))
    });
    check_prim("rsqrt", 114, &mut |rng| {
        let a = uniform(rng, 3, 4, 0.3, 2.5);
        let c = signed(rng, 3, 4);
        (vec![a, c], weighted(|t, ts| t.rsqrt(ts[0])))
    });
    check_prim("transpose", 115, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 4, 3);
        (vec![a, c], weighted(|t, ts| t.transpose(ts[0])))
    });
    check_prim("layer_norm", 116, &mut |rng| {
        let x = loop {
            let x = uniform(rng, 3, 5, -2.0, 2.0);
            let ok = (0..3).all(|r| {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / 5.0;
                row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0 > 0.1
            });
            if ok {
                break x;
            }
        };
        let gain = signed(rng, 1, 5);
        let bias = uniform(rng, 1, 5, -1.0, 1.0);
        let c = signed(rng, 3, 5);
        (vec![x, gain, bias, c], weighted(|t, ts| t.layer_norm(ts[0], ts[1], ts[2], 1e-5)))
    });
    check_prim("row_gather", 117, &mut |rng| {
        let x = uniform(rng, 5, 3, -2.0, 2.0);
        let c = signed(rng, 4, 3);
        let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        (vec![x, c], weighted(move |t, ts| t.row_gather(ts[0], &idx)))
    });
    check_prim("row_scatter", 118, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 6, 4);
        (vec![x, c], weighted(|t, ts| t.row_scatter(ts[0], &[1, 3, 4], 6)))
    });
    check_prim("col_gather", 119, &mut |rng| {
        let x = uniform(rng, 3, 5, -2.0, 2.0);
        let c = signed(rng, 3, 3);
        (vec![x, c], weighted(|t, ts| t.col_gather(ts[0], &[4, 0, 2])))
    });
    check_prim("concat_cols", 120, &mut |rng| {
        let a = uniform(rng, 3, 2, -2.0, 2.0);
        let b = uniform(rng, 3, 3, -2.0, 2.0);
        let c = signed(rng, 3, 5);
        (vec![a, b, c], weighted(|t, ts| t.concat_cols(ts[0], ts[1])))
    });
    check_prim("mean_rows", 121, &mut |rng| {
        let x = uniform(rng, 4, 3, -2.0, 2.0);
        let c = signed(rng, 1, 3);
        (vec![x, c], weighted(|t, ts| t.mean_rows(ts[0])))
    });
    check_prim("max_rows", 122, &mut |rng| {
        let x = loop {
            let x = uniform(rng, 4, 3, -2.0, 2.0);
            let gapped = (0..3).all(|col| {
                let mut vals: Vec<f64> = (0..4).map(|r| x.get(r, col)).collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                vals[0] - vals[1] > 0.1
            });
            if gapped {
                break x;
            }
        };
        let c = signed(rng, 1, 3);
        (vec![x, c], weighted(|t, ts| t.max_rows(ts[0])))
    });
    check_prim("sum", 123, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let c = signed(rng, 1, 1);
        (vec![x, c], weighted(|t, ts| t.sum(ts[0])))
    });
    check_prim("add_row_broadcast", 124, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let row = uniform(rng, 1, 4, -2.0, 2.0);
        let c = signed(rng, 3, 4);
        (vec![x, row, c], weighted(|t, ts| t.add_row_broadcast(ts[0], ts[1])))
    });
    check_prim("mul_col_broadcast", 125, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let col = signed(rng, 3, 1);
        let c = signed(rng, 3, 4);
        (vec![x, col, c], weighted(|t, ts| t.mul_col_broadcast(ts[0], ts[1])))
    });
    check_prim("mul_scalar", 126, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let s = signed(rng, 1, 1);
        let c = signed(rng, 3, 4);
        (vec![x, s, c], weighted(|t, ts| t.mul_scalar(ts[0], ts[1])))
    });
    check_prim("add_scalar", 127, &mut |rng| {
        let x = uniform(rng, 3, 4, -2.0, 2.0);
        let s = signed(rng, 1, 1);
        let c = signed(rng, 3, 4);
        (vec![x, s, c], weighted(|t, ts| t.add_scalar(ts[0], ts[1])))
    });
    check_prim("pairwise_sqdist", 128, &mut |rng| {
        let a = uniform(rng, 3, 4, -2.0, 2.0);
        let b = uniform(rng, 5, 4, -2.0, 2.0);
        let c = signed(rng, 3, 5);
        (vec![a, b, c], weighted(|t, ts| t.pairwise_sqdist(ts[0], ts[1])))
    });
    check_prim("cross_entropy", 129, &mut |rng| {
        let logits = uniform(rng, 1, 4, -2.0, 2.0);
        let c = signed(rng, 1, 1);
        (vec![logits, c], weighted(|t, ts| t.cross_entropy(ts[0], 2)))
    });
    check_prim("cw_margin", 130, &mut |rng| {
        let kappa = 0.4;
        let logits = loop {
            let l = uniform(rng, 1, 4, -2.0, 2.0);
            let target = l.get(0, 0);
            let mut others: Vec<f64> = (1..4).map(|j| l.get(0, j)).collect();
            others.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let margin = others[0] - target;
            if others[0] - others[1] > 0.1 && (margin + kappa).abs() > 0.1 {
                break l;
            }
        };
        let c = signed(rng, 1, 1);
        (vec![logits, c], weighted(move |t, ts| t.cw_margin(ts[0], 0, kappa)))
    });
    check_prim("l1_norm", 131, &mut |rng| {
        let x = off_kink(rng, 3, 4);
        let c = signed(rng, 1, 1);
        (vec![x, c], weighted(|t, ts| t.l1_norm(ts[0])))
    });

    // Composed blocks at the looser tolerance.
    let mut block_worst = 0.0f64;
    let mut check_block = |name: &str,
                           seed: u64,
                           h: f64,
                           case: &mut dyn FnMut(&mut ChaCha20Rng) -> (Vec<Matrix>, CaseBuild)| {
        let err = fd_battery(100, h, 1e-4, seed, case);
        block_worst = block_worst.max(err);
        if err >= BLOCK_TOL {
            failures.push(format!("{name} err {err:.2e}"));
        }
    };

    check_block("gcn_block", 201, 1e-6, &mut |rng| {
        let n = rng.gen_range(4..=6);
        let d = rng.gen_range(3..=4);
        let a_norm = normalize_adjacency(&random_sym_binary(rng, n, 0.5));
        let (h, w) = loop {
            let h = uniform(rng, n, d, -2.0, 2.0);
            let w = uniform(rng, d, d, -1.0, 1.0);
            let pre = a_norm.matmul(&h.matmul(&w));
            if pre.as_slice().iter().all(|v| v.abs() > 5e-4) {
                break (h, w);
            }
        };
        let gain = signed(rng, 1, d);
        let bias = uniform(rng, 1, d, -1.0, 1.0);
        let c = signed(rng, n, d);
        let a_const = a_norm.clone();
        (
            vec![h, w, gain, bias, c],
            weighted(move |t, ts| {
                let a = t.constant(a_const.clone());
                let params = GcnParams { w: ts[1], ln_gain: ts[2], ln_bias: ts[3] };
                gcn_block(t, ts[0], a, &params, SkipMode::Add)
            }),
        )
    });

    check_block("pool_unpool", 202, 1e-6, &mut |rng| {
        let (n, d) = (6, 4);
        let a = random_sym_binary(rng, n, 0.5);
        let (h, p) = loop {
            let h = uniform(rng, n, d, -2.0, 2.0);
            let p = signed(rng, d, 1);
            let norm = p.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut scores: Vec<f64> =
                (0..n).map(|i| h.row(i).iter().zip(p.as_slice()).map(|(a, b)| a * b).sum::<f64>() / norm).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if scores.windows(2).all(|w| w[1] - w[0] > 1e-2) {
                break (h, p);
            }
        };
        let c = signed(rng, n, d);
        let a_const = a.clone();
        (
            vec![h, p, c],
            weighted(move |t, ts| {
                let a_t = t.constant(a_const.clone());
                let (pooled, _a_pooled, record) = topk_pool(t, ts[0], a_t, 0.5, ts[1]);
                let (restored, _a_prev) = unpool(t, pooled, &record);
                restored
            }),
        )
    });

    check_block("balanced_bce", 203, 1e-5, &mut |rng| {
        let n = rng.gen_range(4..=6);
        let a = loop {
            let mut a = random_sym_binary(rng, n, 0.5);
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    a.set(i, i, 1.0);
                }
            }
            let ones = a.as_slice().iter().filter(|v| **v != 0.0).count();
            if ones > 0 && ones < n * n {
                break a;
            }
        };
        let logits = uniform(rng, n, n, -3.0, 3.0);
        let c = signed(rng, 1, 1);
        let target = a.clone();
        (
            vec![logits, c],
            weighted(move |t, ts| {
                let w = compute_alphas(&target);
                balanced_bce(t, ts[0], &target, &w)
            }),
        )
    });

    // Full forward passes, parameter by parameter, across every kernel and
    // both skip modes. The losses run through encode, pool, unpool, decode,
    // the kernel product, and the balanced objective in one graph.
    let mut model_worst = 0.0f64;
    {
        let mut rng = ChaCha20Rng::seed_from_u64(301);
        let h = 1e-6;
        for i in 0..100 {
            let kernel = match i % 4 {
                0 => Kernel::Cross,
                1 => Kernel::SelfCorr,
                2 => Kernel::L2Fixed { c: 1.5 },
                _ => Kernel::L2Learnable,
            };
            let skip = if i % 2 == 0 { SkipMode::Add } else { SkipMode::Concat };
            let cfg = ModelConfig {
                input_dim: 3,
                hidden_dim: 4,
                depth: 3,
                pooling_ratios: vec![1.0, 0.6, 1.0],
                skip_mode: skip,
                kernel,
            };
            let n = rng.gen_range(4..=6);
            let g = Graph::new(
                i,
                uniform(&mut rng, n, 3, -2.0, 2.0),
                random_sym_binary(&mut rng, n, 0.5),
                false,
                None,
            )
            .unwrap();
            let w = compute_alphas(&g.adjacency);
            let model = GraphCrocModel::new(cfg.clone(), 3000 + i as u64).unwrap();

            let mut pass = model.forward_graph(&g, ParamFilter::All).unwrap();
            let loss = balanced_bce(&mut pass.tape, pass.out.logits, &g.adjacency, &w);
            let grads = pass.tape.backward(loss);
            let entries = model.param_entries();

            for (idx, (_, value)) in entries.iter().enumerate() {
                let analytic = grads.get_or_zeros(pass.out.param_ids[idx].unwrap());
                let eval = |candidate: &Matrix| -> f64 {
                    let mut m2 = GraphCrocModel::new(cfg.clone(), 3000 + i as u64).unwrap();
                    *m2.param_entries_mut()[idx].1 = candidate.clone();
                    let mut p2 = m2.forward_graph(&g, ParamFilter::Frozen).unwrap();
                    let l2 = balanced_bce(&mut p2.tape, p2.out.logits, &g.adjacency, &w);
                    p2.tape.scalar(l2)
                };
                for r in 0..value.rows() {
                    for cidx in 0..value.cols() {
                        let mut plus = (*value).clone();
                        plus.set(r, cidx, value.get(r, cidx) + h);
                        let mut minus = (*value).clone();
                        minus.set(r, cidx, value.get(r, cidx) - h);
                        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                        let a = analytic.get(r, cidx);
                        if a.abs() < 1e-4 && fd.abs() < 1e-4 {
                            continue;
                        }
                        model_worst = model_worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
                    }
                }
            }
        }
        if model_worst >= BLOCK_TOL {
            failures.push(format!("full forward err {model_worst:.2e}"));
        }
    }

    let pass = failures.is_empty();
    report(
        1,
        pass,
        &format!(
            "primitives worst {prim_worst:.2e} (tol 1e-5), blocks worst {:.2e} (tol 1e-4), full forward worst {model_worst:.2e}{}",
            block_worst,
            if pass { String::new() } else { format!("; failures: {failures:?}") }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: loss-balancing identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_loss_balancing_identities() {
    let set = protein_like_set(64, 1).unwrap();
    let mut worst = 0.0f64;
    for g in &set.graphs {
        let n = g.n();
        let c1 = g.adjacency.as_slice().iter().filter(|v| **v != 0.0).count() as f64;
        let c0 = (n * n) as f64 - c1;
        let w = compute_alphas(&g.adjacency);
        worst = worst.max((w.alpha0 * c0 - w.alpha1 * c1).abs());
        worst = worst.max((w.alpha0 * c0 + w.alpha1 * c1 - (c0 + c1)).abs());
    }

    // Worked case: 90 zeros and 10 ones in a 10x10 target.
    let mut a = Matrix::zeros(10, 10);
    for j in 0..10 {
        a.set(0, j, 1.0);
    }
    let w = compute_alphas(&a);
    let worked = (w.alpha0 - 0.5556).abs() < 5e-5 && w.alpha1 == 5.0;

    let pass = worst <= 1e-9 && worked;
    report(
        2,
        pass,
        &format!(
            "worst identity residual {worst:.2e} over 64 graphs; worked case α0={:.4}, α1={}",
            w.alpha0, w.alpha1
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 3 and 4: the reference training runs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_cross_loss_below_self_and_positive_diagonal() {
    let t = trained();
    let cross_bce = t.cross_final_loss;
    let self_bce = t.self_final_loss;

    let mut diag_pos = 0usize;
    let mut diag_all = 0usize;
    for g in &t.set.graphs {
        let logits = t.cross.reconstruct(g).unwrap();
        for i in 0..g.n() {
            diag_all += 1;
            if logits.get(i, i) > 0.0 {
                diag_pos += 1;
            }
        }
    }
    let diag_rate = diag_pos as f64 / diag_all as f64;

    let pass = cross_bce < self_bce && diag_rate >= 0.95;
    report(
        3,
        pass,
        &format!(
            "final mean loss cross {cross_bce:.4} vs self {self_bce:.4}; diagonal logits positive {:.2}% (need ≥95%)",
            diag_rate * 100.0
        ),
    );
}

#[test]
fn criterion_04_training_auc_floor_and_kernel_ordering() {
    let t = trained();
    let cross_auc = evaluate(&t.cross, &t.set, 0.5).unwrap().mean_auc.unwrap();
    let self_auc = evaluate(&t.self_model, &t.set, 0.5).unwrap().mean_auc.unwrap();
    let pass = cross_auc >= 0.98 && cross_auc >= self_auc;
    report(
        4,
        pass,
        &format!("training AUC cross {cross_auc:.4} (floor 0.98) vs self {self_auc:.4}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: special symmetric structures.
// ---------------------------------------------------------------------------

fn sym_adj(n: usize, edges: &[(usize, usize)]) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in edges {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    a
}

/// Four self-loop-free undirected fixtures with mirrored node pairs (the
/// island graph instead carries an isolated node). Features identify node
/// orbits, never individual pair members.
fn special_fixtures() -> Vec<(&'static str, Graph)> {
    let axis5 = Graph::new(
        0,
        Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ]),
        sym_adj(5, &[(0, 1), (0, 2), (1, 3), (1, 4), (2, 3), (2, 4)]),
        false,
        None,
    )
    .unwrap();
    let cycle4 = Graph::new(
        1,
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]),
        sym_adj(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]),
        false,
        None,
    )
    .unwrap();
    let mut star_x = vec![vec![1.0, 0.0]];
    star_x.extend(std::iter::repeat(vec![0.0, 1.0]).take(6));
    let star7 = Graph::new(
        2,
        Matrix::from_rows(&star_x),
        sym_adj(7, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6)]),
        false,
        None,
    )
    .unwrap();
    let island6 = Graph::new(
        3,
        Matrix::identity(6),
        sym_adj(6, &[(0, 1), (1, 2), (2, 3), (3, 4)]),
        false,
        None,
    )
    .unwrap();
    vec![("axis5", axis5), ("cycle4", cycle4), ("star7", star7), ("island6", island6)]
}

#[test]
fn criterion_05_symmetric_structures_cross_learns_self_cannot() {
    let mut details = Vec::new();
    let mut pass = true;

    for (name, g) in special_fixtures() {
        assert!((0..g.n()).all(|i| g.adjacency.get(i, i) == 0.0), "{name} must be self-loop-free");
        let pairs = find_mirror_pairs(&g);

        // Trained cross kernel reaches exact recovery.
        let cfg = ModelConfig {
            input_dim: g.features.cols(),
            hidden_dim: 16,
            depth: 2,
            pooling_ratios: vec![1.0, 1.0],
            skip_mode: SkipMode::Add,
            kernel: Kernel::Cross,
        };
        let set = GraphSet::new(name, vec![g.clone()]).unwrap();
        let mut model = GraphCrocModel::new(cfg.clone(), 17).unwrap();
        train(&mut model, &set, &TrainConfig::new(3000, 1e-2, 17)).unwrap();
        let row = &evaluate(&model, &set, 0.5).unwrap().per_graph[0];
        if !(row.exact && row.wl_pass) {
            pass = false;
        }

        // Self kernel structurally predicts self-loops everywhere and edges
        // inside every mirrored pair, whatever the parameters.
        let self_cfg = ModelConfig { kernel: Kernel::SelfCorr, ..cfg };
        let mut cert_ok = true;
        for init in 0..10u64 {
            let m = GraphCrocModel::new(self_cfg.clone(), 1000 + init).unwrap();
            let z = m.encode(&g).unwrap().z;
            let pred = predict_edges(&m.reconstruct(&g).unwrap(), 0.5).unwrap();
            cert_ok &= (0..g.n()).all(|i| pred.get(i, i) == 1.0);
            for &(i, j) in &pairs {
                cert_ok &= pred.get(i, j) == 1.0;
                let drift = (0..z.cols()).map(|k| (z.get(i, k) - z.get(j, k)).abs()).fold(0.0, f64::max);
                cert_ok &= drift <= 1e-9;
            }
        }
        if !cert_ok {
            pass = false;
        }
        details.push(format!(
            "{name}: exact={} wl={} pairs={} self-certificates={}",
            row.exact,
            row.wl_pass,
            pairs.len(),
            cert_ok
        ));
    }
    report(5, pass, &details.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 6: directed reconstruction.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_directed_subgraphs_cross_succeeds_self_capped() {
    let host = make_synthetic(&SyntheticSpec {
        kind: SyntheticKind::DirectedRandom,
        n: 40,
        edge_prob: 0.18,
        seed: 33,
    })
    .unwrap();
    let train_set = sample_subgraphs(&host, 400, (15, 17), 5).unwrap();
    let test_set = sample_subgraphs(&host, 200, (15, 17), 1009).unwrap();
    assert_eq!(test_set.len(), 200);

    let mut aucs = Vec::new();
    let mut self_symmetric = true;
    for kernel in [Kernel::Cross, Kernel::SelfCorr] {
        let cfg = ModelConfig {
            input_dim: train_set.feature_dim,
            hidden_dim: 64,
            depth: 2,
            pooling_ratios: vec![1.0, 1.0],
            skip_mode: SkipMode::Add,
            kernel,
        };
        let mut model = GraphCrocModel::new(cfg, 17).unwrap();
        let mut tc = TrainConfig::new(300, 1e-2, 17);
        tc.weight_decay = 0.0;
        train(&mut model, &train_set, &tc).unwrap();
        aucs.push(evaluate(&model, &test_set, 0.5).unwrap().mean_auc.unwrap());

        if matches!(kernel, Kernel::SelfCorr) {
            // The structural reason for the cap: a Gram-matrix decoder emits
            // symmetric scores, so ordered pairs (i,j) and (j,i) always tie.
            for g in test_set.graphs.iter().take(5) {
                let logits = model.reconstruct(g).unwrap();
                for i in 0..g.n() {
                    for j in 0..g.n() {
                        if (logits.get(i, j) - logits.get(j, i)).abs() > 1e-9 {
                            self_symmetric = false;
                        }
                    }
                }
            }
        }
    }

    let (cross_auc, self_auc) = (aucs[0], aucs[1]);
    let pass = cross_auc >= 0.95 && self_auc < 0.95 && self_symmetric;
    report(
        6,
        pass,
        &format!(
            "directed test AUC cross {cross_auc:.4} (floor 0.95) vs self {self_auc:.4}; self logits symmetric: {self_symmetric}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: sign-system feasibility certificates.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_sign_system_certificates() {
    // Self mode, one dimension, negative off-diagonal: the sign-product
    // certificate proves infeasibility.
    let mut neg_tri = Matrix::filled(3, 3, -1.0);
    for i in 0..3 {
        neg_tri.set(i, i, 1.0);
    }
    let cs = ConstraintSystem::new(neg_tri, ConstraintMode::SelfCorr).unwrap();
    let proven = matches!(
        brute_force_feasibility(&cs, 1, 40, 9).unwrap(),
        Feasibility::ProvenInfeasible { .. }
    );

    // Two dimensions: every enumerated symmetric system is realizable by the
    // two-branch decoder, and every diagonal-positive pair system by the
    // single-branch one.
    let mut cross_d2_ok = 0usize;
    let all_sym = enumerate_symmetric_sign_systems(3).unwrap();
    let total_sym = all_sym.len();
    for signs in all_sym {
        let cs = ConstraintSystem::new(signs, ConstraintMode::Cross).unwrap();
        if let Feasibility::Feasible(w) = brute_force_feasibility(&cs, 2, 40, 9).unwrap() {
            if cs.satisfied_by(&w) {
                cross_d2_ok += 1;
            }
        }
    }
    let mut self_d2_ok = 0usize;
    let pair_systems = enumerate_pair_sign_systems(3).unwrap();
    let total_pairs = pair_systems.len();
    for signs in pair_systems {
        let cs = ConstraintSystem::new(signs, ConstraintMode::SelfCorr).unwrap();
        if let Feasibility::Feasible(w) = brute_force_feasibility(&cs, 2, 40, 9).unwrap() {
            if cs.satisfied_by(&w) {
                self_d2_ok += 1;
            }
        }
    }

    // Cross mode handles the all-negative system, diagonal included, in one
    // dimension.
    let all_neg = Matrix::filled(3, 3, -1.0);
    let cs = ConstraintSystem::new(all_neg, ConstraintMode::Cross).unwrap();
    let cross_d1 = match brute_force_feasibility(&cs, 1, 40, 9).unwrap() {
        Feasibility::Feasible(w) => cs.satisfied_by(&w),
        _ => false,
    };

    let pass =
        proven && cross_d2_ok == total_sym && total_sym == 64 && self_d2_ok == total_pairs && cross_d1;
    report(
        7,
        pass,
        &format!(
            "negative triangle proven infeasible: {proven}; cross d=2 feasible {cross_d2_ok}/{total_sym}; self d=2 pair systems {self_d2_ok}/{total_pairs}; cross d=1 all-negative witness: {cross_d1}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: WL test vs brute-force isomorphism.
// ---------------------------------------------------------------------------

fn circulant(n: usize, jumps: &[usize]) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for &j in jumps {
            a.set(i, (i + j) % n, 1.0);
            a.set((i + j) % n, i, 1.0);
        }
    }
    a
}

#[test]
fn criterion_08_wl_matches_brute_force() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let mut agreements = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(3..=7);
        let p = rng.gen_range(0.2..0.8);
        let a1 = make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::ErdosRenyi,
            n,
            edge_prob: p,
            seed: rng.gen(),
        })
        .unwrap()
        .adjacency;
        let a2 = if rng.gen_bool(0.5) {
            // A random relabeling of the same graph.
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let mut b = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    b.set(perm[i], perm[j], a1.get(i, j));
                }
            }
            b
        } else {
            make_synthetic(&SyntheticSpec {
                kind: SyntheticKind::ErdosRenyi,
                n,
                edge_prob: p,
                seed: rng.gen(),
            })
            .unwrap()
            .adjacency
        };
        if wl_test(&a1, &a2, n) == brute_force_isomorphic(&a1, &a2) {
            agreements += 1;
        }
    }

    // The documented blind spot, excluded from the sample above by its size:
    // two 4-regular circulants on 8 nodes that color refinement cannot split
    // (one has triangles, the other none).
    let c8_12 = circulant(8, &[1, 2]);
    let c8_13 = circulant(8, &[1, 3]);
    let blind_wl = wl_test(&c8_12, &c8_13, 8);
    let blind_bf = brute_force_isomorphic(&c8_12, &c8_13);

    let pass = agreements == 200 && blind_wl && !blind_bf;
    report(
        8,
        pass,
        &format!(
            "agreement on {agreements}/200 random pairs (n ≤ 7); blind circulant pair: wl={blind_wl}, brute force={blind_bf}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: decoder branch divergence.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_branches_diverge() {
    let t = trained();
    let mut cosines = Vec::new();
    for g in &t.set.graphs {
        let pass = t.cross.forward_graph(g, ParamFilter::Frozen).unwrap();
        let p = pass.tape.value(pass.out.p);
        let q = pass.tape.value(pass.out.q);
        cosines.extend(cosine_divergence(p, q).into_iter().flatten());
    }
    cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = cosines[cosines.len() / 2];
    let pass = median < 0.8;
    report(9, pass, &format!("median per-node cosine(p, q) {median:.4} (bound 0.8)"));
}

// ---------------------------------------------------------------------------
// Criterion 10: latent-space attack properties.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_pgd_beats_random_within_budget() {
    // The autoencoder pretrains on the whole labeled set (reconstruction
    // needs no labels); "test graphs" are the classifier's held-out split.
    let set = protein_like_set(110, 3).unwrap();
    let cfg = ModelConfig {
        input_dim: 3,
        hidden_dim: 64,
        depth: 3,
        pooling_ratios: vec![1.0, 0.7, 1.0],
        skip_mode: SkipMode::Add,
        kernel: Kernel::Cross,
    };
    let mut model = GraphCrocModel::new(cfg, 17).unwrap();
    train(&mut model, &set, &TrainConfig::new(200, 1e-3, 17)).unwrap();
    let mut head = ClassifierHead::new(64, 2, 5).unwrap();
    train_classifier(&mut model, &mut head, &set, 300, ClassifierMode::Finetune, 1e-3, 11).unwrap();
    let (_, targets) = split(&set, 0.8, 11).unwrap();

    let atk = AttackConfig { epsilon: 100.0, seed: 3, finetune_steps: 0, ..AttackConfig::default() };
    let pgd = attack_set(&model, &head, &targets, AttackMethod::Pgd, &atk, 1).unwrap();
    let rnd = attack_set(&model, &head, &targets, AttackMethod::Random, &atk, 1).unwrap();

    let mut invariants_ok = true;
    for results in [&pgd, &rnd] {
        for (r, g) in results.iter().zip(&targets.graphs) {
            invariants_ok &= r.queries.total() <= atk.query_budget;
            invariants_ok &= r.perturbation_l1 <= atk.epsilon + 1e-9;
            invariants_ok &= (0.0..=1.0).contains(&r.delta_edge);
            invariants_ok &= r.adversarial.features.as_slice() == g.features.as_slice();
        }
    }
    let rate = |rs: &[graphcroc::attack::AttackResult]| {
        rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64
    };
    let (pgd_rate, rnd_rate) = (rate(&pgd), rate(&rnd));

    let pass = targets.len() >= 20 && pgd_rate >= rnd_rate && invariants_ok;
    report(
        10,
        pass,
        &format!(
            "{} test graphs, ε=100, budget 400: PGD success {pgd_rate:.3} vs random {rnd_rate:.3}; budget/norm/edge/feature invariants: {invariants_ok}",
            targets.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: CLI manifest replay determinism.
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) {
    let mut full = vec!["graphcroc"];
    full.extend_from_slice(args);
    let code = graphcroc::cli::run(full.iter().map(|s| s.to_string()));
    assert_eq!(code, 0, "command failed: {args:?}");
}

/// Every regular file in the directory, keyed by name. Output dirs here are
/// flat, so no recursion is needed.
fn dir_contents(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

#[test]
fn criterion_11_cli_manifest_replay_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let path = |name: &str| root.path().join(name).to_string_lossy().into_owned();
    let mut checked = Vec::new();

    // Each command runs once from flags, then again from its own manifest;
    // both runs must produce identical bytes for every artifact.
    let mut replay = |command: &str, out: &str, args: &[&str]| {
        let first = path(out);
        let second = path(&format!("{out}-replay"));
        let mut argv = vec![command, "--out", &first];
        argv.extend_from_slice(args);
        run_cli(&argv);
        let manifest = format!("{first}/manifest.json");
        run_cli(&[command, "--config", &manifest, "--out", &second]);
        let a = dir_contents(std::path::Path::new(&first));
        let b = dir_contents(std::path::Path::new(&second));
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "{command} artifact lists differ"
        );
        for (name, bytes) in &a {
            assert_eq!(Some(bytes), b.get(name).as_deref(), "{command}: {name} differs on replay");
        }
        checked.push(format!("{command} ({} files)", a.len()));
    };

    let data_dir = path("dataset");
    replay(
        "synth",
        "dataset",
        &["--seed", "9", "--set", "synth.kind=protein-like", "--set", "synth.count=6", "--set", "synth.name=acc"],
    );
    let dataset_args =
        ["--set", &format!("dataset.dir={data_dir}"), "--set", "dataset.name=acc"];

    let train_out = path("train");
    replay(
        "train",
        "train",
        &[
            dataset_args[0],
            dataset_args[1],
            dataset_args[2],
            dataset_args[3],
            "--seed",
            "5",
            "--set",
            "train.epochs=2",
            "--set",
            "model.hidden_dim=8",
            "--set",
            "model.ratios=1,1",
        ],
    );
    let checkpoint = format!("{train_out}/checkpoint.bin");
    let checkpoint_arg = format!("eval.checkpoint={checkpoint}");

    replay(
        "eval",
        "eval",
        &[dataset_args[0], dataset_args[1], dataset_args[2], dataset_args[3], "--set", &checkpoint_arg],
    );
    replay("wltest", "wltest", &["--seed", "3", "--set", "wl.pairs=12", "--set", "wl.max_nodes=6"]);
    replay(
        "theory",
        "theory",
        &[
            "--seed",
            "4",
            "--set",
            "theory.trials=40",
            "--set",
            "theory.sweep_cases=5",
            "--set",
            "theory.graphs=2",
            "--set",
            "theory.models=1",
        ],
    );
    replay(
        "classify",
        "classify",
        &[
            dataset_args[0],
            dataset_args[1],
            dataset_args[2],
            dataset_args[3],
            "--set",
            &checkpoint_arg,
            "--set",
            "classifier.epochs=3",
        ],
    );
    replay(
        "attack",
        "attack",
        &[
            dataset_args[0],
            dataset_args[1],
            dataset_args[2],
            dataset_args[3],
            "--set",
            &checkpoint_arg,
            "--set",
            "classifier.epochs=2",
            "--set",
            "attack.steps=3",
            "--set",
            "attack.query_budget=30",
            "--set",
            "attack.finetune_steps=2",
            "--set",
            "attack.methods=random,pgd",
        ],
    );

    report(11, true, &format!("replayed byte-identically: {}", checked.join(", ")));
}
