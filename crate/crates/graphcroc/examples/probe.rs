use std::time::Instant;

use graphcroc::attack::{
    attack_set, train_classifier, AttackConfig, AttackMethod, ClassifierHead, ClassifierMode,
};
use graphcroc::data::synthetic::{make_synthetic, protein_like_set, SyntheticKind, SyntheticSpec};
use graphcroc::data::{find_mirror_pairs, sample_subgraphs, split, GraphSet};
use graphcroc::layers::SkipMode;
use graphcroc::metrics::{evaluate, graph_auc};
use graphcroc::model::{GraphCrocModel, Kernel, ModelConfig, ParamFilter};
use graphcroc::train::{train, TrainConfig};

fn proteins_config(kernel: Kernel) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        hidden_dim: 128,
        depth: 7,
        pooling_ratios: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 1.0],
        skip_mode: SkipMode::Add,
        kernel,
    }
}

fn main() {
    let stage = std::env::args().nth(1).unwrap_or_else(|| "time".into());
    match stage.as_str() {
        "time" => time_proteins(),
        "special" => special_structures(),
        "diag" => diagnose(),
        "gen2" => gen2_probe(),
        "directed" => directed(),
        "attack" => attack_probe(),
        "attack2" => attack2_probe(),
        "c7" => c7_probe(),
        other => eprintln!("unknown stage {other}"),
    }
}

fn time_proteins() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let wd: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(0.0);
    let seed: u64 = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(7);
    let data_seed: u64 = args.get(5).map(|v| v.parse().unwrap()).unwrap_or(1);
    let set = protein_like_set(64, data_seed).unwrap();
    let mut results = Vec::new();
    for kernel in [Kernel::Cross, Kernel::SelfCorr] {
        let mut model = GraphCrocModel::new(proteins_config(kernel), seed).unwrap();
        let mut tc = TrainConfig::new(epochs, 1e-3, seed);
        tc.weight_decay = wd;
        let t = Instant::now();
        let trace = train(&mut model, &set, &tc).unwrap();
        let report = evaluate(&model, &set, 0.5).unwrap();
        let final_bce = *trace.epoch_losses.last().unwrap() / set.graphs.len() as f64;
        let mut diag_pos = 0usize;
        let mut diag_all = 0usize;
        for g in &set.graphs {
            let logits = model.reconstruct(g).unwrap();
            for i in 0..g.n() {
                diag_all += 1;
                if logits.get(i, i) > 0.0 {
                    diag_pos += 1;
                }
            }
        }
        println!(
            "{kernel:?}: mean BCE {final_bce:.4} train AUC {:.4} diag+ {:.4} ({:.0}s)",
            report.mean_auc.unwrap(),
            diag_pos as f64 / diag_all as f64,
            t.elapsed().as_secs_f64()
        );
        results.push((final_bce, report.mean_auc.unwrap()));
    }
    println!(
        "cross<self BCE: {} | cross AUC>=0.98: {} | cross>=self AUC: {}",
        results[0].0 < results[1].0,
        results[0].1 >= 0.98,
        results[0].1 >= results[1].1
    );
}

fn auc(pairs: &mut Vec<(f64, bool)>) -> f64 {
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return f64::NAN;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    let mut rank = 1.0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let avg_rank = (rank + rank + (j - i) as f64 - 1.0) / 2.0;
        for k in i..j {
            if pairs[k].1 {
                rank_sum += avg_rank;
            }
        }
        rank += (j - i) as f64;
        i = j;
    }
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

fn diagnose() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let wd: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(1e-2);
    let seed: u64 = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(7);
    let mut set = protein_like_set(64, 1).unwrap();
    if args.get(5).map(String::as_str) == Some("tertile") {
        use graphcroc::matrix::Matrix;
        for g in &mut set.graphs {
            let n = g.n();
            let mut deg: Vec<(usize, f64)> = (0..n)
                .map(|i| (i, (0..n).filter(|&j| j != i && g.adjacency.get(i, j) > 0.5).count() as f64))
                .collect();
            let mut sorted: Vec<f64> = deg.iter().map(|d| d.1).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let t1 = sorted[n / 3];
            let t2 = sorted[2 * n / 3];
            let mut x = Matrix::zeros(n, 3);
            for &(i, d) in &deg {
                let c = if d <= t1 { 0 } else if d <= t2 { 1 } else { 2 };
                x.set(i, c, 1.0);
            }
            deg.clear();
            g.features = x;
        }
    }
    let mut model = GraphCrocModel::new(proteins_config(Kernel::Cross), seed).unwrap();
    let mut tc = TrainConfig::new(epochs, 1e-3, seed);
    tc.weight_decay = wd;
    let t = Instant::now();
    train(&mut model, &set, &tc).unwrap();
    println!("trained in {:.0}s", t.elapsed().as_secs_f64());

    let report = evaluate(&model, &set, 0.5).unwrap();
    let mut aucs: Vec<f64> = report.per_graph.iter().map(|g| g.auc.unwrap()).collect();
    aucs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "per-graph AUC: min {:.4} q25 {:.4} med {:.4} max {:.4} mean {:.4}",
        aucs[0],
        aucs[aucs.len() / 4],
        aucs[aucs.len() / 2],
        aucs[aucs.len() - 1],
        report.mean_auc.unwrap()
    );

    let mut kk = Vec::new();
    let mut kd = Vec::new();
    let mut dd = Vec::new();
    let mut diag = Vec::new();
    for g in &set.graphs {
        let code = model.encode(g).unwrap();
        let mut kept: Vec<usize> = (0..g.n()).collect();
        for rec in &code.records {
            kept = rec.kept_idx.iter().map(|&k| kept[k]).collect();
        }
        let survives: Vec<bool> = {
            let mut v = vec![false; g.n()];
            for &i in &kept {
                v[i] = true;
            }
            v
        };
        let logits = model.reconstruct(g).unwrap();
        for i in 0..g.n() {
            for j in 0..g.n() {
                let entry = (logits.get(i, j), g.adjacency.get(i, j) > 0.5);
                if i == j {
                    diag.push(entry);
                } else {
                    match (survives[i], survives[j]) {
                        (true, true) => kk.push(entry),
                        (false, false) => dd.push(entry),
                        _ => kd.push(entry),
                    }
                }
            }
        }
    }
    println!(
        "micro-AUC kept-kept {:.4} ({}) kept-drop {:.4} ({}) drop-drop {:.4} ({}) diag-pos-rate {:.4}",
        auc(&mut kk),
        kk.len(),
        auc(&mut kd),
        kd.len(),
        auc(&mut dd),
        dd.len(),
        diag.iter().filter(|e| e.0 > 0.0).count() as f64 / diag.len() as f64
    );
}

fn gen2_set(count: usize, seed: u64) -> GraphSet {
    protein_like_set(count, seed).unwrap()
}


fn gen2_probe() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let wd: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(1e-2);
    let seed: u64 = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(7);
    let data_seed: u64 = args.get(5).map(|v| v.parse().unwrap()).unwrap_or(1);
    let set = gen2_set(64, data_seed);
    let mean_n = set.graphs.iter().map(|g| g.n()).sum::<usize>() as f64 / 64.0;
    let mean_deg = set
        .graphs
        .iter()
        .map(|g| {
            let n = g.n();
            (0..n)
                .map(|i| (0..n).filter(|&j| j != i && g.adjacency.get(i, j) > 0.5).count())
                .sum::<usize>() as f64
                / n as f64
        })
        .sum::<f64>()
        / 64.0;
    println!("gen2: mean n {mean_n:.1} mean degree {mean_deg:.2}");
    let mut summary = Vec::new();
    for kernel in [Kernel::Cross, Kernel::SelfCorr] {
        let mut model = GraphCrocModel::new(proteins_config(kernel), seed).unwrap();
        let mut tc = TrainConfig::new(epochs, 1e-3, seed);
        tc.weight_decay = wd;
        let t = Instant::now();
        let trace = train(&mut model, &set, &tc).unwrap();
        let report = evaluate(&model, &set, 0.5).unwrap();
        let bce = trace.epoch_losses.last().unwrap() / 64.0;
        println!(
            "{kernel:?}: BCE {bce:.4} mean AUC {:.4} min {:.4} diag+ {:.4} ({:.0}s)",
            report.mean_auc.unwrap(),
            report.per_graph.iter().map(|g| g.auc.unwrap()).fold(f64::INFINITY, f64::min),
            report.mean_diag_positive_rate,
            t.elapsed().as_secs_f64()
        );
        if matches!(kernel, Kernel::Cross) {
            use graphcroc::model::ParamFilter;
            let mut cosines = Vec::new();
            for g in &set.graphs {
                let pass = model.forward_graph(g, ParamFilter::Frozen).unwrap();
                let p = pass.tape.value(pass.out.p);
                let q = pass.tape.value(pass.out.q);
                for c in graphcroc::metrics::cosine_divergence(p, q).into_iter().flatten() {
                    cosines.push(c);
                }
            }
            cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("cross median cosine(p,q): {:.4}", cosines[cosines.len() / 2]);
        }
        summary.push((bce, report.mean_auc.unwrap()));
    }
    println!(
        "cross BCE < self BCE: {} | cross AUC >= 0.98: {} | cross AUC >= self AUC: {}",
        summary[0].0 < summary[1].0,
        summary[0].1 >= 0.98,
        summary[0].1 >= summary[1].1
    );
}

fn special_structures() {
    for (name, g) in fixtures() {
        let pairs = find_mirror_pairs(&g);
        let cfg = ModelConfig {
            input_dim: g.features.cols(),
            hidden_dim: 16,
            depth: 2,
            pooling_ratios: vec![1.0, 1.0],
            skip_mode: SkipMode::Add,
            kernel: Kernel::Cross,
        };
        for seed in [3u64, 5, 11, 17, 23] {
            let set = GraphSet::new(name, vec![g.clone()]).unwrap();
            let mut model = GraphCrocModel::new(cfg.clone(), seed).unwrap();
            let t = Instant::now();
            let trace = train(&mut model, &set, &TrainConfig::new(3000, 1e-2, seed)).unwrap();
            let report = evaluate(&model, &set, 0.5).unwrap();
            println!(
                "{name}: n={} pairs={} seed={seed} final={:.4} exact={} wl={} ({:.1}s)",
                g.n(),
                pairs.len(),
                trace.epoch_losses.last().unwrap(),
                report.per_graph[0].exact,
                report.per_graph[0].wl_pass,
                t.elapsed().as_secs_f64()
            );
        }
    }
}

fn attack2_probe() {
    use graphcroc::data::split;
    let args: Vec<String> = std::env::args().collect();
    let recon_epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let cls_epochs: usize = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(300);

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
    let t = Instant::now();
    train(&mut model, &set, &TrainConfig::new(recon_epochs, 1e-3, 17)).unwrap();
    let train_auc = evaluate(&model, &set, 0.5).unwrap().mean_auc.unwrap();
    println!("recon: {recon_epochs} epochs, whole-set AUC {train_auc:.4} ({:.0}s)", t.elapsed().as_secs_f64());

    let mut head = ClassifierHead::new(64, 2, 5).unwrap();
    let report =
        train_classifier(&mut model, &mut head, &set, cls_epochs, ClassifierMode::Finetune, 1e-3, 11)
            .unwrap();
    println!(
        "classifier: train {:.3} test {:.3} majority {:.3}",
        report.train_accuracy, report.test_accuracy, report.majority_rate
    );

    let (_, targets) = split(&set, 0.8, 11).unwrap();
    let mut clean_ok = 0usize;
    let mut l1 = 0.0;
    for g in &targets.graphs {
        if Some(graphcroc::attack::classify(&model, &head, g).unwrap()) == g.label {
            clean_ok += 1;
        }
        l1 += model.encode(g).unwrap().z.as_slice().iter().map(|v| v.abs()).sum::<f64>();
    }
    println!(
        "targets: {} graphs, clean acc {:.3}, mean ||z||_1 {:.1}",
        targets.len(),
        clean_ok as f64 / targets.len() as f64,
        l1 / targets.len() as f64
    );

    let ft_steps: usize = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(20);
    let ft_lr: f64 = args.get(5).map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    for eps in [0.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0] {
        let cfg = AttackConfig {
            epsilon: eps,
            seed: 3,
            finetune_steps: ft_steps,
            finetune_lr: ft_lr,
            ..AttackConfig::default()
        };
        let t = Instant::now();
        let pgd = attack_set(&model, &head, &targets, AttackMethod::Pgd, &cfg, 1).unwrap();
        let rnd = attack_set(&model, &head, &targets, AttackMethod::Random, &cfg, 1).unwrap();
        let cw_cfg = AttackConfig { c: 5.0, ..cfg.clone() };
        let cw = attack_set(&model, &head, &targets, AttackMethod::Cw, &cw_cfg, 1).unwrap();
        let rate = |rs: &[graphcroc::attack::AttackResult]| {
            rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64
        };
        let mean_delta = |rs: &[graphcroc::attack::AttackResult]| {
            rs.iter().map(|r| r.delta_edge).sum::<f64>() / rs.len() as f64
        };
        println!(
            "eps {eps}: pgd {:.3} (d {:.3}) random {:.3} (d {:.3}) cw {:.3} (d {:.3}) q<=400 {} ({:.0}s)",
            rate(&pgd),
            mean_delta(&pgd),
            rate(&rnd),
            mean_delta(&rnd),
            rate(&cw),
            mean_delta(&cw),
            pgd.iter().all(|r| r.queries.total() <= 400),
            t.elapsed().as_secs_f64()
        );
    }
}

fn c7_probe() {
    use graphcroc::theory::{
        brute_force_feasibility, enumerate_pair_sign_systems, enumerate_symmetric_sign_systems,
        ConstraintMode, ConstraintSystem, Feasibility,
    };
    let t = Instant::now();
    let mut bad = 0;
    for (i, signs) in enumerate_symmetric_sign_systems(3).unwrap().into_iter().enumerate() {
        let cs = ConstraintSystem::new(signs, ConstraintMode::Cross).unwrap();
        let fea = brute_force_feasibility(&cs, 2, 40, 9).unwrap();
        if !fea.is_feasible() {
            println!("cross d2 system {i} NOT feasible");
            bad += 1;
        }
    }
    println!("cross d2: {bad} failures over 64 ({:.1}s)", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let mut bad = 0;
    for (i, signs) in enumerate_pair_sign_systems(3).unwrap().into_iter().enumerate() {
        let cs = ConstraintSystem::new(signs, ConstraintMode::SelfCorr).unwrap();
        let fea = brute_force_feasibility(&cs, 2, 40, 9).unwrap();
        if !fea.is_feasible() {
            println!("self d2 pair system {i} NOT feasible");
            bad += 1;
        }
    }
    println!("self d2 pairs: {bad} failures over 8 ({:.1}s)", t.elapsed().as_secs_f64());
    let neg = graphcroc::matrix::Matrix::filled(3, 3, -1.0);
    let cs = ConstraintSystem::new(neg, ConstraintMode::Cross).unwrap();
    match brute_force_feasibility(&cs, 1, 40, 9).unwrap() {
        Feasibility::Feasible(w) => println!("cross d1 all-neg: witness ok {}", cs.satisfied_by(&w)),
        other => println!("cross d1 all-neg: {other:?}"),
    }
}

fn fixtures() -> Vec<(&'static str, graphcroc::data::Graph)> {
    use graphcroc::data::Graph;
    use graphcroc::matrix::Matrix;

    let sym = |n: usize, edges: &[(usize, usize)]| {
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    };

    // Quotient path a-b-c expanded: axis node 0, pair (1,2), pair (3,4).
    let axis5 = Graph::new(
        0,
        Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ]),
        sym(5, &[(0, 1), (0, 2), (1, 3), (1, 4), (2, 3), (2, 4)]),
        false,
        None,
    )
    .unwrap();

    // Four-cycle with opposite corners mirrored; features mark the two orbits.
    let cycle4 = Graph::new(
        1,
        Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]),
        sym(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]),
        false,
        None,
    )
    .unwrap();

    // Star: pivot 0 plus six interchangeable satellites.
    let mut star_x = vec![vec![1.0, 0.0]];
    star_x.extend(std::iter::repeat(vec![0.0, 1.0]).take(6));
    let star7 = Graph::new(
        2,
        Matrix::from_rows(&star_x),
        sym(7, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6)]),
        false,
        None,
    )
    .unwrap();

    // A path on five nodes plus one isolated island.
    let island6 = Graph::new(
        3,
        Matrix::identity(6),
        sym(6, &[(0, 1), (1, 2), (2, 3), (3, 4)]),
        false,
        None,
    )
    .unwrap();

    for (name, g) in [("axis5", &axis5), ("cycle4", &cycle4), ("star7", &star7), ("island6", &island6)] {
        println!(
            "{name}: n={} edges={} pairs={} diag0={}",
            g.n(),
            g.edge_entries(),
            find_mirror_pairs(g).len(),
            (0..g.n()).all(|i| g.adjacency.get(i, i) == 0.0)
        );
    }
    vec![("axis5", axis5), ("cycle4", cycle4), ("star7", star7), ("island6", island6)]
}

fn directed() {
    let host_n: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(40);
    let host = make_synthetic(&SyntheticSpec {
        kind: SyntheticKind::DirectedRandom,
        n: host_n,
        edge_prob: 0.18,
        seed: 33,
    })
    .unwrap();
    let train_set = sample_subgraphs(&host, 400, (15, 17), 5).unwrap();
    let test_set = sample_subgraphs(&host, 200, (15, 17), 1009).unwrap();
    println!("train {} / test {}, feature_dim {}", train_set.len(), test_set.len(), train_set.feature_dim);

    let epochs: usize =
        std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
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
        let t = Instant::now();
        let mut tc = TrainConfig::new(epochs, lr, 17);
        tc.weight_decay = 0.0;
        let trace = train(&mut model, &train_set, &tc).unwrap();
        let mut aucs = Vec::new();
        for g in &test_set.graphs {
            let logits = model.reconstruct(g).unwrap();
            if let Some(a) = graph_auc(&logits, &g.adjacency, true) {
                aucs.push(a);
            }
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!(
            "{kernel:?}: final loss {:.4}, test AUC mean {mean:.4}, min {:.4}, max {:.4} ({:.0}s)",
            trace.epoch_losses.last().unwrap(),
            aucs.iter().cloned().fold(f64::INFINITY, f64::min),
            aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            t.elapsed().as_secs_f64()
        );
    }
}

fn attack_probe() {
    let args: Vec<String> = std::env::args().collect();
    let recon_epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let cls_mode = if args.get(3).map(String::as_str) == Some("finetune") {
        ClassifierMode::Finetune
    } else {
        ClassifierMode::Full
    };
    let cls_epochs: usize = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(60);

    let set = protein_like_set(64, 1).unwrap();
    let mut model = GraphCrocModel::new(proteins_config(Kernel::Cross), 17).unwrap();
    let t = Instant::now();
    train(&mut model, &set, &TrainConfig::new(recon_epochs, 1e-3, 17)).unwrap();
    let train_auc = evaluate(&model, &set, 0.5).unwrap().mean_auc.unwrap();
    println!(
        "recon: {recon_epochs} epochs, train AUC {train_auc:.4} ({:.0}s)",
        t.elapsed().as_secs_f64()
    );

    let mut head = ClassifierHead::new(128, 2, 5).unwrap();
    let report =
        train_classifier(&mut model, &mut head, &set, cls_epochs, cls_mode, 1e-3, 11).unwrap();
    println!(
        "classifier {cls_mode:?} {cls_epochs}ep: train {:.3} test {:.3} majority {:.3}",
        report.train_accuracy, report.test_accuracy, report.majority_rate
    );

    let targets = protein_like_set(24, 77).unwrap();
    let targets = GraphSet::new("targets", targets.graphs).unwrap();
    let test_auc = evaluate(&model, &targets, 0.5).unwrap().mean_auc.unwrap();
    let mut l1 = 0.0;
    let mut abs = 0.0;
    let mut clean_ok = 0usize;
    for g in &targets.graphs {
        let code = model.encode(g).unwrap();
        let z = code.z.as_slice();
        l1 += z.iter().map(|v| v.abs()).sum::<f64>();
        abs += z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
        let pred = graphcroc::attack::classify(&model, &head, g).unwrap();
        if Some(pred) == g.label {
            clean_ok += 1;
        }
    }
    let m = targets.graphs.len() as f64;
    println!(
        "targets: recon AUC {test_auc:.4}, clean acc {:.3}, mean |z| {:.3}, mean ||z||_1 {:.1}",
        clean_ok as f64 / m,
        abs / m,
        l1 / m
    );

    for eps in [0.0, 2.0, 5.0, 10.0, 20.0, 50.0] {
        let cfg = AttackConfig { epsilon: eps, seed: 3, ..AttackConfig::default() };
        let t = Instant::now();
        let pgd = attack_set(&model, &head, &targets, AttackMethod::Pgd, &cfg, 1).unwrap();
        let rnd = attack_set(&model, &head, &targets, AttackMethod::Random, &cfg, 1).unwrap();
        let rate = |rs: &[graphcroc::attack::AttackResult]| {
            rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64
        };
        let mean_delta = |rs: &[graphcroc::attack::AttackResult]| {
            rs.iter().map(|r| r.delta_edge).sum::<f64>() / rs.len() as f64
        };
        println!(
            "eps {eps}: pgd {:.2} (d {:.3}) random {:.2} (d {:.3}) q<=400 {} ({:.0}s)",
            rate(&pgd),
            mean_delta(&pgd),
            rate(&rnd),
            mean_delta(&rnd),
            pgd.iter().all(|r| r.queries.total() <= 400),
            t.elapsed().as_secs_f64()
        );
    }
}
