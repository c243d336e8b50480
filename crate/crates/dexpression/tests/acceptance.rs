//! Acceptance gate: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `--nocapture` to see the lines for passing
//! criteria too.

use dexpression::layers::{
    check_conv, check_fc, check_lrn, check_maxpool, check_relu, softmax, DEFAULT_EPSILON,
    DEFAULT_TOLERANCE,
};
use dexpression::network::{
    build_dexpression, build_dexpression_with, check_network_gradients, infer_shapes,
    DexpressionConfig,
};
use dexpression::synth::generate_synthetic_dataset;
use dexpression::training::{
    cross_entropy, cross_validate, evaluate, make_folds, train, ConfusionMatrix, TrainConfig,
};
use dexpression::frameselect::{
    extract_mmi_style, select_from_scores, window_schedule, FrameSequence,
};
use dexpression::{Shape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, passed: bool, detail: &str) {
    println!("[acceptance] {name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{name}: {detail}");
}

#[test]
fn criterion_shape_conformance() {
    let start = std::time::Instant::now();
    let g = build_dexpression(7).unwrap();
    let inferred = infer_shapes(&g).unwrap();
    let expected: &[(&str, &[usize])] = &[
        ("Data", &[1, 224, 224]),
        ("Convolution 1", &[64, 112, 112]),
        ("ReLU 1", &[64, 112, 112]),
        ("Pooling 1", &[64, 56, 56]),
        ("LRN 1", &[64, 56, 56]),
        ("Convolution 2a", &[96, 56, 56]),
        ("ReLU 2a", &[96, 56, 56]),
        ("Convolution 2b", &[208, 56, 56]),
        ("ReLU 2b", &[208, 56, 56]),
        ("Pooling 2a", &[64, 56, 56]),
        ("Convolution 2c", &[64, 56, 56]),
        ("ReLU 2c", &[64, 56, 56]),
        ("Concat 2", &[272, 56, 56]),
        ("Pooling 2b", &[272, 28, 28]),
        ("Convolution 3a", &[96, 28, 28]),
        ("ReLU 3a", &[96, 28, 28]),
        ("Convolution 3b", &[208, 28, 28]),
        ("ReLU 3b", &[208, 28, 28]),
        ("Pooling 3a", &[272, 28, 28]),
        ("Convolution 3c", &[64, 28, 28]),
        ("ReLU 3c", &[64, 28, 28]),
        ("Concat 3", &[272, 28, 28]),
        ("Pooling 3b", &[272, 14, 14]),
        ("Classifier", &[7]),
        ("Softmax", &[7]),
    ];
    assert_eq!(inferred.len(), expected.len());
    for ((got_name, got_shape), (want_name, want_dims)) in inferred.iter().zip(expected) {
        assert_eq!(got_name, want_name);
        assert_eq!(got_shape.dims(), *want_dims, "at layer {want_name}");
    }
    let elapsed = start.elapsed();
    report(
        "shape conformance",
        elapsed.as_secs() < 1,
        &format!("all {} layer shapes match in {elapsed:?}", expected.len()),
    );
}

#[test]
fn criterion_gradient_correctness() {
    let start = std::time::Instant::now();
    let reports = [
        check_conv(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE),
        check_fc(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE),
        check_lrn(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE),
        check_maxpool(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE),
        check_relu(2, DEFAULT_EPSILON, DEFAULT_TOLERANCE),
    ];
    let mut worst = 0.0f64;
    for r in &reports {
        assert!(r.passed, "{r}");
        worst = worst.max(r.max_rel_err);
    }
    let full = check_network_gradients(2, DEFAULT_EPSILON, 1e-3).unwrap();
    assert!(full.passed, "{full}");
    report(
        "gradient correctness",
        start.elapsed().as_secs() < 120,
        &format!(
            "worst layer rel err {worst:.3e}, end-to-end {:.3e}, in {:?}",
            full.max_rel_err,
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_softmax_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let x: Vec<f32> = (0..7).map(|_| rng.random_range(-12.0..12.0)).collect();
        let s: f32 = softmax(&x).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    // Dyadic values added to a dyadic shift stay exact, so the shifted
    // softmax is bit-identical.
    let x = [0.5f32, -2.25, 1.75, 0.0, 3.5, -0.125, 2.0];
    let shifted: Vec<f32> = x.iter().map(|v| v + 33.25).collect();
    assert_eq!(softmax(&x), softmax(&shifted));
    let uniform_loss: f64 = cross_entropy(&[0.0f64; 7], 3);
    let diff = (uniform_loss - (7.0f64).ln()).abs();
    assert!(diff < 1e-9);
    report("softmax and loss identities", true, &format!("uniform-7 loss off by {diff:.1e}"));
}

#[test]
fn criterion_overfit_capacity_shrunken() {
    let g = build_dexpression_with(&DexpressionConfig::shrunken(2)).unwrap();
    let ds = generate_synthetic_dataset(2, 4, 16, 0.05, 9).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 200,
        batch_size: 8,
        lr_step_interval: 100,
        lr_step_factor: 0.5,
        seed: 1,
        ..TrainConfig::default()
    };
    let trained = train(&g, &ds, &cfg).unwrap();
    let eval = evaluate(&g, &trained.params, &ds).unwrap();
    report(
        "overfit capacity (shrunken graph)",
        eval.accuracy == 1.0,
        &format!("train accuracy {:.0}% on 8 samples", 100.0 * eval.accuracy),
    );
}

#[test]
fn criterion_overfit_capacity_full_size() {
    let start = std::time::Instant::now();
    let g = build_dexpression(2).unwrap();
    let ds = generate_synthetic_dataset(2, 4, 224, 0.05, 9).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 20,
        batch_size: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let trained = train(&g, &ds, &cfg).unwrap();
    let eval = evaluate(&g, &trained.params, &ds).unwrap();
    let elapsed = start.elapsed();
    report(
        "overfit capacity (full-size graph)",
        eval.accuracy == 1.0 && elapsed.as_secs() < 600,
        &format!("train accuracy {:.0}% on 8 samples in {elapsed:?}", 100.0 * eval.accuracy),
    );
}

#[test]
fn criterion_synthetic_crossval_accuracy() {
    let start = std::time::Instant::now();
    let g = build_dexpression(7).unwrap();
    let ds = generate_synthetic_dataset(7, 100, 224, 0.1, 13).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 3,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let result = cross_validate(&g, &ds, &cfg, 10, false).unwrap();
    let elapsed = start.elapsed();
    report(
        "synthetic 10-fold accuracy",
        result.mean_accuracy >= 0.95 && elapsed.as_secs() < 7200,
        &format!("mean accuracy {:.2}% in {elapsed:?}", 100.0 * result.mean_accuracy),
    );
}

#[test]
fn criterion_crossval_hygiene() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let k = rng.random_range(2..=16usize);
        let n = rng.random_range(k..2000usize);
        let plan = make_folds(n, k, rng.random_range(0..u64::MAX)).unwrap();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        for fold in 0..k {
            let test = plan.fold_indices(fold);
            let train_set = plan.train_indices(fold);
            for &i in &test {
                assert!(!train_set.contains(&i), "fold {fold} leaks sample {i}");
                assert!(!seen[i], "sample {i} in two folds");
                seen[i] = true;
            }
            assert_eq!(test.len() + train_set.len(), n);
            sizes.push(test.len());
        }
        assert!(seen.iter().all(|&s| s), "folds do not cover the dataset");
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "fold sizes {sizes:?} differ by more than 1");
    }
    let plan = make_folds(5870, 10, 0).unwrap();
    for fold in 0..10 {
        assert_eq!(plan.fold_indices(fold).len(), 587);
    }
    report("cross-validation hygiene", true, "100 random plans clean; 5870/10 folds of 587");
}

/// Independent replay of the selection procedure: naive maximum filter per
/// round, same accumulation and truncation rules.
fn oracle_select(scores: &[f32], count: usize) -> Vec<usize> {
    let mut selected: Vec<usize> = Vec::new();
    for w in window_schedule(scores.len()) {
        if selected.len() == count {
            break;
        }
        let r = w / 2;
        let mut fresh = Vec::new();
        for t in 0..scores.len() {
            let lo = t.saturating_sub(r);
            let hi = (t + r).min(scores.len() - 1);
            let mut argmax = lo;
            for j in lo..=hi {
                if scores[j] > scores[argmax] {
                    argmax = j;
                }
            }
            if argmax == t && !selected.contains(&t) {
                fresh.push(t);
            }
        }
        let room = count - selected.len();
        if fresh.len() > room {
            fresh.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            fresh.truncate(room);
        }
        selected.extend(fresh);
    }
    selected.sort_unstable();
    selected
}

#[test]
fn criterion_frame_selection() {
    // 30-frame session yields 20 selections minus the 2 earliest.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frames: Vec<Tensor<f32>> = (0..30)
        .map(|_| {
            let data: Vec<f32> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
            Tensor::from_vec(Shape::new(vec![1, 8, 8]).unwrap(), data).unwrap()
        })
        .collect();
    let seq = FrameSequence::new("s".into(), frames, (0..30).collect()).unwrap();
    let out = extract_mmi_style(
        &seq,
        1.0,
        dexpression::frameselect::DiffMetric::MeanAbsolute,
        20,
    )
    .unwrap();
    assert_eq!(out.images.len(), 18);
    assert_eq!(out.discarded_indices.len(), 2);

    // Oracle replay over 1000 random difference vectors.
    for case in 0..1000u64 {
        let mut case_rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = case_rng.random_range(20..=200usize);
        let scores: Vec<f32> = (0..n).map(|_| case_rng.random_range(0.0..1.0)).collect();
        let got = select_from_scores(&scores, 20).unwrap();
        let want = oracle_select(&scores, 20);
        assert_eq!(got, want, "case {case} (n={n})");
        assert_eq!(got.len(), 20);
    }
    report("frame selection", true, "18 frames per session; 1000 oracle replays agree");
}

#[test]
fn criterion_determinism() {
    // Library level: identical configs give bitwise-identical parameters.
    let g = build_dexpression_with(&DexpressionConfig::shrunken(3)).unwrap();
    let ds = generate_synthetic_dataset(3, 6, 16, 0.05, 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 5,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train(&g, &ds, &cfg).unwrap();
    let b = train(&g, &ds, &cfg).unwrap();
    for (name, ta) in a.params.iter() {
        let tb = b.params.get(name).unwrap();
        assert_eq!(ta.as_slice(), tb.as_slice(), "tensor {name} differs");
    }
    // Sequential and parallel cross-validation agree bitwise per fold.
    let seq_result = cross_validate(&g, &ds, &cfg, 3, false).unwrap();
    let par_result = cross_validate(&g, &ds, &cfg, 3, true).unwrap();
    for (x, y) in seq_result.folds.iter().zip(&par_result.folds) {
        assert_eq!(x.accuracy, y.accuracy);
        for (cx, cy) in x.loss_curve.iter().zip(&y.loss_curve) {
            assert_eq!(cx.mean_loss, cy.mean_loss);
        }
    }
    report("determinism", true, "repeated training bitwise-identical; parallel folds match");
}

#[test]
fn criterion_confusion_matrix_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let names: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
    let mut m = ConfusionMatrix::new(names);
    let mut per_class = vec![0u64; 5];
    for _ in 0..500 {
        let t = rng.random_range(0..5usize);
        let p = rng.random_range(0..5usize);
        m.record(t, p);
        per_class[t] += 1;
    }
    assert_eq!(m.total(), 500);
    let acc = m.trace() as f64 / m.total() as f64;
    assert_eq!(m.accuracy(), acc);
    for c in 0..5 {
        assert_eq!(m.row_sum(c), per_class[c]);
    }
    // Report rows are per-true-class rates summing to 1.
    for (c, row) in m.row_normalized().iter().enumerate() {
        if per_class[c] > 0 {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {c} sums to {sum}");
        }
    }
    let csv = m.to_csv();
    assert!(csv.starts_with("true\\predicted,c0,c1,c2,c3,c4"));
    assert_eq!(csv.lines().count(), 6);
    report("confusion matrix semantics", true, "trace/total, row sums, CSV layout verified");
}
