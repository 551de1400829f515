use ltseg_core::costsens::{violated_constraints, DEFAULT_EPSILON};
use ltseg_core::*;

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        num_classes: 6,
        feature_dim: 5,
        num_sequences: 30,
        noise: 1.0,
        mean_scale: 0.6,
        rng_seed: seed,
        ..Default::default()
    }
}

fn train_config(mode: LossMode) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        learning_rate: 0.2,
        loss_mode: mode,
        ..Default::default()
    }
}

#[test]
fn saved_dataset_trains_identically() {
    let ds = generate_synthetic(&small_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.num_classes(), ds.num_classes());
    assert_eq!(back.class_frame_counts(), ds.class_frame_counts());
    let cfg = train_config(LossMode::CostSensitive);
    let (a, ta) = train(&ds, &cfg).unwrap();
    let (b, tb) = train(&back, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn confusion_of_trained_model_agrees_with_frame_accuracy() {
    let ds = generate_synthetic(&small_config(2)).unwrap();
    let (params, telemetry) = train(&ds, &train_config(LossMode::PlainCe)).unwrap();
    let conf = compute_confusion(&params, &ds).unwrap();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in ds.sequences() {
        pred.extend(predict_sequence(&params, s));
        truth.extend_from_slice(s.frame_labels());
    }
    let acc = frame_accuracy(&pred, &truth, ds.num_classes()).unwrap();
    let correct: u64 = (0..ds.num_classes()).map(|i| conf.confusion_matrix()[i * ds.num_classes() + i]).sum();
    assert!((100.0 * correct as f64 / conf.total_frames() as f64 - acc.global).abs() < 1e-9);
    assert!((telemetry.last().unwrap().train_acc * 100.0 - acc.global).abs() < 1e-9);

    let stats = compute_transition_stats(&ds).unwrap();
    let state = learning_state(&conf, &stats);
    for (i, recall) in acc.recall.iter().enumerate() {
        match (recall, state.class_acc[i]) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            other => panic!("class {i}: {other:?}"),
        }
    }
}

#[test]
fn multipliers_stay_feasible_during_training() {
    let ds = generate_synthetic(&small_config(3)).unwrap();
    let stats = compute_transition_stats(&ds).unwrap();
    let mut trainer = Trainer::new(&ds, train_config(LossMode::CostSensitive)).unwrap();
    for _ in 0..4 {
        let t = trainer.run_epoch().unwrap();
        let mult = trainer.multipliers();
        for i in 0..stats.num_classes() {
            for k in 0..stats.num_prev() {
                let v = mult.lambda(i, k);
                assert!(v >= 0.0);
                if !stats.is_valid(i, k) {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let conf = compute_confusion(trainer.params(), &ds).unwrap();
        assert_eq!(t.violated, Some(violated_constraints(&conf, &stats, DEFAULT_EPSILON)));
        let (lo, mean, hi) = mult.summary(&stats);
        assert_eq!(t.lambda_min, Some(lo));
        assert_eq!(t.lambda_mean, Some(mean));
        assert_eq!(t.lambda_max, Some(hi));
    }
}

#[test]
fn inverse_prior_keeps_multipliers_at_zero() {
    let ds = generate_synthetic(&small_config(4)).unwrap();
    let mut trainer = Trainer::new(&ds, train_config(LossMode::InversePrior)).unwrap();
    for _ in 0..3 {
        trainer.run_epoch().unwrap();
    }
    assert!(trainer.multipliers().lambdas().iter().all(|&v| v == 0.0));
}

#[test]
fn tail_weights_exceed_head_weights() {
    let ds = generate_synthetic(&SynthConfig {
        num_classes: 8,
        num_sequences: 60,
        class_skew: 1.5,
        rng_seed: 5,
        ..Default::default()
    })
    .unwrap();
    let stats = compute_transition_stats(&ds).unwrap();
    let mult = MultiplierState::new(&stats, 0.01, 0.9).unwrap();
    let gain = compute_gain(&stats, &mult, 0.3).unwrap();
    let prior = stats.prior();
    let (head, tail) = (0..8)
        .fold((0, 0), |(h, t), c| (if prior[c] > prior[h] { c } else { h }, if prior[c] < prior[t] { c } else { t }));
    let (_, u_head) = stats.valid_transitions().find(|&(i, _)| i == head).unwrap();
    let (_, u_tail) = stats.valid_transitions().find(|&(i, _)| i == tail).unwrap();
    assert!(gain.weight(tail, u_tail) > gain.weight(head, u_head));
}

#[test]
fn decoders_share_one_segmentation_rule() {
    let ds = generate_synthetic(&small_config(6)).unwrap();
    let (train_ds, test) = ds.split(0.3).unwrap();
    let (params, _) = train(&train_ds, &train_config(LossMode::CostSensitive)).unwrap();
    let means = classifier_class_means(&params, &train_ds).unwrap();
    for s in test.sequences() {
        let argmax = decode_sequence(&params, Some(&means), s, Decoder::Argmax).unwrap();
        let ncm = decode_sequence(&params, Some(&means), s, Decoder::Ncm).unwrap();
        let sncm = decode_sequence(&params, Some(&means), s, Decoder::Sncm).unwrap();
        assert_eq!(sncm, sncm_decode(&argmax, &ncm).unwrap());
        assert!(segment_boundaries(&sncm).iter().all(|b| segment_boundaries(&argmax).contains(b)));
    }
    let s = &test.sequences()[0];
    assert!(decode_sequence(&params, None, s, Decoder::Ncm).is_err());
}

#[test]
fn evaluation_reports_groups() {
    let ds = generate_synthetic(&small_config(7)).unwrap();
    let (params, _) = train(&ds, &train_config(LossMode::PlainCe)).unwrap();
    let pairs: Vec<_> = ds
        .sequences()
        .iter()
        .map(|s| (predict_sequence(&params, s), s.frame_labels().to_vec()))
        .collect();
    let counts = ds.class_frame_counts();
    let threshold = counts.iter().sum::<u64>() / counts.len() as u64;
    let opts = EvalOptions {
        head_tail: Some(head_tail_split(counts, threshold)),
        ..Default::default()
    };
    let report = evaluate(&pairs, ds.num_classes(), &opts).unwrap();
    let head = report.head.as_ref().unwrap();
    let tail = report.tail.as_ref().unwrap();
    assert_eq!(head.classes.len() + tail.classes.len(), ds.num_classes());
    assert_eq!(report.f1.len(), 3);
    let mut csv = Vec::new();
    report.write_csv("plain", &mut csv, true).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.contains("plain,tail_f1@25,"));
}
