use kid_core::config::PatchActivationMode;
use kid_core::eval::pca::{class_token_features, write_pca_csv};
use kid_core::eval::{
    auc, export_correlation_viz, layerwise_activation_report, pca_features, robustness_sweep, video_score, Aggregation,
    EvalRecord, FrameScore,
};
use kid_core::synthesis::toy_face_dataset;
use kid_core::training::synthesize_pairs;
use kid_core::{AttentionMode, BackboneConfig, Mat, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_samples(n: usize, seed: u64) -> Vec<kid_core::ImageSample> {
    let reals = toy_face_dataset(n, 32, seed);
    synthesize_pairs(&reals, seed, 10_000).unwrap().into_iter().flat_map(|(r, f)| [r, f]).collect()
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..40);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
        let base = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((auc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn video_score_with_k_at_least_n_is_the_mean(n in 1usize..50, extra in 0usize..10, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mean = frames.iter().sum::<f64>() / n as f64;
        prop_assert!((video_score(&frames, n + extra, &mut rng).unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn sampled_video_score_is_close_and_replayable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mean = frames.iter().sum::<f64>() / 1000.0;
    let a = video_score(&frames, 32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = video_score(&frames, 32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    // 32 draws of U(0,1): standard error ≈ 0.05.
    assert!((a - mean).abs() < 0.15, "{a} vs {mean}");
}

#[test]
fn video_aggregation_groups_frames() {
    let frame = |id: usize, g: &str, score: f64, label: u8| FrameScore { id, group_id: Some(g.into()), score, label };
    let rec = EvalRecord {
        frame_scores: vec![frame(0, "a", 0.1, 0), frame(1, "a", 0.9, 0), frame(2, "b", 0.6, 1), frame(3, "b", 0.6, 1)],
        aggregation: Aggregation::Video,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(rec.auc(32, &mut rng).unwrap(), 1.0);
    let frames = EvalRecord { aggregation: Aggregation::Frame, ..rec };
    assert_eq!(frames.auc(32, &mut rng).unwrap(), 0.5);
}

#[test]
fn pca_reconstructs_rank_two_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let basis = Mat::from_fn(2, 10, |_, _| rng.gen_range(-1.0..1.0));
    let coef = Mat::from_fn(40, 2, |_, _| rng.gen_range(-3.0..3.0));
    let offset = Mat::row_vector((0..10).map(|j| j as f64).collect());
    let data = coef.matmul(&basis).add_row(&offset);
    let pca = pca_features(&data, 2).unwrap();
    assert!(pca.reconstruct().max_abs_diff(&data) <= 1e-8);
    assert!(pca.variances[0] >= pca.variances[1]);
    let v = |k: usize| (0..40).map(|i| pca.coords[(i, k)].powi(2)).sum::<f64>();
    assert!(v(0) >= v(1));
}

#[test]
fn pca_duplicates_share_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let half = Mat::from_fn(15, 6, |_, _| rng.gen_range(-1.0..1.0));
    let data = Mat::concat_rows(&[&half, &half]);
    let pca = pca_features(&data, 2).unwrap();
    for i in 0..15 {
        for k in 0..2 {
            assert!((pca.coords[(i, k)] - pca.coords[(i + 15, k)]).abs() < 1e-12);
        }
    }
    assert!(pca_features(&Mat::zeros(1, 6), 2).is_err());
}

#[test]
fn pca_is_rotation_invariant_up_to_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = Mat::from_fn(30, 4, |_, j| rng.gen_range(-1.0..1.0) * (4 - j) as f64);
    // Orthogonal rotation in the (0, 2) plane.
    let (c, s) = (0.6f64, 0.8f64);
    let mut rot = Mat::identity(4);
    rot.as_mut_slice()[0] = c;
    rot.as_mut_slice()[2] = -s;
    rot.as_mut_slice()[8] = s;
    rot.as_mut_slice()[10] = c;
    let a = pca_features(&data, 2).unwrap();
    let b = pca_features(&data.matmul(&rot), 2).unwrap();
    for k in 0..2 {
        let same = (0..30).all(|i| (a.coords[(i, k)] - b.coords[(i, k)]).abs() < 1e-9);
        let flipped = (0..30).all(|i| (a.coords[(i, k)] + b.coords[(i, k)]).abs() < 1e-9);
        assert!(same || flipped, "axis {k} differs beyond sign");
    }
}

#[test]
fn zero_injection_gives_zero_visualizations_and_activations() {
    let model = Model::new(BackboneConfig::toy(), 0).unwrap();
    let samples = toy_samples(3, 5);
    let dir = tempfile::tempdir().unwrap();
    let viz = export_correlation_viz(&model, &samples[0].pixels, 2, PatchActivationMode::Row, Some(dir.path())).unwrap();
    assert!(viz.heatmap.as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(viz.patch_grid.shape(), (4, 4));
    assert!(viz.patch_grid.as_slice().iter().all(|&v| v == 0.0));
    for f in ["corr_l2.png", "corr_l2.csv", "patch_activation_l2.png", "patch_activation_l2.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(export_correlation_viz(&model, &samples[0].pixels, 4, PatchActivationMode::Row, None).is_err());

    let report = layerwise_activation_report(&model, &samples).unwrap();
    assert_eq!(report.num_layers(), 4);
    assert!(report.real_mean.iter().chain(&report.fake_mean).all(|&a| a == 0.0));
}

#[test]
fn patch_activation_matches_row_means_of_the_exported_correlation() {
    let mut model = Model::new(BackboneConfig::toy(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = model.params_mut().by_name_mut("blocks.1.attn.w_qbar").unwrap();
    *w = Mat::from_fn(64, 64, |_, _| rng.gen_range(-0.2..0.2));
    let img = toy_samples(1, 7)[1].pixels.clone();
    let viz = export_correlation_viz(&model, &img, 1, PatchActivationMode::Row, None).unwrap();
    for i in 0..16 {
        let oracle = (0..16).map(|j| viz.heatmap[(i + 1, j + 1)].abs()).sum::<f64>() / 16.0;
        assert!((viz.patch_grid.as_slice()[i] - oracle).abs() < 1e-12);
    }
}

#[test]
fn robustness_table_has_a_clean_column() {
    let model = Model::new(BackboneConfig::toy(), 2).unwrap();
    let samples = toy_samples(6, 8);
    let table = robustness_sweep(&model, AttentionMode::Injected, &samples).unwrap();
    assert_eq!(table.shape(), (5, 6));
    for (_, row) in &table.rows {
        assert_eq!(row[0], table.clean_auc);
    }
    let dir = tempfile::tempdir().unwrap();
    table.write_csv(&dir.path().join("r.csv")).unwrap();
    table.plot(&dir.path().join("r.png")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn pca_csv_has_the_expected_columns() {
    let model = Model::new(BackboneConfig::toy(), 3).unwrap();
    let samples = toy_samples(4, 9);
    let feats = class_token_features(&model, AttentionMode::Injected, &samples).unwrap();
    assert_eq!(feats.shape(), (8, 64));
    let pca = pca_features(&feats, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pca.csv");
    write_pca_csv(&samples, &pca, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("id,label,group,x,y"));
    assert_eq!(text.lines().count(), 9);
}
