//! Shapley explanations against an independent oracle, the Shapley axioms,
//! global ranking, summary export and kernel importance.

mod common;

use common::{brute_force_shapley, random_mlp, random_rows};
use fededge::data::synth::{SynthConfig, SynthGenerator};
use fededge::data::{normalize, Fam};
use fededge::models::{
    build_classifier, fine_tune, CnnConfig, FineTuneConfig, VaeConfig, VaeModel,
};
use fededge::xai::*;

fn exact_config(reference: Vec<Vec<f64>>, target: Target) -> ShapConfig {
    ShapConfig {
        mode: ShapMode::Exact,
        target,
        ..ShapConfig::new(Background::from_rows(&reference).unwrap())
    }
}

#[test]
fn exact_matches_brute_force_on_small_networks() {
    for seed in 0..5 {
        let p = 3 + seed as usize;
        let net = random_mlp(p, 6, 3, seed);
        let bg = random_rows(10, p, 1.0, seed + 100);
        let cfg = exact_config(bg, Target::PredictedClass);
        for x in random_rows(3, p, 2.0, seed + 200) {
            let e = shap_exact(&net, &x, &cfg).unwrap();
            let oracle = brute_force_shapley(&net, &x, cfg.background.mean(), e.target_index);
            for (a, b) in e.phi.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!(e.efficiency_gap().abs() < 1e-6);
        }
    }
}

#[test]
fn axioms_on_constructed_models() {
    // f(x) = 2 x0 + 3 x1 + 0 x2 + x3 x4 with x3, x4 exchangeable.
    let m = FnPredictor {
        dim: 5,
        f: |x: &[f64]| vec![2.0 * x[0] + 3.0 * x[1] + x[3] * x[4]],
    };
    let cfg = exact_config(vec![vec![0.0; 5]], Target::Class(0));
    let e = shap_exact(&m, &[1.0, 1.0, 7.0, 0.5, 0.5], &cfg).unwrap();
    assert_eq!(e.phi[2], 0.0);
    assert_eq!(e.phi[3], e.phi[4]);
    assert!((e.phi[0] - 2.0).abs() < 1e-12 && (e.phi[1] - 3.0).abs() < 1e-12);
    // A row equal to the background mean gets all-zero attributions.
    let at_mean = shap_exact(&m, &[0.0; 5], &cfg).unwrap();
    assert!(at_mean.phi.iter().all(|&v| v == 0.0));
    let sampled = shap_sampled(
        &m,
        &[0.0; 5],
        &ShapConfig {
            mode: ShapMode::Sampled,
            num_permutations: 10,
            ..cfg
        },
    )
    .unwrap();
    assert!(sampled.phi.iter().all(|&v| v == 0.0));
}

#[test]
fn sampled_tracks_exact_at_default_budget() {
    let net = random_mlp(8, 16, 3, 9);
    let cfg = exact_config(random_rows(20, 8, 1.0, 10), Target::Class(0));
    let x = &random_rows(1, 8, 2.0, 11)[0];
    let exact = shap_exact(&net, x, &cfg).unwrap();
    let sampled = shap_sampled(
        &net,
        x,
        &ShapConfig {
            mode: ShapMode::Sampled,
            ..cfg.clone()
        },
    )
    .unwrap();
    let max = exact.phi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for (a, b) in sampled.phi.iter().zip(&exact.phi) {
        assert!((a - b).abs() <= 0.05 * max, "{a} vs {b}");
    }
    assert_eq!(
        sampled,
        shap_sampled(
            &net,
            x,
            &ShapConfig {
                mode: ShapMode::Sampled,
                ..cfg
            }
        )
        .unwrap()
    );
}

#[test]
fn explanation_record_round_trips_numbers() {
    let m = FnPredictor {
        dim: 2,
        f: |x: &[f64]| vec![0.1 * x[0] + x[1]],
    };
    let e = local_explain(
        &m,
        &[0.3, 0.7],
        4,
        &exact_config(vec![vec![0.0, 0.0]], Target::Class(0)),
    )
    .unwrap();
    let rec = e.to_record();
    assert!(rec.starts_with("sample=4 target=0 base=0 "));
    let phi: Vec<f64> = rec
        .rsplit("phi=")
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(phi, e.phi);
}

#[test]
fn global_ranking_and_summary() {
    // Feature 0 decides the output, feature 2 is ignored.
    let m = FnPredictor {
        dim: 3,
        f: |x: &[f64]| vec![1.0 / (1.0 + (-8.0 * (x[0] - 0.5)).exp()) + 0.05 * x[1]],
    };
    let rows = random_rows(12, 3, 1.0, 4);
    let names: Vec<String> = ["s_idleMax", "pkt_len_mean", "unused"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let fam = Fam::unlabeled("t", names, rows.clone()).unwrap();
    let cfg = exact_config(rows, Target::Class(0));
    let (g, matrix) = global_importance(&m, &fam, &cfg, RankBy::MeanAbs).unwrap();
    assert_eq!(g.ranking, [0, 1, 2]);
    assert_eq!(g.mean_abs[2], 0.0);
    assert_eq!(matrix.explanations.len(), 12);

    let single = fam.select(&[3]);
    let (g1, m1) = global_importance(&m, &single, &cfg, RankBy::SignedSum).unwrap();
    assert_eq!(g1.signed_sum, m1.explanations[0].phi);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    export_summary(&g, &matrix, &["out".into()], 10, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("s_idleMax,"));
    let ranks: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ranks, [1, 2, 3]);
}

#[test]
fn summary_has_top_n_rows_on_wide_data() {
    let p = 30;
    let m = FnPredictor {
        dim: p,
        f: |x: &[f64]| vec![x.iter().enumerate().map(|(i, v)| i as f64 * v).sum()],
    };
    let rows = random_rows(5, p, 1.0, 6);
    let fam = Fam::unlabeled("t", (0..p).map(|i| format!("f{i}")).collect(), rows.clone()).unwrap();
    let cfg = ShapConfig {
        num_permutations: 50,
        target: Target::Class(0),
        ..ShapConfig::new(Background::from_rows(&rows).unwrap())
    };
    let (g, matrix) = global_importance(&m, &fam, &cfg, RankBy::MeanAbs).unwrap();
    let csv = summary_csv(&g, &matrix, &["y".into()], 10);
    assert_eq!(csv.lines().count(), 11);
    let best = g.feature_names[g.ranking[0]].clone();
    assert!(csv.lines().nth(1).unwrap().starts_with(&format!("{best},")));
    assert!(g
        .ranking
        .windows(2)
        .all(|w| g.mean_abs[w[0]] >= g.mean_abs[w[1]]));
}

fn trained_classifier(seed: u64) -> (fededge::models::SemiSupervisedModel, Fam) {
    let g = SynthGenerator::new(SynthConfig::default(), seed).unwrap();
    let data = normalize(&g.balanced(20, 1).unwrap()).unwrap();
    let vae = VaeModel::new(&VaeConfig {
        seed,
        ..VaeConfig::default()
    })
    .unwrap();
    let mut m = build_classifier(
        &vae,
        data.class_names().to_vec(),
        false,
        &CnnConfig::default(),
        seed,
    )
    .unwrap();
    fine_tune(
        &mut m,
        &data,
        &FineTuneConfig {
            epochs: 3,
            seed,
            ..FineTuneConfig::default()
        },
    )
    .unwrap();
    (m, data)
}

#[test]
fn kernel_scores_cover_every_kernel_and_are_reproducible() {
    let (model, data) = trained_classifier(2);
    let a = kernel_importance(&model, &data).unwrap();
    assert_eq!(a.scores.len(), 16 + 16 + 8);
    assert!(a.scores.iter().all(|s| s.score.is_finite()));
    assert_eq!(a, kernel_importance(&model, &data).unwrap());
    assert!(kernel_importance(&model, &data.select(&[])).is_err());
}

#[test]
fn switched_off_kernel_scores_zero() {
    let (mut model, data) = trained_classifier(3);
    let conv = model.encoder_layers();
    ablate_kernel(&mut model, conv + 2, 5).unwrap();
    let scores = kernel_importance(&model, &data).unwrap();
    let s = scores.for_layer(conv + 2).find(|s| s.kernel == 5).unwrap();
    assert_eq!(s.score, 0.0);
    assert!(ablate_kernel(&mut model, 0, 0).is_err());
}
