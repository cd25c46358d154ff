use moc_core::data::{synth_generate, Scene, SynthConfig};
use moc_core::eval::{
    crossval, evaluate, gating_report, grid_batch, predict_image, score, score_values, CrossValOptions, ImageResult,
};
use moc_core::model::{ConvSpec, ExpertNetConfig, GatingNetConfig, Model, PatchCounter, StackConfig, Variant};
use moc_core::train::TrainingConfig;
use moc_core::{Error, Precision, Result, Tensor};
use proptest::prelude::*;

/// Counts each patch as `scale * mean pixel + offset`.
struct Stub {
    size: usize,
    scale: f64,
    offset: f64,
}

impl PatchCounter<f64> for Stub {
    fn patch_size(&self) -> usize {
        self.size
    }
    fn input_channels(&self) -> usize {
        1
    }
    fn num_experts(&self) -> usize {
        1
    }
    fn count(&self, batch: &Tensor<f64>) -> Result<Tensor<f64>> {
        let area = self.size * self.size;
        let means: Vec<f64> = batch
            .data()
            .chunks_exact(area)
            .map(|p| p.iter().sum::<f64>() / area as f64)
            .collect();
        Ok(Tensor::from_fn(&[batch.dim(0)], |i| {
            self.scale * means[i] + self.offset
        }))
    }
    fn gate(&self, batch: &Tensor<f64>) -> Result<Option<Tensor<f64>>> {
        Ok(Some(Tensor::full(&[batch.dim(0), 1], 1.0)))
    }
}

fn noise_scene(h: usize, w: usize) -> Scene {
    Scene::new(
        "noise",
        Tensor::from_fn(&[1, h, w], |i| ((i * 7919) % 251) as f64 / 251.0),
        vec![],
        None,
    )
    .unwrap()
}

#[test]
fn metric_anchor_values() {
    let r = score_values(&[10.0, 20.0], &[12.0, 16.0]).unwrap();
    assert!((r.mae - 3.0).abs() < 1e-12);
    assert!((r.msd - 10f64.sqrt()).abs() < 1e-12);
    assert!((r.mse - 10.0).abs() < 1e-12);
    assert!((r.mde().unwrap() - 0.2).abs() < 1e-12);

    let perfect = score_values(&[3.0, 7.0, 1.0], &[3.0, 7.0, 1.0]).unwrap();
    assert_eq!(
        (perfect.mae, perfect.msd, perfect.mse, perfect.mde().unwrap()),
        (0.0, 0.0, 0.0, 0.0)
    );
}

#[test]
fn zero_truth_makes_mde_undefined_but_keeps_the_rest() {
    let rows = vec![
        ImageResult {
            scene_id: "a".into(),
            truth: 0.0,
            prediction: 1.0,
        },
        ImageResult {
            scene_id: "b".into(),
            truth: 4.0,
            prediction: 4.0,
        },
    ];
    let r = score(rows).unwrap();
    assert_eq!(r.mae, 0.5);
    match r.mde() {
        Err(Error::MetricUndefined { metric: "mde", scenes }) => assert_eq!(scenes, vec!["a".to_string()]),
        other => panic!("{other:?}"),
    }
    assert!(r
        .to_csv()
        .ends_with("AGGREGATE,mae,msd,mse,mde\nAGGREGATE,0.5,0.7071067811865476,0.5,undefined\n"));
}

#[test]
fn bad_score_inputs() {
    assert!(matches!(score(vec![]), Err(Error::Validation(_))));
    assert!(score_values(&[1.0], &[1.0, 2.0]).is_err());
    assert!(score_values(&[1.0], &[f64::NAN]).is_err());
}

#[test]
fn metrics_csv_layout() {
    let r = score_values(&[10.0, 20.0], &[12.0, 16.0]).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scene_id,truth,prediction,abs_err");
    assert_eq!(lines[1], "0,10.0,12.0,2.0");
    assert_eq!(lines[3], "AGGREGATE,mae,msd,mse,mde");
    assert_eq!(lines.len(), 5);
}

proptest! {
    #[test]
    fn msd_bounds_mae(pairs in prop::collection::vec((0.0f64..1e4, -1e4f64..1e4), 1..40)) {
        let (t, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let r = score_values(&t, &y).unwrap();
        prop_assert!(r.msd >= r.mae * (1.0 - 1e-12));
        prop_assert!((r.mse - r.msd * r.msd).abs() <= 1e-9 * r.mse.max(1.0));
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.reverse();
        let rt: Vec<f64> = order.iter().map(|&i| t[i]).collect();
        let ry: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let p = score_values(&rt, &ry).unwrap();
        prop_assert!((p.mae - r.mae).abs() <= 1e-9 * r.mae.max(1.0));
        prop_assert!((p.mse - r.mse).abs() <= 1e-9 * r.mse.max(1.0));
    }
}

#[test]
fn image_prediction_sums_grid_patches() {
    let zero = Stub {
        size: 72,
        scale: 0.0,
        offset: 0.0,
    };
    assert_eq!(predict_image(&zero, &noise_scene(150, 200), false).unwrap(), 0.0);

    let constant = Stub {
        size: 72,
        scale: 0.0,
        offset: 2.5,
    };
    assert_eq!(
        predict_image(&constant, &noise_scene(144, 144), false).unwrap(),
        4.0 * 2.5
    );
    assert_eq!(
        predict_image(&constant, &noise_scene(150, 230), false).unwrap(),
        6.0 * 2.5
    );

    let negative = Stub {
        size: 72,
        scale: 0.0,
        offset: -1.0,
    };
    assert_eq!(predict_image(&negative, &noise_scene(144, 144), false).unwrap(), -4.0);
    assert_eq!(predict_image(&negative, &noise_scene(144, 144), true).unwrap(), 0.0);

    assert!(matches!(
        predict_image(&constant, &noise_scene(60, 144), false),
        Err(Error::Validation(_))
    ));
}

#[test]
fn image_prediction_does_not_depend_on_patch_order() {
    let stub = Stub {
        size: 72,
        scale: 3.0,
        offset: 0.25,
    };
    let scene = noise_scene(216, 288);
    let total = predict_image(&stub, &scene, false).unwrap();
    let batch = grid_batch::<f64>(&scene, 72).unwrap();
    let per_patch = stub.count(&batch).unwrap();
    let reversed: f64 = per_patch.data().iter().rev().sum();
    assert!((total - reversed).abs() < 1e-6);
}

fn stack(filters: [usize; 2]) -> StackConfig {
    StackConfig {
        input_channels: 1,
        input_size: 16,
        conv: [
            ConvSpec {
                filters: filters[0],
                kernel: 3,
            },
            ConvSpec {
                filters: filters[1],
                kernel: 3,
            },
        ],
        pools: [2, 2],
        elu_alpha: 1.0,
    }
}

fn tiny_config(variant: Variant, k: usize) -> TrainingConfig {
    TrainingConfig {
        variant,
        k,
        epochs: 1,
        batch_size: 8,
        seed: 3,
        precision: Precision::High,
        crops_per_image: 4,
        expert: ExpertNetConfig { stack: stack([2, 3]) },
        gate: GatingNetConfig {
            stack: stack([3, 4]),
            hidden: 6,
            dropout: 0.5,
        },
        ..TrainingConfig::default()
    }
}

fn calibrated(variant: Variant, k: usize, scenes: &[Scene]) -> Model<f64> {
    let cfg = tiny_config(variant, k);
    let mut m = Model::<f64>::build(variant, &cfg.expert, &cfg.gate, k, 1.0, 5).unwrap();
    m.calibrate(&grid_batch(&scenes[0], 16).unwrap()).unwrap();
    m
}

#[test]
fn gating_rows_are_distributions() {
    let scenes = synth_generate(&SynthConfig::modes3(), 6, 2).unwrap();
    let model = calibrated(Variant::Moc, 4, &scenes);
    let report = gating_report(&model, &scenes).unwrap();
    assert_eq!(report.rows.len(), 6);
    for row in &report.rows {
        assert!((row.mean_gate.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let max = row.mean_gate.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(row.mean_gate[row.dominant], max);
        assert!((0.0..=4f64.ln()).contains(&row.entropy));
        assert!(row.mode.is_some());
    }
    let modes = report.per_mode();
    assert_eq!(modes.iter().map(|m| m.images).sum::<usize>(), 6);
    for m in &modes {
        assert!(m.majority_share > 0.0 && m.majority_share <= 1.0);
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("scene_id,mode,dominant_expert,entropy,g_1,g_2,g_3,g_4\n"));

    let ordinary = calibrated(Variant::Ordinary, 1, &scenes);
    for row in gating_report(&ordinary, &scenes).unwrap().rows {
        assert_eq!((row.mean_gate, row.entropy, row.dominant), (vec![1.0], 0.0, 0));
    }
    let fc = calibrated(Variant::FcGating, 3, &scenes);
    assert!(matches!(gating_report(&fc, &scenes), Err(Error::Config(_))));
}

#[test]
fn evaluation_scores_against_dot_counts() {
    let scenes = synth_generate(&SynthConfig::modes3(), 3, 2).unwrap();
    let stub = Stub {
        size: 72,
        scale: 0.0,
        offset: 0.0,
    };
    let r = evaluate(&stub, &scenes, false).unwrap();
    for (row, s) in r.rows.iter().zip(&scenes) {
        assert_eq!(row.truth, s.count() as f64);
        assert_eq!(row.scene_id, s.id);
    }
}

#[test]
fn cross_validation_holds_out_every_scene_once() {
    let scenes = synth_generate(&SynthConfig::modes3(), 10, 6).unwrap();
    let cfg = tiny_config(Variant::Moc, 2);
    let options = CrossValOptions {
        folds: 5,
        seed: 1,
        clamp: false,
    };
    let mut epochs = 0;
    let a = crossval::<f64>(&cfg, &scenes, options, |_, _| epochs += 1).unwrap();
    assert_eq!(epochs, 5);
    assert_eq!(a.folds.len(), 5);
    assert_eq!(a.aggregate.n(), 10);
    let mut held: Vec<&String> = a.folds.iter().flat_map(|f| &f.test_ids).collect();
    held.sort();
    let mut ids: Vec<&String> = scenes.iter().map(|s| &s.id).collect();
    ids.sort();
    assert_eq!(held, ids);

    let b = crossval::<f64>(&cfg, &scenes, options, |_, _| {}).unwrap();
    assert_eq!(a, b);
    assert!(crossval::<f64>(&cfg, &scenes, CrossValOptions { folds: 1, ..options }, |_, _| {}).is_err());
}
