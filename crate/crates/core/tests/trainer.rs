use moc_core::data::{synth_generate, SynthConfig};
use moc_core::model::{ConvSpec, ExpertNetConfig, GatingNetConfig, Model, PatchCounter, StackConfig, Variant};
use moc_core::train::{
    checkpoint_bytes, load_checkpoint, log_csv, save_checkpoint, train, training_samples, PatchSet, RawCheckpoint,
    Trainer, TrainingConfig,
};
use moc_core::{CheckpointError, Error, Parameterized, Precision, Tensor};

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

fn config(variant: Variant, k: usize, lambda: f64) -> TrainingConfig {
    TrainingConfig {
        variant,
        k,
        lambda,
        epochs: 2,
        batch_size: 8,
        seed: 11,
        precision: Precision::High,
        crops_per_image: 6,
        expert: ExpertNetConfig { stack: stack([2, 3]) },
        gate: GatingNetConfig {
            stack: stack([3, 4]),
            hidden: 6,
            dropout: 0.5,
        },
        ..TrainingConfig::default()
    }
}

fn data(cfg: &TrainingConfig, scenes: usize) -> PatchSet<f64> {
    let scenes = synth_generate(&SynthConfig::modes3(), scenes, 4).unwrap();
    PatchSet::from_samples(&training_samples(&scenes, cfg).unwrap()).unwrap()
}

fn params(m: &Model<f64>, prefix: &str) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    m.visit_params("", &mut |n, t| {
        if n.starts_with(prefix) {
            out.push(t.data().iter().map(|v| v.to_bits()).collect());
        }
    });
    out
}

#[test]
fn expert_updates_ignore_lambda() {
    let base = config(Variant::Moc, 3, 0.0);
    let set = data(&base, 3);
    let (x, t) = set.batch(&(0..8).collect::<Vec<_>>());
    let mut a = Trainer::<f64>::new(base.clone()).unwrap();
    let mut b = Trainer::<f64>::new(TrainingConfig { lambda: 100.0, ..base }).unwrap();
    a.train_step(&x, &t).unwrap();
    b.train_step(&x, &t).unwrap();
    assert_eq!(params(&a.model, "expert."), params(&b.model, "expert."));
    assert_ne!(params(&a.model, "gate."), params(&b.model, "gate."));
}

#[test]
fn learning_rates_only_move_their_own_network() {
    let base = config(Variant::Moc, 3, 1.0);
    let set = data(&base, 3);
    let (x, t) = set.batch(&(0..8).collect::<Vec<_>>());
    let mut reference = Trainer::<f64>::new(base.clone()).unwrap();
    reference.train_step(&x, &t).unwrap();

    let mut cfg = base.clone();
    cfg.expert_opt.lr *= 10.0;
    let mut fast_experts = Trainer::<f64>::new(cfg).unwrap();
    fast_experts.train_step(&x, &t).unwrap();
    assert_eq!(params(&reference.model, "gate."), params(&fast_experts.model, "gate."));
    assert_ne!(
        params(&reference.model, "expert."),
        params(&fast_experts.model, "expert.")
    );

    let mut cfg = base;
    cfg.gate_opt.lr *= 10.0;
    let mut fast_gate = Trainer::<f64>::new(cfg).unwrap();
    fast_gate.train_step(&x, &t).unwrap();
    assert_eq!(params(&reference.model, "expert."), params(&fast_gate.model, "expert."));
    assert_ne!(params(&reference.model, "gate."), params(&fast_gate.model, "gate."));
}

#[test]
fn single_expert_without_penalty_trains_like_the_ordinary_cnn() {
    let moc_cfg = TrainingConfig {
        epochs: 50,
        ..config(Variant::Moc, 1, 0.0)
    };
    let ord_cfg = TrainingConfig {
        variant: Variant::Ordinary,
        ..moc_cfg.clone()
    };
    let set = data(&moc_cfg, 1);
    let mut moc = Trainer::<f64>::new(moc_cfg).unwrap();
    let mut ord = Trainer::<f64>::new(ord_cfg).unwrap();
    moc.run(&set, Some(50), |_| Ok(())).unwrap();
    let logs = ord.run(&set, Some(50), |_| Ok(())).unwrap();
    assert_eq!(ord.step, 50);
    assert!(!logs.is_empty());
    assert_eq!(params(&moc.model, "expert."), params(&ord.model, "expert."));
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let cfg = config(Variant::Moc, 3, 1.0);
    let set = data(&cfg, 4);
    let (a, la) = train(cfg.clone(), &set).unwrap();
    let (b, lb) = train(cfg.clone(), &set).unwrap();
    assert_eq!(log_csv(&la, 3), log_csv(&lb, 3));
    assert_eq!(checkpoint_bytes(&a), checkpoint_bytes(&b));
    let (c, _) = train(TrainingConfig { seed: 12, ..cfg }, &set).unwrap();
    assert_ne!(checkpoint_bytes(&a), checkpoint_bytes(&c));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    for variant in [Variant::Moc, Variant::Ordinary, Variant::FcGating] {
        let k = if variant == Variant::Ordinary { 1 } else { 3 };
        let cfg = config(variant, k, 1.0);
        let set = data(&cfg, 2);
        let mut trainer = Trainer::<f64>::new(cfg).unwrap();
        trainer.run(&set, Some(5), |_| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&trainer, &path).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(loaded, trainer);
        let (x, _) = set.batch(&[0, 1, 2, 3]);
        let before: Vec<u64> = trainer
            .model
            .count(&x)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let after: Vec<u64> = loaded
            .model
            .count(&x)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(before, after);
    }
}

#[test]
fn resumed_training_matches_unbroken_training() {
    let cfg = TrainingConfig {
        epochs: 3,
        ..config(Variant::Moc, 3, 1.0)
    };
    let set = data(&cfg, 3);
    let bpe = set.len().div_ceil(cfg.batch_size) as u64;
    let split = bpe + 2;

    let mut unbroken = Trainer::<f64>::new(cfg.clone()).unwrap();
    let full = unbroken.run(&set, Some(split + 10), |_| Ok(())).unwrap();

    let mut first = Trainer::<f64>::new(cfg).unwrap();
    let mut logs = first.run(&set, Some(split), |_| Ok(())).unwrap();
    let mut resumed = RawCheckpoint::parse(&checkpoint_bytes(&first))
        .unwrap()
        .into_trainer::<f64>()
        .unwrap();
    logs.extend(resumed.run(&set, Some(10), |_| Ok(())).unwrap());
    assert_eq!(resumed, unbroken);
    assert_eq!(logs, full);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = config(Variant::Moc, 2, 1.0);
    let bytes = checkpoint_bytes(&Trainer::<f64>::new(cfg.clone()).unwrap());
    let parse = |b: &[u8]| RawCheckpoint::parse(b).err().expect("should fail");

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(parse(&magic), CheckpointError::BadMagic(_)));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        parse(&version),
        CheckpointError::VersionMismatch { found: 9, .. }
    ));

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(parse(&bytes[..cut]), CheckpointError::Truncated(_)),
            "cut {cut}"
        );
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(parse(&flipped), CheckpointError::ChecksumMismatch { .. }));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(&path),
        Err(Error::Checkpoint(CheckpointError::PrecisionMismatch { .. }))
    ));
}

#[test]
fn checkpoint_with_the_wrong_shapes_is_rejected() {
    let small = Trainer::<f64>::new(config(Variant::Moc, 2, 1.0)).unwrap();
    let bytes = checkpoint_bytes(&small);
    let text_cfg = small.config.to_text();
    let pos = bytes
        .windows(text_cfg.len())
        .position(|w| w == text_cfg.as_bytes())
        .unwrap();
    // Rewrite "expert.conv1.filters=2" to 5 in place and refresh the checksum.
    let key = b"expert.conv1.filters=2";
    let at = pos + text_cfg.find("expert.conv1.filters=2").unwrap();
    assert_eq!(&bytes[at..at + key.len()], key);
    let mut edited = bytes.clone();
    edited[at + key.len() - 1] = b'5';
    let body = edited.len() - 4;
    let crc = crc32(&edited[..body]);
    edited[body..].copy_from_slice(&crc.to_le_bytes());
    let err = RawCheckpoint::parse(&edited)
        .unwrap()
        .into_trainer::<f64>()
        .unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(CheckpointError::ShapeMismatch { .. })),
        "{err:?}"
    );
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

#[test]
fn short_training_lowers_the_expert_loss() {
    let cfg = TrainingConfig {
        epochs: 8,
        crops_per_image: 4,
        ..config(Variant::Moc, 3, 1.0)
    };
    let set = data(&cfg, 50);
    let (_, logs) = train(cfg, &set).unwrap();
    assert!(logs.len() == 8);
    assert!(logs.last().unwrap().expert_loss < logs[0].expert_loss, "{logs:?}");
    for log in &logs {
        let h = log.gate_entropy.unwrap();
        assert!((0.0..=3f64.ln() + 1e-12).contains(&h));
        let total: f64 = log.mean_gate.as_ref().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn empty_or_mismatched_data_is_a_config_error() {
    assert!(matches!(PatchSet::<f64>::from_samples(&[]), Err(Error::Config(_))));
    let cfg = config(Variant::Moc, 2, 1.0);
    let other = TrainingConfig {
        expert: ExpertNetConfig { stack: stack([2, 3]) },
        ..cfg.clone()
    };
    let mut wide = other.clone();
    wide.expert.stack.input_size = 20;
    wide.gate.stack.input_size = 20;
    let set = data(&wide, 1);
    let mut trainer = Trainer::<f64>::new(cfg).unwrap();
    assert!(matches!(trainer.run(&set, None, |_| Ok(())), Err(Error::Config(_))));
    assert!(Trainer::<f32>::new(other).is_err());
}

#[test]
fn divergence_is_reported_with_diagnostics() {
    let cfg = config(Variant::Moc, 2, 1.0);
    let set = data(&cfg, 1);
    let (x, t) = set.batch(&[0, 1]);
    let bad = Tensor::from_fn(t.shape(), |i| if i == 0 { f64::INFINITY } else { t.data()[i] });
    let mut trainer = Trainer::<f64>::new(cfg).unwrap();
    match trainer.train_step(&x, &bad) {
        Err(Error::Diverged {
            step: 0, max_abs_param, ..
        }) => assert!(max_abs_param.is_finite()),
        other => panic!("{other:?}"),
    }
}
