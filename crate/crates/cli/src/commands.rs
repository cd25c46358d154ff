use std::path::{Path, PathBuf};

use moc_core::audit::{audit, AuditOptions};
use moc_core::data::{
    load_manifest, modes3, parse_modes, synth_generate, write_dataset, Scene, SynthConfig, MANIFEST_FILE,
};
use moc_core::eval::{crossval, evaluate, gating_report, CrossValOptions};
use moc_core::model::Variant;
use moc_core::train::{
    log_header, read_checkpoint, save_checkpoint, training_samples, write_log_csv, EpochLog, PatchSet, Trainer,
    TrainingConfig,
};
use moc_core::{Error, Precision, Real, Result};

use crate::run_config::{read_arch, RunConfig};
use crate::{EvalArgs, GenerateArgs, GradcheckArgs, InspectArgs, Status, TrainFlags};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GATING_FILE: &str = "gating.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load_scenes(data: &Path) -> Result<Vec<Scene>> {
    let scenes = load_manifest(&manifest_path(data))?;
    if scenes.is_empty() {
        return Err(Error::Validation(format!("{} lists no scenes", data.display())));
    }
    Ok(scenes)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--size must look like 144x144, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (h, w) = (h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?);
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn generate(a: &GenerateArgs) -> Result<Status> {
    if a.scenes == 0 {
        return Err(Error::Config("--scenes must be at least 1".into()));
    }
    let (height, width) = parse_size(&a.size)?;
    let modes = if a.modes == "modes3" {
        modes3()
    } else {
        let path = Path::new(&a.modes);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "--modes {:?} is neither the modes3 preset nor a readable file",
                a.modes
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        parse_modes(&text, &a.modes)?
    };
    let cfg = SynthConfig {
        modes,
        height,
        width,
        ..SynthConfig::modes3()
    };
    let scenes = synth_generate(&cfg, a.scenes, a.seed)?;
    let manifest = write_dataset(&scenes, &a.out)?;
    RunConfig::new("generate")
        .set("modes", &a.modes)
        .set("scenes", a.scenes)
        .set("size", format!("{height}x{width}"))
        .set("seed", a.seed)
        .set("out", a.out.display())
        .write(&a.out)?;
    println!("wrote {} scenes to {}", scenes.len(), manifest.display());
    Ok(Status::Ok)
}

/// Defaults, then the `--arch` file, then explicit flags.
pub fn training_config(flags: &TrainFlags, variant: Variant) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::default();
    if let Some(path) = &flags.arch {
        for (k, v) in read_arch(path)? {
            cfg.set(&k, &v)?;
        }
    }
    cfg.variant = variant;
    if variant == Variant::Ordinary && flags.k.is_none() {
        cfg.k = 1;
    }
    if variant == Variant::Ordinary && flags.lambda.is_none() {
        cfg.lambda = 0.0;
    }
    if let Some(k) = flags.k {
        cfg.k = k;
    }
    if let Some(v) = flags.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.crops {
        cfg.crops_per_image = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(p) = &flags.precision {
        cfg.set("precision", p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(flags: &TrainFlags, baseline: Option<&str>) -> Result<Status> {
    let (command, variant) = match baseline {
        None => ("train", Variant::Moc),
        Some(name) => match Variant::parse(name)? {
            Variant::Moc => {
                return Err(Error::Config(
                    "train-baseline takes --variant ordinary or fc-gating; use train for the mixture".into(),
                ))
            }
            v => ("train-baseline", v),
        },
    };
    let cfg = training_config(flags, variant)?;
    let scenes = load_scenes(&flags.data)?;
    create_dir(&flags.out)?;
    RunConfig::new(command)
        .set("data", flags.data.display())
        .set("out", flags.out.display())
        .training(&cfg)
        .write(&flags.out)?;
    match cfg.precision {
        Precision::Standard => train_with::<f32>(cfg, &scenes, &flags.out),
        Precision::High => train_with::<f64>(cfg, &scenes, &flags.out),
    }
}

fn train_with<T: Real>(cfg: TrainingConfig, scenes: &[Scene], out: &Path) -> Result<Status> {
    let k = cfg.k;
    let data = PatchSet::<T>::from_samples(&training_samples(scenes, &cfg)?)?;
    let mut trainer = Trainer::<T>::new(cfg)?;
    let log_path = out.join(LOG_FILE);
    let mut logs: Vec<EpochLog> = Vec::new();
    println!("{}", log_header(k));
    let result = trainer.run(&data, None, |log| {
        println!("{}", log.csv_row(k));
        logs.push(log.clone());
        write_log_csv(&log_path, &logs, k)
    });
    if let Err(e) = result {
        // Keep the partial log next to the diagnostics.
        write_log_csv(&log_path, &logs, k)?;
        return Err(e);
    }
    save_checkpoint(&trainer, &out.join(CHECKPOINT_FILE))?;
    Ok(Status::Ok)
}

pub fn eval(a: &EvalArgs) -> Result<Status> {
    let raw = read_checkpoint(&a.model)?;
    let cfg = raw.config()?;
    let scenes = load_scenes(&a.data)?;
    create_dir(&a.out)?;
    let mut run = RunConfig::new("eval");
    run.set("model", a.model.display())
        .set("data", a.data.display())
        .set("out", a.out.display())
        .set("clamp", a.clamp);
    let report = match a.folds {
        None => {
            run.training(&cfg).write(&a.out)?;
            match cfg.precision {
                Precision::Standard => evaluate(&raw.into_trainer::<f32>()?.model, &scenes, a.clamp)?,
                Precision::High => evaluate(&raw.into_trainer::<f64>()?.model, &scenes, a.clamp)?,
            }
        }
        Some(folds) => {
            let options = CrossValOptions {
                folds,
                seed: a.seed.unwrap_or(cfg.seed),
                clamp: a.clamp,
            };
            run.set("folds", folds)
                .set("fold_seed", options.seed)
                .training(&cfg)
                .write(&a.out)?;
            let k = cfg.k;
            let on_epoch = |fold: usize, log: &EpochLog| println!("fold {fold} {}", log.csv_row(k));
            let cv = match cfg.precision {
                Precision::Standard => crossval::<f32>(&cfg, &scenes, options, on_epoch)?,
                Precision::High => crossval::<f64>(&cfg, &scenes, options, on_epoch)?,
            };
            for f in &cv.folds {
                f.report.write_csv(&a.out.join(format!("fold_{}.csv", f.fold + 1)))?;
                write_log_csv(&a.out.join(format!("fold_{}_log.csv", f.fold + 1)), &f.logs, k)?;
            }
            cv.aggregate
        }
    };
    report.write_csv(&a.out.join(METRICS_FILE))?;
    let mde = report.mde().map_or("undefined".to_string(), |v| v.to_string());
    println!(
        "images {} mae {} msd {} mse {} mde {mde}",
        report.n(),
        report.mae,
        report.msd,
        report.mse
    );
    Ok(Status::Ok)
}

pub fn inspect_gating(a: &InspectArgs) -> Result<Status> {
    let raw = read_checkpoint(&a.model)?;
    let cfg = raw.config()?;
    let scenes = load_scenes(&a.data)?;
    let report = match cfg.precision {
        Precision::Standard => gating_report(&raw.into_trainer::<f32>()?.model, &scenes)?,
        Precision::High => gating_report(&raw.into_trainer::<f64>()?.model, &scenes)?,
    };
    create_dir(&a.out)?;
    RunConfig::new("inspect-gating")
        .set("model", a.model.display())
        .set("data", a.data.display())
        .set("out", a.out.display())
        .training(&cfg)
        .write(&a.out)?;
    report.write_csv(&a.out.join(GATING_FILE))?;
    for m in report.per_mode() {
        println!(
            "mode {} images {} majority expert {} share {:.3}",
            m.mode,
            m.images,
            m.majority_expert + 1,
            m.majority_share
        );
    }
    Ok(Status::Ok)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<Status> {
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let report = audit(&AuditOptions {
        seed: a.seed,
        seeds: a.seeds,
        full: a.full,
    })?;
    print!("{}", report.render());
    if report.passed() {
        println!("all checks passed over {} seeds", report.seeds);
        Ok(Status::Ok)
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        eprintln!("failed checks: {}", names.join(", "));
        Ok(Status::CheckFailed)
    }
}
