//! Trains the mixture on the modes3 benchmark for several penalty weights and
//! reports how the gate spreads over the experts.
//!
//! Usage: `cargo run --release --example lambda_sweep -- [lambda,...] [epochs]`
//! (defaults: `0,0.1,1,10` and 30 epochs).

use moc_core::data::{synth_generate, SynthConfig};
use moc_core::eval::gating_report;
use moc_core::model::{desk_configs, Variant};
use moc_core::train::{training_samples, PatchSet, Trainer, TrainingConfig};
use moc_core::Precision;

fn main() -> moc_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambdas: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "0,0.1,1,10".into())
        .split(',')
        .map(|s| s.trim().parse().expect("lambda list"))
        .collect();
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epoch count"));

    let train_scenes = synth_generate(&SynthConfig::modes3(), 50, 1)?;
    let test_scenes = synth_generate(&SynthConfig::modes3(), 30, 2)?;
    let (expert, gate) = desk_configs();
    println!("lambda,epoch,expert_loss,gate_penalty,gate_entropy,mean_gate,majority_per_mode");
    for lambda in lambdas {
        let cfg = TrainingConfig {
            variant: Variant::Moc,
            k: 4,
            lambda,
            epochs,
            seed: 1,
            precision: Precision::Standard,
            expert,
            gate: gate.clone(),
            ..TrainingConfig::default()
        };
        let data = PatchSet::<f32>::from_samples(&training_samples(&train_scenes, &cfg)?)?;
        let mut trainer = Trainer::<f32>::new(cfg)?;
        let logs = trainer.run(&data, None, |log| {
            eprintln!("lambda {lambda} epoch {} expert loss {:.4}", log.epoch, log.expert_loss);
            Ok(())
        })?;
        let last = logs.last().expect("at least one epoch");
        let gates: Vec<String> = last.mean_gate.iter().flatten().map(|g| format!("{g:.3}")).collect();
        let modes: Vec<String> = gating_report(&trainer.model, &test_scenes)?
            .per_mode()
            .iter()
            .map(|m| format!("{}:{}@{:.2}", m.mode, m.majority_expert + 1, m.majority_share))
            .collect();
        println!(
            "{lambda},{},{:.4},{:.4},{:.4},{},{}",
            last.epoch,
            last.expert_loss,
            last.gate_penalty.unwrap_or(0.0),
            last.gate_entropy.unwrap_or(0.0),
            gates.join("/"),
            modes.join(" ")
        );
    }
    Ok(())
}
