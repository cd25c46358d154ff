//! Whole-image prediction, error metrics, gate reports and cross-validation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{grid_offsets, kfold_split, Scene};
use crate::error::{Error, Result};
use crate::model::PatchCounter;
use crate::moe::entropy;
use crate::seed::{self, streams};
use crate::tensor::{Real, Tensor};
use crate::train::{training_samples, EpochLog, PatchSet, Trainer, TrainingConfig};

/// Grid patches of a scene as one `[P, 1, S, S]` batch, row-major over the grid.
pub fn grid_batch<T: Real>(scene: &Scene, size: usize) -> Result<Tensor<T>> {
    let (h, w) = (scene.height(), scene.width());
    if h < size || w < size {
        return Err(Error::validation(format!(
            "scene {} is {w}x{h}, smaller than one {size}x{size} patch",
            scene.id
        )));
    }
    let offsets = grid_offsets(h, w, size);
    let src = scene.image.data();
    let mut data = Vec::with_capacity(offsets.len() * size * size);
    for (x, y) in &offsets {
        for r in *y..y + size {
            data.extend(src[r * w + x..r * w + x + size].iter().map(|&v| T::of(v)));
        }
    }
    Tensor::from_vec(&[offsets.len(), 1, size, size], data)
}

/// Sum of eval-mode patch counts over the scene's grid; remainder strips
/// contribute nothing. With `clamp`, negative patch counts count as zero.
pub fn predict_image<T: Real, M: PatchCounter<T> + ?Sized>(model: &M, scene: &Scene, clamp: bool) -> Result<f64> {
    let counts = model.count(&grid_batch(scene, model.patch_size())?)?;
    Ok(counts
        .data()
        .iter()
        .map(|c| {
            let c = c.to_f64_lossless();
            if clamp {
                c.max(0.0)
            } else {
                c
            }
        })
        .sum())
}

/// [`predict_image`] for every scene, in input order.
pub fn predict_all<T: Real, M: PatchCounter<T> + ?Sized>(model: &M, scenes: &[Scene], clamp: bool) -> Result<Vec<f64>> {
    scenes.par_iter().map(|s| predict_image(model, s, clamp)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub scene_id: String,
    pub truth: f64,
    pub prediction: f64,
}

impl ImageResult {
    pub fn abs_err(&self) -> f64 {
        (self.truth - self.prediction).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageResult>,
    pub mae: f64,
    pub msd: f64,
    pub mse: f64,
    /// `None` when some image has zero ground truth; see [`MetricsReport::mde`].
    mde: Option<f64>,
}

impl MetricsReport {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Mean relative error; undefined if any image has a zero count.
    pub fn mde(&self) -> Result<f64> {
        self.mde.ok_or_else(|| Error::MetricUndefined {
            metric: "mde",
            scenes: self
                .rows
                .iter()
                .filter(|r| r.truth == 0.0)
                .map(|r| r.scene_id.clone())
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,truth,prediction,abs_err\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", r.scene_id, r.truth, r.prediction, r.abs_err());
        }
        let mde = self.mde.map_or_else(|| "undefined".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(out, "AGGREGATE,mae,msd,mse,mde");
        let _ = writeln!(out, "AGGREGATE,{:?},{:?},{:?},{mde}", self.mae, self.msd, self.mse);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores per-image predictions against truths.
pub fn score(rows: Vec<ImageResult>) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::validation("score: no images"));
    }
    if let Some(r) = rows.iter().find(|r| !(r.truth.is_finite() && r.prediction.is_finite())) {
        return Err(Error::validation(format!("score: non-finite value for {}", r.scene_id)));
    }
    let n = rows.len() as f64;
    let mae = rows.iter().map(ImageResult::abs_err).sum::<f64>() / n;
    let mse = rows.iter().map(|r| (r.truth - r.prediction).powi(2)).sum::<f64>() / n;
    let mde = rows
        .iter()
        .all(|r| r.truth != 0.0)
        .then(|| rows.iter().map(|r| r.abs_err() / r.truth).sum::<f64>() / n);
    Ok(MetricsReport {
        mae,
        msd: mse.sqrt(),
        mse,
        mde,
        rows,
    })
}

/// Scores `truths` and `predictions` paired by position; ids are `0..n`.
pub fn score_values(truths: &[f64], predictions: &[f64]) -> Result<MetricsReport> {
    if truths.len() != predictions.len() {
        return Err(Error::validation(format!(
            "score: {} truths but {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    score(
        truths
            .iter()
            .zip(predictions)
            .enumerate()
            .map(|(i, (&truth, &prediction))| ImageResult {
                scene_id: i.to_string(),
                truth,
                prediction,
            })
            .collect(),
    )
}

/// Predicts every scene and scores it against its dot count.
pub fn evaluate<T: Real, M: PatchCounter<T> + ?Sized>(
    model: &M,
    scenes: &[Scene],
    clamp: bool,
) -> Result<MetricsReport> {
    let predictions = predict_all(model, scenes, clamp)?;
    score(
        scenes
            .iter()
            .zip(predictions)
            .map(|(s, prediction)| ImageResult {
                scene_id: s.id.clone(),
                truth: s.count() as f64,
                prediction,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingRow {
    pub scene_id: String,
    pub mode: Option<String>,
    /// Mean gate vector over the scene's grid patches.
    pub mean_gate: Vec<f64>,
    /// 0-based index of the largest mean weight (first on ties).
    pub dominant: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: String,
    pub images: usize,
    pub mean_gate: Vec<f64>,
    /// Expert most often dominant within the mode (lowest index on ties).
    pub majority_expert: usize,
    /// Fraction of the mode's images whose dominant expert is `majority_expert`.
    pub majority_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingReport {
    pub k: usize,
    pub rows: Vec<GatingRow>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

impl GatingReport {
    /// Per-mode aggregates in order of first appearance; unlabeled rows are skipped.
    pub fn per_mode(&self) -> Vec<ModeSummary> {
        let mut modes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if let Some(m) = &r.mode {
                if !modes.contains(&m.as_str()) {
                    modes.push(m);
                }
            }
        }
        modes
            .into_iter()
            .map(|mode| {
                let rows: Vec<&GatingRow> = self.rows.iter().filter(|r| r.mode.as_deref() == Some(mode)).collect();
                let n = rows.len() as f64;
                let mut mean_gate = vec![0.0; self.k];
                let mut votes = vec![0.0; self.k];
                for r in &rows {
                    for (m, g) in mean_gate.iter_mut().zip(&r.mean_gate) {
                        *m += g / n;
                    }
                    votes[r.dominant] += 1.0;
                }
                let majority_expert = argmax(&votes);
                ModeSummary {
                    mode: mode.to_string(),
                    images: rows.len(),
                    mean_gate,
                    majority_expert,
                    majority_share: votes[majority_expert] / n,
                }
            })
            .collect()
    }

    /// Dominant expert indices are written 1-based. Rows labelled `MODE:<name>`
    /// carry the per-mode means, with the majority expert and its share.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,mode,dominant_expert,entropy");
        for j in 1..=self.k {
            let _ = write!(out, ",g_{j}");
        }
        out.push('\n');
        let gates = |g: &[f64]| g.iter().map(|v| format!(",{v:?}")).collect::<String>();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:?}{}",
                r.scene_id,
                r.mode.as_deref().unwrap_or(""),
                r.dominant + 1,
                r.entropy,
                gates(&r.mean_gate)
            );
        }
        for m in self.per_mode() {
            let _ = writeln!(
                out,
                "MODE:{},{},{},{:?}{}",
                m.mode,
                m.mode,
                m.majority_expert + 1,
                entropy(&m.mean_gate),
                gates(&m.mean_gate)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean eval-mode gate vector of each scene's grid patches.
pub fn gating_report<T: Real, M: PatchCounter<T> + ?Sized>(model: &M, scenes: &[Scene]) -> Result<GatingReport> {
    let k = model.num_experts();
    let rows = scenes
        .par_iter()
        .map(|scene| {
            let g = model
                .gate(&grid_batch(scene, model.patch_size())?)?
                .ok_or_else(|| Error::config("model has no input-dependent gate"))?;
            let patches = g.dim(0) as f64;
            let mut mean_gate = vec![0.0; k];
            for row in g.data().chunks_exact(k) {
                for (m, v) in mean_gate.iter_mut().zip(row) {
                    *m += v.to_f64_lossless();
                }
            }
            for m in &mut mean_gate {
                *m /= patches;
            }
            Ok(GatingRow {
                scene_id: scene.id.clone(),
                mode: scene.mode_label.clone(),
                dominant: argmax(&mean_gate),
                entropy: entropy(&mean_gate),
                mean_gate,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GatingReport { k, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub report: MetricsReport,
    pub logs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    /// Metrics pooled over every held-out image, in fold order.
    pub aggregate: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossValOptions {
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
    pub clamp: bool,
}

/// Training seed of fold `f`: the same for every model trained from `config_seed`,
/// so runs of different variants are paired.
pub fn fold_seed(config_seed: u64, fold: usize) -> u64 {
    seed::derive(config_seed, streams::FOLD_TRAIN + fold as u64)
}

/// k-fold cross-validation: each fold trains a fresh model on the crops of
/// the other folds' scenes and scores the held-out scenes.
pub fn crossval<T: Real>(
    config: &TrainingConfig,
    scenes: &[Scene],
    options: CrossValOptions,
    mut on_epoch: impl FnMut(usize, &EpochLog),
) -> Result<CrossValReport> {
    if options.folds < 2 {
        return Err(Error::config(format!(
            "cross-validation needs at least 2 folds, got {}",
            options.folds
        )));
    }
    config.validate()?;
    let assignment = kfold_split(&(0..scenes.len()).collect::<Vec<_>>(), options.folds, options.seed)?;
    let mut folds = Vec::with_capacity(options.folds);
    for (f, test) in assignment.iter().enumerate() {
        let train_scenes: Vec<Scene> = (0..scenes.len())
            .filter(|i| !test.contains(i))
            .map(|i| scenes[i].clone())
            .collect();
        let test_scenes: Vec<Scene> = test.iter().map(|&i| scenes[i].clone()).collect();
        let fold_config = TrainingConfig {
            seed: fold_seed(config.seed, f),
            ..config.clone()
        };
        let data = PatchSet::<T>::from_samples(&training_samples(&train_scenes, &fold_config)?)?;
        let mut trainer = Trainer::<T>::new(fold_config)?;
        let logs = trainer.run(&data, None, |log| {
            on_epoch(f, log);
            Ok(())
        })?;
        folds.push(FoldReport {
            fold: f,
            test_ids: test_scenes.iter().map(|s| s.id.clone()).collect(),
            report: evaluate(&trainer.model, &test_scenes, options.clamp)?,
            logs,
        });
    }
    let aggregate = score(folds.iter().flat_map(|f| f.report.rows.iter().cloned()).collect())?;
    Ok(CrossValReport { folds, aggregate })
}
