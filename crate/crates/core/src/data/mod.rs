//! Scenes and their annotations, density-map targets, patch sampling, k-fold
//! splits, dataset files, and the synthetic scene generator.

mod density;
mod kfold;
mod manifest;
mod patches;
pub mod pgm;
mod scene;
mod synth;

pub use density::{render_density, DensityMap, DEFAULT_SIGMA, TRUNCATION_SIGMAS};
pub use kfold::kfold_split;
pub use manifest::{load_manifest, parse_manifest, read_manifest, write_dataset, ManifestEntry, MANIFEST_FILE};
pub use patches::{
    extract_patch, grid_offsets, grid_partition, random_crops, PatchOrigin, PatchSample, MALL_CROPS, UCF_CROPS,
};
pub use scene::{format_annotations, load_scene, parse_annotation_lines, parse_annotations, Dot, Scene};
pub use synth::{modes3, parse_modes, synth_generate, ModeSpec, SynthConfig};
