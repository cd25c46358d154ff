use rand::Rng;

use crate::data::density::DensityMap;
use crate::data::scene::Scene;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random crops per training image in the UCF_CC_50 protocol.
pub const UCF_CROPS: usize = 1600;
/// Random crops per training image in the Mall protocol.
pub const MALL_CROPS: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchOrigin {
    pub scene_id: String,
    pub x: usize,
    pub y: usize,
}

/// A square training or evaluation unit with its density-sum target.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// `[1, S, S]`.
    pub patch: Tensor<f64>,
    pub target: f64,
    pub origin: PatchOrigin,
}

fn check_fits(scene: &Scene, density: &DensityMap, size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::config("patch size must be positive"));
    }
    if (density.height(), density.width()) != (scene.height(), scene.width()) {
        return Err(Error::validation(format!(
            "density map {}x{} does not match scene {} ({}x{})",
            density.width(),
            density.height(),
            scene.id,
            scene.width(),
            scene.height()
        )));
    }
    if scene.height() < size || scene.width() < size {
        return Err(Error::validation(format!(
            "scene {} ({}x{}) is smaller than the {size}x{size} patch",
            scene.id,
            scene.width(),
            scene.height()
        )));
    }
    Ok(())
}

/// Cuts the patch with top-left corner `(x, y)`; the caller guarantees it fits.
pub fn extract_patch(scene: &Scene, density: &DensityMap, x: usize, y: usize, size: usize) -> PatchSample {
    let w = scene.width();
    let src = scene.image.data();
    let mut data = Vec::with_capacity(size * size);
    for r in y..y + size {
        data.extend_from_slice(&src[r * w + x..r * w + x + size]);
    }
    PatchSample {
        patch: Tensor::from_vec(&[1, size, size], data).expect("patch shape"),
        target: density.region_sum(x, y, size, size),
        origin: PatchOrigin {
            scene_id: scene.id.clone(),
            x,
            y,
        },
    }
}

/// Top-left corners `(x, y)` of the non-overlapping grid, row-major. Strips
/// narrower than a patch on the right and bottom are left out.
pub fn grid_offsets(height: usize, width: usize, size: usize) -> Vec<(usize, usize)> {
    let (rows, cols) = (height / size, width / size);
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (j * size, i * size)))
        .collect()
}

pub fn grid_partition(scene: &Scene, density: &DensityMap, size: usize) -> Result<Vec<PatchSample>> {
    check_fits(scene, density, size)?;
    Ok(grid_offsets(scene.height(), scene.width(), size)
        .into_iter()
        .map(|(x, y)| extract_patch(scene, density, x, y, size))
        .collect())
}

/// `count` crops at offsets drawn uniformly from every position where the patch fits.
pub fn random_crops<R: Rng + ?Sized>(
    scene: &Scene,
    density: &DensityMap,
    size: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PatchSample>> {
    check_fits(scene, density, size)?;
    if count == 0 {
        return Err(Error::config("crop count must be at least 1"));
    }
    let (max_x, max_y) = (scene.width() - size, scene.height() - size);
    Ok((0..count)
        .map(|_| {
            let x = rng.gen_range(0..=max_x);
            let y = rng.gen_range(0..=max_y);
            extract_patch(scene, density, x, y, size)
        })
        .collect())
}
