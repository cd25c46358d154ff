use crate::data::scene::Scene;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian bandwidth used when none is configured.
pub const DEFAULT_SIGMA: f64 = 4.0;
/// Kernels are cut off at this many standard deviations from the dot.
pub const TRUNCATION_SIGMAS: f64 = 4.0;

/// Per-pixel target density; summing it over a region gives the region's count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    /// `[H, W]`.
    pub values: Tensor<f64>,
    pub sigma: f64,
}

impl DensityMap {
    pub fn height(&self) -> usize {
        self.values.dim(0)
    }

    pub fn width(&self) -> usize {
        self.values.dim(1)
    }

    pub fn total(&self) -> f64 {
        self.values.data().iter().sum()
    }

    /// Sum over rows `y..y+h` and columns `x..x+w`, row by row.
    pub fn region_sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let width = self.width();
        let mut sum = 0.0;
        for r in y..y + h {
            for &v in &self.values.data()[r * width + x..r * width + x + w] {
                sum += v;
            }
        }
        sum
    }
}

/// Sum of `exp(-(c + 0.5 - x)^2 / (2 sigma^2))` over every integer `c`.
fn axis_mass(x: f64, sigma: f64) -> f64 {
    let reach = (12.0 * sigma).ceil() as i64 + 1;
    let base = x.floor() as i64;
    let denom = 2.0 * sigma * sigma;
    (base - reach..=base + reach)
        .map(|c| {
            let d = c as f64 + 0.5 - x;
            (-d * d / denom).exp()
        })
        .sum()
}

/// Places a unit-mass Gaussian at each dot.
///
/// Pixel `(r, c)` is sampled at its center `(c + 0.5, r + 0.5)`. Each kernel is
/// normalized over the unbounded pixel grid and then truncated to pixels within
/// `4 sigma` of the dot, so a dot far from the borders contributes just under 1.
pub fn render_density(scene: &Scene, sigma: f64) -> Result<DensityMap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config(format!("density sigma must be positive, got {sigma}")));
    }
    let (h, w) = (scene.height(), scene.width());
    let mut values = Tensor::zeros(&[h, w]);
    let radius = TRUNCATION_SIGMAS * sigma;
    let denom = 2.0 * sigma * sigma;
    for &(x, y) in &scene.dots {
        let norm = axis_mass(x, sigma) * axis_mass(y, sigma);
        let cols = (x - radius - 0.5).ceil().max(0.0) as i64..=((x + radius - 0.5).floor() as i64).min(w as i64 - 1);
        let rows = (y - radius - 0.5).ceil().max(0.0) as i64..=((y + radius - 0.5).floor() as i64).min(h as i64 - 1);
        for r in rows {
            let dy = r as f64 + 0.5 - y;
            for c in cols.clone() {
                let dx = c as f64 + 0.5 - x;
                let d2 = dx * dx + dy * dy;
                if d2 <= radius * radius {
                    values.data_mut()[r as usize * w + c as usize] += (-d2 / denom).exp() / norm;
                }
            }
        }
    }
    Ok(DensityMap { values, sigma })
}
