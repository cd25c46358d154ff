//! Seeded synthetic scenes: bright blobs on a textured background, each scene
//! drawn from one of several appearance modes (blob size and crowd density).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::density::{DEFAULT_SIGMA, TRUNCATION_SIGMAS};
use crate::data::scene::{Dot, Scene};
use crate::error::{Error, Result};
use crate::seed::{self, streams};
use crate::tensor::Tensor;

/// Blobs may cover at most this fraction of the placement area; above it
/// rejection sampling can stall before every blob finds room.
const MAX_COVERAGE: f64 = 0.35;
const PLACEMENT_ATTEMPTS: usize = 20_000;
/// Side of the coarse grid behind the background texture.
const TEXTURE_CELL: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub name: String,
    /// Inclusive blob radius range in pixels.
    pub radius: (f64, f64),
    /// Inclusive blob count range per scene.
    pub count: (usize, usize),
    /// Relative probability of drawing this mode.
    pub weight: f64,
}

impl ModeSpec {
    pub fn new(name: &str, radius: (f64, f64), count: (usize, usize)) -> Self {
        ModeSpec {
            name: name.to_string(),
            radius,
            count,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub modes: Vec<ModeSpec>,
    pub height: usize,
    pub width: usize,
    /// Minimum distance from a blob center to the image border.
    pub margin: f64,
}

/// Small dense crowds, medium groups, and a few large objects.
pub fn modes3() -> Vec<ModeSpec> {
    vec![
        ModeSpec::new("small-dense", (2.0, 3.0), (40, 60)),
        ModeSpec::new("medium", (4.0, 6.0), (10, 20)),
        ModeSpec::new("large-sparse", (8.0, 12.0), (2, 6)),
    ]
}

/// Reads one mode per line: `name rmin rmax nmin nmax [weight]`.
pub fn parse_modes(text: &str, context: &str) -> Result<Vec<ModeSpec>> {
    let mut modes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            context: format!("{context}, line {}", i + 1),
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(5..=6).contains(&f.len()) {
            return Err(err("expected: name rmin rmax nmin nmax [weight]".into()));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| err(format!("{s:?} is not a number")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(format!("{s:?} is not a count")));
        modes.push(ModeSpec {
            name: f[0].to_string(),
            radius: (real(f[1])?, real(f[2])?),
            count: (int(f[3])?, int(f[4])?),
            weight: if f.len() == 6 { real(f[5])? } else { 1.0 },
        });
    }
    Ok(modes)
}

impl SynthConfig {
    /// `modes3` on 144x144 scenes with the default density margin.
    pub fn modes3() -> Self {
        SynthConfig {
            modes: modes3(),
            height: 144,
            width: 144,
            margin: TRUNCATION_SIGMAS * DEFAULT_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::config("synthetic config needs at least one mode"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::config(format!("margin must be >= 0, got {}", self.margin)));
        }
        let (aw, ah) = (
            self.width as f64 - 2.0 * self.margin,
            self.height as f64 - 2.0 * self.margin,
        );
        if aw <= 0.0 || ah <= 0.0 {
            return Err(Error::config(format!(
                "margin {} leaves no room in a {}x{} scene",
                self.margin, self.width, self.height
            )));
        }
        for m in &self.modes {
            let (r0, r1) = m.radius;
            if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
                return Err(Error::config(format!("mode {}: bad radius range {r0}..{r1}", m.name)));
            }
            if m.count.0 > m.count.1 {
                return Err(Error::config(format!("mode {}: bad count range {:?}", m.name, m.count)));
            }
            if !(m.weight.is_finite() && m.weight > 0.0) {
                return Err(Error::config(format!("mode {}: weight must be positive", m.name)));
            }
            let covered = m.count.1 as f64 * std::f64::consts::PI * r1 * r1;
            if covered > MAX_COVERAGE * aw * ah {
                return Err(Error::config(format!(
                    "mode {}: {} blobs of radius {r1} cannot be placed without overlap in a {aw}x{ah} area",
                    m.name, m.count.1
                )));
            }
        }
        Ok(())
    }
}

fn pick_mode<'a>(modes: &'a [ModeSpec], rng: &mut ChaCha8Rng) -> &'a ModeSpec {
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    let mut u = rng.gen::<f64>() * total;
    for m in modes {
        if u < m.weight {
            return m;
        }
        u -= m.weight;
    }
    modes.last().expect("validated non-empty")
}

/// Blob centers and radii; blobs may touch but never overlap.
fn place_blobs(cfg: &SynthConfig, mode: &ModeSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(Dot, f64)>> {
    let n = rng.gen_range(mode.count.0..=mode.count.1);
    let (r0, r1) = mode.radius;
    let mut blobs: Vec<(Dot, f64)> = Vec::with_capacity(n);
    let mut attempts = 0;
    while blobs.len() < n {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS * n.max(1) {
            return Err(Error::config(format!(
                "mode {}: could not place {n} non-overlapping blobs",
                mode.name
            )));
        }
        let r = if r0 == r1 { r0 } else { rng.gen_range(r0..=r1) };
        let x = rng.gen_range(cfg.margin..cfg.width as f64 - cfg.margin);
        let y = rng.gen_range(cfg.margin..cfg.height as f64 - cfg.margin);
        let clear = blobs.iter().all(|&((bx, by), br)| {
            let (dx, dy) = (bx - x, by - y);
            dx * dx + dy * dy >= (br + r) * (br + r)
        });
        if clear {
            blobs.push(((x, y), r));
        }
    }
    Ok(blobs)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth low-frequency texture plus per-pixel grain.
fn background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.gen_range(0.15..0.3);
    let gh = (h as f64 / TEXTURE_CELL).ceil() as usize + 2;
    let gw = (w as f64 / TEXTURE_CELL).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-0.08..0.08)).collect();
    let mut img = Vec::with_capacity(h * w);
    for r in 0..h {
        let fy = (r as f64 + 0.5) / TEXTURE_CELL;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for c in 0..w {
            let fx = (c as f64 + 0.5) / TEXTURE_CELL;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let at = |i: usize, j: usize| grid[i * gw + j];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            let grain = rng.gen_range(-0.04..0.04);
            img.push(base + top * (1.0 - ty) + bottom * ty + grain);
        }
    }
    img
}

fn render(cfg: &SynthConfig, blobs: &[(Dot, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    let mut img = background(h, w, rng);
    for &((x, y), r) in blobs {
        let level = rng.gen_range(0.55..0.75);
        let c0 = (x - r - 1.0).floor().max(0.0) as usize;
        let c1 = ((x + r + 1.0).ceil() as usize).min(w);
        let r0 = (y - r - 1.0).floor().max(0.0) as usize;
        let r1 = ((y + r + 1.0).ceil() as usize).min(h);
        for row in r0..r1 {
            for col in c0..c1 {
                let (dx, dy) = (col as f64 + 0.5 - x, row as f64 + 0.5 - y);
                let coverage = (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
                img[row * w + col] += level * coverage;
            }
        }
    }
    // Quantized to 8-bit levels so scenes survive a PGM round trip unchanged.
    img.iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .collect()
}

/// Generates `n` scenes; scene `i` depends only on `(seed, i)`.
pub fn synth_generate(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, streams::SYNTH_SCENE + i as u64);
            let mode = pick_mode(&cfg.modes, &mut rng);
            let blobs = place_blobs(cfg, mode, &mut rng)?;
            let pixels = render(cfg, &blobs, &mut rng);
            let image = Tensor::from_vec(&[1, cfg.height, cfg.width], pixels)?;
            let dots = blobs.into_iter().map(|(d, _)| d).collect();
            Scene::new(format!("scene_{i:04}"), image, dots, Some(mode.name.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mode_gives_background_only() {
        let cfg = SynthConfig {
            modes: vec![ModeSpec::new("empty", (3.0, 3.0), (0, 0))],
            ..SynthConfig::modes3()
        };
        let scenes = synth_generate(&cfg, 4, 1).unwrap();
        assert!(scenes.iter().all(|s| s.dots.is_empty()));
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::modes3();
        assert_eq!(synth_generate(&cfg, 6, 5).unwrap(), synth_generate(&cfg, 6, 5).unwrap());
        assert_ne!(synth_generate(&cfg, 2, 5).unwrap(), synth_generate(&cfg, 2, 6).unwrap());
    }

    #[test]
    fn blobs_respect_margin_and_spacing() {
        let cfg = SynthConfig::modes3();
        for mode in &cfg.modes {
            let mut rng = seed::rng(9, 0);
            let blobs = place_blobs(&cfg, mode, &mut rng).unwrap();
            for (i, &((x, y), r)) in blobs.iter().enumerate() {
                assert!(x >= cfg.margin && x < 144.0 - cfg.margin && y >= cfg.margin && y < 144.0 - cfg.margin);
                for &((bx, by), br) in &blobs[..i] {
                    assert!(((bx - x).powi(2) + (by - y).powi(2)).sqrt() >= r + br);
                }
            }
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let mut cfg = SynthConfig::modes3();
        cfg.modes[0].count = (500, 500);
        assert!(matches!(synth_generate(&cfg, 1, 0), Err(Error::Config(_))));
        let mut cfg = SynthConfig::modes3();
        cfg.margin = 80.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.modes.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_file_parses() {
        let modes = parse_modes("# name r n\nsmall 2 3 40 60\nbig 8 12 2 6 2.5\n", "m").unwrap();
        assert_eq!(modes[0], ModeSpec::new("small", (2.0, 3.0), (40, 60)));
        assert_eq!(modes[1].weight, 2.5);
        assert!(parse_modes("x 1 2 3\n", "m").is_err());
    }
}
