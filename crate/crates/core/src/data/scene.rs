use std::path::Path;

use crate::data::pgm::read_pgm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A target center `(x, y)` in pixels, origin top-left.
pub type Dot = (f64, f64);

/// A grayscale image with dot annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    pub dots: Vec<Dot>,
    /// Appearance mode of synthetic scenes, for analysis only.
    pub mode_label: Option<String>,
}

impl Scene {
    pub fn new(id: impl Into<String>, image: Tensor<f64>, dots: Vec<Dot>, mode_label: Option<String>) -> Result<Self> {
        let id = id.into();
        let s = image.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::validation(format!(
                "scene {id}: expected a [1, H, W] image, got {s:?}"
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!(
                "scene {id}: pixel values must lie in [0, 1]"
            )));
        }
        let (h, w) = (s[1], s[2]);
        for (i, &dot) in dots.iter().enumerate() {
            check_dot(dot, w, h).map_err(|m| Error::validation(format!("scene {id}: dot {}: {m}", i + 1)))?;
        }
        Ok(Scene {
            id,
            image,
            dots,
            mode_label,
        })
    }

    pub fn height(&self) -> usize {
        self.image.dim(1)
    }

    pub fn width(&self) -> usize {
        self.image.dim(2)
    }

    /// Ground-truth count: the number of annotated dots.
    pub fn count(&self) -> usize {
        self.dots.len()
    }
}

fn check_dot((x, y): Dot, w: usize, h: usize) -> std::result::Result<(), String> {
    if (0.0..w as f64).contains(&x) && (0.0..h as f64).contains(&y) {
        Ok(())
    } else {
        Err(format!("({x}, {y}) lies outside the {w}x{h} image"))
    }
}

/// Parses "x y" lines; blank lines and `#` comments are skipped. Returns each
/// dot with its 1-based line number.
pub fn parse_annotation_lines(text: &str, context: &str) -> Result<Vec<(usize, Dot)>> {
    let mut dots = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            context: format!("{context}, line {}", i + 1),
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected \"x y\", got {line:?}")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{s:?} is not a finite number")))
        };
        dots.push((i + 1, (num(fields[0])?, num(fields[1])?)));
    }
    Ok(dots)
}

pub fn parse_annotations(text: &str, context: &str) -> Result<Vec<Dot>> {
    Ok(parse_annotation_lines(text, context)?
        .into_iter()
        .map(|(_, d)| d)
        .collect())
}

/// One "x y" line per dot, printed so that parsing restores the exact values.
pub fn format_annotations(dots: &[Dot]) -> String {
    dots.iter().map(|(x, y)| format!("{x:?} {y:?}\n")).collect()
}

/// Loads a PGM image and its annotation file.
pub fn load_scene(id: &str, image_path: &Path, annotation_path: &Path) -> Result<Scene> {
    let image = read_pgm(image_path)?;
    let context = annotation_path.display().to_string();
    let text = std::fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let lines = parse_annotation_lines(&text, &context)?;
    let (h, w) = (image.dim(1), image.dim(2));
    for &(line, dot) in &lines {
        check_dot(dot, w, h).map_err(|m| Error::validation(format!("{context}, line {line}: dot {m}")))?;
    }
    Scene::new(id, image, lines.into_iter().map(|(_, d)| d).collect(), None)
}
