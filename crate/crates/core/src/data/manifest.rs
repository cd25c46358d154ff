//! Dataset manifests: one `scene-id image-path annotation-path [mode-label]`
//! line per scene, paths relative to the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::data::pgm::write_pgm;
use crate::data::scene::{format_annotations, load_scene, Scene};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub annotations: PathBuf,
    pub mode_label: Option<String>,
}

pub fn parse_manifest(text: &str, base: &Path, context: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
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
        if !(3..=4).contains(&f.len()) {
            return Err(err("expected: scene-id image-path annotation-path [mode-label]".into()));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(err(format!("duplicate scene id {:?}", f[0])));
        }
        entries.push(ManifestEntry {
            id: f[0].to_string(),
            image: base.join(f[1]),
            annotations: base.join(f[2]),
            mode_label: f.get(3).map(|s| s.to_string()),
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            context: context.to_string(),
            message: "manifest lists no scenes".into(),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base, &path.display().to_string())
}

/// Loads every scene of a manifest, in manifest order.
pub fn load_manifest(path: &Path) -> Result<Vec<Scene>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let mut scene = load_scene(&e.id, &e.image, &e.annotations)?;
            scene.mode_label = e.mode_label;
            Ok(scene)
        })
        .collect()
}

/// Writes `<id>.pgm`, `<id>.txt` per scene and a manifest into `dir`, and
/// returns the manifest path.
pub fn write_dataset(scenes: &[Scene], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for s in scenes {
        if s.id.is_empty() || s.id.contains(char::is_whitespace) || s.id.contains(['/', '\\']) {
            return Err(Error::validation(format!(
                "scene id {:?} cannot be used as a file name",
                s.id
            )));
        }
        let (img, ann) = (format!("{}.pgm", s.id), format!("{}.txt", s.id));
        write_pgm(&dir.join(&img), &s.image)?;
        let ann_path = dir.join(&ann);
        std::fs::write(&ann_path, format_annotations(&s.dots)).map_err(|e| Error::io(&ann_path, e))?;
        manifest.push_str(&format!("{} {img} {ann}", s.id));
        if let Some(mode) = &s.mode_label {
            manifest.push(' ');
            manifest.push_str(mode);
        }
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
