//! JSON-lines annotation manifests.
//!
//! One line per image:
//!
//! ```text
//! {"image":"images/000001.png","boxes":[[12,40,30,9,"blockA-3"]],"source":"real"}
//! ```
//!
//! Image paths are relative to the dataset root. `source` is optional and
//! defaults to `real`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnnotatedSample, SourceTag};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par::{self, Parallelism};
use crate::patch::GrayscalePatch;

pub const DEFAULT_MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub boxes: Vec<(u32, u32, u32, u32, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTag>,
}

impl ManifestRow {
    pub fn for_sample(image: String, s: &AnnotatedSample) -> Self {
        ManifestRow {
            image,
            boxes: s
                .boxes
                .iter()
                .zip(&s.defect_ids)
                .map(|(b, id)| (b.x, b.y, b.w, b.h, id.clone()))
                .collect(),
            source: Some(s.source),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load every sample listed in `manifest` (relative to `root` unless
/// absolute). Output order is manifest order; images are decoded in
/// parallel.
pub fn load_dataset(root: &Path, manifest: &Path) -> Result<Vec<AnnotatedSample>> {
    let manifest_path = if manifest.is_absolute() {
        manifest.to_path_buf()
    } else {
        root.join(manifest)
    };
    let rows = read_manifest(&manifest_path)?;
    par::try_map_slice(&rows, Parallelism::Parallel, |row| {
        let path = root.join(&row.image);
        let image = GrayscalePatch::load_png(&path)?;
        let mut s = AnnotatedSample::new(image, row.source.unwrap_or_default());
        for (x, y, w, h, id) in &row.boxes {
            s.push(BoundingBox::new(*x, *y, *w, *h), id.clone());
        }
        s.validate(&row.image)?;
        Ok(s)
    })
}

/// Write `samples` under `root` as `images/<prefix><index>.png` plus a
/// manifest named `manifest_name`. Returns the manifest path.
pub fn save_dataset(root: &Path, manifest_name: &str, prefix: &str, samples: &[AnnotatedSample]) -> Result<PathBuf> {
    let img_dir = root.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let rows = par::try_map_indexed(samples.len(), Parallelism::Parallel, |i| {
        let rel = format!("images/{prefix}{i:06}.png");
        samples[i].image.save_png(&root.join(&rel))?;
        Ok(ManifestRow::for_sample(rel, &samples[i]))
    })?;
    let path = root.join(manifest_name);
    write_manifest(&path, &rows)?;
    Ok(path)
}

/// Validate all samples, labelling errors by index.
pub fn validate_samples(samples: &[AnnotatedSample]) -> Result<()> {
    samples
        .iter()
        .enumerate()
        .try_for_each(|(i, s)| s.validate(&format!("#{i}")))
}
