//! Paired-dataset ingestion: `<root>/vi/*.png` and `<root>/ir/*.png`,
//! joined by filename stem, sorted lexicographically.

use std::collections::BTreeSet;
use std::path::Path;

use lapfuse_core::image::rgb_to_ycbcr;
use lapfuse_core::{Plane, SourcePair};
use rayon::prelude::*;

use crate::error::{Result, ToolsError};
use crate::io::load_png;

/// Loaded pairs plus the per-file problems that were skipped over.
#[derive(Debug)]
pub struct DatasetLoad {
    pub pairs: Vec<SourcePair>,
    /// (pair id, reason) for every rejected or unreadable entry.
    pub skipped: Vec<(String, String)>,
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    let entries = std::fs::read_dir(dir).map_err(ToolsError::io(dir))?;
    for entry in entries {
        let entry = entry.map_err(ToolsError::io(dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png"))
            == Some(true)
        {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

fn ir_plane(path: &Path) -> Result<Plane> {
    let img = load_png(path)?;
    Ok(match img.channels {
        1 => img.channel(0),
        // some datasets store the second modality as RGB; take its luminance
        3 => rgb_to_ycbcr(&img)?.y,
        _ => unreachable!("loader emits 1 or 3 channels"),
    })
}

/// Load every matched pair under `root`. Grayscale visible entries are
/// promoted to 3 channels; mismatched or unreadable entries are skipped with
/// a recorded reason. Ordering is deterministic (sorted by stem).
pub fn load_pair_dataset(root: &Path) -> Result<DatasetLoad> {
    let vi_dir = root.join("vi");
    let ir_dir = root.join("ir");
    if !vi_dir.is_dir() || !ir_dir.is_dir() {
        return Err(ToolsError::Dataset(format!(
            "{} must contain vi/ and ir/ subdirectories",
            root.display()
        )));
    }
    let vi_stems = png_stems(&vi_dir)?;
    let ir_stems = png_stems(&ir_dir)?;
    let shared: Vec<String> = vi_stems.intersection(&ir_stems).cloned().collect();
    if shared.is_empty() {
        return Err(ToolsError::Dataset(format!(
            "no filename stems shared between {} and {}",
            vi_dir.display(),
            ir_dir.display()
        )));
    }

    // parallel prefetch; order restored by collecting per-stem results
    let loaded: Vec<(String, std::result::Result<SourcePair, String>)> = shared
        .par_iter()
        .map(|stem| {
            let one = (|| -> Result<SourcePair> {
                let vis = load_png(&vi_dir.join(format!("{stem}.png")))?.to_rgb();
                let ir = ir_plane(&ir_dir.join(format!("{stem}.png")))?;
                SourcePair::new(stem.clone(), vis, ir).map_err(ToolsError::from)
            })();
            (stem.clone(), one.map_err(|e| e.to_string()))
        })
        .collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (stem, outcome) in loaded {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(reason) => skipped.push((stem, reason)),
        }
    }
    if pairs.is_empty() {
        return Err(ToolsError::Dataset(
            "every matched pair failed to load".into(),
        ));
    }
    Ok(DatasetLoad { pairs, skipped })
}
