use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::DenseGrid;
use crate::io::load_image;
use crate::synth::Manifest;

use super::TrainError;

/// One training example in network layout.
#[derive(Clone, Debug)]
pub struct Example {
    pub name: String,
    /// 3×S×S planar.
    pub input: Vec<f32>,
    /// 2×S×S planar (x then y).
    pub grid: Vec<f32>,
    /// S×S, values in {0, 1}.
    pub edges: Vec<f32>,
}

/// A synthetic dataset held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub size: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| TrainError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| TrainError::Dataset(format!("{}: {e}", manifest_path.display())))?;
        if manifest.samples.len() != manifest.count {
            return Err(TrainError::Dataset(format!(
                "manifest lists {} samples but count is {}",
                manifest.samples.len(),
                manifest.count
            )));
        }
        let s = manifest.size;
        let path = |stem: &str, ext: &str| -> PathBuf { dir.join(format!("{stem}.{ext}")) };
        let mut examples = Vec::with_capacity(manifest.count);
        for stem in &manifest.samples {
            let warped = load_image(&path(stem, "warped.ppm")).map_err(|e| TrainError::Dataset(e.to_string()))?;
            let edges = load_image(&path(stem, "edges.pgm")).map_err(|e| TrainError::Dataset(e.to_string()))?;
            let grid = DenseGrid::load(&path(stem, "dgrid")).map_err(|e| TrainError::Dataset(e.to_string()))?;
            let extents = [
                (warped.width(), warped.height()),
                (edges.width(), edges.height()),
                (grid.width(), grid.height()),
            ];
            if extents.iter().any(|&e| e != (s, s)) {
                return Err(TrainError::Dataset(format!(
                    "sample {stem}: extents {extents:?} do not match manifest size {s}"
                )));
            }
            examples.push(Example {
                name: stem.clone(),
                input: warped.to_rgb().to_planar(),
                grid: grid.data().to_vec(),
                edges: edges.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
            });
        }
        Ok(Self { size: s, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Splits off the last `count` examples.
    pub fn split_off(&mut self, count: usize) -> Dataset {
        let at = self.examples.len().saturating_sub(count);
        Dataset {
            size: self.size,
            examples: self.examples.split_off(at),
        }
    }
}

/// Example indices of batch `step`: consecutive slices of per-epoch
/// permutations, so the sequence depends only on (seed, step).
pub fn batch_indices(seed: u64, step: u64, batch: usize, len: usize) -> Vec<usize> {
    assert!(len > 0 && batch > 0);
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in 0..batch as u64 {
        let pos = step * batch as u64 + k;
        let epoch = pos / len as u64;
        let perm = match &cached {
            Some((e, p)) if *e == epoch => p,
            _ => {
                let mut p: Vec<usize> = (0..len).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                p.shuffle(&mut rng);
                cached = Some((epoch, p));
                &cached.as_ref().expect("just set").1
            }
        };
        out.push(perm[(pos % len as u64) as usize]);
    }
    out
}
