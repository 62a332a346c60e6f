//! Configuration file and flag resolution: flags, then file, then defaults.

use std::path::Path;

use cmif::{AlignmentConfig, KMeansParams};
use serde::{Deserialize, Serialize};

use crate::{Failure, QuantFlags, SearchFlags};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub angles: Option<usize>,
    pub refine: Option<usize>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub kmeans_batch: Option<usize>,
    pub kmeans_iter: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings, embedded in result files.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub k: usize,
    pub angles: usize,
    pub refine: usize,
    pub gamma: f64,
    pub seed: u64,
    pub kmeans_batch: usize,
    pub kmeans_iter: usize,
    pub threads: Option<usize>,
}

impl Resolved {
    pub fn new(
        file: &FileConfig,
        quant: &QuantFlags,
        search: &SearchFlags,
        threads: Option<usize>,
    ) -> Result<Self, Failure> {
        let d = AlignmentConfig::default();
        let r = Self {
            k: quant.k.map(|k| k as usize).or(file.k).unwrap_or(d.k),
            angles: search.angles.or(file.angles).unwrap_or(d.angle_count),
            refine: search.refine.or(file.refine).unwrap_or(d.refinement_count),
            gamma: search.gamma.or(file.gamma).unwrap_or(d.gamma),
            seed: quant.seed.or(file.seed).unwrap_or(d.seed),
            kmeans_batch: file.kmeans_batch.unwrap_or(d.kmeans.batch_size),
            kmeans_iter: file.kmeans_iter.unwrap_or(d.kmeans.max_iter),
            threads,
        };
        r.alignment()
            .validate()
            .map_err(|e| Failure::usage(e.to_string()))?;
        Ok(r)
    }

    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            batch_size: self.kmeans_batch,
            max_iter: self.kmeans_iter,
        }
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            gamma: self.gamma,
            angle_count: self.angles,
            refinement_count: self.refine,
            k: self.k,
            seed: self.seed,
            kmeans: self.kmeans(),
        }
    }
}
