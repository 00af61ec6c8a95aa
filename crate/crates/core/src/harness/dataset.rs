//! Seeded synthetic attribute benchmark.
//!
//! Class prototypes are drawn from U[0,1]^K. A fixed Gaussian generator matrix
//! G (K × N_v·d_raw) maps a prototype to patch space; each sample is
//! `reshape(a_c · G) + σ·ε`. Unseen classes only contribute test samples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{aent, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patches: Tensor,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZslDataset {
    prototypes: Tensor,
    seen: Vec<bool>,
    samples: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIndex {
    class_names: Vec<String>,
    seen: Vec<bool>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

pub fn class_name(c: usize) -> String {
    format!("class{c:02}")
}

pub fn generate_dataset(cfg: &RunConfig, rng: &mut Rng) -> Result<ZslDataset> {
    cfg.validate()?;
    let (c, k) = (cfg.data.classes, cfg.dims.attributes);
    let (n_v, d_raw) = (cfg.dims.visual_tokens, cfg.dims.raw_patch_width);
    let width = n_v * d_raw;

    let prototypes = Tensor::from_parts(vec![c, k], (0..c * k).map(|_| rng.uniform()).collect());
    let order = rng.permutation(c);
    let mut seen = vec![false; c];
    for &cls in &order[..cfg.data.seen_classes] {
        seen[cls] = true;
    }
    let generator = Tensor::from_parts(vec![k, width], (0..k * width).map(|_| rng.gaussian()).collect());
    let clean = prototypes.matmul(&generator)?;

    let sigma = cfg.data.noise_std;
    let train_per_class = cfg.data.samples_per_class - cfg.data.test_per_class;
    let mut samples = Vec::new();
    for cls in 0..c {
        let n_train = if seen[cls] { train_per_class } else { 0 };
        for i in 0..n_train + cfg.data.test_per_class {
            let data = clean
                .row_slice(cls)
                .iter()
                .map(|&x| x + sigma * rng.gaussian())
                .collect();
            samples.push(Sample {
                patches: Tensor::from_parts(vec![n_v, d_raw], data),
                label: cls,
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    ZslDataset::new(prototypes, seen, samples)
}

impl ZslDataset {
    pub fn new(prototypes: Tensor, seen: Vec<bool>, samples: Vec<Sample>) -> Result<Self> {
        let (c, _) = prototypes.expect_matrix("prototypes")?;
        if seen.len() != c {
            return Err(Error::Config(format!("{} seen flags for {c} classes", seen.len())));
        }
        if !seen.iter().any(|&s| s) || seen.iter().all(|&s| s) {
            return Err(Error::Config("both seen and unseen classes must be nonempty".into()));
        }
        if prototypes.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("prototype entries must lie in [0, 1]".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= c {
                return Err(Error::MissingClass(s.label));
            }
            if s.split == Split::Train && !seen[s.label] {
                return Err(Error::Hygiene {
                    sample: i,
                    class: s.label,
                });
            }
        }
        Ok(ZslDataset {
            prototypes,
            seen,
            samples,
        })
    }

    pub fn prototypes(&self) -> &Tensor {
        &self.prototypes
    }

    pub fn classes(&self) -> usize {
        self.seen.len()
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| self.seen[c]).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| !self.seen[c]).collect()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    /// The only accessor the training loop uses. Refuses unseen-class and
    /// test samples.
    pub fn training_sample(&self, idx: usize) -> Result<&Sample> {
        let s = &self.samples[idx];
        if !self.seen[s.label] || s.split != Split::Train {
            return Err(Error::Hygiene {
                sample: idx,
                class: s.label,
            });
        }
        Ok(s)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        aent::write(&dir.join("prototypes.aent"), &self.prototypes)?;
        let first = &self.samples[0].patches;
        let mut data = Vec::with_capacity(self.samples.len() * first.len());
        for s in &self.samples {
            data.extend_from_slice(s.patches.data());
        }
        let shape = [self.samples.len(), first.shape()[0], first.shape()[1]];
        aent::write(&dir.join("patches.aent"), &Tensor::new(&shape, data)?)?;
        let index = DatasetIndex {
            class_names: (0..self.classes()).map(class_name).collect(),
            seen: self.seen.clone(),
            labels: self.samples.iter().map(|s| s.label).collect(),
            splits: self.samples.iter().map(|s| s.split).collect(),
        };
        let path = dir.join("dataset.json");
        fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let prototypes = aent::read(&dir.join("prototypes.aent"))?;
        let patches = aent::read(&dir.join("patches.aent"))?;
        let path = dir.join("dataset.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text)?;
        let shape = patches.shape();
        if shape.len() != 3 || shape[0] != index.labels.len() || index.splits.len() != index.labels.len() {
            return Err(Error::Format {
                path: dir.join("patches.aent"),
                reason: format!("patch tensor {shape:?} does not match {} labels", index.labels.len()),
            });
        }
        let per = shape[1] * shape[2];
        let samples = index
            .labels
            .iter()
            .zip(&index.splits)
            .enumerate()
            .map(|(i, (&label, &split))| Sample {
                patches: Tensor::from_parts(vec![shape[1], shape[2]], patches.data()[i * per..(i + 1) * per].to_vec()),
                label,
                split,
            })
            .collect();
        ZslDataset::new(prototypes, index.seen, samples)
    }
}
