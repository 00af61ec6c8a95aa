//! ZSL / GZSL inference with calibrated stacking, and the reported metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{aent, Tensor};
use crate::objective::ScoreStats;

/// samples × classes cosine scores with class metadata and true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionScores {
    pub scores: Tensor,
    pub class_names: Vec<String>,
    pub seen: Vec<bool>,
    pub labels: Vec<usize>,
}

/// JSON sidecar stored next to a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSidecar {
    pub class_names: Vec<String>,
    pub seen: Vec<bool>,
    pub labels: Vec<usize>,
}

impl PredictionScores {
    pub fn new(scores: Tensor, class_names: Vec<String>, seen: Vec<bool>, labels: Vec<usize>) -> Result<Self> {
        let (n, c) = scores.expect_matrix("prediction scores")?;
        if class_names.len() != c || seen.len() != c {
            return Err(Error::InvalidShape {
                shape: scores.shape().to_vec(),
                reason: format!("{} class names / {} seen flags for {c} classes", class_names.len(), seen.len()),
            });
        }
        if labels.len() != n {
            return Err(Error::InvalidShape {
                shape: scores.shape().to_vec(),
                reason: format!("{} labels for {n} samples", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::MissingClass(bad));
        }
        Ok(PredictionScores {
            scores,
            class_names,
            seen,
            labels,
        })
    }

    pub fn samples(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| self.seen[c]).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| !self.seen[c]).collect()
    }

    /// Writes `<stem>.aent` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        aent::write(&dir.join(format!("{stem}.aent")), &self.scores)?;
        let sidecar = ScoreSidecar {
            class_names: self.class_names.clone(),
            seen: self.seen.clone(),
            labels: self.labels.clone(),
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a matrix and its sidecar; `path` is the `.aent` file.
    pub fn load(path: &Path) -> Result<Self> {
        let scores = aent::read(path)?;
        let side_path = path.with_extension("json");
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: ScoreSidecar = serde_json::from_str(&text)?;
        PredictionScores::new(scores, side.class_names, side.seen, side.labels)
    }
}

/// First index of the maximum over `candidates` (ties → lowest index).
fn argmax_over(row: &[f64], candidates: impl Iterator<Item = usize>, penalty: impl Fn(usize) -> f64) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for c in candidates {
        let v = row[c] - penalty(c);
        if best == usize::MAX || v > best_val {
            best = c;
            best_val = v;
        }
    }
    best
}

/// Argmax over unseen classes only.
pub fn infer_zsl(scores: &PredictionScores) -> Result<Vec<usize>> {
    let unseen = scores.unseen_classes();
    if unseen.is_empty() {
        return Err(Error::NoUnseenClass);
    }
    Ok((0..scores.samples())
        .map(|i| argmax_over(scores.scores.row_slice(i), unseen.iter().copied(), |_| 0.0))
        .collect())
}

/// Argmax over all classes of score − γ·[class is seen].
pub fn infer_gzsl(scores: &PredictionScores, gamma: f64) -> Vec<usize> {
    let c = scores.classes();
    (0..scores.samples())
        .map(|i| {
            argmax_over(scores.scores.row_slice(i), 0..c, |k| {
                if scores.seen[k] {
                    gamma
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Fraction of each class's samples predicted correctly, in the order of `classes`.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<Vec<f64>> {
    if classes.is_empty() {
        return Err(Error::EmptyClassSet("accuracy class set"));
    }
    classes
        .iter()
        .map(|&c| {
            let (mut total, mut hit) = (0usize, 0usize);
            for (&p, &t) in pred.iter().zip(truth) {
                if t == c {
                    total += 1;
                    hit += usize::from(p == c);
                }
            }
            if total == 0 {
                Err(Error::EmptyClassSet("class without test samples"))
            } else {
                Ok(hit as f64 / total as f64)
            }
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 2SU/(S+U), or 0 when S+U is 0.
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u > 0.0 {
        2.0 * s * u / (s + u)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GzslPoint {
    pub gamma: f64,
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub rows: Vec<GzslPoint>,
    /// Index into `rows` of the highest H (first on ties).
    pub best: usize,
}

impl GammaSweep {
    pub fn best_point(&self) -> GzslPoint {
        self.rows[self.best]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["gamma", "seen", "unseen", "harmonic"])?;
        for r in &self.rows {
            w.write_record([
                r.gamma.to_string(),
                r.seen.to_string(),
                r.unseen.to_string(),
                r.harmonic.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// S, U and H at a single γ.
pub fn gzsl_point(scores: &PredictionScores, gamma: f64) -> Result<GzslPoint> {
    let pred = infer_gzsl(scores, gamma);
    let seen = mean(&per_class_accuracy(&pred, &scores.labels, &scores.seen_classes())?);
    let unseen = mean(&per_class_accuracy(&pred, &scores.labels, &scores.unseen_classes())?);
    Ok(GzslPoint {
        gamma,
        seen,
        unseen,
        harmonic: harmonic_mean(seen, unseen),
    })
}

pub fn sweep_gamma(scores: &PredictionScores, grid: &[f64]) -> Result<GammaSweep> {
    if grid.is_empty() {
        return Err(Error::Config("gamma grid is empty".into()));
    }
    let rows = grid
        .iter()
        .map(|&g| gzsl_point(scores, g))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.harmonic > rows[best].harmonic {
            best = i;
        }
    }
    Ok(GammaSweep { rows, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub name: String,
    pub seen: bool,
    /// Accuracy under GZSL prediction at the reported γ.
    pub gzsl: f64,
    /// Accuracy under unseen-only prediction; absent for seen classes.
    pub zsl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_zsl: f64,
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
    pub gamma: f64,
    /// Sample-averaged GZSL accuracy, for diagnostics only.
    pub sample_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub score_stats: ScoreStats,
    pub sweep: GammaSweep,
}

/// Full evaluation. With `fixed_gamma == None` the grid point maximizing H is reported.
pub fn evaluate(scores: &PredictionScores, grid: &[f64], fixed_gamma: Option<f64>) -> Result<EvalReport> {
    let seen = scores.seen_classes();
    let unseen = scores.unseen_classes();
    if seen.is_empty() {
        return Err(Error::EmptyClassSet("seen classes"));
    }

    let zsl_pred = infer_zsl(scores)?;
    let zsl_acc = per_class_accuracy(&zsl_pred, &scores.labels, &unseen)?;

    let sweep = sweep_gamma(scores, grid)?;
    let point = match fixed_gamma {
        Some(g) => gzsl_point(scores, g)?,
        None => sweep.best_point(),
    };
    let pred = infer_gzsl(scores, point.gamma);
    let all: Vec<usize> = (0..scores.classes()).collect();
    let gzsl_acc = per_class_accuracy(&pred, &scores.labels, &all)?;
    let per_class = all
        .iter()
        .map(|&c| ClassAccuracy {
            class: c,
            name: scores.class_names[c].clone(),
            seen: scores.seen[c],
            gzsl: gzsl_acc[c],
            zsl: unseen.iter().position(|&u| u == c).map(|i| zsl_acc[i]),
        })
        .collect();
    let hits = pred.iter().zip(&scores.labels).filter(|(p, t)| p == t).count();

    let mut seen_scores = Vec::new();
    let mut unseen_scores = Vec::new();
    for i in 0..scores.samples() {
        for (c, &v) in scores.scores.row_slice(i).iter().enumerate() {
            if scores.seen[c] {
                seen_scores.push(v);
            } else {
                unseen_scores.push(v);
            }
        }
    }

    Ok(EvalReport {
        acc_zsl: mean(&zsl_acc),
        seen: point.seen,
        unseen: point.unseen,
        harmonic: point.harmonic,
        gamma: point.gamma,
        sample_accuracy: hits as f64 / scores.samples() as f64,
        per_class,
        score_stats: ScoreStats::from_scores(&seen_scores, &unseen_scores)?,
        sweep,
    })
}
