//! Semantic mapping, cosine scoring and the three training losses.

use serde::{Deserialize, Serialize};

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::params::{Binding, ParamId, ParamStore};

/// GAP over tokens followed by a linear map into attribute space.
#[derive(Debug, Clone)]
pub struct MappingParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cons: f64,
    pub lambda_deb: f64,
}

/// Mean and population variance of seen- and unseen-prototype scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub alpha_u: f64,
    pub beta_u: f64,
}

impl ScoreStats {
    pub fn from_scores(seen: &[f64], unseen: &[f64]) -> Result<Self> {
        if seen.is_empty() {
            return Err(Error::EmptyClassSet("seen scores"));
        }
        if unseen.is_empty() {
            return Err(Error::EmptyClassSet("unseen scores"));
        }
        let (alpha_s, beta_s) = mean_var(seen);
        let (alpha_u, beta_u) = mean_var(unseen);
        Ok(ScoreStats {
            alpha_s,
            beta_s,
            alpha_u,
            beta_u,
        })
    }

    pub fn mean_gap(&self) -> f64 {
        (self.alpha_s - self.alpha_u).abs()
    }

    /// (α_s − α_u)² + (β_s − β_u)².
    pub fn debias_value(&self) -> f64 {
        (self.alpha_s - self.alpha_u).powi(2) + (self.beta_s - self.beta_u).powi(2)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Class attribute prototypes, kept raw (for the consistency MLP) and
/// unit-normalized (for cosine scoring).
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    raw: Tensor,
    unit_t: Tensor,
}

impl Prototypes {
    pub fn new(raw: Tensor) -> Result<Self> {
        let (c, k) = raw.expect_matrix("prototypes")?;
        let mut unit = raw.clone();
        for r in 0..c {
            let row = &mut unit.data_mut()[r * k..(r + 1) * k];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-12 {
                return Err(Error::ZeroNorm("class prototype"));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Prototypes {
            unit_t: unit.transpose()?,
            raw,
        })
    }

    pub fn raw(&self) -> &Tensor {
        &self.raw
    }

    /// K×C matrix of unit-norm prototypes, one per column.
    pub fn unit_columns(&self) -> &Tensor {
        &self.unit_t
    }

    pub fn classes(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn row(&self, class: usize) -> Tensor {
        Tensor::row(self.raw.row_slice(class))
    }
}

impl MappingParams {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, with_bias: bool, rng: &mut Rng) -> Self {
        let weight = store.add_gaussian(
            "mapping.weight",
            "mapping",
            &[dims.model_width, dims.attributes],
            1.0 / (dims.model_width as f64).sqrt(),
            rng,
        );
        let bias = with_bias.then(|| store.add("mapping.bias", "mapping", Tensor::zeros(&[1, dims.attributes])));
        MappingParams { weight, bias }
    }
}

/// M(f(x)): mean over tokens, then linear projection (1×K).
pub fn map_to_semantic(g: &mut Graph, b: &Binding, f_x: Var, p: &MappingParams) -> Result<Var> {
    let pooled = g.mean_axis(f_x, 0)?;
    let out = g.matmul(pooled, b[p.weight])?;
    match p.bias {
        Some(bias) => g.add_row(out, b[bias]),
        None => Ok(out),
    }
}

/// Cosine score of a 1×K semantic vector against every class (1×C).
/// `unit_columns` is a K×C matrix of unit-norm prototypes.
pub fn cosine_scores(g: &mut Graph, semantic: Var, unit_columns: Var) -> Result<Var> {
    if g.value(semantic).norm() < 1e-12 {
        return Err(Error::ZeroNorm("semantic projection"));
    }
    let norm = g.norm(semantic)?;
    let one = g.constant(Tensor::scalar(1.0));
    let inv = g.div(one, norm)?;
    let unit = g.mul_scalar(semantic, inv)?;
    g.matmul(unit, unit_columns)
}

/// −log softmax over seen-class scores at the true class.
pub fn classification_loss(
    g: &mut Graph,
    scores: Var,
    seen: &[usize],
    label: usize,
    temperature: f64,
) -> Result<Var> {
    let pos = seen.iter().position(|&c| c == label).ok_or(Error::MissingClass(label))?;
    let logits = g.gather(scores, seen)?;
    let logits = g.scale(logits, 1.0 / temperature)?;
    let max = g.value(logits).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = g.constant(Tensor::filled(&[1, seen.len()], max));
    let centered = g.sub(logits, shift)?;
    let e = g.exp(centered)?;
    let total = g.sum(e)?;
    let lse = g.log(total)?;
    let target = g.gather(centered, &[pos])?;
    let target = g.reshape(target, &[1])?;
    g.sub(lse, target)
}

/// Batch debiasing loss over per-sample 1×C score rows.
pub fn debias_loss(g: &mut Graph, scores: &[Var], seen: &[usize], unseen: &[usize]) -> Result<(Var, ScoreStats)> {
    if seen.is_empty() {
        return Err(Error::EmptyClassSet("seen classes"));
    }
    if unseen.is_empty() {
        return Err(Error::EmptyClassSet("unseen classes"));
    }
    if scores.is_empty() {
        return Err(Error::EmptyClassSet("score batch"));
    }
    let mut pick = |classes: &[usize]| -> Result<Var> {
        let parts = scores
            .iter()
            .map(|&s| g.gather(s, classes))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&parts, 1)
    };
    let seen_scores = pick(seen)?;
    let unseen_scores = pick(unseen)?;
    let (alpha_s, beta_s) = moments(g, seen_scores)?;
    let (alpha_u, beta_u) = moments(g, unseen_scores)?;
    let stats = ScoreStats {
        alpha_s: g.value(alpha_s).item(),
        beta_s: g.value(beta_s).item(),
        alpha_u: g.value(alpha_u).item(),
        beta_u: g.value(beta_u).item(),
    };
    let dm = g.sub(alpha_s, alpha_u)?;
    let dv = g.sub(beta_s, beta_u)?;
    let dm2 = g.mul(dm, dm)?;
    let dv2 = g.mul(dv, dv)?;
    Ok((g.add(dm2, dv2)?, stats))
}

/// Mean and population variance of all elements of a 1×n row.
fn moments(g: &mut Graph, row: Var) -> Result<(Var, Var)> {
    let mean = g.mean(row)?;
    let shape = g.value(row).shape().to_vec();
    let spread = g.expand(mean, &shape)?;
    let centered = g.sub(row, spread)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean(sq)?;
    Ok((mean, var))
}

/// L = L_cls + λ_cons·L_cons + λ_deb·L_deb.
pub fn total_loss(g: &mut Graph, cls: Var, cons: Var, deb: Var, w: LossWeights) -> Result<Var> {
    let c = g.scale(cons, w.lambda_cons)?;
    let d = g.scale(deb, w.lambda_deb)?;
    let partial = g.add(cls, c)?;
    g.add(partial, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &mut Graph, v: f64) -> Var {
        g.constant(Tensor::scalar(v))
    }

    #[test]
    fn uniform_scores_give_log_class_count() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(&[0.3; 7]));
        let l = classification_loss(&mut g, s, &[0, 2, 3, 5], 3, 1.0).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_class_gives_zero_loss() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(&[-500.0, 500.0, -500.0]));
        let l = classification_loss(&mut g, s, &[0, 1, 2], 1, 1.0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn missing_label_is_an_error() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(&[0.1, 0.2, 0.3]));
        assert!(matches!(
            classification_loss(&mut g, s, &[0, 1], 2, 1.0),
            Err(Error::MissingClass(2))
        ));
    }

    #[test]
    fn debias_hand_case() {
        let mut g = Graph::new();
        // sample 0 scores classes {0: 0, 1: 0.5}, sample 1 scores {0: 1, 1: 0.5}
        let a = g.constant(Tensor::row(&[0.0, 0.5]));
        let b = g.constant(Tensor::row(&[1.0, 0.5]));
        let (l, stats) = debias_loss(&mut g, &[a, b], &[0], &[1]).unwrap();
        assert!((g.value(l).item() - 0.0625).abs() < 1e-15);
        assert_eq!(stats.alpha_s, 0.5);
        assert_eq!(stats.beta_s, 0.25);
        assert_eq!(stats.beta_u, 0.0);
    }

    #[test]
    fn debias_identical_multisets_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[0.2, 0.7]));
        let b = g.constant(Tensor::row(&[0.7, 0.2]));
        let (l, _) = debias_loss(&mut g, &[a, b], &[0], &[1]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn debias_requires_both_domains() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[0.2, 0.7]));
        assert!(debias_loss(&mut g, &[a], &[0, 1], &[]).is_err());
        assert!(ScoreStats::from_scores(&[], &[1.0]).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        let mut g = Graph::new();
        let (cls, cons, deb) = (scalar(&mut g, 1.0), scalar(&mut g, 2.0), scalar(&mut g, 3.0));
        let zero = LossWeights {
            lambda_cons: 0.0,
            lambda_deb: 0.0,
        };
        let t = total_loss(&mut g, cls, cons, deb, zero).unwrap();
        assert_eq!(g.value(t).item(), 1.0);
        let unit = LossWeights {
            lambda_cons: 1.0,
            lambda_deb: 1.0,
        };
        let t = total_loss(&mut g, cls, cons, deb, unit).unwrap();
        assert_eq!(g.value(t).item(), 6.0);
    }

    #[test]
    fn mapping_constant_tokens_and_null_map() {
        let mut store = ParamStore::new();
        let w = store.add("w", "mapping", Tensor::identity(3));
        let p = MappingParams { weight: w, bias: None };
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let f = g.constant(Tensor::new(&[4, 3], [0.5, -1.0, 2.0].repeat(4)).unwrap());
        let m = map_to_semantic(&mut g, &b, f, &p).unwrap();
        assert_eq!(g.value(m).data(), &[0.5, -1.0, 2.0]);

        let mut store = ParamStore::new();
        let w = store.add("w", "mapping", Tensor::zeros(&[3, 2]));
        let p = MappingParams { weight: w, bias: None };
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let f = g.constant(Tensor::filled(&[4, 3], 1.5));
        let m = map_to_semantic(&mut g, &b, f, &p).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_scores_match_plain_cosine() {
        let protos = Prototypes::new(Tensor::new(&[2, 3], vec![0.2, 0.9, 0.1, 0.5, 0.5, 0.5]).unwrap()).unwrap();
        let mut g = Graph::new();
        let m = g.constant(Tensor::row(&[1.0, -0.5, 2.0]));
        let cols = g.constant(protos.unit_columns().clone());
        let s = cosine_scores(&mut g, m, cols).unwrap();
        for c in 0..2 {
            let want = crate::numerics::cosine(g.value(m), &protos.row(c)).unwrap();
            assert!((g.value(s).data()[c] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_prototype_rejected() {
        assert!(Prototypes::new(Tensor::zeros(&[2, 3])).is_err());
    }
}
