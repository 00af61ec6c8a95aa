//! Mini-batch training with the weighted three-term objective.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::harness::dataset::ZslDataset;
use crate::harness::model::ModelParams;
use crate::harness::optim::Adam;
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::objective::{self, LossWeights, Prototypes, ScoreStats};
use crate::params::{Binding, ParamId};
use crate::vrru;

#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub cls: Var,
    pub cons: Option<Var>,
    pub deb: Var,
    pub stats: ScoreStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub cls: f64,
    pub cons: f64,
    pub deb: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicEval {
    pub step: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: String,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<PeriodicEval>,
}

impl TrainLog {
    /// Mean total loss over the first `n` recorded steps.
    pub fn mean_total_head(&self, n: usize) -> f64 {
        let n = n.min(self.steps.len()).max(1);
        self.steps[..n].iter().map(|s| s.total).sum::<f64>() / n as f64
    }

    /// Mean total loss over the last `n` recorded steps.
    pub fn mean_total_tail(&self, n: usize) -> f64 {
        let n = n.min(self.steps.len()).max(1);
        let start = self.steps.len() - n;
        self.steps[start..].iter().map(|s| s.total).sum::<f64>() / n as f64
    }
}

/// Builds the batch objective over the given training samples.
pub fn batch_loss(
    model: &ModelParams,
    g: &mut Graph,
    b: &Binding,
    data: &ZslDataset,
    prototypes: &Prototypes,
    batch: &[usize],
    cfg: &RunConfig,
) -> Result<BatchLoss> {
    let seen = data.seen_classes();
    let unseen = data.unseen_classes();
    let ctx = model.prepare(g, b, prototypes)?;
    let mut cls_terms = Vec::with_capacity(batch.len());
    let mut cons_terms = Vec::with_capacity(batch.len());
    let mut scores = Vec::with_capacity(batch.len());
    for &i in batch {
        let sample = data.training_sample(i)?;
        let x = g.constant(sample.patches.clone());
        let out = model.forward(g, b, &ctx, x)?;
        cls_terms.push(objective::classification_loss(
            g,
            out.scores,
            &seen,
            sample.label,
            cfg.loss.temperature,
        )?);
        if let Some(z) = out.z {
            let a_y = g.constant(prototypes.row(sample.label));
            cons_terms.push(vrru::consistency_loss(g, b, z, a_y, &model.vrru)?);
        }
        scores.push(out.scores);
    }
    let cls = mean_of(g, &cls_terms)?;
    let cons = if cons_terms.is_empty() {
        None
    } else {
        Some(mean_of(g, &cons_terms)?)
    };
    let (deb, stats) = objective::debias_loss(g, &scores, &seen, &unseen)?;
    let weights = LossWeights {
        lambda_cons: cfg.loss.lambda_cons,
        lambda_deb: cfg.loss.lambda_deb,
    };
    let cons_or_zero = match cons {
        Some(c) => c,
        None => g.constant(Tensor::scalar(0.0)),
    };
    let total = objective::total_loss(g, cls, cons_or_zero, deb, weights)?;
    Ok(BatchLoss {
        total,
        cls,
        cons,
        deb,
        stats,
    })
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// Epoch-wise shuffled batches of training indices.
struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(pool: Vec<usize>, rng: Rng) -> Self {
        let cursor = pool.len();
        BatchSampler {
            order: pool.clone(),
            pool,
            cursor,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.clone_from(&self.pool);
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Trains a freshly initialized model on `data` and returns it with its log.
pub fn train(cfg: &RunConfig, data: &ZslDataset) -> Result<(ModelParams, TrainLog)> {
    let model = ModelParams::init(cfg);
    train_from(cfg, data, model)
}

/// Trains starting from the given parameters.
pub fn train_from(cfg: &RunConfig, data: &ZslDataset, mut model: ModelParams) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    check_dims(cfg, data)?;
    let prototypes = Prototypes::new(data.prototypes().clone())?;
    let trainable: Vec<ParamId> = model.store.ids().filter(|&id| model.store.entry(id).trainable).collect();
    let mut adam = Adam::new(&cfg.optimizer, model.store.len());
    let mut sampler = BatchSampler::new(data.train_indices(), Rng::substream(cfg.seed, "batch"));
    let mut log = TrainLog {
        variant: cfg.ablation.label(),
        ..TrainLog::default()
    };

    for step in 0..cfg.optimizer.steps {
        let batch = sampler.next_batch(cfg.optimizer.batch_size);
        let mut g = Graph::new();
        let b = model.store.bind(&mut g, true);
        let loss = batch_loss(&model, &mut g, &b, data, &prototypes, &batch, cfg).map_err(|e| match e {
            Error::NonFinite(op) => Error::Divergence {
                step,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        })?;
        let total = g.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: "loss is not finite".into(),
            });
        }
        g.backward(loss.total)?;
        let grads: Vec<(ParamId, Tensor)> = trainable.iter().map(|&id| (id, g.grad(b[id]))).collect();
        let grad_norm = grads.iter().map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: "gradient is not finite".into(),
            });
        }
        adam.step(&mut model.store, &grads);
        log.steps.push(StepRecord {
            step,
            total,
            cls: g.value(loss.cls).item(),
            cons: loss.cons.map_or(0.0, |c| g.value(c).item()),
            deb: g.value(loss.deb).item(),
            grad_norm,
        });
        drop(g);

        let every = cfg.eval.eval_every;
        if every > 0 && (step + 1) % every == 0 && step + 1 < cfg.optimizer.steps {
            log.evals.push(PeriodicEval {
                step: step + 1,
                report: evaluate_model(cfg, &model, data)?,
            });
        }
    }
    Ok((model, log))
}

pub fn evaluate_model(cfg: &RunConfig, model: &ModelParams, data: &ZslDataset) -> Result<EvalReport> {
    let scores = model.score_test_set(data)?;
    evaluate(&scores, &cfg.eval.gamma_grid, cfg.eval.gamma)
}

fn check_dims(cfg: &RunConfig, data: &ZslDataset) -> Result<()> {
    let (c, k) = (data.prototypes().shape()[0], data.prototypes().shape()[1]);
    let patch = data.samples()[0].patches.shape();
    let d = &cfg.dims;
    if k != d.attributes || patch != [d.visual_tokens, d.raw_patch_width] || c != cfg.data.classes {
        return Err(Error::Config(format!(
            "dataset ({c} classes, {k} attributes, patches {patch:?}) does not match configured dims"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::generate_dataset;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut cfg = RunConfig::tiny();
        cfg.optimizer.learning_rate = 0.0;
        cfg.optimizer.steps = 5;
        let data = generate_dataset(&cfg, &mut Rng::substream(cfg.seed, "data")).unwrap();
        let (model, log) = train(&cfg, &data).unwrap();
        assert_eq!(model.store, ModelParams::init(&cfg).store);
        assert_eq!(log.steps.len(), 5);
    }

    #[test]
    fn sampler_covers_pool_each_epoch() {
        let mut s = BatchSampler::new((0..10).collect(), Rng::new(1));
        let mut seen = s.next_batch(10);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_dataset_is_a_config_error() {
        let cfg = RunConfig::tiny();
        let data = generate_dataset(&cfg, &mut Rng::new(1)).unwrap();
        let mut other = cfg.clone();
        other.dims.attributes += 1;
        assert!(train(&other, &data).unwrap_err().is_config());
    }
}
