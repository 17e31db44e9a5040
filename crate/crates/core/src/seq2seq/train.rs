//! Adam training with warmup, validation checkpoints and optional
//! checkpoint averaging.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::Vocab;

use super::batch::{build_batch, FactoredPair};
use super::model::FactoredSeq2Seq;
use super::tape::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Average the parameters of this many best-validation checkpoints
    /// (0 keeps the single best one).
    pub average_checkpoints: usize,
    /// Stop once the mean training loss of a checkpoint interval drops below
    /// this and `average_checkpoints` further checkpoints have been taken, so
    /// averaging only sees converged parameters.
    pub target_loss: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            warmup: 100,
            steps: 2000,
            batch_size: 32,
            checkpoint_interval: 100,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 1.0,
            average_checkpoints: 0,
            target_loss: None,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean training loss over the interval ending at `step`.
    pub loss: f64,
    /// Joint perplexity on the validation set, if one was given.
    pub val_ppl: Option<f64>,
}

pub struct TrainOutcome {
    pub model: FactoredSeq2Seq,
    pub curve: Vec<CurvePoint>,
    pub steps_run: usize,
}

pub fn write_curve_csv(path: &std::path::Path, curve: &[CurvePoint]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,loss,val_ppl")?;
    for p in curve {
        let ppl = p.val_ppl.map_or(String::new(), |v| format!("{v}"));
        writeln!(w, "{},{},{}", p.step, p.loss, ppl)?;
    }
    w.flush()?;
    Ok(())
}

pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<_> = params.values().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(i) else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= update;
            });
        }
    }
}

/// Linear warmup to `lr`, then constant.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.warmup == 0 || step >= cfg.warmup {
        cfg.lr
    } else {
        cfg.lr * (step + 1) as f64 / cfg.warmup as f64
    }
}

/// Mean joint loss over a corpus, in batches.
pub fn corpus_loss(model: &FactoredSeq2Seq, pairs: &[FactoredPair], vocab: &Vocab, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut positions = 0usize;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let b = build_batch(chunk, vocab, &model.config)?;
        let r = model.loss(&b)?;
        total += r.total * r.positions as f64;
        positions += r.positions;
    }
    Ok(if positions == 0 { 0.0 } else { total / positions as f64 })
}

fn average_params(checkpoints: &[ParamStore]) -> ParamStore {
    let mut avg = checkpoints[0].clone();
    let n = checkpoints.len() as f64;
    for (i, v) in avg.values_mut().iter_mut().enumerate() {
        for c in &checkpoints[1..] {
            *v += c.get(i);
        }
        v.mapv_inplace(|x| x / n);
    }
    avg
}

/// Trains in place on `train`; returns the best (or averaged) checkpoint.
pub fn train(
    mut model: FactoredSeq2Seq,
    train: &[FactoredPair],
    valid: Option<&[FactoredPair]>,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::new();
    let mut kept: Vec<(f64, ParamStore)> = Vec::new();
    let keep = cfg.average_checkpoints.max(1);
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;
    let mut steps_run = 0;
    let mut tail: Option<usize> = None;

    for step in 0..cfg.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size.max(1)).min(order.len());
        let pairs: Vec<FactoredPair> = order[cursor..end].iter().map(|&i| train[i].clone()).collect();
        cursor = end;

        let batch = build_batch(&pairs, vocab, &model.config)?;
        let (report, mut grads) = model.loss_and_grads(&batch)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged { step, loss: report.total });
        }
        if cfg.clip_norm > 0.0 {
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
        }
        adam.step(&mut model.params, &grads, learning_rate(cfg, step));
        interval_loss += report.total;
        interval_steps += 1;
        steps_run = step + 1;

        let at_checkpoint = steps_run % cfg.checkpoint_interval.max(1) == 0 || steps_run == cfg.steps;
        if at_checkpoint {
            let loss = interval_loss / interval_steps as f64;
            let val_ppl = match valid {
                Some(v) if !v.is_empty() => Some(corpus_loss(&model, v, vocab, cfg.batch_size)?.exp()),
                _ => None,
            };
            log::debug!("step {steps_run} loss {loss:.4} val_ppl {val_ppl:?}");
            curve.push(CurvePoint { step: steps_run, loss, val_ppl });
            if let Some(ppl) = val_ppl {
                kept.push((ppl, model.params.clone()));
                kept.sort_by(|a, b| a.0.total_cmp(&b.0));
                kept.truncate(keep);
            }
            interval_loss = 0.0;
            interval_steps = 0;
            match tail.as_mut() {
                Some(0) => break,
                Some(n) => *n -= 1,
                None if cfg.target_loss.is_some_and(|t| loss < t) => {
                    if cfg.average_checkpoints <= 1 || valid.is_none() {
                        break;
                    }
                    tail = Some(cfg.average_checkpoints - 1);
                }
                None => {}
            }
        }
    }

    if !kept.is_empty() {
        model.params = if cfg.average_checkpoints > 1 {
            let stores: Vec<ParamStore> = kept.into_iter().map(|(_, p)| p).collect();
            average_params(&stores)
        } else {
            kept.swap_remove(0).1
        };
    }
    Ok(TrainOutcome { model, curve, steps_run })
}
