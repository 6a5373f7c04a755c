//! Deep-supervised loss, Adam, and the training loop.

mod adam;

pub use adam::{Adam, AdamConfig};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dataio::{save_checkpoint, Sample};
use crate::error::{config_err, Error, Result};
use crate::network::{Model, SaliencyOutputs};
use crate::tensor::{Element, Tensor};

/// Weights of the eight supervised maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// `S_1 ..= S_6`.
    pub side: [f64; 6],
    pub depth: f64,
    pub rgb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            side: [1.0; 6],
            depth: 1.0,
            rgb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.side.iter().chain([&self.depth, &self.rgb]);
        if all.clone().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config_err!("loss weights must be finite and non-negative: {self:?}"));
        }
        Ok(())
    }
}

/// Graph nodes of a deep-supervised loss.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Unweighted BCE per supervised map, in [`SaliencyOutputs::supervised`] order.
    pub terms: Vec<Var>,
}

/// `Σ w·bce(σ(U(S)), GT)` over the side outputs and both stream heads. Each
/// logit map is bilinearly resized to the ground-truth resolution first.
pub fn total_loss<T: Element>(g: &mut Graph<'_, T>, outputs: &SaliencyOutputs, gt: Var, weights: &LossWeights) -> Result<LossTerms> {
    let (h, w) = g.value(gt).spatial()?;
    let mut maps: Vec<(Var, f64)> = outputs.side.iter().copied().zip(weights.side).collect();
    if let Some(d) = outputs.depth_head {
        maps.push((d, weights.depth));
    }
    maps.push((outputs.rgb_head, weights.rgb));
    let mut terms = Vec::with_capacity(maps.len());
    let mut total: Option<Var> = None;
    for (logits, weight) in maps {
        let up = g.upsample_bilinear(logits, h, w)?;
        let prob = g.sigmoid(up)?;
        let term = g.bce(prob, gt)?;
        terms.push(term);
        let weighted = g.scale(term, T::from_f(weight))?;
        total = Some(match total {
            None => weighted,
            Some(acc) => g.add(acc, weighted)?,
        });
    }
    Ok(LossTerms {
        total: total.expect("at least one supervised map"),
        terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Writes an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 25,
            max_steps: None,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config_err!("checkpoint_every must be at least 1"));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub total_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    /// `step,epoch,total_loss` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,total_loss\n");
        for r in &self.records {
            writeln!(out, "{},{},{:.6}", r.step, r.epoch, r.total_loss).unwrap();
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total_loss).collect()
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(model: &Model<f32>, sample: &Sample, weights: &LossWeights) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let rgb = g.leaf_ref(&sample.rgb, false);
    let depth = g.leaf_ref(&sample.depth, false);
    let gt = g.leaf_ref(&sample.gt, false);
    let out = model.net.forward(&mut g, &p, rgb, depth)?;
    let loss = total_loss(&mut g, &out, gt, weights)?;
    let grads = g.backward(loss.total)?;
    Ok((g.value(loss.total).item()?.as_f64(), p.gradients(&g, &grads)))
}

/// Mean loss and mean gradients over a batch, reduced in sample order.
pub fn batch_gradients(model: &Model<f32>, batch: &[&Sample], weights: &LossWeights) -> Result<(f64, Vec<Tensor<f32>>)> {
    let results = crate::par::map_slice(batch, |s| sample_gradients(model, s, weights));
    let mut loss = 0.0;
    let mut acc: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (l, grads) = r?;
        loss += l;
        acc = Some(match acc {
            None => grads,
            Some(mut acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
                acc
            }
        });
    }
    let n = batch.len() as f32;
    let mut grads = acc.ok_or(Error::EmptyDataset)?;
    for t in &mut grads {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Where training writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn loss_csv(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.bian")
    }

    pub fn step_checkpoint(&self, step: usize) -> PathBuf {
        self.dir.join(format!("step_{step:06}.bian"))
    }
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    std::fs::write(path, log.to_csv()).map_err(|e| Error::io(path, e))
}

/// Minibatch Adam over `samples`, shuffled each epoch from `config.seed`.
/// With `outputs`, writes `loss.csv` and the final checkpoint (plus periodic
/// ones when configured).
pub fn train_loop(config: &TrainConfig, samples: &[Sample], model: &mut Model<f32>, outputs: Option<&TrainOutputs>) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(o) = outputs {
        std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, &model.params);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch, &config.weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adam.step(&mut model.params, &grads)?;
            step += 1;
            log.records.push(LossRecord {
                step,
                epoch,
                total_loss: loss,
            });
            if step == 1 || step % 25 == 0 {
                info!("step {step} epoch {epoch} loss {loss:.6}");
            }
            if let (Some(o), Some(every)) = (outputs, config.checkpoint_every) {
                if step % every == 0 {
                    save_checkpoint(model, &o.step_checkpoint(step))?;
                }
            }
        }
    }
    if let Some(o) = outputs {
        write_log(&o.loss_csv(), &log)?;
        save_checkpoint(model, &o.final_checkpoint())?;
    }
    Ok(log)
}

/// Mean absolute error of `σ(S_1)` against the ground truth over `samples`.
pub fn dataset_mae(model: &Model<f32>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per = crate::par::map_slice(samples, |s| -> Result<f64> {
        let pred = model.predict(&s.rgb, &s.depth)?;
        let sum: f64 = pred.data().iter().zip(s.gt.data()).map(|(&p, &g)| (p as f64 - g as f64).abs()).sum();
        Ok(sum / pred.numel() as f64)
    });
    let mut total = 0.0;
    for m in per {
        total += m?;
    }
    Ok(total / samples.len() as f64)
}
