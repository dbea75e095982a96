//! Training executors.
//!
//! [`run_sequential`] is the single-device reference. [`run_distributed`]
//! gives every head its own worker thread and keeps the temporal block on the
//! calling thread, exchanging activations and gradients over channels. Both
//! share the block functions from [`crate::model`] and reduce gradients in
//! sample order, so they produce the same floating-point results.

mod distributed;
mod trace;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{backward, forward, DomStModel, Gradients};
use crate::numerics::{accumulate, mse_loss, scale_params, AdamConfig, AdamState};
use crate::pixcon::PixelMove;

pub use distributed::run_distributed;
pub use trace::{trace_summary, write_traces_jsonl, DeviceGraph, EdgeTraffic, StepTrace, TraceSummary, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Sequential,
    Distributed,
}

impl std::str::FromStr for ExecutorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "distributed" => Ok(Self::Distributed),
            _ => Err(Error::InvalidArgument(format!("unknown executor '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    pub executor: ExecutorKind,
    /// Worker threads for the distributed executor; must be 0 (one per head) or equal the head count.
    pub workers: usize,
    /// Timing-driven pixel rebalancing at epoch boundaries (distributed only).
    pub rebalance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            executor: ExecutorKind::Sequential,
            workers: 0,
            rebalance: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam hyperparameters {a:?}")));
        }
        if self.rebalance && self.executor == ExecutorKind::Sequential {
            return Err(Error::Config("rebalancing needs per-worker timings from the distributed executor".into()));
        }
        Ok(())
    }
}

/// Adam state split the same way the parameters are owned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub heads: Vec<AdamState>,
    pub temporal: AdamState,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, model: &DomStModel) -> Self {
        Self {
            heads: model.heads.iter().map(|h| AdamState::new(config, h)).collect(),
            temporal: AdamState::new(config, &model.temporal),
        }
    }

    pub fn steps(&self) -> u64 {
        self.temporal.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub epoch_secs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DomStModel,
    pub optimizer: OptimizerState,
    /// Mean sample loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean sample loss per optimizer step, in step order.
    pub step_losses: Vec<f64>,
    pub timing: Timing,
    /// Distributed runs only.
    pub traces: Vec<StepTrace>,
    pub rebalances: Vec<PixelMove>,
}

/// Per-epoch visiting order; both executors draw it from the same generator.
pub(crate) struct Shuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl Shuffler {
    pub(crate) fn new(seed: u64, n: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
        }
    }

    pub(crate) fn next_epoch(&mut self) -> &[usize] {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

pub(crate) fn check_inputs(model: &DomStModel, samples: &[Sample], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    Ok(())
}

pub(crate) fn check_loss(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Dispatches on `config.executor`.
pub fn train(model: DomStModel, samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    match config.executor {
        ExecutorKind::Sequential => run_sequential(model, samples, config),
        ExecutorKind::Distributed => run_distributed(model, samples, config),
    }
}

pub fn run_sequential(mut model: DomStModel, samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    check_inputs(&model, samples, config)?;
    let start = Instant::now();
    let mut opt = OptimizerState::new(config.adam, &model);
    let mut shuffler = Shuffler::new(config.shuffle_seed, samples.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_secs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();

    for _ in 0..config.epochs {
        let epoch_start = Instant::now();
        let mut epoch_sum = 0.0;
        for batch in shuffler.next_epoch().chunks(config.batch_size) {
            let step = step_losses.len();
            let mut sum: Option<Gradients> = None;
            let mut loss_sum = 0.0;
            for &i in batch {
                let s = &samples[i];
                let (y, cache) = forward(&model, s)?;
                let (loss, g) = mse_loss(&[y], &[s.y])?;
                loss_sum += loss;
                let grads = backward(&model, &cache, g[0])?;
                match sum.as_mut() {
                    Some(acc) => accumulate(acc, &grads)?,
                    None => sum = Some(grads),
                }
            }
            let step_loss = loss_sum / batch.len() as f64;
            check_loss(step_loss, step)?;
            let mut grads = sum.expect("batches are non-empty");
            scale_params(&mut grads, 1.0 / batch.len() as f64);
            for ((head, g), st) in model.heads.iter_mut().zip(&grads.heads).zip(&mut opt.heads) {
                st.step(head, g)?;
            }
            opt.temporal.step(&mut model.temporal, &grads.temporal)?;
            step_losses.push(step_loss);
            epoch_sum += loss_sum;
        }
        epoch_losses.push(epoch_sum / samples.len() as f64);
        epoch_secs.push(epoch_start.elapsed().as_secs_f64());
    }

    Ok(TrainOutcome {
        model,
        optimizer: opt,
        epoch_losses,
        step_losses,
        timing: Timing {
            total_secs: start.elapsed().as_secs_f64(),
            epoch_secs,
        },
        traces: Vec::new(),
        rebalances: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ConvLayerConfig, ModelConfig, Variant};
    use crate::numerics::{DenseParams, ParamSet, Tensor};
    use crate::pixcon::PixelMeta;

    fn metas(p: usize) -> Vec<PixelMeta> {
        (0..p)
            .map(|i| PixelMeta {
                pixel_id: i,
                row: 0,
                col: i,
                distance_km: (i % 5) as f64 + 1.0,
            })
            .collect()
    }

    fn samples(p: usize, l: usize, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| {
                let x: Vec<f64> = (0..p * l).map(|i| ((i * 13 + k * 7) % 17) as f64 / 17.0).collect();
                Sample {
                    y: x.iter().take(l).sum::<f64>() / l as f64,
                    x: Tensor::new(vec![p, l], x).unwrap(),
                    p_target: (0..p).map(|i| ((i + k) % 3) as f64 / 3.0).collect(),
                    target_index: l + k,
                    date: chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
                }
            })
            .collect()
    }

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::new(Variant::MultiheadPlusP).with_heads(2).with_lookback(8);
        c.conv_layers = vec![ConvLayerConfig::new(3, 3)];
        c.lstm_hidden = 4;
        c.dense_hidden = vec![];
        c
    }

    #[test]
    fn config_guards() {
        let c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            rebalance: true,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn one_epoch_one_sample_is_one_update() {
        let model = build_model(&tiny(), &metas(6)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let out = run_sequential(model.clone(), &samples(6, 8, 1), &cfg).unwrap();
        assert_eq!(out.optimizer.steps(), 1);
        assert_eq!(out.step_losses.len(), 1);
        assert_ne!(out.model.flatten(), model.flatten());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let model = build_model(&tiny(), &metas(6)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            shuffle_seed: 9,
            ..Default::default()
        };
        let data = samples(6, 8, 10);
        let a = run_sequential(model.clone(), &data, &cfg).unwrap();
        let b = run_sequential(model, &data, &cfg).unwrap();
        assert_eq!(a.model.to_checkpoint_json().unwrap(), b.model.to_checkpoint_json().unwrap());
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.step_losses.len(), 12);
    }

    #[test]
    fn divergence_names_the_step() {
        let mut model = build_model(&tiny(), &metas(6)).unwrap();
        let last: &mut DenseParams = model.temporal.dense.last_mut().unwrap();
        last.bias.data_mut()[0] = 1e200;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..Default::default()
        };
        match run_sequential(model, &samples(6, 8, 3), &cfg) {
            Err(Error::Divergence { step }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn shuffle_is_a_permutation_per_epoch() {
        let mut s = Shuffler::new(3, 50);
        let a = s.next_epoch().to_vec();
        let b = s.next_epoch().to_vec();
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
