//! Shared fixtures and a straight-line reference implementation of the model.
#![allow(dead_code)]

use chrono::NaiveDate;
use domst::data::Sample;
use domst::model::{ConvLayerConfig, DomStModel, ModelConfig, Variant};
use domst::numerics::Tensor;
use domst::pixcon::{PartitionStrategy, PixelMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_metas(p: usize, rng: &mut ChaCha8Rng) -> Vec<PixelMeta> {
    (0..p)
        .map(|i| PixelMeta {
            pixel_id: i,
            row: i / 4,
            col: i % 4,
            distance_km: rng.random_range(0.0..30.0),
        })
        .collect()
}

pub fn random_sample(p: usize, l: usize, rng: &mut ChaCha8Rng) -> Sample {
    Sample {
        x: Tensor::new(vec![p, l], (0..p * l).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap(),
        p_target: (0..p).map(|_| rng.random_range(0.0..2.0)).collect(),
        y: rng.random_range(-1.0..1.0),
        target_index: l,
        date: NaiveDate::from_ymd_opt(2002, 3, 4).unwrap(),
    }
}

/// A random small architecture; `heads` is ignored for the single-head variants.
pub fn random_config(variant: Variant, p: usize, rng: &mut ChaCha8Rng) -> ModelConfig {
    loop {
        let cfg = random_config_once(variant, p, rng);
        if cfg.temporal_len().is_ok() {
            return cfg;
        }
    }
}

fn random_config_once(variant: Variant, p: usize, rng: &mut ChaCha8Rng) -> ModelConfig {
    let layers = rng.random_range(1..=3);
    let conv_layers: Vec<ConvLayerConfig> = (0..layers)
        .map(|_| ConvLayerConfig {
            out_channels: rng.random_range(1..=4),
            kernel: rng.random_range(1..=3),
            stride: rng.random_range(1..=2),
        })
        .collect();
    let mut cfg = ModelConfig::new(variant);
    cfg.conv_layers = conv_layers;
    cfg.lstm_hidden = rng.random_range(1..=5);
    cfg.lstm_layers = rng.random_range(1..=2);
    cfg.dense_hidden = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=5)).collect();
    cfg.lookback = rng.random_range(10..=16);
    cfg.seed = rng.random();
    cfg.partition_strategy = [PartitionStrategy::DistanceQuantile, PartitionStrategy::RoundRobin, PartitionStrategy::ContiguousBlock][rng.random_range(0..3)];
    if variant == Variant::MultiheadPlusP {
        cfg.heads = rng.random_range(1..=p.min(4));
    }
    cfg
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[C_in][L]` → `[C_out][L_out]`, cross-correlation with stride.
fn conv(input: &[Vec<f64>], kernels: &[Vec<Vec<f64>>], bias: &[f64], stride: usize) -> Vec<Vec<f64>> {
    let len = input[0].len();
    let k = kernels[0][0].len();
    let out_len = (len - k) / stride + 1;
    kernels
        .iter()
        .zip(bias)
        .map(|(kc, b)| {
            (0..out_len)
                .map(|t| {
                    let mut acc = *b;
                    for (row, w) in input.iter().zip(kc) {
                        for j in 0..k {
                            acc += w[j] * row[t * stride + j];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn kernel_of(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    (0..s[0])
        .map(|o| (0..s[1]).map(|i| (0..s[2]).map(|k| t.data()[(o * s[1] + i) * s[2] + k]).collect()).collect())
        .collect()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Whole-model forward pass on one device: every head's kernels are placed in
/// one block-diagonal convolution over the full pixel set, in global pixel order.
pub fn oracle_forward(model: &DomStModel, sample: &Sample) -> f64 {
    let p = model.num_pixels();
    let weights = model.pixcon_weights();
    let mut x: Vec<Vec<f64>> = (0..p).map(|i| sample.x.row(i).to_vec()).collect();
    if let Some(w) = &weights {
        for (row, wi) in x.iter_mut().zip(w) {
            row.iter_mut().for_each(|v| *v *= wi);
        }
    }

    // input channel index of every head's inputs in the combined layer
    let mut in_index: Vec<Vec<usize>> = model.partition.heads.clone();
    let layers = model.heads[0].convs.len();
    for layer in 0..layers {
        let mut out_offsets = Vec::new();
        let mut total_out = 0;
        for head in &model.heads {
            out_offsets.push(total_out);
            total_out += head.convs[layer].out_channels();
        }
        let c_in = x.len();
        let k = model.heads[0].convs[layer].kernel();
        let stride = model.heads[0].convs[layer].stride;
        let mut kernels = vec![vec![vec![0.0; k]; c_in]; total_out];
        let mut bias = vec![0.0; total_out];
        for (h, head) in model.heads.iter().enumerate() {
            let kh = kernel_of(&head.convs[layer].kernels);
            for (o, ko) in kh.iter().enumerate() {
                bias[out_offsets[h] + o] = head.convs[layer].bias.data()[o];
                for (pos, kk) in ko.iter().enumerate() {
                    kernels[out_offsets[h] + o][in_index[h][pos]] = kk.clone();
                }
            }
        }
        x = conv(&x, &kernels, &bias, stride);
        if layer + 1 < layers {
            x.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
        }
        in_index = model
            .heads
            .iter()
            .enumerate()
            .map(|(h, head)| (0..head.convs[layer].out_channels()).map(|o| out_offsets[h] + o).collect())
            .collect();
    }

    // time-major sequence through the LSTM stack
    let steps = x[0].len();
    let mut seq: Vec<Vec<f64>> = (0..steps).map(|t| x.iter().map(|row| row[t]).collect()).collect();
    for layer in &model.temporal.lstm.layers {
        let hsz = layer.w_recurrent.cols();
        let (mut h, mut c) = (vec![0.0; hsz], vec![0.0; hsz]);
        let mut out = Vec::with_capacity(steps);
        for xt in &seq {
            let a = matvec(&layer.w_input, xt);
            let r = matvec(&layer.w_recurrent, &h);
            let z: Vec<f64> = (0..4 * hsz).map(|j| a[j] + r[j] + layer.bias.data()[j]).collect();
            for j in 0..hsz {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hsz + j]);
                let g = z[2 * hsz + j].tanh();
                let o = sigmoid(z[3 * hsz + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            out.push(h.clone());
        }
        seq = out;
    }
    let mut v = seq.last().unwrap().clone();
    if model.config.variant.uses_target_precip() {
        v.extend_from_slice(&sample.p_target);
    }
    let n = model.temporal.dense.len();
    for (i, d) in model.temporal.dense.iter().enumerate() {
        v = matvec(&d.weight, &v).iter().zip(d.bias.data()).map(|(a, b)| a + b).collect();
        if i + 1 < n {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
    v[0]
}
