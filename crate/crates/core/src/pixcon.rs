//! Pixel-contribution block and pixel-to-head partitioning.
//!
//! Each pixel's precipitation series is scaled by `w_p = sigmoid(logit_p)`.
//! Logits start from the distance-to-water prior `exp(-d_p / tau)`, so pixels
//! near a channel begin with a larger contribution. Partitions assign every
//! pixel to exactly one convolution head; each head also owns the logits of
//! its pixels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, ParamSet, Tensor};

const WEIGHT_CLAMP: f64 = 1e-4;

/// Timing ratio (slowest / fastest head) above which a rebalance moves a pixel.
pub const REBALANCE_RATIO: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMeta {
    pub pixel_id: usize,
    pub row: usize,
    pub col: usize,
    pub distance_km: f64,
}

impl PixelMeta {
    pub fn validate(&self) -> Result<()> {
        if !self.distance_km.is_finite() || self.distance_km < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pixel {}: distance must be finite and >= 0, got {}",
                self.pixel_id, self.distance_km
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixConParams {
    /// `[P]` unconstrained logits
    pub logits: Tensor,
}

impl PixConParams {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self {
            logits: Tensor::vector(logits),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.logits.data().iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Logits for a subset of pixels, in the given order.
    pub fn shard(&self, pixels: &[usize]) -> PixConParams {
        Self::from_logits(pixels.iter().map(|&p| self.logits.data()[p]).collect())
    }
}

impl ParamSet for PixConParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.logits]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.logits]
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Median of the distances, falling back to 1 km when the median is zero.
pub fn default_tau(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 1.0;
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

pub fn init_pixcon(distances: &[f64], tau: f64) -> Result<PixConParams> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let logits = distances
        .iter()
        .enumerate()
        .map(|(p, &d)| {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("pixel {p}: negative or non-finite distance {d}")));
            }
            Ok(logit((-d / tau).exp().clamp(WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PixConParams::from_logits(logits))
}

#[derive(Debug, Clone)]
pub struct PixConCache {
    input: Tensor,
    weights: Vec<f64>,
}

/// Scales row `p` of `x` (`[P × L]`) by `w_p`.
pub fn pixcon_apply(x: &Tensor, params: &PixConParams) -> Result<(Tensor, PixConCache)> {
    let p = params.len();
    if x.shape().len() != 2 || x.rows() != p {
        return Err(Error::shape("pixcon input", &[p, x.cols()], x.shape()));
    }
    let weights = params.weights();
    let mut out = x.clone();
    for (r, &w) in weights.iter().enumerate() {
        for v in out.row_mut(r) {
            *v *= w;
        }
    }
    Ok((
        out,
        PixConCache {
            input: x.clone(),
            weights,
        },
    ))
}

/// Returns `(grad_x, grad_logits)`.
pub fn pixcon_backward(cache: &PixConCache, grad_out: &Tensor) -> Result<(Tensor, PixConParams)> {
    grad_out.expect_shape("pixcon grad_out", cache.input.shape())?;
    let mut grad_x = grad_out.clone();
    let mut grad_logits = Vec::with_capacity(cache.weights.len());
    for (r, &w) in cache.weights.iter().enumerate() {
        let dot: f64 = cache.input.row(r).iter().zip(grad_out.row(r)).map(|(a, b)| a * b).sum();
        grad_logits.push(w * (1.0 - w) * dot);
        for v in grad_x.row_mut(r) {
            *v *= w;
        }
    }
    Ok((grad_x, PixConParams::from_logits(grad_logits)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    #[default]
    DistanceQuantile,
    RoundRobin,
    ContiguousBlock,
}

impl std::str::FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance-quantile" => Ok(Self::DistanceQuantile),
            "round-robin" => Ok(Self::RoundRobin),
            "contiguous-block" => Ok(Self::ContiguousBlock),
            other => Err(Error::InvalidArgument(format!("unknown partition strategy `{other}`"))),
        }
    }
}

/// Exact-cover assignment of pixels to heads.
///
/// Pixel ids are column indices of the precipitation matrix. Each head lists
/// its pixels in the strategy's ordering; that order is also the channel order
/// of the head's first convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelPartition {
    pub strategy: PartitionStrategy,
    pub heads: Vec<Vec<usize>>,
    /// Position of each pixel in the strategy's total ordering.
    pub rank: Vec<usize>,
}

impl PixelPartition {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.rank.len()
    }

    pub fn head_of(&self, pixel: usize) -> Option<usize> {
        self.heads.iter().position(|h| h.contains(&pixel))
    }

    pub fn assignment(&self) -> BTreeMap<usize, usize> {
        self.heads
            .iter()
            .enumerate()
            .flat_map(|(h, px)| px.iter().map(move |&p| (p, h)))
            .collect()
    }

    /// Checks that heads are disjoint, cover `0..P`, and are non-empty when `P >= H`.
    pub fn validate(&self) -> Result<()> {
        let p = self.rank.len();
        let mut seen = vec![false; p];
        for (h, pixels) in self.heads.iter().enumerate() {
            if pixels.is_empty() && p >= self.heads.len() {
                return Err(Error::Config(format!("partition head {h} is empty")));
            }
            for &px in pixels {
                if px >= p || std::mem::replace(&mut seen[px], true) {
                    return Err(Error::Config(format!("partition pixel {px} out of range or assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("partition does not cover pixel {missing}")));
        }
        Ok(())
    }

    pub fn dump(&self) -> PartitionDump {
        PartitionDump {
            strategy: self.strategy,
            num_heads: self.num_heads(),
            assignment: self.assignment(),
        }
    }
}

/// JSON inspection format: pixel id → head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDump {
    pub strategy: PartitionStrategy,
    pub num_heads: usize,
    pub assignment: BTreeMap<usize, usize>,
}

pub fn partition_pixels(meta: &[PixelMeta], heads: usize, strategy: PartitionStrategy) -> Result<PixelPartition> {
    let p = meta.len();
    if heads < 1 || heads > p {
        return Err(Error::InvalidArgument(format!("head count must be in 1..={p}, got {heads}")));
    }
    let mut ids: Vec<usize> = meta.iter().map(|m| m.pixel_id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(Error::InvalidArgument("pixel ids must be exactly 0..P".into()));
    }
    for m in meta {
        m.validate()?;
    }

    let mut order: Vec<&PixelMeta> = meta.iter().collect();
    match strategy {
        PartitionStrategy::DistanceQuantile => {
            order.sort_by(|a, b| a.distance_km.total_cmp(&b.distance_km).then(a.pixel_id.cmp(&b.pixel_id)));
        }
        PartitionStrategy::RoundRobin | PartitionStrategy::ContiguousBlock => order.sort_by_key(|m| m.pixel_id),
    }
    let mut rank = vec![0; p];
    for (r, m) in order.iter().enumerate() {
        rank[m.pixel_id] = r;
    }

    let mut out = vec![Vec::new(); heads];
    match strategy {
        PartitionStrategy::RoundRobin => {
            for (r, m) in order.iter().enumerate() {
                out[r % heads].push(m.pixel_id);
            }
        }
        PartitionStrategy::DistanceQuantile | PartitionStrategy::ContiguousBlock => {
            let (base, extra) = (p / heads, p % heads);
            let mut it = order.iter();
            for (h, bucket) in out.iter_mut().enumerate() {
                let size = base + usize::from(h < extra);
                bucket.extend(it.by_ref().take(size).map(|m| m.pixel_id));
            }
        }
    }
    Ok(PixelPartition {
        strategy,
        heads: out,
        rank,
    })
}

/// A single pixel migration between heads, with channel positions before and after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PixelMove {
    pub pixel: usize,
    pub from: usize,
    pub to: usize,
    pub from_pos: usize,
    pub to_pos: usize,
}

/// Decides which pixel (if any) a rebalance moves. `Ok(None)` means no-op.
pub fn plan_rebalance(partition: &PixelPartition, step_times: &[f64]) -> Result<Option<PixelMove>> {
    let h = partition.num_heads();
    if step_times.len() != h {
        return Err(Error::shape("rebalance timings", &[h], &[step_times.len()]));
    }
    if step_times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument("rebalance timings must be finite and positive".into()));
    }
    let mut slow = 0;
    let mut fast = 0;
    for (i, &t) in step_times.iter().enumerate() {
        if t > step_times[slow] {
            slow = i;
        }
        if t < step_times[fast] {
            fast = i;
        }
    }
    if slow == fast || step_times[slow] / step_times[fast] <= REBALANCE_RATIO {
        return Ok(None);
    }
    let src = &partition.heads[slow];
    if src.len() <= 1 {
        return Ok(None);
    }
    // the pixel on the side of the source head facing the destination
    let from_pos = if fast > slow { src.len() - 1 } else { 0 };
    let pixel = src[from_pos];
    let to_pos = partition.heads[fast]
        .iter()
        .position(|&q| partition.rank[q] > partition.rank[pixel])
        .unwrap_or(partition.heads[fast].len());
    Ok(Some(PixelMove {
        pixel,
        from: slow,
        to: fast,
        from_pos,
        to_pos,
    }))
}

pub fn apply_move(partition: &PixelPartition, mv: PixelMove) -> PixelPartition {
    let mut next = partition.clone();
    next.heads[mv.from].remove(mv.from_pos);
    next.heads[mv.to].insert(mv.to_pos, mv.pixel);
    next
}

/// Moves one boundary pixel from the slowest to the fastest head when their
/// time ratio exceeds [`REBALANCE_RATIO`]. Never empties a head.
pub fn rebalance_partitions(partition: &PixelPartition, step_times: &[f64]) -> Result<PixelPartition> {
    Ok(match plan_rebalance(partition, step_times)? {
        Some(mv) => apply_move(partition, mv),
        None => partition.clone(),
    })
}
