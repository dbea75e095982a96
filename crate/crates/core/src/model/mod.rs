//! Dom-ST model assembly and forward/backward orchestration.
//!
//! The computation is split into per-head blocks (`head_forward` /
//! `head_backward`) and a temporal block (`temporal_forward` /
//! `temporal_backward`). [`forward`] and [`backward`] compose them in
//! head-index order; the executors call the same blocks, possibly on
//! different workers, so both layouts evaluate identical arithmetic.

mod config;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, lstm_backward, lstm_forward, relu_backward, relu_forward,
    AdamState, Conv1dCache, Conv1dParams, DenseCache, DenseParams, LstmCache, LstmParams, ParamRng, ParamSet, Tensor,
};
use crate::pixcon::{apply_move, default_tau, init_pixcon, partition_pixels, pixcon_apply, pixcon_backward, PixConCache, PixConParams, PixelMeta, PixelMove, PixelPartition};

pub use config::{ConvLayerConfig, ModelConfig, Variant, DEFAULT_MULTIHEAD_HEADS};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters owned by one spatial head: its Pix-Con shard and conv stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub pixcon: Option<PixConParams>,
    pub convs: Vec<Conv1dParams>,
}

impl ParamSet for HeadParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.pixcon.tensors();
        t.extend(self.convs.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.pixcon.tensors_mut();
        t.extend(self.convs.tensors_mut());
        t
    }
}

/// Parameters of the temporal block: LSTM stack and dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub lstm: LstmParams,
    pub dense: Vec<DenseParams>,
}

impl ParamSet for TemporalParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.lstm.tensors();
        t.extend(self.dense.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.lstm.tensors_mut();
        t.extend(self.dense.tensors_mut());
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomStModel {
    pub config: ModelConfig,
    pub partition: PixelPartition,
    pub heads: Vec<HeadParams>,
    pub temporal: TemporalParams,
}

/// Gradients with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub heads: Vec<HeadParams>,
    pub temporal: TemporalParams,
}

impl ParamSet for Gradients {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.heads.tensors();
        t.extend(self.temporal.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.heads.tensors_mut();
        t.extend(self.temporal.tensors_mut());
        t
    }
}

impl ParamSet for DomStModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.heads.tensors();
        t.extend(self.temporal.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.heads.tensors_mut();
        t.extend(self.temporal.tensors_mut());
        t
    }
}

pub fn build_model(config: &ModelConfig, meta: &[PixelMeta]) -> Result<DomStModel> {
    config.validate()?;
    let p = meta.len();
    if config.heads > p {
        return Err(Error::Config(format!("{} heads for {p} pixels", config.heads)));
    }
    let partition = partition_pixels(meta, config.heads, config.partition_strategy)?;

    let pixcon = if config.use_pixcon {
        let mut distances = vec![0.0; p];
        for m in meta {
            distances[m.pixel_id] = m.distance_km;
        }
        let tau = config.pixcon_tau.unwrap_or_else(|| default_tau(&distances));
        Some(init_pixcon(&distances, tau)?)
    } else {
        None
    };

    let mut rng = ParamRng::new(config.seed);
    let heads = partition
        .heads
        .iter()
        .map(|pixels| {
            let mut c_in = pixels.len();
            let convs = config
                .conv_layers
                .iter()
                .map(|c| {
                    let conv = Conv1dParams::init(c_in, c.out_channels, c.kernel, c.stride, &mut rng);
                    c_in = c.out_channels;
                    conv
                })
                .collect();
            HeadParams {
                pixcon: pixcon.as_ref().map(|w| w.shard(pixels)),
                convs,
            }
        })
        .collect();

    let lstm = LstmParams::init(config.lstm_input(), config.lstm_hidden, config.lstm_layers, &mut rng);
    let mut width = config.lstm_hidden + if config.variant.uses_target_precip() { p } else { 0 };
    let mut dense = Vec::new();
    for &d in config.dense_hidden.iter().chain(std::iter::once(&1)) {
        dense.push(DenseParams::init(width, d, &mut rng));
        width = d;
    }

    let model = DomStModel {
        config: config.clone(),
        partition,
        heads,
        temporal: TemporalParams { lstm, dense },
    };
    model.validate()?;
    Ok(model)
}

impl DomStModel {
    pub fn num_pixels(&self) -> usize {
        self.partition.num_pixels()
    }

    /// Structural consistency of parameters, partition and config.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        self.partition.validate()?;
        if self.heads.len() != self.partition.num_heads() || self.heads.len() != cfg.heads {
            return Err(Error::shape("model heads", &[cfg.heads], &[self.heads.len()]));
        }
        let mut concat = 0;
        for (h, (head, pixels)) in self.heads.iter().zip(&self.partition.heads).enumerate() {
            let ctx = |w: &str| format!("head {h} {w}");
            if head.convs.is_empty() {
                return Err(Error::Config(ctx("has no conv layers")));
            }
            let mut c_in = pixels.len();
            for (i, conv) in head.convs.iter().enumerate() {
                conv.validate()?;
                if conv.in_channels() != c_in {
                    return Err(Error::shape(ctx(&format!("conv {i} input channels")), &[c_in], &[conv.in_channels()]));
                }
                c_in = conv.out_channels();
            }
            concat += c_in;
            match (&head.pixcon, cfg.use_pixcon) {
                (Some(pc), _) if pc.len() != pixels.len() => return Err(Error::shape(ctx("pixcon shard"), &[pixels.len()], &[pc.len()])),
                (None, true) => return Err(Error::Config(ctx("is missing its Pix-Con shard"))),
                _ => {}
            }
        }
        let t = &self.temporal;
        t.lstm.validate()?;
        if t.lstm.input_size() != concat {
            return Err(Error::shape("temporal lstm input", &[concat], &[t.lstm.input_size()]));
        }
        let mut width = t.lstm.hidden_size() + if cfg.variant.uses_target_precip() { self.num_pixels() } else { 0 };
        for (i, d) in t.dense.iter().enumerate() {
            d.validate()?;
            if d.inputs() != width {
                return Err(Error::shape(format!("dense {i} input"), &[width], &[d.inputs()]));
            }
            width = d.outputs();
        }
        if t.dense.is_empty() || width != 1 {
            return Err(Error::Config("dense stack must end in a single output".into()));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite { context: "model parameters".into() });
        }
        Ok(())
    }

    /// Pix-Con weights in global pixel order, if the model has the block.
    pub fn pixcon_weights(&self) -> Option<Vec<f64>> {
        let mut out = vec![f64::NAN; self.num_pixels()];
        for (head, pixels) in self.heads.iter().zip(&self.partition.heads) {
            let w = head.pixcon.as_ref()?.weights();
            for (&p, v) in pixels.iter().zip(w) {
                out[p] = v;
            }
        }
        Some(out)
    }

    pub fn zero_grads(&self) -> Gradients {
        let zero = |t: &mut Tensor| t.fill(0.0);
        let mut g = Gradients {
            heads: self.heads.clone(),
            temporal: self.temporal.clone(),
        };
        g.tensors_mut().into_iter().for_each(zero);
        g
    }

    /// Pixel rows of `x` (`[P × L]`) belonging to head `h`, in channel order.
    pub fn head_input(&self, h: usize, x: &Tensor) -> Tensor {
        x.select_rows(&self.partition.heads[h])
    }

    /// Moves one pixel between heads, carrying its Pix-Con logit. The
    /// destination head's first-layer kernel gains a zero input slice, so the
    /// moved pixel starts with no influence there. Per-head Adam moments, if
    /// given, undergo the same surgery.
    pub fn migrate_pixel(&mut self, mv: PixelMove, mut head_opt: Option<&mut [AdamState]>) -> Result<()> {
        let part = &self.partition;
        if mv.from >= part.num_heads() || mv.to >= part.num_heads() || mv.from == mv.to {
            return Err(Error::InvalidArgument(format!("bad head pair {} -> {}", mv.from, mv.to)));
        }
        if part.heads[mv.from].get(mv.from_pos) != Some(&mv.pixel) || mv.to_pos > part.heads[mv.to].len() {
            return Err(Error::InvalidArgument(format!("pixel {} is not at the planned position", mv.pixel)));
        }
        if part.heads[mv.from].len() == 1 {
            return Err(Error::InvalidArgument("migration would empty a head".into()));
        }
        if let Some(opt) = head_opt.as_deref() {
            if opt.len() != self.heads.len() {
                return Err(Error::shape("optimizer heads", &[self.heads.len()], &[opt.len()]));
            }
        }
        // tensor 0 is the Pix-Con logits when present, followed by the first kernel
        let kernel_idx = usize::from(self.config.use_pixcon);

        let src = &mut self.heads[mv.from];
        let logit = src.pixcon.as_mut().map(|pc| pc.logits.remove_axis1(mv.from_pos));
        let removed = src.convs[0].kernels.remove_axis1(mv.from_pos);
        let mut moments = None;
        if let Some(opt) = head_opt.as_deref_mut() {
            let st = &mut opt[mv.from];
            let carry = (kernel_idx == 1).then(|| (st.first[0].remove_axis1(mv.from_pos), st.second[0].remove_axis1(mv.from_pos)));
            st.first[kernel_idx].remove_axis1(mv.from_pos);
            st.second[kernel_idx].remove_axis1(mv.from_pos);
            moments = carry;
        }

        let zeros = vec![0.0; removed.len()];
        let dst = &mut self.heads[mv.to];
        if let (Some(pc), Some(l)) = (dst.pixcon.as_mut(), &logit) {
            pc.logits.insert_axis1(mv.to_pos, l);
        }
        dst.convs[0].kernels.insert_axis1(mv.to_pos, &zeros);
        if let Some(opt) = head_opt {
            let st = &mut opt[mv.to];
            if let Some((m, v)) = moments {
                st.first[0].insert_axis1(mv.to_pos, &m);
                st.second[0].insert_axis1(mv.to_pos, &v);
            }
            st.first[kernel_idx].insert_axis1(mv.to_pos, &zeros);
            st.second[kernel_idx].insert_axis1(mv.to_pos, &zeros);
        }
        self.partition = apply_move(&self.partition, mv);
        self.validate()
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.format_version)));
        }
        ck.model.validate()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: DomStModel,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pixcon: Option<PixConCache>,
    convs: Vec<Conv1dCache>,
    /// post-activation outputs of every conv except the last
    hidden: Vec<Tensor>,
}

/// Pix-Con shard (if any), then the conv stack with ReLU between layers.
pub fn head_forward(head: &HeadParams, shard: &Tensor) -> Result<(Tensor, HeadCache)> {
    shard.ensure_finite("head input")?;
    let (mut x, pixcon) = match &head.pixcon {
        Some(pc) => {
            let (y, c) = pixcon_apply(shard, pc)?;
            (y, Some(c))
        }
        None => (shard.clone(), None),
    };
    let mut convs = Vec::with_capacity(head.convs.len());
    let mut hidden = Vec::with_capacity(head.convs.len().saturating_sub(1));
    for (i, conv) in head.convs.iter().enumerate() {
        let (mut y, c) = conv1d_forward(&x, conv)?;
        convs.push(c);
        if i + 1 < head.convs.len() {
            relu_forward(y.data_mut());
            hidden.push(y.clone());
        }
        x = y;
    }
    Ok((x, HeadCache { pixcon, convs, hidden }))
}

/// Gradients for one head's parameters given the gradient on its output.
pub fn head_backward(head: &HeadParams, cache: &HeadCache, grad_out: &Tensor) -> Result<HeadParams> {
    if cache.convs.len() != head.convs.len() {
        return Err(Error::shape("head cache conv layers", &[head.convs.len()], &[cache.convs.len()]));
    }
    let mut grad = grad_out.clone();
    let mut conv_grads = Vec::with_capacity(head.convs.len());
    for i in (0..head.convs.len()).rev() {
        if i + 1 < head.convs.len() {
            relu_backward(cache.hidden[i].data(), grad.data_mut());
        }
        let (gi, gp) = conv1d_backward(&head.convs[i], &cache.convs[i], &grad)?;
        conv_grads.push(gp);
        grad = gi;
    }
    conv_grads.reverse();
    let pixcon = match (&head.pixcon, &cache.pixcon) {
        (Some(_), Some(c)) => Some(pixcon_backward(c, &grad)?.1),
        (None, None) => None,
        _ => return Err(Error::Config("head cache does not match Pix-Con presence".into())),
    };
    Ok(HeadParams { pixcon, convs: conv_grads })
}

#[derive(Debug, Clone)]
pub struct TemporalCache {
    head_channels: Vec<usize>,
    steps: usize,
    lstm: LstmCache,
    dense: Vec<DenseCache>,
    /// post-activation outputs of every dense layer except the last
    dense_hidden: Vec<Vec<f64>>,
    lstm_hidden: usize,
}

/// Concatenates head outputs (head-index order) along channels, runs the LSTM
/// over time, appends `p_target` when given, and applies the dense stack.
pub fn temporal_forward(params: &TemporalParams, head_outputs: &[Tensor], p_target: Option<&[f64]>) -> Result<(f64, TemporalCache)> {
    let merged = Tensor::concat_rows(head_outputs)?;
    let steps = merged.cols();
    let seq = merged.transpose();
    let (_, last, lstm) = lstm_forward(&seq, &params.lstm).map_err(|e| match e {
        Error::Shape { expected, actual, .. } => Error::shape("temporal block: merged head outputs", &expected, &actual),
        other => other,
    })?;
    let lstm_hidden = last.len();
    let mut x = last;
    if let Some(p) = p_target {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "target-day precipitation".into() });
        }
        x.extend_from_slice(p);
    }
    let mut dense = Vec::with_capacity(params.dense.len());
    let mut dense_hidden = Vec::new();
    for (i, layer) in params.dense.iter().enumerate() {
        let (mut y, c) = dense_forward(&x, layer).map_err(|e| match e {
            Error::Shape { expected, actual, .. } => Error::shape(format!("temporal block: dense {i} input"), &expected, &actual),
            other => other,
        })?;
        dense.push(c);
        if i + 1 < params.dense.len() {
            relu_forward(&mut y);
            dense_hidden.push(y.clone());
        }
        x = y;
    }
    if x.len() != 1 {
        return Err(Error::shape("temporal block output", &[1], &[x.len()]));
    }
    Ok((
        x[0],
        TemporalCache {
            head_channels: head_outputs.iter().map(Tensor::rows).collect(),
            steps,
            lstm,
            dense,
            dense_hidden,
            lstm_hidden,
        },
    ))
}

/// Returns the temporal gradients and one output gradient per head.
pub fn temporal_backward(params: &TemporalParams, cache: &TemporalCache, grad_pred: f64) -> Result<(TemporalParams, Vec<Tensor>)> {
    if cache.dense.len() != params.dense.len() {
        return Err(Error::shape("temporal cache dense layers", &[params.dense.len()], &[cache.dense.len()]));
    }
    let mut grad = vec![grad_pred];
    let mut dense_grads = Vec::with_capacity(params.dense.len());
    for i in (0..params.dense.len()).rev() {
        if i + 1 < params.dense.len() {
            relu_backward(&cache.dense_hidden[i], &mut grad);
        }
        let (gx, gp) = dense_backward(&params.dense[i], &cache.dense[i], &grad)?;
        dense_grads.push(gp);
        grad = gx;
    }
    dense_grads.reverse();
    // anything past the LSTM state belongs to the raw target-day input
    grad.truncate(cache.lstm_hidden);
    let (grad_seq, lstm) = lstm_backward(&params.lstm, &cache.lstm, &grad)?;
    let grad_merged = grad_seq.transpose();

    let mut per_head = Vec::with_capacity(cache.head_channels.len());
    let mut row = 0;
    for &c in &cache.head_channels {
        let rows: Vec<usize> = (row..row + c).collect();
        per_head.push(grad_merged.select_rows(&rows));
        row += c;
    }
    debug_assert_eq!(grad_merged.cols(), cache.steps);
    Ok((TemporalParams { lstm, dense: dense_grads }, per_head))
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    heads: Vec<HeadCache>,
    temporal: TemporalCache,
}

fn check_sample(model: &DomStModel, sample: &Sample) -> Result<()> {
    let (p, l) = (model.num_pixels(), model.config.lookback);
    sample.x.expect_shape("sample x", &[p, l])?;
    if model.config.variant.uses_target_precip() && sample.p_target.len() != p {
        return Err(Error::shape("sample p_target", &[p], &[sample.p_target.len()]));
    }
    Ok(())
}

pub fn target_input<'a>(model: &DomStModel, sample: &'a Sample) -> Option<&'a [f64]> {
    model.config.variant.uses_target_precip().then_some(sample.p_target.as_slice())
}

pub fn forward(model: &DomStModel, sample: &Sample) -> Result<(f64, ForwardCache)> {
    check_sample(model, sample)?;
    let mut outs = Vec::with_capacity(model.heads.len());
    let mut heads = Vec::with_capacity(model.heads.len());
    for (h, head) in model.heads.iter().enumerate() {
        let (y, c) = head_forward(head, &model.head_input(h, &sample.x)).map_err(|e| match e {
            Error::Shape { expected, actual, .. } => Error::shape(format!("spatial block head {h}"), &expected, &actual),
            other => other,
        })?;
        outs.push(y);
        heads.push(c);
    }
    let (pred, temporal) = temporal_forward(&model.temporal, &outs, target_input(model, sample))?;
    Ok((pred, ForwardCache { heads, temporal }))
}

pub fn backward(model: &DomStModel, cache: &ForwardCache, grad_prediction: f64) -> Result<Gradients> {
    if cache.heads.len() != model.heads.len() {
        return Err(Error::shape("forward cache heads", &[model.heads.len()], &[cache.heads.len()]));
    }
    let (temporal, head_grads) = temporal_backward(&model.temporal, &cache.temporal, grad_prediction)?;
    let heads = model
        .heads
        .iter()
        .zip(&cache.heads)
        .zip(&head_grads)
        .map(|((head, c), g)| head_backward(head, c, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradients { heads, temporal })
}

pub fn predict_series(model: &DomStModel, samples: &[Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| forward(model, s).map(|(y, _)| y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mse_loss;

    fn metas(p: usize) -> Vec<PixelMeta> {
        (0..p)
            .map(|i| PixelMeta {
                pixel_id: i,
                row: i / 4,
                col: i % 4,
                distance_km: ((i * 7) % 11) as f64 + 0.5,
            })
            .collect()
    }

    fn small(variant: Variant, heads: usize) -> ModelConfig {
        let mut c = ModelConfig::new(variant);
        c.conv_layers = vec![ConvLayerConfig::new(3, 3), ConvLayerConfig::new(4, 3)];
        c.lstm_hidden = 5;
        c.dense_hidden = vec![6];
        c.lookback = 12;
        c.seed = 42;
        if variant == Variant::MultiheadPlusP {
            c.heads = heads;
        }
        c
    }

    fn sample(p: usize, l: usize, k: f64) -> Sample {
        Sample {
            x: Tensor::new(vec![p, l], (0..p * l).map(|i| ((i as f64 * 0.37 + k).sin()).abs()).collect()).unwrap(),
            p_target: (0..p).map(|i| (i as f64 * 0.21 + k).cos().abs()).collect(),
            y: 0.3,
            target_index: l,
            date: chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        }
    }

    #[test]
    fn build_examples() {
        let m = build_model(&ModelConfig::new(Variant::Singlehead), &metas(8)).unwrap();
        assert_eq!(m.heads.len(), 1);
        assert!(m.heads[0].pixcon.is_none());
        assert_eq!(m.heads[0].convs[0].in_channels(), 8);

        let m = build_model(&ModelConfig::new(Variant::MultiheadPlusP).with_heads(2), &metas(8)).unwrap();
        assert_eq!(m.heads.len(), 2);
        assert!(m.heads.iter().all(|h| h.convs[0].in_channels() == 4 && h.pixcon.as_ref().unwrap().len() == 4));
        assert_eq!(m.temporal.dense[0].inputs(), 32 + 8);

        let a = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let b = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        assert_eq!(a.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        assert!(build_model(&ModelConfig::new(Variant::MultiheadPlusP).with_heads(9), &metas(8)).is_err());
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        for h in &mut m.heads {
            h.convs.iter_mut().for_each(|c| c.tensors_mut().into_iter().for_each(|t| t.fill(0.0)));
        }
        m.temporal.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        m.temporal.dense.last_mut().unwrap().bias.data_mut()[0] = 1.75;
        let (y, _) = forward(&m, &sample(8, 12, 0.0)).unwrap();
        assert_eq!(y, 1.75);
    }

    #[test]
    fn target_precip_reachability() {
        let s = sample(8, 12, 0.4);
        let mut s2 = s.clone();
        s2.p_target.iter_mut().for_each(|v| *v += 1.0);
        for v in Variant::ALL {
            let m = build_model(&small(v, 2), &metas(8)).unwrap();
            let (a, cache) = forward(&m, &s).unwrap();
            let (b, _) = forward(&m, &s2).unwrap();
            assert_eq!(a != b, v.uses_target_precip(), "{v}");
            backward(&m, &cache, 1.0).unwrap();
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let (_, cache) = forward(&m, &sample(8, 12, 0.1)).unwrap();
        let g = backward(&m, &cache, 0.0).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(g.num_params(), m.num_params());
    }

    #[test]
    fn shape_errors_name_the_block() {
        let m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let err = forward(&m, &sample(8, 11, 0.0)).unwrap_err();
        assert!(err.to_string().contains("sample x"), "{err}");
        let mut s = sample(8, 12, 0.0);
        s.p_target.pop();
        assert!(forward(&m, &s).unwrap_err().to_string().contains("p_target"));
    }

    #[test]
    fn predict_series_examples() {
        let m = build_model(&small(Variant::SingleheadPlusP, 1), &metas(8)).unwrap();
        assert!(predict_series(&m, &[]).unwrap().is_empty());
        let s: Vec<Sample> = (0..4).map(|k| sample(8, 12, k as f64)).collect();
        let ys = predict_series(&m, &s).unwrap();
        assert_eq!(ys[0], forward(&m, &s[0]).unwrap().0);
        let rev: Vec<Sample> = s.iter().rev().cloned().collect();
        let yr = predict_series(&m, &rev).unwrap();
        assert_eq!(ys.iter().rev().copied().collect::<Vec<_>>(), yr);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let back = DomStModel::from_checkpoint_json(&m.to_checkpoint_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bits = |m: &DomStModel| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn migration_moves_logit_and_zeroes_new_slice() {
        let mut m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let weights = m.pixcon_weights().unwrap();
        let mut opt: Vec<AdamState> = m.heads.iter().map(|h| AdamState::new(Default::default(), h)).collect();
        let mv = crate::pixcon::plan_rebalance(&m.partition, &[2.0, 1.0]).unwrap().unwrap();
        m.migrate_pixel(mv, Some(&mut opt)).unwrap();
        assert_eq!(m.partition.heads[0].len(), 3);
        assert_eq!(m.partition.heads[1].len(), 5);
        assert_eq!(m.pixcon_weights().unwrap(), weights);
        let k = &m.heads[1].convs[0].kernels;
        assert_eq!(k.shape()[1], 5);
        for c in 0..k.shape()[0] {
            for t in 0..k.shape()[2] {
                assert_eq!(k.data()[(c * 5 + mv.to_pos) * k.shape()[2] + t], 0.0);
            }
        }
        for (h, st) in m.heads.iter().zip(&opt) {
            for (p, mom) in h.tensors().iter().zip(&st.first) {
                assert_eq!(p.shape(), mom.shape());
            }
        }
        forward(&m, &sample(8, 12, 0.0)).unwrap();
    }

    #[test]
    fn gradient_descent_reduces_loss() {
        let m = build_model(&small(Variant::MultiheadPlusP, 2), &metas(8)).unwrap();
        let s = sample(8, 12, 0.2);
        let (y, cache) = forward(&m, &s).unwrap();
        let (loss, g) = mse_loss(&[y], &[s.y]).unwrap();
        let grads = backward(&m, &cache, g[0]).unwrap();
        let mut stepped = m.clone();
        let flat: Vec<f64> = stepped.flatten().iter().zip(grads.flatten()).map(|(p, g)| p - 1e-3 * g).collect();
        stepped.load_flat(&flat).unwrap();
        let (y2, _) = forward(&stepped, &s).unwrap();
        assert!(mse_loss(&[y2], &[s.y]).unwrap().0 < loss);
    }
}
