use serde::Serialize;

use crate::data::{generate_synthetic, GenConfig, RainProcess, Sample};
use crate::error::{Error, Result};
use crate::model::{backward, build_model, forward, ConvLayerConfig, DomStModel, ModelConfig, Variant};
use crate::numerics::{finite_diff_check, GradCheckReport, ParamSet};
use crate::pipeline::prepare_samples;

/// Central-difference check of the gradient of the model's prediction on one
/// sample with respect to every parameter.
pub fn model_grad_check(model: &DomStModel, sample: &Sample, eps: f64) -> Result<GradCheckReport> {
    let (_, cache) = forward(model, sample)?;
    let analytic = backward(model, &cache, 1.0)?.flatten();
    let mut probe = model.clone();
    finite_diff_check(
        |theta| {
            probe.load_flat(theta)?;
            Ok(forward(&probe, sample)?.0)
        },
        &model.flatten(),
        &analytic,
        eps,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantGradCheck {
    pub variant: Variant,
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSuite {
    pub pixels: usize,
    pub lookback: usize,
    pub heads: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub results: Vec<VariantGradCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckSpec {
    pub pixels: usize,
    pub lookback: usize,
    pub heads: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Architecture template; variant, heads, lookback and seed are overridden.
    pub model: ModelConfig,
    /// Mean storms per day in the fixture's rain process; wet windows keep
    /// ReLU inputs off the kink.
    pub storm_rate: f64,
}

/// Small enough that no gradient component drowns in finite-difference
/// rounding noise.
fn compact_architecture() -> ModelConfig {
    ModelConfig {
        conv_layers: vec![ConvLayerConfig::new(4, 3), ConvLayerConfig::new(6, 3)],
        lstm_hidden: 8,
        dense_hidden: vec![8],
        ..ModelConfig::default()
    }
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            pixels: 8,
            lookback: 16,
            heads: 2,
            seed: 42,
            eps: crate::numerics::DEFAULT_FD_EPS,
            tolerance: 1e-4,
            model: compact_architecture(),
            storm_rate: 3.0,
        }
    }
}

/// Checks each variant on a scaled sample drawn from a small synthetic watershed.
pub fn run_grad_check(spec: &GradCheckSpec, variants: &[Variant]) -> Result<GradCheckSuite> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no variants to check".into()));
    }
    let gen = GenConfig {
        watershed_id: "gradcheck".into(),
        pixels: spec.pixels,
        days: spec.lookback + 60,
        seed: spec.seed,
        rain: RainProcess {
            storm_rate: spec.storm_rate,
            ..Default::default()
        },
        ..Default::default()
    };
    let ds = generate_synthetic(&gen)?;
    let data = prepare_samples(&ds, spec.lookback, 0.5)?;
    // the wettest window exercises every pixel path
    let sample = data
        .train
        .iter()
        .max_by(|a, b| a.x.data().iter().sum::<f64>().total_cmp(&b.x.data().iter().sum::<f64>()))
        .expect("split guarantees training samples");

    let mut results = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut cfg = ModelConfig {
            heads: spec.heads,
            ..spec.model.clone()
        }
        .for_variant(variant)
        .with_lookback(spec.lookback)
        .with_seed(spec.seed);
        if variant != Variant::MultiheadPlusP {
            cfg.heads = 1;
        }
        let model = build_model(&cfg, &ds.pixels)?;
        let r = model_grad_check(&model, sample, spec.eps)?;
        results.push(VariantGradCheck {
            variant,
            params: model.num_params(),
            max_rel_error: r.max_rel_error,
            worst_index: r.worst_index,
            analytic: r.analytic,
            numeric: r.numeric,
            passed: r.max_rel_error < spec.tolerance,
        });
    }
    Ok(GradCheckSuite {
        pixels: spec.pixels,
        lookback: spec.lookback,
        heads: spec.heads,
        seed: spec.seed,
        eps: spec.eps,
        tolerance: spec.tolerance,
        passed: results.iter().all(|r| r.passed),
        results,
    })
}

impl GradCheckSuite {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "gradient check P={} L={} H={} seed {} eps {:e}\n",
            self.pixels, self.lookback, self.heads, self.seed, self.eps
        );
        for r in &self.results {
            out.push_str(&format!(
                "{:<28}{:>8} params  max rel error {:.3e}  {}\n",
                r.variant.label(),
                r.params,
                r.max_rel_error,
                if r.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}
