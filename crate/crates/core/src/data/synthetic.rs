use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{GroundTruth, WatershedDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pixcon::PixelMeta;

/// Seasonal Poisson storm occurrence with gamma-distributed per-pixel depths.
///
/// On day `t` the watershed sees `N_t ~ Poisson(storm_rate · s_t)` storms, with
/// `s_t = 1 + seasonal_amplitude · sin(2πt / period_days)`. Each pixel's depth
/// is the sum of `N_t` independent `Gamma(gamma_shape, gamma_scale_mm)` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RainProcess {
    pub storm_rate: f64,
    pub seasonal_amplitude: f64,
    pub period_days: f64,
    pub gamma_shape: f64,
    pub gamma_scale_mm: f64,
}

impl Default for RainProcess {
    fn default() -> Self {
        Self {
            storm_rate: 0.3,
            seasonal_amplitude: 0.6,
            period_days: 365.25,
            gamma_shape: 0.8,
            gamma_scale_mm: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub watershed_id: String,
    pub pixels: usize,
    pub days: usize,
    /// Grid columns; 0 means `ceil(sqrt(pixels))`.
    pub grid_cols: usize,
    pub tau_km: f64,
    pub max_distance_km: f64,
    pub unit_hydrograph: Vec<f64>,
    pub base_flow: f64,
    pub rain: RainProcess,
    /// Noise standard deviation as a fraction of the noiseless signal's std.
    pub noise_rel: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            watershed_id: "ws00".into(),
            pixels: 16,
            days: 2000,
            grid_cols: 0,
            tau_km: 10.0,
            max_distance_km: 30.0,
            unit_hydrograph: vec![0.5, 0.3, 0.2],
            base_flow: 10.0,
            rain: RainProcess::default(),
            noise_rel: 0.05,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pixels == 0 || self.days == 0 {
            return bad("pixels and days must be >= 1".into());
        }
        if !(self.tau_km > 0.0) || !(self.max_distance_km >= 0.0) {
            return bad("tau_km must be > 0 and max_distance_km >= 0".into());
        }
        if self.unit_hydrograph.is_empty() || self.unit_hydrograph.iter().any(|h| !(h.is_finite() && *h >= 0.0)) || self.unit_hydrograph.iter().sum::<f64>() <= 0.0 {
            return bad("unit hydrograph must be non-negative with positive sum".into());
        }
        if !(self.base_flow >= 0.0 && self.base_flow.is_finite()) {
            return bad("base flow must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.noise_rel) {
            return bad(format!("noise_rel must be in [0, 1), got {}", self.noise_rel));
        }
        let r = &self.rain;
        if !(r.storm_rate >= 0.0) || !(0.0..=1.0).contains(&r.seasonal_amplitude) || !(r.period_days > 0.0) {
            return bad("rain process: storm_rate >= 0, seasonal_amplitude in [0, 1], period_days > 0".into());
        }
        if !(r.gamma_shape > 0.0 && r.gamma_scale_mm > 0.0) {
            return bad("rain process: gamma shape and scale must be > 0".into());
        }
        Ok(())
    }

    fn cols(&self) -> usize {
        if self.grid_cols > 0 {
            self.grid_cols
        } else {
            (self.pixels as f64).sqrt().ceil() as usize
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Noiseless linear unit-hydrograph routing:
/// `y_t = b + Σ_p c_p Σ_k h_k · x[t−k, p]`, treating days before the record as dry.
pub fn route_discharge(precipitation: &Tensor, contributions: &[f64], unit_hydrograph: &[f64], base_flow: f64) -> Result<Vec<f64>> {
    let (t_total, p) = (precipitation.rows(), precipitation.cols());
    if contributions.len() != p {
        return Err(Error::shape("route_discharge contributions", &[p], &[contributions.len()]));
    }
    let effective: Vec<f64> = (0..t_total)
        .map(|t| precipitation.row(t).iter().zip(contributions).map(|(x, c)| c * x).sum())
        .collect();
    Ok((0..t_total)
        .map(|t| {
            base_flow
                + unit_hydrograph
                    .iter()
                    .enumerate()
                    .take(t + 1)
                    .map(|(k, h)| h * effective[t - k])
                    .sum::<f64>()
        })
        .collect())
}

pub fn generate_synthetic(gen: &GenConfig) -> Result<WatershedDataset> {
    gen.validate()?;
    let (p, t_total) = (gen.pixels, gen.days);
    let cols = gen.cols();

    let mut dist_rng = rng(gen.seed, 0);
    let pixels: Vec<PixelMeta> = (0..p)
        .map(|i| PixelMeta {
            pixel_id: i,
            row: i / cols,
            col: i % cols,
            distance_km: dist_rng.random_range(0.0..=gen.max_distance_km),
        })
        .collect();
    let contributions: Vec<f64> = pixels.iter().map(|m| (-m.distance_km / gen.tau_km).exp()).collect();

    let mut rain_rng = rng(gen.seed, 1);
    let depth = Gamma::new(gen.rain.gamma_shape, gen.rain.gamma_scale_mm).map_err(|e| Error::Config(e.to_string()))?;
    let mut precipitation = Tensor::zeros(&[t_total, p]);
    for t in 0..t_total {
        let season = 1.0 + gen.rain.seasonal_amplitude * (2.0 * std::f64::consts::PI * t as f64 / gen.rain.period_days).sin();
        let rate = gen.rain.storm_rate * season;
        let storms = if rate > 0.0 {
            Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rain_rng) as usize
        } else {
            0
        };
        for v in precipitation.row_mut(t) {
            *v = (0..storms).map(|_| depth.sample(&mut rain_rng)).sum();
        }
    }

    let clean = route_discharge(&precipitation, &contributions, &gen.unit_hydrograph, gen.base_flow)?;
    let n = clean.len() as f64;
    let mean = clean.iter().sum::<f64>() / n;
    let std = (clean.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma = gen.noise_rel * std;
    let discharge = if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut noise_rng = rng(gen.seed, 2);
        clean.iter().map(|y| (y + noise.sample(&mut noise_rng)).max(0.0)).collect()
    } else {
        clean
    };

    let dates = (0..t_total)
        .map(|t| gen.start_date.checked_add_days(Days::new(t as u64)).ok_or_else(|| Error::Config("date overflow".into())))
        .collect::<Result<Vec<_>>>()?;

    let ds = WatershedDataset {
        watershed_id: gen.watershed_id.clone(),
        pixels,
        dates,
        precipitation,
        discharge,
        truth: Some(GroundTruth {
            contributions,
            unit_hydrograph: gen.unit_hydrograph.clone(),
            base_flow: gen.base_flow,
            tau_km: gen.tau_km,
        }),
    };
    ds.validate()?;
    Ok(ds)
}

/// `count` watersheds named `ws00, ws01, …`, each with its own derived seed.
pub fn generate_corpus(base: &GenConfig, count: usize, global_seed: u64) -> Result<Vec<WatershedDataset>> {
    (0..count)
        .map(|i| {
            let id = format!("ws{i:02}");
            let gen = GenConfig {
                seed: crate::pipeline::derive_seed(global_seed, &id),
                watershed_id: id,
                ..base.clone()
            };
            generate_synthetic(&gen)
        })
        .collect()
}
