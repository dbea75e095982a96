//! Watershed datasets: schema, synthetic generation, CSV ingestion, windowing.

mod csv_io;
mod synthetic;
mod window;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pixcon::PixelMeta;

pub use csv_io::{load_corpus_dir, load_watershed_csv, load_watershed_dir, write_watershed_csv, DISCHARGE_FILE, META_FILE, PRECIP_FILE, TRUTH_FILE};
pub use synthetic::{generate_corpus, generate_synthetic, route_discharge, GenConfig, RainProcess};
pub use window::{chrono_split, window_samples, Sample, Scaler};

/// Known generating parameters of a synthetic watershed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `c_p = exp(-d_p / tau)`
    pub contributions: Vec<f64>,
    pub unit_hydrograph: Vec<f64>,
    pub base_flow: f64,
    pub tau_km: f64,
}

/// One watershed's inputs and labels.
///
/// Units: precipitation mm/day, distances km, discharge m³/s. Pixel `i` is
/// column `i` of `precipitation` and has `pixel_id == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatershedDataset {
    pub watershed_id: String,
    pub pixels: Vec<PixelMeta>,
    pub dates: Vec<NaiveDate>,
    /// `[T_total × P]`
    pub precipitation: Tensor,
    pub discharge: Vec<f64>,
    pub truth: Option<GroundTruth>,
}

impl WatershedDataset {
    pub fn num_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn num_days(&self) -> usize {
        self.discharge.len()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.pixels.iter().map(|m| m.distance_km).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, p) = (self.num_days(), self.num_pixels());
        let ctx = |what: &str| format!("watershed {}: {what}", self.watershed_id);
        if p == 0 || t == 0 {
            return Err(Error::InvalidArgument(ctx("needs at least one pixel and one day")));
        }
        self.precipitation.expect_shape(&ctx("precipitation"), &[t, p])?;
        if self.dates.len() != t {
            return Err(Error::shape(ctx("dates"), &[t], &[self.dates.len()]));
        }
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(ctx("dates must be strictly increasing")));
        }
        for (i, m) in self.pixels.iter().enumerate() {
            if m.pixel_id != i {
                return Err(Error::InvalidArgument(ctx(&format!("pixel at position {i} has id {}", m.pixel_id))));
            }
            m.validate()?;
        }
        if self.precipitation.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(ctx("precipitation must be finite and >= 0")));
        }
        if self.discharge.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(ctx("discharge must be finite and >= 0")));
        }
        if let Some(truth) = &self.truth {
            if truth.contributions.len() != p {
                return Err(Error::shape(ctx("ground-truth contributions"), &[p], &[truth.contributions.len()]));
            }
        }
        Ok(())
    }
}
