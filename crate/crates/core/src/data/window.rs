use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::WatershedDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One training example for target day `target_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[P × L]` precipitation for days `target − L .. target`
    pub x: Tensor,
    /// `[P]` precipitation on the target day
    pub p_target: Vec<f64>,
    /// discharge on the target day
    pub y: f64,
    pub target_index: usize,
    pub date: NaiveDate,
}

/// One sample per target day `t ∈ [L, T_total)`.
pub fn window_samples(dataset: &WatershedDataset, lookback: usize) -> Result<Vec<Sample>> {
    let (t_total, p) = (dataset.num_days(), dataset.num_pixels());
    if lookback == 0 || t_total <= lookback {
        return Err(Error::InvalidArgument(format!(
            "watershed {}: need more than {lookback} days for lookback {lookback}, have {t_total}",
            dataset.watershed_id
        )));
    }
    let precip = &dataset.precipitation;
    Ok((lookback..t_total)
        .map(|t| {
            let mut x = vec![0.0; p * lookback];
            for (j, day) in (t - lookback..t).enumerate() {
                for (px, &v) in precip.row(day).iter().enumerate() {
                    x[px * lookback + j] = v;
                }
            }
            Sample {
                x: Tensor::new(vec![p, lookback], x).expect("window shape"),
                p_target: precip.row(t).to_vec(),
                y: dataset.discharge[t],
                target_index: t,
                date: dataset.dates[t],
            }
        })
        .collect())
}

/// First `ceil(N·f)` samples train, the rest test.
pub fn chrono_split(samples: &[Sample], train_fraction: f64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    // the epsilon keeps exact products like 0.7 · 10 from rounding up
    let n_train = ((samples.len() as f64 * train_fraction) - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= samples.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {} samples at {train_fraction} leaves an empty side",
            samples.len()
        )));
    }
    Ok((samples[..n_train].to_vec(), samples[n_train..].to_vec()))
}

/// Input/target scaling fitted on training samples.
///
/// Precipitation is divided by one global scale (no shift, so dry days stay
/// zero and per-pixel weights keep their meaning); discharge is standardized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub precip_scale: f64,
    pub discharge_mean: f64,
    pub discharge_std: f64,
}

impl Default for Scaler {
    fn default() -> Self {
        Self {
            precip_scale: 1.0,
            discharge_mean: 0.0,
            discharge_std: 1.0,
        }
    }
}

impl Scaler {
    pub fn fit(train: &[Sample]) -> Self {
        if train.is_empty() {
            return Self::default();
        }
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
        for s in train {
            for &v in s.x.data() {
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let precip_std = (sq / n - mean * mean).max(0.0).sqrt();
        let m = train.len() as f64;
        let y_mean = train.iter().map(|s| s.y).sum::<f64>() / m;
        let y_std = (train.iter().map(|s| (s.y - y_mean).powi(2)).sum::<f64>() / m).sqrt();
        Self {
            precip_scale: if precip_std > 0.0 { precip_std } else { 1.0 },
            discharge_mean: y_mean,
            discharge_std: if y_std > 0.0 { y_std } else { 1.0 },
        }
    }

    pub fn transform(&self, s: &Sample) -> Sample {
        let mut out = s.clone();
        out.x.scale(1.0 / self.precip_scale);
        for v in &mut out.p_target {
            *v /= self.precip_scale;
        }
        out.y = self.scale_target(s.y);
        out
    }

    pub fn transform_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| self.transform(s)).collect()
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.discharge_mean) / self.discharge_std
    }

    pub fn unscale_target(&self, z: f64) -> f64 {
        z * self.discharge_std + self.discharge_mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig};
    use proptest::prelude::*;

    fn dataset(days: usize, pixels: usize, seed: u64) -> WatershedDataset {
        generate_synthetic(&GenConfig {
            pixels,
            days,
            seed,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn count_and_first_target() {
        let ds = dataset(10, 2, 1);
        let s = window_samples(&ds, 3).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s[0].target_index, 3);
        assert_eq!(window_samples(&ds, 9).unwrap().len(), 1);
        assert!(window_samples(&ds, 10).is_err());
    }

    #[test]
    fn window_contents() {
        let ds = dataset(12, 3, 2);
        let s = &window_samples(&ds, 4).unwrap()[5];
        let t = s.target_index;
        for p in 0..3 {
            for j in 0..4 {
                assert_eq!(s.x.row(p)[j], ds.precipitation.row(t - 4 + j)[p]);
            }
        }
        assert_eq!(s.p_target, ds.precipitation.row(t));
        assert_eq!(s.y, ds.discharge[t]);
        assert_eq!(s.date, ds.dates[t]);
    }

    #[test]
    fn split_examples() {
        let ds = dataset(13, 1, 3);
        let s = window_samples(&ds, 3).unwrap();
        let (tr, te) = chrono_split(&s, 0.8).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(tr.last().unwrap().date < te[0].date);

        let (tr, te) = chrono_split(&s[..2], 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        let (tr, _) = chrono_split(&s, 0.7).unwrap();
        assert_eq!(tr.len(), 7);

        assert!(chrono_split(&s[..1], 0.5).is_err());
        assert!(chrono_split(&s, 1.0).is_err());
        assert!(chrono_split(&s, 0.0).is_err());
    }

    #[test]
    fn scaler_round_trip() {
        let ds = dataset(60, 3, 4);
        let s = window_samples(&ds, 5).unwrap();
        let sc = Scaler::fit(&s);
        let z = sc.transform(&s[7]);
        assert!((sc.unscale_target(z.y) - s[7].y).abs() < 1e-12);
        let ys: Vec<f64> = sc.transform_all(&s).iter().map(|s| s.y).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn leakage_free_and_count_law(days in 2usize..60, lookback in 1usize..30, pixels in 1usize..4, seed in 0u64..1000) {
            prop_assume!(days > lookback);
            let ds = dataset(days, pixels, seed);
            let samples = window_samples(&ds, lookback).unwrap();
            prop_assert_eq!(samples.len(), days - lookback);
            for s in &samples {
                let t = s.target_index;
                // X covers exactly days t-L..t, all strictly before the target
                for j in 0..lookback {
                    let day = t - lookback + j;
                    prop_assert!(day < t);
                    for p in 0..pixels {
                        prop_assert_eq!(s.x.row(p)[j], ds.precipitation.row(day)[p]);
                    }
                }
                prop_assert_eq!(&s.p_target[..], ds.precipitation.row(t));
            }
        }
    }
}
