use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NseResult {
    pub nse: f64,
    pub n: usize,
    pub obs_mean: f64,
    /// Population variance of the observations.
    pub obs_var: f64,
}

/// Nash-Sutcliffe efficiency of `sim` against `obs`.
pub fn nse(sim: &[f64], obs: &[f64]) -> Result<NseResult> {
    if sim.len() != obs.len() {
        return Err(Error::shape("nse inputs", &[obs.len()], &[sim.len()]));
    }
    let n = obs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("NSE needs at least 2 observations, got {n}")));
    }
    if sim.iter().chain(obs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "nse inputs".into() });
    }
    let obs_mean = obs.iter().sum::<f64>() / n as f64;
    let denom: f64 = obs.iter().map(|o| (o - obs_mean).powi(2)).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let num: f64 = sim.iter().zip(obs).map(|(s, o)| (o - s).powi(2)).sum();
    Ok(NseResult {
        nse: 1.0 - num / denom,
        n,
        obs_mean,
        obs_var: denom / n as f64,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| (cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman inputs", &[a.len()], &[b.len()]));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 points".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "spearman inputs".into() });
    }
    pearson(&average_ranks(a), &average_ranks(b)).ok_or_else(|| Error::InvalidArgument("spearman undefined for constant input".into()))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `(new - old) / |old|`.
pub fn relative_improvement(new: f64, old: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old.abs())
}
