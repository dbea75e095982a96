use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, WatershedDataset};
use crate::error::{Error, Result};
use crate::exec::{run_distributed, run_sequential, trace_summary, TraceSummary, TrainConfig};
use crate::model::{build_model, ConvLayerConfig, DomStModel, ModelConfig, Variant};
use crate::pipeline::{prepare_samples, replicate_models, run_jobs, speedup, JobResult, JobSettings, Mode};

use super::metrics::{median, relative_improvement, spearman};

/// Spearman correlation between learned Pix-Con weights and the true contributions.
pub fn pixcon_recovery_score(model: &DomStModel, truth: Option<&GroundTruth>) -> Result<f64> {
    let w = model
        .pixcon_weights()
        .ok_or_else(|| Error::InvalidArgument("model has no Pix-Con block".into()))?;
    let truth = truth.ok_or_else(|| Error::InvalidArgument("dataset has no ground-truth contributions".into()))?;
    spearman(&w, &truth.contributions)
}

/// Test NSE of one variant for every (watershed, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantColumn {
    pub variant: Variant,
    pub label: String,
    /// `nse[w][s]`; `None` marks a failed job.
    pub nse: Vec<Vec<Option<f64>>>,
    pub median_nse: Option<f64>,
    pub failures: Vec<String>,
}

/// Pairwise comparison of column `a` against column `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: usize,
    pub b: usize,
    /// Share of (watershed, seed) cells where a ≥ b.
    pub win_fraction_cells: Option<f64>,
    /// Share of watersheds whose median-over-seeds NSE satisfies a ≥ b.
    pub win_fraction_watersheds: Option<f64>,
    /// (median a − median b) / |median b|.
    pub median_relative_improvement: Option<f64>,
    /// Mean and max over watersheds of the per-watershed relative improvement.
    pub mean_relative_improvement: Option<f64>,
    pub max_relative_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub watersheds: Vec<String>,
    pub seeds: Vec<u64>,
    pub columns: Vec<VariantColumn>,
    pub pairs: Vec<PairStat>,
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn pair_stat(a: usize, b: usize, ca: &VariantColumn, cb: &VariantColumn) -> PairStat {
    let (mut wins, mut total) = (0, 0);
    let (mut ws_wins, mut ws_total) = (0, 0);
    let mut improvements = Vec::new();
    for (ra, rb) in ca.nse.iter().zip(&cb.nse) {
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        for (x, y) in ra.iter().zip(rb) {
            if let (Some(x), Some(y)) = (x, y) {
                total += 1;
                wins += usize::from(x >= y);
                pa.push(*x);
                pb.push(*y);
            }
        }
        if let (Some(ma), Some(mb)) = (median(&pa), median(&pb)) {
            ws_total += 1;
            ws_wins += usize::from(ma >= mb);
            improvements.extend(relative_improvement(ma, mb));
        }
    }
    let median_relative_improvement = match (ca.median_nse, cb.median_nse) {
        (Some(x), Some(y)) => relative_improvement(x, y),
        _ => None,
    };
    PairStat {
        a,
        b,
        win_fraction_cells: fraction(wins, total),
        win_fraction_watersheds: fraction(ws_wins, ws_total),
        median_relative_improvement,
        mean_relative_improvement: (!improvements.is_empty()).then(|| improvements.iter().sum::<f64>() / improvements.len() as f64),
        max_relative_improvement: improvements.iter().copied().reduce(f64::max),
    }
}

/// Assembles a table from finished jobs; `results[v][s]` holds the jobs of
/// column `v` run with `seeds[s]`, in watershed order.
pub fn build_comparison(variants: &[Variant], seeds: &[u64], watersheds: &[String], results: &[Vec<Vec<JobResult>>]) -> ComparisonTable {
    let columns: Vec<VariantColumn> = variants
        .iter()
        .zip(results)
        .map(|(&variant, per_seed)| {
            let mut nse = vec![vec![None; seeds.len()]; watersheds.len()];
            let mut failures = Vec::new();
            for (s, jobs) in per_seed.iter().enumerate() {
                for (w, job) in jobs.iter().enumerate() {
                    nse[w][s] = job.nse_test;
                    if let Some(e) = &job.error {
                        failures.push(format!("{} seed {}: {e}", job.watershed_id, seeds[s]));
                    }
                }
            }
            let valid: Vec<f64> = nse.iter().flatten().flatten().copied().collect();
            VariantColumn {
                variant,
                label: variant.label().to_string(),
                median_nse: median(&valid),
                nse,
                failures,
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..columns.len() {
        for b in 0..columns.len() {
            if a != b {
                pairs.push(pair_stat(a, b, &columns[a], &columns[b]));
            }
        }
    }
    ComparisonTable {
        watersheds: watersheds.to_vec(),
        seeds: seeds.to_vec(),
        columns,
        pairs,
    }
}

/// Trains every (watershed, variant, seed) on the job pool and tabulates test NSE.
pub fn run_comparison(datasets: &[Arc<WatershedDataset>], variants: &[Variant], seeds: &[u64], settings: &JobSettings, pool_size: usize) -> Result<ComparisonTable> {
    if datasets.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("comparison needs at least one watershed, variant and seed".into()));
    }
    let mut results = Vec::with_capacity(variants.len());
    let mut watersheds = Vec::new();
    for &variant in variants {
        let cfg = JobSettings {
            model: settings.model.for_variant(variant),
            ..settings.clone()
        };
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let jobs = replicate_models(&cfg, datasets, seed)?;
            let report = run_jobs(&jobs, Mode::Pool, pool_size)?;
            watersheds = report.jobs.iter().map(|j| j.watershed_id.clone()).collect();
            per_seed.push(report.jobs);
        }
        results.push(per_seed);
    }
    Ok(build_comparison(variants, seeds, &watersheds, &results))
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let _ = write!(out, "{:<12}", "watershed");
        for c in &self.columns {
            let _ = write!(out, "{:>28}", c.label);
        }
        out.push('\n');
        for (w, id) in self.watersheds.iter().enumerate() {
            let _ = write!(out, "{id:<12}");
            for c in &self.columns {
                let valid: Vec<f64> = c.nse[w].iter().flatten().copied().collect();
                let _ = write!(out, "{:>28}", num(median(&valid)));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "median");
        for c in &self.columns {
            let _ = write!(out, "{:>28}", num(c.median_nse));
        }
        out.push_str("\n\n");
        for p in &self.pairs {
            let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}%", 100.0 * x));
            let _ = writeln!(
                out,
                "{} >= {}: cells {}, watersheds {}, relative improvement median {} mean {} max {}",
                self.columns[p.a].label,
                self.columns[p.b].label,
                pct(p.win_fraction_cells),
                pct(p.win_fraction_watersheds),
                pct(p.median_relative_improvement),
                pct(p.mean_relative_improvement),
                pct(p.max_relative_improvement),
            );
        }
        for c in &self.columns {
            for f in &c.failures {
                let _ = writeln!(out, "failed {}: {f}", c.label);
            }
        }
        out
    }

    pub fn pair(&self, a: usize, b: usize) -> Option<&PairStat> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub approach: String,
    pub time_s_secs: f64,
    pub time_ipd_secs: f64,
    pub speedup: f64,
    /// Per-watershed parameters and NSE identical across both modes.
    pub results_match: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub pool_size: usize,
    pub jobs: usize,
    pub rows: Vec<TimingRow>,
}

/// Same trained parameters and NSE (within 1e-9) per watershed.
pub fn job_results_match(a: &[JobResult], b: &[JobResult]) -> bool {
    let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        (None, None) => true,
        _ => false,
    };
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.watershed_id == y.watershed_id && x.ok == y.ok && x.param_digest == y.param_digest && close(x.nse_test, y.nse_test) && close(x.nse_train, y.nse_train)
        })
}

/// Runs every variant's jobs in S and IP-D mode and reports the speedup.
pub fn run_timing_table(datasets: &[Arc<WatershedDataset>], variants: &[Variant], settings: &JobSettings, global_seed: u64, pool_size: usize) -> Result<TimingTable> {
    if datasets.is_empty() || variants.is_empty() {
        return Err(Error::InvalidArgument("timing table needs at least one watershed and variant".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = JobSettings {
            model: settings.model.for_variant(variant),
            ..settings.clone()
        };
        let jobs = replicate_models(&cfg, datasets, global_seed)?;
        let s = run_jobs(&jobs, Mode::Sequential, 1)?;
        let ipd = run_jobs(&jobs, Mode::Pool, pool_size)?;
        let failures = s
            .failures()
            .map(|j| format!("S {}: {}", j.watershed_id, j.error.as_deref().unwrap_or("")))
            .chain(ipd.failures().map(|j| format!("IP-D {}: {}", j.watershed_id, j.error.as_deref().unwrap_or(""))))
            .collect();
        rows.push(TimingRow {
            approach: variant.label().to_string(),
            time_s_secs: s.total_wall_secs,
            time_ipd_secs: ipd.total_wall_secs,
            speedup: speedup(s.total_wall_secs, ipd.total_wall_secs)?,
            results_match: job_results_match(&s.jobs, &ipd.jobs),
            failures,
        });
    }
    Ok(TimingTable {
        pool_size,
        jobs: datasets.len(),
        rows,
    })
}

impl TimingTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<28}{:>12}{:>14}{:>10}\n", "Approach", "Time (S)", "Time (IP-D)", "Speedup");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28}{:>12}{:>14}{:>10}",
                r.approach,
                format!("{:.2}s", r.time_s_secs),
                format!("{:.2}s", r.time_ipd_secs),
                format!("{:.1}x", r.speedup)
            );
        }
        for f in self.rows.iter().flat_map(|r| &r.failures) {
            let _ = writeln!(out, "failed {f}");
        }
        out
    }
}


/// Sequential versus distributed executor on the same job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParallelReport {
    pub heads: usize,
    pub samples: usize,
    pub epochs: usize,
    pub steps: usize,
    pub sequential_secs: f64,
    pub distributed_secs: f64,
    pub speedup: f64,
    pub max_loss_rel_diff: f64,
    pub summary: TraceSummary,
}

/// An architecture whose per-head convolutions dominate the step cost.
pub fn heavy_model_config(heads: usize) -> ModelConfig {
    let mut m = ModelConfig::new(Variant::MultiheadPlusP).with_heads(heads);
    m.conv_layers = vec![ConvLayerConfig::new(32, 7), ConvLayerConfig::new(64, 7), ConvLayerConfig::new(8, 3)];
    m.lstm_hidden = 16;
    m.dense_hidden = vec![16];
    m
}

pub fn run_model_parallel_bench(dataset: &WatershedDataset, model: &ModelConfig, train_cfg: &TrainConfig, train_fraction: f64) -> Result<ModelParallelReport> {
    let data = prepare_samples(dataset, model.lookback, train_fraction)?;
    let initial = build_model(model, &dataset.pixels)?;
    let seq = run_sequential(initial.clone(), &data.train, train_cfg)?;
    let dist = run_distributed(initial, &data.train, train_cfg)?;
    let max_loss_rel_diff = seq
        .step_losses
        .iter()
        .zip(&dist.step_losses)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(ModelParallelReport {
        heads: model.heads,
        samples: data.train.len(),
        epochs: train_cfg.epochs,
        steps: seq.step_losses.len(),
        sequential_secs: seq.timing.total_secs,
        distributed_secs: dist.timing.total_secs,
        speedup: seq.timing.total_secs / dist.timing.total_secs,
        max_loss_rel_diff,
        summary: trace_summary(&dist.traces)?,
    })
}

impl ModelParallelReport {
    pub fn to_text(&self) -> String {
        format!(
            "model parallel: H={} samples {} epochs {}\nsequential {:.2}s  distributed {:.2}s  speedup {:.2}x  max loss rel diff {:.1e}  head imbalance {:.2}\n",
            self.heads, self.samples, self.epochs, self.sequential_secs, self.distributed_secs, self.speedup, self.max_loss_rel_diff, self.summary.head_imbalance
        )
    }
}
