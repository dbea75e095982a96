//! Watershed-level job parallelism.
//!
//! A corpus is split into per-watershed datasets, each watershed gets its own
//! model replica with a seed derived from the global seed and its id, and the
//! resulting jobs run either one after another (S) or on a fixed-size worker
//! pool pulling from a shared queue (IP-D).

use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{chrono_split, window_samples, Sample, Scaler, WatershedDataset};
use crate::error::{Error, Result};
use crate::eval::nse;
use crate::exec::{train, TrainConfig, TrainOutcome};
use crate::model::{build_model, predict_series, DomStModel, ModelConfig};
use crate::numerics::ParamSet;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Per-watershed seed: the first 8 bytes of SHA-256 over the global seed and the id.
pub fn derive_seed(global_seed: u64, watershed_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(watershed_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Hex SHA-256 of the parameters' bit patterns, for cheap cross-run comparison.
pub fn param_digest<P: ParamSet>(params: &P) -> String {
    let mut h = Sha256::new();
    for v in params.flatten() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub watersheds: Vec<WatershedDataset>,
}

/// One dataset per watershed, ordered by id.
pub fn split_by_watershed(corpus: Corpus) -> Result<Vec<WatershedDataset>> {
    if corpus.watersheds.is_empty() {
        return Err(Error::InvalidArgument("corpus has no watersheds".into()));
    }
    let mut out = corpus.watersheds;
    out.sort_by(|a, b| a.watershed_id.cmp(&b.watershed_id));
    for w in out.windows(2) {
        if w[0].watershed_id == w[1].watershed_id {
            return Err(Error::InvalidArgument(format!("duplicate watershed id '{}'", w[0].watershed_id)));
        }
    }
    for ds in &out {
        ds.validate()?;
    }
    Ok(out)
}

/// Everything needed to train one watershed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
}

impl Default for JobSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub watershed_id: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub dataset: Arc<WatershedDataset>,
}

/// One job per watershed with identical architecture and per-watershed seeds
/// (used for both parameter initialization and shuffling).
pub fn replicate_models(settings: &JobSettings, datasets: &[Arc<WatershedDataset>], global_seed: u64) -> Result<Vec<Job>> {
    settings.model.validate()?;
    settings.train.validate()?;
    let mut jobs: Vec<Job> = datasets
        .iter()
        .map(|ds| {
            let seed = derive_seed(global_seed, &ds.watershed_id);
            Job {
                watershed_id: ds.watershed_id.clone(),
                seed,
                model: settings.model.clone().with_seed(seed),
                train: TrainConfig {
                    shuffle_seed: seed,
                    ..settings.train.clone()
                },
                train_fraction: settings.train_fraction,
                dataset: Arc::clone(ds),
            }
        })
        .collect();
    jobs.sort_by(|a, b| a.watershed_id.cmp(&b.watershed_id));
    if let Some(w) = jobs.windows(2).find(|w| w[0].watershed_id == w[1].watershed_id) {
        return Err(Error::InvalidArgument(format!("duplicate watershed id '{}'", w[0].watershed_id)));
    }
    Ok(jobs)
}

/// Windowed, scaled train/test samples for one watershed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub scaler: Scaler,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn prepare_samples(dataset: &WatershedDataset, lookback: usize, train_fraction: f64) -> Result<PreparedData> {
    let samples = window_samples(dataset, lookback)?;
    let (train, test) = chrono_split(&samples, train_fraction)?;
    let scaler = Scaler::fit(&train);
    Ok(PreparedData {
        train: scaler.transform_all(&train),
        test: scaler.transform_all(&test),
        scaler,
    })
}

/// Discharge predictions in physical units.
pub fn predict_discharge(model: &DomStModel, scaler: &Scaler, samples: &[Sample]) -> Result<Vec<f64>> {
    Ok(predict_series(model, samples)?.into_iter().map(|z| scaler.unscale_target(z)).collect())
}

/// NSE in physical units over scaled samples.
pub fn evaluate_nse(model: &DomStModel, scaler: &Scaler, samples: &[Sample]) -> Result<f64> {
    let sim = predict_discharge(model, scaler, samples)?;
    let obs: Vec<f64> = samples.iter().map(|s| scaler.unscale_target(s.y)).collect();
    Ok(nse(&sim, &obs)?.nse)
}

#[derive(Debug, Clone)]
pub struct TrainedWatershed {
    pub outcome: TrainOutcome,
    pub scaler: Scaler,
    pub nse_train: f64,
    pub nse_test: f64,
    pub setup_secs: f64,
}

/// Window, split, scale, build, train and evaluate one watershed.
pub fn train_watershed(dataset: &WatershedDataset, model: &ModelConfig, train_cfg: &TrainConfig, train_fraction: f64) -> Result<TrainedWatershed> {
    let setup = Instant::now();
    let data = prepare_samples(dataset, model.lookback, train_fraction)?;
    let initial = build_model(model, &dataset.pixels)?;
    let setup_secs = setup.elapsed().as_secs_f64();
    let outcome = train(initial, &data.train, train_cfg)?;
    let nse_train = evaluate_nse(&outcome.model, &data.scaler, &data.train)?;
    let nse_test = evaluate_nse(&outcome.model, &data.scaler, &data.test)?;
    Ok(TrainedWatershed {
        outcome,
        scaler: data.scaler,
        nse_train,
        nse_test,
        setup_secs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "S")]
    Sequential,
    #[serde(rename = "IP-D")]
    Pool,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "S",
            Mode::Pool => "IP-D",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "sequential" => Ok(Mode::Sequential),
            "ip-d" | "ipd" | "pool" => Ok(Mode::Pool),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{s}' (expected S or IP-D)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobResult {
    pub watershed_id: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub epochs: usize,
    pub nse_train: Option<f64>,
    pub nse_test: Option<f64>,
    pub final_loss: Option<f64>,
    pub param_digest: Option<String>,
    pub setup_secs: f64,
    pub train_secs: f64,
    pub wall_secs: f64,
    #[serde(skip)]
    pub model: Option<DomStModel>,
    #[serde(skip)]
    pub scaler: Option<Scaler>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: Mode,
    pub pool_size: usize,
    pub jobs: Vec<JobResult>,
    pub total_wall_secs: f64,
}

impl PipelineReport {
    pub fn failures(&self) -> impl Iterator<Item = &JobResult> {
        self.jobs.iter().filter(|j| !j.ok)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mode {}  pool {}  wall {:.2}s\n", self.mode, self.pool_size, self.total_wall_secs);
        out.push_str(&format!("{:<12}{:>10}{:>10}{:>10}  {}\n", "watershed", "NSE train", "NSE test", "time", "status"));
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for j in &self.jobs {
            out.push_str(&format!(
                "{:<12}{:>10}{:>10}{:>9.2}s  {}\n",
                j.watershed_id,
                num(j.nse_train),
                num(j.nse_test),
                j.wall_secs,
                j.error.as_deref().unwrap_or("ok")
            ));
        }
        out
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "job panicked".into())
}

fn run_job(job: &Job) -> JobResult {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| train_watershed(&job.dataset, &job.model, &job.train, job.train_fraction)))
        .unwrap_or_else(|p| Err(Error::WorkerFailed {
            worker: job.watershed_id.clone(),
            message: panic_message(p.as_ref()),
        }));
    let wall_secs = start.elapsed().as_secs_f64();
    let mut r = JobResult {
        watershed_id: job.watershed_id.clone(),
        seed: job.seed,
        ok: false,
        error: None,
        epochs: 0,
        nse_train: None,
        nse_test: None,
        final_loss: None,
        param_digest: None,
        setup_secs: 0.0,
        train_secs: 0.0,
        wall_secs,
        model: None,
        scaler: None,
    };
    match outcome {
        Ok(t) => {
            r.ok = true;
            r.epochs = t.outcome.epoch_losses.len();
            r.nse_train = Some(t.nse_train);
            r.nse_test = Some(t.nse_test);
            r.final_loss = t.outcome.epoch_losses.last().copied();
            r.param_digest = Some(param_digest(&t.outcome.model));
            r.setup_secs = t.setup_secs;
            r.train_secs = t.outcome.timing.total_secs;
            r.model = Some(t.outcome.model);
            r.scaler = Some(t.scaler);
        }
        Err(e) => r.error = Some(e.to_string()),
    }
    r
}

/// Runs every job. A failed job is recorded and the rest still run.
pub fn run_jobs(jobs: &[Job], mode: Mode, pool_size: usize) -> Result<PipelineReport> {
    if pool_size < 1 {
        return Err(Error::InvalidArgument("pool size must be at least 1".into()));
    }
    let mut ordered: Vec<&Job> = jobs.iter().collect();
    ordered.sort_by(|a, b| a.watershed_id.cmp(&b.watershed_id));
    let start = Instant::now();
    let results = match mode {
        Mode::Sequential => ordered.iter().map(|j| run_job(j)).collect(),
        Mode::Pool => {
            let next = AtomicUsize::new(0);
            let mut slots: Vec<Option<JobResult>> = vec![None; ordered.len()];
            let finished: Vec<Vec<(usize, JobResult)>> = thread::scope(|scope| {
                let handles: Vec<_> = (0..pool_size.min(ordered.len().max(1)))
                    .map(|_| {
                        scope.spawn(|| {
                            let mut done = Vec::new();
                            loop {
                                let i = next.fetch_add(1, Ordering::Relaxed);
                                let Some(job) = ordered.get(i) else { break };
                                done.push((i, run_job(job)));
                            }
                            done
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("job panics are caught inside run_job")).collect()
            });
            for (i, r) in finished.into_iter().flatten() {
                slots[i] = Some(r);
            }
            slots.into_iter().map(|r| r.expect("every queued job ran")).collect()
        }
    };
    Ok(PipelineReport {
        mode,
        pool_size: if mode == Mode::Sequential { 1 } else { pool_size },
        jobs: results,
        total_wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// `time_s / time_ipd` rounded to one decimal.
pub fn speedup(time_s: f64, time_ipd: f64) -> Result<f64> {
    if !(time_s > 0.0 && time_ipd > 0.0 && time_s.is_finite() && time_ipd.is_finite()) {
        return Err(Error::InvalidArgument(format!("speedup needs positive times, got {time_s} and {time_ipd}")));
    }
    Ok((time_s / time_ipd * 10.0).round() / 10.0)
}
