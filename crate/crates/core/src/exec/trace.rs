use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DomStModel;
use crate::numerics::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerId {
    Head(usize),
    #[default]
    Temporal,
}

impl std::fmt::Display for WorkerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Head(h) => write!(f, "head{h}"),
            Self::Temporal => f.write_str("temporal"),
        }
    }
}

/// Messages and payload bytes carried by one directed edge during a step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeTraffic {
    pub from: WorkerId,
    pub to: WorkerId,
    pub messages: usize,
    pub bytes: usize,
}

impl EdgeTraffic {
    pub(crate) fn record(&mut self, t: &Tensor) {
        self.messages += 1;
        self.bytes += t.len() * std::mem::size_of::<f64>();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub head_busy_secs: Vec<f64>,
    pub temporal_busy_secs: f64,
    pub edges: Vec<EdgeTraffic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub mean_head_busy_secs: Vec<f64>,
    pub max_head_busy_secs: Vec<f64>,
    pub mean_temporal_busy_secs: f64,
    pub max_temporal_busy_secs: f64,
    pub total_messages: usize,
    pub total_bytes: usize,
    /// Slowest over fastest total head busy time.
    pub head_imbalance: f64,
}

pub fn trace_summary(traces: &[StepTrace]) -> Result<TraceSummary> {
    let first = traces.first().ok_or_else(|| Error::InvalidArgument("no traces to summarize".into()))?;
    let h = first.head_busy_secs.len();
    let n = traces.len() as f64;
    let mut total = vec![0.0; h];
    let mut max = vec![0.0f64; h];
    let (mut t_total, mut t_max) = (0.0, 0.0f64);
    let (mut messages, mut bytes) = (0, 0);
    for t in traces {
        if t.head_busy_secs.len() != h {
            return Err(Error::shape("trace head count", &[h], &[t.head_busy_secs.len()]));
        }
        for i in 0..h {
            total[i] += t.head_busy_secs[i];
            max[i] = max[i].max(t.head_busy_secs[i]);
        }
        t_total += t.temporal_busy_secs;
        t_max = t_max.max(t.temporal_busy_secs);
        for e in &t.edges {
            messages += e.messages;
            bytes += e.bytes;
        }
    }
    let slowest = total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fastest = total.iter().copied().fold(f64::INFINITY, f64::min);
    let head_imbalance = if h == 0 {
        1.0
    } else if fastest > 0.0 {
        slowest / fastest
    } else if slowest == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(TraceSummary {
        steps: traces.len(),
        mean_head_busy_secs: total.iter().map(|t| t / n).collect(),
        max_head_busy_secs: max,
        mean_temporal_busy_secs: t_total / n,
        max_temporal_busy_secs: t_max,
        total_messages: messages,
        total_bytes: bytes,
        head_imbalance,
    })
}

/// One JSON object per line.
pub fn write_traces_jsonl(traces: &[StepTrace], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerShard {
    pub worker: WorkerId,
    pub pixels: Vec<usize>,
    pub tensors: usize,
    pub params: usize,
}

/// Workers, their parameter shards, and the directed message edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceGraph {
    pub workers: Vec<WorkerShard>,
    pub edges: Vec<(WorkerId, WorkerId)>,
}

impl DeviceGraph {
    pub fn from_model(model: &DomStModel) -> Self {
        let mut workers: Vec<WorkerShard> = model
            .heads
            .iter()
            .zip(&model.partition.heads)
            .enumerate()
            .map(|(h, (params, pixels))| WorkerShard {
                worker: WorkerId::Head(h),
                pixels: pixels.clone(),
                tensors: params.tensors().len(),
                params: params.num_params(),
            })
            .collect();
        workers.push(WorkerShard {
            worker: WorkerId::Temporal,
            pixels: Vec::new(),
            tensors: model.temporal.tensors().len(),
            params: model.temporal.num_params(),
        });
        let edges = (0..model.heads.len())
            .flat_map(|h| [(WorkerId::Head(h), WorkerId::Temporal), (WorkerId::Temporal, WorkerId::Head(h))])
            .collect();
        Self { workers, edges }
    }

    /// Every tensor owned by exactly one worker, pixels covered exactly once,
    /// and exactly one link per direction between each head and the temporal worker.
    pub fn validate(&self, model: &DomStModel) -> Result<()> {
        let tensors: usize = self.workers.iter().map(|w| w.tensors).sum();
        let params: usize = self.workers.iter().map(|w| w.params).sum();
        if tensors != model.tensors().len() || params != model.num_params() {
            return Err(Error::Config("device graph does not own every parameter exactly once".into()));
        }
        let mut seen = vec![false; model.num_pixels()];
        for p in self.workers.iter().flat_map(|w| &w.pixels) {
            if std::mem::replace(seen.get_mut(*p).ok_or_else(|| Error::Config(format!("pixel {p} out of range")))?, true) {
                return Err(Error::Config(format!("pixel {p} owned twice")));
            }
        }
        if seen.contains(&false) {
            return Err(Error::Config("some pixel has no owner".into()));
        }
        let h = model.heads.len();
        let mut edges = self.edges.clone();
        edges.sort();
        edges.dedup();
        let ok = edges.len() == 2 * h
            && (0..h).all(|i| edges.contains(&(WorkerId::Head(i), WorkerId::Temporal)) && edges.contains(&(WorkerId::Temporal, WorkerId::Head(i))));
        if !ok || self.edges.len() != 2 * h {
            return Err(Error::Config("device graph edges are not one link each way per head".into()));
        }
        Ok(())
    }
}
