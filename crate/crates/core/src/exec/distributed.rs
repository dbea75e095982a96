use std::any::Any;
use std::collections::VecDeque;
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Instant;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{head_backward, head_forward, target_input, temporal_backward, temporal_forward, DomStModel, HeadCache, HeadParams};
use crate::numerics::{accumulate, mse_loss, scale_params, AdamState, Tensor};
use crate::pixcon::plan_rebalance;

use super::trace::{DeviceGraph, EdgeTraffic, StepTrace, WorkerId};
use super::{check_inputs, check_loss, OptimizerState, Shuffler, Timing, TrainConfig, TrainOutcome};

enum ToHead {
    Forward(usize),
    Backward(Tensor),
    Update(f64),
}

enum ToController {
    Activation(usize, Tensor),
    Updated { head: usize, busy_secs: f64 },
    Failed { head: usize, message: String },
}

/// Everything one spatial worker owns for the duration of an epoch.
struct HeadShard {
    head: usize,
    params: HeadParams,
    opt: AdamState,
    /// this head's pixel rows of every sample
    inputs: Vec<Tensor>,
}

impl HeadShard {
    fn run(&mut self, rx: Receiver<ToHead>, tx: Sender<ToController>) {
        let mut pending: VecDeque<HeadCache> = VecDeque::new();
        let mut sum: Option<HeadParams> = None;
        let mut busy = 0.0;
        while let Ok(msg) = rx.recv() {
            let t0 = Instant::now();
            let reply = match self.handle(msg, &mut pending, &mut sum) {
                Ok(Some(ToController::Updated { head, .. })) => {
                    busy += t0.elapsed().as_secs_f64();
                    let r = ToController::Updated { head, busy_secs: busy };
                    busy = 0.0;
                    Some(r)
                }
                Ok(r) => {
                    busy += t0.elapsed().as_secs_f64();
                    r
                }
                Err(e) => Some(ToController::Failed {
                    head: self.head,
                    message: e.to_string(),
                }),
            };
            let failed = matches!(reply, Some(ToController::Failed { .. }));
            if let Some(r) = reply {
                if tx.send(r).is_err() || failed {
                    return;
                }
            }
        }
    }

    fn handle(&mut self, msg: ToHead, pending: &mut VecDeque<HeadCache>, sum: &mut Option<HeadParams>) -> Result<Option<ToController>> {
        match msg {
            ToHead::Forward(i) => {
                let input = self.inputs.get(i).ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range")))?;
                let (out, cache) = head_forward(&self.params, input)?;
                pending.push_back(cache);
                Ok(Some(ToController::Activation(self.head, out)))
            }
            ToHead::Backward(grad) => {
                let cache = pending.pop_front().ok_or_else(|| Error::Config("gradient without a pending forward".into()))?;
                let g = head_backward(&self.params, &cache, &grad)?;
                match sum.as_mut() {
                    Some(acc) => accumulate(acc, &g)?,
                    None => *sum = Some(g),
                }
                Ok(None)
            }
            ToHead::Update(scale) => {
                let mut g = sum.take().ok_or_else(|| Error::Config("update without gradients".into()))?;
                scale_params(&mut g, scale);
                self.opt.step(&mut self.params, &g)?;
                Ok(Some(ToController::Updated {
                    head: self.head,
                    busy_secs: 0.0,
                }))
            }
        }
    }
}

struct EpochResult {
    loss_sum: f64,
    traces: Vec<StepTrace>,
}

fn worker_failed(head: usize, message: impl Into<String>) -> Error {
    Error::WorkerFailed {
        worker: WorkerId::Head(head).to_string(),
        message: message.into(),
    }
}

const CHANNEL_CLOSED: &str = "unknown";

fn panic_message(payload: &(dyn Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

fn recv(rx: &Receiver<ToController>) -> Result<ToController> {
    match rx.recv() {
        Ok(ToController::Failed { head, message }) => Err(worker_failed(head, message)),
        Ok(m) => Ok(m),
        // every head hung up; the join below reports which one
        Err(_) => Err(Error::WorkerFailed {
            worker: CHANNEL_CLOSED.into(),
            message: "worker channel closed".into(),
        }),
    }
}

/// Temporal-worker side of one epoch. Returns the epoch loss and traces.
#[allow(clippy::too_many_arguments)]
fn drive_epoch(
    model: &mut DomStModel,
    opt: &mut AdamState,
    samples: &[Sample],
    order: &[usize],
    config: &TrainConfig,
    epoch: usize,
    first_step: usize,
    to_heads: &[Sender<ToHead>],
    from_heads: &Receiver<ToController>,
) -> Result<EpochResult> {
    let h = to_heads.len();
    let mut loss_sum = 0.0;
    let mut traces = Vec::new();
    let send = |head: usize, msg: ToHead| to_heads[head].send(msg).map_err(|_| worker_failed(head, "worker stopped"));

    for (b, batch) in order.chunks(config.batch_size).enumerate() {
        let step = first_step + b;
        let mut temporal_busy = 0.0;
        let mut act = vec![EdgeTraffic::default(); h];
        let mut grad = vec![EdgeTraffic::default(); h];
        let mut batch_loss = 0.0;
        let mut sum = None;
        for &i in batch {
            for head in 0..h {
                send(head, ToHead::Forward(i))?;
            }
            let mut outs: Vec<Option<Tensor>> = vec![None; h];
            for _ in 0..h {
                match recv(from_heads)? {
                    ToController::Activation(head, t) => {
                        act[head].record(&t);
                        outs[head] = Some(t);
                    }
                    _ => return Err(Error::Config("unexpected worker message during forward".into())),
                }
            }
            let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("one activation per head")).collect();

            let t0 = Instant::now();
            let s = &samples[i];
            let (y, cache) = temporal_forward(&model.temporal, &outs, target_input(model, s))?;
            let (loss, g) = mse_loss(&[y], &[s.y])?;
            batch_loss += loss;
            let (tg, head_grads) = temporal_backward(&model.temporal, &cache, g[0])?;
            match sum.as_mut() {
                Some(acc) => accumulate(acc, &tg)?,
                None => sum = Some(tg),
            }
            temporal_busy += t0.elapsed().as_secs_f64();

            for (head, g) in head_grads.into_iter().enumerate() {
                grad[head].record(&g);
                send(head, ToHead::Backward(g))?;
            }
        }
        let step_loss = batch_loss / batch.len() as f64;
        check_loss(step_loss, step)?;
        let scale = 1.0 / batch.len() as f64;
        for head in 0..h {
            send(head, ToHead::Update(scale))?;
        }
        let t0 = Instant::now();
        let mut tg = sum.expect("batches are non-empty");
        scale_params(&mut tg, scale);
        opt.step(&mut model.temporal, &tg)?;
        temporal_busy += t0.elapsed().as_secs_f64();

        let mut head_busy = vec![0.0; h];
        for _ in 0..h {
            match recv(from_heads)? {
                ToController::Updated { head, busy_secs } => head_busy[head] = busy_secs,
                _ => return Err(Error::Config("unexpected worker message during update".into())),
            }
        }
        loss_sum += batch_loss;
        let mut edges = Vec::with_capacity(2 * h);
        for (head, (a, g)) in act.into_iter().zip(grad).enumerate() {
            edges.push(EdgeTraffic {
                from: WorkerId::Head(head),
                to: WorkerId::Temporal,
                ..a
            });
            edges.push(EdgeTraffic {
                from: WorkerId::Temporal,
                to: WorkerId::Head(head),
                ..g
            });
        }
        traces.push(StepTrace {
            step,
            epoch,
            loss: step_loss,
            head_busy_secs: head_busy,
            temporal_busy_secs: temporal_busy,
            edges,
        });
    }
    Ok(EpochResult { loss_sum, traces })
}

/// Trains with one worker thread per head; the calling thread acts as the
/// temporal worker and coordinator.
pub fn run_distributed(mut model: DomStModel, samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    check_inputs(&model, samples, config)?;
    let h = model.heads.len();
    if config.workers != 0 && config.workers != h {
        return Err(Error::Config(format!("distributed executor needs one worker per head ({h}), got {}", config.workers)));
    }
    for s in samples {
        s.x.expect_shape("sample x", &[model.num_pixels(), model.config.lookback])?;
    }
    let start = Instant::now();
    let opt = OptimizerState::new(config.adam, &model);
    let mut head_opts = opt.heads;
    let mut temporal_opt = opt.temporal;
    let mut shuffler = Shuffler::new(config.shuffle_seed, samples.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_secs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut traces: Vec<StepTrace> = Vec::new();
    let mut rebalances = Vec::new();

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let graph = DeviceGraph::from_model(&model);
        debug_assert!(graph.validate(&model).is_ok(), "parameter ownership is not a partition");

        let mut shards: Vec<HeadShard> = model
            .heads
            .iter()
            .zip(head_opts.drain(..))
            .enumerate()
            .map(|(head, (params, opt))| HeadShard {
                head,
                params: params.clone(),
                opt,
                inputs: samples.iter().map(|s| model.head_input(head, &s.x)).collect(),
            })
            .collect();
        let order = shuffler.next_epoch().to_vec();

        let (result, returned) = thread::scope(|scope| {
            let (to_ctrl, from_heads) = channel();
            let mut to_heads = Vec::with_capacity(h);
            let mut handles = Vec::with_capacity(h);
            for mut shard in shards.drain(..) {
                let (tx, rx) = channel();
                to_heads.push(tx);
                let to_ctrl = to_ctrl.clone();
                handles.push(scope.spawn(move || {
                    let head = shard.head;
                    let outcome = panic::catch_unwind(AssertUnwindSafe(|| shard.run(rx, to_ctrl.clone())));
                    if let Err(payload) = outcome {
                        let _ = to_ctrl.send(ToController::Failed {
                            head,
                            message: panic_message(payload.as_ref()),
                        });
                    }
                    shard
                }));
            }
            drop(to_ctrl);
            let result = drive_epoch(
                &mut model,
                &mut temporal_opt,
                samples,
                &order,
                config,
                epoch,
                step_losses.len(),
                &to_heads,
                &from_heads,
            );
            drop(to_heads);
            let mut returned = Vec::with_capacity(h);
            let mut join_err = None;
            for (head, handle) in handles.into_iter().enumerate() {
                match handle.join() {
                    Ok(shard) => returned.push(shard),
                    Err(payload) => {
                        join_err.get_or_insert(worker_failed(head, panic_message(payload.as_ref())));
                    }
                }
            }
            let result = match (result, join_err) {
                (Err(Error::WorkerFailed { worker, .. }), Some(e)) if worker == CHANNEL_CLOSED => Err(e),
                (Ok(_), Some(e)) => Err(e),
                (r, _) => r,
            };
            (result, returned)
        });
        let result = result?;

        for shard in returned {
            model.heads[shard.head] = shard.params;
            head_opts.push(shard.opt);
        }
        step_losses.extend(result.traces.iter().map(|t| t.loss));
        epoch_losses.push(result.loss_sum / samples.len() as f64);

        if config.rebalance && h > 1 && epoch + 1 < config.epochs {
            let mut per_head = vec![0.0; h];
            for t in &result.traces {
                for (acc, b) in per_head.iter_mut().zip(&t.head_busy_secs) {
                    *acc += b;
                }
            }
            if per_head.iter().all(|&t| t > 0.0) {
                if let Some(mv) = plan_rebalance(&model.partition, &per_head)? {
                    model.migrate_pixel(mv, Some(&mut head_opts))?;
                    rebalances.push(mv);
                }
            }
        }
        traces.extend(result.traces);
        epoch_secs.push(epoch_start.elapsed().as_secs_f64());
    }

    Ok(TrainOutcome {
        model,
        optimizer: OptimizerState {
            heads: head_opts,
            temporal: temporal_opt,
        },
        epoch_losses,
        step_losses,
        timing: Timing {
            total_secs: start.elapsed().as_secs_f64(),
            epoch_secs,
        },
        traces,
        rebalances,
    })
}
