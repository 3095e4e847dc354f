use std::time::Duration;

use crate::data::{Batch, BatchIterator, Dataset};
use crate::distributed::transport::Connection;
use crate::distributed::wire::{Control, GradientMessage, WireMessage};
use crate::error::{DistributedErrorCode, Error, Result};
use crate::estimator::{train_step_output, ModelFn};
use crate::numerics::NamedTensors;
use crate::run_config::TaskRole;

/// Forward and backward pass on `batch` against a parameter snapshot.
pub fn worker_step(
    model_fn: &dyn ModelFn,
    worker_id: u32,
    batch: &Batch,
    params: &NamedTensors,
    seed: u64,
    basis_step: u64,
) -> Result<GradientMessage> {
    let (loss, op) = train_step_output(model_fn, batch, params, seed, basis_step)?;
    Ok(GradientMessage {
        worker_id,
        basis_step,
        loss,
        gradients: op.gradients,
    })
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: u32,
    pub seed: u64,
    /// Leave after this many gradients (async budget). `None` runs until stopped.
    pub quota: Option<u64>,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    /// How long to wait for the server before giving up.
    pub patience: Duration,
}

/// Pull, compute, push until the server says stop. Returns the number of gradients sent.
pub fn run_worker(mut conn: Connection, model_fn: &dyn ModelFn, shard: &Dataset, cfg: &WorkerConfig) -> Result<u64> {
    let bs = cfg.batch_size.unwrap_or(shard.len());
    let mut batches = BatchIterator::new(shard.clone(), bs, false, cfg.seed)?;
    conn.send(&WireMessage::Control(Control::Hello {
        role: TaskRole::Worker,
        id: cfg.worker_id,
    }))?;
    conn.send(&WireMessage::Control(Control::Pull))?;
    let mut sent = 0u64;
    loop {
        match conn.recv(cfg.patience)? {
            WireMessage::Params { global_step, params } => {
                if cfg.quota.is_some_and(|q| sent >= q) {
                    conn.send(&WireMessage::Control(Control::Done))?;
                    return Ok(sent);
                }
                let batch = batches.batch_at(global_step);
                match worker_step(model_fn, cfg.worker_id, &batch, &params, cfg.seed, global_step) {
                    Ok(g) => {
                        conn.send(&WireMessage::Gradient(g))?;
                        sent += 1;
                    }
                    Err(e) => {
                        let message = format!("worker {}: {e}", cfg.worker_id);
                        let _ = conn.send(&WireMessage::Control(Control::Error {
                            code: DistributedErrorCode::Worker,
                            message,
                        }));
                        return Err(e);
                    }
                }
            }
            WireMessage::Control(Control::Stale { .. }) => conn.send(&WireMessage::Control(Control::Pull))?,
            WireMessage::Control(Control::Stop) => return Ok(sent),
            WireMessage::Control(Control::Error { message, .. }) => {
                return Err(Error::Transport(format!("server failed: {message}")))
            }
            other => {
                return Err(Error::Transport(format!(
                    "worker {} got unexpected message {other:?}",
                    cfg.worker_id
                )))
            }
        }
    }
}
