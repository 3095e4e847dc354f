//! Data-parallel training with a parameter server.
//!
//! One parameter server holds the parameters and optimizer state. Workers
//! pull parameters, compute gradients on their shard and push them back. The
//! master runs the session hooks on every applied update and may stop the run.
//! All traffic is [`WireMessage`]s over a [`Transport`].

mod master;
mod ps;
mod server;
mod transport;
mod wire;
mod worker;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

pub use master::run_master;
pub use ps::{average, gradient_message, AppliedUpdate, ParamServerState, SyncMode};
pub use server::{run_parameter_server, ServerOutcome};
pub use transport::{
    inproc_pair, Connection, Inbox, InProcTransport, Listener, MessageSink, TcpTransport, Transport,
};
pub use wire::{
    decode_header, decode_message, encode_message, Control, GradientMessage, WireMessage, FRAME_HEADER_LEN,
    MAX_PAYLOAD_LEN, WIRE_MAGIC, WIRE_VERSION,
};
pub use worker::{run_worker, worker_step, WorkerConfig};

use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{train_step_output, Estimator};
use crate::hooks::SessionRunHook;
use crate::run_config::ClusterConfig;

pub const DEFAULT_PATIENCE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerReport {
    pub worker_id: u32,
    /// Gradient messages the server received from this worker.
    pub steps: u64,
    /// Updates this worker's gradients contributed to.
    pub applied: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistributedReport {
    /// `None` when the run fell back to local training.
    pub mode: Option<SyncMode>,
    pub local_fallback: bool,
    pub workers: Vec<WorkerReport>,
    pub applied_updates: u64,
    pub stale_rejections: u64,
    pub final_global_step: u64,
    pub stopped_by_master: bool,
    /// Loss of every applied update, in order.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistributedOptions {
    pub mode: SyncMode,
    pub transport: TransportKind,
    /// How long any task waits for a peer before failing.
    pub patience: Duration,
    /// `None` means each worker uses its whole shard per step.
    pub batch_size: Option<usize>,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        DistributedOptions {
            mode: SyncMode::Sync,
            transport: TransportKind::InProcess,
            patience: DEFAULT_PATIENCE,
            batch_size: None,
        }
    }
}

/// Per-worker step budgets for async mode: `steps` split as evenly as possible.
pub fn async_quotas(steps: u64, workers: usize) -> Vec<u64> {
    let w = workers as u64;
    (0..w).map(|i| steps / w + u64::from(i < steps % w)).collect()
}

/// Trains `estimator` for `steps` more global steps on the cluster, running every
/// task of the cluster in this process. `shards[i]` feeds the i-th worker.
///
/// A cluster without workers trains locally on the single shard.
pub fn run_distributed_training(
    cluster: &ClusterConfig,
    estimator: &mut Estimator,
    shards: &[Dataset],
    steps: u64,
    options: DistributedOptions,
    hooks: &mut [Box<dyn SessionRunHook>],
) -> Result<DistributedReport> {
    cluster.validate()?;
    if steps == 0 {
        return Err(Error::validation("steps must be at least 1"));
    }
    let worker_tasks = cluster.workers();
    if worker_tasks.is_empty() {
        let [data] = shards else {
            return Err(Error::validation(format!(
                "a cluster without workers trains on one dataset, got {} shards",
                shards.len()
            )));
        };
        let fit = estimator.fit(data, steps, hooks)?;
        return Ok(DistributedReport {
            mode: None,
            local_fallback: true,
            workers: Vec::new(),
            applied_updates: fit.steps_run,
            stale_rejections: 0,
            final_global_step: fit.global_step,
            stopped_by_master: fit.stopped_early,
            losses: fit.losses,
        });
    }
    if shards.len() != worker_tasks.len() {
        return Err(Error::validation(format!(
            "{} shards for {} workers",
            shards.len(),
            worker_tasks.len()
        )));
    }
    for shard in shards {
        if shard.is_empty() {
            return Err(Error::validation("every worker shard needs at least one row"));
        }
        estimator.prepare_for(shard)?;
    }
    let ps_task = cluster
        .parameter_servers()
        .first()
        .copied()
        .ok_or_else(|| Error::validation("distributed training needs a parameter server"))?;

    let model_fn = estimator.model_fn();
    let seed = estimator.config().random_seed;
    let start = estimator.global_step();
    let params = estimator
        .params()
        .cloned()
        .ok_or_else(|| Error::Internal("estimator not prepared".into()))?;
    let probe_bs = options.batch_size.unwrap_or(shards[0].len());
    let probe = BatchIterator::new(shards[0].clone(), probe_bs, false, seed)?.batch_at(start);
    let (_, op) = train_step_output(&*model_fn, &probe, &params, seed, start)?;
    let state = ParamServerState::new(params, op.optimizer, start, options.mode, worker_tasks.len())?
        .with_slots(&estimator.optimizer_slots());

    let transport: Arc<dyn Transport> = match options.transport {
        TransportKind::InProcess => Arc::new(InProcTransport::new()),
        TransportKind::Tcp => Arc::new(TcpTransport),
    };
    let mut listener = transport.listen(&ps_task.address)?;
    let address = listener.local_address();
    let quotas = match options.mode {
        SyncMode::Sync => vec![None; worker_tasks.len()],
        SyncMode::Async => async_quotas(steps, worker_tasks.len()).into_iter().map(Some).collect(),
    };
    let patience = options.patience;
    let initial = estimator.checkpoint();

    let (server, workers, master) = thread::scope(|s| {
        let server = s.spawn(|| run_parameter_server(&mut *listener, state, start + steps, patience));
        let workers: Vec<_> = worker_tasks
            .iter()
            .zip(shards)
            .zip(&quotas)
            .map(|((task, shard), &quota)| {
                let transport = Arc::clone(&transport);
                let model_fn = Arc::clone(&model_fn);
                let address = address.clone();
                let cfg = WorkerConfig {
                    worker_id: task.index,
                    seed,
                    quota,
                    batch_size: options.batch_size,
                    patience: patience.saturating_mul(4),
                };
                s.spawn(move || {
                    let conn = transport.dial(&address, patience)?;
                    run_worker(conn, &*model_fn, shard, &cfg)
                })
            })
            .collect();
        let master = transport
            .dial(&address, patience)
            .and_then(|conn| run_master(conn, initial, hooks, patience.saturating_mul(4)));
        let server = server.join().unwrap_or_else(|_| Err(Error::Internal("server panicked".into())));
        let workers: Vec<Result<u64>> = workers
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("worker panicked".into()))))
            .collect();
        (server, workers, master)
    });

    let outcome = server?;
    master?;
    for w in workers {
        w?;
    }
    let ServerOutcome { state, report } = outcome;
    estimator.install(state.params().clone(), state.slots(), state.global_step())?;
    if let Some(dir) = estimator.config().model_dir.clone() {
        estimator.save_checkpoint_in(dir)?;
    }
    Ok(report)
}
