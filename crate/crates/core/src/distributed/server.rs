use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use crate::distributed::ps::{ParamServerState, SyncMode};
use crate::distributed::transport::{Connection, Inbox, Listener, MessageSink};
use crate::distributed::wire::{Control, WireMessage};
use crate::distributed::{DistributedReport, WorkerReport};
use crate::error::{DistributedErrorCode, Error, Result};
use crate::numerics::NamedTensors;
use crate::run_config::TaskRole;

/// Final server state after a clean shutdown.
#[derive(Debug)]
pub struct ServerOutcome {
    pub state: ParamServerState,
    pub report: DistributedReport,
}

struct Failure {
    code: DistributedErrorCode,
    message: String,
}

fn fail(code: DistributedErrorCode, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn forward(id: u32, inbox: Inbox, tx: Sender<(u32, Result<WireMessage>)>) {
    thread::spawn(move || {
        while let Ok(item) = inbox.recv() {
            if tx.send((id, item)).is_err() {
                break;
            }
        }
    });
}

fn full_state(state: &ParamServerState) -> NamedTensors {
    let mut t = state.params().clone();
    t.extend(state.slots());
    t
}

struct Server {
    state: ParamServerState,
    target_step: u64,
    patience: Duration,
    master: Connection,
    workers: BTreeMap<u32, Box<dyn MessageSink>>,
    finished: BTreeSet<u32>,
    stopping: bool,
    report: DistributedReport,
}

impl Server {
    fn send(&mut self, id: u32, msg: &WireMessage) -> Result<(), Failure> {
        let sink = self
            .workers
            .get_mut(&id)
            .ok_or_else(|| fail(DistributedErrorCode::Protocol, format!("unknown worker {id}")))?;
        sink.send(msg)
            .map_err(|e| fail(DistributedErrorCode::Transport, format!("worker {id}: {e}")))
    }

    fn stop_worker(&mut self, id: u32) -> Result<(), Failure> {
        if self.finished.insert(id) {
            self.send(id, &WireMessage::Control(Control::Stop))?;
        }
        Ok(())
    }

    fn worker_report(&mut self, id: u32) -> &mut WorkerReport {
        let pos = self.report.workers.iter().position(|w| w.worker_id == id).unwrap_or_else(|| {
            self.report.workers.push(WorkerReport {
                worker_id: id,
                ..WorkerReport::default()
            });
            self.report.workers.len() - 1
        });
        &mut self.report.workers[pos]
    }

    fn sync_report(&mut self) {
        self.report.applied_updates = self.state.applied_updates();
        self.report.final_global_step = self.state.global_step();
    }

    /// Tells the master about an update and waits for its go-ahead.
    fn consult_master(&mut self, global_step: u64, loss: f64) -> Result<(), Failure> {
        let params = WireMessage::Params {
            global_step,
            params: full_state(&self.state),
        };
        let applied = WireMessage::Control(Control::Applied { global_step, loss });
        self.master
            .send(&params)
            .and_then(|_| self.master.send(&applied))
            .map_err(|e| fail(DistributedErrorCode::Transport, format!("master: {e}")))?;
        match self.master.recv(self.patience) {
            Ok(WireMessage::Control(Control::Continue)) => Ok(()),
            Ok(WireMessage::Control(Control::Stop)) => {
                self.stopping = true;
                self.report.stopped_by_master = true;
                Ok(())
            }
            Ok(other) => Err(fail(
                DistributedErrorCode::Protocol,
                format!("master sent {other:?} instead of continue/stop"),
            )),
            Err(e) => Err(fail(DistributedErrorCode::Transport, format!("master: {e}"))),
        }
    }

    fn handle(&mut self, id: u32, msg: WireMessage) -> Result<(), Failure> {
        if self.finished.contains(&id) {
            return Ok(());
        }
        match msg {
            WireMessage::Control(Control::Pull) => {
                if self.stopping {
                    self.stop_worker(id)
                } else {
                    let msg = WireMessage::Params {
                        global_step: self.state.global_step(),
                        params: self.state.params().clone(),
                    };
                    self.send(id, &msg)
                }
            }
            WireMessage::Control(Control::Done) => {
                self.finished.insert(id);
                Ok(())
            }
            WireMessage::Control(Control::Error { code, message }) => Err(fail(code, message)),
            WireMessage::Gradient(g) => {
                if g.worker_id != id {
                    return Err(fail(
                        DistributedErrorCode::Protocol,
                        format!("worker {id} sent a gradient labelled {}", g.worker_id),
                    ));
                }
                if self.stopping {
                    return self.stop_worker(id);
                }
                self.worker_report(id).steps += 1;
                match self.state.ps_apply(g) {
                    Ok(None) => Ok(()),
                    Ok(Some(update)) => {
                        self.sync_report();
                        self.report.losses.push(update.loss);
                        for &c in &update.contributors {
                            self.worker_report(c).applied += 1;
                        }
                        self.consult_master(update.global_step, update.loss)?;
                        if update.global_step >= self.target_step {
                            self.stopping = true;
                        }
                        for c in update.contributors {
                            if self.stopping {
                                self.stop_worker(c)?;
                            } else {
                                let msg = WireMessage::Params {
                                    global_step: self.state.global_step(),
                                    params: self.state.params().clone(),
                                };
                                self.send(c, &msg)?;
                            }
                        }
                        Ok(())
                    }
                    Err(Error::StaleGradient { current_step, .. }) => {
                        self.report.stale_rejections += 1;
                        self.send(id, &WireMessage::Control(Control::Stale { current_step }))
                    }
                    Err(e) => Err(fail(DistributedErrorCode::Protocol, e.to_string())),
                }
            }
            other => Err(fail(
                DistributedErrorCode::Protocol,
                format!("worker {id} sent unexpected {other:?}"),
            )),
        }
    }

    fn missing(&self) -> Vec<u32> {
        self.workers
            .keys()
            .filter(|id| !self.finished.contains(id))
            .copied()
            .collect()
    }

    fn serve(&mut self, rx: &mpsc::Receiver<(u32, Result<WireMessage>)>) -> Result<(), Failure> {
        if self.state.global_step() >= self.target_step {
            self.stopping = true;
        }
        while self.finished.len() < self.workers.len() {
            match rx.recv_timeout(self.patience) {
                Ok((id, Ok(msg))) => self.handle(id, msg)?,
                Ok((id, Err(e))) => {
                    if !self.finished.contains(&id) {
                        return Err(fail(DistributedErrorCode::Transport, format!("worker {id}: {e}")));
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    let code = match self.state.mode() {
                        SyncMode::Sync => DistributedErrorCode::SyncTimeout,
                        SyncMode::Async => DistributedErrorCode::Transport,
                    };
                    return Err(fail(
                        code,
                        format!(
                            "no message from workers {:?} within {:?} at step {} ({} of {} gradients in hand)",
                            self.missing(),
                            self.patience,
                            self.state.global_step(),
                            self.state.pending(),
                            self.state.expected_workers()
                        ),
                    ));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(fail(
                        DistributedErrorCode::Transport,
                        format!("workers {:?} disconnected", self.missing()),
                    ))
                }
            }
        }
        Ok(())
    }

    fn shutdown_after(&mut self, failure: &Failure) {
        for id in self.missing() {
            let _ = self.stop_worker(id);
        }
        let _ = self.master.send(&WireMessage::Control(Control::Error {
            code: failure.code,
            message: failure.message.clone(),
        }));
    }
}

fn accept_all(
    listener: &mut dyn Listener,
    expected_workers: usize,
    patience: Duration,
) -> Result<(Connection, BTreeMap<u32, Connection>), Failure> {
    let deadline = Instant::now() + patience;
    let mut master = None;
    let mut workers = BTreeMap::new();
    while master.is_none() || workers.len() < expected_workers {
        let left = deadline.saturating_duration_since(Instant::now());
        let conn = listener.accept(left).map_err(|e| {
            fail(
                DistributedErrorCode::Transport,
                format!("{} of {expected_workers} workers connected: {e}", workers.len()),
            )
        })?;
        match conn.recv(left.max(Duration::from_millis(1))) {
            Ok(WireMessage::Control(Control::Hello { role: TaskRole::Master, .. })) if master.is_none() => {
                master = Some(conn)
            }
            Ok(WireMessage::Control(Control::Hello { role: TaskRole::Worker, id })) if !workers.contains_key(&id) => {
                workers.insert(id, conn);
            }
            Ok(other) => {
                return Err(fail(
                    DistributedErrorCode::Protocol,
                    format!("unexpected greeting {other:?}"),
                ))
            }
            Err(e) => return Err(fail(DistributedErrorCode::Transport, e.to_string())),
        }
    }
    Ok((master.expect("loop exits with a master"), workers))
}

/// Serves parameters to `expected_workers` workers and one master until
/// `target_step` is reached, the master stops the run, or every worker is done.
pub fn run_parameter_server(
    listener: &mut dyn Listener,
    state: ParamServerState,
    target_step: u64,
    patience: Duration,
) -> Result<ServerOutcome> {
    let mode = state.mode();
    let mut report = DistributedReport {
        mode: Some(mode),
        final_global_step: state.global_step(),
        ..DistributedReport::default()
    };
    let (master, conns) = match accept_all(listener, state.expected_workers(), patience) {
        Ok(v) => v,
        Err(f) => {
            return Err(Error::Distributed {
                code: f.code,
                message: f.message,
                partial: Box::new(report),
            })
        }
    };
    let (tx, rx) = mpsc::channel();
    let mut workers = BTreeMap::new();
    for (id, conn) in conns {
        let (sink, inbox) = conn.split();
        forward(id, inbox, tx.clone());
        workers.insert(id, sink);
        report.workers.push(WorkerReport {
            worker_id: id,
            ..WorkerReport::default()
        });
    }
    drop(tx);
    let mut server = Server {
        state,
        target_step,
        patience,
        master,
        workers,
        finished: BTreeSet::new(),
        stopping: false,
        report,
    };
    match server.serve(&rx) {
        Ok(()) => {
            server.sync_report();
            let final_params = WireMessage::Params {
                global_step: server.state.global_step(),
                params: full_state(&server.state),
            };
            let _ = server.master.send(&final_params);
            let _ = server.master.send(&WireMessage::Control(Control::Finished));
            Ok(ServerOutcome {
                state: server.state,
                report: server.report,
            })
        }
        Err(f) => {
            server.sync_report();
            server.shutdown_after(&f);
            Err(Error::Distributed {
                code: f.code,
                message: f.message,
                partial: Box::new(server.report),
            })
        }
    }
}
