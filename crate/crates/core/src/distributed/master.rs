use std::time::Duration;

use crate::distributed::transport::Connection;
use crate::distributed::wire::{Control, WireMessage};
use crate::distributed::DistributedReport;
use crate::error::{Error, Result};
use crate::estimator::Checkpoint;
use crate::hooks::{HookDispatcher, HookEvent, RunContext, SessionRunHook, SessionState};
use crate::run_config::TaskRole;

struct MasterSession {
    latest: Checkpoint,
}

impl SessionState for MasterSession {
    fn global_step(&self) -> u64 {
        self.latest.global_step
    }

    fn snapshot(&self) -> Checkpoint {
        self.latest.clone()
    }
}

/// Runs the hooks against updates reported by the parameter server and
/// answers each with continue or stop. Returns the final server state.
pub fn run_master(
    mut conn: Connection,
    initial: Checkpoint,
    hooks: &mut [Box<dyn SessionRunHook>],
    patience: Duration,
) -> Result<Checkpoint> {
    conn.send(&WireMessage::Control(Control::Hello {
        role: TaskRole::Master,
        id: 0,
    }))?;
    let mut session = MasterSession { latest: initial };
    let mut pending: Option<Checkpoint> = None;
    let mut dispatcher = HookDispatcher::new();
    let mut ctx = RunContext::new(session.latest.global_step);
    dispatcher.dispatch(hooks, &HookEvent::session_start(session.latest.global_step), &mut ctx, &session)?;
    loop {
        match conn.recv(patience)? {
            WireMessage::Params { global_step, params } => {
                pending = Some(Checkpoint {
                    global_step,
                    tensors: params,
                });
            }
            WireMessage::Control(Control::Applied { global_step, loss }) => {
                let next = pending
                    .take()
                    .filter(|c| c.global_step == global_step)
                    .ok_or_else(|| Error::Transport(format!("update {global_step} arrived without parameters")))?;
                let hooked = dispatcher
                    .dispatch(hooks, &HookEvent::before_run(global_step - 1), &mut ctx, &session)
                    .and_then(|_| {
                        session.latest = next;
                        dispatcher.dispatch(hooks, &HookEvent::after_run(global_step, loss), &mut ctx, &session)
                    });
                let reply = if hooked.is_err() || ctx.stop_requested() {
                    Control::Stop
                } else {
                    Control::Continue
                };
                conn.send(&WireMessage::Control(reply))?;
                hooked?;
            }
            WireMessage::Control(Control::Finished) => {
                if let Some(last) = pending.take() {
                    session.latest = last;
                }
                dispatcher.dispatch(hooks, &HookEvent::session_end(session.latest.global_step), &mut ctx, &session)?;
                return Ok(session.latest);
            }
            WireMessage::Control(Control::Error { code, message }) => {
                return Err(Error::Distributed {
                    code,
                    message,
                    partial: Box::new(DistributedReport::default()),
                })
            }
            other => return Err(Error::Transport(format!("master got unexpected message {other:?}"))),
        }
    }
}
