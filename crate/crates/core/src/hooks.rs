//! Observers notified around the training loop.
//!
//! A session emits `session_start`, then a `before_run`/`after_run` pair per
//! step, then `session_end`. Hooks see every event in registration order and
//! may request a stop through the shared [`RunContext`].

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::estimator::{checkpoint_file_name, Checkpoint};
use crate::fmt::sig6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookEventKind {
    SessionStart,
    BeforeRun,
    AfterRun,
    SessionEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HookEvent {
    pub kind: HookEventKind,
    pub global_step: u64,
    /// Only set on `AfterRun`.
    pub loss: Option<f64>,
}

impl HookEvent {
    pub fn session_start(global_step: u64) -> Self {
        HookEvent {
            kind: HookEventKind::SessionStart,
            global_step,
            loss: None,
        }
    }

    pub fn before_run(global_step: u64) -> Self {
        HookEvent {
            kind: HookEventKind::BeforeRun,
            global_step,
            loss: None,
        }
    }

    pub fn after_run(global_step: u64, loss: f64) -> Self {
        HookEvent {
            kind: HookEventKind::AfterRun,
            global_step,
            loss: Some(loss),
        }
    }

    pub fn session_end(global_step: u64) -> Self {
        HookEvent {
            kind: HookEventKind::SessionEnd,
            global_step,
            loss: None,
        }
    }
}

/// Loop state shared with hooks. A stop request cannot be withdrawn.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    global_step: u64,
    stop_requested: bool,
}

impl RunContext {
    pub fn new(global_step: u64) -> Self {
        RunContext {
            global_step,
            stop_requested: false,
        }
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn request_stop(&mut self) {
        self.stop_requested = true;
    }

    pub fn stop_requested(&self) -> bool {
        self.stop_requested
    }

    pub(crate) fn advance_to(&mut self, step: u64) -> Result<()> {
        if step < self.global_step {
            return Err(Error::Internal(format!(
                "global step moved backwards from {} to {step}",
                self.global_step
            )));
        }
        self.global_step = step;
        Ok(())
    }
}

/// Read access to the running session, for hooks that persist state.
pub trait SessionState {
    fn global_step(&self) -> u64;
    fn snapshot(&self) -> Checkpoint;
}

pub trait SessionRunHook: Send {
    fn begin(&mut self, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        Ok(())
    }

    fn before_run(&mut self, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        Ok(())
    }

    fn after_run(&mut self, _loss: f64, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        Ok(())
    }

    fn end(&mut self, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Started,
    InRun,
    Ended,
}

/// Delivers events to hooks and rejects out-of-order events.
#[derive(Debug)]
pub struct HookDispatcher {
    phase: Phase,
}

impl Default for HookDispatcher {
    fn default() -> Self {
        Self::new()
    }
}

impl HookDispatcher {
    pub fn new() -> Self {
        HookDispatcher { phase: Phase::Idle }
    }

    pub fn dispatch(
        &mut self,
        hooks: &mut [Box<dyn SessionRunHook>],
        event: &HookEvent,
        ctx: &mut RunContext,
        session: &dyn SessionState,
    ) -> Result<()> {
        use HookEventKind::*;
        let next = match (self.phase, event.kind) {
            (Phase::Idle, SessionStart) => Phase::Started,
            (Phase::Started, BeforeRun) => Phase::InRun,
            (Phase::InRun, AfterRun) => Phase::Started,
            (Phase::Started, SessionEnd) => Phase::Ended,
            (phase, kind) => {
                return Err(Error::Internal(format!("hook event {kind:?} is illegal in phase {phase:?}")))
            }
        };
        if event.kind == AfterRun && event.loss.is_none() {
            return Err(Error::Internal("after_run event without a loss".into()));
        }
        if event.kind != AfterRun && event.loss.is_some() {
            return Err(Error::Internal(format!("{:?} event carries a loss", event.kind)));
        }
        ctx.advance_to(event.global_step)?;
        self.phase = next;
        for hook in hooks.iter_mut() {
            match event.kind {
                SessionStart => hook.begin(ctx, session)?,
                BeforeRun => hook.before_run(ctx, session)?,
                AfterRun => hook.after_run(event.loss.unwrap_or_default(), ctx, session)?,
                SessionEnd => hook.end(ctx, session)?,
            }
        }
        Ok(())
    }
}

/// Requests a stop once the global step reaches `last_step`.
#[derive(Debug, Clone)]
pub struct StopAtStepHook {
    last_step: u64,
}

impl StopAtStepHook {
    pub fn new(last_step: u64) -> Result<Self> {
        if last_step == 0 {
            return Err(Error::validation("StopAtStepHook needs last_step >= 1"));
        }
        Ok(StopAtStepHook { last_step })
    }
}

impl SessionRunHook for StopAtStepHook {
    fn after_run(&mut self, _loss: f64, ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        if ctx.global_step() >= self.last_step {
            ctx.request_stop();
        }
        Ok(())
    }
}

/// Writes `ckpt-{step}` every `save_steps` steps and at session end.
#[derive(Debug, Clone)]
pub struct CheckpointSaverHook {
    save_steps: u64,
    dir: PathBuf,
    last_saved: Option<u64>,
    written: Arc<Mutex<Vec<PathBuf>>>,
}

impl CheckpointSaverHook {
    pub fn new(save_steps: u64, dir: impl Into<PathBuf>) -> Result<Self> {
        if save_steps == 0 {
            return Err(Error::validation("CheckpointSaverHook needs save_steps >= 1"));
        }
        Ok(CheckpointSaverHook {
            save_steps,
            dir: dir.into(),
            last_saved: None,
            written: Arc::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Shared list of files written so far; stays readable after the hook is moved.
    pub fn written(&self) -> Arc<Mutex<Vec<PathBuf>>> {
        Arc::clone(&self.written)
    }

    fn save(&mut self, session: &dyn SessionState) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let step = session.global_step();
        let path = self.dir.join(checkpoint_file_name(step));
        session.snapshot().save(&path)?;
        self.last_saved = Some(step);
        self.written.lock().unwrap_or_else(|p| p.into_inner()).push(path);
        Ok(())
    }
}

impl SessionRunHook for CheckpointSaverHook {
    fn after_run(&mut self, _loss: f64, ctx: &mut RunContext, session: &dyn SessionState) -> Result<()> {
        if ctx.global_step() % self.save_steps == 0 {
            self.save(session)?;
        }
        Ok(())
    }

    fn end(&mut self, _ctx: &mut RunContext, session: &dyn SessionState) -> Result<()> {
        if self.last_saved != Some(session.global_step()) {
            self.save(session)?;
        }
        Ok(())
    }
}

/// Emits `step=<n> loss=<v>` every `every_n_steps` steps and for the final step.
pub struct LoggingHook {
    every_n_steps: u64,
    sink: Box<dyn FnMut(&str) + Send>,
    pending: Option<(u64, f64)>,
}

impl LoggingHook {
    pub fn new(every_n_steps: u64, sink: impl FnMut(&str) + Send + 'static) -> Result<Self> {
        if every_n_steps == 0 {
            return Err(Error::validation("LoggingHook needs every_n_steps >= 1"));
        }
        Ok(LoggingHook {
            every_n_steps,
            sink: Box::new(sink),
            pending: None,
        })
    }

    /// Logs to standard error.
    pub fn to_stderr(every_n_steps: u64) -> Result<Self> {
        Self::new(every_n_steps, |line| eprintln!("{line}"))
    }

    fn emit(&mut self, step: u64, loss: f64) {
        let line = format!("step={step} loss={}", sig6(loss));
        (self.sink)(&line);
    }
}

impl SessionRunHook for LoggingHook {
    fn after_run(&mut self, loss: f64, ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        let step = ctx.global_step();
        if step % self.every_n_steps == 0 {
            self.emit(step, loss);
            self.pending = None;
        } else {
            self.pending = Some((step, loss));
        }
        Ok(())
    }

    fn end(&mut self, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        if let Some((step, loss)) = self.pending.take() {
            self.emit(step, loss);
        }
        Ok(())
    }
}

/// Records every event it sees into a shared list.
#[derive(Debug, Clone, Default)]
pub struct EventRecorder {
    events: Arc<Mutex<Vec<HookEvent>>>,
}

impl EventRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<HookEvent> {
        self.events.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn kinds(&self) -> Vec<HookEventKind> {
        self.events().iter().map(|e| e.kind).collect()
    }

    fn push(&self, e: HookEvent) {
        self.events.lock().unwrap_or_else(|p| p.into_inner()).push(e);
    }
}

impl SessionRunHook for EventRecorder {
    fn begin(&mut self, ctx: &mut RunContext, _s: &dyn SessionState) -> Result<()> {
        self.push(HookEvent::session_start(ctx.global_step()));
        Ok(())
    }

    fn before_run(&mut self, ctx: &mut RunContext, _s: &dyn SessionState) -> Result<()> {
        self.push(HookEvent::before_run(ctx.global_step()));
        Ok(())
    }

    fn after_run(&mut self, loss: f64, ctx: &mut RunContext, _s: &dyn SessionState) -> Result<()> {
        self.push(HookEvent::after_run(ctx.global_step(), loss));
        Ok(())
    }

    fn end(&mut self, ctx: &mut RunContext, _s: &dyn SessionState) -> Result<()> {
        self.push(HookEvent::session_end(ctx.global_step()));
        Ok(())
    }
}
