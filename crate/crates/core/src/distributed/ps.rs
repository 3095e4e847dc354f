//! Parameter-server state machine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::distributed::wire::GradientMessage;
use crate::error::{Error, Result};
use crate::numerics::{NamedTensors, Optimizer, OptimizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    /// One averaged update per step from every worker's gradients.
    Sync,
    /// Every gradient is applied on arrival.
    Async,
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyncMode::Sync => "sync",
            SyncMode::Async => "async",
        })
    }
}

impl FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(SyncMode::Sync),
            "async" => Ok(SyncMode::Async),
            other => Err(Error::validation(format!("mode must be sync or async, got {other:?}"))),
        }
    }
}

/// Result of an applied update.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedUpdate {
    pub global_step: u64,
    /// Mean loss of the contributing messages.
    pub loss: f64,
    /// Worker ids whose gradients went into the update, ascending.
    pub contributors: Vec<u32>,
}

/// Authoritative parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct ParamServerState {
    params: NamedTensors,
    optimizer: Optimizer,
    global_step: u64,
    mode: SyncMode,
    expected_workers: usize,
    pending: BTreeMap<u32, GradientMessage>,
    applied_updates: u64,
}

impl ParamServerState {
    pub fn new(
        params: NamedTensors,
        optimizer: OptimizerSpec,
        global_step: u64,
        mode: SyncMode,
        expected_workers: usize,
    ) -> Result<Self> {
        if expected_workers == 0 {
            return Err(Error::validation("a parameter server needs at least one worker"));
        }
        Ok(ParamServerState {
            params,
            optimizer: optimizer.build(),
            global_step,
            mode,
            expected_workers,
            pending: BTreeMap::new(),
            applied_updates: 0,
        })
    }

    /// Resumes optimizer slots, e.g. from a checkpoint.
    pub fn with_slots(mut self, slots: &NamedTensors) -> Self {
        self.optimizer.restore_slots(slots);
        self
    }

    pub fn params(&self) -> &NamedTensors {
        &self.params
    }

    pub fn slots(&self) -> NamedTensors {
        self.optimizer.slots()
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn mode(&self) -> SyncMode {
        self.mode
    }

    pub fn expected_workers(&self) -> usize {
        self.expected_workers
    }

    pub fn applied_updates(&self) -> u64 {
        self.applied_updates
    }

    /// Number of gradient messages waiting at the sync barrier.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn check_shapes(&self, msg: &GradientMessage) -> Result<()> {
        for (name, g) in &msg.gradients {
            match self.params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        "ps_apply",
                        format!("gradient {name:?} is {} but the parameter is {}", g.shape(), p.shape()),
                    ))
                }
                None => {
                    return Err(Error::shape(
                        "ps_apply",
                        format!("gradient {name:?} has no parameter"),
                    ))
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, gradients: &NamedTensors, loss: f64, contributors: Vec<u32>) -> Result<AppliedUpdate> {
        self.optimizer.apply(&mut self.params, gradients)?;
        self.global_step += 1;
        self.applied_updates += 1;
        Ok(AppliedUpdate {
            global_step: self.global_step,
            loss,
            contributors,
        })
    }

    /// Feeds one gradient message. Returns the update if one was applied.
    ///
    /// In sync mode a message computed against an older step is rejected with
    /// [`Error::StaleGradient`] and leaves the state unchanged.
    pub fn ps_apply(&mut self, msg: GradientMessage) -> Result<Option<AppliedUpdate>> {
        self.check_shapes(&msg)?;
        match self.mode {
            SyncMode::Async => {
                let id = msg.worker_id;
                self.apply(&msg.gradients, msg.loss, vec![id]).map(Some)
            }
            SyncMode::Sync => {
                if msg.basis_step < self.global_step {
                    return Err(Error::StaleGradient {
                        basis_step: msg.basis_step,
                        current_step: self.global_step,
                    });
                }
                if msg.basis_step > self.global_step {
                    return Err(Error::validation(format!(
                        "gradient from worker {} claims step {} but the server is at {}",
                        msg.worker_id, msg.basis_step, self.global_step
                    )));
                }
                if self.pending.contains_key(&msg.worker_id) {
                    return Err(Error::validation(format!(
                        "worker {} sent two gradients for step {}",
                        msg.worker_id, self.global_step
                    )));
                }
                if let Some(first) = self.pending.values().next() {
                    if !first.gradients.keys().eq(msg.gradients.keys()) {
                        return Err(Error::shape(
                            "ps_apply",
                            format!("worker {} sent a different set of gradients", msg.worker_id),
                        ));
                    }
                }
                self.pending.insert(msg.worker_id, msg);
                if self.pending.len() < self.expected_workers {
                    return Ok(None);
                }
                let pending = std::mem::take(&mut self.pending);
                let (mean, loss) = average(pending.values())?;
                self.apply(&mean, loss, pending.into_keys().collect()).map(Some)
            }
        }
    }
}

/// Element-wise mean of the gradients, summed in iteration order.
pub fn average<'a>(messages: impl IntoIterator<Item = &'a GradientMessage>) -> Result<(NamedTensors, f64)> {
    let mut sum: Option<NamedTensors> = None;
    let mut loss = 0.0;
    let mut n = 0usize;
    for m in messages {
        n += 1;
        loss += m.loss;
        sum = Some(match sum {
            None => m.gradients.clone(),
            Some(acc) => {
                let mut next = NamedTensors::new();
                for (name, a) in acc {
                    let b = m
                        .gradients
                        .get(&name)
                        .ok_or_else(|| Error::shape("average", format!("gradient {name:?} missing")))?;
                    next.insert(name, a.add(b)?);
                }
                next
            }
        });
    }
    let sum = sum.ok_or_else(|| Error::Internal("nothing to average".into()))?;
    let k = n as f64;
    let mean = sum.into_iter().map(|(name, t)| (name, t.map(|v| v / k))).collect();
    Ok((mean, loss / k))
}

/// A gradient message carrying no loss.
pub fn gradient_message(worker_id: u32, basis_step: u64, gradients: NamedTensors) -> GradientMessage {
    GradientMessage {
        worker_id,
        basis_step,
        loss: 0.0,
        gradients,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one(name: &str, v: &[f64]) -> NamedTensors {
        NamedTensors::from([(name.to_string(), Tensor::row_vector(v.to_vec()).unwrap())])
    }

    fn state(mode: SyncMode, workers: usize) -> ParamServerState {
        ParamServerState::new(one("w", &[1.0, 2.0]), OptimizerSpec::sgd(0.5), 0, mode, workers).unwrap()
    }

    #[test]
    fn sync_averages_two_workers() {
        let mut ps = state(SyncMode::Sync, 2);
        assert_eq!(ps.ps_apply(gradient_message(1, 0, one("w", &[4.0, 0.0]))).unwrap(), None);
        let up = ps
            .ps_apply(gradient_message(0, 0, one("w", &[2.0, 2.0])))
            .unwrap()
            .unwrap();
        assert_eq!(up.global_step, 1);
        assert_eq!(up.contributors, vec![0, 1]);
        // mean gradient (3, 1), lr 0.5
        assert_eq!(ps.params()["w"].data(), &[-0.5, 1.5]);
    }

    #[test]
    fn sync_barrier_holds_state() {
        let mut ps = state(SyncMode::Sync, 2);
        ps.ps_apply(gradient_message(0, 0, one("w", &[1.0, 1.0]))).unwrap();
        assert_eq!(ps.global_step(), 0);
        assert_eq!(ps.params()["w"].data(), &[1.0, 2.0]);
        assert_eq!(ps.pending(), 1);
    }

    #[test]
    fn sync_rejects_stale() {
        let mut ps = state(SyncMode::Sync, 1);
        ps.ps_apply(gradient_message(0, 0, one("w", &[1.0, 1.0]))).unwrap();
        let before = ps.params().clone();
        let err = ps.ps_apply(gradient_message(0, 0, one("w", &[1.0, 1.0]))).unwrap_err();
        assert!(matches!(err, Error::StaleGradient { basis_step: 0, current_step: 1 }));
        assert_eq!(ps.params(), &before);
    }

    #[test]
    fn async_applies_immediately() {
        let mut ps = state(SyncMode::Async, 2);
        for i in 0..3 {
            let up = ps.ps_apply(gradient_message(i % 2, 0, one("w", &[1.0, 1.0]))).unwrap();
            assert_eq!(up.unwrap().global_step, u64::from(i) + 1);
        }
        assert_eq!(ps.applied_updates(), 3);
    }

    #[test]
    fn shape_checked_before_buffering() {
        let mut ps = state(SyncMode::Sync, 2);
        assert!(ps.ps_apply(gradient_message(0, 0, one("w", &[1.0]))).is_err());
        assert!(ps.ps_apply(gradient_message(0, 0, one("v", &[1.0, 1.0]))).is_err());
        assert_eq!(ps.pending(), 0);
    }
}
