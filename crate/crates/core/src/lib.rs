//! A high-level machine learning toolkit in the style of estimator APIs.
//!
//! * [`numerics`]: dense tensors, layers, losses and optimizers.
//! * [`data`]: datasets, mini-batches and a bounded feeding queue.
//! * [`estimator`]: canned and custom estimators with fit/predict/evaluate and checkpoints.
//! * [`hooks`]: observers around the training loop.
//! * [`run_config`]: run-time and cluster configuration.
//! * [`distributed`]: parameter-server training over in-process or TCP transports.
//! * [`experiment`]: train/evaluate scheduling and model export.

mod codec;
pub mod data;
pub mod distributed;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fmt;
pub mod hooks;
pub mod numerics;
pub mod run_config;

pub use error::{Error, Result};
