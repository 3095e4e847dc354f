//! Run-time and cluster configuration.
//!
//! Documents are strict JSON: every key must be known. The accepted shape is
//!
//! ```json
//! {
//!   "num_cores": 1,
//!   "gpu_memory_fraction": 1.0,
//!   "random_seed": 42,
//!   "save_checkpoints_steps": 100,
//!   "model_dir": "runs/iris",
//!   "cluster": {
//!     "tasks": [{"role": "master", "index": 0, "address": "localhost:2222"}],
//!     "this_task": 0
//!   }
//! }
//! ```
//!
//! `gpu_memory_fraction` is stored but has no effect; there is no GPU backend.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ClusterError, Error, Result};

/// Environment variable that may name the configuration file.
pub const CONFIG_ENV: &str = "TFLN_CONFIG";

const TOP_KEYS: &[&str] = &[
    "num_cores",
    "gpu_memory_fraction",
    "random_seed",
    "save_checkpoints_steps",
    "model_dir",
    "cluster",
];
const CLUSTER_KEYS: &[&str] = &["tasks", "this_task"];
const TASK_KEYS: &[&str] = &["role", "index", "address"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskRole {
    Master,
    Worker,
    Ps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub role: TaskRole,
    pub index: u32,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub tasks: Vec<TaskSpec>,
    pub this_task: usize,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        validate_cluster(self)
    }

    fn with_role(&self, role: TaskRole) -> Vec<&TaskSpec> {
        let mut v: Vec<&TaskSpec> = self.tasks.iter().filter(|t| t.role == role).collect();
        v.sort_by_key(|t| t.index);
        v
    }

    /// Worker tasks ordered by index.
    pub fn workers(&self) -> Vec<&TaskSpec> {
        self.with_role(TaskRole::Worker)
    }

    pub fn parameter_servers(&self) -> Vec<&TaskSpec> {
        self.with_role(TaskRole::Ps)
    }

    pub fn master(&self) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.role == TaskRole::Master)
    }

    pub fn this_task(&self) -> Option<&TaskSpec> {
        self.tasks.get(self.this_task)
    }

    /// True when there is at least one worker, i.e. training is distributed.
    pub fn is_distributed(&self) -> bool {
        !self.workers().is_empty()
    }
}

/// Checks the cluster invariants, reporting the first violation found.
pub fn validate_cluster(c: &ClusterConfig) -> Result<(), ClusterError> {
    let masters = c.tasks.iter().filter(|t| t.role == TaskRole::Master).count();
    match masters {
        0 => return Err(ClusterError::NoMaster),
        1 => {}
        _ => return Err(ClusterError::DuplicateMaster),
    }
    let mut ids = HashSet::new();
    let mut addrs = HashSet::new();
    for t in &c.tasks {
        if !ids.insert((t.role, t.index)) {
            return Err(ClusterError::DuplicateTask {
                role: format!("{:?}", t.role).to_lowercase(),
                index: t.index,
            });
        }
        if !addrs.insert(t.address.as_str()) {
            return Err(ClusterError::DuplicateAddress(t.address.clone()));
        }
    }
    if c.tasks.iter().any(|t| t.role == TaskRole::Worker) && !c.tasks.iter().any(|t| t.role == TaskRole::Ps) {
        return Err(ClusterError::WorkerWithoutPs);
    }
    for t in &c.tasks {
        let ok = t
            .address
            .rsplit_once(':')
            .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if !ok {
            return Err(ClusterError::BadAddress(t.address.clone()));
        }
    }
    if c.this_task >= c.tasks.len() {
        return Err(ClusterError::ThisTaskOutOfRange {
            index: c.this_task,
            len: c.tasks.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub num_cores: usize,
    /// Accepted for compatibility; has no effect.
    pub gpu_memory_fraction: f64,
    pub random_seed: u64,
    pub save_checkpoints_steps: Option<u64>,
    pub model_dir: Option<PathBuf>,
    pub cluster: Option<ClusterConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_cores: 1,
            gpu_memory_fraction: 1.0,
            random_seed: 42,
            save_checkpoints_steps: None,
            model_dir: None,
            cluster: None,
        }
    }
}

fn check_keys(v: &Value, allowed: &[&str], path: &str) -> Result<()> {
    if let Value::Object(map) = v {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                let full = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                return Err(Error::UnknownKey(full));
            }
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.random_seed = seed;
        self
    }

    pub fn with_model_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.model_dir = Some(dir.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cores == 0 {
            return Err(Error::validation("num_cores must be at least 1"));
        }
        if !(self.gpu_memory_fraction > 0.0 && self.gpu_memory_fraction <= 1.0) {
            return Err(Error::validation(format!(
                "gpu_memory_fraction must lie in (0, 1], got {}",
                self.gpu_memory_fraction
            )));
        }
        if self.save_checkpoints_steps == Some(0) {
            return Err(Error::validation("save_checkpoints_steps must be at least 1"));
        }
        if let Some(c) = &self.cluster {
            validate_cluster(c)?;
        }
        Ok(())
    }

    /// Producer threads for batch feeding: `requested`, capped at `num_cores`.
    pub fn feeding_threads(&self, requested: usize) -> usize {
        requested.clamp(1, self.num_cores.max(1))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads `path` if given, else the file named by `TFLN_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match Self::resolve_path(path) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                parse_run_config(&text)
            }
            None => Ok(RunConfig::default()),
        }
    }

    /// The explicit path, falling back to `TFLN_CONFIG`.
    pub fn resolve_path(path: Option<&Path>) -> Option<PathBuf> {
        path.map(Path::to_path_buf).or_else(|| {
            std::env::var_os(CONFIG_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
    }
}

/// Parses and validates a strict JSON configuration document.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if !value.is_object() {
        return Err(Error::Config("configuration must be a JSON object".into()));
    }
    check_keys(&value, TOP_KEYS, "")?;
    if let Some(cluster) = value.get("cluster") {
        check_keys(cluster, CLUSTER_KEYS, "cluster")?;
        if let Some(Value::Array(tasks)) = cluster.get("tasks") {
            for (i, t) in tasks.iter().enumerate() {
                check_keys(t, TASK_KEYS, &format!("cluster.tasks[{i}]"))?;
            }
        }
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task(role: TaskRole, index: u32, port: u16) -> TaskSpec {
        TaskSpec {
            role,
            index,
            address: format!("localhost:{port}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_run_config("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.num_cores, c.random_seed, c.gpu_memory_fraction), (1, 42, 1.0));
    }

    #[test]
    fn zero_cores_rejected() {
        assert!(matches!(parse_run_config(r#"{"num_cores": 0}"#), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_keys_are_named() {
        match parse_run_config(r#"{"num_cores": 2, "gpus": 1}"#) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "gpus"),
            other => panic!("{other:?}"),
        }
        match parse_run_config(r#"{"cluster": {"tasks": [{"role":"master","index":0,"address":"a:1","x":1}], "this_task":0}}"#) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "cluster.tasks[0].x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_task_cluster() {
        let doc = r#"{
            "num_cores": 2,
            "cluster": {
                "tasks": [
                    {"role": "master", "index": 0, "address": "localhost:2222"},
                    {"role": "worker", "index": 0, "address": "localhost:2223"},
                    {"role": "ps", "index": 0, "address": "localhost:2224"}
                ],
                "this_task": 1
            }
        }"#;
        let c = parse_run_config(doc).unwrap();
        let cluster = c.cluster.unwrap();
        assert_eq!(cluster.this_task(), Some(&task(TaskRole::Worker, 0, 2223)));
        assert_eq!(cluster.master().unwrap().address, "localhost:2222");
        assert_eq!(cluster.workers().len(), 1);
        assert_eq!(cluster.parameter_servers().len(), 1);
    }

    #[test]
    fn cluster_diagnostics() {
        let ok = ClusterConfig {
            tasks: vec![task(TaskRole::Master, 0, 1)],
            this_task: 0,
        };
        assert_eq!(validate_cluster(&ok), Ok(()));

        let two_masters = ClusterConfig {
            tasks: vec![task(TaskRole::Master, 0, 1), task(TaskRole::Master, 1, 2)],
            this_task: 0,
        };
        let err = validate_cluster(&two_masters).unwrap_err();
        assert_eq!(err.to_string(), "duplicate master");

        let no_ps = ClusterConfig {
            tasks: vec![
                task(TaskRole::Master, 0, 1),
                task(TaskRole::Worker, 0, 2),
                task(TaskRole::Worker, 1, 3),
            ],
            this_task: 0,
        };
        assert_eq!(
            validate_cluster(&no_ps).unwrap_err().to_string(),
            "workers require a parameter server"
        );

        let dup_addr = ClusterConfig {
            tasks: vec![task(TaskRole::Master, 0, 1), task(TaskRole::Ps, 0, 1)],
            this_task: 0,
        };
        assert!(matches!(validate_cluster(&dup_addr), Err(ClusterError::DuplicateAddress(_))));

        let none = ClusterConfig {
            tasks: vec![task(TaskRole::Ps, 0, 1)],
            this_task: 0,
        };
        assert_eq!(validate_cluster(&none), Err(ClusterError::NoMaster));

        let codes: HashSet<&str> = [
            ClusterError::NoMaster,
            ClusterError::DuplicateMaster,
            ClusterError::DuplicateAddress(String::new()),
            ClusterError::WorkerWithoutPs,
        ]
        .iter()
        .map(ClusterError::code)
        .collect();
        assert_eq!(codes.len(), 4);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            1usize..64,
            1u32..=100,
            any::<u64>(),
            proptest::option::of(1u64..10_000),
            proptest::option::of("[a-z]{1,8}"),
            0usize..3,
        )
            .prop_map(|(cores, gpu, seed, save, dir, workers)| RunConfig {
                num_cores: cores,
                gpu_memory_fraction: gpu as f64 / 100.0,
                random_seed: seed,
                save_checkpoints_steps: save,
                model_dir: dir.map(PathBuf::from),
                cluster: (workers > 0).then(|| {
                    let mut tasks = vec![task(TaskRole::Master, 0, 1000), task(TaskRole::Ps, 0, 1001)];
                    for w in 0..workers {
                        tasks.push(task(TaskRole::Worker, w as u32, 2000 + w as u16));
                    }
                    ClusterConfig { tasks, this_task: 0 }
                }),
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_is_fixed_point(c in arb_config()) {
            let once = parse_run_config(&c.to_json()).unwrap();
            prop_assert_eq!(&once, &c);
            let twice = parse_run_config(&once.to_json()).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
