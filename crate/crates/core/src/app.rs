//! Application hooks plugged into the master and the workers.
//!
//! An application is split in two halves. [`MasterHooks`] owns the
//! aggregation state and decides what work exists; [`WorkerHooks`] turns a
//! task payload into a result, given the per-epoch init blob.

use thiserror::Error;

use crate::task::{TaskOutcome, TaskSpec};

/// Prefix of a `TaskDone` result that reports an application failure
/// instead of a real result.
pub const APP_ERROR_MARKER: &[u8] = b"\xFFMW-APP-ERROR:";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("application error: {0}")]
pub struct AppError(pub String);

impl AppError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }

    /// Encodes the error as a `TaskDone` result payload.
    pub fn to_result_payload(&self) -> Vec<u8> {
        let mut out = APP_ERROR_MARKER.to_vec();
        out.extend_from_slice(self.0.as_bytes());
        out
    }

    /// Recognizes an error payload produced by [`AppError::to_result_payload`].
    pub fn from_result_payload(result: &[u8]) -> Option<Self> {
        result
            .strip_prefix(APP_ERROR_MARKER)
            .map(|msg| Self(String::from_utf8_lossy(msg).into_owned()))
    }
}

/// What the master does once every task of an epoch is done.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpochStep {
    /// The run is over.
    Finished,
    /// Start another epoch with these initial payloads. The init blob is
    /// re-read from [`MasterHooks::pack_worker_init_data`].
    Continue(Vec<Vec<u8>>),
}

pub trait MasterHooks {
    /// Payloads of the first epoch's initial tasks.
    fn setup_initial_tasks(&mut self) -> Vec<Vec<u8>>;

    /// Blob sent to every worker on registration and at each epoch start.
    /// Must not change within an epoch.
    fn pack_worker_init_data(&self) -> Vec<u8>;

    /// Folds a first-time completion into the aggregation state and returns
    /// the payloads of child tasks to spawn.
    fn act_on_completed_task(&mut self, outcome: &TaskOutcome) -> Result<Vec<Vec<u8>>, AppError>;

    /// Called when the epoch's ledger has drained.
    fn finish_epoch(&mut self) -> Result<EpochStep, AppError>;
}

/// Output of executing one task on a worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskResult {
    pub result: Vec<u8>,
    pub children: Vec<Vec<u8>>,
}

pub trait WorkerHooks {
    /// Decoded form of the init blob, built once per blob.
    type Context;

    fn prepare(&self, init_data: &[u8]) -> Result<Self::Context, AppError>;

    /// Must be a pure function of `(init_data, spec.payload)`.
    fn execute_task(&self, ctx: &Self::Context, spec: &TaskSpec) -> Result<TaskResult, AppError>;

    /// Virtual execution time of a payload, used only by the simulator.
    fn task_cost(&self, payload: &[u8]) -> f64;
}

/// Independent tasks of equal cost: a single epoch of `count` tasks whose
/// results are discarded. Used for scheduling and scaling experiments.
#[derive(Debug, Clone)]
pub struct UniformTasks {
    pub count: u64,
    pub cost_s: f64,
    completed: Vec<u64>,
}

impl UniformTasks {
    pub fn new(count: u64, cost_s: f64) -> Self {
        Self {
            count,
            cost_s,
            completed: Vec::new(),
        }
    }

    /// Task indices in the order their completions were accepted.
    pub fn completed(&self) -> &[u64] {
        &self.completed
    }
}

impl MasterHooks for UniformTasks {
    fn setup_initial_tasks(&mut self) -> Vec<Vec<u8>> {
        (0..self.count).map(|i| i.to_le_bytes().to_vec()).collect()
    }

    fn pack_worker_init_data(&self) -> Vec<u8> {
        self.cost_s.to_le_bytes().to_vec()
    }

    fn act_on_completed_task(&mut self, outcome: &TaskOutcome) -> Result<Vec<Vec<u8>>, AppError> {
        let idx: [u8; 8] = outcome
            .result
            .as_slice()
            .try_into()
            .map_err(|_| AppError::new("uniform result must be 8 bytes"))?;
        self.completed.push(u64::from_le_bytes(idx));
        Ok(Vec::new())
    }

    fn finish_epoch(&mut self) -> Result<EpochStep, AppError> {
        Ok(EpochStep::Finished)
    }
}

impl WorkerHooks for UniformTasks {
    type Context = ();

    fn prepare(&self, _init_data: &[u8]) -> Result<(), AppError> {
        Ok(())
    }

    fn execute_task(&self, _ctx: &(), spec: &TaskSpec) -> Result<TaskResult, AppError> {
        if spec.payload.len() != 8 {
            return Err(AppError::new("uniform payload must be 8 bytes"));
        }
        Ok(TaskResult {
            result: spec.payload.clone(),
            children: Vec::new(),
        })
    }

    fn task_cost(&self, _payload: &[u8]) -> f64 {
        self.cost_s
    }
}
