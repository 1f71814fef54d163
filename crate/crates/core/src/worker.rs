//! Socket worker runtime.
//!
//! A worker registers with `Hello`, keeps the latest init blob, executes each
//! assigned task through [`WorkerHooks`] and reports a `TaskDone`. A side
//! thread sends heartbeats for the whole lifetime of the connection,
//! including while a task is running.

use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::app::{AppError, TaskResult, WorkerHooks};
use crate::master::PROTO_VERSION;
use crate::task::{TaskId, TaskOutcome, TaskSpec};
use crate::transport::codec::{read_frame, FrameError, Message};
use crate::transport::tcp::TcpWorkerLink;

/// Test-only override of the heartbeat interval announced by the master.
pub const HEARTBEAT_OVERRIDE_ENV: &str = "MW_HEARTBEAT_OVERRIDE_S";

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("could not connect: {0}")]
    Connect(#[source] std::io::Error),
    #[error("connection lost: {0}")]
    ConnectionLost(#[source] FrameError),
    #[error("send failed: {0}")]
    Send(#[source] std::io::Error),
}

impl WorkerError {
    /// Every worker failure is worth a restart by a supervisor.
    pub fn is_retriable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerSummary {
    pub worker_id: Option<u64>,
    pub tasks_done: u64,
    pub heartbeats_sent: u64,
}

/// Runs a task through the hooks and packages the result.
///
/// Application failures become a `TaskDone` carrying the error marker so the
/// master can count the attempt.
pub fn execute_task<W: WorkerHooks>(
    hooks: &W,
    ctx: Result<&W::Context, &AppError>,
    spec: &TaskSpec,
) -> TaskOutcome {
    let result = ctx
        .map_err(Clone::clone)
        .and_then(|ctx| hooks.execute_task(ctx, spec));
    match result {
        Ok(TaskResult { result, children }) => TaskOutcome {
            id: spec.id,
            result,
            children,
        },
        Err(e) => TaskOutcome {
            id: spec.id,
            result: e.to_result_payload(),
            children: Vec::new(),
        },
    }
}

struct Heartbeat {
    stop: Arc<AtomicBool>,
    sent: Arc<AtomicU64>,
    handle: JoinHandle<()>,
}

impl Heartbeat {
    fn start(link: TcpWorkerLink, worker_id: u64, interval: Arc<AtomicU64>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let sent = Arc::new(AtomicU64::new(0));
        let (stop2, sent2) = (Arc::clone(&stop), Arc::clone(&sent));
        let handle = thread::spawn(move || {
            let start = Instant::now();
            while !stop2.load(Ordering::Acquire) {
                // half-interval cadence keeps every gap under H despite jitter
                let h = f64::from_bits(interval.load(Ordering::Acquire));
                thread::sleep(Duration::from_secs_f64(h / 2.0));
                if stop2.load(Ordering::Acquire) {
                    break;
                }
                let msg = Message::Heartbeat {
                    worker_id,
                    time_s: start.elapsed().as_secs_f64(),
                };
                if link.send(&msg).is_err() {
                    break;
                }
                sent2.fetch_add(1, Ordering::AcqRel);
            }
        });
        Self { stop, sent, handle }
    }

    fn stop(self) -> u64 {
        self.stop.store(true, Ordering::Release);
        let _ = self.handle.join();
        self.sent.load(Ordering::Acquire)
    }
}

fn heartbeat_interval(announced: f64) -> f64 {
    std::env::var(HEARTBEAT_OVERRIDE_ENV)
        .ok()
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|h| *h > 0.0)
        .unwrap_or(announced)
}

/// Connects to a master and serves tasks until told to shut down.
pub fn run_worker<A: ToSocketAddrs, W: WorkerHooks>(
    endpoint: A,
    hooks: &W,
) -> Result<WorkerSummary, WorkerError> {
    let (link, reader) = TcpWorkerLink::connect(endpoint).map_err(WorkerError::Connect)?;
    serve(link, reader, hooks)
}

fn serve<W: WorkerHooks>(
    link: TcpWorkerLink,
    mut reader: TcpStream,
    hooks: &W,
) -> Result<WorkerSummary, WorkerError> {
    link.send(&Message::Hello {
        proto_version: PROTO_VERSION,
    })
    .map_err(WorkerError::Send)?;

    let mut summary = WorkerSummary::default();
    let mut ctx: Option<Result<W::Context, AppError>> = None;
    let interval = Arc::new(AtomicU64::new(1f64.to_bits()));
    let mut heartbeat: Option<Heartbeat> = None;

    let result = loop {
        let msg = match read_frame(&mut reader) {
            Ok(msg) => msg,
            Err(e) => break Err(WorkerError::ConnectionLost(e)),
        };
        match msg {
            Message::InitData {
                worker_id,
                heartbeat_s,
                blob,
            } => {
                summary.worker_id = Some(worker_id);
                interval.store(heartbeat_interval(heartbeat_s).to_bits(), Ordering::Release);
                ctx = Some(hooks.prepare(&blob));
                if heartbeat.is_none() {
                    heartbeat = Some(Heartbeat::start(link.clone(), worker_id, Arc::clone(&interval)));
                }
            }
            Message::AssignTask {
                task_id,
                parent,
                payload,
            } => {
                let spec = TaskSpec {
                    id: TaskId(task_id),
                    parent: parent.map(TaskId),
                    payload,
                };
                let missing = AppError::new("task assigned before init data");
                let ctx_ref = match &ctx {
                    Some(c) => c.as_ref(),
                    None => Err(&missing),
                };
                let outcome = execute_task(hooks, ctx_ref, &spec);
                let done = Message::TaskDone {
                    task_id: outcome.id.0,
                    result: outcome.result,
                    children: outcome.children,
                };
                if let Err(e) = link.send(&done) {
                    break Err(WorkerError::Send(e));
                }
                summary.tasks_done += 1;
            }
            Message::Shutdown => break Ok(()),
            _ => {}
        }
    };
    if let Some(hb) = heartbeat {
        summary.heartbeats_sent = hb.stop();
    }
    link.shutdown();
    result.map(|()| summary)
}
