//! The master: worker registry, dispatch, liveness and epoch control.
//!
//! [`Master`] is a pure state machine. Transports feed it one timestamped
//! [`Event`] at a time and deliver the [`Outbound`] messages it returns. The
//! socket backend drives it through [`run_master`], the simulator drives it
//! directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::app::{AppError, EpochStep, MasterHooks};
use crate::task::{Completion, LedgerCounters, TaskId, TaskLedger, TaskOutcome, TaskState, WorkerId};
use crate::transport::Message;

pub const PROTO_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub min_workers: usize,
    /// Heartbeat interval `H` in seconds.
    pub heartbeat_s: f64,
    /// Death timeout is `death_multiplier * heartbeat_s`.
    pub death_multiplier: f64,
    pub max_attempts: Option<u32>,
    /// How long the pool may be unable to make progress before giving up.
    pub stall_timeout_s: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            min_workers: 1,
            heartbeat_s: 1.0,
            death_multiplier: 3.0,
            max_attempts: None,
            stall_timeout_s: 3600.0,
        }
    }
}

impl MasterConfig {
    pub fn death_timeout_s(&self) -> f64 {
        self.heartbeat_s * self.death_multiplier
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_workers < 1 {
            return Err("min_workers must be at least 1".into());
        }
        if !(self.heartbeat_s > 0.0 && self.heartbeat_s.is_finite()) {
            return Err("heartbeat_s must be positive".into());
        }
        if self.death_timeout_s().partial_cmp(&self.heartbeat_s) != Some(std::cmp::Ordering::Greater) {
            return Err("death timeout must exceed the heartbeat interval".into());
        }
        if self.stall_timeout_s.is_nan() || self.stall_timeout_s <= 0.0 {
            return Err("stall_timeout_s must be positive".into());
        }
        Ok(())
    }
}

/// Transport-level identity of a connection (socket or simulated worker).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerState {
    Idle,
    Busy(TaskId),
    /// Suspended workers keep whatever task they held.
    Suspended(Option<TaskId>),
    Dead,
}

#[derive(Debug, Clone)]
pub struct WorkerRecord {
    pub id: WorkerId,
    pub peer: PeerId,
    pub state: WorkerState,
    pub last_heartbeat: f64,
    pub tasks_completed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Received { from: PeerId, msg: Message },
    Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: PeerId,
    pub msg: Message,
}

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("pool starved at t={time_s:.3}s: no usable workers for {stalled_s:.3}s ({ledger})")]
    PoolStarved {
        time_s: f64,
        stalled_s: f64,
        ledger: String,
    },
    #[error("task {task} exceeded max attempts ({attempts})")]
    PoisonTask { task: TaskId, attempts: u32 },
    #[error(transparent)]
    App(#[from] AppError),
    #[error("invalid master config: {0}")]
    Config(String),
}

/// Summary of a finished (or aborted) run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub epochs: u64,
    pub created: u64,
    pub completed: u64,
    pub reassigned: u64,
    pub duplicates: u64,
    pub makespan_s: f64,
    pub workers_seen: u64,
    pub workers_died: u64,
    /// Messages dropped because the sender was unknown or already dead.
    pub dropped_messages: u64,
    pub app_errors: u64,
    pub tasks_per_worker: BTreeMap<u64, u64>,
}

impl RunReport {
    /// The line-oriented `key=value` form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "created={}", self.created);
        let _ = writeln!(s, "completed={}", self.completed);
        let _ = writeln!(s, "reassigned={}", self.reassigned);
        let _ = writeln!(s, "duplicates={}", self.duplicates);
        let _ = writeln!(s, "makespan_s={}", self.makespan_s);
        let _ = writeln!(s, "workers_seen={}", self.workers_seen);
        let _ = writeln!(s, "workers_died={}", self.workers_died);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct Master<H> {
    config: MasterConfig,
    hooks: H,
    ledger: TaskLedger,
    /// Counters of epochs already closed.
    closed: LedgerCounters,
    workers: BTreeMap<WorkerId, WorkerRecord>,
    peers: BTreeMap<PeerId, WorkerId>,
    next_worker: u64,
    init_blob: Vec<u8>,
    epoch: u64,
    threshold_reached: bool,
    first_dispatch: Option<f64>,
    last_completion: Option<f64>,
    starved_since: Option<f64>,
    finished: bool,
    workers_died: u64,
    dropped: u64,
    app_errors: u64,
}

impl<H: MasterHooks> Master<H> {
    pub fn new(config: MasterConfig, mut hooks: H) -> Result<Self, MasterError> {
        config.validate().map_err(MasterError::Config)?;
        let mut ledger = TaskLedger::new();
        for payload in hooks.setup_initial_tasks() {
            ledger.submit(payload, None);
        }
        let init_blob = hooks.pack_worker_init_data();
        let mut master = Self {
            config,
            hooks,
            ledger,
            closed: LedgerCounters::default(),
            workers: BTreeMap::new(),
            peers: BTreeMap::new(),
            next_worker: 0,
            init_blob,
            epoch: 1,
            threshold_reached: false,
            first_dispatch: None,
            last_completion: None,
            starved_since: None,
            finished: false,
            workers_died: 0,
            dropped: 0,
            app_errors: 0,
        };
        // an epoch without tasks closes immediately
        let mut out = Vec::new();
        master.close_drained_epochs(&mut out)?;
        Ok(master)
    }

    pub fn config(&self) -> &MasterConfig {
        &self.config
    }

    pub fn hooks(&self) -> &H {
        &self.hooks
    }

    pub fn into_hooks(self) -> H {
        self.hooks
    }

    pub fn ledger(&self) -> &TaskLedger {
        &self.ledger
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerRecord> + '_ {
        self.workers.values()
    }

    pub fn worker(&self, id: WorkerId) -> Option<&WorkerRecord> {
        self.workers.get(&id)
    }

    pub fn worker_for_peer(&self, peer: PeerId) -> Option<WorkerId> {
        self.peers.get(&peer).copied()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn threshold_reached(&self) -> bool {
        self.threshold_reached
    }

    fn live_workers(&self) -> usize {
        self.workers
            .values()
            .filter(|w| w.state != WorkerState::Dead)
            .count()
    }

    /// Applies one event and returns the messages to send.
    pub fn on_event(&mut self, now: f64, event: Event) -> Result<Vec<Outbound>, MasterError> {
        let mut out = Vec::new();
        match event {
            Event::Received { from, msg } => self.on_message(now, from, msg, &mut out)?,
            Event::Tick => {
                self.sweep_dead(now)?;
                self.check_starvation(now)?;
            }
        }
        if !self.finished {
            self.dispatch(now, &mut out)?;
        }
        Ok(out)
    }

    fn on_message(
        &mut self,
        now: f64,
        from: PeerId,
        msg: Message,
        out: &mut Vec<Outbound>,
    ) -> Result<(), MasterError> {
        if let Message::Hello { proto_version } = msg {
            if proto_version != PROTO_VERSION || self.peers.contains_key(&from) {
                self.dropped += 1;
                return Ok(());
            }
            self.register(now, from, out);
            return Ok(());
        }
        let Some(&wid) = self.peers.get(&from) else {
            self.dropped += 1;
            return Ok(());
        };
        let worker = self.workers.get_mut(&wid).expect("peer maps to worker");
        let alive = worker.state != WorkerState::Dead;
        if alive {
            worker.last_heartbeat = worker.last_heartbeat.max(now);
        }
        match msg {
            Message::Heartbeat { .. } => {
                if !alive {
                    self.dropped += 1;
                }
            }
            Message::Suspend if alive => {
                worker.state = match worker.state {
                    WorkerState::Idle => WorkerState::Suspended(None),
                    WorkerState::Busy(t) => WorkerState::Suspended(Some(t)),
                    s => s,
                };
            }
            Message::Resume if alive => {
                worker.state = match worker.state {
                    WorkerState::Suspended(None) => WorkerState::Idle,
                    WorkerState::Suspended(Some(t)) => WorkerState::Busy(t),
                    s => s,
                };
            }
            Message::TaskDone {
                task_id,
                result,
                children,
            } => {
                let id = TaskId(task_id);
                worker.state = match worker.state {
                    WorkerState::Busy(t) if t == id => WorkerState::Idle,
                    WorkerState::Suspended(Some(t)) if t == id => WorkerState::Suspended(None),
                    s => s,
                };
                self.on_task_done(
                    now,
                    wid,
                    TaskOutcome {
                        id,
                        result,
                        children,
                    },
                    out,
                )?;
            }
            _ => self.dropped += 1,
        }
        Ok(())
    }

    fn register(&mut self, now: f64, peer: PeerId, out: &mut Vec<Outbound>) {
        let id = WorkerId(self.next_worker);
        self.next_worker += 1;
        self.peers.insert(peer, id);
        self.workers.insert(
            id,
            WorkerRecord {
                id,
                peer,
                state: WorkerState::Idle,
                last_heartbeat: now,
                tasks_completed: 0,
            },
        );
        out.push(Outbound {
            to: peer,
            msg: Message::InitData {
                worker_id: id.0,
                heartbeat_s: self.config.heartbeat_s,
                blob: self.init_blob.clone(),
            },
        });
    }

    fn on_task_done(
        &mut self,
        now: f64,
        wid: WorkerId,
        outcome: TaskOutcome,
        out: &mut Vec<Outbound>,
    ) -> Result<(), MasterError> {
        if self.finished {
            self.ledger.complete(outcome);
            return Ok(());
        }
        if AppError::from_result_payload(&outcome.result).is_some() {
            self.app_errors += 1;
            if self.ledger.requeue_task(outcome.id) {
                self.check_attempts(outcome.id)?;
            }
            return Ok(());
        }
        match self.ledger.state(outcome.id) {
            Some(TaskState::Done) | None => {
                self.ledger.complete(outcome);
                return Ok(());
            }
            _ => {}
        }
        let children = self.hooks.act_on_completed_task(&outcome)?;
        let accepted = self.ledger.complete(TaskOutcome {
            children,
            ..outcome
        });
        debug_assert!(matches!(accepted, Completion::Accepted(_)));
        if let Some(w) = self.workers.get_mut(&wid) {
            w.tasks_completed += 1;
        }
        self.last_completion = Some(now);
        self.starved_since = None;
        self.close_drained_epochs(out)
    }

    fn close_drained_epochs(&mut self, out: &mut Vec<Outbound>) -> Result<(), MasterError> {
        while !self.finished && self.ledger.drained() {
            match self.hooks.finish_epoch()? {
                EpochStep::Finished => {
                    self.finished = true;
                    for w in self.workers.values() {
                        if w.state != WorkerState::Dead {
                            out.push(Outbound {
                                to: w.peer,
                                msg: Message::Shutdown,
                            });
                        }
                    }
                }
                EpochStep::Continue(payloads) => {
                    let c = self.ledger.counters();
                    self.closed.created += c.created;
                    self.closed.completed += c.completed;
                    self.closed.reassigned += c.reassigned;
                    self.closed.duplicates += c.duplicates;
                    self.ledger = TaskLedger::starting_at(self.ledger.next_ordinal());
                    for p in payloads {
                        self.ledger.submit(p, None);
                    }
                    self.epoch += 1;
                    self.init_blob = self.hooks.pack_worker_init_data();
                    for w in self.workers.values() {
                        if w.state != WorkerState::Dead {
                            out.push(Outbound {
                                to: w.peer,
                                msg: Message::InitData {
                                    worker_id: w.id.0,
                                    heartbeat_s: self.config.heartbeat_s,
                                    blob: self.init_blob.clone(),
                                },
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, now: f64, out: &mut Vec<Outbound>) -> Result<(), MasterError> {
        if !self.threshold_reached {
            if self.live_workers() < self.config.min_workers {
                return Ok(());
            }
            self.threshold_reached = true;
        }
        let idle: Vec<WorkerId> = self
            .workers
            .values()
            .filter(|w| w.state == WorkerState::Idle)
            .map(|w| w.id)
            .collect();
        for wid in idle {
            let Some(spec) = self.ledger.next_assignable(wid) else {
                break;
            };
            let w = self.workers.get_mut(&wid).expect("idle worker exists");
            w.state = WorkerState::Busy(spec.id);
            self.first_dispatch.get_or_insert(now);
            out.push(Outbound {
                to: w.peer,
                msg: Message::AssignTask {
                    task_id: spec.id.0,
                    parent: spec.parent.map(|p| p.0),
                    payload: spec.payload,
                },
            });
        }
        Ok(())
    }

    /// Declares silent workers dead and requeues their tasks.
    pub fn sweep_dead(&mut self, now: f64) -> Result<Vec<WorkerId>, MasterError> {
        let timeout = self.config.death_timeout_s();
        let dead: Vec<WorkerId> = self
            .workers
            .values()
            .filter(|w| w.state != WorkerState::Dead && now - w.last_heartbeat > timeout)
            .map(|w| w.id)
            .collect();
        for &wid in &dead {
            self.workers.get_mut(&wid).expect("listed").state = WorkerState::Dead;
            self.workers_died += 1;
            for task in self.ledger.requeue_worker(wid) {
                self.check_attempts(task)?;
            }
        }
        Ok(dead)
    }

    fn check_attempts(&self, task: TaskId) -> Result<(), MasterError> {
        if let (Some(max), Some(entry)) = (self.config.max_attempts, self.ledger.entry(task)) {
            if entry.attempts > max {
                return Err(MasterError::PoisonTask {
                    task,
                    attempts: entry.attempts,
                });
            }
        }
        Ok(())
    }

    fn check_starvation(&mut self, now: f64) -> Result<(), MasterError> {
        let starving = !self.finished && (!self.threshold_reached || self.live_workers() == 0);
        if !starving {
            self.starved_since = None;
            return Ok(());
        }
        let since = *self.starved_since.get_or_insert(now);
        if now - since >= self.config.stall_timeout_s {
            return Err(MasterError::PoolStarved {
                time_s: now,
                stalled_s: now - since,
                ledger: self.ledger.snapshot(),
            });
        }
        Ok(())
    }

    pub fn report(&self) -> RunReport {
        let c = self.ledger.counters();
        let makespan_s = match (self.first_dispatch, self.last_completion) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        RunReport {
            epochs: self.epoch,
            created: self.closed.created + c.created,
            completed: self.closed.completed + c.completed,
            reassigned: self.closed.reassigned + c.reassigned,
            duplicates: self.closed.duplicates + c.duplicates,
            makespan_s,
            workers_seen: self.workers.len() as u64,
            workers_died: self.workers_died,
            dropped_messages: self.dropped,
            app_errors: self.app_errors,
            tasks_per_worker: self
                .workers
                .values()
                .map(|w| (w.id.0, w.tasks_completed))
                .collect(),
        }
    }
}

/// What a master-side transport hands to [`run_master`].
pub enum Incoming {
    Message(PeerId, Message),
    /// Nothing arrived before the deadline.
    Timeout,
    /// The transport can deliver nothing more.
    Closed,
}

/// Master side of a transport backend.
pub trait MasterTransport {
    /// Seconds since the transport started.
    fn now(&self) -> f64;
    fn recv_until(&mut self, deadline_s: f64) -> Incoming;
    fn send(&mut self, to: PeerId, msg: &Message);
}

/// Runs the master event loop until the application finishes.
///
/// Ticks fire every heartbeat interval and drive dead-worker detection.
pub fn run_master<H, T>(config: MasterConfig, hooks: H, transport: &mut T) -> Result<(RunReport, H), MasterError>
where
    H: MasterHooks,
    T: MasterTransport,
{
    let heartbeat = config.heartbeat_s;
    let mut master = Master::new(config, hooks)?;
    let mut next_tick = heartbeat;
    while !master.is_finished() {
        let outbound = match transport.recv_until(next_tick) {
            Incoming::Message(from, msg) => {
                let now = transport.now();
                master.on_event(now, Event::Received { from, msg })?
            }
            Incoming::Timeout | Incoming::Closed => {
                let now = transport.now();
                if now < next_tick {
                    continue;
                }
                next_tick += heartbeat;
                master.on_event(now, Event::Tick)?
            }
        };
        for o in &outbound {
            transport.send(o.to, &o.msg);
        }
    }
    let report = master.report();
    Ok((report, master.into_hooks()))
}
