//! Discrete-event pool simulator.
//!
//! One loop owns the master and every simulated worker. Events are ordered
//! by virtual time and, at equal times, by phase: availability changes
//! first, then worker activity (task completions and heartbeats, by worker),
//! then the master's liveness tick. Messages take `latency` to arrive; with
//! zero latency they are handled inline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use super::trace::{AvailabilityKind, AvailabilityTrace};
use crate::app::{AppError, MasterHooks, WorkerHooks};
use crate::clock::VirtualTime;
use crate::master::{Event, Master, MasterConfig, MasterError, Outbound, PeerId, RunReport, PROTO_VERSION};
use crate::task::{TaskId, TaskSpec};
use crate::transport::{InProcQueue, Message, OrderKey};
use crate::worker::execute_task;

const PHASE_TRACE: u8 = 0;
const PHASE_WORKER: u8 = 1;
const PHASE_MASTER: u8 = 2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Constant one-way message latency in seconds.
    pub latency_s: f64,
    /// Keep a per-message log in the report (for inspection and tests).
    pub record_log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    ToMaster,
    FromMaster,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub time: VirtualTime,
    pub peer: u64,
    pub direction: Direction,
    pub tag: u8,
    pub task: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimReport {
    pub run: RunReport,
    pub makespan_s: f64,
    pub tasks_completed: u64,
    pub tasks_reassigned: u64,
    pub duplicates: u64,
    /// Virtual time at which the master finished.
    pub end_time_s: f64,
    /// Seconds spent computing, summed per trace label.
    pub busy_s: BTreeMap<String, f64>,
    #[serde(skip)]
    pub log: Vec<LogEntry>,
}

impl SimReport {
    pub fn to_kv(&self) -> String {
        let mut s = self.run.to_kv();
        let _ = writeln!(s, "tasks_completed={}", self.tasks_completed);
        let _ = writeln!(s, "tasks_reassigned={}", self.tasks_reassigned);
        let _ = writeln!(s, "end_time_s={}", self.end_time_s);
        for (label, busy) in &self.busy_s {
            let _ = writeln!(s, "busy_s.{label}={busy}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error("simulation stalled at t={time}s: no progress for {stalled}s ({ledger})")]
    Stalled {
        time: VirtualTime,
        stalled: VirtualTime,
        ledger: String,
    },
}

enum SimEvent {
    Availability(usize),
    Finish { peer: usize, gen: u64 },
    Heartbeat { peer: usize, gen: u64 },
    ToMaster { peer: usize, msg: Message },
    ToWorker { peer: usize, msg: Message },
    Tick,
}

struct Running {
    spec: TaskSpec,
    remaining: VirtualTime,
    /// When cost accrual (re)started; `None` while suspended.
    since: Option<VirtualTime>,
}

struct SimWorker<C> {
    label: String,
    up: bool,
    suspended: bool,
    worker_id: Option<u64>,
    heartbeat: Option<VirtualTime>,
    ctx: Option<SharedContext<C>>,
    task: Option<Running>,
    task_gen: u64,
    hb_gen: u64,
    busy: VirtualTime,
}

/// Worker context decoded once per init blob and shared by all workers.
type SharedContext<C> = Rc<Result<C, AppError>>;

struct Sim<'a, M, W: WorkerHooks> {
    master: Master<M>,
    hooks: &'a W,
    queue: InProcQueue<SimEvent>,
    workers: Vec<SimWorker<W::Context>>,
    label_slot: BTreeMap<String, usize>,
    label_rank: BTreeMap<String, u64>,
    ctx_cache: Option<(Vec<u8>, SharedContext<W::Context>)>,
    latency: VirtualTime,
    log: Option<Vec<LogEntry>>,
    now: VirtualTime,
}

fn task_of(msg: &Message) -> Option<u64> {
    match msg {
        Message::AssignTask { task_id, .. } | Message::TaskDone { task_id, .. } => Some(*task_id),
        _ => None,
    }
}

fn order_key(time: VirtualTime, phase: u8, sender: u64, kind: u8) -> OrderKey {
    OrderKey {
        time,
        phase,
        sender,
        kind,
    }
}

impl<'a, M: MasterHooks, W: WorkerHooks> Sim<'a, M, W> {
    fn record(&mut self, peer: usize, direction: Direction, msg: &Message) {
        if let Some(log) = &mut self.log {
            log.push(LogEntry {
                time: self.now,
                peer: peer as u64,
                direction,
                tag: msg.tag(),
                task: task_of(msg),
            });
        }
    }

    fn send_to_master(&mut self, peer: usize, msg: Message) -> Result<(), SimError> {
        if self.latency == VirtualTime::ZERO {
            self.deliver_to_master(peer, msg)
        } else {
            let key = order_key(self.now + self.latency, PHASE_WORKER, peer as u64, 2);
            self.queue.enqueue(key, SimEvent::ToMaster { peer, msg });
            Ok(())
        }
    }

    fn deliver_to_master(&mut self, peer: usize, msg: Message) -> Result<(), SimError> {
        self.record(peer, Direction::ToMaster, &msg);
        let out = self.master.on_event(
            self.now.as_secs_f64(),
            Event::Received {
                from: PeerId(peer as u64),
                msg,
            },
        )?;
        self.route(out);
        Ok(())
    }

    fn route(&mut self, out: Vec<Outbound>) {
        for Outbound { to, msg } in out {
            let peer = to.0 as usize;
            if self.latency == VirtualTime::ZERO {
                self.deliver_to_worker(peer, msg);
            } else {
                let key = order_key(self.now + self.latency, PHASE_WORKER, to.0, 3);
                self.queue.enqueue(key, SimEvent::ToWorker { peer, msg });
            }
        }
    }

    fn context_for(&mut self, blob: &[u8]) -> SharedContext<W::Context> {
        if let Some((cached, ctx)) = &self.ctx_cache {
            if cached.as_slice() == blob {
                return Rc::clone(ctx);
            }
        }
        let ctx = Rc::new(self.hooks.prepare(blob));
        self.ctx_cache = Some((blob.to_vec(), Rc::clone(&ctx)));
        ctx
    }

    fn deliver_to_worker(&mut self, peer: usize, msg: Message) {
        if !self.workers[peer].up {
            return;
        }
        self.record(peer, Direction::FromMaster, &msg);
        match msg {
            Message::InitData {
                worker_id,
                heartbeat_s,
                blob,
            } => {
                let ctx = self.context_for(&blob);
                let now = self.now;
                let w = &mut self.workers[peer];
                w.worker_id = Some(worker_id);
                w.ctx = Some(ctx);
                let h = VirtualTime::from_secs_f64(heartbeat_s);
                if w.heartbeat.is_none() {
                    w.heartbeat = Some(h);
                    let gen = w.hb_gen;
                    let key = order_key(now + h, PHASE_WORKER, peer as u64, 1);
                    self.queue.enqueue(key, SimEvent::Heartbeat { peer, gen });
                }
            }
            Message::AssignTask {
                task_id,
                parent,
                payload,
            } => {
                let cost = VirtualTime::from_secs_f64(self.hooks.task_cost(&payload));
                let spec = TaskSpec {
                    id: TaskId(task_id),
                    parent: parent.map(TaskId),
                    payload,
                };
                let w = &mut self.workers[peer];
                w.task_gen += 1;
                w.task = Some(Running {
                    spec,
                    remaining: cost,
                    since: None,
                });
                if !w.suspended {
                    self.start_accrual(peer);
                }
            }
            Message::Shutdown => {
                let w = &mut self.workers[peer];
                w.up = false;
                w.task = None;
            }
            _ => {}
        }
    }

    fn start_accrual(&mut self, peer: usize) {
        let now = self.now;
        let w = &mut self.workers[peer];
        let Some(task) = &mut w.task else { return };
        task.since = Some(now);
        let gen = w.task_gen;
        let key = order_key(now + task.remaining, PHASE_WORKER, peer as u64, 0);
        self.queue.enqueue(key, SimEvent::Finish { peer, gen });
    }

    fn stop_accrual(&mut self, peer: usize) {
        let now = self.now;
        let w = &mut self.workers[peer];
        w.task_gen += 1;
        if let Some(task) = &mut w.task {
            if let Some(since) = task.since.take() {
                let ran = now - since;
                task.remaining = task.remaining - ran;
                w.busy += ran;
            }
        }
    }

    fn on_availability(&mut self, idx: usize, trace: &AvailabilityTrace) -> Result<(), SimError> {
        let ev = &trace.events()[idx];
        match ev.kind {
            AvailabilityKind::Join => {
                let peer = self.workers.len();
                self.workers.push(SimWorker {
                    label: ev.label.clone(),
                    up: true,
                    suspended: false,
                    worker_id: None,
                    heartbeat: None,
                    ctx: None,
                    task: None,
                    task_gen: 0,
                    hb_gen: 0,
                    busy: VirtualTime::ZERO,
                });
                self.label_slot.insert(ev.label.clone(), peer);
                self.send_to_master(
                    peer,
                    Message::Hello {
                        proto_version: PROTO_VERSION,
                    },
                )?;
            }
            AvailabilityKind::Suspend => {
                let peer = self.label_slot[&ev.label];
                if !self.workers[peer].up {
                    return Ok(());
                }
                self.stop_accrual(peer);
                self.workers[peer].suspended = true;
                self.send_to_master(peer, Message::Suspend)?;
            }
            AvailabilityKind::Resume => {
                let peer = self.label_slot[&ev.label];
                if !self.workers[peer].up {
                    return Ok(());
                }
                self.workers[peer].suspended = false;
                self.send_to_master(peer, Message::Resume)?;
                self.start_accrual(peer);
            }
            AvailabilityKind::Evict => {
                let peer = self.label_slot[&ev.label];
                self.stop_accrual(peer);
                let w = &mut self.workers[peer];
                w.up = false;
                w.hb_gen += 1;
                w.task = None;
            }
        }
        Ok(())
    }

    fn on_finish(&mut self, peer: usize, gen: u64) -> Result<(), SimError> {
        let w = &self.workers[peer];
        if !w.up || w.task_gen != gen {
            return Ok(());
        }
        self.stop_accrual(peer);
        let w = &mut self.workers[peer];
        let task = w.task.take().expect("finishing worker holds a task");
        let ctx = w.ctx.clone();
        let missing = AppError::new("task assigned before init data");
        let ctx_ref = match ctx.as_deref() {
            Some(c) => c.as_ref(),
            None => Err(&missing),
        };
        let outcome = execute_task(self.hooks, ctx_ref, &task.spec);
        self.send_to_master(
            peer,
            Message::TaskDone {
                task_id: outcome.id.0,
                result: outcome.result,
                children: outcome.children,
            },
        )
    }

    fn on_heartbeat(&mut self, peer: usize, gen: u64) -> Result<(), SimError> {
        let w = &self.workers[peer];
        if !w.up || w.hb_gen != gen {
            return Ok(());
        }
        let (Some(id), Some(h)) = (w.worker_id, w.heartbeat) else {
            return Ok(());
        };
        let key = order_key(self.now + h, PHASE_WORKER, peer as u64, 1);
        self.queue.enqueue(key, SimEvent::Heartbeat { peer, gen });
        self.send_to_master(
            peer,
            Message::Heartbeat {
                worker_id: id,
                time_s: self.now.as_secs_f64(),
            },
        )
    }
}

/// Replays `trace` against a master and simulated workers.
///
/// The run is a pure function of its inputs: repeated calls give identical
/// reports and identical application state.
pub fn simulate<M, W>(
    config: MasterConfig,
    master_hooks: M,
    worker_hooks: &W,
    trace: &AvailabilityTrace,
    options: &SimOptions,
) -> Result<(SimReport, M), SimError>
where
    M: MasterHooks,
    W: WorkerHooks,
{
    let heartbeat = VirtualTime::from_secs_f64(config.heartbeat_s);
    let stall = VirtualTime::from_secs_f64(config.stall_timeout_s);
    let master = Master::new(config, master_hooks)?;
    let label_rank = {
        let mut labels: Vec<&str> = trace.events().iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l.to_string(), i as u64))
            .collect()
    };
    let mut sim = Sim {
        master,
        hooks: worker_hooks,
        queue: InProcQueue::new(),
        workers: Vec::new(),
        label_slot: BTreeMap::new(),
        label_rank,
        ctx_cache: None,
        latency: VirtualTime::from_secs_f64(options.latency_s),
        log: options.record_log.then(Vec::new),
        now: VirtualTime::ZERO,
    };
    for (idx, ev) in trace.events().iter().enumerate() {
        let key = order_key(ev.time, PHASE_TRACE, sim.label_rank[&ev.label], ev.kind as u8);
        sim.queue.enqueue(key, SimEvent::Availability(idx));
    }
    let tick_key = order_key(heartbeat, PHASE_MASTER, 0, 0);
    sim.queue.enqueue(tick_key, SimEvent::Tick);

    let mut progress = (0u64, 1u64);
    let mut last_progress = VirtualTime::ZERO;
    while !sim.master.is_finished() {
        let Some((key, event)) = sim.queue.dequeue() else {
            break;
        };
        sim.now = key.time;
        match event {
            SimEvent::Availability(idx) => sim.on_availability(idx, trace)?,
            SimEvent::Finish { peer, gen } => sim.on_finish(peer, gen)?,
            SimEvent::Heartbeat { peer, gen } => sim.on_heartbeat(peer, gen)?,
            SimEvent::ToMaster { peer, msg } => sim.deliver_to_master(peer, msg)?,
            SimEvent::ToWorker { peer, msg } => sim.deliver_to_worker(peer, msg),
            SimEvent::Tick => {
                let out = sim.master.on_event(sim.now.as_secs_f64(), Event::Tick)?;
                sim.route(out);
                let next = order_key(sim.now + heartbeat, PHASE_MASTER, 0, 0);
                sim.queue.enqueue(next, SimEvent::Tick);
                let current = (sim.master.ledger().counters().completed, sim.master.epoch());
                if current != progress {
                    progress = current;
                    last_progress = sim.now;
                } else if sim.now - last_progress > stall {
                    return Err(SimError::Stalled {
                        time: sim.now,
                        stalled: sim.now - last_progress,
                        ledger: sim.master.ledger().snapshot(),
                    });
                }
            }
        }
    }
    let end = sim.now;
    let mut busy_s: BTreeMap<String, f64> = BTreeMap::new();
    for w in &sim.workers {
        *busy_s.entry(w.label.clone()).or_default() += w.busy.as_secs_f64();
    }
    let run = sim.master.report();
    let report = SimReport {
        makespan_s: run.makespan_s,
        tasks_completed: run.completed,
        tasks_reassigned: run.reassigned,
        duplicates: run.duplicates,
        end_time_s: end.as_secs_f64(),
        busy_s,
        log: sim.log.take().unwrap_or_default(),
        run,
    };
    Ok((report, sim.master.into_hooks()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::UniformTasks;
    use crate::churn::trace::{load_trace, static_pool};

    fn run(tasks: u64, cost: f64, trace: &AvailabilityTrace) -> SimReport {
        let app = UniformTasks::new(tasks, cost);
        simulate(MasterConfig::default(), app.clone(), &app, trace, &SimOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn one_worker_four_tasks() {
        assert_eq!(run(4, 1.0, &static_pool(1)).makespan_s, 4.0);
    }

    #[test]
    fn two_workers_four_tasks() {
        assert_eq!(run(4, 1.0, &static_pool(2)).makespan_s, 2.0);
    }

    #[test]
    fn eviction_forces_restart_on_other_worker() {
        // A holds the only task from t=0; A vanishes at t=1 before its t=1
        // heartbeat. Ticks at 1,2,3 see 3-0 <= 3; the tick at 4 declares A
        // dead and B restarts the task from scratch: 4 + 10 = 14.
        let trace = load_trace("0,A,join\n0,B,join\n1,A,evict").unwrap();
        let r = run(1, 10.0, &trace);
        assert_eq!(r.makespan_s, 14.0);
        assert_eq!(r.tasks_reassigned, 1);
        assert_eq!(r.run.workers_died, 1);
        assert_eq!(r.busy_s["A"], 1.0);
        assert_eq!(r.busy_s["B"], 10.0);
    }

    #[test]
    fn suspension_pauses_progress() {
        let trace = load_trace("0,A,join\n2,A,suspend\n5,A,resume").unwrap();
        let r = run(1, 4.0, &trace);
        assert_eq!(r.makespan_s, 7.0);
        assert_eq!(r.tasks_reassigned, 0);
        assert_eq!(r.busy_s["A"], 4.0);
    }

    #[test]
    fn latency_delays_everything() {
        let app = UniformTasks::new(2, 1.0);
        let opts = SimOptions {
            latency_s: 0.5,
            record_log: false,
        };
        let (r, _) = simulate(MasterConfig::default(), app.clone(), &app, &static_pool(1), &opts).unwrap();
        // hello arrives 0.5, task 0 assigned then reaches the worker at 1.0,
        // done at 2.0 reaches the master at 2.5, task 1 round trip ends at 4.5
        assert_eq!(r.makespan_s, 4.0);
        assert_eq!(r.end_time_s, 4.5);
    }

    #[test]
    fn empty_pool_starves() {
        let app = UniformTasks::new(1, 1.0);
        let config = MasterConfig {
            stall_timeout_s: 10.0,
            ..MasterConfig::default()
        };
        let err = simulate(config, app.clone(), &app, &AvailabilityTrace::default(), &SimOptions::default())
            .unwrap_err();
        assert!(matches!(err, SimError::Master(MasterError::PoolStarved { .. })));
    }

    #[test]
    fn forever_suspended_stalls() {
        let app = UniformTasks::new(1, 5.0);
        let config = MasterConfig {
            stall_timeout_s: 20.0,
            ..MasterConfig::default()
        };
        let trace = load_trace("0,A,join\n1,A,suspend").unwrap();
        let err = simulate(config, app.clone(), &app, &trace, &SimOptions::default()).unwrap_err();
        assert!(matches!(err, SimError::Stalled { .. }), "{err}");
    }

    #[test]
    fn heartbeat_gaps_bounded() {
        let app = UniformTasks::new(6, 2.5);
        let opts = SimOptions {
            latency_s: 0.0,
            record_log: true,
        };
        let trace = load_trace("0,A,join\n0.3,B,join\n4,B,suspend\n6,B,resume").unwrap();
        let (r, _) = simulate(MasterConfig::default(), app.clone(), &app, &trace, &opts).unwrap();
        for peer in 0..2u64 {
            let times: Vec<_> = r
                .log
                .iter()
                .filter(|e| e.peer == peer && e.direction == Direction::ToMaster)
                .map(|e| e.time)
                .collect();
            for pair in times.windows(2) {
                assert!(pair[1] - pair[0] <= VirtualTime::from_secs(1));
            }
        }
    }
}
