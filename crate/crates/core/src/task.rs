//! Task identity, payloads and the master-side ledger.
//!
//! The ledger is the single source of truth for task state. Every task moves
//! through `Pending -> Assigned -> Done`, may bounce back to `Pending` when
//! its worker dies, and is counted as completed exactly once no matter how
//! many copies of its result arrive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

/// Ordinal of a task within a run, assigned in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Master-assigned identity of one worker connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct WorkerId(pub u64);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A unit of work as handed to a worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Absent for tasks created by the initial setup.
    pub parent: Option<TaskId>,
    pub payload: Vec<u8>,
}

/// Result of one task, possibly spawning dependent children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutcome {
    pub id: TaskId,
    pub result: Vec<u8>,
    /// Payloads for child tasks, in the order their ids will be assigned.
    pub children: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Pending,
    Assigned(WorkerId),
    Done,
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub spec: TaskSpec,
    pub state: TaskState,
    /// Attempt number of the next (or current) execution, starting at 1.
    pub attempts: u32,
}

/// Result of handing an outcome to [`TaskLedger::complete`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    /// First completion of the task; holds the spawned child ids.
    Accepted(Vec<TaskId>),
    /// The task was already done (or never existed); nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LedgerCounters {
    pub created: u64,
    pub completed: u64,
    pub reassigned: u64,
    pub duplicates: u64,
}

/// Authoritative task-state machine with exactly-once completion accounting.
#[derive(Debug, Clone, Default)]
pub struct TaskLedger {
    tasks: BTreeMap<TaskId, LedgerEntry>,
    pending: BTreeSet<TaskId>,
    next_ordinal: u64,
    counters: LedgerCounters,
}

impl TaskLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fresh ledger whose first task gets ordinal `first`.
    ///
    /// Successive epochs use this so ids never repeat within a run and late
    /// results from an earlier epoch cannot alias a live task.
    pub fn starting_at(first: u64) -> Self {
        Self {
            next_ordinal: first,
            ..Self::default()
        }
    }

    pub fn submit(&mut self, payload: Vec<u8>, parent: Option<TaskId>) -> TaskId {
        let id = TaskId(self.next_ordinal);
        self.next_ordinal += 1;
        self.tasks.insert(
            id,
            LedgerEntry {
                spec: TaskSpec {
                    id,
                    parent,
                    payload,
                },
                state: TaskState::Pending,
                attempts: 1,
            },
        );
        self.pending.insert(id);
        self.counters.created += 1;
        id
    }

    /// Hands the lowest pending task to `worker`.
    pub fn next_assignable(&mut self, worker: WorkerId) -> Option<TaskSpec> {
        let id = self.pending.pop_first()?;
        let entry = self.tasks.get_mut(&id).expect("pending task is tracked");
        entry.state = TaskState::Assigned(worker);
        Some(entry.spec.clone())
    }

    /// Marks a task done and spawns its children.
    ///
    /// First completion wins. A late result for a task already done is
    /// dropped and counted as a duplicate. A result for a task that was
    /// requeued but not yet finished elsewhere is accepted.
    pub fn complete(&mut self, outcome: TaskOutcome) -> Completion {
        let Some(entry) = self.tasks.get_mut(&outcome.id) else {
            self.counters.duplicates += 1;
            return Completion::Duplicate;
        };
        match entry.state {
            TaskState::Done => {
                self.counters.duplicates += 1;
                return Completion::Duplicate;
            }
            TaskState::Pending => {
                self.pending.remove(&outcome.id);
            }
            TaskState::Assigned(_) => {}
        }
        entry.state = TaskState::Done;
        self.counters.completed += 1;
        let children = outcome
            .children
            .into_iter()
            .map(|payload| self.submit(payload, Some(outcome.id)))
            .collect();
        Completion::Accepted(children)
    }

    /// Returns every task held by `worker` to the pending queue.
    pub fn requeue_worker(&mut self, worker: WorkerId) -> Vec<TaskId> {
        let mut requeued = Vec::new();
        for (id, entry) in self.tasks.iter_mut() {
            if entry.state == TaskState::Assigned(worker) {
                entry.state = TaskState::Pending;
                entry.attempts += 1;
                self.pending.insert(*id);
                requeued.push(*id);
            }
        }
        self.counters.reassigned += requeued.len() as u64;
        requeued
    }

    /// Returns a single assigned task to the pending queue, e.g. after an
    /// application error reported by the worker.
    pub fn requeue_task(&mut self, id: TaskId) -> bool {
        match self.tasks.get_mut(&id) {
            Some(entry) if matches!(entry.state, TaskState::Assigned(_)) => {
                entry.state = TaskState::Pending;
                entry.attempts += 1;
                self.pending.insert(id);
                self.counters.reassigned += 1;
                true
            }
            _ => false,
        }
    }

    pub fn all_done(&self) -> bool {
        self.counters.created > 0 && self.counters.created == self.counters.completed
    }

    /// True when nothing is left to do, including the empty ledger.
    pub fn drained(&self) -> bool {
        self.counters.created == self.counters.completed
    }

    pub fn counters(&self) -> LedgerCounters {
        self.counters
    }

    pub fn state(&self, id: TaskId) -> Option<TaskState> {
        self.tasks.get(&id).map(|e| e.state)
    }

    pub fn entry(&self, id: TaskId) -> Option<&LedgerEntry> {
        self.tasks.get(&id)
    }

    pub fn pending_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.pending.iter().copied()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn next_ordinal(&self) -> u64 {
        self.next_ordinal
    }

    pub fn entries(&self) -> impl Iterator<Item = &LedgerEntry> + '_ {
        self.tasks.values()
    }

    /// Tasks currently assigned to `worker`, ascending.
    pub fn assigned_to(&self, worker: WorkerId) -> Vec<TaskId> {
        self.tasks
            .iter()
            .filter(|(_, e)| e.state == TaskState::Assigned(worker))
            .map(|(id, _)| *id)
            .collect()
    }

    /// One-line summary used in stall diagnostics.
    pub fn snapshot(&self) -> String {
        let assigned = self
            .tasks
            .values()
            .filter(|e| matches!(e.state, TaskState::Assigned(_)))
            .count();
        let c = self.counters;
        format!(
            "created={} completed={} pending={} assigned={} reassigned={} duplicates={}",
            c.created,
            c.completed,
            self.pending.len(),
            assigned,
            c.reassigned,
            c.duplicates
        )
    }
}
