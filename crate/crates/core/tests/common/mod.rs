//! Reference model of the task ledger, shared by the property suite and the
//! acceptance run.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mw_core::task::{Completion, TaskId, TaskLedger, TaskOutcome, TaskState, WorkerId};

#[derive(Debug, Clone)]
pub enum Op {
    Submit,
    Assign(u64),
    /// Completes the `n`-th created task (modulo count) with `children`
    /// children, whatever its state.
    Complete(usize, usize),
    Requeue(u64),
}

#[derive(Default)]
struct Model {
    states: BTreeMap<u64, TaskState>,
    next: u64,
    completed: u64,
    duplicates: u64,
    reassigned: u64,
}

impl Model {
    fn pending(&self) -> BTreeSet<u64> {
        self.states
            .iter()
            .filter(|(_, s)| **s == TaskState::Pending)
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Replays `ops` against a ledger and the model, checking every invariant
/// after each step.
pub fn check(ops: &[Op]) -> Result<(), String> {
    let mut ledger = TaskLedger::new();
    let mut model = Model::default();
    for (step, op) in ops.iter().enumerate() {
        let fail = |msg: String| Err(format!("step {step} ({op:?}): {msg}"));
        match *op {
            Op::Submit => {
                let id = ledger.submit(vec![0], None);
                if id.0 != model.next {
                    return fail(format!("submit gave {id}, expected {}", model.next));
                }
                model.states.insert(model.next, TaskState::Pending);
                model.next += 1;
            }
            Op::Assign(w) => {
                let expect = model.pending().first().copied();
                let got = ledger.next_assignable(WorkerId(w)).map(|s| s.id.0);
                if got != expect {
                    return fail(format!("assigned {got:?}, FIFO expects {expect:?}"));
                }
                if let Some(id) = got {
                    model.states.insert(id, TaskState::Assigned(WorkerId(w)));
                }
            }
            Op::Complete(pick, children) => {
                if model.next == 0 {
                    continue;
                }
                let id = pick as u64 % model.next;
                let outcome = TaskOutcome {
                    id: TaskId(id),
                    result: vec![],
                    children: vec![vec![1]; children],
                };
                let got = ledger.complete(outcome);
                match model.states[&id] {
                    TaskState::Done => {
                        model.duplicates += 1;
                        if got != Completion::Duplicate {
                            return fail(format!("second completion of {id} accepted"));
                        }
                    }
                    _ => {
                        model.states.insert(id, TaskState::Done);
                        model.completed += 1;
                        let expect: Vec<TaskId> = (model.next..model.next + children as u64).map(TaskId).collect();
                        for c in &expect {
                            model.states.insert(c.0, TaskState::Pending);
                        }
                        model.next += children as u64;
                        if got != Completion::Accepted(expect.clone()) {
                            return fail(format!("got {got:?}, expected children {expect:?}"));
                        }
                        if expect.iter().any(|c| c.0 <= id) {
                            return fail("child ordinal not above parent".into());
                        }
                    }
                }
            }
            Op::Requeue(w) => {
                let expect: Vec<TaskId> = model
                    .states
                    .iter()
                    .filter(|(_, s)| **s == TaskState::Assigned(WorkerId(w)))
                    .map(|(id, _)| TaskId(*id))
                    .collect();
                let got = ledger.requeue_worker(WorkerId(w));
                if got != expect {
                    return fail(format!("requeued {got:?}, expected {expect:?}"));
                }
                for id in &got {
                    model.states.insert(id.0, TaskState::Pending);
                }
                model.reassigned += got.len() as u64;
                if !ledger.assigned_to(WorkerId(w)).is_empty() {
                    return fail("worker still holds tasks after requeue".into());
                }
            }
        }

        let c = ledger.counters();
        if (c.created, c.completed, c.duplicates, c.reassigned)
            != (model.next, model.completed, model.duplicates, model.reassigned)
        {
            return fail(format!("counters {c:?} disagree with the model"));
        }
        let done = model.states.values().filter(|s| **s == TaskState::Done).count() as u64;
        if done != c.completed || c.completed > c.created {
            return fail("completed is not the number of done tasks".into());
        }
        let pending: BTreeSet<u64> = ledger.pending_ids().map(|t| t.0).collect();
        if pending != model.pending() {
            return fail(format!("pending queue {pending:?} differs from the model"));
        }
        for (id, s) in &model.states {
            if ledger.state(TaskId(*id)) != Some(*s) {
                return fail(format!("task {id} is {:?}, model says {s:?}", ledger.state(TaskId(*id))));
            }
        }
        if ledger.all_done() != (c.created > 0 && c.created == c.completed) {
            return fail("all_done disagrees with the counters".into());
        }
    }
    Ok(())
}
