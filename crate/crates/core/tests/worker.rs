//! Worker runtime against a scripted master on a loopback socket.

use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use mw_core::app::{AppError, TaskResult, WorkerHooks};
use mw_core::task::TaskSpec;
use mw_core::transport::codec::{encode, read_frame, Message};
use mw_core::worker::{run_worker, WorkerSummary};
use std::io::Write;

/// Echoes the payload after sleeping for `sleep`.
#[derive(Clone)]
struct Sleeper {
    sleep: Duration,
}

impl WorkerHooks for Sleeper {
    type Context = ();

    fn prepare(&self, _init: &[u8]) -> Result<(), AppError> {
        Ok(())
    }

    fn execute_task(&self, _ctx: &(), spec: &TaskSpec) -> Result<TaskResult, AppError> {
        thread::sleep(self.sleep);
        Ok(TaskResult {
            result: spec.payload.clone(),
            children: vec![b"child".to_vec()],
        })
    }

    fn task_cost(&self, _payload: &[u8]) -> f64 {
        0.0
    }
}

fn send(stream: &mut TcpStream, msg: &Message) {
    stream.write_all(&encode(msg).unwrap()).unwrap();
}

/// Accepts one worker, expects `Hello`, then plays `script` and records
/// everything the worker sends until it disconnects.
fn scripted(
    hooks: Sleeper,
    script: impl FnOnce(&mut TcpStream) + Send + 'static,
) -> (WorkerSummary, Vec<Message>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let master = thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = stream.try_clone().unwrap();
        assert_eq!(read_frame(&mut reader).unwrap(), Message::Hello { proto_version: 1 });
        let collector = thread::spawn(move || {
            let mut got = Vec::new();
            while let Ok(m) = read_frame(&mut reader) {
                got.push(m);
            }
            got
        });
        script(&mut stream);
        collector.join().unwrap()
    });
    let summary = run_worker(addr, &hooks).unwrap();
    (summary, master.join().unwrap())
}

fn init(heartbeat_s: f64) -> Message {
    Message::InitData {
        worker_id: 7,
        heartbeat_s,
        blob: vec![],
    }
}

fn done_count(msgs: &[Message]) -> usize {
    msgs.iter().filter(|m| matches!(m, Message::TaskDone { .. })).count()
}

#[test]
fn shutdown_before_any_task() {
    let hooks = Sleeper { sleep: Duration::ZERO };
    let (summary, got) = scripted(hooks, |s| {
        send(s, &init(1.0));
        send(s, &Message::Shutdown);
    });
    assert_eq!(summary.tasks_done, 0);
    assert_eq!(summary.worker_id, Some(7));
    assert_eq!(done_count(&got), 0);
}

#[test]
fn one_assignment_one_result() {
    let hooks = Sleeper { sleep: Duration::ZERO };
    let (summary, got) = scripted(hooks, |s| {
        send(s, &init(1.0));
        send(
            s,
            &Message::AssignTask {
                task_id: 3,
                parent: Some(1),
                payload: b"abc".to_vec(),
            },
        );
        // give the worker time to answer before shutting it down
        thread::sleep(Duration::from_millis(200));
        send(s, &Message::Shutdown);
    });
    assert_eq!(summary.tasks_done, 1);
    let done: Vec<_> = got
        .iter()
        .filter_map(|m| match m {
            Message::TaskDone {
                task_id,
                result,
                children,
            } => Some((*task_id, result.clone(), children.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(done, vec![(3, b"abc".to_vec(), vec![b"child".to_vec()])]);
}

#[test]
fn heartbeats_continue_during_long_task() {
    let h = 0.1;
    let hooks = Sleeper {
        sleep: Duration::from_secs_f64(5.0 * h),
    };
    let (summary, got) = scripted(hooks, move |s| {
        send(s, &init(h));
        send(
            s,
            &Message::AssignTask {
                task_id: 0,
                parent: None,
                payload: vec![1],
            },
        );
        thread::sleep(Duration::from_secs_f64(8.0 * h));
        send(s, &Message::Shutdown);
    });
    let done_at = got
        .iter()
        .position(|m| matches!(m, Message::TaskDone { .. }))
        .expect("task reported");
    let beats_before_done = got[..done_at]
        .iter()
        .filter(|m| matches!(m, Message::Heartbeat { worker_id: 7, .. }))
        .count();
    assert!(beats_before_done >= 5, "only {beats_before_done} heartbeats during a 5H task");
    assert!(summary.heartbeats_sent as usize >= beats_before_done);
}

#[test]
fn task_before_init_reports_app_error() {
    let hooks = Sleeper { sleep: Duration::ZERO };
    let (_, got) = scripted(hooks, |s| {
        send(
            s,
            &Message::AssignTask {
                task_id: 1,
                parent: None,
                payload: vec![1],
            },
        );
        thread::sleep(Duration::from_millis(200));
        send(s, &Message::Shutdown);
    });
    let result = got.iter().find_map(|m| match m {
        Message::TaskDone { result, .. } => Some(result.clone()),
        _ => None,
    });
    assert!(AppError::from_result_payload(&result.unwrap()).is_some());
}

#[test]
fn connect_failure_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let hooks = Sleeper { sleep: Duration::ZERO };
    assert!(run_worker(addr, &hooks).is_err());
}
