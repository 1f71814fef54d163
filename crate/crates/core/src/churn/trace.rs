//! Worker availability traces.
//!
//! A trace is CSV text, one `time_s,worker_label,kind` event per line, with
//! `#` comments and blank lines ignored. Each label follows the lifecycle
//!
//! ```text
//! absent --join--> up --suspend--> suspended --resume--> up
//!   ^               |                  |
//!   +-----evict-----+------evict-------+
//! ```
//!
//! so a label may rejoin after an eviction (it then registers as a new
//! worker).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::clock::VirtualTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AvailabilityKind {
    Join,
    Suspend,
    Resume,
    Evict,
}

impl AvailabilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Join => "join",
            Self::Suspend => "suspend",
            Self::Resume => "resume",
            Self::Evict => "evict",
        }
    }
}

impl FromStr for AvailabilityKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "join" => Ok(Self::Join),
            "suspend" => Ok(Self::Suspend),
            "resume" => Ok(Self::Resume),
            "evict" => Ok(Self::Evict),
            _ => Err(()),
        }
    }
}

impl fmt::Display for AvailabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityEvent {
    pub time: VirtualTime,
    pub label: String,
    pub kind: AvailabilityKind,
    /// 1-based source line, 0 for generated events.
    pub line: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {kind} for '{label}' is out of sequence ({state})")]
    Sequence {
        line: usize,
        label: String,
        kind: AvailabilityKind,
        state: &'static str,
    },
}

/// A validated trace, sorted by time with ties in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AvailabilityTrace {
    events: Vec<AvailabilityEvent>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LabelState {
    Absent,
    Up,
    Suspended,
}

impl LabelState {
    fn name(self) -> &'static str {
        match self {
            Self::Absent => "not joined",
            Self::Up => "running",
            Self::Suspended => "suspended",
        }
    }
}

impl AvailabilityTrace {
    /// Sorts and validates events.
    ///
    /// Sequencing is checked in the order the simulator replays events:
    /// time, then label, then kind (`join < suspend < resume < evict`).
    pub fn new(mut events: Vec<AvailabilityEvent>) -> Result<Self, TraceError> {
        let mut replay: Vec<&AvailabilityEvent> = events.iter().collect();
        replay.sort_by(|a, b| (a.time, &a.label, a.kind).cmp(&(b.time, &b.label, b.kind)));
        let mut states: BTreeMap<&str, LabelState> = BTreeMap::new();
        for ev in replay {
            let state = states.entry(ev.label.as_str()).or_insert(LabelState::Absent);
            let next = match (*state, ev.kind) {
                (LabelState::Absent, AvailabilityKind::Join) => LabelState::Up,
                (LabelState::Up, AvailabilityKind::Suspend) => LabelState::Suspended,
                (LabelState::Suspended, AvailabilityKind::Resume) => LabelState::Up,
                (LabelState::Up | LabelState::Suspended, AvailabilityKind::Evict) => {
                    LabelState::Absent
                }
                (s, kind) => {
                    return Err(TraceError::Sequence {
                        line: ev.line,
                        label: ev.label.clone(),
                        kind,
                        state: s.name(),
                    })
                }
            };
            *state = next;
        }
        events.sort_by_key(|e| e.time);
        Ok(Self { events })
    }

    pub fn events(&self) -> &[AvailabilityEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# time_s,worker_label,kind\n");
        for e in &self.events {
            let _ = writeln!(s, "{},{},{}", e.time, e.label, e.kind);
        }
        s
    }
}

/// Parses trace CSV text.
pub fn load_trace(text: &str) -> Result<AvailabilityTrace, TraceError> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let err = |msg: String| TraceError::Parse { line, msg };
        let [time, label, kind] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let time = VirtualTime::parse_decimal(time)
            .ok_or_else(|| err(format!("invalid time '{time}'")))?;
        if label.is_empty() {
            return Err(err("empty worker label".into()));
        }
        let kind = kind
            .parse()
            .map_err(|()| err(format!("unknown event kind '{kind}'")))?;
        events.push(AvailabilityEvent {
            time,
            label: label.to_string(),
            kind,
            line,
        });
    }
    AvailabilityTrace::new(events)
}

/// Uniform draw in `[0, 1)` from the top 53 bits of a SplitMix64 output.
fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Rounds seconds to whole milliseconds so traces print compactly.
fn millis(secs: f64) -> VirtualTime {
    VirtualTime((secs * 1e3).round() as u64 * 1_000_000)
}

/// Generates a reproducible churn trace.
///
/// Worker `w<i>` (zero-padded) joins at `U_i * join_spread_s` and, unless
/// `mean_uptime_s` is `0` (meaning "never evicted"), is evicted after an
/// exponentially distributed uptime `-mean_uptime_s * ln(1 - V_i)`. `U_i`
/// and `V_i` are consecutive draws from SplitMix64 seeded with `seed`, and
/// all times are rounded to milliseconds.
pub fn synth_trace(
    n_workers: usize,
    join_spread_s: f64,
    mean_uptime_s: f64,
    seed: u64,
) -> AvailabilityTrace {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let width = n_workers.saturating_sub(1).to_string().len();
    let mut events = Vec::with_capacity(2 * n_workers);
    for i in 0..n_workers {
        let label = format!("w{i:0width$}");
        let join = millis(unit(&mut rng) * join_spread_s);
        let uptime = unit(&mut rng);
        events.push(AvailabilityEvent {
            time: join,
            label: label.clone(),
            kind: AvailabilityKind::Join,
            line: 0,
        });
        if mean_uptime_s > 0.0 {
            let up = -mean_uptime_s * (1.0 - uptime).ln();
            // at least one millisecond of life so the join is observed
            let evict = join + millis(up).max(VirtualTime(1_000_000));
            events.push(AvailabilityEvent {
                time: evict,
                label,
                kind: AvailabilityKind::Evict,
                line: 0,
            });
        }
    }
    AvailabilityTrace::new(events).expect("generated traces are well-formed")
}

/// `n` workers that join at time zero and never leave.
pub fn static_pool(n: usize) -> AvailabilityTrace {
    synth_trace(n, 0.0, 0.0, 0)
}
