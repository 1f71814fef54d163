//! The photoionization application on top of the master-worker hooks.
//!
//! Each epoch casts the base rays against a frozen snapshot of the grid.
//! A task traces one ray segment; its result is the sparse delta of that
//! segment and its children are the four split rays, if any. When the epoch
//! drains, the master folds all deltas keyed by ray address, solves for
//! equilibrium and either stops or starts the next epoch with the updated
//! snapshot.

use std::collections::BTreeMap;

use serde::Serialize;

use super::equilibrium::{equilibrium_update, gamma_from_deltas};
use super::geometry::{RayAddress, MAX_LEVEL};
use super::grid::Grid;
use super::params::PhysicsParams;
use super::tracer::{base_tasks, trace_segment, DeltaEntry, GridDelta, RaySegmentTask};
use crate::app::{AppError, EpochStep, MasterHooks, TaskResult, WorkerHooks};
use crate::churn::{simulate, AvailabilityTrace, SimError, SimOptions, SimReport};
use crate::master::MasterConfig;
use crate::task::{TaskOutcome, TaskSpec};

/// Encoded size of a ray segment task.
pub const TASK_PAYLOAD_LEN: usize = 1 + 1 + 4 + 4 + 3 * 8 + 8;
/// Encoded size of one delta entry.
pub const DELTA_ENTRY_LEN: usize = 3 * 4 + 8;

struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, what }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], AppError> {
        if self.bytes.len() < N {
            return Err(AppError::new(format!("{} is truncated", self.what)));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn u8(&mut self) -> Result<u8, AppError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, AppError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, AppError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>, AppError> {
        if self.bytes.len() / 8 < count {
            return Err(AppError::new(format!("{} is truncated", self.what)));
        }
        (0..count).map(|_| self.f64()).collect()
    }

    fn addr(&mut self) -> Result<RayAddress, AppError> {
        let (face, level, ix, iy) = (self.u8()?, self.u8()?, self.u32()?, self.u32()?);
        RayAddress::new(face, level, ix, iy)
            .ok_or_else(|| AppError::new(format!("{}: invalid ray address", self.what)))
    }

    fn finish(self) -> Result<(), AppError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(AppError::new(format!("{} has {} trailing bytes", self.what, self.bytes.len())))
        }
    }
}

fn put_addr(out: &mut Vec<u8>, addr: RayAddress) {
    out.push(addr.face);
    out.push(addr.level);
    out.extend_from_slice(&addr.ix.to_le_bytes());
    out.extend_from_slice(&addr.iy.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_task(task: &RaySegmentTask<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(TASK_PAYLOAD_LEN);
    put_addr(&mut out, task.addr);
    put_f64s(&mut out, &task.start);
    put_f64s(&mut out, &[task.photons]);
    out
}

pub fn decode_task(bytes: &[u8]) -> Result<RaySegmentTask<f64>, AppError> {
    let mut r = Reader::new(bytes, "ray task payload");
    let addr = r.addr()?;
    let start = [r.f64()?, r.f64()?, r.f64()?];
    let photons = r.f64()?;
    r.finish()?;
    if !(photons >= 0.0 && photons.is_finite()) {
        return Err(AppError::new("ray task carries an invalid photon rate"));
    }
    if addr.level >= MAX_LEVEL {
        return Err(AppError::new("ray task is too deep to split further"));
    }
    Ok(RaySegmentTask { addr, start, photons })
}

/// Result payload: the segment's address followed by its delta entries.
pub fn encode_delta(addr: RayAddress, delta: &GridDelta<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + delta.entries.len() * DELTA_ENTRY_LEN);
    put_addr(&mut out, addr);
    out.extend_from_slice(&(delta.entries.len() as u32).to_le_bytes());
    for e in &delta.entries {
        for c in e.cell {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&e.absorbed.to_le_bytes());
    }
    out
}

pub fn decode_delta(bytes: &[u8]) -> Result<(RayAddress, GridDelta<f64>), AppError> {
    let mut r = Reader::new(bytes, "delta payload");
    let addr = r.addr()?;
    let count = r.u32()? as usize;
    if r.bytes.len() != count.saturating_mul(DELTA_ENTRY_LEN) {
        return Err(AppError::new("delta payload length does not match its entry count"));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let cell = [r.u32()?, r.u32()?, r.u32()?];
        let absorbed = r.f64()?;
        entries.push(DeltaEntry { cell, absorbed });
    }
    r.finish()?;
    Ok((addr, GridDelta { entries }))
}

/// Init blob: the grid snapshot and the physics parameters.
pub fn encode_snapshot(grid: &Grid<f64>, params: &PhysicsParams<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + grid.cells() * 16);
    out.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    put_f64s(&mut out, &[grid.dx()]);
    put_f64s(&mut out, &grid.source());
    put_f64s(
        &mut out,
        &[params.source_rate, params.sigma, params.alpha, params.eps_cut, params.f_split],
    );
    out.push(params.base_level);
    put_f64s(&mut out, &[params.tol]);
    out.extend_from_slice(&params.max_epochs.to_le_bytes());
    put_f64s(&mut out, grid.density());
    put_f64s(&mut out, grid.neutral());
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(Grid<f64>, PhysicsParams<f64>), AppError> {
    let mut r = Reader::new(bytes, "grid snapshot");
    let n = r.u32()? as usize;
    let dx = r.f64()?;
    let source = [r.f64()?, r.f64()?, r.f64()?];
    let (q, sigma, alpha) = (r.f64()?, r.f64()?, r.f64()?);
    let params = PhysicsParams {
        eps_cut: r.f64()?,
        f_split: r.f64()?,
        base_level: r.u8()?,
        tol: r.f64()?,
        max_epochs: r.u32()?,
        ..PhysicsParams::new(q, sigma, alpha)
    };
    let cells = n
        .checked_pow(3)
        .ok_or_else(|| AppError::new("grid snapshot size overflows"))?;
    let density = r.f64_vec(cells)?;
    let neutral = r.f64_vec(cells)?;
    r.finish()?;
    let grid = Grid::new(n, dx, density, neutral, source).map_err(|e| AppError::new(e.to_string()))?;
    params.validate().map_err(AppError::new)?;
    Ok((grid, params))
}

/// Per-epoch bookkeeping kept by the master.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpochStats {
    pub tasks: u64,
    pub splits: u64,
    pub max_entries: usize,
    pub delta_bytes: u64,
    pub max_change: f64,
}

/// Master half of the application.
#[derive(Debug, Clone)]
pub struct StromgrenMaster {
    grid: Grid<f64>,
    params: PhysicsParams<f64>,
    deltas: BTreeMap<RayAddress, GridDelta<f64>>,
    visits: Vec<u32>,
    last_visits: Vec<u32>,
    current: EpochStats,
    epochs: Vec<EpochStats>,
    converged: bool,
}

impl StromgrenMaster {
    pub fn new(grid: Grid<f64>, params: PhysicsParams<f64>) -> Result<Self, AppError> {
        params.validate().map_err(AppError::new)?;
        let cells = grid.cells();
        Ok(Self {
            grid,
            params,
            deltas: BTreeMap::new(),
            visits: vec![0; cells],
            last_visits: Vec::new(),
            current: EpochStats::default(),
            epochs: Vec::new(),
            converged: false,
        })
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn params(&self) -> &PhysicsParams<f64> {
        &self.params
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Finished epochs in order.
    pub fn epoch_stats(&self) -> &[EpochStats] {
        &self.epochs
    }

    /// Number of segments that crossed each cell in the last finished epoch.
    pub fn last_visits(&self) -> &[u32] {
        &self.last_visits
    }

    fn base_payloads(&self) -> Vec<Vec<u8>> {
        base_tasks(&self.grid, &self.params).iter().map(encode_task).collect()
    }
}

impl MasterHooks for StromgrenMaster {
    fn setup_initial_tasks(&mut self) -> Vec<Vec<u8>> {
        self.base_payloads()
    }

    fn pack_worker_init_data(&self) -> Vec<u8> {
        encode_snapshot(&self.grid, &self.params)
    }

    fn act_on_completed_task(&mut self, outcome: &TaskOutcome) -> Result<Vec<Vec<u8>>, AppError> {
        let (addr, delta) = decode_delta(&outcome.result)?;
        let n = self.grid.n() as u32;
        if delta.entries.iter().any(|e| e.cell.iter().any(|c| *c >= n)) {
            return Err(AppError::new(format!("delta of {addr} names a cell outside the grid")));
        }
        for child in &outcome.children {
            decode_task(child)?;
        }
        self.current.tasks += 1;
        self.current.splits += u64::from(!outcome.children.is_empty());
        self.current.max_entries = self.current.max_entries.max(delta.entries.len());
        self.current.delta_bytes += outcome.result.len() as u64;
        for e in &delta.entries {
            let idx = self.grid.index(e.cell);
            self.visits[idx] = self.visits[idx].saturating_add(1);
        }
        if self.deltas.insert(addr, delta).is_some() {
            return Err(AppError::new(format!("ray {addr} completed twice in one epoch")));
        }
        Ok(outcome.children.clone())
    }

    fn finish_epoch(&mut self) -> Result<EpochStep, AppError> {
        let gamma = gamma_from_deltas(&self.grid, &self.deltas);
        let change = equilibrium_update(&mut self.grid, &gamma, &self.params);
        self.deltas.clear();
        let mut stats = std::mem::take(&mut self.current);
        stats.max_change = change;
        self.epochs.push(stats);
        self.last_visits = std::mem::replace(&mut self.visits, vec![0; self.grid.cells()]);
        if change < self.params.tol {
            self.converged = true;
            return Ok(EpochStep::Finished);
        }
        if self.epochs.len() >= self.params.max_epochs as usize {
            return Ok(EpochStep::Finished);
        }
        Ok(EpochStep::Continue(self.base_payloads()))
    }
}

/// Worker half of the application. Every segment costs `cost_s` virtual
/// seconds in simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StromgrenWorker {
    pub cost_s: f64,
}

impl Default for StromgrenWorker {
    fn default() -> Self {
        Self { cost_s: 1.0 }
    }
}

impl WorkerHooks for StromgrenWorker {
    type Context = (Grid<f64>, PhysicsParams<f64>);

    fn prepare(&self, init_data: &[u8]) -> Result<Self::Context, AppError> {
        decode_snapshot(init_data)
    }

    fn execute_task(&self, ctx: &Self::Context, spec: &TaskSpec) -> Result<TaskResult, AppError> {
        let (grid, params) = ctx;
        let task = decode_task(&spec.payload)?;
        let out = trace_segment(grid, params, &task);
        Ok(TaskResult {
            result: encode_delta(task.addr, &out.delta),
            children: out.children.iter().map(encode_task).collect(),
        })
    }

    fn task_cost(&self, _payload: &[u8]) -> f64 {
        self.cost_s
    }
}

/// Outcome of a simulated photoionization run.
#[derive(Debug, Clone)]
pub struct PhotoionizationRun {
    pub grid: Grid<f64>,
    pub converged: bool,
    pub epochs: Vec<EpochStats>,
    pub last_visits: Vec<u32>,
    pub sim: SimReport,
}

/// Runs the epoch loop to equilibrium inside the pool simulator.
pub fn run_photoionization(
    grid: Grid<f64>,
    params: PhysicsParams<f64>,
    config: MasterConfig,
    trace: &AvailabilityTrace,
    worker: &StromgrenWorker,
    options: &SimOptions,
) -> Result<PhotoionizationRun, SimError> {
    let master = StromgrenMaster::new(grid, params).map_err(|e| SimError::Master(e.into()))?;
    let (sim, master) = simulate(config, master, worker, trace, options)?;
    Ok(PhotoionizationRun {
        converged: master.converged,
        epochs: master.epochs,
        last_visits: master.last_visits,
        grid: master.grid,
        sim,
    })
}
