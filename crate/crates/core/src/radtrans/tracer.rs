//! Tracing one ray segment through the grid.
//!
//! A segment starts at the source or at the split point of its parent and
//! walks the cells it crosses (Amanatides–Woo traversal), depositing photons
//! according to each cell's optical depth. It ends when the ray leaves the
//! grid, runs out of photons, or its footprint grows past the split
//! threshold, in which case it hands the remaining photons to four child
//! segments in equal shares. Children start at the split radius on their
//! own pixel direction, so every segment lies on a ray from the source.

use super::geometry::{pixel_direction, split_check, RayAddress};
use super::grid::Grid;
use super::params::PhysicsParams;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegmentTask<T> {
    pub addr: RayAddress,
    pub start: [T; 3],
    /// Photon rate carried into the segment.
    pub photons: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEntry<T> {
    pub cell: [u32; 3],
    /// Photon rate absorbed in the cell.
    pub absorbed: T,
}

/// Sparse per-segment result: only the cells the segment crossed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridDelta<T> {
    pub entries: Vec<DeltaEntry<T>>,
}

impl<T: Real> GridDelta<T> {
    pub fn total_absorbed(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |acc, e| acc + e.absorbed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentEnd {
    Split,
    Cutoff,
    Exited,
    /// The start point was not inside the grid; nothing was traced.
    OutsideGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput<T> {
    pub delta: GridDelta<T>,
    pub children: Vec<RaySegmentTask<T>>,
    pub end: SegmentEnd,
    /// Photons that left the grid or were dropped by the cutoff.
    pub lost: T,
}

/// Index of the cell containing `p` along one axis, taking the side the ray
/// is heading into when `p` lies exactly on a cell face.
fn start_cell<T: Real>(p: T, dir: T, dx: T) -> i64 {
    let scaled = p / dx;
    let floor = scaled.floor();
    let c = floor.to_i64().unwrap_or(i64::MIN);
    if scaled == floor && dir < T::zero() {
        c - 1
    } else {
        c
    }
}

pub fn trace_segment<T: Real>(
    grid: &Grid<T>,
    params: &PhysicsParams<T>,
    task: &RaySegmentTask<T>,
) -> SegmentOutput<T> {
    let n = grid.n() as i64;
    let dx = grid.dx();
    let dir = pixel_direction::<T>(task.addr);
    let start = task.start;
    let mut cell = [0i64; 3];
    for a in 0..3 {
        cell[a] = start_cell(start[a], dir[a], dx);
    }
    let mut out = SegmentOutput {
        delta: GridDelta::default(),
        children: Vec::new(),
        end: SegmentEnd::OutsideGrid,
        lost: T::zero(),
    };
    if cell.iter().any(|c| *c < 0 || *c >= n) {
        out.lost = task.photons;
        return out;
    }

    let mut step = [0i64; 3];
    let mut t_max = [T::infinity(); 3];
    let mut t_delta = [T::infinity(); 3];
    for a in 0..3 {
        if dir[a] > T::zero() {
            step[a] = 1;
            t_max[a] = (T::lit((cell[a] + 1) as f64) * dx - start[a]) / dir[a];
            t_delta[a] = dx / dir[a];
        } else if dir[a] < T::zero() {
            step[a] = -1;
            t_max[a] = (T::lit(cell[a] as f64) * dx - start[a]) / dir[a];
            t_delta[a] = -dx / dir[a];
        }
    }

    let cutoff = params.cutoff();
    let source = grid.source();
    let sigma = params.sigma;
    let mut photons = task.photons;
    let mut t = T::zero();
    loop {
        // ties go to the lowest axis
        let mut axis = 0;
        for a in 1..3 {
            if t_max[a] < t_max[axis] {
                axis = a;
            }
        }
        let t_next = t_max[axis];
        let dl = t_next - t;
        let here = [cell[0] as u32, cell[1] as u32, cell[2] as u32];
        if dl > T::zero() {
            let idx = grid.index(here);
            let tau = grid.density()[idx] * grid.neutral()[idx] * sigma * dl;
            let absorbed = -photons * (-tau).exp_m1();
            photons = photons - absorbed;
            out.delta.entries.push(DeltaEntry {
                cell: here,
                absorbed,
            });
        }
        t = t_next;
        let boundary = T::lit(cell[axis].max(cell[axis] + step[axis]) as f64) * dx;
        cell[axis] += step[axis];
        t_max[axis] = t_max[axis] + t_delta[axis];

        if cell[axis] < 0 || cell[axis] >= n {
            out.end = SegmentEnd::Exited;
            out.lost = photons;
            return out;
        }
        if photons < cutoff || photons <= T::zero() {
            out.end = SegmentEnd::Cutoff;
            out.lost = photons;
            return out;
        }
        let mut p = [
            start[0] + dir[0] * t,
            start[1] + dir[1] * t,
            start[2] + dir[2] * t,
        ];
        p[axis] = boundary;
        let r = ((p[0] - source[0]).powi(2) + (p[1] - source[1]).powi(2) + (p[2] - source[2]).powi(2)).sqrt();
        if split_check(task.addr.level, r, dx, params.f_split) {
            let share = photons / T::lit(4.0);
            out.children = task
                .addr
                .children()
                .into_iter()
                .map(|addr| {
                    let d = pixel_direction::<T>(addr);
                    RaySegmentTask {
                        addr,
                        start: [source[0] + d[0] * r, source[1] + d[1] * r, source[2] + d[2] * r],
                        photons: share,
                    }
                })
                .collect();
            out.end = SegmentEnd::Split;
            return out;
        }
    }
}

/// The level-`base_level` rays leaving the source, each with an equal
/// share of the source rate.
pub fn base_tasks<T: Real>(grid: &Grid<T>, params: &PhysicsParams<T>) -> Vec<RaySegmentTask<T>> {
    let photons = params.base_photons();
    RayAddress::all_at_level(params.base_level)
        .map(|addr| RaySegmentTask {
            addr,
            start: grid.source(),
            photons,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_split(q: f64) -> PhysicsParams<f64> {
        PhysicsParams {
            f_split: 1e12,
            base_level: 0,
            ..PhysicsParams::new(q, 1.0, 1.0)
        }
    }

    fn grid(n: usize, density: f64, x: f64) -> Grid<f64> {
        let mut g = Grid::uniform(n, 1.0, density).unwrap();
        g.set_neutral(vec![x; n * n * n]);
        g
    }

    fn plus_x() -> RayAddress {
        RayAddress::new(0, 0, 0, 0).unwrap()
    }

    #[test]
    fn transparent_grid_conserves_photons() {
        let g = grid(8, 1.0, 0.0);
        let task = RaySegmentTask {
            addr: plus_x(),
            start: [0.0, 3.5, 3.5],
            photons: 10.0,
        };
        let out = trace_segment(&g, &no_split(10.0), &task);
        assert_eq!(out.end, SegmentEnd::Exited);
        assert_eq!(out.delta.entries.len(), 8);
        assert!(out.delta.entries.iter().all(|e| e.absorbed == 0.0));
        assert_eq!(out.lost, 10.0);
    }

    #[test]
    fn exponential_attenuation_matches_recurrence() {
        // independent oracle: N_k = N_0 e^{-k}, absorbed_k = N_0 e^{-(k-1)} (1 - e^{-1})
        let g = grid(10, 1.0, 1.0);
        let q0 = 1000.0;
        let task = RaySegmentTask {
            addr: plus_x(),
            start: [0.0, 4.5, 4.5],
            photons: q0,
        };
        let out = trace_segment(&g, &no_split(6.0 * q0), &task);
        assert_eq!(out.delta.entries.len(), 10);
        for (k, e) in out.delta.entries.iter().enumerate() {
            assert_eq!(e.cell, [k as u32, 4, 4]);
            let expect = q0 * (-(k as f64)).exp() * (1.0 - (-1.0f64).exp());
            assert!((e.absorbed - expect).abs() <= 1e-12 * q0, "cell {k}");
        }
        assert!((out.lost - q0 * (-10.0f64).exp()).abs() < 1e-12 * q0);
    }

    #[test]
    fn cutoff_stops_ray() {
        let g = grid(40, 1.0, 1.0);
        let params = PhysicsParams {
            eps_cut: 1e-3,
            ..no_split(6.0)
        };
        // base photons 1, cutoff 1e-3: e^-6 > 1e-3 > e^-7
        let task = RaySegmentTask {
            addr: plus_x(),
            start: [0.0, 4.5, 4.5],
            photons: 1.0,
        };
        let out = trace_segment(&g, &params, &task);
        assert_eq!(out.end, SegmentEnd::Cutoff);
        assert_eq!(out.delta.entries.len(), 7);
    }

    #[test]
    fn split_conserves_photons() {
        let g = grid(16, 1.0, 0.3);
        let params = PhysicsParams::new(24.0, 0.5, 1.0);
        let task = RaySegmentTask {
            addr: RayAddress::new(0, 1, 1, 0).unwrap(),
            start: g.source(),
            photons: 1.0,
        };
        let out = trace_segment(&g, &params, &task);
        assert_eq!(out.end, SegmentEnd::Split);
        assert_eq!(out.children.len(), 4);
        let kids: f64 = out.children.iter().map(|c| c.photons).sum();
        let total = kids + out.delta.total_absorbed();
        assert!((total - 1.0).abs() < 1e-14);
        // every child sits on its own radial line, at the split radius
        let s = g.source();
        let radius = |p: [f64; 3]| (0..3).map(|a| (p[a] - s[a]).powi(2)).sum::<f64>().sqrt();
        let r = radius(out.children[0].start);
        assert!(r * r * super::super::geometry::pixel_solid_angle::<f64>(1) > 1.0);
        for (c, a) in out.children.iter().zip(task.addr.children()) {
            assert_eq!(c.addr, a);
            assert!((radius(c.start) - r).abs() < 1e-12);
            let d = pixel_direction::<f64>(a);
            for k in 0..3 {
                assert!((c.start[k] - s[k] - d[k] * r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outside_start_is_degenerate() {
        let g = grid(4, 1.0, 1.0);
        let task = RaySegmentTask {
            addr: plus_x(),
            start: [5.0, 1.0, 1.0],
            photons: 1.0,
        };
        let out = trace_segment(&g, &no_split(1.0), &task);
        assert_eq!(out.end, SegmentEnd::OutsideGrid);
        assert!(out.delta.entries.is_empty());
        assert!(out.children.is_empty());
    }

    #[test]
    fn starting_on_upper_face_heading_inward() {
        let g = grid(4, 1.0, 1.0);
        let task = RaySegmentTask {
            addr: RayAddress::new(1, 0, 0, 0).unwrap(),
            start: [4.0, 1.5, 1.5],
            photons: 1.0,
        };
        let out = trace_segment(&g, &no_split(1.0), &task);
        let cells: Vec<_> = out.delta.entries.iter().map(|e| e.cell[0]).collect();
        assert_eq!(cells, vec![3, 2, 1, 0]);
    }

    #[test]
    fn corner_source_skips_zero_length_cells() {
        let g = grid(8, 1.0, 1.0);
        let params = no_split(1.0);
        for addr in RayAddress::all_at_level(2) {
            let task = RaySegmentTask {
                addr,
                start: g.source(),
                photons: 1.0,
            };
            let out = trace_segment(&g, &params, &task);
            assert!(out.delta.entries.len() <= 3 * 8);
            let mut cells: Vec<_> = out.delta.entries.iter().map(|e| e.cell).collect();
            let len = cells.len();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), len, "{addr}: a cell was visited twice");
        }
    }

    #[test]
    fn f32_trace_runs() {
        let mut g = Grid::<f32>::uniform(6, 1.0, 1.0).unwrap();
        g.set_neutral(vec![0.5; 216]);
        let params = PhysicsParams::new(24.0f32, 1.0, 1.0);
        let total: f32 = base_tasks(&g, &params)
            .iter()
            .map(|t| {
                let o = trace_segment(&g, &params, t);
                o.delta.total_absorbed() + o.lost + o.children.iter().map(|c| c.photons).sum::<f32>()
            })
            .sum();
        assert!((total - 24.0).abs() < 1e-4);
    }
}
