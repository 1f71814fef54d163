//! Aggregating absorbed photons and solving for ionization balance.

use std::collections::BTreeMap;

use super::grid::Grid;
use super::params::PhysicsParams;
use super::tracer::GridDelta;
use crate::num::Real;

/// Neutral column below which the ionization rate uses a floor instead of
/// dividing by (nearly) zero.
pub const NEUTRAL_FLOOR: f64 = 1e-30;

/// Absorbed photon rate accumulated per cell over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaField<T> {
    absorbed: Vec<T>,
}

impl<T: Real> GammaField<T> {
    pub fn zeros(cells: usize) -> Self {
        Self {
            absorbed: vec![T::zero(); cells],
        }
    }

    pub fn absorbed(&self) -> &[T] {
        &self.absorbed
    }

    /// Photoionization rate per neutral atom:
    /// `A / (max(n_H x, floor) dx^3)`.
    pub fn rate(&self, grid: &Grid<T>, idx: usize) -> T {
        let a = self.absorbed[idx];
        if a == T::zero() {
            return T::zero();
        }
        let neutral_density = (grid.density()[idx] * grid.neutral()[idx]).max(T::lit(NEUTRAL_FLOOR));
        a / (neutral_density * grid.dx().powi(3))
    }
}

/// Folds deltas into `field` in the map's key order.
///
/// The caller picks a key that does not depend on which worker finished
/// first, which makes the floating point sums reproducible.
pub fn apply_deltas<'a, T, K, I>(field: &mut GammaField<T>, grid: &Grid<T>, deltas: I)
where
    T: Real,
    K: Ord + 'a,
    I: IntoIterator<Item = (&'a K, &'a GridDelta<T>)>,
{
    for (_, delta) in deltas {
        for e in &delta.entries {
            let idx = grid.index(e.cell);
            field.absorbed[idx] = field.absorbed[idx] + e.absorbed;
        }
    }
}

/// Convenience wrapper building a fresh field from an ordered map.
pub fn gamma_from_deltas<T: Real, K: Ord>(grid: &Grid<T>, deltas: &BTreeMap<K, GridDelta<T>>) -> GammaField<T> {
    let mut field = GammaField::zeros(grid.cells());
    apply_deltas(&mut field, grid, deltas);
    field
}

/// Root in `[0, 1]` of `gamma x = alpha_n (1 - x)^2`, where
/// `alpha_n = alpha n_H`.
///
/// Uses `x = 2a / (b + sqrt(gamma (gamma + 4a)))` with `a = alpha_n`,
/// `b = 2a + gamma`, which avoids the cancellation of the textbook formula
/// when `gamma >> a`.
pub fn solve_neutral_fraction<T: Real>(gamma: T, alpha_n: T) -> T {
    if gamma <= T::zero() {
        return T::one();
    }
    let two = T::lit(2.0);
    let b = two * alpha_n + gamma;
    let disc = (gamma * (gamma + T::lit(4.0) * alpha_n)).sqrt();
    (two * alpha_n / (b + disc)).min(T::one())
}

/// Updates every cell to its equilibrium neutral fraction under `gamma` and
/// returns the largest absolute change.
pub fn equilibrium_update<T: Real>(grid: &mut Grid<T>, gamma: &GammaField<T>, params: &PhysicsParams<T>) -> T {
    let mut max_change = T::zero();
    let next: Vec<T> = (0..grid.cells())
        .map(|idx| {
            let rate = gamma.rate(grid, idx);
            let x = solve_neutral_fraction(rate, params.alpha * grid.density()[idx]);
            max_change = max_change.max((x - grid.neutral()[idx]).abs());
            x
        })
        .collect();
    grid.set_neutral(next);
    max_change
}
