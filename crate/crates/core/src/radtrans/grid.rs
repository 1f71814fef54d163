//! Cell field of the region: hydrogen density and neutral fraction.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("grid needs at least one cell per axis")]
    Empty,
    #[error("cell size must be positive and finite")]
    CellSize,
    #[error("expected {expected} cells, got {got}")]
    Length { expected: usize, got: usize },
    #[error("cell {0} has negative or non-finite density")]
    Density(usize),
    #[error("cell {0} has a neutral fraction outside [0, 1]")]
    Neutral(usize),
    #[error("source must lie strictly inside the grid")]
    Source,
}

/// An `n x n x n` grid of cubic cells of edge `dx`.
///
/// Cell `(i, j, k)` spans `[i dx, (i+1) dx)` and so on; arrays are stored
/// with `i` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n: usize,
    dx: T,
    density: Vec<T>,
    neutral: Vec<T>,
    source: [T; 3],
}

impl<T: Real> Grid<T> {
    pub fn new(n: usize, dx: T, density: Vec<T>, neutral: Vec<T>, source: [T; 3]) -> Result<Self, GridError> {
        if n == 0 {
            return Err(GridError::Empty);
        }
        if !(dx > T::zero() && dx.is_finite()) {
            return Err(GridError::CellSize);
        }
        let cells = n * n * n;
        for v in [&density, &neutral] {
            if v.len() != cells {
                return Err(GridError::Length {
                    expected: cells,
                    got: v.len(),
                });
            }
        }
        if let Some(i) = density.iter().position(|d| !(*d >= T::zero() && d.is_finite())) {
            return Err(GridError::Density(i));
        }
        if let Some(i) = neutral
            .iter()
            .position(|x| !(*x >= T::zero() && *x <= T::one()))
        {
            return Err(GridError::Neutral(i));
        }
        let extent = dx * T::count(n);
        if source.iter().any(|s| !(*s > T::zero() && *s < extent)) {
            return Err(GridError::Source);
        }
        Ok(Self {
            n,
            dx,
            density,
            neutral,
            source,
        })
    }

    /// Fully neutral gas of constant density with the source at the center.
    pub fn uniform(n: usize, dx: T, density: T) -> Result<Self, GridError> {
        let center = dx * T::count(n) / T::lit(2.0);
        let cells = n * n * n;
        Self::new(n, dx, vec![density; cells], vec![T::one(); cells], [center; 3])
    }

    pub fn with_source(mut self, source: [T; 3]) -> Result<Self, GridError> {
        let extent = self.dx * T::count(self.n);
        if source.iter().any(|s| !(*s > T::zero() && *s < extent)) {
            return Err(GridError::Source);
        }
        self.source = source;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn source(&self) -> [T; 3] {
        self.source
    }

    pub fn cells(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn index(&self, cell: [u32; 3]) -> usize {
        let n = self.n;
        cell[0] as usize + n * (cell[1] as usize + n * cell[2] as usize)
    }

    pub fn coords(&self, index: usize) -> [u32; 3] {
        let n = self.n;
        [
            (index % n) as u32,
            ((index / n) % n) as u32,
            (index / (n * n)) as u32,
        ]
    }

    pub fn density(&self) -> &[T] {
        &self.density
    }

    pub fn neutral(&self) -> &[T] {
        &self.neutral
    }

    /// Replaces the neutral fractions, clamping them into `[0, 1]`.
    pub fn set_neutral(&mut self, neutral: Vec<T>) {
        assert_eq!(neutral.len(), self.cells());
        self.neutral = neutral
            .into_iter()
            .map(|x| x.max(T::zero()).min(T::one()))
            .collect();
    }

    pub fn cell_center(&self, cell: [u32; 3]) -> [T; 3] {
        let half = T::lit(0.5);
        cell.map(|c| (T::lit(f64::from(c)) + half) * self.dx)
    }

    /// Little-endian binary64 dump of the neutral fractions.
    pub fn write_neutral_f64<W: Write>(&self, mut out: W) -> io::Result<()> {
        for x in &self.neutral {
            out.write_all(&x.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
        }
        Ok(())
    }

    /// `i,j,k,x` rows with a header line.
    pub fn neutral_csv(&self) -> String {
        let mut s = String::from("i,j,k,x\n");
        for (idx, x) in self.neutral.iter().enumerate() {
            let [i, j, k] = self.coords(idx);
            let _ = writeln!(s, "{i},{j},{k},{x}");
        }
        s
    }
}

/// Reads `count` little-endian binary64 values.
pub fn read_f64_array<R: Read>(mut input: R, count: usize) -> io::Result<Vec<f64>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() != count * 8 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("expected {} bytes ({count} values), found {}", count * 8, buf.len()),
        ));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Analytic radius of the ionized sphere around a steady source in
/// uniform gas: `(3 Q / (4 pi alpha n_H^2))^(1/3)`.
pub fn stromgren_radius<T: Real>(source_rate: T, alpha: T, n_h: T) -> T {
    (T::lit(3.0) * source_rate / (T::lit(4.0) * T::PI() * alpha * n_h * n_h)).cbrt()
}

/// Radius of the sphere with the same volume as all cells whose neutral
/// fraction is below `threshold`.
pub fn ionized_radius<T: Real>(grid: &Grid<T>, threshold: T) -> T {
    let ionized = grid.neutral().iter().filter(|x| **x < threshold).count();
    let volume = grid.dx().powi(3) * T::count(ionized);
    (T::lit(3.0) * volume / (T::lit(4.0) * T::PI())).cbrt()
}
