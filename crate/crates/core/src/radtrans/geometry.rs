//! Angular pixelization: a quadtree on each face of the unit cube.
//!
//! Face `f` has normal axis `f / 2` and sign `+` for even `f`, `-` for odd.
//! A pixel `(ix, iy)` at `level` has center coordinates
//! `u = -1 + (2 ix + 1) / 2^level` (same for `v` with `iy`). On the face with
//! normal axis `a` the unnormalized direction has `±1` on `a`, `u` on axis
//! `(a + 1) % 3` and `v` on axis `(a + 2) % 3`; on `+x` that is `(1, u, v)`.

use std::fmt;

use crate::num::Real;

/// Hard cap keeping pixel indices within `u32`.
pub const MAX_LEVEL: u8 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RayAddress {
    pub face: u8,
    pub level: u8,
    pub ix: u32,
    pub iy: u32,
}

impl RayAddress {
    pub fn new(face: u8, level: u8, ix: u32, iy: u32) -> Option<Self> {
        let addr = Self { face, level, ix, iy };
        addr.is_valid().then_some(addr)
    }

    pub fn is_valid(&self) -> bool {
        let side = 1u64 << self.level.min(MAX_LEVEL);
        self.face < 6
            && self.level <= MAX_LEVEL
            && u64::from(self.ix) < side
            && u64::from(self.iy) < side
    }

    /// The four sub-pixels, ordered `(0,0), (1,0), (0,1), (1,1)`.
    pub fn children(&self) -> [RayAddress; 4] {
        let (x, y) = (2 * self.ix, 2 * self.iy);
        let child = |a: u32, b: u32| RayAddress {
            face: self.face,
            level: self.level + 1,
            ix: x + a,
            iy: y + b,
        };
        [child(0, 0), child(1, 0), child(0, 1), child(1, 1)]
    }

    /// All pixels of every face at `level`, in address order.
    pub fn all_at_level(level: u8) -> impl Iterator<Item = RayAddress> {
        let side = 1u32 << level;
        (0..6u8).flat_map(move |face| {
            (0..side).flat_map(move |ix| (0..side).map(move |iy| RayAddress { face, level, ix, iy }))
        })
    }
}

impl fmt::Display for RayAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}/L{}/({},{})", self.face, self.level, self.ix, self.iy)
    }
}

/// Unit vector through the pixel center.
pub fn pixel_direction<T: Real>(addr: RayAddress) -> [T; 3] {
    let side = T::lit((1u64 << addr.level) as f64);
    let two = T::lit(2.0);
    let u = -T::one() + (two * T::lit(addr.ix as f64) + T::one()) / side;
    let v = -T::one() + (two * T::lit(addr.iy as f64) + T::one()) / side;
    let axis = usize::from(addr.face / 2);
    let sign = if addr.face.is_multiple_of(2) { T::one() } else { -T::one() };
    let mut d = [T::zero(); 3];
    d[axis] = sign;
    d[(axis + 1) % 3] = u;
    d[(axis + 2) % 3] = v;
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    d.map(|c| c / norm)
}

/// Solid angle assigned to one pixel: the sphere shared evenly among
/// `6 * 4^level` pixels.
pub fn pixel_solid_angle<T: Real>(level: u8) -> T {
    let four_pi = T::lit(4.0) * T::PI();
    four_pi / T::lit(6.0) / T::lit(4f64.powi(i32::from(level)))
}

/// Footprint test: split once the pixel's footprint at distance `r` exceeds
/// `f_split` cell faces.
pub fn split_check<T: Real>(level: u8, r: T, dx: T, f_split: T) -> bool {
    r * r * pixel_solid_angle::<T>(level) > f_split * dx * dx
}
