use crate::num::Real;

/// Source and gas physics plus the ray-tree and iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams<T> {
    /// Ionizing photon rate of the source (photons per unit time).
    pub source_rate: T,
    /// Photoionization cross-section.
    pub sigma: T,
    /// Recombination coefficient.
    pub alpha: T,
    /// Rays are dropped once they carry less than
    /// `eps_cut * source_rate / base_rays`.
    pub eps_cut: T,
    /// Footprint factor of the split test.
    pub f_split: T,
    /// Cube-map level of the rays leaving the source.
    pub base_level: u8,
    /// Convergence tolerance on the largest neutral-fraction change.
    pub tol: T,
    pub max_epochs: u32,
}

impl<T: Real> PhysicsParams<T> {
    /// Parameters with the documented defaults for the ray controls.
    pub fn new(source_rate: T, sigma: T, alpha: T) -> Self {
        Self {
            source_rate,
            sigma,
            alpha,
            eps_cut: T::lit(1e-6),
            f_split: T::one(),
            base_level: 1,
            tol: T::lit(1e-4),
            max_epochs: 100,
        }
    }

    pub fn base_rays(&self) -> usize {
        6 << (2 * u32::from(self.base_level))
    }

    /// Photon rate of each base ray.
    pub fn base_photons(&self) -> T {
        self.source_rate / T::count(self.base_rays())
    }

    pub fn cutoff(&self) -> T {
        self.eps_cut * self.base_photons()
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive"))
            }
        };
        if !(self.source_rate >= T::zero() && self.source_rate.is_finite()) {
            return Err("Q must be non-negative".into());
        }
        positive("sigma", self.sigma)?;
        positive("alpha", self.alpha)?;
        positive("eps_cut", self.eps_cut)?;
        positive("f_split", self.f_split)?;
        positive("tol", self.tol)?;
        if self.tol >= T::one() {
            return Err("tol must be below 1".into());
        }
        if self.max_epochs == 0 {
            return Err("max_epochs must be positive".into());
        }
        if self.base_level > 12 {
            return Err("base_level must be at most 12".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_ray_counts() {
        let mut p = PhysicsParams::new(24.0f64, 1.0, 1.0);
        assert_eq!(p.base_rays(), 24);
        assert_eq!(p.base_photons(), 1.0);
        p.base_level = 0;
        assert_eq!(p.base_rays(), 6);
        assert!(p.validate().is_ok());
        p.tol = 1.0;
        assert!(p.validate().is_err());
    }
}
