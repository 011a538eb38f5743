//! Bounded random walks for timing, polarisation and phase.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Timing,
    Polarization,
    Phase,
}

/// Per-window walk: x ← reflect(x + ramp + N(0, step_sigma²)) within ±bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    pub step_sigma: f64,
    #[serde(default)]
    pub ramp_per_window: f64,
    pub bound: f64,
    #[serde(default)]
    pub initial: f64,
}

impl DriftParams {
    pub fn off(bound: f64) -> Self {
        Self {
            step_sigma: 0.0,
            ramp_per_window: 0.0,
            bound,
            initial: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_sigma >= 0.0) {
            return Err(invalid("step_sigma", "must be ≥ 0"));
        }
        if !(self.bound > 0.0) {
            return Err(invalid("bound", "must be > 0"));
        }
        if !(self.initial.abs() <= self.bound) {
            return Err(invalid("initial", "must lie within ±bound"));
        }
        if !self.ramp_per_window.is_finite() {
            return Err(invalid("ramp_per_window", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftProcess {
    pub kind: DriftKind,
    pub params: DriftParams,
    /// Current offset (ps for timing, radians otherwise).
    pub state: f64,
}

impl DriftProcess {
    pub fn new(kind: DriftKind, params: DriftParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            kind,
            params,
            state: params.initial,
        })
    }

    /// Advances one window. Always consumes exactly one normal draw, so
    /// realisations stay aligned across runs that share a seed.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let b = self.params.bound;
        let mut x = self.state + self.params.ramp_per_window + self.params.step_sigma * z;
        while x > b || x < -b {
            x = if x > b { 2.0 * b - x } else { -2.0 * b - x };
        }
        self.state = x;
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn off_stays_put() {
        let mut d = DriftProcess::new(DriftKind::Timing, DriftParams::off(300.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(d.step(&mut rng), 0.0);
        }
    }

    #[test]
    fn ramp_reflects_at_bound() {
        let p = DriftParams {
            step_sigma: 0.0,
            ramp_per_window: 40.0,
            bound: 100.0,
            initial: 0.0,
        };
        let mut d = DriftProcess::new(DriftKind::Timing, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..4).map(|_| d.step(&mut rng)).collect();
        // a persistent ramp pins the walk one reflection below the bound
        assert_eq!(xs, vec![40.0, 80.0, 80.0, 80.0]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(DriftParams { step_sigma: -1.0, ..DriftParams::off(1.0) }.validate().is_err());
        assert!(DriftParams { initial: 2.0, ..DriftParams::off(1.0) }.validate().is_err());
    }

    proptest! {
        #[test]
        fn stays_bounded(seed in any::<u64>(), sigma in 0.0..50.0f64, ramp in -20.0..20.0f64) {
            let p = DriftParams { step_sigma: sigma, ramp_per_window: ramp, bound: 30.0, initial: 0.0 };
            let mut d = DriftProcess::new(DriftKind::Timing, p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let x = d.step(&mut rng);
                prop_assert!(x.abs() <= 30.0);
            }
        }
    }
}
