//! Click timing inside one clock slot.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;

use crate::fock::{Bin, DetectorModel};

/// A click, timed from the start of its slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Click {
    pub time_ps: f64,
    /// Bin whose coincidence window contains the click, if any.
    pub bin: Option<Bin>,
}

/// Geometry of the two time bins within a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotGeometry {
    pub slot_ps: f64,
    pub centers: [f64; 2],
    /// Half-width of the coincidence window around each bin centre.
    pub half_window_ps: f64,
}

impl SlotGeometry {
    /// Nearest bin, provided the click falls inside that bin's window.
    pub fn assign(&self, t: f64) -> Option<Bin> {
        let (d0, d1) = ((t - self.centers[0]).abs(), (t - self.centers[1]).abs());
        let (bin, d) = if d0 <= d1 { (Bin::Early, d0) } else { (Bin::Late, d1) };
        (d <= self.half_window_ps).then_some(bin)
    }

    fn center(&self, bin: Bin) -> f64 {
        match bin {
            Bin::Early => self.centers[0],
            Bin::Late => self.centers[1],
        }
    }
}

/// Fraction of jittered clicks that land inside their own window.
pub fn window_acceptance(jitter_sigma: f64, half_window_ps: f64) -> f64 {
    if jitter_sigma == 0.0 {
        return 1.0;
    }
    erf(half_window_ps / (jitter_sigma * std::f64::consts::SQRT_2))
}

/// Threshold detection of `photons = [early, late]` with Gaussian jitter.
///
/// The detector's dark probability is quoted per coincidence window; a dark
/// click is placed uniformly over the slot with the matching per-slot rate.
pub fn sample_detection<R: Rng + ?Sized>(
    rng: &mut R,
    photons: [u32; 2],
    detector: &DetectorModel,
    jitter_sigma: f64,
    geometry: &SlotGeometry,
) -> Option<Click> {
    let jitter = Normal::new(0.0, jitter_sigma.max(0.0)).expect("finite sigma");
    let mut first: Option<f64> = None;
    for (bin, n) in [(Bin::Early, photons[0]), (Bin::Late, photons[1])] {
        for _ in 0..n {
            if rng.random::<f64>() < detector.efficiency {
                let t = geometry.center(bin) + if jitter_sigma > 0.0 { jitter.sample(rng) } else { 0.0 };
                first = Some(first.map_or(t, |f: f64| f.min(t)));
            }
        }
    }
    if first.is_none() {
        let per_slot = (detector.dark_count_prob * geometry.slot_ps / (2.0 * geometry.half_window_ps)).min(1.0);
        if rng.random::<f64>() < per_slot {
            first = Some(rng.random::<f64>() * geometry.slot_ps);
        }
    }
    first.map(|t| Click {
        time_ps: t,
        bin: geometry.assign(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

    fn geom() -> SlotGeometry {
        SlotGeometry {
            slot_ps: 12_500.0,
            centers: [5550.0, 6950.0],
            half_window_ps: 500.0,
        }
    }

    #[test]
    fn zero_jitter_hits_bin_centre() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = sample_detection(&mut rng, [0, 1], &DetectorModel::ideal(), 0.0, &geom()).unwrap();
        assert_eq!(c.time_ps, 6950.0);
        assert_eq!(c.bin, Some(Bin::Late));
    }

    #[test]
    fn misassignment_is_negligible() {
        // a photon can only cross the 700 ps midpoint towards the other bin
        let q = 1.0 - StatNormal::new(0.0, 1.0).unwrap().cdf(700.0 / 150.0);
        assert!(q < 2e-6 && q > 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = SlotGeometry { half_window_ps: 700.0, ..geom() };
        let wrong = (0..200_000)
            .filter(|_| {
                let c = sample_detection(&mut rng, [1, 0], &DetectorModel::ideal(), 150.0, &g).unwrap();
                c.bin != Some(Bin::Early)
            })
            .count();
        assert!(wrong <= 3, "{wrong}");
    }

    #[test]
    fn dark_clicks_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = DetectorModel::new(0.7, 0.02).unwrap();
        let n = 200_000;
        let clicks: Vec<Click> = (0..n)
            .filter_map(|_| sample_detection(&mut rng, [0, 0], &d, 150.0, &geom()))
            .collect();
        let per_slot = 0.02 * 12.5;
        let rate = clicks.len() as f64 / n as f64;
        assert!((rate - per_slot).abs() < 5.0 * (per_slot / n as f64).sqrt());
        let in_early = clicks.iter().filter(|c| c.bin == Some(Bin::Early)).count() as f64 / n as f64;
        assert!((in_early - 0.02).abs() < 0.002);
        let mean_t = clicks.iter().map(|c| c.time_ps).sum::<f64>() / clicks.len() as f64;
        assert!((mean_t - 6250.0).abs() < 100.0);
    }

    #[test]
    fn acceptance_of_default_window() {
        let a = window_acceptance(150.0, 500.0);
        assert!(a > 0.999 && a < 1.0);
    }
}
