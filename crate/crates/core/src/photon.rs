//! Fast photon-statistics model of the Bell-state measurement.
//!
//! Alice's pulse is a phase-randomised coherent state; the idler half of the
//! pair source, traced over (or conditioned on) Bob's photon, is a continuous
//! mixture of product thermal states:
//!
//! ```text
//! Σ_n P(n)/(n+1) Σ_k |k, n−k⟩⟨k, n−k| = (1−q) ∫₀¹ ds th(qs) ⊗ th(qs) / (1−qs)²
//! ```
//!
//! with q = μ/(1+μ). For each s the state is Gaussian, so the expectation of a
//! no-click operator `:exp(−v†Mv):` has a closed form; the s-integral is done
//! by Gauss–Legendre quadrature and click patterns follow by inclusion and
//! exclusion. Every quantity ends up as Σ_k w_k·exp(μ_A·c_k), which also gives
//! exact per-photon-number yields: Y_n = Σ_k w_k·(1+c_k)^n.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{pattern, DetectorModel, PatternProbabilities};
use crate::qubit::{DensityMatrix, SettingLabel, TimeBinState};

pub const CLOCK_HZ: f64 = 80.0e6;
pub const WINDOW_S: f64 = 10.0;
pub const BIN_SEPARATION_PS: f64 = 1400.0;

const QUAD_NODES: usize = 24;

fn quadrature() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let rule = GaussLegendre::new(QUAD_NODES.try_into().expect("non-zero"));
        // map [−1, 1] → [0, 1]
        rule.iter().map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub mu_a: f64,
    pub mu_spdc: f64,
    /// RMS pulse duration in ps.
    pub pulse_sigma: f64,
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.1).contains(&self.mu_a) {
            return Err(invalid("mu_a", format!("{} outside [0, 0.1]", self.mu_a)));
        }
        if !(0.0..=0.1).contains(&self.mu_spdc) {
            return Err(invalid("mu_spdc", format!("{} outside [0, 0.1]", self.mu_spdc)));
        }
        if !(self.pulse_sigma > 0.0) {
            return Err(invalid("pulse_sigma", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub loss_db: f64,
    /// Propagation delay in ns.
    pub base_delay: f64,
}

pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn transmittance(ch: &ChannelParams) -> f64 {
    db_to_transmittance(ch.loss_db)
}

/// Gaussian-wavepacket overlap |⟨φ₁|φ₂⟩|² at arrival-time difference `dt`.
pub fn overlap_at(max_overlap: f64, pulse_sigma: f64, dt: f64) -> f64 {
    max_overlap * (-dt * dt / (4.0 * pulse_sigma * pulse_sigma)).exp()
}

/// Idealised dip shape fitted to the exact model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomDipCurve {
    /// Coincidences per window far outside the dip.
    pub baseline_rate: f64,
    pub visibility: f64,
    pub center: f64,
    pub width_sigma: f64,
}

impl HomDipCurve {
    pub fn rate(&self, dt: f64) -> f64 {
        let x = (dt - self.center) / self.width_sigma;
        self.baseline_rate * (1.0 - self.visibility * (-0.5 * x * x).exp())
    }
}

/// Everything one clock cycle sees, reduced to transmittances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsmSetup {
    pub mu_a: f64,
    pub mu_spdc: f64,
    /// Alice → Charlie transmittance, including polarisation filtering.
    pub eta_alice: f64,
    /// Idler path Bob → Charlie.
    pub eta_idler: f64,
    /// Bob's 795 nm arm including his detector.
    pub eta_bob: f64,
    pub overlap: f64,
    /// Charlie's detectors; dark probability is per bin.
    pub detectors: [DetectorModel; 2],
    pub bob_dark_prob: f64,
    /// Replace Alice's coherent state by exactly this many photons.
    #[serde(default)]
    pub alice_photons: Option<u32>,
    /// Replace the thermal pair source by exactly one |φ⁺⟩ pair.
    #[serde(default)]
    pub single_pair: bool,
}

/// One term (w + w₁μ_A)·exp(μ_A·c) of a probability written as a function of μ_A.
#[derive(Debug, Clone, Copy)]
struct Term {
    w: f64,
    w1: f64,
    c: f64,
}

#[derive(Debug, Clone, Default)]
struct Series(Vec<Term>);

impl Series {
    fn add(&mut self, other: Series, sign: f64) {
        self.0
            .extend(other.0.into_iter().map(|t| Term { w: sign * t.w, w1: sign * t.w1, c: t.c }));
    }

    fn eval(&self, mu: f64) -> f64 {
        self.0.iter().map(|t| (t.w + t.w1 * mu) * (mu * t.c).exp()).sum()
    }

    /// Coefficient of μⁿ/n! in e^μ·eval(μ).
    fn photon_yield(&self, n: u32) -> f64 {
        self.0
            .iter()
            .map(|t| {
                let x = 1.0 + t.c;
                let lin = if n == 0 { 0.0 } else { f64::from(n) * x.powi(n as i32 - 1) };
                t.w * x.powi(n as i32) + t.w1 * lin
            })
            .sum()
    }
}

impl BsmSetup {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} outside [0, 1]")))
            }
        };
        if !(self.mu_a >= 0.0) {
            return Err(invalid("mu_a", "must be ≥ 0"));
        }
        if !(0.0..=0.2).contains(&self.mu_spdc) {
            return Err(invalid("mu_spdc", format!("{} outside [0, 0.2]", self.mu_spdc)));
        }
        unit("eta_alice", self.eta_alice)?;
        unit("eta_idler", self.eta_idler)?;
        unit("eta_bob", self.eta_bob)?;
        unit("overlap", self.overlap)?;
        unit("bob_dark_prob", self.bob_dark_prob)?;
        for d in &self.detectors {
            unit("efficiency", d.efficiency)?;
            unit("dark_count_prob", d.dark_count_prob)?;
        }
        Ok(())
    }

    pub fn with_overlap(&self, overlap: f64) -> Self {
        Self { overlap, ..*self }
    }

    pub fn with_mu_a(&self, mu_a: f64) -> Self {
        Self { mu_a, ..*self }
    }

    /// E[no click on the channels in `mask` · z₁^{n_X} z₂^{n_X⊥}], where n_X
    /// counts Bob's photons in the mode of `basis` (before his losses). With
    /// `dz1` the series of ∂/∂z₁ is returned instead.
    fn no_click_series(&self, u: &[C64; 2], mask: u8, z: [f64; 2], basis: &Matrix2<C64>, dz1: bool) -> Series {
        let eps = |d: usize, b: usize| {
            if mask & pattern::bit(d, b) != 0 {
                self.detectors[d].efficiency
            } else {
                0.0
            }
        };
        let dark: f64 = (0..4)
            .filter(|c| mask & (1 << c) != 0)
            .map(|c| 1.0 - self.detectors[c / 2].dark_count_prob)
            .product();
        // M = T†ET on the input modes (Alice, idler) per bin; Alice enters
        // the beamsplitter as a†→(a†−b†)/√2, the idler as b†→(a†+b†)/√2
        let mut m_aa = [0.0; 2];
        let mut m_ii = [0.0; 2];
        let mut m_ai = [0.0; 2];
        let cross = (self.eta_alice * self.eta_idler * self.overlap).sqrt();
        for b in 0..2 {
            let (e1, e2) = (eps(0, b), eps(1, b));
            m_aa[b] = self.eta_alice * 0.5 * (e1 + e2);
            m_ii[b] = self.eta_idler * 0.5 * (e1 + e2);
            m_ai[b] = cross * 0.5 * (e1 - e2);
        }
        let c0 = -(m_aa[0] * u[0].norm_sqr() + m_aa[1] * u[1].norm_sqr());
        let m = Matrix2::from_diagonal(&Vector2::new(C64::new(m_ii[0], 0.0), C64::new(m_ii[1], 0.0)));
        let bvec = Vector2::new(u[0] * m_ai[0], u[1] * m_ai[1]);
        let quad = |x: &Matrix2<C64>| (bvec.adjoint() * x * bvec)[(0, 0)].re;
        let col = basis.column(0);
        let p1: Matrix2<C64> = col * col.adjoint();

        let mut out = Vec::with_capacity(QUAD_NODES);
        if self.single_pair {
            // first order in q of the thermal expression: exactly one pair
            let (zm, ztr) = if dz1 {
                (p1, 1.0)
            } else {
                let d = Matrix2::from_diagonal(&Vector2::new(C64::new(z[0], 0.0), C64::new(z[1], 0.0)));
                (basis * d * basis.adjoint(), z[0] + z[1])
            };
            let lin = ztr - (zm * m).trace().re;
            let w1 = quad(&zm);
            // ∫₀¹ s ds = ½
            out.push(Term { w: 0.5 * dark * lin, w1: 0.5 * dark * w1, c: c0 });
            return Series(out);
        }

        let q = self.mu_spdc / (1.0 + self.mu_spdc);
        for &(s, gw) in quadrature() {
            let r = [q * s * z[0], q * s * z[1]];
            let nbar = Matrix2::from_diagonal(&Vector2::new(
                C64::new(r[0] / (1.0 - r[0]), 0.0),
                C64::new(r[1] / (1.0 - r[1]), 0.0),
            ));
            let n = basis * nbar * basis.adjoint();
            let a = Matrix2::identity() + n * m;
            let det = a.determinant().re;
            let a_inv = a.try_inverse().expect("I + NM is positive definite");
            let k = a_inv * n;
            let c = c0 + quad(&k);
            let w = gw * (1.0 - q) / ((1.0 - r[0]) * (1.0 - r[1])) / det * dark;
            if dz1 {
                let dn = p1 * C64::new(q * s / ((1.0 - r[0]) * (1.0 - r[0])), 0.0);
                let dlnw = q * s / (1.0 - r[0]) - (a_inv * dn * m).trace().re;
                let dk = a_inv * dn * (Matrix2::identity() - m * k);
                out.push(Term { w: w * dlnw, w1: w * quad(&dk), c });
            } else {
                out.push(Term { w, w1: 0.0, c });
            }
        }
        Series(out)
    }

    /// Series for "exactly the channels in `clicked` fire".
    fn pattern_series(&self, u: &[C64; 2], clicked: u8, z: [f64; 2], basis: &Matrix2<C64>, dz1: bool) -> Series {
        let mut acc = Series::default();
        let quiet = !clicked & 0xF;
        // inclusion–exclusion over subsets of the clicked channels
        let mut sub = clicked;
        loop {
            let sign = if sub.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            acc.add(self.no_click_series(u, quiet | sub, z, basis, dz1), sign);
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & clicked;
        }
        acc
    }

    fn flag_series(&self, u: &[C64; 2], z: [f64; 2], basis: &Matrix2<C64>, dz1: bool) -> Series {
        let mut acc = Series::default();
        for p in pattern::PSI_MINUS {
            acc.add(self.pattern_series(u, p, z, basis, dz1), 1.0);
        }
        acc
    }

    /// Probabilities of all 16 click patterns for one pulse.
    pub fn pattern_probabilities(&self, input: &TimeBinState) -> PatternProbabilities {
        let u = input.amplitudes();
        let basis = idler_basis(SettingLabel::E);
        let v: Vec<f64> = (0..16u8)
            .map(|mask| self.value(&self.no_click_series(&u, mask, [1.0, 1.0], &basis, false)))
            .collect();
        let mut out = [0.0; 16];
        for (clicked, slot) in out.iter_mut().enumerate() {
            let clicked = clicked as u8;
            let quiet = !clicked & 0xF;
            let mut sub = clicked;
            loop {
                let sign = if sub.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
                *slot += sign * v[(quiet | sub) as usize];
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & clicked;
            }
        }
        PatternProbabilities(out)
    }

    /// Joint probabilities p[pattern][bob] of Charlie's click pattern and
    /// whether Bob's detector for `setting` fires (index 1).
    pub fn joint_outcomes(&self, input: &TimeBinState, setting: SettingLabel) -> [[f64; 2]; 16] {
        let u = input.amplitudes();
        let basis = idler_basis(setting);
        let mut all = [0.0; 16];
        let mut miss = [0.0; 16];
        for mask in 0..16u8 {
            all[mask as usize] = self.value(&self.no_click_series(&u, mask, [1.0, 1.0], &basis, false));
            miss[mask as usize] = self.value(&self.no_click_series(&u, mask, [1.0 - self.eta_bob, 1.0], &basis, false));
        }
        let mut out = [[0.0; 2]; 16];
        for clicked in 0..16u8 {
            let quiet = !clicked & 0xF;
            let (mut p, mut p_miss) = (0.0, 0.0);
            let mut sub = clicked;
            loop {
                let sign = if sub.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
                p += sign * all[(quiet | sub) as usize];
                p_miss += sign * miss[(quiet | sub) as usize];
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & clicked;
            }
            let no_bob = ((1.0 - self.bob_dark_prob) * p_miss).max(0.0);
            out[clicked as usize] = [no_bob, (p.max(0.0) - no_bob).max(0.0)];
        }
        out
    }

    /// Per-photon-number version of [`Self::joint_outcomes`]: entry n holds
    /// the joint table given that Alice emitted exactly n photons.
    pub fn joint_outcome_yields(&self, input: &TimeBinState, setting: SettingLabel, n_max: u32) -> Vec<[[f64; 2]; 16]> {
        let u = input.amplitudes();
        let basis = idler_basis(setting);
        let mut out = vec![[[0.0; 2]; 16]; n_max as usize + 1];
        for clicked in 0..16u8 {
            let p = self.pattern_series(&u, clicked, [1.0, 1.0], &basis, false);
            let pm = self.pattern_series(&u, clicked, [1.0 - self.eta_bob, 1.0], &basis, false);
            for (n, table) in out.iter_mut().enumerate() {
                let total = p.photon_yield(n as u32).max(0.0);
                let no_bob = ((1.0 - self.bob_dark_prob) * pm.photon_yield(n as u32)).clamp(0.0, total);
                table[clicked as usize] = [no_bob, total - no_bob];
            }
        }
        out
    }

    /// Per-pulse probability of the ψ⁻ flag.
    pub fn psi_minus_probability(&self, input: &TimeBinState) -> f64 {
        let u = input.amplitudes();
        self.value(&self.flag_series(&u, [1.0, 1.0], &idler_basis(SettingLabel::E), false))
    }

    /// Per-pulse probability that both detectors fire in a common bin.
    pub fn same_bin_coincidence_probability(&self, input: &TimeBinState) -> f64 {
        self.pattern_probabilities(input).same_bin_coincidence()
    }

    /// Per-pulse probability that detector `d` registers at least one click.
    pub fn detector_click_probability(&self, input: &TimeBinState, d: usize) -> f64 {
        let u = input.amplitudes();
        let mask = pattern::bit(d, 0) | pattern::bit(d, 1);
        1.0 - self.value(&self.no_click_series(&u, mask, [1.0, 1.0], &idler_basis(SettingLabel::E), false))
    }

    fn triple_series(&self, u: &[C64; 2], setting: SettingLabel) -> Series {
        let basis = idler_basis(setting);
        let mut s = self.flag_series(u, [1.0, 1.0], &basis, false);
        let miss = self.flag_series(u, [1.0 - self.eta_bob, 1.0], &basis, false);
        s.add(miss, -(1.0 - self.bob_dark_prob));
        s
    }

    /// Per-pulse probability of a ψ⁻ flag together with a click in Bob's
    /// detector for `setting`.
    pub fn triple_probability(&self, input: &TimeBinState, setting: SettingLabel) -> f64 {
        self.value(&self.triple_series(&input.amplitudes(), setting))
    }

    /// Triple probability given that Alice emitted exactly n photons, n = 0..=n_max.
    pub fn triple_yields(&self, input: &TimeBinState, setting: SettingLabel, n_max: u32) -> Vec<f64> {
        let s = self.triple_series(&input.amplitudes(), setting);
        (0..=n_max).map(|n| s.photon_yield(n)).collect()
    }

    /// Flag probability given that Alice emitted exactly n photons.
    pub fn flag_yields(&self, input: &TimeBinState, n_max: u32) -> Vec<f64> {
        let s = self.flag_series(&input.amplitudes(), [1.0, 1.0], &idler_basis(SettingLabel::E), false);
        (0..=n_max).map(|n| s.photon_yield(n)).collect()
    }

    /// Per-pulse probability that Bob's detector clicks (any setting).
    pub fn bob_click_probability(&self) -> f64 {
        if self.single_pair {
            return 1.0 - (1.0 - self.bob_dark_prob) * (1.0 - 0.5 * self.eta_bob);
        }
        let q = self.mu_spdc / (1.0 + self.mu_spdc);
        let z = 1.0 - self.eta_bob;
        let gf: f64 = quadrature()
            .iter()
            .map(|&(s, w)| w * (1.0 - q) / ((1.0 - q * s * z) * (1.0 - q * s)))
            .sum();
        1.0 - (1.0 - self.bob_dark_prob) * gf
    }

    /// ∂/∂z₁ of the flag generating function in `basis`, at z₁ = z₂ = z.
    fn flag_gf_slope(&self, u: &[C64; 2], setting: SettingLabel, z: f64) -> f64 {
        self.value(&self.flag_series(u, [z, z], &idler_basis(setting), true))
    }

    fn value(&self, s: &Series) -> f64 {
        match self.alice_photons {
            Some(n) => s.photon_yield(n),
            None => s.eval(self.mu_a),
        }
    }
}

/// Columns: idler modes paired with Bob's modes (X, X⊥) of `setting`.
///
/// The pair creation operator Σ_i a_i† b_i† is invariant under U ⊗ U*, so
/// Bob's mode X partners the idler mode X*.
fn idler_basis(setting: SettingLabel) -> Matrix2<C64> {
    let x = setting.state().amplitudes();
    let y = setting.orthogonal().state().amplitudes();
    Matrix2::new(x[0].conj(), y[0].conj(), x[1].conj(), y[1].conj())
}

/// Per-pulse ψ⁻ flag probability, including dark counts and multi-photon terms.
pub fn bsm_success_probability(setup: &BsmSetup, input: &TimeBinState) -> Result<f64> {
    setup.validate()?;
    Ok(setup.psi_minus_probability(input))
}

/// Expected same-bin coincidences per window at arrival-time difference `dt` (ps).
pub fn hom_coincidence_rate(setup: &BsmSetup, input: &TimeBinState, pulse_sigma: f64, dt: f64) -> Result<f64> {
    setup.validate()?;
    if dt.abs() > 1000.0 {
        return Err(invalid("delta_t", format!("|{dt}| ps exceeds 1000 ps")));
    }
    if !(pulse_sigma > 0.0) {
        return Err(invalid("pulse_sigma", "must be > 0"));
    }
    let w = overlap_at(setup.overlap, pulse_sigma, dt);
    Ok(CLOCK_HZ * WINDOW_S * setup.with_overlap(w).same_bin_coincidence_probability(input))
}

/// Baseline, depth and width of the dip implied by the exact model.
pub fn hom_dip_curve(setup: &BsmSetup, input: &TimeBinState, pulse_sigma: f64) -> Result<HomDipCurve> {
    setup.validate()?;
    let per_window = CLOCK_HZ * WINDOW_S;
    let baseline = per_window * setup.with_overlap(0.0).same_bin_coincidence_probability(input);
    let minimum = per_window * setup.same_bin_coincidence_probability(input);
    Ok(HomDipCurve {
        baseline_rate: baseline,
        visibility: if baseline > 0.0 { 1.0 - minimum / baseline } else { 0.0 },
        center: 0.0,
        width_sigma: std::f64::consts::SQRT_2 * pulse_sigma,
    })
}

/// Overlap that makes the dip minimum equal `min_rate` coincidences per window.
pub fn calibrate_overlap(setup: &BsmSetup, input: &TimeBinState, min_rate: f64) -> Result<f64> {
    setup.validate()?;
    let per_window = CLOCK_HZ * WINDOW_S;
    let rate = |w: f64| per_window * setup.with_overlap(w).same_bin_coincidence_probability(input);
    let (hi_rate, lo_rate) = (rate(0.0), rate(1.0));
    if !(lo_rate..=hi_rate).contains(&min_rate) {
        return Err(invalid(
            "min_rate",
            format!("{min_rate} outside attainable range [{lo_rate:.1}, {hi_rate:.1}]"),
        ));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > min_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bob's conditional state on his single-photon sector.
#[derive(Debug, Clone, Copy)]
pub struct ModelTeleportedState {
    pub rho: DensityMatrix,
    /// P(ψ⁻ flag ∧ exactly one photon reaches Bob's detector).
    pub herald_probability: f64,
}

/// Exact conditional output state of the lumped model.
///
/// The result contains the ideal σ_y-rotated state mixed with whatever noise
/// the multi-photon terms, distinguishability and dark counts produce; no
/// phenomenological visibility is imposed.
pub fn teleported_state_model(setup: &BsmSetup, input: &TimeBinState) -> Result<ModelTeleportedState> {
    setup.validate()?;
    let u = input.amplitudes();
    let z = 1.0 - setup.eta_bob;
    let p = |l: SettingLabel| setup.eta_bob * setup.flag_gf_slope(&u, l, z);
    let (pe, pl, pp, pi) = (
        p(SettingLabel::E),
        p(SettingLabel::L),
        p(SettingLabel::Plus),
        p(SettingLabel::PlusI),
    );
    let tr = pe + pl;
    if !(tr > 1e-15) {
        return Err(Error::UndefinedState(tr));
    }
    // ⟨+|ρ|+⟩ = tr/2 + Re ρ_eℓ,  ⟨+i|ρ|+i⟩ = tr/2 − Im ρ_eℓ
    let off = C64::new(pp - 0.5 * tr, 0.5 * tr - pi) / tr;
    let m = [
        [C64::new(pe / tr, 0.0), off],
        [off.conj(), C64::new(pl / tr, 0.0)],
    ];
    Ok(ModelTeleportedState {
        rho: DensityMatrix::new(m)?,
        herald_probability: tr,
    })
}
