//! Single time-bin qubit algebra in the {|e⟩, |ℓ⟩} basis.
//!
//! Pauli matrices follow the usual convention with |e⟩ = (1, 0) and
//! |ℓ⟩ = (0, 1), so |±⟩ are σx eigenstates and |±i⟩ = (|e⟩ ± i|ℓ⟩)/√2 are
//! σy eigenstates.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Tolerance on the pure-state normalisation.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance for Hermiticity, trace and eigenvalue positivity.
pub const PHYSICAL_TOL: f64 = 1e-10;

/// Pure time-bin qubit α|e⟩ + β e^{iφ}|ℓ⟩ with α, β ≥ 0.
///
/// Global phase is not represented. When either amplitude vanishes the phase
/// is meaningless and is stored as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinState {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
}

impl TimeBinState {
    pub fn new(alpha: f64, beta: f64, phi: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(invalid("alpha/beta", "amplitudes must be non-negative"));
        }
        if ((alpha * alpha + beta * beta) - 1.0).abs() > NORM_TOL {
            return Err(invalid(
                "alpha/beta",
                format!("α² + β² = {} is not 1", alpha * alpha + beta * beta),
            ));
        }
        if !phi.is_finite() {
            return Err(invalid("phi", "phase must be finite"));
        }
        Ok(Self::canonical(alpha, beta, phi))
    }

    /// Equal-weight superposition (|e⟩ + e^{iφ}|ℓ⟩)/√2.
    pub fn equator(phi: f64) -> Self {
        Self::canonical(FRAC_1_SQRT_2, FRAC_1_SQRT_2, phi)
    }

    pub fn early() -> Self {
        Self::canonical(1.0, 0.0, 0.0)
    }

    pub fn late() -> Self {
        Self::canonical(0.0, 1.0, 0.0)
    }

    /// Builds the canonical representative of an arbitrary amplitude pair.
    pub fn from_amplitudes(early: C64, late: C64) -> Result<Self> {
        let norm = (early.norm_sqr() + late.norm_sqr()).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("amplitudes", "zero or non-finite vector"));
        }
        let (a, b) = (early.norm() / norm, late.norm() / norm);
        let phi = if a == 0.0 || b == 0.0 {
            0.0
        } else {
            late.arg() - early.arg()
        };
        Ok(Self::canonical(a, b, phi))
    }

    fn canonical(alpha: f64, beta: f64, phi: f64) -> Self {
        let s = (alpha * alpha + beta * beta).sqrt();
        let (alpha, beta) = (alpha / s, beta / s);
        let phi = if alpha < 1e-15 || beta < 1e-15 {
            0.0
        } else {
            phi.rem_euclid(TAU)
        };
        // rem_euclid can return TAU itself for tiny negative inputs
        let phi = if phi >= TAU { 0.0 } else { phi };
        Self { alpha, beta, phi }
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        [
            C64::new(self.alpha, 0.0),
            C64::from_polar(self.beta, self.phi),
        ]
    }

    /// |⟨self|other⟩|².
    pub fn overlap(&self, other: &TimeBinState) -> f64 {
        let a = self.amplitudes();
        let b = other.amplitudes();
        (a[0].conj() * b[0] + a[1].conj() * b[1]).norm_sqr()
    }

    /// True when both states agree up to global phase within `tol`.
    pub fn approx_eq(&self, other: &TimeBinState, tol: f64) -> bool {
        1.0 - self.overlap(other) <= tol
    }
}

/// The six cardinal projections used for tomography and state preparation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SettingLabel {
    E,
    L,
    Plus,
    Minus,
    PlusI,
    MinusI,
}

impl SettingLabel {
    pub const ALL: [SettingLabel; 6] = [
        SettingLabel::E,
        SettingLabel::L,
        SettingLabel::Plus,
        SettingLabel::Minus,
        SettingLabel::PlusI,
        SettingLabel::MinusI,
    ];

    pub fn state(self) -> TimeBinState {
        match self {
            SettingLabel::E => TimeBinState::early(),
            SettingLabel::L => TimeBinState::late(),
            SettingLabel::Plus => TimeBinState::equator(0.0),
            SettingLabel::Minus => TimeBinState::equator(PI),
            SettingLabel::PlusI => TimeBinState::equator(PI / 2.0),
            SettingLabel::MinusI => TimeBinState::equator(3.0 * PI / 2.0),
        }
    }

    pub fn orthogonal(self) -> SettingLabel {
        match self {
            SettingLabel::E => SettingLabel::L,
            SettingLabel::L => SettingLabel::E,
            SettingLabel::Plus => SettingLabel::Minus,
            SettingLabel::Minus => SettingLabel::Plus,
            SettingLabel::PlusI => SettingLabel::MinusI,
            SettingLabel::MinusI => SettingLabel::PlusI,
        }
    }

    /// The cardinal label whose state equals σy applied to this one.
    pub fn after_teleportation(self) -> SettingLabel {
        match self {
            SettingLabel::E => SettingLabel::L,
            SettingLabel::L => SettingLabel::E,
            SettingLabel::Plus => SettingLabel::Minus,
            SettingLabel::Minus => SettingLabel::Plus,
            s @ (SettingLabel::PlusI | SettingLabel::MinusI) => s,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SettingLabel::E => "E",
            SettingLabel::L => "L",
            SettingLabel::Plus => "PLUS",
            SettingLabel::Minus => "MINUS",
            SettingLabel::PlusI => "PLUS_I",
            SettingLabel::MinusI => "MINUS_I",
        }
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SettingLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid("setting", format!("unknown setting label `{s}`")))
    }
}

/// 2×2 density matrix in the {|e⟩, |ℓ⟩} basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: [[C64; 2]; 2],
}

impl DensityMatrix {
    /// Wraps raw elements after checking the physicality invariants.
    pub fn new(m: [[C64; 2]; 2]) -> Result<Self> {
        let rho = Self { m };
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps raw elements without validation; for intermediate algebra.
    pub(crate) fn from_raw(m: [[C64; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn pure(state: &TimeBinState) -> Self {
        let v = state.amplitudes();
        let mut m = [[C64::new(0.0, 0.0); 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, el) in row.iter_mut().enumerate() {
                *el = v[i] * v[j].conj();
            }
        }
        Self { m }
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch([0.0; 3])
    }

    /// ρ = (I + r·σ)/2 for a Bloch vector r = (⟨σx⟩, ⟨σy⟩, ⟨σz⟩).
    pub fn from_bloch(r: [f64; 3]) -> Self {
        let [x, y, z] = r;
        Self {
            m: [
                [C64::new(0.5 * (1.0 + z), 0.0), C64::new(0.5 * x, -0.5 * y)],
                [C64::new(0.5 * x, 0.5 * y), C64::new(0.5 * (1.0 - z), 0.0)],
            ],
        }
    }

    pub fn bloch(&self) -> [f64; 3] {
        let off = self.m[1][0];
        [
            2.0 * off.re,
            2.0 * off.im,
            (self.m[0][0] - self.m[1][1]).re,
        ]
    }

    pub fn elements(&self) -> [[C64; 2]; 2] {
        self.m
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.m[row][col]
    }

    pub fn trace(&self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = 0.5 * (self.m[0][1] + self.m[1][0].conj());
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - r, mean + r]
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            for j in 0..2 {
                let e = self.m[i][j];
                if !e.re.is_finite() || !e.im.is_finite() {
                    return Err(Error::NotPhysical("non-finite element".into()));
                }
                if (e - self.m[j][i].conj()).norm() > PHYSICAL_TOL {
                    return Err(Error::NotPhysical(format!("not Hermitian at ({i},{j})")));
                }
            }
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > PHYSICAL_TOL {
            return Err(Error::NotPhysical(format!("trace {tr} ≠ 1")));
        }
        let ev = self.eigenvalues();
        if ev[0] < -PHYSICAL_TOL {
            return Err(Error::NotPhysical(format!("negative eigenvalue {}", ev[0])));
        }
        Ok(())
    }

    /// ⟨ψ|ρ|ψ⟩ without a physicality check.
    pub fn expectation(&self, state: &TimeBinState) -> f64 {
        let v = state.amplitudes();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += v[i].conj() * self.m[i][j] * v[j];
            }
        }
        acc.re
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        // the difference is traceless Hermitian, eigenvalues ±λ
        let d = [
            [self.m[0][0] - other.m[0][0], self.m[0][1] - other.m[0][1]],
            [self.m[1][0] - other.m[1][0], self.m[1][1] - other.m[1][1]],
        ];
        let diff = DensityMatrix::from_raw(d);
        let ev = diff.eigenvalues();
        0.5 * (ev[0].abs() + ev[1].abs())
    }

    /// σy ρ σy.
    pub fn pauli_y_conjugate(&self) -> Self {
        let m = self.m;
        Self {
            m: [[m[1][1], -m[1][0]], [-m[0][1], m[0][0]]],
        }
    }

    /// Row-major (re, im) interleaved: [ρ00.re, ρ00.im, ρ01.re, …, ρ11.im].
    pub fn to_flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (k, e) in self.m.iter().flatten().enumerate() {
            out[2 * k] = e.re;
            out[2 * k + 1] = e.im;
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 8 {
            return Err(invalid("density matrix", format!("expected 8 numbers, got {}", flat.len())));
        }
        let c = |k: usize| C64::new(flat[2 * k], flat[2 * k + 1]);
        Self::new([[c(0), c(1)], [c(2), c(3)]])
    }
}

impl From<&TimeBinState> for DensityMatrix {
    fn from(s: &TimeBinState) -> Self {
        DensityMatrix::pure(s)
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_flat().serialize(ser)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(de)?;
        DensityMatrix::from_flat(&v).map_err(serde::de::Error::custom)
    }
}

/// A rank-1 projective measurement setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSetting {
    pub label: SettingLabel,
    pub projector: DensityMatrix,
}

impl MeasurementSetting {
    pub fn new(label: SettingLabel) -> Self {
        Self {
            label,
            projector: DensityMatrix::pure(&label.state()),
        }
    }

    pub fn all() -> [MeasurementSetting; 6] {
        SettingLabel::ALL.map(MeasurementSetting::new)
    }
}

impl From<SettingLabel> for MeasurementSetting {
    fn from(label: SettingLabel) -> Self {
        MeasurementSetting::new(label)
    }
}

/// σy|ψ⟩ with the global phase removed.
pub fn pauli_y_transform(state: &TimeBinState) -> TimeBinState {
    // σy(α|e⟩ + βe^{iφ}|ℓ⟩) = -iβe^{iφ}|e⟩ + iα|ℓ⟩ ≃ β|e⟩ + αe^{i(π-φ)}|ℓ⟩
    TimeBinState::canonical(state.beta, state.alpha, PI - state.phi)
}

/// F = ⟨ψ|ρ|ψ⟩; rejects unphysical ρ.
pub fn fidelity(rho: &DensityMatrix, target: &TimeBinState) -> Result<f64> {
    rho.validate()?;
    Ok(rho.expectation(target).clamp(0.0, 1.0))
}

/// ⟨F⟩ = [F_e + F_ℓ + 2(F_+ + F_{+i})]/6, labels referring to the expected
/// output states.
pub fn average_fidelity(f_e: f64, f_l: f64, f_plus: f64, f_plus_i: f64) -> Result<f64> {
    for (name, v) in [
        ("F_e", f_e),
        ("F_l", f_l),
        ("F_plus", f_plus),
        ("F_plus_i", f_plus_i),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter {
                name: "fidelity",
                reason: format!("{name} = {v} outside [0, 1]"),
            });
        }
    }
    Ok(AVERAGE_WEIGHTS[0] * f_e
        + AVERAGE_WEIGHTS[1] * f_l
        + AVERAGE_WEIGHTS[2] * f_plus
        + AVERAGE_WEIGHTS[3] * f_plus_i)
}

/// Weights of (F_e, F_ℓ, F_+, F_{+i}) in the average fidelity.
pub const AVERAGE_WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0];

/// F = (1 + V)/2 for a pure state mixed with white noise.
pub fn fidelity_from_visibility(v: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(invalid("visibility", format!("{v} outside [-1, 1]")));
    }
    Ok(0.5 * (1.0 + v))
}

/// tr(Π ρ) for a physical ρ.
pub fn born_probability(rho: &DensityMatrix, setting: &MeasurementSetting) -> f64 {
    let p = setting.projector.elements();
    let r = rho.elements();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..2 {
        for k in 0..2 {
            acc += p[i][k] * r[k][i];
        }
    }
    acc.re.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn arb_state() -> impl Strategy<Value = TimeBinState> {
        (0.0..=1.0f64, 0.0..TAU).prop_map(|(a, phi)| {
            TimeBinState::new(a, (1.0 - a * a).max(0.0).sqrt(), phi).unwrap()
        })
    }

    fn arb_rho() -> impl Strategy<Value = DensityMatrix> {
        (0.0..=1.0f64, 0.0..PI, 0.0..TAU).prop_map(|(r, theta, az)| {
            DensityMatrix::from_bloch([
                r * theta.sin() * az.cos(),
                r * theta.sin() * az.sin(),
                r * theta.cos(),
            ])
        })
    }

    #[test]
    fn pauli_y_on_cardinal_states() {
        let e = TimeBinState::early();
        assert!(pauli_y_transform(&e).approx_eq(&TimeBinState::late(), 1e-12));
        let plus = SettingLabel::Plus.state();
        assert!(pauli_y_transform(&plus).approx_eq(&SettingLabel::Minus.state(), 1e-12));
        let pi = SettingLabel::PlusI.state();
        assert!(pauli_y_transform(&pi).approx_eq(&pi, 1e-12));
        for l in SettingLabel::ALL {
            let out = pauli_y_transform(&l.state());
            assert!(out.approx_eq(&l.after_teleportation().state(), 1e-12), "{l}");
        }
    }

    #[test]
    fn pauli_y_matches_matrix_conjugation() {
        let s = TimeBinState::new(0.6, 0.8, 1.1).unwrap();
        let via_state = DensityMatrix::pure(&pauli_y_transform(&s));
        let via_matrix = DensityMatrix::pure(&s).pauli_y_conjugate();
        assert!(via_state.trace_distance(&via_matrix) < 1e-12);
    }

    #[test]
    fn rejects_unnormalised_state() {
        assert!(TimeBinState::new(0.5, 0.5, 0.0).is_err());
        assert!(TimeBinState::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let s = TimeBinState::new(0.6, 0.8, 0.3).unwrap();
        assert_abs_diff_eq!(fidelity(&DensityMatrix::pure(&s), &s).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            fidelity(&DensityMatrix::maximally_mixed(), &s).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        let bad = DensityMatrix::from_raw([
            [C64::new(1.2, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(-0.2, 0.0)],
        ]);
        assert!(matches!(fidelity(&bad, &s), Err(Error::NotPhysical(_))));
    }

    #[test]
    fn average_fidelity_examples() {
        assert_abs_diff_eq!(average_fidelity(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        let c = 2.0 / 3.0;
        assert_abs_diff_eq!(average_fidelity(c, c, c, c).unwrap(), c, epsilon = 1e-15);
        // poles count once, equator states twice
        assert_abs_diff_eq!(
            average_fidelity(0.9, 0.84, 0.72, 0.75).unwrap(),
            (0.9 + 0.84 + 2.0 * (0.72 + 0.75)) / 6.0,
            epsilon = 1e-15
        );
        assert!(average_fidelity(1.1, 1.0, 1.0, 1.0).is_err());
        assert_abs_diff_eq!(AVERAGE_WEIGHTS.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn visibility_to_fidelity() {
        assert_abs_diff_eq!(fidelity_from_visibility(1.0 / 3.0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fidelity_from_visibility(1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(fidelity_from_visibility(0.38).unwrap(), 0.69, epsilon = 1e-12);
        assert!(fidelity_from_visibility(1.5).is_err());
    }

    #[test]
    fn born_examples() {
        let e = DensityMatrix::pure(&TimeBinState::early());
        assert_abs_diff_eq!(born_probability(&e, &SettingLabel::E.into()), 1.0);
        let plus = DensityMatrix::pure(&SettingLabel::Plus.state());
        assert_abs_diff_eq!(born_probability(&plus, &SettingLabel::PlusI.into()), 0.5, epsilon = 1e-12);
        let pi = DensityMatrix::pure(&SettingLabel::PlusI.state());
        assert_abs_diff_eq!(born_probability(&pi, &SettingLabel::MinusI.into()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projectors_are_idempotent() {
        for s in MeasurementSetting::all() {
            let p = s.projector.elements();
            for i in 0..2 {
                for j in 0..2 {
                    let sq = p[i][0] * p[0][j] + p[i][1] * p[1][j];
                    assert!((sq - p[i][j]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn flat_serialisation() {
        let rho = DensityMatrix::pure(&SettingLabel::PlusI.state());
        let flat = rho.to_flat();
        assert_abs_diff_eq!(flat[0], 0.5, epsilon = 1e-15);
        // ⟨e|ρ|ℓ⟩ = (1/√2)(-i/√2)
        assert_abs_diff_eq!(flat[3], -0.5, epsilon = 1e-15);
        let json = serde_json::to_string(&rho).unwrap();
        let back: DensityMatrix = serde_json::from_str(&json).unwrap();
        assert!(rho.trace_distance(&back) < 1e-15);
    }

    proptest! {
        #[test]
        fn pauli_y_is_an_involution(s in arb_state()) {
            let twice = pauli_y_transform(&pauli_y_transform(&s));
            prop_assert!((twice.alpha - s.alpha).abs() < 1e-12);
            prop_assert!((twice.beta - s.beta).abs() < 1e-12);
            if s.alpha > 1e-9 && s.beta > 1e-9 {
                let dphi = (twice.phi - s.phi).rem_euclid(TAU);
                prop_assert!(dphi.min(TAU - dphi) < 1e-12);
            }
        }

        #[test]
        fn pure_fidelity_is_squared_overlap(a in arb_state(), b in arb_state()) {
            let f = fidelity(&DensityMatrix::pure(&a), &b).unwrap();
            prop_assert!((f - a.overlap(&b)).abs() < 1e-12);
            let via_born = born_probability(
                &DensityMatrix::pure(&a),
                &MeasurementSetting { label: SettingLabel::E, projector: DensityMatrix::pure(&b) },
            );
            prop_assert!((f - via_born).abs() < 1e-12);
        }

        #[test]
        fn complementary_settings_sum_to_one(rho in arb_rho()) {
            for l in SettingLabel::ALL {
                let p = born_probability(&rho, &l.into()) + born_probability(&rho, &l.orthogonal().into());
                prop_assert!((p - 1.0).abs() < 1e-10);
            }
        }
    }
}
