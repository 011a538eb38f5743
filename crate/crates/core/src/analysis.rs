//! Reduction of triple-coincidence tables to states, fidelities and bounds.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{CountCell, CountTable};
use crate::error::{invalid, Error, Result};
use crate::qubit::{fidelity, DensityMatrix, SettingLabel, AVERAGE_WEIGHTS};

pub const CLASSICAL_FIDELITY: f64 = 2.0 / 3.0;
pub const CLASSICAL_VISIBILITY: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TomographyOptions {
    /// Refine the linear-inversion estimate by iterative maximum likelihood.
    pub mle: bool,
    /// Accidental triples expected per ψ⁻ flag, subtracted before inversion.
    pub accidentals_per_flag: Option<f64>,
}

/// Counts (or frequencies) for each of the six analyser settings.
pub type SettingCounts = BTreeMap<SettingLabel, f64>;

/// Linear inversion from the three Stokes parameters, then projection onto
/// the Bloch ball (for a qubit this is eigenvalue clipping plus renormalisation).
pub fn tomography_reconstruct(counts: &SettingCounts, opts: &TomographyOptions) -> Result<DensityMatrix> {
    let get = |l: SettingLabel| -> Result<f64> {
        match counts.get(&l) {
            Some(&n) if n >= 0.0 && n.is_finite() => Ok(n),
            Some(&n) => Err(Error::Tomography(format!("count {n} for {l} is not a non-negative number"))),
            None => Err(Error::Tomography(format!("setting {l} missing"))),
        }
    };
    let mut stokes = [0.0; 3];
    for (k, (a, b)) in [
        (SettingLabel::Plus, SettingLabel::Minus),
        (SettingLabel::PlusI, SettingLabel::MinusI),
        (SettingLabel::E, SettingLabel::L),
    ]
    .into_iter()
    .enumerate()
    {
        let (na, nb) = (get(a)?, get(b)?);
        if !(na + nb > 0.0) {
            return Err(Error::Tomography(format!("no counts in the {a}/{b} basis")));
        }
        stokes[k] = (na - nb) / (na + nb);
    }
    let norm = stokes.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        stokes.iter_mut().for_each(|x| *x /= norm);
    }
    let rho = DensityMatrix::from_bloch(stokes);
    if opts.mle {
        let mut freq = [0.0; 6];
        for (f, l) in freq.iter_mut().zip(SettingLabel::ALL) {
            *f = get(l)?;
        }
        return Ok(mle_refine(&rho, &freq));
    }
    Ok(rho)
}

fn projector(l: SettingLabel) -> Matrix2<C64> {
    let a = l.state().amplitudes();
    Matrix2::new(a[0] * a[0].conj(), a[0] * a[1].conj(), a[1] * a[0].conj(), a[1] * a[1].conj())
}

/// RρR iteration for the six-outcome likelihood, each basis normalised separately.
fn mle_refine(start: &DensityMatrix, counts: &[f64; 6]) -> DensityMatrix {
    let e = start.elements();
    // start from a slightly mixed state so zero-probability outcomes stay finite
    let mut rho = Matrix2::new(e[0][0], e[0][1], e[1][0], e[1][1]) * C64::new(0.98, 0.0)
        + Matrix2::identity() * C64::new(0.01, 0.0);
    let projectors: Vec<Matrix2<C64>> = SettingLabel::ALL.iter().map(|&l| projector(l)).collect();
    let basis_total: Vec<f64> = SettingLabel::ALL
        .iter()
        .map(|&l| {
            let i = SettingLabel::ALL.iter().position(|&x| x == l).unwrap();
            let j = SettingLabel::ALL.iter().position(|&x| x == l.orthogonal()).unwrap();
            counts[i] + counts[j]
        })
        .collect();
    for _ in 0..2000 {
        let mut r = Matrix2::<C64>::zeros();
        for k in 0..6 {
            let p = (projectors[k] * rho).trace().re;
            if counts[k] > 0.0 && p > 0.0 {
                r += projectors[k] * C64::new(counts[k] / basis_total[k] / p, 0.0);
            }
        }
        let next = r * rho * r;
        let tr = next.trace();
        let next = next / tr;
        let diff = (next - rho).norm();
        rho = next;
        if diff < 1e-13 {
            break;
        }
    }
    let h = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let m = [[h[(0, 0)], h[(0, 1)]], [h[(1, 0)], h[(1, 1)]]];
    DensityMatrix::new(m).unwrap_or_else(|_| DensityMatrix::maximally_mixed())
}

/// Per-setting triple counts for one prepared state and μ_A, optionally
/// with accidentals removed.
pub fn setting_counts(table: &CountTable, prepared: SettingLabel, mu_a: f64, opts: &TomographyOptions) -> Result<SettingCounts> {
    let mut out = SettingCounts::new();
    for l in SettingLabel::ALL {
        let c = table
            .get(prepared, l, mu_a)
            .ok_or_else(|| Error::Tomography(format!("no cell for prepared {prepared}, setting {l}, mu_a {mu_a}")))?;
        // equal-time normalisation: rates per second
        let mut n = c.triples as f64;
        if let Some(a) = opts.accidentals_per_flag {
            n = (n - a * c.bsm_flags as f64).max(0.0);
        }
        out.insert(l, n / c.elapsed);
    }
    Ok(out)
}

/// Resamples every cell as Poisson(observed) and returns the sample
/// standard deviation of `statistic`. Replicas where the statistic is not
/// finite are dropped.
pub fn monte_carlo_errors<F>(table: &CountTable, statistic: F, n_resamples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&CountTable) -> f64 + Sync,
{
    if n_resamples < 100 {
        return Err(invalid("n_resamples", format!("{n_resamples} < 100")));
    }
    let values: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let replica = table.map_counts(|n| {
                if n == 0 {
                    0
                } else {
                    Poisson::new(n as f64).expect("positive mean").sample(&mut rng) as u64
                }
            });
            statistic(&replica)
        })
        .filter(|v| v.is_finite())
        .collect();
    if values.len() < 2 {
        return Err(invalid("statistic", "fewer than two finite replicas"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub prepared: SettingLabel,
    /// Expected output state.
    pub target: SettingLabel,
    pub fidelity: f64,
    pub sigma: f64,
    pub rho: DensityMatrix,
}

fn state_fidelity(table: &CountTable, prepared: SettingLabel, mu_a: f64, opts: &TomographyOptions) -> Result<f64> {
    let rho = tomography_reconstruct(&setting_counts(table, prepared, mu_a, opts)?, opts)?;
    fidelity(&rho, &prepared.after_teleportation().state())
}

/// Reconstructed state and fidelity (with Monte-Carlo error) for every prepared state at `mu_a`.
pub fn fidelity_table(
    table: &CountTable,
    mu_a: f64,
    opts: &TomographyOptions,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<FidelityRow>> {
    table
        .prepared_states()
        .into_iter()
        .map(|prepared| {
            let rho = tomography_reconstruct(&setting_counts(table, prepared, mu_a, opts)?, opts)?;
            let target = prepared.after_teleportation();
            let f = fidelity(&rho, &target.state())?;
            let sigma = monte_carlo_errors(
                table,
                |t| state_fidelity(t, prepared, mu_a, opts).unwrap_or(f64::NAN),
                n_resamples,
                seed,
            )?;
            Ok(FidelityRow {
                prepared,
                target,
                fidelity: f,
                sigma,
                rho,
            })
        })
        .collect()
}

fn weight(target: SettingLabel) -> Option<f64> {
    match target {
        SettingLabel::E => Some(AVERAGE_WEIGHTS[0]),
        SettingLabel::L => Some(AVERAGE_WEIGHTS[1]),
        SettingLabel::Plus => Some(AVERAGE_WEIGHTS[2]),
        SettingLabel::PlusI => Some(AVERAGE_WEIGHTS[3]),
        _ => None,
    }
}

/// Weighted mean over the four targets e, ℓ, +, +i with the 1:1:2:2 weights.
///
/// `values` must contain each of the four targets exactly once.
pub fn weighted_average(values: &[(SettingLabel, f64)]) -> Result<f64> {
    let mut seen = Vec::new();
    let mut acc = 0.0;
    for &(t, v) in values {
        let w = weight(t).ok_or_else(|| invalid("target", format!("{t} is not one of E, L, PLUS, PLUS_I")))?;
        if seen.contains(&t) {
            return Err(invalid("target", format!("{t} given twice")));
        }
        seen.push(t);
        acc += w * v;
    }
    if seen.len() != 4 {
        return Err(invalid("target", "need E, L, PLUS and PLUS_I"));
    }
    Ok(acc)
}

/// Inputs to the vacuum + weak decoy bound for one prepared state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyInput {
    pub mu: f64,
    pub nu: f64,
    pub q_mu: f64,
    pub q_nu: f64,
    pub y0: f64,
    pub e_mu: f64,
    pub e_nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimates {
    pub q_mu: f64,
    pub q_nu: f64,
    pub y0: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub f1_lower: f64,
}

/// Vacuum error rate of a phase-randomised empty pulse.
pub const E0: f64 = 0.5;

pub fn decoy_bounds(input: &DecoyInput) -> Result<DecoyEstimates> {
    let DecoyInput {
        mu,
        nu,
        q_mu,
        q_nu,
        y0,
        e_mu,
        e_nu,
    } = *input;
    if !(mu > nu && nu > 0.0) {
        return Err(invalid("mu", format!("need mu > nu > 0, got mu = {mu}, nu = {nu}")));
    }
    for (name, v) in [("q_mu", q_mu), ("q_nu", q_nu)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::DecoyInfeasible(format!("{name} = {v} outside (0, 1)")));
        }
    }
    if !(0.0..1.0).contains(&y0) {
        return Err(invalid("y0", format!("{y0} outside [0, 1)")));
    }
    for (name, v) in [("e_mu", e_mu), ("e_nu", e_nu)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(name, format!("{v} outside [0, 1]")));
        }
    }
    let y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
    if !(y1 > 0.0) {
        return Err(Error::DecoyInfeasible(format!("single-photon yield bound {y1:.3e} ≤ 0")));
    }
    let e1 = ((e_nu * q_nu * nu.exp() - E0 * y0) / (nu * y1)).clamp(0.0, 1.0);
    Ok(DecoyEstimates {
        q_mu,
        q_nu,
        y0,
        e_mu,
        e_nu,
        y1_lower: y1,
        e1_upper: e1,
        f1_lower: 1.0 - e1,
    })
}

/// Gain (per pulse) and error fraction in the {target, target⊥} basis.
fn gain_and_error(cell_ok: &CountCell, cell_err: &CountCell, clock_hz: f64) -> (f64, f64) {
    let r_ok = cell_ok.triples as f64 / (cell_ok.elapsed * clock_hz);
    let r_err = cell_err.triples as f64 / (cell_err.elapsed * clock_hz);
    let q = r_ok + r_err;
    (q, if q > 0.0 { r_err / q } else { 0.0 })
}

/// Decoy inputs for `prepared` from a table holding μ, ν and vacuum cells.
pub fn decoy_input(table: &CountTable, prepared: SettingLabel, levels: [f64; 3], clock_hz: f64) -> Result<DecoyInput> {
    let [vac, nu, mu] = levels;
    let target = prepared.after_teleportation();
    let cell = |m: f64, s: SettingLabel| {
        table
            .get(prepared, s, m)
            .copied()
            .ok_or_else(|| invalid("counts", format!("missing cell ({prepared}, {s}, {m})")))
    };
    let (q_mu, e_mu) = gain_and_error(&cell(mu, target)?, &cell(mu, target.orthogonal())?, clock_hz);
    let (q_nu, e_nu) = gain_and_error(&cell(nu, target)?, &cell(nu, target.orthogonal())?, clock_hz);
    let (y0, _) = gain_and_error(&cell(vac, target)?, &cell(vac, target.orthogonal())?, clock_hz);
    Ok(DecoyInput {
        mu,
        nu,
        q_mu,
        q_nu,
        y0,
        e_mu,
        e_nu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyReport {
    pub per_state: Vec<(SettingLabel, DecoyEstimates)>,
    /// 1:1:2:2-weighted mean of F1_lower over the expected output states.
    pub average_f1_lower: f64,
}

/// Decoy bounds for each of the four prepared states whose outputs are e, ℓ, +, +i.
pub fn decoy_report(table: &CountTable, levels: [f64; 3], clock_hz: f64) -> Result<DecoyReport> {
    let mut per_state = Vec::new();
    let mut fs = Vec::new();
    for target in [SettingLabel::E, SettingLabel::L, SettingLabel::Plus, SettingLabel::PlusI] {
        let prepared = target.after_teleportation();
        let est = decoy_bounds(&decoy_input(table, prepared, levels, clock_hz)?)?;
        fs.push((target, est.f1_lower));
        per_state.push((prepared, est));
    }
    Ok(DecoyReport {
        per_state,
        average_f1_lower: weighted_average(&fs)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub amplitude: f64,
    /// θ₀ in [0, 2π).
    pub phase: f64,
    pub mean_rate: f64,
}

/// Least-squares fit of R(θ) = R₀(1 + V cos(θ − θ₀)), linear in
/// (R₀, R₀V cos θ₀, R₀V sin θ₀).
pub fn visibility_fit(scan: &[(f64, f64)]) -> Result<VisibilityFit> {
    let mut phases: Vec<f64> = scan.iter().map(|p| p.0.rem_euclid(std::f64::consts::TAU)).collect();
    phases.sort_by(f64::total_cmp);
    phases.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if phases.len() < 4 {
        return Err(Error::Underdetermined(format!("{} distinct phases, need ≥ 4", phases.len())));
    }
    // largest gap on the circle must leave a span of at least π
    let mut gap = phases[0] + std::f64::consts::TAU - phases[phases.len() - 1];
    for w in phases.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    if std::f64::consts::TAU - gap < std::f64::consts::PI - 1e-12 {
        return Err(Error::Underdetermined("phases span less than π".into()));
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for &(th, r) in scan {
        let row = nalgebra::Vector3::new(1.0, th.cos(), th.sin());
        ata += row * row.transpose();
        atb += row * r;
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Underdetermined("singular normal equations".into()))?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    let amplitude = b.hypot(c);
    let visibility = if a > 0.0 { amplitude / a } else { 0.0 };
    Ok(VisibilityFit {
        visibility,
        amplitude,
        phase: if amplitude > 0.0 { c.atan2(b).rem_euclid(std::f64::consts::TAU) } else { 0.0 },
        mean_rate: a,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub quantity: String,
    pub value: f64,
    pub sigma: f64,
    pub bound: f64,
    /// (value − bound)/σ.
    pub distance: f64,
}

/// A quantity to compare with its classical limit.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdQuantity {
    Fidelity { name: String, value: f64, sigma: f64 },
    /// Four fidelities for targets e, ℓ, +, +i with their errors.
    AverageFidelity { values: [f64; 4], sigmas: [f64; 4] },
    Visibility { value: f64, sigma: f64 },
}

pub fn classical_threshold_tests(quantities: &[ThresholdQuantity]) -> Result<Vec<ThresholdResult>> {
    let check = |s: f64| {
        if s > 0.0 && s.is_finite() {
            Ok(())
        } else {
            Err(invalid("sigma", format!("error bar {s} must be positive")))
        }
    };
    quantities
        .iter()
        .map(|q| {
            let (quantity, value, sigma, bound) = match q {
                ThresholdQuantity::Fidelity { name, value, sigma } => (name.clone(), *value, *sigma, CLASSICAL_FIDELITY),
                ThresholdQuantity::AverageFidelity { values, sigmas } => {
                    let v: f64 = values.iter().zip(AVERAGE_WEIGHTS).map(|(f, w)| w * f).sum();
                    let s = sigmas
                        .iter()
                        .zip(AVERAGE_WEIGHTS)
                        .map(|(s, w)| (w * s).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    ("average_fidelity".to_string(), v, s, CLASSICAL_FIDELITY)
                }
                ThresholdQuantity::Visibility { value, sigma } => ("visibility".to_string(), *value, *sigma, CLASSICAL_VISIBILITY),
            };
            check(sigma)?;
            Ok(ThresholdResult {
                quantity,
                value,
                sigma,
                bound,
                distance: (value - bound) / sigma,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{born_probability, MeasurementSetting};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exact(rho: &DensityMatrix) -> SettingCounts {
        SettingLabel::ALL
            .iter()
            .map(|&l| (l, born_probability(rho, &MeasurementSetting::new(l))))
            .collect()
    }

    #[test]
    fn cardinal_round_trips() {
        for l in SettingLabel::ALL {
            let truth = DensityMatrix::pure(&l.state());
            for mle in [false, true] {
                let rho = tomography_reconstruct(&exact(&truth), &TomographyOptions { mle, ..Default::default() }).unwrap();
                let tol = if mle { 1e-6 } else { 1e-12 };
                assert!(rho.trace_distance(&truth) < tol, "{l} mle={mle}");
            }
        }
        let mixed = DensityMatrix::maximally_mixed();
        let rho = tomography_reconstruct(&exact(&mixed), &TomographyOptions::default()).unwrap();
        assert!(rho.trace_distance(&mixed) < 1e-12);
    }

    #[test]
    fn missing_or_empty_basis() {
        let mut c = exact(&DensityMatrix::maximally_mixed());
        c.remove(&SettingLabel::PlusI);
        assert!(matches!(tomography_reconstruct(&c, &TomographyOptions::default()), Err(Error::Tomography(_))));
        let mut c = exact(&DensityMatrix::maximally_mixed());
        c.insert(SettingLabel::E, 0.0);
        c.insert(SettingLabel::L, 0.0);
        assert!(tomography_reconstruct(&c, &TomographyOptions::default()).is_err());
    }

    #[test]
    fn mle_agrees_with_linear_inside_the_ball() {
        let truth = DensityMatrix::from_bloch([0.3, -0.2, 0.5]);
        let rho = tomography_reconstruct(&exact(&truth), &TomographyOptions { mle: true, ..Default::default() }).unwrap();
        assert!(rho.trace_distance(&truth) < 1e-6);
    }

    proptest! {
        #[test]
        fn output_always_physical(c in prop::collection::vec(0.0..1000.0f64, 6), mle in any::<bool>()) {
            let counts: SettingCounts = SettingLabel::ALL.iter().copied().zip(c.iter().map(|x| x + 1e-3)).collect();
            let rho = tomography_reconstruct(&counts, &TomographyOptions { mle, ..Default::default() }).unwrap();
            prop_assert!(rho.validate().is_ok());
        }
    }

    fn one_cell(n: u64) -> CountTable {
        let mut t = CountTable::new();
        t.add(SettingLabel::E, SettingLabel::E, 0.0, &CountCell { triples: n, bsm_flags: 0, elapsed: 1.0 });
        t
    }

    #[test]
    fn mc_on_zero_counts_has_no_spread() {
        let sd = monte_carlo_errors(&one_cell(0), |t| t.iter().map(|c| c.3.triples as f64).sum(), 200, 1).unwrap();
        assert_eq!(sd, 0.0);
    }

    #[test]
    fn mc_recovers_poisson_width() {
        let sd = monte_carlo_errors(&one_cell(100), |t| t.iter().map(|c| c.3.triples as f64).sum(), 1000, 4).unwrap();
        assert!((sd - 10.0).abs() < 1.5, "{sd}");
        let again = monte_carlo_errors(&one_cell(100), |t| t.iter().map(|c| c.3.triples as f64).sum(), 1000, 4).unwrap();
        assert_eq!(sd, again);
        assert!(monte_carlo_errors(&one_cell(100), |_| 0.0, 99, 4).is_err());
    }

    #[test]
    fn noiseless_single_photon_channel() {
        let eta = 0.3;
        let (mu, nu) = (0.028, 0.014);
        // only the one-photon term survives: Q_m = e^{−m}·m·η
        let q = |m: f64| m * eta * (-m).exp();
        let est = decoy_bounds(&DecoyInput { mu, nu, q_mu: q(mu), q_nu: q(nu), y0: 0.0, e_mu: 0.0, e_nu: 0.0 }).unwrap();
        assert_abs_diff_eq!(est.y1_lower, eta, epsilon = 1e-12);
        assert_eq!(est.e1_upper, 0.0);
        assert_eq!(est.f1_lower, 1.0);
    }

    #[test]
    fn zero_decoy_gain_is_infeasible() {
        let r = decoy_bounds(&DecoyInput { mu: 0.028, nu: 0.014, q_mu: 1e-6, q_nu: 0.0, y0: 0.0, e_mu: 0.1, e_nu: 0.1 });
        assert!(matches!(r, Err(Error::DecoyInfeasible(_))));
        let r = decoy_bounds(&DecoyInput { mu: 0.028, nu: 0.014, q_mu: 1e-6, q_nu: 1e-9, y0: 0.0, e_mu: 0.1, e_nu: 0.1 });
        assert!(matches!(r, Err(Error::DecoyInfeasible(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn decoy_bounds_are_valid(
            y0 in 0.0..1e-5f64,
            y1 in 1e-4..0.3f64,
            yn_extra in prop::collection::vec(0.0..1.0f64, 6),
            e1 in 0.0..0.3f64,
            en in prop::collection::vec(0.0..1.0f64, 6),
        ) {
            let (mu, nu) = (0.028, 0.014);
            // arbitrary physical yields: Y_n ∈ [0, 1], errors e_n ∈ [0, 1], e_0 = ½
            let mut yields = vec![y0, y1];
            let mut errs = vec![0.5, e1];
            for (x, e) in yn_extra.iter().zip(&en) {
                yields.push(*x);
                errs.push(*e);
            }
            let gain = |m: f64| -> (f64, f64) {
                let mut p = (-m).exp();
                let (mut q, mut qe) = (0.0, 0.0);
                for n in 0..60usize {
                    let (y, e) = if n < yields.len() { (yields[n], errs[n]) } else { (yields[yields.len() - 1], errs[errs.len() - 1]) };
                    q += p * y;
                    qe += p * y * e;
                    p *= m / (n + 1) as f64;
                }
                (q, qe / q)
            };
            let (q_mu, e_mu) = gain(mu);
            let (q_nu, e_nu) = gain(nu);
            match decoy_bounds(&DecoyInput { mu, nu, q_mu, q_nu, y0, e_mu, e_nu }) {
                Ok(est) => {
                    prop_assert!(est.y1_lower <= y1 * (1.0 + 1e-9) + 1e-15);
                    prop_assert!(est.e1_upper >= e1 * (1.0 - 1e-9) - 1e-12);
                    prop_assert!(est.y1_lower <= q_mu / mu * mu.exp() + 1e-15);
                }
                Err(Error::DecoyInfeasible(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn exact_sinusoid() {
        let scan: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let th = k as f64 * std::f64::consts::TAU / 8.0;
                (th, 100.0 * (1.0 + 0.5 * (th - 1.0).cos()))
            })
            .collect();
        let fit = visibility_fit(&scan).unwrap();
        assert_abs_diff_eq!(fit.visibility, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.phase, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.mean_rate, 100.0, epsilon = 1e-9);
        let flat: Vec<(f64, f64)> = scan.iter().map(|p| (p.0, 42.0)).collect();
        assert_abs_diff_eq!(visibility_fit(&flat).unwrap().visibility, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn underdetermined_scans() {
        let three = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)];
        assert!(matches!(visibility_fit(&three), Err(Error::Underdetermined(_))));
        let narrow = [(0.0, 1.0), (0.5, 2.0), (1.0, 3.0), (1.5, 4.0)];
        assert!(matches!(visibility_fit(&narrow), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn threshold_arithmetic() {
        let r = classical_threshold_tests(&[
            ThresholdQuantity::Fidelity { name: "F".into(), value: 2.0 / 3.0, sigma: 0.01 },
            ThresholdQuantity::Fidelity { name: "avg".into(), value: 0.78, sigma: 0.01 },
            ThresholdQuantity::Visibility { value: 0.38, sigma: 0.04 },
        ])
        .unwrap();
        assert_abs_diff_eq!(r[0].distance, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1].distance, 11.333333333333, epsilon = 1e-9);
        assert_abs_diff_eq!(r[2].distance, 1.1666666666667, epsilon = 1e-9);
        assert!(classical_threshold_tests(&[ThresholdQuantity::Visibility { value: 0.4, sigma: 0.0 }]).is_err());
        let avg = classical_threshold_tests(&[ThresholdQuantity::AverageFidelity {
            values: [0.9, 0.9, 0.7, 0.7],
            sigmas: [0.02; 4],
        }])
        .unwrap();
        assert_abs_diff_eq!(avg[0].value, (0.9 + 0.9 + 1.4 + 1.4) / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_need_all_four() {
        assert!(weighted_average(&[(SettingLabel::E, 1.0)]).is_err());
        assert!(weighted_average(&[
            (SettingLabel::E, 1.0),
            (SettingLabel::L, 1.0),
            (SettingLabel::Plus, 1.0),
            (SettingLabel::Minus, 1.0)
        ])
        .is_err());
    }
}
