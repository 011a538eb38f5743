//! Brute-force linear optics on a truncated multi-mode Fock space.
//!
//! States are sparse maps from packed occupation tuples to amplitudes. Every
//! optical element is an exact bosonic unitary on the creation operators; loss
//! is a beamsplitter onto an environment mode that is never measured. The
//! oracle is slow and exact up to the photon-number cutoff, which makes it the
//! reference the analytic [`crate::photon`] model is checked against.
//!
//! Beamsplitter convention, fixed for the whole crate:
//!
//! ```text
//! a† → √T a† − √(1−T) b†
//! b† → √(1−T) a† + √T b†
//! ```
//!
//! so that a† b† |0⟩ → (|2,0⟩ − |0,2⟩)/√2 at T = ½.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qubit::{pauli_y_transform, DensityMatrix, TimeBinState};

const BITS: u32 = 4;
const FIELD: u128 = (1 << BITS) - 1;
pub const MAX_MODES: usize = (128 / BITS) as usize;

/// Largest leakage tolerated when a state is prepared.
pub const MAX_PREP_LEAKAGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bin {
    Early,
    Late,
}

impl Bin {
    pub const BOTH: [Bin; 2] = [Bin::Early, Bin::Late];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Shared,
    Orthogonal,
}

/// One bosonic mode: spatial port × time bin × distinguishability slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeLabel {
    pub port: String,
    pub bin: Bin,
    pub slot: Slot,
}

impl ModeLabel {
    pub fn new(port: &str, bin: Bin, slot: Slot) -> Self {
        Self {
            port: port.to_string(),
            bin,
            slot,
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:?}/{:?}", self.port, self.bin, self.slot)
    }
}

/// Mode layout and truncation shared by every register of one computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterSpec {
    pub modes: Vec<ModeLabel>,
    /// Maximum photons per mode.
    pub n_max: u8,
}

impl RegisterSpec {
    pub fn new(modes: Vec<ModeLabel>, n_max: u8) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(invalid("modes", format!("need 1..={MAX_MODES} modes")));
        }
        if n_max == 0 || u128::from(n_max) > FIELD {
            return Err(invalid("n_max", format!("must be in 1..={FIELD}")));
        }
        let mut seen = modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != modes.len() {
            return Err(invalid("modes", "duplicate mode label"));
        }
        Ok(Self { modes, n_max })
    }

    pub fn index(&self, port: &str, bin: Bin, slot: Slot) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.port == port && m.bin == bin && m.slot == slot)
            .ok_or_else(|| Error::MissingMode(format!("{port}/{bin:?}/{slot:?}")))
    }

    pub fn port_modes(&self, port: &str) -> Vec<usize> {
        (0..self.modes.len())
            .filter(|&i| self.modes[i].port == port)
            .collect()
    }
}

#[inline]
fn occ_get(key: u128, mode: usize) -> u8 {
    ((key >> (BITS as usize * mode)) & FIELD) as u8
}

#[inline]
fn occ_set(key: u128, mode: usize, n: u8) -> u128 {
    let shift = BITS as usize * mode;
    (key & !(FIELD << shift)) | (u128::from(n) << shift)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Sparse pure state on a truncated Fock space.
#[derive(Debug, Clone)]
pub struct FockRegister {
    spec: RegisterSpec,
    amps: HashMap<u128, C64>,
    leakage: f64,
}

impl FockRegister {
    pub fn vacuum(spec: &RegisterSpec) -> Self {
        let mut amps = HashMap::new();
        amps.insert(0u128, C64::new(1.0, 0.0));
        Self {
            spec: spec.clone(),
            amps,
            leakage: 0.0,
        }
    }

    /// Single Fock component with the given occupations (mode index, count).
    pub fn fock(spec: &RegisterSpec, occupations: &[(usize, u8)]) -> Result<Self> {
        let mut key = 0u128;
        for &(m, n) in occupations {
            if m >= spec.modes.len() {
                return Err(Error::MissingMode(format!("index {m}")));
            }
            if n > spec.n_max {
                return Err(invalid("occupation", format!("{n} exceeds n_max {}", spec.n_max)));
            }
            key = occ_set(key, m, n);
        }
        let mut amps = HashMap::new();
        amps.insert(key, C64::new(1.0, 0.0));
        Ok(Self {
            spec: spec.clone(),
            amps,
            leakage: 0.0,
        })
    }

    pub fn spec(&self) -> &RegisterSpec {
        &self.spec
    }

    /// Probability mass discarded at the cutoff so far.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitude(&self, occupations: &[u8]) -> C64 {
        let mut key = 0u128;
        for (m, &n) in occupations.iter().enumerate() {
            key = occ_set(key, m, n);
        }
        self.amps.get(&key).copied().unwrap_or_default()
    }

    /// Iterates (occupation tuple, amplitude) in a deterministic order.
    pub fn components(&self) -> Vec<(Vec<u8>, C64)> {
        let sorted: BTreeMap<u128, C64> = self.amps.iter().map(|(k, v)| (*k, *v)).collect();
        sorted
            .into_iter()
            .map(|(k, a)| ((0..self.spec.modes.len()).map(|m| occ_get(k, m)).collect(), a))
            .collect()
    }

    /// Distribution of the total photon number held in `modes`.
    pub fn photon_number_distribution(&self, modes: &[usize]) -> Vec<f64> {
        let mut dist = Vec::new();
        for (k, a) in &self.amps {
            let n: usize = modes.iter().map(|&m| occ_get(*k, m) as usize).sum();
            if dist.len() <= n {
                dist.resize(n + 1, 0.0);
            }
            dist[n] += a.norm_sqr();
        }
        dist
    }

    /// Tensor product of registers living on disjoint modes of the same spec.
    pub fn product(&self, other: &FockRegister) -> Result<FockRegister> {
        if self.spec != other.spec {
            return Err(invalid("register", "specs differ"));
        }
        let used = |r: &FockRegister| r.amps.keys().fold(0u128, |acc, k| acc | k);
        let (ua, ub) = (used(self), used(other));
        for m in 0..self.spec.modes.len() {
            if occ_get(ua, m) != 0 && occ_get(ub, m) != 0 {
                return Err(invalid(
                    "register",
                    format!("both factors occupy mode {}", self.spec.modes[m]),
                ));
            }
        }
        let mut amps = HashMap::with_capacity(self.amps.len() * other.amps.len());
        for (ka, a) in &self.amps {
            for (kb, b) in &other.amps {
                amps.insert(ka | kb, a * b);
            }
        }
        Ok(FockRegister {
            spec: self.spec.clone(),
            amps,
            leakage: self.leakage + other.leakage - self.leakage * other.leakage,
        })
    }

    /// Applies the two-mode unitary of the crate convention to modes (i, j).
    fn mix_pair(&mut self, i: usize, j: usize, transmittance: f64, cache: &mut BsCache) {
        if i == j {
            return;
        }
        let mut out: HashMap<u128, C64> = HashMap::with_capacity(self.amps.len() * 2);
        for (key, amp) in &self.amps {
            let (na, nb) = (occ_get(*key, i), occ_get(*key, j));
            if na == 0 && nb == 0 {
                *out.entry(*key).or_default() += amp;
                continue;
            }
            let base = occ_set(occ_set(*key, i, 0), j, 0);
            for &(ma, coef) in cache.get(transmittance, na, nb) {
                let mb = na + nb - ma;
                // occupations up to 2·n_max fit the 4-bit field for n_max ≤ 7;
                // larger ones are discarded below
                if u128::from(ma) > FIELD || u128::from(mb) > FIELD {
                    self.leakage += (amp * coef).norm_sqr();
                    continue;
                }
                let k = occ_set(occ_set(base, i, ma), j, mb);
                *out.entry(k).or_default() += amp * coef;
            }
        }
        let n_max = self.spec.n_max;
        let mut lost = 0.0;
        out.retain(|k, a| {
            let over = occ_get(*k, i) > n_max || occ_get(*k, j) > n_max;
            if over {
                lost += a.norm_sqr();
            }
            !over && a.norm_sqr() > 1e-30
        });
        self.leakage += lost;
        self.amps = out;
    }

    /// Exact beamsplitter between two ports, applied to every (bin, slot)
    /// pair the ports share.
    pub fn apply_beamsplitter(&self, port_a: &str, port_b: &str, transmittance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmittance) {
            return Err(invalid("transmittance", format!("{transmittance} outside [0, 1]")));
        }
        let pairs = self.port_pairs(port_a, port_b)?;
        let mut out = self.clone();
        let mut cache = BsCache::default();
        for (i, j) in pairs {
            out.mix_pair(i, j, transmittance, &mut cache);
        }
        Ok(out)
    }

    /// Loss: beamsplitter with transmittance `eta` onto an environment port.
    pub fn apply_loss(&self, port: &str, env_port: &str, eta: f64) -> Result<Self> {
        if eta == 1.0 {
            self.port_pairs(port, env_port)?;
            return Ok(self.clone());
        }
        self.apply_beamsplitter(port, env_port, eta)
    }

    /// Moves the shared-slot photons of `port` into √w·shared + √(1−w)·orthogonal.
    pub fn partial_overlap_embed(&self, port: &str, overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(invalid("overlap", format!("{overlap} outside [0, 1]")));
        }
        let mut out = self.clone();
        let mut cache = BsCache::default();
        for bin in Bin::BOTH {
            let sh = self.spec.index(port, bin, Slot::Shared);
            let or = self.spec.index(port, bin, Slot::Orthogonal);
            match (sh, or) {
                (Ok(s), Ok(o)) => out.mix_pair(s, o, overlap, &mut cache),
                (Ok(_), Err(e)) if overlap < 1.0 => return Err(e),
                _ => {}
            }
        }
        Ok(out)
    }

    fn port_pairs(&self, port_a: &str, port_b: &str) -> Result<Vec<(usize, usize)>> {
        let a = self.spec.port_modes(port_a);
        if a.is_empty() {
            return Err(Error::MissingMode(port_a.to_string()));
        }
        let mut pairs = Vec::new();
        for i in a {
            let m = &self.spec.modes[i];
            let j = self.spec.index(port_b, m.bin, m.slot)?;
            pairs.push((i, j));
        }
        Ok(pairs)
    }
}

/// Cached two-mode beamsplitter matrix elements keyed by (T, n_a, n_b).
#[derive(Default)]
struct BsCache {
    table: HashMap<(u64, u8, u8), Vec<(u8, f64)>>,
}

impl BsCache {
    fn get(&mut self, t: f64, na: u8, nb: u8) -> &[(u8, f64)] {
        self.table
            .entry((t.to_bits(), na, nb))
            .or_insert_with(|| beamsplitter_elements(t, na, nb))
    }
}

/// Output (m_a, amplitude) for input |n_a, n_b⟩ under the crate convention.
fn beamsplitter_elements(t: f64, na: u8, nb: u8) -> Vec<(u8, f64)> {
    let (st, sr) = (t.sqrt(), (1.0 - t).max(0.0).sqrt());
    let (na32, nb32) = (u32::from(na), u32::from(nb));
    let n = na32 + nb32;
    let mut coef = vec![0.0; n as usize + 1];
    // (√T a† − √R b†)^na (√R a† + √T b†)^nb
    for j in 0..=na32 {
        let c1 = binomial(na32, j) * st.powi(j as i32) * (-sr).powi((na32 - j) as i32);
        for k in 0..=nb32 {
            let c2 = binomial(nb32, k) * sr.powi(k as i32) * st.powi((nb32 - k) as i32);
            coef[(j + k) as usize] += c1 * c2;
        }
    }
    let norm_in = (factorial(na32) * factorial(nb32)).sqrt();
    coef.iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > 0.0)
        .map(|(ma, c)| {
            let ma = ma as u32;
            let f = (factorial(ma) * factorial(n - ma)).sqrt() / norm_in;
            (ma as u8, c * f)
        })
        .collect()
}

/// Threshold detector with binomial thinning and per-bin dark counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_count_prob: f64,
}

impl DetectorModel {
    pub fn new(efficiency: f64, dark_count_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(invalid("efficiency", format!("{efficiency} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&dark_count_prob) {
            return Err(invalid("dark_count_prob", format!("{dark_count_prob} outside [0, 1]")));
        }
        Ok(Self {
            efficiency,
            dark_count_prob,
        })
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_count_prob: 0.0,
        }
    }

    /// Probability of no click given `n` photons in the detector's modes.
    pub fn no_click(&self, n: u32) -> f64 {
        (1.0 - self.dark_count_prob) * (1.0 - self.efficiency).powi(n as i32)
    }
}

/// Charlie's four detector-bin channels, packed as bit flags.
pub mod pattern {
    pub const D1_EARLY: u8 = 0b0001;
    pub const D1_LATE: u8 = 0b0010;
    pub const D2_EARLY: u8 = 0b0100;
    pub const D2_LATE: u8 = 0b1000;
    /// The two cross patterns that herald |ψ⁻⟩.
    pub const PSI_MINUS: [u8; 2] = [D1_EARLY | D2_LATE, D1_LATE | D2_EARLY];

    pub fn is_psi_minus(p: u8) -> bool {
        PSI_MINUS.contains(&p)
    }

    /// Both detectors fire in the same bin (the HOM-monitor coincidence).
    pub fn is_same_bin_coincidence(p: u8) -> bool {
        (p & (D1_EARLY | D2_EARLY)) == (D1_EARLY | D2_EARLY)
            || (p & (D1_LATE | D2_LATE)) == (D1_LATE | D2_LATE)
    }

    /// Bit for (detector ∈ {0, 1}, bin ∈ {0 = early, 1 = late}).
    pub fn bit(detector: usize, bin: usize) -> u8 {
        1 << (2 * detector + bin)
    }

    pub fn name(p: u8) -> String {
        let mut parts = Vec::new();
        for (b, n) in [(D1_EARLY, "D1e"), (D1_LATE, "D1l"), (D2_EARLY, "D2e"), (D2_LATE, "D2l")] {
            if p & b != 0 {
                parts.push(n);
            }
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Probabilities of all 16 click patterns at Charlie.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PatternProbabilities(pub [f64; 16]);

impl PatternProbabilities {
    pub fn psi_minus(&self) -> f64 {
        pattern::PSI_MINUS.iter().map(|&p| self.0[p as usize]).sum()
    }

    pub fn same_bin_coincidence(&self) -> f64 {
        (0..16u8)
            .filter(|&p| pattern::is_same_bin_coincidence(p))
            .map(|p| self.0[p as usize])
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &PatternProbabilities) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled_add(&mut self, other: &PatternProbabilities, w: f64) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += w * b;
        }
    }

    /// `pattern,probability` rows for regression fixtures.
    pub fn to_table(&self) -> String {
        let mut s = String::from("pattern,name,probability\n");
        for (p, v) in self.0.iter().enumerate() {
            s.push_str(&format!("{p:04b},{},{v:.12e}\n", pattern::name(p as u8)));
        }
        s
    }
}

/// Click-pattern probabilities for two detectors watching `ports`.
///
/// Photons in every slot of a (port, bin) reach the same detector bin.
pub fn bsm_pattern_probabilities(
    reg: &FockRegister,
    ports: [&str; 2],
    detectors: [DetectorModel; 2],
) -> Result<PatternProbabilities> {
    let channels = detector_channels(reg.spec(), ports)?;
    let mut out = [0.0; 16];
    for (key, amp) in &reg.amps {
        let p = amp.norm_sqr();
        let no_click: Vec<f64> = channels
            .iter()
            .enumerate()
            .map(|(c, modes)| {
                let n: u32 = modes.iter().map(|&m| u32::from(occ_get(*key, m))).sum();
                detectors[c / 2].no_click(n)
            })
            .collect();
        for (pat, slot) in out.iter_mut().enumerate() {
            let mut q = p;
            for (c, nc) in no_click.iter().enumerate() {
                q *= if pat & (1 << c) != 0 { 1.0 - nc } else { *nc };
            }
            *slot += q;
        }
    }
    let norm = reg.norm_sqr();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    Ok(PatternProbabilities(out))
}

/// Mode lists for (D1e, D1l, D2e, D2l), matching the pattern bit order.
fn detector_channels(spec: &RegisterSpec, ports: [&str; 2]) -> Result<[Vec<usize>; 4]> {
    let mut ch: [Vec<usize>; 4] = Default::default();
    for (d, port) in ports.iter().enumerate() {
        for (b, bin) in Bin::BOTH.iter().enumerate() {
            let modes: Vec<usize> = (0..spec.modes.len())
                .filter(|&i| spec.modes[i].port == *port && spec.modes[i].bin == *bin)
                .collect();
            if modes.is_empty() {
                return Err(Error::MissingMode(format!("{port}/{bin:?}")));
            }
            ch[2 * d + b] = modes;
        }
    }
    Ok(ch)
}

/// Bob's conditional single-photon block from one register (unnormalised).
#[derive(Debug, Clone, Copy, Default)]
pub struct ConditionalBlock {
    /// Σ P(flag | Charlie) · ⟨1_i|ρ_B|1_j⟩ over the single-photon sector.
    pub block: [[C64; 2]; 2],
    /// Probability of the ψ⁻ flag irrespective of Bob's photon number.
    pub flag_probability: f64,
}

impl ConditionalBlock {
    fn accumulate(&mut self, other: &ConditionalBlock, w: f64) {
        for i in 0..2 {
            for j in 0..2 {
                self.block[i][j] += other.block[i][j] * w;
            }
        }
        self.flag_probability += other.flag_probability * w;
    }
}

/// Conditions a register on the ψ⁻ pattern and extracts Bob's single-photon block.
pub fn conditional_bob_block(
    reg: &FockRegister,
    charlie_ports: [&str; 2],
    detectors: [DetectorModel; 2],
    bob_port: &str,
) -> Result<ConditionalBlock> {
    let spec = reg.spec();
    let channels = detector_channels(spec, charlie_ports)?;
    let be = spec.index(bob_port, Bin::Early, Slot::Shared)?;
    let bl = spec.index(bob_port, Bin::Late, Slot::Shared)?;
    let bob_mask = occ_set(occ_set(0, be, FIELD as u8), bl, FIELD as u8);

    let flag_weight = |key: u128| -> f64 {
        let nc: Vec<f64> = channels
            .iter()
            .enumerate()
            .map(|(c, modes)| {
                let n: u32 = modes.iter().map(|&m| u32::from(occ_get(key, m))).sum();
                detectors[c / 2].no_click(n)
            })
            .collect();
        pattern::PSI_MINUS
            .iter()
            .map(|&pat| {
                (0..4)
                    .map(|c| if pat & (1 << c) != 0 { 1.0 - nc[c] } else { nc[c] })
                    .product::<f64>()
            })
            .sum()
    };

    // group amplitudes by the configuration of everything except Bob
    let mut groups: HashMap<u128, [C64; 2]> = HashMap::new();
    let mut out = ConditionalBlock::default();
    for (key, amp) in &reg.amps {
        let w = flag_weight(*key);
        out.flag_probability += w * amp.norm_sqr();
        let (ne, nl) = (occ_get(*key, be), occ_get(*key, bl));
        let rest = key & !bob_mask;
        match (ne, nl) {
            (1, 0) => groups.entry(rest).or_default()[0] += amp,
            (0, 1) => groups.entry(rest).or_default()[1] += amp,
            _ => {}
        }
    }
    for (rest, v) in &groups {
        let w = flag_weight(*rest);
        if w == 0.0 {
            continue;
        }
        for i in 0..2 {
            for j in 0..2 {
                out.block[i][j] += v[i] * v[j].conj() * w;
            }
        }
    }
    let norm = reg.norm_sqr();
    if norm > 0.0 {
        out.flag_probability /= norm;
        for row in &mut out.block {
            for el in row {
                *el /= norm;
            }
        }
    }
    Ok(out)
}

/// Normalised teleported state and the post-selection bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct TeleportedState {
    pub rho: DensityMatrix,
    /// P(ψ⁻ flag ∧ Bob holds exactly one photon).
    pub herald_probability: f64,
    /// P(ψ⁻ flag) irrespective of Bob.
    pub flag_probability: f64,
}

/// Averages conditional blocks over an equal-weight ensemble and normalises.
pub fn teleported_conditional_state(
    ensemble: &[FockRegister],
    charlie_ports: [&str; 2],
    detectors: [DetectorModel; 2],
    bob_port: &str,
) -> Result<TeleportedState> {
    if ensemble.is_empty() {
        return Err(invalid("ensemble", "no registers"));
    }
    let w = 1.0 / ensemble.len() as f64;
    let mut acc = ConditionalBlock::default();
    for reg in ensemble {
        let b = conditional_bob_block(reg, charlie_ports, detectors, bob_port)?;
        acc.accumulate(&b, w);
    }
    let tr = (acc.block[0][0] + acc.block[1][1]).re;
    if tr < 1e-15 {
        return Err(Error::UndefinedState(tr));
    }
    let mut m = acc.block;
    for row in &mut m {
        for el in row {
            *el /= tr;
        }
    }
    // enforce exact Hermiticity lost to rounding
    let off = 0.5 * (m[0][1] + m[1][0].conj());
    m[0][1] = off;
    m[1][0] = off.conj();
    m[0][0].im = 0.0;
    m[1][1].im = 0.0;
    Ok(TeleportedState {
        rho: DensityMatrix::new(m)?,
        herald_probability: tr,
        flag_probability: acc.flag_probability,
    })
}

/// Phase-averaged coherent state (one member of the phase grid) in the
/// single mode Σ_k v_k a_k†, truncated at `n_max` photons.
pub fn build_coherent(
    spec: &RegisterSpec,
    mu: f64,
    phase: f64,
    mode: &[(usize, C64)],
) -> Result<FockRegister> {
    if !(mu >= 0.0) {
        return Err(invalid("mu", format!("{mu} must be ≥ 0")));
    }
    let n_max = u32::from(spec.n_max);
    let weights: Vec<f64> = (0..=n_max)
        .map(|n| (-mu).exp() * mu.powi(n as i32) / factorial(n))
        .collect();
    let kept: f64 = weights.iter().sum();
    let leakage = 1.0 - kept;
    if leakage > MAX_PREP_LEAKAGE {
        return Err(Error::Truncation { leakage });
    }
    let mut reg = FockRegister {
        spec: spec.clone(),
        amps: HashMap::new(),
        leakage,
    };
    for n in 0..=n_max {
        let c = C64::from_polar((weights[n as usize] / kept).sqrt(), phase * f64::from(n));
        for (key, a) in n_photons_in_mode(spec, n, mode)? {
            *reg.amps.entry(key).or_default() += c * a;
        }
    }
    reg.amps.retain(|_, a| a.norm_sqr() > 1e-30);
    Ok(reg)
}

/// Fock state |n⟩ of the mode Σ_k v_k a_k†.
pub fn build_single_mode_fock(spec: &RegisterSpec, n: u8, mode: &[(usize, C64)]) -> Result<FockRegister> {
    let mut reg = FockRegister {
        spec: spec.clone(),
        amps: HashMap::new(),
        leakage: 0.0,
    };
    for (key, a) in n_photons_in_mode(spec, u32::from(n), mode)? {
        *reg.amps.entry(key).or_default() += a;
    }
    reg.amps.retain(|_, a| a.norm_sqr() > 1e-30);
    Ok(reg)
}

/// (c†)^n/√n! |0⟩ expanded over the physical modes of `mode`.
fn n_photons_in_mode(spec: &RegisterSpec, n: u32, mode: &[(usize, C64)]) -> Result<Vec<(u128, C64)>> {
    let norm: f64 = mode.iter().map(|(_, v)| v.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid("mode", format!("mode vector norm² {norm} ≠ 1")));
    }
    for &(m, _) in mode {
        if m >= spec.modes.len() {
            return Err(Error::MissingMode(format!("index {m}")));
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0u32; mode.len()];
    distribute(n, 0, &mut counts, &mut |c: &[u32]| {
        // multinomial amplitude √(n!/Π n_k!) Π v_k^{n_k}
        let mut amp = C64::new((factorial(n) / c.iter().map(|&k| factorial(k)).product::<f64>()).sqrt(), 0.0);
        let mut key = 0u128;
        for (k, &cnt) in c.iter().enumerate() {
            amp *= mode[k].1.powu(cnt);
            key = occ_set(key, mode[k].0, cnt as u8);
        }
        out.push((key, amp));
    });
    Ok(out)
}

fn distribute(remaining: u32, idx: usize, counts: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
    if idx + 1 == counts.len() {
        counts[idx] = remaining;
        f(counts);
        return;
    }
    for k in 0..=remaining {
        counts[idx] = k;
        distribute(remaining - k, idx + 1, counts, f);
    }
}

/// Time-bin entangled pairs: thermal pair number with n-pair component
/// ∝ (a_e†b_e† + a_ℓ†b_ℓ†)^n |0⟩, i.e. |φ⁺⟩ at the single-pair level.
pub fn build_spdc_pair(
    spec: &RegisterSpec,
    mu_pair: f64,
    idler: [usize; 2],
    signal: [usize; 2],
) -> Result<FockRegister> {
    if !(0.0..=0.2).contains(&mu_pair) {
        return Err(invalid("mu_pair", format!("{mu_pair} outside [0, 0.2]")));
    }
    let n_max = u32::from(spec.n_max);
    let weights: Vec<f64> = (0..=n_max)
        .map(|n| mu_pair.powi(n as i32) / (1.0 + mu_pair).powi(n as i32 + 1))
        .collect();
    let kept: f64 = weights.iter().sum();
    let leakage = 1.0 - kept;
    if leakage > MAX_PREP_LEAKAGE {
        return Err(Error::Truncation { leakage });
    }
    let mut amps = HashMap::new();
    for n in 0..=n_max {
        let a = (weights[n as usize] / kept / f64::from(n + 1)).sqrt();
        if a == 0.0 {
            continue;
        }
        for k in 0..=n {
            let mut key = 0u128;
            key = occ_set(key, idler[0], k as u8);
            key = occ_set(key, idler[1], (n - k) as u8);
            key = occ_set(key, signal[0], k as u8);
            key = occ_set(key, signal[1], (n - k) as u8);
            amps.insert(key, C64::new(a, 0.0));
        }
    }
    Ok(FockRegister {
        spec: spec.clone(),
        amps,
        leakage,
    })
}

/// What Alice sends into the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AliceSource {
    /// Phase-randomised attenuated laser with mean photon number μ.
    Coherent { mu: f64 },
    /// Exactly one photon, for protocol identity checks.
    SinglePhoton,
    Off,
}

/// What the entangled-pair source emits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairSource {
    /// Thermal pair-number statistics with mean μ.
    Thermal { mu: f64 },
    /// Exactly one |φ⁺⟩ pair.
    SinglePair,
}

/// Complete teleportation set-up evaluated by brute force.
#[derive(Debug, Clone, Copy)]
pub struct OracleScenario {
    pub input: TimeBinState,
    pub alice: AliceSource,
    pub pairs: PairSource,
    pub overlap: f64,
    /// Transmittance of Alice → Charlie including polarisation filtering.
    pub eta_alice: f64,
    /// Transmittance of the idler path Bob → Charlie.
    pub eta_idler: f64,
    /// Transmittance of Bob's 795 nm arm up to (and including) his detector.
    pub eta_bob: f64,
    pub detectors: [DetectorModel; 2],
    pub n_max: u8,
    /// Points in the phase-randomisation grid.
    pub phases: usize,
}

impl OracleScenario {
    pub fn ideal(input: TimeBinState) -> Self {
        Self {
            input,
            alice: AliceSource::SinglePhoton,
            pairs: PairSource::SinglePair,
            overlap: 1.0,
            eta_alice: 1.0,
            eta_idler: 1.0,
            eta_bob: 1.0,
            detectors: [DetectorModel::ideal(); 2],
            n_max: 3,
            phases: 16,
        }
    }

    fn spec(&self) -> Result<RegisterSpec> {
        let mut modes = Vec::new();
        for port in ["alice", "idler"] {
            for bin in Bin::BOTH {
                for slot in [Slot::Shared, Slot::Orthogonal] {
                    modes.push(ModeLabel::new(port, bin, slot));
                }
            }
        }
        for port in ["bob", "env_alice", "env_idler", "env_bob"] {
            for bin in Bin::BOTH {
                modes.push(ModeLabel::new(port, bin, Slot::Shared));
            }
        }
        RegisterSpec::new(modes, self.n_max)
    }

    /// Phase-grid ensemble of the state arriving at the detectors.
    pub fn ensemble(&self) -> Result<Vec<FockRegister>> {
        if self.phases < 8 {
            return Err(invalid("phases", "phase grid needs at least 8 points"));
        }
        let spec = self.spec()?;
        let ae = spec.index("alice", Bin::Early, Slot::Shared)?;
        let al = spec.index("alice", Bin::Late, Slot::Shared)?;
        let amps = self.input.amplitudes();
        let alice_mode = [(ae, amps[0]), (al, amps[1])];
        let idler = [
            spec.index("idler", Bin::Early, Slot::Shared)?,
            spec.index("idler", Bin::Late, Slot::Shared)?,
        ];
        let signal = [
            spec.index("bob", Bin::Early, Slot::Shared)?,
            spec.index("bob", Bin::Late, Slot::Shared)?,
        ];
        let pair = match self.pairs {
            PairSource::Thermal { mu } => build_spdc_pair(&spec, mu, idler, signal)?,
            PairSource::SinglePair => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut amps = HashMap::new();
                amps.insert(occ_set(occ_set(0, idler[0], 1), signal[0], 1), C64::new(s, 0.0));
                amps.insert(occ_set(occ_set(0, idler[1], 1), signal[1], 1), C64::new(s, 0.0));
                FockRegister {
                    spec: spec.clone(),
                    amps,
                    leakage: 0.0,
                }
            }
        };

        let phases: Vec<f64> = match self.alice {
            AliceSource::Coherent { .. } => (0..self.phases)
                .map(|k| TAU * k as f64 / self.phases as f64)
                .collect(),
            _ => vec![0.0],
        };
        phases
            .par_iter()
            .map(|&theta| {
                let alice = match self.alice {
                    AliceSource::Coherent { mu } => build_coherent(&spec, mu, theta, &alice_mode)?,
                    AliceSource::SinglePhoton => build_single_mode_fock(&spec, 1, &alice_mode)?,
                    AliceSource::Off => FockRegister::vacuum(&spec),
                };
                let reg = alice.product(&pair)?;
                let reg = reg.apply_loss_shared("alice", "env_alice", self.eta_alice)?;
                let reg = reg.apply_loss_shared("idler", "env_idler", self.eta_idler)?;
                let reg = reg.apply_loss_shared("bob", "env_bob", self.eta_bob)?;
                let reg = reg.partial_overlap_embed("alice", self.overlap)?;
                reg.apply_beamsplitter("alice", "idler", 0.5)
            })
            .collect()
    }

    pub fn pattern_probabilities(&self) -> Result<PatternProbabilities> {
        let ens = self.ensemble()?;
        let w = 1.0 / ens.len() as f64;
        let mut acc = PatternProbabilities::default();
        for reg in &ens {
            let p = bsm_pattern_probabilities(reg, ["alice", "idler"], self.detectors)?;
            acc.scaled_add(&p, w);
        }
        Ok(acc)
    }

    pub fn teleported_state(&self) -> Result<TeleportedState> {
        let ens = self.ensemble()?;
        teleported_conditional_state(&ens, ["alice", "idler"], self.detectors, "bob")
    }

    /// Fidelity of the teleported state with σy·input.
    pub fn fidelity(&self) -> Result<f64> {
        let t = self.teleported_state()?;
        Ok(t.rho.expectation(&pauli_y_transform(&self.input)))
    }
}

impl FockRegister {
    /// Loss on the shared-slot modes of `port` only (the orthogonal slots are
    /// still empty when losses are applied).
    fn apply_loss_shared(&self, port: &str, env: &str, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid("transmittance", format!("{eta} outside [0, 1]")));
        }
        if eta == 1.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        let mut cache = BsCache::default();
        for bin in Bin::BOTH {
            let i = self.spec.index(port, bin, Slot::Shared)?;
            let j = self.spec.index(env, bin, Slot::Shared)?;
            out.mix_pair(i, j, eta, &mut cache);
        }
        Ok(out)
    }
}
