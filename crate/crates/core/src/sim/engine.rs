//! Window-by-window simulation of the three-node link.
//!
//! Two samplers share one window loop. [`run_windows`] draws each window's
//! totals from the exact per-pulse outcome distribution (multinomial over
//! 32 Charlie/Bob classes plus the monitor port). [`run_events`] walks the
//! pulse train slot by slot, skipping empty slots geometrically, and forms
//! triples from the resulting Charlie and Bob records through the delay line.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::counts::CountCell;
use crate::error::{invalid, Error, Result};
use crate::fock::{pattern, DetectorModel};
use crate::photon::{db_to_transmittance, overlap_at, transmittance, BsmSetup, SourceParams};
use crate::qubit::{SettingLabel, TimeBinState};
use crate::sim::coincidence::{triple_coincidence, BobClick, BobRecord, CharlieRecord, CoincidenceRecord};
use crate::sim::detection::window_acceptance;
use crate::sim::drift::{DriftKind, DriftParams, DriftProcess};
use crate::sim::topology::NodeTopology;

use num_complex::Complex64 as C64;

/// Detector and loss figures not tied to a particular channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hardware {
    pub snspd_efficiency: f64,
    /// Per detector per bin window.
    pub snspd_dark_prob: f64,
    pub snspd_jitter_ps: f64,
    pub coincidence_half_window_ps: f64,
    /// Bob's 795 nm detector.
    pub bob_efficiency: f64,
    pub bob_dark_prob: f64,
    /// Detector on the reflected port of Charlie's polarising beamsplitter.
    pub monitor_efficiency: f64,
    /// Per slot.
    pub monitor_dark_prob: f64,
    /// Unattributed loss on top of the quoted channel figures.
    pub excess_loss_alice_db: f64,
    pub excess_loss_idler_db: f64,
    pub excess_loss_bob_db: f64,
    /// Peak |⟨φ_A|φ_I⟩|² at zero arrival-time difference.
    pub max_overlap: f64,
}

impl Default for Hardware {
    fn default() -> Self {
        Self {
            snspd_efficiency: 0.70,
            snspd_dark_prob: 1e-6,
            snspd_jitter_ps: 150.0,
            coincidence_half_window_ps: 500.0,
            bob_efficiency: 0.65,
            bob_dark_prob: 1e-6,
            monitor_efficiency: 0.70,
            monitor_dark_prob: 1e-6,
            excess_loss_alice_db: 0.0,
            excess_loss_idler_db: 12.0,
            excess_loss_bob_db: 16.0,
            max_overlap: 0.745,
        }
    }
}

impl Hardware {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} outside [0, 1]")))
            }
        };
        unit("snspd_efficiency", self.snspd_efficiency)?;
        unit("snspd_dark_prob", self.snspd_dark_prob)?;
        unit("bob_efficiency", self.bob_efficiency)?;
        unit("bob_dark_prob", self.bob_dark_prob)?;
        unit("monitor_efficiency", self.monitor_efficiency)?;
        unit("monitor_dark_prob", self.monitor_dark_prob)?;
        unit("max_overlap", self.max_overlap)?;
        if !(self.snspd_jitter_ps >= 0.0) {
            return Err(invalid("snspd_jitter_ps", "must be ≥ 0"));
        }
        if !(self.coincidence_half_window_ps > 0.0) {
            return Err(invalid("coincidence_half_window_ps", "must be > 0"));
        }
        for (name, v) in [
            ("excess_loss_alice_db", self.excess_loss_alice_db),
            ("excess_loss_idler_db", self.excess_loss_idler_db),
            ("excess_loss_bob_db", self.excess_loss_bob_db),
        ] {
            if !(v >= 0.0) {
                return Err(invalid(name, "must be ≥ 0"));
            }
        }
        Ok(())
    }

    /// Charlie's detectors with the coincidence-window acceptance folded in.
    pub fn charlie_detector(&self) -> Result<DetectorModel> {
        let acc = window_acceptance(self.snspd_jitter_ps, self.coincidence_half_window_ps);
        DetectorModel::new(self.snspd_efficiency * acc, self.snspd_dark_prob)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Arrival-time difference at Charlie, ps.
    pub timing: DriftParams,
    /// Each of the two misalignment angles of Alice's channel, rad.
    pub polarization: DriftParams,
    /// Residual interferometer phase, rad.
    pub phase: DriftParams,
}

impl DriftConfig {
    pub fn off() -> Self {
        Self {
            timing: DriftParams::off(300.0),
            polarization: DriftParams::off(std::f64::consts::FRAC_PI_2),
            phase: DriftParams::off(std::f64::consts::PI),
        }
    }
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            // ~200 ps over 540 windows plus diffusion
            timing: DriftParams {
                step_sigma: 3.0,
                ramp_per_window: 200.0 / 540.0,
                bound: 300.0,
                initial: 0.0,
            },
            // slow birefringence drift: ~15% transmission swing per 1.5 h
            polarization: DriftParams {
                step_sigma: 0.005,
                ramp_per_window: 0.001,
                bound: std::f64::consts::FRAC_PI_2,
                initial: 0.0,
            },
            phase: DriftParams::off(std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: NodeTopology,
    pub hardware: Hardware,
    pub source: SourceParams,
    pub drift: DriftConfig,
    pub window_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            topology: NodeTopology::default(),
            hardware: Hardware::default(),
            source: SourceParams {
                mu_a: 0.014,
                mu_spdc: 0.045,
                pulse_sigma: 30.0,
            },
            drift: DriftConfig::default(),
            window_s: 10.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.hardware.validate()?;
        self.topology.validate(self.hardware.snspd_jitter_ps)?;
        self.source.validate()?;
        self.drift.timing.validate()?;
        self.drift.polarization.validate()?;
        self.drift.phase.validate()?;
        if !(self.window_s > 0.0) {
            return Err(invalid("window_s", "must be > 0"));
        }
        if self.slots_per_window() == 0 {
            return Err(invalid("window_s", "shorter than one clock slot"));
        }
        Ok(())
    }

    pub fn slots_per_window(&self) -> u64 {
        (self.window_s * self.topology.clock_rate_hz).round() as u64
    }

    /// Alice → Charlie transmittance up to the polarising beamsplitter.
    pub fn alice_link(&self) -> f64 {
        transmittance(&self.topology.alice_charlie) * db_to_transmittance(self.hardware.excess_loss_alice_db)
    }

    /// Per-pulse setup for a given residual timing offset and polarisation misalignment.
    pub fn bsm_setup(&self, mu_a: f64, dt: f64, theta: f64) -> Result<BsmSetup> {
        let h = &self.hardware;
        let det = h.charlie_detector()?;
        let setup = BsmSetup {
            mu_a,
            mu_spdc: self.source.mu_spdc,
            eta_alice: self.alice_link() * theta.cos().powi(2),
            eta_idler: transmittance(&self.topology.bob_charlie) * db_to_transmittance(h.excess_loss_idler_db),
            eta_bob: h.bob_efficiency * db_to_transmittance(h.excess_loss_bob_db),
            overlap: overlap_at(h.max_overlap, self.source.pulse_sigma, dt),
            detectors: [det, det],
            bob_dark_prob: h.bob_dark_prob,
            alice_photons: None,
            single_pair: false,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Probability that one of Alice's photons reaches the monitor detector.
    pub fn monitor_photon_probability(&self, theta: f64) -> f64 {
        self.alice_link() * theta.sin().powi(2) * self.hardware.monitor_efficiency
    }
}

/// What Alice sends and Bob measures for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub prepared: SettingLabel,
    pub setting: SettingLabel,
    pub mu_a: f64,
    /// Extra phase on the late amplitude of Alice's state (phase scans).
    #[serde(default)]
    pub phase_offset: f64,
}

impl Cell {
    pub fn new(prepared: SettingLabel, setting: SettingLabel, mu_a: f64) -> Self {
        Self {
            prepared,
            setting,
            mu_a,
            phase_offset: 0.0,
        }
    }
}

/// Counts handed to controllers at the end of each window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowObservation {
    pub window: u32,
    pub hom_coincidences: u64,
    pub monitor_counts: u64,
    pub singles: [u64; 2],
    pub psi_minus_flags: u64,
    pub triples: u64,
}

/// Relative actuator moves requested for the next window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuation {
    /// Change of Alice's emission time, ps.
    pub timing_shift_ps: f64,
    /// Change of the two polarisation-controller angles, rad.
    pub polarization: [f64; 2],
}

/// Per-window callback contract between the simulation and a lock.
///
/// Returning [`Error::LockLost`] is recorded in the summary; the actuators
/// hold for that window and the controller keeps being called.
pub trait Controller {
    fn on_window(&mut self, obs: &WindowObservation) -> Result<Actuation>;
}

pub const WINDOW_SUMMARY_HEADER: &str = "window,t_end_s,timing_drift_ps,applied_shift_ps,residual_ps,\
pol_misalignment_rad,actuator_x_rad,actuator_y_rad,phase_rad,overlap,singles_d1,singles_d2,monitor_counts,\
hom_coincidences,hom_expected,pairwise_coincidences,psi_minus_flags,bob_clicks,triples,lock_lost";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: u32,
    pub t_end_s: f64,
    pub timing_drift_ps: f64,
    pub applied_shift_ps: f64,
    /// Arrival-time difference seen by the beamsplitter.
    pub residual_ps: f64,
    pub pol_misalignment_rad: f64,
    pub actuator_x_rad: f64,
    pub actuator_y_rad: f64,
    pub phase_rad: f64,
    pub overlap: f64,
    pub singles_d1: u64,
    pub singles_d2: u64,
    pub monitor_counts: u64,
    pub hom_coincidences: u64,
    pub hom_expected: f64,
    pub pairwise_coincidences: u64,
    pub psi_minus_flags: u64,
    pub bob_clicks: u64,
    pub triples: u64,
    pub lock_lost: bool,
}

impl WindowSummary {
    pub fn observation(&self) -> WindowObservation {
        WindowObservation {
            window: self.window,
            hom_coincidences: self.hom_coincidences,
            monitor_counts: self.monitor_counts,
            singles: [self.singles_d1, self.singles_d2],
            psi_minus_flags: self.psi_minus_flags,
            triples: self.triples,
        }
    }
}

pub fn write_summaries<W: std::io::Write>(summaries: &[WindowSummary], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(WINDOW_SUMMARY_HEADER.split(','))?;
    for s in summaries {
        wr.serialize(s)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSlotRecord {
    pub slot_index: i64,
    pub arrival_offset_ps: f64,
    pub polarization_misalignment: f64,
    /// Alice's emitted photons in the early and late bin.
    pub photon_content: [u32; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub pulses: Vec<PulseSlotRecord>,
    pub coincidences: Vec<CoincidenceRecord>,
}

pub const EVENT_LOG_HEADER: &str = "slot_index,arrival_offset_ps,polarization_misalignment_rad,photons_early,photons_late";

impl EventLog {
    pub fn write_pulses<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(EVENT_LOG_HEADER.split(','))?;
        for p in &self.pulses {
            wr.write_record(&[
                p.slot_index.to_string(),
                p.arrival_offset_ps.to_string(),
                p.polarization_misalignment.to_string(),
                p.photon_content[0].to_string(),
                p.photon_content[1].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub windows: u32,
    pub seed: u64,
    /// Delay-line setting in slots; `None` uses the topology's correct value.
    pub vedl: Option<i64>,
    /// Keep pulse and coincidence records (event sampler only).
    pub keep_events: bool,
}

impl RunOptions {
    pub fn new(windows: u32, seed: u64) -> Self {
        Self {
            windows,
            seed,
            vedl: None,
            keep_events: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub summaries: Vec<WindowSummary>,
    pub counts: CountCell,
    pub events: Option<EventLog>,
}

/// Per-window outcome distribution: classes indexed by pattern | bob << 4.
struct WindowModel {
    joint: [[f64; 2]; 16],
    monitor: f64,
    hom_probability: f64,
}

impl WindowModel {
    fn class(&self, k: usize) -> f64 {
        self.joint[k & 0xF][k >> 4]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    singles: [u64; 2],
    monitor: u64,
    hom: u64,
    pairwise: u64,
    flags: u64,
    bob: u64,
    triples: u64,
}

impl Tally {
    fn add_class(&mut self, pat: u8, bob: bool, n: u64) {
        let d1 = pattern::bit(0, 0) | pattern::bit(0, 1);
        let d2 = pattern::bit(1, 0) | pattern::bit(1, 1);
        if pat & d1 != 0 {
            self.singles[0] += n;
        }
        if pat & d2 != 0 {
            self.singles[1] += n;
        }
        if pat & d1 != 0 && pat & d2 != 0 {
            self.pairwise += n;
        }
        if pattern::is_same_bin_coincidence(pat) {
            self.hom += n;
        }
        if pattern::is_psi_minus(pat) {
            self.flags += n;
        }
        if bob {
            self.bob += n;
        }
    }
}

#[derive(Clone, Copy)]
enum Sampler {
    Aggregate,
    Event,
}

/// Window totals drawn from the exact per-pulse distribution.
pub fn run_windows(scenario: &Scenario, cell: Cell, opts: RunOptions, controllers: &mut [&mut dyn Controller]) -> Result<RunOutput> {
    run(scenario, cell, opts, controllers, Sampler::Aggregate)
}

/// Slot-level event simulation; intended for short windows.
pub fn run_events(scenario: &Scenario, cell: Cell, opts: RunOptions, controllers: &mut [&mut dyn Controller]) -> Result<RunOutput> {
    run(scenario, cell, opts, controllers, Sampler::Event)
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Window model for one (residual, θ, φ); drift-free runs build it once.
struct CachedModel {
    key: [u64; 3],
    input: TimeBinState,
    setup: BsmSetup,
    model: WindowModel,
    r_mon: f64,
}

fn run(
    scenario: &Scenario,
    cell: Cell,
    opts: RunOptions,
    controllers: &mut [&mut dyn Controller],
    sampler: Sampler,
) -> Result<RunOutput> {
    scenario.validate()?;
    if opts.windows == 0 {
        return Err(invalid("windows", "need at least one window"));
    }
    if !(cell.mu_a >= 0.0) {
        return Err(invalid("mu_a", "must be ≥ 0"));
    }
    let topo = &scenario.topology;
    let correct = topo.correct_vedl();
    let vedl = opts.vedl.unwrap_or(correct);
    if vedl < 0 {
        return Err(Error::Topology(format!("delay line set to {vedl} slots")));
    }

    let mut drift_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    drift_rng.set_stream(0);
    let mut count_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    count_rng.set_stream(1);

    let mut timing = DriftProcess::new(DriftKind::Timing, scenario.drift.timing)?;
    let mut pol = [
        DriftProcess::new(DriftKind::Polarization, scenario.drift.polarization)?,
        DriftProcess::new(DriftKind::Polarization, scenario.drift.polarization)?,
    ];
    let mut phase = DriftProcess::new(DriftKind::Phase, scenario.drift.phase)?;

    let slots = scenario.slots_per_window();
    let d_bc = topo.delay_slots(&topo.bob_charlie);
    let d_cb = topo.delay_slots(&topo.charlie_bob_classical);
    let base = cell.prepared.state().amplitudes();

    let mut shift = 0.0;
    let mut actuators = [0.0f64; 2];
    let mut out = RunOutput {
        events: opts.keep_events.then(EventLog::default),
        ..RunOutput::default()
    };

    let mut cache: Option<CachedModel> = None;
    for w in 0..opts.windows {
        let residual = timing.state - shift;
        let theta = (pol[0].state - actuators[0]).hypot(pol[1].state - actuators[1]);
        let phi = phase.state + cell.phase_offset;
        let key = [residual.to_bits(), theta.to_bits(), phi.to_bits()];
        if cache.as_ref().is_none_or(|c| c.key != key) {
            let input = TimeBinState::from_amplitudes(base[0], base[1] * C64::from_polar(1.0, phi))?;
            // timing offsets beyond the model's range leave no overlap at all
            let setup = scenario.bsm_setup(cell.mu_a, residual.clamp(-1e4, 1e4), theta)?;
            let joint = setup.joint_outcomes(&input, cell.setting);
            let r_mon = scenario.monitor_photon_probability(theta);
            let model = WindowModel {
                joint,
                monitor: 1.0 - (1.0 - scenario.hardware.monitor_dark_prob) * (-cell.mu_a * r_mon).exp(),
                hom_probability: (0..16u8)
                    .filter(|&p| pattern::is_same_bin_coincidence(p))
                    .map(|p| joint[p as usize][0] + joint[p as usize][1])
                    .sum(),
            };
            cache = Some(CachedModel {
                key,
                input,
                setup,
                model,
                r_mon,
            });
        }
        let CachedModel {
            input,
            setup,
            model,
            r_mon,
            ..
        } = cache.as_ref().expect("filled above");
        let (input, setup, r_mon) = (*input, *setup, *r_mon);

        let tally = match sampler {
            Sampler::Aggregate => sample_aggregate(&mut count_rng, model, slots, vedl == correct),
            Sampler::Event => {
                let first_slot = w as i64 * slots as i64;
                let ctx = EventContext {
                    setup: &setup,
                    input: &input,
                    setting: cell.setting,
                    model,
                    r_mon,
                    monitor_dark: scenario.hardware.monitor_dark_prob,
                    first_slot,
                    slots,
                    d_bc,
                    d_cb,
                    vedl,
                    residual,
                    theta,
                };
                sample_events(&mut count_rng, &ctx, out.events.as_mut())?
            }
        };

        let mut summary = WindowSummary {
            window: w,
            t_end_s: (w + 1) as f64 * scenario.window_s,
            timing_drift_ps: timing.state,
            applied_shift_ps: shift,
            residual_ps: residual,
            pol_misalignment_rad: theta,
            actuator_x_rad: actuators[0],
            actuator_y_rad: actuators[1],
            phase_rad: phi,
            overlap: setup.overlap,
            singles_d1: tally.singles[0],
            singles_d2: tally.singles[1],
            monitor_counts: tally.monitor,
            hom_coincidences: tally.hom,
            hom_expected: model.hom_probability * slots as f64,
            pairwise_coincidences: tally.pairwise,
            psi_minus_flags: tally.flags,
            bob_clicks: tally.bob,
            triples: tally.triples,
            lock_lost: false,
        };
        out.counts.add(&CountCell {
            triples: tally.triples,
            bsm_flags: tally.flags,
            elapsed: scenario.window_s,
        });

        let obs = summary.observation();
        for c in controllers.iter_mut() {
            match c.on_window(&obs) {
                Ok(a) => {
                    shift += a.timing_shift_ps;
                    actuators[0] += a.polarization[0];
                    actuators[1] += a.polarization[1];
                }
                Err(Error::LockLost { .. }) => summary.lock_lost = true,
                Err(e) => return Err(e),
            }
        }
        out.summaries.push(summary);

        timing.step(&mut drift_rng);
        pol[0].step(&mut drift_rng);
        pol[1].step(&mut drift_rng);
        phase.step(&mut drift_rng);
    }
    Ok(out)
}

fn sample_aggregate<R: Rng + ?Sized>(rng: &mut R, model: &WindowModel, slots: u64, vedl_correct: bool) -> Tally {
    let mut t = Tally::default();
    let mut remaining = slots;
    let mut mass = 1.0;
    let mut bob_marginal = 0.0;
    for k in 1..32usize {
        let p = model.class(k);
        if k >> 4 == 1 {
            bob_marginal += p;
        }
        if remaining == 0 || p <= 0.0 {
            mass -= p;
            continue;
        }
        let n = binomial(rng, remaining, p / mass);
        remaining -= n;
        mass -= p;
        let (pat, bob) = ((k & 0xF) as u8, k >> 4 == 1);
        t.add_class(pat, bob, n);
        if bob && pattern::is_psi_minus(pat) && vedl_correct {
            t.triples += n;
        }
    }
    bob_marginal += model.joint[0][1];
    if !vedl_correct {
        // the flag meets Bob's record from an unrelated pulse
        t.triples = binomial(rng, t.flags, bob_marginal);
    }
    t.monitor = binomial(rng, slots, model.monitor);
    t
}

struct EventContext<'a> {
    setup: &'a BsmSetup,
    input: &'a TimeBinState,
    setting: SettingLabel,
    model: &'a WindowModel,
    r_mon: f64,
    monitor_dark: f64,
    first_slot: i64,
    slots: u64,
    d_bc: i64,
    d_cb: i64,
    vedl: i64,
    residual: f64,
    theta: f64,
}

const EVENT_PHOTON_MAX: u32 = 8;

fn sample_events<R: Rng + ?Sized>(rng: &mut R, ctx: &EventContext, mut log: Option<&mut EventLog>) -> Result<Tally> {
    let model = ctx.model;
    // classes 1..64: bit 5 marks a monitor click
    let mut probs = [0.0f64; 64];
    for (k, p) in probs.iter_mut().enumerate() {
        let m = if k >> 5 == 1 { model.monitor } else { 1.0 - model.monitor };
        *p = model.class(k & 0x1F) * m;
    }
    let active: f64 = probs[1..].iter().sum();
    let mut tally = Tally::default();
    if !(active > 0.0) {
        return Ok(tally);
    }
    let mut cumulative = [0.0f64; 64];
    let mut acc = 0.0;
    for k in 1..64 {
        acc += probs[k];
        cumulative[k] = acc;
    }

    // P(n | class) ∝ Poisson(n; μ)·Y_n(class)
    let yields = ctx.setup.joint_outcome_yields(ctx.input, ctx.setting, EVENT_PHOTON_MAX);
    let mu = ctx.setup.mu_a;
    let pois: Vec<f64> = (0..=EVENT_PHOTON_MAX)
        .scan(( -mu).exp(), |p, n| {
            let v = *p;
            *p *= mu / (n + 1) as f64;
            Some(v)
        })
        .collect();
    let amp = ctx.input.amplitudes();
    let p_early = amp[0].norm_sqr();

    let geometric = Geometric::new(active.min(1.0)).map_err(|e| invalid("active", e.to_string()))?;
    let mut charlie = Vec::new();
    let mut bob = Vec::new();
    let mut slot: u64 = 0;
    loop {
        slot += geometric.sample(rng);
        if slot >= ctx.slots {
            break;
        }
        let u = rng.random::<f64>() * active;
        let k = (1..64).find(|&k| u < cumulative[k]).unwrap_or(63);
        let (pat, bob_click, mon) = ((k & 0xF) as u8, (k >> 4) & 1 == 1, k >> 5 == 1);
        let global = ctx.first_slot + slot as i64;

        tally.add_class(pat, bob_click, 1);
        if mon {
            tally.monitor += 1;
        }
        if pat != 0 {
            charlie.push(CharlieRecord {
                charlie_slot: global + ctx.d_bc,
                arrival_at_bob: global + ctx.d_bc + ctx.d_cb,
                pattern: pat,
            });
        }
        if bob_click {
            bob.push(BobRecord {
                slot: global,
                click: BobClick::new(ctx.setting),
            });
        }
        if let Some(log) = log.as_deref_mut() {
            let table = k & 0x1F;
            let weights: Vec<f64> = (0..=EVENT_PHOTON_MAX as usize)
                .map(|n| {
                    let m = 1.0 - ctx.monitor_dark;
                    let no_mon = m * (1.0 - ctx.r_mon).powi(n as i32);
                    pois[n] * yields[n][table & 0xF][table >> 4] * if mon { 1.0 - no_mon } else { no_mon }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut n = 0;
            for (i, w) in weights.iter().enumerate() {
                n = i;
                if u < *w {
                    break;
                }
                u -= w;
            }
            let early = binomial(rng, n as u64, p_early) as u32;
            log.pulses.push(PulseSlotRecord {
                slot_index: global,
                arrival_offset_ps: ctx.residual,
                polarization_misalignment: ctx.theta,
                photon_content: [early, n as u32 - early],
            });
        }
        slot += 1;
    }
    let matched = triple_coincidence(&charlie, &bob, ctx.vedl)?;
    tally.triples = matched.counts.triples;
    if let Some(log) = log {
        log.coincidences.extend(matched.records);
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> Scenario {
        let mut s = Scenario::default();
        s.drift = DriftConfig::off();
        s
    }

    fn cell(mu_a: f64) -> Cell {
        Cell::new(SettingLabel::Minus, SettingLabel::Plus, mu_a)
    }

    #[test]
    fn dark_free_vacuum_is_silent() {
        let mut s = quiet();
        s.source.mu_spdc = 0.0;
        s.hardware.snspd_dark_prob = 0.0;
        s.hardware.bob_dark_prob = 0.0;
        s.hardware.monitor_dark_prob = 0.0;
        s.topology.alice_charlie.loss_db = 0.0;
        s.topology.bob_charlie.loss_db = 0.0;
        s.window_s = 0.01;
        for sampler in [run_windows, run_events] {
            let out = sampler(&s, cell(0.0), RunOptions::new(3, 1), &mut []).unwrap();
            for w in &out.summaries {
                assert_eq!(
                    (w.singles_d1, w.singles_d2, w.monitor_counts, w.bob_clicks, w.triples),
                    (0, 0, 0, 0, 0)
                );
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let s = Scenario::default();
        let a = run_windows(&s, cell(0.014), RunOptions::new(20, 7), &mut []).unwrap();
        let b = run_windows(&s, cell(0.014), RunOptions::new(20, 7), &mut []).unwrap();
        assert_eq!(a, b);
        let c = run_windows(&s, cell(0.014), RunOptions::new(20, 8), &mut []).unwrap();
        assert_ne!(a.summaries, c.summaries);
    }

    #[test]
    fn rejects_zero_windows_and_negative_delay() {
        let s = quiet();
        assert!(run_windows(&s, cell(0.01), RunOptions::new(0, 1), &mut []).is_err());
        let opts = RunOptions {
            vedl: Some(-3),
            ..RunOptions::new(1, 1)
        };
        assert!(matches!(run_windows(&s, cell(0.01), opts, &mut []), Err(Error::Topology(_))));
        let mut bad = quiet();
        bad.topology.bin_separation_ps = 100.0;
        assert!(matches!(run_windows(&bad, cell(0.01), RunOptions::new(1, 1), &mut []), Err(Error::Topology(_))));
    }

    #[test]
    fn event_log_slots_increase() {
        let mut s = quiet();
        s.window_s = 0.002;
        let opts = RunOptions {
            keep_events: true,
            ..RunOptions::new(3, 11)
        };
        let out = run_events(&s, cell(0.014), opts, &mut []).unwrap();
        let log = out.events.unwrap();
        assert!(log.pulses.len() > 100);
        assert!(log.pulses.windows(2).all(|w| w[0].slot_index < w[1].slot_index));
        let flags = log.coincidences.iter().filter(|c| c.psi_minus_flag).count() as u64;
        assert_eq!(flags, out.counts.bsm_flags);
    }

    struct Fixed(f64);
    impl Controller for Fixed {
        fn on_window(&mut self, _: &WindowObservation) -> Result<Actuation> {
            Ok(Actuation {
                timing_shift_ps: self.0,
                polarization: [0.0; 2],
            })
        }
    }

    #[test]
    fn shifts_accumulate() {
        let s = quiet();
        let mut c = Fixed(4.0);
        let out = run_windows(&s, cell(0.014), RunOptions::new(5, 1), &mut [&mut c]).unwrap();
        let shifts: Vec<f64> = out.summaries.iter().map(|w| w.applied_shift_ps).collect();
        assert_eq!(shifts, vec![0.0, 4.0, 8.0, 12.0, 16.0]);
        assert_eq!(out.summaries[3].residual_ps, -12.0);
    }
}
