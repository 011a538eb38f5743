//! Batch runs behind the command-line tool: simulate, scan, lock demos, analysis.
//!
//! Every file written here starts with a `# config_sha256=… seed=…` line
//! (or carries the same fields, for JSON), so analysis can refuse inputs
//! produced by a different configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    classical_threshold_tests, decoy_report, fidelity_table, monte_carlo_errors, visibility_fit, weighted_average, DecoyReport,
    FidelityRow, ThresholdQuantity, ThresholdResult, TomographyOptions, VisibilityFit,
};
use crate::config::{EngineKind, ExperimentConfig};
use crate::counts::{CountCell, CountTable};
use crate::error::{Error, Result};
use crate::feedback::{write_trace, HomLock, PolLock, TraceRow};
use crate::sim::engine::write_summaries;
use crate::sim::{run_events, run_windows, Cell, Controller, DriftParams, RunOptions, RunOutput, WindowSummary};

/// Independent per-task seed (SplitMix64 of root and index).
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell, windows: u32, seed: u64, locks: bool) -> Result<(RunOutput, Vec<TraceRow>, Vec<TraceRow>)> {
    let scenario = cfg.scenario();
    let mut hom = HomLock::new(cfg.controllers.hom)?;
    let mut pol = PolLock::new(cfg.controllers.pol)?;
    let mut controllers: Vec<&mut dyn Controller> = Vec::new();
    if locks && cfg.controllers.hom_lock {
        controllers.push(&mut hom);
    }
    if locks && cfg.controllers.pol_lock {
        controllers.push(&mut pol);
    }
    let opts = RunOptions::new(windows, seed);
    let out = match cfg.engine {
        EngineKind::Aggregate => run_windows(&scenario, cell, opts, &mut controllers)?,
        EngineKind::Event => run_events(&scenario, cell, opts, &mut controllers)?,
    };
    drop(controllers);
    Ok((out, hom.trace, pol.trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPoint {
    pub phase_rad: f64,
    pub triples: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub table: CountTable,
    pub windows: Vec<(Cell, Vec<WindowSummary>)>,
    pub visibility: Option<Vec<VisibilityPoint>>,
}

/// Every (prepared, setting, μ_A) cell of the config, in a fixed order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for prepared in cfg.prepared_states() {
        for &setting in &cfg.settings {
            for &mu in &cfg.decoy_levels {
                out.push(Cell::new(prepared, setting, mu));
            }
        }
    }
    out
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let all = cells(cfg);
    let windows = cfg.windows_per_cell();
    let runs: Vec<(Cell, RunOutput)> = all
        .par_iter()
        .enumerate()
        .map(|(i, &cell)| Ok((cell, run_cell(cfg, cell, windows, derive_seed(cfg.seed, i as u64), true)?.0)))
        .collect::<Result<_>>()?;
    let mut table = CountTable::new();
    let mut per_cell = Vec::new();
    for (cell, out) in runs {
        table.add(cell.prepared, cell.setting, cell.mu_a, &out.counts);
        per_cell.push((cell, out.summaries));
    }
    let visibility = match &cfg.visibility_scan {
        None => None,
        Some(v) => {
            let n = (v.duration_s / cfg.window_s).round().max(1.0) as u32;
            let base = all.len() as u64;
            let points = (0..v.points)
                .into_par_iter()
                .map(|k| {
                    let phase = std::f64::consts::TAU * k as f64 / v.points as f64;
                    let cell = Cell {
                        phase_offset: phase,
                        ..Cell::new(v.prepared, v.setting, v.mu_a)
                    };
                    let out = run_cell(cfg, cell, n, derive_seed(cfg.seed, base + k as u64), true)?.0;
                    Ok(VisibilityPoint {
                        phase_rad: phase,
                        triples: out.counts.triples,
                        elapsed_s: out.counts.elapsed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(points)
        }
    };
    Ok(SimulationOutput {
        table,
        windows: per_cell,
        visibility,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomScanPoint {
    pub delta_t_ps: f64,
    pub coincidences: u64,
    pub poisson_error: f64,
    pub expected: f64,
}

/// One window per arrival-time offset, drifts and locks off.
pub fn homscan(cfg: &ExperimentConfig) -> Result<Vec<HomScanPoint>> {
    cfg.validate()?;
    let h = cfg.homscan;
    let n = ((h.to_ps - h.from_ps) / h.step_ps + 1e-9).floor() as u64 + 1;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let dt = h.from_ps + k as f64 * h.step_ps;
            let mut scenario = cfg.scenario();
            scenario.drift.timing = DriftParams {
                initial: dt,
                ..DriftParams::off(dt.abs().max(1.0))
            };
            scenario.drift.polarization = DriftParams::off(1.0);
            scenario.drift.phase = DriftParams::off(1.0);
            let cell = Cell::new(h.prepared, h.prepared, cfg.source.mu_a);
            let out = run_windows(&scenario, cell, RunOptions::new(1, derive_seed(cfg.seed, k)), &mut [])?;
            let w = &out.summaries[0];
            Ok(HomScanPoint {
                delta_t_ps: dt,
                coincidences: w.hom_coincidences,
                poisson_error: (w.hom_coincidences as f64).sqrt(),
                expected: w.hom_expected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockStats {
    /// Standard deviation over mean of detector-1 singles per window.
    pub singles_rms: f64,
    pub mean_abs_residual_ps: f64,
    pub fraction_within_10ps: f64,
    pub mean_monitor_counts: f64,
}

pub fn lock_stats(summaries: &[WindowSummary]) -> LockStats {
    let n = summaries.len().max(1) as f64;
    let singles: Vec<f64> = summaries.iter().map(|w| w.singles_d1 as f64).collect();
    let mean = singles.iter().sum::<f64>() / n;
    let var = singles.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    LockStats {
        singles_rms: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        mean_abs_residual_ps: summaries.iter().map(|w| w.residual_ps.abs()).sum::<f64>() / n,
        fraction_within_10ps: summaries.iter().filter(|w| w.residual_ps.abs() <= 10.0).count() as f64 / n,
        mean_monitor_counts: summaries.iter().map(|w| w.monitor_counts as f64).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockDemo {
    pub locked: Vec<WindowSummary>,
    pub unlocked: Vec<WindowSummary>,
    pub hom_trace: Vec<TraceRow>,
    pub pol_trace: Vec<TraceRow>,
    pub locked_stats: LockStats,
    pub unlocked_stats: LockStats,
}

/// Locked and unlocked runs over one drift realisation (same seed).
pub fn lockdemo(cfg: &ExperimentConfig) -> Result<LockDemo> {
    cfg.validate()?;
    let target = cfg.homscan.prepared;
    let cell = Cell::new(target, target, cfg.source.mu_a);
    let windows = cfg.windows_per_cell();
    let (locked, hom_trace, pol_trace) = run_cell(cfg, cell, windows, cfg.seed, true)?;
    let (unlocked, _, _) = run_cell(cfg, cell, windows, cfg.seed, false)?;
    Ok(LockDemo {
        locked_stats: lock_stats(&locked.summaries),
        unlocked_stats: lock_stats(&unlocked.summaries),
        locked: locked.summaries,
        unlocked: unlocked.summaries,
        hom_trace,
        pol_trace,
    })
}

/// Provenance written into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
        }
    }

    fn comment(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_sha256, self.seed)
    }

    /// Reads the provenance line at the top of a delimited file.
    pub fn read(path: &Path) -> Result<Option<Self>> {
        let text = fs::read_to_string(path)?;
        let Some(line) = text.lines().next().and_then(|l| l.strip_prefix("# ")) else {
            return Ok(None);
        };
        let mut hash = None;
        let mut seed = None;
        for part in line.split_whitespace() {
            if let Some(h) = part.strip_prefix("config_sha256=") {
                hash = Some(h.to_string());
            } else if let Some(s) = part.strip_prefix("seed=") {
                seed = s.parse().ok();
            }
        }
        Ok(hash.zip(seed).map(|(config_sha256, seed)| Self { config_sha256, seed }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub files: Vec<String>,
}

/// Creates (or, with `force`, empties) an output directory.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

struct RunWriter<'a> {
    dir: &'a Path,
    prov: Provenance,
    files: Vec<String>,
}

impl<'a> RunWriter<'a> {
    fn new(dir: &'a Path, cfg: &ExperimentConfig) -> Self {
        Self {
            dir,
            prov: Provenance::of(cfg),
            files: Vec::new(),
        }
    }

    fn delimited(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = self.prov.comment().into_bytes();
        body(&mut buf)?;
        self.raw(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct WithProv<'b, T> {
            #[serde(flatten)]
            provenance: &'b Provenance,
            #[serde(flatten)]
            value: &'b T,
        }
        let text = serde_json::to_string_pretty(&WithProv {
            provenance: &self.prov,
            value,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        self.raw(name, format!("{text}\n").as_bytes())
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(&path)?.write_all(bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<Vec<String>> {
        let text = format!("# config_sha256={} seed={}\n{}", self.prov.config_sha256, self.prov.seed, cfg.to_toml());
        self.raw("config.toml", text.as_bytes())?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            provenance: self.prov.clone(),
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), format!("{text}\n"))?;
        Ok(self.files)
    }
}

fn cell_file(cell: &Cell) -> String {
    format!("windows/{}_{}_{}.csv", cell.prepared, cell.setting, cell.mu_a)
}

pub fn write_simulation(dir: &Path, cfg: &ExperimentConfig, sim: &SimulationOutput) -> Result<Vec<String>> {
    let mut w = RunWriter::new(dir, cfg);
    w.delimited("counts.csv", |b| sim.table.write_csv(b))?;
    for (cell, summaries) in &sim.windows {
        w.delimited(&cell_file(cell), |b| write_summaries(summaries, b))?;
    }
    if let Some(points) = &sim.visibility {
        w.delimited("visibility.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            for p in points {
                wr.serialize(p)?;
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    w.finish("simulate", cfg)
}

pub fn write_homscan(dir: &Path, cfg: &ExperimentConfig, points: &[HomScanPoint]) -> Result<Vec<String>> {
    let mut w = RunWriter::new(dir, cfg);
    w.delimited("homscan.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        for p in points {
            wr.serialize(p)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    w.finish("homscan", cfg)
}

pub fn write_lockdemo(dir: &Path, cfg: &ExperimentConfig, demo: &LockDemo) -> Result<Vec<String>> {
    let mut w = RunWriter::new(dir, cfg);
    w.delimited("locked_windows.csv", |b| write_summaries(&demo.locked, b))?;
    w.delimited("unlocked_windows.csv", |b| write_summaries(&demo.unlocked, b))?;
    w.delimited("hom_trace.csv", |b| write_trace(&demo.hom_trace, b))?;
    w.delimited("pol_trace.csv", |b| write_trace(&demo.pol_trace, b))?;
    #[derive(Serialize)]
    struct Stats<'s> {
        locked: &'s LockStats,
        unlocked: &'s LockStats,
    }
    w.json(
        "lock_stats.json",
        &Stats {
            locked: &demo.locked_stats,
            unlocked: &demo.unlocked_stats,
        },
    )?;
    w.finish("lockdemo", cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Tomo,
    Decoy,
    Visibility,
    Thresholds,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub fidelities: Option<Vec<FidelityRow>>,
    pub average_fidelity: Option<f64>,
    pub average_fidelity_sigma: Option<f64>,
    pub decoy: Option<DecoyReport>,
    pub decoy_error: Option<String>,
    pub visibility: Option<VisibilityFit>,
    pub visibility_sigma: Option<f64>,
    pub thresholds: Option<Vec<ThresholdResult>>,
}

/// Inputs for analysis: a table plus whatever the run directory offers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisInput {
    pub table: CountTable,
    pub visibility: Option<Vec<VisibilityPoint>>,
}

/// Loads `counts.csv` (and `visibility.csv` if present) from a run directory,
/// or a bare count table file. A run directory whose files disagree with its
/// manifest, or with `expect`, is refused unless `force` is set.
pub fn load_analysis_input(path: &Path, expect: Option<&Provenance>, force: bool) -> Result<AnalysisInput> {
    let (counts, vis, manifest): (PathBuf, Option<PathBuf>, Option<PathBuf>) = if path.is_dir() {
        let v = path.join("visibility.csv");
        (path.join("counts.csv"), v.exists().then_some(v), Some(path.join("manifest.json")))
    } else {
        (path.to_path_buf(), None, None)
    };
    let prov = Provenance::read(&counts)?;
    if !force {
        let reference = match manifest.filter(|m| m.exists()) {
            Some(m) => {
                let text = fs::read_to_string(&m)?;
                let parsed: Manifest = serde_json::from_str(&text).map_err(|e| Error::Mismatch(format!("{}: {e}", m.display())))?;
                Some(parsed.provenance)
            }
            None => None,
        };
        for r in reference.iter().chain(expect) {
            if prov.as_ref() != Some(r) {
                return Err(Error::Mismatch(format!(
                    "{} was produced by config {} seed {}, expected {} seed {} (use --force to override)",
                    counts.display(),
                    prov.as_ref().map_or("<none>", |p| p.config_sha256.as_str()),
                    prov.as_ref().map_or(0, |p| p.seed),
                    r.config_sha256,
                    r.seed
                )));
            }
        }
    }
    let table = CountTable::read_csv(fs::File::open(&counts)?)?;
    let visibility = match vis {
        Some(v) => {
            let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(fs::File::open(v)?);
            Some(rd.deserialize().collect::<std::result::Result<Vec<VisibilityPoint>, _>>()?)
        }
        None => None,
    };
    Ok(AnalysisInput { table, visibility })
}

fn visibility_scan_fit(points: &[VisibilityPoint]) -> Result<VisibilityFit> {
    let scan: Vec<(f64, f64)> = points.iter().map(|p| (p.phase_rad, p.triples as f64 / p.elapsed_s)).collect();
    visibility_fit(&scan)
}

/// Runs the selected analyses. Decoy infeasibility is reported in the
/// result rather than aborting the other analyses.
pub fn analyze(input: &AnalysisInput, cfg: &ExperimentConfig, kinds: &[AnalysisKind]) -> Result<AnalysisReport> {
    let mut report = AnalysisReport::default();
    let a = &cfg.analysis;
    let opts = TomographyOptions {
        mle: a.mle,
        accidentals_per_flag: a.accidentals_per_flag,
    };
    let want = |k| kinds.contains(&k);
    if want(AnalysisKind::Tomo) || want(AnalysisKind::Thresholds) {
        let rows = fidelity_table(&input.table, a.tomography_mu, &opts, a.resamples, cfg.seed)?;
        let by_target: Vec<(crate::qubit::SettingLabel, f64)> = rows.iter().map(|r| (r.target, r.fidelity)).collect();
        if let Ok(avg) = weighted_average(&by_target) {
            report.average_fidelity = Some(avg);
            let prepared: Vec<_> = rows.iter().map(|r| (r.prepared, r.target)).collect();
            let sigma = monte_carlo_errors(
                &input.table,
                |t| {
                    let mut v = Vec::new();
                    for &(p, target) in &prepared {
                        let Ok(c) = crate::analysis::setting_counts(t, p, a.tomography_mu, &opts) else {
                            return f64::NAN;
                        };
                        let Ok(rho) = crate::analysis::tomography_reconstruct(&c, &opts) else {
                            return f64::NAN;
                        };
                        v.push((target, rho.expectation(&target.state())));
                    }
                    weighted_average(&v).unwrap_or(f64::NAN)
                },
                a.resamples,
                cfg.seed,
            )?;
            report.average_fidelity_sigma = Some(sigma);
        }
        report.fidelities = Some(rows);
    }
    if want(AnalysisKind::Decoy) {
        let mut levels = input.table.mu_levels();
        levels.sort_by(f64::total_cmp);
        if levels.len() == 3 {
            match decoy_report(&input.table, [levels[0], levels[1], levels[2]], cfg.topology.clock_rate_hz) {
                Ok(r) => report.decoy = Some(r),
                Err(e) => report.decoy_error = Some(e.to_string()),
            }
        } else {
            report.decoy_error = Some(format!("need three μ_A levels, found {}", levels.len()));
        }
    }
    if want(AnalysisKind::Visibility) || want(AnalysisKind::Thresholds) {
        if let Some(points) = &input.visibility {
            let fit = visibility_scan_fit(points)?;
            let table: CountTable = points.iter().fold(CountTable::new(), |mut t, p| {
                t.add(
                    crate::qubit::SettingLabel::Plus,
                    crate::qubit::SettingLabel::Plus,
                    p.phase_rad,
                    &CountCell {
                        triples: p.triples,
                        bsm_flags: 0,
                        elapsed: p.elapsed_s,
                    },
                );
                t
            });
            let sigma = monte_carlo_errors(
                &table,
                |t| {
                    let pts: Vec<VisibilityPoint> = t
                        .iter()
                        .map(|(_, _, phase, c)| VisibilityPoint {
                            phase_rad: phase,
                            triples: c.triples,
                            elapsed_s: c.elapsed,
                        })
                        .collect();
                    visibility_scan_fit(&pts).map_or(f64::NAN, |f| f.visibility)
                },
                a.resamples,
                cfg.seed,
            )?;
            report.visibility = Some(fit);
            report.visibility_sigma = Some(sigma);
        }
    }
    if want(AnalysisKind::Thresholds) {
        let mut q = Vec::new();
        if let Some(rows) = &report.fidelities {
            for r in rows {
                if r.sigma > 0.0 {
                    q.push(ThresholdQuantity::Fidelity {
                        name: format!("fidelity_{}", r.target),
                        value: r.fidelity,
                        sigma: r.sigma,
                    });
                }
            }
        }
        if let (Some(v), Some(s)) = (report.average_fidelity, report.average_fidelity_sigma) {
            if s > 0.0 {
                q.push(ThresholdQuantity::Fidelity {
                    name: "average_fidelity".into(),
                    value: v,
                    sigma: s,
                });
            }
        }
        if let (Some(v), Some(s)) = (report.visibility, report.visibility_sigma) {
            if s > 0.0 {
                q.push(ThresholdQuantity::Visibility { value: v.visibility, sigma: s });
            }
        }
        report.thresholds = Some(classical_threshold_tests(&q)?);
    }
    Ok(report)
}

pub fn write_analysis(dir: &Path, cfg: &ExperimentConfig, report: &AnalysisReport) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut w = RunWriter::new(dir, cfg);
    if let Some(rows) = &report.fidelities {
        w.delimited("fidelities.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["prepared", "target", "fidelity", "sigma"])?;
            for r in rows {
                wr.write_record([r.prepared.to_string(), r.target.to_string(), r.fidelity.to_string(), r.sigma.to_string()])?;
            }
            wr.flush()?;
            Ok(())
        })?;
        w.delimited("density_matrices.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["prepared", "target", "rho_ee", "rho_ll", "re_rho_el", "im_rho_el"])?;
            for r in rows {
                let m = r.rho.elements();
                wr.write_record([
                    r.prepared.to_string(),
                    r.target.to_string(),
                    m[0][0].re.to_string(),
                    m[1][1].re.to_string(),
                    m[0][1].re.to_string(),
                    m[0][1].im.to_string(),
                ])?;
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    if let Some(d) = &report.decoy {
        w.delimited("decoy.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["prepared", "q_mu", "q_nu", "y0", "e_mu", "e_nu", "y1_lower", "e1_upper", "f1_lower"])?;
            for (p, e) in &d.per_state {
                wr.write_record([
                    p.to_string(),
                    e.q_mu.to_string(),
                    e.q_nu.to_string(),
                    e.y0.to_string(),
                    e.e_mu.to_string(),
                    e.e_nu.to_string(),
                    e.y1_lower.to_string(),
                    e.e1_upper.to_string(),
                    e.f1_lower.to_string(),
                ])?;
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    if let Some(t) = &report.thresholds {
        w.delimited("thresholds.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            for r in t {
                wr.serialize(r)?;
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    w.json("report.json", report)?;
    w.finish("analyze", cfg)
}
