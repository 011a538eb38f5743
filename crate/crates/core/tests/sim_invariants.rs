use statrs::distribution::{ChiSquared, ContinuousCDF};

use timebin_teleport::qubit::SettingLabel;
use timebin_teleport::sim::{run_events, run_windows, Cell, DriftConfig, RunOptions, Scenario, WindowSummary};

fn static_scenario() -> Scenario {
    Scenario {
        drift: DriftConfig::off(),
        ..Scenario::default()
    }
}

fn plus_cell() -> Cell {
    Cell::new(SettingLabel::Plus, SettingLabel::Plus, 0.014)
}

/// Least-squares slope and its standard error.
fn slope(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = (0..ys.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    let b = ys.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum::<f64>() / sxx;
    let resid: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - ym - b * (i as f64 - xm)).powi(2))
        .sum();
    (b, (resid / (n - 2.0) / sxx).sqrt())
}

fn column(s: &[WindowSummary], f: impl Fn(&WindowSummary) -> u64) -> Vec<f64> {
    s.iter().map(|w| f(w) as f64).collect()
}

#[test]
fn drift_free_rates_are_stationary() {
    let out = run_windows(&static_scenario(), plus_cell(), RunOptions::new(100, 17), &mut []).unwrap();
    for (name, ys) in [
        ("hom", column(&out.summaries, |w| w.hom_coincidences)),
        ("singles", column(&out.summaries, |w| w.singles_d1)),
        ("flags", column(&out.summaries, |w| w.psi_minus_flags)),
    ] {
        let (b, se) = slope(&ys);
        assert!(b.abs() < 3.0 * se, "{name}: slope {b} ± {se}");
    }
}

#[test]
fn hom_counts_are_poisson_around_the_model() {
    let out = run_windows(&static_scenario(), plus_cell(), RunOptions::new(100, 5), &mut []).unwrap();
    let chi2: f64 = out
        .summaries
        .iter()
        .map(|w| (w.hom_coincidences as f64 - w.hom_expected).powi(2) / w.hom_expected)
        .sum();
    let dist = ChiSquared::new(100.0).unwrap();
    let (lo, hi) = (dist.inverse_cdf(0.001), dist.inverse_cdf(0.999));
    assert!(chi2 > lo && chi2 < hi, "χ² = {chi2:.1} outside [{lo:.1}, {hi:.1}]");
    assert!((out.summaries[0].hom_expected - 750.0).abs() < 150.0);
}

#[test]
fn counts_are_nested() {
    let scenario = Scenario::default();
    let check = |s: &[WindowSummary]| {
        for w in s {
            assert!(w.triples <= w.psi_minus_flags);
            assert!(w.psi_minus_flags <= w.pairwise_coincidences);
            assert!(w.pairwise_coincidences <= w.singles_d1.min(w.singles_d2));
            assert!(w.hom_coincidences <= w.pairwise_coincidences);
        }
    };
    for setting in [SettingLabel::E, SettingLabel::MinusI] {
        let cell = Cell::new(SettingLabel::L, setting, 0.028);
        check(&run_windows(&scenario, cell, RunOptions::new(50, 1), &mut []).unwrap().summaries);
        let short = Scenario {
            window_s: 0.5,
            ..scenario.clone()
        };
        check(&run_events(&short, cell, RunOptions::new(4, 1), &mut []).unwrap().summaries);
    }
}

#[test]
fn unlocked_timing_drift_fills_the_dip() {
    let scenario = Scenario {
        drift: DriftConfig {
            polarization: DriftConfig::off().polarization,
            ..DriftConfig::default()
        },
        ..Scenario::default()
    };
    let out = run_windows(&scenario, plus_cell(), RunOptions::new(540, 8), &mut []).unwrap();
    let s = &out.summaries;
    let mean = |w: &[WindowSummary]| w.iter().map(|x| x.hom_coincidences as f64).sum::<f64>() / w.len() as f64;
    let (first, last) = (mean(&s[..50]), mean(&s[s.len() - 50..]));
    assert!(last > first + 5.0 * (first / 50.0).sqrt(), "{first} → {last}");
    // the residual follows the configured ramp
    let end = s.last().unwrap().timing_drift_ps.abs();
    assert!(end > 100.0 && end <= 300.0, "{end}");
}

#[test]
fn event_sampler_matches_aggregate() {
    let scenario = Scenario {
        window_s: 1.0,
        ..static_scenario()
    };
    let cell = Cell::new(SettingLabel::PlusI, SettingLabel::PlusI, 0.028);
    let n = 20;
    let ev = run_events(&scenario, cell, RunOptions::new(n, 2), &mut []).unwrap();
    let ag = run_windows(&scenario, cell, RunOptions::new(n, 3), &mut []).unwrap();
    let total = |s: &[WindowSummary], f: fn(&WindowSummary) -> u64| s.iter().map(f).sum::<u64>() as f64;
    let fields: [(&str, fn(&WindowSummary) -> u64); 6] = [
        ("singles", |w| w.singles_d1),
        ("monitor", |w| w.monitor_counts),
        ("hom", |w| w.hom_coincidences),
        ("flags", |w| w.psi_minus_flags),
        ("bob", |w| w.bob_clicks),
        ("triples", |w| w.triples),
    ];
    for (name, f) in fields {
        let (a, b) = (total(&ev.summaries, f), total(&ag.summaries, f));
        let z = (a - b) / (a + b).max(1.0).sqrt();
        assert!(z.abs() < 5.0, "{name}: event {a} vs aggregate {b} (z = {z:.2})");
    }
}

#[test]
fn wrong_delay_line_leaves_accidentals_only() {
    // without excess loss, for enough triples in a short run
    let mut scenario = Scenario {
        window_s: 1.0,
        ..static_scenario()
    };
    scenario.hardware.excess_loss_idler_db = 0.0;
    scenario.hardware.excess_loss_bob_db = 0.0;
    let cell = Cell::new(SettingLabel::E, SettingLabel::L, 0.014);
    let correct = scenario.topology.correct_vedl();
    let n = 10;
    let good = run_events(&scenario, cell, RunOptions::new(n, 4), &mut []).unwrap();
    let off = run_events(
        &scenario,
        cell,
        RunOptions {
            vedl: Some(correct + 1),
            ..RunOptions::new(n, 4)
        },
        &mut [],
    )
    .unwrap();
    let slots = (scenario.slots_per_window() * u64::from(n)) as f64;
    let flags: u64 = off.summaries.iter().map(|w| w.psi_minus_flags).sum();
    let bob: u64 = off.summaries.iter().map(|w| w.bob_clicks).sum();
    let accidental = flags as f64 * bob as f64 / slots;
    let got = off.counts.triples as f64;
    assert!((got - accidental).abs() < 5.0 * accidental.sqrt().max(1.0), "{got} vs {accidental}");
    assert!(good.counts.triples as f64 > 10.0 * accidental.max(1.0), "{} vs {accidental}", good.counts.triples);
}
