use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use timebin_teleport::config::ExperimentConfig;
use timebin_teleport::counts::CountTable;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teleport-sim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn teleport-sim")
}

fn short_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::paper_default();
    cfg.duration_s = 60.0;
    cfg.visibility_scan.as_mut().unwrap().duration_s = 60.0;
    cfg.analysis.resamples = 100;
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> String {
    let p = dir.join(name);
    fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if path.is_dir() {
            for (n, b) in read_dir_sorted(&path) {
                out.push((format!("{name}/{n}"), b));
            }
        } else {
            out.push((name, fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &short_config());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let o = run(&["simulate", "--config", &cfg, "--out", dir.to_str().unwrap(), "--parallel", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert!(fa.len() > 70);
    let names: Vec<_> = fa.iter().map(|f| &f.0).collect();
    assert_eq!(names, fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        // these record the output path and command line
        if name == "manifest.json" || name == "config.toml" {
            continue;
        }
        assert!(x == y, "{name} differs");
    }

    let c = tmp.path().join("c");
    let o = run(&["simulate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "99"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("counts.csv")).unwrap(), fs::read(c.join("counts.csv")).unwrap());
}

#[test]
fn every_output_carries_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &short_config());
    let out = tmp.path().join("run");
    assert!(run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = run(&["analyze", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = short_config().hash();
    for (name, bytes) in read_dir_sorted(&out) {
        let text = String::from_utf8(bytes).unwrap();
        if name.ends_with(".csv") {
            assert!(text.starts_with(&format!("# config_sha256={hash} seed=")), "{name}");
        } else if name.ends_with(".json") {
            assert!(text.contains(&hash), "{name}");
        }
    }
    assert!(out.join("analysis/fidelities.csv").exists());
    assert!(out.join("analysis/decoy.csv").exists());
}

#[test]
fn sources_off_give_empty_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = short_config();
    cfg.source.mu_spdc = 0.0;
    cfg.decoy_levels = vec![0.0];
    cfg.hardware.snspd_dark_prob = 0.0;
    cfg.hardware.bob_dark_prob = 0.0;
    cfg.hardware.monitor_dark_prob = 0.0;
    cfg.visibility_scan = None;
    let path = write_config(tmp.path(), "off.toml", &cfg);
    let out = tmp.path().join("run");
    let o = run(&["simulate", "--config", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = CountTable::read_csv(fs::File::open(out.join("counts.csv")).unwrap()).unwrap();
    assert_eq!(table.len(), 24);
    for (_, _, _, c) in table.iter() {
        assert_eq!((c.triples, c.bsm_flags), (0, 0));
        assert_eq!(c.elapsed, 60.0);
    }
}

#[test]
fn homscan_is_flat_without_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = short_config();
    cfg.hardware.max_overlap = 0.0;
    let path = write_config(tmp.path(), "flat.toml", &cfg);
    let out = tmp.path().join("scan");
    let o = run(&["homscan", "--config", &path, "--out", out.to_str().unwrap(), "--from-ps", "-100", "--to-ps", "100", "--step-ps", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("homscan.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |h: &str| headers.iter().position(|x| x == h).unwrap();
    let (ic, ie) = (col("coincidences"), col("expected"));
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[ic].parse().unwrap(), r[ie].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 11);
    let e0 = rows[0].1;
    for (c, e) in rows {
        assert!((e - e0).abs() < 1e-9 * e0);
        assert!((c - e).abs() < 5.0 * e.sqrt(), "{c} vs {e}");
    }
}

#[test]
fn analysis_refuses_foreign_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &short_config());
    let out = tmp.path().join("run");
    assert!(run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());

    let mut other = short_config();
    other.source.mu_spdc = 0.05;
    let other = write_config(tmp.path(), "other.toml", &other);
    let o = run(&["analyze", out.to_str().unwrap(), "--config", &other, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&[
        "analyze",
        out.to_str().unwrap(),
        "--config",
        &other,
        "--force",
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nnot_a_field = true\n").unwrap();
    let o = run(&["simulate", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let csv = tmp.path().join("counts.csv");
    fs::write(&csv, "prepared,setting,mu_a,triples,bsm_flags,elapsed_s\nL,E,0.014,-3,2,10\n").unwrap();
    let o = run(&["analyze", csv.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));

    // refuses to overwrite a non-empty directory without --force
    let busy = tmp.path().join("busy");
    fs::create_dir(&busy).unwrap();
    fs::write(busy.join("keep.txt"), "x").unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &short_config());
    let o = run(&["simulate", "--config", &cfg, "--out", busy.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(busy.join("keep.txt").exists());

    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
