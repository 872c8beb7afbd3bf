use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use superatom_core::ensemble;
use superatom_core::params::{SystemParams, angular_to_mhz};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_superatom-lab"))
}

fn defaults_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_defaults.conf")
}

fn run(args: &[&str], out: &Path, extra_env: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.args(args).arg("--out").arg(out);
    for (k, v) in extra_env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn run_ok(args: &[&str], out: &Path) {
    let o = run(args, out, &[]);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn conf_with(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(defaults_conf()).unwrap();
    let mut text = String::new();
    let overridden: Vec<&str> = extra
        .lines()
        .filter_map(|l| l.split('=').next())
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .collect();
    for line in base.lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        if !overridden.contains(&key) {
            text.push_str(line);
            text.push('\n');
        }
    }
    text.push_str(extra);
    let path = dir.path().join("run.conf");
    fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn spectra_defaults_and_blocked() {
    let conf = defaults_conf();
    let conf = conf.to_str().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let open = tmp.path().join("open");
    run_ok(&["spectra", "--config", conf], &open);
    let s = json(&open.join("summary.json"));
    let peaks: Vec<f64> = s["peak_delta_MHz"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(peaks.iter().any(|p| p.abs() < 1e-9), "EIT peak at zero: {peaks:?}");
    let t0 = s["transmission_at_resonance"].as_f64().unwrap();
    assert!((0.80..=0.95).contains(&t0));
    let csv = fs::read_to_string(open.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("delta_MHz,transmission,reflectivity,phase_rad\n"));
    assert_eq!(csv.lines().count(), 802);

    let blocked = tmp.path().join("blocked");
    run_ok(&["spectra", "--config", conf, "--blocked"], &blocked);
    let s = json(&blocked.join("summary.json"));
    assert!(s["phase_at_resonance"].as_f64().unwrap().abs() < 1e-9);
    let peaks = s["peak_delta_MHz"].as_array().unwrap();
    assert_eq!(peaks.len(), 2);
    for p in peaks {
        // normal-mode peaks sit near ±g
        assert!((p.as_f64().unwrap().abs() - 10.0).abs() < 0.5);
    }
}

#[test]
fn spectra_rejects_inverted_range() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &["spectra", "--delta-min", "5", "--delta-max", "-5"],
        tmp.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("spectrum.csv").exists());
}

#[test]
fn rabi_fit_matches_collective_frequency() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        &["rabi", "--config", conf.to_str().unwrap(), "--seed", "3", "--shots", "200"],
        tmp.path(),
    );
    let s = json(&tmp.path().join("rabi_fit.json"));
    let expected = angular_to_mhz(ensemble::collective_rabi(&SystemParams::default()).unwrap());
    let fit = s["omega_fit_MHz"].as_f64().unwrap();
    assert!((fit / expected - 1.0).abs() < 0.05, "{fit} vs {expected}");
    let csv = fs::read_to_string(tmp.path().join("rabi_trace.csv")).unwrap();
    assert!(csv.starts_with("t_d_us,population,std_error,model\n"));
}

#[test]
fn rabi_many_shots_recovers_decay_time() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        &["rabi", "--seed", "5", "--shots", "200000", "--t-max", "6", "--points", "121"],
        tmp.path(),
    );
    let s = json(&tmp.path().join("rabi_fit.json"));
    let fit = s["tau_d_fit_us"].as_f64().unwrap();
    let expected = s["tau_d_expected_us"].as_f64().unwrap();
    assert!((fit / expected - 1.0).abs() < 0.05, "{fit} vs {expected}");
}

#[test]
fn rabi_empty_grid_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["rabi", "--points", "0"], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flat_rabi_trace_is_numerical_failure() {
    // hot cloud: dephasing within nanoseconds pins the population at ½
    let (_d, conf) = conf_with("temperature_uK = 1e6\n");
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &["rabi", "--config", conf.to_str().unwrap(), "--t-min", "0.5"],
        tmp.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn detect_counting_writes_overlays() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        &["detect", "--mode", "counting", "--config", conf.to_str().unwrap(), "--shots", "400"],
        tmp.path(),
    );
    for f in ["histogram_G.csv", "histogram_R.csv"] {
        let csv = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert!(csv.starts_with("n_or_x,model_p,empirical_p\n"), "{f}");
        let (m, e) = csv.lines().skip(1).fold((0.0, 0.0), |acc, l| {
            let c: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (acc.0 + c[1], acc.1 + c[2])
        });
        assert!((m - 1.0).abs() < 1e-9 && (e - 1.0).abs() < 1e-9);
    }
    let s = json(&tmp.path().join("detection.json"));
    assert!((s["eps_g"].as_f64().unwrap() - 0.066).abs() < 0.002);
    assert!(s["fit"]["parameters"].as_array().unwrap().len() == 2);
}

#[test]
fn detect_homodyne_fidelity() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        &["detect", "--mode", "homodyne", "--config", conf.to_str().unwrap()],
        tmp.path(),
    );
    let s = json(&tmp.path().join("detection.json"));
    let f = s["fidelity"].as_f64().unwrap();
    assert!((0.88..=0.93).contains(&f), "{f}");
}

#[test]
fn detect_without_readout_keys_names_them() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bare.conf");
    fs::write(&conf, "g_MHz = 10\ncount_t_i_us = 12\n").unwrap();
    let o = run(
        &["detect", "--mode", "homodyne", "--config", conf.to_str().unwrap()],
        &tmp.path().join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for key in ["hd_t_i_us", "hd_phi_per_us", "hd_threshold", "hd_refl_r"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn optimize_surface_shape_and_optimum() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        &["optimize", "--mode", "counting", "--config", conf.to_str().unwrap()],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("fidelity_surface.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 21 * 12);
    let s = json(&tmp.path().join("optimum.json"));
    assert_eq!(s["interior_t_i"], Value::Bool(true));
    let t = s["t_i_us"].as_f64().unwrap();
    assert!(t > 4.0 && t < 24.0);

    let (_d, long) = conf_with("tau_r_us = 1e9\ncount_eta_r = 1\n");
    let out = tmp.path().join("long");
    run_ok(
        &["optimize", "--mode", "counting", "--config", long.to_str().unwrap()],
        &out,
    );
    let s = json(&out.join("optimum.json"));
    assert_eq!(s["t_i_us"].as_f64().unwrap(), 24.0);
}

#[test]
fn optimize_empty_grid_is_usage_error() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &["optimize", "--mode", "counting", "--config", conf.to_str().unwrap(), "--t-min", "10", "--t-max", "5"],
        tmp.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ensemble_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["ensemble", "--seed", "11"], tmp.path());
    let s = json(&tmp.path().join("blockade.json"));
    let f = s["fraction_blockaded"].as_f64().unwrap();
    assert!((f - 0.954).abs() < 0.02, "{f}");
    let n = s["mean_neighbors_within"].as_f64().unwrap();
    assert!((n - 13.0).abs() <= 1.0, "{n}");
    let csv = fs::read_to_string(tmp.path().join("cloud.csv")).unwrap();
    assert_eq!(csv.lines().count(), 801);

    let (_d, one) = conf_with("n_atoms = 1\n");
    let out = tmp.path().join("one");
    run_ok(&["ensemble", "--config", one.to_str().unwrap()], &out);
    let s = json(&out.join("blockade.json"));
    assert!(s["fraction_blockaded"].is_null());
    assert!(s["fraction_blockaded_note"].as_str().unwrap().contains("no pairs"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "g_MHz = 10\nbogus = 1\n").unwrap();
    let o = run(&["spectra", "--config", conf.to_str().unwrap()], &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

fn outputs_of(dir: &Path) -> Vec<String> {
    json(&dir.join("manifest.json"))["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn same_seed_same_bytes_any_thread_count() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    let args = ["detect", "--mode", "counting", "--config", conf.to_str().unwrap(), "--seed", "9"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&args, &a, &[("SUPERATOM_THREADS", "1")]).status.success());
    assert!(run(&args, &b, &[("SUPERATOM_THREADS", "4")]).status.success());
    for f in outputs_of(&a) {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
    let o = run(&args, &tmp.path().join("c"), &[("SUPERATOM_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_reproduces_outputs() {
    let conf = defaults_conf();
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    run_ok(&["ensemble", "--config", conf.to_str().unwrap(), "--seed", "4"], &first);
    let again = tmp.path().join("again");
    let o = bin()
        .args(["replay", "--manifest"])
        .arg(first.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in outputs_of(&first) {
        assert_eq!(fs::read(first.join(&f)).unwrap(), fs::read(again.join(&f)).unwrap(), "{f}");
    }
    let m = json(&first.join("manifest.json"));
    assert_eq!(m["subcommand"], "ensemble");
    assert_eq!(m["seed"], 4);
    assert!(m["resolved_parameters"]["g_MHz"].is_number());
}
