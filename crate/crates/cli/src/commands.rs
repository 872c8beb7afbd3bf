use std::collections::BTreeMap;

use anyhow::Result;
use serde_json::{Value, json};
use superatom_core::detection::{
    self, CountModel, DetectionFamily, FluxScaling, LifetimeScaling, QuadratureModel, ScanOptions,
};
use superatom_core::dynamics::{self, Protocol, Readout, ShotRecord};
use superatom_core::fitting::{self, CountFixed, DataPoint, QuadratureFixed};
use superatom_core::params::{
    COUNTING_KEYS, ConfigEntries, HOMODYNE_KEYS, SystemParams, angular_to_mhz, mhz_to_angular,
};
use superatom_core::spectra::{self, ProbeCondition};
use superatom_core::{Error, ensemble, format, rng};

use crate::output::{Output, num};
use crate::{
    Command, DetectArgs, EnsembleArgs, FluxArg, LifetimeArg, Mode, OptimizeArgs, RabiArgs,
    SpectraArgs, usage,
};

pub fn run(command: &Command, entries: &ConfigEntries, seed: u64) -> Result<Vec<Output>> {
    let params = SystemParams::from_entries(entries)?;
    match command {
        Command::Spectra(a) => spectra_cmd(a, &params),
        Command::Rabi(a) => rabi_cmd(a, &params, seed),
        Command::Detect(a) => detect_cmd(a, &params, entries, seed),
        Command::Optimize(a) => optimize_cmd(a, &params, entries),
        Command::Ensemble(a) => ensemble_cmd(a, &params, seed),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn spectra_cmd(a: &SpectraArgs, p: &SystemParams) -> Result<Vec<Output>> {
    if !(a.delta_min.is_finite() && a.delta_max.is_finite()) || a.delta_min >= a.delta_max {
        return Err(usage("--delta-min must be below --delta-max"));
    }
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let grid: Vec<f64> = spectra::linear_grid(a.delta_min, a.delta_max, a.points)
        .into_iter()
        .map(mhz_to_angular)
        .collect();
    let table = spectra::sweep(p, &grid, a.blocked)?;

    let at_zero = |blocked: bool| {
        let c = if blocked {
            ProbeCondition::co_swept(0.0).blocked()
        } else {
            ProbeCondition::co_swept(0.0)
        };
        (spectra::transmission(p, &c), spectra::reflection_amplitude(p, &c))
    };
    let (t0, r0) = at_zero(a.blocked);
    let (_, r_g) = at_zero(false);
    let (_, r_r) = at_zero(true);
    let phase_diff = {
        let d = (r_g.phase() - r_r.phase()).abs();
        d.min(2.0 * std::f64::consts::PI - d)
    };
    let peaks: Vec<Value> = table
        .transmission_peaks()
        .into_iter()
        .map(|d| num(angular_to_mhz(d)))
        .collect();
    let polariton = if a.blocked || p.omega_c == 0.0 {
        Value::Null
    } else {
        match spectra::polariton_lifetime(p) {
            Ok(l) => json!({
                "hwhm_MHz": angular_to_mhz(l.hwhm),
                "tau_p_us": l.tau_p,
                "saturation_flux_per_us": l.saturation_flux,
            }),
            Err(Error::NoEitPeak(msg)) => json!({ "unavailable": msg }),
            Err(e) => return Err(e.into()),
        }
    };
    let summary = json!({
        "blocked": a.blocked,
        "points": a.points,
        "peak_delta_MHz": peaks,
        "transmission_at_resonance": t0,
        "reflectivity_at_resonance": r0.reflectivity(),
        "phase_at_resonance": r0.phase(),
        "phase_ground_at_resonance": r_g.phase(),
        "phase_rydberg_at_resonance": r_r.phase(),
        "conditional_phase_shift": phase_diff,
        "polariton": polariton,
    });
    Ok(vec![
        Output::csv("spectrum.csv", table.to_csv()),
        Output::json("summary.json", &summary),
    ])
}

fn rabi_cmd(a: &RabiArgs, p: &SystemParams, seed: u64) -> Result<Vec<Output>> {
    if a.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    if a.shots == 0 {
        return Err(usage("--shots must be at least 1"));
    }
    if !(a.t_min >= 0.0 && a.t_max > a.t_min) {
        return Err(usage("need 0 ≤ --t-min < --t-max"));
    }
    let times = spectra::linear_grid(a.t_min, a.t_max, a.points);
    let trace = dynamics::simulate_rabi_trace(p, &times, a.shots, seed)?;
    let points: Vec<DataPoint> = trace
        .iter()
        .map(|&(t, y, se)| DataPoint::new(t, y, se))
        .collect();
    let fit = fitting::fit_rabi(&points)?;
    let (w, tau, amp, off) = (
        fit.value("omega"),
        fit.value("tau_d"),
        fit.value("amplitude"),
        fit.value("offset"),
    );
    let csv = format::csv(
        "t_d_us,population,std_error,model",
        trace.iter().map(|&(t, y, se)| {
            [
                format::num(t),
                format::num(y),
                format::num(se),
                format::num(fitting::rabi_model(t, w, tau, amp, off)),
            ]
        }),
    );
    let omega_expected = ensemble::collective_rabi(p)?;
    let summary = json!({
        "shots_per_point": a.shots,
        "fit": fit.to_json(),
        "omega_fit_MHz": angular_to_mhz(w),
        "omega_expected_MHz": angular_to_mhz(omega_expected),
        "tau_d_fit_us": tau,
        "tau_d_expected_us": ensemble::rabi_decay_time(p)?,
    });
    Ok(vec![
        Output::csv("rabi_trace.csv", csv),
        Output::json("rabi_fit.json", &summary),
    ])
}

fn optional(entries: &ConfigEntries, key: &str) -> Option<f64> {
    entries.get(key)
}

struct CountingSetup {
    t_i: f64,
    bin: f64,
    phi_g: f64,
    phi_r: f64,
    threshold: u64,
    eta: Option<f64>,
}

fn counting_setup(entries: &ConfigEntries) -> Result<CountingSetup> {
    let v = entries.require(COUNTING_KEYS)?;
    let threshold = v[4];
    if !(threshold >= 0.0 && threshold.fract() == 0.0) {
        return Err(Error::InvalidInput("count_threshold must be a non-negative integer".into()).into());
    }
    Ok(CountingSetup {
        t_i: v[0],
        bin: v[1],
        phi_g: v[2],
        phi_r: v[2] * v[3],
        threshold: threshold as u64,
        eta: optional(entries, "count_eta_r"),
    })
}

struct HomodyneSetup {
    t_i: f64,
    bin: f64,
    phi: f64,
    refl_g: f64,
    refl_r: f64,
    tau_r: f64,
    threshold: f64,
    eta: Option<f64>,
}

fn homodyne_setup(entries: &ConfigEntries) -> Result<HomodyneSetup> {
    let v = entries.require(HOMODYNE_KEYS)?;
    Ok(HomodyneSetup {
        t_i: v[0],
        bin: v[1],
        phi: v[2],
        refl_g: v[3],
        refl_r: v[4],
        tau_r: v[5],
        threshold: v[6],
        eta: optional(entries, "hd_eta_r"),
    })
}

fn run_batches(proto: &Protocol, p: &SystemParams, shots: usize, seed: u64) -> Result<(Vec<ShotRecord>, Vec<ShotRecord>)> {
    let g = dynamics::batch(proto, false, shots, p, rng::derive_seed(seed, 0))?;
    let r = dynamics::batch(proto, true, shots, p, rng::derive_seed(seed, 1))?;
    Ok((g, r))
}

fn trace_csv(shots: &[ShotRecord]) -> String {
    format::csv(
        "bin_start_us,mean,std_error",
        dynamics::mean_trace(shots)
            .into_iter()
            .map(|(t, m, se)| [format::num(t), format::num(m), format::num(se)]),
    )
}

fn rates_json(r: &detection::ErrorRates) -> Value {
    json!({ "eps_g": r.eps_g, "eps_r": r.eps_r, "fidelity": r.fidelity })
}

fn detect_cmd(a: &DetectArgs, p: &SystemParams, entries: &ConfigEntries, seed: u64) -> Result<Vec<Output>> {
    if a.shots < 100 {
        return Err(usage("--shots must be at least 100 for the histogram fit"));
    }
    match a.mode {
        Mode::Counting => {
            let s = counting_setup(entries)?;
            let mut proto = Protocol::with_pi_pulse(
                p,
                s.t_i,
                s.bin,
                Readout::Counting {
                    phi_g: s.phi_g,
                    phi_r: s.phi_r,
                },
                p.tau_r,
            )?;
            proto.eta_r = s.eta;
            proto.validate()?;
            let eta = proto.preparation_efficiency(p)?;
            let model = CountModel {
                t_i: s.t_i,
                phi_g: s.phi_g,
                phi_r: s.phi_r,
                tau_r: p.tau_r,
                eta_r: eta,
            };
            let (g, r) = run_batches(&proto, p, a.shots, seed)?;
            let counts = |v: &[ShotRecord]| -> Vec<u64> { v.iter().filter_map(|s| s.total_counts()).collect() };
            let (cg, cr) = (counts(&g), counts(&r));
            let hist_g = detection::compare_counts(&cg, |n| Ok(model.pmf_ground(n)))?;
            let hist_r = detection::compare_counts(&cr, |n| model.pmf_rydberg(n))?;
            let rates = detection::error_rates_counting(&model, s.threshold)?;
            let empirical = detection::ErrorRates::new(
                cg.iter().filter(|&&n| n < s.threshold).count() as f64 / cg.len() as f64,
                cr.iter().filter(|&&n| n >= s.threshold).count() as f64 / cr.len() as f64,
            );
            let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
            for &n in &cr {
                *hist.entry(n).or_insert(0) += 1;
            }
            let fit = fitting::fit_count_histogram(
                &hist,
                CountFixed {
                    t_i: s.t_i,
                    phi_g: s.phi_g,
                    tau_r: p.tau_r,
                },
            )?;
            let phi_r_fit = fit.param("phi_r").unwrap();
            let summary = json!({
                "mode": "counting",
                "shots_per_state": a.shots,
                "threshold": s.threshold,
                "eta_r": eta,
                "model": rates_json(&rates),
                "empirical": rates_json(&empirical),
                "eps_g": rates.eps_g,
                "eps_r": rates.eps_r,
                "fidelity": rates.fidelity,
                "fit": fit.to_json(),
                "phi_r_ratio_fit": phi_r_fit.value / s.phi_g,
                "phi_r_ratio_fit_error": phi_r_fit.std_error / s.phi_g,
                "total_variation": { "G": hist_g.total_variation(), "R": hist_r.total_variation() },
            });
            Ok(vec![
                Output::csv("histogram_G.csv", hist_g.to_csv()),
                Output::csv("histogram_R.csv", hist_r.to_csv()),
                Output::csv("trace_R.csv", trace_csv(&r)),
                Output::json("detection.json", &summary),
            ])
        }
        Mode::Homodyne => {
            let s = homodyne_setup(entries)?;
            let mut proto = Protocol::with_pi_pulse(
                p,
                s.t_i,
                s.bin,
                Readout::Homodyne {
                    phi: s.phi,
                    refl_g: s.refl_g,
                    refl_r: s.refl_r,
                },
                s.tau_r,
            )?;
            proto.eta_r = s.eta;
            proto.validate()?;
            let eta = proto.preparation_efficiency(p)?;
            let model = QuadratureModel {
                t_i: s.t_i,
                phi: s.phi,
                refl_g: s.refl_g,
                refl_r: s.refl_r,
                tau_r: s.tau_r,
                eta_r: eta,
            };
            let (g, r) = run_batches(&proto, p, a.shots, seed)?;
            let xs = |v: &[ShotRecord]| -> Vec<f64> { v.iter().filter_map(|s| s.integrated_quadrature()).collect() };
            let (xg, xr) = (xs(&g), xs(&r));
            let all: Vec<f64> = xg.iter().chain(&xr).copied().collect();
            let edges = detection::freedman_diaconis_edges(&all);
            let hist_g = detection::compare_binned(&xg, &edges, |x| Ok(model.cdf_ground(x)))?;
            let hist_r = detection::compare_binned(&xr, &edges, |x| model.cdf_rydberg(x))?;
            let rates = detection::error_rates_homodyne(&model, s.threshold)?;
            let empirical = detection::ErrorRates::new(
                xg.iter().filter(|&&x| x > s.threshold).count() as f64 / xg.len() as f64,
                xr.iter().filter(|&&x| x <= s.threshold).count() as f64 / xr.len() as f64,
            );
            let fit = fitting::fit_quadrature_histogram(
                &xr,
                QuadratureFixed {
                    t_i: s.t_i,
                    phi: s.phi,
                    refl_g: s.refl_g,
                    tau_r: s.tau_r,
                },
            )?;
            let summary = json!({
                "mode": "homodyne",
                "shots_per_state": a.shots,
                "threshold": s.threshold,
                "eta_r": eta,
                "model": rates_json(&rates),
                "empirical": rates_json(&empirical),
                "eps_g": rates.eps_g,
                "eps_r": rates.eps_r,
                "fidelity": rates.fidelity,
                "fit": fit.to_json(),
                "total_variation": { "G": hist_g.total_variation(), "R": hist_r.total_variation() },
            });
            Ok(vec![
                Output::csv("histogram_G.csv", hist_g.to_csv()),
                Output::csv("histogram_R.csv", hist_r.to_csv()),
                Output::csv("trace_R.csv", trace_csv(&r)),
                Output::json("detection.json", &summary),
            ])
        }
    }
}

/// Inclusive grid `lo, lo + step, …` up to `hi` (rounded to the nearest step).
fn stepped_grid(lo: f64, hi: f64, step: f64, what: &str) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step > 0.0 && hi >= lo) {
        return Err(usage(format!("{what} grid needs min ≤ max and a positive step")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(usage(format!("{what} grid has too many points")));
    }
    Ok((0..n).map(|k| lo + step * k as f64).collect())
}

fn optimize_cmd(a: &OptimizeArgs, p: &SystemParams, entries: &ConfigEntries) -> Result<Vec<Output>> {
    let ts = stepped_grid(a.t_min, a.t_max, a.t_step, "integration time")?;
    if ts[0] <= 0.0 {
        return Err(usage("integration times must be positive"));
    }
    let (family, defaults) = match a.mode {
        Mode::Counting => {
            let s = counting_setup(entries)?;
            let eta = match s.eta {
                Some(e) => e,
                None => {
                    let proto = Protocol::with_pi_pulse(
                        p,
                        s.t_i,
                        s.bin,
                        Readout::Counting { phi_g: s.phi_g, phi_r: s.phi_r },
                        p.tau_r,
                    )?;
                    proto.preparation_efficiency(p)?
                }
            };
            (
                DetectionFamily::Counting(CountModel {
                    t_i: s.t_i,
                    phi_g: s.phi_g,
                    phi_r: s.phi_r,
                    tau_r: p.tau_r,
                    eta_r: eta,
                }),
                (1.0, 12.0, 1.0),
            )
        }
        Mode::Homodyne => {
            let s = homodyne_setup(entries)?;
            let eta = match s.eta {
                Some(e) => e,
                None => {
                    let proto = Protocol::with_pi_pulse(
                        p,
                        s.t_i,
                        s.bin,
                        Readout::Homodyne { phi: s.phi, refl_g: s.refl_g, refl_r: s.refl_r },
                        s.tau_r,
                    )?;
                    proto.preparation_efficiency(p)?
                }
            };
            (
                DetectionFamily::Homodyne(QuadratureModel {
                    t_i: s.t_i,
                    phi: s.phi,
                    refl_g: s.refl_g,
                    refl_r: s.refl_r,
                    tau_r: s.tau_r,
                    eta_r: eta,
                }),
                (-1.0, 2.0, 0.01),
            )
        }
    };
    let thr = stepped_grid(
        a.thr_min.unwrap_or(defaults.0),
        a.thr_max.unwrap_or(defaults.1),
        a.thr_step.unwrap_or(defaults.2),
        "threshold",
    )?;
    let opts = ScanOptions {
        flux: match a.flux {
            FluxArg::Fixed => FluxScaling::Fixed,
            FluxArg::ConstantCounts => FluxScaling::ConstantMeanCounts,
        },
        lifetime: match a.lifetime {
            LifetimeArg::Fixed => LifetimeScaling::Fixed,
            LifetimeArg::InverseFlux => LifetimeScaling::InverseFlux,
        },
    };
    let best = detection::optimize_detection(&family, &ts, &thr, opts)?;
    let interior = best.t_i > ts[0] && best.t_i < ts[ts.len() - 1];
    let summary = json!({
        "mode": match a.mode { Mode::Counting => "counting", Mode::Homodyne => "homodyne" },
        "t_i_us": best.t_i,
        "threshold": best.threshold,
        "eps_g": best.rates.eps_g,
        "eps_r": best.rates.eps_r,
        "fidelity": best.rates.fidelity,
        "interior_t_i": interior,
        "grid_points": best.surface.len(),
    });
    Ok(vec![
        Output::csv("fidelity_surface.csv", best.surface_csv()),
        Output::json("optimum.json", &summary),
    ])
}

fn ensemble_cmd(a: &EnsembleArgs, p: &SystemParams, seed: u64) -> Result<Vec<Output>> {
    if !(a.r_neighbors > 0.0) {
        return Err(usage("--r-neighbors must be positive"));
    }
    let r_ref = a.r_ref.unwrap_or(4.0 * p.sigma_a);
    if !(r_ref > 0.0) {
        return Err(usage("--r-ref must be positive"));
    }
    let cloud = ensemble::sample_cloud(p, seed);
    let threshold = ensemble::pair_shift(p.c_rr, r_ref);
    let stats = ensemble::blockade_stats(&cloud, p.c_rr, r_ref, threshold)?;
    let near = ensemble::blockade_stats(&cloud, p.c_rr, a.r_neighbors, threshold)?;
    let fraction = match stats.fraction_blockaded {
        Some(f) => json!(f),
        None => Value::Null,
    };
    let mut summary = json!({
        "n_atoms": p.n_atoms,
        "n_pairs": stats.n_pairs,
        "reference_distance_um": r_ref,
        "shift_threshold_MHz": threshold,
        "shift_at_reference_MHz": stats.shift_at_ref_mhz,
        "fraction_blockaded": fraction,
        "neighbor_radius_um": a.r_neighbors,
        "mean_neighbors_within": near.mean_neighbors_within,
        "collective_rabi_MHz": angular_to_mhz(ensemble::collective_rabi(p)?),
    });
    if stats.fraction_blockaded.is_none() {
        summary["fraction_blockaded_note"] = json!("undefined: the cloud has fewer than two atoms, so there are no pairs");
    }
    Ok(vec![
        Output::csv("cloud.csv", cloud.to_csv()),
        Output::json("blockade.json", &summary),
    ])
}
