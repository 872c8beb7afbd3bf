//! Parameter estimation for traces, spectra and detection histograms.
//!
//! Every fitter minimises either a weighted χ² or a negative log-likelihood
//! with bounded multi-start Nelder–Mead. Standard errors come from the
//! finite-difference curvature at the optimum (covariance 2H⁻¹ for χ², H⁻¹
//! for a log-likelihood). A parameter that ends on a bound gets a one-sided
//! interval from a conditional profile scan instead.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{self, CountModel, QuadratureModel};
use crate::error::{Error, Result};
use crate::optim::{self, Bounds, NmOptions, NmResult};
use crate::params::SystemParams;
use crate::rng;
use crate::spectra::{self, ProbeCondition};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

/// Tolerance on the gradient norm measured in standard-error units.
pub const GRADIENT_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    ChiSquare,
    NegLogLikelihood,
}

impl ObjectiveKind {
    /// Objective rise marking a one-standard-error interval.
    fn delta(self) -> f64 {
        match self {
            ObjectiveKind::ChiSquare => 1.0,
            ObjectiveKind::NegLogLikelihood => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// Symmetric error for interior estimates, the open side's error at a bound.
    pub std_error: f64,
    pub error_minus: f64,
    pub error_plus: f64,
    pub at_bound: Option<BoundSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<FitParameter>,
    pub objective_kind: ObjectiveKind,
    pub objective: f64,
    pub n_data: usize,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub gradient_tol: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Estimate of `name`; panics if the fit has no such parameter.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .value
    }

    /// Whether `truth` lies within `k` reported errors of the estimate,
    /// using the error on the side facing `truth`.
    pub fn covers(&self, name: &str, truth: f64, k: f64) -> bool {
        let Some(p) = self.param(name) else {
            return false;
        };
        let err = if truth < p.value {
            p.error_minus
        } else {
            p.error_plus
        };
        (truth - p.value).abs() <= k * err
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("fit result serialises")
    }
}

fn opts() -> NmOptions {
    NmOptions::default()
}

fn bound_side(x: f64, lo: f64, hi: f64) -> Option<BoundSide> {
    let w = if (hi - lo).is_finite() { hi - lo } else { x.abs().max(1.0) };
    let eps = 1e-7 * w;
    if lo.is_finite() && x - lo <= eps {
        Some(BoundSide::Lower)
    } else if hi.is_finite() && hi - x <= eps {
        Some(BoundSide::Upper)
    } else {
        None
    }
}

/// Distance from the bound at which the objective, other parameters held,
/// rises by `delta`.
fn profile_error<F>(f: &F, x: &[f64], i: usize, side: BoundSide, bounds: &Bounds, delta: f64) -> Option<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let f0 = f(x);
    let (start, limit) = match side {
        BoundSide::Lower => (x[i], bounds.hi[i]),
        BoundSide::Upper => (x[i], bounds.lo[i]),
    };
    let room = (limit - start).abs();
    let at = |d: f64| {
        let mut p = x.to_vec();
        p[i] = match side {
            BoundSide::Lower => start + d,
            BoundSide::Upper => start - d,
        };
        f(&p) - f0
    };
    let mut step = 1e-6 * if room.is_finite() { room } else { start.abs().max(1.0) };
    let mut lo = 0.0;
    loop {
        let d = if room.is_finite() { step.min(room) } else { step };
        if at(d) >= delta {
            let mut hi = d;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if at(mid) >= delta {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        if room.is_finite() && d >= room {
            return None;
        }
        if !room.is_finite() && d > 1e12 * start.abs().max(1.0) {
            return None;
        }
        lo = d;
        step *= 2.0;
    }
}

/// Turns an optimiser result into a `FitResult` with curvature errors.
fn finish<F>(
    model: &str,
    names: &[&str],
    f: &F,
    kind: ObjectiveKind,
    bounds: &Bounds,
    nm: NmResult,
    n_data: usize,
) -> FitResult
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = names.len();
    let x = nm.x.clone();
    let mut warnings = Vec::new();
    let sides: Vec<Option<BoundSide>> = (0..n)
        .map(|i| bound_side(x[i], bounds.lo[i], bounds.hi[i]))
        .collect();
    let interior: Vec<usize> = (0..n).filter(|&i| sides[i].is_none()).collect();

    let factor = match kind {
        ObjectiveKind::ChiSquare => 2.0,
        ObjectiveKind::NegLogLikelihood => 1.0,
    };
    let mut se = vec![f64::INFINITY; n];
    if !interior.is_empty() {
        let h = optim::hessian(f, &x, bounds, &interior);
        match optim::spd_inverse(&h) {
            Some(inv) => {
                for (a, &i) in interior.iter().enumerate() {
                    se[i] = (factor * inv[a][a]).max(0.0).sqrt();
                }
            }
            None => warnings.push(
                "curvature matrix is not positive definite: flat likelihood, parameters not identifiable"
                    .to_string(),
            ),
        }
    }

    let mut parameters = Vec::with_capacity(n);
    for i in 0..n {
        let (minus, plus, err) = match sides[i] {
            None => (se[i], se[i], se[i]),
            Some(side) => {
                let e = profile_error(f, &x, i, side, bounds, kind.delta()).unwrap_or_else(|| {
                    warnings.push(format!(
                        "{} sits on a bound and the objective never rises by {} across its range",
                        names[i],
                        kind.delta()
                    ));
                    f64::INFINITY
                });
                match side {
                    BoundSide::Lower => (0.0, e, e),
                    BoundSide::Upper => (e, 0.0, e),
                }
            }
        };
        let width = bounds.hi[i] - bounds.lo[i];
        if sides[i].is_none() && se[i].is_finite() && width.is_finite() && se[i] > width {
            warnings.push(format!(
                "{}: standard error exceeds its allowed range (flat likelihood)",
                names[i]
            ));
        }
        let value = match sides[i] {
            Some(BoundSide::Lower) => bounds.lo[i],
            Some(BoundSide::Upper) => bounds.hi[i],
            None => x[i],
        };
        parameters.push(FitParameter {
            name: names[i].to_string(),
            value,
            std_error: err,
            error_minus: minus,
            error_plus: plus,
            at_bound: sides[i],
        });
    }

    let grad = optim::gradient(f, &x, bounds);
    let gradient_norm = interior
        .iter()
        .map(|&i| {
            let s = if se[i].is_finite() && se[i] > 0.0 {
                se[i]
            } else {
                bounds.scale(i, x[i])
            };
            (grad[i] * s).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let converged = nm.converged && gradient_norm <= GRADIENT_TOL;
    if nm.converged && !converged {
        warnings.push(format!(
            "simplex converged but gradient norm {gradient_norm:.3e} exceeds {GRADIENT_TOL:e}"
        ));
    }
    if !nm.converged {
        warnings.push("optimiser reached its iteration limit".to_string());
    }

    FitResult {
        model: model.to_string(),
        parameters,
        objective_kind: kind,
        objective: nm.f,
        n_data,
        iterations: nm.iterations,
        converged,
        gradient_norm,
        gradient_tol: GRADIENT_TOL,
        warnings,
    }
}

/// One measured point of a trace or spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub std_error: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, std_error: f64) -> Self {
        DataPoint { x, y, std_error }
    }
}

fn check_points(points: &[DataPoint], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::invalid(format!(
            "need at least {min} points, got {}",
            points.len()
        )));
    }
    for p in points {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::invalid("data must be finite"));
        }
        if !(p.std_error > 0.0 && p.std_error.is_finite()) {
            return Err(Error::invalid("standard errors must be positive"));
        }
    }
    Ok(())
}

fn chi_square(points: &[DataPoint], model: impl Fn(f64) -> f64) -> f64 {
    points
        .iter()
        .map(|p| ((p.y - model(p.x)) / p.std_error).powi(2))
        .sum()
}

/// Gaussian-damped Rabi model `off + A·[1 − cos(Ωt)e^{−t²/τ²}]/2`.
pub fn rabi_model(t: f64, omega: f64, tau_d: f64, amplitude: f64, offset: f64) -> f64 {
    offset + amplitude * 0.5 * (1.0 - (omega * t).cos() * (-(t / tau_d).powi(2)).exp())
}

/// Angular frequency of the largest peak in the discrete spectrum of the
/// (mean-subtracted) trace, searched between one period per span and the
/// Nyquist limit of the median spacing.
fn dominant_frequency(points: &[DataPoint]) -> f64 {
    let mut ts: Vec<f64> = points.iter().map(|p| p.x).collect();
    ts.sort_by(f64::total_cmp);
    let span = ts[ts.len() - 1] - ts[0];
    let mut gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    gaps.sort_by(f64::total_cmp);
    let dt = gaps.get(gaps.len() / 2).copied().unwrap_or(span);
    let mean = points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64;
    let w_lo = 2.0 * std::f64::consts::PI / span;
    let w_hi = std::f64::consts::PI / dt;
    let n = 4000;
    (0..=n)
        .into_par_iter()
        .map(|k| {
            let w = w_lo + (w_hi - w_lo) * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for p in points {
                re += (p.y - mean) * (w * p.x).cos();
                im += (p.y - mean) * (w * p.x).sin();
            }
            (w, re * re + im * im)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((w_lo, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
        .0
}

/// Fits Ω (rad/µs), τ_d (µs), amplitude and offset to a population trace.
pub fn fit_rabi(trace: &[DataPoint]) -> Result<FitResult> {
    check_points(trace, 8)?;
    let wsum: f64 = trace.iter().map(|p| p.std_error.powi(-2)).sum();
    let wmean = trace.iter().map(|p| p.y * p.std_error.powi(-2)).sum::<f64>() / wsum;
    let chi_flat = chi_square(trace, |_| wmean);
    let dof = (trace.len() - 1) as f64;
    if chi_flat <= dof + 3.0 * (2.0 * dof).sqrt() {
        return Err(Error::Degenerate(
            "trace is constant within its noise; no oscillation to fit".into(),
        ));
    }
    let span = trace.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max)
        - trace.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let w0 = dominant_frequency(trace);
    let y_min = trace.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = trace.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);

    let f = |x: &[f64]| chi_square(trace, |t| rabi_model(t, x[0], x[1], x[2], x[3]));
    let bounds = Bounds::new(
        vec![1e-9, 1e-3 * span, 0.0, -1.0],
        vec![4.0 * w0 + 100.0 / span, 1e3 * span, 2.0, 1.0],
    )?;
    let mut starts = Vec::new();
    for wf in [0.85, 1.0, 1.15] {
        for tf in [0.5, 2.0] {
            starts.push(vec![
                w0 * wf,
                span * tf,
                (y_max - y_min).clamp(0.01, 2.0),
                y_min.clamp(-1.0, 1.0),
            ]);
        }
    }
    let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
    Ok(finish(
        "rabi",
        &["omega", "tau_d", "amplitude", "offset"],
        &f,
        ObjectiveKind::ChiSquare,
        &bounds,
        nm,
        trace.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeModel {
    /// `floor + rate0·(1 − e^{−t/τ})`: the R-branch count rate recovering
    /// toward the ground-state level after jumps.
    Recovery,
    /// `rate0·e^{−t/τ}`: survival probability.
    Survival,
}

/// Fits rate₀, τ_R and (for the recovery model) the floor.
pub fn fit_lifetime(trace: &[DataPoint], model: LifetimeModel) -> Result<FitResult> {
    check_points(trace, 4)?;
    let t_min = trace.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let t_max = trace.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let span = (t_max - t_min).max(f64::MIN_POSITIVE);
    let y_scale = trace.iter().map(|p| p.y.abs()).fold(0.0, f64::max).max(1e-12);
    let first = trace
        .iter()
        .min_by(|a, b| a.x.total_cmp(&b.x))
        .map(|p| p.y)
        .unwrap();
    let last = trace
        .iter()
        .max_by(|a, b| a.x.total_cmp(&b.x))
        .map(|p| p.y)
        .unwrap();
    let tau_bounds = (1e-3 * span, 1e4 * span);
    match model {
        LifetimeModel::Recovery => {
            let f = |x: &[f64]| chi_square(trace, |t| x[2] + x[0] * (1.0 - (-t / x[1]).exp()));
            let bounds = Bounds::new(
                vec![-100.0 * y_scale, tau_bounds.0, -100.0 * y_scale],
                vec![100.0 * y_scale, tau_bounds.1, 100.0 * y_scale],
            )?;
            let starts: Vec<Vec<f64>> = [0.3, 1.0, 3.0]
                .iter()
                .map(|k| {
                    let tau = k * span;
                    let frac = 1.0 - (-t_max / tau).exp();
                    vec![(last - first) / frac.max(1e-3), tau, first]
                })
                .collect();
            let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
            Ok(finish(
                "lifetime_recovery",
                &["rate0", "tau_r", "floor"],
                &f,
                ObjectiveKind::ChiSquare,
                &bounds,
                nm,
                trace.len(),
            ))
        }
        LifetimeModel::Survival => {
            let f = |x: &[f64]| chi_square(trace, |t| x[0] * (-t / x[1]).exp());
            let bounds = Bounds::new(
                vec![-100.0 * y_scale, tau_bounds.0],
                vec![100.0 * y_scale, tau_bounds.1],
            )?;
            let starts: Vec<Vec<f64>> = [0.3, 1.0, 3.0]
                .iter()
                .map(|k| vec![first.max(1e-12), k * span])
                .collect();
            let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
            Ok(finish(
                "lifetime_survival",
                &["rate0", "tau_r"],
                &f,
                ObjectiveKind::ChiSquare,
                &bounds,
                nm,
                trace.len(),
            ))
        }
    }
}

/// Parameters held fixed in a count-histogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountFixed {
    pub t_i: f64,
    pub phi_g: f64,
    pub tau_r: f64,
}

/// Maximum-likelihood (φ_R, η_R) from a histogram of counts from π-pulse
/// preparations.
pub fn fit_count_histogram(hist: &BTreeMap<u64, u64>, fixed: CountFixed) -> Result<FitResult> {
    let total: u64 = hist.values().sum();
    if total < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 occurrences, got {total}"
        )));
    }
    let base = CountModel {
        t_i: fixed.t_i,
        phi_g: fixed.phi_g,
        phi_r: 0.0,
        tau_r: fixed.tau_r,
        eta_r: 1.0,
    };
    base.validate()?;
    let entries: Vec<(u64, f64)> = hist
        .iter()
        .filter(|e| *e.1 > 0)
        .map(|(&n, &k)| (n, k as f64))
        .collect();
    let f = |x: &[f64]| {
        let m = CountModel {
            phi_r: x[0],
            eta_r: x[1],
            ..base
        };
        let mut nll = 0.0;
        for &(n, k) in &entries {
            match m.pmf_rydberg(n) {
                Ok(p) => nll -= k * p.max(1e-300).ln(),
                Err(_) => return f64::INFINITY,
            }
        }
        nll
    };
    let bounds = Bounds::new(vec![0.0, 0.0], vec![fixed.phi_g, 1.0])?;
    let mut starts = Vec::new();
    for r in [0.02, 0.2, 0.6] {
        for eta in [0.5, 0.95] {
            starts.push(vec![r * fixed.phi_g, eta]);
        }
    }
    let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
    let mut fit = finish(
        "count_histogram",
        &["phi_r", "eta_r"],
        &f,
        ObjectiveKind::NegLogLikelihood,
        &bounds,
        nm,
        total as usize,
    );
    let nll_ground = f(&[0.0, 0.0]);
    flag_flat_mixture(&mut fit, nll_ground, "phi_r");
    Ok(fit)
}

/// Flags fits whose data the ground distribution alone explains about as
/// well as the fitted mixture; η_R and the R-branch parameter then trade off
/// freely.
fn flag_flat_mixture(fit: &mut FitResult, nll_ground: f64, branch: &str) {
    if nll_ground - fit.objective < 2.0 {
        fit.warnings.push(format!(
            "flat likelihood: the ground distribution alone fits the data; eta_r and {branch} are not identifiable"
        ));
    }
}

/// Parameters held fixed in a quadrature-histogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureFixed {
    pub t_i: f64,
    pub phi: f64,
    pub refl_g: f64,
    pub tau_r: f64,
}

/// Maximum-likelihood (ℛ_R, η_R) from integrated quadratures, binned with
/// Freedman–Diaconis widths; the outer bins extend to ±∞.
pub fn fit_quadrature_histogram(samples: &[f64], fixed: QuadratureFixed) -> Result<FitResult> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let base = QuadratureModel {
        t_i: fixed.t_i,
        phi: fixed.phi,
        refl_g: fixed.refl_g,
        refl_r: 0.5,
        tau_r: fixed.tau_r,
        eta_r: 1.0,
    };
    base.validate()?;
    let edges = detection::freedman_diaconis_edges(samples);
    let counts: Vec<f64> = detection::bin_counts(samples, &edges)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let inner = &edges[1..edges.len() - 1];
    let f = |x: &[f64]| {
        let m = QuadratureModel {
            refl_r: x[0],
            eta_r: x[1],
            ..base
        };
        let mut prev = 0.0;
        let mut nll = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let cdf = if k < inner.len() {
                match m.cdf_rydberg(inner[k]) {
                    Ok(v) => v,
                    Err(_) => return f64::INFINITY,
                }
            } else {
                1.0
            };
            if c > 0.0 {
                nll -= c * (cdf - prev).max(1e-300).ln();
            }
            prev = cdf;
        }
        nll
    };
    let bounds = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0])?;
    let mut starts = Vec::new();
    for r in [0.2, 0.5, 0.8] {
        for eta in [0.5, 0.95] {
            starts.push(vec![r, eta]);
        }
    }
    let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
    let mut fit = finish(
        "quadrature_histogram",
        &["refl_r", "eta_r"],
        &f,
        ObjectiveKind::NegLogLikelihood,
        &bounds,
        nm,
        samples.len(),
    );
    let nll_ground = f(&[0.5, 0.0]);
    flag_flat_mixture(&mut fit, nll_ground, "refl_r");
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMode {
    Transmission,
    Reflectivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumParam {
    G,
    Kappa,
    Kappa0,
    Gamma,
    GammaR,
    OmegaC,
}

impl SpectrumParam {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumParam::G => "g",
            SpectrumParam::Kappa => "kappa",
            SpectrumParam::Kappa0 => "kappa0",
            SpectrumParam::Gamma => "gamma",
            SpectrumParam::GammaR => "gamma_r",
            SpectrumParam::OmegaC => "omega_c",
        }
    }

    fn get(self, p: &SystemParams) -> f64 {
        match self {
            SpectrumParam::G => p.g,
            SpectrumParam::Kappa => p.kappa,
            SpectrumParam::Kappa0 => p.kappa0,
            SpectrumParam::Gamma => p.gamma,
            SpectrumParam::GammaR => p.gamma_r,
            SpectrumParam::OmegaC => p.omega_c,
        }
    }

    fn set(self, p: &mut SystemParams, v: f64) {
        match self {
            SpectrumParam::G => p.g = v,
            SpectrumParam::Kappa => p.kappa = v,
            SpectrumParam::Kappa0 => p.kappa0 = v,
            SpectrumParam::Gamma => p.gamma = v,
            SpectrumParam::GammaR => p.gamma_r = v,
            SpectrumParam::OmegaC => p.omega_c = v,
        }
    }
}

/// Spectrum value at co-swept detuning `delta` (rad/µs).
pub fn spectrum_value(p: &SystemParams, mode: SpectrumMode, delta: f64) -> f64 {
    let c = ProbeCondition::co_swept(delta);
    match mode {
        SpectrumMode::Transmission => spectra::transmission(p, &c),
        SpectrumMode::Reflectivity => spectra::reflection_amplitude(p, &c).reflectivity(),
    }
}

/// Weighted least squares of the closed-form spectrum. Parameters not in
/// `free` stay at their values in `base`, which also seeds the search.
/// Detunings and fitted rates are angular (rad/µs).
pub fn fit_spectrum(
    points: &[DataPoint],
    mode: SpectrumMode,
    free: &[SpectrumParam],
    base: &SystemParams,
) -> Result<FitResult> {
    let mut free = free.to_vec();
    free.sort();
    free.dedup();
    check_points(points, (2 * free.len()).max(1))?;
    let model_at = |x: &[f64]| {
        let mut p = base.clone();
        for (k, q) in free.iter().enumerate() {
            q.set(&mut p, x[k]);
        }
        p
    };
    let f = |x: &[f64]| {
        let p = model_at(x);
        if p.kappa0 > p.kappa {
            return f64::INFINITY;
        }
        chi_square(points, |d| spectrum_value(&p, mode, d))
    };
    if free.is_empty() {
        return Ok(FitResult {
            model: format!("spectrum_{}", mode_name(mode)),
            parameters: Vec::new(),
            objective_kind: ObjectiveKind::ChiSquare,
            objective: f(&[]),
            n_data: points.len(),
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            gradient_tol: GRADIENT_TOL,
            warnings: Vec::new(),
        });
    }
    let lo = vec![0.0; free.len()];
    let hi: Vec<f64> = free
        .iter()
        .map(|q| (10.0 * q.get(base)).max(2.0 * std::f64::consts::PI * 100.0))
        .collect();
    let bounds = Bounds::new(lo, hi)?;
    let x0: Vec<f64> = free.iter().map(|q| q.get(base)).collect();
    let mut starts = vec![x0.clone()];
    let pos = |q: SpectrumParam| free.iter().position(|&p| p == q);
    let (ig, ic) = (pos(SpectrumParam::G), pos(SpectrumParam::OmegaC));
    for fg in [0.7, 1.0, 1.4] {
        for fc in [0.6, 1.0, 1.6] {
            if (fg == 1.0 || ig.is_none()) && (fc == 1.0 || ic.is_none()) {
                continue;
            }
            let mut s = x0.clone();
            if let Some(i) = ig {
                s[i] *= fg;
            }
            if let Some(i) = ic {
                s[i] *= fc;
            }
            if !starts.contains(&s) {
                starts.push(s);
            }
        }
    }
    let nm = optim::multi_start(&f, &starts, &bounds, opts())?;
    let names: Vec<&str> = free.iter().map(|q| q.name()).collect();
    Ok(finish(
        &format!("spectrum_{}", mode_name(mode)),
        &names,
        &f,
        ObjectiveKind::ChiSquare,
        &bounds,
        nm,
        points.len(),
    ))
}

fn mode_name(mode: SpectrumMode) -> &'static str {
    match mode {
        SpectrumMode::Transmission => "transmission",
        SpectrumMode::Reflectivity => "reflectivity",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParameter {
    pub name: String,
    pub std_dev: f64,
    /// 15.87 % and 84.13 % quantiles of the resampled estimates.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub failures: usize,
    pub parameters: Vec<BootstrapParameter>,
}

/// Refits `n_resamples` datasets drawn with replacement from `data`.
/// Resample `i` draws from stream `i` of `seed`, so the result does not
/// depend on the thread count.
pub fn bootstrap<T, F>(data: &[T], n_resamples: usize, seed: u64, fit: F) -> Result<BootstrapSummary>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Result<FitResult> + Sync,
{
    if data.is_empty() || n_resamples == 0 {
        return Err(Error::invalid("bootstrap needs data and at least one resample"));
    }
    let fits: Vec<Option<FitResult>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let sample: Vec<T> = (0..data.len())
                .map(|_| data[r.random_range(0..data.len())].clone())
                .collect();
            fit(&sample).ok()
        })
        .collect();
    let ok: Vec<&FitResult> = fits.iter().flatten().collect();
    let failures = n_resamples - ok.len();
    if ok.len() < 2 {
        return Err(Error::FitFailed("fewer than two bootstrap refits succeeded".into()));
    }
    let names: Vec<String> = ok[0].parameters.iter().map(|p| p.name.clone()).collect();
    let parameters = names
        .into_iter()
        .map(|name| {
            let mut v: Vec<f64> = ok.iter().map(|f| f.value(&name)).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            v.sort_by(f64::total_cmp);
            BootstrapParameter {
                name,
                std_dev: var.sqrt(),
                lower: quantile(&v, 0.158_655_25),
                upper: quantile(&v, 0.841_344_75),
            }
        })
        .collect();
    Ok(BootstrapSummary {
        resamples: n_resamples,
        failures,
        parameters,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}
