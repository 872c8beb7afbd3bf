//! Closed-form single-shot detection statistics.
//!
//! Counting: the ground state gives Poisson counts with mean t_i·φ_G. A
//! Rydberg preparation gives Poisson(t_i·φ_R) if it survives the window
//! (probability e^{−t_i/τ_R}) and, for a jump at t, Poisson with mean
//! n_J(t) = t·φ_R + (t_i − t)·φ_G weighted by e^{−t/τ_R}/τ_R. Imperfect
//! preparation mixes in the ground distribution with weight 1 − η_R.
//!
//! Homodyne follows the same structure with Gaussians of variance ½ centred
//! on X̄_G = −√(2t_iφℛ_G), X̄_R = +√(2t_iφℛ_R) and, after a jump at t,
//! X̄_J(t) = −(t_i − t)√(2φℛ_G/t_i) + t√(2φℛ_R/t_i). The Rydberg branch sits
//! at positive X; X > x_t is classified as R.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::format;
use crate::quad::{self, Tolerance};

fn jump_tolerance() -> Tolerance {
    Tolerance {
        abs: 1e-15,
        rel: 1e-8,
        max_intervals: 500,
    }
}

/// Poisson probability of `n` for mean `mu`, evaluated in log space.
pub fn poisson_pmf(n: u64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n = n as f64;
    (n * mu.ln() - mu - ln_gamma(n + 1.0)).exp()
}

/// Standard normal CDF.
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of a Gaussian with variance ½ centred on `mean`.
fn half_var_cdf(x: f64, mean: f64) -> f64 {
    0.5 * erfc(mean - x)
}

fn half_var_pdf(x: f64, mean: f64) -> f64 {
    (-(x - mean) * (x - mean)).exp() / std::f64::consts::PI.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// Probability of reading a ground-state superatom as R.
    pub eps_g: f64,
    /// Probability of reading a Rydberg preparation as G.
    pub eps_r: f64,
    pub fidelity: f64,
}

impl ErrorRates {
    pub fn new(eps_g: f64, eps_r: f64) -> Self {
        let eps_g = eps_g.clamp(0.0, 1.0);
        let eps_r = eps_r.clamp(0.0, 1.0);
        ErrorRates {
            eps_g,
            eps_r,
            fidelity: 1.0 - eps_g.max(eps_r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountModel {
    /// Integration window (µs).
    pub t_i: f64,
    /// Detected flux in G and R (photons/µs).
    pub phi_g: f64,
    pub phi_r: f64,
    pub tau_r: f64,
    pub eta_r: f64,
}

impl CountModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_i > 0.0 && self.t_i.is_finite()) {
            return Err(Error::invalid("t_i must be positive"));
        }
        if !(self.phi_r >= 0.0 && self.phi_r <= self.phi_g && self.phi_g.is_finite()) {
            return Err(Error::invalid("fluxes must satisfy 0 ≤ φ_R ≤ φ_G"));
        }
        if !(self.tau_r > 0.0) {
            return Err(Error::invalid("tau_r must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eta_r) {
            return Err(Error::invalid("eta_r must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn mean_ground(&self) -> f64 {
        self.t_i * self.phi_g
    }

    pub fn pmf_ground(&self, n: u64) -> f64 {
        poisson_pmf(n, self.mean_ground())
    }

    /// Distribution for a perfectly prepared R state, jumps included.
    pub fn pmf_rydberg_pure(&self, n: u64) -> Result<f64> {
        let (t_i, tau) = (self.t_i, self.tau_r);
        let survive = (-t_i / tau).exp() * poisson_pmf(n, t_i * self.phi_r);
        let jump = quad::integrate(
            |t| {
                let mean = t * self.phi_r + (t_i - t) * self.phi_g;
                poisson_pmf(n, mean) * (-t / tau).exp() / tau
            },
            0.0,
            t_i,
            jump_tolerance(),
        )?;
        Ok(survive + jump.value)
    }

    pub fn pmf_rydberg(&self, n: u64) -> Result<f64> {
        let ground = self.pmf_ground(n);
        if self.eta_r == 0.0 {
            return Ok(ground);
        }
        let pure = self.pmf_rydberg_pure(n)?;
        Ok(self.eta_r * pure + (1.0 - self.eta_r) * ground)
    }

    /// Error rates for every threshold in `thresholds`, sharing the
    /// cumulative sums.
    pub fn error_rates_many(&self, thresholds: &[u64]) -> Result<Vec<ErrorRates>> {
        self.validate()?;
        let top = thresholds.iter().copied().max().unwrap_or(0) as usize;
        let mut cum_g = vec![0.0; top + 1];
        let mut cum_r = vec![0.0; top + 1];
        for n in 0..top {
            cum_g[n + 1] = cum_g[n] + self.pmf_ground(n as u64);
            cum_r[n + 1] = cum_r[n] + self.pmf_rydberg(n as u64)?;
        }
        Ok(thresholds
            .iter()
            .map(|&nt| {
                let nt = nt as usize;
                ErrorRates::new(cum_g[nt], 1.0 - cum_r[nt])
            })
            .collect())
    }
}

pub fn count_pmf_ground(m: &CountModel, n: u64) -> f64 {
    m.pmf_ground(n)
}

/// Rydberg-preparation count distribution, preparation mixture included.
pub fn count_pmf_rydberg(m: &CountModel, n: u64) -> Result<f64> {
    m.pmf_rydberg(n)
}

/// Classification "G if n ≥ n_t, R otherwise".
pub fn error_rates_counting(m: &CountModel, n_t: u64) -> Result<ErrorRates> {
    Ok(m.error_rates_many(&[n_t])?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureModel {
    pub t_i: f64,
    /// Detected photon flux at the cavity input (photons/µs).
    pub phi: f64,
    pub refl_g: f64,
    pub refl_r: f64,
    pub tau_r: f64,
    pub eta_r: f64,
}

impl QuadratureModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_i > 0.0 && self.t_i.is_finite()) {
            return Err(Error::invalid("t_i must be positive"));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::invalid("flux must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.refl_g) || !(0.0..=1.0).contains(&self.refl_r) {
            return Err(Error::invalid("reflectivities must lie in [0, 1]"));
        }
        if !(self.tau_r > 0.0) {
            return Err(Error::invalid("tau_r must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eta_r) {
            return Err(Error::invalid("eta_r must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn mean_ground(&self) -> f64 {
        -(2.0 * self.t_i * self.phi * self.refl_g).sqrt()
    }

    pub fn mean_rydberg(&self) -> f64 {
        (2.0 * self.t_i * self.phi * self.refl_r).sqrt()
    }

    /// Mean quadrature for a jump at `t`.
    pub fn jump_mean(&self, t: f64) -> f64 {
        let a_g = (2.0 * self.phi * self.refl_g / self.t_i).sqrt();
        let a_r = (2.0 * self.phi * self.refl_r / self.t_i).sqrt();
        -(self.t_i - t) * a_g + t * a_r
    }

    pub fn pdf_ground(&self, x: f64) -> f64 {
        half_var_pdf(x, self.mean_ground())
    }

    pub fn cdf_ground(&self, x: f64) -> f64 {
        half_var_cdf(x, self.mean_ground())
    }

    /// Integrates `kernel(x, mean)` over the Rydberg branch (pure state).
    fn rydberg_branch(&self, x: f64, kernel: fn(f64, f64) -> f64) -> Result<f64> {
        let (t_i, tau) = (self.t_i, self.tau_r);
        let survive = (-t_i / tau).exp() * kernel(x, self.mean_rydberg());
        let jump = quad::integrate(
            |t| kernel(x, self.jump_mean(t)) * (-t / tau).exp() / tau,
            0.0,
            t_i,
            jump_tolerance(),
        )?;
        Ok(survive + jump.value)
    }

    pub fn pdf_rydberg(&self, x: f64) -> Result<f64> {
        let ground = self.pdf_ground(x);
        if self.eta_r == 0.0 {
            return Ok(ground);
        }
        let pure = self.rydberg_branch(x, half_var_pdf)?;
        Ok(self.eta_r * pure + (1.0 - self.eta_r) * ground)
    }

    pub fn cdf_rydberg(&self, x: f64) -> Result<f64> {
        let ground = self.cdf_ground(x);
        if self.eta_r == 0.0 {
            return Ok(ground);
        }
        let pure = self.rydberg_branch(x, half_var_cdf)?;
        Ok(self.eta_r * pure + (1.0 - self.eta_r) * ground)
    }
}

pub fn quad_pdf_ground(m: &QuadratureModel, x: f64) -> f64 {
    m.pdf_ground(x)
}

pub fn quad_pdf_rydberg(m: &QuadratureModel, x: f64) -> Result<f64> {
    m.pdf_rydberg(x)
}

/// Classification "R if X > x_t, G otherwise".
pub fn error_rates_homodyne(m: &QuadratureModel, x_t: f64) -> Result<ErrorRates> {
    m.validate()?;
    let eps_g = 1.0 - m.cdf_ground(x_t);
    let eps_g = if x_t < m.mean_ground() {
        eps_g
    } else {
        // tail form keeps precision far from the mean
        0.5 * erfc(x_t - m.mean_ground())
    };
    let eps_r = if x_t == f64::NEG_INFINITY {
        0.0
    } else {
        m.cdf_rydberg(x_t)?
    };
    Ok(ErrorRates::new(eps_g, eps_r))
}

/// How the detected flux depends on the integration window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FluxScaling {
    /// Flux held at the base model's value.
    #[default]
    Fixed,
    /// Flux rescaled so t_i·φ stays at the base model's value.
    ConstantMeanCounts,
}

/// How the Rydberg lifetime depends on the flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LifetimeScaling {
    #[default]
    Fixed,
    /// τ_R ∝ 1/φ, anchored at the base model's (φ, τ_R).
    InverseFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanOptions {
    pub flux: FluxScaling,
    pub lifetime: LifetimeScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DetectionFamily {
    Counting(CountModel),
    Homodyne(QuadratureModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub t_i: f64,
    pub threshold: f64,
    pub rates: ErrorRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOptimum {
    pub t_i: f64,
    pub threshold: f64,
    pub rates: ErrorRates,
    /// Every evaluated point, t_i-major in ascending order.
    pub surface: Vec<SurfacePoint>,
}

impl DetectionOptimum {
    pub fn surface_csv(&self) -> String {
        format::csv(
            "t_i_us,threshold,eps_g,eps_r,fidelity",
            self.surface.iter().map(|p| {
                [
                    format::num(p.t_i),
                    format::num(p.threshold),
                    format::num(p.rates.eps_g),
                    format::num(p.rates.eps_r),
                    format::num(p.rates.fidelity),
                ]
            }),
        )
    }
}

fn scaled_flux(base_flux: f64, base_t: f64, t_i: f64, opts: &ScanOptions) -> f64 {
    match opts.flux {
        FluxScaling::Fixed => base_flux,
        FluxScaling::ConstantMeanCounts => base_flux * base_t / t_i,
    }
}

fn scaled_lifetime(base_tau: f64, base_flux: f64, flux: f64, opts: &ScanOptions) -> f64 {
    match opts.lifetime {
        LifetimeScaling::Fixed => base_tau,
        LifetimeScaling::InverseFlux if flux > 0.0 => base_tau * base_flux / flux,
        LifetimeScaling::InverseFlux => base_tau,
    }
}

/// Exhaustive search of (t_i, threshold) maximising the fidelity. Ties go
/// to the smaller t_i, then the smaller threshold.
pub fn optimize_detection(
    family: &DetectionFamily,
    t_grid: &[f64],
    threshold_grid: &[f64],
    opts: ScanOptions,
) -> Result<DetectionOptimum> {
    if t_grid.is_empty() || threshold_grid.is_empty() {
        return Err(Error::invalid("empty optimisation grid"));
    }
    if t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("t_i grid must be positive"));
    }
    let mut ts = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut ths = threshold_grid.to_vec();
    ths.sort_by(f64::total_cmp);
    ths.dedup();

    let rows: Vec<Result<Vec<SurfacePoint>>> = ts
        .par_iter()
        .map(|&t_i| match family {
            DetectionFamily::Counting(base) => {
                let nts: Vec<u64> = ths
                    .iter()
                    .map(|&x| {
                        if x >= 0.0 && x.fract() == 0.0 {
                            Ok(x as u64)
                        } else {
                            Err(Error::invalid("count thresholds must be non-negative integers"))
                        }
                    })
                    .collect::<Result<_>>()?;
                let phi_g = scaled_flux(base.phi_g, base.t_i, t_i, &opts);
                let ratio = if base.phi_g > 0.0 { base.phi_r / base.phi_g } else { 0.0 };
                let m = CountModel {
                    t_i,
                    phi_g,
                    phi_r: ratio * phi_g,
                    tau_r: scaled_lifetime(base.tau_r, base.phi_g, phi_g, &opts),
                    eta_r: base.eta_r,
                };
                let rates = m.error_rates_many(&nts)?;
                Ok(ths
                    .iter()
                    .zip(rates)
                    .map(|(&threshold, rates)| SurfacePoint {
                        t_i,
                        threshold,
                        rates,
                    })
                    .collect())
            }
            DetectionFamily::Homodyne(base) => {
                let phi = scaled_flux(base.phi, base.t_i, t_i, &opts);
                let m = QuadratureModel {
                    t_i,
                    phi,
                    tau_r: scaled_lifetime(base.tau_r, base.phi, phi, &opts),
                    ..*base
                };
                ths.iter()
                    .map(|&threshold| {
                        Ok(SurfacePoint {
                            t_i,
                            threshold,
                            rates: error_rates_homodyne(&m, threshold)?,
                        })
                    })
                    .collect()
            }
        })
        .collect();

    let mut surface = Vec::with_capacity(ts.len() * ths.len());
    for r in rows {
        surface.extend(r?);
    }
    let best = surface
        .iter()
        .fold(None::<&SurfacePoint>, |acc, p| match acc {
            Some(b) if b.rates.fidelity >= p.rates.fidelity => Some(b),
            _ => Some(p),
        })
        .copied()
        .expect("non-empty surface");
    Ok(DetectionOptimum {
        t_i: best.t_i,
        threshold: best.threshold,
        rates: best.rates,
        surface,
    })
}

/// Model and empirical probabilities side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramComparison {
    /// (count or bin centre, model probability, empirical probability).
    pub rows: Vec<(f64, f64, f64)>,
}

impl HistogramComparison {
    pub fn total_variation(&self) -> f64 {
        0.5 * self.rows.iter().map(|r| (r.1 - r.2).abs()).sum::<f64>()
    }

    pub fn to_csv(&self) -> String {
        format::csv(
            "n_or_x,model_p,empirical_p",
            self.rows
                .iter()
                .map(|r| [format::num(r.0), format::num(r.1), format::num(r.2)]),
        )
    }
}

/// Compares integer samples with a pmf over 0..=max(samples, pmf support).
/// The last row absorbs the model's upper tail so both columns sum to 1.
pub fn compare_counts<F>(samples: &[u64], pmf: F) -> Result<HistogramComparison>
where
    F: Fn(u64) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let max_seen = *samples.iter().max().unwrap();
    let mut counts = vec![0u64; max_seen as usize + 1];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let total = samples.len() as f64;
    let mut rows = Vec::with_capacity(counts.len());
    let mut cum = 0.0;
    for (n, &c) in counts.iter().enumerate() {
        let p = pmf(n as u64)?;
        cum += p;
        rows.push((n as f64, p, c as f64 / total));
    }
    if let Some(last) = rows.last_mut() {
        last.1 += (1.0 - cum).max(0.0);
    }
    Ok(HistogramComparison { rows })
}

/// Compares real samples with a CDF on the bin edges `edges`; the outer bins
/// extend to ±∞.
pub fn compare_binned<F>(samples: &[f64], edges: &[f64], cdf: F) -> Result<HistogramComparison>
where
    F: Fn(f64) -> Result<f64>,
{
    if samples.is_empty() || edges.len() < 2 {
        return Err(Error::invalid("need samples and at least two bin edges"));
    }
    let counts = bin_counts(samples, edges);
    let total = samples.len() as f64;
    let cdfs: Vec<f64> = edges.iter().map(|&e| cdf(e)).collect::<Result<_>>()?;
    let nb = edges.len() - 1;
    let rows = (0..nb)
        .map(|k| {
            let lo = if k == 0 { 0.0 } else { cdfs[k] };
            let hi = if k + 1 == nb { 1.0 } else { cdfs[k + 1] };
            let centre = 0.5 * (edges[k] + edges[k + 1]);
            (centre, (hi - lo).max(0.0), counts[k] as f64 / total)
        })
        .collect();
    Ok(HistogramComparison { rows })
}

/// Occupancy of the bins defined by `edges`; values outside fall in the end bins.
pub fn bin_counts(samples: &[f64], edges: &[f64]) -> Vec<u64> {
    let nb = edges.len().saturating_sub(1);
    let mut counts = vec![0u64; nb];
    if nb == 0 {
        return counts;
    }
    for &x in samples {
        let k = edges.partition_point(|&e| e <= x);
        counts[k.saturating_sub(1).min(nb - 1)] += 1;
    }
    counts
}

/// Freedman–Diaconis bin edges spanning the samples.
pub fn freedman_diaconis_edges(samples: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if s.len() < 2 {
        return Vec::new();
    }
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < s.len() {
            s[i] * (1.0 - f) + s[i + 1] * f
        } else {
            s[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let mut width = 2.0 * iqr / (s.len() as f64).cbrt();
    if !(width > 0.0) {
        width = ((hi - lo) / 10.0).max(1e-3);
    }
    let nb = (((hi - lo) / width).ceil() as usize).clamp(1, 1000);
    (0..=nb)
        .map(|k| lo + (hi - lo) * k as f64 / nb as f64)
        .collect()
}

/// Two-sided Kolmogorov–Smirnov p-value for statistic `d` with `n` samples.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Standard normal CDF, exposed for threshold diagnostics.
pub fn normal_cdf(z: f64) -> f64 {
    std_normal_cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_counting() -> CountModel {
        let phi_g = 8.7 / 12.0;
        CountModel {
            t_i: 12.0,
            phi_g,
            phi_r: 0.045 * phi_g,
            tau_r: 42.0,
            eta_r: 1.0,
        }
    }

    fn reference_homodyne() -> QuadratureModel {
        QuadratureModel {
            t_i: 10.0,
            phi: 0.58,
            refl_g: 0.07,
            refl_r: 0.51,
            tau_r: 38.0,
            eta_r: 0.99,
        }
    }

    /// Independent oracle: trapezoid rule on a fine grid for the jump integral.
    fn trapezoid_pmf_r(m: &CountModel, n: u64) -> f64 {
        let k = 20_000;
        let h = m.t_i / k as f64;
        let f = |t: f64| {
            poisson_pmf(n, t * m.phi_r + (m.t_i - t) * m.phi_g) * (-t / m.tau_r).exp() / m.tau_r
        };
        let mut s = 0.5 * (f(0.0) + f(m.t_i));
        for i in 1..k {
            s += f(i as f64 * h);
        }
        (-m.t_i / m.tau_r).exp() * poisson_pmf(n, m.t_i * m.phi_r) + s * h
    }

    #[test]
    fn ground_pmf_values() {
        let m = reference_counting();
        assert!((m.pmf_ground(0) - (-8.7f64).exp()).abs() < 1e-18);
        assert!((m.pmf_ground(0) - 1.665_858_1e-4).abs() < 1e-10);
        let z = CountModel { phi_g: 0.0, phi_r: 0.0, ..m };
        assert_eq!(z.pmf_ground(0), 1.0);
        let top = (8.7 + 20.0 * 8.7f64.sqrt()).ceil() as u64;
        let s: f64 = (0..=top).map(|n| m.pmf_ground(n)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rydberg_pmf_limits() {
        let dark = CountModel {
            phi_r: 0.0,
            tau_r: 1e9,
            ..reference_counting()
        };
        assert!((dark.pmf_rydberg(0).unwrap() - 1.0).abs() < 1e-7);
        let long = CountModel {
            tau_r: 1e9,
            ..reference_counting()
        };
        let mu = long.t_i * long.phi_r;
        for n in 0..20 {
            let d = (long.pmf_rydberg(n).unwrap() - poisson_pmf(n, mu)).abs();
            assert!(d < 1e-7, "n={n} d={d}");
        }
    }

    #[test]
    fn rydberg_pmf_matches_trapezoid_oracle() {
        let m = reference_counting();
        for n in [0, 1, 3, 5, 8, 12] {
            let a = m.pmf_rydberg(n).unwrap();
            let b = trapezoid_pmf_r(&m, n);
            assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn rydberg_tail_reference() {
        // scipy quad + Poisson tail: P_R(n ≥ 5) = 0.120536
        let m = reference_counting();
        let head: f64 = (0..5).map(|n| m.pmf_rydberg(n).unwrap()).sum();
        assert!((1.0 - head - 0.120_536_48).abs() < 1e-6);
    }

    #[test]
    fn pmfs_normalised() {
        let m = CountModel {
            eta_r: 0.8,
            ..reference_counting()
        };
        let s: f64 = (0..80).map(|n| m.pmf_rydberg(n).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn counting_error_rates() {
        let m = reference_counting();
        let r = error_rates_counting(&m, 5).unwrap();
        assert!((r.eps_g - 0.065_968_453_8).abs() < 1e-9);
        assert!((r.eps_r - 0.120_536_48).abs() < 1e-6);
        assert!((r.fidelity - (1.0 - r.eps_r)).abs() < 1e-15);

        let z = error_rates_counting(&m, 0).unwrap();
        assert_eq!((z.eps_g, z.eps_r), (0.0, 1.0));

        let same = CountModel {
            phi_r: m.phi_g,
            tau_r: 1e12,
            ..m
        };
        for nt in 0..15 {
            let r = error_rates_counting(&same, nt).unwrap();
            assert!((r.eps_g + r.eps_r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn counting_monotone_in_threshold() {
        let m = reference_counting();
        let nts: Vec<u64> = (0..20).collect();
        let rates = m.error_rates_many(&nts).unwrap();
        for w in rates.windows(2) {
            assert!(w[1].eps_g >= w[0].eps_g);
            assert!(w[1].eps_r <= w[0].eps_r);
        }
    }

    #[test]
    fn mixture_limits() {
        let m = reference_counting();
        let zero = CountModel { eta_r: 0.0, ..m };
        for n in 0..15 {
            assert_eq!(zero.pmf_rydberg(n).unwrap(), m.pmf_ground(n));
            assert_eq!(m.pmf_rydberg(n).unwrap(), m.pmf_rydberg_pure(n).unwrap());
        }
        let q = reference_homodyne();
        let qz = QuadratureModel { eta_r: 0.0, ..q };
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            assert_eq!(qz.pdf_rydberg(x).unwrap(), q.pdf_ground(x));
        }
    }

    #[test]
    fn quadrature_means() {
        let q = reference_homodyne();
        assert!((q.mean_ground() + 0.901_110_426).abs() < 1e-8);
        assert!((q.mean_rydberg() - 2.432_282_878).abs() < 1e-8);
        assert!((q.jump_mean(0.0) - q.mean_ground()).abs() < 1e-12);
        assert!((q.jump_mean(q.t_i) - q.mean_rydberg()).abs() < 1e-12);
        let vac = QuadratureModel { phi: 0.0, ..q };
        let peak = vac.pdf_ground(0.0);
        assert!((peak - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quadrature_densities_integrate_to_one() {
        let q = reference_homodyne();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = quad::integrate(
            |x| q.pdf_ground(x),
            q.mean_ground() - 10.0 * s,
            q.mean_ground() + 10.0 * s,
            Tolerance {
                abs: 1e-13,
                rel: 1e-12,
                max_intervals: 200,
            },
        )
        .unwrap();
        assert!((g.value - 1.0).abs() < 1e-10);
        let r = quad::integrate(
            |x| q.pdf_rydberg(x).unwrap(),
            -12.0,
            12.0,
            Tolerance::default(),
        )
        .unwrap();
        assert!((r.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn long_lived_rydberg_is_a_single_gaussian() {
        let q = QuadratureModel {
            tau_r: 1e9,
            eta_r: 1.0,
            ..reference_homodyne()
        };
        for x in [0.0, 1.0, 2.43, 3.5] {
            let a = q.pdf_rydberg(x).unwrap();
            let b = half_var_pdf(x, q.mean_rydberg());
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn homodyne_error_rates() {
        // scipy: eps_g = 0.0488406, eps_r = 0.0975128, F = 0.902487
        let r = error_rates_homodyne(&reference_homodyne(), 0.27).unwrap();
        assert!((r.eps_g - 0.048_840_636_6).abs() < 1e-8);
        assert!((r.eps_r - 0.097_512_773).abs() < 1e-7);
        assert!((r.fidelity - 0.902_487_227).abs() < 1e-7);
        let lo = error_rates_homodyne(&reference_homodyne(), f64::NEG_INFINITY).unwrap();
        assert_eq!((lo.eps_g, lo.eps_r), (1.0, 0.0));
    }

    #[test]
    fn long_lifetime_prefers_longest_window() {
        let m = CountModel {
            tau_r: 1e9,
            ..reference_counting()
        };
        let ts: Vec<f64> = (4..=24).map(f64::from).collect();
        let ns: Vec<f64> = (1..=12).map(f64::from).collect();
        let o = optimize_detection(&DetectionFamily::Counting(m), &ts, &ns, ScanOptions::default())
            .unwrap();
        assert_eq!(o.t_i, 24.0);
        assert_eq!(o.surface.len(), ts.len() * ns.len());
    }

    #[test]
    fn finite_lifetime_gives_interior_window() {
        let ts: Vec<f64> = (4..=24).map(f64::from).collect();
        let ns: Vec<f64> = (1..=12).map(f64::from).collect();
        let o = optimize_detection(
            &DetectionFamily::Counting(reference_counting()),
            &ts,
            &ns,
            ScanOptions::default(),
        )
        .unwrap();
        assert!(o.t_i > 4.0 && o.t_i < 24.0, "t_i* = {}", o.t_i);
        // full-grid brute force
        let mut best = (0.0, 0.0, -1.0);
        for &t in &ts {
            for &n in &ns {
                let m = CountModel { t_i: t, ..reference_counting() };
                let f = error_rates_counting(&m, n as u64).unwrap().fidelity;
                if f > best.2 {
                    best = (t, n, f);
                }
            }
        }
        assert_eq!((o.t_i, o.threshold), (best.0, best.1));
        assert_eq!(o.rates.fidelity, best.2);
    }

    #[test]
    fn single_point_grid() {
        let m = reference_counting();
        let o = optimize_detection(&DetectionFamily::Counting(m), &[12.0], &[5.0], ScanOptions::default())
            .unwrap();
        assert_eq!(o.rates, error_rates_counting(&m, 5).unwrap());
        assert!(optimize_detection(&DetectionFamily::Counting(m), &[], &[5.0], ScanOptions::default()).is_err());
        assert!(optimize_detection(&DetectionFamily::Counting(m), &[12.0], &[2.5], ScanOptions::default()).is_err());
    }

    #[test]
    fn homodyne_scan_and_flux_scaling() {
        let q = reference_homodyne();
        let o = optimize_detection(
            &DetectionFamily::Homodyne(q),
            &[5.0, 10.0, 15.0],
            &[0.0, 0.27, 0.5],
            ScanOptions {
                flux: FluxScaling::ConstantMeanCounts,
                lifetime: LifetimeScaling::InverseFlux,
            },
        )
        .unwrap();
        assert_eq!(o.surface.len(), 9);
        // constant t_i·φ keeps the means fixed, and shorter windows at higher
        // flux keep t_i/τ_R fixed as well: every row is identical
        let row = |t: f64| -> Vec<f64> {
            o.surface.iter().filter(|p| p.t_i == t).map(|p| p.rates.fidelity).collect()
        };
        for (a, b) in row(5.0).iter().zip(row(15.0)) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn symmetric_instance_threshold_symmetry() {
        // φ_G ↔ φ_R exchange with τ_R → ∞: the optimal threshold splits the
        // two Poisson laws; swapping the fluxes mirrors the error pair.
        let a = CountModel {
            t_i: 10.0,
            phi_g: 1.0,
            phi_r: 0.1,
            tau_r: 1e12,
            eta_r: 1.0,
        };
        let nts: Vec<u64> = (0..30).collect();
        let ra = a.error_rates_many(&nts).unwrap();
        let best = ra
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.fidelity.total_cmp(&y.1.fidelity))
            .unwrap();
        // mirror: classify swapped states with reversed inequality
        let nt = best.0 as u64;
        let eps_g_mirror: f64 = (nt..200).map(|n| poisson_pmf(n, 1.0)).sum();
        let eps_r_mirror: f64 = (0..nt).map(|n| poisson_pmf(n, 10.0)).sum();
        assert!((eps_g_mirror - best.1.eps_r).abs() < 1e-7);
        assert!((eps_r_mirror - best.1.eps_g).abs() < 1e-7);
    }

    #[test]
    fn histogram_helpers() {
        let m = reference_counting();
        let c = compare_counts(&[0, 0, 1, 9], |n| Ok(m.pmf_ground(n))).unwrap();
        assert_eq!(c.rows.len(), 10);
        let s: f64 = c.rows.iter().map(|r| r.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(c.to_csv().starts_with("n_or_x,model_p,empirical_p\n"));
        let e = freedman_diaconis_edges(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(e.len() >= 2);
        let counts = bin_counts(&[-1.0, 0.5, 7.5, 100.0], &e);
        assert_eq!(counts.iter().sum::<u64>(), 4);
        assert!(ks_p_value(0.001, 10_000) > 0.99);
        assert!(ks_p_value(0.1, 10_000) < 1e-10);
    }
}
