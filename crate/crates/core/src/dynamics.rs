//! Single-shot records: Rabi preparation, one possible quantum jump R → G
//! during probing, and time-binned photon counts or homodyne samples.
//!
//! Ground is absorbing. Counts are Poisson with rate φ_R before the jump and
//! φ_G after it. Homodyne bins are Gaussian with variance ½ and mean
//! `−√(2φℛ_G/Δt)·t_G + √(2φℛ_R/Δt)·t_R`, where `t_G`, `t_R` are the times
//! spent in each state within the bin, so the window-integrated quadrature
//! `X = Σ x_k √(Δt/t_i)` has variance ½ and mean ±√(2 t_i φ ℛ).

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::format;
use crate::params::SystemParams;
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuperatomState {
    G,
    R,
}

impl SuperatomState {
    pub fn label(self) -> &'static str {
        match self {
            SuperatomState::G => "G",
            SuperatomState::R => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Readout {
    /// Detected transmitted fluxes (photons/µs) with the superatom in G and R.
    Counting { phi_g: f64, phi_r: f64 },
    /// Detected input flux (photons/µs) and reflectivities in G and R.
    Homodyne { phi: f64, refl_g: f64, refl_r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Effective two-photon drive duration (µs).
    pub drive_duration: f64,
    /// Probe integration window t_i (µs).
    pub probe_duration: f64,
    pub bin_width: f64,
    pub readout: Readout,
    /// Rydberg lifetime under the probe (µs).
    pub tau_r: f64,
    /// Preparation efficiency; derived from the Rabi model when `None`.
    pub eta_r: Option<f64>,
}

impl Protocol {
    /// Protocol with a π pulse of the collective Rabi frequency of `params`.
    pub fn with_pi_pulse(
        params: &SystemParams,
        probe_duration: f64,
        bin_width: f64,
        readout: Readout,
        tau_r: f64,
    ) -> Result<Self> {
        let omega = ensemble::collective_rabi(params)?;
        Ok(Protocol {
            drive_duration: std::f64::consts::PI / omega,
            probe_duration,
            bin_width,
            readout,
            tau_r,
            eta_r: None,
        })
    }

    pub fn n_bins(&self) -> usize {
        (self.probe_duration / self.bin_width).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.drive_duration >= 0.0 && self.drive_duration.is_finite()) {
            return Err(Error::invalid("drive duration must be ≥ 0"));
        }
        if !positive(self.probe_duration) || !positive(self.bin_width) {
            return Err(Error::invalid("probe duration and bin width must be positive"));
        }
        let n = self.n_bins();
        if n == 0 || (n as f64 * self.bin_width - self.probe_duration).abs() > 1e-9 * self.probe_duration
        {
            return Err(Error::invalid(format!(
                "bin width {} does not divide probe duration {}",
                self.bin_width, self.probe_duration
            )));
        }
        if !positive(self.tau_r) {
            return Err(Error::invalid("Rydberg lifetime must be positive"));
        }
        if let Some(eta) = self.eta_r {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::invalid("eta_r must lie in [0, 1]"));
            }
        }
        match self.readout {
            Readout::Counting { phi_g, phi_r } => {
                if !(phi_g >= 0.0 && phi_r >= 0.0 && phi_g.is_finite() && phi_r.is_finite()) {
                    return Err(Error::invalid("fluxes must be non-negative"));
                }
            }
            Readout::Homodyne { phi, refl_g, refl_r } => {
                if !(phi >= 0.0 && phi.is_finite()) {
                    return Err(Error::invalid("flux must be non-negative"));
                }
                if !(0.0..=1.0).contains(&refl_g) || !(0.0..=1.0).contains(&refl_r) {
                    return Err(Error::invalid("reflectivities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Probability that a π-pulsed shot starts in R.
    pub fn preparation_efficiency(&self, params: &SystemParams) -> Result<f64> {
        if let Some(eta) = self.eta_r {
            return Ok(eta);
        }
        let omega = ensemble::collective_rabi(params)?;
        let tau_d = ensemble::rabi_decay_time(params)?;
        Ok(rabi_population(self.drive_duration, omega, tau_d))
    }
}

/// Rydberg population after a drive of duration `t_d`:
/// ½[1 − cos(Ω t_d)·exp(−t_d²/τ_d²)].
pub fn rabi_population(t_d: f64, omega: f64, tau_d: f64) -> f64 {
    0.5 * (1.0 - (omega * t_d).cos() * (-(t_d / tau_d).powi(2)).exp())
}

/// Residual coherence of the oscillation at time `t`, exp(−t²/τ_d²).
pub fn pi_pulse_coherence(t: f64, tau_d: f64) -> f64 {
    (-(t / tau_d).powi(2)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinValues {
    Counts(Vec<u64>),
    Quadrature(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub prepared: SuperatomState,
    /// Time of the R → G jump, when it happens inside the window (µs).
    pub jump_time: Option<f64>,
    pub bin_width: f64,
    pub values: BinValues,
}

impl ShotRecord {
    pub fn n_bins(&self) -> usize {
        match &self.values {
            BinValues::Counts(c) => c.len(),
            BinValues::Quadrature(x) => x.len(),
        }
    }

    pub fn window(&self) -> f64 {
        self.n_bins() as f64 * self.bin_width
    }

    /// (bin start, value) pairs.
    pub fn bins(&self) -> Vec<(f64, f64)> {
        let w = self.bin_width;
        match &self.values {
            BinValues::Counts(c) => c
                .iter()
                .enumerate()
                .map(|(k, &n)| (k as f64 * w, n as f64))
                .collect(),
            BinValues::Quadrature(x) => x
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as f64 * w, v))
                .collect(),
        }
    }

    pub fn total_counts(&self) -> Option<u64> {
        match &self.values {
            BinValues::Counts(c) => Some(c.iter().sum()),
            BinValues::Quadrature(_) => None,
        }
    }

    /// Counts in the first `n` bins.
    pub fn counts_in_first(&self, n: usize) -> Option<u64> {
        match &self.values {
            BinValues::Counts(c) => Some(c.iter().take(n).sum()),
            BinValues::Quadrature(_) => None,
        }
    }

    /// Window-integrated quadrature X = Σ x_k √(Δt/t_i).
    pub fn integrated_quadrature(&self) -> Option<f64> {
        match &self.values {
            BinValues::Quadrature(x) => {
                let w = (self.bin_width / self.window()).sqrt();
                Some(x.iter().sum::<f64>() * w)
            }
            BinValues::Counts(_) => None,
        }
    }
}

fn poisson_sample(rng: &mut SimRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

fn run_shot(
    proto: &Protocol,
    prepare_pi: bool,
    eta_r: f64,
    rng: &mut SimRng,
) -> ShotRecord {
    // fixed draw order: preparation, jump time, then bins
    let u: f64 = rng.random();
    let jump_draw = Exp::new(1.0 / proto.tau_r)
        .expect("tau_r validated positive")
        .sample(rng);
    let prepared = if prepare_pi && u < eta_r {
        SuperatomState::R
    } else {
        SuperatomState::G
    };
    let t_i = proto.probe_duration;
    // time at which the state becomes G
    let (jump_time, g_from) = match prepared {
        SuperatomState::G => (None, 0.0),
        SuperatomState::R if jump_draw < t_i => (Some(jump_draw), jump_draw),
        SuperatomState::R => (None, f64::INFINITY),
    };

    let n = proto.n_bins();
    let w = proto.bin_width;
    let split = |k: usize| {
        let start = k as f64 * w;
        let end = if k + 1 == n { t_i } else { start + w };
        let t_r = (g_from.min(end) - start).max(0.0);
        (t_r, (end - start) - t_r)
    };

    let values = match proto.readout {
        Readout::Counting { phi_g, phi_r } => BinValues::Counts(
            (0..n)
                .map(|k| {
                    let (t_r, t_g) = split(k);
                    poisson_sample(rng, phi_r * t_r + phi_g * t_g)
                })
                .collect(),
        ),
        Readout::Homodyne { phi, refl_g, refl_r } => {
            let noise = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
            let amp_g = (2.0 * phi * refl_g / w).sqrt();
            let amp_r = (2.0 * phi * refl_r / w).sqrt();
            BinValues::Quadrature(
                (0..n)
                    .map(|k| {
                        let (t_r, t_g) = split(k);
                        -amp_g * t_g + amp_r * t_r + noise.sample(rng)
                    })
                    .collect(),
            )
        }
    };
    ShotRecord {
        prepared,
        jump_time,
        bin_width: w,
        values,
    }
}

/// One shot. `prepare_pi` applies the drive pulse before probing.
pub fn simulate_shot(
    proto: &Protocol,
    prepare_pi: bool,
    params: &SystemParams,
    seed: u64,
) -> Result<ShotRecord> {
    proto.validate()?;
    let eta = proto.preparation_efficiency(params)?;
    Ok(run_shot(proto, prepare_pi, eta, &mut rng::stream(seed, 0)))
}

/// `n_shots` independent shots; shot `i` draws from stream `i` of `seed`,
/// so shot 0 equals `simulate_shot(.., seed)` and the output does not depend
/// on scheduling.
pub fn batch(
    proto: &Protocol,
    prepare_pi: bool,
    n_shots: usize,
    params: &SystemParams,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    if n_shots == 0 {
        return Err(Error::invalid("n_shots must be at least 1"));
    }
    proto.validate()?;
    let eta = proto.preparation_efficiency(params)?;
    Ok((0..n_shots as u64)
        .into_par_iter()
        .map(|i| run_shot(proto, prepare_pi, eta, &mut rng::stream(seed, i)))
        .collect())
}

/// One CSV row per bin: `shot,prepared,jump_time_us,bin_start_us,value`.
pub fn batch_to_csv(shots: &[ShotRecord]) -> String {
    let rows = shots.iter().enumerate().flat_map(|(i, s)| {
        let jump = s.jump_time.map(format::num).unwrap_or_default();
        let label = s.prepared.label();
        s.bins().into_iter().map(move |(start, v)| {
            [
                i.to_string(),
                label.to_string(),
                jump.clone(),
                format::num(start),
                format::num(v),
            ]
        })
    });
    format::csv("shot,prepared,jump_time_us,bin_start_us,value", rows)
}

/// Excitation probability versus drive duration estimated from `shots`
/// projective readouts per point. Returns `(t_d, fraction, std_error)`; the
/// error uses the add-two estimate so that fractions of 0 or 1 keep a
/// non-zero weight. Point `i` draws from stream `i` of `seed`.
pub fn simulate_rabi_trace(
    params: &SystemParams,
    drive_times: &[f64],
    shots: u64,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    if drive_times.is_empty() || shots == 0 {
        return Err(Error::invalid("need at least one drive time and one shot"));
    }
    if drive_times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::invalid("drive times must be finite and ≥ 0"));
    }
    let omega = ensemble::collective_rabi(params)?;
    let tau_d = ensemble::rabi_decay_time(params)?;
    Ok(drive_times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = rabi_population(t, omega, tau_d).clamp(0.0, 1.0);
            let k = Binomial::new(shots, p)
                .expect("probability in [0, 1]")
                .sample(&mut rng::stream(seed, i as u64));
            let n = shots as f64;
            let frac = k as f64 / n;
            let pt = (k as f64 + 1.0) / (n + 2.0);
            (t, frac, (pt * (1.0 - pt) / n).sqrt())
        })
        .collect())
}

/// Mean value per bin across shots, with its standard error.
pub fn mean_trace(shots: &[ShotRecord]) -> Vec<(f64, f64, f64)> {
    let Some(first) = shots.first() else {
        return Vec::new();
    };
    let n = first.n_bins();
    let m = shots.len() as f64;
    let per_shot: Vec<Vec<(f64, f64)>> = shots.iter().map(|s| s.bins()).collect();
    (0..n)
        .map(|k| {
            let start = per_shot[0][k].0;
            let mean = per_shot.iter().map(|b| b[k].1).sum::<f64>() / m;
            let var = if m > 1.0 {
                per_shot.iter().map(|b| (b[k].1 - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            (start, mean, (var / m).sqrt())
        })
        .collect()
}
