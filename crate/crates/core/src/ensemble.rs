//! Geometry and collective scaling of the blockaded cloud.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::params::{BOLTZMANN, SystemParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSample {
    /// Atom positions (µm).
    pub positions: Vec<[f64; 3]>,
    pub seed: u64,
}

impl CloudSample {
    pub fn to_csv(&self) -> String {
        format::csv(
            "x_um,y_um,z_um",
            self.positions
                .iter()
                .map(|r| [format::num(r[0]), format::num(r[1]), format::num(r[2])]),
        )
    }
}

/// Isotropic Gaussian cloud, per-axis standard deviation `sigma_a`.
pub fn sample_cloud(p: &SystemParams, seed: u64) -> CloudSample {
    let mut rng = rng::stream(seed, 0);
    let normal = Normal::new(0.0, p.sigma_a).expect("sigma_a validated positive");
    let positions = (0..p.n_atoms)
        .map(|_| {
            [
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ]
        })
        .collect();
    CloudSample { positions, seed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockadeStats {
    /// Fraction of pairs whose shift exceeds the threshold; `None` when the
    /// cloud has fewer than two atoms.
    pub fraction_blockaded: Option<f64>,
    /// Pair shift C₆/r⁶ at the reference distance (MHz).
    pub shift_at_ref_mhz: f64,
    /// Mean number of other atoms within the reference distance.
    pub mean_neighbors_within: f64,
    pub n_pairs: u64,
}

fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Number of unordered pairs closer than `sqrt(r2_max)`.
fn pairs_within(positions: &[[f64; 3]], r2_max: f64) -> u64 {
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let a = &positions[i];
            positions[i + 1..]
                .iter()
                .filter(|b| squared_distance(a, b) < r2_max)
                .count() as u64
        })
        .sum()
}

/// Pair-shift statistics of a sampled cloud for a van der Waals coefficient
/// `c6` (MHz·µm⁶).
pub fn blockade_stats(
    cloud: &CloudSample,
    c6: f64,
    r_ref: f64,
    shift_threshold: f64,
) -> Result<BlockadeStats> {
    if !(r_ref > 0.0) {
        return Err(Error::invalid("reference distance must be positive"));
    }
    if !(c6 > 0.0) {
        return Err(Error::invalid("C6 must be positive"));
    }
    if !(shift_threshold > 0.0) {
        return Err(Error::invalid("shift threshold must be positive"));
    }
    let n = cloud.positions.len() as u64;
    let n_pairs = n * n.saturating_sub(1) / 2;
    // c6/r⁶ > threshold  ⇔  r² < (c6/threshold)^(1/3)
    let r2_blockade = (c6 / shift_threshold).cbrt();
    let fraction_blockaded = if n_pairs == 0 {
        None
    } else {
        Some(pairs_within(&cloud.positions, r2_blockade) as f64 / n_pairs as f64)
    };
    let mean_neighbors_within = if n == 0 {
        0.0
    } else {
        2.0 * pairs_within(&cloud.positions, r_ref * r_ref) as f64 / n as f64
    };
    Ok(BlockadeStats {
        fraction_blockaded,
        shift_at_ref_mhz: pair_shift(c6, r_ref),
        mean_neighbors_within,
        n_pairs,
    })
}

/// Asymptotic van der Waals pair shift C₆/r⁶.
pub fn pair_shift(c6: f64, r: f64) -> f64 {
    c6 / r.powi(6)
}

/// Two-photon Rabi frequency of the superatom, √N·Ω_D2·Ω_109S/(2|Δ|).
pub fn collective_rabi(p: &SystemParams) -> Result<f64> {
    if p.delta_int == 0.0 {
        return Err(Error::invalid("intermediate-state detuning is zero"));
    }
    Ok((p.n_atoms as f64).sqrt() * p.omega_d2 * p.omega_109s / (2.0 * p.delta_int.abs()))
}

/// Root-sum-square of the single-atom couplings.
pub fn collective_coupling(g_n: &[f64]) -> Result<f64> {
    if g_n.is_empty() {
        return Err(Error::invalid("no single-atom couplings"));
    }
    if g_n.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::invalid("single-atom couplings must be non-negative"));
    }
    Ok(g_n.iter().map(|g| g * g).sum::<f64>().sqrt())
}

/// Magnitude of the summed drive wavevector (rad/µm).
pub fn drive_wavevector(p: &SystemParams) -> f64 {
    let (a, b) = (p.k_d2, p.k_109s);
    (a * a + b * b + 2.0 * a * b * p.drive_angle.cos()).max(0.0).sqrt()
}

/// Gaussian e⁻¹ time of the excitation coherence under thermal motion,
/// √(m/k_B T)/‖k‖, in µs.
pub fn motional_dephasing_time(p: &SystemParams) -> Result<f64> {
    if !(p.temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    // m/s is µm/µs
    let v_rms = (BOLTZMANN * p.temperature * 1e-6 / p.atom_mass).sqrt();
    let k = drive_wavevector(p);
    if k == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (v_rms * k))
}

/// Combines independent Gaussian decay times: (Σ τᵢ⁻²)^(−1/2).
pub fn combined_dephasing(times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::invalid("no dephasing times"));
    }
    if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("dephasing times must be positive and finite"));
    }
    Ok(times.iter().map(|t| t.powi(-2)).sum::<f64>().powf(-0.5))
}

/// Gaussian e⁻¹ time of the ensemble-averaged oscillation when Ω has a
/// Gaussian relative spread: √2/(rel_rms·Ω).
pub fn rabi_spread_dephasing(omega: f64, rel_rms: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid("Rabi frequency must be positive"));
    }
    if !(rel_rms >= 1e-6) {
        return Err(Error::invalid(
            "relative Rabi spread below 1e-6: decay time diverges",
        ));
    }
    Ok(std::f64::consts::SQRT_2 / (rel_rms * omega))
}

/// Expected decay time of Rabi oscillations: motional dephasing combined
/// with the Ω spread.
pub fn rabi_decay_time(p: &SystemParams) -> Result<f64> {
    let mut times = vec![motional_dephasing_time(p)?];
    if p.omega_rel_rms >= 1e-6 {
        times.push(rabi_spread_dephasing(collective_rabi(p)?, p.omega_rel_rms)?);
    }
    times.retain(|t| t.is_finite());
    if times.is_empty() {
        return Ok(f64::INFINITY);
    }
    combined_dephasing(&times)
}
