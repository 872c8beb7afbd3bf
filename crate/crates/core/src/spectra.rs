//! Weak-probe steady state of the cavity–ensemble–EIT system.
//!
//! All quantities follow from the complex denominator
//!
//! ```text
//! D = Δa − g² / (Δe − Ωc² / (4 Δr)),   Δa = δa + iκ, Δe = δe + iγ, Δr = δr + iγr
//! ```
//!
//! with transmission `|κ/D|²` (normalised to the bare cavity maximum) and
//! reflection amplitude `1 − 2iκ₀/D`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::params::{SystemParams, angular_to_mhz};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeCondition {
    /// Probe–cavity detuning (rad/µs).
    pub delta_a: f64,
    /// Probe–atom detuning (rad/µs).
    pub delta_e: f64,
    /// Two-photon detuning (rad/µs).
    pub delta_r: f64,
    /// Replaces `SystemParams::omega_c`; zero models full blockade.
    pub omega_c_override: Option<f64>,
    /// Extra two-photon detuning from a finite R–R′ interaction shift (rad/µs).
    pub interaction_shift: f64,
}

impl ProbeCondition {
    /// All three detunings equal to `delta`: probe swept, control held on
    /// two-photon resonance.
    pub fn co_swept(delta: f64) -> Self {
        ProbeCondition {
            delta_a: delta,
            delta_e: delta,
            delta_r: delta,
            ..Default::default()
        }
    }

    pub fn blocked(mut self) -> Self {
        self.omega_c_override = Some(0.0);
        self
    }

    pub fn with_control(mut self, omega_c: f64) -> Self {
        self.omega_c_override = Some(omega_c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.delta_a,
            self.delta_e,
            self.delta_r,
            self.interaction_shift,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("probe detunings must be finite"));
        }
        if let Some(w) = self.omega_c_override {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("control Rabi frequency override must be ≥ 0"));
            }
        }
        Ok(())
    }
}

/// Complex denominator of the linear response.
fn response_denominator(p: &SystemParams, c: &ProbeCondition) -> Complex64 {
    let omega_c = c.omega_c_override.unwrap_or(p.omega_c);
    let da = Complex64::new(c.delta_a, p.kappa);
    let de = Complex64::new(c.delta_e, p.gamma);
    let dr = Complex64::new(c.delta_r + c.interaction_shift, p.gamma_r);

    let inner = if omega_c == 0.0 {
        de
    } else if dr == Complex64::new(0.0, 0.0) {
        // lossless two-photon resonance: the atomic term is fully suppressed
        return da;
    } else {
        de - omega_c * omega_c / (4.0 * dr)
    };
    if inner == Complex64::new(0.0, 0.0) {
        // lossless single-photon resonance without control: divergent
        // atomic susceptibility, no field builds up
        return Complex64::new(f64::INFINITY, 0.0);
    }
    da - p.g * p.g / inner
}

/// Cavity transmission normalised to the bare-cavity maximum.
pub fn transmission(p: &SystemParams, c: &ProbeCondition) -> f64 {
    let d = response_denominator(p, c);
    if d.re.is_infinite() {
        return 0.0;
    }
    (Complex64::new(p.kappa, 0.0) / d).norm_sqr()
}

/// Complex reflection amplitude off the input/output coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection(pub Complex64);

impl Reflection {
    pub fn reflectivity(&self) -> f64 {
        self.0.norm_sqr()
    }

    /// Phase in (−π, π].
    pub fn phase(&self) -> f64 {
        let a = self.0.arg();
        if a <= -PI { a + 2.0 * PI } else { a }
    }
}

pub fn reflection_amplitude(p: &SystemParams, c: &ProbeCondition) -> Reflection {
    let d = response_denominator(p, c);
    if d.re.is_infinite() {
        return Reflection(Complex64::new(1.0, 0.0));
    }
    Reflection(Complex64::new(1.0, 0.0) - Complex64::new(0.0, 2.0 * p.kappa0) / d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    /// Probe detuning (rad/µs).
    pub delta: f64,
    pub transmission: f64,
    pub reflectivity: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
}

impl SpectrumTable {
    pub fn to_csv(&self) -> String {
        format::csv(
            "delta_MHz,transmission,reflectivity,phase_rad",
            self.rows.iter().map(|r| {
                [
                    format::num(angular_to_mhz(r.delta)),
                    format::num(r.transmission),
                    format::num(r.reflectivity),
                    format::num(r.phase),
                ]
            }),
        )
    }

    /// Detunings of strict local transmission maxima, interior points only.
    pub fn transmission_peaks(&self) -> Vec<f64> {
        self.rows
            .windows(3)
            .filter(|w| {
                w[1].transmission > w[0].transmission && w[1].transmission >= w[2].transmission
            })
            .map(|w| w[1].delta)
            .collect()
    }

    /// Detuning of the largest transmission value on each side of zero.
    pub fn transmission_argmax_pair(&self) -> Option<(f64, f64)> {
        let best = |it: &mut dyn Iterator<Item = &SpectrumRow>| {
            it.max_by(|a, b| a.transmission.total_cmp(&b.transmission))
                .map(|r| r.delta)
        };
        let neg = best(&mut self.rows.iter().filter(|r| r.delta < 0.0))?;
        let pos = best(&mut self.rows.iter().filter(|r| r.delta > 0.0))?;
        Some((neg, pos))
    }
}

/// Evaluates the co-swept spectrum on `deltas`. `blocked` sets Ωc = 0.
pub fn sweep(p: &SystemParams, deltas: &[f64], blocked: bool) -> Result<SpectrumTable> {
    if deltas.is_empty() {
        return Err(Error::invalid("empty detuning grid"));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("detuning grid must be finite"));
    }
    let mut grid = deltas.to_vec();
    grid.sort_by(f64::total_cmp);
    let rows = grid
        .par_iter()
        .map(|&delta| {
            let mut c = ProbeCondition::co_swept(delta);
            if blocked {
                c = c.blocked();
            }
            let r = reflection_amplitude(p, &c);
            SpectrumRow {
                delta,
                transmission: transmission(p, &c),
                reflectivity: r.reflectivity(),
                phase: r.phase(),
            }
        })
        .collect();
    Ok(SpectrumTable { rows })
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolaritonLifetime {
    /// Half width at half maximum of the resonant EIT peak (rad/µs).
    pub hwhm: f64,
    /// τp = 1/(2·HWHM) in µs.
    pub tau_p: f64,
    /// Flux scale 1/(2τp) at which the polariton saturates (photons/µs).
    pub saturation_flux: f64,
}

/// Lifetime of the dark polariton from the width of the resonant EIT window.
pub fn polariton_lifetime(p: &SystemParams) -> Result<PolaritonLifetime> {
    if !(p.omega_c > 0.0) {
        return Err(Error::NoEitPeak("control Rabi frequency is zero".into()));
    }
    let t = |d: f64| transmission(p, &ProbeCondition::co_swept(d));
    let peak = t(0.0);
    let half = 0.5 * peak;

    let scale = p.g + p.omega_c + p.kappa + p.gamma;
    let step = scale / 20_000.0;
    let n_steps = 40_000;

    let mut prev = peak;
    let mut bracket = None;
    for k in 1..=n_steps {
        let d = k as f64 * step;
        let v = t(d);
        if v > prev {
            return Err(Error::NoEitPeak(format!(
                "transmission rises again at {:.4} MHz before reaching half maximum",
                angular_to_mhz(d)
            )));
        }
        if v < half {
            bracket = Some(((k - 1) as f64 * step, d));
            break;
        }
        prev = v;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(Error::NoEitPeak(
            "transmission never falls to half maximum".into(),
        ));
    };
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if t(mid) >= half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let hwhm = 0.5 * (lo + hi);
    let tau_p = 1.0 / (2.0 * hwhm);
    Ok(PolaritonLifetime {
        hwhm,
        tau_p,
        saturation_flux: 1.0 / (2.0 * tau_p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::mhz_to_angular;
    use std::f64::consts::TAU;

    fn defaults() -> SystemParams {
        SystemParams::default()
    }

    /// Independent evaluation of the closed form written directly in
    /// real arithmetic, co-swept detuning `d`.
    fn oracle_denominator(p: &SystemParams, d: f64, omega_c: f64) -> (f64, f64) {
        // Δe − Ωc²/(4Δr), Δr = d + iγr:  Ωc²/(4Δr) = Ωc²(d − iγr)/(4(d² + γr²))
        let s = omega_c * omega_c / (4.0 * (d * d + p.gamma_r * p.gamma_r));
        let (ir, ii) = (d - s * d, p.gamma + s * p.gamma_r);
        // g²/inner
        let n = ir * ir + ii * ii;
        let (qr, qi) = (p.g * p.g * ir / n, -p.g * p.g * ii / n);
        (d - qr, p.kappa - qi)
    }

    #[test]
    fn bare_cavity_on_resonance_is_unity() {
        let p = SystemParams {
            g: 0.0,
            ..defaults()
        };
        assert!((transmission(&p, &ProbeCondition::co_swept(0.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blocked_resonant_transmission() {
        let t = transmission(&defaults(), &ProbeCondition::co_swept(0.0).blocked());
        let hand = (2.9f64 * 3.0 / (2.9 * 3.0 + 100.0)).powi(2);
        assert!((t - hand).abs() < 1e-15);
        assert!((t - 6.405_889_118_62e-3).abs() < 1e-12);
    }

    #[test]
    fn eit_resonant_transmission() {
        let p = defaults();
        let t = transmission(&p, &ProbeCondition::co_swept(0.0));
        let (dr, di) = oracle_denominator(&p, 0.0, p.omega_c);
        let oracle = p.kappa * p.kappa / (dr * dr + di * di);
        assert!((t - oracle).abs() < 1e-14);
        assert!((t - 0.830_803_426_548).abs() < 1e-9);
    }

    #[test]
    fn matches_real_arithmetic_oracle_off_resonance() {
        let p = defaults();
        for d in [-50.0, -3.1, 0.7, 12.0, 63.0] {
            let (dr, di) = oracle_denominator(&p, d, p.omega_c);
            let oracle = p.kappa * p.kappa / (dr * dr + di * di);
            let t = transmission(&p, &ProbeCondition::co_swept(d));
            assert!((t - oracle).abs() < 1e-12 * oracle.max(1e-3), "d={d}");
        }
    }

    #[test]
    fn bare_cavity_reflection() {
        let p = SystemParams {
            g: 0.0,
            ..defaults()
        };
        let r = reflection_amplitude(&p, &ProbeCondition::co_swept(0.0));
        assert!((r.0.re + 0.8).abs() < 1e-12 && r.0.im.abs() < 1e-12);
        assert!((r.reflectivity() - 0.64).abs() < 1e-12);
        assert!((r.phase() - PI).abs() < 1e-12);
    }

    #[test]
    fn eit_and_blocked_reflection() {
        let p = defaults();
        let rg = reflection_amplitude(&p, &ProbeCondition::co_swept(0.0));
        assert!((rg.0.re + 0.640_671_539_954).abs() < 1e-9);
        assert!((rg.reflectivity() - 0.410_460_022_107).abs() < 1e-9);
        assert!((rg.phase() - PI).abs() < 1e-12);

        let rr = reflection_amplitude(&p, &ProbeCondition::co_swept(0.0).blocked());
        assert!((rr.0.re - 0.855_933_762_649).abs() < 1e-9);
        assert!(rr.phase().abs() < 1e-12);
        assert!(((rg.phase() - rr.phase()).abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn reflectivity_is_norm_of_amplitude() {
        let p = defaults();
        let c = ProbeCondition::co_swept(3.3);
        let r = reflection_amplitude(&p, &c);
        assert_eq!(r.reflectivity(), r.0.norm_sqr());
    }

    #[test]
    fn vacuum_rabi_peaks() {
        // dense-grid argmax of the closed form (numpy, 1e-5 MHz spacing):
        // ±10.3615 MHz; dissipation pushes the peaks outside ±g
        let p = defaults();
        let grid = linear_grid(-mhz_to_angular(20.0), mhz_to_angular(20.0), 801);
        let table = sweep(&p, &grid, true).unwrap();
        let (neg, pos) = table.transmission_argmax_pair().unwrap();
        let step = grid[1] - grid[0];
        let peak = mhz_to_angular(10.361_54);
        assert!((neg + peak).abs() <= step, "neg {}", angular_to_mhz(neg));
        assert!((pos - peak).abs() <= step, "pos {}", angular_to_mhz(pos));
        assert_eq!(table.transmission_peaks().len(), 2);
    }

    #[test]
    fn weak_dissipation_peaks_at_g() {
        let p = SystemParams {
            kappa: mhz_to_angular(0.1),
            kappa0: mhz_to_angular(0.09),
            gamma: mhz_to_angular(0.1),
            ..defaults()
        };
        let grid = linear_grid(-mhz_to_angular(20.0), mhz_to_angular(20.0), 801);
        let (neg, pos) = sweep(&p, &grid, true).unwrap().transmission_argmax_pair().unwrap();
        let step = grid[1] - grid[0];
        assert!((neg + p.g).abs() <= step && (pos - p.g).abs() <= step);
    }

    #[test]
    fn eit_window_is_local_maximum() {
        let p = defaults();
        let grid = linear_grid(-2.0, 2.0, 401);
        let table = sweep(&p, &grid, false).unwrap();
        let peaks = table.transmission_peaks();
        assert!(peaks.iter().any(|d| d.abs() < 1e-12));
    }

    #[test]
    fn bare_cavity_lorentzian_half_width() {
        let p = SystemParams {
            g: 0.0,
            ..defaults()
        };
        let t = transmission(&p, &ProbeCondition::co_swept(p.kappa));
        assert!((t - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sweep_rejects_empty_grid_and_sorts() {
        assert!(sweep(&defaults(), &[], false).is_err());
        let t = sweep(&defaults(), &[1.0, -1.0, 0.0], false).unwrap();
        let ds: Vec<f64> = t.rows.iter().map(|r| r.delta).collect();
        assert_eq!(ds, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn csv_header() {
        let t = sweep(&defaults(), &[0.0], false).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("delta_MHz,transmission,reflectivity,phase_rad\n0,"));
    }

    #[test]
    fn polariton_lifetime_reference() {
        // bisection oracle on the closed form (scipy brentq) gives
        // HWHM = 2π × 0.900521 MHz, τp = 0.0883682 µs
        let pl = polariton_lifetime(&defaults()).unwrap();
        assert!((pl.tau_p - 0.088_368_214).abs() < 1e-7);
        assert!((pl.saturation_flux - 5.658_143).abs() < 1e-5);
        assert!((pl.saturation_flux - 5.9).abs() < 0.3);
    }

    #[test]
    fn wider_window_shorter_lifetime() {
        let p = defaults();
        let a = polariton_lifetime(&p).unwrap().tau_p;
        let b = polariton_lifetime(&SystemParams {
            omega_c: 2.0 * p.omega_c,
            ..p
        })
        .unwrap()
        .tau_p;
        assert!(b < a);
    }

    #[test]
    fn no_control_no_lifetime() {
        let p = SystemParams {
            omega_c: 0.0,
            ..defaults()
        };
        assert!(matches!(polariton_lifetime(&p), Err(Error::NoEitPeak(_))));
    }

    #[test]
    fn transparency_and_opacity_limits() {
        let p = SystemParams {
            gamma_r: 1e-9,
            omega_c: 1e6,
            ..defaults()
        };
        let t = transmission(&p, &ProbeCondition::co_swept(0.0));
        assert!((t - 1.0).abs() < 1e-6);
        let q = SystemParams {
            g: 1e6,
            ..defaults()
        };
        assert!(transmission(&q, &ProbeCondition::co_swept(0.0).blocked()) < 1e-12);
    }

    #[test]
    fn partial_shift_restores_some_transparency() {
        let p = defaults();
        let shift = ProbeCondition {
            interaction_shift: mhz_to_angular(3.4),
            ..ProbeCondition::co_swept(0.0)
        };
        let t_shift = transmission(&p, &shift);
        let t_eit = transmission(&p, &ProbeCondition::co_swept(0.0));
        let t_blk = transmission(&p, &ProbeCondition::co_swept(0.0).blocked());
        assert!(t_shift < t_eit && t_shift > t_blk);
    }

    proptest::proptest! {
        #[test]
        fn energy_bound(
            g in 0.0f64..200.0, kappa in 0.01f64..50.0, frac in 0.0f64..=1.0,
            gamma in 0.0f64..50.0, gamma_r in 0.0f64..5.0, omega_c in 0.0f64..200.0,
            d in -300.0f64..300.0, blocked: bool,
        ) {
            let p = SystemParams { g, kappa, kappa0: frac * kappa, gamma, gamma_r, omega_c, ..SystemParams::default() };
            let mut c = ProbeCondition::co_swept(d);
            if blocked { c = c.blocked(); }
            let t = transmission(&p, &c);
            let r = reflection_amplitude(&p, &c).reflectivity();
            proptest::prop_assert!((0.0..=1.0 + 1e-9).contains(&t));
            proptest::prop_assert!((0.0..=1.0 + 1e-9).contains(&r));
        }

        #[test]
        fn co_swept_symmetry(d in 0.0f64..300.0, omega_c in 0.0f64..100.0) {
            let p = SystemParams { omega_c, ..SystemParams::default() };
            let a = transmission(&p, &ProbeCondition::co_swept(d));
            let b = transmission(&p, &ProbeCondition::co_swept(-d));
            proptest::prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn grid_helper() {
        let g = linear_grid(-TAU, TAU, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[2], 0.0);
    }
}
