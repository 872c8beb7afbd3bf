//! Physical parameters of the cavity–superatom system and the plain-text
//! configuration format they are loaded from.
//!
//! Canonical internal units: angular frequency in rad/µs, time in µs, length
//! in µm, temperature in µK, van der Waals coefficients in MHz·µm⁶. Config
//! files quote ordinary frequencies in MHz; conversion happens once, here.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass of ⁸⁷Rb in kg.
pub const RB87_MASS_KG: f64 = 86.909_180_527 * 1.660_539_066_60e-27;
/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// MHz·µm⁶ per THz·µm⁶.
pub const MHZ_PER_THZ: f64 = 1.0e6;

/// Ordinary frequency in MHz to angular frequency in rad/µs.
pub fn mhz_to_angular(nu_mhz: f64) -> f64 {
    TAU * nu_mhz
}

/// Angular frequency in rad/µs to ordinary frequency in MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / TAU
}

/// Wavelength in nm to wavevector magnitude in rad/µm.
pub fn wavelength_nm_to_k(lambda_nm: f64) -> f64 {
    TAU / (lambda_nm * 1e-3)
}

pub fn k_to_wavelength_nm(k: f64) -> f64 {
    TAU / k * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Collective atom–cavity coupling (rad/µs).
    pub g: f64,
    /// Total cavity field decay rate (rad/µs).
    pub kappa: f64,
    /// Output-coupler field decay rate (rad/µs).
    pub kappa0: f64,
    /// Atomic dipole coherence decay rate (rad/µs).
    pub gamma: f64,
    /// Rydberg coherence decay rate (rad/µs).
    pub gamma_r: f64,
    /// EIT control Rabi frequency (rad/µs).
    pub omega_c: f64,
    pub omega_d2: f64,
    pub omega_109s: f64,
    /// Intermediate-state detuning of the two-photon drive (rad/µs), negative below resonance.
    pub delta_int: f64,
    pub n_atoms: usize,
    /// Cloud rms radius (µm).
    pub sigma_a: f64,
    /// van der Waals coefficients (MHz·µm⁶).
    pub c_rr: f64,
    pub c_rrp: f64,
    pub c_rprp: f64,
    /// Rydberg-state lifetime during probing (µs).
    pub tau_r: f64,
    /// Cloud temperature (µK).
    pub temperature: f64,
    /// Atomic mass (kg).
    pub atom_mass: f64,
    /// Drive wavevector magnitudes (rad/µm).
    pub k_d2: f64,
    pub k_109s: f64,
    /// Angle between the two drive wavevectors (rad).
    pub drive_angle: f64,
    /// Relative rms shot-to-shot spread of the collective Rabi frequency.
    pub omega_rel_rms: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        let kappa = mhz_to_angular(2.9);
        SystemParams {
            g: mhz_to_angular(10.0),
            kappa,
            kappa0: 0.9 * kappa,
            gamma: mhz_to_angular(3.0),
            gamma_r: mhz_to_angular(0.12),
            omega_c: mhz_to_angular(13.0),
            omega_d2: mhz_to_angular(6.0),
            omega_109s: mhz_to_angular(10.0),
            delta_int: mhz_to_angular(-545.0),
            n_atoms: 800,
            sigma_a: 5.0,
            c_rr: 154.0 * MHZ_PER_THZ,
            c_rrp: 18.0 * MHZ_PER_THZ,
            c_rprp: 3.0 * MHZ_PER_THZ,
            tau_r: 42.0,
            temperature: 3.0,
            atom_mass: RB87_MASS_KG,
            k_d2: wavelength_nm_to_k(780.0),
            k_109s: wavelength_nm_to_k(480.0),
            drive_angle: PI / 2.0,
            omega_rel_rms: 0.04,
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub value: f64,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.reason)
    }
}

impl SystemParams {
    /// Per-atom couplings g_n. Only the collective value is known, so the
    /// breakdown is uniform: g_n = g/√N.
    pub fn per_atom_coupling(&self) -> Vec<f64> {
        let n = self.n_atoms.max(1);
        vec![self.g / (n as f64).sqrt(); n]
    }

    /// Every violated invariant, once each. Empty when valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, value: f64, reason: &str| {
            out.push(Violation {
                field: field.to_string(),
                value,
                reason: reason.to_string(),
            })
        };

        let non_negative = [
            ("g", self.g),
            ("kappa", self.kappa),
            ("kappa0", self.kappa0),
            ("gamma", self.gamma),
            ("gamma_r", self.gamma_r),
            ("omega_c", self.omega_c),
            ("omega_d2", self.omega_d2),
            ("omega_109s", self.omega_109s),
            ("c_rr", self.c_rr),
            ("c_rrp", self.c_rrp),
            ("c_rprp", self.c_rprp),
            ("temperature", self.temperature),
            ("omega_rel_rms", self.omega_rel_rms),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() {
                push(name, v, "must be finite");
            } else if v < 0.0 {
                push(name, v, "must be non-negative");
            }
        }
        if !self.delta_int.is_finite() {
            push("delta_int", self.delta_int, "must be finite");
        }
        if !self.drive_angle.is_finite() {
            push("drive_angle", self.drive_angle, "must be finite");
        }
        let positive = [
            ("sigma_a", self.sigma_a),
            ("tau_r", self.tau_r),
            ("atom_mass", self.atom_mass),
            ("k_d2", self.k_d2),
            ("k_109s", self.k_109s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                push(name, v, "must be positive and finite");
            }
        }
        if self.kappa0.is_finite() && self.kappa.is_finite() && self.kappa0 > self.kappa {
            push("kappa0", self.kappa0, "must not exceed kappa");
        }
        if self.n_atoms < 1 {
            push("n_atoms", self.n_atoms as f64, "must be at least 1");
        }
        out
    }

    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Applies config entries (config units) on top of `self`.
    fn apply_entries(&mut self, entries: &ConfigEntries) -> Result<()> {
        for (key, entry) in &entries.values {
            let v = entry.value;
            match key.as_str() {
                "g_MHz" => self.g = mhz_to_angular(v),
                "kappa_MHz" => self.kappa = mhz_to_angular(v),
                "kappa0_MHz" => self.kappa0 = mhz_to_angular(v),
                "gamma_MHz" => self.gamma = mhz_to_angular(v),
                "gamma_r_MHz" => self.gamma_r = mhz_to_angular(v),
                "omega_c_MHz" => self.omega_c = mhz_to_angular(v),
                "omega_d2_MHz" => self.omega_d2 = mhz_to_angular(v),
                "omega_109s_MHz" => self.omega_109s = mhz_to_angular(v),
                "delta_int_MHz" => self.delta_int = mhz_to_angular(v),
                "n_atoms" => {
                    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                        return Err(Error::Validation(vec![Violation {
                            field: "n_atoms".into(),
                            value: v,
                            reason: "must be a non-negative integer".into(),
                        }]));
                    }
                    self.n_atoms = v as usize;
                }
                "sigma_a_um" => self.sigma_a = v,
                "c_rr_THzum6" => self.c_rr = v * MHZ_PER_THZ,
                "c_rrp_THzum6" => self.c_rrp = v * MHZ_PER_THZ,
                "c_rprp_THzum6" => self.c_rprp = v * MHZ_PER_THZ,
                "tau_r_us" => self.tau_r = v,
                "temperature_uK" => self.temperature = v,
                "atom_mass_kg" => self.atom_mass = v,
                "angle_drive_deg" => self.drive_angle = v.to_radians(),
                "lambda_d2_nm" => self.k_d2 = wavelength_nm_to_k(v),
                "lambda_109s_nm" => self.k_109s = wavelength_nm_to_k(v),
                "omega_rel_rms" => self.omega_rel_rms = v,
                _ => {}
            }
        }
        // κ₀ follows κ unless stated explicitly.
        if entries.get("kappa_MHz").is_some() && entries.get("kappa0_MHz").is_none() {
            self.kappa0 = 0.9 * self.kappa;
        }
        Ok(())
    }

    pub fn from_entries(entries: &ConfigEntries) -> Result<Self> {
        let mut p = SystemParams::default();
        p.apply_entries(entries)?;
        p.validated()
    }

    /// The parameter set expressed as config keys and config units.
    pub fn to_entries(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(k.to_string(), v);
        };
        put("g_MHz", angular_to_mhz(self.g));
        put("kappa_MHz", angular_to_mhz(self.kappa));
        put("kappa0_MHz", angular_to_mhz(self.kappa0));
        put("gamma_MHz", angular_to_mhz(self.gamma));
        put("gamma_r_MHz", angular_to_mhz(self.gamma_r));
        put("omega_c_MHz", angular_to_mhz(self.omega_c));
        put("omega_d2_MHz", angular_to_mhz(self.omega_d2));
        put("omega_109s_MHz", angular_to_mhz(self.omega_109s));
        put("delta_int_MHz", angular_to_mhz(self.delta_int));
        put("n_atoms", self.n_atoms as f64);
        put("sigma_a_um", self.sigma_a);
        put("c_rr_THzum6", self.c_rr / MHZ_PER_THZ);
        put("c_rrp_THzum6", self.c_rrp / MHZ_PER_THZ);
        put("c_rprp_THzum6", self.c_rprp / MHZ_PER_THZ);
        put("tau_r_us", self.tau_r);
        put("temperature_uK", self.temperature);
        put("atom_mass_kg", self.atom_mass);
        put("angle_drive_deg", self.drive_angle.to_degrees());
        put("lambda_d2_nm", k_to_wavelength_nm(self.k_d2));
        put("lambda_109s_nm", k_to_wavelength_nm(self.k_109s));
        put("omega_rel_rms", self.omega_rel_rms);
        m
    }
}

/// Keys that configure [`SystemParams`].
pub const SYSTEM_KEYS: &[&str] = &[
    "g_MHz",
    "kappa_MHz",
    "kappa0_MHz",
    "gamma_MHz",
    "gamma_r_MHz",
    "omega_c_MHz",
    "omega_d2_MHz",
    "omega_109s_MHz",
    "delta_int_MHz",
    "n_atoms",
    "sigma_a_um",
    "c_rr_THzum6",
    "c_rrp_THzum6",
    "c_rprp_THzum6",
    "tau_r_us",
    "temperature_uK",
    "atom_mass_kg",
    "angle_drive_deg",
    "lambda_d2_nm",
    "lambda_109s_nm",
    "omega_rel_rms",
];

/// Keys that configure single-shot detection runs. These have no built-in
/// defaults; the shipped config file carries the reference values.
pub const COUNTING_KEYS: &[&str] = &[
    "count_t_i_us",
    "count_bin_us",
    "count_phi_g_per_us",
    "count_phi_r_ratio",
    "count_threshold",
];
pub const COUNTING_OPTIONAL_KEYS: &[&str] = &["count_eta_r"];
pub const HOMODYNE_KEYS: &[&str] = &[
    "hd_t_i_us",
    "hd_bin_us",
    "hd_phi_per_us",
    "hd_refl_g",
    "hd_refl_r",
    "hd_tau_r_us",
    "hd_threshold",
];
pub const HOMODYNE_OPTIONAL_KEYS: &[&str] = &["hd_eta_r"];

fn is_known_key(key: &str) -> bool {
    SYSTEM_KEYS
        .iter()
        .chain(COUNTING_KEYS)
        .chain(COUNTING_OPTIONAL_KEYS)
        .chain(HOMODYNE_KEYS)
        .chain(HOMODYNE_OPTIONAL_KEYS)
        .any(|k| *k == key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub value: f64,
    pub line: usize,
}

/// Parsed `key = value` pairs, in config units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigEntries {
    values: BTreeMap<String, ConfigEntry>,
}

impl ConfigEntries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigSyntax {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if !is_known_key(key) {
                return Err(Error::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            let parsed: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                })?;
            if values.contains_key(key) {
                return Err(Error::ConfigSyntax {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            values.insert(
                key.to_string(),
                ConfigEntry {
                    value: parsed,
                    line,
                },
            );
        }
        Ok(ConfigEntries { values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, &v) in map {
            if !is_known_key(k) {
                return Err(Error::UnknownKey {
                    line: 0,
                    key: k.clone(),
                });
            }
            values.insert(k.clone(), ConfigEntry { value: v, line: 0 });
        }
        Ok(ConfigEntries { values })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).map(|e| e.value)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .map(|(k, e)| (k.clone(), e.value))
            .collect()
    }

    /// Values for `keys`, or an error naming every key that is absent.
    pub fn require(&self, keys: &[&str]) -> Result<Vec<f64>> {
        let missing: Vec<String> = keys
            .iter()
            .filter(|k| self.get(k).is_none())
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }
        Ok(keys.iter().map(|k| self.get(k).unwrap()).collect())
    }
}

/// Reads a config file and returns validated parameters in canonical units.
/// Keys not present take the reference defaults of [`SystemParams::default`].
pub fn load_config(path: &Path) -> Result<SystemParams> {
    SystemParams::from_entries(&ConfigEntries::read(path)?)
}
