//! Run configuration: a flat `key = value` file merged with command-line
//! overrides. Every resolved value is echoed back so a run can be repeated
//! from its output alone.

use std::collections::BTreeMap;
use std::path::Path;

use eqrgmm::gradient::Bandwidth;
use eqrgmm::grid::default_m;
use eqrgmm::metamodel::{FitConfig, Variant};
use eqrgmm::Basis;

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "variant",
    "basis",
    "m",
    "c",
    "tau_l",
    "tau_u",
    "delta_n",
    "clamp_negative_gradients",
    "B",
    "K",
    "alpha",
    "N",
    "n",
    "reference_size",
    "truth_size",
    "retries",
    "seed",
    "workers",
];

/// Key-value pairs in the order they were given; later entries win.
#[derive(Debug, Clone, Default)]
pub struct Overrides(BTreeMap<String, String>);

impl Overrides {
    pub fn parse_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    pub fn parse_text(text: &str, origin: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Parse(format!(
                    "{origin}, line {}: expected 'key = value', got '{line}'",
                    i + 1
                )));
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Parse(format!("{origin}, line {}: unknown key '{key}'", i + 1)));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        debug_assert!(KEYS.contains(&key), "{key}");
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.to_string());
        }
    }

    pub fn merge(&mut self, other: Overrides) {
        self.0.extend(other.0);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

fn parse_field<T: std::str::FromStr>(o: &Overrides, key: &str, default: T) -> CliResult<T> {
    match o.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| CliError::field(key, format!("cannot parse '{v}'"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    /// `None` picks the scenario's natural basis (identity for plain data).
    pub basis: Option<Basis>,
    /// `None` resolves to `round(sqrt(n))` once the sample size is known.
    pub m: Option<usize>,
    pub c: f64,
    pub tau_l: f64,
    pub tau_u: f64,
    pub bandwidth: Bandwidth,
    pub clamp_negative_gradients: bool,
    pub b_count: usize,
    pub k: usize,
    pub alpha: f64,
    pub replications: usize,
    pub n: usize,
    pub reference_size: usize,
    pub truth_size: usize,
    pub retries: u32,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    pub fn from_overrides(o: &Overrides) -> CliResult<Self> {
        let variant = match o.get("variant").unwrap_or("eqrgmm") {
            "eqrgmm" | "e-qrgmm" => Variant::Eqrgmm,
            "qrgmm" => Variant::Qrgmm,
            v => return Err(CliError::field("variant", format!("expected eqrgmm or qrgmm, got '{v}'"))),
        };
        let basis = match o.get("basis") {
            None | Some("auto") => None,
            Some(b) => Some(Basis::parse(b).map_err(|e| CliError::field("basis", e))?),
        };
        let m = match o.get("m") {
            None | Some("auto") => None,
            Some(_) => Some(parse_field(o, "m", 0usize)?),
        };
        let bandwidth = match o.get("delta_n") {
            Some("residual") => Bandwidth::Residual,
            _ => Bandwidth::Fixed(parse_field(o, "delta_n", 0.1)?),
        };
        let cfg = Self {
            variant,
            basis,
            m,
            c: parse_field(o, "c", 2.0)?,
            tau_l: parse_field(o, "tau_l", 0.1)?,
            tau_u: parse_field(o, "tau_u", 0.9)?,
            bandwidth,
            clamp_negative_gradients: parse_field(o, "clamp_negative_gradients", false)?,
            b_count: parse_field(o, "B", 100)?,
            k: parse_field(o, "K", 100_000)?,
            alpha: parse_field(o, "alpha", 0.1)?,
            replications: parse_field(o, "N", 100)?,
            n: parse_field(o, "n", 10_000)?,
            reference_size: parse_field(o, "reference_size", 100_000)?,
            truth_size: parse_field(o, "truth_size", 100_000)?,
            retries: parse_field(o, "retries", 0)?,
            seed: parse_field(o, "seed", 0)?,
            workers: parse_field(o, "workers", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if let Some(m) = self.m {
            if m < 2 {
                return Err(CliError::field("m", format!("must be at least 2, got {m}")));
            }
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(CliError::field("c", format!("must be positive, got {}", self.c)));
        }
        if !(self.tau_l > 0.0 && self.tau_l < 1.0) {
            return Err(CliError::field("tau_l", format!("must lie in (0, 1), got {}", self.tau_l)));
        }
        if !(self.tau_u > self.tau_l && self.tau_u < 1.0) {
            return Err(CliError::field(
                "tau_u",
                format!("must lie in (tau_l, 1) = ({}, 1), got {}", self.tau_l, self.tau_u),
            ));
        }
        if let Bandwidth::Fixed(d) = self.bandwidth {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::field("delta_n", format!("must be positive or 'residual', got {d}")));
            }
        }
        if self.b_count < 2 {
            return Err(CliError::field("B", format!("must be at least 2, got {}", self.b_count)));
        }
        if self.k == 0 {
            return Err(CliError::field("K", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::field("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.replications == 0 {
            return Err(CliError::field("N", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(CliError::field("n", "must be at least 1"));
        }
        if self.reference_size == 0 || self.truth_size == 0 {
            return Err(CliError::field("reference_size", "reference and truth sizes must be positive"));
        }
        if self.retries > eqrgmm::bootstrap::MAX_RETRIES {
            return Err(CliError::field(
                "retries",
                format!("at most {} allowed, got {}", eqrgmm::bootstrap::MAX_RETRIES, self.retries),
            ));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            variant: self.variant,
            m: self.m,
            c: self.c,
            tau_l: self.tau_l,
            tau_u: self.tau_u,
            bandwidth: self.bandwidth,
            basis: self.basis.unwrap_or(Basis::Identity),
            clamp_negative_gradients: self.clamp_negative_gradients,
        }
    }

    /// Every key with its resolved value; `m` is resolved against `n_data`
    /// when a sample size is known.
    pub fn resolved(&self, n_data: Option<usize>) -> BTreeMap<String, String> {
        let m = match (self.m, n_data) {
            (Some(m), _) => m.to_string(),
            (None, Some(n)) => default_m(n).to_string(),
            (None, None) => "auto".to_string(),
        };
        let delta = match self.bandwidth {
            Bandwidth::Fixed(d) => d.to_string(),
            Bandwidth::Residual => "residual".to_string(),
        };
        let variant = match self.variant {
            Variant::Eqrgmm => "eqrgmm",
            Variant::Qrgmm => "qrgmm",
        };
        [
            ("variant", variant.to_string()),
            ("basis", self.basis.map_or("auto", |b| b.id()).to_string()),
            ("m", m),
            ("c", self.c.to_string()),
            ("tau_l", self.tau_l.to_string()),
            ("tau_u", self.tau_u.to_string()),
            ("delta_n", delta),
            ("clamp_negative_gradients", self.clamp_negative_gradients.to_string()),
            ("B", self.b_count.to_string()),
            ("K", self.k.to_string()),
            ("alpha", self.alpha.to_string()),
            ("N", self.replications.to_string()),
            ("n", self.n.to_string()),
            ("reference_size", self.reference_size.to_string()),
            ("truth_size", self.truth_size.to_string()),
            ("retries", self.retries.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// The resolved configuration in the config-file syntax.
    pub fn echo(&self, n_data: Option<usize>) -> String {
        let mut out = String::from("# effective configuration\n");
        for (k, v) in self.resolved(n_data) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
