//! Experiment configuration, validation, TOML loading and the shipped presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How noise indices are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Uniform over `1..=d`, independently per draw (collisions allowed).
    Iid,
    /// Without replacement from `K+1..=d`, so every noise direction is
    /// orthogonal to the features and to every other noise direction.
    Distinct,
}

/// How the latent labels of the originals are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Every `(y, y_sub, k, rho)` combination appears equally often.
    Exact,
    /// Independent uniform draws.
    Sampled,
}

/// How each original picks its irrelevant feature index `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrrelevantMode {
    /// `k` follows `balance_mode` like the other latent labels.
    Balanced,
    /// Every original gets its own `k`, drawn without replacement from `3..=K`.
    Unique,
}

/// Augmentation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugMode {
    /// Resample the one-hot noise, keep the features.
    Perfect,
    /// Keep the noise index, perturb `v1`/`v2` with Gaussian noise and add a
    /// low-rank Gaussian perturbation fixed per original.
    Imperfect {
        sigma_zeta1: f64,
        sigma_zeta2: f64,
        noise_cov_rank: usize,
        noise_cov_scale: f64,
    },
}

fn default_beta() -> f64 {
    0.5
}

/// All scalars of the data, model and training setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "K", alias = "k")]
    pub k_features: usize,
    pub p: usize,
    pub phi: Vec<f64>,
    #[serde(alias = "mu")]
    pub mu2: f64,
    pub sigma_xi: f64,
    pub sigma_0: f64,
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub noise_mode: NoiseMode,
    pub balance_mode: BalanceMode,
    pub aug_mode: AugMode,
    pub irrelevant_mode: IrrelevantMode,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Dimension of the effective space (ambient plus the constant feature).
    pub fn dim(&self) -> usize {
        self.d + 1
    }

    /// Number of augmented examples.
    pub fn n_aug(&self) -> usize {
        self.m * self.n
    }

    /// Strength of feature `k` (1-based).
    pub fn phi_k(&self, k: usize) -> f64 {
        self.phi[k - 1]
    }

    /// Number of distinct latent combinations `(y, y_sub, k, rho)`.
    pub fn combos(&self) -> usize {
        8 * (self.k_features - 2)
    }

    /// Checks every structural invariant, naming the violated one.
    pub fn validate(&self) -> Result<()> {
        let k = self.k_features;
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("n, m and d must be positive".into()));
        }
        if k < 3 {
            return Err(Error::InvalidConfig(format!("K must be >= 3 (got {k})")));
        }
        if self.p < 3 {
            return Err(Error::InvalidConfig(format!("p must be >= 3 (got {})", self.p)));
        }
        if self.d < k {
            return Err(Error::InvalidConfig(format!("d = {} must be >= K = {k}", self.d)));
        }
        if self.phi.len() != k {
            return Err(Error::InvalidConfig(format!(
                "phi has {} entries, expected K = {k}",
                self.phi.len()
            )));
        }
        if self.phi.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidConfig("phi entries must be positive".into()));
        }
        if !self.mu2.is_finite() {
            return Err(Error::InvalidConfig("mu2 must be finite".into()));
        }
        if !(self.sigma_xi.is_finite() && self.sigma_xi >= 0.0) {
            return Err(Error::InvalidConfig("sigma_xi must be >= 0".into()));
        }
        if !(self.sigma_0.is_finite() && self.sigma_0 > 0.0) {
            return Err(Error::InvalidConfig("sigma_0 must be > 0".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig("eta must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta = {} not in [0, 1]", self.beta)));
        }
        if let AugMode::Imperfect {
            sigma_zeta1,
            sigma_zeta2,
            noise_cov_rank,
            noise_cov_scale,
        } = self.aug_mode
        {
            if noise_cov_rank > self.m / 2 {
                return Err(Error::RankViolation { rank: noise_cov_rank, max: self.m / 2 });
            }
            if [sigma_zeta1, sigma_zeta2, noise_cov_scale]
                .iter()
                .any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return Err(Error::InvalidConfig(
                    "imperfect augmentation scales must be >= 0".into(),
                ));
            }
            if noise_cov_rank > self.d - k {
                return Err(Error::InvalidConfig(
                    "noise_cov_rank exceeds the dimension of the noise subspace".into(),
                ));
            }
        }
        match self.irrelevant_mode {
            IrrelevantMode::Balanced => {
                if self.balance_mode == BalanceMode::Exact && !self.n.is_multiple_of(self.combos()) {
                    return Err(Error::BalanceInfeasible { n: self.n, required: self.combos() });
                }
            }
            IrrelevantMode::Unique => {
                if self.n > k - 2 {
                    return Err(Error::UniqueInfeasible { n: self.n, available: k - 2 });
                }
                // k is forced distinct; exact balance then applies to (y, y_sub, rho) only.
                if self.balance_mode == BalanceMode::Exact && !self.n.is_multiple_of(8) {
                    return Err(Error::BalanceInfeasible { n: self.n, required: 8 });
                }
            }
        }
        if self.noise_mode == NoiseMode::Distinct {
            let draws = match self.aug_mode {
                AugMode::Perfect => self.n_aug(),
                AugMode::Imperfect { .. } => self.n,
            };
            if self.d < k + draws {
                return Err(Error::DimensionTooSmall { d: self.d, required: k + draws });
            }
        }
        Ok(())
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses a TOML document, applies `key=value` overrides (dotted keys
    /// address nested tables, values are parsed as TOML literals and fall back
    /// to strings), then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Small exact-regime configuration used for the collapse checks.
    pub fn c0() -> Self {
        Self {
            n: 16,
            m: 2,
            d: 64,
            k_features: 4,
            p: 3,
            phi: vec![1.0; 4],
            mu2: 0.0,
            sigma_xi: 0.5,
            sigma_0: 0.001,
            eta: 0.05,
            beta: 0.5,
            noise_mode: NoiseMode::Distinct,
            balance_mode: BalanceMode::Exact,
            aug_mode: AugMode::Perfect,
            irrelevant_mode: IrrelevantMode::Balanced,
            seed: 0,
        }
    }

    /// Joint-loss configuration: v2 is easy for the unsupervised loss while v1
    /// is hard, so each single loss loses one of them.
    pub fn c1() -> Self {
        Self {
            n: 64,
            m: 2,
            d: 512,
            k_features: 6,
            p: 5,
            phi: vec![0.5, 1.0, 1.6, 1.6, 1.6, 1.6],
            ..Self::c0()
        }
    }

    /// Many unique irrelevant features with imperfect augmentation.
    pub fn c2() -> Self {
        Self {
            n: 8,
            m: 4,
            d: 1024,
            k_features: 256,
            p: 16,
            phi: vec![1.0; 256],
            aug_mode: AugMode::Imperfect {
                sigma_zeta1: 0.1,
                sigma_zeta2: 0.1,
                noise_cov_rank: 2,
                noise_cov_scale: 0.1,
            },
            irrelevant_mode: IrrelevantMode::Unique,
            ..Self::c0()
        }
    }

    /// Gradient-descent configuration of the embedding/alignment figures.
    pub fn fig1() -> Self {
        Self {
            n: 1000,
            m: 5,
            d: 2000,
            k_features: 4,
            p: 3,
            phi: vec![1.0; 4],
            mu2: 1.0,
            sigma_xi: 2.0,
            sigma_0: 0.001,
            eta: 0.05,
            beta: 0.5,
            noise_mode: NoiseMode::Iid,
            balance_mode: BalanceMode::Sampled,
            aug_mode: AugMode::Perfect,
            irrelevant_mode: IrrelevantMode::Balanced,
            seed: 0,
        }
    }

    /// Feature-suppression sweep point with `p = K`, `phi1 = 0.8`, `phi2 = 1`,
    /// intermediate irrelevant features at variance 0.81 and the last one at
    /// `phi_last`.
    pub fn fig4(k_features: usize, phi_last: f64) -> Self {
        let scale = ((k_features - 2) as f64).sqrt();
        let mut phi = vec![0.9 * scale; k_features];
        phi[0] = 0.8;
        phi[1] = 1.0;
        phi[k_features - 1] = phi_last;
        let n = 8 * (k_features - 2) * if k_features == 3 { 8 } else { 1 };
        Self {
            n,
            m: 2,
            d: 2000,
            k_features,
            p: k_features,
            phi,
            ..Self::c0()
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_toml_value(raw);
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        Error::InvalidConfig(format!("override '{spec}' has an empty key"))
    })?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        cur = entry.as_table_mut().expect("just made a table");
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
