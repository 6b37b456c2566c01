//! Network and caching configuration.
//!
//! A [`NetworkConfig`] can only be obtained through validation, so every
//! consumer downstream may rely on the tier invariants (positive densities
//! and powers, pathloss exponents above 2, caching marginals summing to the
//! cache size).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `|sum_m p_mj - S_j|`.
pub const CACHE_SIZE_TOLERANCE: f64 = 1e-9;

/// One tier of base stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    /// BSs per unit area.
    pub density: f64,
    /// Transmit power, linear watts.
    pub tx_power: f64,
    pub pathloss_exponent: f64,
    /// Probability that an interfering BS of this tier is active in a slot.
    pub activity_prob: f64,
    /// Marginal probability that a BS of this tier caches file `m`.
    pub caching_probs: Vec<f64>,
    /// Cache size in files; may be fractional.
    pub cache_size: f64,
}

/// Unvalidated configuration as read from a config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetworkConfig {
    pub tiers: Vec<TierConfig>,
    pub num_files: usize,
}

/// A single constraint violation found by [`validate_network`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("network has no tiers")]
    NoTiers,
    #[error("num_files must be at least 1")]
    NoFiles,
    #[error("tier {tier}: density must be positive, got {value}")]
    NonPositiveDensity { tier: usize, value: f64 },
    #[error("tier {tier}: tx_power must be positive, got {value}")]
    NonPositivePower { tier: usize, value: f64 },
    #[error("tier {tier}: pathloss_exponent must exceed 2, got {value}")]
    PathlossTooSmall { tier: usize, value: f64 },
    #[error("tier {tier}: activity_prob must lie in [0, 1], got {value}")]
    ActivityOutOfRange { tier: usize, value: f64 },
    #[error("tier {tier}: caching_probs[{file}] must lie in [0, 1], got {value}")]
    CachingProbOutOfRange { tier: usize, file: usize, value: f64 },
    #[error("tier {tier}: cache_size must be positive, got {value}")]
    NonPositiveCacheSize { tier: usize, value: f64 },
    #[error("tier {tier}: caching_probs sum to {sum} but cache_size is {cache_size}")]
    CacheSizeMismatch { tier: usize, sum: f64, cache_size: f64 },
    #[error("tier {tier}: caching_probs has {found} entries, expected num_files = {expected}")]
    DimensionMismatch { tier: usize, expected: usize, found: usize },
}

/// All violations found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid network configuration ({} violation", self.violations.len())?;
        if self.violations.len() != 1 {
            write!(f, "s")?;
        }
        write!(f, ")")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("tier index {index} out of range (K = {count})")]
    TierOutOfRange { index: usize, count: usize },
    #[error("file index {index} out of range (M = {count})")]
    FileOutOfRange { index: usize, count: usize },
    #[error("SIR threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
}

/// A validated K-tier, M-file network. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    tiers: Vec<TierConfig>,
    num_files: usize,
}

/// Checks every constraint and reports all violations at once.
pub fn validate_network(raw: RawNetworkConfig) -> Result<NetworkConfig, ValidationError> {
    let mut violations = Vec::new();
    if raw.tiers.is_empty() {
        violations.push(Violation::NoTiers);
    }
    if raw.num_files == 0 {
        violations.push(Violation::NoFiles);
    }
    for (tier, t) in raw.tiers.iter().enumerate() {
        if !(t.density > 0.0 && t.density.is_finite()) {
            violations.push(Violation::NonPositiveDensity { tier, value: t.density });
        }
        if !(t.tx_power > 0.0 && t.tx_power.is_finite()) {
            violations.push(Violation::NonPositivePower { tier, value: t.tx_power });
        }
        if !(t.pathloss_exponent > 2.0 && t.pathloss_exponent.is_finite()) {
            violations.push(Violation::PathlossTooSmall { tier, value: t.pathloss_exponent });
        }
        if !(0.0..=1.0).contains(&t.activity_prob) {
            violations.push(Violation::ActivityOutOfRange { tier, value: t.activity_prob });
        }
        if !(t.cache_size > 0.0 && t.cache_size.is_finite()) {
            violations.push(Violation::NonPositiveCacheSize { tier, value: t.cache_size });
        }
        if t.caching_probs.len() != raw.num_files {
            violations.push(Violation::DimensionMismatch {
                tier,
                expected: raw.num_files,
                found: t.caching_probs.len(),
            });
        }
        let mut in_range = true;
        for (file, &p) in t.caching_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                in_range = false;
                violations.push(Violation::CachingProbOutOfRange { tier, file, value: p });
            }
        }
        if in_range && t.cache_size.is_finite() {
            let sum: f64 = t.caching_probs.iter().sum();
            if (sum - t.cache_size).abs() > CACHE_SIZE_TOLERANCE {
                violations.push(Violation::CacheSizeMismatch {
                    tier,
                    sum,
                    cache_size: t.cache_size,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(NetworkConfig { tiers: raw.tiers, num_files: raw.num_files })
    } else {
        Err(ValidationError { violations })
    }
}

impl NetworkConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let raw: RawNetworkConfig = serde_json::from_str(s)?;
        Ok(validate_network(raw)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    pub fn to_raw(&self) -> RawNetworkConfig {
        RawNetworkConfig { tiers: self.tiers.clone(), num_files: self.num_files }
    }

    pub fn tiers(&self) -> &[TierConfig] {
        &self.tiers
    }

    pub fn tier(&self, index: usize) -> Result<&TierConfig, ModelError> {
        self.tiers
            .get(index)
            .ok_or(ModelError::TierOutOfRange { index, count: self.tiers.len() })
    }

    pub fn num_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn check_file(&self, file: usize) -> Result<(), ModelError> {
        if file < self.num_files {
            Ok(())
        } else {
            Err(ModelError::FileOutOfRange { index: file, count: self.num_files })
        }
    }

    /// Density `p_nj * lambda_j` of tier-`tier` BSs holding `file`.
    pub fn thinned_density(&self, tier: usize, file: usize) -> Result<f64, ModelError> {
        self.check_file(file)?;
        let t = self.tier(tier)?;
        Ok(t.caching_probs[file] * t.density)
    }

    /// Caching probability of `file` in `tier`.
    pub fn caching_prob(&self, tier: usize, file: usize) -> Result<f64, ModelError> {
        self.check_file(file)?;
        Ok(self.tier(tier)?.caching_probs[file])
    }

    /// True when at least one tier caches `file` with positive probability.
    pub fn is_cached(&self, file: usize) -> Result<bool, ModelError> {
        self.check_file(file)?;
        Ok(self.tiers.iter().any(|t| t.caching_probs[file] > 0.0))
    }

    /// The shared pathloss exponent, if every tier uses the same one.
    pub fn common_pathloss_exponent(&self) -> Option<f64> {
        let first = self.tiers[0].pathloss_exponent;
        self.tiers
            .iter()
            .all(|t| t.pathloss_exponent == first)
            .then_some(first)
    }

    /// Returns a revalidated copy after applying `edit` to the raw form.
    pub fn modified<F>(&self, edit: F) -> Result<NetworkConfig, ValidationError>
    where
        F: FnOnce(&mut RawNetworkConfig),
    {
        let mut raw = self.to_raw();
        edit(&mut raw);
        validate_network(raw)
    }

    pub fn with_density(&self, tier: usize, density: f64) -> Result<NetworkConfig, ValidationError> {
        self.modified(|raw| {
            if let Some(t) = raw.tiers.get_mut(tier) {
                t.density = density;
            }
        })
    }

    pub fn with_activity(&self, tier: usize, activity: f64) -> Result<NetworkConfig, ValidationError> {
        self.modified(|raw| {
            if let Some(t) = raw.tiers.get_mut(tier) {
                t.activity_prob = activity;
            }
        })
    }

    /// Sets every tier's activity probability.
    pub fn with_all_activities(&self, activity: f64) -> Result<NetworkConfig, ValidationError> {
        self.modified(|raw| raw.tiers.iter_mut().for_each(|t| t.activity_prob = activity))
    }
}

impl<'de> Deserialize<'de> for NetworkConfig {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = RawNetworkConfig::deserialize(deserializer)?;
        validate_network(raw).map_err(serde::de::Error::custom)
    }
}

/// File index and linear SIR threshold of a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryParams {
    file: usize,
    sir_threshold: f64,
}

impl QueryParams {
    pub fn new(file: usize, sir_threshold: f64) -> Result<Self, ModelError> {
        if !(sir_threshold > 0.0 && sir_threshold.is_finite()) {
            return Err(ModelError::InvalidThreshold(sir_threshold));
        }
        Ok(Self { file, sir_threshold })
    }

    pub fn file(&self) -> usize {
        self.file
    }

    pub fn sir_threshold(&self) -> f64 {
        self.sir_threshold
    }
}
