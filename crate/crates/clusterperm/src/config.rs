//! Flat `key=value` study configuration.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Lists are separated by `,` or `;`, and a list may also be given
//! as a range `start:stop:step` (inclusive of `stop` up to rounding).

use clusterperm_core::calibrate::{CalibrationParams, VarianceRestriction};
use clusterperm_core::simharness::{DidConfig, NormalLocationConfig};

/// Configuration error with the offending line, if any.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// Line without `=`.
    #[error("line {line}: expected key=value, found `{text}`")]
    Syntax {
        /// Line number.
        line: usize,
        /// Line text.
        text: String,
    },
    /// Key not known to the study.
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    /// Value that does not parse.
    #[error("key `{key}`: cannot parse `{value}`")]
    Value {
        /// Key.
        key: String,
        /// Offending text.
        value: String,
    },
}

/// Splits text into ordered key/value pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.into() })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value { key: key.into(), value: value.into() })
}

/// Parses a list or a `start:stop:step` range of reals.
pub fn real_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = || ConfigError::Value { key: key.into(), value: value.into() };
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() == 3 {
        let [a, b, s] = [scalar::<f64>(key, parts[0])?, scalar::<f64>(key, parts[1])?, scalar::<f64>(key, parts[2])?];
        if !(s > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * s).collect());
    }
    let out: Vec<f64> =
        value.split([',', ';']).map(str::trim).filter(|s| !s.is_empty()).map(|s| scalar(key, s)).collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn usize_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    let out: Vec<usize> =
        value.split([',', ';']).map(str::trim).filter(|s| !s.is_empty()).map(|s| scalar(key, s)).collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(ConfigError::Value { key: key.into(), value: value.into() });
    }
    Ok(out)
}

/// Applies one setting to a normal-location configuration.
pub fn set_normal_location(cfg: &mut NormalLocationConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "q1" => cfg.q1 = scalar(key, value)?,
        "q0" => cfg.q0 = scalar(key, value)?,
        "mu0" => cfg.mu0 = scalar(key, value)?,
        "mu1_grid" | "mu1" => cfg.mu1_grid = real_list(key, value)?,
        "h_grid" | "h" => cfg.h_grid = usize_list(key, value)?,
        "sigma_low" => cfg.sigma_low = scalar(key, value)?,
        "sigma_high" => cfg.sigma_high = scalar(key, value)?,
        "replications" => cfg.replications = scalar(key, value)?,
        "alpha" => cfg.alpha = scalar(key, value)?,
        "seed" => cfg.seed = scalar(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}

/// Applies one setting to a difference-in-differences configuration.
pub fn set_did(cfg: &mut DidConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "q1" => cfg.q1 = scalar(key, value)?,
        "q0" => cfg.q0 = scalar(key, value)?,
        "n0" => cfg.n0 = scalar(key, value)?,
        "n1" => cfg.n1 = scalar(key, value)?,
        "theta0" => cfg.theta0 = scalar(key, value)?,
        "beta1" => cfg.beta1 = scalar(key, value)?,
        "beta2" => cfg.beta2 = scalar(key, value)?,
        "beta3" => cfg.beta3 = scalar(key, value)?,
        "zeta" => cfg.zeta = scalar(key, value)?,
        "rho" => cfg.rho = scalar(key, value)?,
        "gamma" => cfg.gamma = scalar(key, value)?,
        "delta_grid" | "delta" => cfg.delta_grid = real_list(key, value)?,
        "h_grid" | "h" => cfg.h_grid = usize_list(key, value)?,
        "sigma_low" => cfg.sigma_low = scalar(key, value)?,
        "sigma_high" => cfg.sigma_high = scalar(key, value)?,
        "burn_in" => cfg.burn_in = scalar(key, value)?,
        "replications" => cfg.replications = scalar(key, value)?,
        "bootstrap_b" | "bootstrap_B" => cfg.bootstrap_b = scalar(key, value)?,
        "alpha" => cfg.alpha = scalar(key, value)?,
        "seed" => cfg.seed = scalar(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}

/// Applies one setting to calibration parameters. `restriction` takes
/// `none`, `homogeneous` or `truncate:lo:hi`.
pub fn set_calibration(p: &mut CalibrationParams, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "r" | "R" => p.r = scalar(key, value)?,
        "s1" => p.s1 = scalar(key, value)?,
        "s2" => p.s2 = scalar(key, value)?,
        "top_fraction" => p.top_fraction = scalar(key, value)?,
        "beta_a" => p.beta_a = scalar(key, value)?,
        "beta_b" => p.beta_b = scalar(key, value)?,
        "eta" => p.eta = scalar(key, value)?,
        "epsilon" => p.epsilon = scalar(key, value)?,
        "m" => p.m = scalar(key, value)?,
        "enumeration_threshold" => p.enumeration_threshold = scalar(key, value)?,
        "seed" => p.seed = scalar(key, value)?,
        "start_level" => p.start_level = Some(scalar(key, value)?),
        "restriction" => {
            p.restriction = match value {
                "none" => VarianceRestriction::None,
                "homogeneous" => VarianceRestriction::Homogeneous,
                _ => {
                    let parts: Vec<&str> = value.split(':').collect();
                    if parts.len() != 3 || parts[0] != "truncate" {
                        return Err(ConfigError::Value { key: key.into(), value: value.into() });
                    }
                    VarianceRestriction::Truncate { lo: scalar(key, parts[1])?, hi: scalar(key, parts[2])? }
                }
            }
        }
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}
