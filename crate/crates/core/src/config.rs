//! Numerical tolerances and size limits for the sensitivity engine.

use crate::error::{NetDpError, Result};

/// Tolerance knobs for the pseudoinverse computations.
///
/// Parsed from a `key=value` config file by [`EngineConfig::from_key_values`];
/// unset keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Relative rank cutoff: singular/eigen values below
    /// `rank_rtol * largest_value` are treated as zero. `None` selects the
    /// standard cutoff `max_dim * machine_epsilon`.
    pub rank_rtol: Option<f64>,
    /// Relative residual tolerance for the range-membership check
    /// `‖G y − x̃‖ / ‖x̃‖`.
    pub range_rtol: f64,
    /// Maximum number of entries of the materialized observation operator the
    /// dense-SVD route will accept.
    pub dense_limit: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rank_rtol: None,
            range_rtol: 1e-8,
            dense_limit: 20_000_000,
        }
    }
}

impl EngineConfig {
    /// Effective rank cutoff relative to the largest singular/eigen value of a
    /// decomposition with maximum dimension `max_dim`.
    pub fn rank_cutoff(&self, max_dim: usize) -> f64 {
        self.rank_rtol
            .unwrap_or(max_dim as f64 * f64::EPSILON)
    }

    /// Parse `key=value` lines. Blank lines and `#` comments are ignored.
    ///
    /// Recognized keys: `rank_rtol`, `range_rtol`, `dense_limit`.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(NetDpError::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err = |msg: String| NetDpError::Parse {
                line: idx + 1,
                message: msg,
            };
            match key {
                "rank_rtol" => {
                    let v: f64 = value
                        .parse()
                        .map_err(|e| parse_err(format!("rank_rtol: {e}")))?;
                    cfg.rank_rtol = Some(v);
                }
                "range_rtol" => {
                    cfg.range_rtol = value
                        .parse()
                        .map_err(|e| parse_err(format!("range_rtol: {e}")))?;
                }
                "dense_limit" => {
                    cfg.dense_limit = value
                        .parse()
                        .map_err(|e| parse_err(format!("dense_limit: {e}")))?;
                }
                other => {
                    return Err(parse_err(format!("unknown config key {other:?}")));
                }
            }
        }
        Ok(cfg)
    }
}
