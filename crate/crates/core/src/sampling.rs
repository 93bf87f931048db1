//! Candidate generation around the previous target state.

use crate::geometry::TargetState;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("n_candidates must be at least 1")]
    NoCandidates,
    #[error("{name} must be positive and finite, got {value}")]
    BadSigma { name: &'static str, value: f64 },
    #[error("side length must be positive, got {0}")]
    BadSide(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_candidates: usize,
    /// Translation std as a multiple of the mean box side `l`.
    pub sigma_xy_factor: f64,
    /// Std of the scale index.
    pub sigma_s: f64,
    pub scale_base: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_candidates: 256,
            sigma_xy_factor: 0.3,
            sigma_s: 0.5,
            scale_base: crate::geometry::SCALE_BASE,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.n_candidates == 0 {
            return Err(SamplingError::NoCandidates);
        }
        for (name, value) in [
            ("sigma_xy_factor", self.sigma_xy_factor),
            ("sigma_s", self.sigma_s),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SamplingError::BadSigma { name, value });
            }
        }
        Ok(())
    }
}

/// Draws `n_candidates` states from an axis-independent normal centered on
/// `prev`: `cx, cy ~ N(prev, (f*l)^2)`, `s ~ N(prev.s, sigma_s^2)`.
///
/// Draw order is fixed (cx, cy, s per candidate), which makes the output a
/// pure function of the stream state.
pub fn draw_candidates(
    prev: &TargetState,
    prev_side: f64,
    cfg: &SamplingConfig,
    rng: &mut RngStream,
) -> Result<Vec<TargetState>, SamplingError> {
    cfg.validate()?;
    if !(prev_side.is_finite() && prev_side > 0.0) {
        return Err(SamplingError::BadSide(prev_side));
    }
    let sxy = cfg.sigma_xy_factor * prev_side;
    Ok((0..cfg.n_candidates)
        .map(|_| {
            let cx = rng.gaussian(prev.cx, sxy);
            let cy = rng.gaussian(prev.cy, sxy);
            let s = rng.gaussian(prev.s, cfg.sigma_s);
            TargetState { cx, cy, s }
        })
        .collect())
}
