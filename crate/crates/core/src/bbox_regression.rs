//! Linear bounding-box refinement trained on the first frame.
//!
//! For a proposal `P` and ground truth `G` (center coordinates) the targets
//! are `dx = (Gx - Px) / Pw`, `dy = (Gy - Py) / Ph`, `dw = ln(Gw / Pw)`,
//! `dh = ln(Gh / Ph)`. Each target gets its own ridge regressor on the
//! proposal's features, with an unpenalized intercept.

use crate::features::FeatureVector;
use crate::geometry::{iou, BoundingBox};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub lambda: f64,
    /// Proposals must overlap the ground truth by more than this.
    pub min_iou: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            min_iou: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExample {
    pub features: FeatureVector,
    pub proposal: BoundingBox,
    pub truth: BoundingBox,
}

/// Regression targets `[dx, dy, dw, dh]` taking `proposal` to `truth`.
pub fn box_deltas(proposal: &BoundingBox, truth: &BoundingBox) -> [f64; 4] {
    let (px, py) = proposal.center();
    let (gx, gy) = truth.center();
    [
        (gx - px) / proposal.w,
        (gy - py) / proposal.h,
        (truth.w / proposal.w).ln(),
        (truth.h / proposal.h).ln(),
    ]
}

/// Inverse of [`box_deltas`].
pub fn apply_deltas(proposal: &BoundingBox, d: &[f64; 4]) -> BoundingBox {
    let (px, py) = proposal.center();
    let cx = px + proposal.w * d[0];
    let cy = py + proposal.h * d[1];
    let w = proposal.w * d[2].exp();
    let h = proposal.h * d[3].exp();
    BoundingBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoxRegressor {
    /// One `(weights, bias)` per target; empty when untrained.
    models: Vec<(Vec<f64>, f64)>,
    lambda: f64,
    /// Number of examples that passed the overlap gate.
    pub used: usize,
}

impl BoxRegressor {
    pub fn untrained() -> Self {
        Self::default()
    }

    pub fn is_trained(&self) -> bool {
        !self.models.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(weights, intercept)` for dx, dy, dw, dh; empty when untrained.
    pub fn coefficients(&self) -> &[(Vec<f64>, f64)] {
        &self.models
    }

    /// Fits the four ridge models on the examples whose proposal passes the
    /// overlap gate. With no such example the regressor stays untrained and
    /// [`refine`](Self::refine) is the identity.
    pub fn fit(examples: &[RegressionExample], cfg: &RegressionConfig) -> Self {
        let kept: Vec<&RegressionExample> = examples
            .iter()
            .filter(|e| iou(&e.proposal, &e.truth) > cfg.min_iou)
            .collect();
        let Some(first) = kept.first() else {
            return Self {
                lambda: cfg.lambda,
                ..Self::default()
            };
        };
        let d = first.features.dim();
        let kept: Vec<_> = kept.into_iter().filter(|e| e.features.dim() == d).collect();
        let n = kept.len();
        let x = DMatrix::from_fn(n, d, |i, j| kept[i].features.as_slice()[j]);
        let targets: Vec<[f64; 4]> = kept.iter().map(|e| box_deltas(&e.proposal, &e.truth)).collect();
        let models = (0..4)
            .map(|k| {
                let y = DVector::from_fn(n, |i, _| targets[i][k]);
                ridge(&x, &y, cfg.lambda)
            })
            .collect();
        Self {
            models,
            lambda: cfg.lambda,
            used: n,
        }
    }

    pub fn predict(&self, f: &FeatureVector) -> [f64; 4] {
        let mut d = [0.0; 4];
        if !self.is_trained() {
            return d;
        }
        for (out, (w, b)) in d.iter_mut().zip(&self.models) {
            *out = b + w.iter().zip(f.as_slice()).map(|(a, x)| a * x).sum::<f64>();
        }
        d
    }

    pub fn refine(&self, bbox: &BoundingBox, f: &FeatureVector) -> BoundingBox {
        if !self.is_trained() || f.dim() != self.models[0].0.len() {
            return *bbox;
        }
        apply_deltas(bbox, &self.predict(f))
    }
}

/// Ridge regression with an unpenalized intercept:
/// `w = (Xc'Xc + lambda I)^-1 Xc'yc`, `b = mean(y) - mean(x)'w`
/// where `Xc`, `yc` are the column-centered data.
fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (Vec<f64>, f64) {
    let (n, d) = x.shape();
    let x_mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let y_mean = y.mean();
    let mut xc = x.clone();
    for j in 0..d {
        let m = x_mean[j];
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        // singular only when lambda == 0 and the data is rank-deficient
        None => gram
            .pseudo_inverse(1e-12)
            .map(|p| p * &rhs)
            .unwrap_or_else(|_| DVector::zeros(d)),
    };
    let b = if n > 0 { y_mean - x_mean.dot(&w) } else { 0.0 };
    (w.iter().copied().collect(), b)
}
