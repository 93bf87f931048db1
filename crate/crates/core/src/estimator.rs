//! Per-frame state estimation from the active heads.
//!
//! For each active node `v` and candidate `i` the tracker has a score
//! `phi_v(x_i)`. The node's affinity is its best score over the candidates;
//! combined with the node's reliability it yields a weight, and the target
//! score of a candidate is the weighted mean of the node scores. The
//! estimate is the candidate with the highest target score.

use crate::model_tree::NodeId;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How node scores are combined, and (for the tracker) how the tree grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimationMode {
    /// Reliability-weighted mixture over a tree.
    Tcnn,
    /// Single best node by `min(affinity, reliability)`, tree updates.
    TreeMax,
    /// Uniform mixture, tree updates.
    TreeMean,
    /// Uniform mixture, sequential (chain) updates.
    LinearMean,
    /// One head, replaced at every update.
    LinearSingle,
}

impl EstimationMode {
    pub const ALL: [EstimationMode; 5] = [
        EstimationMode::LinearSingle,
        EstimationMode::LinearMean,
        EstimationMode::TreeMean,
        EstimationMode::TreeMax,
        EstimationMode::Tcnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimationMode::Tcnn => "TCNN",
            EstimationMode::TreeMax => "Tree_max",
            EstimationMode::TreeMean => "Tree_mean",
            EstimationMode::LinearMean => "Linear_mean",
            EstimationMode::LinearSingle => "Linear_single",
        }
    }

    /// Whether new nodes pick their parent by reliability (tree) rather than
    /// always extending the newest node (chain).
    pub fn grows_tree(self) -> bool {
        matches!(
            self,
            EstimationMode::Tcnn | EstimationMode::TreeMax | EstimationMode::TreeMean
        )
    }
}

impl fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "tcnn" => EstimationMode::Tcnn,
            "treemax" => EstimationMode::TreeMax,
            "treemean" => EstimationMode::TreeMean,
            "linearmean" => EstimationMode::LinearMean,
            "linearsingle" => EstimationMode::LinearSingle,
            _ => return Err(format!("unknown mode {s:?}")),
        })
    }
}

/// Node-by-candidate score matrix; row `r` belongs to `nodes[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub nodes: Vec<NodeId>,
    pub candidates: usize,
    pub scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(nodes: Vec<NodeId>, candidates: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), nodes.len() * candidates, "score matrix shape");
        Self {
            nodes,
            candidates,
            scores,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scores[r * self.candidates..(r + 1) * self.candidates]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// Aligned with [`ScoreMatrix::nodes`].
    pub values: Vec<f64>,
    /// Set when every `min(alpha, beta)` was zero and the uniform fallback
    /// was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub best_index: usize,
    pub best_score: f64,
    pub nodes: Vec<NodeId>,
    pub affinities: Vec<f64>,
    pub weights: Vec<f64>,
    pub fallback: bool,
    pub target_scores: Vec<f64>,
}

/// Best score of each node over all candidates.
pub fn affinities(m: &ScoreMatrix) -> Vec<f64> {
    (0..m.nodes.len())
        .map(|r| m.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Combination weights for the given mode. `affinity`, `reliability` and
/// `nodes` are aligned; `nodes` must be in creation order (oldest first)
/// so that ties resolve toward the newest node.
pub fn weights(affinity: &[f64], reliability: &[f64], mode: EstimationMode) -> Weights {
    assert_eq!(affinity.len(), reliability.len());
    let n = affinity.len();
    assert!(n > 0, "no active nodes");
    let uniform = || vec![1.0 / n as f64; n];
    let one_hot = |k: usize| {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    };
    let bottleneck: Vec<f64> = affinity.iter().zip(reliability).map(|(a, b)| a.min(*b)).collect();
    match mode {
        EstimationMode::Tcnn => {
            let total: f64 = bottleneck.iter().sum();
            if total > 0.0 {
                Weights {
                    values: bottleneck.iter().map(|m| m / total).collect(),
                    fallback: false,
                }
            } else {
                Weights {
                    values: uniform(),
                    fallback: true,
                }
            }
        }
        EstimationMode::TreeMean | EstimationMode::LinearMean => Weights {
            values: uniform(),
            fallback: false,
        },
        EstimationMode::TreeMax => {
            let mut best = 0;
            for (k, &m) in bottleneck.iter().enumerate() {
                if m >= bottleneck[best] {
                    best = k;
                }
            }
            Weights {
                values: one_hot(best),
                fallback: false,
            }
        }
        EstimationMode::LinearSingle => Weights {
            values: one_hot(n - 1),
            fallback: false,
        },
    }
}

/// Target score of each candidate: `sum_v w_v * phi_v(x_i)`.
pub fn aggregate(weights: &[f64], m: &ScoreMatrix) -> Vec<f64> {
    assert_eq!(weights.len(), m.nodes.len());
    let mut h = vec![0.0; m.candidates];
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (hi, s) in h.iter_mut().zip(m.row(r)) {
            *hi += w * s;
        }
    }
    h
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the full estimation for one frame.
pub fn estimate(m: &ScoreMatrix, reliability: &[f64], mode: EstimationMode) -> FrameEstimate {
    let aff = affinities(m);
    let w = weights(&aff, reliability, mode);
    let h = aggregate(&w.values, m);
    let best = argmax(&h);
    FrameEstimate {
        best_index: best,
        best_score: h[best],
        nodes: m.nodes.clone(),
        affinities: aff,
        weights: w.values,
        fallback: w.fallback,
        target_scores: h,
    }
}
