//! Runs every estimation mode over a set of sequences and seeds.

use super::metrics::otb_metrics;
use super::sequence::Sequence;
use crate::estimator::EstimationMode;
use crate::tracker::{run, TrackerConfig, TrackerError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: EstimationMode,
    pub runs: usize,
    pub mean_precision_at_20: f64,
    pub mean_auc: f64,
}

/// Per-run result, kept for callers that want more than the means.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScore {
    pub mode: EstimationMode,
    pub sequence: usize,
    pub seed: u64,
    pub precision_at_20: f64,
    pub auc: f64,
}

/// Tracks every `(mode, sequence, seed)` combination. Runs execute in
/// parallel; results come back in `(mode, sequence, seed)` order.
pub fn run_grid(
    sequences: &[Sequence],
    base: &TrackerConfig,
    seeds: &[u64],
    modes: &[EstimationMode],
) -> Result<Vec<RunScore>, TrackerError> {
    let jobs: Vec<(EstimationMode, usize, u64)> = modes
        .iter()
        .flat_map(|&m| (0..sequences.len()).flat_map(move |s| seeds.iter().map(move |&seed| (m, s, seed))))
        .collect();
    jobs.par_iter()
        .map(|&(mode, s, seed)| {
            let seq = &sequences[s];
            let cfg = TrackerConfig { mode, seed, ..*base };
            let (traj, _) = run(&seq.frames, seq.ground_truth[0], cfg)?;
            let r = otb_metrics(&traj, &seq.ground_truth).expect("trajectory covers the sequence");
            Ok(RunScore {
                mode,
                sequence: s,
                seed,
                precision_at_20: r.precision_at_20,
                auc: r.auc,
            })
        })
        .collect()
}

/// Mean precision@20 and AUC per mode, in the order of `modes`.
pub fn summarize(scores: &[RunScore], modes: &[EstimationMode]) -> Vec<AblationRow> {
    modes
        .iter()
        .map(|&mode| {
            let mine: Vec<&RunScore> = scores.iter().filter(|r| r.mode == mode).collect();
            let n = mine.len().max(1) as f64;
            AblationRow {
                mode,
                runs: mine.len(),
                mean_precision_at_20: mine.iter().map(|r| r.precision_at_20).sum::<f64>() / n,
                mean_auc: mine.iter().map(|r| r.auc).sum::<f64>() / n,
            }
        })
        .collect()
}

/// All five modes over `sequences` x `seeds`.
pub fn ablate(sequences: &[Sequence], base: &TrackerConfig, seeds: &[u64]) -> Result<Vec<AblationRow>, TrackerError> {
    let scores = run_grid(sequences, base, seeds, &EstimationMode::ALL)?;
    Ok(summarize(&scores, &EstimationMode::ALL))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mode,runs,precision_at_20,auc\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.mode, r.runs, r.mean_precision_at_20, r.mean_auc
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_means_per_mode() {
        let s = |mode, p, a| RunScore { mode, sequence: 0, seed: 0, precision_at_20: p, auc: a };
        let scores = vec![
            s(EstimationMode::Tcnn, 1.0, 0.5),
            s(EstimationMode::Tcnn, 0.5, 0.3),
            s(EstimationMode::LinearSingle, 0.2, 0.1),
        ];
        let rows = summarize(&scores, &[EstimationMode::Tcnn, EstimationMode::LinearSingle]);
        assert_eq!(rows[0].runs, 2);
        assert!((rows[0].mean_precision_at_20 - 0.75).abs() < 1e-15);
        assert!((rows[0].mean_auc - 0.4).abs() < 1e-15);
        let csv = ablation_csv(&rows);
        assert_eq!(
            csv,
            "mode,runs,precision_at_20,auc\nTCNN,2,0.750000,0.400000\nLinear_single,1,0.200000,0.100000\n"
        );
    }
}
