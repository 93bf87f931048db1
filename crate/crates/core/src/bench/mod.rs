//! Evaluation bench: synthetic sequences, one-pass and re-initialization
//! metrics, and the mode ablation.

pub mod ablation;
pub mod metrics;
pub mod sequence;
pub mod synth;
pub mod vot;

pub use ablation::{ablate, ablation_csv, AblationRow};
pub use metrics::{otb_metrics, EvalReport, MetricsError, VotSummary};
pub use sequence::{Sequence, SequenceError};
pub use synth::{gen_synthetic, Occlusion, SynthConfig};
pub use vot::{vot_protocol, vot_run, SequenceTracker, SessionTracker, VotProtocol};
