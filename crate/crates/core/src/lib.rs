//! Tracking-by-detection with a tree of online-trained appearance models.
//!
//! The tracker keeps a tree of small classifier heads. Each head was
//! fine-tuned from its parent on a window of recent frames; the score of
//! the edge into a node measures how well the parent agreed with that
//! window, and a node's reliability is the weakest edge on its path from the
//! root. At every frame the most recent heads vote on sampled candidates,
//! each weighted by the smaller of its best candidate score and its
//! reliability.
//!
//! ```
//! use treetrack::bench::{gen_synthetic, otb_metrics, SynthConfig};
//! use treetrack::tracker::{run, TrackerConfig};
//!
//! let seq = gen_synthetic(&SynthConfig { length: 12, ..SynthConfig::easy(3) }).unwrap();
//! let config = TrackerConfig { hidden: 16, delta: 5, ..TrackerConfig::default() };
//! let (trajectory, session) = run(&seq.frames, seq.ground_truth[0], config).unwrap();
//! assert_eq!(trajectory.len(), 12);
//! assert_eq!(session.tree().len(), 1 + 11 / 5);
//! let report = otb_metrics(&trajectory, &seq.ground_truth).unwrap();
//! assert!(report.auc > 0.0);
//! ```

pub mod appearance;
pub mod bbox_regression;
pub mod bench;
pub mod cli;
pub mod config;
pub mod estimator;
pub mod features;
pub mod geometry;
pub mod image;
pub mod model_tree;
pub mod rng;
pub mod sampling;
pub mod tracker;

pub use appearance::{AppearanceHead, Label, SgdHyper, TrainingExample};
pub use bbox_regression::BoxRegressor;
pub use estimator::EstimationMode;
pub use features::{FeatureExtractor, FeatureVector, PatchExtractor};
pub use geometry::{BoundingBox, TargetState};
pub use image::Frame;
pub use model_tree::{ModelNode, ModelTree};
pub use rng::RngStream;
pub use tracker::{TrackerConfig, TrackerSession};
