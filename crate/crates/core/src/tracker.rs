//! The online tracking loop.
//!
//! A session is initialized on the first frame with a ground-truth box:
//! it collects labelled examples around the box, trains the root head and
//! fits the box regressor. Each later frame goes through
//!
//! 1. candidate sampling around the previous state,
//! 2. scoring every candidate with every active head,
//! 3. weighting, aggregation and argmax ([`crate::estimator`]),
//! 4. optional box regression, giving the frame's final estimate,
//! 5. collection of positive and negative examples around that estimate.
//!
//! Every `delta` frames the buffered frames become a new node: its parent
//! is chosen among the active nodes by the reliability it would inherit
//! (or is simply the newest node in the sequential modes), and its head is
//! fine-tuned from the parent's on the examples of both frame sets.

use crate::appearance::{AppearanceError, AppearanceHead, Label, SgdHyper, TrainingExample};
use crate::bbox_regression::{BoxRegressor, RegressionConfig, RegressionExample};
use crate::config::{ConfigError, KeyValues};
use crate::estimator::{estimate, EstimationMode, FrameEstimate, ScoreMatrix};
use crate::features::{FeatureError, FeatureExtractor, FeatureVector, PatchExtractor};
use crate::geometry::{box_to_state_with_base, iou, state_to_box_with_base, BoundingBox, TargetState};
use crate::image::Frame;
use crate::model_tree::{edge_score, ModelTree, NodeId, TreeError, TreeSnapshot};
use crate::rng::{streams, RngStream};
use crate::sampling::{draw_candidates, SamplingConfig, SamplingError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("ground-truth box {0} does not overlap the first frame")]
    InitBox(BoundingBox),
    #[error("buffer holds {actual} frames, node creation needs {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("session has not been initialized")]
    NotInitialized,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Appearance(#[from] AppearanceError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// How training examples are drawn around an estimated box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Positives overlap the estimate by more than this.
    pub iou_pos: f64,
    /// Negatives overlap the estimate by less than this.
    pub iou_neg: f64,
    /// Translation std of positive proposals, in units of the mean side.
    pub pos_sigma_xy: f64,
    /// Scale-index std of positive proposals.
    pub pos_sigma_s: f64,
    pub neg_sigma_xy: f64,
    pub neg_sigma_s: f64,
    /// Attempts allowed per requested example before accepting a shortfall.
    pub retry_factor: usize,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            n_pos: 50,
            n_neg: 200,
            iou_pos: 0.7,
            iou_neg: 0.5,
            pos_sigma_xy: 0.1,
            pos_sigma_s: 1.0,
            neg_sigma_xy: 1.0,
            neg_sigma_s: 2.0,
            retry_factor: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub sampling: SamplingConfig,
    pub initial_sgd: SgdHyper,
    pub online_sgd: SgdHyper,
    /// Frames per node.
    pub delta: usize,
    /// Active-set size.
    pub k: usize,
    pub collection: CollectionConfig,
    pub mode: EstimationMode,
    pub bbr: bool,
    pub regression: RegressionConfig,
    /// Hidden width of the heads.
    pub hidden: usize,
    /// Side of the resampled patch used by the built-in extractor.
    pub patch: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            initial_sgd: SgdHyper::initial(),
            online_sgd: SgdHyper::online(),
            delta: 10,
            k: 10,
            collection: CollectionConfig::default(),
            mode: EstimationMode::Tcnn,
            bbr: true,
            regression: RegressionConfig::default(),
            hidden: 512,
            patch: PatchExtractor::DEFAULT_PATCH,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    /// Default settings with narrow heads, for fast desk-scale runs.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.delta == 0 {
            return bad("delta must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.hidden == 0 || self.patch == 0 {
            return bad("hidden and patch must be positive");
        }
        let c = &self.collection;
        if !(c.iou_neg < c.iou_pos) {
            return bad("iou_neg must be below iou_pos");
        }
        if c.n_pos == 0 || c.n_neg == 0 {
            return bad("n_pos and n_neg must be positive");
        }
        self.sampling
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for h in [&self.initial_sgd, &self.online_sgd] {
            h.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies recognized keys from `kv`, leaving unknown keys in place.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<(), ConfigError> {
        kv.take_into("seed", &mut self.seed)?;
        kv.take_into("mode", &mut self.mode)?;
        kv.take_into("delta", &mut self.delta)?;
        kv.take_into("k", &mut self.k)?;
        kv.take_into("hidden", &mut self.hidden)?;
        kv.take_into("patch", &mut self.patch)?;
        kv.take_into("bbr", &mut self.bbr)?;
        kv.take_into("bbr_lambda", &mut self.regression.lambda)?;
        kv.take_into("bbr_min_iou", &mut self.regression.min_iou)?;
        kv.take_into("n_candidates", &mut self.sampling.n_candidates)?;
        kv.take_into("sigma_xy_factor", &mut self.sampling.sigma_xy_factor)?;
        kv.take_into("sigma_s", &mut self.sampling.sigma_s)?;
        kv.take_into("scale_base", &mut self.sampling.scale_base)?;
        let c = &mut self.collection;
        kv.take_into("n_pos", &mut c.n_pos)?;
        kv.take_into("n_neg", &mut c.n_neg)?;
        kv.take_into("iou_pos", &mut c.iou_pos)?;
        kv.take_into("iou_neg", &mut c.iou_neg)?;
        kv.take_into("retry_factor", &mut c.retry_factor)?;
        for (prefix, h) in [("init", &mut self.initial_sgd), ("online", &mut self.online_sgd)] {
            kv.take_into(&format!("{prefix}_lr"), &mut h.learning_rate)?;
            kv.take_into(&format!("{prefix}_iters"), &mut h.iterations)?;
            kv.take_into(&format!("{prefix}_batch_pos"), &mut h.batch_pos)?;
            kv.take_into(&format!("{prefix}_batch_neg"), &mut h.batch_neg)?;
        }
        if let Some(m) = kv.take::<f64>("momentum")? {
            self.initial_sgd.momentum = m;
            self.online_sgd.momentum = m;
        }
        if let Some(d) = kv.take::<f64>("weight_decay")? {
            self.initial_sgd.weight_decay = d;
            self.online_sgd.weight_decay = d;
        }
        Ok(())
    }
}

/// Per-frame diagnostics of the most recent [`TrackerSession::step`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub frame: usize,
    pub estimate: Option<FrameEstimate>,
    /// No candidate overlapped the frame; the previous box was repeated.
    pub lost: bool,
    /// Fewer examples than requested could be collected.
    pub shortfall: bool,
    pub new_node: Option<NodeId>,
    /// The new node's head could not be fine-tuned (a class was missing
    /// from its pool) and is an unmodified copy of its parent.
    pub untrained_node: bool,
}

#[derive(Debug, Clone)]
struct PendingFrame {
    index: usize,
    state_features: FeatureVector,
    examples: Vec<TrainingExample>,
}

/// Snapshot document: the model tree plus the configuration that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub config: TrackerConfig,
    pub extractor: String,
    pub frames_processed: usize,
    pub tree: TreeSnapshot,
}

pub struct TrackerSession {
    config: TrackerConfig,
    extractor: Arc<dyn FeatureExtractor>,
    init_size: (f64, f64),
    tree: ModelTree,
    /// Cached examples of nodes still in the active set, by node id.
    node_examples: BTreeMap<NodeId, Vec<TrainingExample>>,
    regressor: BoxRegressor,
    pending: Vec<PendingFrame>,
    trajectory: Vec<BoundingBox>,
    state: TargetState,
    rng_candidates: RngStream,
    rng_examples: RngStream,
    rng_training: RngStream,
    last: StepInfo,
    shortfall_frames: usize,
    lost_frames: usize,
}

impl std::fmt::Debug for TrackerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackerSession")
            .field("frames", &self.trajectory.len())
            .field("nodes", &self.tree.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl TrackerSession {
    /// Initializes with the built-in patch extractor.
    pub fn init(frame: &Frame, gt: BoundingBox, config: TrackerConfig) -> Result<Self, TrackerError> {
        let ex = Arc::new(PatchExtractor::new(config.patch, frame.channels()));
        Self::init_with_extractor(frame, gt, config, ex)
    }

    pub fn init_with_extractor(
        frame: &Frame,
        gt: BoundingBox,
        config: TrackerConfig,
        extractor: Arc<dyn FeatureExtractor>,
    ) -> Result<Self, TrackerError> {
        config.validate()?;
        let gt = BoundingBox::new(gt.x, gt.y, gt.w, gt.h).map_err(|_| TrackerError::InitBox(gt))?;
        match extractor.extract(frame, &gt) {
            Ok(_) => {}
            Err(FeatureError::OutsideFrame(_)) => return Err(TrackerError::InitBox(gt)),
            Err(e) => return Err(e.into()),
        }
        let seed = config.seed;
        let mut rng_examples = RngStream::new(seed, streams::EXAMPLES);
        let mut rng_training = RngStream::new(seed, streams::TRAINING);
        let base = config.sampling.scale_base;

        let (examples, shortfall) =
            collect_examples(extractor.as_ref(), frame, &gt, 0, &config.collection, base, &mut rng_examples);
        let mut head = AppearanceHead::new_random(
            extractor.dim(),
            config.hidden,
            &mut RngStream::new(seed, streams::INIT_WEIGHTS),
        );
        head.train(&examples, &config.initial_sgd, &mut rng_training)?;

        let regressor = if config.bbr {
            fit_regressor(extractor.as_ref(), frame, &gt, &config)
        } else {
            BoxRegressor::untrained()
        };

        let capacity = if config.mode == EstimationMode::LinearSingle { 1 } else { config.k };
        let tree = ModelTree::new(head, vec![0], capacity)?;
        Ok(Self {
            init_size: (gt.w, gt.h),
            state: box_to_state_with_base(&gt, gt.w, gt.h, base),
            node_examples: BTreeMap::from([(0, examples)]),
            tree,
            regressor,
            pending: Vec::new(),
            trajectory: vec![gt],
            rng_candidates: RngStream::new(seed, streams::CANDIDATES),
            rng_examples,
            rng_training,
            last: StepInfo {
                shortfall,
                ..StepInfo::default()
            },
            shortfall_frames: shortfall as usize,
            lost_frames: 0,
            config,
            extractor,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tree(&self) -> &ModelTree {
        &self.tree
    }

    pub fn regressor(&self) -> &BoxRegressor {
        &self.regressor
    }

    pub fn trajectory(&self) -> &[BoundingBox] {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Vec<BoundingBox> {
        self.trajectory
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.len()
    }

    pub fn last_step(&self) -> &StepInfo {
        &self.last
    }

    pub fn shortfall_frames(&self) -> usize {
        self.shortfall_frames
    }

    pub fn lost_frames(&self) -> usize {
        self.lost_frames
    }

    /// Examples cached for a node; dropped once the node leaves the active
    /// set.
    pub fn node_examples(&self, id: NodeId) -> Option<&[TrainingExample]> {
        self.node_examples.get(&id).map(Vec::as_slice)
    }

    fn to_box(&self, s: &TargetState) -> BoundingBox {
        state_to_box_with_base(s, self.init_size.0, self.init_size.1, self.config.sampling.scale_base)
    }

    /// Scores every candidate with every active head. Candidates without
    /// features score 0. Rows follow the active set order.
    pub fn score_candidates(&self, features: &[Option<FeatureVector>]) -> Result<ScoreMatrix, TrackerError> {
        let active = self.tree.active_ids();
        let present: Vec<(usize, &FeatureVector)> =
            features.iter().enumerate().filter_map(|(j, f)| f.as_ref().map(|f| (j, f))).collect();
        let batch: Vec<&FeatureVector> = present.iter().map(|&(_, f)| f).collect();
        let rows = active
            .par_iter()
            .map(|&id| self.tree.nodes()[id].head.score_batch(&batch))
            .collect::<Result<Vec<_>, AppearanceError>>()?;
        let n = features.len();
        let mut scores = vec![0.0; active.len() * n];
        for (r, row) in rows.iter().enumerate() {
            for (&(j, _), &s) in present.iter().zip(row) {
                scores[r * n + j] = s;
            }
        }
        Ok(ScoreMatrix::new(active, n, scores))
    }

    /// Tracks one frame and returns the estimated box.
    pub fn step(&mut self, frame: &Frame) -> Result<BoundingBox, TrackerError> {
        let index = self.trajectory.len();
        let prev = *self.trajectory.last().expect("trajectory starts with the init box");
        let mut info = StepInfo {
            frame: index,
            ..StepInfo::default()
        };

        let candidates = draw_candidates(
            &self.state,
            prev.mean_side(),
            &self.config.sampling,
            &mut self.rng_candidates,
        )?;
        let boxes: Vec<BoundingBox> = candidates.iter().map(|c| self.to_box(c)).collect();
        let extractor = self.extractor.as_ref();
        let features: Vec<Option<FeatureVector>> = boxes
            .par_iter()
            .map(|b| match extractor.extract(frame, b) {
                Ok(f) => Ok(Some(f)),
                Err(FeatureError::OutsideFrame(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_, _>>()?;

        let (estimate_box, state_features) = if features.iter().all(Option::is_none) {
            info.lost = true;
            self.lost_frames += 1;
            let f = extractor
                .extract(frame, &prev)
                .unwrap_or_else(|_| FeatureVector::zeros(extractor.dim()));
            (prev, f)
        } else {
            let matrix = self.score_candidates(&features)?;
            let rel: Vec<f64> = matrix
                .nodes
                .iter()
                .map(|&id| self.tree.nodes()[id].reliability)
                .collect();
            let est = estimate(&matrix, &rel, self.config.mode);
            let best = est.best_index;
            info.estimate = Some(est);
            let chosen = boxes[best];
            let cand_features = features[best].clone().expect("best candidate has features");
            if self.config.bbr && self.regressor.is_trained() {
                let refined = self.regressor.refine(&chosen, &cand_features);
                match extractor.extract(frame, &refined) {
                    Ok(f) => (refined, f),
                    Err(_) => (chosen, cand_features),
                }
            } else {
                (chosen, cand_features)
            }
        };

        self.state = box_to_state_with_base(
            &estimate_box,
            self.init_size.0,
            self.init_size.1,
            self.config.sampling.scale_base,
        );
        self.trajectory.push(estimate_box);

        let examples = if info.lost {
            Vec::new()
        } else {
            let (ex, shortfall) = collect_examples(
                extractor,
                frame,
                &estimate_box,
                index,
                &self.config.collection,
                self.config.sampling.scale_base,
                &mut self.rng_examples,
            );
            info.shortfall = shortfall;
            self.shortfall_frames += shortfall as usize;
            ex
        };
        self.pending.push(PendingFrame {
            index,
            state_features,
            examples,
        });
        if self.pending.len() == self.config.delta {
            let (id, untrained) = self.grow_inner()?;
            info.new_node = Some(id);
            info.untrained_node = untrained;
        }
        self.last = info;
        Ok(estimate_box)
    }

    /// Turns the buffered frames into a new node. Called automatically by
    /// [`step`](Self::step) once `delta` frames are buffered.
    pub fn grow(&mut self) -> Result<NodeId, TrackerError> {
        Ok(self.grow_inner()?.0)
    }

    fn grow_inner(&mut self) -> Result<(NodeId, bool), TrackerError> {
        if self.pending.len() != self.config.delta {
            return Err(TrackerError::BufferSize {
                expected: self.config.delta,
                actual: self.pending.len(),
            });
        }
        let pending = std::mem::take(&mut self.pending);
        let state_features: Vec<FeatureVector> = pending.iter().map(|p| p.state_features.clone()).collect();
        let mut tentative = BTreeMap::new();
        for id in self.tree.active() {
            tentative.insert(id, edge_score(&self.tree.nodes()[id].head, &state_features)?);
        }
        let parent = if self.config.mode.grows_tree() {
            self.tree.select_parent(&tentative)?
        } else {
            self.tree.newest()
        };

        let new_examples: Vec<TrainingExample> = pending.iter().flat_map(|p| p.examples.iter().cloned()).collect();
        let mut pool = new_examples.clone();
        if let Some(parent_examples) = self.node_examples.get(&parent) {
            pool.extend(parent_examples.iter().cloned());
        }
        let mut head = self.tree.nodes()[parent].head.clone();
        let untrained = match head.train(&pool, &self.config.online_sgd, &mut self.rng_training) {
            Ok(()) => false,
            Err(AppearanceError::EmptyClass(_)) => true,
            Err(e) => return Err(e.into()),
        };
        let frames = pending.iter().map(|p| p.index).collect();
        let id = self.tree.add_node(parent, head, frames, tentative[&parent])?;
        self.node_examples.insert(id, new_examples);
        let active = self.tree.active_ids();
        self.node_examples.retain(|k, _| active.contains(k));
        Ok((id, untrained))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            config: self.config,
            extractor: self.extractor.descriptor().name,
            frames_processed: self.trajectory.len(),
            tree: self.tree.to_snapshot(),
        }
    }

    pub fn snapshot_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes");
        s.push('\n');
        s
    }
}

/// Rejection-samples `n_pos` boxes overlapping `center` by more than
/// `iou_pos` and `n_neg` boxes overlapping it by less than `iou_neg`.
/// Returns the examples and whether either class fell short after
/// `retry_factor * n` attempts.
pub fn collect_examples(
    extractor: &dyn FeatureExtractor,
    frame: &Frame,
    center: &BoundingBox,
    frame_index: usize,
    cfg: &CollectionConfig,
    scale_base: f64,
    rng: &mut RngStream,
) -> (Vec<TrainingExample>, bool) {
    let (cx, cy) = center.center();
    let l = center.mean_side();
    let mut out = Vec::with_capacity(cfg.n_pos + cfg.n_neg);
    let mut short = false;
    let plan = [
        (Label::Positive, cfg.n_pos, cfg.pos_sigma_xy, cfg.pos_sigma_s),
        (Label::Negative, cfg.n_neg, cfg.neg_sigma_xy, cfg.neg_sigma_s),
    ];
    for (label, want, sxy, ss) in plan {
        // draw proposals serially (fixed rng order), extract in parallel
        let mut got = 0;
        let mut attempts = 0;
        let cap = want * cfg.retry_factor.max(1);
        while got < want && attempts < cap {
            let batch = (want - got).max(8).min(cap - attempts);
            let proposals: Vec<BoundingBox> = (0..batch)
                .map(|_| {
                    let k = scale_base.powf(rng.gaussian(0.0, ss));
                    let px = rng.gaussian(cx, sxy * l);
                    let py = rng.gaussian(cy, sxy * l);
                    let (w, h) = (center.w * k, center.h * k);
                    BoundingBox {
                        x: px - w / 2.0,
                        y: py - h / 2.0,
                        w,
                        h,
                    }
                })
                .collect();
            attempts += batch;
            let accepted: Vec<Option<FeatureVector>> = proposals
                .par_iter()
                .map(|p| {
                    let o = iou(p, center);
                    let ok = match label {
                        Label::Positive => o > cfg.iou_pos,
                        Label::Negative => o < cfg.iou_neg,
                    };
                    if ok {
                        extractor.extract(frame, p).ok()
                    } else {
                        None
                    }
                })
                .collect();
            for f in accepted.into_iter().flatten() {
                if got == want {
                    break;
                }
                out.push(TrainingExample {
                    features: f,
                    label,
                    frame: frame_index,
                });
                got += 1;
            }
        }
        short |= got < want;
    }
    (out, short)
}

/// Fits the box regressor on candidate-sampler proposals drawn around the
/// ground truth of the first frame.
pub fn fit_regressor(
    extractor: &dyn FeatureExtractor,
    frame: &Frame,
    gt: &BoundingBox,
    config: &TrackerConfig,
) -> BoxRegressor {
    let base = config.sampling.scale_base;
    let mut rng = RngStream::new(config.seed, streams::BBR_PROPOSALS);
    let start = box_to_state_with_base(gt, gt.w, gt.h, base);
    let Ok(cands) = draw_candidates(&start, gt.mean_side(), &config.sampling, &mut rng) else {
        return BoxRegressor::untrained();
    };
    let examples: Vec<RegressionExample> = cands
        .par_iter()
        .filter_map(|c| {
            let p = state_to_box_with_base(c, gt.w, gt.h, base);
            extractor.extract(frame, &p).ok().map(|f| RegressionExample {
                features: f,
                proposal: p,
                truth: *gt,
            })
        })
        .collect();
    BoxRegressor::fit(&examples, &config.regression)
}

/// Tracks a whole sequence from its first frame and ground-truth box.
pub fn run<'a, I>(frames: I, first_box: BoundingBox, config: TrackerConfig) -> Result<(Vec<BoundingBox>, TrackerSession), TrackerError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let mut it = frames.into_iter();
    let first = it.next().ok_or(TrackerError::EmptySequence)?;
    let mut session = TrackerSession::init(first, first_box, config)?;
    for f in it {
        session.step(f)?;
    }
    Ok((session.trajectory.clone(), session))
}
