//! Re-initialization protocol.
//!
//! The tracker runs until its box stops overlapping the ground truth. That
//! frame is a failure; the tracker is restarted from the ground truth
//! `reinit_delay` frames later, and the first `burn_in` frames after each
//! restart are left out of the accuracy average.

use super::metrics::{otb_metrics, EvalReport, VotSummary};
use super::sequence::Sequence;
use crate::geometry::{iou, BoundingBox};
use crate::image::Frame;
use crate::tracker::{TrackerConfig, TrackerError, TrackerSession};

/// Anything that can be (re)started on a frame and then fed frames.
pub trait SequenceTracker {
    fn start(&mut self, frame: &Frame, init: BoundingBox, frame_index: usize) -> Result<(), TrackerError>;
    fn update(&mut self, frame: &Frame) -> Result<BoundingBox, TrackerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VotProtocol {
    pub reinit_delay: usize,
    pub burn_in: usize,
}

impl Default for VotProtocol {
    fn default() -> Self {
        Self {
            reinit_delay: 5,
            burn_in: 10,
        }
    }
}

/// Outcome of one protocol run: the summary and, per frame, the reported
/// box (`None` for frames skipped while waiting for re-initialization).
#[derive(Debug, Clone, PartialEq)]
pub struct VotRun {
    pub summary: VotSummary,
    pub boxes: Vec<Option<BoundingBox>>,
}

pub fn vot_protocol<T: SequenceTracker>(
    tracker: &mut T,
    seq: &Sequence,
    protocol: VotProtocol,
) -> Result<VotRun, TrackerError> {
    let n = seq.len();
    let gt = &seq.ground_truth;
    let mut boxes = vec![None; n];
    let mut overlaps = Vec::new();
    let mut failure_frames = Vec::new();

    tracker.start(&seq.frames[0], gt[0], 0)?;
    boxes[0] = Some(gt[0]);
    // frames up to and including this index are excluded from accuracy
    let mut excluded_until = 0usize;
    let mut t = 1;
    while t < n {
        let b = tracker.update(&seq.frames[t])?;
        boxes[t] = Some(b);
        let o = iou(&b, &gt[t]);
        if o <= 0.0 {
            failure_frames.push(t);
            let restart = t + protocol.reinit_delay;
            if restart >= n {
                break;
            }
            tracker.start(&seq.frames[restart], gt[restart], restart)?;
            boxes[restart] = Some(gt[restart]);
            excluded_until = restart + protocol.burn_in;
            t = restart + 1;
            continue;
        }
        if t > excluded_until {
            overlaps.push(o);
        }
        t += 1;
    }
    let accuracy = if overlaps.is_empty() {
        None
    } else {
        Some(overlaps.iter().sum::<f64>() / overlaps.len() as f64)
    };
    Ok(VotRun {
        summary: VotSummary {
            accuracy,
            failures: failure_frames.len(),
            counted_frames: overlaps.len(),
            failure_frames,
        },
        boxes,
    })
}

/// Adapts [`TrackerSession`] to the protocol; each restart builds a fresh
/// session whose seed is offset by the restart frame.
pub struct SessionTracker {
    pub config: TrackerConfig,
    session: Option<TrackerSession>,
}

impl SessionTracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, session: None }
    }
}

impl SequenceTracker for SessionTracker {
    fn start(&mut self, frame: &Frame, init: BoundingBox, frame_index: usize) -> Result<(), TrackerError> {
        let config = TrackerConfig {
            seed: self.config.seed.wrapping_add(frame_index as u64),
            ..self.config
        };
        self.session = Some(TrackerSession::init(frame, init, config)?);
        Ok(())
    }

    fn update(&mut self, frame: &Frame) -> Result<BoundingBox, TrackerError> {
        self.session.as_mut().ok_or(TrackerError::NotInitialized)?.step(frame)
    }
}

/// Runs the tracker under the protocol and reports both VOT and OTB-style
/// figures. Skipped frames are scored against a zero-overlap placeholder in
/// the OTB part.
pub fn vot_run(config: &TrackerConfig, seq: &Sequence, protocol: VotProtocol) -> Result<EvalReport, TrackerError> {
    let mut tracker = SessionTracker::new(*config);
    let run = vot_protocol(&mut tracker, seq, protocol)?;
    let traj: Vec<BoundingBox> = run
        .boxes
        .iter()
        .zip(&seq.ground_truth)
        .map(|(b, g)| {
            b.unwrap_or(BoundingBox {
                x: g.x + 1e6,
                y: g.y + 1e6,
                ..*g
            })
        })
        .collect();
    let mut report = otb_metrics(&traj, &seq.ground_truth).expect("lengths agree");
    report.vot = Some(run.summary);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays fixed per-frame offsets from the ground truth.
    struct Scripted<'a> {
        gt: &'a [BoundingBox],
        far: bool,
        t: usize,
        starts: Vec<usize>,
    }

    impl SequenceTracker for Scripted<'_> {
        fn start(&mut self, _: &Frame, _: BoundingBox, i: usize) -> Result<(), TrackerError> {
            self.t = i;
            self.starts.push(i);
            Ok(())
        }

        fn update(&mut self, _: &Frame) -> Result<BoundingBox, TrackerError> {
            self.t += 1;
            let g = self.gt[self.t];
            Ok(if self.far {
                BoundingBox { x: g.x + 500.0, ..g }
            } else {
                g
            })
        }
    }

    fn blank_sequence(n: usize) -> Sequence {
        let frames = vec![Frame::filled(4, 4, 1, 0).unwrap(); n];
        let gt = (0..n).map(|i| BoundingBox { x: i as f64, y: 0.0, w: 2.0, h: 2.0 }).collect();
        Sequence::new("blank", frames, gt).unwrap()
    }

    #[test]
    fn perfect_tracker_never_fails() {
        let seq = blank_sequence(40);
        let mut t = Scripted { gt: &seq.ground_truth, far: false, t: 0, starts: vec![] };
        let run = vot_protocol(&mut t, &seq, VotProtocol::default()).unwrap();
        assert_eq!(run.summary.failures, 0);
        assert_eq!(run.summary.accuracy, Some(1.0));
        assert_eq!(run.summary.counted_frames, 39);
    }

    /// Independent step-by-step simulation of the protocol for a tracker
    /// that fails on every frame it is asked about.
    fn simulate_always_fail(n: usize, delay: usize) -> usize {
        let mut failures = 0;
        let mut next_eval = 1;
        while next_eval < n {
            failures += 1;
            next_eval += delay + 1;
        }
        failures
    }

    #[test]
    fn far_off_tracker_fails_after_every_restart() {
        for n in [1, 2, 6, 7, 8, 13, 25, 31, 60, 61] {
            let seq = blank_sequence(n);
            let mut t = Scripted { gt: &seq.ground_truth, far: true, t: 0, starts: vec![] };
            let run = vot_protocol(&mut t, &seq, VotProtocol::default()).unwrap();
            assert_eq!(run.summary.failures, simulate_always_fail(n, 5), "n={n}");
            // closed form: ceil((n - 1) / 6)
            assert_eq!(run.summary.failures, (n - 1).div_ceil(6), "n={n}");
            assert_eq!(run.summary.accuracy, None);
            let expect_starts: Vec<usize> =
                std::iter::once(0).chain(run.summary.failure_frames.iter().map(|f| f + 5).filter(|&r| r < n)).collect();
            assert_eq!(t.starts, expect_starts);
        }
    }

    #[test]
    fn burn_in_frames_are_excluded() {
        // fail once at frame 3, then track perfectly
        struct OneFailure<'a> {
            gt: &'a [BoundingBox],
            t: usize,
        }
        impl SequenceTracker for OneFailure<'_> {
            fn start(&mut self, _: &Frame, _: BoundingBox, i: usize) -> Result<(), TrackerError> {
                self.t = i;
                Ok(())
            }
            fn update(&mut self, _: &Frame) -> Result<BoundingBox, TrackerError> {
                self.t += 1;
                let g = self.gt[self.t];
                Ok(if self.t == 3 { BoundingBox { x: g.x + 50.0, ..g } } else { g })
            }
        }
        let seq = blank_sequence(30);
        let mut t = OneFailure { gt: &seq.ground_truth, t: 0 };
        let run = vot_protocol(&mut t, &seq, VotProtocol::default()).unwrap();
        assert_eq!(run.summary.failure_frames, vec![3]);
        // counted: frames 1, 2 and 19..=29 (restart at 8, burn-in 9..=18)
        assert_eq!(run.summary.counted_frames, 2 + 11);
        assert!(run.boxes[4..8].iter().all(Option::is_none));
    }
}
