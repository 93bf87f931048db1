use crate::geometry::{format_boxes, read_ground_truth, BoundingBox, GroundTruthError};
use crate::image::{frame_file_name, list_frame_files, Frame, ImageError};
use std::path::Path;
use thiserror::Error;

pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("sequence has {frames} frames but {boxes} ground-truth boxes")]
    Length { frames: usize, boxes: usize },
    #[error("sequence is empty")]
    Empty,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("ground truth: {0}")]
    GroundTruth(#[from] GroundTruthError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frames with one ground-truth box each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub ground_truth: Vec<BoundingBox>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<Frame>, ground_truth: Vec<BoundingBox>) -> Result<Self, SequenceError> {
        if frames.len() != ground_truth.len() {
            return Err(SequenceError::Length {
                frames: frames.len(),
                boxes: ground_truth.len(),
            });
        }
        if frames.is_empty() {
            return Err(SequenceError::Empty);
        }
        Ok(Self {
            name: name.into(),
            frames,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads `NNNNNN.pgm|ppm` frames and `groundtruth.txt` from `dir`.
    pub fn load_dir(dir: &Path, one_based: bool) -> Result<Self, SequenceError> {
        let files = list_frame_files(dir)?;
        let frames = files
            .iter()
            .map(|p| Frame::read_pnm(p))
            .collect::<Result<Vec<_>, _>>()?;
        let gt = read_ground_truth(&dir.join(GROUND_TRUTH_FILE), one_based)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        Self::new(name, frames, gt)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), SequenceError> {
        std::fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            f.write_pnm(&dir.join(frame_file_name(i, f.channels())))?;
        }
        std::fs::write(dir.join(GROUND_TRUTH_FILE), format_boxes(&self.ground_truth))?;
        Ok(())
    }
}
