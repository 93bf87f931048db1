//! Feature extraction and the `TFV1` feature-file format.
//!
//! The appearance heads never see pixels. A [`FeatureExtractor`] turns a
//! `(frame, box)` pair into a fixed-length [`FeatureVector`]; all training
//! examples are cached in that form. The bundled [`PatchExtractor`] crops
//! the box, resamples it bilinearly to `P x P`, and normalizes each channel
//! to zero mean and unit variance. Deep features computed elsewhere can be
//! exchanged through `TFV1` files.

use crate::geometry::BoundingBox;
use crate::image::Frame;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("box {0} does not overlap the frame")]
    OutsideFrame(BoundingBox),
    #[error("frame has {actual} channels, extractor expects {expected}")]
    Channels { expected: usize, actual: usize },
    #[error("feature length {actual}, expected {expected}")]
    Dim { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("bad magic {0:?}, expected \"TFV1\"")]
    BadMagic([u8; 4]),
    #[error("truncated payload: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("vector {index} has length {actual}, expected {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const TFV1_MAGIC: &[u8; 4] = b"TFV1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractorDescriptor {
    pub name: String,
    pub dim: usize,
}

/// Maps an image region to a feature vector. Implementations must be
/// deterministic: the same frame and box always give the same vector.
pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> ExtractorDescriptor;

    fn extract(&self, frame: &Frame, bbox: &BoundingBox) -> Result<FeatureVector, FeatureError>;

    fn dim(&self) -> usize {
        self.descriptor().dim
    }
}

/// Normalized raw-pixel patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchExtractor {
    patch: usize,
    channels: usize,
}

impl PatchExtractor {
    pub const DEFAULT_PATCH: usize = 16;

    pub fn new(patch: usize, channels: usize) -> Self {
        assert!(patch > 0, "patch size must be positive");
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Self { patch, channels }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }
}

impl FeatureExtractor for PatchExtractor {
    fn descriptor(&self) -> ExtractorDescriptor {
        ExtractorDescriptor {
            name: format!("patch{}x{}c{}", self.patch, self.patch, self.channels),
            dim: self.patch * self.patch * self.channels,
        }
    }

    fn extract(&self, frame: &Frame, bbox: &BoundingBox) -> Result<FeatureVector, FeatureError> {
        if frame.channels() != self.channels {
            return Err(FeatureError::Channels {
                expected: self.channels,
                actual: frame.channels(),
            });
        }
        let mut v = resample_bilinear(frame, bbox, self.patch)?;
        normalize_channels(&mut v, self.channels);
        Ok(FeatureVector(v))
    }
}

/// Samples `bbox` on a `size x size` grid with bilinear interpolation.
///
/// Output pixel `(i, j)` reads the frame at the continuous point
/// `bbox.x + (j + 0.5) * bbox.w / size` (likewise for y), where source pixel
/// `k` has its center at `k + 0.5`. Points outside the frame read as zero;
/// points inside but beyond the outermost pixel centers clamp to the edge.
/// Output is interleaved by channel, row-major, as raw intensities.
pub fn resample_bilinear(frame: &Frame, bbox: &BoundingBox, size: usize) -> Result<Vec<f64>, FeatureError> {
    let (fw, fh) = (frame.width() as f64, frame.height() as f64);
    let frame_box = BoundingBox {
        x: 0.0,
        y: 0.0,
        w: fw,
        h: fh,
    };
    if bbox.intersection_area(&frame_box) <= 0.0 {
        return Err(FeatureError::OutsideFrame(*bbox));
    }
    let ch = frame.channels();
    let mut out = vec![0.0; size * size * ch];
    let axis = |origin: f64, extent: f64, limit: f64, k: usize| -> Option<(usize, usize, f64)> {
        let u = origin + (k as f64 + 0.5) * extent / size as f64;
        if u < 0.0 || u >= limit {
            return None;
        }
        let f = (u - 0.5).clamp(0.0, limit - 1.0);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(limit as usize - 1);
        Some((i0, i1, f - i0 as f64))
    };
    let cols: Vec<_> = (0..size).map(|j| axis(bbox.x, bbox.w, fw, j)).collect();
    for i in 0..size {
        let Some((y0, y1, ty)) = axis(bbox.y, bbox.h, fh, i) else {
            continue;
        };
        for (j, col) in cols.iter().enumerate() {
            let Some((x0, x1, tx)) = *col else {
                continue;
            };
            for c in 0..ch {
                let p00 = frame.get(x0, y0, c) as f64;
                let p01 = frame.get(x1, y0, c) as f64;
                let p10 = frame.get(x0, y1, c) as f64;
                let p11 = frame.get(x1, y1, c) as f64;
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                out[(i * size + j) * ch + c] = top + (bot - top) * ty;
            }
        }
    }
    Ok(out)
}

/// Zero-mean, unit-variance per channel; near-constant channels become 0.
pub fn normalize_channels(v: &mut [f64], channels: usize) {
    let n = v.len() / channels;
    for c in 0..channels {
        let mean = v.iter().skip(c).step_by(channels).sum::<f64>() / n as f64;
        let var = v
            .iter()
            .skip(c)
            .step_by(channels)
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        for x in v.iter_mut().skip(c).step_by(channels) {
            *x = (*x - mean) * inv;
        }
    }
}

/// Writes vectors as `TFV1`: magic, u32 count, u32 dim, then `count * dim`
/// little-endian f32 values.
pub fn write_feature_file<W: Write>(mut w: W, vectors: &[FeatureVector]) -> Result<(), FeatureFileError> {
    let dim = vectors.first().map_or(0, FeatureVector::dim);
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.dim() != dim) {
        return Err(FeatureFileError::DimMismatch {
            index,
            expected: dim,
            actual: v.dim(),
        });
    }
    let mut buf = Vec::with_capacity(12 + vectors.len() * dim * 4);
    buf.extend_from_slice(TFV1_MAGIC);
    buf.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in vectors {
        for &x in v.as_slice() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a `TFV1` file. When `expected_dim` is given, a file with any other
/// dimension is rejected.
pub fn read_feature_file<R: Read>(
    mut r: R,
    expected_dim: Option<usize>,
) -> Result<(usize, usize, Vec<FeatureVector>), FeatureFileError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        if bytes.len() >= 4 && &bytes[..4] != TFV1_MAGIC {
            return Err(FeatureFileError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(FeatureFileError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != TFV1_MAGIC {
        return Err(FeatureFileError::BadMagic(magic));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(FeatureFileError::DimMismatch {
                index: 0,
                expected,
                actual: dim,
            });
        }
    }
    let payload = &bytes[12..];
    let need = count * dim * 4;
    if payload.len() < need {
        return Err(FeatureFileError::Truncated {
            expected: need,
            actual: payload.len(),
        });
    }
    let vectors = payload[..need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect::<Vec<_>>()
        .chunks(dim.max(1))
        .take(count)
        .map(|c| FeatureVector(c.to_vec()))
        .collect::<Vec<_>>();
    let vectors = if dim == 0 {
        vec![FeatureVector(Vec::new()); count]
    } else {
        vectors
    };
    Ok((count, dim, vectors))
}

pub fn load_feature_file(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<(usize, usize, Vec<FeatureVector>), FeatureFileError> {
    read_feature_file(std::fs::File::open(path)?, expected_dim)
}

pub fn save_feature_file(path: &Path, vectors: &[FeatureVector]) -> Result<(), FeatureFileError> {
    write_feature_file(std::io::BufWriter::new(std::fs::File::create(path)?), vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn gradient_frame() -> Frame {
        let data = (0..40 * 30).map(|i| ((i * 7) % 251) as u8).collect();
        Frame::new(40, 30, 1, data).unwrap()
    }

    #[test]
    fn extraction_is_deterministic() {
        let f = gradient_frame();
        let ex = PatchExtractor::new(16, 1);
        let b = bx(3.3, 4.1, 17.5, 12.25);
        assert_eq!(ex.extract(&f, &b).unwrap(), ex.extract(&f, &b).unwrap());
        assert_eq!(ex.extract(&f, &b).unwrap().dim(), 256);
    }

    #[test]
    fn constant_patch_gives_zero_vector() {
        let f = Frame::filled(20, 20, 3, 77).unwrap();
        let v = PatchExtractor::new(8, 3).extract(&f, &bx(2.0, 2.0, 10.0, 10.0)).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalized_patch_has_zero_mean_unit_variance() {
        let v = PatchExtractor::new(16, 1)
            .extract(&gradient_frame(), &bx(5.0, 5.0, 20.0, 20.0))
            .unwrap();
        let n = v.dim() as f64;
        let mean = v.as_slice().iter().sum::<f64>() / n;
        let var = v.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkerboard_bilinear_oracle() {
        // [[0, 255], [255, 0]] sampled at 4x4: source coordinates along each
        // axis are -0.25, 0.25, 0.75, 1.25 -> clamped to 0, 0.25, 0.75, 1.
        let f = Frame::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        let got = resample_bilinear(&f, &bx(0.0, 0.0, 2.0, 2.0), 4).unwrap();
        let t = [0.0, 0.25, 0.75, 1.0];
        for (i, &ty) in t.iter().enumerate() {
            for (j, &tx) in t.iter().enumerate() {
                // bilinear over corners p00=0, p01=255, p10=255, p11=0
                let expected = 255.0 * (tx * (1.0 - ty) + (1.0 - tx) * ty);
                assert!((got[i * 4 + j] - expected).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn out_of_frame_region_is_zero_padded() {
        let f = Frame::filled(10, 10, 1, 200).unwrap();
        // left half of the box hangs off the frame
        let raw = resample_bilinear(&f, &bx(-10.0, 0.0, 20.0, 10.0), 4).unwrap();
        for row in raw.chunks(4) {
            assert_eq!(row, &[0.0, 0.0, 200.0, 200.0]);
        }
    }

    #[test]
    fn box_outside_frame_is_rejected() {
        let f = gradient_frame();
        let ex = PatchExtractor::new(4, 1);
        assert!(matches!(
            ex.extract(&f, &bx(100.0, 0.0, 5.0, 5.0)),
            Err(FeatureError::OutsideFrame(_))
        ));
        assert!(matches!(
            ex.extract(&f, &bx(-5.0, -5.0, 5.0, 5.0)),
            Err(FeatureError::OutsideFrame(_))
        ));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let f = Frame::filled(8, 8, 3, 1).unwrap();
        assert!(matches!(
            PatchExtractor::new(4, 1).extract(&f, &bx(0.0, 0.0, 4.0, 4.0)),
            Err(FeatureError::Channels { .. })
        ));
    }

    #[test]
    fn feature_file_round_trip() {
        let vs: Vec<_> = (0..3)
            .map(|i| FeatureVector::new((0..8).map(|j| (i * 8 + j) as f64 * 0.5 - 3.0).collect()))
            .collect();
        let mut buf = Vec::new();
        write_feature_file(&mut buf, &vs).unwrap();
        assert_eq!(&buf[..4], b"TFV1");
        assert_eq!(buf.len(), 12 + 3 * 8 * 4);
        let (count, dim, back) = read_feature_file(&buf[..], None).unwrap();
        assert_eq!((count, dim), (3, 8));
        assert_eq!(back, vs);
    }

    #[test]
    fn feature_file_errors() {
        let mut buf = Vec::new();
        write_feature_file(&mut buf, &[FeatureVector::zeros(4), FeatureVector::zeros(4)]).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_feature_file(&bad[..], None), Err(FeatureFileError::BadMagic(_))));

        // count says 2, only one record present
        let short = &buf[..12 + 16];
        assert!(matches!(
            read_feature_file(short, None),
            Err(FeatureFileError::Truncated { expected: 32, actual: 16 })
        ));

        assert!(matches!(
            read_feature_file(&buf[..], Some(5)),
            Err(FeatureFileError::DimMismatch { .. })
        ));
        assert!(matches!(
            write_feature_file(Vec::new(), &[FeatureVector::zeros(4), FeatureVector::zeros(3)]),
            Err(FeatureFileError::DimMismatch { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn feature_file_is_bit_lossless(
            raw in prop::collection::vec(prop::collection::vec(-1e6f32..1e6f32, 5), 0..6)
        ) {
            let vs: Vec<_> = raw
                .iter()
                .map(|r| FeatureVector::new(r.iter().map(|&x| x as f64).collect()))
                .collect();
            let mut a = Vec::new();
            write_feature_file(&mut a, &vs).unwrap();
            let (_, _, back) = read_feature_file(&a[..], None).unwrap();
            let mut b = Vec::new();
            write_feature_file(&mut b, &back).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back, vs);
        }
    }
}
