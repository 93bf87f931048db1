//! Axis-aligned boxes, the `(cx, cy, s)` state parameterization and the
//! localization metrics built on them.
//!
//! Boxes are real-valued: `x`/`y` name the top-left corner, `w`/`h` the
//! extent, all in 0-based pixel units. The scale index `s` of a
//! [`TargetState`] is relative to the size of the box the tracker was
//! initialized with: a state with index `s` has width `init_w * 1.05^s`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Base of the exponential scale parameterization.
pub const SCALE_BASE: f64 = 1.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box extent must be positive and finite (w={w}, h={h})")]
    Degenerate { w: f64, h: f64 },
    #[error("box origin must be finite (x={x}, y={y})")]
    NonFinite { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum GroundTruthError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Box { line: usize, source: BoxError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An axis-aligned bounding box with positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(BoxError::NonFinite { x, y });
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(BoxError::Degenerate { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from its center and extent.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Side length `l` used to scale the candidate sampler: the mean of
    /// width and height.
    pub fn mean_side(&self) -> f64 {
        0.5 * (self.w + self.h)
    }

    /// Smallest axis-aligned box enclosing a polygon given as
    /// `x1,y1,x2,y2,...` coordinates (VOT-style rotated annotations).
    pub fn enclosing(points: &[(f64, f64)]) -> Result<Self, BoxError> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(px, py) in points {
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Target hypothesis in `(cx, cy, s)` space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub cx: f64,
    pub cy: f64,
    pub s: f64,
}

impl TargetState {
    pub fn new(cx: f64, cy: f64, s: f64) -> Self {
        Self { cx, cy, s }
    }
}

/// Size of the initial target; anchors the scale index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSize {
    pub w: f64,
    pub h: f64,
}

impl ReferenceSize {
    pub fn of(b: &BoundingBox) -> Self {
        Self { w: b.w, h: b.h }
    }
}

pub fn state_to_box(state: &TargetState, init_w: f64, init_h: f64) -> BoundingBox {
    state_to_box_with_base(state, init_w, init_h, SCALE_BASE)
}

pub fn state_to_box_with_base(state: &TargetState, init_w: f64, init_h: f64, base: f64) -> BoundingBox {
    let k = base.powf(state.s);
    BoundingBox {
        x: state.cx - init_w * k / 2.0,
        y: state.cy - init_h * k / 2.0,
        w: init_w * k,
        h: init_h * k,
    }
}

/// Inverse of [`state_to_box`]. Anisotropic deformations are projected onto
/// the single scale axis through the geometric mean of the two size ratios.
pub fn box_to_state(b: &BoundingBox, init_w: f64, init_h: f64) -> TargetState {
    box_to_state_with_base(b, init_w, init_h, SCALE_BASE)
}

pub fn box_to_state_with_base(b: &BoundingBox, init_w: f64, init_h: f64, base: f64) -> TargetState {
    let (cx, cy) = b.center();
    let ratio = ((b.w / init_w) * (b.h / init_h)).sqrt();
    TargetState {
        cx,
        cy,
        s: ratio.ln() / base.ln(),
    }
}

/// Parses ground-truth annotations: one box per line, `x,y,w,h` separated
/// by commas, tabs or spaces. Eight-value lines are treated as polygons and
/// reduced to their enclosing box. With `one_based` set, coordinates are
/// shifted to the 0-based convention used internally.
pub fn parse_ground_truth(text: &str, one_based: bool) -> Result<Vec<BoundingBox>, GroundTruthError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split(|c: char| c == ',' || c == '\t' || c == ' ')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|e| GroundTruthError::Parse {
                    line,
                    msg: format!("bad number {t:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let shift = if one_based { 1.0 } else { 0.0 };
        let b = match values.len() {
            4 => BoundingBox::new(values[0] - shift, values[1] - shift, values[2], values[3]),
            8 => {
                let pts: Vec<_> = values
                    .chunks(2)
                    .map(|p| (p[0] - shift, p[1] - shift))
                    .collect();
                BoundingBox::enclosing(&pts)
            }
            n => {
                return Err(GroundTruthError::Parse {
                    line,
                    msg: format!("expected 4 or 8 values, found {n}"),
                })
            }
        }
        .map_err(|source| GroundTruthError::Box { line, source })?;
        out.push(b);
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path, one_based: bool) -> Result<Vec<BoundingBox>, GroundTruthError> {
    let text = std::fs::read_to_string(path)?;
    parse_ground_truth(&text, one_based)
}

/// Formats boxes as `x,y,w,h` lines (0-based), the trajectory format.
pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut s = String::with_capacity(boxes.len() * 32);
    for b in boxes {
        s.push_str(&b.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
        // inter = 50, union = 150
        let b = bx(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn center_error_examples() {
        let a = bx(-1.0, -1.0, 2.0, 2.0);
        let b = bx(2.0, 3.0, 2.0, 2.0);
        assert_eq!(center_error(&a, &a), 0.0);
        assert!((center_error(&a, &b) - 5.0).abs() < 1e-12);
        assert_eq!(center_error(&a, &b), center_error(&b, &a));
    }

    #[test]
    fn scale_examples() {
        let (w, h) = (30.0, 20.0);
        let s0 = state_to_box(&TargetState::new(50.0, 40.0, 0.0), w, h);
        assert_eq!(s0.w, w);
        assert_eq!(s0.h, h);
        assert_eq!(s0.center(), (50.0, 40.0));
        let s1 = state_to_box(&TargetState::new(0.0, 0.0, 1.0), w, h);
        assert!((s1.w - 1.05 * w).abs() < 1e-12);
        let sm = state_to_box(&TargetState::new(0.0, 0.0, -1.0), w, h);
        assert!((sm.w - w / 1.05).abs() < 1e-12);
    }

    #[test]
    fn box_to_state_examples() {
        let init = bx(10.0, 20.0, 30.0, 20.0);
        let st = box_to_state(&init, 30.0, 20.0);
        assert_eq!(st.s, 0.0);
        assert_eq!((st.cx, st.cy), (25.0, 30.0));
        let doubled = bx(0.0, 0.0, 60.0, 40.0);
        let st = box_to_state(&doubled, 30.0, 20.0);
        assert!((st.s - 2f64.ln() / 1.05f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_box_projects_to_geometric_mean() {
        // 2x wider, same height: ratio sqrt(2)
        let b = bx(0.0, 0.0, 20.0, 10.0);
        let st = box_to_state(&b, 10.0, 10.0);
        let back = state_to_box(&st, 10.0, 10.0);
        assert!((back.w - 2f64.sqrt() * 10.0).abs() < 1e-9);
        assert_eq!(back.center(), b.center());
    }

    #[test]
    fn parses_ground_truth_variants() {
        let text = "1,2,3,4\n5\t6\t7\t8\n\n9 10 11 12\n";
        let boxes = parse_ground_truth(text, false).unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[1], bx(5.0, 6.0, 7.0, 8.0));
        let one = parse_ground_truth("1,1,3,4", true).unwrap();
        assert_eq!(one[0], bx(0.0, 0.0, 3.0, 4.0));
        let poly = parse_ground_truth("0,0,4,1,3,5,-1,4", false).unwrap();
        assert_eq!(poly[0], bx(-1.0, 0.0, 5.0, 5.0));
        assert!(parse_ground_truth("1,2,3", false).is_err());
        assert!(parse_ground_truth("1,2,0,3", false).is_err());
        assert!(parse_ground_truth("1,2,x,3", false).is_err());
    }

    #[test]
    fn format_then_parse_preserves_boxes() {
        let boxes = vec![bx(0.5, 1.25, 3.0, 4.125), bx(-2.0, 7.0, 1e-3, 9.0)];
        let back = parse_ground_truth(&format_boxes(&boxes), false).unwrap();
        assert_eq!(back, boxes);
    }

    /// Counts unit cells covered by both / either integer box.
    fn raster_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), px: i32, py: i32| {
            px >= r.0 && px < r.0 + r.2 && py >= r.1 && py < r.1 + r.3
        };
        let (mut inter, mut union) = (0u32, 0u32);
        for py in -5..110 {
            for px in -5..110 {
                let (ia, ib) = (inside(a, px, py), inside(b, px, py));
                inter += (ia && ib) as u32;
                union += (ia || ib) as u32;
            }
        }
        inter as f64 / union as f64
    }

    proptest! {
        #[test]
        fn iou_matches_rasterization(
            ax in 0i32..50, ay in 0i32..50, aw in 1i32..=50, ah in 1i32..=50,
            bx_ in 0i32..50, by in 0i32..50, bw in 1i32..=50, bh in 1i32..=50,
        ) {
            let a = bx(ax as f64, ay as f64, aw as f64, ah as f64);
            let b = bx(bx_ as f64, by as f64, bw as f64, bh as f64);
            let oracle = raster_iou((ax, ay, aw, ah), (bx_, by, bw, bh));
            prop_assert!((iou(&a, &b) - oracle).abs() < 0.02);
        }

        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, aw in 0.1f64..40.0, ah in 0.1f64..40.0,
            bx_ in -50.0f64..50.0, by in -50.0f64..50.0, bw in 0.1f64..40.0, bh in 0.1f64..40.0,
        ) {
            let a = bx(ax, ay, aw, ah);
            let b = bx(bx_, by, bw, bh);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            if a != b {
                prop_assert!(v < 1.0);
            }
        }

        #[test]
        fn isotropic_round_trip(
            cx in -100.0f64..300.0, cy in -100.0f64..300.0, s in -30.0f64..30.0,
            iw in 1.0f64..80.0, ih in 1.0f64..80.0,
        ) {
            let b = state_to_box(&TargetState::new(cx, cy, s), iw, ih);
            let st = box_to_state(&b, iw, ih);
            let (bcx, bcy) = b.center();
            prop_assert_eq!((st.cx, st.cy), (bcx, bcy));
            prop_assert!((st.s - s).abs() < 1e-9);
            let again = state_to_box(&st, iw, ih);
            prop_assert!((again.w - b.w).abs() < 1e-9 * b.w.max(1.0));
        }
    }
}
