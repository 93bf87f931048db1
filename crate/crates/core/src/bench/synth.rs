//! Synthetic sequences with exact ground truth.
//!
//! A textured target random-walks over a static cluttered background. The
//! target texture switches between appearance modes on a schedule, and
//! occluders can cover part of it for a while. Everything is derived from
//! the config seed, so a config always renders the same pixels.

use super::sequence::{Sequence, SequenceError};
use crate::config::{ConfigError, KeyValues};
use crate::geometry::BoundingBox;
use crate::image::Frame;
use crate::rng::{streams, RngStream};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// An occluder covering the left `coverage` fraction of the target for
/// `duration` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub start: usize,
    pub duration: usize,
    pub coverage: f64,
}

impl FromStr for Occlusion {
    type Err = String;

    /// `start:duration:coverage`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected start:duration:coverage, got {s:?}"));
        };
        let err = |e: &dyn std::fmt::Display| format!("{s:?}: {e}");
        Ok(Self {
            start: a.trim().parse().map_err(|e| err(&e))?,
            duration: b.trim().parse().map_err(|e| err(&e))?,
            coverage: c.trim().parse().map_err(|e| err(&e))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub length: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Std of the per-frame random-walk step of the target center, pixels.
    pub motion_std: f64,
    pub modes: usize,
    /// Frames at which the target switches to the next mode (cyclically).
    pub mode_switches: Vec<usize>,
    /// Frames over which the texture cross-fades into the next mode; 0
    /// switches abruptly.
    pub transition: usize,
    pub occlusions: Vec<Occlusion>,
    /// Clutter patches per 10,000 background pixels.
    pub clutter_density: f64,
    /// Std of per-pixel sensor noise, intensity levels.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::easy(0)
    }
}

impl SynthConfig {
    /// Slow translation, a single appearance, no occlusion.
    pub fn easy(seed: u64) -> Self {
        Self {
            width: 120,
            height: 120,
            channels: 1,
            length: 60,
            target_w: 24.0,
            target_h: 24.0,
            motion_std: 1.0,
            modes: 1,
            mode_switches: Vec::new(),
            transition: 0,
            occlusions: Vec::new(),
            clutter_density: 3.0,
            noise_std: 3.0,
            seed,
        }
    }

    /// Two appearance modes (A, B, then A again) and one half occlusion
    /// during the return to A.
    pub fn multimodal(seed: u64) -> Self {
        Self {
            length: 80,
            motion_std: 1.5,
            modes: 2,
            mode_switches: vec![25, 50],
            transition: 10,
            occlusions: vec![Occlusion {
                start: 58,
                duration: 8,
                coverage: 0.5,
            }],
            clutter_density: 4.0,
            ..Self::easy(seed)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.length == 0 || self.modes == 0 {
            return bad("length and modes must be positive".into());
        }
        if !(self.target_w >= 2.0 && self.target_h >= 2.0) {
            return bad("target must be at least 2x2".into());
        }
        if self.target_w > self.width as f64 || self.target_h > self.height as f64 {
            return bad(format!(
                "target {}x{} larger than frame {}x{}",
                self.target_w, self.target_h, self.width, self.height
            ));
        }
        if self.occlusions.iter().any(|o| !(0.0..=1.0).contains(&o.coverage)) {
            return bad("occlusion coverage must be in [0, 1]".into());
        }
        Ok(())
    }

    /// Applies `synth.*`-style keys (prefix already stripped).
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<(), ConfigError> {
        kv.take_into("width", &mut self.width)?;
        kv.take_into("height", &mut self.height)?;
        kv.take_into("channels", &mut self.channels)?;
        kv.take_into("length", &mut self.length)?;
        kv.take_into("target_w", &mut self.target_w)?;
        kv.take_into("target_h", &mut self.target_h)?;
        kv.take_into("motion_std", &mut self.motion_std)?;
        kv.take_into("modes", &mut self.modes)?;
        kv.take_into("transition", &mut self.transition)?;
        kv.take_into("clutter_density", &mut self.clutter_density)?;
        kv.take_into("noise_std", &mut self.noise_std)?;
        kv.take_into("seed", &mut self.seed)?;
        if let Some(s) = kv.take::<String>("mode_switches")? {
            self.mode_switches = parse_list(&s, "mode_switches")?;
        }
        if let Some(s) = kv.take::<String>("occlusions")? {
            self.occlusions = parse_list(&s, "occlusions")?;
        }
        Ok(())
    }

    /// Appearance mode active at frame `t`.
    pub fn mode_at(&self, t: usize) -> usize {
        self.mode_switches.iter().filter(|&&s| s <= t).count() % self.modes
    }

    /// Texture mix at frame `t`: `(previous mode, current mode, weight of
    /// the current mode)`.
    pub fn blend_at(&self, t: usize) -> (usize, usize, f64) {
        let cur = self.mode_at(t);
        let last = self.mode_switches.iter().filter(|&&s| s <= t).max();
        match last {
            Some(&s) if s > 0 && t - s < self.transition => {
                (self.mode_at(s - 1), cur, (t - s + 1) as f64 / (self.transition + 1) as f64)
            }
            _ => (cur, cur, 1.0),
        }
    }
}

fn parse_list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.into(),
                value: t.into(),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// 4x4 grid of cell intensities (per channel) for one appearance mode.
struct Texture {
    cells: Vec<[f64; 3]>,
}

const TEXTURE_CELLS: usize = 4;

impl Texture {
    fn random(rng: &mut RngStream) -> Self {
        let cells = (0..TEXTURE_CELLS * TEXTURE_CELLS)
            .map(|_| {
                let base = rng.uniform_in(20.0, 235.0);
                [
                    base,
                    (base + rng.uniform_in(-40.0, 40.0)).clamp(0.0, 255.0),
                    (base + rng.uniform_in(-40.0, 40.0)).clamp(0.0, 255.0),
                ]
            })
            .collect();
        Self { cells }
    }

    /// Value at relative position `(u, v)` in `[0, 1)^2`.
    fn at(&self, u: f64, v: f64, c: usize) -> f64 {
        let i = ((v * TEXTURE_CELLS as f64) as usize).min(TEXTURE_CELLS - 1);
        let j = ((u * TEXTURE_CELLS as f64) as usize).min(TEXTURE_CELLS - 1);
        self.cells[i * TEXTURE_CELLS + j][c]
    }
}

/// Renders the sequence described by `cfg`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Sequence, SequenceError> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, streams::SYNTH);
    let (w, h, ch) = (cfg.width, cfg.height, cfg.channels);

    let background = render_background(cfg, &mut root.derive(1));
    let textures: Vec<Texture> = {
        let mut r = root.derive(2);
        (0..cfg.modes).map(|_| Texture::random(&mut r)).collect()
    };

    let mut walk = root.derive(3);
    let (tw, th) = (cfg.target_w, cfg.target_h);
    let (max_x, max_y) = (w as f64 - tw, h as f64 - th);
    let mut x = walk.uniform_in(0.25, 0.75) * max_x;
    let mut y = walk.uniform_in(0.25, 0.75) * max_y;
    let mut boxes = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        if t > 0 {
            x = reflect(x + walk.gaussian(0.0, cfg.motion_std), max_x);
            y = reflect(y + walk.gaussian(0.0, cfg.motion_std), max_y);
        }
        boxes.push(BoundingBox { x, y, w: tw, h: th });
    }

    let mut noise = root.derive(4);
    let mut frames = Vec::with_capacity(cfg.length);
    for (t, b) in boxes.iter().enumerate() {
        let (from, to, mix) = cfg.blend_at(t);
        let (tex_a, tex_b) = (&textures[from], &textures[to]);
        let occ = cfg
            .occlusions
            .iter()
            .filter(|o| t >= o.start && t < o.start + o.duration)
            .map(|o| o.coverage)
            .fold(0.0, f64::max);
        let mut data = vec![0u8; w * h * ch];
        for py in 0..h {
            for px in 0..w {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let inside = cx >= b.x && cx < b.right() && cy >= b.y && cy < b.bottom();
                for c in 0..ch {
                    let mut v = background[(py * w + px) * ch + c];
                    if inside {
                        let u = (cx - b.x) / b.w;
                        let vv = (cy - b.y) / b.h;
                        v = if u < occ {
                            128.0
                        } else {
                            (1.0 - mix) * tex_a.at(u, vv, c) + mix * tex_b.at(u, vv, c)
                        };
                    }
                    if cfg.noise_std > 0.0 {
                        v += noise.gaussian(0.0, cfg.noise_std);
                    }
                    data[(py * w + px) * ch + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        frames.push(Frame::new(w, h, ch, data)?);
    }
    Sequence::new(format!("synth-{}", cfg.seed), frames, boxes)
}

/// Keeps `v` in `[0, max]` by mirroring at the borders.
fn reflect(mut v: f64, max: f64) -> f64 {
    if max <= 0.0 {
        return 0.0;
    }
    for _ in 0..4 {
        if v < 0.0 {
            v = -v;
        } else if v > max {
            v = 2.0 * max - v;
        } else {
            break;
        }
    }
    v.clamp(0.0, max)
}

/// Smooth intensity field plus textured clutter patches.
fn render_background(cfg: &SynthConfig, rng: &mut RngStream) -> Vec<f64> {
    let (w, h, ch) = (cfg.width, cfg.height, cfg.channels);
    const GRID: usize = 6;
    let knots: Vec<f64> = (0..(GRID + 1) * (GRID + 1) * ch)
        .map(|_| rng.uniform_in(70.0, 170.0))
        .collect();
    let mut bg = vec![0.0; w * h * ch];
    for py in 0..h {
        let gy = py as f64 / h as f64 * GRID as f64;
        let (y0, ty) = (gy.floor() as usize, gy.fract());
        for px in 0..w {
            let gx = px as f64 / w as f64 * GRID as f64;
            let (x0, tx) = (gx.floor() as usize, gx.fract());
            for c in 0..ch {
                let k = |yy: usize, xx: usize| knots[(yy * (GRID + 1) + xx) * ch + c];
                let top = k(y0, x0) * (1.0 - tx) + k(y0, x0 + 1) * tx;
                let bot = k(y0 + 1, x0) * (1.0 - tx) + k(y0 + 1, x0 + 1) * tx;
                bg[(py * w + px) * ch + c] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    let patches = (cfg.clutter_density * (w * h) as f64 / 10_000.0).round() as usize;
    for _ in 0..patches {
        let pw = rng.uniform_in(0.3, 0.8) * cfg.target_w;
        let ph = rng.uniform_in(0.3, 0.8) * cfg.target_h;
        let x0 = rng.uniform_in(0.0, w as f64 - pw);
        let y0 = rng.uniform_in(0.0, h as f64 - ph);
        let tex = Texture::random(rng);
        for py in y0 as usize..((y0 + ph) as usize).min(h) {
            for px in x0 as usize..((x0 + pw) as usize).min(w) {
                let u = ((px as f64 - x0) / pw).clamp(0.0, 0.999);
                let v = ((py as f64 - y0) / ph).clamp(0.0, 0.999);
                for c in 0..ch {
                    bg[(py * w + px) * ch + c] = tex.at(u, v, c);
                }
            }
        }
    }
    bg
}
