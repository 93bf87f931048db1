//! 8-bit frames and binary PGM/PPM (`P5`/`P6`) reading and writing.

use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("frame dimensions must be positive")]
    EmptyFrame,
    #[error("pnm: {0}")]
    Pnm(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Row-major interleaved 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyFrame);
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Encodes as binary PGM (1 channel) or PPM (3 channels).
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pnm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut p = PnmCursor { bytes, pos: 0 };
        let magic = p.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(ImageError::Pnm(format!("unsupported magic {other:?}"))),
        };
        let width = p.number()?;
        let height = p.number()?;
        let maxval = p.number()?;
        if maxval == 0 || maxval > 255 {
            return Err(ImageError::Pnm(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        p.pos += 1;
        let n = width * height * channels;
        let raster = bytes
            .get(p.pos..p.pos + n)
            .ok_or_else(|| ImageError::Pnm(format!("raster truncated: need {n} bytes")))?;
        let data = if maxval == 255 {
            raster.to_vec()
        } else {
            raster
                .iter()
                .map(|&v| ((v as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8)
                .collect()
        };
        Self::new(width, height, channels, data)
    }

    pub fn read_pnm(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_pnm(&bytes)
    }

    pub fn write_pnm(&self, path: &Path) -> Result<(), ImageError> {
        let io = |source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_pnm()).map_err(io)
    }
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn token(&mut self) -> Result<String, ImageError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), Some(b'\n') | None) {
                        self.pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(ImageError::Pnm("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(c) if !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize, ImageError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| ImageError::Pnm(format!("bad header number {t:?}")))
    }
}

/// Lists `NNNNNN.pgm` / `NNNNNN.ppm` files in a directory, sorted by name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, ImageError> {
    let rd = std::fs::read_dir(dir).map_err(|source| ImageError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn frame_file_name(index: usize, channels: usize) -> String {
    format!("{index:06}.{}", if channels == 1 { "pgm" } else { "ppm" })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_length_checked() {
        assert!(Frame::new(2, 2, 1, vec![0; 3]).is_err());
        assert!(Frame::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Frame::new(0, 2, 1, vec![]).is_err());
        assert!(Frame::new(2, 2, 3, vec![0; 12]).is_ok());
    }

    #[test]
    fn pnm_round_trip() {
        let gray = Frame::new(3, 2, 1, vec![0, 10, 20, 30, 40, 255]).unwrap();
        assert_eq!(Frame::from_pnm(&gray.to_pnm()).unwrap(), gray);
        let rgb = Frame::new(1, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(Frame::from_pnm(&rgb.to_pnm()).unwrap(), rgb);
    }

    #[test]
    fn pnm_header_comments_and_maxval() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        let f = Frame::from_pnm(&bytes).unwrap();
        assert_eq!(f.data(), &[0, 255]);
    }

    #[test]
    fn pnm_rejects_bad_input() {
        assert!(Frame::from_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(Frame::from_pnm(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(Frame::from_pnm(b"P5\n2").is_err());
    }
}
