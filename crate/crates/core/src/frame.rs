//! Bayer-mosaic input frames and the 16-bit binary PGM container.
//!
//! A frame stores raw 16-bit sensor codes in RGGB mosaic order; the
//! photocurrent of a pixel is `i_max * raw / 65535`. Each 2x2 quad is one
//! array site carrying four input channels:
//!
//! | mosaic position    | channel |
//! |--------------------|---------|
//! | even row, even col | R  (0)  |
//! | even row, odd col  | G1 (1)  |
//! | odd row, even col  | G2 (2)  |
//! | odd row, odd col   | B  (3)  |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_FULL_SCALE: u16 = u16::MAX;
/// Input channels per site.
pub const CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerChannel {
    R,
    G1,
    G2,
    B,
}

impl BayerChannel {
    pub const ALL: [BayerChannel; CHANNELS] = [Self::R, Self::G1, Self::G2, Self::B];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Offset of this channel inside its 2x2 quad.
    #[inline]
    pub fn offset(self) -> (usize, usize) {
        let i = self.index();
        (i / 2, i % 2)
    }

    pub fn at(row: usize, col: usize) -> Self {
        Self::ALL[(row % 2) * 2 + col % 2]
    }
}

/// Mosaic pixel holding channel `ch` of site `(site_row, site_col)`.
#[inline]
pub fn site_pixel(site_row: usize, site_col: usize, ch: usize) -> (usize, usize) {
    (2 * site_row + ch / 2, 2 * site_col + ch % 2)
}

/// Photocurrent frame in RGGB mosaic layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerFrame {
    rows: usize,
    cols: usize,
    raw: Vec<u16>,
    i_max: f64,
}

impl BayerFrame {
    pub fn from_raw(rows: usize, cols: usize, raw: Vec<u16>, i_max: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!("empty frame {rows}x{cols}")));
        }
        if raw.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "frame {rows}x{cols} needs {} samples, got {}",
                rows * cols,
                raw.len()
            )));
        }
        if !(i_max.is_finite() && i_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "full-scale photocurrent must be positive, got {i_max}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            raw,
            i_max,
        })
    }

    pub fn dark(rows: usize, cols: usize, i_max: f64) -> Result<Self> {
        Self::from_raw(rows, cols, vec![0; rows * cols], i_max)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn i_max(&self) -> f64 {
        self.i_max
    }

    /// Same samples, different full-scale current.
    pub fn with_i_max(&self, i_max: f64) -> Result<Self> {
        Self::from_raw(self.rows, self.cols, self.raw.clone(), i_max)
    }

    pub fn raw_samples(&self) -> &[u16] {
        &self.raw
    }

    #[inline]
    pub fn raw(&self, row: usize, col: usize) -> u16 {
        self.raw[row * self.cols + col]
    }

    #[inline]
    pub fn x_norm(&self, row: usize, col: usize) -> f64 {
        f64::from(self.raw(row, col)) / f64::from(RAW_FULL_SCALE)
    }

    #[inline]
    pub fn photocurrent(&self, row: usize, col: usize) -> f64 {
        self.i_max * self.x_norm(row, col)
    }

    /// Site grid dimensions; requires an even mosaic.
    pub fn site_dims(&self) -> Result<(usize, usize)> {
        if !self.rows.is_multiple_of(2) || !self.cols.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "Bayer frame {}x{} is not a whole number of RGGB quads",
                self.rows, self.cols
            )));
        }
        Ok((self.rows / 2, self.cols / 2))
    }

    /// Copy surrounded by `pad_sites` dark sites on every side.
    pub fn padded(&self, pad_sites: usize) -> Self {
        if pad_sites == 0 {
            return self.clone();
        }
        let border = 2 * pad_sites;
        let (rows, cols) = (self.rows + 2 * border, self.cols + 2 * border);
        let mut raw = vec![0u16; rows * cols];
        for r in 0..self.rows {
            let dst = (r + border) * cols + border;
            raw[dst..dst + self.cols].copy_from_slice(&self.raw[r * self.cols..(r + 1) * self.cols]);
        }
        Self {
            rows,
            cols,
            raw,
            i_max: self.i_max,
        }
    }
}

/// Serializes samples as a binary 16-bit PGM (maxval 65535, big-endian).
pub fn encode_pgm(rows: usize, cols: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), rows * cols, "PGM sample count mismatch");
    let header = format!("P5\n{cols} {rows}\n65535\n");
    let mut out = Vec::with_capacity(header.len() + samples.len() * 2);
    out.extend_from_slice(header.as_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Parses a binary 16-bit PGM, returning `(rows, cols, samples)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format {
            offset: 0,
            message: "missing P5 magic".into(),
        });
    }
    let mut rd = HeaderReader { bytes, pos: 2 };
    if !rd.bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(rd.err("expected whitespace after magic"));
    }
    let cols = rd.number("width")?;
    let rows = rd.number("height")?;
    rd.skip_whitespace_and_comments();
    let maxval_at = rd.pos;
    let maxval = rd.number("maxval")?;
    if cols == 0 || rows == 0 {
        return Err(Error::Format {
            offset: maxval_at,
            message: format!("zero image dimension {cols}x{rows}"),
        });
    }
    if maxval != usize::from(RAW_FULL_SCALE) {
        return Err(Error::Format {
            offset: maxval_at,
            message: format!("maxval must be 65535, got {maxval}"),
        });
    }
    if !rd.bytes.get(rd.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(rd.err("expected single whitespace before raster"));
    }
    let data_start = rd.pos + 1;
    let needed = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| rd.err("image dimensions overflow"))?;
    let available = bytes.len() - data_start;
    if available < needed {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated raster: need {needed} bytes, found {available}"),
        });
    }
    if available > needed {
        return Err(Error::Format {
            offset: data_start + needed,
            message: format!("{} trailing bytes after raster", available - needed),
        });
    }
    let samples = bytes[data_start..]
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
        .collect();
    Ok((rows, cols, samples))
}

/// Loads a frame from a 16-bit PGM file.
pub fn load_frame(path: impl AsRef<Path>, i_max: f64) -> Result<BayerFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, &e))?;
    let (rows, cols, raw) = decode_pgm(&bytes)?;
    BayerFrame::from_raw(rows, cols, raw, i_max)
}

pub fn frame_to_pgm(frame: &BayerFrame) -> Vec<u8> {
    encode_pgm(frame.rows, frame.cols, &frame.raw)
}
