//! Minimal binary PNM (P5/P6) image I/O.
//!
//! Images are held as grayscale intensities in `[0, 1]`; color PPM input is
//! collapsed to luma on read, and writing quantizes back to 8-bit. Only
//! `maxval = 255` files are supported, which covers every camera image this
//! pipeline touches.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug)]
pub enum PnmError {
    /// The file does not start with `P5` or `P6`.
    BadMagic { found: [u8; 2] },
    /// A header token was missing or not a number.
    BadHeader { what: &'static str },
    /// Only 8-bit images (`maxval = 255`) are supported.
    UnsupportedMaxval { maxval: u32 },
    /// The pixel payload ended early.
    Truncated { expected: usize, found: usize },
    /// Bytes remain after the pixel payload.
    TrailingData { extra: usize },
    Io(std::io::Error),
}

impl fmt::Display for PnmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnmError::BadMagic { found } => {
                write!(f, "bad magic {:?}, expected P5 or P6", found)
            }
            PnmError::BadHeader { what } => write!(f, "bad or missing header field: {what}"),
            PnmError::UnsupportedMaxval { maxval } => {
                write!(f, "unsupported maxval {maxval}, only 255 is accepted")
            }
            PnmError::Truncated { expected, found } => {
                write!(f, "truncated pixel data: expected {expected} bytes, found {found}")
            }
            PnmError::TrailingData { extra } => {
                write!(f, "{extra} trailing bytes after pixel data")
            }
            PnmError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for PnmError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PnmError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for PnmError {
    fn from(e: std::io::Error) -> Self {
        PnmError::Io(e)
    }
}

/// A grayscale image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Wraps row-major intensities; values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        assert_eq!(pixels.len(), width * height, "pixel buffer length");
        for p in &mut pixels {
            assert!(p.is_finite(), "image intensities must be finite");
            *p = p.clamp(0.0, 1.0);
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite());
        self.pixels[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    /// Writes the image as binary PGM (`P5`, maxval 255).
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> Result<(), PnmError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm<P: AsRef<Path>>(&self, path: P) -> Result<(), PnmError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a binary PGM (`P5`) or PPM (`P6`) image. Color input is reduced to
/// grayscale with Rec.601 luma weights.
pub fn read_pnm<R: Read>(r: &mut R) -> Result<GrayImage, PnmError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_pnm(&bytes)
}

pub fn load_pnm<P: AsRef<Path>>(path: P) -> Result<GrayImage, PnmError> {
    let mut r = BufReader::new(File::open(path)?);
    read_pnm(&mut r)
}

fn parse_pnm(bytes: &[u8]) -> Result<GrayImage, PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::BadHeader { what: "magic" });
    }
    let magic = [bytes[0], bytes[1]];
    let color = match &magic {
        b"P5" => false,
        b"P6" => true,
        _ => return Err(PnmError::BadMagic { found: magic }),
    };

    let mut pos = 2;
    let mut next_token = |what: &'static str| -> Result<u32, PnmError> {
        // Skip whitespace and '#' comments that run to end of line.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(PnmError::BadHeader { what });
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PnmError::BadHeader { what })
    };

    let width = next_token("width")? as usize;
    let height = next_token("height")? as usize;
    let maxval = next_token("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval { maxval });
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader { what: "zero dimension" });
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::BadHeader { what: "header terminator" }),
    }

    let samples = width * height * if color { 3 } else { 1 };
    let payload = &bytes[pos..];
    if payload.len() < samples {
        return Err(PnmError::Truncated {
            expected: samples,
            found: payload.len(),
        });
    }
    if payload.len() > samples {
        return Err(PnmError::TrailingData {
            extra: payload.len() - samples,
        });
    }

    let pixels = if color {
        payload
            .chunks_exact(3)
            .map(|rgb| {
                (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0
            })
            .collect()
    } else {
        payload.iter().map(|&b| b as f64 / 255.0).collect()
    };
    Ok(GrayImage::new(width, height, pixels))
}
