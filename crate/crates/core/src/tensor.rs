//! Dense rank-3 tensors (channels x height x width) with bilinear sampling
//! and a small binary file format for exchanging feature maps.
//!
//! Values live in memory as `f64`, channel-outermost and row-major within a
//! channel. On disk they are stored at `f32` precision (format `FCT1` below).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Hard cap on `channels * height * width` so a corrupt header cannot ask us
/// to allocate terabytes. 2^28 elements is 2 GiB of `f64`, far beyond any
/// feature map this crate produces.
pub const MAX_ELEMENTS: u64 = 1 << 28;

const MAGIC: [u8; 4] = *b"FCT1";

/// Errors from tensor construction and `FCT1` I/O.
#[derive(Debug)]
pub enum TensorError {
    /// The file does not start with the `FCT1` magic bytes.
    BadMagic { found: [u8; 4] },
    /// The header or payload ended early. Counts are payload bytes (header
    /// bytes for files shorter than the 16-byte header).
    Truncated { expected: usize, found: usize },
    /// Bytes remain after the payload declared by the header.
    TrailingData { extra: usize },
    /// The declared shape exceeds [`MAX_ELEMENTS`].
    DimensionOverflow {
        channels: u32,
        height: u32,
        width: u32,
    },
    /// A tensor axis was zero; every axis must be at least 1.
    ZeroDimension {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// The provided buffer does not hold `channels * height * width` values.
    LengthMismatch { expected: usize, found: usize },
    /// A NaN or infinity at the given flat index.
    NonFinite { index: usize },
    Io(std::io::Error),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::BadMagic { found } => {
                write!(f, "bad magic {:?}, expected b\"FCT1\"", found)
            }
            TensorError::Truncated { expected, found } => {
                write!(f, "truncated tensor: expected {expected} bytes, found {found}")
            }
            TensorError::TrailingData { extra } => {
                write!(f, "{extra} trailing bytes after tensor payload")
            }
            TensorError::DimensionOverflow {
                channels,
                height,
                width,
            } => write!(
                f,
                "tensor shape {channels}x{height}x{width} exceeds the element limit"
            ),
            TensorError::ZeroDimension {
                channels,
                height,
                width,
            } => write!(f, "tensor shape {channels}x{height}x{width} has a zero axis"),
            TensorError::LengthMismatch { expected, found } => {
                write!(f, "expected {expected} values, got {found}")
            }
            TensorError::NonFinite { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            TensorError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for TensorError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TensorError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(e)
    }
}

/// A continuous image position in pixel units: `u` grows to the right, `v`
/// downward, and integer coordinates land on pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        ImagePoint { u, v }
    }
}

/// A dense `channels x height x width` array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Wraps `data` (channel-outermost, row-major) as a tensor, validating
    /// the shape, the length, and that every value is finite.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        check_shape(channels, height, width)?;
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    /// An all-zero tensor. Panics if any axis is zero.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
            .expect("zero tensor with positive dimensions is always valid")
    }

    /// Builds a tensor by evaluating `f(channel, row, col)` at every cell.
    pub fn from_fn<F>(
        channels: usize,
        height: usize,
        width: usize,
        mut f: F,
    ) -> Result<Self, TensorError>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        check_shape(channels, height, width)?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for v in 0..height {
                for u in 0..width {
                    data.push(f(c, v, u));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The raw values, channel-outermost and row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < self.channels && row < self.height && col < self.width);
        (channel * self.height + row) * self.width + col
    }

    /// Value at integer coordinates `(channel, row, col)`.
    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    /// Overwrites one cell. The value must be finite.
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "tensor values must be finite");
        let i = self.index(channel, row, col);
        self.data[i] = value;
    }

    /// Bilinear sample at a continuous position, one value per channel.
    ///
    /// Coordinates are clamped to the image rectangle before interpolation,
    /// so samples outside the bounds return the nearest border value instead
    /// of failing. `p` must be finite.
    pub fn bilinear_sample(&self, p: ImagePoint) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.bilinear_sample_into(p, &mut out);
        out
    }

    /// As [`bilinear_sample`](Self::bilinear_sample), writing into `out`
    /// (length `channels`) to avoid a per-call allocation in hot loops.
    pub fn bilinear_sample_into(&self, p: ImagePoint, out: &mut [f64]) {
        assert_eq!(out.len(), self.channels, "output slice has wrong length");
        debug_assert!(p.u.is_finite() && p.v.is_finite(), "sample at non-finite point");
        let u = p.u.clamp(0.0, (self.width - 1) as f64);
        let v = p.v.clamp(0.0, (self.height - 1) as f64);
        let u0 = u.floor() as usize;
        let v0 = v.floor() as usize;
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        for (c, slot) in out.iter_mut().enumerate() {
            let top = (1.0 - fu) * self.get(c, v0, u0) + fu * self.get(c, v0, u1);
            let bottom = (1.0 - fu) * self.get(c, v1, u0) + fu * self.get(c, v1, u1);
            *slot = (1.0 - fv) * top + fv * bottom;
        }
    }

    /// Serializes as `FCT1`: the 4 magic bytes, then `channels`, `height`,
    /// `width` as little-endian `u32`, then the values as little-endian `f32`
    /// in storage order. Nothing may follow the payload.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TensorError> {
        let (c, h, wd) = (self.channels, self.height, self.width);
        if c > u32::MAX as usize || h > u32::MAX as usize || wd > u32::MAX as usize {
            return Err(TensorError::DimensionOverflow {
                channels: c.min(u32::MAX as usize) as u32,
                height: h.min(u32::MAX as usize) as u32,
                width: wd.min(u32::MAX as usize) as u32,
            });
        }
        w.write_all(&MAGIC)?;
        w.write_all(&(c as u32).to_le_bytes())?;
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(wd as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &value in &self.data {
            buf.extend_from_slice(&(value as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads an `FCT1` stream to its end and parses it; see
    /// [`write_to`](Self::write_to) for the layout. Bad magic, short reads,
    /// trailing bytes, and oversized headers are reported as distinct errors.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, TensorError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Parses an in-memory `FCT1` image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 4 {
            return Err(TensorError::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        if bytes[0..4] != MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(&bytes[0..4]);
            return Err(TensorError::BadMagic { found });
        }
        if bytes.len() < 16 {
            return Err(TensorError::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        let dim = |offset: usize| {
            let mut raw = [0u8; 4];
            raw.copy_from_slice(&bytes[offset..offset + 4]);
            u32::from_le_bytes(raw)
        };
        let (c, h, w) = (dim(4), dim(8), dim(12));
        let elements = (c as u64)
            .checked_mul(h as u64)
            .and_then(|n| n.checked_mul(w as u64))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or(TensorError::DimensionOverflow {
                channels: c,
                height: h,
                width: w,
            })?;
        if c == 0 || h == 0 || w == 0 {
            return Err(TensorError::ZeroDimension {
                channels: c as usize,
                height: h as usize,
                width: w as usize,
            });
        }
        let expected = elements as usize * 4;
        let payload = &bytes[16..];
        if payload.len() < expected {
            return Err(TensorError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(TensorError::TrailingData {
                extra: payload.len() - expected,
            });
        }
        let mut data = Vec::with_capacity(elements as usize);
        for chunk in payload.chunks_exact(4) {
            let mut raw = [0u8; 4];
            raw.copy_from_slice(chunk);
            data.push(f32::from_le_bytes(raw) as f64);
        }
        Self::new(c as usize, h as usize, w as usize, data)
    }

    /// Writes the tensor to a file in `FCT1` format.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), TensorError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a tensor from an `FCT1` file.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, TensorError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn check_shape(channels: usize, height: usize, width: usize) -> Result<(), TensorError> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(TensorError::ZeroDimension {
            channels,
            height,
            width,
        });
    }
    let in_range = (channels as u64)
        .checked_mul(height as u64)
        .and_then(|n| n.checked_mul(width as u64))
        .is_some_and(|n| n <= MAX_ELEMENTS);
    if !in_range {
        return Err(TensorError::DimensionOverflow {
            channels: channels.min(u32::MAX as usize) as u32,
            height: height.min(u32::MAX as usize) as u32,
            width: width.min(u32::MAX as usize) as u32,
        });
    }
    Ok(())
}
