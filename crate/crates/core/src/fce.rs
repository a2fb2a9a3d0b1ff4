//! Feature-consistency embeddings over stereo sample points.
//!
//! For a latent point visible in both views, the finest feature level gives
//! a left/right difference `lt` (how photometrically consistent the views
//! are at that 3D position), while the coarser levels give semantic weights
//! `ms` and `hs` (how much structure is around). Each channel is collapsed
//! with a Gaussian-style kernel:
//!
//! * original:  `exp(-(lt * ms)^2)`
//! * enhanced:  `exp(-(lt * ms)^2) * exp(-(lt * hs)^2)`
//!
//! Both land in `(0, 1]`, peak exactly at 1 for perfectly consistent
//! features, and the enhanced form never exceeds the original. Points not
//! visible in both cameras get the neutral all-ones embedding plus a cleared
//! validity flag so downstream stages can tell "consistent" from "unseen".

use std::fmt;

use nalgebra::Point3;

use crate::backbone::StereoFeatures;
use crate::geometry::{project_points, StereoRig};
use crate::tensor::{Tensor3, TensorError};

#[derive(Debug)]
pub enum FceError {
    /// Left and right pyramids must agree on the channel count.
    ChannelMismatch { left: usize, right: usize },
    /// A feature matrix's length is not `count * channels`.
    LengthMismatch {
        expected: usize,
        found: usize,
        what: &'static str,
    },
    /// An embedding tensor must be `(channels + 1) x count x 1`.
    BadTensorShape {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// The validity channel of a loaded embedding must be exactly 0 or 1.
    BadValidity { index: usize, value: f64 },
    Tensor(TensorError),
}

impl fmt::Display for FceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FceError::ChannelMismatch { left, right } => {
                write!(f, "stereo channel mismatch: left {left}, right {right}")
            }
            FceError::LengthMismatch {
                expected,
                found,
                what,
            } => write!(f, "{what}: expected {expected} values, got {found}"),
            FceError::BadTensorShape {
                channels,
                height,
                width,
            } => write!(
                f,
                "embedding tensor must be (channels+1) x count x 1, got {channels}x{height}x{width}"
            ),
            FceError::BadValidity { index, value } => {
                write!(f, "validity flag at point {index} is {value}, expected 0 or 1")
            }
            FceError::Tensor(e) => write!(f, "tensor error: {e}"),
        }
    }
}

impl std::error::Error for FceError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FceError::Tensor(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for FceError {
    fn from(e: TensorError) -> Self {
        FceError::Tensor(e)
    }
}

/// Multi-scale stereo feature samples for a set of points.
///
/// `left[level]` and `right[level]` are `count x channels` row-major
/// matrices. Rows of invalid points hold zeros and are never read by the
/// embedding, which emits the neutral value for them instead.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub channels: usize,
    pub valid: Vec<bool>,
    pub left: [Vec<f64>; 3],
    pub right: [Vec<f64>; 3],
}

impl PointFeatures {
    pub fn new(
        channels: usize,
        valid: Vec<bool>,
        left: [Vec<f64>; 3],
        right: [Vec<f64>; 3],
    ) -> Result<Self, FceError> {
        let expected = channels * valid.len();
        for (matrix, what) in left
            .iter()
            .zip(["left level 0", "left level 1", "left level 2"])
            .chain(
                right
                    .iter()
                    .zip(["right level 0", "right level 1", "right level 2"]),
            )
        {
            if matrix.len() != expected {
                return Err(FceError::LengthMismatch {
                    expected,
                    found: matrix.len(),
                    what,
                });
            }
        }
        Ok(PointFeatures {
            channels,
            valid,
            left,
            right,
        })
    }

    pub fn count(&self) -> usize {
        self.valid.len()
    }
}

/// Samples stereo features for world points, one row per point in order.
///
/// A point is valid only when it projects strictly in front of *both*
/// cameras and inside both image rectangles at full resolution; features of
/// valid points are bilinear samples of every pyramid level at the projected
/// positions.
pub fn point_features(
    feats: &StereoFeatures,
    rig: &StereoRig,
    world: &[Point3<f64>],
) -> Result<PointFeatures, FceError> {
    let channels = feats.left.channels();
    if channels != feats.right.channels() {
        return Err(FceError::ChannelMismatch {
            left: channels,
            right: feats.right.channels(),
        });
    }
    let count = world.len();
    let mut valid = vec![false; count];
    let mut left: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; count * channels]);
    let mut right: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; count * channels]);

    for proj in project_points(rig, world) {
        let (Some(l), Some(r)) = (proj.left, proj.right) else {
            continue;
        };
        if !rig.in_bounds(&l) || !rig.in_bounds(&r) {
            continue;
        }
        valid[proj.index] = true;
        let row = proj.index * channels..(proj.index + 1) * channels;
        for level in 0..3 {
            feats
                .left
                .sample_into(level, l, &mut left[level][row.clone()]);
            feats
                .right
                .sample_into(level, r, &mut right[level][row.clone()]);
        }
    }
    PointFeatures::new(channels, valid, left, right)
}

/// A per-point, per-channel consistency embedding with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct FceSpace {
    channels: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
    enhanced: bool,
}

impl FceSpace {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn count(&self) -> usize {
        self.valid.len()
    }

    /// Whether the high-level semantic factor was applied.
    pub fn is_enhanced(&self) -> bool {
        self.enhanced
    }

    /// The embedding row of one point.
    pub fn point(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    /// Packs the embedding as a `(channels + 1) x count x 1` tensor: the
    /// first `channels` planes carry the embedding, the last one the
    /// validity flags as 0/1. This is the layout the CLI writes to `FCT1`.
    pub fn to_tensor(&self) -> Tensor3 {
        let count = self.count();
        Tensor3::from_fn(self.channels + 1, count, 1, |c, i, _| {
            if c < self.channels {
                self.values[i * self.channels + c]
            } else if self.valid[i] {
                1.0
            } else {
                0.0
            }
        })
        .expect("embedding values are finite by construction")
    }

    /// Rebuilds an embedding from its tensor form; the `enhanced` flag is
    /// not stored in the tensor and must be supplied by the caller.
    pub fn from_tensor(t: &Tensor3, enhanced: bool) -> Result<Self, FceError> {
        if t.width() != 1 || t.channels() < 2 {
            return Err(FceError::BadTensorShape {
                channels: t.channels(),
                height: t.height(),
                width: t.width(),
            });
        }
        let channels = t.channels() - 1;
        let count = t.height();
        let mut values = Vec::with_capacity(channels * count);
        let mut valid = Vec::with_capacity(count);
        for i in 0..count {
            for c in 0..channels {
                values.push(t.get(c, i, 0));
            }
            let flag = t.get(channels, i, 0);
            if flag != 0.0 && flag != 1.0 {
                return Err(FceError::BadValidity {
                    index: i,
                    value: flag,
                });
            }
            valid.push(flag == 1.0);
        }
        Ok(FceSpace {
            channels,
            values,
            valid,
            enhanced,
        })
    }
}

/// The shared embedding core: `exp(-(lt*ms)^2)`, optionally times
/// `exp(-(lt*hs)^2)`.
fn embed(features: &PointFeatures, enhanced: bool) -> FceSpace {
    let c = features.channels;
    let count = features.count();
    let mut values = vec![1.0; count * c];
    for i in 0..count {
        if !features.valid[i] {
            continue; // neutral row stays all ones
        }
        for k in 0..c {
            let at = i * c + k;
            let lt = features.left[0][at] - features.right[0][at];
            let ms = 0.5 * (features.left[1][at] + features.right[1][at]);
            let consistency = lt * ms;
            let mut v = (-consistency * consistency).exp();
            if enhanced {
                let hs = 0.5 * (features.left[2][at] + features.right[2][at]);
                let semantic = lt * hs;
                v *= (-semantic * semantic).exp();
            }
            // The exponent is always <= 0, so v is in [0, 1]; the floor
            // keeps extreme inputs from rounding all the way to zero and
            // preserves the open lower bound.
            values[at] = v.max(f64::MIN_POSITIVE);
        }
    }
    FceSpace {
        channels: c,
        values,
        valid: features.valid.clone(),
        enhanced,
    }
}

/// Embedding from photometric consistency weighted by mid-level semantics.
pub fn embed_original(features: &PointFeatures) -> FceSpace {
    embed(features, false)
}

/// As [`embed_original`], additionally damped by the high-level semantic
/// channel; never exceeds the original embedding.
pub fn embed_enhanced(features: &PointFeatures) -> FceSpace {
    embed(features, true)
}
