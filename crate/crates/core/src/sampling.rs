//! Non-uniform latent grids over a two-part car shape prior.
//!
//! A car splits vertically into a bottom part (body) and a top part (cabin),
//! each with an inner cuboid where few image features live and an outer shell
//! where the surfaces are. Sampling strategies choose how many of the
//! `resl` points along each horizontal axis land in the outer bands versus
//! the inner band; the vertical axis is always split `0.55 / 0.45` between
//! the parts. All coordinates here are latent box coordinates in `[0,1]^3`
//! (x along length, y along width, z bottom-to-top); mapping into the world
//! goes through [`crate::geometry::Proposal3D::local_to_world`].

use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::geometry::Proposal3D;

#[derive(Debug)]
pub enum SamplingError {
    /// Grids need at least two points per axis so both parts get a layer.
    ReslTooSmall { resl: usize },
    /// Band boundaries must satisfy `0 < lo < hi < 1`.
    BadBands { lo: f64, hi: f64 },
    /// The bottom/top split must lie strictly inside `(0, 1)`.
    BadSplit { split: f64 },
    /// Band fractions must be non-negative and sum to 1.
    BadFractions { fractions: [f64; 3] },
}

impl fmt::Display for SamplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingError::ReslTooSmall { resl } => {
                write!(f, "axis resolution {resl} too small, need at least 2")
            }
            SamplingError::BadBands { lo, hi } => {
                write!(f, "band boundaries ({lo}, {hi}) must satisfy 0 < lo < hi < 1")
            }
            SamplingError::BadSplit { split } => {
                write!(f, "part split {split} must lie strictly inside (0, 1)")
            }
            SamplingError::BadFractions { fractions } => {
                write!(f, "band fractions {fractions:?} must be non-negative and sum to 1")
            }
        }
    }
}

impl std::error::Error for SamplingError {}

/// Which vertical part of the shape prior a thing belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Bottom,
    Top,
}

/// Whether a sample sits in the inner cuboid of its part or in the outer
/// shell near the surfaces. The inner cuboid is closed: points exactly on a
/// band boundary count as inner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Inner,
    Outer,
}

/// How to distribute axis samples between the outer bands and the inner one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Evenly spaced points, ignoring the shape prior.
    Uniform,
    /// More points in the outer bands, a few kept inside.
    NonUniform,
    /// All width samples pushed to the outer bands, none inside.
    Extreme,
}

impl Strategy {
    /// Low/mid/high band fractions for the length axis, or `None` when the
    /// axis is sampled evenly.
    fn length_fractions(self, _part: Part) -> Option<[f64; 3]> {
        match self {
            Strategy::Uniform => None,
            // Both biased strategies share the length distribution.
            Strategy::NonUniform | Strategy::Extreme => Some(match _part {
                Part::Bottom => [0.3, 0.4, 0.3],
                Part::Top => [0.4, 0.2, 0.4],
            }),
        }
    }

    fn width_fractions(self, part: Part) -> Option<[f64; 3]> {
        match self {
            Strategy::Uniform => None,
            Strategy::NonUniform => Some(match part {
                Part::Bottom => [0.4, 0.2, 0.4],
                Part::Top => [0.4, 0.3, 0.3],
            }),
            Strategy::Extreme => Some([0.5, 0.0, 0.5]),
        }
    }
}

/// Inner-band boundaries along one latent axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandBounds {
    pub lo: f64,
    pub hi: f64,
}

impl BandBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SamplingError> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi < 1.0) {
            return Err(SamplingError::BadBands { lo, hi });
        }
        Ok(BandBounds { lo, hi })
    }

    /// Band classification by value; boundary values belong to the outer
    /// bands (the complement of the *open* inner interval).
    fn classify(&self, v: f64) -> usize {
        if v <= self.lo {
            0
        } else if v >= self.hi {
            2
        } else {
            1
        }
    }
}

/// Band boundaries for both horizontal axes of one part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartBands {
    pub length: BandBounds,
    pub width: BandBounds,
}

/// The two-part car shape prior in latent coordinates.
///
/// Defaults: the body's inner cuboid spans `[0.2, 0.8]` of the length and
/// `[0.1, 0.9]` of the width; the cabin's spans `[0.3, 0.7]` and
/// `[0.2, 0.8]`; the body occupies the lower `0.55` of the height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarShapeModel {
    pub bottom: PartBands,
    pub top: PartBands,
    pub split: f64,
}

impl Default for CarShapeModel {
    fn default() -> Self {
        let b = |lo, hi| BandBounds { lo, hi };
        CarShapeModel {
            bottom: PartBands {
                length: b(0.2, 0.8),
                width: b(0.1, 0.9),
            },
            top: PartBands {
                length: b(0.3, 0.7),
                width: b(0.2, 0.8),
            },
            split: 0.55,
        }
    }
}

impl CarShapeModel {
    pub fn validate(&self) -> Result<(), SamplingError> {
        for bands in [&self.bottom, &self.top] {
            BandBounds::new(bands.length.lo, bands.length.hi)?;
            BandBounds::new(bands.width.lo, bands.width.hi)?;
        }
        if !(self.split.is_finite() && 0.0 < self.split && self.split < 1.0) {
            return Err(SamplingError::BadSplit { split: self.split });
        }
        Ok(())
    }

    fn bands(&self, part: Part) -> &PartBands {
        match part {
            Part::Bottom => &self.bottom,
            Part::Top => &self.top,
        }
    }
}

/// Grid generation parameters: per-axis resolution and strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub resl: usize,
    pub strategy: Strategy,
}

impl SamplingConfig {
    pub fn new(resl: usize, strategy: Strategy) -> Self {
        SamplingConfig { resl, strategy }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            resl: 10,
            strategy: Strategy::NonUniform,
        }
    }
}

/// How many of an axis's samples fell in the low / mid / high band. For
/// biased strategies these are the generation counts (the first point of a
/// later segment belongs to that segment even when it sits exactly on the
/// boundary); for the uniform strategy they classify by value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandCounts {
    pub low: usize,
    pub mid: usize,
    pub high: usize,
}

impl BandCounts {
    pub fn total(&self) -> usize {
        self.low + self.mid + self.high
    }

    /// Splits `total` into integer band counts proportional to `fractions`
    /// using largest-remainder rounding, so the counts always sum to `total`
    /// and equal `fractions[i] * total` exactly when that is an integer.
    pub fn from_fractions(fractions: [f64; 3], total: usize) -> Result<Self, SamplingError> {
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SamplingError::BadFractions { fractions });
        }
        let ideals = fractions.map(|f| f * total as f64);
        let mut counts = ideals.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        // Hand the leftover points to the largest remainders, low band first
        // on ties, so the result is deterministic.
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = ideals[a] - ideals[a].floor();
            let rb = ideals[b] - ideals[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().take(total - assigned) {
            counts[i] += 1;
        }
        Ok(BandCounts {
            low: counts[0],
            mid: counts[1],
            high: counts[2],
        })
    }
}

/// Generation-time band counts for both horizontal axes of one part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandReport {
    pub length: BandCounts,
    pub width: BandCounts,
}

/// Evenly spaced values from `lo` to `hi` inclusive. `n == 1` yields `[lo]`,
/// `n == 0` yields nothing; endpoints are exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                lo * (1.0 - t) + hi * t
            })
            .collect(),
    }
}

/// Concatenates per-segment linspaces without duplicating shared endpoints.
///
/// Every segment `(lo, hi, n)` except the last contributes
/// `linspace(lo, hi, n + 1)` minus its final point, so the next segment owns
/// the boundary value; the last segment is a closed `linspace(lo, hi, n)`.
/// A segment with `n == 0` contributes nothing.
pub fn piecewise_linspace(segments: &[(f64, f64, usize)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.2).sum());
    for (i, &(lo, hi, n)) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            out.extend(linspace(lo, hi, n));
        } else {
            let mut open = linspace(lo, hi, n + 1);
            open.pop();
            out.extend(open);
        }
    }
    out
}

/// One part's axis values plus the band counts they were generated with.
struct AxisSamples {
    values: Vec<f64>,
    counts: BandCounts,
}

fn sample_axis(
    strategy_fractions: Option<[f64; 3]>,
    bands: &BandBounds,
    resl: usize,
) -> Result<AxisSamples, SamplingError> {
    match strategy_fractions {
        None => {
            let values = linspace(0.0, 1.0, resl);
            let mut counts = [0usize; 3];
            for &v in &values {
                counts[bands.classify(v)] += 1;
            }
            Ok(AxisSamples {
                values,
                counts: BandCounts {
                    low: counts[0],
                    mid: counts[1],
                    high: counts[2],
                },
            })
        }
        Some(fractions) => {
            let counts = BandCounts::from_fractions(fractions, resl)?;
            let values = piecewise_linspace(&[
                (0.0, bands.lo, counts.low),
                (bands.lo, bands.hi, counts.mid),
                (bands.hi, 1.0, counts.high),
            ]);
            debug_assert_eq!(values.len(), resl);
            Ok(AxisSamples { values, counts })
        }
    }
}

/// A generated latent grid: `resl^3` points in `[0,1]^3` with per-point
/// region labels and the per-part, per-axis band counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub points: Vec<Point3<f64>>,
    pub regions: Vec<Region>,
    pub parts: Vec<Part>,
    pub bottom_report: BandReport,
    pub top_report: BandReport,
    pub resl: usize,
    pub strategy: Strategy,
}

impl SampleGrid {
    /// Fraction of grid points outside their part's (closed) inner cuboid.
    pub fn outer_fraction(&self) -> f64 {
        let outer = self.regions.iter().filter(|r| **r == Region::Outer).count();
        outer as f64 / self.regions.len() as f64
    }

    /// Maps every latent point into the world frame of `proposal`.
    pub fn to_world(&self, proposal: &Proposal3D) -> Vec<Point3<f64>> {
        self.points
            .iter()
            .map(|p| proposal.local_to_world(p))
            .collect()
    }
}

/// Generates the latent sample grid for one shape model and configuration.
///
/// The vertical axis is split between the parts by `model.split` (nearest
/// integer, so the default `0.55` at `resl = 10` gives the bottom part six
/// layers and the top four); each part spans its z interval with a closed
/// linspace, so the split plane appears in both parts. Within a part, points
/// are emitted z-outermost, then width, then length.
pub fn generate_grid(
    model: &CarShapeModel,
    config: &SamplingConfig,
) -> Result<SampleGrid, SamplingError> {
    model.validate()?;
    let resl = config.resl;
    if resl < 2 {
        return Err(SamplingError::ReslTooSmall { resl });
    }
    let bottom_layers = ((model.split * resl as f64).round() as usize).clamp(1, resl - 1);
    let top_layers = resl - bottom_layers;

    let mut points = Vec::with_capacity(resl * resl * resl);
    let mut regions = Vec::with_capacity(points.capacity());
    let mut parts = Vec::with_capacity(points.capacity());
    let mut reports = [None, None];

    for (slot, (part, z_lo, z_hi, layers)) in [
        (Part::Bottom, 0.0, model.split, bottom_layers),
        (Part::Top, model.split, 1.0, top_layers),
    ]
    .into_iter()
    .enumerate()
    {
        let bands = model.bands(part);
        let xs = sample_axis(
            config.strategy.length_fractions(part),
            &bands.length,
            resl,
        )?;
        let ys = sample_axis(config.strategy.width_fractions(part), &bands.width, resl)?;
        let zs = linspace(z_lo, z_hi, layers);
        for &z in &zs {
            for &y in &ys.values {
                for &x in &xs.values {
                    points.push(Point3::new(x, y, z));
                    let inner = x >= bands.length.lo
                        && x <= bands.length.hi
                        && y >= bands.width.lo
                        && y <= bands.width.hi;
                    regions.push(if inner { Region::Inner } else { Region::Outer });
                    parts.push(part);
                }
            }
        }
        reports[slot] = Some(BandReport {
            length: xs.counts,
            width: ys.counts,
        });
    }

    Ok(SampleGrid {
        points,
        regions,
        parts,
        bottom_report: reports[0].take().unwrap(),
        top_report: reports[1].take().unwrap(),
        resl,
        strategy: config.strategy,
    })
}
