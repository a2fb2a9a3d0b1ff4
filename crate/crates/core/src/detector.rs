//! The point-set regression head and the refinement cascade.
//!
//! A small PointNet-style network eats the embedded sample points of one
//! proposal (embedding channels, a validity flag, and the three latent
//! coordinates per point), max-pools over the set, and regresses a box
//! residual plus a confidence logit. Forward, loss, and reverse-mode
//! gradients are written out by hand against the fixed graph; there is no
//! autograd framework underneath, which keeps the arithmetic inspectable
//! and the finite-difference tests meaningful.
//!
//! [`cascade_detect`] runs the head iteratively: apply the predicted
//! residual, re-sample the grid around the refined box, run the head again.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::StereoFeatures;
use crate::fce::{embed_enhanced, embed_original, point_features, FceError, FceSpace};
use crate::geometry::{box_iou_3d, rotation_y, wrap_angle, Proposal3D, StereoRig};
use crate::sampling::{generate_grid, CarShapeModel, SampleGrid, SamplingConfig, SamplingError};

/// Number of regression outputs: the 7-dof box residual plus one
/// confidence logit.
pub const OUTPUT_DIM: usize = 8;

/// Residual clamp for the log-dimension channels; `e^3` is a 20x scale
/// change, far beyond any sane refinement step, so clamping here only
/// guards against a divergent network blowing up a box.
const LOG_DIM_LIMIT: f64 = 3.0;

#[derive(Debug)]
pub enum DetectorError {
    /// `data.len()` must equal `count * dim` and `count` must be positive.
    BadPointSet { expected: usize, found: usize },
    /// Grid and embedding describe different numbers of points.
    CountMismatch { grid: usize, embedding: usize },
    /// The head was built for a different embedding width.
    ChannelMismatch { expected: usize, found: usize },
    /// The cascade needs at least one iteration.
    BadIterations,
    WrongFormat { found: String },
    WrongVersion { found: u32 },
    LayerCount { expected: usize, found: usize },
    /// A layer's declared or actual shape contradicts the head config.
    LayerShape { layer: usize },
    NonFinite { layer: usize },
    Sampling(SamplingError),
    Embedding(FceError),
    Json(serde_json::Error),
    Io(std::io::Error),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorError::BadPointSet { expected, found } => {
                write!(f, "point set data length {found}, expected {expected}")
            }
            DetectorError::CountMismatch { grid, embedding } => {
                write!(f, "grid has {grid} points but embedding has {embedding}")
            }
            DetectorError::ChannelMismatch { expected, found } => {
                write!(f, "head expects {expected} embedding channels, got {found}")
            }
            DetectorError::BadIterations => write!(f, "cascade needs at least one iteration"),
            DetectorError::WrongFormat { found } => {
                write!(f, "not a head manifest: format {found:?}")
            }
            DetectorError::WrongVersion { found } => {
                write!(f, "unsupported manifest version {found}")
            }
            DetectorError::LayerCount { expected, found } => {
                write!(f, "manifest has {found} layers, expected {expected}")
            }
            DetectorError::LayerShape { layer } => {
                write!(f, "layer {layer} shape contradicts the head configuration")
            }
            DetectorError::NonFinite { layer } => {
                write!(f, "non-finite parameter in layer {layer}")
            }
            DetectorError::Sampling(e) => write!(f, "sampling error: {e}"),
            DetectorError::Embedding(e) => write!(f, "embedding error: {e}"),
            DetectorError::Json(e) => write!(f, "manifest json error: {e}"),
            DetectorError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for DetectorError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DetectorError::Sampling(e) => Some(e),
            DetectorError::Embedding(e) => Some(e),
            DetectorError::Json(e) => Some(e),
            DetectorError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<SamplingError> for DetectorError {
    fn from(e: SamplingError) -> Self {
        DetectorError::Sampling(e)
    }
}

impl From<FceError> for DetectorError {
    fn from(e: FceError) -> Self {
        DetectorError::Embedding(e)
    }
}

impl From<serde_json::Error> for DetectorError {
    fn from(e: serde_json::Error) -> Self {
        DetectorError::Json(e)
    }
}

impl From<std::io::Error> for DetectorError {
    fn from(e: std::io::Error) -> Self {
        DetectorError::Io(e)
    }
}

/// A dense `count x dim` row-major point matrix, one row per sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PointSet {
    pub fn new(count: usize, dim: usize, data: Vec<f64>) -> Result<Self, DetectorError> {
        if count == 0 || data.len() != count * dim {
            return Err(DetectorError::BadPointSet {
                expected: count * dim,
                found: data.len(),
            });
        }
        Ok(PointSet { count, dim, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Head input built from a latent grid and its embedding: per point the
/// embedding channels, the validity flag as 0/1, then the latent coordinates.
pub fn assemble_point_set(grid: &SampleGrid, fce: &FceSpace) -> Result<PointSet, DetectorError> {
    if grid.points.len() != fce.count() {
        return Err(DetectorError::CountMismatch {
            grid: grid.points.len(),
            embedding: fce.count(),
        });
    }
    let c = fce.channels();
    let dim = c + 4;
    let mut data = Vec::with_capacity(grid.points.len() * dim);
    for (i, latent) in grid.points.iter().enumerate() {
        data.extend_from_slice(fce.point(i));
        data.push(if fce.is_valid(i) { 1.0 } else { 0.0 });
        data.extend_from_slice(&[latent.x, latent.y, latent.z]);
    }
    PointSet::new(grid.points.len(), dim, data)
}

/// Head architecture. The widths are the hidden sizes of the per-point MLP
/// and of the post-pooling MLP; the output layer is always [`OUTPUT_DIM`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_channels: usize,
    pub point_widths: [usize; 2],
    pub head_widths: [usize; 2],
    pub leaky_slope: f64,
}

impl HeadConfig {
    /// The default architecture for an embedding with `channels` channels
    /// (input adds the validity flag and three latent coordinates).
    pub fn for_channels(channels: usize) -> Self {
        HeadConfig {
            input_channels: channels + 4,
            point_widths: [32, 64],
            head_widths: [64, 32],
            leaky_slope: 0.01,
        }
    }

    /// Input/output sizes of the five linear layers, in order.
    fn layer_dims(&self) -> [(usize, usize); 5] {
        [
            (self.input_channels, self.point_widths[0]),
            (self.point_widths[0], self.point_widths[1]),
            (self.point_widths[1], self.head_widths[0]),
            (self.head_widths[0], self.head_widths[1]),
            (self.head_widths[1], OUTPUT_DIM),
        ]
    }
}

/// One dense layer, also reused as the container for its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }

    /// Accumulates `d_out (x) x` into the weight gradient and `d_out` into
    /// the bias gradient, and returns nothing; the input gradient is
    /// computed separately where needed.
    fn accumulate_grads(&self, grads: &mut Linear, x: &[f64], d_out: &[f64]) {
        for (o, d) in d_out.iter().enumerate() {
            grads.b[o] += d;
            let row = &mut grads.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (slot, xi) in row.iter_mut().zip(x) {
                *slot += d * xi;
            }
        }
    }

    /// `W^T d_out`.
    fn input_grad(&self, d_out: &[f64], d_in: &mut [f64]) {
        d_in.fill(0.0);
        for (o, d) in d_out.iter().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (slot, wi) in d_in.iter_mut().zip(row) {
                *slot += d * wi;
            }
        }
    }
}

/// All parameters of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub config: HeadConfig,
    pub layers: Vec<Linear>,
}

/// Gradients with the same shapes as [`HeadParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub layers: Vec<Linear>,
}

impl HeadParams {
    /// Xavier-uniform initialization from a fixed seed.
    pub fn init(config: HeadConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let mut layer = Linear::zeros(i, o);
                let s = (6.0 / (i + o) as f64).sqrt();
                for w in &mut layer.w {
                    *w = rng.random_range(-s..s);
                }
                layer
            })
            .collect();
        HeadParams { config, layers }
    }

    /// All-zero parameters (the head then predicts the identity residual
    /// with confidence 0.5); mostly useful in tests.
    pub fn zeros(config: HeadConfig) -> Self {
        HeadParams {
            config,
            layers: config
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
        }
    }

    pub fn zero_grads(&self) -> HeadGrads {
        HeadGrads {
            layers: self
                .config
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
        }
    }

    /// Gradient-descent step: `p -= lr * g`.
    pub fn step(&mut self, grads: &HeadGrads, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.w.iter_mut().zip(&g.w) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= lr * gb;
            }
        }
    }

    /// Writes the parameters as a version-1 `FCEHEAD` JSON manifest.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), DetectorError> {
        let manifest = Manifest {
            format: "FCEHEAD".to_owned(),
            version: 1,
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    input: l.in_dim,
                    output: l.out_dim,
                    weights: l.w.clone(),
                    bias: l.b.clone(),
                })
                .collect(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    /// Loads and fully validates a version-1 `FCEHEAD` manifest.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, DetectorError> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if manifest.format != "FCEHEAD" {
            return Err(DetectorError::WrongFormat {
                found: manifest.format,
            });
        }
        if manifest.version != 1 {
            return Err(DetectorError::WrongVersion {
                found: manifest.version,
            });
        }
        let dims = manifest.config.layer_dims();
        if manifest.layers.len() != dims.len() {
            return Err(DetectorError::LayerCount {
                expected: dims.len(),
                found: manifest.layers.len(),
            });
        }
        let mut layers = Vec::with_capacity(dims.len());
        for (i, (ml, (in_dim, out_dim))) in manifest.layers.into_iter().zip(dims).enumerate() {
            if ml.input != in_dim
                || ml.output != out_dim
                || ml.weights.len() != in_dim * out_dim
                || ml.bias.len() != out_dim
            {
                return Err(DetectorError::LayerShape { layer: i });
            }
            if ml.weights.iter().chain(&ml.bias).any(|v| !v.is_finite()) {
                return Err(DetectorError::NonFinite { layer: i });
            }
            layers.push(Linear {
                in_dim,
                out_dim,
                w: ml.weights,
                b: ml.bias,
            });
        }
        Ok(HeadParams {
            config: manifest.config,
            layers,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLayer {
    input: usize,
    output: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: HeadConfig,
    layers: Vec<ManifestLayer>,
}

#[inline]
fn lrelu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

#[inline]
fn lrelu_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct Trace {
    /// Pre-activations of the two per-point layers, `count x width`.
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    /// Per-channel winner row of the max-pool.
    pool_idx: Vec<usize>,
    pooled: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    z4: Vec<f64>,
    a4: Vec<f64>,
    out: [f64; OUTPUT_DIM],
}

impl Trace {
    pub fn output(&self) -> &[f64; OUTPUT_DIM] {
        &self.out
    }
}

/// Runs the head on a point set, keeping the trace for [`backward`].
pub fn forward_traced(params: &HeadParams, points: &PointSet) -> Result<Trace, DetectorError> {
    let cfg = &params.config;
    if points.dim != cfg.input_channels {
        return Err(DetectorError::ChannelMismatch {
            expected: cfg.input_channels,
            found: points.dim,
        });
    }
    let (w1, w2) = (cfg.point_widths[0], cfg.point_widths[1]);
    let slope = cfg.leaky_slope;
    let n = points.count;

    let mut z1 = vec![0.0; n * w1];
    let mut a1 = vec![0.0; n * w1];
    let mut z2 = vec![0.0; n * w2];
    let mut pooled = vec![f64::NEG_INFINITY; w2];
    let mut pool_idx = vec![0usize; w2];

    let mut a1_row = vec![0.0; w1];
    for i in 0..n {
        let x = points.row(i);
        let z1_row = &mut z1[i * w1..(i + 1) * w1];
        params.layers[0].apply(x, z1_row);
        for (a, z) in a1_row.iter_mut().zip(z1_row.iter()) {
            *a = lrelu(*z, slope);
        }
        a1[i * w1..(i + 1) * w1].copy_from_slice(&a1_row);
        let z2_row = &mut z2[i * w2..(i + 1) * w2];
        params.layers[1].apply(&a1_row, z2_row);
        for (c, z) in z2_row.iter().enumerate() {
            let a = lrelu(*z, slope);
            if a > pooled[c] {
                pooled[c] = a;
                pool_idx[c] = i;
            }
        }
    }

    let hw = cfg.head_widths;
    let mut z3 = vec![0.0; hw[0]];
    params.layers[2].apply(&pooled, &mut z3);
    let a3: Vec<f64> = z3.iter().map(|&z| lrelu(z, slope)).collect();
    let mut z4 = vec![0.0; hw[1]];
    params.layers[3].apply(&a3, &mut z4);
    let a4: Vec<f64> = z4.iter().map(|&z| lrelu(z, slope)).collect();
    let mut out = [0.0; OUTPUT_DIM];
    params.layers[4].apply(&a4, &mut out);

    Ok(Trace {
        z1,
        a1,
        z2,
        pool_idx,
        pooled,
        z3,
        a3,
        z4,
        a4,
        out,
    })
}

/// Runs the head and returns just the eight outputs.
pub fn forward(params: &HeadParams, points: &PointSet) -> Result<[f64; OUTPUT_DIM], DetectorError> {
    Ok(forward_traced(params, points)?.out)
}

/// Reverse-mode gradients of `d_out . out` with respect to every parameter.
pub fn backward(
    params: &HeadParams,
    points: &PointSet,
    trace: &Trace,
    d_out: &[f64; OUTPUT_DIM],
) -> HeadGrads {
    let cfg = &params.config;
    let slope = cfg.leaky_slope;
    let (w1, w2) = (cfg.point_widths[0], cfg.point_widths[1]);
    let mut grads = params.zero_grads();

    // Head MLP, straight chain.
    params.layers[4].accumulate_grads(&mut grads.layers[4], &trace.a4, d_out);
    let mut d_a4 = vec![0.0; trace.a4.len()];
    params.layers[4].input_grad(d_out, &mut d_a4);
    let d_z4: Vec<f64> = d_a4
        .iter()
        .zip(&trace.z4)
        .map(|(d, z)| d * lrelu_grad(*z, slope))
        .collect();
    params.layers[3].accumulate_grads(&mut grads.layers[3], &trace.a3, &d_z4);
    let mut d_a3 = vec![0.0; trace.a3.len()];
    params.layers[3].input_grad(&d_z4, &mut d_a3);
    let d_z3: Vec<f64> = d_a3
        .iter()
        .zip(&trace.z3)
        .map(|(d, z)| d * lrelu_grad(*z, slope))
        .collect();
    params.layers[2].accumulate_grads(&mut grads.layers[2], &trace.pooled, &d_z3);
    let mut d_pooled = vec![0.0; trace.pooled.len()];
    params.layers[2].input_grad(&d_z3, &mut d_pooled);

    // Max-pool: each pooled channel routes its gradient to one point row.
    // Group the contributions by row so the per-point backward runs once
    // per distinct winner instead of once per channel.
    let mut by_row: Vec<(usize, Vec<f64>)> = Vec::new();
    for (c, &row) in trace.pool_idx.iter().enumerate() {
        match by_row.iter_mut().find(|(r, _)| *r == row) {
            Some((_, d)) => d[c] += d_pooled[c],
            None => {
                let mut d = vec![0.0; w2];
                d[c] = d_pooled[c];
                by_row.push((row, d));
            }
        }
    }

    let mut d_z2 = vec![0.0; w2];
    let mut d_a1 = vec![0.0; w1];
    let mut d_z1 = vec![0.0; w1];
    for (row, d_a2) in by_row {
        let z2_row = &trace.z2[row * w2..(row + 1) * w2];
        for ((slot, d), z) in d_z2.iter_mut().zip(&d_a2).zip(z2_row) {
            *slot = d * lrelu_grad(*z, slope);
        }
        let a1_row = &trace.a1[row * w1..(row + 1) * w1];
        params.layers[1].accumulate_grads(&mut grads.layers[1], a1_row, &d_z2);
        params.layers[1].input_grad(&d_z2, &mut d_a1);
        let z1_row = &trace.z1[row * w1..(row + 1) * w1];
        for ((slot, d), z) in d_z1.iter_mut().zip(&d_a1).zip(z1_row) {
            *slot = d * lrelu_grad(*z, slope);
        }
        params.layers[0].accumulate_grads(&mut grads.layers[0], points.row(row), &d_z1);
    }
    grads
}

/// Smooth-L1 (Huber, delta = 1): value and derivative in the residual.
pub fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Numerically stable binary cross-entropy on a logit: value and derivative
/// in the logit.
pub fn bce_with_logit(z: f64, label: f64) -> (f64, f64) {
    // max(z, 0) - z*label + ln(1 + exp(-|z|))
    let value = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
    let sigmoid = 1.0 / (1.0 + (-z).exp());
    (value, sigmoid - label)
}

/// Training loss: mean smooth-L1 over the seven residual channels plus
/// binary cross-entropy on the confidence logit, equally weighted. Returns
/// the loss and its gradient in the eight head outputs.
pub fn loss_and_grad(
    out: &[f64; OUTPUT_DIM],
    target_residuals: &[f64; 7],
    conf_label: f64,
) -> (f64, [f64; OUTPUT_DIM]) {
    let mut loss = 0.0;
    let mut grad = [0.0; OUTPUT_DIM];
    for i in 0..7 {
        let (v, g) = smooth_l1(out[i] - target_residuals[i]);
        loss += v / 7.0;
        grad[i] = g / 7.0;
    }
    let (v, g) = bce_with_logit(out[7], conf_label);
    loss += v;
    grad[7] = g;
    (loss, grad)
}

/// The residual that would move `base` exactly onto `truth`, in the same
/// encoding the head predicts: a box-frame center offset, log-dimension
/// ratios, and a wrapped yaw difference.
pub fn encode_residuals(base: &Proposal3D, truth: &Proposal3D) -> [f64; 7] {
    let d = rotation_y(base.yaw).transpose() * (truth.center - base.center);
    [
        d.x,
        d.y,
        d.z,
        (truth.dims.x / base.dims.x).ln(),
        (truth.dims.y / base.dims.y).ln(),
        (truth.dims.z / base.dims.z).ln(),
        wrap_angle(truth.yaw - base.yaw),
    ]
}

/// Applies a head output to a proposal: center moves by the box-frame
/// offset, dimensions scale by clamped exponentials, yaw adds and wraps,
/// and the confidence logit becomes the new score.
pub fn apply_residuals(base: &Proposal3D, out: &[f64; OUTPUT_DIM]) -> Proposal3D {
    let shift = rotation_y(base.yaw) * Vector3::new(out[0], out[1], out[2]);
    let scale = |r: f64| r.clamp(-LOG_DIM_LIMIT, LOG_DIM_LIMIT).exp();
    Proposal3D {
        center: base.center + shift,
        dims: Vector3::new(
            base.dims.x * scale(out[3]),
            base.dims.y * scale(out[4]),
            base.dims.z * scale(out[5]),
        ),
        yaw: wrap_angle(base.yaw + out[6]),
        score: 1.0 / (1.0 + (-out[7]).exp()),
    }
}

/// Which embedding feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingVariant {
    Original,
    Enhanced,
}

impl EmbeddingVariant {
    pub fn embed(self, features: &crate::fce::PointFeatures) -> FceSpace {
        match self {
            EmbeddingVariant::Original => embed_original(features),
            EmbeddingVariant::Enhanced => embed_enhanced(features),
        }
    }
}

/// Everything the cascade needs besides the trained parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    pub model: CarShapeModel,
    pub sampling: SamplingConfig,
    pub variant: EmbeddingVariant,
    pub iterations: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            model: CarShapeModel::default(),
            sampling: SamplingConfig::default(),
            variant: EmbeddingVariant::Enhanced,
            iterations: 2,
        }
    }
}

/// The refined box after each cascade iteration; `refined` aliases the last
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub refined: Proposal3D,
    pub iterations: Vec<Proposal3D>,
}

/// Iterative refinement of one proposal: embed the sample grid around the
/// current box, run the head, apply the residual, repeat.
pub fn cascade_detect(
    params: &HeadParams,
    rig: &StereoRig,
    feats: &StereoFeatures,
    proposal: &Proposal3D,
    cfg: &CascadeConfig,
) -> Result<CascadeResult, DetectorError> {
    if cfg.iterations == 0 {
        return Err(DetectorError::BadIterations);
    }
    let expected = params.config.input_channels;
    if feats.left.channels() + 4 != expected {
        return Err(DetectorError::ChannelMismatch {
            expected,
            found: feats.left.channels() + 4,
        });
    }
    let grid = generate_grid(&cfg.model, &cfg.sampling)?;
    let mut current = proposal.clone();
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let world = grid.to_world(&current);
        let pf = point_features(feats, rig, &world)?;
        let embedding = cfg.variant.embed(&pf);
        let points = assemble_point_set(&grid, &embedding)?;
        let out = forward(params, &points)?;
        current = apply_residuals(&current, &out);
        iterations.push(current.clone());
    }
    Ok(CascadeResult {
        refined: current,
        iterations,
    })
}

/// One training example: a pre-assembled point set for a base proposal and
/// the ground-truth box it should be moved onto.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub points: PointSet,
    pub base: Proposal3D,
    pub truth: Proposal3D,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            learning_rate: 0.01,
            seed: 1,
        }
    }
}

/// Plain per-sample SGD on the head. The confidence label of each step is
/// recomputed from the current prediction: 1 when applying the predicted
/// residual would leave the box at 3D IoU >= 0.5 with the truth, else 0.
/// Returns the mean loss of each epoch.
pub fn train_toy(
    params: &mut HeadParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, DetectorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let targets: Vec<[f64; 7]> = samples
        .iter()
        .map(|s| encode_residuals(&s.base, &s.truth))
        .collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let sample = &samples[i];
            let trace = forward_traced(params, &sample.points)?;
            let refined = apply_residuals(&sample.base, trace.output());
            let label = if box_iou_3d(&refined, &sample.truth) >= 0.5 {
                1.0
            } else {
                0.0
            };
            let (loss, d_out) = loss_and_grad(trace.output(), &targets[i], label);
            let grads = backward(params, &sample.points, &trace, &d_out);
            params.step(&grads, cfg.learning_rate);
            total += loss;
        }
        history.push(total / samples.len().max(1) as f64);
    }
    Ok(history)
}

/// Distance from this forward/loss evaluation to the nearest point where
/// the computation stops being differentiable: leaky-ReLU kinks, max-pool
/// ties, and the smooth-L1 transition. Finite-difference comparisons are
/// only meaningful when this margin comfortably exceeds the probe step, so
/// numerical tests use it to discard ill-conditioned draws.
pub fn kink_margin(
    params: &HeadParams,
    points: &PointSet,
    target_residuals: &[f64; 7],
) -> Result<f64, DetectorError> {
    let trace = forward_traced(params, points)?;
    let slope = params.config.leaky_slope;
    let mut margin = f64::INFINITY;
    for z in trace.z1.iter().chain(&trace.z2).chain(&trace.z3).chain(&trace.z4) {
        margin = margin.min(z.abs());
    }
    // Pool margin: winner activation minus the runner-up, per channel.
    let w2 = params.config.point_widths[1];
    for c in 0..w2 {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for i in 0..points.count {
            let a = lrelu(trace.z2[i * w2 + c], slope);
            if a > best {
                second = best;
                best = a;
            } else if a > second {
                second = a;
            }
        }
        if second.is_finite() {
            margin = margin.min(best - second);
        }
    }
    for i in 0..7 {
        margin = margin.min(((trace.out[i] - target_residuals[i]).abs() - 1.0).abs());
    }
    Ok(margin)
}
