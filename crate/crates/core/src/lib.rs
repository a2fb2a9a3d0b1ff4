//! Stereo 3D box refinement built around feature-consistency embeddings.
//!
//! The pipeline takes a coarse 3D box proposal, fills it with a latent grid of
//! sample points (denser near the surfaces where image evidence lives),
//! projects every point into both cameras of a calibrated stereo rig, samples
//! multi-scale image features at the projections, collapses the left/right
//! feature pairs into a per-point consistency embedding, and feeds the
//! embedded point set to a small regression head that outputs a refined box.
//! Running the head twice (re-sampling around its own output) gives a cheap
//! cascade.
//!
//! Modules follow the data flow: [`tensor`] and [`pnm`] hold raster I/O,
//! [`geometry`] the camera and box math, [`sampling`] the latent grids,
//! [`backbone`] the handcrafted feature pyramids, [`fce`] the embedding,
//! [`detector`] the head and cascade, [`kitti`] dataset ingestion, and
//! [`synthetic`] a self-contained stereo scene generator used for testing
//! and benchmarks.

pub mod backbone;
pub mod detector;
pub mod fce;
pub mod geometry;
pub mod kitti;
pub mod pnm;
pub mod sampling;
pub mod synthetic;
pub mod tensor;

pub use backbone::{extract_handcrafted, BackboneConfig, BackboneError, FeaturePyramid, StereoFeatures};
pub use detector::{
    apply_residuals, cascade_detect, encode_residuals, train_toy, CascadeConfig, CascadeResult,
    DetectorError, EmbeddingVariant, HeadConfig, HeadParams, PointSet, TrainConfig, TrainSample,
};
pub use fce::{embed_enhanced, embed_original, point_features, FceError, FceSpace, PointFeatures};
pub use geometry::{
    box_iou_3d, box_iou_bev, project_points, Camera, Extrinsics, GeometryError, Intrinsics,
    LevelAffine, PointProjection, Proposal3D, StereoRig,
};
pub use kitti::{
    label_to_proposal, load_labels, load_proposals, parse_labels, read_proposals, save_proposals,
    write_proposals, KittiCalib, KittiError, KittiLabel, NoiseSpec,
};
pub use pnm::{load_pnm, GrayImage, PnmError};
pub use sampling::{
    generate_grid, CarShapeModel, SampleGrid, SamplingConfig, SamplingError, Strategy,
};
pub use synthetic::{
    make_benchmark, mean_embedding, standard_rig, BenchmarkScene, EmbeddingProbe, SceneConfig,
    SyntheticScene,
};
pub use tensor::{ImagePoint, Tensor3, TensorError};
