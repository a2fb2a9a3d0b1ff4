//! Camera models, box parametrization, and overlap metrics.
//!
//! Conventions follow rectified automotive stereo data: the world frame is
//! the left camera frame (x right, y down, z forward), boxes are gravity
//! aligned with yaw measured about the y axis, and a box's `dims` vector is
//! `[length, width, height]` with length along the heading, width lateral,
//! and height vertical.

use std::fmt;

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::tensor::ImagePoint;

/// Maximum deviation of `R^T R` from identity (and of `det R` from +1)
/// accepted when constructing an [`Extrinsics`]. Rotation matrices that are
/// merely the product of a few trig evaluations stay far below this.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Errors from validating cameras, rigs, and box proposals.
#[derive(Debug)]
pub enum GeometryError {
    /// `R^T R` deviates from the identity by more than [`ORTHONORMAL_TOL`].
    NotARotation { deviation: f64 },
    /// The matrix is orthonormal but orientation-reversing.
    Reflected { det: f64 },
    /// A focal length was zero, negative, or non-finite.
    BadFocal { fx: f64, fy: f64 },
    /// A box dimension (length, width, or height) was not strictly positive.
    BadDimension { index: usize, value: f64 },
    /// A proposal score outside `[0, 1]`.
    ScoreOutOfRange { score: f64 },
    /// The stereo baseline must be strictly positive.
    BadBaseline { baseline: f64 },
    /// A NaN or infinity where a finite value is required.
    NonFinite { what: &'static str },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::NotARotation { deviation } => {
                write!(f, "matrix is not orthonormal (deviation {deviation:.3e})")
            }
            GeometryError::Reflected { det } => {
                write!(f, "rotation has determinant {det:.6}, expected +1")
            }
            GeometryError::BadFocal { fx, fy } => {
                write!(f, "focal lengths must be positive and finite, got ({fx}, {fy})")
            }
            GeometryError::BadDimension { index, value } => {
                let name = ["length", "width", "height"][*index];
                write!(f, "box {name} must be strictly positive, got {value}")
            }
            GeometryError::ScoreOutOfRange { score } => {
                write!(f, "score {score} outside [0, 1]")
            }
            GeometryError::BadBaseline { baseline } => {
                write!(f, "stereo baseline must be positive, got {baseline}")
            }
            GeometryError::NonFinite { what } => write!(f, "non-finite {what}"),
        }
    }
}

impl std::error::Error for GeometryError {}

/// Pinhole intrinsics without skew or distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::BadFocal { fx, fy });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::NonFinite {
                what: "principal point",
            });
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Perspective projection of a point already in camera coordinates.
    /// Returns `None` for points at or behind the image plane (`z <= 0`).
    pub fn project_camera_point(&self, p: &Point3<f64>) -> Option<ImagePoint> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(ImagePoint::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

/// A rigid world-to-camera transform: `p_cam = R * p_world + t`.
///
/// Construction checks that `R` is a proper rotation so that every camera in
/// the pipeline is guaranteed orientation-preserving from then on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { what: "rotation" });
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite {
                what: "translation",
            });
        }
        let gram = rotation.transpose() * rotation;
        let deviation = (gram - Matrix3::identity()).abs().max();
        if deviation > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { deviation });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::Reflected { det });
        }
        Ok(Extrinsics {
            rotation,
            translation,
        })
    }

    /// The identity transform (camera frame equals world frame).
    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// A pure translation, as produced by rectified stereo calibration.
    pub fn translation_only(t: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(Matrix3::identity(), t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Maps a world point into the camera frame.
    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }
}

/// One calibrated camera: intrinsics plus its pose in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Camera {
    /// Projects a world point; `None` when it lands at or behind the image
    /// plane of this camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<ImagePoint> {
        self.intrinsics
            .project_camera_point(&self.extrinsics.to_camera(p))
    }
}

/// Affine map from full-resolution pixel coordinates to the coordinates of a
/// downsampled feature level: `feat = scale * pix + offset`, applied per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAffine {
    pub scale: f64,
    pub offset: f64,
}

impl LevelAffine {
    /// The map for a level produced by `stride x stride` average pooling:
    /// cell `j` pools pixels `[j*s, j*s + s)`, so its center sits at
    /// `j*s + (s-1)/2` and the inverse is `feat = pix/s + (1-s)/(2s)`.
    pub fn for_stride(stride: usize) -> Self {
        let s = stride as f64;
        LevelAffine {
            scale: 1.0 / s,
            offset: (1.0 - s) / (2.0 * s),
        }
    }

    pub fn apply(&self, p: ImagePoint) -> ImagePoint {
        ImagePoint::new(self.scale * p.u + self.offset, self.scale * p.v + self.offset)
    }
}

/// A calibrated stereo pair plus the pixel bounds of its images.
///
/// For rectified data both cameras share a frame orientation and are
/// separated along x; [`StereoRig::ideal`] builds that directly, while
/// dataset calibration goes through [`crate::kitti::KittiCalib`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: Camera,
    pub right: Camera,
    pub image_width: usize,
    pub image_height: usize,
}

impl StereoRig {
    /// A rectified rig with identical intrinsics, the left camera at the
    /// world origin and the right camera `baseline` meters to its right.
    pub fn ideal(
        intrinsics: Intrinsics,
        baseline: f64,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self, GeometryError> {
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(GeometryError::BadBaseline { baseline });
        }
        Ok(StereoRig {
            left: Camera {
                intrinsics,
                extrinsics: Extrinsics::identity(),
            },
            right: Camera {
                intrinsics,
                // A point at world x appears at x - b in right-camera coords.
                extrinsics: Extrinsics::translation_only(Vector3::new(-baseline, 0.0, 0.0))?,
            },
            image_width,
            image_height,
        })
    }

    /// Horizontal distance between the two camera centers.
    pub fn baseline(&self) -> f64 {
        (self.left.extrinsics.translation().x - self.right.extrinsics.translation().x).abs()
    }

    /// True when `p` falls inside the image rectangle (pixel centers
    /// inclusive: `[0, w-1] x [0, h-1]`).
    pub fn in_bounds(&self, p: &ImagePoint) -> bool {
        p.u >= 0.0
            && p.u <= (self.image_width - 1) as f64
            && p.v >= 0.0
            && p.v <= (self.image_height - 1) as f64
    }
}

/// Rotation about the y (vertical, pointing down) axis.
pub fn rotation_y(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// An oriented 3D box hypothesis with a confidence score.
///
/// `center` is the geometric center in the world (left camera) frame and
/// `dims` is `[length, width, height]`. `yaw` rotates the length axis from
/// world +x about the y axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal3D {
    pub center: Point3<f64>,
    pub dims: Vector3<f64>,
    pub yaw: f64,
    pub score: f64,
}

impl Proposal3D {
    pub fn new(
        center: Point3<f64>,
        dims: Vector3<f64>,
        yaw: f64,
        score: f64,
    ) -> Result<Self, GeometryError> {
        let p = Proposal3D {
            center,
            dims,
            yaw,
            score,
        };
        p.validate()?;
        Ok(p)
    }

    /// Re-checks every invariant; used after deserializing from untrusted
    /// sources.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.center.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { what: "center" });
        }
        for (i, &d) in self.dims.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(GeometryError::BadDimension { index: i, value: d });
            }
        }
        if !self.yaw.is_finite() {
            return Err(GeometryError::NonFinite { what: "yaw" });
        }
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::ScoreOutOfRange { score: self.score });
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.dims.x
    }

    pub fn width(&self) -> f64 {
        self.dims.y
    }

    pub fn height(&self) -> f64 {
        self.dims.z
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Maps latent box coordinates in `[0,1]^3` (x along length, y along
    /// width, z bottom-to-top) to a world point. Latent `(0.5, 0.5, 0.5)` is
    /// the box center; latent z increases upward, i.e. toward smaller world y.
    pub fn local_to_world(&self, latent: &Point3<f64>) -> Point3<f64> {
        let local = Vector3::new(
            (latent.x - 0.5) * self.dims.x,
            -(latent.z - 0.5) * self.dims.z,
            (latent.y - 0.5) * self.dims.y,
        );
        self.center + rotation_y(self.yaw) * local
    }

    /// True when the world point lies inside the (closed) box.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let d = rotation_y(self.yaw).transpose() * (p - self.center);
        d.x.abs() <= self.dims.x * 0.5
            && d.z.abs() <= self.dims.y * 0.5
            && d.y.abs() <= self.dims.z * 0.5
    }

    /// Footprint corners in the ground plane `(x, z)`, counter-clockwise.
    pub fn bev_corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        // Heading and lateral directions of the footprint in (x, z).
        let hd = Vector2::new(c, -s);
        let lat = Vector2::new(s, c);
        let ctr = Vector2::new(self.center.x, self.center.z);
        let hl = self.dims.x * 0.5;
        let hw = self.dims.y * 0.5;
        [
            ctr + hd * hl + lat * hw,
            ctr - hd * hl + lat * hw,
            ctr - hd * hl - lat * hw,
            ctr + hd * hl - lat * hw,
        ]
    }
}

/// Area of a convex polygon given counter-clockwise vertices (shoelace).
fn polygon_area(pts: &[Vector2<f64>]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        sum += a.x * b.y - b.x * a.y;
    }
    0.5 * sum.abs()
}

/// Clips `subject` against the half-plane left of `a -> b`
/// (Sutherland-Hodgman step).
fn clip_against_edge(
    subject: &[Vector2<f64>],
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> Vec<Vector2<f64>> {
    let edge = b - a;
    let inside = |p: &Vector2<f64>| edge.x * (p.y - a.y) - edge.y * (p.x - a.x) >= 0.0;
    let mut out = Vec::with_capacity(subject.len() + 1);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        let cur_in = inside(&cur);
        let prev_in = inside(&prev);
        if cur_in != prev_in {
            // The segment crosses the edge line; add the intersection.
            let d = cur - prev;
            let denom = edge.x * d.y - edge.y * d.x;
            if denom.abs() > 0.0 {
                let t = (edge.x * (a.y - prev.y) - edge.y * (a.x - prev.x)) / denom;
                out.push(prev + d * t);
            }
        }
        if cur_in {
            out.push(cur);
        }
    }
    out
}

/// Intersection area of two counter-clockwise convex polygons.
fn convex_intersection_area(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    let mut poly = a.to_vec();
    for i in 0..b.len() {
        if poly.is_empty() {
            return 0.0;
        }
        poly = clip_against_edge(&poly, b[i], b[(i + 1) % b.len()]);
    }
    polygon_area(&poly)
}

/// Intersection-over-union of the rotated footprints in the ground plane.
pub fn box_iou_bev(a: &Proposal3D, b: &Proposal3D) -> f64 {
    let ca = a.bev_corners();
    let cb = b.bev_corners();
    let inter = convex_intersection_area(&ca, &cb);
    let union = a.dims.x * a.dims.y + b.dims.x * b.dims.y - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Full 3D intersection-over-union: rotated footprint overlap times the
/// overlap of the vertical extents.
pub fn box_iou_3d(a: &Proposal3D, b: &Proposal3D) -> f64 {
    let inter_bev = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    // Boxes are gravity aligned, so the vertical extent is yaw-independent.
    let a_lo = a.center.y - a.dims.z * 0.5;
    let a_hi = a.center.y + a.dims.z * 0.5;
    let b_lo = b.center.y - b.dims.z * 0.5;
    let b_hi = b.center.y + b.dims.z * 0.5;
    let inter_h = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    let inter = inter_bev * inter_h;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Stereo projection of one latent sample point, keeping its index into the
/// originating grid. A `None` view means the point fell at or behind that
/// camera's image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointProjection {
    pub index: usize,
    pub left: Option<ImagePoint>,
    pub right: Option<ImagePoint>,
}

/// Projects world points into both cameras of a rig, preserving order and
/// index so downstream stages can line projections up with latent points.
pub fn project_points(rig: &StereoRig, points: &[Point3<f64>]) -> Vec<PointProjection> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| PointProjection {
            index,
            left: rig.left.project(p),
            right: rig.right.project(p),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};

    fn unit_cube_at(x: f64, y: f64, z: f64) -> Proposal3D {
        Proposal3D::new(Point3::new(x, y, z), Vector3::new(1.0, 1.0, 1.0), 0.0, 1.0).unwrap()
    }

    #[test]
    fn rotation_y_matches_explicit_matrix() {
        for yaw in [-2.0, -0.4, 0.0, 0.9, 3.0] {
            let r = rotation_y(yaw);
            let (s, c) = (yaw.sin(), yaw.cos());
            assert_relative_eq!(r[(0, 0)], c);
            assert_relative_eq!(r[(0, 2)], s);
            assert_relative_eq!(r[(2, 0)], -s);
            assert_relative_eq!(r[(2, 2)], c);
            assert_relative_eq!(r[(1, 1)], 1.0);
            // Proper rotation: preserves length, det +1.
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn extrinsics_rejects_scaled_and_reflected_matrices() {
        let scaled = Matrix3::identity() * 1.001;
        assert!(matches!(
            Extrinsics::new(scaled, Vector3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        let mut reflected = Matrix3::identity();
        reflected[(0, 0)] = -1.0;
        assert!(matches!(
            Extrinsics::new(reflected, Vector3::zeros()),
            Err(GeometryError::Reflected { .. })
        ));
        assert!(Extrinsics::new(rotation_y(0.73), Vector3::new(1.0, 2.0, 3.0)).is_ok());
    }

    #[test]
    fn projection_matches_homogeneous_oracle() {
        let intr = Intrinsics::new(700.0, 710.0, 320.0, 240.0).unwrap();
        let extr =
            Extrinsics::new(rotation_y(0.31), Vector3::new(-0.27, 0.05, 0.4)).unwrap();
        let cam = Camera {
            intrinsics: intr,
            extrinsics: extr.clone(),
        };

        // Independent path: build the 3x4 projection matrix and divide by w.
        let k = Matrix3::new(
            intr.fx, 0.0, intr.cx, 0.0, intr.fy, intr.cy, 0.0, 0.0, 1.0,
        );
        let mut rt = Matrix4::identity();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(extr.rotation());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(extr.translation());

        for (i, p) in [
            Point3::new(1.0, -0.5, 8.0),
            Point3::new(-3.0, 1.5, 20.0),
            Point3::new(0.0, 0.0, 2.5),
        ]
        .iter()
        .enumerate()
        {
            let proj = cam.project(p).unwrap();
            let hom = rt * Vector4::new(p.x, p.y, p.z, 1.0);
            let pix = k * Vector3::new(hom.x, hom.y, hom.z);
            assert_relative_eq!(proj.u, pix.x / pix.z, epsilon = 1e-9, max_relative = 1e-9);
            assert_relative_eq!(proj.v, pix.y / pix.z, epsilon = 1e-9, max_relative = 1e-9);
            assert!(i < 3);
        }
    }

    #[test]
    fn points_behind_the_camera_do_not_project() {
        let rig = StereoRig::ideal(
            Intrinsics::new(160.0, 160.0, 80.0, 60.0).unwrap(),
            0.54,
            160,
            120,
        )
        .unwrap();
        assert!(rig.left.project(&Point3::new(0.0, 0.0, -1.0)).is_none());
        assert!(rig.left.project(&Point3::new(0.0, 0.0, 0.0)).is_none());
        assert!(rig.left.project(&Point3::new(0.0, 0.0, 1.0)).is_some());
    }

    #[test]
    fn ideal_rig_produces_expected_disparity() {
        let intr = Intrinsics::new(160.0, 160.0, 80.0, 60.0).unwrap();
        let rig = StereoRig::ideal(intr, 0.54, 160, 120).unwrap();
        assert_relative_eq!(rig.baseline(), 0.54);
        let p = Point3::new(0.8, -0.3, 12.0);
        let l = rig.left.project(&p).unwrap();
        let r = rig.right.project(&p).unwrap();
        assert_relative_eq!(l.u - r.u, 160.0 * 0.54 / 12.0, epsilon = 1e-12);
        assert_relative_eq!(l.v, r.v, epsilon = 1e-12);
    }

    #[test]
    fn level_affine_matches_pooling_geometry() {
        let l4 = LevelAffine::for_stride(4);
        assert_relative_eq!(l4.scale, 0.25);
        assert_relative_eq!(l4.offset, -0.375);
        assert_relative_eq!(LevelAffine::for_stride(8).offset, -0.4375);
        assert_relative_eq!(LevelAffine::for_stride(16).offset, -0.46875);
        // The center of pooled cell j maps exactly onto feature coordinate j.
        for j in 0..5 {
            let center = ImagePoint::new(4.0 * j as f64 + 1.5, 1.5);
            let f = l4.apply(center);
            assert_relative_eq!(f.u, j as f64, epsilon = 1e-12);
            assert_relative_eq!(f.v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn local_to_world_hits_face_centers() {
        let p = Proposal3D::new(
            Point3::origin(),
            Vector3::new(4.0, 2.0, 1.5),
            0.0,
            1.0,
        )
        .unwrap();
        // Front-face bottom center: +x half length, bottom is +y (y is down).
        let w = p.local_to_world(&Point3::new(1.0, 0.5, 0.0));
        assert_relative_eq!(w.x, 2.0, epsilon = 1e-12);
        assert_relative_eq!(w.y, 0.75, epsilon = 1e-12);
        assert_relative_eq!(w.z, 0.0, epsilon = 1e-12);
        // Center maps to center.
        let c = p.local_to_world(&Point3::new(0.5, 0.5, 0.5));
        assert_relative_eq!((c - Point3::origin()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn local_to_world_rotates_with_yaw() {
        let p = Proposal3D::new(
            Point3::new(1.0, 0.5, 10.0),
            Vector3::new(4.0, 2.0, 1.5),
            std::f64::consts::FRAC_PI_2,
            1.0,
        )
        .unwrap();
        // At yaw pi/2 the heading points along -z.
        let w = p.local_to_world(&Point3::new(1.0, 0.5, 0.5));
        assert_relative_eq!(w.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.y, 0.5, epsilon = 1e-12);
        assert_relative_eq!(w.z, 10.0 - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn contains_agrees_with_local_to_world() {
        let p = Proposal3D::new(
            Point3::new(-2.0, 1.1, 14.0),
            Vector3::new(3.9, 1.7, 1.5),
            0.62,
            1.0,
        )
        .unwrap();
        for latent in [
            Point3::new(0.5, 0.5, 0.5),
            Point3::new(0.001, 0.001, 0.001),
            Point3::new(0.999, 0.999, 0.999),
            Point3::new(0.25, 0.9, 0.1),
        ] {
            assert!(p.contains(&p.local_to_world(&latent)));
        }
        // Nudge just past a face along the heading.
        let outside = p.local_to_world(&Point3::new(1.001, 0.5, 0.5));
        assert!(!p.contains(&outside));
    }

    #[test]
    fn bev_iou_known_cases() {
        let a = unit_cube_at(0.0, 0.0, 0.0);
        assert_relative_eq!(box_iou_bev(&a, &a), 1.0, epsilon = 1e-12);

        // Two unit squares offset by half a side: intersection 0.5, union 1.5.
        let b = unit_cube_at(0.5, 0.0, 0.0);
        assert_relative_eq!(box_iou_bev(&a, &b), 1.0 / 3.0, epsilon = 1e-12);

        // Disjoint.
        let c = unit_cube_at(5.0, 0.0, 0.0);
        assert_relative_eq!(box_iou_bev(&a, &c), 0.0, epsilon = 1e-12);

        // 45 degree rotation about the same center: the octagon overlap.
        let mut d = unit_cube_at(0.0, 0.0, 0.0);
        d.yaw = std::f64::consts::FRAC_PI_4;
        let inter = 2.0 * (2.0f64.sqrt() - 1.0);
        assert_relative_eq!(
            box_iou_bev(&a, &d),
            inter / (2.0 - inter),
            epsilon = 1e-12
        );
    }

    #[test]
    fn iou_3d_combines_footprint_and_vertical_overlap() {
        let a = unit_cube_at(0.0, 0.0, 0.0);
        assert_relative_eq!(box_iou_3d(&a, &a), 1.0, epsilon = 1e-12);

        // Vertical-only offset of half the height.
        let b = unit_cube_at(0.0, 0.5, 0.0);
        assert_relative_eq!(box_iou_3d(&a, &b), 1.0 / 3.0, epsilon = 1e-12);

        // Offset along x and y: intersection 0.5 * 1 * 0.5 = 0.25.
        let c = unit_cube_at(0.5, 0.5, 0.0);
        assert_relative_eq!(box_iou_3d(&a, &c), 0.25 / 1.75, epsilon = 1e-12);

        // yaw invariance for a square footprint box rotated by pi/2.
        let mut d = unit_cube_at(0.0, 0.0, 0.0);
        d.yaw = std::f64::consts::FRAC_PI_2;
        assert_relative_eq!(box_iou_3d(&a, &d), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn project_points_keeps_indices_and_flags_behind_camera() {
        let rig = StereoRig::ideal(
            Intrinsics::new(160.0, 160.0, 80.0, 60.0).unwrap(),
            0.54,
            160,
            120,
        )
        .unwrap();
        let pts = vec![
            Point3::new(0.0, 0.0, 10.0),
            Point3::new(0.0, 0.0, -4.0),
            Point3::new(1.0, 1.0, 6.0),
        ];
        let projs = project_points(&rig, &pts);
        assert_eq!(projs.len(), 3);
        assert_eq!(projs[1].index, 1);
        assert!(projs[0].left.is_some() && projs[0].right.is_some());
        assert!(projs[1].left.is_none() && projs[1].right.is_none());
        assert!(projs[2].left.is_some());
    }

    #[test]
    fn proposal_validation_rejects_bad_fields() {
        let ok = Proposal3D::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), 0.0, 0.5);
        assert!(ok.is_ok());
        assert!(matches!(
            Proposal3D::new(Point3::origin(), Vector3::new(0.0, 1.0, 1.0), 0.0, 0.5),
            Err(GeometryError::BadDimension { index: 0, .. })
        ));
        assert!(matches!(
            Proposal3D::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), 0.0, 1.5),
            Err(GeometryError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            Proposal3D::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), f64::NAN, 0.5),
            Err(GeometryError::NonFinite { .. })
        ));
    }

    #[test]
    fn wrap_angle_stays_in_half_open_interval() {
        use std::f64::consts::PI;
        for a in [-10.0, -PI, -0.1, 0.0, 0.1, PI, 10.0, 100.0] {
            let w = wrap_angle(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12, "{a} -> {w}");
            assert_relative_eq!(wrap_angle(a + std::f64::consts::TAU), w, epsilon = 1e-9);
        }
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
    }
}
