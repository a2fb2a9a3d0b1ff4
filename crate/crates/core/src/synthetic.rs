//! Synthetic stereo scenes with exact ground truth.
//!
//! A scene is a handful of car-sized boxes resting on a textured ground
//! plane in front of a textured backdrop. Both views are ray-cast from the
//! same world geometry with a view-independent (Lambertian) procedural
//! texture, so corresponding pixels in the two images agree by
//! construction — the property the feature-consistency embedding measures.
//! Scenes are fully determined by a seed, which makes every downstream
//! experiment reproducible.

use nalgebra::{Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::backbone::StereoFeatures;
use crate::detector::EmbeddingVariant;
use crate::fce::{point_features, FceError};
use crate::geometry::{rotation_y, Intrinsics, Proposal3D, StereoRig};
use crate::kitti::NoiseSpec;
use crate::pnm::GrayImage;
use crate::sampling::SampleGrid;

/// Reference stereo rig used by every synthetic scene: 384x288 images,
/// 62-degree horizontal field of view, 0.54 m baseline. At typical car
/// depths this leaves a stride-4 feature cell well under the car's image
/// footprint, so misplaced boxes are resolvable.
pub fn standard_rig() -> StereoRig {
    let intrinsics = Intrinsics::new(320.0, 320.0, 192.0, 144.0).expect("valid focal");
    StereoRig::ideal(intrinsics, 0.54, 384, 288).expect("valid baseline")
}

/// Knobs of the scene generator and renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    /// Peak-to-mean contrast of the procedural texture.
    pub texture_amplitude: f64,
    /// Base texture frequency in cycles per meter.
    pub texture_frequency: f64,
    /// Sigma of additive per-pixel Gaussian noise, independent per view.
    pub noise_sigma: f64,
    /// Depth band the subject car is placed in, meters.
    pub depth_range: (f64, f64),
    /// Extra cars placed beside the subject.
    pub distractors: usize,
    /// Camera height above the ground plane, meters.
    pub camera_height: f64,
    /// Distance from the subject to the backdrop wall behind it, meters.
    /// A nearby vertical surface (think building facade) keeps texture
    /// sharp where a grazing-angle ground plane would blur out.
    pub backdrop_offset: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            texture_amplitude: 0.45,
            texture_frequency: 1.2,
            noise_sigma: 0.01,
            depth_range: (6.0, 28.0),
            distractors: 4,
            camera_height: 1.65,
            backdrop_offset: 8.0,
        }
    }
}

/// A generated scene: the rig, the true boxes (`boxes[0]` is the subject),
/// and everything needed to render it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rig: StereoRig,
    pub boxes: Vec<Proposal3D>,
    pub config: SceneConfig,
    seed: u64,
}

// Untextured base brightness per surface kind; texture modulates around it.
const GROUND_BASE: f64 = 0.55;
const BACKDROP_BASE: f64 = 0.5;
const FACE_BASE: [f64; 3] = [0.62, 0.75, 0.45];
// Car paint is smoother and lower-contrast than asphalt or facades.
const FACE_AMPLITUDE_SCALE: f64 = 0.4;
const FACE_FREQUENCY_SCALE: f64 = 0.6;

// Seed salts separating the texture domains.
const GROUND_SALT: u64 = 0x47524F;
const BACKDROP_SALT: u64 = 0x57414C;
const BOX_SALT: u64 = 0x424F58;
const OCTAVE_SALT: u64 = 0x4F4354;
const NOISE_SALT: u64 = 0x494D47;

impl SyntheticScene {
    /// Places a subject car (and `config.distractors` companions) on the
    /// ground plane. Deterministic in `seed`.
    pub fn generate(seed: u64, config: &SceneConfig) -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = standard_rig();
        let mut boxes = Vec::with_capacity(1 + config.distractors);

        let place = |rng: &mut ChaCha8Rng, x: f64, z: f64| {
            let dims = Vector3::new(
                rng.random_range(3.5..4.6),
                rng.random_range(1.6..1.9),
                rng.random_range(1.4..1.75),
            );
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            // Resting on the ground: the center sits half a height above it,
            // and camera y points down.
            let center = Point3::new(x, config.camera_height - dims.z * 0.5, z);
            Proposal3D::new(center, dims, yaw, 1.0).expect("positive dims")
        };

        let z = rng.random_range(config.depth_range.0..config.depth_range.1);
        // Keep the whole car comfortably inside the 62-degree frustum.
        let x = rng.random_range(-0.2..0.2) * z;
        boxes.push(place(&mut rng, x, z));

        for _ in 0..config.distractors {
            // Opposite side of the road and further out, so the subject is
            // never occluded.
            let side = if x >= 0.0 { -1.0 } else { 1.0 };
            let zd = z + rng.random_range(4.0..12.0);
            let xd = side * rng.random_range(3.5..6.0);
            boxes.push(place(&mut rng, xd, zd));
        }

        SyntheticScene {
            rig,
            boxes,
            config: *config,
            seed,
        }
    }

    /// The box all probes and benchmarks target.
    pub fn subject(&self) -> &Proposal3D {
        &self.boxes[0]
    }

    /// Depth of the backdrop wall: just behind the deepest box.
    pub fn backdrop_depth(&self) -> f64 {
        let deepest = self
            .boxes
            .iter()
            .map(|b| b.center.z)
            .fold(f64::NEG_INFINITY, f64::max);
        deepest + self.config.backdrop_offset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Ray-casts both views: 2x2 supersampling per pixel, then optional
    /// per-pixel Gaussian noise.
    pub fn render_stereo(&self) -> (GrayImage, GrayImage) {
        let left = self.render_camera(Vector3::zeros(), 0);
        let right = self.render_camera(Vector3::new(self.rig.baseline(), 0.0, 0.0), 1);
        (left, right)
    }

    fn render_camera(&self, center: Vector3<f64>, camera_index: u64) -> GrayImage {
        let (w, h) = (self.rig.image_width, self.rig.image_height);
        let k = &self.rig.left.intrinsics;
        let mut img = GrayImage::filled(w, h, 0.0);
        let mut noise = ChaCha8Rng::seed_from_u64(
            self.seed ^ NOISE_SALT.wrapping_mul(camera_index + 1),
        );
        let normal = rand_distr::Normal::new(0.0, self.config.noise_sigma.max(1e-12))
            .expect("finite sigma");
        let origin = Point3::from(center);
        for row in 0..h {
            for col in 0..w {
                let mut sum = 0.0;
                for (du, dv) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let dir = Vector3::new(
                        (col as f64 + du - k.cx) / k.fx,
                        (row as f64 + dv - k.cy) / k.fy,
                        1.0,
                    );
                    sum += self.shade(&origin, &dir);
                }
                let mut value = sum / 4.0;
                if self.config.noise_sigma > 0.0 {
                    value += rand_distr::Distribution::sample(&normal, &mut noise);
                }
                img.set(row, col, value.clamp(0.0, 1.0));
            }
        }
        img
    }

    /// Returns the shade of the nearest surface along `origin + t * dir`.
    fn shade(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> f64 {
        let freq = self.config.texture_frequency;
        // Backdrop wall: dir.z is always 1, so this hit always exists. The
        // doubled frequency keeps its texture decorrelated at baseline
        // scale even after coarse pooling.
        let mut best_t = (self.backdrop_depth() - origin.z) / dir.z;
        let wall = origin + dir * best_t;
        let mut value = BACKDROP_BASE
            + self.config.texture_amplitude
                * (value_noise(
                    self.seed ^ BACKDROP_SALT,
                    wall.x * freq * 2.0,
                    wall.y * freq * 2.0,
                ) - 0.5);

        // Ground plane y = camera_height (y points down).
        if dir.y > 1e-12 {
            let t = (self.config.camera_height - origin.y) / dir.y;
            if t > 1e-6 && t < best_t {
                best_t = t;
                let p = origin + dir * t;
                value = GROUND_BASE
                    + self.config.texture_amplitude
                        * (value_noise(self.seed ^ GROUND_SALT, p.x * freq, p.z * freq) - 0.5);
            }
        }

        for (i, b) in self.boxes.iter().enumerate() {
            let rot = rotation_y(b.yaw);
            let local_origin = rot.transpose() * (origin - b.center);
            let local_dir = rot.transpose() * dir;
            let half = Vector3::new(b.dims.x * 0.5, b.dims.z * 0.5, b.dims.y * 0.5);
            if let Some((t, axis)) = ray_box(&local_origin, &local_dir, &half) {
                if t < best_t {
                    best_t = t;
                    let p = local_origin + local_dir * t;
                    let (a, bq) = match axis {
                        0 => (p.z, p.y),
                        1 => (p.x, p.z),
                        _ => (p.x, p.y),
                    };
                    let seed = self.seed
                        ^ BOX_SALT.wrapping_mul(i as u64 + 1)
                        ^ OCTAVE_SALT.wrapping_mul(axis as u64 + 1);
                    let ff = freq * FACE_FREQUENCY_SCALE;
                    value = FACE_BASE[axis]
                        + self.config.texture_amplitude
                            * FACE_AMPLITUDE_SCALE
                            * (value_noise(seed, a * ff, bq * ff) - 0.5);
                }
            }
        }
        value
    }
}

/// Slab intersection with an axis-aligned box of half-extents `half`
/// centered at the origin. Returns the entry distance and the axis of the
/// entry face; `None` when the ray misses or starts inside.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, half: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut t0 = 1e-6;
    let mut t1 = f64::INFINITY;
    let mut axis = usize::MAX;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut ta = (-half[a] - origin[a]) * inv;
        let mut tb = (half[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
        }
        t1 = t1.min(tb);
        if t1 < t0 {
            return None;
        }
    }
    if axis == usize::MAX {
        // Entry never advanced past the epsilon: the ray starts inside.
        return None;
    }
    Some((t0, axis))
}

/// Two octaves of seeded value noise in roughly `[0, 1)`, continuous in
/// `(x, y)` and fully determined by the seed.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let base = noise_octave(seed, x, y);
    let detail = noise_octave(seed ^ OCTAVE_SALT, x * 2.0 + 13.7, y * 2.0 + 7.3);
    (base + 0.5 * detail) / 1.5
}

fn noise_octave(seed: u64, x: f64, y: f64) -> f64 {
    let (ix, iy) = (x.floor(), y.floor());
    let (fx, fy) = (x - ix, y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

/// SplitMix-style hash of a lattice cell to a uniform value in `[0, 1)`.
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Mean embedding value over the valid sample points of a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingProbe {
    /// Mean over all channels of all valid points; NaN when none are valid.
    pub mean: f64,
    /// Number of valid sample points.
    pub valid: usize,
}

/// Samples the grid on `proposal`, embeds, and averages the embedding over
/// valid points. The probe is the scalar "how consistent does this box
/// look" signal.
pub fn mean_embedding(
    feats: &StereoFeatures,
    rig: &StereoRig,
    grid: &SampleGrid,
    proposal: &Proposal3D,
    variant: EmbeddingVariant,
) -> Result<EmbeddingProbe, FceError> {
    let world = grid.to_world(proposal);
    let pf = point_features(feats, rig, &world)?;
    let space = variant.embed(&pf);
    let mut sum = 0.0;
    let mut valid = 0usize;
    for i in 0..space.count() {
        if space.is_valid(i) {
            valid += 1;
            sum += space.point(i).iter().sum::<f64>();
        }
    }
    let mean = if valid == 0 {
        f64::NAN
    } else {
        sum / (valid * space.channels()) as f64
    };
    Ok(EmbeddingProbe { mean, valid })
}

/// One benchmark case: a scene plus the noisy proposal a detector would
/// have produced for its subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkScene {
    pub scene: SyntheticScene,
    pub proposal: Proposal3D,
}

/// Generates `count` seeded scenes, each with a perturbed subject proposal.
pub fn make_benchmark(
    count: usize,
    seed: u64,
    config: &SceneConfig,
    noise: &NoiseSpec,
) -> Vec<BenchmarkScene> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let scene = SyntheticScene::generate(master.random(), config);
            let proposal = noise
                .perturb(scene.subject(), &mut master)
                .expect("log-normal dims stay positive");
            BenchmarkScene { scene, proposal }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::geometry::box_iou_3d;
    use crate::sampling::{generate_grid, CarShapeModel, SamplingConfig};
    use approx::assert_relative_eq;

    #[test]
    fn generation_is_deterministic_and_grounded() {
        let config = SceneConfig::default();
        let a = SyntheticScene::generate(7, &config);
        let b = SyntheticScene::generate(7, &config);
        assert_eq!(a, b);
        let c = SyntheticScene::generate(8, &config);
        assert_ne!(a.subject(), c.subject());
        assert_eq!(a.boxes.len(), 5);
        for b in &a.boxes {
            // Bottom face on the ground plane.
            assert_relative_eq!(b.center.y + b.dims.z * 0.5, config.camera_height);
            assert!(b.center.z >= config.depth_range.0);
        }
    }

    #[test]
    fn renders_are_deterministic_and_in_range() {
        let scene = SyntheticScene::generate(3, &SceneConfig::default());
        let (l1, r1) = scene.render_stereo();
        let (l2, _) = scene.render_stereo();
        assert_eq!(l1.width(), 384);
        assert_eq!(l1.height(), 288);
        for row in 0..l1.height() {
            for col in 0..l1.width() {
                assert_relative_eq!(l1.get(row, col), l2.get(row, col));
                assert!((0.0..=1.0).contains(&l1.get(row, col)));
            }
        }
        // The views must differ (parallax) but share statistics.
        let mean = |img: &crate::pnm::GrayImage| {
            let mut s = 0.0;
            for row in 0..img.height() {
                for col in 0..img.width() {
                    s += img.get(row, col);
                }
            }
            s / (img.width() * img.height()) as f64
        };
        assert!((mean(&l1) - mean(&r1)).abs() < 0.05);
        let mut diff = 0usize;
        for row in 0..l1.height() {
            for col in 0..l1.width() {
                if (l1.get(row, col) - r1.get(row, col)).abs() > 1e-3 {
                    diff += 1;
                }
            }
        }
        assert!(diff > 1000, "stereo views look identical: {diff}");
    }

    #[test]
    fn stereo_texture_is_view_consistent_on_the_ground() {
        // A ground point visible in both views must shade identically:
        // the texture is attached to the surface, not the camera.
        let mut config = SceneConfig::default();
        config.noise_sigma = 0.0;
        let scene = SyntheticScene::generate(11, &config);
        let ground = Point3::new(1.0, config.camera_height, 12.0);
        let left_dir = (ground - Point3::origin()) / 12.0;
        let right_origin = Point3::new(scene.rig.baseline(), 0.0, 0.0);
        let right_dir = (ground - right_origin) / 12.0;
        let a = scene.shade(&Point3::origin(), &left_dir);
        let b = scene.shade(&right_origin, &right_dir);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn value_noise_is_continuous_and_seeded() {
        let a = value_noise(1, 0.999_999, 2.5);
        let b = value_noise(1, 1.000_001, 2.5);
        assert!((a - b).abs() < 1e-4, "discontinuity at lattice edge");
        assert_ne!(value_noise(1, 3.3, 4.4), value_noise(2, 3.3, 4.4));
        for i in 0..100 {
            let v = value_noise(9, i as f64 * 0.37 - 5.0, i as f64 * 0.61 - 3.0);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn ray_box_hits_front_face() {
        let half = Vector3::new(2.0, 1.0, 1.0);
        let origin = Vector3::new(0.0, 0.0, -5.0);
        let dir = Vector3::new(0.0, 0.0, 1.0);
        let (t, axis) = ray_box(&origin, &dir, &half).unwrap();
        assert_relative_eq!(t, 4.0);
        assert_eq!(axis, 2);
        // Miss above.
        let origin = Vector3::new(0.0, 5.0, -5.0);
        assert!(ray_box(&origin, &dir, &half).is_none());
        // Parallel ray inside the y slab but outside x.
        let origin = Vector3::new(5.0, 0.0, -5.0);
        assert!(ray_box(&origin, &dir, &half).is_none());
    }

    #[test]
    fn aligned_box_embeds_more_consistently_than_displaced() {
        let mut config = SceneConfig::default();
        config.depth_range = (10.0, 14.0);
        let scene = SyntheticScene::generate(21, &config);
        let (left, right) = scene.render_stereo();
        let feats = StereoFeatures::extract(&left, &right, &BackboneConfig::default()).unwrap();
        let grid = generate_grid(&CarShapeModel::default(), &SamplingConfig::default()).unwrap();
        let aligned =
            mean_embedding(&feats, &scene.rig, &grid, scene.subject(), EmbeddingVariant::Enhanced)
                .unwrap();
        let mut displaced_box = scene.subject().clone();
        displaced_box.center.x += 2.0;
        let displaced =
            mean_embedding(&feats, &scene.rig, &grid, &displaced_box, EmbeddingVariant::Enhanced)
                .unwrap();
        assert!(aligned.valid > 100);
        assert!(displaced.valid > 100);
        assert!(
            aligned.mean > displaced.mean,
            "aligned {} should beat displaced {}",
            aligned.mean,
            displaced.mean
        );
    }

    #[test]
    fn benchmark_is_seeded_and_proposals_start_near_truth() {
        let scenes = make_benchmark(20, 5, &SceneConfig::default(), &NoiseSpec::default());
        let again = make_benchmark(20, 5, &SceneConfig::default(), &NoiseSpec::default());
        assert_eq!(scenes, again);
        let mut mean_iou = 0.0;
        for case in &scenes {
            let iou = box_iou_3d(case.scene.subject(), &case.proposal);
            assert!(iou > 0.0, "proposal drifted completely off the truth");
            mean_iou += iou;
        }
        mean_iou /= scenes.len() as f64;
        assert!(
            (0.2..0.95).contains(&mean_iou),
            "noise scale looks off: mean IoU {mean_iou}"
        );
    }
// Temporary diagnostic appended to synthetic.rs tests
    #[test]
    fn diag_seed1() {
        let config = SceneConfig::default();
        let scene = SyntheticScene::generate(1, &config);
        eprintln!("subject {:?}", scene.subject());
        for (i, b) in scene.boxes.iter().enumerate().skip(1) {
            eprintln!("parked {i}: x {:.1} z {:.1} yaw {:.2}", b.center.x, b.center.z, b.yaw);
        }
        eprintln!("backdrop z {:.1}", scene.backdrop_depth());
        let (left, right) = scene.render_stereo();
        left.save_pgm("/tmp/seed1_left.pgm").unwrap();
        right.save_pgm("/tmp/seed1_right.pgm").unwrap();
        // Where do aligned vs displaced points project?
        let lp = scene.rig.left.project(&scene.subject().center).unwrap();
        eprintln!("subject center -> left ({:.0},{:.0})", lp.u, lp.v);
        let mut d = scene.subject().clone();
        let side = if d.center.x >= 0.0 { 1.0 } else { -1.0 };
        d.center.x += side * 2.0;
        let dp = scene.rig.left.project(&d.center).unwrap();
        eprintln!("displaced center -> left ({:.0},{:.0})", dp.u, dp.v);
    }

    #[test]
    fn diag_sweep() {
        let config = SceneConfig::default();
        let grid = generate_grid(&CarShapeModel::default(), &SamplingConfig::default()).unwrap();
        for gain in [4.0f64, 6.0, 8.0, 10.0, 14.0] {
            let bc = BackboneConfig { gain, ..BackboneConfig::default() };
            let mut wins = 0usize;
            let mut worst = (f64::INFINITY, 0u64);
            let mut sum_margin = 0.0;
            for seed in 0..30u64 {
                let scene = SyntheticScene::generate(seed, &config);
                let (left, right) = scene.render_stereo();
                let feats = StereoFeatures::extract(&left, &right, &bc).unwrap();
                let aligned = mean_embedding(&feats, &scene.rig, &grid, scene.subject(), EmbeddingVariant::Enhanced).unwrap();
                let mut d = scene.subject().clone();
                let side = if d.center.x >= 0.0 { 1.0 } else { -1.0 };
                d.center.x += side * 2.0;
                let displaced = mean_embedding(&feats, &scene.rig, &grid, &d, EmbeddingVariant::Enhanced).unwrap();
                let margin = aligned.mean - displaced.mean;
                if margin > 0.0 { wins += 1; }
                if margin < worst.0 { worst = (margin, seed); }
                sum_margin += margin;
            }
            eprintln!("gain {gain}: wins {wins}/30 mean margin {:+.4} worst {:+.4} (seed {})", sum_margin / 30.0, worst.0, worst.1);
        }
    }

    #[test]
    fn diag_probe() {
        let mut config = SceneConfig::default();
        config.depth_range = (10.0, 14.0);
        let scene = SyntheticScene::generate(21, &config);
        let (left, right) = scene.render_stereo();
        eprintln!("subject: center {:?} dims {:?} yaw {}", scene.subject().center, scene.subject().dims, scene.subject().yaw);
        // project subject center
        let c = scene.subject().center;
        let lp = scene.rig.left.project(&c).unwrap();
        let rp = scene.rig.right.project(&c).unwrap();
        eprintln!("center projects L ({:.1},{:.1}) R ({:.1},{:.1})", lp.u, lp.v, rp.u, rp.v);
        // image values near center L vs R
        let feats = StereoFeatures::extract(&left, &right, &BackboneConfig::default()).unwrap();
        let grid = generate_grid(&CarShapeModel::default(), &SamplingConfig::default()).unwrap();
        for (name, b) in [("aligned", scene.subject().clone()), ("displaced", { let mut d = scene.subject().clone(); d.center.x += 1.5; d })] {
            let world = grid.to_world(&b);
            let pf = point_features(&feats, &scene.rig, &world).unwrap();
            let n = pf.count();
            let c = pf.channels;
            let mut lt_abs = vec![0.0f64; c];
            let mut ms_abs = vec![0.0f64; c];
            let mut hs_abs = vec![0.0f64; c];
            let mut valid = 0usize;
            for i in 0..n {
                if !pf.valid[i] { continue; }
                valid += 1;
                for ch in 0..c {
                    let idx = i * c + ch;
                    let lt = pf.left[0][idx] - pf.right[0][idx];
                    let ms = 0.5 * (pf.left[1][idx] + pf.right[1][idx]);
                    let hs = 0.5 * (pf.left[2][idx] + pf.right[2][idx]);
                    lt_abs[ch] += lt.abs();
                    ms_abs[ch] += ms.abs();
                    hs_abs[ch] += hs.abs();
                }
            }
            for ch in 0..c {
                lt_abs[ch] /= valid as f64;
                ms_abs[ch] /= valid as f64;
                hs_abs[ch] /= valid as f64;
            }
            eprintln!("{name}: valid {valid}");
            eprintln!("  mean|lt| per ch: {:?}", lt_abs.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
            eprintln!("  mean|ms| per ch: {:?}", ms_abs.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
            eprintln!("  mean|hs| per ch: {:?}", hs_abs.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
        }
    }

}
