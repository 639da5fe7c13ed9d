//! Synthetic scene generation with known ground truth.
//!
//! Scenes place oriented object boxes in front of the camera, one height band
//! per class so that point coordinates carry a learnable class signal, plus a
//! ground-plane background class. The image shows per-class flat colors
//! splatted at projected point locations, and the pose chain carries a small
//! ego motion between the LiDAR and camera timestamps.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::geometry::{
    compose_chain, points_in_box2d, project_points, rasterize, BoundingBox3D, ChainStage,
    ImagePlane, IntrinsicMatrix, Point3, PointCloud, PoseChain, RigidTransform,
};

use super::io::{derive_boxes2d, Image, SceneBundle};
use super::{Result, SceneError};

/// Scene sampling parameters.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Number of annotated object boxes.
    pub objects: usize,
    /// Total class count including the background class 0.
    pub classes: usize,
    /// Inclusive range of points sampled inside each object box.
    pub points_per_object: (usize, usize),
    pub background_points: usize,
    /// Camera position in the ego frame, meters.
    pub camera_offset: [f64; 3],
    pub image_size: (u32, u32),
    /// Standard deviation of the positional jitter, meters.
    pub noise_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            objects: 3,
            classes: 4,
            points_per_object: (25, 45),
            background_points: 160,
            camera_offset: [0.3, 0.0, 1.4],
            image_size: (640, 480),
            noise_scale: 0.02,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.objects > 0
            && self.classes >= 2
            && self.points_per_object.0 >= 1
            && self.points_per_object.0 <= self.points_per_object.1
            && self.background_points > 0
            && self.image_size.0 > 0
            && self.image_size.1 > 0
            && self.noise_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidConfig {
                msg: format!("{:?}", self),
            })
        }
    }
}

/// Number of attempts before generation gives up.
const MAX_ATTEMPTS: usize = 64;

/// Height of the ground relative to the LiDAR origin.
const GROUND_Z: f64 = -1.5;
/// Vertical spacing between per-class object bands.
const BAND_SPACING: f64 = 1.1;

fn rotation_z(yaw: f64) -> [[f64; 3]; 3] {
    let (sin, cos) = yaw.sin_cos();
    [[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]]
}

/// Camera mount rotation: ego x (forward) becomes camera z (depth), ego y
/// (left) becomes -x (right), ego z (up) becomes -y (down).
fn mount_rotation() -> [[f64; 3]; 3] {
    [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Round through `f32` so serialized points round-trip bit-exactly.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Flat palette color for a class: evenly spaced hues.
pub fn class_color(class: usize, classes: usize) -> [u8; 3] {
    let hue = class as f64 / classes.max(1) as f64 * 360.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (hue / 60.0) as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

const BACKGROUND_COLOR: [u8; 3] = [96, 96, 96];

fn build_chain(rng: &mut ChaCha12Rng, camera_offset: [f64; 3]) -> PoseChain {
    // Ego pose at the LiDAR timestamp.
    let ego_yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let ego_pos = [
        rng.random_range(-40.0..40.0),
        rng.random_range(-40.0..40.0),
        0.0,
    ];
    // Small forward motion before the camera timestamp.
    let forward: f64 = rng.random_range(0.05..0.25);
    let yaw_drift: f64 = rng.random_range(-0.01..0.01);

    let lidar_in_ego = RigidTransform::translation_only([0.0, 0.0, 1.8]);

    let r_tl = rotation_z(ego_yaw);
    let global_from_ego_tl =
        RigidTransform::from_rotation_translation(r_tl, ego_pos).expect("rotation is rigid");

    let r_tc = rotation_z(ego_yaw + yaw_drift);
    let motion = mat_vec(&r_tl, [forward, 0.0, 0.0]);
    let ego_tc_pos = [
        ego_pos[0] + motion[0],
        ego_pos[1] + motion[1],
        ego_pos[2] + motion[2],
    ];
    let global_from_ego_tc =
        RigidTransform::from_rotation_translation(r_tc, ego_tc_pos).expect("rotation is rigid");
    let ego_tc_from_global = crate::geometry::invert_transform(&global_from_ego_tc);

    let mount = mount_rotation();
    let neg_offset = mat_vec(&mount, camera_offset);
    let camera_from_ego = RigidTransform::from_rotation_translation(
        mount,
        [-neg_offset[0], -neg_offset[1], -neg_offset[2]],
    )
    .expect("mount rotation is rigid");

    PoseChain::new(vec![
        ChainStage::new("camera<-ego_tc", camera_from_ego).expect("valid label"),
        ChainStage::new("ego_tc<-global", ego_tc_from_global).expect("valid label"),
        ChainStage::new("global<-ego_tl", global_from_ego_tl).expect("valid label"),
        ChainStage::new("ego_tl<-lidar", lidar_in_ego).expect("valid label"),
    ])
    .expect("chain frames are consistent by construction")
}

struct Attempt {
    cloud: PointCloud,
    labels: Vec<u32>,
    boxes: Vec<BoundingBox3D>,
    /// Per box, the index range of its generated points.
    box_point_ranges: Vec<std::ops::Range<usize>>,
}

fn sample_scene_content(rng: &mut ChaCha12Rng, cfg: &GeneratorConfig) -> Attempt {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut boxes = Vec::new();
    let mut ranges = Vec::new();

    for object in 0..cfg.objects {
        // Round-robin classes so every class band appears regularly.
        let class = 1 + object % (cfg.classes - 1);
        let band_z = GROUND_Z + BAND_SPACING * class as f64;
        let distance: f64 = rng.random_range(6.0..16.0);
        let lateral: f64 = rng.random_range(-0.3..0.3) * distance;
        let size = [
            rng.random_range(0.8..1.6),
            rng.random_range(0.9..2.2),
            rng.random_range(0.5..0.7),
        ];
        let yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let bx = BoundingBox3D::new([distance, lateral, band_z], size, yaw, class)
            .expect("sampled sizes are positive");

        let count = rng.random_range(cfg.points_per_object.0..=cfg.points_per_object.1);
        let start = points.len();
        let rot = rotation_z(yaw);
        for _ in 0..count {
            // Sample in the inner 80% of the box so jitter stays inside.
            let local = [
                rng.random_range(-0.4..0.4) * size[1],
                rng.random_range(-0.4..0.4) * size[0],
                rng.random_range(-0.4..0.4) * size[2],
            ];
            let world = mat_vec(&rot, local);
            let p = Point3::new(
                quantize(bx.center[0] + world[0] + gaussian(rng) * cfg.noise_scale),
                quantize(bx.center[1] + world[1] + gaussian(rng) * cfg.noise_scale),
                quantize(bx.center[2] + world[2] + gaussian(rng) * cfg.noise_scale),
                quantize(rng.random_range(0.0..1.0)),
            );
            points.push(p);
            labels.push(class as u32);
        }
        ranges.push(start..points.len());
        boxes.push(bx);
    }

    // Ground points sweep the full circle; only the forward wedge lands in
    // the camera view, so the scene keeps points outside the FOV.
    for _ in 0..cfg.background_points {
        let radius: f64 = rng.random_range(3.0..25.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let p = Point3::new(
            quantize(radius * angle.cos() + gaussian(rng) * cfg.noise_scale),
            quantize(radius * angle.sin() + gaussian(rng) * cfg.noise_scale),
            quantize(GROUND_Z + gaussian(rng) * cfg.noise_scale),
            quantize(rng.random_range(0.0..1.0)),
        );
        points.push(p);
        labels.push(0);
    }

    Attempt {
        cloud: PointCloud::new(points),
        labels,
        boxes,
        box_point_ranges: ranges,
    }
}

fn render_image(
    cfg: &GeneratorConfig,
    cloud: &PointCloud,
    labels: &[u32],
    intrinsics: &IntrinsicMatrix,
    transform: &RigidTransform,
    plane: &ImagePlane,
) -> Image {
    let mut image = Image::filled(cfg.image_size.0, cfg.image_size.1, BACKGROUND_COLOR);
    let mut projected = project_points(cloud, intrinsics, transform, plane);
    // Far points first so nearer splats overwrite them.
    projected.sort_by(|a, b| b.depth.partial_cmp(&a.depth).unwrap());
    for pp in &projected {
        let (pu, pv) = rasterize(pp);
        let color = class_color(labels[pp.source_index] as usize, cfg.classes);
        for dv in -2i64..=2 {
            for du in -2i64..=2 {
                let u = pu as i64 + du;
                let v = pv as i64 + dv;
                if u >= 0 && v >= 0 && (u as u32) < image.width && (v as u32) < image.height {
                    image.set_rgb(u as u32, v as u32, color);
                }
            }
        }
    }
    image
}

/// Generate a deterministic scene; retries sampling until every annotated box
/// is visible, holds at least one of its labeled points, and captures at
/// least one projected point.
pub fn generate_scene(cfg: &GeneratorConfig) -> Result<SceneBundle> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let (width, height) = cfg.image_size;
    let focal = width as f64 * 25.0 / 64.0;
    let intrinsics = IntrinsicMatrix::pinhole(focal, focal, width as f64 / 2.0, height as f64 / 2.0)
        .expect("positive focal length");
    let plane = ImagePlane::new(width, height)?;

    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let chain = build_chain(&mut rng, cfg.camera_offset);
        let transform = compose_chain(&chain)?;
        let attempt = sample_scene_content(&mut rng, cfg);

        // Every box must still contain at least one of its labeled points
        // after jitter.
        let contained = attempt
            .boxes
            .iter()
            .zip(&attempt.box_point_ranges)
            .all(|(bx, range)| {
                range
                    .clone()
                    .any(|i| bx.contains(attempt.cloud.points[i].coords()))
            });
        if !contained {
            last_reason = "a box lost all its points to jitter".into();
            continue;
        }

        let (boxes3d, boxes2d) =
            derive_boxes2d(&attempt.boxes, &intrinsics, &chain, &plane)?;
        if boxes3d.len() != attempt.boxes.len() {
            last_reason = "a box projected outside the image".into();
            continue;
        }

        // Each 2D box must capture at least one projected point of its own
        // object so the training branch always has members.
        let projected = project_points(&attempt.cloud, &intrinsics, &transform, &plane);
        let populated = boxes2d.iter().zip(&attempt.box_point_ranges).all(|(b2, range)| {
            points_in_box2d(&projected, b2)
                .iter()
                .any(|idx| range.contains(idx))
        });
        if !populated {
            last_reason = "a 2D box captured no projected member point".into();
            continue;
        }

        let image = render_image(
            cfg,
            &attempt.cloud,
            &attempt.labels,
            &intrinsics,
            &transform,
            &plane,
        );
        let bundle = SceneBundle {
            cloud: attempt.cloud,
            labels: attempt.labels,
            image,
            intrinsics,
            chain,
            boxes3d,
            boxes2d,
        };
        bundle.validate()?;
        return Ok(bundle);
    }
    Err(SceneError::GenerationRetry {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}
