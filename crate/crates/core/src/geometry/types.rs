//! Geometric domain types: points, planes, calibration matrices, pose
//! chains, and bounding boxes.

use super::{GeometryError, Result};

/// Tolerance for the rotation-block orthonormality check.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// One LiDAR return: position in the LiDAR frame plus reflection intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflection rate in `[0, 1]`.
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point3 { x, y, z, intensity }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(GeometryError::InvalidPoint {
                reason: "non-finite coordinate".into(),
            });
        }
        if !self.intensity.is_finite() || !(0.0..=1.0).contains(&self.intensity) {
            return Err(GeometryError::InvalidPoint {
                reason: format!("intensity {} outside [0, 1]", self.intensity),
            });
        }
        Ok(())
    }
}

/// Ordered collection of points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.points.iter().try_for_each(Point3::validate)
    }
}

/// Pixel grid dimensions of the camera image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImagePlane {
    pub width: u32,
    pub height: u32,
}

impl ImagePlane {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadImagePlane);
        }
        Ok(ImagePlane { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Float coordinates inside `[0, width) x [0, height)`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// 3x4 camera intrinsic matrix, row-major; bottom row fixed to `[0, 0, 1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicMatrix {
    entries: [f64; 12],
}

impl IntrinsicMatrix {
    pub fn new(entries: [f64; 12]) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::BadIntrinsics {
                reason: "non-finite entry".into(),
            });
        }
        let bottom = [entries[8], entries[9], entries[10], entries[11]];
        if bottom != [0.0, 0.0, 1.0, 0.0] {
            return Err(GeometryError::BadIntrinsics {
                reason: format!("bottom row {:?} is not [0, 0, 1, 0]", bottom),
            });
        }
        if entries[0] <= 0.0 || entries[5] <= 0.0 {
            return Err(GeometryError::BadIntrinsics {
                reason: "focal entries must be positive".into(),
            });
        }
        Ok(IntrinsicMatrix { entries })
    }

    /// Standard pinhole form: focals `fx`, `fy` and principal point `(cx, cy)`.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        IntrinsicMatrix::new([fx, 0.0, cx, 0.0, 0.0, fy, cy, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn entries(&self) -> &[f64; 12] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * 4 + col]
    }

    /// Homogeneous image coordinates of a camera-frame point.
    pub fn apply(&self, camera_point: [f64; 3]) -> [f64; 3] {
        let p = [camera_point[0], camera_point[1], camera_point[2], 1.0];
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            for (c, &pc) in p.iter().enumerate() {
                *o += self.entries[r * 4 + c] * pc;
            }
        }
        out
    }
}

/// 4x4 rigid transform, row-major; rotation block orthonormal with positive
/// determinant, bottom row `[0, 0, 0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    entries: [f64; 16],
}

impl RigidTransform {
    pub fn new(entries: [f64; 16]) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotRigid {
                reason: "non-finite entry".into(),
            });
        }
        let bottom = [entries[12], entries[13], entries[14], entries[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::NotRigid {
                reason: format!("bottom row {:?} is not [0, 0, 0, 1]", bottom),
            });
        }
        let t = RigidTransform { entries };
        let r = t.rotation();
        // ||R^T R - I||_max
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let acc: f64 = r.iter().map(|row| row[i] * row[j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((acc - target).abs());
            }
        }
        if max_dev >= ORTHONORMALITY_TOL {
            return Err(GeometryError::NotRigid {
                reason: format!("rotation block deviates from orthonormal by {:.3e}", max_dev),
            });
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det <= 0.0 {
            return Err(GeometryError::NotRigid {
                reason: format!("rotation determinant {} is not positive", det),
            });
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        let mut entries = [0.0; 16];
        for i in 0..4 {
            entries[i * 4 + i] = 1.0;
        }
        RigidTransform { entries }
    }

    pub fn from_rotation_translation(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let mut entries = [0.0; 16];
        for (i, row) in rotation.iter().enumerate() {
            entries[i * 4..i * 4 + 3].copy_from_slice(row);
            entries[i * 4 + 3] = translation[i];
        }
        entries[15] = 1.0;
        RigidTransform::new(entries)
    }

    /// Pure translation.
    pub fn translation_only(translation: [f64; 3]) -> Self {
        let mut t = RigidTransform::identity();
        t.entries[3] = translation[0];
        t.entries[7] = translation[1];
        t.entries[11] = translation[2];
        t
    }

    pub fn entries(&self) -> &[f64; 16] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * 4 + col]
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let e = &self.entries;
        [
            [e[0], e[1], e[2]],
            [e[4], e[5], e[6]],
            [e[8], e[9], e[10]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.entries[3], self.entries[7], self.entries[11]]
    }

    /// Transform a point: rotation then translation.
    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.entries;
        [
            e[0] * p[0] + e[1] * p[1] + e[2] * p[2] + e[3],
            e[4] * p[0] + e[5] * p[1] + e[6] * p[2] + e[7],
            e[8] * p[0] + e[9] * p[1] + e[10] * p[2] + e[11],
        ]
    }

    /// Raw 4x4 product without revalidation; used internally by composition.
    pub(crate) fn raw_matmul(&self, other: &RigidTransform) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.entries[i * 4 + k] * other.entries[k * 4 + j];
                }
                out[i * 4 + j] = acc;
            }
        }
        out
    }
}

/// One stage of a pose chain, labelled `target<-source`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStage {
    pub label: String,
    pub transform: RigidTransform,
}

impl ChainStage {
    pub fn new(label: impl Into<String>, transform: RigidTransform) -> Result<Self> {
        let label = label.into();
        parse_frames(&label)?;
        Ok(ChainStage { label, transform })
    }

    /// `(target, source)` frame names from the label.
    pub fn frames(&self) -> (String, String) {
        parse_frames(&self.label).expect("validated at construction")
    }
}

fn parse_frames(label: &str) -> Result<(String, String)> {
    let mut parts = label.splitn(2, "<-");
    let target = parts.next().unwrap_or("").trim();
    let source = parts.next().unwrap_or("").trim();
    if target.is_empty() || source.is_empty() {
        return Err(GeometryError::BadChainLabel {
            label: label.to_string(),
        });
    }
    Ok((target.to_string(), source.to_string()))
}

/// Ordered, frame-consistent sequence of labelled rigid transforms.
///
/// Stages are written target-first, so the matrix product of the stages in
/// listed order maps the last stage's source frame into the first stage's
/// target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseChain {
    pub stages: Vec<ChainStage>,
}

impl PoseChain {
    pub fn new(stages: Vec<ChainStage>) -> Result<Self> {
        let chain = PoseChain { stages };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(GeometryError::EmptyChain);
        }
        for (i, pair) in self.stages.windows(2).enumerate() {
            let (_, source) = pair[0].frames();
            let (next_target, _) = pair[1].frames();
            if source != next_target {
                return Err(GeometryError::ChainMismatch {
                    index: i,
                    source_frame: source,
                    next_target,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

/// A point that survived projection: float pixel coordinates and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Index into the source [`PointCloud`].
    pub source_index: usize,
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in meters; always positive.
    pub depth: f64,
}

/// Oriented box: center, `(width, length, height)` extents, yaw about the
/// vertical axis, and a class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: usize,
}

impl BoundingBox3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: usize) -> Result<Self> {
        // NaN sizes must fail too, so test for the complement of `> 0`.
        if !size.iter().all(|&s| s > 0.0) {
            return Err(GeometryError::BadBox {
                reason: format!("non-positive size {:?}", size),
            });
        }
        Ok(BoundingBox3D {
            center,
            size,
            yaw,
            class_id,
        })
    }

    /// True if the LiDAR-frame point lies strictly inside the box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let (sin, cos) = self.yaw.sin_cos();
        // Rotate into the box frame (inverse yaw).
        let local_x = cos * dx + sin * dy;
        let local_y = -sin * dx + cos * dy;
        local_x.abs() < self.size[1] / 2.0
            && local_y.abs() < self.size[0] / 2.0
            && dz.abs() < self.size[2] / 2.0
    }
}

/// Axis-aligned image-space box with a class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: usize,
}

impl BoundingBox2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(GeometryError::BadBox {
                reason: format!("degenerate box [{}, {}] x [{}, {}]", x1, x2, y1, y2),
            });
        }
        Ok(BoundingBox2D {
            x1,
            y1,
            x2,
            y2,
            class_id,
        })
    }

    /// Strict interior test, boundary excluded.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.x1 < u && u < self.x2 && self.y1 < v && v < self.y2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_transform_rejects_bad_matrices() {
        let mut sheared = RigidTransform::identity().entries().to_owned();
        sheared[1] = 0.01;
        assert!(RigidTransform::new(sheared).is_err());

        let mut bad_bottom = RigidTransform::identity().entries().to_owned();
        bad_bottom[12] = 1.0;
        assert!(RigidTransform::new(bad_bottom).is_err());

        // Reflection: orthonormal but determinant -1.
        let reflection = RigidTransform::from_rotation_translation(
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0; 3],
        );
        assert!(reflection.is_err());
    }

    #[test]
    fn intrinsics_reject_bad_bottom_row_and_focals() {
        assert!(IntrinsicMatrix::pinhole(100.0, 100.0, 320.0, 240.0).is_ok());
        assert!(IntrinsicMatrix::pinhole(-1.0, 100.0, 0.0, 0.0).is_err());
        let mut entries = [0.0; 12];
        entries[0] = 1.0;
        entries[5] = 1.0;
        entries[10] = 2.0; // bottom row [0,0,2,0]
        assert!(IntrinsicMatrix::new(entries).is_err());
    }

    #[test]
    fn chain_labels_must_be_frame_consistent() {
        let id = RigidTransform::identity;
        let good = PoseChain::new(vec![
            ChainStage::new("camera<-ego_tc", id()).unwrap(),
            ChainStage::new("ego_tc<-global", id()).unwrap(),
        ]);
        assert!(good.is_ok());

        let bad = PoseChain::new(vec![
            ChainStage::new("camera<-ego_tc", id()).unwrap(),
            ChainStage::new("lidar<-global", id()).unwrap(),
        ]);
        assert!(matches!(bad, Err(GeometryError::ChainMismatch { .. })));

        assert!(PoseChain::new(vec![]).is_err());
        assert!(ChainStage::new("nonsense", id()).is_err());
    }

    #[test]
    fn box3d_contains_respects_yaw() {
        let b = BoundingBox3D::new([0.0, 0.0, 0.0], [1.0, 4.0, 1.0], 0.0, 0).unwrap();
        // length 4 along x, width 1 along y
        assert!(b.contains([1.9, 0.0, 0.0]));
        assert!(!b.contains([0.0, 0.7, 0.0]));
        let rotated = BoundingBox3D::new([0.0, 0.0, 0.0], [1.0, 4.0, 1.0], std::f64::consts::FRAC_PI_2, 0).unwrap();
        assert!(rotated.contains([0.0, 1.9, 0.0]));
        assert!(!rotated.contains([0.7, 0.0, 0.0]));
    }

    #[test]
    fn image_plane_rejects_zero_extent() {
        assert!(ImagePlane::new(0, 10).is_err());
        assert!(ImagePlane::new(10, 0).is_err());
        let plane = ImagePlane::new(4, 2).unwrap();
        assert_eq!(plane.pixel_count(), 8);
        assert!(plane.contains(3.999, 0.0));
        assert!(!plane.contains(4.0, 0.0));
        assert!(!plane.contains(-0.001, 1.0));
    }
}
