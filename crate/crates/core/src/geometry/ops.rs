//! Pose-chain composition, pinhole projection, rasterization, and box
//! projection/selection.

use super::types::{
    BoundingBox2D, BoundingBox3D, ChainStage, ImagePlane, IntrinsicMatrix, Point3, PointCloud,
    PoseChain, ProjectedPoint, RigidTransform,
};
use super::{GeometryError, Result};

/// Matrix product of the chain stages in listed order.
pub fn compose_chain(chain: &PoseChain) -> Result<RigidTransform> {
    chain.validate()?;
    let mut acc = chain.stages[0].transform.clone();
    for stage in &chain.stages[1..] {
        let raw = acc.raw_matmul(&stage.transform);
        acc = RigidTransform::new(raw)?;
    }
    Ok(acc)
}

/// Inverse of a rigid transform: transposed rotation, back-rotated translation.
pub fn invert_transform(t: &RigidTransform) -> RigidTransform {
    let r = t.rotation();
    let tr = t.translation();
    let rotation = [
        [r[0][0], r[1][0], r[2][0]],
        [r[0][1], r[1][1], r[2][1]],
        [r[0][2], r[1][2], r[2][2]],
    ];
    let translation = [
        -(rotation[0][0] * tr[0] + rotation[0][1] * tr[1] + rotation[0][2] * tr[2]),
        -(rotation[1][0] * tr[0] + rotation[1][1] * tr[1] + rotation[1][2] * tr[2]),
        -(rotation[2][0] * tr[0] + rotation[2][1] * tr[1] + rotation[2][2] * tr[2]),
    ];
    RigidTransform::from_rotation_translation(rotation, translation)
        .expect("inverse of a rigid transform is rigid")
}

/// Chain with every stage inverted and the order reversed; composes to the
/// inverse of the original chain's composition.
pub fn invert_chain(chain: &PoseChain) -> Result<PoseChain> {
    let stages = chain
        .stages
        .iter()
        .rev()
        .map(|stage| {
            let (target, source) = stage.frames();
            ChainStage::new(
                format!("{}<-{}", source, target),
                invert_transform(&stage.transform),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    PoseChain::new(stages)
}

fn project_one(
    p: &Point3,
    k: &IntrinsicMatrix,
    t: &RigidTransform,
    plane: &ImagePlane,
) -> Option<(f64, f64, f64)> {
    let camera = t.apply_point(p.coords());
    let q = k.apply(camera);
    let depth = q[2];
    if depth <= 0.0 {
        return None;
    }
    let u = q[0] / depth;
    let v = q[1] / depth;
    if !plane.contains(u, v) {
        return None;
    }
    Some((u, v, depth))
}

/// Project every point through `K * T`, keeping those with positive depth
/// that land inside the image; input order is preserved via `source_index`.
pub fn project_points(
    cloud: &PointCloud,
    k: &IntrinsicMatrix,
    t: &RigidTransform,
    plane: &ImagePlane,
) -> Vec<ProjectedPoint> {
    let mut out = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some((u, v, depth)) = project_one(p, k, t, plane) {
            out.push(ProjectedPoint {
                source_index: i,
                u,
                v,
                depth,
            });
        }
    }
    out
}

/// Integer pixel containing the projected point: floor of each coordinate.
pub fn rasterize(pp: &ProjectedPoint) -> (u32, u32) {
    (pp.u.floor() as u32, pp.v.floor() as u32)
}

/// The eight corners of the yaw-rotated cuboid, LiDAR frame.
///
/// Local axes before rotation: length along x, width along y, height along z.
pub fn box3d_corners(bx: &BoundingBox3D) -> [[f64; 3]; 8] {
    let (sin, cos) = bx.yaw.sin_cos();
    let half = [bx.size[1] / 2.0, bx.size[0] / 2.0, bx.size[2] / 2.0];
    let mut corners = [[0.0; 3]; 8];
    for (i, corner) in corners.iter_mut().enumerate() {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        let local = [sx * half[0], sy * half[1], sz * half[2]];
        *corner = [
            bx.center[0] + cos * local[0] - sin * local[1],
            bx.center[1] + sin * local[0] + cos * local[1],
            bx.center[2] + local[2],
        ];
    }
    corners
}

/// Project the box corners and take the enclosing axis-aligned rectangle,
/// clamped to the image bounds.
///
/// Corners behind the camera are dropped; the rectangle covers the remaining
/// ones. Fails if no corner is in front of the camera or the clamped
/// rectangle has zero area.
pub fn project_box3d(
    bx: &BoundingBox3D,
    k: &IntrinsicMatrix,
    t: &RigidTransform,
    plane: &ImagePlane,
) -> Result<BoundingBox2D> {
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    let mut visible = 0;
    for corner in box3d_corners(bx) {
        let camera = t.apply_point(corner);
        let q = k.apply(camera);
        if q[2] <= 0.0 {
            continue;
        }
        visible += 1;
        let u = q[0] / q[2];
        let v = q[1] / q[2];
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    if visible == 0 {
        return Err(GeometryError::BoxNotVisible);
    }
    let x1 = min_u.max(0.0);
    let y1 = min_v.max(0.0);
    let x2 = max_u.min(plane.width as f64);
    let y2 = max_v.min(plane.height as f64);
    if !(x1 < x2 && y1 < y2) {
        return Err(GeometryError::BoxNotVisible);
    }
    BoundingBox2D::new(x1, y1, x2, y2, bx.class_id)
}

/// Source indices of projected points strictly inside the box boundary.
pub fn points_in_box2d(projected: &[ProjectedPoint], bx: &BoundingBox2D) -> Vec<usize> {
    projected
        .iter()
        .filter(|pp| bx.contains(pp.u, pp.v))
        .map(|pp| pp.source_index)
        .collect()
}
