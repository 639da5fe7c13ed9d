//! Bit-exact scene directory serialization.
//!
//! A scene directory holds five files:
//! - `points.bin`: little-endian `f32` records of `x, y, z, intensity`
//! - `labels.bin`: little-endian `u32` class label per point
//! - `calib.txt`: intrinsics and pose chain in the calibration text format
//! - `boxes.txt`: one 3D box per line, `cx cy cz w l h yaw class`
//! - `image.ppm`: binary 8-bit RGB PPM

use std::path::Path;

use crate::geometry::{
    calib, project_box3d, BoundingBox2D, BoundingBox3D, GeometryError, ImagePlane,
    IntrinsicMatrix, Point3, PointCloud, PoseChain,
};

use super::{Result, SceneError};

/// RGB8 image, row-major pixel storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// `3 * width * height` bytes, rows top to bottom.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width as usize * height as usize);
        for _ in 0..(width as usize * height as usize) {
            pixels.extend_from_slice(&color);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    fn offset(&self, u: u32, v: u32) -> usize {
        3 * (v as usize * self.width as usize + u as usize)
    }

    pub fn rgb_at(&self, u: u32, v: u32) -> [u8; 3] {
        let o = self.offset(u, v);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_rgb(&mut self, u: u32, v: u32, rgb: [u8; 3]) {
        let o = self.offset(u, v);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn plane(&self) -> ImagePlane {
        ImagePlane::new(self.width, self.height).expect("image dimensions are positive")
    }
}

/// A full scene: points, labels, image, calibration, and boxes. The 2D boxes
/// are derived from the 3D boxes through the calibrated projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub cloud: PointCloud,
    pub labels: Vec<u32>,
    pub image: Image,
    pub intrinsics: IntrinsicMatrix,
    pub chain: PoseChain,
    pub boxes3d: Vec<BoundingBox3D>,
    pub boxes2d: Vec<BoundingBox2D>,
}

impl SceneBundle {
    pub fn plane(&self) -> ImagePlane {
        self.image.plane()
    }

    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        if self.labels.len() != self.cloud.len() {
            return Err(SceneError::CountMismatch {
                points: self.cloud.len(),
                labels: self.labels.len(),
            });
        }
        if self.image.pixels.len() != 3 * self.image.width as usize * self.image.height as usize {
            return Err(SceneError::Invalid {
                file: "image.ppm".into(),
                msg: "pixel buffer does not match dimensions".into(),
            });
        }
        if self.boxes2d.len() != self.boxes3d.len() {
            return Err(SceneError::Invalid {
                file: "boxes.txt".into(),
                msg: "derived 2D boxes do not align with 3D boxes".into(),
            });
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn points_to_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn labels_to_bytes(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn boxes_to_string(boxes: &[BoundingBox3D]) -> String {
    let mut out = String::new();
    for b in boxes {
        let fields = [
            b.center[0],
            b.center[1],
            b.center[2],
            b.size[0],
            b.size[1],
            b.size[2],
            b.yaw,
        ];
        let mut line: Vec<String> = fields.iter().map(|&v| calib::format_float(v)).collect();
        line.push(b.class_id.to_string());
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn image_to_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

/// Write the five scene files into `dir`, creating it if needed.
pub fn write_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let points_path = dir.join("points.bin");
    std::fs::write(&points_path, points_to_bytes(&bundle.cloud)).map_err(io_err(&points_path))?;

    let labels_path = dir.join("labels.bin");
    std::fs::write(&labels_path, labels_to_bytes(&bundle.labels)).map_err(io_err(&labels_path))?;

    calib::write_calibration(&dir.join("calib.txt"), &bundle.intrinsics, &bundle.chain)?;

    let boxes_path = dir.join("boxes.txt");
    std::fs::write(&boxes_path, boxes_to_string(&bundle.boxes3d)).map_err(io_err(&boxes_path))?;

    let image_path = dir.join("image.ppm");
    std::fs::write(&image_path, image_to_ppm(&bundle.image)).map_err(io_err(&image_path))?;
    Ok(())
}

fn parse_points(bytes: &[u8]) -> Result<PointCloud> {
    const RECORD: usize = 16;
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(SceneError::BinParse {
            file: "points.bin".into(),
            offset: (bytes.len() / RECORD * RECORD) as u64,
            msg: format!(
                "truncated record: {} trailing bytes of a {}-byte record",
                bytes.len() % RECORD,
                RECORD
            ),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD);
    for (i, record) in bytes.chunks_exact(RECORD).enumerate() {
        let mut fields = [0.0f64; 4];
        for (j, field) in fields.iter_mut().enumerate() {
            let raw: [u8; 4] = record[j * 4..j * 4 + 4].try_into().unwrap();
            let value = f32::from_le_bytes(raw);
            if !value.is_finite() {
                return Err(SceneError::BinParse {
                    file: "points.bin".into(),
                    offset: (i * RECORD + j * 4) as u64,
                    msg: "non-finite float".into(),
                });
            }
            *field = value as f64;
        }
        let p = Point3::new(fields[0], fields[1], fields[2], fields[3]);
        p.validate().map_err(|e| SceneError::BinParse {
            file: "points.bin".into(),
            offset: (i * RECORD) as u64,
            msg: e.to_string(),
        })?;
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(SceneError::BinParse {
            file: "labels.bin".into(),
            offset: (bytes.len() / 4 * 4) as u64,
            msg: "truncated label record".into(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn parse_boxes(text: &str) -> Result<Vec<BoundingBox3D>> {
    let mut boxes = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(SceneError::TextParse {
                file: "boxes.txt".into(),
                line: line_no,
                msg: format!("expected 8 fields, found {}", tokens.len()),
            });
        }
        let mut fields = [0.0f64; 7];
        for (i, field) in fields.iter_mut().enumerate() {
            *field = tokens[i].parse().map_err(|_| SceneError::TextParse {
                file: "boxes.txt".into(),
                line: line_no,
                msg: format!("invalid float `{}`", tokens[i]),
            })?;
        }
        let class_id: usize = tokens[7].parse().map_err(|_| SceneError::TextParse {
            file: "boxes.txt".into(),
            line: line_no,
            msg: format!("invalid class `{}`", tokens[7]),
        })?;
        let bx = BoundingBox3D::new(
            [fields[0], fields[1], fields[2]],
            [fields[3], fields[4], fields[5]],
            fields[6],
            class_id,
        )
        .map_err(|e| SceneError::TextParse {
            file: "boxes.txt".into(),
            line: line_no,
            msg: e.to_string(),
        })?;
        boxes.push(bx);
    }
    Ok(boxes)
}

fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let parse_err = |offset: usize, msg: &str| SceneError::BinParse {
        file: "image.ppm".into(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    // Header: "P6", then width, height, maxval as whitespace-separated
    // tokens, then exactly one whitespace byte before the pixel data.
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err(start, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    if magic != "P6" {
        return Err(parse_err(0, "not a binary PPM (missing P6 magic)"));
    }
    let width: u32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| parse_err(pos, "invalid width"))?;
    let height: u32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| parse_err(pos, "invalid height"))?;
    let maxval = next_token(&mut pos)?;
    if maxval != "255" {
        return Err(parse_err(pos, "unsupported max value (expected 255)"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(pos, "missing whitespace before pixel data"));
    }
    pos += 1;
    let expected = 3 * width as usize * height as usize;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(parse_err(
            pos + data.len().min(expected),
            &format!("expected {} pixel bytes, found {}", expected, data.len()),
        ));
    }
    Ok(Image {
        width,
        height,
        pixels: data.to_vec(),
    })
}

/// Derive the 2D box for every 3D box that projects visibly; boxes with no
/// visible projection are dropped together with their 3D entry.
pub fn derive_boxes2d(
    boxes3d: &[BoundingBox3D],
    intrinsics: &IntrinsicMatrix,
    chain: &PoseChain,
    plane: &ImagePlane,
) -> Result<(Vec<BoundingBox3D>, Vec<BoundingBox2D>)> {
    let transform = crate::geometry::compose_chain(chain)?;
    let mut kept = Vec::with_capacity(boxes3d.len());
    let mut derived = Vec::with_capacity(boxes3d.len());
    for bx in boxes3d {
        match project_box3d(bx, intrinsics, &transform, plane) {
            Ok(b2) => {
                kept.push(*bx);
                derived.push(b2);
            }
            Err(GeometryError::BoxNotVisible) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((kept, derived))
}

/// Read the five scene files and re-derive the 2D boxes from calibration.
pub fn read_scene(dir: &Path) -> Result<SceneBundle> {
    let points_path = dir.join("points.bin");
    let cloud = parse_points(&std::fs::read(&points_path).map_err(io_err(&points_path))?)?;

    let labels_path = dir.join("labels.bin");
    let labels = parse_labels(&std::fs::read(&labels_path).map_err(io_err(&labels_path))?)?;
    if labels.len() != cloud.len() {
        return Err(SceneError::CountMismatch {
            points: cloud.len(),
            labels: labels.len(),
        });
    }

    let (intrinsics, chain) = calib::read_calibration(&dir.join("calib.txt"))?;

    let boxes_path = dir.join("boxes.txt");
    let boxes_text = std::fs::read_to_string(&boxes_path).map_err(io_err(&boxes_path))?;
    let boxes = parse_boxes(&boxes_text)?;

    let image_path = dir.join("image.ppm");
    let image = parse_ppm(&std::fs::read(&image_path).map_err(io_err(&image_path))?)?;

    let plane = image.plane();
    let (boxes3d, boxes2d) = derive_boxes2d(&boxes, &intrinsics, &chain, &plane)?;

    let bundle = SceneBundle {
        cloud,
        labels,
        image,
        intrinsics,
        chain,
        boxes3d,
        boxes2d,
    };
    bundle.validate()?;
    Ok(bundle)
}
