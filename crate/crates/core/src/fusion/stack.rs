//! Feature containers shared across the fusion pipeline.

use rand::RngExt;

use crate::geometry::BoundingBox2D;
use crate::numerics::{Matrix, ParamFlat};

use super::{FusionError, Result};

/// Per-layer features: 2D pixel features sampled at projected points, full
/// 3D point features, and their field-of-view restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// Per layer: `N_img x D_l`.
    pub features2d: Vec<Matrix>,
    /// Per layer: `N x D_l` over the full cloud.
    pub features3d_full: Vec<Matrix>,
    /// Per layer: `N_img x D_l`, rows selected by FOV indices in source order.
    pub features3d_fov: Vec<Matrix>,
}

impl FeatureStack {
    pub fn layer_count(&self) -> usize {
        self.features2d.len()
    }

    pub fn validate(&self, layer_widths: &[usize]) -> Result<()> {
        let l = layer_widths.len();
        if self.features2d.len() != l
            || self.features3d_full.len() != l
            || self.features3d_fov.len() != l
        {
            return Err(FusionError::Config {
                msg: format!(
                    "feature stack has {}/{}/{} layers, expected {}",
                    self.features2d.len(),
                    self.features3d_full.len(),
                    self.features3d_fov.len(),
                    l
                ),
            });
        }
        for (i, &width) in layer_widths.iter().enumerate() {
            let n_img = self.features2d[i].rows();
            let ok = self.features2d[i].cols() == width
                && self.features3d_full[i].cols() == width
                && self.features3d_fov[i].cols() == width
                && self.features3d_fov[i].rows() == n_img;
            if !ok {
                return Err(FusionError::Config {
                    msg: format!("feature stack layer {} has inconsistent shapes", i),
                });
            }
        }
        Ok(())
    }
}

/// One embedding row per class, initialized to unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    pub table: Matrix,
}

impl ClassEmbeddingTable {
    pub fn init(classes: usize, hidden: usize, rng: &mut impl RngExt) -> Self {
        let mut table = Matrix::from_fn(classes, hidden, |_, _| rng.random_range(-1.0..1.0));
        for r in 0..classes {
            let norm: f64 = table.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in table.row_mut(r) {
                *v /= norm;
            }
        }
        ClassEmbeddingTable { table }
    }

    pub fn classes(&self) -> usize {
        self.table.rows()
    }

    pub fn hidden(&self) -> usize {
        self.table.cols()
    }
}

impl ParamFlat for ClassEmbeddingTable {
    fn flat_len(&self) -> usize {
        self.table.flat_len()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        self.table.append_flat(out);
    }

    fn set_flat(&mut self, values: &[f64]) -> usize {
        self.table.set_flat(values)
    }
}

/// Fused features and labels of the points inside one 2D box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxFeatureSet {
    pub box2d: BoundingBox2D,
    /// Row positions into the FOV point list, in FOV order.
    pub members: Vec<usize>,
    /// `N_box x D` fused feature rows.
    pub features: Matrix,
    /// Ground-truth class per member.
    pub labels: Vec<usize>,
}

impl BoxFeatureSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Losses and segmentation quality for one step or evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub seg_loss: f64,
    pub distill_loss: f64,
    pub total_loss: f64,
    /// One IoU per class; classes absent from both prediction and ground
    /// truth report 0.
    pub per_class_iou: Vec<f64>,
    /// Mean IoU over classes present in the ground truth.
    pub miou: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.seg_loss.is_finite()
            && self.distill_loss.is_finite()
            && self.total_loss.is_finite()
            && self.miou.is_finite()
            && self.per_class_iou.iter().all(|v| v.is_finite())
    }
}

/// Confusion-matrix accumulator for per-class IoU.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    classes: usize,
    /// `counts[gt * classes + pred]`
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, ground_truth: usize, predicted: usize) {
        self.counts[ground_truth * self.classes + predicted] += 1;
    }

    /// Per-class IoU = TP / (TP + FP + FN); 0 when the denominator is 0.
    pub fn per_class_iou(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let tp = self.counts[c * self.classes + c];
                let fp: u64 = (0..self.classes)
                    .filter(|&g| g != c)
                    .map(|g| self.counts[g * self.classes + c])
                    .sum();
                let fn_: u64 = (0..self.classes)
                    .filter(|&p| p != c)
                    .map(|p| self.counts[c * self.classes + p])
                    .sum();
                let denom = tp + fp + fn_;
                if denom == 0 {
                    0.0
                } else {
                    tp as f64 / denom as f64
                }
            })
            .collect()
    }

    /// Mean IoU over classes that appear in the ground truth.
    pub fn miou(&self) -> f64 {
        let mut sum = 0.0;
        let mut present = 0usize;
        for (c, iou) in self.per_class_iou().into_iter().enumerate() {
            let gt_total: u64 = (0..self.classes).map(|p| self.counts[c * self.classes + p]).sum();
            if gt_total > 0 {
                sum += iou;
                present += 1;
            }
        }
        if present == 0 {
            0.0
        } else {
            sum / present as f64
        }
    }
}
