//! Learnable parameter containers: MLP stacks and multi-head attention weights.

use rand::RngExt;

use super::matrix::Matrix;
use super::{NumericsError, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// One affine layer: `x * weight + bias`, then the activation.
///
/// Weights are `input_dim x output_dim`; the bias is a `1 x output_dim` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

/// A stack of affine + activation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

/// Uniform init on `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl RngExt) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl MlpParams {
    /// Seeded initialization: glorot-uniform weights, zero biases.
    ///
    /// `dims` lists layer widths input-first, so `dims.len() - 1` layers are
    /// built; `activations` must name one activation per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl RngExt) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        assert_eq!(dims.len() - 1, activations.len());
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| MlpLayer {
                weight: glorot_uniform(pair[0], pair[1], rng),
                bias: Matrix::zeros(1, pair[1]),
                activation,
            })
            .collect();
        MlpParams { layers }
    }

    /// Single identity layer with no activation; useful in tests.
    pub fn identity(dim: usize) -> Self {
        MlpParams {
            layers: vec![MlpLayer {
                weight: Matrix::identity(dim),
                bias: Matrix::zeros(1, dim),
                activation: Activation::None,
            }],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    /// Check the layer-to-layer dimension agreement invariant.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "MlpParams::validate",
                detail: "no layers".into(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols() {
                return Err(NumericsError::ShapeMismatch {
                    op: "MlpParams::validate",
                    detail: format!("layer {} bias shape {:?}", i, layer.bias.shape()),
                });
            }
            if i > 0 && self.layers[i - 1].weight.cols() != layer.weight.rows() {
                return Err(NumericsError::ShapeMismatch {
                    op: "MlpParams::validate",
                    detail: format!(
                        "layer {} input dim {} vs previous output {}",
                        i,
                        layer.weight.rows(),
                        self.layers[i - 1].weight.cols()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// One attention head: `w_query`, `w_value` are `D x (D/h)`, `w_key` is `1 x (D/h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub w_query: Matrix,
    pub w_key: Matrix,
    pub w_value: Matrix,
}

/// Multi-head attention weights over hidden size `D` with a scalar key signal
/// per row; heads concatenate back to width `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub hidden: usize,
    pub heads: Vec<AttentionHead>,
}

impl AttentionParams {
    pub fn init(hidden: usize, heads: usize, rng: &mut impl RngExt) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(NumericsError::ShapeMismatch {
                op: "AttentionParams::init",
                detail: format!("hidden {} not divisible by {} heads", hidden, heads),
            });
        }
        let head_dim = hidden / heads;
        let heads = (0..heads)
            .map(|_| AttentionHead {
                w_query: glorot_uniform(hidden, head_dim, rng),
                w_key: glorot_uniform(1, head_dim, rng),
                w_value: glorot_uniform(hidden, head_dim, rng),
            })
            .collect();
        Ok(AttentionParams { hidden, heads })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() || !self.hidden.is_multiple_of(self.heads.len()) {
            return Err(NumericsError::ShapeMismatch {
                op: "AttentionParams::validate",
                detail: format!("{} heads over hidden {}", self.heads.len(), self.hidden),
            });
        }
        let head_dim = self.head_dim();
        for (i, head) in self.heads.iter().enumerate() {
            let ok = head.w_query.shape() == (self.hidden, head_dim)
                && head.w_key.shape() == (1, head_dim)
                && head.w_value.shape() == (self.hidden, head_dim);
            if !ok {
                return Err(NumericsError::ShapeMismatch {
                    op: "AttentionParams::validate",
                    detail: format!("head {} weight shapes", i),
                });
            }
        }
        Ok(())
    }
}

/// Flat-vector view of a parameter set, used by SGD and gradient checking.
///
/// `to_flat` and `set_flat` must traverse coordinates in the same order.
pub trait ParamFlat {
    fn flat_len(&self) -> usize;
    fn append_flat(&self, out: &mut Vec<f64>);
    /// Reads `flat_len()` values from `values` and returns how many were consumed.
    fn set_flat(&mut self, values: &[f64]) -> usize;

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.append_flat(&mut out);
        out
    }
}

impl ParamFlat for Matrix {
    fn flat_len(&self) -> usize {
        self.data().len()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.data());
    }

    fn set_flat(&mut self, values: &[f64]) -> usize {
        let n = self.data().len();
        self.data_mut().copy_from_slice(&values[..n]);
        n
    }
}

impl ParamFlat for MlpParams {
    fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.flat_len() + l.bias.flat_len())
            .sum()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.weight.append_flat(out);
            layer.bias.append_flat(out);
        }
    }

    fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut used = 0;
        for layer in &mut self.layers {
            used += layer.weight.set_flat(&values[used..]);
            used += layer.bias.set_flat(&values[used..]);
        }
        used
    }
}

impl ParamFlat for AttentionParams {
    fn flat_len(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.w_query.flat_len() + h.w_key.flat_len() + h.w_value.flat_len())
            .sum()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        for head in &self.heads {
            head.w_query.append_flat(out);
            head.w_key.append_flat(out);
            head.w_value.append_flat(out);
        }
    }

    fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut used = 0;
        for head in &mut self.heads {
            used += head.w_query.set_flat(&values[used..]);
            used += head.w_key.set_flat(&values[used..]);
            used += head.w_value.set_flat(&values[used..]);
        }
        used
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn init_is_seed_deterministic() {
        let mut a = ChaCha12Rng::seed_from_u64(11);
        let mut b = ChaCha12Rng::seed_from_u64(11);
        let p = MlpParams::init(&[4, 8, 2], &[Activation::Relu, Activation::None], &mut a);
        let q = MlpParams::init(&[4, 8, 2], &[Activation::Relu, Activation::None], &mut b);
        assert_eq!(p, q);
        p.validate().unwrap();
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m = glorot_uniform(10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn attention_init_rejects_indivisible_heads() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(AttentionParams::init(10, 3, &mut rng).is_err());
        assert!(AttentionParams::init(10, 0, &mut rng).is_err());
        let p = AttentionParams::init(8, 2, &mut rng).unwrap();
        p.validate().unwrap();
        assert_eq!(p.head_dim(), 4);
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let p = MlpParams::init(&[3, 5, 2], &[Activation::Sigmoid, Activation::None], &mut rng);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.flat_len());
        let mut q = MlpParams::init(&[3, 5, 2], &[Activation::Sigmoid, Activation::None], &mut rng);
        assert_ne!(p, q);
        let used = q.set_flat(&flat);
        assert_eq!(used, flat.len());
        assert_eq!(p, q);
    }
}
