//! MLP and attention graphs over the tape, plus plain-value wrappers.

use super::matrix::Matrix;
use super::params::{Activation, AttentionParams, MlpParams};
use super::tape::{NodeId, Tape};
use super::{NumericsError, Result};

/// Tape handles for one MLP layer.
#[derive(Debug, Clone, Copy)]
pub struct TapeLayer {
    pub weight: NodeId,
    pub bias: NodeId,
    pub activation: Activation,
}

/// Tape handles for a whole MLP.
#[derive(Debug, Clone)]
pub struct TapeMlp {
    pub layers: Vec<TapeLayer>,
}

impl TapeMlp {
    /// Node ids in the flat parameter order: weight then bias per layer.
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

/// Insert every weight and bias of `params` as tape leaves.
pub fn insert_mlp(tape: &mut Tape, params: &MlpParams) -> Result<TapeMlp> {
    params.validate()?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        layers.push(TapeLayer {
            weight: tape.input(layer.weight.clone())?,
            bias: tape.input(layer.bias.clone())?,
            activation: layer.activation,
        });
    }
    Ok(TapeMlp { layers })
}

fn apply_activation(tape: &mut Tape, x: NodeId, activation: Activation) -> Result<NodeId> {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::None => Ok(x),
    }
}

/// Run the MLP on the tape, returning the final layer output.
pub fn mlp_apply(tape: &mut Tape, mlp: &TapeMlp, input: NodeId) -> Result<NodeId> {
    Ok(*mlp_apply_tapped(tape, mlp, input)?.last().unwrap())
}

/// Run the MLP and return every post-activation layer output in order.
pub fn mlp_apply_tapped(tape: &mut Tape, mlp: &TapeMlp, input: NodeId) -> Result<Vec<NodeId>> {
    let mut taps = Vec::with_capacity(mlp.layers.len());
    let mut x = input;
    for layer in &mlp.layers {
        let affine = tape.matmul(x, layer.weight)?;
        let biased = tape.add_row(affine, layer.bias)?;
        x = apply_activation(tape, biased, layer.activation)?;
        taps.push(x);
    }
    Ok(taps)
}

/// Sequential affine + activation layers applied to `input` rows.
pub fn mlp_forward(params: &MlpParams, input: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone())?;
    let mlp = insert_mlp(&mut tape, params)?;
    let out = mlp_apply(&mut tape, &mlp, x)?;
    Ok(tape.value(out).clone())
}

/// Tape handles for one attention head.
#[derive(Debug, Clone, Copy)]
pub struct TapeAttentionHead {
    pub w_query: NodeId,
    pub w_key: NodeId,
    pub w_value: NodeId,
}

/// Tape handles for multi-head attention weights.
#[derive(Debug, Clone)]
pub struct TapeAttention {
    pub hidden: usize,
    pub heads: Vec<TapeAttentionHead>,
}

impl TapeAttention {
    /// Node ids in the flat parameter order: query, key, value per head.
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.heads
            .iter()
            .flat_map(|h| [h.w_query, h.w_key, h.w_value])
            .collect()
    }
}

/// Insert all attention weights as tape leaves.
pub fn insert_attention(tape: &mut Tape, params: &AttentionParams) -> Result<TapeAttention> {
    params.validate()?;
    let mut heads = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        heads.push(TapeAttentionHead {
            w_query: tape.input(head.w_query.clone())?,
            w_key: tape.input(head.w_key.clone())?,
            w_value: tape.input(head.w_value.clone())?,
        });
    }
    Ok(TapeAttention {
        hidden: params.hidden,
        heads,
    })
}

/// Multi-head attention with a per-row scalar key signal.
///
/// Per head: `softmax((query W^Q)(key W^K)^T / sqrt(D)) (value W^V)`, with
/// the scores scaled by the full hidden size `D`; head outputs concatenate
/// back to width `D`.
pub fn attention_apply(
    tape: &mut Tape,
    attention: &TapeAttention,
    query: NodeId,
    key_scalar: NodeId,
    value: NodeId,
) -> Result<NodeId> {
    let n = tape.value(query).rows();
    let d = attention.hidden;
    if tape.value(query).cols() != d || tape.value(value).cols() != d {
        return Err(NumericsError::ShapeMismatch {
            op: "attention_apply",
            detail: format!(
                "query {:?} / value {:?} vs hidden {}",
                tape.value(query).shape(),
                tape.value(value).shape(),
                d
            ),
        });
    }
    if tape.value(key_scalar).shape() != (n, 1) || tape.value(value).rows() != n {
        return Err(NumericsError::ShapeMismatch {
            op: "attention_apply",
            detail: format!(
                "key {:?} / value {:?} vs {} rows",
                tape.value(key_scalar).shape(),
                tape.value(value).shape(),
                n
            ),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut outputs = Vec::with_capacity(attention.heads.len());
    for head in &attention.heads {
        let q = tape.matmul(query, head.w_query)?;
        let k = tape.matmul(key_scalar, head.w_key)?;
        let scores = tape.matmul_nt(q, k)?;
        let scaled = tape.scale(scores, scale)?;
        let weights = tape.softmax_rows(scaled)?;
        let v = tape.matmul(value, head.w_value)?;
        outputs.push(tape.matmul(weights, v)?);
    }
    tape.concat_cols(&outputs)
}

/// Plain-value multi-head attention; `key_scalar` holds one key signal per row.
pub fn multihead_attention(
    params: &AttentionParams,
    query: &Matrix,
    key_scalar: &[f64],
    value: &Matrix,
) -> Result<Matrix> {
    if key_scalar.len() != query.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "multihead_attention",
            detail: format!("{} keys for {} rows", key_scalar.len(), query.rows()),
        });
    }
    let mut tape = Tape::new();
    let q = tape.input(query.clone())?;
    let k = tape.input(Matrix::column_vector(key_scalar))?;
    let v = tape.input(value.clone())?;
    let attention = insert_attention(&mut tape, params)?;
    let out = attention_apply(&mut tape, &attention, q, k, v)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::{AttentionHead, MlpLayer};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_mlp_is_identity() {
        let params = MlpParams::identity(3);
        let input = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.5 - 1.0);
        let out = mlp_forward(&params, &input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_input_yields_bias_path() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut params = MlpParams::init(
            &[3, 4, 2],
            &[Activation::Relu, Activation::None],
            &mut rng,
        );
        params.layers[0].bias = random_matrix(1, 4, &mut rng);
        params.layers[1].bias = random_matrix(1, 2, &mut rng);
        let out = mlp_forward(&params, &Matrix::zeros(2, 3)).unwrap();
        // Composed bias path evaluated by hand.
        let h: Vec<f64> = params.layers[0]
            .bias
            .data()
            .iter()
            .map(|&b| b.max(0.0))
            .collect();
        for r in 0..2 {
            for c in 0..2 {
                let mut expect = params.layers[1].bias.get(0, c);
                for (k, &hv) in h.iter().enumerate() {
                    expect += hv * params.layers[1].weight.get(k, c);
                }
                assert!((out.get(r, c) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_layer_mlp_matches_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut params = MlpParams::init(
            &[4, 5, 3],
            &[Activation::Sigmoid, Activation::None],
            &mut rng,
        );
        params.layers[0].bias = random_matrix(1, 5, &mut rng);
        params.layers[1].bias = random_matrix(1, 3, &mut rng);
        let input = random_matrix(6, 4, &mut rng);
        let out = mlp_forward(&params, &input).unwrap();

        for r in 0..6 {
            let mut hidden = [0.0; 5];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = params.layers[0].bias.get(0, j);
                for k in 0..4 {
                    acc += input.get(r, k) * params.layers[0].weight.get(k, j);
                }
                *h = 1.0 / (1.0 + (-acc).exp());
            }
            for c in 0..3 {
                let mut acc = params.layers[1].bias.get(0, c);
                for (j, &h) in hidden.iter().enumerate() {
                    acc += h * params.layers[1].weight.get(j, c);
                }
                assert!((out.get(r, c) - acc).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mlp_rejects_dimension_mismatch() {
        let params = MlpParams::identity(3);
        assert!(mlp_forward(&params, &Matrix::zeros(2, 4)).is_err());
        let broken = MlpParams {
            layers: vec![
                MlpLayer {
                    weight: Matrix::zeros(3, 4),
                    bias: Matrix::zeros(1, 4),
                    activation: Activation::Relu,
                },
                MlpLayer {
                    weight: Matrix::zeros(5, 2),
                    bias: Matrix::zeros(1, 2),
                    activation: Activation::None,
                },
            ],
        };
        assert!(mlp_forward(&broken, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_row_attention_passes_value_through_heads() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let params = AttentionParams::init(4, 2, &mut rng).unwrap();
        let query = random_matrix(1, 4, &mut rng);
        let value = random_matrix(1, 4, &mut rng);
        let out = multihead_attention(&params, &query, &[0.37], &value).unwrap();
        // Softmax over a single key is 1, so each head passes value * W^V.
        for (h, head) in params.heads.iter().enumerate() {
            let expect = value.matmul(&head.w_value).unwrap();
            for c in 0..2 {
                assert!((out.get(0, h * 2 + c) - expect.get(0, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_keys_give_uniform_mean_per_head() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let params = AttentionParams::init(6, 2, &mut rng).unwrap();
        let query = random_matrix(5, 6, &mut rng);
        let value = random_matrix(5, 6, &mut rng);
        let keys = vec![0.8; 5];
        let out = multihead_attention(&params, &query, &keys, &value).unwrap();
        for (h, head) in params.heads.iter().enumerate() {
            let projected = value.matmul(&head.w_value).unwrap();
            for c in 0..3 {
                let mean: f64 = (0..5).map(|r| projected.get(r, c)).sum::<f64>() / 5.0;
                for r in 0..5 {
                    assert!((out.get(r, h * 3 + c) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn attention_matches_triple_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let params = AttentionParams::init(6, 2, &mut rng).unwrap();
        let n = 6;
        let query = random_matrix(n, 6, &mut rng);
        let value = random_matrix(n, 6, &mut rng);
        let keys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = multihead_attention(&params, &query, &keys, &value).unwrap();

        let head_dim = 3;
        for (h, head) in params.heads.iter().enumerate() {
            for i in 0..n {
                // q_i = query_i W^Q, k_j = key_j W^K, score = <q_i, k_j> / sqrt(6)
                let mut scores = vec![0.0; n];
                for (j, score) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for t in 0..head_dim {
                        let mut q = 0.0;
                        for s in 0..6 {
                            q += query.get(i, s) * head.w_query.get(s, t);
                        }
                        acc += q * keys[j] * head.w_key.get(0, t);
                    }
                    *score = acc / (6.0f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for t in 0..head_dim {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let mut v = 0.0;
                        for s in 0..6 {
                            v += value.get(j, s) * head.w_value.get(s, t);
                        }
                        acc += exps[j] / total * v;
                    }
                    assert!((out.get(i, h * head_dim + t) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_invariant_under_key_shift() {
        // Scores are key_j * g_i, so shifting all keys adds a per-row
        // constant and softmax cancels it.
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let params = AttentionParams::init(4, 2, &mut rng).unwrap();
        let query = random_matrix(5, 4, &mut rng);
        let value = random_matrix(5, 4, &mut rng);
        let keys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = keys.iter().map(|k| k + 3.5).collect();
        let a = multihead_attention(&params, &query, &keys, &value).unwrap();
        let b = multihead_attention(&params, &query, &shifted, &value).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_rejects_shape_mismatch() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let params = AttentionParams::init(4, 2, &mut rng).unwrap();
        let query = random_matrix(3, 4, &mut rng);
        let value = random_matrix(3, 4, &mut rng);
        assert!(multihead_attention(&params, &query, &[0.0; 2], &value).is_err());
        let bad_value = random_matrix(3, 5, &mut rng);
        assert!(multihead_attention(&params, &query, &[0.0; 3], &bad_value).is_err());
        let broken = AttentionParams {
            hidden: 4,
            heads: vec![AttentionHead {
                w_query: Matrix::zeros(4, 2),
                w_key: Matrix::zeros(1, 2),
                w_value: Matrix::zeros(4, 2),
            }],
        };
        assert!(broken.validate().is_err());
    }
}
