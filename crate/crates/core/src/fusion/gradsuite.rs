//! Gradient verification of every parameterized operation and of the
//! composed total loss, against central finite differences.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::numerics::{
    attention_apply, grad_check, insert_attention, insert_mlp, mlp_apply, Activation,
    AttentionParams, Gradients, Matrix, MlpParams, NodeId, ParamFlat, Tape,
};
use crate::scenedata::{generate_scene, GeneratorConfig};

use super::config::TrainConfig;
use super::model::{insert_model, scene_inputs, scene_losses_on_tape, ModelParams, SceneInputs};
use super::stack::ClassEmbeddingTable;
use super::train::derive_seed;
use super::Result;

/// One gradient check outcome.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.2..1.2))
}

fn flat_grads(tape: &Tape, grads: &Gradients, ids: &[NodeId]) -> Vec<f64> {
    let mut out = Vec::new();
    for &id in ids {
        match grads.get(id) {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, tape.value(id).data().len())),
        }
    }
    out
}

fn randomize_biases(mlp: &mut MlpParams, rng: &mut ChaCha12Rng) {
    for layer in &mut mlp.layers {
        let cols = layer.bias.cols();
        layer.bias = random_matrix(1, cols, rng);
    }
}

fn check_mlp(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x01));
    let mut params = MlpParams::init(
        &[4, 6, 3],
        &[Activation::Relu, Activation::Sigmoid],
        &mut rng,
    );
    randomize_biases(&mut params, &mut rng);
    let input = random_matrix(5, 4, &mut rng);
    let coeffs = random_matrix(5, 3, &mut rng);

    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let mlp = insert_mlp(&mut tape, p)?;
        let out = mlp_apply(&mut tape, &mlp, x)?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, mlp.param_ids(), loss))
    })
}

/// Shared runner: `build` constructs the graph for the given parameters and
/// returns the tape, the parameter node ids (in flat order), and the loss.
fn run_check<P, B>(params: &P, step: f64, mut build: B) -> Result<f64>
where
    P: ParamFlat + Clone,
    B: FnMut(&P) -> Result<(Tape, Vec<NodeId>, NodeId)>,
{
    let (tape, ids, loss) = build(params)?;
    let grads = tape.backward(loss)?;
    let analytic = flat_grads(&tape, &grads, &ids);
    let theta = params.to_flat();
    let mut work = params.clone();
    let report = grad_check(
        |flat: &[f64]| {
            work.set_flat(flat);
            let (tape, _, loss) =
                build(&work).map_err(|e| crate::numerics::NumericsError::InvalidArgument {
                    op: "gradient_suite",
                    detail: e.to_string(),
                })?;
            Ok(tape.value(loss).get(0, 0))
        },
        &theta,
        &analytic,
        step,
        &[],
    )?;
    Ok(report.max_rel_error())
}

fn check_attention(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x02));
    let params = AttentionParams::init(8, 2, &mut rng)?;
    let query = random_matrix(5, 8, &mut rng);
    let keys = random_matrix(5, 1, &mut rng);
    let value = random_matrix(5, 8, &mut rng);
    let coeffs = random_matrix(5, 8, &mut rng);
    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let q = tape.constant(query.clone())?;
        let k = tape.constant(keys.clone())?;
        let v = tape.constant(value.clone())?;
        let attention = insert_attention(&mut tape, p)?;
        let out = attention_apply(&mut tape, &attention, q, k, v)?;
        let ids = attention.param_ids();
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, ids, loss))
    })
}

/// Gate and value MLP pair for the gated-residual fusion check.
#[derive(Clone)]
struct MsfskdParams {
    gate: MlpParams,
    value: MlpParams,
}

impl ParamFlat for MsfskdParams {
    fn flat_len(&self) -> usize {
        self.gate.flat_len() + self.value.flat_len()
    }
    fn append_flat(&self, out: &mut Vec<f64>) {
        self.gate.append_flat(out);
        self.value.append_flat(out);
    }
    fn set_flat(&mut self, values: &[f64]) -> usize {
        let used = self.gate.set_flat(values);
        used + self.value.set_flat(&values[used..])
    }
}

fn check_msfskd(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x03));
    let mut gate = MlpParams::init(&[6, 6], &[Activation::None], &mut rng);
    let mut value = MlpParams::init(&[6, 6], &[Activation::None], &mut rng);
    randomize_biases(&mut gate, &mut rng);
    randomize_biases(&mut value, &mut rng);
    let params = MsfskdParams { gate, value };
    let f2d = random_matrix(4, 6, &mut rng);
    let f2d3d = random_matrix(4, 6, &mut rng);
    let coeffs = random_matrix(4, 6, &mut rng);
    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let base = tape.constant(f2d.clone())?;
        let x = tape.constant(f2d3d.clone())?;
        let gate_mlp = insert_mlp(&mut tape, &p.gate)?;
        let value_mlp = insert_mlp(&mut tape, &p.value)?;
        let mut ids = gate_mlp.param_ids();
        ids.extend(value_mlp.param_ids());
        let gate_out = mlp_apply(&mut tape, &gate_mlp, x)?;
        let gate_sig = tape.sigmoid(gate_out)?;
        let value_out = mlp_apply(&mut tape, &value_mlp, x)?;
        let gated = tape.mul_elem(gate_sig, value_out)?;
        let out = tape.add(base, gated)?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, ids, loss))
    })
}

fn check_fuse_layer(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x04));
    let mut learner = MlpParams::init(&[6, 6], &[Activation::None], &mut rng);
    randomize_biases(&mut learner, &mut rng);
    let f3d = random_matrix(5, 6, &mut rng);
    let f2d = random_matrix(5, 6, &mut rng);
    let coeffs = random_matrix(5, 12, &mut rng);
    run_check(&learner, step, |p| {
        let mut tape = Tape::new();
        let x3d = tape.constant(f3d.clone())?;
        let x2d = tape.constant(f2d.clone())?;
        let mlp = insert_mlp(&mut tape, p)?;
        let learned = mlp_apply(&mut tape, &mlp, x3d)?;
        let fused = tape.concat_cols(&[learned, x2d])?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(fused, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, mlp.param_ids(), loss))
    })
}

fn check_fuse_multiscale(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x05));
    let mut downsampler = MlpParams::init(&[12, 5], &[Activation::Relu], &mut rng);
    randomize_biases(&mut downsampler, &mut rng);
    let layers: Vec<Matrix> = (0..3).map(|_| random_matrix(4, 4, &mut rng)).collect();
    let coeffs = random_matrix(4, 5, &mut rng);
    run_check(&downsampler, step, |p| {
        let mut tape = Tape::new();
        let parts = layers
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect::<crate::numerics::Result<Vec<_>>>()?;
        let all = tape.concat_cols(&parts)?;
        let mlp = insert_mlp(&mut tape, p)?;
        let out = mlp_apply(&mut tape, &mlp, all)?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, mlp.param_ids(), loss))
    })
}

/// Embeddings plus attention weights for the class-aware attention check.
#[derive(Clone)]
struct ClassAttentionParams {
    table: ClassEmbeddingTable,
    attention: AttentionParams,
}

impl ParamFlat for ClassAttentionParams {
    fn flat_len(&self) -> usize {
        self.table.flat_len() + self.attention.flat_len()
    }
    fn append_flat(&self, out: &mut Vec<f64>) {
        self.table.append_flat(out);
        self.attention.append_flat(out);
    }
    fn set_flat(&mut self, values: &[f64]) -> usize {
        let used = self.table.set_flat(values);
        used + self.attention.set_flat(&values[used..])
    }
}

fn check_class_aware_attention(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x06));
    let classes = 3;
    let hidden = 8;
    let params = ClassAttentionParams {
        table: ClassEmbeddingTable::init(classes, hidden, &mut rng),
        attention: AttentionParams::init(hidden, 2, &mut rng)?,
    };
    let n = 6;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let box_class = rng.random_range(0..classes);
    let features = random_matrix(n, hidden, &mut rng);
    let coeffs = random_matrix(n, hidden, &mut rng);
    let box_rows = vec![box_class; n];
    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let table = tape.input(p.table.table.clone())?;
        let attention = insert_attention(&mut tape, &p.attention)?;
        let mut ids = vec![table];
        ids.extend(attention.param_ids());
        let queries = tape.select_rows(table, &labels)?;
        let box_embedding = tape.select_rows(table, &box_rows)?;
        let similarity = tape.cosine_rows(queries, box_embedding, 1e-8)?;
        let value = tape.constant(features.clone())?;
        let out = attention_apply(&mut tape, &attention, queries, similarity, value)?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, ids, loss))
    })
}

fn check_classifier(seed: u64, salt: u64, input_dim: usize, step: f64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, salt));
    let mut classifier = MlpParams::init(&[input_dim, 4], &[Activation::None], &mut rng);
    randomize_biases(&mut classifier, &mut rng);
    let input = random_matrix(6, input_dim, &mut rng);
    let coeffs = random_matrix(6, 4, &mut rng);
    run_check(&classifier, step, |p| {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let mlp = insert_mlp(&mut tape, p)?;
        let logits = mlp_apply(&mut tape, &mlp, x)?;
        let probs = tape.softmax_rows(logits)?;
        let c = tape.constant(coeffs.clone())?;
        let weighted = tape.mul_elem(probs, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, mlp.param_ids(), loss))
    })
}

/// Small scene for the encoder and full-pipeline checks.
fn tiny_scene(cfg: &TrainConfig, seed: u64) -> Result<SceneInputs> {
    let bundle = generate_scene(&GeneratorConfig {
        seed: derive_seed(seed, 0x5CEE),
        objects: 2,
        classes: cfg.classes,
        points_per_object: (5, 9),
        background_points: 24,
        image_size: (64, 48),
        ..GeneratorConfig::default()
    })?;
    scene_inputs(&bundle, cfg)
}

/// Encoder parameters for the encode check.
#[derive(Clone)]
struct EncoderParams {
    encoder3d: MlpParams,
    encoder2d: Vec<MlpParams>,
}

impl ParamFlat for EncoderParams {
    fn flat_len(&self) -> usize {
        self.encoder3d.flat_len() + self.encoder2d.iter().map(|m| m.flat_len()).sum::<usize>()
    }
    fn append_flat(&self, out: &mut Vec<f64>) {
        self.encoder3d.append_flat(out);
        for mlp in &self.encoder2d {
            mlp.append_flat(out);
        }
    }
    fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut used = self.encoder3d.set_flat(values);
        for mlp in &mut self.encoder2d {
            used += mlp.set_flat(&values[used..]);
        }
        used
    }
}

fn check_encode_toy(cfg: &TrainConfig, seed: u64, step: f64) -> Result<f64> {
    let inputs = tiny_scene(cfg, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x07));
    let model = ModelParams::init(cfg, derive_seed(seed, 0x08))?;
    let params = EncoderParams {
        encoder3d: model.encoder3d.clone(),
        encoder2d: model.encoder2d.clone(),
    };
    let coeffs_fov: Vec<Matrix> = cfg
        .layer_widths
        .iter()
        .map(|&w| random_matrix(inputs.fov_count(), w, &mut rng))
        .collect();
    let coeffs_2d: Vec<Matrix> = cfg
        .layer_widths
        .iter()
        .map(|&w| random_matrix(inputs.fov_count(), w, &mut rng))
        .collect();
    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let encoder3d = insert_mlp(&mut tape, &p.encoder3d)?;
        let mut ids = encoder3d.param_ids();
        let encoders2d = p
            .encoder2d
            .iter()
            .map(|m| insert_mlp(&mut tape, m))
            .collect::<crate::numerics::Result<Vec<_>>>()?;
        for e in &encoders2d {
            ids.extend(e.param_ids());
        }
        let points = tape.constant(inputs.point_features.clone())?;
        let taps = crate::numerics::mlp_apply_tapped(&mut tape, &encoder3d, points)?;
        let mut loss_terms = Vec::new();
        for (l, &tap) in taps.iter().enumerate() {
            let fov = tape.select_rows(tap, &inputs.fov_indices)?;
            let c = tape.constant(coeffs_fov[l].clone())?;
            let weighted = tape.mul_elem(fov, c)?;
            loss_terms.push(tape.sum_all(weighted)?);

            let pixels = tape.constant(inputs.pixel_features[l].clone())?;
            let f2d = mlp_apply(&mut tape, &encoders2d[l], pixels)?;
            let c2 = tape.constant(coeffs_2d[l].clone())?;
            let weighted2 = tape.mul_elem(f2d, c2)?;
            loss_terms.push(tape.sum_all(weighted2)?);
        }
        let mut loss = loss_terms[0];
        for &term in &loss_terms[1..] {
            loss = tape.add(loss, term)?;
        }
        Ok((tape, ids, loss))
    })
}

fn check_total_loss(cfg: &TrainConfig, seed: u64, step: f64) -> Result<f64> {
    let inputs = tiny_scene(cfg, seed)?;
    let params = ModelParams::init(cfg, derive_seed(seed, 0x09))?;
    // The distillation teacher is constant by contract, so the finite
    // differences must perturb the loss with the teacher frozen at the base
    // parameters; at the base point the frozen graph and the live graph
    // coincide in value and gradient.
    let (_, teachers) = super::train::branch_probabilities(&params, &inputs, cfg)?;
    run_check(&params, step, |p| {
        let mut tape = Tape::new();
        let model = insert_model(&mut tape, p)?;
        let ids = model.param_ids();
        let forward = scene_losses_on_tape(
            &mut tape,
            &model,
            &inputs,
            cfg.lambda,
            cfg.epsilon_cosine,
            Some(&teachers),
        )?;
        Ok((tape, ids, forward.total))
    })
}

/// Run every check for every seed.
pub fn gradient_suite(cfg: &TrainConfig, seeds: &[u64], step: f64) -> Result<Vec<SuiteEntry>> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for &seed in seeds {
        let checks: [(&'static str, f64); 10] = [
            ("mlp_forward", check_mlp(seed, step)?),
            ("multihead_attention", check_attention(seed, step)?),
            ("msfskd_fuse", check_msfskd(seed, step)?),
            ("fuse_layer", check_fuse_layer(seed, step)?),
            ("fuse_multiscale", check_fuse_multiscale(seed, step)?),
            (
                "class_aware_attention",
                check_class_aware_attention(seed, step)?,
            ),
            ("branch_predict", check_classifier(seed, 0x0A, 8, step)?),
            ("predict_3d_layer", check_classifier(seed, 0x0B, 6, step)?),
            ("encode_toy", check_encode_toy(cfg, seed, step)?),
            ("total_loss", check_total_loss(cfg, seed, step)?),
        ];
        for (name, max_rel_error) in checks {
            entries.push(SuiteEntry {
                name,
                seed,
                max_rel_error,
            });
        }
    }
    Ok(entries)
}
