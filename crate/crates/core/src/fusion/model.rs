//! The fusion model: toy multi-scale encoders, per-layer 2D learners, the
//! multi-scale downsampler, class-aware attention over box members, per-layer
//! 3D classifiers, and the loss composition.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::geometry::{
    compose_chain, project_points, rasterize, BoundingBox2D, PointCloud, ProjectedPoint,
};
use crate::numerics::{
    attention_apply, insert_attention, insert_mlp, mlp_apply, mlp_apply_tapped, mlp_forward,
    multihead_attention, softmax_rows, Activation, AttentionParams, Matrix, MlpParams, NodeId,
    ParamFlat, Tape, TapeAttention, TapeMlp, PROB_CLAMP,
};
use crate::scenedata::{Image, SceneBundle};

use super::config::TrainConfig;
use super::stack::{BoxFeatureSet, ClassEmbeddingTable, ConfusionMatrix, FeatureStack, LossReport};
use super::{FusionError, Result};

/// Input width of the 3D point encoder: x, y, z, intensity.
const POINT_FEATURES: usize = 4;
/// Input width of the per-scale pixel encoder: mean R, G, B.
const PIXEL_FEATURES: usize = 3;

/// All trainable parameters of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Point MLP over (x, y, z, intensity), tapped at every hidden layer.
    pub encoder3d: MlpParams,
    /// One pixel MLP per scale over windowed RGB means.
    pub encoder2d: Vec<MlpParams>,
    /// Per-layer learner applied to FOV 3D features before fusion.
    pub learners: Vec<MlpParams>,
    /// Maps the concatenated fused layers back to hidden size D.
    pub downsampler: MlpParams,
    pub attention: AttentionParams,
    /// Maps attention output to class logits.
    pub branch_classifier: MlpParams,
    /// One affine classifier per layer over FOV 3D features.
    pub layer_classifiers: Vec<MlpParams>,
    pub class_embeddings: ClassEmbeddingTable,
}

impl ModelParams {
    /// Seeded initialization for the configured shape.
    pub fn init(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut encoder3d_dims = vec![POINT_FEATURES];
        encoder3d_dims.extend_from_slice(&cfg.layer_widths);
        let encoder3d = MlpParams::init(
            &encoder3d_dims,
            &vec![Activation::Relu; cfg.layers],
            &mut rng,
        );
        let encoder2d = cfg
            .layer_widths
            .iter()
            .map(|&w| MlpParams::init(&[PIXEL_FEATURES, w], &[Activation::Relu], &mut rng))
            .collect();
        let learners = cfg
            .layer_widths
            .iter()
            .map(|&w| MlpParams::init(&[w, w], &[Activation::None], &mut rng))
            .collect();
        // Sigmoid keeps the fused features bounded, which keeps the branch
        // gradients tame at learning rates the distillation path needs.
        let downsampler = MlpParams::init(
            &[cfg.fused_width(), cfg.hidden],
            &[Activation::Sigmoid],
            &mut rng,
        );
        let attention = AttentionParams::init(cfg.hidden, cfg.heads, &mut rng)?;
        let branch_classifier =
            MlpParams::init(&[cfg.hidden, cfg.classes], &[Activation::None], &mut rng);
        let layer_classifiers = cfg
            .layer_widths
            .iter()
            .map(|&w| MlpParams::init(&[w, cfg.classes], &[Activation::None], &mut rng))
            .collect();
        let class_embeddings = ClassEmbeddingTable::init(cfg.classes, cfg.hidden, &mut rng);
        Ok(ModelParams {
            encoder3d,
            encoder2d,
            learners,
            downsampler,
            attention,
            branch_classifier,
            layer_classifiers,
            class_embeddings,
        })
    }

    /// Named parameter blocks in flat order.
    pub fn blocks(&self) -> Vec<(String, usize)> {
        let mut blocks = vec![("encoder3d".to_string(), self.encoder3d.flat_len())];
        for (i, mlp) in self.encoder2d.iter().enumerate() {
            blocks.push((format!("encoder2d_{}", i), mlp.flat_len()));
        }
        for (i, mlp) in self.learners.iter().enumerate() {
            blocks.push((format!("learner_{}", i), mlp.flat_len()));
        }
        blocks.push(("downsampler".to_string(), self.downsampler.flat_len()));
        blocks.push(("attention".to_string(), self.attention.flat_len()));
        blocks.push((
            "branch_classifier".to_string(),
            self.branch_classifier.flat_len(),
        ));
        for (i, mlp) in self.layer_classifiers.iter().enumerate() {
            blocks.push((format!("layer_classifier_{}", i), mlp.flat_len()));
        }
        blocks.push((
            "class_embeddings".to_string(),
            self.class_embeddings.flat_len(),
        ));
        blocks
    }

    /// Block names that feed only the box branch; the 3D student path never
    /// reads them.
    pub fn branch_only_block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder2d.len() {
            names.push(format!("encoder2d_{}", i));
        }
        for i in 0..self.learners.len() {
            names.push(format!("learner_{}", i));
        }
        names.push("downsampler".to_string());
        names.push("attention".to_string());
        names.push("branch_classifier".to_string());
        names.push("class_embeddings".to_string());
        names
    }
}

impl ParamFlat for ModelParams {
    fn flat_len(&self) -> usize {
        self.blocks().iter().map(|(_, len)| len).sum()
    }

    fn append_flat(&self, out: &mut Vec<f64>) {
        self.encoder3d.append_flat(out);
        for mlp in &self.encoder2d {
            mlp.append_flat(out);
        }
        for mlp in &self.learners {
            mlp.append_flat(out);
        }
        self.downsampler.append_flat(out);
        self.attention.append_flat(out);
        self.branch_classifier.append_flat(out);
        for mlp in &self.layer_classifiers {
            mlp.append_flat(out);
        }
        self.class_embeddings.append_flat(out);
    }

    fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut used = self.encoder3d.set_flat(values);
        for mlp in &mut self.encoder2d {
            used += mlp.set_flat(&values[used..]);
        }
        for mlp in &mut self.learners {
            used += mlp.set_flat(&values[used..]);
        }
        used += self.downsampler.set_flat(&values[used..]);
        used += self.attention.set_flat(&values[used..]);
        used += self.branch_classifier.set_flat(&values[used..]);
        for mlp in &mut self.layer_classifiers {
            used += mlp.set_flat(&values[used..]);
        }
        used += self.class_embeddings.set_flat(&values[used..]);
        used
    }
}

/// Tape leaves for every model parameter.
pub(crate) struct TapeModel {
    pub encoder3d: TapeMlp,
    pub encoder2d: Vec<TapeMlp>,
    pub learners: Vec<TapeMlp>,
    pub downsampler: TapeMlp,
    pub attention: TapeAttention,
    pub branch_classifier: TapeMlp,
    pub layer_classifiers: Vec<TapeMlp>,
    pub class_embeddings: NodeId,
}

pub(crate) fn insert_model(tape: &mut Tape, params: &ModelParams) -> Result<TapeModel> {
    Ok(TapeModel {
        encoder3d: insert_mlp(tape, &params.encoder3d)?,
        encoder2d: params
            .encoder2d
            .iter()
            .map(|m| insert_mlp(tape, m))
            .collect::<crate::numerics::Result<Vec<_>>>()?,
        learners: params
            .learners
            .iter()
            .map(|m| insert_mlp(tape, m))
            .collect::<crate::numerics::Result<Vec<_>>>()?,
        downsampler: insert_mlp(tape, &params.downsampler)?,
        attention: insert_attention(tape, &params.attention)?,
        branch_classifier: insert_mlp(tape, &params.branch_classifier)?,
        layer_classifiers: params
            .layer_classifiers
            .iter()
            .map(|m| insert_mlp(tape, m))
            .collect::<crate::numerics::Result<Vec<_>>>()?,
        class_embeddings: tape.input(params.class_embeddings.table.clone())?,
    })
}

fn mlp_param_ids(mlp: &TapeMlp, out: &mut Vec<NodeId>) {
    for layer in &mlp.layers {
        out.push(layer.weight);
        out.push(layer.bias);
    }
}

impl TapeModel {
    /// Parameter node ids in the same order as [`ModelParams`]'s flat layout.
    pub(crate) fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        mlp_param_ids(&self.encoder3d, &mut ids);
        for mlp in &self.encoder2d {
            mlp_param_ids(mlp, &mut ids);
        }
        for mlp in &self.learners {
            mlp_param_ids(mlp, &mut ids);
        }
        mlp_param_ids(&self.downsampler, &mut ids);
        for head in &self.attention.heads {
            ids.push(head.w_query);
            ids.push(head.w_key);
            ids.push(head.w_value);
        }
        mlp_param_ids(&self.branch_classifier, &mut ids);
        for mlp in &self.layer_classifiers {
            mlp_param_ids(mlp, &mut ids);
        }
        ids.push(self.class_embeddings);
        ids
    }
}

/// Precomputed, non-differentiated scene inputs for the model.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    /// `N x 4` point features: x, y, z, intensity.
    pub point_features: Matrix,
    /// Per scale: `N_img x 3` windowed RGB means at each projected pixel.
    pub pixel_features: Vec<Matrix>,
    /// Source index per FOV row, in projection order.
    pub fov_indices: Vec<usize>,
    /// Ground-truth class per FOV row.
    pub fov_labels: Vec<usize>,
    pub projected: Vec<ProjectedPoint>,
    pub boxes: Vec<BoundingBox2D>,
    /// Per box: FOV row positions strictly inside the box.
    pub memberships: Vec<Vec<usize>>,
}

impl SceneInputs {
    pub fn fov_count(&self) -> usize {
        self.fov_indices.len()
    }

    /// True if at least one box has member points.
    pub fn has_populated_box(&self) -> bool {
        self.memberships.iter().any(|m| !m.is_empty())
    }
}

/// Mean RGB (normalized to `[0, 1]`) over the clipped square window of
/// half-width `half` around each projected point's pixel.
pub fn pixel_window_means(image: &Image, projected: &[ProjectedPoint], half: u32) -> Matrix {
    let mut out = Matrix::zeros(projected.len(), PIXEL_FEATURES);
    for (row, pp) in projected.iter().enumerate() {
        let (pu, pv) = rasterize(pp);
        let u_min = pu.saturating_sub(half);
        let u_max = (pu + half).min(image.width - 1);
        let v_min = pv.saturating_sub(half);
        let v_max = (pv + half).min(image.height - 1);
        let mut acc = [0.0f64; 3];
        let mut count = 0.0;
        for v in v_min..=v_max {
            for u in u_min..=u_max {
                let rgb = image.rgb_at(u, v);
                for (a, &c) in acc.iter_mut().zip(&rgb) {
                    *a += c as f64;
                }
                count += 1.0;
            }
        }
        for (c, &a) in (0..PIXEL_FEATURES).zip(&acc) {
            out.set(row, c, a / (count * 255.0));
        }
    }
    out
}

/// Window half-width for scale `layer`: doubles per scale.
pub fn window_half(layer: usize) -> u32 {
    1u32 << layer
}

/// Horizontal coordinates span tens of meters; scale them to unit order so
/// the encoder's activations and gradients stay well conditioned. Heights
/// are already order one.
const HORIZONTAL_SCALE: f64 = 0.1;

fn point_feature_matrix(cloud: &PointCloud) -> Matrix {
    Matrix::from_fn(cloud.len(), POINT_FEATURES, |r, c| {
        let p = &cloud.points[r];
        match c {
            0 => p.x * HORIZONTAL_SCALE,
            1 => p.y * HORIZONTAL_SCALE,
            2 => p.z,
            _ => p.intensity,
        }
    })
}

/// Project the scene and assemble the model inputs: FOV selection, per-scale
/// pixel features, labels, and strict box memberships.
pub fn scene_inputs(bundle: &SceneBundle, cfg: &TrainConfig) -> Result<SceneInputs> {
    bundle.validate()?;
    let transform = compose_chain(&bundle.chain)?;
    let projected = project_points(
        &bundle.cloud,
        &bundle.intrinsics,
        &transform,
        &bundle.plane(),
    );
    let fov_indices: Vec<usize> = projected.iter().map(|pp| pp.source_index).collect();
    let mut fov_labels = Vec::with_capacity(fov_indices.len());
    for (row, &i) in fov_indices.iter().enumerate() {
        let label = bundle.labels[i] as usize;
        if label >= cfg.classes {
            return Err(FusionError::BadLabel {
                label,
                classes: cfg.classes,
                row,
            });
        }
        fov_labels.push(label);
    }
    for (i, bx) in bundle.boxes2d.iter().enumerate() {
        if bx.class_id >= cfg.classes {
            return Err(FusionError::Config {
                msg: format!(
                    "box {} has class {} outside [0, {})",
                    i, bx.class_id, cfg.classes
                ),
            });
        }
    }
    let pixel_features = (0..cfg.layers)
        .map(|l| pixel_window_means(&bundle.image, &projected, window_half(l)))
        .collect();
    let memberships = bundle
        .boxes2d
        .iter()
        .map(|bx| {
            projected
                .iter()
                .enumerate()
                .filter(|(_, pp)| bx.contains(pp.u, pp.v))
                .map(|(pos, _)| pos)
                .collect()
        })
        .collect();
    Ok(SceneInputs {
        point_features: point_feature_matrix(&bundle.cloud),
        pixel_features,
        fov_indices,
        fov_labels,
        projected,
        boxes: bundle.boxes2d.clone(),
        memberships,
    })
}

/// Toy multi-scale encoders: a tapped point MLP and per-scale pixel MLPs.
pub fn encode_toy(
    cloud: &PointCloud,
    image: &Image,
    projected: &[ProjectedPoint],
    encoder3d: &MlpParams,
    encoder2d: &[MlpParams],
) -> Result<FeatureStack> {
    let fov: Vec<usize> = projected.iter().map(|pp| pp.source_index).collect();
    let point_features = point_feature_matrix(cloud);
    let mut features3d_full = Vec::with_capacity(encoder3d.layers.len());
    let mut current = point_features;
    for layer_index in 0..encoder3d.layers.len() {
        let single = MlpParams {
            layers: vec![encoder3d.layers[layer_index].clone()],
        };
        current = mlp_forward(&single, &current)?;
        features3d_full.push(current.clone());
    }
    let features3d_fov = features3d_full
        .iter()
        .map(|m| m.select_rows(&fov))
        .collect::<crate::numerics::Result<Vec<_>>>()?;
    if encoder2d.len() != encoder3d.layers.len() {
        return Err(FusionError::Config {
            msg: format!(
                "{} pixel encoders for {} point layers",
                encoder2d.len(),
                encoder3d.layers.len()
            ),
        });
    }
    let mut features2d = Vec::with_capacity(encoder2d.len());
    for (l, mlp) in encoder2d.iter().enumerate() {
        let pixels = pixel_window_means(image, projected, window_half(l));
        features2d.push(mlp_forward(mlp, &pixels)?);
    }
    Ok(FeatureStack {
        features2d,
        features3d_full,
        features3d_fov,
    })
}

/// Per-layer fusion: learned 3D block concatenated with the 2D block.
pub fn fuse_layer(stack: &FeatureStack, layer: usize, learner: &MlpParams) -> Result<Matrix> {
    let learned = mlp_forward(learner, &stack.features3d_fov[layer])?;
    Ok(Matrix::concat_cols(&[&learned, &stack.features2d[layer]])?)
}

/// Concatenate all fused layers and downsample back to hidden size.
pub fn fuse_multiscale(fused_layers: &[Matrix], downsampler: &MlpParams) -> Result<Matrix> {
    let refs: Vec<&Matrix> = fused_layers.iter().collect();
    let all = Matrix::concat_cols(&refs)?;
    Ok(mlp_forward(downsampler, &all)?)
}

/// Gated residual fusion: `f2d + sigmoid(gate(f2d3d)) .* value(f2d3d)`.
pub fn msfskd_fuse(
    f2d: &Matrix,
    f2d3d: &Matrix,
    gate_mlp: &MlpParams,
    value_mlp: &MlpParams,
) -> Result<Matrix> {
    let gate = crate::numerics::sigmoid(&mlp_forward(gate_mlp, f2d3d)?);
    let value = mlp_forward(value_mlp, f2d3d)?;
    let gated = gate.zip_map(&value, |g, v| g * v)?;
    Ok(f2d.zip_map(&gated, |a, b| a + b)?)
}

/// Fused rows whose projected coordinates fall strictly inside the box.
pub fn select_box_features(
    fused: &Matrix,
    projected: &[ProjectedPoint],
    box2d: &BoundingBox2D,
    fov_labels: &[usize],
) -> Result<BoxFeatureSet> {
    if fused.rows() != projected.len() || fov_labels.len() != projected.len() {
        return Err(FusionError::Config {
            msg: format!(
                "{} fused rows, {} projected points, {} labels",
                fused.rows(),
                projected.len(),
                fov_labels.len()
            ),
        });
    }
    let members: Vec<usize> = projected
        .iter()
        .enumerate()
        .filter(|(_, pp)| box2d.contains(pp.u, pp.v))
        .map(|(pos, _)| pos)
        .collect();
    let features = fused.select_rows(&members)?;
    let labels = members.iter().map(|&m| fov_labels[m]).collect();
    Ok(BoxFeatureSet {
        box2d: *box2d,
        members,
        features,
        labels,
    })
}

/// Class-aware attention over one box: queries are per-point class
/// embeddings, keys are their cosine similarity to the box-class embedding,
/// values are the fused features.
pub fn class_aware_attention(
    bfs: &BoxFeatureSet,
    table: &ClassEmbeddingTable,
    params: &AttentionParams,
    epsilon: f64,
) -> Result<Matrix> {
    if bfs.is_empty() {
        return Err(FusionError::EmptyBox);
    }
    let queries = table.table.select_rows(&bfs.labels)?;
    let box_rows = vec![bfs.box2d.class_id; bfs.len()];
    let box_embedding = table.table.select_rows(&box_rows)?;
    let similarity = crate::numerics::cosine_similarity(&queries, &box_embedding, epsilon)?;
    Ok(multihead_attention(
        params,
        &queries,
        &similarity,
        &bfs.features,
    )?)
}

/// Class probabilities from attention output: classifier logits, row softmax.
pub fn branch_predict(attn: &Matrix, classifier: &MlpParams) -> Result<Matrix> {
    Ok(softmax_rows(&mlp_forward(classifier, attn)?))
}

/// Per-layer class probabilities over the FOV point set.
pub fn predict_3d_layer(
    stack: &FeatureStack,
    layer: usize,
    classifier: &MlpParams,
) -> Result<Matrix> {
    Ok(softmax_rows(&mlp_forward(
        classifier,
        &stack.features3d_fov[layer],
    )?))
}

fn cross_entropy_from_probs(probs: &Matrix, labels: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        loss -= probs.get(r, y).max(PROB_CLAMP).ln();
    }
    loss / labels.len() as f64
}

/// Compose the segmentation and distillation losses from per-box branch
/// probabilities and per-layer predictions, and report segmentation quality
/// of the deepest layer.
pub fn compute_losses(
    branch_probs: &[Matrix],
    layer_preds: &[Matrix],
    memberships: &[Vec<usize>],
    fov_labels: &[usize],
    lambda: f64,
) -> Result<LossReport> {
    if branch_probs.is_empty() || memberships.iter().all(|m| m.is_empty()) {
        return Err(FusionError::LossUndefined);
    }
    if branch_probs.len() != memberships.len() {
        return Err(FusionError::Config {
            msg: format!(
                "{} branch predictions for {} memberships",
                branch_probs.len(),
                memberships.len()
            ),
        });
    }
    let mut seg = 0.0;
    let mut distill = 0.0;
    let mut pairs = 0usize;
    for (probs, members) in branch_probs.iter().zip(memberships) {
        let labels: Vec<usize> = members.iter().map(|&m| fov_labels[m]).collect();
        seg += cross_entropy_from_probs(probs, &labels)
            + crate::numerics::lovasz_softmax(probs, &labels)?;
        for layer in layer_preds {
            let student = layer.select_rows(members)?;
            distill += crate::numerics::kl_divergence(probs, &student)?;
            pairs += 1;
        }
    }
    let seg_loss = seg / branch_probs.len() as f64;
    let distill_loss = if pairs == 0 { 0.0 } else { distill / pairs as f64 };
    let total_loss = seg_loss + lambda * distill_loss;

    let mut confusion = ConfusionMatrix::new(layer_preds.last().map_or(2, |m| m.cols()));
    if let Some(deepest) = layer_preds.last() {
        for (row, &label) in fov_labels.iter().enumerate() {
            let mut best = 0;
            for c in 1..deepest.cols() {
                if deepest.get(row, c) > deepest.get(row, best) {
                    best = c;
                }
            }
            confusion.record(label, best);
        }
    }
    Ok(LossReport {
        seg_loss,
        distill_loss,
        total_loss,
        per_class_iou: confusion.per_class_iou(),
        miou: confusion.miou(),
    })
}

/// Node handles for one scene's loss graph.
pub(crate) struct SceneForward {
    pub seg: NodeId,
    pub distill: NodeId,
    pub total: NodeId,
    /// Per layer: FOV probability rows.
    pub layer_probs: Vec<NodeId>,
    /// Per kept box: branch probability rows.
    pub branch_probs: Vec<NodeId>,
    /// Indices into `inputs.boxes` of the boxes that contributed.
    pub kept_boxes: Vec<usize>,
}

/// Encoders, fusion, and per-layer predictions on the tape.
pub(crate) fn features_on_tape(
    tape: &mut Tape,
    model: &TapeModel,
    inputs: &SceneInputs,
) -> Result<(NodeId, Vec<NodeId>)> {
    let points = tape.constant(inputs.point_features.clone())?;
    let taps_full = mlp_apply_tapped(tape, &model.encoder3d, points)?;
    let mut fused_layers = Vec::with_capacity(taps_full.len());
    let mut layer_probs = Vec::with_capacity(taps_full.len());
    for (l, &tap) in taps_full.iter().enumerate() {
        let fov = tape.select_rows(tap, &inputs.fov_indices)?;
        let pixels = tape.constant(inputs.pixel_features[l].clone())?;
        let f2d = mlp_apply(tape, &model.encoder2d[l], pixels)?;
        let learned = mlp_apply(tape, &model.learners[l], fov)?;
        fused_layers.push(tape.concat_cols(&[learned, f2d])?);
        let logits = mlp_apply(tape, &model.layer_classifiers[l], fov)?;
        layer_probs.push(tape.softmax_rows(logits)?);
    }
    let all = tape.concat_cols(&fused_layers)?;
    let fused = mlp_apply(tape, &model.downsampler, all)?;
    Ok((fused, layer_probs))
}

/// Full loss graph for one scene.
///
/// `teacher_override`, when given, supplies the branch probability matrices
/// used as the constant distillation teacher (one per kept box, in kept
/// order) instead of the freshly computed branch output.
pub(crate) fn scene_losses_on_tape(
    tape: &mut Tape,
    model: &TapeModel,
    inputs: &SceneInputs,
    lambda: f64,
    epsilon: f64,
    teacher_override: Option<&[Matrix]>,
) -> Result<SceneForward> {
    let (fused, layer_probs) = features_on_tape(tape, model, inputs)?;

    let mut seg_terms = Vec::new();
    let mut kl_terms = Vec::new();
    let mut branch_probs = Vec::new();
    let mut kept_boxes = Vec::new();
    for (box_index, (box2d, members)) in
        inputs.boxes.iter().zip(&inputs.memberships).enumerate()
    {
        if members.is_empty() {
            continue;
        }
        let labels: Vec<usize> = members.iter().map(|&m| inputs.fov_labels[m]).collect();
        let features = tape.select_rows(fused, members)?;
        let queries = tape.select_rows(model.class_embeddings, &labels)?;
        let box_rows = vec![box2d.class_id; members.len()];
        let box_embedding = tape.select_rows(model.class_embeddings, &box_rows)?;
        let similarity = tape.cosine_rows(queries, box_embedding, epsilon)?;
        let attn = attention_apply(tape, &model.attention, queries, similarity, features)?;
        let logits = mlp_apply(tape, &model.branch_classifier, attn)?;
        let probs = tape.softmax_rows(logits)?;

        let ce = tape.cross_entropy(logits, &labels)?;
        let lovasz = tape.lovasz_softmax(probs, &labels)?;
        seg_terms.push(tape.add(ce, lovasz)?);

        // Constant teacher: the branch side of the distillation loss carries
        // no gradient.
        let teacher_value = match teacher_override {
            Some(teachers) => teachers
                .get(kept_boxes.len())
                .ok_or_else(|| FusionError::Config {
                    msg: "teacher override shorter than kept box list".into(),
                })?
                .clone(),
            None => tape.value(probs).clone(),
        };
        let teacher = tape.constant(teacher_value)?;
        for &layer in &layer_probs {
            let student = tape.select_rows(layer, members)?;
            kl_terms.push(tape.kl_divergence(teacher, student)?);
        }

        branch_probs.push(probs);
        kept_boxes.push(box_index);
    }
    if seg_terms.is_empty() {
        return Err(FusionError::LossUndefined);
    }

    let mut seg_sum = seg_terms[0];
    for &term in &seg_terms[1..] {
        seg_sum = tape.add(seg_sum, term)?;
    }
    let seg = tape.scale(seg_sum, 1.0 / seg_terms.len() as f64)?;

    let mut kl_sum = kl_terms[0];
    for &term in &kl_terms[1..] {
        kl_sum = tape.add(kl_sum, term)?;
    }
    let distill = tape.scale(kl_sum, 1.0 / kl_terms.len() as f64)?;

    let weighted = tape.scale(distill, lambda)?;
    let total = tape.add(seg, weighted)?;
    Ok(SceneForward {
        seg,
        distill,
        total,
        layer_probs,
        branch_probs,
        kept_boxes,
    })
}
