//! SGD training over synthetic scenes, evaluation, and the
//! distillation-on/off comparison.

use std::path::Path;

use crate::numerics::{Matrix, ParamFlat, Tape};
use crate::scenedata::{generate_scene, GeneratorConfig};

use super::config::TrainConfig;
use super::model::{
    insert_model, scene_inputs, scene_losses_on_tape, features_on_tape, ModelParams, SceneInputs,
};
use super::stack::{ConfusionMatrix, LossReport};
use super::{FusionError, Result};

/// Deterministic stream splitting for seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Losses recorded after one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub seg_loss: f64,
    pub distill_loss: f64,
    pub total_loss: f64,
}

/// The result of a training run.
pub struct TrainOutcome {
    pub curve: Vec<StepRecord>,
    pub params: ModelParams,
    /// Evaluation of the held-out scene after training.
    pub heldout: LossReport,
    /// Deepest-layer accuracy on points inside annotated boxes of the
    /// held-out scene.
    pub heldout_inbox_accuracy: f64,
}

/// Generator settings for scene `scene_index` of a run; `gen` and `train`
/// share this mapping so a generated dataset matches a training run.
pub fn scene_generator_config(cfg: &TrainConfig, scene_index: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed: derive_seed(cfg.seed, 1_000 + scene_index),
        classes: cfg.classes,
        ..GeneratorConfig::default()
    }
}

/// Generate `count` training scenes plus one held-out scene and precompute
/// their model inputs.
pub fn build_scene_set(cfg: &TrainConfig, count: usize) -> Result<(Vec<SceneInputs>, SceneInputs)> {
    let mut inputs = Vec::with_capacity(count);
    for i in 0..count {
        let bundle = generate_scene(&scene_generator_config(cfg, i as u64))?;
        inputs.push(scene_inputs(&bundle, cfg)?);
    }
    let heldout_bundle = generate_scene(&scene_generator_config(cfg, count as u64))?;
    let heldout = scene_inputs(&heldout_bundle, cfg)?;
    Ok((inputs, heldout))
}

/// One SGD step over a batch of scenes: forward, backward, parameter update.
///
/// Scenes without populated boxes are skipped; the step fails with a
/// loss-undefined error only if every scene in the batch is empty. With a
/// zero learning rate the parameters are left untouched.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[&SceneInputs],
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let model = insert_model(&mut tape, params)?;
    let mut forwards = Vec::new();
    for inputs in batch {
        if !inputs.has_populated_box() {
            continue;
        }
        forwards.push((
            scene_losses_on_tape(
                &mut tape,
                &model,
                inputs,
                cfg.lambda,
                cfg.epsilon_cosine,
                None,
            )?,
            *inputs,
        ));
    }
    if forwards.is_empty() {
        return Err(FusionError::LossUndefined);
    }

    let inv = 1.0 / forwards.len() as f64;
    let mut total_sum = forwards[0].0.total;
    for (forward, _) in &forwards[1..] {
        total_sum = tape.add(total_sum, forward.total)?;
    }
    let batch_total = tape.scale(total_sum, inv)?;

    let seg_loss: f64 = forwards
        .iter()
        .map(|(f, _)| tape.value(f.seg).get(0, 0))
        .sum::<f64>()
        * inv;
    let distill_loss: f64 = forwards
        .iter()
        .map(|(f, _)| tape.value(f.distill).get(0, 0))
        .sum::<f64>()
        * inv;

    let mut confusion = ConfusionMatrix::new(cfg.classes);
    for (forward, inputs) in &forwards {
        let deepest = tape.value(*forward.layer_probs.last().expect("layers >= 1"));
        record_predictions(&mut confusion, deepest, &inputs.fov_labels);
    }

    let grads = tape.backward(batch_total)?;
    if cfg.learning_rate != 0.0 {
        let ids = model.param_ids();
        let mut theta = params.to_flat();
        let mut cursor = 0;
        for id in ids {
            let value = tape.value(id);
            let len = value.data().len();
            if let Some(g) = grads.get(id) {
                for (t, gv) in theta[cursor..cursor + len].iter_mut().zip(g.data()) {
                    *t -= cfg.learning_rate * gv;
                }
            }
            cursor += len;
        }
        debug_assert_eq!(cursor, theta.len());
        params.set_flat(&theta);
    }

    Ok(LossReport {
        seg_loss,
        distill_loss,
        total_loss: seg_loss + cfg.lambda * distill_loss,
        per_class_iou: confusion.per_class_iou(),
        miou: confusion.miou(),
    })
}

fn record_predictions(confusion: &mut ConfusionMatrix, probs: &Matrix, labels: &[usize]) {
    for (row, &label) in labels.iter().enumerate() {
        let mut best = 0;
        for c in 1..probs.cols() {
            if probs.get(row, c) > probs.get(row, best) {
                best = c;
            }
        }
        confusion.record(label, best);
    }
}

/// Train for `cfg.epochs` epochs over `scene_count` generated scenes.
///
/// A step consumes `batch_size` scenes in deterministic cyclic order, so one
/// epoch is `ceil(scene_count / batch_size)` steps.
pub fn train(cfg: &TrainConfig, scene_count: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scene_count == 0 {
        return Err(FusionError::Config {
            msg: "training needs at least one scene".into(),
        });
    }
    let (scenes, heldout) = build_scene_set(cfg, scene_count)?;
    let mut params = ModelParams::init(cfg, derive_seed(cfg.seed, 0xF00D))?;

    let steps_per_epoch = scene_count.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut curve = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let batch: Vec<&SceneInputs> = (0..cfg.batch_size)
            .map(|j| &scenes[(step * cfg.batch_size + j) % scene_count])
            .collect();
        let report = train_step(&mut params, &batch, cfg)?;
        curve.push(StepRecord {
            step: step + 1,
            seg_loss: report.seg_loss,
            distill_loss: report.distill_loss,
            total_loss: report.total_loss,
        });
    }

    let heldout_report = evaluate(std::slice::from_ref(&heldout), &params, cfg)?;
    let heldout_inbox_accuracy = in_box_accuracy(std::slice::from_ref(&heldout), &params)?;
    Ok(TrainOutcome {
        curve,
        params,
        heldout: heldout_report,
        heldout_inbox_accuracy,
    })
}

/// Forward-only evaluation: mean losses over scenes with boxes, and IoU of
/// the deepest-layer 3D predictions over every FOV point.
pub fn evaluate(
    scenes: &[SceneInputs],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let mut confusion = ConfusionMatrix::new(cfg.classes);
    let mut seg_sum = 0.0;
    let mut distill_sum = 0.0;
    let mut with_boxes = 0usize;
    for inputs in scenes {
        let mut tape = Tape::new();
        let model = insert_model(&mut tape, params)?;
        if inputs.has_populated_box() {
            let forward = scene_losses_on_tape(
                &mut tape,
                &model,
                inputs,
                cfg.lambda,
                cfg.epsilon_cosine,
                None,
            )?;
            seg_sum += tape.value(forward.seg).get(0, 0);
            distill_sum += tape.value(forward.distill).get(0, 0);
            with_boxes += 1;
            let deepest = tape.value(*forward.layer_probs.last().expect("layers >= 1"));
            record_predictions(&mut confusion, deepest, &inputs.fov_labels);
        } else {
            let (_, layer_probs) = features_on_tape(&mut tape, &model, inputs)?;
            let deepest = tape.value(*layer_probs.last().expect("layers >= 1"));
            record_predictions(&mut confusion, deepest, &inputs.fov_labels);
        }
    }
    let (seg_loss, distill_loss) = if with_boxes == 0 {
        (0.0, 0.0)
    } else {
        (
            seg_sum / with_boxes as f64,
            distill_sum / with_boxes as f64,
        )
    };
    Ok(LossReport {
        seg_loss,
        distill_loss,
        total_loss: seg_loss + cfg.lambda * distill_loss,
        per_class_iou: confusion.per_class_iou(),
        miou: confusion.miou(),
    })
}

/// Deepest-layer accuracy over the union of box-member points.
pub fn in_box_accuracy(scenes: &[SceneInputs], params: &ModelParams) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for inputs in scenes {
        let mut tape = Tape::new();
        let model = insert_model(&mut tape, params)?;
        let (_, layer_probs) = features_on_tape(&mut tape, &model, inputs)?;
        let deepest = tape.value(*layer_probs.last().expect("layers >= 1"));
        let mut members: Vec<usize> = inputs.memberships.iter().flatten().copied().collect();
        members.sort_unstable();
        members.dedup();
        for &row in &members {
            let mut best = 0;
            for c in 1..deepest.cols() {
                if deepest.get(row, c) > deepest.get(row, best) {
                    best = c;
                }
            }
            if best == inputs.fov_labels[row] {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(FusionError::LossUndefined);
    }
    Ok(correct as f64 / total as f64)
}

/// Scalar loss values of one scene forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub seg: f64,
    pub distill: f64,
    pub total: f64,
}

/// One scene's losses and the flat parameter gradient of the total loss.
///
/// `teachers`, when given, freezes the distillation teacher (one matrix per
/// populated box); otherwise the teacher is the current branch output.
pub fn scene_loss_and_gradient(
    params: &ModelParams,
    inputs: &SceneInputs,
    cfg: &TrainConfig,
    teachers: Option<&[Matrix]>,
) -> Result<(LossValues, Vec<f64>)> {
    let mut tape = Tape::new();
    let model = insert_model(&mut tape, params)?;
    let forward = scene_losses_on_tape(
        &mut tape,
        &model,
        inputs,
        cfg.lambda,
        cfg.epsilon_cosine,
        teachers,
    )?;
    let values = LossValues {
        seg: tape.value(forward.seg).get(0, 0),
        distill: tape.value(forward.distill).get(0, 0),
        total: tape.value(forward.total).get(0, 0),
    };
    let grads = tape.backward(forward.total)?;
    let mut flat = Vec::with_capacity(params.flat_len());
    for id in model.param_ids() {
        match grads.get(id) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(0.0, tape.value(id).data().len())),
        }
    }
    Ok((values, flat))
}

/// Distillation loss with a frozen teacher, for directionality checks: the
/// per-box teacher matrices are supplied as constants instead of being
/// recomputed from the branch.
pub fn distill_loss_with_teacher(
    params: &ModelParams,
    inputs: &SceneInputs,
    cfg: &TrainConfig,
    teachers: &[Matrix],
) -> Result<f64> {
    let mut tape = Tape::new();
    let model = insert_model(&mut tape, params)?;
    let forward = scene_losses_on_tape(
        &mut tape,
        &model,
        inputs,
        cfg.lambda,
        cfg.epsilon_cosine,
        Some(teachers),
    )?;
    Ok(tape.value(forward.distill).get(0, 0))
}

/// Branch probabilities per populated box plus the kept box indices, for
/// capturing a teacher snapshot.
pub fn branch_probabilities(
    params: &ModelParams,
    inputs: &SceneInputs,
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let model = insert_model(&mut tape, params)?;
    let forward = scene_losses_on_tape(
        &mut tape,
        &model,
        inputs,
        cfg.lambda,
        cfg.epsilon_cosine,
        None,
    )?;
    let probs = forward
        .branch_probs
        .iter()
        .map(|&id| tape.value(id).clone())
        .collect();
    Ok((forward.kept_boxes, probs))
}

/// One distillation-on vs distillation-off training pair.
#[derive(Debug, Clone)]
pub struct CompareRun {
    pub seed: u64,
    pub accuracy_with_distill: f64,
    pub accuracy_without: f64,
}

/// Outcome of [`compare`] over several seeds.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub lambda: f64,
    pub runs: Vec<CompareRun>,
}

impl CompareReport {
    /// Runs where distillation matched or beat the baseline.
    pub fn wins(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.accuracy_with_distill >= r.accuracy_without)
            .count()
    }
}

/// Train with the configured lambda and with lambda = 0 on identical scene
/// sets and seeds, and report held-out in-box accuracy per run.
pub fn compare(cfg: &TrainConfig, scene_count: usize, runs: usize) -> Result<CompareReport> {
    let mut results = Vec::with_capacity(runs);
    for r in 0..runs {
        let seed = cfg.seed.wrapping_add(r as u64);
        let with_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let without_cfg = TrainConfig {
            seed,
            lambda: 0.0,
            ..cfg.clone()
        };
        let with = train(&with_cfg, scene_count)?;
        let without = train(&without_cfg, scene_count)?;
        results.push(CompareRun {
            seed,
            accuracy_with_distill: with.heldout_inbox_accuracy,
            accuracy_without: without.heldout_inbox_accuracy,
        });
    }
    Ok(CompareReport {
        lambda: cfg.lambda,
        runs: results,
    })
}

/// Loss-curve CSV: `step,seg_loss,distill_loss,total_loss`, floats at 17
/// significant digits.
pub fn loss_curve_csv(curve: &[StepRecord]) -> String {
    let mut out = String::from("step,seg_loss,distill_loss,total_loss\n");
    for record in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            record.step,
            crate::geometry::calib::format_float(record.seg_loss),
            crate::geometry::calib::format_float(record.distill_loss),
            crate::geometry::calib::format_float(record.total_loss),
        ));
    }
    out
}

pub fn write_loss_curve(path: &Path, curve: &[StepRecord]) -> Result<()> {
    std::fs::write(path, loss_curve_csv(curve)).map_err(|source| FusionError::Io {
        path: path.display().to_string(),
        source,
    })
}
