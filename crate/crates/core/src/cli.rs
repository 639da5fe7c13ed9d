//! Command-line interface: scene generation, projection, box derivation,
//! gradient checking, training, evaluation, and the distillation comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::fusion::{
    self, compare, gradient_suite, loss_curve_csv, scene_generator_config, train, TrainConfig,
};
use crate::geometry::{calib::format_float, compose_chain, project_points, rasterize};
use crate::scenedata::{generate_scene, read_scene, write_scene};

/// Result of one CLI invocation.
#[derive(Debug)]
pub struct CommandOutcome {
    /// 0 on success, 1 on domain errors, 2 on usage errors.
    pub exit_code: i32,
    pub summary: String,
    /// Machine-readable report written by the subcommand, if any.
    pub report_path: Option<PathBuf>,
}

impl CommandOutcome {
    fn ok(summary: String, report_path: Option<PathBuf>) -> Self {
        CommandOutcome {
            exit_code: 0,
            summary,
            report_path,
        }
    }

    fn fail(summary: String) -> Self {
        CommandOutcome {
            exit_code: 1,
            summary,
            report_path: None,
        }
    }
}

/// Format with 6 significant digits.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", x);
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&magnitude) {
        format!("{:.5e}", x)
    } else {
        let decimals = (5 - magnitude).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

/// Gradient tolerance the `gradcheck` subcommand enforces.
const GRAD_TOLERANCE: f64 = 1e-4;
/// Finite-difference step for `gradcheck`.
const GRAD_STEP: f64 = 1e-5;
/// Seeds used by `gradcheck`.
const GRAD_SEEDS: u64 = 10;

fn seed_arg() -> Arg {
    Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64))
}

fn scenes_arg() -> Arg {
    Arg::new("scenes")
        .long("scenes")
        .value_parser(clap::value_parser!(usize))
}

fn out_arg(required: bool) -> Arg {
    Arg::new("out")
        .long("out")
        .required(required)
        .value_parser(clap::value_parser!(PathBuf))
}

fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .value_parser(clap::value_parser!(PathBuf))
}

fn train_args(cmd: Command) -> Command {
    cmd.arg(config_arg())
        .arg(seed_arg())
        .arg(scenes_arg())
        .arg(
            Arg::new("epochs")
                .long("epochs")
                .value_parser(clap::value_parser!(usize)),
        )
        .arg(
            Arg::new("lr")
                .long("lr")
                .value_parser(clap::value_parser!(f64)),
        )
        .arg(
            Arg::new("lambda")
                .long("lambda")
                .value_parser(clap::value_parser!(f64)),
        )
}

fn command() -> Command {
    Command::new("boxdistill")
        .about("LiDAR-camera projection, box-prior fusion, and distillation training on synthetic scenes")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("gen")
                .about("Generate synthetic scene directories")
                .arg(seed_arg())
                .arg(scenes_arg())
                .arg(config_arg())
                .arg(out_arg(true)),
        )
        .subcommand(
            Command::new("project")
                .about("Project a scene's points and write a CSV of image coordinates")
                .arg(
                    Arg::new("scene")
                        .long("scene")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(out_arg(true)),
        )
        .subcommand(
            Command::new("boxes")
                .about("Derive 2D boxes from a scene's 3D boxes and write them as CSV")
                .arg(
                    Arg::new("scene")
                        .long("scene")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(out_arg(true)),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Verify analytic gradients against central finite differences")
                .arg(config_arg())
                .arg(out_arg(false)),
        )
        .subcommand(train_args(
            Command::new("train")
                .about("Train on generated scenes and write the loss curve")
                .arg(out_arg(true)),
        ))
        .subcommand(train_args(
            Command::new("eval")
                .about("Train, then report per-class IoU and mIoU on a held-out scene")
                .arg(out_arg(false)),
        ))
        .subcommand(train_args(
            Command::new("compare")
                .about("Train with and without distillation and compare held-out accuracy")
                .arg(out_arg(false))
                .arg(
                    Arg::new("runs")
                        .long("runs")
                        .value_parser(clap::value_parser!(usize)),
                ),
        ))
}

fn load_config(matches: &ArgMatches) -> Result<TrainConfig, fusion::FusionError> {
    let mut cfg = match matches.get_one::<PathBuf>("config") {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(&seed) = matches.try_get_one::<u64>("seed").ok().flatten() {
        cfg.seed = seed;
    }
    if let Some(&epochs) = matches.try_get_one::<usize>("epochs").ok().flatten() {
        cfg.epochs = epochs;
    }
    if let Some(&lr) = matches.try_get_one::<f64>("lr").ok().flatten() {
        cfg.learning_rate = lr;
    }
    if let Some(&lambda) = matches.try_get_one::<f64>("lambda").ok().flatten() {
        cfg.lambda = lambda;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: &Path, contents: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| format!("{}: {}", parent.display(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| format!("{}: {}", path.display(), e))
}

fn run_gen(matches: &ArgMatches) -> CommandOutcome {
    let cfg = match load_config(matches) {
        Ok(cfg) => cfg,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let count = matches.get_one::<usize>("scenes").copied().unwrap_or(1);
    let out = matches.get_one::<PathBuf>("out").expect("required");
    for i in 0..count {
        let scene_cfg = scene_generator_config(&cfg, i as u64);
        let bundle = match generate_scene(&scene_cfg) {
            Ok(b) => b,
            Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
        };
        let dir = out.join(format!("s{}", i));
        if let Err(e) = write_scene(&bundle, &dir) {
            return CommandOutcome::fail(format!("error: {}", e));
        }
    }
    CommandOutcome::ok(
        format!("wrote {} scene directories under {}", count, out.display()),
        Some(out.clone()),
    )
}

/// Projection CSV: one row per projected point.
pub fn projection_csv(bundle: &crate::scenedata::SceneBundle) -> Result<String, fusion::FusionError> {
    let transform = compose_chain(&bundle.chain)?;
    let projected = project_points(
        &bundle.cloud,
        &bundle.intrinsics,
        &transform,
        &bundle.plane(),
    );
    let mut out = String::from("index,u_f,v_f,depth,pixel_u,pixel_v\n");
    for pp in &projected {
        let (pu, pv) = rasterize(pp);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            pp.source_index,
            format_float(pp.u),
            format_float(pp.v),
            format_float(pp.depth),
            pu,
            pv
        );
    }
    Ok(out)
}

/// Derived-box CSV: one row per visible 3D box.
pub fn boxes_csv(bundle: &crate::scenedata::SceneBundle) -> String {
    let mut out = String::from("box_index,x1,y1,x2,y2,class\n");
    for (i, b) in bundle.boxes2d.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            format_float(b.x1),
            format_float(b.y1),
            format_float(b.x2),
            format_float(b.y2),
            b.class_id
        );
    }
    out
}

fn run_project(matches: &ArgMatches) -> CommandOutcome {
    let scene = matches.get_one::<PathBuf>("scene").expect("required");
    let out = matches.get_one::<PathBuf>("out").expect("required");
    let bundle = match read_scene(scene) {
        Ok(b) => b,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let csv = match projection_csv(&bundle) {
        Ok(csv) => csv,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let rows = csv.lines().count() - 1;
    if let Err(e) = write_report(out, &csv) {
        return CommandOutcome::fail(format!("error: {}", e));
    }
    CommandOutcome::ok(
        format!(
            "projected {} of {} points into {}",
            rows,
            bundle.cloud.len(),
            out.display()
        ),
        Some(out.clone()),
    )
}

fn run_boxes(matches: &ArgMatches) -> CommandOutcome {
    let scene = matches.get_one::<PathBuf>("scene").expect("required");
    let out = matches.get_one::<PathBuf>("out").expect("required");
    let bundle = match read_scene(scene) {
        Ok(b) => b,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let csv = boxes_csv(&bundle);
    if let Err(e) = write_report(out, &csv) {
        return CommandOutcome::fail(format!("error: {}", e));
    }
    CommandOutcome::ok(
        format!(
            "derived {} 2D boxes into {}",
            bundle.boxes2d.len(),
            out.display()
        ),
        Some(out.clone()),
    )
}

fn run_gradcheck(matches: &ArgMatches) -> CommandOutcome {
    let cfg = match load_config(matches) {
        Ok(cfg) => cfg,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let seeds: Vec<u64> = (0..GRAD_SEEDS).collect();
    let entries = match gradient_suite(&cfg, &seeds, GRAD_STEP) {
        Ok(entries) => entries,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let mut report = String::from("check,seed,max_rel_error\n");
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    for entry in &entries {
        let _ = writeln!(
            report,
            "{},{},{}",
            entry.name,
            entry.seed,
            format_float(entry.max_rel_error)
        );
        if entry.max_rel_error > worst {
            worst = entry.max_rel_error;
            worst_name = entry.name;
        }
    }
    let report_path = match matches.get_one::<PathBuf>("out") {
        Some(path) => {
            if let Err(e) = write_report(path, &report) {
                return CommandOutcome::fail(format!("error: {}", e));
            }
            Some(path.clone())
        }
        None => None,
    };
    let passed = worst < GRAD_TOLERANCE;
    let summary = format!(
        "{} gradient checks, worst {} at {} (tolerance {})",
        entries.len(),
        sig6(worst),
        worst_name,
        sig6(GRAD_TOLERANCE)
    );
    if passed {
        CommandOutcome::ok(summary, report_path)
    } else {
        CommandOutcome {
            exit_code: 1,
            summary,
            report_path,
        }
    }
}

fn run_train(matches: &ArgMatches) -> CommandOutcome {
    let cfg = match load_config(matches) {
        Ok(cfg) => cfg,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let scenes = matches.get_one::<usize>("scenes").copied().unwrap_or(8);
    let out = matches.get_one::<PathBuf>("out").expect("required");
    let outcome = match train(&cfg, scenes) {
        Ok(o) => o,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return CommandOutcome::fail(format!("error: {}: {}", out.display(), e));
    }
    let curve_path = out.join("loss_curve.csv");
    if let Err(e) = write_report(&curve_path, &loss_curve_csv(&outcome.curve)) {
        return CommandOutcome::fail(format!("error: {}", e));
    }
    let last = outcome.curve.last().expect("at least one step");
    let summary = format!(
        "trained {} steps: seg {} distill {} total {} | held-out in-box accuracy {} mIoU {}",
        outcome.curve.len(),
        sig6(last.seg_loss),
        sig6(last.distill_loss),
        sig6(last.total_loss),
        sig6(outcome.heldout_inbox_accuracy),
        sig6(outcome.heldout.miou)
    );
    CommandOutcome::ok(summary, Some(curve_path))
}

fn run_eval(matches: &ArgMatches) -> CommandOutcome {
    let cfg = match load_config(matches) {
        Ok(cfg) => cfg,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let scenes = matches.get_one::<usize>("scenes").copied().unwrap_or(8);
    let outcome = match train(&cfg, scenes) {
        Ok(o) => o,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let report = &outcome.heldout;
    let mut summary = format!(
        "held-out: seg {} distill {} total {} mIoU {}\n",
        sig6(report.seg_loss),
        sig6(report.distill_loss),
        sig6(report.total_loss),
        sig6(report.miou)
    );
    for (class, iou) in report.per_class_iou.iter().enumerate() {
        let _ = writeln!(summary, "class {} IoU {}", class, sig6(*iou));
    }
    let _ = write!(
        summary,
        "in-box accuracy {}",
        sig6(outcome.heldout_inbox_accuracy)
    );
    let report_path = match matches.get_one::<PathBuf>("out") {
        Some(path) => {
            let mut csv = String::from("class,iou\n");
            for (class, iou) in report.per_class_iou.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", class, format_float(*iou));
            }
            let _ = writeln!(csv, "miou,{}", format_float(report.miou));
            if let Err(e) = write_report(path, &csv) {
                return CommandOutcome::fail(format!("error: {}", e));
            }
            Some(path.clone())
        }
        None => None,
    };
    CommandOutcome::ok(summary, report_path)
}

fn run_compare(matches: &ArgMatches) -> CommandOutcome {
    let cfg = match load_config(matches) {
        Ok(cfg) => cfg,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let scenes = matches.get_one::<usize>("scenes").copied().unwrap_or(8);
    let runs = matches.get_one::<usize>("runs").copied().unwrap_or(10);
    let report = match compare(&cfg, scenes, runs) {
        Ok(r) => r,
        Err(e) => return CommandOutcome::fail(format!("error: {}", e)),
    };
    let mut summary = String::new();
    let mut csv = String::from("seed,accuracy_with_distill,accuracy_without\n");
    for run in &report.runs {
        let _ = writeln!(
            summary,
            "seed {}: with {} without {} delta {}",
            run.seed,
            sig6(run.accuracy_with_distill),
            sig6(run.accuracy_without),
            sig6(run.accuracy_with_distill - run.accuracy_without)
        );
        let _ = writeln!(
            csv,
            "{},{},{}",
            run.seed,
            format_float(run.accuracy_with_distill),
            format_float(run.accuracy_without)
        );
    }
    let _ = write!(
        summary,
        "distillation (lambda {}) matched or beat the baseline in {} of {} runs",
        sig6(report.lambda),
        report.wins(),
        report.runs.len()
    );
    let report_path = match matches.get_one::<PathBuf>("out") {
        Some(path) => {
            if let Err(e) = write_report(path, &csv) {
                return CommandOutcome::fail(format!("error: {}", e));
            }
            Some(path.clone())
        }
        None => None,
    };
    CommandOutcome::ok(summary, report_path)
}

/// Parse `argv` and dispatch to the selected subcommand.
pub fn run<I, T>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(matches) => matches,
        Err(e) => {
            let exit_code = if e.use_stderr() { 2 } else { 0 };
            return CommandOutcome {
                exit_code,
                summary: e.to_string(),
                report_path: None,
            };
        }
    };
    match matches.subcommand() {
        Some(("gen", m)) => run_gen(m),
        Some(("project", m)) => run_project(m),
        Some(("boxes", m)) => run_boxes(m),
        Some(("gradcheck", m)) => run_gradcheck(m),
        Some(("train", m)) => run_train(m),
        Some(("eval", m)) => run_eval(m),
        Some(("compare", m)) => run_compare(m),
        _ => unreachable!("subcommand required"),
    }
}
