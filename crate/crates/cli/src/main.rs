//! Command-line entry point tying dataset generation, training, adaptation,
//! and evaluation into reproducible seeded runs.
//!
//! Summary output is line-oriented `key=value` so run metrics can be scraped
//! by scripts. Every subcommand with the same arguments and seed produces
//! byte-identical primary outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specklecloud::adapt::{self, SelectionMethod, SelfTrainConfig, UnlabeledTargets};
use specklecloud::classify::{self, TrainConfig};
use specklecloud::geometry;
use specklecloud::num::mix_seed;
use specklecloud::pointcloud::{
    augment, farthest_point_sample, fuse_views, normalize_unit_ball, write_cloud_ply, AugmentConfig,
};
use specklecloud::render::{make_speckle_pattern, render_clean_depth, render_stereo};
use specklecloud::stereo::{backproject, block_match, disparity_to_depth, downsample_depth};
use specklecloud::synth::{self, GenerationConfig, GenerationMode};
use specklecloud::{camera, Classifier, Cloud};

/// Environment variable holding the default output root when --out is
/// omitted; each run then writes to $SPECKLECLOUD_OUT/<subcommand>.
const OUT_ROOT_ENV: &str = "SPECKLECLOUD_OUT";

#[derive(Parser)]
#[command(
    name = "specklecloud",
    version,
    about = "Noise-realistic point-cloud synthesis via a simulated active-stereo sensor, plus self-training domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled point-cloud dataset from a directory of meshes.
    Generate(GenerateArgs),
    /// Train a classifier on a generated dataset.
    Train(TrainArgs),
    /// Self-training domain adaptation from a source to a target dataset.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Render one instance's intermediate artifacts for inspection.
    RenderDebug(RenderDebugArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory of class subdirectories containing .obj/.ply meshes.
    #[arg(long)]
    meshes: PathBuf,
    /// Output directory (default: $SPECKLECLOUD_OUT/generate).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// TOML file with generation settings; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for instance generation (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// speckle | clean | surface
    #[arg(long)]
    mode: Option<GenerationMode>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    fps_points: Option<usize>,
    /// Square render resolution in pixels.
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    max_disparity: Option<usize>,
    #[arg(long)]
    dot_density: Option<f64>,
    #[arg(long)]
    downsample: Option<u32>,
    #[arg(long)]
    region_dropout: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Augment batches with point-cloud mixup pairs.
    #[arg(long, default_value_t = false)]
    mixup: bool,
    /// Points fed to the feature extractor (clouds are reduced by FPS).
    #[arg(long, default_value_t = 1024)]
    input_points: usize,
    /// Extra augmented copies of each training cloud (z-rotation + jitter).
    #[arg(long, default_value_t = 0)]
    augment: usize,
    /// Optional labeled manifest for held-out evaluation after training.
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    source_manifest: PathBuf,
    /// Target dataset; labels are stripped before adaptation and used only
    /// for reporting.
    #[arg(long)]
    target_manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// qbst | spst | cbst
    #[arg(long, default_value = "qbst")]
    method: SelectionMethod,
    #[arg(long, default_value_t = 0.8)]
    theta0: f64,
    #[arg(long, default_value_t = 5e-3)]
    eps: f64,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value_t = 10)]
    epochs_per_round: usize,
    #[arg(long, default_value_t = 1e-3)]
    inner_lr: f64,
    #[arg(long, default_value_t = 32)]
    inner_batch: usize,
    #[arg(long, default_value_t = 0.5)]
    cbst_proportion: f64,
    #[arg(long, default_value_t = 200)]
    warmup_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    warmup_lr: f64,
    /// Reuse an existing checkpoint as the pseudo-label generator instead of
    /// warming up on the source.
    #[arg(long)]
    warmup_checkpoint: Option<PathBuf>,
    /// Mixup during warm-up training.
    #[arg(long, default_value_t = false)]
    mixup: bool,
    #[arg(long, default_value_t = 1024)]
    input_points: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Write the full evaluation (accuracy, per-class, confusion) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    input_points: usize,
}

#[derive(Args)]
struct RenderDebugArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// speckle | clean (surface has no render artifacts)
    #[arg(long, default_value = "speckle")]
    mode: GenerationMode,
    #[arg(long, default_value_t = 512)]
    resolution: u32,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 1024)]
    fps_points: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Eval(args) => cmd_eval(args),
        Command::RenderDebug(args) => cmd_render_debug(args),
    }
}

fn resolve_out(out: Option<PathBuf>, subcommand: &str) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d,
        None => match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(subcommand),
            None => bail!("--out not given and {OUT_ROOT_ENV} is not set"),
        },
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    if !args.meshes.is_dir() {
        bail!("mesh directory {} does not exist", args.meshes.display());
    }
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<GenerationConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => GenerationConfig::default(),
    };
    // flags override config-file values
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(v) = args.views {
        cfg.n_views = v;
    }
    if let Some(r) = args.reps {
        cfg.repetitions = r;
    }
    if let Some(n) = args.fps_points {
        cfg.fps_points = n;
    }
    if let Some(res) = args.resolution {
        cfg.render_width = res;
        cfg.render_height = res;
    }
    if let Some(f) = args.focal_px {
        cfg.focal_length_px = f;
    }
    if let Some(b) = args.baseline {
        cfg.baseline_m = b;
    }
    if let Some(d) = args.max_disparity {
        cfg.max_disparity = d;
    }
    if let Some(d) = args.dot_density {
        cfg.pattern_dot_density = d;
    }
    if let Some(d) = args.downsample {
        cfg.depth_downsample = d;
    }
    if let Some(f) = args.region_dropout {
        cfg.region_dropout = Some(f);
    }
    cfg.validate().map_err(anyhow::Error::from)?;

    let out = resolve_out(args.out, "generate")?;
    let echoed = toml::to_string_pretty(&cfg).context("serializing effective config")?;
    std::fs::write(out.join("effective_config.toml"), echoed)?;

    let start = Instant::now();
    let manifest = synth::generate_dataset(&args.meshes, &out, &cfg, args.seed, args.workers)?;
    println!(
        "instances={} classes={} mode={} seed={} workers={} out={} elapsed_s={:.2}",
        manifest.entries.len(),
        manifest.class_names.len(),
        cfg.mode,
        args.seed,
        args.workers,
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

/// FPS-reduce to the training input size and normalize to the unit ball.
fn prepare_clouds(clouds: Vec<Cloud>, input_points: usize, seed: u64) -> Result<Vec<Cloud>> {
    clouds
        .into_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let cloud = if cloud.len() > input_points {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
                farthest_point_sample(&cloud, input_points, &mut rng)?
            } else {
                cloud
            };
            normalize_unit_ball(&cloud)
        })
        .collect::<specklecloud::Result<_>>()
        .map_err(Into::into)
}

fn load_prepared(
    manifest: &Path,
    input_points: usize,
    seed: u64,
) -> Result<(Vec<Cloud>, Vec<String>)> {
    let (clouds, class_names) = synth::load_dataset::<f64>(manifest)
        .with_context(|| format!("loading dataset {}", manifest.display()))?;
    let clouds = prepare_clouds(clouds, input_points, seed)?;
    Ok((clouds, class_names))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let out = resolve_out(args.out, "train")?;
    let (mut clouds, class_names) =
        load_prepared(&args.manifest, args.input_points, mix_seed(args.seed, 1))?;

    if args.augment > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(args.seed, 2));
        let aug_cfg = AugmentConfig::default();
        let originals = clouds.clone();
        for _ in 0..args.augment {
            for c in &originals {
                clouds.push(augment(c, &aug_cfg, &mut rng));
            }
        }
    }

    let cfg = TrainConfig {
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
    };
    std::fs::write(
        out.join("run_config.toml"),
        format!(
            "command = \"train\"\nmanifest = {:?}\nseed = {}\nepochs = {}\nlearning_rate = {}\nweight_decay = {}\nbatch_size = {}\nmixup = {}\ninput_points = {}\naugment = {}\n",
            args.manifest.display().to_string(),
            args.seed,
            args.epochs,
            args.lr,
            args.weight_decay,
            args.batch_size,
            args.mixup,
            args.input_points,
            args.augment
        ),
    )?;

    let start = Instant::now();
    let model = classify::train(&clouds, class_names.len(), &cfg, args.mixup)?;
    let ckpt = out.join("model.ckpt");
    classify::save_checkpoint(&model, &ckpt)?;

    let mut log = String::from("epoch,loss\n");
    for (i, l) in model.meta.loss_curve.iter().enumerate() {
        log.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(out.join("training_log.csv"), log)?;

    println!(
        "train_samples={} classes={} mixup={} train_accuracy={:.4} checkpoint={} elapsed_s={:.2}",
        clouds.len(),
        class_names.len(),
        args.mixup,
        model.meta.final_train_accuracy,
        ckpt.display(),
        start.elapsed().as_secs_f64()
    );

    if let Some(eval_manifest) = args.eval_manifest {
        let (eval_clouds, eval_names) =
            load_prepared(&eval_manifest, args.input_points, mix_seed(args.seed, 3))?;
        if eval_names != class_names {
            bail!("evaluation manifest classes differ from training classes");
        }
        let eval = classify::evaluate(&model, &eval_clouds)?;
        println!(
            "eval_accuracy={:.4} eval_samples={}",
            eval.accuracy, eval.samples
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_adapt(args: AdaptArgs) -> Result<ExitCode> {
    let out = resolve_out(args.out, "adapt")?;
    let (source, source_names) = load_prepared(
        &args.source_manifest,
        args.input_points,
        mix_seed(args.seed, 1),
    )?;
    let (target, target_names) = load_prepared(
        &args.target_manifest,
        args.input_points,
        mix_seed(args.seed, 2),
    )?;
    if source_names != target_names {
        bail!("source and target manifests disagree on class names");
    }
    let num_classes = source_names.len();
    let targets = UnlabeledTargets::new(target);

    let cfg = SelfTrainConfig {
        theta0: args.theta0,
        epsilon: args.eps,
        rounds: args.rounds,
        epochs_per_round: args.epochs_per_round,
        inner_learning_rate: args.inner_lr,
        inner_batch_size: args.inner_batch,
        method: args.method,
        cbst_proportion: args.cbst_proportion,
        seed: args.seed,
    };
    std::fs::write(
        out.join("run_config.toml"),
        format!(
            "command = \"adapt\"\nmethod = \"{}\"\ntheta0 = {}\nepsilon = {}\nrounds = {}\nepochs_per_round = {}\ninner_lr = {}\ninner_batch = {}\ncbst_proportion = {}\nseed = {}\nwarmup_epochs = {}\nmixup = {}\ninput_points = {}\n",
            args.method,
            args.theta0,
            args.eps,
            args.rounds,
            args.epochs_per_round,
            args.inner_lr,
            args.inner_batch,
            args.cbst_proportion,
            args.seed,
            args.warmup_epochs,
            args.mixup,
            args.input_points
        ),
    )?;

    let start = Instant::now();
    let (model, report) = match &args.warmup_checkpoint {
        Some(path) => {
            let generator: Classifier = classify::load_checkpoint(path)
                .with_context(|| format!("loading warm-up checkpoint {}", path.display()))?;
            adapt::self_train_from_generator(generator, &targets, num_classes, &cfg)?
        }
        None => {
            let warmup_cfg = TrainConfig {
                learning_rate: args.warmup_lr,
                epochs: args.warmup_epochs,
                seed: mix_seed(args.seed, 0xADA9),
                ..TrainConfig::default()
            };
            adapt::self_train(
                &source,
                &targets,
                num_classes,
                &cfg,
                &warmup_cfg,
                args.mixup,
            )?
        }
    };

    adapt::write_report_jsonl(&report, out.join("rounds.jsonl"))?;
    let ckpt = out.join("model.ckpt");
    classify::save_checkpoint(&model, &ckpt)?;

    // Selection mask the final generator would produce at the next
    // threshold, exported for inspection.
    let next_theta = cfg.theta_at(report.rounds.len());
    if next_theta < 1.0 {
        let pls = adapt::generate_pseudo_labels(&model, targets.clouds(), next_theta)?;
        let pls = match args.method {
            SelectionMethod::Qbst => adapt::quasi_balanced_select(pls),
            SelectionMethod::Spst => adapt::spst_select(pls),
            SelectionMethod::Cbst => adapt::cbst_select(pls, args.cbst_proportion)?,
        };
        adapt::write_selection_csv(&pls, out.join("selection_final.csv"))?;
    }

    let warm = report
        .warmup_target_accuracy
        .map_or("n/a".to_string(), |a| format!("{a:.4}"));
    let fin = report
        .rounds
        .iter()
        .rev()
        .find_map(|r| r.target_accuracy)
        .map_or("n/a".to_string(), |a| format!("{a:.4}"));
    println!(
        "method={} rounds_completed={} warmup_target_accuracy={} final_target_accuracy={} checkpoint={} elapsed_s={:.2}",
        args.method,
        report.rounds.len(),
        warm,
        fin,
        ckpt.display(),
        start.elapsed().as_secs_f64()
    );
    if let Some(round) = report.aborted_at_round {
        eprintln!("error: selection empty at round {round}; report written");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let model: Classifier = classify::load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let (clouds, class_names) = load_prepared(&args.manifest, args.input_points, args.seed)?;
    if class_names.len() != model.num_classes {
        bail!(
            "checkpoint has {} classes but manifest has {}",
            model.num_classes,
            class_names.len()
        );
    }
    let eval = classify::evaluate(&model, &clouds)?;
    println!("samples={} accuracy={:.4}", eval.samples, eval.accuracy);
    for (name, acc) in class_names.iter().zip(&eval.per_class_accuracy) {
        println!("class_accuracy[{name}]={acc:.4}");
    }
    for (t, row) in eval.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("confusion[{}]={}", class_names[t], cells.join(","));
    }
    if let Some(json) = args.json {
        std::fs::write(&json, serde_json::to_string_pretty(&eval)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_render_debug(args: RenderDebugArgs) -> Result<ExitCode> {
    if args.mode == GenerationMode::Surface {
        bail!("render-debug needs a rendering mode (speckle or clean)");
    }
    let out = resolve_out(args.out, "render-debug")?;
    let mesh = geometry::load_mesh::<f64>(&args.mesh)?.normalize_to_unit_cube()?;
    let cfg = GenerationConfig {
        mode: args.mode,
        n_views: args.views,
        render_width: args.resolution,
        render_height: args.resolution,
        focal_length_px: 1000.0 * args.resolution as f64 / 1080.0,
        depth_downsample: if args.resolution.is_multiple_of(4) {
            4
        } else {
            1
        },
        fps_points: args.fps_points,
        max_disparity: 64.min(args.resolution as usize / 4),
        ..GenerationConfig::default()
    };
    cfg.validate().map_err(anyhow::Error::from)?;

    // Reproduce the generate_instance pipeline while keeping the per-view
    // artifacts of the first view.
    let seed = args.seed;
    let mesh = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        specklecloud::geometry::random_z_rotation(&mesh, &mut rng)
    };
    let poses: Vec<camera::RigidPose<f64>> = synth::instance_poses(&cfg, seed)?;
    let intr = camera::CameraIntrinsics::centered(
        cfg.focal_length_px,
        cfg.render_width,
        cfg.render_height,
    )?;

    let mut scene = specklecloud::render::SceneConfig::new(mesh);
    scene.light_position = specklecloud::nalgebra::Point3::new(0.0, 0.0, cfg.light_height_m);
    scene.light_intensity = cfg.light_intensity;
    scene.projector_intensity = cfg.projector_intensity;
    scene.seed = mix_seed(seed, 5);

    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut views = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        match args.mode {
            GenerationMode::Speckle => {
                let rig = camera::StereoRig::new(intr, *pose, cfg.baseline_m, intr)?;
                let pattern = make_speckle_pattern::<f64>(
                    mix_seed(seed, 2),
                    cfg.render_width,
                    cfg.render_height,
                    cfg.pattern_dot_density,
                )?;
                let (left, right) = render_stereo(&scene, &rig, &pattern);
                let disp = block_match(&left, &right, &to_match_params(&cfg))?;
                let depth = disparity_to_depth(&disp, intr.focal_px, rig.baseline_m)?;
                let low = downsample_depth(&depth, cfg.depth_downsample)?;
                if i == 0 {
                    let l = out.join("left.png");
                    let r = out.join("right.png");
                    let d = out.join("disparity.png");
                    let z = out.join("depth.pfm");
                    left.save_png(&l)?;
                    right.save_png(&r)?;
                    disp.save_false_color_png(&d)?;
                    low.save_pfm(&z)?;
                    artifacts.extend([l, r, d, z]);
                }
                if let Ok(cloud) = backproject(&low, &intr.downsampled(cfg.depth_downsample)?, pose)
                {
                    views.push(cloud);
                }
            }
            GenerationMode::Clean => {
                let depth = render_clean_depth(&scene, &intr, pose);
                if i == 0 {
                    let z = out.join("depth.pfm");
                    depth.save_pfm(&z)?;
                    artifacts.push(z);
                }
                if let Ok(cloud) = backproject(&depth, &intr, pose) {
                    views.push(cloud);
                }
            }
            GenerationMode::Surface => unreachable!(),
        }
    }

    let fused = fuse_views(&views)?;
    let n = cfg.fps_points.min(fused.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
    let sampled = farthest_point_sample(&fused, n, &mut rng)?;
    let ply = out.join("fused.ply");
    write_cloud_ply(&sampled, &ply)?;
    artifacts.push(ply);

    println!(
        "mode={} views={} fused_points={} sampled_points={} artifacts={}",
        args.mode,
        poses.len(),
        fused.len(),
        sampled.len(),
        artifacts.len()
    );
    for a in &artifacts {
        println!("artifact={}", a.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn to_match_params(cfg: &GenerationConfig) -> specklecloud::stereo::MatchParams<f64> {
    specklecloud::stereo::MatchParams {
        window_radius: cfg.window_radius,
        max_disparity: cfg.max_disparity,
        uniqueness_ratio: cfg.uniqueness_ratio,
        lr_consistency_tol: cfg.lr_consistency_tol,
        texture_threshold: cfg.texture_threshold,
    }
}
