//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on an operational failure, 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::denoiser::{read_checkpoint, train, write_checkpoint, TinyNet, TinyNetConfig, TrainConfig};
use crate::diffusion::{NoiseSchedule, SamplerConfig, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geometry::BackprojectConfig;
use crate::io::{
    read_config, read_ply, read_scene, read_trajectory, write_ply, write_scene, write_trajectory, RunConfig,
};
use crate::metrics::{
    chamfer, completeness, frame_metrics, sample_points, write_report, MetricRow, DEFAULT_COMPLETENESS_THRESHOLD,
    DEFAULT_SAMPLE_COUNT,
};
use crate::mesh::TriangleMesh;
use crate::pipeline::{conditioning_examples, subsample_indices, synthesize, SynthesisConfig, Trajectory};
use crate::raster::{rasterize, RenderChunkConfig};
use crate::synthetic::{gen_synthetic_scene, render_views, SyntheticSceneSpec, WallPattern};

/// Poses closer than this (max abs matrix entry) count as the same camera
/// when matching predicted frames to ground truth.
const POSE_MATCH_TOL: f64 = 1e-9;

/// Face edge limit suited to the default 16-pixel room, at focal length
/// [`TOY_FOCAL`].
const TOY_EDGE_LEN: f64 = 0.8;
const TOY_FOCAL: f64 = 12.0;

/// Seed of the surface samples used for chamfer and completeness.
const EVAL_SAMPLE_SEED: u64 = 0x5eed;

#[derive(Parser, Debug)]
#[command(name = "scenegen", version, about = "Incremental RGBD view inpainting on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic box room: frames, manifest and ground-truth mesh.
    Gen(GenArgs),
    /// Train the toy denoiser on the frames of a scene.
    Train(TrainArgs),
    /// Complete a scene along a trajectory and write the fused mesh.
    Synthesize(SynthArgs),
    /// Compare a prediction directory with ground truth and write a CSV row.
    Eval(EvalArgs),
    /// Synthesize and evaluate over view fractions and guidance factors.
    Sweep(SweepArgs),
    /// Run the oracle-denoiser self checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON file providing defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Strided sampler steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    guidance_beta: Option<f64>,
    #[arg(long)]
    depth_max: Option<f64>,
    #[arg(long)]
    voxel: Option<f64>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    max_edge_len: Option<f64>,
    #[arg(long)]
    min_depth: Option<f64>,
    /// Length of the diffusion chain.
    #[arg(long)]
    diffusion_steps: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            seed: self.seed,
            steps: self.steps,
            eta: self.eta,
            guidance_beta: self.guidance_beta,
            depth_max: self.depth_max,
            voxel: self.voxel,
            chunk: self.chunk,
            max_edge_len: self.max_edge_len,
            min_depth: self.min_depth,
            diffusion_steps: self.diffusion_steps,
            ..RunConfig::default()
        };
        Settings::from_run(file.overlay(&flags))
    }
}

/// Fully resolved run parameters.
struct Settings {
    run: RunConfig,
    synth: SynthesisConfig,
    sched: NoiseSchedule,
}

impl Settings {
    fn from_run(run: RunConfig) -> Result<Self> {
        let d = SynthesisConfig::default();
        let bp = BackprojectConfig::default();
        let synth = SynthesisConfig {
            sampler: SamplerConfig {
                steps: run.steps.unwrap_or(d.sampler.steps),
                eta: run.eta.unwrap_or(d.sampler.eta),
                guidance_beta: run.guidance_beta.unwrap_or(d.sampler.guidance_beta),
            },
            backproject: BackprojectConfig {
                max_edge_len: run.max_edge_len.unwrap_or(bp.max_edge_len),
                min_depth: run.min_depth.unwrap_or(bp.min_depth),
                voxel_size: run.voxel.unwrap_or(bp.voxel_size),
            },
            chunk: RenderChunkConfig { chunk_size: run.chunk.unwrap_or(d.chunk.chunk_size) },
            depth_max: run.depth_max.unwrap_or(d.depth_max),
            seed: run.seed.unwrap_or(0),
        };
        let t = run.diffusion_steps.unwrap_or(DEFAULT_STEPS);
        let sched = if t == DEFAULT_STEPS { NoiseSchedule::default() } else { NoiseSchedule::linear_rescaled(t)? };
        synth.validate(&sched)?;
        Ok(Self { run, synth, sched })
    }

    fn seed(&self) -> u64 {
        self.synth.seed
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON scene specification; defaults to the built-in room.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_pattern)]
    pattern: Option<WallPattern>,
    /// Number of ring cameras.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Extra cameras at random positions inside the room, appended after the ring.
    #[arg(long, default_value_t = 0)]
    random_views: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Scene manifest (or its directory) holding the training frames.
    #[arg(long)]
    scene: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    cond_dropout: Option<f64>,
    /// Conditioning renders per training frame.
    #[arg(long, default_value_t = 2)]
    variants: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for the mesh and generated frames.
    #[arg(long)]
    out: PathBuf,
    /// Keep this fraction of the scene frames as inputs (uniform stride).
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction directory (mesh.ply, optional scene.json of generated frames).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory (mesh.ply, optional scene.json).
    #[arg(long)]
    gt: PathBuf,
    /// CSV report to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "scene")]
    name: String,
    #[arg(long, default_value_t = 1.0)]
    view_fraction: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Ground-truth scene directory written by `gen`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV report to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.2, 0.5])]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 2.0, 5.0])]
    betas: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[command(flatten)]
    common: Common,
}

fn parse_pattern(s: &str) -> std::result::Result<WallPattern, String> {
    match s {
        "checker" => Ok(WallPattern::Checker),
        "stripes" => Ok(WallPattern::Stripes),
        "gradient" => Ok(WallPattern::Gradient),
        _ => Err(format!("unknown pattern {s:?} (checker, stripes, gradient)")),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Selftest(a) => cmd_selftest(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("scene.json")
    } else {
        p.to_path_buf()
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p)?;
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let s = a.common.resolve()?;
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_slice::<SyntheticSceneSpec>(&crate::io::read_bytes(p)?)?,
        None => SyntheticSceneSpec::default(),
    };
    if let Some(p) = a.pattern {
        spec.pattern = p;
    }
    if let Some(v) = a.views {
        spec.ring_count = v;
    }
    if let Some(r) = a.resolution {
        spec.resolution = r;
        spec.focal = 0.75 * r as f64;
    }
    let mut scene = gen_synthetic_scene(&spec, s.seed())?;
    if a.random_views > 0 {
        let poses = spec.random_poses(a.random_views, 0.5, s.seed().wrapping_add(1))?;
        scene.frames.extend(render_views(&scene.mesh, &scene.intrinsics, &poses));
    }
    create_dir(&a.out)?;
    write_scene(&a.out.join("scene.json"), &scene.intrinsics, &scene.frames)?;
    write_ply(&scene.mesh, &a.out.join("mesh.ply"))?;
    let ring = Trajectory { intrinsics: scene.intrinsics, poses: spec.ring_poses()? };
    write_trajectory(&a.out.join("trajectory.json"), &ring)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    // Neighbouring pixels of a coarse frame are far apart in 3D, so the
    // face filter has to be loosened in proportion.
    let run = RunConfig { max_edge_len: Some(TOY_EDGE_LEN * (TOY_FOCAL / spec.focal)), ..RunConfig::default() };
    write_json(&a.out.join("config.json"), &run)?;
    println!("wrote {} frames and a {}-face mesh to {}", scene.frames.len(), scene.mesh.faces.len(), a.out.display());
    Ok(0)
}

fn square_resolution(k: &CameraIntrinsics) -> Result<usize> {
    if k.width != k.height {
        return Err(Error::InvalidConfig(format!("the toy denoiser needs square frames, got {}x{}", k.width, k.height)));
    }
    Ok(k.width)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let s = a.common.resolve()?;
    let (m, frames) = read_scene(&manifest_path(&a.scene))?;
    let k = m.intrinsics;
    let run = RunConfig {
        train_steps: a.train_steps,
        batch_size: a.batch_size,
        lr_initial: a.lr_initial,
        lr_final: a.lr_final,
        cond_dropout: a.cond_dropout,
        ..RunConfig::default()
    };
    let run = s.run.overlay(&run);
    let d = TrainConfig::default();
    let tc = TrainConfig {
        lr_initial: run.lr_initial.unwrap_or(d.lr_initial),
        lr_final: run.lr_final.unwrap_or(d.lr_final),
        batch_size: run.batch_size.unwrap_or(d.batch_size),
        steps: run.train_steps.unwrap_or(d.steps),
        cond_dropout: run.cond_dropout.unwrap_or(d.cond_dropout),
        grad_clip: d.grad_clip,
        seed: s.seed(),
    };
    let data = conditioning_examples(
        &frames,
        &k,
        &s.synth.backproject,
        &s.synth.chunk,
        s.synth.depth_max,
        a.variants,
        s.seed(),
    )?;
    let cfg = TinyNetConfig { resolution: square_resolution(&k)?, ..TinyNetConfig::default() };
    let mut net = TinyNet::new(cfg, s.seed())?;
    let report = train(&mut net, &data, &tc, &s.sched)?;
    write_checkpoint(&net, &a.out)?;
    let head = report.mean_loss(0..report.losses.len().min(50));
    let tail = report.mean_loss(report.losses.len().saturating_sub(50)..report.losses.len());
    println!("trained {} steps on {} examples: loss {head:.4} -> {tail:.4}", tc.steps, data.len());
    Ok(0)
}

fn load_net(path: &Path, k: &CameraIntrinsics) -> Result<TinyNet> {
    let net = read_checkpoint(path)?;
    if net.config().resolution != square_resolution(k)? {
        return Err(Error::InvalidConfig(format!(
            "checkpoint resolution {} does not match {}x{} frames",
            net.config().resolution,
            k.width,
            k.height
        )));
    }
    Ok(net)
}

fn write_prediction(dir: &Path, k: &CameraIntrinsics, mesh: &TriangleMesh, frames: &[(RgbdFrame, CameraPose)]) -> Result<()> {
    create_dir(dir)?;
    write_ply(mesh, &dir.join("mesh.ply"))?;
    write_scene(&dir.join("scene.json"), k, frames)
}

fn cmd_synthesize(a: &SynthArgs) -> Result<i32> {
    let s = a.common.resolve()?;
    let (m, frames) = read_scene(&manifest_path(&a.scene))?;
    let k = m.intrinsics;
    let traj = read_trajectory(&a.trajectory)?;
    let net = load_net(&a.checkpoint, &k)?;
    let inputs: Vec<_> = subsample_indices(frames.len(), a.fraction).into_iter().map(|i| frames[i].clone()).collect();
    let out = synthesize(&inputs, &k, &traj, &net, &s.sched, &s.synth)?;
    let generated: Vec<_> = out.generated.into_iter().zip(traj.poses.iter().copied()).collect();
    write_prediction(&a.out, &k, &out.mesh, &generated)?;
    println!(
        "fused {} inputs and {} generated views into {} faces",
        inputs.len(),
        generated.len(),
        out.mesh.faces.len()
    );
    Ok(0)
}

fn poses_match(a: &CameraPose, b: &CameraPose) -> bool {
    let (ma, mb) = (a.to_matrix4(), b.to_matrix4());
    ma.iter().flatten().zip(mb.iter().flatten()).all(|(x, y)| (x - y).abs() <= POSE_MATCH_TOL)
}

/// Scores predicted frames and mesh against ground truth. Each predicted
/// frame is compared with the ground-truth frame at the same camera, or with
/// a render of the ground-truth mesh when no such frame exists.
fn evaluate(
    name: &str,
    fraction: f64,
    pred_mesh: &TriangleMesh,
    pred_frames: &[(RgbdFrame, CameraPose)],
    gt_mesh: &TriangleMesh,
    gt_frames: &[(RgbdFrame, CameraPose)],
    k: &CameraIntrinsics,
) -> Result<MetricRow> {
    let (mut psnr, mut ssim, mut dmse) = (0.0, 0.0, 0.0);
    for (f, pose) in pred_frames {
        let gt = match gt_frames.iter().find(|(_, p)| poses_match(p, pose)) {
            Some((g, _)) => g.clone(),
            None => rasterize(gt_mesh, k, pose),
        };
        let m = frame_metrics(f, &gt)?;
        psnr += m.psnr;
        ssim += m.ssim;
        dmse += m.depth_mse;
    }
    let n = pred_frames.len() as f64;
    let gt_pts = sample_points(gt_mesh, DEFAULT_SAMPLE_COUNT, EVAL_SAMPLE_SEED)?;
    let pred_pts = sample_points(pred_mesh, DEFAULT_SAMPLE_COUNT, EVAL_SAMPLE_SEED)?;
    Ok(MetricRow {
        scene: name.to_string(),
        view_fraction: fraction,
        psnr: psnr / n,
        ssim: ssim / n,
        depth_mse: dmse / n,
        chamfer: chamfer(&pred_pts, &gt_pts)?,
        completeness: completeness(&gt_pts, &pred_pts, DEFAULT_COMPLETENESS_THRESHOLD)?,
    })
}

/// Mesh and (possibly empty) frame list of a scene or prediction directory.
type LoadedDir = (TriangleMesh, Option<CameraIntrinsics>, Vec<(RgbdFrame, CameraPose)>);

fn load_dir(dir: &Path) -> Result<LoadedDir> {
    let mesh = read_ply(&dir.join("mesh.ply"))?;
    let manifest = dir.join("scene.json");
    if manifest.exists() {
        let (m, frames) = read_scene(&manifest)?;
        Ok((mesh, Some(m.intrinsics), frames))
    } else {
        Ok((mesh, None, Vec::new()))
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    a.common.resolve()?;
    let (pm, pk, pf) = load_dir(&a.pred)?;
    let (gm, gk, gf) = load_dir(&a.gt)?;
    let k = match (pk, gk) {
        (Some(p), Some(g)) if p != g => {
            return Err(Error::InvalidConfig("prediction and ground truth use different intrinsics".into()))
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => CameraIntrinsics::centered(1.0, 1, 1)?,
    };
    let row = evaluate(&a.name, a.view_fraction, &pm, &pf, &gm, &gf, &k)?;
    write_report(&a.out, std::slice::from_ref(&row))?;
    println!(
        "psnr {:.3} ssim {:.4} depth_mse {:.5} chamfer {:.5} completeness {:.4}",
        row.psnr, row.ssim, row.depth_mse, row.chamfer, row.completeness
    );
    Ok(0)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let s = a.common.resolve()?;
    let (gt_mesh, k, frames) = load_dir(&a.scene)?;
    let k = k.ok_or_else(|| Error::MissingFile(a.scene.join("scene.json")))?;
    let net = load_net(&a.checkpoint, &k)?;
    let name = a.scene.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
    let mut rows = Vec::with_capacity(a.fractions.len() * a.betas.len());
    for &fraction in &a.fractions {
        let keep = subsample_indices(frames.len(), fraction);
        let inputs: Vec<_> = keep.iter().map(|&i| frames[i].clone()).collect();
        let poses: Vec<CameraPose> =
            (0..frames.len()).filter(|i| !keep.contains(i)).map(|i| frames[i].1).collect();
        let traj = Trajectory { intrinsics: k, poses: poses.clone() };
        for &beta in &a.betas {
            let mut cfg = s.synth;
            cfg.sampler.guidance_beta = beta;
            let out = synthesize(&inputs, &k, &traj, &net, &s.sched, &cfg)?;
            let generated: Vec<_> = out.generated.into_iter().zip(poses.iter().copied()).collect();
            let label = format!("{name}/beta={beta}");
            let row = evaluate(&label, fraction, &out.mesh, &generated, &gt_mesh, &frames, &k)?;
            println!("{label} fraction {fraction}: chamfer {:.5} completeness {:.4}", row.chamfer, row.completeness);
            rows.push(row);
        }
    }
    write_report(&a.out, &rows)?;
    Ok(0)
}

fn cmd_selftest(a: &SelftestArgs) -> Result<i32> {
    let s = a.common.resolve()?;
    let results = crate::selftest::run_all(s.seed())?;
    let mut ok = true;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(if ok { 0 } else { 1 })
}
