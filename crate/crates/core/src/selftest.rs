//! Quick end-to-end checks driven by the closed-form denoisers. Run by the
//! `selftest` subcommand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{RigidTransform, Vec3};
use crate::denoiser::{
    grad_check, Denoiser, GaussianDenoiser, NetObjective, PointMassDenoiser, TinyNet, TinyNetConfig,
};
use crate::diffusion::{cfg_combine, ddim_step, ddpm_step, inpaint_sample, NoiseSchedule, SamplerConfig};
use crate::error::Result;
use crate::geometry::{backproject_frame, transform_mesh, BackprojectConfig};
use crate::metrics::{chamfer, completeness, psnr, ssim, PointSample, RgbImage};
use crate::pipeline::{normalize_frame, synthesize, PerViewDenoisers, SynthesisConfig, Trajectory};
use crate::raster::rasterize;
use crate::synthetic::{gen_synthetic_scene, render_views, SyntheticSceneSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        point_mass_recovery(seed)?,
        ddpm_matches_ddim(seed)?,
        gaussian_statistics(seed)?,
        visible_pixels_preserved(seed)?,
        geometry_roundtrip(seed)?,
        rigid_motion_equivariance(seed)?,
        gradients(seed)?,
        metric_units()?,
    ])
}

fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
    let data = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(h, w, c, data).expect("sized to shape")
}

pub fn point_mass_recovery(seed: u64) -> Result<CheckResult> {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rand_image(&mut rng, 16, 16, 4);
    let oracle = PointMassDenoiser::new(target.clone(), sched.clone());
    let zero = target.zeros_like();
    let mask = vec![false; target.pixel_count()];
    let cfg = SamplerConfig { steps: 50, eta: 0.0, guidance_beta: 1.0 };
    let start = Instant::now();
    let out = inpaint_sample(&oracle, &zero, &mask, &sched, &cfg, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let err = out.max_abs_diff(&target);
    Ok(check("point-mass recovery", err < 1e-4 && secs < 5.0, format!("max error {err:.3e} in {secs:.2} s")))
}

pub fn ddpm_matches_ddim(seed: u64) -> Result<CheckResult> {
    let sched = NoiseSchedule::linear_rescaled(50)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rand_image(&mut rng, 4, 4, 4);
    let mut x = Tensor::randn(4, 4, 4, &mut rng);
    let mut worst = 0.0f64;
    for t in (1..=50).rev() {
        let eps = crate::denoiser::analytic_point_mass(&x, t, &target, &sched)?;
        let z = Tensor::randn(4, 4, 4, &mut rng);
        let a = ddpm_step(&x, t, &eps, &z, &sched)?;
        let b = ddim_step(&x, t, t - 1, &eps, &z, 1.0, &sched)?;
        worst = worst.max(a.max_abs_diff(&b));
        x = a;
    }
    Ok(check("ancestral and eta=1 updates agree", worst < 1e-10, format!("max difference {worst:.3e}")))
}

/// Per-channel sample mean and population variance of a 4-channel image.
fn channel_stats(x: &Tensor) -> Vec<(f64, f64)> {
    let c = x.channels;
    let n = x.pixel_count() as f64;
    (0..c)
        .map(|ch| {
            let vals = x.data.iter().skip(ch).step_by(c);
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

/// Each pixel of one 100×100 image is an independent draw, giving 10⁴
/// samples per channel. Uses the full chain: strided sampling shrinks the
/// output variance of Gaussian data noticeably.
pub fn gaussian_statistics(seed: u64) -> Result<CheckResult> {
    let (mu, s) = (0.3, 0.2);
    let sched = NoiseSchedule::default();
    let oracle = GaussianDenoiser::new(mu, s, sched.clone())?;
    let zero = Tensor::zeros(100, 100, 4);
    let mask = vec![false; zero.pixel_count()];
    let cfg = SamplerConfig { steps: sched.steps(), eta: 0.0, guidance_beta: 1.0 };
    let start = Instant::now();
    let out = inpaint_sample(&oracle, &zero, &mask, &sched, &cfg, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let stats = channel_stats(&out);
    let ok = secs < 60.0
        && stats.iter().all(|&(m, v)| (m - mu).abs() <= 0.008 && (v - s * s).abs() <= 0.05 * s * s);
    let detail = stats.iter().map(|(m, v)| format!("({m:.4}, {v:.5})")).collect::<Vec<_>>().join(" ");
    Ok(check("Gaussian sample statistics", ok, format!("mean/var per channel {detail} in {secs:.1} s")))
}

pub fn visible_pixels_preserved(seed: u64) -> Result<CheckResult> {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rand_image(&mut rng, 8, 8, 4);
    let mask: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
    let mut known = target.clone();
    for (p, &m) in mask.iter().enumerate() {
        if !m {
            known.data[p * 4..p * 4 + 4].fill(0.0);
        }
    }
    let oracle = GaussianDenoiser::new(0.0, 0.5, sched.clone())?;
    let cfg = SamplerConfig { steps: 20, eta: 1.0, guidance_beta: 2.0 };
    let out = inpaint_sample(&oracle, &known, &mask, &sched, &cfg, seed)?;
    let kept = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .all(|(p, _)| (0..4).all(|c| out.data[p * 4 + c].to_bits() == known.data[p * 4 + c].to_bits()));
    let (u, c) = (rand_image(&mut rng, 4, 4, 4), rand_image(&mut rng, 4, 4, 4));
    let exact = cfg_combine(&u, &c, 0.0)?.data == u.data && cfg_combine(&u, &c, 1.0)?.data == c.data;
    Ok(check(
        "inpainting keeps visible pixels",
        kept && exact,
        format!("visible bitwise equal: {kept}, guidance endpoints exact: {exact}"),
    ))
}

pub fn geometry_roundtrip(seed: u64) -> Result<CheckResult> {
    let spec = SyntheticSceneSpec::default();
    let scene = gen_synthetic_scene(&spec, seed)?;
    let k = scene.intrinsics;
    let bp = BackprojectConfig { max_edge_len: 100.0, min_depth: 0.01, voxel_size: 0.02 };
    let (mut rgb_ok, mut worst) = (true, 0.0f64);
    for (f, pose) in render_views(&scene.mesh, &k, &spec.random_poses(20, 0.5, seed)?) {
        let back = rasterize(&backproject_frame(&f, &k, &pose, &bp)?, &k, &pose);
        for (a, b) in f.pixels().iter().zip(back.pixels()) {
            if a.is_valid() {
                rgb_ok &= a.rgb() == b.rgb();
                worst = worst.max((a.d - b.d).abs() as f64);
            }
        }
    }
    Ok(check(
        "render of a back-projected frame",
        rgb_ok && worst < 1e-3,
        format!("colors exact: {rgb_ok}, max depth error {worst:.2e} m"),
    ))
}

pub fn rigid_motion_equivariance(seed: u64) -> Result<CheckResult> {
    let spec = SyntheticSceneSpec::default();
    let scene = gen_synthetic_scene(&spec, seed)?;
    let k = scene.intrinsics;
    let sched = NoiseSchedule::default();
    let cfg = SynthesisConfig {
        backproject: BackprojectConfig { max_edge_len: 0.8, ..BackprojectConfig::default() },
        seed,
        ..SynthesisConfig::default()
    };
    let inputs = vec![scene.frames[0].clone(), scene.frames[5].clone()];
    let poses: Vec<_> = [2, 7, 3].iter().map(|&i| scene.frames[i].1).collect();
    let oracles = |poses: &[crate::camera::CameraPose]| -> Result<PerViewDenoisers> {
        let mut v: Vec<Box<dyn Denoiser>> = Vec::new();
        for p in poses {
            let (target, _) = normalize_frame(&rasterize(&scene.mesh, &k, p), cfg.depth_max)?;
            v.push(Box::new(PointMassDenoiser::new(target, sched.clone())));
        }
        Ok(PerViewDenoisers(v))
    };
    let base = synthesize(&inputs, &k, &Trajectory { intrinsics: k, poses: poses.clone() }, &oracles(&poses)?, &sched, &cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0));
    let shift = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let g = RigidTransform::from_axis_angle(axis, rng.gen_range(0.1..3.0), shift)?;
    let moved_inputs: Vec<_> = inputs.iter().map(|(f, p)| (f.clone(), g.compose(p))).collect();
    let moved_poses: Vec<_> = poses.iter().map(|p| g.compose(p)).collect();
    let moved = synthesize(
        &moved_inputs,
        &k,
        &Trajectory { intrinsics: k, poses: moved_poses.clone() },
        &oracles(&poses)?,
        &sched,
        &cfg,
    )?;
    let expect = transform_mesh(&base.mesh, &g);
    let same_topology = expect.faces == moved.mesh.faces && expect.vertices.len() == moved.mesh.vertices.len();
    let worst = expect.vertices.iter().zip(&moved.mesh.vertices).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(check(
        "rigid motion of inputs and cameras",
        same_topology && worst < 1e-6,
        format!("{} vertices, same faces: {same_topology}, max offset {worst:.2e} m", expect.vertices.len()),
    ))
}

pub fn gradients(seed: u64) -> Result<CheckResult> {
    let cfg = TinyNetConfig { resolution: 8, ..TinyNetConfig::default() };
    let net = TinyNet::random(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let examples = (0..2)
        .map(|i| {
            (
                Tensor::randn(8, 8, 4, &mut rng),
                Tensor::randn(8, 8, 4, &mut rng),
                100 + 300 * i,
                Tensor::randn(8, 8, 4, &mut rng),
            )
        })
        .collect();
    let mut obj = NetObjective { net, examples };
    let r = grad_check(&mut obj, 200, seed)?;
    Ok(check(
        "toy denoiser gradients",
        r.max_rel_error < 1e-4,
        format!("max relative error {:.2e} over {} parameters", r.max_rel_error, r.checked),
    ))
}

pub fn metric_units() -> Result<CheckResult> {
    let a = PointSample { points: vec![Vec3::zeros()] };
    let b = PointSample { points: vec![Vec3::new(1.0, 0.0, 0.0)] };
    let cd = chamfer(&a, &b)?;
    let comp = completeness(&a, &b, f64::INFINITY)?;
    let gt = RgbImage::new(8, 8, vec![[0.5; 3]; 64])?;
    let off = RgbImage::new(8, 8, vec![[0.6; 3]; 64])?;
    let p = psnr(&off, &gt, &[true; 64])?;
    let s = ssim(&gt, &gt)?;
    let ok = cd == 2.0 && comp == 1.0 && (p - 20.0).abs() < 1e-9 && s == 1.0;
    Ok(check("metric units", ok, format!("chamfer {cd}, completeness {comp}, psnr {p}, ssim {s}")))
}
