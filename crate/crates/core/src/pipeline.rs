//! Incremental scene synthesis: render the current mesh at the next camera,
//! complete the unseen pixels with the diffusion sampler, lift the result
//! back to 3D and fuse it in.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::denoiser::{Denoiser, TrainExample};
use crate::diffusion::{inpaint_sample, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::frame::{Rgbd, RgbdFrame};
use crate::geometry::{append_mesh, backproject_frame, voxel_pool_in_frame, BackprojectConfig};
use crate::mesh::TriangleMesh;
use crate::raster::{rasterize, select_chunk, RenderChunkConfig};
use crate::tensor::Tensor;

/// Smallest depth a generated pixel may take, so it always counts as valid.
pub const MIN_GENERATED_DEPTH: f64 = 1e-4;

pub const DEFAULT_DEPTH_MAX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sampler: SamplerConfig,
    pub backproject: BackprojectConfig,
    pub chunk: RenderChunkConfig,
    /// Depth mapped to +1 in diffusion space (meters).
    pub depth_max: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            backproject: BackprojectConfig::default(),
            chunk: RenderChunkConfig::default(),
            depth_max: DEFAULT_DEPTH_MAX,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        self.sampler.validate(sched)?;
        self.backproject.validate()?;
        self.chunk.validate()?;
        check_depth_max(self.depth_max)
    }

    /// Sampler seed for trajectory view `j`.
    pub fn view_seed(&self, j: usize) -> u64 {
        self.seed ^ (j as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

fn check_depth_max(depth_max: f64) -> Result<()> {
    if !(depth_max > 0.0) || !depth_max.is_finite() {
        return Err(Error::InvalidConfig(format!("depth_max must be positive, got {depth_max}")));
    }
    Ok(())
}

/// Novel cameras `T_1..T_M` sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
}

/// Maps a metric frame to the `[−1, 1]` diffusion space. Invalid pixels become
/// zero in all channels and are marked false in the returned mask.
pub fn normalize_frame(frame: &RgbdFrame, depth_max: f64) -> Result<(Tensor, Vec<bool>)> {
    check_depth_max(depth_max)?;
    let mut t = Tensor::zeros(frame.height(), frame.width(), 4);
    let mut mask = Vec::with_capacity(frame.pixels().len());
    for (i, p) in frame.pixels().iter().enumerate() {
        let valid = p.is_valid();
        mask.push(valid);
        if valid {
            let d = f64::from(p.d).clamp(0.0, depth_max);
            t.data[i * 4..i * 4 + 4].copy_from_slice(&[
                2.0 * f64::from(p.r) - 1.0,
                2.0 * f64::from(p.g) - 1.0,
                2.0 * f64::from(p.b) - 1.0,
                2.0 * d / depth_max - 1.0,
            ]);
        }
    }
    Ok((t, mask))
}

/// Inverse of [`normalize_frame`]. Colors are clamped to `[0, 1]` and depth
/// to `[MIN_GENERATED_DEPTH, depth_max]`, so every output pixel is valid.
pub fn denormalize_frame(x: &Tensor, depth_max: f64) -> Result<RgbdFrame> {
    check_depth_max(depth_max)?;
    if x.channels != 4 {
        return Err(Error::ShapeMismatch(format!("expected 4 channels, got {}", x.channels)));
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteInput("normalized frame contains NaN or infinity".into()));
    }
    let pixels = x
        .data
        .chunks_exact(4)
        .map(|c| {
            let col = |v: f64| ((v + 1.0) / 2.0).clamp(0.0, 1.0) as f32;
            let d = ((c[3] + 1.0) / 2.0 * depth_max).clamp(MIN_GENERATED_DEPTH, depth_max);
            Rgbd::new(col(c[0]), col(c[1]), col(c[2]), d as f32)
        })
        .collect();
    RgbdFrame::from_pixels(x.width, x.height, pixels)
}

/// Supplies the noise estimator used for each trajectory view.
pub trait ViewDenoiser {
    fn for_view(&self, view: usize) -> &dyn Denoiser;
}

impl<D: Denoiser> ViewDenoiser for D {
    fn for_view(&self, _view: usize) -> &dyn Denoiser {
        self
    }
}

/// A separate estimator per trajectory view, e.g. oracles that know the
/// ground truth at each camera.
pub struct PerViewDenoisers(pub Vec<Box<dyn Denoiser>>);

impl ViewDenoiser for PerViewDenoisers {
    fn for_view(&self, view: usize) -> &dyn Denoiser {
        self.0[view].as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    /// Final fused mesh `S_{M+1}`.
    pub mesh: TriangleMesh,
    /// Completed frames `O_j`, one per trajectory view.
    pub generated: Vec<RgbdFrame>,
    /// Partial renders `Ô_j` the sampler was conditioned on.
    pub renders: Vec<RgbdFrame>,
}

/// Runs [`synthesize_observed`] without a view hook.
pub fn synthesize(
    inputs: &[(RgbdFrame, CameraPose)],
    k: &CameraIntrinsics,
    traj: &Trajectory,
    denoiser: &dyn ViewDenoiser,
    sched: &NoiseSchedule,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutput> {
    synthesize_observed(inputs, k, traj, denoiser, sched, cfg, &mut |_, _| {})
}

/// Incremental view inpainting over `traj`.
///
/// The initial mesh is the pooled fusion of all back-projected inputs. For
/// each view the nearest known frames (inputs and already generated ones)
/// are fused and rendered, the render is completed by the sampler, and the
/// completed frame is back-projected and fused into the scene mesh.
/// `on_view` sees every completed frame before it is fused and may alter it.
///
/// Pooling uses a grid attached to the first input camera, so a rigid motion
/// of all inputs and cameras moves the output by the same motion.
pub fn synthesize_observed(
    inputs: &[(RgbdFrame, CameraPose)],
    k: &CameraIntrinsics,
    traj: &Trajectory,
    denoiser: &dyn ViewDenoiser,
    sched: &NoiseSchedule,
    cfg: &SynthesisConfig,
    on_view: &mut dyn FnMut(usize, &mut RgbdFrame),
) -> Result<SynthesisOutput> {
    if inputs.is_empty() {
        return Err(Error::NoObservations);
    }
    cfg.validate(sched)?;
    k.validate()?;
    if traj.intrinsics != *k {
        return Err(Error::InvalidConfig("trajectory intrinsics differ from the input intrinsics".into()));
    }
    let grid = inputs[0].1.clone();
    let voxel = cfg.backproject.voxel_size;

    let mut known_meshes = Vec::with_capacity(inputs.len() + traj.poses.len());
    let mut known_poses = Vec::with_capacity(inputs.len() + traj.poses.len());
    let mut scene = TriangleMesh::default();
    for (frame, pose) in inputs {
        let m = backproject_frame(frame, k, pose, &cfg.backproject)?;
        append_mesh(&mut scene, &m);
        known_meshes.push(m);
        known_poses.push(pose.clone());
    }
    scene = voxel_pool_in_frame(&scene, voxel, &grid)?;

    let mut generated = Vec::with_capacity(traj.poses.len());
    let mut renders = Vec::with_capacity(traj.poses.len());
    for (j, pose) in traj.poses.iter().enumerate() {
        let mut chunk = TriangleMesh::default();
        for i in select_chunk(&known_poses, pose, &cfg.chunk) {
            append_mesh(&mut chunk, &known_meshes[i]);
        }
        let render = rasterize(&chunk, k, pose);
        let (x0_hat, mask) = normalize_frame(&render, cfg.depth_max)?;
        let x = inpaint_sample(denoiser.for_view(j), &x0_hat, &mask, sched, &cfg.sampler, cfg.view_seed(j))?;
        let mut out = denormalize_frame(&x, cfg.depth_max)?;
        on_view(j, &mut out);

        let m = backproject_frame(&out, k, pose, &cfg.backproject)?;
        append_mesh(&mut scene, &m);
        scene = voxel_pool_in_frame(&scene, voxel, &grid)?;
        known_meshes.push(m);
        known_poses.push(pose.clone());
        generated.push(out);
        renders.push(render);
    }
    Ok(SynthesisOutput { mesh: scene, generated, renders })
}

/// Uniform-stride subset of `n` items keeping `round(fraction·n)` of them
/// (at least one): indices `floor(i·n/k)`.
pub fn subsample_indices(n: usize, fraction: f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    (0..k).map(|i| i * n / k).collect()
}

/// Training pairs for the conditional denoiser. Each target view gets
/// `variants` conditions, each a render at the target camera of a random
/// subset of the other views nearest to it, mimicking the partial renders
/// seen during synthesis.
pub fn conditioning_examples(
    frames: &[(RgbdFrame, CameraPose)],
    k: &CameraIntrinsics,
    bp: &BackprojectConfig,
    chunk: &RenderChunkConfig,
    depth_max: f64,
    variants: usize,
    seed: u64,
) -> Result<Vec<TrainExample>> {
    let meshes = frames
        .iter()
        .map(|(f, p)| backproject_frame(f, k, p, bp))
        .collect::<Result<Vec<_>>>()?;
    let poses: Vec<CameraPose> = frames.iter().map(|(_, p)| p.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames.len() * variants);
    for (i, (frame, pose)) in frames.iter().enumerate() {
        let (target, _) = normalize_frame(frame, depth_max)?;
        let others: Vec<usize> = select_chunk(&poses, pose, &RenderChunkConfig { chunk_size: chunk.chunk_size + 1 })
            .into_iter()
            .filter(|&o| o != i)
            .collect();
        for _ in 0..variants {
            let mut chunk_mesh = TriangleMesh::default();
            if !others.is_empty() {
                let take = rng.gen_range(1..=others.len());
                let mut pick: Vec<usize> = others.choose_multiple(&mut rng, take).copied().collect();
                pick.sort_unstable();
                for o in pick {
                    append_mesh(&mut chunk_mesh, &meshes[o]);
                }
            }
            let (cond, _) = normalize_frame(&rasterize(&chunk_mesh, k, pose), depth_max)?;
            out.push(TrainExample { target: target.clone(), cond });
        }
    }
    Ok(out)
}
