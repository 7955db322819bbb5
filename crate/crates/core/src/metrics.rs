//! Image metrics on rendered frames and surface metrics on meshes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::mesh::TriangleMesh;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;
pub const DEFAULT_COMPLETENESS_THRESHOLD: f64 = 0.1;

/// Row-major RGB image in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!("{} pixels for a {width}x{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_frame(f: &RgbdFrame) -> Self {
        let data = f.pixels().iter().map(|p| p.rgb().map(f64::from)).collect();
        Self { width: f.width(), height: f.height(), data }
    }

    fn ensure_same(&self, other: &RgbImage) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// `10·log10(1/MSE)` over masked pixels and all three channels, capped at
/// [`PSNR_CAP`].
pub fn psnr(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<f64> {
    pred.ensure_same(gt)?;
    if mask.len() != gt.data.len() {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for {} pixels", mask.len(), gt.data.len())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((a, b), _) in pred.data.iter().zip(&gt.data).zip(mask).filter(|(_, m)| **m) {
        sum += (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>();
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sum / n as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over channels and every fully contained 7×7 window.
/// Statistics use uniform weights and population (1/N) moments.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    pred.ensure_same(gt)?;
    let (w, h) = (gt.width, gt.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for c in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let a = pred.data[y * w + x][c];
                        let b = gt.data[y * w + x][c];
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = (sxx / n - mx * mx).max(0.0);
                let vy = (syy / n - my * my).max(0.0);
                let cov = sxy / n - mx * my;
                total += ssim_from_moments(mx, my, vx, vy, cov);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// SSIM of one window from its means, variances and covariance.
pub fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Mean squared depth error over pixels that are in `mask` and valid
/// (`d > 0`) in both maps.
pub fn depth_mse(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} / {} / {} depth entries", pred.len(), gt.len(), mask.len())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((a, b), m) in pred.iter().zip(gt).zip(mask) {
        if *m && *a > 0.0 && *b > 0.0 {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Image metrics of a predicted frame against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mse: f64,
}

/// PSNR over ground-truth-valid pixels, SSIM over the whole image and depth
/// MSE over jointly valid pixels.
pub fn frame_metrics(pred: &RgbdFrame, gt: &RgbdFrame) -> Result<FrameMetrics> {
    let (pi, gi) = (RgbImage::from_frame(pred), RgbImage::from_frame(gt));
    let mask = gt.mask();
    let depth = |f: &RgbdFrame| f.pixels().iter().map(|p| f64::from(p.d)).collect::<Vec<_>>();
    Ok(FrameMetrics {
        psnr: psnr(&pi, &gi, &mask)?,
        ssim: ssim(&pi, &gi)?,
        depth_mse: depth_mse(&depth(pred), &depth(gt), &mask)?,
    })
}

/// Points drawn uniformly from a mesh surface.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub points: Vec<Vec3>,
}

/// Area-weighted face choice, then uniform barycentric coordinates
/// `(1−√r₁, √r₁(1−r₂), √r₁·r₂)`.
pub fn sample_points(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<PointSample> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let i = cumulative.partition_point(|c| *c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.face_vertices(&mesh.faces[i]);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(PointSample { points })
}

/// Static 3-d tree answering exact nearest-neighbour queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self { points, nodes: Vec::with_capacity(points.len()), root: None };
        tree.root = tree.build(&mut idx, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]).then(a.cmp(b)));
        let point = idx[mid];
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut hi[1..], depth + 1);
        self.nodes.push(KdNode { point, axis, left, right });
        Some(self.nodes.len() - 1)
    }

    /// Squared distance to the nearest stored point (`∞` when empty).
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = Vec::with_capacity(64);
        if let Some(r) = self.root {
            stack.push(r);
        }
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let p = &self.points[node.point];
            best = best.min((p - q).norm_squared());
            let diff = q[node.axis] - p[node.axis];
            let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
            if let Some(f) = far {
                if diff * diff <= best {
                    stack.push(f);
                }
            }
            if let Some(nn) = near {
                stack.push(nn);
            }
        }
        best
    }
}

fn mean_nearest_sq(from: &[Vec3], to: &KdTree<'_>) -> f64 {
    from.iter().map(|p| to.nearest_sq(p)).sum::<f64>() / from.len() as f64
}

fn check_non_empty(a: &PointSample, b: &PointSample) -> Result<()> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::InvalidConfig("point samples must be non-empty".into()));
    }
    Ok(())
}

/// Sum of both directed mean squared nearest-neighbour distances (m²).
pub fn chamfer(a: &PointSample, b: &PointSample) -> Result<f64> {
    check_non_empty(a, b)?;
    let (ta, tb) = (KdTree::new(&a.points), KdTree::new(&b.points));
    Ok(mean_nearest_sq(&a.points, &tb) + mean_nearest_sq(&b.points, &ta))
}

/// Fraction of ground-truth points whose nearest predicted point lies within
/// `threshold`.
pub fn completeness(gt: &PointSample, pred: &PointSample, threshold: f64) -> Result<f64> {
    check_non_empty(gt, pred)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {threshold}")));
    }
    let tree = KdTree::new(&pred.points);
    let t2 = threshold * threshold;
    let hits = gt.points.iter().filter(|p| tree.nearest_sq(p) <= t2).count();
    Ok(hits as f64 / gt.points.len() as f64)
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene: String,
    pub view_fraction: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mse: f64,
    pub chamfer: f64,
    pub completeness: f64,
}

pub fn write_report(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["scene", "view_fraction", "psnr", "ssim", "depth_mse", "chamfer", "completeness"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn img(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> RgbImage {
        let data = (0..w * h).map(|i| [0, 1, 2].map(|c| f(i % w, i / w, c))).collect();
        RgbImage::new(w, h, data).unwrap()
    }

    fn pts(v: &[[f64; 3]]) -> PointSample {
        PointSample { points: v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect() }
    }

    fn brute_nearest(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
        from.iter().map(|p| to.iter().map(|q| (q - p).norm_squared()).fold(f64::INFINITY, f64::min)).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = img(4, 4, |x, y, c| (x + y + c) as f64 / 10.0);
        let m = vec![true; 16];
        assert_eq!(psnr(&a, &a, &m).unwrap(), PSNR_CAP);
        let b = img(4, 4, |x, y, c| (x + y + c) as f64 / 10.0 + 0.1);
        let p = psnr(&a, &b, &m).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert!(matches!(psnr(&a, &b, &[false; 16]), Err(Error::EmptyMask)));
        let c = img(4, 4, |x, y, c| (x + y + c) as f64 / 10.0 + 0.1 / 2f64.sqrt());
        let gain = psnr(&a, &c, &m).unwrap() - p;
        assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = img(9, 8, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        let b = img(9, 8, |x, y, c| ((x * 5 + y + 2 * c) % 7) as f64 / 6.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let zero = img(7, 7, |_, _, _| 0.0);
        let one = img(7, 7, |_, _, _| 1.0);
        // Constant windows: zero variances and covariance, means 0 and 1.
        let oracle = (SSIM_C1 * SSIM_C2) / ((1.0 + SSIM_C1) * SSIM_C2);
        assert!((ssim(&zero, &one).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 9.999e-5).abs() < 1e-8);
        assert!(matches!(ssim(&img(6, 9, |_, _, _| 0.0), &img(6, 9, |_, _, _| 0.0)), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn ssim_matches_direct_two_pass_moments() {
        let a = img(8, 8, |x, y, c| ((x * 13 + y * 7 + c * 3) % 17) as f64 / 16.0);
        let b = img(8, 8, |x, y, c| ((x * 3 + y * 11 + c) % 13) as f64 / 12.0);
        let mut acc = 0.0;
        for c in 0..3 {
            for (y0, x0) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let win = |im: &RgbImage| -> Vec<f64> {
                    (y0..y0 + 7).flat_map(|y| (x0..x0 + 7).map(move |x| (y, x))).map(|(y, x)| im.data[y * 8 + x][c]).collect()
                };
                let (u, v) = (win(&a), win(&b));
                let mu = u.iter().sum::<f64>() / 49.0;
                let mv = v.iter().sum::<f64>() / 49.0;
                let vu = u.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 49.0;
                let vv = v.iter().map(|x| (x - mv).powi(2)).sum::<f64>() / 49.0;
                let cv = u.iter().zip(&v).map(|(x, y)| (x - mu) * (y - mv)).sum::<f64>() / 49.0;
                acc += ssim_from_moments(mu, mv, vu, vv, cv);
            }
        }
        assert!((ssim(&a, &b).unwrap() - acc / 12.0).abs() < 1e-12);
    }

    #[test]
    fn depth_mse_examples() {
        let gt = vec![1.0, 2.0, 3.0, 0.0];
        assert_eq!(depth_mse(&gt, &gt, &[true; 4]).unwrap(), 0.0);
        let off: Vec<f64> = gt.iter().map(|d| if *d > 0.0 { d + 0.1 } else { 0.0 }).collect();
        assert!((depth_mse(&off, &gt, &[true; 4]).unwrap() - 0.01).abs() < 1e-12);
        let wrong = vec![1.0, 5.0, 3.0, 0.0];
        assert_eq!(depth_mse(&wrong, &gt, &[true, false, true, true]).unwrap(), 0.0);
        assert!(matches!(depth_mse(&gt, &gt, &[false; 4]), Err(Error::EmptyMask)));
    }

    #[test]
    fn sampling_examples() {
        let tri = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0.0; 3]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = sample_points(&tri, 2000, 1).unwrap();
        assert!(s.points.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0));
        assert_eq!(s, sample_points(&tri, 2000, 1).unwrap());

        // Areas 1 and 3 on disjoint triangles.
        let two = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 2.0, 0.0),
            ],
            vec![[0.0; 3]; 6],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let s = sample_points(&two, 10_000, 2).unwrap();
        let frac = s.points.iter().filter(|p| p.x >= 10.0).count() as f64 / 1e4;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");

        let flat = TriangleMesh::new(vec![Vec3::zeros(); 3], vec![[0.0; 3]; 3], vec![]).unwrap();
        assert!(matches!(sample_points(&flat, 10, 0), Err(Error::ZeroArea)));
    }

    #[test]
    fn chamfer_examples() {
        assert_eq!(chamfer(&pts(&[[0.0; 3]]), &pts(&[[1.0, 0.0, 0.0]])).unwrap(), 2.0);
        let a = pts(&[[0.0, 1.0, 2.0], [3.0, -1.0, 0.5]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
        let (a, b) = (cloud(500), cloud(500));
        let tree = KdTree::new(&b);
        let fast: Vec<f64> = a.iter().map(|p| tree.nearest_sq(p)).collect();
        assert_eq!(fast, brute_nearest(&a, &b));
        // Duplicates and collinear points.
        let mut c: Vec<Vec3> = (0..50).map(|i| Vec3::new((i / 5) as f64, 0.0, 0.0)).collect();
        c.extend(c.clone());
        let tree = KdTree::new(&c);
        let q = cloud(200);
        assert_eq!(q.iter().map(|p| tree.nearest_sq(p)).collect::<Vec<_>>(), brute_nearest(&q, &c));
    }

    #[test]
    fn completeness_examples() {
        let gt = pts(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let pred = pts(&[[0.05, 0.0, 0.0], [1.5, 0.0, 0.0]]);
        assert_eq!(completeness(&gt, &pred, 0.1).unwrap(), 0.5);
        assert_eq!(completeness(&gt, &gt, 0.1).unwrap(), 1.0);
        assert_eq!(completeness(&gt, &pred, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(completeness(&gt, &pred, 1e300).unwrap(), 1.0);
    }

    #[test]
    fn report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![MetricRow {
            scene: "room".into(),
            view_fraction: 0.2,
            psnr: 99.0,
            ssim: 1.0,
            depth_mse: 0.0,
            chamfer: 0.0,
            completeness: 1.0,
        }];
        write_report(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("scene,view_fraction,psnr,ssim,depth_mse,chamfer,completeness\n"));
        assert_eq!(read_report(&p).unwrap(), rows);
        write_report(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chamfer_is_symmetric_and_scales_quadratically(
            a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..40),
            b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..40),
            s in 0.25f64..4.0,
        ) {
            let (pa, pb) = (pts(&a), pts(&b));
            let ab = chamfer(&pa, &pb).unwrap();
            prop_assert_eq!(ab, chamfer(&pb, &pa).unwrap());
            let scale = |p: &PointSample| PointSample { points: p.points.iter().map(|v| v * s).collect() };
            let scaled = chamfer(&scale(&pa), &scale(&pb)).unwrap();
            prop_assert!((scaled - s * s * ab).abs() <= 1e-9 * (1.0 + scaled));
        }

        #[test]
        fn completeness_is_monotone(
            gt in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..30),
            pred in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..30),
            t in 0.01f64..1.0,
        ) {
            let (g, p) = (pts(&gt), pts(&pred));
            let c = completeness(&g, &p, t).unwrap();
            prop_assert!(completeness(&g, &p, t * 1.5).unwrap() >= c);
            let sub = pts(&pred[..pred.len() / 2]);
            prop_assert!(completeness(&g, &sub, t).unwrap() <= c);
        }
    }
}
