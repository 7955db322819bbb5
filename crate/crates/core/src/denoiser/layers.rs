//! Layer kernels on channel-major (`C × H × W`) buffers, each with its
//! backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `c = alpha·op(a)·op(b) + beta·c` where `op` optionally transposes.
/// `a` is stored `m × k` (or `k × m` when `ta`), `b` is `k × n` (or `n × k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let av = if ta {
        ArrayView2::from_shape((k, m), a).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).unwrap()
    };
    let bv = if tb {
        ArrayView2::from_shape((n, k), b).unwrap().reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).unwrap()
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).unwrap();
    general_mat_mul(1.0, &av, &bv, if accumulate { 1.0 } else { 0.0 }, &mut cv);
}

/// 3×3 convolution, stride 1, zero padding 1.
pub(crate) struct Conv3x3Cache {
    cols: Vec<f64>,
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; cin * 9 * hw];
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; cin * hw];
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv3x3_forward(
    x: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Conv3x3Cache) {
    let hw = h * w;
    let cols = im2col(x, cin, h, w);
    let mut y = vec![0.0; cout * hw];
    for (o, b) in bias.iter().enumerate() {
        y[o * hw..(o + 1) * hw].fill(*b);
    }
    gemm(cout, cin * 9, hw, weight, false, &cols, false, &mut y, true);
    (y, Conv3x3Cache { cols })
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    dy: &[f64],
    cache: &Conv3x3Cache,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let hw = h * w;
    gemm(cout, hw, cin * 9, dy, false, &cache.cols, true, dweight, true);
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    let mut dcols = vec![0.0; cin * 9 * hw];
    gemm(cin * 9, cout, hw, weight, true, dy, false, &mut dcols, false);
    col2im(&dcols, cin, h, w)
}

/// Normalization over all channels and positions jointly (a single group),
/// with per-channel scale and shift. A zero input maps to the shift.
pub(crate) struct NormCache {
    xhat: Vec<f64>,
    inv_std: f64,
}

pub(crate) fn norm_forward(x: &[f64], c: usize, eps: f64, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormCache) {
    let n = x.len() as f64;
    let hw = x.len() / c;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let (g, b) = (gamma[ch], beta[ch]);
        for i in ch * hw..(ch + 1) * hw {
            y[i] = g * xhat[i] + b;
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn norm_backward(
    dy: &[f64],
    cache: &NormCache,
    c: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() as f64;
    let hw = dy.len() / c;
    let mut dxhat = vec![0.0; dy.len()];
    for ch in 0..c {
        let g = gamma[ch];
        let (mut sg, mut sb) = (0.0, 0.0);
        for i in ch * hw..(ch + 1) * hw {
            sg += dy[i] * cache.xhat[i];
            sb += dy[i];
            dxhat[i] = dy[i] * g;
        }
        dgamma[ch] += sg;
        dbeta[ch] += sb;
    }
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(&cache.xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(d, x)| cache.inv_std * (d - mean_d - x * mean_dx))
        .collect()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient of SiLU given its input.
pub(crate) fn silu_backward(dy: &[f64], x: &[f64]) -> Vec<f64> {
    dy.iter()
        .zip(x)
        .map(|(d, &v)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

pub(crate) fn avgpool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (r0, r1) = (2 * oy * w, (2 * oy + 1) * w);
                let s = src[r0 + 2 * ox] + src[r0 + 2 * ox + 1] + src[r1 + 2 * ox] + src[r1 + 2 * ox + 1];
                y[ch * oh * ow + oy * ow + ox] = 0.25 * s;
            }
        }
    }
    y
}

pub(crate) fn avgpool2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                dx[ch * h * w + y * w + x] = 0.25 * dy[ch * oh * ow + (y / 2) * ow + x / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling from `h × w`.
pub(crate) fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                y[ch * oh * ow + oy * ow + ox] = x[ch * h * w + (oy / 2) * w + ox / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[ch * h * w + (oy / 2) * w + ox / 2] += dy[ch * oh * ow + oy * ow + ox];
            }
        }
    }
    dx
}
