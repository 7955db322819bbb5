use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    avgpool2, avgpool2_backward, conv3x3_backward, conv3x3_forward, norm_backward, norm_forward, silu, silu_backward,
    upsample2, upsample2_backward, Conv3x3Cache, NormCache,
};
use super::{Denoiser, DenoiserInput};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sizes of the toy UNet. The input is `2·data_channels` wide (noisy image
/// followed by the condition) and the output `data_channels` wide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyNetConfig {
    pub resolution: usize,
    pub data_channels: usize,
    pub base_channels: usize,
    pub mid_channels: usize,
    pub time_dim: usize,
    pub norm_eps: f64,
}

impl Default for TinyNetConfig {
    fn default() -> Self {
        Self { resolution: 16, data_channels: 4, base_channels: 16, mid_channels: 32, time_dim: 32, norm_eps: 1e-5 }
    }
}

impl TinyNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.resolution < 4 || self.resolution % 4 != 0 || self.resolution > 512 {
            return bad(format!("resolution {} must be a multiple of 4 in 4..=512", self.resolution));
        }
        for (name, v) in [
            ("data_channels", self.data_channels),
            ("base_channels", self.base_channels),
            ("mid_channels", self.mid_channels),
        ] {
            if v == 0 || v > 512 {
                return bad(format!("{name} {v} must be in 1..=512"));
            }
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 || self.time_dim > 1024 {
            return bad(format!("time_dim {} must be even and in 2..=1024", self.time_dim));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return bad(format!("norm_eps {} must be positive", self.norm_eps));
        }
        Ok(())
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct ConvP {
    w: Range<usize>,
    b: Range<usize>,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct NormP {
    g: Range<usize>,
    b: Range<usize>,
    c: usize,
}

#[derive(Debug, Clone)]
struct LinP {
    w: Range<usize>,
    b: Range<usize>,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone)]
struct ResP {
    c: usize,
    n1: NormP,
    conv1: ConvP,
    temb: LinP,
    n2: NormP,
    conv2: ConvP,
}

#[derive(Debug, Clone)]
struct Arch {
    time: LinP,
    conv_in: ConvP,
    rb1: ResP,
    conv_d1: ConvP,
    rb2: ResP,
    conv_d2: ConvP,
    rb_mid: ResP,
    conv_u2: ConvP,
    rb_u2: ResP,
    conv_u1: ConvP,
    rb_u1: ResP,
    n_out: NormP,
    conv_out: ConvP,
}

#[derive(Default)]
struct Builder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> Range<usize> {
        let e = ParamEntry { name, shape, offset: self.total };
        self.total += e.len();
        let r = e.range();
        self.entries.push(e);
        r
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> ConvP {
        let w = self.push(format!("{name}.weight"), vec![cout, cin, 3, 3]);
        let b = self.push(format!("{name}.bias"), vec![cout]);
        ConvP { w, b, cin, cout }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormP {
        let g = self.push(format!("{name}.gamma"), vec![c]);
        let b = self.push(format!("{name}.beta"), vec![c]);
        NormP { g, b, c }
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> LinP {
        let w = self.push(format!("{name}.weight"), vec![n_out, n_in]);
        let b = self.push(format!("{name}.bias"), vec![n_out]);
        LinP { w, b, n_in, n_out }
    }

    fn res(&mut self, name: &str, c: usize, time_dim: usize) -> ResP {
        ResP {
            c,
            n1: self.norm(&format!("{name}.norm1"), c),
            conv1: self.conv(&format!("{name}.conv1"), c, c),
            temb: self.linear(&format!("{name}.temb"), time_dim, c),
            n2: self.norm(&format!("{name}.norm2"), c),
            conv2: self.conv(&format!("{name}.conv2"), c, c),
        }
    }
}

fn build(cfg: &TinyNetConfig) -> (Arch, Vec<ParamEntry>, usize) {
    let (d, b, m, td) = (cfg.data_channels, cfg.base_channels, cfg.mid_channels, cfg.time_dim);
    let mut bd = Builder::default();
    let arch = Arch {
        time: bd.linear("time", td, td),
        conv_in: bd.conv("conv_in", 2 * d, b),
        rb1: bd.res("down1", b, td),
        conv_d1: bd.conv("down1.proj", b, m),
        rb2: bd.res("down2", m, td),
        conv_d2: bd.conv("down2.proj", m, m),
        rb_mid: bd.res("mid", m, td),
        conv_u2: bd.conv("up2.proj", 2 * m, m),
        rb_u2: bd.res("up2", m, td),
        conv_u1: bd.conv("up1.proj", m + b, b),
        rb_u1: bd.res("up1", b, td),
        n_out: bd.norm("out.norm", b),
        conv_out: bd.conv("out.conv", b, d),
    };
    (arch, bd.entries, bd.total)
}

/// Parameter layout for `cfg`, in storage order.
pub(crate) fn layout(cfg: &TinyNetConfig) -> Vec<ParamEntry> {
    build(cfg).1
}

/// Sinusoidal embedding of the timestep: `[sin(t·f_k)…, cos(t·f_k)…]` with
/// `f_k = 10000^(−k/half)`.
fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for k in 0..half {
        let f = (-(10000f64).ln() * k as f64 / half as f64).exp();
        let a = t as f64 * f;
        e[k] = a.sin();
        e[half + k] = a.cos();
    }
    e
}

fn linear_forward(p: &[f64], l: &LinP, x: &[f64]) -> Vec<f64> {
    let w = &p[l.w.clone()];
    (0..l.n_out)
        .map(|o| p[l.b.start + o] + w[o * l.n_in..(o + 1) * l.n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn linear_backward(p: &[f64], g: &mut [f64], l: &LinP, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    for o in 0..l.n_out {
        g[l.b.start + o] += dy[o];
        let row = l.w.start + o * l.n_in;
        for i in 0..l.n_in {
            g[row + i] += dy[o] * x[i];
            dx[i] += dy[o] * p[row + i];
        }
    }
}

struct Plane {
    hw: usize,
    h: usize,
    w: usize,
}

fn conv_fwd(p: &[f64], c: &ConvP, x: &[f64], s: &Plane) -> (Vec<f64>, Conv3x3Cache) {
    conv3x3_forward(x, c.cin, c.cout, s.h, s.w, &p[c.w.clone()], &p[c.b.clone()])
}

fn conv_bwd(p: &[f64], g: &mut [f64], c: &ConvP, cache: &Conv3x3Cache, dy: &[f64], s: &Plane) -> Vec<f64> {
    let (gw, gb) = split_two(g, &c.w, &c.b);
    conv3x3_backward(dy, cache, c.cin, c.cout, s.h, s.w, &p[c.w.clone()], gw, gb)
}

fn norm_fwd(p: &[f64], n: &NormP, x: &[f64], eps: f64) -> (Vec<f64>, NormCache) {
    norm_forward(x, n.c, eps, &p[n.g.clone()], &p[n.b.clone()])
}

fn norm_bwd(p: &[f64], g: &mut [f64], n: &NormP, cache: &NormCache, dy: &[f64]) -> Vec<f64> {
    let (gg, gb) = split_two(g, &n.g, &n.b);
    norm_backward(dy, cache, n.c, &p[n.g.clone()], gg, gb)
}

/// Two disjoint mutable windows into the gradient vector. The layout always
/// places the second right after the first.
fn split_two<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let (lo, hi) = g[a.start..b.end].split_at_mut(a.len());
    (lo, hi)
}

struct ResCache {
    n1: NormCache,
    a1: Vec<f64>,
    conv1: Conv3x3Cache,
    n2: NormCache,
    a2: Vec<f64>,
    conv2: Conv3x3Cache,
}

fn res_fwd(p: &[f64], r: &ResP, x: &[f64], temb: &[f64], s: &Plane, eps: f64) -> (Vec<f64>, ResCache) {
    let (a1, n1) = norm_fwd(p, &r.n1, x, eps);
    let (mut h, conv1) = conv_fwd(p, &r.conv1, &silu(&a1), s);
    let shift = linear_forward(p, &r.temb, temb);
    for (ch, v) in shift.iter().enumerate() {
        h[ch * s.hw..(ch + 1) * s.hw].iter_mut().for_each(|x| *x += v);
    }
    let (a2, n2) = norm_fwd(p, &r.n2, &h, eps);
    let (h2, conv2) = conv_fwd(p, &r.conv2, &silu(&a2), s);
    let y = x.iter().zip(&h2).map(|(a, b)| a + b).collect();
    (y, ResCache { n1, a1, conv1, n2, a2, conv2 })
}

fn res_bwd(
    p: &[f64],
    g: &mut [f64],
    r: &ResP,
    c: &ResCache,
    dy: &[f64],
    temb: &[f64],
    dtemb: &mut [f64],
    s: &Plane,
) -> Vec<f64> {
    let d = conv_bwd(p, g, &r.conv2, &c.conv2, dy, s);
    let d = silu_backward(&d, &c.a2);
    let dh = norm_bwd(p, g, &r.n2, &c.n2, &d);
    let dshift: Vec<f64> = (0..r.c).map(|ch| dh[ch * s.hw..(ch + 1) * s.hw].iter().sum()).collect();
    linear_backward(p, g, &r.temb, temb, &dshift, dtemb);
    let d = conv_bwd(p, g, &r.conv1, &c.conv1, &dh, s);
    let d = silu_backward(&d, &c.a1);
    let dx = norm_bwd(p, g, &r.n1, &c.n1, &d);
    dx.iter().zip(dy).map(|(a, b)| a + b).collect()
}

struct Cache {
    emb: Vec<f64>,
    z: Vec<f64>,
    temb: Vec<f64>,
    conv_in: Conv3x3Cache,
    rb1: ResCache,
    conv_d1: Conv3x3Cache,
    rb2: ResCache,
    conv_d2: Conv3x3Cache,
    rb_mid: ResCache,
    conv_u2: Conv3x3Cache,
    rb_u2: ResCache,
    conv_u1: Conv3x3Cache,
    rb_u1: ResCache,
    n_out: NormCache,
    a_out: Vec<f64>,
    conv_out: Conv3x3Cache,
}

/// Small UNet-style noise estimator: two pooling stages down, a bottleneck
/// residual block, two upsampling stages with skip concatenation. Every
/// residual block receives a shared sinusoidal timestep embedding.
#[derive(Debug, Clone)]
pub struct TinyNet {
    config: TinyNetConfig,
    arch: Arch,
    entries: Vec<ParamEntry>,
    params: Vec<f64>,
}

impl TinyNet {
    /// All-zero parameters.
    pub fn zeros(config: TinyNetConfig) -> Result<Self> {
        config.validate()?;
        let (arch, entries, total) = build(&config);
        Ok(Self { config, arch, entries, params: vec![0.0; total] })
    }

    pub fn from_params(config: TinyNetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters given, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("parameters contain NaN or infinity".into()));
        }
        net.params = params;
        Ok(net)
    }

    /// Training initialisation. Convolutions get He-normal weights, except the
    /// last convolution of each residual branch and the output convolution,
    /// which start at zero. The condition half of the input convolution also
    /// starts at zero, so an untrained condition path has no effect.
    pub fn new(config: TinyNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = net.arch.clone();
        let p = &mut net.params;
        let he = |p: &mut [f64], c: &ConvP, rng: &mut ChaCha8Rng| {
            let std = (2.0 / (c.cin * 9) as f64).sqrt();
            p[c.w.clone()].iter_mut().for_each(|v| *v = std * rng.sample::<f64, _>(StandardNormal));
        };
        let ones = |p: &mut [f64], n: &NormP| p[n.g.clone()].fill(1.0);
        let lin = |p: &mut [f64], l: &LinP, rng: &mut ChaCha8Rng| {
            let std = (1.0 / l.n_in as f64).sqrt();
            p[l.w.clone()].iter_mut().for_each(|v| *v = std * rng.sample::<f64, _>(StandardNormal));
        };
        lin(p, &a.time, &mut rng);
        he(p, &a.conv_in, &mut rng);
        let d = config.data_channels;
        for o in 0..a.conv_in.cout {
            let start = a.conv_in.w.start + (o * a.conv_in.cin + d) * 9;
            p[start..start + d * 9].fill(0.0);
        }
        for c in [&a.conv_d1, &a.conv_d2, &a.conv_u2, &a.conv_u1] {
            he(p, c, &mut rng);
        }
        for r in [&a.rb1, &a.rb2, &a.rb_mid, &a.rb_u2, &a.rb_u1] {
            ones(p, &r.n1);
            ones(p, &r.n2);
            he(p, &r.conv1, &mut rng);
            lin(p, &r.temb, &mut rng);
        }
        ones(p, &a.n_out);
        Ok(net)
    }

    /// Every parameter drawn at random, including norm scales and biases.
    /// Used where zero-initialised layers would hide gradient paths.
    pub fn random(config: TinyNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gammas: Vec<Range<usize>> =
            net.entries.iter().filter(|e| e.name.ends_with(".gamma")).map(ParamEntry::range).collect();
        for e in net.entries.clone() {
            let fan_in = if e.shape.len() > 1 { e.shape[1..].iter().product::<usize>() } else { 0 };
            let std = if fan_in > 0 { (1.0 / fan_in as f64).sqrt() } else { 0.1 };
            for v in &mut net.params[e.range()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for r in gammas {
            net.params[r].iter_mut().for_each(|v| *v += 1.0);
        }
        Ok(net)
    }

    pub fn config(&self) -> &TinyNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    fn check_input(&self, x_t: &Tensor, cond: &Tensor) -> Result<()> {
        let (r, d) = (self.config.resolution, self.config.data_channels);
        x_t.ensure_same_shape(cond, "network condition")?;
        if x_t.shape() != (r, r, d) {
            return Err(Error::ShapeMismatch(format!("network expects {r}x{r}x{d}, got {:?}", x_t.shape())));
        }
        Ok(())
    }

    /// Channel-major stacking of `x_t` and the condition.
    fn pack(&self, x_t: &Tensor, cond: &Tensor) -> Vec<f64> {
        let (hw, d) = (x_t.pixel_count(), x_t.channels);
        let mut out = vec![0.0; 2 * d * hw];
        for p in 0..hw {
            for c in 0..d {
                out[c * hw + p] = x_t.data[p * d + c];
                out[(d + c) * hw + p] = cond.data[p * d + c];
            }
        }
        out
    }

    fn unpack(&self, y: &[f64]) -> Tensor {
        let (r, d) = (self.config.resolution, self.config.data_channels);
        let hw = r * r;
        let mut t = Tensor::zeros(r, r, d);
        for p in 0..hw {
            for c in 0..d {
                t.data[p * d + c] = y[c * hw + p];
            }
        }
        t
    }

    fn run(&self, input: &[f64], t: usize) -> (Vec<f64>, Cache) {
        let (p, a, eps) = (&self.params[..], &self.arch, self.config.norm_eps);
        let r = self.config.resolution;
        let s1 = Plane { hw: r * r, h: r, w: r };
        let s2 = Plane { hw: r * r / 4, h: r / 2, w: r / 2 };
        let s3 = Plane { hw: r * r / 16, h: r / 4, w: r / 4 };

        let emb = timestep_embedding(t, self.config.time_dim);
        let z = linear_forward(p, &a.time, &emb);
        let temb = silu(&z);

        let (h0, conv_in) = conv_fwd(p, &a.conv_in, input, &s1);
        let (skip1, rb1) = res_fwd(p, &a.rb1, &h0, &temb, &s1, eps);
        let (h2, conv_d1) = conv_fwd(p, &a.conv_d1, &avgpool2(&skip1, a.rb1.c, r, r), &s2);
        let (skip2, rb2) = res_fwd(p, &a.rb2, &h2, &temb, &s2, eps);
        let (h3, conv_d2) = conv_fwd(p, &a.conv_d2, &avgpool2(&skip2, a.rb2.c, r / 2, r / 2), &s3);
        let (mid, rb_mid) = res_fwd(p, &a.rb_mid, &h3, &temb, &s3, eps);

        let mut cat2 = upsample2(&mid, a.rb_mid.c, r / 4, r / 4);
        cat2.extend_from_slice(&skip2);
        let (h4, conv_u2) = conv_fwd(p, &a.conv_u2, &cat2, &s2);
        let (up2, rb_u2) = res_fwd(p, &a.rb_u2, &h4, &temb, &s2, eps);
        let mut cat1 = upsample2(&up2, a.rb_u2.c, r / 2, r / 2);
        cat1.extend_from_slice(&skip1);
        let (h5, conv_u1) = conv_fwd(p, &a.conv_u1, &cat1, &s1);
        let (up1, rb_u1) = res_fwd(p, &a.rb_u1, &h5, &temb, &s1, eps);

        let (a_out, n_out) = norm_fwd(p, &a.n_out, &up1, eps);
        let (out, conv_out) = conv_fwd(p, &a.conv_out, &silu(&a_out), &s1);
        let cache = Cache {
            emb,
            z,
            temb,
            conv_in,
            rb1,
            conv_d1,
            rb2,
            conv_d2,
            rb_mid,
            conv_u2,
            rb_u2,
            conv_u1,
            rb_u1,
            n_out,
            a_out,
            conv_out,
        };
        (out, cache)
    }

    fn backprop(&self, c: &Cache, dout: &[f64], g: &mut [f64]) {
        let (p, a) = (&self.params[..], &self.arch);
        let r = self.config.resolution;
        let s1 = Plane { hw: r * r, h: r, w: r };
        let s2 = Plane { hw: r * r / 4, h: r / 2, w: r / 2 };
        let s3 = Plane { hw: r * r / 16, h: r / 4, w: r / 4 };
        let mut dtemb = vec![0.0; self.config.time_dim];

        let d = conv_bwd(p, g, &a.conv_out, &c.conv_out, dout, &s1);
        let d = silu_backward(&d, &c.a_out);
        let d = norm_bwd(p, g, &a.n_out, &c.n_out, &d);

        let d = res_bwd(p, g, &a.rb_u1, &c.rb_u1, &d, &c.temb, &mut dtemb, &s1);
        let dcat1 = conv_bwd(p, g, &a.conv_u1, &c.conv_u1, &d, &s1);
        let (dup, dskip1_cat) = dcat1.split_at(a.rb_u2.c * s1.hw);
        let mut dskip1 = dskip1_cat.to_vec();
        let d = upsample2_backward(dup, a.rb_u2.c, r / 2, r / 2);

        let d = res_bwd(p, g, &a.rb_u2, &c.rb_u2, &d, &c.temb, &mut dtemb, &s2);
        let dcat2 = conv_bwd(p, g, &a.conv_u2, &c.conv_u2, &d, &s2);
        let (dup, dskip2_cat) = dcat2.split_at(a.rb_mid.c * s2.hw);
        let mut dskip2 = dskip2_cat.to_vec();
        let d = upsample2_backward(dup, a.rb_mid.c, r / 4, r / 4);

        let d = res_bwd(p, g, &a.rb_mid, &c.rb_mid, &d, &c.temb, &mut dtemb, &s3);
        let d = conv_bwd(p, g, &a.conv_d2, &c.conv_d2, &d, &s3);
        let d = avgpool2_backward(&d, a.rb2.c, r / 2, r / 2);
        dskip2.iter_mut().zip(&d).for_each(|(a, b)| *a += b);

        let d = res_bwd(p, g, &a.rb2, &c.rb2, &dskip2, &c.temb, &mut dtemb, &s2);
        let d = conv_bwd(p, g, &a.conv_d1, &c.conv_d1, &d, &s2);
        let d = avgpool2_backward(&d, a.rb1.c, r, r);
        dskip1.iter_mut().zip(&d).for_each(|(a, b)| *a += b);

        let d = res_bwd(p, g, &a.rb1, &c.rb1, &dskip1, &c.temb, &mut dtemb, &s1);
        let _ = conv_bwd(p, g, &a.conv_in, &c.conv_in, &d, &s1);

        let dz = silu_backward(&dtemb, &c.z);
        let mut demb = vec![0.0; c.emb.len()];
        linear_backward(p, g, &a.time, &c.emb, &dz, &mut demb);
    }

    /// Noise estimate for one `(x_t, cond, t)` triple.
    pub fn forward(&self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        self.check_input(x_t, cond)?;
        let (y, _) = self.run(&self.pack(x_t, cond), t);
        Ok(self.unpack(&y))
    }

    /// Mean squared error between the estimate and `eps`, with
    /// `weight · ∂loss/∂θ` added into `grad`.
    pub fn loss_and_grad(
        &self,
        x_t: &Tensor,
        cond: &Tensor,
        t: usize,
        eps: &Tensor,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x_t, cond)?;
        x_t.ensure_same_shape(eps, "training target")?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!("gradient buffer {} vs {}", grad.len(), self.params.len())));
        }
        let (y, cache) = self.run(&self.pack(x_t, cond), t);
        let target = self.pack_single(eps);
        let n = y.len() as f64;
        let loss = y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let dout: Vec<f64> = y.iter().zip(&target).map(|(a, b)| weight * 2.0 * (a - b) / n).collect();
        self.backprop(&cache, &dout, grad);
        Ok(loss)
    }

    /// Loss only, same definition as [`TinyNet::loss_and_grad`].
    pub fn loss(&self, x_t: &Tensor, cond: &Tensor, t: usize, eps: &Tensor) -> Result<f64> {
        let y = self.forward(x_t, cond, t)?;
        x_t.ensure_same_shape(eps, "training target")?;
        Ok(y.data.iter().zip(&eps.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.data.len() as f64)
    }

    fn pack_single(&self, x: &Tensor) -> Vec<f64> {
        let (hw, d) = (x.pixel_count(), x.channels);
        let mut out = vec![0.0; d * hw];
        for p in 0..hw {
            for c in 0..d {
                out[c * hw + p] = x.data[p * d + c];
            }
        }
        out
    }
}

impl Denoiser for TinyNet {
    fn denoise(&self, input: &DenoiserInput<'_>) -> Result<Tensor> {
        if input.t == 0 {
            return Err(Error::InvalidTimestep { t: 0, lo: 1, hi: usize::MAX });
        }
        if !input.x_t.is_finite() || !input.cond.is_finite() {
            return Err(Error::NonFiniteInput("denoiser input contains NaN or infinity".into()));
        }
        self.forward(input.x_t, input.cond, input.t)
    }
}
