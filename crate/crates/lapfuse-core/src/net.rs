//! The guidance network: a small convolutional encoder–decoder that maps the
//! concatenated (visible-Y, IR) planes to a per-pixel weight map in (0, 1).
//!
//! Architecture per stage: two 3x3 convolutions (optionally normalized) with
//! an activation, 2x max-pool downsampling on the way in, nearest-neighbor
//! upsampling plus skip concatenation on the way out, and a 1x1 head followed
//! by a logistic squashing. `depth` downsampling stages mirror the pyramid's
//! decomposition levels.
//!
//! Forward and backward passes are written out by hand; the tape caches the
//! conv inputs and pre-activation maps each layer needs. A `depth = 0` config
//! degenerates to a single bias-free 3x3 convolution, which is occasionally
//! useful as a minimal differentiable stand-in.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Plane;
use crate::pyramid::GuidanceMap;
use crate::{CoreError, Result};

const LEAKY_SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-5;
const NORM_MOMENTUM: f32 = 0.1;
/// Head weights start small so a fresh network emits a near-neutral map.
const HEAD_INIT_SCALE: f32 = 0.2;

/// Normalization flavor applied after each convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    /// No normalization (default: full-resolution batches are tiny, so batch
    /// statistics are unreliable).
    #[default]
    None,
    /// Per-channel statistics over the current sample at training time,
    /// running estimates at inference time.
    BatchStyle,
    /// Per-channel statistics over the current sample at both times.
    InstanceStyle,
}

/// Pointwise nonlinearity between convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    ReluLike,
    #[default]
    Leaky,
}

/// Shape of the guidance network; the parameter count is a pure function of
/// this struct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Channels at the first encoder stage.
    pub base_width: usize,
    /// Number of downsampling stages.
    pub depth: usize,
    /// Channel multiplier per stage.
    pub growth: usize,
    pub norm: Norm,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::large()
    }
}

impl NetConfig {
    /// ~17M-parameter preset.
    pub fn large() -> Self {
        Self {
            base_width: 48,
            depth: 4,
            growth: 2,
            norm: Norm::None,
            activation: Activation::Leaky,
        }
    }

    /// ~0.6M-class preset.
    pub fn medium() -> Self {
        Self {
            base_width: 8,
            ..Self::large()
        }
    }

    /// ~0.08M-class preset.
    pub fn small() -> Self {
        Self {
            base_width: 3,
            ..Self::large()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth > 0 && (self.base_width == 0 || self.growth == 0) {
            return Err(CoreError::InvalidConfig(
                "base_width and growth must be positive".into(),
            ));
        }
        if self.depth > 8 {
            return Err(CoreError::InvalidConfig("depth must be at most 8".into()));
        }
        Ok(())
    }

    /// Channel width at stage `s` (stage `depth` is the bottleneck).
    fn width(&self, s: usize) -> usize {
        let mut w = self.base_width;
        for _ in 0..s {
            w *= self.growth;
        }
        w
    }

    /// Exact trainable-parameter total, derived from the same layer
    /// enumeration the constructor uses.
    pub fn param_count(&self) -> usize {
        layer_specs(self)
            .iter()
            .map(|s| s.weight_len() + s.bias_len() + s.norm_len())
            .sum()
    }
}

/// One conv unit: convolution, optional norm, activation (the head skips
/// both norm and activation).
#[derive(Debug, Clone)]
struct LayerSpec {
    name: String,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    bias: bool,
    norm: Norm,
    activated: bool,
}

impl LayerSpec {
    fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.ksize * self.ksize
    }
    fn bias_len(&self) -> usize {
        if self.bias {
            self.out_ch
        } else {
            0
        }
    }
    fn norm_len(&self) -> usize {
        match self.norm {
            Norm::None => 0,
            _ => 2 * self.out_ch, // gamma + beta
        }
    }
}

fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    if cfg.depth == 0 {
        // degenerate: one bias-free 3x3 convolution straight to the map
        return vec![LayerSpec {
            name: "head".into(),
            in_ch: 2,
            out_ch: 1,
            ksize: 3,
            bias: false,
            norm: Norm::None,
            activated: false,
        }];
    }
    let mut specs = Vec::new();
    let mut unit = |name: String, in_ch: usize, out_ch: usize| {
        specs.push(LayerSpec {
            name,
            in_ch,
            out_ch,
            ksize: 3,
            bias: true,
            norm: cfg.norm,
            activated: true,
        });
    };
    for s in 0..cfg.depth {
        let cin = if s == 0 { 2 } else { cfg.width(s - 1) };
        let cout = cfg.width(s);
        unit(format!("enc{s}.conv1"), cin, cout);
        unit(format!("enc{s}.conv2"), cout, cout);
    }
    let cb = cfg.width(cfg.depth);
    unit("bottleneck.conv1".into(), cfg.width(cfg.depth - 1), cb);
    unit("bottleneck.conv2".into(), cb, cb);
    for s in (0..cfg.depth).rev() {
        let below = cfg.width(s + 1);
        let cout = cfg.width(s);
        unit(format!("dec{s}.conv1"), below + cout, cout);
        unit(format!("dec{s}.conv2"), cout, cout);
    }
    specs.push(LayerSpec {
        name: "head".into(),
        in_ch: cfg.base_width,
        out_ch: 1,
        ksize: 1,
        bias: true,
        norm: Norm::None,
        activated: false,
    });
    specs
}

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

/// C x H x W activation tensor.
#[derive(Debug, Clone)]
pub(crate) struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn from_planes(planes: &[&Plane]) -> Self {
        let (h, w) = (planes[0].h, planes[0].w);
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            assert!(p.h == h && p.w == w);
            data.extend_from_slice(&p.data);
        }
        Self {
            c: planes.len(),
            h,
            w,
            data,
        }
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ConvUnit {
    spec: LayerSpec,
    weight: Vec<f32>, // [out][in][k][k]
    bias: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
    activation: Activation,
}

struct UnitCache {
    input: FeatureMap,
    norm: Option<NormCache>,
    pre_act: FeatureMap,
}

struct NormCache {
    invstd: Vec<f32>,
    xhat: FeatureMap,
}

struct UnitGrads {
    weight: Vec<f32>,
    bias: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

impl ConvUnit {
    fn new(spec: LayerSpec, activation: Activation) -> Self {
        let wlen = spec.weight_len();
        let (blen, clen) = (spec.bias_len(), spec.out_ch);
        let has_norm = !matches!(spec.norm, Norm::None);
        Self {
            weight: vec![0.0; wlen],
            bias: vec![0.0; blen],
            gamma: if has_norm { vec![1.0; clen] } else { Vec::new() },
            beta: if has_norm { vec![0.0; clen] } else { Vec::new() },
            running_mean: if matches!(spec.norm, Norm::BatchStyle) {
                vec![0.0; clen]
            } else {
                Vec::new()
            },
            running_var: if matches!(spec.norm, Norm::BatchStyle) {
                vec![1.0; clen]
            } else {
                Vec::new()
            },
            spec,
            activation,
        }
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.spec.in_ch * self.spec.ksize * self.spec.ksize) as f32;
        let gain = match self.activation {
            Activation::ReluLike => libm::sqrtf(2.0),
            Activation::Leaky => libm::sqrtf(2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)),
        };
        let mut bound = libm::sqrtf(3.0) * gain / libm::sqrtf(fan_in);
        if self.spec.name == "head" {
            bound *= HEAD_INIT_SCALE;
        }
        for w in &mut self.weight {
            let u = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
            *w = (2.0 * u - 1.0) * bound;
        }
        // biases and beta stay zero; gamma stays one
    }

    fn conv_forward(&self, x: &FeatureMap) -> FeatureMap {
        let k = self.spec.ksize;
        let pad = (k - 1) / 2;
        let (h, w) = (x.h, x.w);
        let mut out = FeatureMap::zeros(self.spec.out_ch, h, w);
        let plane = h * w;
        for co in 0..self.spec.out_ch {
            let ob = co * plane;
            if self.spec.bias {
                out.data[ob..ob + plane].fill(self.bias[co]);
            }
            for ci in 0..self.spec.in_ch {
                let ib = ci * plane;
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let wv = self.weight[((co * self.spec.in_ch + ci) * k + ky) * k + kx];
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy.max(0)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = &x.data[ib + sy * w..ib + (sy + 1) * w];
                            let dst = &mut out.data[ob + y * w..ob + (y + 1) * w];
                            if dx >= 0 {
                                let d = dx as usize;
                                for xx in x0..x1 {
                                    dst[xx] += wv * src[xx + d];
                                }
                            } else {
                                let d = (-dx) as usize;
                                for xx in x0..x1 {
                                    dst[xx] += wv * src[xx - d];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn conv_backward(&self, x: &FeatureMap, gy: &FeatureMap, grads: &mut UnitGrads) -> FeatureMap {
        let k = self.spec.ksize;
        let pad = (k - 1) / 2;
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let mut gx = FeatureMap::zeros(self.spec.in_ch, h, w);
        for co in 0..self.spec.out_ch {
            let ob = co * plane;
            if self.spec.bias {
                grads.bias[co] += gy.data[ob..ob + plane].iter().sum::<f32>();
            }
            for ci in 0..self.spec.in_ch {
                let ib = ci * plane;
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let widx = ((co * self.spec.in_ch + ci) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy.max(0)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)) as usize;
                        let mut wacc = 0.0f32;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let g_row = &gy.data[ob + y * w..ob + (y + 1) * w];
                            let x_base = ib + sy * w;
                            if dx >= 0 {
                                let d = dx as usize;
                                for xx in x0..x1 {
                                    wacc += g_row[xx] * x.data[x_base + xx + d];
                                    gx.data[x_base + xx + d] += wv * g_row[xx];
                                }
                            } else {
                                let d = (-dx) as usize;
                                for xx in x0..x1 {
                                    wacc += g_row[xx] * x.data[x_base + xx - d];
                                    gx.data[x_base + xx - d] += wv * g_row[xx];
                                }
                            }
                        }
                        grads.weight[widx] += wacc;
                    }
                }
            }
        }
        gx
    }

    fn norm_forward(&mut self, z: FeatureMap, training: bool) -> (FeatureMap, Option<NormCache>) {
        match self.spec.norm {
            Norm::None => (z, None),
            Norm::InstanceStyle | Norm::BatchStyle => {
                let plane = z.h * z.w;
                let use_running = matches!(self.spec.norm, Norm::BatchStyle) && !training;
                let mut invstd = vec![0.0f32; z.c];
                let mut xhat = FeatureMap::zeros(z.c, z.h, z.w);
                let mut out = FeatureMap::zeros(z.c, z.h, z.w);
                for c in 0..z.c {
                    let src = &z.data[c * plane..(c + 1) * plane];
                    let (m, v) = if use_running {
                        (self.running_mean[c], self.running_var[c])
                    } else {
                        let m = src.iter().sum::<f32>() / plane as f32;
                        let v =
                            src.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / plane as f32;
                        (m, v)
                    };
                    if training && matches!(self.spec.norm, Norm::BatchStyle) {
                        self.running_mean[c] =
                            (1.0 - NORM_MOMENTUM) * self.running_mean[c] + NORM_MOMENTUM * m;
                        self.running_var[c] =
                            (1.0 - NORM_MOMENTUM) * self.running_var[c] + NORM_MOMENTUM * v;
                    }
                    let is = 1.0 / libm::sqrtf(v + NORM_EPS);
                    invstd[c] = is;
                    let xh = &mut xhat.data[c * plane..(c + 1) * plane];
                    let o = &mut out.data[c * plane..(c + 1) * plane];
                    let (g, b) = (self.gamma[c], self.beta[c]);
                    for i in 0..plane {
                        let hv = (src[i] - m) * is;
                        xh[i] = hv;
                        o[i] = g * hv + b;
                    }
                }
                (out, Some(NormCache { invstd, xhat }))
            }
        }
    }

    fn norm_backward(&self, gy: &FeatureMap, cache: &NormCache, grads: &mut UnitGrads) -> FeatureMap {
        let plane = gy.h * gy.w;
        let n = plane as f32;
        let mut gz = FeatureMap::zeros(gy.c, gy.h, gy.w);
        for c in 0..gy.c {
            let g = &gy.data[c * plane..(c + 1) * plane];
            let xh = &cache.xhat.data[c * plane..(c + 1) * plane];
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for i in 0..plane {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
            grads.beta[c] += sum_g;
            grads.gamma[c] += sum_gx;
            let gamma = self.gamma[c];
            let is = cache.invstd[c];
            let out = &mut gz.data[c * plane..(c + 1) * plane];
            // mean and variance are functions of z, hence the centering terms
            for i in 0..plane {
                out[i] = gamma * is / n * (n * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
        gz
    }

    fn act_forward(&self, x: &mut FeatureMap) {
        if !self.spec.activated {
            return;
        }
        match self.activation {
            Activation::ReluLike => {
                for v in &mut x.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Leaky => {
                for v in &mut x.data {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
        }
    }

    fn act_backward(&self, pre_act: &FeatureMap, gy: &FeatureMap) -> FeatureMap {
        if !self.spec.activated {
            return gy.clone();
        }
        let slope = match self.activation {
            Activation::ReluLike => 0.0,
            Activation::Leaky => LEAKY_SLOPE,
        };
        let mut gx = gy.clone();
        for (g, &p) in gx.data.iter_mut().zip(&pre_act.data) {
            if p < 0.0 {
                *g *= slope;
            }
        }
        gx
    }

    fn forward(&mut self, x: FeatureMap, training: bool) -> (FeatureMap, UnitCache) {
        let z = self.conv_forward(&x);
        let (pre_act, norm) = self.norm_forward(z, training);
        let mut y = pre_act.clone();
        self.act_forward(&mut y);
        (
            y,
            UnitCache {
                input: x,
                norm,
                pre_act,
            },
        )
    }

    fn infer(&self, x: &FeatureMap) -> FeatureMap {
        let z = self.conv_forward(x);
        let mut tmp = self.clone();
        let (mut y, _) = tmp.norm_forward(z, false);
        self.act_forward(&mut y);
        y
    }

    fn backward(&self, cache: &UnitCache, gy: &FeatureMap, grads: &mut UnitGrads) -> FeatureMap {
        let g = self.act_backward(&cache.pre_act, gy);
        let g = match &cache.norm {
            Some(nc) => self.norm_backward(&g, nc, grads),
            None => g,
        };
        self.conv_backward(&cache.input, &g, grads)
    }
}

fn maxpool2(x: &FeatureMap) -> (FeatureMap, Vec<u32>) {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = FeatureMap::zeros(x.c, h, w);
    let mut arg = vec![0u32; x.c * h * w];
    let plane_in = x.h * x.w;
    let plane_out = h * w;
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let base = c * plane_in + (2 * y) * x.w + 2 * xx;
                let cands = [base, base + 1, base + x.w, base + x.w + 1];
                let mut best = cands[0];
                for &idx in &cands[1..] {
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                out.data[c * plane_out + y * w + xx] = x.data[best];
                arg[c * plane_out + y * w + xx] = best as u32;
            }
        }
    }
    (out, arg)
}

fn maxpool2_backward(gy: &FeatureMap, arg: &[u32], in_h: usize, in_w: usize) -> FeatureMap {
    let mut gx = FeatureMap::zeros(gy.c, in_h, in_w);
    for (g, &idx) in gy.data.iter().zip(arg) {
        gx.data[idx as usize] += g;
    }
    gx
}

fn upsample2_nearest(x: &FeatureMap) -> FeatureMap {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = FeatureMap::zeros(x.c, h, w);
    let plane_in = x.h * x.w;
    let plane_out = h * w;
    for c in 0..x.c {
        for y in 0..x.h {
            let src = &x.data[c * plane_in + y * x.w..c * plane_in + (y + 1) * x.w];
            for dy in 0..2 {
                let row = c * plane_out + (2 * y + dy) * w;
                let dst = &mut out.data[row..row + w];
                for (xx, &v) in src.iter().enumerate() {
                    dst[2 * xx] = v;
                    dst[2 * xx + 1] = v;
                }
            }
        }
    }
    out
}

fn upsample2_backward(gy: &FeatureMap) -> FeatureMap {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut gx = FeatureMap::zeros(gy.c, h, w);
    let plane_in = h * w;
    let plane_out = gy.h * gy.w;
    for c in 0..gy.c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += gy.data[c * plane_out + (2 * y + dy) * gy.w + 2 * xx + dx];
                    }
                }
                gx.data[c * plane_in + y * w + xx] = acc;
            }
        }
    }
    gx
}

fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    assert!(a.h == b.h && a.w == b.w);
    let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

fn split(g: &FeatureMap, c_first: usize) -> (FeatureMap, FeatureMap) {
    let plane = g.h * g.w;
    let first = FeatureMap {
        c: c_first,
        h: g.h,
        w: g.w,
        data: g.data[..c_first * plane].to_vec(),
    };
    let second = FeatureMap {
        c: g.c - c_first,
        h: g.h,
        w: g.w,
        data: g.data[c_first * plane..].to_vec(),
    };
    (first, second)
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

// ---------------------------------------------------------------------------
// The network
// ---------------------------------------------------------------------------

/// Convolutional encoder–decoder predicting a guidance map.
#[derive(Debug, Clone)]
pub struct GuidanceNet {
    config: NetConfig,
    units: Vec<ConvUnit>,
}

/// Activation caches from one training-mode forward pass.
pub struct Tape {
    units: Vec<UnitCache>,
    pools: Vec<(Vec<u32>, usize, usize)>, // argmax, input h, input w
    concat_splits: Vec<usize>,            // channels arriving from below
    mu: Plane,
}

impl Tape {
    /// The squashed output map this tape was recorded for.
    pub fn output(&self) -> &Plane {
        &self.mu
    }
}

/// Per-parameter gradients, aligned with [`GuidanceNet::param_names`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(net: &GuidanceNet) -> Self {
        Self {
            tensors: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in &mut self.tensors {
            for v in t {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl GuidanceNet {
    /// Deterministic fan-in-scaled initialization; the final layer bias is
    /// zero so a fresh net emits a map close to 0.5 everywhere.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units: Vec<ConvUnit> = layer_specs(&config)
            .into_iter()
            .map(|s| ConvUnit::new(s, config.activation))
            .collect();
        for u in &mut units {
            u.init(&mut rng);
        }
        Ok(Self { config, units })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.config.param_count()
    }

    fn check_input(&self, vis_y: &Plane, ir: &Plane) -> Result<()> {
        vis_y.require_same_shape(ir)?;
        let m = 1usize << self.config.depth;
        if vis_y.h % m != 0 || vis_y.w % m != 0 || vis_y.h == 0 || vis_y.w == 0 {
            return Err(CoreError::NotDivisible {
                dim: if vis_y.h % m != 0 { vis_y.h } else { vis_y.w },
                multiple: m,
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass; deterministic and read-only.
    pub fn forward(&self, vis_y: &Plane, ir: &Plane) -> Result<GuidanceMap> {
        self.check_input(vis_y, ir)?;
        let x = FeatureMap::from_planes(&[vis_y, ir]);
        let d = self.config.depth;
        let mut skips: Vec<FeatureMap> = Vec::with_capacity(d);
        let mut h = x;
        let mut ui = 0;
        for _ in 0..d {
            h = self.units[ui].infer(&h);
            h = self.units[ui + 1].infer(&h);
            ui += 2;
            let (pooled, _) = maxpool2(&h);
            skips.push(h);
            h = pooled;
        }
        if d > 0 {
            h = self.units[ui].infer(&h);
            h = self.units[ui + 1].infer(&h);
            ui += 2;
        }
        for s in (0..d).rev() {
            let up = upsample2_nearest(&h);
            h = concat(&up, &skips[s]);
            h = self.units[ui].infer(&h);
            h = self.units[ui + 1].infer(&h);
            ui += 2;
        }
        let logits = self.units[ui].infer(&h);
        let mu = Plane::new(
            logits.h,
            logits.w,
            logits.data.iter().map(|&v| sigmoid(v)).collect(),
        );
        if !mu.is_finite() {
            return Err(CoreError::NonFinite { stage: "guidance" });
        }
        GuidanceMap::new(mu)
    }

    /// Training-mode forward pass; caches activations and (for batch-style
    /// norm) updates running statistics.
    pub fn forward_train(&mut self, vis_y: &Plane, ir: &Plane) -> Result<(GuidanceMap, Tape)> {
        self.check_input(vis_y, ir)?;
        let x = FeatureMap::from_planes(&[vis_y, ir]);
        let d = self.config.depth;
        let mut caches = Vec::with_capacity(self.units.len());
        let mut pools = Vec::with_capacity(d);
        let mut concat_splits = Vec::with_capacity(d);
        let mut skips: Vec<FeatureMap> = Vec::with_capacity(d);
        let mut h = x;
        let mut ui = 0;
        for _ in 0..d {
            let (y, c) = self.units[ui].forward(h, true);
            caches.push(c);
            let (y2, c2) = self.units[ui + 1].forward(y, true);
            caches.push(c2);
            ui += 2;
            let (pooled, arg) = maxpool2(&y2);
            pools.push((arg, y2.h, y2.w));
            skips.push(y2);
            h = pooled;
        }
        if d > 0 {
            let (y, c) = self.units[ui].forward(h, true);
            caches.push(c);
            let (y2, c2) = self.units[ui + 1].forward(y, true);
            caches.push(c2);
            ui += 2;
            h = y2;
        }
        for s in (0..d).rev() {
            let up = upsample2_nearest(&h);
            concat_splits.push(up.c);
            let joined = concat(&up, &skips[s]);
            let (y, c) = self.units[ui].forward(joined, true);
            caches.push(c);
            let (y2, c2) = self.units[ui + 1].forward(y, true);
            caches.push(c2);
            ui += 2;
            h = y2;
        }
        let (logits, c) = self.units[ui].forward(h, true);
        caches.push(c);
        let mu = Plane::new(
            logits.h,
            logits.w,
            logits.data.iter().map(|&v| sigmoid(v)).collect(),
        );
        if !mu.is_finite() {
            return Err(CoreError::NonFinite { stage: "guidance" });
        }
        let map = GuidanceMap::new(mu.clone())?;
        Ok((
            map,
            Tape {
                units: caches,
                pools,
                concat_splits,
                mu,
            },
        ))
    }

    /// Backward pass: the gradient of a scalar loss with respect to the
    /// output map is folded back into per-parameter gradients.
    pub fn backward(&self, tape: &Tape, g_mu: &Plane) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut unit_grads: Vec<UnitGrads> = self
            .units
            .iter()
            .map(|u| UnitGrads {
                weight: vec![0.0; u.weight.len()],
                bias: vec![0.0; u.bias.len()],
                gamma: vec![0.0; u.gamma.len()],
                beta: vec![0.0; u.beta.len()],
            })
            .collect();

        // through the squashing: d(sigmoid)/d(logit) = mu (1 - mu)
        let g_logits = FeatureMap {
            c: 1,
            h: g_mu.h,
            w: g_mu.w,
            data: g_mu
                .data
                .iter()
                .zip(&tape.mu.data)
                .map(|(&g, &m)| g * m * (1.0 - m))
                .collect(),
        };

        let d = self.config.depth;
        let mut ci = tape.units.len() - 1;
        let mut ui = self.units.len() - 1;
        let mut g = self.units[ui].backward(&tape.units[ci], &g_logits, &mut unit_grads[ui]);

        // decoder blocks were applied for stages d-1 .. 0, so walking the
        // tape backward visits stages 0 .. d-1
        let mut skip_grads: Vec<Option<FeatureMap>> = (0..d).map(|_| None).collect();
        for s in 0..d {
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g, &mut unit_grads[ui]);
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g, &mut unit_grads[ui]);
            let below_c = tape.concat_splits[d - 1 - s];
            let (g_up, g_skip) = split(&g, below_c);
            skip_grads[s] = Some(g_skip);
            g = upsample2_backward(&g_up);
        }

        if d > 0 {
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g, &mut unit_grads[ui]);
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g, &mut unit_grads[ui]);
        }

        for s in (0..d).rev() {
            let (arg, ih, iw) = &tape.pools[s];
            let mut g_in = maxpool2_backward(&g, arg, *ih, *iw);
            if let Some(gs) = &skip_grads[s] {
                for (a, b) in g_in.data.iter_mut().zip(&gs.data) {
                    *a += b;
                }
            }
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g_in, &mut unit_grads[ui]);
            ui -= 1;
            ci -= 1;
            g = self.units[ui].backward(&tape.units[ci], &g, &mut unit_grads[ui]);
        }

        // flatten in parameter order
        let mut out_idx = 0;
        for ug in unit_grads {
            if !ug.weight.is_empty() {
                grads.tensors[out_idx] = ug.weight;
                out_idx += 1;
            }
            if !ug.bias.is_empty() {
                grads.tensors[out_idx] = ug.bias;
                out_idx += 1;
            }
            if !ug.gamma.is_empty() {
                grads.tensors[out_idx] = ug.gamma;
                out_idx += 1;
                grads.tensors[out_idx] = ug.beta;
                out_idx += 1;
            }
        }
        debug_assert_eq!(out_idx, grads.tensors.len());
        grads
    }

    /// Parameter tensor names, in the fixed traversal order shared by
    /// [`Self::params`], [`Self::params_mut`], and [`Gradients`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in &self.units {
            names.push(format!("{}.weight", u.spec.name));
            if !u.bias.is_empty() {
                names.push(format!("{}.bias", u.spec.name));
            }
            if !u.gamma.is_empty() {
                names.push(format!("{}.gamma", u.spec.name));
                names.push(format!("{}.beta", u.spec.name));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Vec<f32>> {
        let mut out = Vec::new();
        for u in &self.units {
            out.push(&u.weight);
            if !u.bias.is_empty() {
                out.push(&u.bias);
            }
            if !u.gamma.is_empty() {
                out.push(&u.gamma);
                out.push(&u.beta);
            }
        }
        out
    }

    /// Logical tensor shapes aligned with [`Self::param_names`]: conv weights
    /// are `[out, in, k, k]`, everything else is flat `[c]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for u in &self.units {
            out.push(alloc::vec![
                u.spec.out_ch,
                u.spec.in_ch,
                u.spec.ksize,
                u.spec.ksize
            ]);
            if !u.bias.is_empty() {
                out.push(alloc::vec![u.spec.out_ch]);
            }
            if !u.gamma.is_empty() {
                out.push(alloc::vec![u.spec.out_ch]);
                out.push(alloc::vec![u.spec.out_ch]);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for u in &mut self.units {
            out.push(&mut u.weight);
            if !u.bias.is_empty() {
                out.push(&mut u.bias);
            }
            if !u.gamma.is_empty() {
                out.push(&mut u.gamma);
                out.push(&mut u.beta);
            }
        }
        out
    }

    /// Non-trainable running statistics (batch-style norm only), as
    /// name/tensor pairs for checkpointing.
    pub fn buffer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for u in &self.units {
            if !u.running_mean.is_empty() {
                names.push(format!("{}.running_mean", u.spec.name));
                names.push(format!("{}.running_var", u.spec.name));
            }
        }
        names
    }

    pub fn buffers(&self) -> Vec<&Vec<f32>> {
        let mut out = Vec::new();
        for u in &self.units {
            if !u.running_mean.is_empty() {
                out.push(&u.running_mean);
                out.push(&u.running_var);
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for u in &mut self.units {
            if !u.running_mean.is_empty() {
                out.push(&mut u.running_mean);
                out.push(&mut u.running_var);
            }
        }
        out
    }
}
