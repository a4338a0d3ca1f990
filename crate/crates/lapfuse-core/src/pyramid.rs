//! Laplacian pyramid construction/collapse and the guided linear fusion rule.
//!
//! This is the fixed, non-learnable half of the pipeline. The decomposition
//! uses the classic 5-tap binomial kernel `[1,4,6,4,1]/16` with reflected
//! borders; expansion is zero-insertion followed by the same kernel scaled
//! by 4. Reconstruction is exact by construction: each band-pass level is
//! defined as the difference the collapse re-adds.
//!
//! Every operator here is linear, and the module also exposes the exact
//! adjoints (`*_adjoint`) used by the training backward pass. The adjoints
//! account for reflected borders, so gradient checks hold to float accuracy
//! at image edges too.

use alloc::format;
use alloc::vec::Vec;

use crate::image::{
    crop_back, mirror_index, pad_reflect, pad_with_record, rgb_to_ycbcr, ycbcr_to_rgb, Plane,
    PlanarImage, SourcePair, YCbCrSplit,
};
use crate::{CoreError, Result};

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Default decomposition depth; inputs must be padded to multiples of 2^K.
pub const DEFAULT_LEVELS: usize = 4;
/// Padding multiple matching [`DEFAULT_LEVELS`].
pub const PAD_MULTIPLE: usize = 1 << DEFAULT_LEVELS;

/// Band-pass levels plus the low-pass residual of one plane.
#[derive(Debug, Clone)]
pub struct LaplacianPyramid {
    /// `levels[k]` has dimensions `H/2^k x W/2^k`.
    pub levels: Vec<Plane>,
    /// Low-pass plane at `H/2^K x W/2^K`.
    pub residual: Plane,
}

impl LaplacianPyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn validate(&self) -> Result<()> {
        for k in 0..self.levels.len() {
            let (eh, ew) = if k == 0 {
                (self.levels[0].h, self.levels[0].w)
            } else {
                (self.levels[k - 1].h / 2, self.levels[k - 1].w / 2)
            };
            if self.levels[k].h != eh || self.levels[k].w != ew {
                return Err(CoreError::InvalidPyramid(format!(
                    "level {k} is {}x{}, expected {eh}x{ew}",
                    self.levels[k].h, self.levels[k].w
                )));
            }
        }
        let last = self
            .levels
            .last()
            .ok_or_else(|| CoreError::InvalidPyramid("no band-pass levels".into()))?;
        if self.residual.h != last.h / 2 || self.residual.w != last.w / 2 {
            return Err(CoreError::InvalidPyramid(format!(
                "residual is {}x{}, expected {}x{}",
                self.residual.h,
                self.residual.w,
                last.h / 2,
                last.w / 2
            )));
        }
        Ok(())
    }
}

/// Per-pixel fusion weight field, each value in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GuidanceMap {
    pub mu: Plane,
}

impl GuidanceMap {
    pub fn new(mu: Plane) -> Result<Self> {
        if !mu.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(CoreError::InvalidConfig(
                "guidance values must lie in [0,1]".into(),
            ));
        }
        Ok(Self { mu })
    }

    pub fn constant(h: usize, w: usize, v: f32) -> Self {
        Self {
            mu: Plane::constant(h, w, v.clamp(0.0, 1.0)),
        }
    }
}

/// The guidance map resized to every pyramid level (K+1 entries, the last
/// matching the residual).
#[derive(Debug, Clone)]
pub struct GuidancePyramid {
    pub mu_levels: Vec<Plane>,
}

// ---------------------------------------------------------------------------
// Linear resampling operators and their exact adjoints
// ---------------------------------------------------------------------------

fn blur_rows(src: &Plane) -> Plane {
    let (h, w) = (src.h, src.w);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        let dst = &mut out.data[y * w..(y + 1) * w];
        if w >= 5 {
            for x in 0..2 {
                dst[x] = kernel_dot_mirror(row, x, w);
            }
            for x in 2..w - 2 {
                dst[x] = KERNEL[0] * row[x - 2]
                    + KERNEL[1] * row[x - 1]
                    + KERNEL[2] * row[x]
                    + KERNEL[3] * row[x + 1]
                    + KERNEL[4] * row[x + 2];
            }
            for x in w - 2..w {
                dst[x] = kernel_dot_mirror(row, x, w);
            }
        } else {
            for x in 0..w {
                dst[x] = kernel_dot_mirror(row, x, w);
            }
        }
    }
    out
}

#[inline]
fn kernel_dot_mirror(row: &[f32], x: usize, w: usize) -> f32 {
    let mut acc = 0.0;
    for (t, k) in KERNEL.iter().enumerate() {
        let i = mirror_index(x as isize + t as isize - 2, w);
        acc += k * row[i];
    }
    acc
}

fn blur_cols(src: &Plane) -> Plane {
    let (h, w) = (src.h, src.w);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let dst_off = y * w;
        for (t, k) in KERNEL.iter().enumerate() {
            let sy = mirror_index(y as isize + t as isize - 2, h);
            let src_row = &src.data[sy * w..(sy + 1) * w];
            let dst = &mut out.data[dst_off..dst_off + w];
            for x in 0..w {
                dst[x] += k * src_row[x];
            }
        }
    }
    out
}

/// Separable 5-tap binomial blur with reflected borders.
pub fn blur5(src: &Plane) -> Plane {
    blur_cols(&blur_rows(src))
}

fn blur_rows_adjoint(grad: &Plane) -> Plane {
    let (h, w) = (grad.h, grad.w);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let g = &grad.data[y * w..(y + 1) * w];
        let a = &mut out.data[y * w..(y + 1) * w];
        for x in 0..w {
            let gv = g[x];
            for (t, k) in KERNEL.iter().enumerate() {
                let i = mirror_index(x as isize + t as isize - 2, w);
                a[i] += k * gv;
            }
        }
    }
    out
}

fn blur_cols_adjoint(grad: &Plane) -> Plane {
    let (h, w) = (grad.h, grad.w);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let g_off = y * w;
        for (t, k) in KERNEL.iter().enumerate() {
            let sy = mirror_index(y as isize + t as isize - 2, h);
            for x in 0..w {
                out.data[sy * w + x] += k * grad.data[g_off + x];
            }
        }
    }
    out
}

/// Exact adjoint of [`blur5`] (differs from the blur only at borders).
pub fn blur5_adjoint(grad: &Plane) -> Plane {
    blur_rows_adjoint(&blur_cols_adjoint(grad))
}

/// Keep every second sample, starting at (0, 0).
pub fn decimate2(src: &Plane) -> Plane {
    let (h, w) = (src.h / 2, src.w / 2);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = src.data[(2 * y) * src.w + 2 * x];
        }
    }
    out
}

/// Adjoint of [`decimate2`]: place samples on the even grid, zeros elsewhere.
pub fn decimate2_adjoint(grad: &Plane) -> Plane {
    zero_insert2(grad)
}

fn zero_insert2(src: &Plane) -> Plane {
    let (h, w) = (src.h * 2, src.w * 2);
    let mut out = Plane::zeros(h, w);
    for y in 0..src.h {
        for x in 0..src.w {
            out.data[(2 * y) * w + 2 * x] = src.data[y * src.w + x];
        }
    }
    out
}

/// Blur followed by 2x decimation (the pyramid's REDUCE step).
pub fn reduce2(src: &Plane) -> Plane {
    decimate2(&blur5(src))
}

pub fn reduce2_adjoint(grad: &Plane) -> Plane {
    blur5_adjoint(&zero_insert2(grad))
}

/// Zero-insertion upsampling followed by the blur scaled by 4 (EXPAND).
pub fn expand2(src: &Plane) -> Plane {
    let mut out = blur5(&zero_insert2(src));
    for v in &mut out.data {
        *v *= 4.0;
    }
    out
}

/// Exact adjoint of [`expand2`].
pub fn expand2_adjoint(grad: &Plane) -> Plane {
    let mut blurred = blur5_adjoint(grad);
    for v in &mut blurred.data {
        *v *= 4.0;
    }
    decimate2(&blurred)
}

/// 2x2 average pooling; preserves the `[0,1]` range and the global mean.
pub fn avgpool2(src: &Plane) -> Plane {
    let (h, w) = (src.h / 2, src.w / 2);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let base = (2 * y) * src.w + 2 * x;
            out.data[y * w + x] = 0.25
                * (src.data[base]
                    + src.data[base + 1]
                    + src.data[base + src.w]
                    + src.data[base + src.w + 1]);
        }
    }
    out
}

/// Adjoint of [`avgpool2`]: spread each gradient evenly over its 2x2 block.
pub fn avgpool2_adjoint(grad: &Plane) -> Plane {
    let (h, w) = (grad.h * 2, grad.w * 2);
    let mut out = Plane::zeros(h, w);
    for y in 0..grad.h {
        for x in 0..grad.w {
            let g = 0.25 * grad.data[y * grad.w + x];
            let base = (2 * y) * w + 2 * x;
            out.data[base] = g;
            out.data[base + 1] = g;
            out.data[base + w] = g;
            out.data[base + w + 1] = g;
        }
    }
    out
}

fn check_divisible(img: &Plane, levels: usize) -> Result<()> {
    let m = 1usize << levels;
    if img.h % m != 0 || img.h == 0 {
        return Err(CoreError::NotDivisible {
            dim: img.h,
            multiple: m,
        });
    }
    if img.w % m != 0 || img.w == 0 {
        return Err(CoreError::NotDivisible {
            dim: img.w,
            multiple: m,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Build / collapse / fuse
// ---------------------------------------------------------------------------

/// Decompose a plane into `levels` band-pass planes plus a low-pass residual.
pub fn build_pyramid(img: &Plane, levels: usize) -> Result<LaplacianPyramid> {
    if levels == 0 {
        return Err(CoreError::InvalidConfig(
            "pyramid needs at least one level".into(),
        ));
    }
    check_divisible(img, levels)?;
    let mut bands = Vec::with_capacity(levels);
    let mut gaussian = img.clone();
    for _ in 0..levels {
        let next = reduce2(&gaussian);
        let up = expand2(&next);
        let mut band = gaussian;
        for (b, u) in band.data.iter_mut().zip(&up.data) {
            *b -= u;
        }
        bands.push(band);
        gaussian = next;
    }
    Ok(LaplacianPyramid {
        levels: bands,
        residual: gaussian,
    })
}

/// Reconstruct the plane a pyramid was built from.
pub fn collapse_pyramid(pyr: &LaplacianPyramid) -> Result<Plane> {
    pyr.validate()?;
    let mut gaussian = pyr.residual.clone();
    for band in pyr.levels.iter().rev() {
        let mut up = expand2(&gaussian);
        for (u, b) in up.data.iter_mut().zip(&band.data) {
            *u += b;
        }
        gaussian = up;
    }
    Ok(gaussian)
}

/// Resize a guidance map to every pyramid level by successive 2x average
/// pooling. Returns K+1 planes; the first is the input itself.
pub fn resize_guidance(mu: &GuidanceMap, levels: usize) -> Result<GuidancePyramid> {
    check_divisible(&mu.mu, levels)?;
    let mut out = Vec::with_capacity(levels + 1);
    out.push(mu.mu.clone());
    for k in 0..levels {
        let next = avgpool2(&out[k]);
        out.push(next);
    }
    Ok(GuidancePyramid { mu_levels: out })
}

/// Accumulate level gradients back onto the full-resolution guidance map
/// (adjoint of [`resize_guidance`]).
pub fn resize_guidance_adjoint(level_grads: &[Plane]) -> Plane {
    let mut acc = level_grads
        .last()
        .expect("at least one level gradient")
        .clone();
    for g in level_grads.iter().rev().skip(1) {
        let mut up = avgpool2_adjoint(&acc);
        for (u, v) in up.data.iter_mut().zip(&g.data) {
            *u += v;
        }
        acc = up;
    }
    acc
}

/// Per-level linear blend: `fused = (1 - mu) * vi + mu * ir`, applied to
/// every band-pass level and, with the coarsest map, to the residual.
pub fn fuse_pyramids(
    p_vi: &LaplacianPyramid,
    p_ir: &LaplacianPyramid,
    g: &GuidancePyramid,
) -> Result<LaplacianPyramid> {
    let k = p_vi.num_levels();
    if p_ir.num_levels() != k || g.mu_levels.len() != k + 1 {
        return Err(CoreError::InvalidPyramid(format!(
            "level counts disagree: vi={}, ir={}, guidance={}",
            k,
            p_ir.num_levels(),
            g.mu_levels.len()
        )));
    }
    let mut levels = Vec::with_capacity(k);
    for i in 0..k {
        p_vi.levels[i].require_same_shape(&p_ir.levels[i])?;
        p_vi.levels[i].require_same_shape(&g.mu_levels[i])?;
        levels.push(lerp_planes(&p_vi.levels[i], &p_ir.levels[i], &g.mu_levels[i]));
    }
    p_vi.residual.require_same_shape(&p_ir.residual)?;
    p_vi.residual.require_same_shape(&g.mu_levels[k])?;
    let residual = lerp_planes(&p_vi.residual, &p_ir.residual, &g.mu_levels[k]);
    Ok(LaplacianPyramid { levels, residual })
}

fn lerp_planes(a: &Plane, b: &Plane, t: &Plane) -> Plane {
    let mut out = Plane::zeros(a.h, a.w);
    for i in 0..a.data.len() {
        let m = t.data[i];
        out.data[i] = (1.0 - m) * a.data[i] + m * b.data[i];
    }
    out
}

/// Collapse the per-level pointwise min/max envelopes of two pyramids.
///
/// Expansion has nonnegative coefficients, so for ANY guidance values in
/// `[0,1]` the fused reconstruction lies between the two returned planes.
pub fn envelope_reconstructions(
    p_vi: &LaplacianPyramid,
    p_ir: &LaplacianPyramid,
) -> Result<(Plane, Plane)> {
    let min_of = |a: &Plane, b: &Plane| {
        Plane::new(
            a.h,
            a.w,
            a.data.iter().zip(&b.data).map(|(x, y)| x.min(*y)).collect(),
        )
    };
    let max_of = |a: &Plane, b: &Plane| {
        Plane::new(
            a.h,
            a.w,
            a.data.iter().zip(&b.data).map(|(x, y)| x.max(*y)).collect(),
        )
    };
    let lo = LaplacianPyramid {
        levels: p_vi
            .levels
            .iter()
            .zip(&p_ir.levels)
            .map(|(a, b)| min_of(a, b))
            .collect(),
        residual: min_of(&p_vi.residual, &p_ir.residual),
    };
    let hi = LaplacianPyramid {
        levels: p_vi
            .levels
            .iter()
            .zip(&p_ir.levels)
            .map(|(a, b)| max_of(a, b))
            .collect(),
        residual: max_of(&p_vi.residual, &p_ir.residual),
    };
    Ok((collapse_pyramid(&lo)?, collapse_pyramid(&hi)?))
}

// ---------------------------------------------------------------------------
// Classical (network-free) fusion baselines
// ---------------------------------------------------------------------------

/// Network-free fusion rules used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalRule {
    /// Max-absolute selection on band-pass levels, 0.5/0.5 residual average.
    LaplacianDefault,
    /// Eq-style linear blend driven by min-max normalized IR intensity.
    HeuristicIrWeight,
}

/// Fuse a pair with a classical rule; chroma is reattached exactly as in the
/// learned pipeline.
pub fn classical_fuse(pair: &SourcePair, rule: ClassicalRule) -> Result<PlanarImage> {
    let split = rgb_to_ycbcr(&pair.vis)?;
    let (y_pad, rec) = pad_reflect(&split.y, PAD_MULTIPLE);
    let ir_pad = pad_with_record(&pair.ir, &rec);
    let p_vi = build_pyramid(&y_pad, DEFAULT_LEVELS)?;
    let p_ir = build_pyramid(&ir_pad, DEFAULT_LEVELS)?;

    let fused_pyr = match rule {
        ClassicalRule::LaplacianDefault => {
            let levels = p_vi
                .levels
                .iter()
                .zip(&p_ir.levels)
                .map(|(a, b)| {
                    Plane::new(
                        a.h,
                        a.w,
                        a.data
                            .iter()
                            .zip(&b.data)
                            .map(|(x, y)| if x.abs() >= y.abs() { *x } else { *y })
                            .collect(),
                    )
                })
                .collect();
            let residual = Plane::new(
                p_vi.residual.h,
                p_vi.residual.w,
                p_vi.residual
                    .data
                    .iter()
                    .zip(&p_ir.residual.data)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            );
            LaplacianPyramid { levels, residual }
        }
        ClassicalRule::HeuristicIrWeight => {
            let mu = normalized_intensity_map(&ir_pad);
            let g = resize_guidance(&mu, DEFAULT_LEVELS)?;
            fuse_pyramids(&p_vi, &p_ir, &g)?
        }
    };

    let fused_y = crop_back(&collapse_pyramid(&fused_pyr)?, &rec);
    let mut fused_y = fused_y;
    fused_y.clamp01();
    ycbcr_to_rgb(&YCbCrSplit {
        y: fused_y,
        cb: split.cb,
        cr: split.cr,
    })
}

/// Min-max normalize a plane into a guidance map. A constant plane has no
/// contrast to rank, so it degenerates to all zeros (the visible image wins).
pub fn normalized_intensity_map(ir: &Plane) -> GuidanceMap {
    let lo = ir.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = ir.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    if !(range > 1e-12) {
        return GuidanceMap::constant(ir.h, ir.w, 0.0);
    }
    GuidanceMap {
        mu: Plane::new(
            ir.h,
            ir.w,
            ir.data.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect(),
        ),
    }
}
