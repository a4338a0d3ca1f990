//! End-to-end fusion: color split, padding, guidance prediction, pyramid
//! blend, collapse, crop, and chroma reattachment — plus the matching
//! backward pass used for training.
//!
//! Two modes exist. `Guided` runs the full hybrid pipeline where the network
//! only steers the fixed pyramid kernel. `Direct` is the ablation arm: the
//! same trunk emits the fused luminance itself and the pyramid is bypassed.

use alloc::vec::Vec;

use crate::image::{
    crop_back, crop_back_adjoint, pad_reflect, pad_with_record, rgb_to_ycbcr, ycbcr_to_rgb,
    PadRecord, Plane, PlanarImage, SourcePair, YCbCrSplit,
};
use crate::loss::{total_loss, total_loss_backward, LossBreakdown, LossWeights};
use crate::net::{Gradients, GuidanceNet};
use crate::pyramid::{
    build_pyramid, collapse_pyramid, expand2_adjoint, fuse_pyramids, resize_guidance,
    resize_guidance_adjoint, GuidanceMap, LaplacianPyramid,
};
use crate::{CoreError, Result};

/// Which paradigm produces the fused luminance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FuseMode {
    #[default]
    Guided,
    Direct,
}

/// Debug hook: replace the predicted guidance with a constant map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GuidanceOverride {
    #[default]
    None,
    Constant(f32),
}

/// Pure fusion output; timing and file emission live in the tools layer.
#[derive(Debug, Clone)]
pub struct FusedCore {
    pub fused: PlanarImage,
    pub fused_y: Plane,
    /// Guidance cropped to the original extent (all 0.5 in direct mode,
    /// where no guidance exists).
    pub guidance: GuidanceMap,
}

/// Number of pyramid levels used by the fusion engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuseSettings {
    pub levels: usize,
}

impl Default for FuseSettings {
    fn default() -> Self {
        Self {
            levels: crate::pyramid::DEFAULT_LEVELS,
        }
    }
}

impl FuseSettings {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.levels) {
            return Err(CoreError::InvalidConfig(
                "pyramid levels must lie in 1..=6".into(),
            ));
        }
        Ok(())
    }

    /// Both the pyramid and the network must see aligned dimensions.
    pub fn pad_multiple(&self, net_depth: usize) -> usize {
        1 << self.levels.max(net_depth)
    }
}

/// Split, pad, and align one pair for the pipeline.
pub struct PreparedPair {
    pub split: YCbCrSplit,
    pub y_pad: Plane,
    pub ir_pad: Plane,
    pub record: PadRecord,
}

/// Color split and reflection padding; the first pipeline stage.
pub fn prepare(pair: &SourcePair, multiple: usize) -> Result<PreparedPair> {
    let split = rgb_to_ycbcr(&pair.vis)?;
    let (y_pad, record) = pad_reflect(&split.y, multiple);
    let ir_pad = pad_with_record(&pair.ir, &record);
    Ok(PreparedPair {
        split,
        y_pad,
        ir_pad,
        record,
    })
}

/// Clamp the fused luminance and reattach the untouched chroma planes; the
/// final pipeline stage.
pub fn compose_output(split: YCbCrSplit, mut fused_y: Plane) -> Result<(PlanarImage, Plane)> {
    fused_y.clamp01();
    let fused = ycbcr_to_rgb(&YCbCrSplit {
        y: fused_y.clone(),
        cb: split.cb,
        cr: split.cr,
    })?;
    Ok((fused, fused_y))
}

/// Fuse the padded luminance planes through the pyramid kernel.
pub fn guided_fuse_planes(
    y_pad: &Plane,
    ir_pad: &Plane,
    mu: &GuidanceMap,
    levels: usize,
) -> Result<Plane> {
    let p_vi = build_pyramid(y_pad, levels)?;
    let p_ir = build_pyramid(ir_pad, levels)?;
    let g = resize_guidance(mu, levels)?;
    collapse_pyramid(&fuse_pyramids(&p_vi, &p_ir, &g)?)
}

/// Run the full pipeline on one pair.
pub fn fuse_pair(
    pair: &SourcePair,
    net: &GuidanceNet,
    mode: FuseMode,
    settings: FuseSettings,
    hook: GuidanceOverride,
) -> Result<FusedCore> {
    settings.validate()?;
    let prep = prepare(pair, settings.pad_multiple(net.config().depth))?;

    let mu_pad = match hook {
        GuidanceOverride::Constant(v) => {
            GuidanceMap::constant(prep.y_pad.h, prep.y_pad.w, v)
        }
        GuidanceOverride::None => net.forward(&prep.y_pad, &prep.ir_pad)?,
    };

    let (fused_y_pad, guidance) = match mode {
        FuseMode::Guided => {
            let f = guided_fuse_planes(&prep.y_pad, &prep.ir_pad, &mu_pad, settings.levels)?;
            (f, mu_pad)
        }
        FuseMode::Direct => {
            // the squashed network output IS the fused luminance
            let f = mu_pad.mu.clone();
            let neutral = GuidanceMap::constant(prep.y_pad.h, prep.y_pad.w, 0.5);
            (f, neutral)
        }
    };
    if !fused_y_pad.is_finite() {
        return Err(CoreError::NonFinite { stage: "collapse" });
    }

    let fused_y = crop_back(&fused_y_pad, &prep.record);
    let guidance = GuidanceMap::new(crop_back(&guidance.mu, &prep.record))?;
    let (fused, fused_y) = compose_output(prep.split, fused_y)?;
    Ok(FusedCore {
        fused,
        fused_y,
        guidance,
    })
}

/// Loss and parameter gradients for one pair (one backward pass).
///
/// The loss compares the cropped, unclamped fused luminance against the
/// original planes; gradients flow through the crop, the collapse, the
/// per-level blend, the guidance resizing, and finally the network.
pub fn train_forward_backward(
    net: &mut GuidanceNet,
    pair: &SourcePair,
    weights: &LossWeights,
    mode: FuseMode,
    settings: FuseSettings,
) -> Result<(LossBreakdown, Gradients)> {
    settings.validate()?;
    let prep = prepare(pair, settings.pad_multiple(net.config().depth))?;
    let (mu_pad, tape) = net.forward_train(&prep.y_pad, &prep.ir_pad)?;

    match mode {
        FuseMode::Guided => {
            let p_vi = build_pyramid(&prep.y_pad, settings.levels)?;
            let p_ir = build_pyramid(&prep.ir_pad, settings.levels)?;
            let g = resize_guidance(&mu_pad, settings.levels)?;
            let fused_pyr = fuse_pyramids(&p_vi, &p_ir, &g)?;
            let f_pad = collapse_pyramid(&fused_pyr)?;
            let f = crop_back(&f_pad, &prep.record);

            let breakdown = total_loss(&f, &prep.split.y, &pair.ir, weights)?;
            if !breakdown.is_finite() {
                return Err(CoreError::NonFinite { stage: "loss" });
            }
            let g_f = total_loss_backward(&f, &prep.split.y, &pair.ir, weights)?;
            let g_fpad = crop_back_adjoint(&g_f, &prep.record);

            let level_grads = collapse_adjoint_onto_guidance(&p_vi, &p_ir, g_fpad);
            let g_mu = resize_guidance_adjoint(&level_grads);
            let grads = net.backward(&tape, &g_mu);
            Ok((breakdown, grads))
        }
        FuseMode::Direct => {
            let f = crop_back(&mu_pad.mu, &prep.record);
            let breakdown = total_loss(&f, &prep.split.y, &pair.ir, weights)?;
            if !breakdown.is_finite() {
                return Err(CoreError::NonFinite { stage: "loss" });
            }
            let g_f = total_loss_backward(&f, &prep.split.y, &pair.ir, weights)?;
            let g_mu = crop_back_adjoint(&g_f, &prep.record);
            let grads = net.backward(&tape, &g_mu);
            Ok((breakdown, grads))
        }
    }
}

/// Fold the collapse gradient back onto every guidance level: the collapse
/// adjoint yields per-level gradients, and each level's blend contributes
/// `g_level * (ir_level - vi_level)` to its guidance map.
fn collapse_adjoint_onto_guidance(
    p_vi: &LaplacianPyramid,
    p_ir: &LaplacianPyramid,
    g_fpad: Plane,
) -> Vec<Plane> {
    let k = p_vi.num_levels();
    let mut out = Vec::with_capacity(k + 1);
    let mut g_gauss = g_fpad;
    for lvl in 0..k {
        let diff_dot = |a: &Plane, b: &Plane, g: &Plane| {
            Plane::new(
                g.h,
                g.w,
                g.data
                    .iter()
                    .zip(b.data.iter().zip(&a.data))
                    .map(|(gv, (bi, ai))| gv * (bi - ai))
                    .collect(),
            )
        };
        out.push(diff_dot(&p_vi.levels[lvl], &p_ir.levels[lvl], &g_gauss));
        g_gauss = expand2_adjoint(&g_gauss);
    }
    out.push(Plane::new(
        g_gauss.h,
        g_gauss.w,
        g_gauss
            .data
            .iter()
            .zip(p_ir.residual.data.iter().zip(&p_vi.residual.data))
            .map(|(gv, (bi, ai))| gv * (bi - ai))
            .collect(),
    ));
    out
}
