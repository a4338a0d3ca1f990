//! Fusion quality metrics: EN, MI, VIF, Qabf, SSIM, and the composite
//! reward, with the summed-over-both-sources reporting convention.
//!
//! Conventions (also embedded in emitted report headers):
//! - Histogram metrics (EN, MI) run on 256-bin quantized luminance.
//! - SSIM/VIF/Qabf run on float luminance scaled to [0, 255].
//! - MI, VIF, and SSIM are reported summed over both sources, so scores
//!   above 1 are expected; EN describes the fused image alone and Qabf is
//!   inherently joint.
//! - VIF is the 4-scale Gaussian-subband pixel-domain formulation with
//!   sigma_n^2 = 2; undersized inputs drop scales, recorded in the report.
//! - Qabf uses the classic edge-transfer model: Sobel strength/orientation,
//!   sigmoid preservation with constants (0.9994, -15, 0.5) for strength and
//!   (0.9879, -22, 0.8) for orientation, weighted by source edge strength.
//!
//! Everything is computed serially in f64, so reports are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{rgb_to_ycbcr, Plane, PlanarImage, SourcePair};
use crate::{CoreError, Result};

/// One image's metric row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Shannon entropy of the fused luminance histogram, in bits.
    pub en: f64,
    /// MI(vis, fused) + MI(ir, fused), in bits.
    pub mi_total: f64,
    /// VIF(vis, fused) + VIF(ir, fused).
    pub vif_total: f64,
    /// Edge-transfer ratio in [0, 1].
    pub qabf: f64,
    /// SSIM(vis, fused) + SSIM(ir, fused), in [-2, 2].
    pub ssim_total: f64,
    /// (VIF + 1.5 Qabf + SSIM) / 3 on the summed totals.
    pub reward: f64,
    /// VIF scales actually used (4 unless the input was too small).
    pub vif_scales: usize,
}

/// The grid-search selection score.
pub fn composite_reward(vif_total: f64, qabf: f64, ssim_total: f64) -> f64 {
    (vif_total + 1.5 * qabf + ssim_total) / 3.0
}

/// Quantize a [0,1] plane to 8-bit levels (round half away from zero).
pub fn quantize_256(p: &Plane) -> Vec<u8> {
    p.data
        .iter()
        .map(|v| libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8)
        .collect()
}

fn histogram_256(q: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in q {
        h[v as usize] += 1;
    }
    h
}

fn entropy_from_hist(hist: &[u64; 256], n: u64) -> f64 {
    let mut e = 0.0;
    for &c in hist {
        if c > 0 {
            let p = c as f64 / n as f64;
            e -= p * libm::log2(p);
        }
    }
    e
}

/// Shannon entropy of the 256-bin intensity histogram, in bits.
pub fn entropy(img: &Plane) -> f64 {
    let q = quantize_256(img);
    entropy_from_hist(&histogram_256(&q), q.len() as u64)
}

/// Mutual information between two planes from the 256x256 joint histogram.
pub fn mutual_information(a: &Plane, f: &Plane) -> Result<f64> {
    a.require_same_shape(f)?;
    let qa = quantize_256(a);
    let qf = quantize_256(f);
    let n = qa.len() as f64;
    let mut joint = vec![0u64; 256 * 256];
    for (&x, &y) in qa.iter().zip(&qf) {
        joint[x as usize * 256 + y as usize] += 1;
    }
    let ha = histogram_256(&qa);
    let hf = histogram_256(&qf);
    let mut mi = 0.0;
    for x in 0..256 {
        if ha[x] == 0 {
            continue;
        }
        let px = ha[x] as f64 / n;
        for y in 0..256 {
            let c = joint[x * 256 + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let py = hf[y] as f64 / n;
            mi += pxy * libm::log2(pxy / (px * py));
        }
    }
    Ok(mi)
}

// ---------------------------------------------------------------------------
// f64 helpers
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Mat {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Mat {
    fn from_plane_scaled(p: &Plane, scale: f64) -> Self {
        Self {
            h: p.h,
            w: p.w,
            data: p.data.iter().map(|&v| v as f64 * scale).collect(),
        }
    }

    fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

fn gaussian_window_f64(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Separable valid-mode filter.
fn filter_valid(m: &Mat, win: &[f64]) -> Mat {
    let k = win.len();
    let (oh, ow) = (m.h - k + 1, m.w - k + 1);
    let mut tmp = Mat::zeros(m.h, ow);
    for y in 0..m.h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wv) in win.iter().enumerate() {
                acc += wv * m.at(y, x + t);
            }
            tmp.data[y * ow + x] = acc;
        }
    }
    let mut out = Mat::zeros(oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wv) in win.iter().enumerate() {
                acc += wv * tmp.at(y + t, x);
            }
            out.data[y * ow + x] = acc;
        }
    }
    out
}

fn decimate2(m: &Mat) -> Mat {
    let (h, w) = (m.h.div_ceil(2), m.w.div_ceil(2));
    let mut out = Mat::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = m.at(2 * y, 2 * x);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// VIF
// ---------------------------------------------------------------------------

const VIF_SIGMA_NSQ: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;

/// Pixel-domain multi-scale visual information fidelity on [0,255]-scaled
/// data. Returns the ratio and the number of scales that fit the input.
pub fn vif(reference: &Plane, distorted: &Plane) -> Result<(f64, usize)> {
    reference.require_same_shape(distorted)?;
    let mut r = Mat::from_plane_scaled(reference, 255.0);
    let mut d = Mat::from_plane_scaled(distorted, 255.0);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut scales_used = 0;
    for scale in 1..=4usize {
        let n_win = (1 << (4 - scale + 1)) + 1; // 17, 9, 5, 3
        let win = gaussian_window_f64(n_win, n_win as f64 / 5.0);
        if scale > 1 {
            if r.h < n_win || r.w < n_win {
                break;
            }
            r = decimate2(&filter_valid(&r, &win));
            d = decimate2(&filter_valid(&d, &win));
        }
        if r.h < n_win || r.w < n_win {
            break;
        }
        let mu1 = filter_valid(&r, &win);
        let mu2 = filter_valid(&d, &win);
        let rr = Mat {
            h: r.h,
            w: r.w,
            data: r.data.iter().map(|v| v * v).collect(),
        };
        let dd = Mat {
            h: d.h,
            w: d.w,
            data: d.data.iter().map(|v| v * v).collect(),
        };
        let rd = Mat {
            h: r.h,
            w: r.w,
            data: r.data.iter().zip(&d.data).map(|(a, b)| a * b).collect(),
        };
        let e_rr = filter_valid(&rr, &win);
        let e_dd = filter_valid(&dd, &win);
        let e_rd = filter_valid(&rd, &win);
        for i in 0..mu1.data.len() {
            let m1 = mu1.data[i];
            let m2 = mu2.data[i];
            let mut sigma1_sq = (e_rr.data[i] - m1 * m1).max(0.0);
            let sigma2_sq = (e_dd.data[i] - m2 * m2).max(0.0);
            let sigma12 = e_rd.data[i] - m1 * m2;

            let mut g = sigma12 / (sigma1_sq + VIF_EPS);
            let mut sv_sq = sigma2_sq - g * sigma12;
            if sigma1_sq < VIF_EPS {
                g = 0.0;
                sv_sq = sigma2_sq;
                sigma1_sq = 0.0;
            }
            if g < 0.0 {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            if sv_sq <= VIF_EPS {
                sv_sq = VIF_EPS;
            }
            num += libm::log10(1.0 + g * g * sigma1_sq / (sv_sq + VIF_SIGMA_NSQ));
            den += libm::log10(1.0 + sigma1_sq / VIF_SIGMA_NSQ);
        }
        scales_used = scale;
    }
    if scales_used == 0 {
        return Err(CoreError::TooSmall {
            min: 17,
            got: reference.h.min(reference.w),
        });
    }
    // a reference with no information carries nothing to lose
    let ratio = if den == 0.0 { 1.0 } else { num / den };
    Ok((ratio, scales_used))
}

// ---------------------------------------------------------------------------
// SSIM (metric flavor, f64 on [0,255])
// ---------------------------------------------------------------------------

/// Mean local SSIM with the 11x11 sigma-1.5 Gaussian window on
/// [0,255]-scaled data.
pub fn ssim_metric(a: &Plane, b: &Plane) -> Result<f64> {
    a.require_same_shape(b)?;
    let k = crate::loss::SSIM_WINDOW;
    if a.h < k || a.w < k {
        return Err(CoreError::TooSmall {
            min: k,
            got: a.h.min(a.w),
        });
    }
    let win = gaussian_window_f64(k, crate::loss::SSIM_SIGMA as f64);
    let x = Mat::from_plane_scaled(a, 255.0);
    let y = Mat::from_plane_scaled(b, 255.0);
    let c1 = (0.01 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03 * 255.0) * (0.03 * 255.0);
    let mu_x = filter_valid(&x, &win);
    let mu_y = filter_valid(&y, &win);
    let xx = Mat {
        h: x.h,
        w: x.w,
        data: x.data.iter().map(|v| v * v).collect(),
    };
    let yy = Mat {
        h: y.h,
        w: y.w,
        data: y.data.iter().map(|v| v * v).collect(),
    };
    let xy = Mat {
        h: x.h,
        w: x.w,
        data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
    };
    let e_xx = filter_valid(&xx, &win);
    let e_yy = filter_valid(&yy, &win);
    let e_xy = filter_valid(&xy, &win);
    let mut sum = 0.0;
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let sx = e_xx.data[i] - mx * mx;
        let sy = e_yy.data[i] - my * my;
        let sxy = e_xy.data[i] - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
            / ((mx * mx + my * my + c1) * (sx + sy + c2));
    }
    Ok(sum / mu_x.data.len() as f64)
}

// ---------------------------------------------------------------------------
// Qabf
// ---------------------------------------------------------------------------

const QABF_GAMMA_G: f64 = 0.9994;
const QABF_KAPPA_G: f64 = -15.0;
const QABF_SIGMA_G: f64 = 0.5;
const QABF_GAMMA_A: f64 = 0.9879;
const QABF_KAPPA_A: f64 = -22.0;
const QABF_SIGMA_A: f64 = 0.8;

struct EdgeField {
    strength: Vec<f64>,
    orientation: Vec<f64>,
}

fn sobel_edges(p: &Plane) -> EdgeField {
    let (h, w) = (p.h, p.w);
    let kx = [[-1.0f64, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0f64, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut strength = vec![0.0; h * w];
    let mut orientation = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..3usize {
                let sy = crate::image::mirror_index(y as isize + i as isize - 1, h);
                for j in 0..3usize {
                    let sx = crate::image::mirror_index(x as isize + j as isize - 1, w);
                    let v = p.at(sy, sx) as f64 * 255.0;
                    gx += kx[i][j] * v;
                    gy += ky[i][j] * v;
                }
            }
            strength[y * w + x] = libm::sqrt(gx * gx + gy * gy);
            orientation[y * w + x] = if gx == 0.0 {
                core::f64::consts::FRAC_PI_2
            } else {
                libm::atan(gy / gx)
            };
        }
    }
    EdgeField {
        strength,
        orientation,
    }
}

fn edge_preservation(src: &EdgeField, fused: &EdgeField, i: usize) -> f64 {
    let (ga, gf) = (src.strength[i], fused.strength[i]);
    let g_rel = if ga > gf {
        gf / ga
    } else if gf > ga {
        ga / gf
    } else if ga == 0.0 {
        0.0
    } else {
        1.0
    };
    let a_rel = 1.0
        - (src.orientation[i] - fused.orientation[i]).abs() / core::f64::consts::FRAC_PI_2;
    let qg = QABF_GAMMA_G / (1.0 + libm::exp(QABF_KAPPA_G * (g_rel - QABF_SIGMA_G)));
    let qa = QABF_GAMMA_A / (1.0 + libm::exp(QABF_KAPPA_A * (a_rel - QABF_SIGMA_A)));
    qg * qa
}

/// Xydeas–Petrovic edge-transfer metric: how much source edge structure
/// survives into the fused image, weighted by source edge strength.
pub fn qabf(a: &Plane, b: &Plane, f: &Plane) -> Result<f64> {
    a.require_same_shape(b)?;
    a.require_same_shape(f)?;
    if a.h < 3 || a.w < 3 {
        return Err(CoreError::TooSmall {
            min: 3,
            got: a.h.min(a.w),
        });
    }
    let ea = sobel_edges(a);
    let eb = sobel_edges(b);
    let ef = sobel_edges(f);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..ea.strength.len() {
        let (wa, wb) = (ea.strength[i], eb.strength[i]);
        num += edge_preservation(&ea, &ef, i) * wa + edge_preservation(&eb, &ef, i) * wb;
        den += wa + wb;
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

// ---------------------------------------------------------------------------
// Aggregate evaluation
// ---------------------------------------------------------------------------

/// Score one fused image against its source pair. All metrics run on
/// luminance planes.
pub fn evaluate(pair: &SourcePair, fused: &PlanarImage) -> Result<MetricReport> {
    if fused.h != pair.vis.h || fused.w != pair.vis.w {
        return Err(CoreError::ShapeMismatch {
            expected: (pair.vis.h, pair.vis.w),
            got: (fused.h, fused.w),
        });
    }
    let fy = if fused.channels == 3 {
        rgb_to_ycbcr(fused)?.y
    } else {
        fused.channel(0)
    };
    let vy = rgb_to_ycbcr(&pair.vis)?.y;
    let ir = &pair.ir;

    let en = entropy(&fy);
    let mi_total = mutual_information(&vy, &fy)? + mutual_information(ir, &fy)?;
    let (vif_a, sa) = vif(&vy, &fy)?;
    let (vif_b, sb) = vif(ir, &fy)?;
    let vif_total = vif_a + vif_b;
    let ssim_total = ssim_metric(&vy, &fy)? + ssim_metric(ir, &fy)?;
    let q = qabf(&vy, ir, &fy)?;
    Ok(MetricReport {
        en,
        mi_total,
        vif_total,
        qabf: q,
        ssim_total,
        reward: composite_reward(vif_total, q, ssim_total),
        vif_scales: sa.min(sb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PlanarImage;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng) -> f32 {
        (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32
    }

    fn random_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(h, w, (0..h * w).map(|_| uniform(&mut rng)).collect())
    }

    /// Noise smoothed by the pyramid blur, more like a natural image.
    fn smooth_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut p = random_plane(h, w, seed);
        for _ in 0..2 {
            p = crate::pyramid::blur5(&p);
        }
        p
    }

    #[test]
    fn entropy_anchor_values() {
        assert_eq!(entropy(&Plane::constant(16, 16, 0.5)), 0.0);

        // every 8-bit level exactly once
        let data: Vec<f32> = (0..256).map(|v| v as f32 / 255.0).collect();
        let img = Plane::new(16, 16, data);
        assert_eq!(entropy(&img), 8.0);

        // two levels, 50/50
        let data: Vec<f32> = (0..256).map(|v| if v % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let img = Plane::new(16, 16, data);
        assert_eq!(entropy(&img), 1.0);
    }

    #[test]
    fn mi_of_identical_planes_is_entropy() {
        let x = random_plane(32, 32, 3);
        let mi = mutual_information(&x, &x).unwrap();
        assert!((mi - entropy(&x)).abs() < 1e-9);
    }

    #[test]
    fn mi_of_independent_noise_is_small() {
        // The plug-in MI estimator on a 256x256 joint histogram carries the
        // Miller-Madow bias (Ka-1)(Kf-1)/(2 N ln 2); independence means the
        // estimate sits at the bias, not at zero.
        let a = random_plane(256, 256, 11);
        let b = random_plane(256, 256, 12);
        let mi = mutual_information(&a, &b).unwrap();
        let n = (256 * 256) as f64;
        let bias = (255.0 * 255.0) / (2.0 * n * core::f64::consts::LN_2);
        assert!((mi - bias).abs() < 0.2, "mi {mi}, expected bias {bias}");
    }

    #[test]
    fn vif_self_is_one_and_degrades_with_blur() {
        let x = smooth_plane(128, 128, 7);
        let (v, scales) = vif(&x, &x).unwrap();
        assert_eq!(scales, 4);
        assert!((v - 1.0).abs() < 1e-6, "vif(x,x) = {v}");

        let mild = crate::pyramid::blur5(&x);
        let strong = {
            let mut b = mild.clone();
            for _ in 0..4 {
                b = crate::pyramid::blur5(&b);
            }
            b
        };
        let (v_mild, _) = vif(&x, &mild).unwrap();
        let (v_strong, _) = vif(&x, &strong).unwrap();
        assert!(
            v_strong < v_mild,
            "strong blur {v_strong} should lose more information than mild {v_mild}"
        );
    }

    #[test]
    fn vif_small_input_uses_fewer_scales() {
        let x = smooth_plane(32, 32, 9);
        let (_, scales) = vif(&x, &x).unwrap();
        assert!(scales < 4, "32x32 cannot support all scales");
        assert!(vif(&Plane::zeros(8, 8), &Plane::zeros(8, 8)).is_err());
    }

    #[test]
    fn ssim_metric_self_identity() {
        let x = random_plane(32, 32, 5);
        assert!((ssim_metric(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    /// Independent per-pixel oracle for the edge-transfer metric.
    fn oracle_qabf(a: &Plane, b: &Plane, f: &Plane) -> f64 {
        let fields: Vec<EdgeField> = [a, b, f].iter().map(|p| sobel_edges(p)).collect();
        let (ea, eb, ef) = (&fields[0], &fields[1], &fields[2]);
        let q = |src: &EdgeField, i: usize| -> f64 {
            let (gs, gf) = (src.strength[i], ef.strength[i]);
            let g = if gs > gf {
                gf / gs
            } else if gf > gs {
                gs / gf
            } else if gs == 0.0 {
                0.0
            } else {
                1.0
            };
            let al = 1.0
                - (src.orientation[i] - ef.orientation[i]).abs()
                    / core::f64::consts::FRAC_PI_2;
            (0.9994 / (1.0 + libm::exp(-15.0 * (g - 0.5))))
                * (0.9879 / (1.0 + libm::exp(-22.0 * (al - 0.8))))
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..ea.strength.len() {
            num += q(ea, i) * ea.strength[i] + q(eb, i) * eb.strength[i];
            den += ea.strength[i] + eb.strength[i];
        }
        num / den
    }

    #[test]
    fn qabf_self_transfer_saturates() {
        let x = smooth_plane(32, 32, 21);
        let v = qabf(&x, &x, &x).unwrap();
        assert!(v > 0.95, "self transfer {v}");
        assert!((v - oracle_qabf(&x, &x, &x)).abs() < 1e-12);
    }

    #[test]
    fn qabf_constant_fused_transfers_nothing() {
        let a = smooth_plane(32, 32, 22);
        let b = smooth_plane(32, 32, 23);
        let f = Plane::constant(32, 32, 0.5);
        let v = qabf(&a, &b, &f).unwrap();
        assert!(v < 0.05, "constant fused {v}");
    }

    #[test]
    fn qabf_is_symmetric_in_sources() {
        let a = random_plane(24, 24, 31);
        let b = random_plane(24, 24, 32);
        let f = random_plane(24, 24, 33);
        assert_eq!(qabf(&a, &b, &f).unwrap(), qabf(&b, &a, &f).unwrap());
        assert!((qabf(&a, &b, &f).unwrap() - oracle_qabf(&a, &b, &f)).abs() < 1e-12);
    }

    #[test]
    fn reward_formula_anchor() {
        assert!((composite_reward(1.0, 0.6, 1.4) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn evaluate_degenerate_copy_identities() {
        let y = smooth_plane(64, 96, 40);
        let vis = PlanarImage::from_planes(&[y.clone(), y.clone(), y.clone()]);
        let pair = SourcePair::new("x".into(), vis.clone(), y).unwrap();
        // fused == both sources (vis is gray so its luminance equals y)
        let rep = evaluate(&pair, &vis).unwrap();
        assert!((rep.ssim_total - 2.0).abs() < 1e-9);
        assert!((rep.vif_total - 2.0).abs() < 1e-6);
        assert!((rep.mi_total - 2.0 * rep.en).abs() < 1e-9);
        assert!(
            (rep.reward - composite_reward(rep.vif_total, rep.qabf, rep.ssim_total)).abs()
                < 1e-12
        );
    }

    #[test]
    fn evaluate_is_deterministic() {
        let vis = PlanarImage::from_planes(&[
            smooth_plane(48, 48, 50),
            smooth_plane(48, 48, 51),
            smooth_plane(48, 48, 52),
        ]);
        let ir = smooth_plane(48, 48, 53);
        let fused = PlanarImage::from_planes(&[
            smooth_plane(48, 48, 54),
            smooth_plane(48, 48, 55),
            smooth_plane(48, 48, 56),
        ]);
        let pair = SourcePair::new("d".into(), vis, ir).unwrap();
        let a = evaluate(&pair, &fused).unwrap();
        let b = evaluate(&pair, &fused).unwrap();
        assert_eq!(a.en.to_bits(), b.en.to_bits());
        assert_eq!(a.mi_total.to_bits(), b.mi_total.to_bits());
        assert_eq!(a.vif_total.to_bits(), b.vif_total.to_bits());
        assert_eq!(a.qabf.to_bits(), b.qabf.to_bits());
        assert_eq!(a.ssim_total.to_bits(), b.ssim_total.to_bits());
        assert_eq!(a.reward.to_bits(), b.reward.to_bits());
    }

    #[test]
    fn report_ranges_on_random_inputs() {
        for seed in 0..5u64 {
            let vis = PlanarImage::from_planes(&[
                smooth_plane(48, 48, 100 + seed),
                smooth_plane(48, 48, 200 + seed),
                smooth_plane(48, 48, 300 + seed),
            ]);
            let ir = smooth_plane(48, 48, 400 + seed);
            let fused = PlanarImage::from_planes(&[
                smooth_plane(48, 48, 500 + seed),
                smooth_plane(48, 48, 600 + seed),
                smooth_plane(48, 48, 700 + seed),
            ]);
            let pair = SourcePair::new("r".into(), vis, ir).unwrap();
            let rep = evaluate(&pair, &fused).unwrap();
            assert!((0.0..=8.0).contains(&rep.en));
            assert!((0.0..=1.0).contains(&rep.qabf));
            assert!((-2.0..=2.0).contains(&rep.ssim_total));
            assert!(rep.mi_total >= 0.0);
        }
    }
}
