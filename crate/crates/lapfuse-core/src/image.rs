//! Planar float images, the YCbCr luma/chroma split, and reflection padding.
//!
//! All pixel math in this crate happens on 32-bit floats in `[0, 1]`,
//! channel-planar (`data[c * h * w + y * w + x]`). Quantized formats are a
//! concern of the IO layer, not of this module.
//!
//! The color matrix is full-range BT.601: `Y = 0.299 R + 0.587 G + 0.114 B`,
//! with Cb/Cr offset so neutral gray maps to 0.5. The inverse is formed
//! algebraically from the same constants, so a round trip is exact up to a
//! few float ulps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{CoreError, Result};

const KR: f32 = 0.299;
const KG: f32 = 0.587;
const KB: f32 = 0.114;

/// Single-channel float plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "plane data length must be h*w");
        Self { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::constant(h, w, 0.0)
    }

    pub fn constant(h: usize, w: usize, v: f32) -> Self {
        Self {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut f32 {
        &mut self.data[y * self.w + x]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn require_same_shape(&self, other: &Plane) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                expected: (self.h, self.w),
                got: (other.h, other.w),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Channel-planar float image with 1, 2, or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PlanarImage {
    pub fn new(h: usize, w: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(
            (1..=3).contains(&channels),
            "planar images carry 1..=3 channels"
        );
        assert_eq!(data.len(), h * w * channels);
        Self {
            h,
            w,
            channels,
            data,
        }
    }

    pub fn from_planes(planes: &[Plane]) -> Self {
        assert!(!planes.is_empty());
        let (h, w) = (planes[0].h, planes[0].w);
        let mut data = Vec::with_capacity(h * w * planes.len());
        for p in planes {
            assert!(p.h == h && p.w == w);
            data.extend_from_slice(&p.data);
        }
        Self::new(h, w, planes.len(), data)
    }

    pub fn channel(&self, c: usize) -> Plane {
        assert!(c < self.channels);
        let n = self.h * self.w;
        Plane::new(self.h, self.w, self.data[c * n..(c + 1) * n].to_vec())
    }

    pub fn channel_slice(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    /// Promote a grayscale image to 3 channels by replication.
    pub fn to_rgb(&self) -> PlanarImage {
        match self.channels {
            3 => self.clone(),
            1 => {
                let mut data = Vec::with_capacity(self.data.len() * 3);
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                PlanarImage::new(self.h, self.w, 3, data)
            }
            c => panic!("cannot promote {c}-channel image to RGB"),
        }
    }
}

/// Luma plane plus the two chroma planes of a color image.
#[derive(Debug, Clone)]
pub struct YCbCrSplit {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

/// One aligned (visible, infrared) input pair.
#[derive(Debug, Clone)]
pub struct SourcePair {
    /// Shared filename stem used to join the two directories.
    pub id: String,
    /// 3-channel visible image (grayscale inputs are promoted on load).
    pub vis: PlanarImage,
    /// Single-channel infrared (or second-modality) image.
    pub ir: Plane,
}

impl SourcePair {
    pub fn new(id: String, vis: PlanarImage, ir: Plane) -> Result<Self> {
        if vis.channels != 3 {
            return Err(CoreError::ChannelCount {
                expected: 3,
                got: vis.channels,
            });
        }
        if vis.h != ir.h || vis.w != ir.w {
            return Err(CoreError::ShapeMismatch {
                expected: (vis.h, vis.w),
                got: (ir.h, ir.w),
            });
        }
        Ok(Self { id, vis, ir })
    }
}

/// Remembers how an image was padded so outputs can be cropped back exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub original_h: usize,
    pub original_w: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl PadRecord {
    pub fn padded_h(&self) -> usize {
        self.original_h + self.pad_top + self.pad_bottom
    }

    pub fn padded_w(&self) -> usize {
        self.original_w + self.pad_left + self.pad_right
    }
}

/// Split an RGB image into luma and chroma planes.
pub fn rgb_to_ycbcr(img: &PlanarImage) -> Result<YCbCrSplit> {
    if img.channels != 3 {
        return Err(CoreError::ChannelCount {
            expected: 3,
            got: img.channels,
        });
    }
    let n = img.h * img.w;
    let (r, g, b) = (
        img.channel_slice(0),
        img.channel_slice(1),
        img.channel_slice(2),
    );
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for i in 0..n {
        let yy = KR * r[i] + KG * g[i] + KB * b[i];
        y.push(yy);
        cb.push(0.5 + (b[i] - yy) / (2.0 * (1.0 - KB)));
        cr.push(0.5 + (r[i] - yy) / (2.0 * (1.0 - KR)));
    }
    Ok(YCbCrSplit {
        y: Plane::new(img.h, img.w, y),
        cb: Plane::new(img.h, img.w, cb),
        cr: Plane::new(img.h, img.w, cr),
    })
}

/// Algebraic inverse of [`rgb_to_ycbcr`], clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(split: &YCbCrSplit) -> Result<PlanarImage> {
    split.y.require_same_shape(&split.cb)?;
    split.y.require_same_shape(&split.cr)?;
    let n = split.y.h * split.y.w;
    let mut data = vec![0.0f32; 3 * n];
    let (rs, rest) = data.split_at_mut(n);
    let (gs, bs) = rest.split_at_mut(n);
    for i in 0..n {
        let y = split.y.data[i];
        let cb = split.cb.data[i] - 0.5;
        let cr = split.cr.data[i] - 0.5;
        let r = y + 2.0 * (1.0 - KR) * cr;
        let b = y + 2.0 * (1.0 - KB) * cb;
        let g = (y - KR * r - KB * b) / KG;
        rs[i] = r.clamp(0.0, 1.0);
        gs[i] = g.clamp(0.0, 1.0);
        bs[i] = b.clamp(0.0, 1.0);
    }
    Ok(PlanarImage::new(split.y.h, split.y.w, 3, data))
}

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// border sample (period `2n - 2`).
#[inline]
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Reflection-pad a plane so both dimensions become multiples of `multiple`.
///
/// Padding is split evenly between the two sides (the extra pixel, if any,
/// goes to the bottom/right). The returned record allows an exact crop back.
pub fn pad_reflect(img: &Plane, multiple: usize) -> (Plane, PadRecord) {
    assert!(multiple >= 1);
    let target_h = img.h.div_ceil(multiple) * multiple;
    let target_w = img.w.div_ceil(multiple) * multiple;
    let (pad_h, pad_w) = (target_h - img.h, target_w - img.w);
    let record = PadRecord {
        original_h: img.h,
        original_w: img.w,
        pad_top: pad_h / 2,
        pad_bottom: pad_h - pad_h / 2,
        pad_left: pad_w / 2,
        pad_right: pad_w - pad_w / 2,
    };
    (pad_with_record(img, &record), record)
}

/// Reflection-pad according to an existing record (used to keep several
/// planes of one image aligned).
pub fn pad_with_record(img: &Plane, record: &PadRecord) -> Plane {
    assert_eq!((img.h, img.w), (record.original_h, record.original_w));
    let (th, tw) = (record.padded_h(), record.padded_w());
    let mut out = Plane::zeros(th, tw);
    for oy in 0..th {
        let sy = mirror_index(oy as isize - record.pad_top as isize, img.h);
        let src = &img.data[sy * img.w..(sy + 1) * img.w];
        let dst = &mut out.data[oy * tw..(oy + 1) * tw];
        for (ox, d) in dst.iter_mut().enumerate() {
            let sx = mirror_index(ox as isize - record.pad_left as isize, img.w);
            *d = src[sx];
        }
    }
    out
}

/// Adjoint of [`crop_back`]: place gradients in the interior, zeros in the
/// padded margin.
pub fn crop_back_adjoint(grad: &Plane, record: &PadRecord) -> Plane {
    assert_eq!((grad.h, grad.w), (record.original_h, record.original_w));
    let (th, tw) = (record.padded_h(), record.padded_w());
    let mut out = Plane::zeros(th, tw);
    for y in 0..grad.h {
        let dy = y + record.pad_top;
        out.data[dy * tw + record.pad_left..dy * tw + record.pad_left + grad.w]
            .copy_from_slice(&grad.data[y * grad.w..(y + 1) * grad.w]);
    }
    out
}

/// Recover the original extent from a padded plane; bit-exact on float data.
pub fn crop_back(img: &Plane, record: &PadRecord) -> Plane {
    assert_eq!((img.h, img.w), (record.padded_h(), record.padded_w()));
    let mut out = Plane::zeros(record.original_h, record.original_w);
    for y in 0..record.original_h {
        let sy = y + record.pad_top;
        let src = &img.data[sy * img.w + record.pad_left..sy * img.w + record.pad_left + record.original_w];
        out.data[y * record.original_w..(y + 1) * record.original_w].copy_from_slice(src);
    }
    out
}
