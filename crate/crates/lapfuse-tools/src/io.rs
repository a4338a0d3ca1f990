//! PNG loading and saving. 8-bit and 16-bit PNGs are accepted on load; all
//! internal math runs on f32 in [0,1]. Saving clamps and quantizes with
//! round-half-away-from-zero.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use lapfuse_core::{Plane, PlanarImage};

use crate::error::{Result, ToolsError};

/// Load a PNG into a planar float image (1 or 3 channels; alpha dropped,
/// 16-bit honored).
pub fn load_png(path: &Path) -> Result<PlanarImage> {
    let img = image::open(path).map_err(|source| ToolsError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match img {
        DynamicImage::ImageLuma8(b) => {
            let (w, h) = (b.width() as usize, b.height() as usize);
            PlanarImage::new(h, w, 1, b.into_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(b) => {
            let (w, h) = (b.width() as usize, b.height() as usize);
            PlanarImage::new(
                h,
                w,
                1,
                b.into_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
            )
        }
        other => {
            // any color/alpha variant: go through rgb16 to keep bit depth
            let rgb = other.into_rgb16();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let n = h * w;
            let mut data = vec![0.0f32; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    data[c * n + i] = raw[3 * i + c] as f32 / 65535.0;
                }
            }
            PlanarImage::new(h, w, 3, data)
        }
    })
}

fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a 1- or 3-channel planar image as an 8-bit PNG.
pub fn save_png8(path: &Path, img: &PlanarImage) -> Result<()> {
    let (h, w) = (img.h as u32, img.w as u32);
    let n = img.h * img.w;
    let err = |source| ToolsError::Image {
        path: path.to_path_buf(),
        source,
    };
    match img.channels {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, img.data.iter().map(|&v| quantize8(v)).collect())
                    .expect("sized buffer");
            buf.save(path).map_err(err)
        }
        3 => {
            let mut raw = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    raw[3 * i + c] = quantize8(img.data[c * n + i]);
                }
            }
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, raw).expect("sized buffer");
            buf.save(path).map_err(err)
        }
        c => Err(ToolsError::Dataset(format!(
            "cannot save {c}-channel image as PNG"
        ))),
    }
}

/// Save a single plane as a 16-bit grayscale PNG (used for guidance maps:
/// value * 65535, rounded).
pub fn save_png16_gray(path: &Path, plane: &Plane) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        plane.w as u32,
        plane.h as u32,
        plane
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect(),
    )
    .expect("sized buffer");
    buf.save(path).map_err(|source| ToolsError::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn png8_round_trip_is_exact_on_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.png");
        let n = 4 * 5;
        let data: Vec<f32> = (0..3 * n).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = PlanarImage::new(4, 5, 3, data);
        save_png8(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 255.0 / 2.0 + 1e-6);
        }
    }

    #[test]
    fn png16_guidance_export_quantizes_to_65535() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mu.png");
        let plane = Plane::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]);
        save_png16_gray(&path, &plane).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels, 1);
        for (a, b) in plane.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 65535.0);
        }
    }

    #[test]
    fn gray_png_loads_single_channel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = PlanarImage::new(3, 3, 1, vec![0.5; 9]);
        save_png8(&path, &img).unwrap();
        assert_eq!(load_png(&path).unwrap().channels, 1);
    }
}
