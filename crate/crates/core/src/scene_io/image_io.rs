//! 8-bit PNG / PPM images.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::{read_file, write_atomic, IoError, IoResult};
use crate::core::{Image, PixelMask};

/// Linear `[0, 1]` to 8 bits, rounding half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The sRGB transfer curve, for viewing.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn format_for(path: &Path) -> IoResult<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(IoError::Parse {
            path: path.to_path_buf(),
            message: "unsupported image extension (use .png or .ppm)".into(),
        }),
    }
}

pub fn encode_image(img: &Image, path: &Path, srgb: bool) -> IoResult<Vec<u8>> {
    let format = format_for(path)?;
    let mut buf = RgbImage::new(img.width() as u32, img.height() as u32);
    for (px, v) in buf.pixels_mut().zip(img.pixels()) {
        let f = |x: f64| quantize(if srgb { linear_to_srgb(x) } else { x });
        *px = image::Rgb([f(v[0]), f(v[1]), f(v[2])]);
    }
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, format).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(out.into_inner())
}

/// Encodes fully in memory, then writes atomically.
pub fn save_image(img: &Image, path: &Path, srgb: bool) -> IoResult<()> {
    let bytes = encode_image(img, path, srgb)?;
    write_atomic(path, &bytes)
}

fn decode(path: &Path) -> IoResult<RgbImage> {
    let bytes = read_file(path)?;
    let img = image::load_from_memory(&bytes).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Loads an 8-bit image as linear values `v / 255`.
pub fn load_image(path: &Path) -> IoResult<Image> {
    let img = decode(path)?;
    let pixels = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Image::from_pixels(img.width() as usize, img.height() as usize, pixels)?)
}

/// Pixels with any channel above 127 are selected.
pub fn load_mask(path: &Path) -> IoResult<PixelMask> {
    let img = decode(path)?;
    let bits = img.pixels().map(|p| p.0.iter().any(|&c| c > 127)).collect();
    Ok(PixelMask::new(img.width() as usize, img.height() as usize, bits)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_away() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3);
        for (i, p) in img.pixels_mut().iter_mut().enumerate() {
            *p = [i as f64 / 14.0, 0.5, 1.0 - i as f64 / 14.0];
        }
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            save_image(&img, &path, false).unwrap();
            let back = load_image(&path).unwrap();
            assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
        }
        assert!(save_image(&img, &dir.path().join("a.bmp"), false).is_err());
    }
}
