//! PNG and binary PNM (P5/P6, maxval 255) raster IO. Top-left origin,
//! row-major. Quantization to 8 bits happens only here and in PSNR.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{FarfError, Result};
use crate::imgproc::{ColorImage, ImagePlane};

fn decode_err(path: &Path, reason: impl Into<String>) -> FarfError {
    FarfError::ImageDecode {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a color image from PNG or binary PPM/PGM; grayscale sources are
/// replicated across the three channels.
pub fn load_color(path: &Path) -> Result<ColorImage> {
    match extension(path) {
        "ppm" | "pgm" | "pnm" => load_pnm(path),
        _ => {
            let img = image::open(path)
                .map_err(|e| decode_err(path, e.to_string()))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut r = Vec::with_capacity(w * h);
            let mut g = Vec::with_capacity(w * h);
            let mut b = Vec::with_capacity(w * h);
            for px in img.pixels() {
                r.push(px.0[0] as f64 / 255.0);
                g.push(px.0[1] as f64 / 255.0);
                b.push(px.0[2] as f64 / 255.0);
            }
            ColorImage::new(
                ImagePlane::from_vec(w, h, r)?,
                ImagePlane::from_vec(w, h, g)?,
                ImagePlane::from_vec(w, h, b)?,
            )
        }
    }
}

/// Loads a single plane; color sources are reduced to their luma.
pub fn load_plane(path: &Path) -> Result<ImagePlane> {
    let color = load_color(path)?;
    let (y, _, _) = crate::imgproc::rgb_to_ycc(&color);
    Ok(y)
}

/// Writes a color image as PNG or binary PPM (P6) depending on extension.
pub fn save_color(img: &ColorImage, path: &Path) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    match extension(path) {
        "ppm" => {
            let mut out = BufWriter::new(fs::File::create(path)?);
            write!(out, "P6\n{} {}\n255\n", w, h)?;
            for i in 0..w * h {
                out.write_all(&[
                    to_byte(img.r.data()[i]),
                    to_byte(img.g.data()[i]),
                    to_byte(img.b.data()[i]),
                ])?;
            }
            out.flush()?;
            Ok(())
        }
        _ => {
            let mut buf = image::RgbImage::new(w as u32, h as u32);
            for (i, px) in buf.pixels_mut().enumerate() {
                px.0 = [
                    to_byte(img.r.data()[i]),
                    to_byte(img.g.data()[i]),
                    to_byte(img.b.data()[i]),
                ];
            }
            buf.save(path)
                .map_err(|e| decode_err(path, format!("encode failed: {e}")))
        }
    }
}

/// Writes a single plane as PNG (gray) or binary PGM (P5).
pub fn save_plane(img: &ImagePlane, path: &Path) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    match extension(path) {
        "pgm" => {
            let mut out = BufWriter::new(fs::File::create(path)?);
            write!(out, "P5\n{} {}\n255\n", w, h)?;
            let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
            out.write_all(&bytes)?;
            out.flush()?;
            Ok(())
        }
        _ => {
            let mut buf = image::GrayImage::new(w as u32, h as u32);
            for (i, px) in buf.pixels_mut().enumerate() {
                px.0 = [to_byte(img.data()[i])];
            }
            buf.save(path)
                .map_err(|e| decode_err(path, format!("encode failed: {e}")))
        }
    }
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn load_pnm(path: &Path) -> Result<ColorImage> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and `#` comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "truncated PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(decode_err(path, format!("unsupported PNM magic {other}"))),
    };
    let w: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad width"))?;
    let h: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(decode_err(path, format!("maxval must be 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates header from raster.
    pos += 1;
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(decode_err(path, "truncated PNM raster"));
    }
    let raster = &bytes[pos..pos + need];
    if channels == 1 {
        let data: Vec<f64> = raster.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(ColorImage::from_gray(ImagePlane::from_vec(w, h, data)?))
    } else {
        let mut r = Vec::with_capacity(w * h);
        let mut g = Vec::with_capacity(w * h);
        let mut b = Vec::with_capacity(w * h);
        for px in raster.chunks_exact(3) {
            r.push(px[0] as f64 / 255.0);
            g.push(px[1] as f64 / 255.0);
            b.push(px[2] as f64 / 255.0);
        }
        ColorImage::new(
            ImagePlane::from_vec(w, h, r)?,
            ImagePlane::from_vec(w, h, g)?,
            ImagePlane::from_vec(w, h, b)?,
        )
    }
}
