use crate::error::{FarfError, Result};
use crate::imgproc::ImagePlane;

/// A square patch with its origin in the source raster.
#[derive(Debug, Clone)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    /// Row-major values, `size * size` long.
    pub values: Vec<f64>,
}

/// Raster-order patch origins along one axis: 0, stride, 2*stride, ... with
/// the last origin adjusted inward so the full extent is covered.
fn axis_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = len - size;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if *origins.last().unwrap() != last {
        origins.push(last);
    }
    origins
}

/// Patch origins covering the whole image, raster order (y-major).
pub fn patch_origins(
    width: usize,
    height: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > width || size > height {
        return Err(FarfError::InvalidParam(format!(
            "patch size {} invalid for {}x{} image",
            size, width, height
        )));
    }
    if stride == 0 || stride > size {
        return Err(FarfError::InvalidParam(format!(
            "stride {} must be in 1..={}",
            stride, size
        )));
    }
    let xs = axis_origins(width, size, stride);
    let ys = axis_origins(height, size, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Copies one `size x size` window out of the plane, row-major.
pub fn read_window(img: &ImagePlane, x: usize, y: usize, size: usize, out: &mut Vec<f64>) {
    for dy in 0..size {
        out.extend_from_slice(&img.row(y + dy)[x..x + size]);
    }
}

/// Decomposes an image into overlapping patches in raster order.
pub fn extract_patches(img: &ImagePlane, size: usize, stride: usize) -> Result<Vec<Patch>> {
    let origins = patch_origins(img.width(), img.height(), size, stride)?;
    Ok(origins
        .into_iter()
        .map(|(x, y)| {
            let mut values = Vec::with_capacity(size * size);
            read_window(img, x, y, size, &mut values);
            Patch { x, y, size, values }
        })
        .collect())
}

/// Reassembles patches into an image; overlapping pixels take the
/// arithmetic mean of all covering patch values.
pub fn aggregate_patches(patches: &[Patch], width: usize, height: usize) -> Result<ImagePlane> {
    let mut sum = vec![0.0f64; width * height];
    let mut count = vec![0u32; width * height];
    for p in patches {
        if p.x + p.size > width || p.y + p.size > height {
            return Err(FarfError::InvalidParam(format!(
                "patch at ({}, {}) size {} exceeds {}x{}",
                p.x, p.y, p.size, width, height
            )));
        }
        for dy in 0..p.size {
            let row = (p.y + dy) * width + p.x;
            for dx in 0..p.size {
                sum[row + dx] += p.values[dy * p.size + dx];
                count[row + dx] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(FarfError::InvalidParam(format!(
            "pixel ({}, {}) not covered by any patch",
            i % width,
            i / width
        )));
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    ImagePlane::from_vec(width, height, data)
}
