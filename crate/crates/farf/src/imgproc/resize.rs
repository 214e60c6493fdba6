use crate::error::{FarfError, Result};
use crate::imgproc::ImagePlane;

/// Keys cubic kernel with a = -0.5; zero outside |x| < 2.
#[inline]
fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-pixel contribution window along one axis.
struct AxisWeights {
    start: usize,
    weights: Vec<f64>,
}

/// Computes normalized contribution windows for one axis. `scale` is
/// out_len / in_len; when downscaling the kernel is widened by 1/scale
/// (antialiasing). Source indices outside the image clamp to the border.
fn axis_contributions(in_len: usize, out_len: usize) -> Vec<AxisWeights> {
    let scale = out_len as f64 / in_len as f64;
    let kscale = scale.min(1.0);
    let half = 2.0 / kscale;
    (0..out_len)
        .map(|out_i| {
            let src = (out_i as f64 + 0.5) / scale - 0.5;
            let lo = (src - half).floor() as isize;
            let hi = (src + half).ceil() as isize;
            let lo_c = lo.clamp(0, in_len as isize - 1) as usize;
            let hi_c = hi.clamp(0, in_len as isize - 1) as usize;
            let mut weights = vec![0.0; hi_c - lo_c + 1];
            let mut total = 0.0;
            for i in lo..=hi {
                let w = keys_cubic(kscale * (src - i as f64));
                if w != 0.0 {
                    let idx = i.clamp(0, in_len as isize - 1) as usize;
                    weights[idx - lo_c] += w;
                    total += w;
                }
            }
            for w in &mut weights {
                *w /= total;
            }
            AxisWeights {
                start: lo_c,
                weights,
            }
        })
        .collect()
}

/// Resamples to an explicit output size via separable cubic convolution.
pub(crate) fn resize_bicubic_to(img: &ImagePlane, out_w: usize, out_h: usize) -> Result<ImagePlane> {
    if out_w == 0 || out_h == 0 {
        return Err(FarfError::InvalidParam(format!(
            "bicubic resize to zero-sized output {}x{}",
            out_w, out_h
        )));
    }
    let (in_w, in_h) = (img.width(), img.height());

    // Horizontal pass.
    let x_weights = axis_contributions(in_w, out_w);
    let mut mid = vec![0.0f64; out_w * in_h];
    for y in 0..in_h {
        let row = img.row(y);
        let out_row = &mut mid[y * out_w..(y + 1) * out_w];
        for (x, aw) in x_weights.iter().enumerate() {
            let mut acc = 0.0;
            for (k, &w) in aw.weights.iter().enumerate() {
                acc += w * row[aw.start + k];
            }
            out_row[x] = acc;
        }
    }

    // Vertical pass.
    let y_weights = axis_contributions(in_h, out_h);
    let mut out = vec![0.0f64; out_w * out_h];
    for (y, aw) in y_weights.iter().enumerate() {
        let out_row = &mut out[y * out_w..(y + 1) * out_w];
        for (k, &w) in aw.weights.iter().enumerate() {
            let src_row = &mid[(aw.start + k) * out_w..(aw.start + k + 1) * out_w];
            for x in 0..out_w {
                out_row[x] += w * src_row[x];
            }
        }
    }
    ImagePlane::from_vec(out_w, out_h, out)
}

/// Separable cubic resampling by `factor`; output dims are
/// `round(dim * factor)`. Downscaling antialiases by widening the kernel.
pub fn resize_bicubic(img: &ImagePlane, factor: f64) -> Result<ImagePlane> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(FarfError::InvalidParam(format!(
            "resize factor must be positive, got {factor}"
        )));
    }
    let out_w = (img.width() as f64 * factor).round() as usize;
    let out_h = (img.height() as f64 * factor).round() as usize;
    resize_bicubic_to(img, out_w, out_h)
}

/// Separable correlation with 1-D taps applied along both axes, border
/// handled by edge replication.
pub fn separable_convolve(img: &ImagePlane, taps: &[f64]) -> Result<ImagePlane> {
    if taps.is_empty() {
        return Err(FarfError::InvalidParam("empty convolution kernel".into()));
    }
    if taps.len() > img.width() || taps.len() > img.height() {
        return Err(FarfError::InvalidParam(format!(
            "kernel of {} taps longer than image dimension {}x{}",
            taps.len(),
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let center = (taps.len() - 1) / 2;

    let mut mid = ImagePlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * img.get_clamped(x as isize + k as isize - center as isize, y as isize);
            }
            mid.set(x, y, acc);
        }
    }
    let mut out = ImagePlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * mid.get_clamped(x as isize, y as isize + k as isize - center as isize);
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Normalized Gaussian taps with support 2*ceil(2*sigma) + 1.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Low-pass choice used by [`degrade`] before subsampling.
#[derive(Debug, Clone, PartialEq)]
pub enum DownKernel {
    /// Antialiased bicubic downscale stands in for blur + subsample.
    Bicubic,
    /// Explicit separable taps followed by keeping every s-th sample.
    Taps(Vec<f64>),
}

/// Degradation operator: blur with a low-pass kernel, then downsample by an
/// integer factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradeSpec {
    pub scale: u32,
    pub kernel: DownKernel,
}

impl DegradeSpec {
    pub fn bicubic(scale: u32) -> Result<Self> {
        Self::validate_scale(scale)?;
        Ok(DegradeSpec {
            scale,
            kernel: DownKernel::Bicubic,
        })
    }

    pub fn gaussian(scale: u32, sigma: f64) -> Result<Self> {
        Self::with_taps(scale, gaussian_taps(sigma))
    }

    pub fn with_taps(scale: u32, taps: Vec<f64>) -> Result<Self> {
        Self::validate_scale(scale)?;
        let sum: f64 = taps.iter().sum();
        if taps.is_empty() || (sum - 1.0).abs() > 1e-9 {
            return Err(FarfError::InvalidParam(format!(
                "degradation kernel taps must sum to 1, got {sum}"
            )));
        }
        Ok(DegradeSpec {
            scale,
            kernel: DownKernel::Taps(taps),
        })
    }

    fn validate_scale(scale: u32) -> Result<()> {
        if !(2..=4).contains(&scale) {
            return Err(FarfError::InvalidParam(format!(
                "scale must be one of {{2,3,4}}, got {scale}"
            )));
        }
        Ok(())
    }
}

/// Blur with the spec kernel, then keep every s-th sample. Deterministic;
/// requires dimensions divisible by the scale.
pub fn degrade(hr: &ImagePlane, spec: &DegradeSpec) -> Result<ImagePlane> {
    let s = spec.scale as usize;
    if hr.width() % s != 0 || hr.height() % s != 0 {
        return Err(FarfError::InvalidParam(format!(
            "degrade: {}x{} not divisible by scale {}",
            hr.width(),
            hr.height(),
            s
        )));
    }
    let (out_w, out_h) = (hr.width() / s, hr.height() / s);
    match &spec.kernel {
        DownKernel::Bicubic => resize_bicubic_to(hr, out_w, out_h),
        DownKernel::Taps(taps) => {
            let blurred = separable_convolve(hr, taps)?;
            let mut out = ImagePlane::zeros(out_w, out_h);
            for y in 0..out_h {
                for x in 0..out_w {
                    out.set(x, y, blurred.get(x * s, y * s));
                }
            }
            Ok(out)
        }
    }
}
