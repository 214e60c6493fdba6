//! Iterative back projection: starting from the bicubic upscale, the
//! low-resolution reconstruction error is upsampled, blurred with a
//! back-projection kernel and added back, driving the estimate toward
//! consistency with the observed low-resolution image. Iterations that
//! would increase the residual are rejected, so the accepted residual
//! sequence is non-increasing.

use crate::error::{FarfError, Result};
use crate::imgproc::{degrade, gaussian_taps, separable_convolve, DegradeSpec, ImagePlane};

/// Back-projection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IbpParams {
    pub iterations: usize,
    /// Separable back-projection kernel taps, sum 1.
    pub taps: Vec<f64>,
    /// Relaxation factor in (0, 1].
    pub step: f64,
}

impl IbpParams {
    /// Gaussian kernel with sigma = 0.6 * scale, 20 iterations, full step.
    pub fn for_scale(scale: u32) -> Self {
        IbpParams {
            iterations: 20,
            taps: gaussian_taps(0.6 * scale as f64),
            step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.taps.iter().sum();
        if self.taps.is_empty() || (sum - 1.0).abs() > 1e-9 {
            return Err(FarfError::InvalidParam(format!(
                "back-projection taps must sum to 1, got {sum}"
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(FarfError::InvalidParam(format!(
                "ibp step must be in (0, 1], got {}",
                self.step
            )));
        }
        Ok(())
    }
}

fn l2_norm_diff(a: &ImagePlane, b: &ImagePlane) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Upscales by the degradation's scale factor with iterative back
/// projection and returns the accepted LR-consistency residual trace
/// alongside the image. Element 0 is the bicubic starting residual.
pub fn ibp_upscale_traced(
    lr: &ImagePlane,
    spec: &DegradeSpec,
    params: &IbpParams,
) -> Result<(ImagePlane, Vec<f64>)> {
    params.validate()?;
    let s = spec.scale as usize;
    let (hw, hh) = (lr.width() * s, lr.height() * s);
    let mut estimate = crate::imgproc::resize_bicubic(lr, s as f64)?;
    debug_assert_eq!((estimate.width(), estimate.height()), (hw, hh));

    let mut residual = {
        let down = degrade(&estimate, spec)?;
        l2_norm_diff(lr, &down)
    };
    let mut trace = vec![residual];

    for _ in 0..params.iterations {
        let down = degrade(&estimate, spec)?;
        let mut err_lr = ImagePlane::zeros(lr.width(), lr.height());
        for (e, (&y, &d)) in err_lr
            .data_mut()
            .iter_mut()
            .zip(lr.data().iter().zip(down.data()))
        {
            *e = y - d;
        }
        let err_up = crate::imgproc::resize_bicubic(&err_lr, s as f64)?;
        let err_hr = separable_convolve(&err_up, &params.taps)?;

        let mut next = estimate.clone();
        for (n, &e) in next.data_mut().iter_mut().zip(err_hr.data()) {
            *n += params.step * e;
        }
        let next_residual = l2_norm_diff(lr, &degrade(&next, spec)?);
        if next_residual > residual {
            break;
        }
        estimate = next;
        residual = next_residual;
        trace.push(residual);
    }
    Ok((estimate, trace))
}

/// Coarse upscale by iterative back projection.
pub fn ibp_upscale(lr: &ImagePlane, spec: &DegradeSpec, params: &IbpParams) -> Result<ImagePlane> {
    ibp_upscale_traced(lr, spec, params).map(|(img, _)| img)
}
