//! Gradient-derived channel maps and per-patch feature assembly.
//!
//! Six channels are computed from the coarse upscaled image: first-order
//! gradients (gx, gy), second-order gradients (gxx, gyy), and the two
//! gradient magnitudes. Per-patch vectors concatenate a window from each
//! enabled channel in that fixed order.

use crate::error::{FarfError, Result};
use crate::imgproc::{patch_origins, read_window, ImagePlane};

/// First-order 1-D derivative filter.
const FILTER_D1: [f64; 3] = [-1.0, 0.0, 1.0];
/// Second-order 1-D derivative filter.
const FILTER_D2: [f64; 5] = [1.0, 0.0, -2.0, 0.0, 1.0];

/// Feature extraction configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Patch edge length on the upscaled grid.
    pub patch_size: usize,
    /// When false only the four gradient channels are used, which
    /// reproduces the plain-forest baseline.
    pub use_magnitudes: bool,
}

impl FeatureConfig {
    pub fn n_channels(&self) -> usize {
        if self.use_magnitudes {
            6
        } else {
            4
        }
    }

    /// Original (uncompressed) feature dimension.
    pub fn feature_dim(&self) -> usize {
        self.n_channels() * self.patch_size * self.patch_size
    }
}

/// The six channel maps in fixed order.
#[derive(Debug, Clone)]
pub struct ChannelMaps {
    pub gx: ImagePlane,
    pub gy: ImagePlane,
    pub gxx: ImagePlane,
    pub gyy: ImagePlane,
    pub mag1: ImagePlane,
    pub mag2: ImagePlane,
}

impl ChannelMaps {
    fn channel(&self, i: usize) -> &ImagePlane {
        match i {
            0 => &self.gx,
            1 => &self.gy,
            2 => &self.gxx,
            3 => &self.gyy,
            4 => &self.mag1,
            5 => &self.mag2,
            _ => unreachable!("channel index out of range"),
        }
    }
}

/// 1-D correlation along x with edge replication.
fn correlate_x(img: &ImagePlane, taps: &[f64]) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let center = (taps.len() - 1) as isize / 2;
    let mut out = ImagePlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                if t != 0.0 {
                    acc += t * img.get_clamped(x as isize + k as isize - center, y as isize);
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// 1-D correlation along y with edge replication.
fn correlate_y(img: &ImagePlane, taps: &[f64]) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let center = (taps.len() - 1) as isize / 2;
    let mut out = ImagePlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                if t != 0.0 {
                    acc += t * img.get_clamped(x as isize, y as isize + k as isize - center);
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// First- and second-order gradient maps (gx, gy, gxx, gyy); output
/// dimensions match the input.
pub fn gradient_maps(img: &ImagePlane) -> Result<(ImagePlane, ImagePlane, ImagePlane, ImagePlane)> {
    if img.width() < 5 || img.height() < 5 {
        return Err(FarfError::InvalidParam(format!(
            "gradient maps need dims >= 5, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok((
        correlate_x(img, &FILTER_D1),
        correlate_y(img, &FILTER_D1),
        correlate_x(img, &FILTER_D2),
        correlate_y(img, &FILTER_D2),
    ))
}

/// Pixelwise gradient magnitudes: first-order from (gx, gy) and
/// second-order from (gxx, gyy).
pub fn magnitude_maps(
    gx: &ImagePlane,
    gy: &ImagePlane,
    gxx: &ImagePlane,
    gyy: &ImagePlane,
) -> Result<(ImagePlane, ImagePlane)> {
    if !gx.same_dims(gy) || !gx.same_dims(gxx) || !gx.same_dims(gyy) {
        return Err(FarfError::DimensionMismatch {
            expected: format!("{}x{} for all gradient maps", gx.width(), gx.height()),
            got: "mismatched gradient maps".into(),
        });
    }
    let hypot2 = |a: &ImagePlane, b: &ImagePlane| {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| (p * p + q * q).sqrt())
            .collect();
        ImagePlane::from_vec(a.width(), a.height(), data)
    };
    Ok((hypot2(gx, gy)?, hypot2(gxx, gyy)?))
}

/// All six channel maps of an image.
pub fn channel_maps(img: &ImagePlane) -> Result<ChannelMaps> {
    let (gx, gy, gxx, gyy) = gradient_maps(img)?;
    let (mag1, mag2) = magnitude_maps(&gx, &gy, &gxx, &gyy)?;
    Ok(ChannelMaps {
        gx,
        gy,
        gxx,
        gyy,
        mag1,
        mag2,
    })
}

/// Assembles one feature vector per origin: for each enabled channel in
/// fixed order, the row-major `patch_size^2` window is appended.
pub fn assemble_features(
    maps: &ChannelMaps,
    origins: &[(usize, usize)],
    cfg: &FeatureConfig,
) -> Vec<Vec<f64>> {
    origins
        .iter()
        .map(|&(x, y)| assemble_one(maps, x, y, cfg))
        .collect()
}

/// Feature vector for a single patch origin.
pub fn assemble_one(maps: &ChannelMaps, x: usize, y: usize, cfg: &FeatureConfig) -> Vec<f64> {
    let mut v = Vec::with_capacity(cfg.feature_dim());
    for c in 0..cfg.n_channels() {
        read_window(maps.channel(c), x, y, cfg.patch_size, &mut v);
    }
    v
}

/// Convenience: all feature vectors of an image on a stride grid.
pub fn image_features(
    img: &ImagePlane,
    cfg: &FeatureConfig,
    stride: usize,
) -> Result<(Vec<(usize, usize)>, Vec<Vec<f64>>)> {
    let maps = channel_maps(img)?;
    let origins = patch_origins(img.width(), img.height(), cfg.patch_size, stride)?;
    let feats = assemble_features(&maps, &origins, cfg);
    Ok((origins, feats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_vec(
            w,
            h,
            (0..w * h).map(|i| (i % w) as f64 / w as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_image_has_zero_maps() {
        let img = ImagePlane::constant(8, 8, 0.42);
        let (gx, gy, gxx, gyy) = gradient_maps(&img).unwrap();
        for m in [&gx, &gy, &gxx, &gyy] {
            assert!(m.data().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn ramp_gradients_match_hand_convolution() {
        // Hand-derivation for I(x, y) = x / w: the 3-tap first-order filter
        // gives -I(x-1) + I(x+1) = 2/w in the interior, the 5-tap
        // second-order filter gives I(x-2) - 2 I(x) + I(x+2) = 0.
        let w = 12;
        let img = ramp(w, 8);
        let (gx, gy, gxx, _) = gradient_maps(&img).unwrap();
        for y in 2..6 {
            for x in 2..w - 2 {
                assert!((gx.get(x, y) - 2.0 / w as f64).abs() < 1e-12);
                assert!(gy.get(x, y).abs() < 1e-12);
                assert!(gxx.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_response() {
        let mut img = ImagePlane::zeros(9, 9);
        img.set(4, 4, 1.0);
        let (gx, _, gxx, _) = gradient_maps(&img).unwrap();
        // Correlation with [-1, 0, 1]: response at x0 - 1 is +1, at x0 + 1
        // is -1 (the reversed kernel), consistent with the ramp convention.
        assert_eq!(gx.get(3, 4), 1.0);
        assert_eq!(gx.get(4, 4), 0.0);
        assert_eq!(gx.get(5, 4), -1.0);
        assert_eq!(gxx.get(2, 4), 1.0);
        assert_eq!(gxx.get(4, 4), -2.0);
        assert_eq!(gxx.get(6, 4), 1.0);
    }

    #[test]
    fn magnitude_345() {
        let gx = ImagePlane::constant(5, 5, 3.0 / 255.0);
        let gy = ImagePlane::constant(5, 5, 4.0 / 255.0);
        let z = ImagePlane::zeros(5, 5);
        let (mag1, mag2) = magnitude_maps(&gx, &gy, &z, &z).unwrap();
        for &v in mag1.data() {
            assert!((v - 5.0 / 255.0).abs() < 1e-15);
        }
        assert!(mag2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn magnitude_matches_scalar_oracle_and_zero_iff() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mk = |rng: &mut ChaCha8Rng| {
            ImagePlane::from_vec(7, 6, (0..42).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
        };
        let gx = mk(&mut rng);
        let gy = mk(&mut rng);
        let gxx = mk(&mut rng);
        let gyy = mk(&mut rng);
        let (mag1, mag2) = magnitude_maps(&gx, &gy, &gxx, &gyy).unwrap();
        for i in 0..42 {
            let m1 = (gx.data()[i].powi(2) + gy.data()[i].powi(2)).sqrt();
            let m2 = (gxx.data()[i].powi(2) + gyy.data()[i].powi(2)).sqrt();
            assert!((mag1.data()[i] - m1).abs() < 1e-12);
            assert!((mag2.data()[i] - m2).abs() < 1e-12);
            assert!(mag1.data()[i] >= 0.0 && mag2.data()[i] >= 0.0);
            assert_eq!(
                mag1.data()[i] == 0.0,
                gx.data()[i] == 0.0 && gy.data()[i] == 0.0
            );
        }
    }

    #[test]
    fn feature_dimensions() {
        let four = FeatureConfig {
            patch_size: 6,
            use_magnitudes: false,
        };
        let six = FeatureConfig {
            patch_size: 6,
            use_magnitudes: true,
        };
        assert_eq!(four.feature_dim(), 144);
        assert_eq!(six.feature_dim(), 216);
    }

    #[test]
    fn constant_source_gives_zero_features() {
        let img = ImagePlane::constant(12, 12, 0.6);
        let cfg = FeatureConfig {
            patch_size: 6,
            use_magnitudes: true,
        };
        let (_, feats) = image_features(&img, &cfg, 3).unwrap();
        for f in feats {
            assert_eq!(f.len(), 216);
            assert!(f.iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn disabled_magnitudes_are_a_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img =
            ImagePlane::from_vec(14, 14, (0..196).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let full = FeatureConfig {
            patch_size: 6,
            use_magnitudes: true,
        };
        let four = FeatureConfig {
            patch_size: 6,
            use_magnitudes: false,
        };
        let (_, f_full) = image_features(&img, &full, 3).unwrap();
        let (_, f_four) = image_features(&img, &four, 3).unwrap();
        for (a, b) in f_full.iter().zip(&f_four) {
            assert_eq!(&a[..144], &b[..]);
        }
    }

    #[test]
    fn translation_consistency_in_interior() {
        // Shifting the image content by the stride shifts the feature list
        // by one origin, away from replicated borders.
        let w = 24;
        let h = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        let img = ImagePlane::from_vec(w, h, base.clone()).unwrap();
        let stride = 3;
        let shifted = ImagePlane::from_vec(
            w,
            h,
            (0..w * h)
                .map(|i| {
                    let x = i % w;
                    let y = i / w;
                    let sx = if x >= stride { x - stride } else { x };
                    base[y * w + sx]
                })
                .collect(),
        )
        .unwrap();
        let cfg = FeatureConfig {
            patch_size: 6,
            use_magnitudes: true,
        };
        let maps_a = channel_maps(&img).unwrap();
        let maps_b = channel_maps(&shifted).unwrap();
        // Interior origin pair: x and x + stride, both far from borders.
        let a = assemble_one(&maps_a, 6, 3, &cfg);
        let b = assemble_one(&maps_b, 9, 3, &cfg);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
