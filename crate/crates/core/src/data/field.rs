use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grid::{DisplacementField, ImageGrid};
use crate::rng::stream;
use crate::scalar::Real;

use super::texture::DomainSpec;

/// Separable Gaussian blur with edge replication, kernel radius `ceil(3 sigma)`.
pub fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

/// Smooth random displacement: white noise per component, Gaussian blur with
/// `warp_sigma`, then rescaled so the largest magnitude equals `warp_amplitude`.
/// Noise is drawn on a canvas padded by the blur radius and cropped, so the
/// field statistics do not depend on distance to the border.
pub fn gen_gt_field<T: Real>(spec: &DomainSpec, seed: u64) -> Result<DisplacementField<T>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let pad = (3.0 * spec.warp_sigma).ceil() as usize;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut rng = stream(seed, &[0xF1E1D]);
    let mut component = || -> Vec<f64> {
        let noise: Vec<f64> = (0..ph * pw).map(|_| StandardNormal.sample(&mut rng)).collect();
        let blurred = gaussian_blur(&noise, ph, pw, spec.warp_sigma);
        (0..h * w).map(|i| blurred[(i / w + pad) * pw + i % w + pad]).collect()
    };
    let u = component();
    let v = component();
    let peak = u.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max(a.hypot(*b)));
    let scale = if peak > 0.0 { spec.warp_amplitude / peak } else { 0.0 };
    let to_grid = |c: Vec<f64>| ImageGrid::from_vec(h, w, c.into_iter().map(|x| T::lit(x * scale)).collect());
    DisplacementField::new(to_grid(u)?, to_grid(v)?)
}
