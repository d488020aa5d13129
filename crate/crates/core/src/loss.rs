//! Unsupervised registration objective: negative windowed cross-correlation
//! plus a displacement-gradient smoothness penalty.

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::kernels::{warp_bilinear, warp_bilinear_backward};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Side of the square correlation window; odd, at least 3.
    pub window: usize,
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// Denominator stabilizer.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            window: 9,
            lambda: 1.0,
            eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::config(format!(
                "correlation window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Zero-padded `n x n` window sums, computed separably.
fn box_sum<T: Real>(src: &[T], h: usize, w: usize, n: usize) -> Vec<T> {
    let r = n / 2;
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            *o = row[lo..hi].iter().copied().sum();
        }
    }
    let mut dst = vec![T::zero(); h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        let out = &mut dst[y * w..(y + 1) * w];
        for yy in lo..hi {
            for (o, &v) in out.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                *o += v;
            }
        }
    }
    dst
}

/// Per-pixel windowed squared correlation `cc_p` (the map [`local_cc`] averages).
pub fn local_cc_map<T: Real>(
    fixed: &ImageGrid<T>,
    warped: &ImageGrid<T>,
    cfg: &LossConfig,
) -> Result<ImageGrid<T>> {
    cfg.validate()?;
    fixed.ensure_same_dims(warped, "local_cc operands")?;
    let (h, w) = fixed.dims();
    let n = cfg.window;
    let count = T::count(n * n);
    let eps = T::lit(cfg.eps);
    let f = fixed.data();
    let m = warped.data();
    let sq = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&x, &y)| x * y).collect() };
    let s_f = box_sum(f, h, w, n);
    let s_w = box_sum(m, h, w, n);
    let s_ff = box_sum(&sq(f, f), h, w, n);
    let s_ww = box_sum(&sq(m, m), h, w, n);
    let s_fw = box_sum(&sq(f, m), h, w, n);
    let map = (0..h * w)
        .map(|p| {
            let a = s_fw[p] - s_f[p] * (s_w[p] / count);
            let b = (s_ff[p] - s_f[p] * (s_f[p] / count)).max(T::zero());
            let c = (s_ww[p] - s_w[p] * (s_w[p] / count)).max(T::zero());
            a * a / (b * c + eps)
        })
        .collect();
    ImageGrid::from_vec(h, w, map)
}

/// Mean over pixels of the squared local normalized cross-correlation, and its
/// exact gradient with respect to `warped`.
///
/// Per pixel: `cc_p = A^2 / (B C + eps)` with `A` the windowed cross term and
/// `B`, `C` the windowed variances of `fixed` and `warped` (sums of squared
/// deviations). Windows are zero padded and always count `window^2` samples.
pub fn local_cc<T: Real>(
    fixed: &ImageGrid<T>,
    warped: &ImageGrid<T>,
    cfg: &LossConfig,
) -> Result<(T, ImageGrid<T>)> {
    cfg.validate()?;
    fixed.ensure_same_dims(warped, "local_cc operands")?;
    let (h, w) = fixed.dims();
    let n = cfg.window;
    let count = T::count(n * n);
    let eps = T::lit(cfg.eps);
    let f = fixed.data();
    let m = warped.data();

    let sq = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&x, &y)| x * y).collect() };
    let s_f = box_sum(f, h, w, n);
    let s_w = box_sum(m, h, w, n);
    let s_ff = box_sum(&sq(f, f), h, w, n);
    let s_ww = box_sum(&sq(m, m), h, w, n);
    let s_fw = box_sum(&sq(f, m), h, w, n);

    let pixels = h * w;
    let mut total = T::zero();
    let mut alpha = vec![T::zero(); pixels];
    let mut alpha_mean_f = vec![T::zero(); pixels];
    let mut beta = vec![T::zero(); pixels];
    let mut beta_mean_w = vec![T::zero(); pixels];
    let two = T::lit(2.0);
    for p in 0..pixels {
        let mean_f = s_f[p] / count;
        let mean_w = s_w[p] / count;
        let a = s_fw[p] - s_f[p] * mean_w;
        let b = (s_ff[p] - s_f[p] * mean_f).max(T::zero());
        let c_raw = s_ww[p] - s_w[p] * mean_w;
        let c = c_raw.max(T::zero());
        let d = b * c + eps;
        total += a * a / d;
        alpha[p] = two * a / d;
        alpha_mean_f[p] = alpha[p] * mean_f;
        if c_raw > T::zero() {
            beta[p] = two * a * a * b / (d * d);
            beta_mean_w[p] = beta[p] * mean_w;
        }
    }
    let inv_pixels = T::one() / T::count(pixels);
    let cc = total * inv_pixels;

    // Symmetric windows: pixel i lies in window(p) iff p lies in window(i).
    let b_alpha = box_sum(&alpha, h, w, n);
    let b_alpha_f = box_sum(&alpha_mean_f, h, w, n);
    let b_beta = box_sum(&beta, h, w, n);
    let b_beta_w = box_sum(&beta_mean_w, h, w, n);
    let grad: Vec<T> = (0..pixels)
        .map(|i| (f[i] * b_alpha[i] - b_alpha_f[i] - m[i] * b_beta[i] + b_beta_w[i]) * inv_pixels)
        .collect();
    Ok((cc, ImageGrid::from_vec(h, w, grad)?))
}

/// Mean squared forward difference of both field components (boundary
/// differences omitted), and its gradient.
pub fn smoothness<T: Real>(phi: &DisplacementField<T>) -> (T, DisplacementField<T>) {
    let (h, w) = phi.dims();
    let mut grad = DisplacementField::zeros(h, w);
    if h * w == 0 {
        return (T::zero(), grad);
    }
    let scale = T::one() / T::count(h * w);
    let two = T::lit(2.0);
    let mut total = T::zero();
    for (comp, g) in [(&phi.u, &mut grad.u), (&phi.v, &mut grad.v)] {
        let c = comp.data();
        let gd = g.data_mut();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = c[i + 1] - c[i];
                    total += d * d;
                    gd[i + 1] += two * d * scale;
                    gd[i] -= two * d * scale;
                }
                if y + 1 < h {
                    let d = c[i + w] - c[i];
                    total += d * d;
                    gd[i + w] += two * d * scale;
                    gd[i] -= two * d * scale;
                }
            }
        }
    }
    (total * scale, grad)
}

/// Loss value with its components and `dL/dphi`.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub value: T,
    pub cc: T,
    pub smoothness: T,
    pub grad_phi: DisplacementField<T>,
    pub warped: ImageGrid<T>,
}

/// `L = -CC(F, M(phi)) + lambda * smoothness(phi)`.
pub fn total_loss<T: Real>(
    fixed: &ImageGrid<T>,
    moving: &ImageGrid<T>,
    phi: &DisplacementField<T>,
    cfg: &LossConfig,
) -> Result<LossEval<T>> {
    fixed.ensure_same_dims(moving, "fixed vs moving")?;
    let warped = warp_bilinear(moving, phi)?;
    let (cc, grad_cc) = local_cc(fixed, &warped, cfg)?;
    let (smooth, grad_smooth) = smoothness(phi);
    let lambda = T::lit(cfg.lambda);
    let neg = grad_cc.map(|g| -g);
    let mut grad_phi = warp_bilinear_backward(moving, phi, &neg)?;
    for (g, s) in grad_phi
        .u
        .data_mut()
        .iter_mut()
        .chain(grad_phi.v.data_mut())
        .zip(grad_smooth.u.data().iter().chain(grad_smooth.v.data()))
    {
        *g += lambda * *s;
    }
    let value = -cc + lambda * smooth;
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(LossEval {
        value,
        cc,
        smoothness: smooth,
        grad_phi,
        warped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn random_field(h: usize, w: usize, amp: f64, seed: u64) -> DisplacementField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DisplacementField::new(
            ImageGrid::from_fn(h, w, |_, _| rng.random_range(-amp..amp)),
            ImageGrid::from_fn(h, w, |_, _| rng.random_range(-amp..amp)),
        )
        .unwrap()
    }

    /// Windowed correlation at one pixel, straight from the definition.
    fn cc_at(f: &ImageGrid<f64>, g: &ImageGrid<f64>, py: usize, px: usize, n: usize, eps: f64) -> f64 {
        let r = (n / 2) as isize;
        let val = |img: &ImageGrid<f64>, y: isize, x: isize| {
            if y < 0 || x < 0 || y >= img.height() as isize || x >= img.width() as isize {
                0.0
            } else {
                img.get(y as usize, x as usize)
            }
        };
        let mut fs = Vec::new();
        let mut gs = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                fs.push(val(f, py as isize + dy, px as isize + dx));
                gs.push(val(g, py as isize + dy, px as isize + dx));
            }
        }
        let k = fs.len() as f64;
        let mf = fs.iter().sum::<f64>() / k;
        let mg = gs.iter().sum::<f64>() / k;
        let cross: f64 = fs.iter().zip(&gs).map(|(a, b)| (a - mf) * (b - mg)).sum();
        let vf: f64 = fs.iter().map(|a| (a - mf) * (a - mf)).sum();
        let vg: f64 = gs.iter().map(|b| (b - mg) * (b - mg)).sum();
        cross * cross / (vf * vg + eps)
    }

    #[test]
    fn published_defaults() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.window, 9);
        assert_eq!(cfg.lambda, 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let f = random_image(4, 4, 0);
        for cfg in [
            LossConfig { window: 4, ..Default::default() },
            LossConfig { window: 1, ..Default::default() },
            LossConfig { lambda: -1.0, ..Default::default() },
            LossConfig { eps: 0.0, ..Default::default() },
        ] {
            assert!(matches!(local_cc(&f, &f, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn single_window_matches_scalar_oracle() {
        let f = random_image(9, 9, 1);
        let g = random_image(9, 9, 2);
        let cfg = LossConfig::default();
        // Only the center pixel's window is fully inside; compare the mean
        // over all pixels, each evaluated by the oracle.
        let (cc, _) = local_cc(&f, &g, &cfg).unwrap();
        let oracle: f64 = (0..9)
            .flat_map(|y| (0..9).map(move |x| (y, x)))
            .map(|(y, x)| cc_at(&f, &g, y, x, 9, cfg.eps))
            .sum::<f64>()
            / 81.0;
        assert!((cc - oracle).abs() <= 1e-12, "{cc} vs {oracle}");
    }

    #[test]
    fn self_similarity_is_near_one() {
        // Checkerboard-like texture with strong variance in every window.
        let f = ImageGrid::from_fn(24, 24, |y, x| if (x / 2 + y / 2) % 2 == 0 { 0.9 } else { 0.1 });
        let (cc, _) = local_cc(&f, &f, &LossConfig::default()).unwrap();
        assert!(cc >= 0.999 && cc <= 1.0, "{cc}");
    }

    #[test]
    fn affine_intensity_change_keeps_correlation() {
        // Zero padding is not affine-mapped, so only fully interior windows qualify.
        let f = random_image(12, 12, 3);
        let g = f.map(|v| -0.5 * v + 0.7);
        let map = local_cc_map(&f, &g, &LossConfig::default()).unwrap();
        for y in 4..8 {
            for x in 4..8 {
                assert!(map.get(y, x) >= 0.999, "{}", map.get(y, x));
            }
        }
        let (cc, _) = local_cc(&f, &g, &LossConfig::default()).unwrap();
        let mean = map.mean();
        assert!((cc - mean).abs() < 1e-12);
    }

    #[test]
    fn cc_gradient_matches_finite_differences() {
        let f = random_image(10, 11, 4);
        let g = random_image(10, 11, 5);
        let cfg = LossConfig { window: 5, ..Default::default() };
        let (_, grad) = local_cc(&f, &g, &cfg).unwrap();
        let step = 1e-5;
        for i in 0..g.len() {
            let mut gp = g.clone();
            gp.data_mut()[i] += step;
            let mut gm = g.clone();
            gm.data_mut()[i] -= step;
            let fd = (local_cc(&f, &gp, &cfg).unwrap().0 - local_cc(&f, &gm, &cfg).unwrap().0) / (2.0 * step);
            let a = grad.data()[i];
            assert!((fd - a).abs() <= 1e-4 * (a.abs() + 1e-8), "{i}: {fd} vs {a}");
        }
    }

    #[test]
    fn smoothness_of_constant_field_is_zero() {
        let (s, g) = smoothness(&DisplacementField::constant(5, 7, 1.5, -2.0));
        assert_eq!(s, 0.0);
        assert!(g.u.data().iter().chain(g.v.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn smoothness_of_linear_ramp_has_closed_form() {
        let (h, w, c) = (6usize, 5usize, 0.3);
        let phi = DisplacementField::new(
            ImageGrid::from_fn(h, w, |_, x| c * x as f64),
            ImageGrid::zeros(h, w),
        )
        .unwrap();
        let (s, _) = smoothness(&phi);
        let expected = c * c * (h * (w - 1)) as f64 / (h * w) as f64;
        assert!((s - expected).abs() < 1e-14);
    }

    #[test]
    fn smoothness_matches_loop_and_finite_difference_oracles() {
        let phi = random_field(6, 6, 2.0, 6);
        let (s, grad) = smoothness(&phi);
        let oracle = |p: &DisplacementField<f64>| {
            let mut acc = 0.0;
            for comp in [&p.u, &p.v] {
                for y in 0..6 {
                    for x in 0..6 {
                        if x + 1 < 6 {
                            acc += (comp.get(y, x + 1) - comp.get(y, x)).powi(2);
                        }
                        if y + 1 < 6 {
                            acc += (comp.get(y + 1, x) - comp.get(y, x)).powi(2);
                        }
                    }
                }
            }
            acc / 36.0
        };
        assert!((s - oracle(&phi)).abs() <= 1e-10);
        let step = 1e-5;
        for i in 0..36 {
            for comp in 0..2 {
                let mut p = phi.clone();
                let mut m = phi.clone();
                let (gp, gm, a) = if comp == 0 {
                    (&mut p.u, &mut m.u, grad.u.data()[i])
                } else {
                    (&mut p.v, &mut m.v, grad.v.data()[i])
                };
                gp.data_mut()[i] += step;
                gm.data_mut()[i] -= step;
                let fd = (oracle(&p) - oracle(&m)) / (2.0 * step);
                assert!((fd - a).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn perfect_alignment_and_degenerate_lambda() {
        let f = ImageGrid::from_fn(16, 16, |y, x| ((x as f64 * 0.9).sin() * (y as f64 * 0.7).cos() + 1.0) / 2.0);
        let zero = DisplacementField::zeros(16, 16);
        let eval = total_loss(&f, &f, &zero, &LossConfig::default()).unwrap();
        assert!((eval.value + 1.0).abs() < 1e-3, "{}", eval.value);

        let phi = random_field(16, 16, 1.0, 7);
        let m = random_image(16, 16, 8);
        let no_reg = LossConfig { lambda: 0.0, ..Default::default() };
        let eval = total_loss(&f, &m, &phi, &no_reg).unwrap();
        assert_eq!(eval.value, -eval.cc);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let f = random_image(8, 8, 9);
        let m = random_image(8, 8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Non-integer interior offsets keep every sample away from kinks.
        let phi = DisplacementField::new(
            ImageGrid::from_fn(8, 8, |_, x| {
                let r: f64 = rng.random_range(0.15..0.85);
                if x == 0 { r } else { -r }
            }),
            ImageGrid::from_fn(8, 8, |y, _| {
                let r: f64 = rng.random_range(0.15..0.85);
                if y == 0 { r } else { -r }
            }),
        )
        .unwrap();
        let cfg = LossConfig::default();
        let eval = total_loss(&f, &m, &phi, &cfg).unwrap();
        let step = 1e-5;
        for i in 0..64 {
            for comp in 0..2 {
                let mut p = phi.clone();
                let mut q = phi.clone();
                let (gp, gq, a) = if comp == 0 {
                    (&mut p.u, &mut q.u, eval.grad_phi.u.data()[i])
                } else {
                    (&mut p.v, &mut q.v, eval.grad_phi.v.data()[i])
                };
                gp.data_mut()[i] += step;
                gq.data_mut()[i] -= step;
                let fd = (total_loss(&f, &m, &p, &cfg).unwrap().value
                    - total_loss(&f, &m, &q, &cfg).unwrap().value)
                    / (2.0 * step);
                assert!((fd - a).abs() <= 1e-4 * (a.abs() + 1e-8), "{i}/{comp}: {fd} vs {a}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn cc_is_bounded_and_symmetric(s1 in 0u64..10_000, s2 in 0u64..10_000) {
            let f = random_image(7, 9, s1);
            let g = random_image(7, 9, s2);
            let cfg = LossConfig::default();
            let (a, _) = local_cc(&f, &g, &cfg).unwrap();
            let (b, _) = local_cc(&g, &f, &cfg).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&a));
            proptest::prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn smoothness_is_nonnegative(seed in 0u64..10_000) {
            let (s, _) = smoothness(&random_field(5, 4, 3.0, seed));
            proptest::prop_assert!(s > 0.0);
        }
    }
}
