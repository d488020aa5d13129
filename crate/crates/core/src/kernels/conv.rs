use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Spatial kernel size; every convolution is 3x3 with zero padding 1.
pub const KERNEL: usize = 3;

/// Geometry of one 3x3 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * KERNEL * KERNEL
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn check(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::config(format!(
                "conv stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

/// Output index range `[lo, hi)` along one axis for kernel tap `tap`, and the
/// input index of the first valid output.
#[inline]
fn valid_range(n_in: usize, n_out: usize, stride: usize, tap: usize) -> (usize, usize, usize) {
    // input = out * stride + tap - 1 must lie in [0, n_in)
    let lo = if tap == 0 { 1 } else { 0 };
    let last = n_in as isize - tap as isize; // out * stride <= n_in - tap
    if last < 0 {
        return (0, 0, 0);
    }
    let hi = (last as usize / stride + 1).min(n_out);
    if lo >= hi {
        return (0, 0, 0);
    }
    (lo, hi, lo * stride + tap - 1)
}

/// Unrolls the zero-padded 3x3 neighbourhoods of `x` into a
/// `(c_in * 9) x (ho * wo)` matrix.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, shape: ConvShape, cols: &mut Vec<T>) {
    let (ho, wo) = shape.out_dims(h, w);
    let s = shape.stride;
    let n = ho * wo;
    cols.clear();
    cols.resize(shape.c_in * 9 * n, T::zero());
    for c in 0..shape.c_in {
        let x_c = &x[c * h * w..(c + 1) * h * w];
        for p in 0..KERNEL {
            let (ilo, ihi, r0) = valid_range(h, ho, s, p);
            for q in 0..KERNEL {
                let (jlo, jhi, c0) = valid_range(w, wo, s, q);
                if jlo >= jhi {
                    continue;
                }
                let row = &mut cols[(c * 9 + p * KERNEL + q) * n..(c * 9 + p * KERNEL + q + 1) * n];
                for (k, i) in (ilo..ihi).enumerate() {
                    let r = r0 + k * s;
                    let src = &x_c[r * w + c0..(r + 1) * w];
                    let dst = &mut row[i * wo + jlo..i * wo + jhi];
                    if s == 1 {
                        dst.copy_from_slice(&src[..jhi - jlo]);
                    } else {
                        for (d, &v) in dst.iter_mut().zip(src.iter().step_by(s)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds unrolled columns back into `dx`.
fn col2im_add<T: Real>(cols: &[T], h: usize, w: usize, shape: ConvShape, dx: &mut [T]) {
    let (ho, wo) = shape.out_dims(h, w);
    let s = shape.stride;
    let n = ho * wo;
    for c in 0..shape.c_in {
        let dx_c = &mut dx[c * h * w..(c + 1) * h * w];
        for p in 0..KERNEL {
            let (ilo, ihi, r0) = valid_range(h, ho, s, p);
            for q in 0..KERNEL {
                let (jlo, jhi, c0) = valid_range(w, wo, s, q);
                if jlo >= jhi {
                    continue;
                }
                let row = &cols[(c * 9 + p * KERNEL + q) * n..(c * 9 + p * KERNEL + q + 1) * n];
                for (k, i) in (ilo..ihi).enumerate() {
                    let r = r0 + k * s;
                    let src = &row[i * wo + jlo..i * wo + jhi];
                    let dst = &mut dx_c[r * w + c0..(r + 1) * w];
                    if s == 1 {
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst.iter_mut().step_by(s).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `dst[j] += k0 * src[j-1] + k1 * src[j] + k2 * src[j+1]`, zero outside `src`.
#[inline(always)]
fn row_taps<T: Real>(dst: &mut [T], src: &[T], k: [T; 3]) {
    let n = dst.len();
    debug_assert_eq!(src.len(), n);
    if n == 1 {
        dst[0] += k[1] * src[0];
        return;
    }
    dst[0] += k[1] * src[0] + k[2] * src[1];
    dst[n - 1] += k[0] * src[n - 2] + k[1] * src[n - 1];
    let inner = dst[1..n - 1].iter_mut().zip(&src[..n - 2]).zip(&src[1..n - 1]).zip(&src[2..]);
    for (((d, &a), &b), &c) in inner {
        *d += k[0] * a + k[1] * b + k[2] * c;
    }
}

/// Sum with eight independent partial sums so the loop vectorizes.
#[inline(always)]
fn lane_sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let tail: T = chunks.remainder().iter().copied().sum();
    for x in chunks {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Runs `$body` through a copy compiled for AVX2 when the CPU has it. Both
/// copies perform the same operations in the same order, so results agree
/// bit for bit.
macro_rules! with_avx2 {
    ($name:ident, $body:ident, ($($arg:ident: $ty:ty),*)) => {
        fn $name<T: Real>($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide<T: Real>($($arg: $ty),*) {
                    $body($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
            }
            $body($($arg),*)
        }
    };
}

with_avx2!(conv2d_direct, conv2d_direct_body, (x: &[T], h: usize, w: usize, weights: &[T], bias: &[T], shape: ConvShape, y: &mut [T]));
with_avx2!(
    conv2d_backward_direct,
    conv2d_backward_direct_body,
    (x: &[T], h: usize, w: usize, weights: &[T], shape: ConvShape, dy: &[T], dw: &mut [T], dx: Option<&mut [T]>)
);

/// Stride-1 forward pass working row by row, with no unrolled copy of the input.
#[inline(always)]
fn conv2d_direct_body<T: Real>(x: &[T], h: usize, w: usize, weights: &[T], bias: &[T], shape: ConvShape, y: &mut [T]) {
    let n = h * w;
    for (o, plane) in y.chunks_exact_mut(n).enumerate() {
        plane.fill(bias[o]);
        for i in 0..h {
            let dst = &mut plane[i * w..(i + 1) * w];
            for c in 0..shape.c_in {
                let k = &weights[(o * shape.c_in + c) * 9..][..9];
                for p in 0..KERNEL {
                    let Some(r) = (i + p).checked_sub(1).filter(|&r| r < h) else {
                        continue;
                    };
                    let src = &x[(c * h + r) * w..][..w];
                    row_taps(dst, src, [k[p * 3], k[p * 3 + 1], k[p * 3 + 2]]);
                }
            }
        }
    }
}

/// Stride-1 backward pass matching [`conv2d_direct_body`].
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv2d_backward_direct_body<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    weights: &[T],
    shape: ConvShape,
    dy: &[T],
    dw: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n = h * w;
    // per-column partial sums for the three horizontal taps, reduced once per kernel entry
    let mut acc = vec![T::zero(); 3 * w];
    for o in 0..shape.c_out {
        let dy_o = &dy[o * n..][..n];
        for c in 0..shape.c_in {
            let x_c = &x[c * n..][..n];
            let dw_oc = &mut dw[(o * shape.c_in + c) * 9..][..9];
            for p in 0..KERNEL {
                acc.fill(T::zero());
                let (left, rest) = acc.split_at_mut(w);
                let (mid, right) = rest.split_at_mut(w);
                for i in 0..h {
                    let Some(r) = (i + p).checked_sub(1).filter(|&r| r < h) else {
                        continue;
                    };
                    let g = &dy_o[i * w..][..w];
                    let src = &x_c[r * w..][..w];
                    for ((m, &gj), &sj) in mid.iter_mut().zip(g).zip(src) {
                        *m += gj * sj;
                    }
                    for ((l, &gj), &sj) in left[1..].iter_mut().zip(&g[1..]).zip(src) {
                        *l += gj * sj;
                    }
                    for ((rr, &gj), &sj) in right.iter_mut().zip(g).zip(&src[1..]) {
                        *rr += gj * sj;
                    }
                }
                for (q, part) in [&*left, &*mid, &*right].into_iter().enumerate() {
                    dw_oc[p * 3 + q] += lane_sum(part);
                }
            }
        }
    }
    let Some(dx) = dx else { return };
    for c in 0..shape.c_in {
        let dx_c = &mut dx[c * n..][..n];
        for r in 0..h {
            let dst = &mut dx_c[r * w..][..w];
            for o in 0..shape.c_out {
                let k = &weights[(o * shape.c_in + c) * 9..][..9];
                for p in 0..KERNEL {
                    // output row i reads input row i + p - 1
                    let Some(i) = (r + 1).checked_sub(p).filter(|&i| i < h) else {
                        continue;
                    };
                    let g = &dy[(o * h + i) * w..][..w];
                    row_taps(dst, g, [k[p * 3 + 2], k[p * 3 + 1], k[p * 3]]);
                }
            }
        }
    }
}

/// Few output channels make the unrolled GEMM memory-bound; those layers
/// run the direct kernels instead.
fn use_direct(shape: ConvShape) -> bool {
    shape.stride == 1 && shape.c_out <= 8
}

/// `y = conv(x, w) + b` on raw row-major buffers. `x` is `c_in x h x w`.
pub fn conv2d_raw<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    shape: ConvShape,
    y: &mut [T],
) {
    let (ho, wo) = shape.out_dims(h, w);
    let n = ho * wo;
    let k = shape.c_in * 9;
    debug_assert_eq!(x.len(), shape.c_in * h * w);
    debug_assert_eq!(y.len(), shape.c_out * n);
    if use_direct(shape) {
        return conv2d_direct(x, h, w, weights, bias, shape, y);
    }
    for (o, plane) in y.chunks_exact_mut(n).enumerate() {
        plane.fill(bias[o]);
    }
    T::with_scratch(|cols| {
        im2col(x, h, w, shape, cols);
        T::gemm(shape.c_out, k, n, T::one(), weights, (k, 1), cols, (n, 1), T::one(), y, (n, 1));
    });
}

/// Accumulates `dL/dw`, `dL/db` and optionally `dL/dx` for [`conv2d_raw`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_raw<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    weights: &[T],
    shape: ConvShape,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let (ho, wo) = shape.out_dims(h, w);
    let n = ho * wo;
    let k = shape.c_in * 9;
    for (o, plane) in dy.chunks_exact(n).enumerate() {
        db[o] += plane.iter().copied().sum::<T>();
    }
    if use_direct(shape) {
        return conv2d_backward_direct(x, h, w, weights, shape, dy, dw, dx);
    }
    T::with_scratch(|cols| {
        im2col(x, h, w, shape, cols);
        // dW (c_out x k) += dY (c_out x n) * cols^T (n x k)
        T::gemm(shape.c_out, n, k, T::one(), dy, (n, 1), cols, (1, n), T::one(), dw, (k, 1));
        if let Some(dx) = dx {
            // dcols (k x n) = W^T (k x c_out) * dY (c_out x n), overwriting cols
            T::gemm(k, shape.c_out, n, T::one(), weights, (1, k), dy, (n, 1), T::zero(), cols, (n, 1));
            col2im_add(cols, h, w, shape, dx);
        }
    });
}

fn check_operands<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b_len: usize, stride: usize) -> Result<(ConvShape, usize, usize)> {
    let (c, h, wd) = x.chw()?;
    let &[c_out, c_in, kh, kw] = w.shape() else {
        return Err(Error::shape(format!("kernel must be 4-d, got {:?}", w.shape())));
    };
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::shape(format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if c_in != c {
        return Err(Error::shape(format!(
            "input has {c} channels but kernel expects {c_in}"
        )));
    }
    if b_len != c_out {
        return Err(Error::shape(format!(
            "bias has {b_len} entries for {c_out} output channels"
        )));
    }
    let shape = ConvShape { c_in, c_out, stride };
    shape.check()?;
    Ok((shape, h, wd))
}

/// 3x3 convolution, zero padding 1, stride 1 or 2.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &[T], stride: usize) -> Result<Tensor<T>> {
    let (shape, h, wd) = check_operands(x, w, b.len(), stride)?;
    let (ho, wo) = shape.out_dims(h, wd);
    let mut y = Tensor::zeros(&[shape.c_out, ho, wo]);
    conv2d_raw(x.data(), h, wd, w.data(), b, shape, y.data_mut());
    Ok(y)
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let c_out = w.shape().first().copied().unwrap_or(0);
    let (shape, h, wd) = check_operands(x, w, c_out, stride)?;
    let (ho, wo) = shape.out_dims(h, wd);
    if dy.shape() != [shape.c_out, ho, wo] {
        return Err(Error::shape(format!(
            "upstream gradient shape {:?} != output shape {:?}",
            dy.shape(),
            [shape.c_out, ho, wo]
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); shape.c_out];
    conv2d_backward_raw(
        x.data(),
        h,
        wd,
        w.data(),
        shape,
        dy.data(),
        dw.data_mut(),
        &mut db,
        Some(dx.data_mut()),
    );
    Ok(ConvGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct transcription of the convolution sum with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize) -> Tensor<f64> {
        let (c_in, h, wd) = x.chw().unwrap();
        let c_out = w.shape()[0];
        let ho = (h + s - 1) / s;
        let wo = (wd + s - 1) / s;
        let padded = |c: usize, r: isize, col: isize| -> f64 {
            if r < 0 || col < 0 || r >= h as isize || col >= wd as isize {
                0.0
            } else {
                x.data()[(c * h + r as usize) * wd + col as usize]
            }
        };
        let mut out = Tensor::zeros(&[c_out, ho, wo]);
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for p in 0..3 {
                            for q in 0..3 {
                                let wv = w.data()[((o * c_in + c) * 3 + p) * 3 + q];
                                acc += wv
                                    * padded(c, (i * s + p) as isize - 1, (j * s + q) as isize - 1);
                            }
                        }
                    }
                    out.data_mut()[(o * ho + i) * wo + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, &[1, 4, 4]);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d(&x, &w, &[0.0], 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_only_kernel_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, &[2, 5, 3]);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &w, &[0.5; 3], 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (&s, &c_out) in [1usize, 2].iter().flat_map(|s| [3usize, 10].iter().map(move |c| (s, c))) {
            for &(h, w) in &[(5usize, 5usize), (4, 7), (1, 3), (2, 2), (3, 19)] {
                let x = random_tensor(&mut rng, &[2, h, w]);
                let k = random_tensor(&mut rng, &[c_out, 2, 3, 3]);
                let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = conv2d(&x, &k, &b, s).unwrap();
                let oracle = conv_oracle(&x, &k, &b, s);
                assert_eq!(y.shape(), oracle.shape());
                for (a, e) in y.data().iter().zip(oracle.data()) {
                    assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn direct_and_unrolled_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(h, w) in &[(6usize, 19usize), (1, 1), (1, 2), (9, 4)] {
            let shape = ConvShape { c_in: 3, c_out: 4, stride: 1 };
            let x = random_tensor(&mut rng, &[3, h, w]);
            let k = random_tensor(&mut rng, &[4, 3, 3, 3]);
            let b = vec![0.25; 4];
            let dy = random_tensor(&mut rng, &[4, h, w]);

            let mut y_direct = vec![0.0; 4 * h * w];
            conv2d_direct(x.data(), h, w, k.data(), &b, shape, &mut y_direct);
            let mut y_gemm = vec![0.25; 4 * h * w];
            let mut cols = Vec::new();
            im2col(x.data(), h, w, shape, &mut cols);
            f64::gemm(4, 27, h * w, 1.0, k.data(), (27, 1), &cols, (h * w, 1), 1.0, &mut y_gemm, (h * w, 1));
            for (a, e) in y_direct.iter().zip(&y_gemm) {
                assert!((a - e).abs() <= 1e-12);
            }

            let mut dw_direct = vec![0.0; 108];
            let mut dx_direct = vec![0.0; 3 * h * w];
            conv2d_backward_direct(x.data(), h, w, k.data(), shape, dy.data(), &mut dw_direct, Some(&mut dx_direct));
            let mut dw_gemm = vec![0.0; 108];
            f64::gemm(4, h * w, 27, 1.0, dy.data(), (h * w, 1), &cols, (1, h * w), 1.0, &mut dw_gemm, (27, 1));
            let mut dcols = vec![0.0; 27 * h * w];
            f64::gemm(27, 4, h * w, 1.0, k.data(), (1, 27), dy.data(), (h * w, 1), 0.0, &mut dcols, (h * w, 1));
            let mut dx_gemm = vec![0.0; 3 * h * w];
            col2im_add(&dcols, h, w, shape, &mut dx_gemm);
            for (a, e) in dw_direct.iter().zip(&dw_gemm).chain(dx_direct.iter().zip(&dx_gemm)) {
                assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (&s, &c_out) in [1usize, 2].iter().flat_map(|s| [3usize, 10].iter().map(move |c| (s, c))) {
            let x = random_tensor(&mut rng, &[2, 5, 11]);
            let k = random_tensor(&mut rng, &[c_out, 2, 3, 3]);
            let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = conv2d(&x, &k, &b, s).unwrap();
            let dy = random_tensor(&mut rng, y.shape());
            let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64]| -> f64 {
                let y = conv2d(x, k, b, s).unwrap();
                y.data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
            };
            let g = conv2d_backward(&x, &k, s, &dy).unwrap();
            let h = 1e-5;
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (loss(&xp, &k, &b) - loss(&xm, &k, &b)) / (2.0 * h);
                assert!((fd - g.dx.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
            for i in 0..k.len() {
                let mut kp = k.clone();
                kp.data_mut()[i] += h;
                let mut km = k.clone();
                km.data_mut()[i] -= h;
                let fd = (loss(&x, &kp, &b) - loss(&x, &km, &b)) / (2.0 * h);
                assert!((fd - g.dw.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
            for o in 0..c_out {
                let expected: f64 = dy.channel(o).iter().sum();
                assert!((expected - g.db[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = random_tensor(&mut rng, &[2, 6, 6]);
        let x2 = random_tensor(&mut rng, &[2, 6, 6]);
        let k = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let (a, b) = (0.7, -1.3);
        let mix = Tensor::from_vec(
            &[2, 6, 6],
            x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = conv2d(&mix, &k, &[0.0; 2], 2).unwrap();
        let y1 = conv2d(&x1, &k, &[0.0; 2], 2).unwrap();
        let y2 = conv2d(&x2, &k, &[0.0; 2], 2).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            let r = a * p + b * q;
            assert!((l - r).abs() <= 1e-10 * r.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_operands() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let k = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, &[0.0], 1), Err(Error::Shape(_))));
        let k = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        assert!(matches!(conv2d(&x, &k, &[0.0], 3), Err(Error::Config(_))));
    }
}
