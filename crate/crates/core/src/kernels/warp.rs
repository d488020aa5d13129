//! Bilinear spatial transformer with border clamping.

use crate::error::Result;
use crate::grid::{DisplacementField, ImageGrid};
use crate::scalar::Real;

/// Clamped cell lookup along one axis: `(i0, i1, frac, inside)` where
/// `inside` is false when the raw coordinate was clamped (zero derivative).
#[inline]
fn cell<T: Real>(coord: T, n: usize) -> (usize, usize, T, bool) {
    let max = T::count(n - 1);
    // Right-continuous: the top border belongs to the clamped region.
    let inside = coord >= T::zero() && coord < max;
    let c = coord.max(T::zero()).min(max);
    let i0 = c.floor().to_usize().unwrap_or(0).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - T::count(i0), inside)
}

/// Bilinear sample of `img` at `(x, y)`, coordinates clamped to the image rectangle.
pub fn sample_bilinear<T: Real>(img: &ImageGrid<T>, x: T, y: T) -> T {
    let (x0, x1, fx, _) = cell(x, img.width());
    let (y0, y1, fy, _) = cell(y, img.height());
    let one = T::one();
    (one - fx) * (one - fy) * img.get(y0, x0)
        + fx * (one - fy) * img.get(y0, x1)
        + (one - fx) * fy * img.get(y1, x0)
        + fx * fy * img.get(y1, x1)
}

/// `M(phi)[y, x] = M(x + u, y + v)` with bilinear interpolation and border clamp.
pub fn warp_bilinear<T: Real>(moving: &ImageGrid<T>, phi: &DisplacementField<T>) -> Result<ImageGrid<T>> {
    moving.ensure_same_dims(&phi.u, "warp image vs field")?;
    let (h, w) = moving.dims();
    let mut out = ImageGrid::zeros(h, w);
    for y in 0..h {
        let yf = T::count(y);
        for x in 0..w {
            let sx = T::count(x) + phi.u.get(y, x);
            let sy = yf + phi.v.get(y, x);
            out.set(y, x, sample_bilinear(moving, sx, sy));
        }
    }
    Ok(out)
}

/// Gradient of a scalar loss with respect to `phi`, given `dL/dM(phi)`.
pub fn warp_bilinear_backward<T: Real>(
    moving: &ImageGrid<T>,
    phi: &DisplacementField<T>,
    grad_out: &ImageGrid<T>,
) -> Result<DisplacementField<T>> {
    moving.ensure_same_dims(&phi.u, "warp image vs field")?;
    moving.ensure_same_dims(grad_out, "warp image vs upstream gradient")?;
    let (h, w) = moving.dims();
    let mut grad = DisplacementField::zeros(h, w);
    let one = T::one();
    for y in 0..h {
        let yf = T::count(y);
        for x in 0..w {
            let g = grad_out.get(y, x);
            if g == T::zero() {
                continue;
            }
            let (x0, x1, fx, in_x) = cell(T::count(x) + phi.u.get(y, x), w);
            let (y0, y1, fy, in_y) = cell(yf + phi.v.get(y, x), h);
            let (m00, m01) = (moving.get(y0, x0), moving.get(y0, x1));
            let (m10, m11) = (moving.get(y1, x0), moving.get(y1, x1));
            if in_x {
                let d = (one - fy) * (m01 - m00) + fy * (m11 - m10);
                grad.u.set(y, x, g * d);
            }
            if in_y {
                let d = (one - fx) * (m10 - m00) + fx * (m11 - m01);
                grad.v.set(y, x, g * d);
            }
        }
    }
    Ok(grad)
}
