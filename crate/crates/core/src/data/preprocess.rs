use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::scalar::Real;

/// An 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} gray image needs {} bytes, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0; 256];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    /// Raw intensities as reals in `[0, 255]`.
    pub fn to_grid<T: Real>(&self) -> ImageGrid<T> {
        ImageGrid::from_fn(self.height, self.width, |y, x| T::lit(self.data[y * self.width + x] as f64))
    }
}

/// Classic CDF histogram equalization. A constant image maps to all zeros.
pub fn hist_equalize(img: &GrayImage) -> GrayImage {
    let hist = img.histogram();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let n = img.data.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            if n == cdf_min {
                0
            } else {
                ((c.saturating_sub(cdf_min)) as f64 / (n - cdf_min) as f64 * 255.0).round() as u8
            }
        })
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| lut[v as usize]).collect(),
    }
}

/// Bilinear resampling with corner-aligned coordinates.
pub fn resize_bilinear<T: Real>(img: &ImageGrid<T>, height: usize, width: usize) -> Result<ImageGrid<T>> {
    if height < 2 || width < 2 {
        return Err(Error::config(format!("resize target {height}x{width} must be at least 2x2")));
    }
    if img.is_empty() {
        return Err(Error::shape("cannot resize an empty image"));
    }
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let axis = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, T) {
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, T::lit(pos - lo as f64))
    };
    Ok(ImageGrid::from_fn(height, width, |y, x| {
        let (y0, y1, fy) = axis(y, height, h);
        let (x0, x1, fx) = axis(x, width, w);
        let top = img.get(y0, x0) + (img.get(y0, x1) - img.get(y0, x0)) * fx;
        let bot = img.get(y1, x0) + (img.get(y1, x1) - img.get(y1, x0)) * fx;
        top + (bot - top) * fy
    }))
}

/// Affine map of the intensity range onto `[0, 1]`; constant images become zero.
pub fn rescale_unit<T: Real>(img: &ImageGrid<T>) -> ImageGrid<T> {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if range <= T::zero() {
        return img.map(|_| T::zero());
    }
    img.map(|v| (v - lo) / range)
}
