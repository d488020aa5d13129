//! Single-channel images and two-channel displacement fields.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `H x W` intensity grid, row-major. Pipeline images live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(height, width, rows.concat())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::count(self.data.len())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Views the image as a one-channel activation tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.clone())
            .expect("dims consistent")
    }

    pub fn cast<U: Real>(&self) -> ImageGrid<U> {
        ImageGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub(crate) fn ensure_same_dims<U>(&self, other: &ImageGrid<U>, what: &str) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Backward displacement field: output pixel `(y, x)` samples the moving image
/// at `(x + u, y + v)`. Units are pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T> {
    pub u: ImageGrid<T>,
    pub v: ImageGrid<T>,
}

impl<T: Real> DisplacementField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: ImageGrid::zeros(height, width),
            v: ImageGrid::zeros(height, width),
        }
    }

    pub fn constant(height: usize, width: usize, u: T, v: T) -> Self {
        Self {
            u: ImageGrid::filled(height, width, u),
            v: ImageGrid::filled(height, width, v),
        }
    }

    pub fn new(u: ImageGrid<T>, v: ImageGrid<T>) -> Result<Self> {
        u.ensure_same_dims(&v, "displacement components")?;
        Ok(Self { u, v })
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn all_finite(&self) -> bool {
        self.u.all_finite() && self.v.all_finite()
    }

    /// Largest displacement magnitude `max sqrt(u^2 + v^2)`.
    pub fn max_magnitude(&self) -> T {
        self.u
            .data()
            .iter()
            .zip(self.v.data())
            .fold(T::zero(), |acc, (&a, &b)| acc.max(a.hypot(b)))
    }

    pub fn scale(&mut self, s: T) {
        for x in self.u.data_mut().iter_mut().chain(self.v.data_mut()) {
            *x *= s;
        }
    }

    /// Two-channel `(u, v)` activation tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        let mut data = self.u.data().to_vec();
        data.extend_from_slice(self.v.data());
        Tensor::from_vec(&[2, self.height(), self.width()], data).expect("dims consistent")
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 2 {
            return Err(Error::shape(format!(
                "displacement tensor needs 2 channels, got {c}"
            )));
        }
        Ok(Self {
            u: ImageGrid::from_vec(h, w, t.channel(0).to_vec())?,
            v: ImageGrid::from_vec(h, w, t.channel(1).to_vec())?,
        })
    }

    pub fn cast<U: Real>(&self) -> DisplacementField<U> {
        DisplacementField {
            u: self.u.cast(),
            v: self.v.cast(),
        }
    }

    /// Bilinearly interpolated displacement at a subpixel location, border clamped.
    pub fn sample(&self, x: T, y: T) -> (T, T) {
        (
            crate::kernels::sample_bilinear(&self.u, x, y),
            crate::kernels::sample_bilinear(&self.v, x, y),
        )
    }
}
