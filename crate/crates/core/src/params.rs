//! Flat parameter storage with a named tensor layout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{lerp, Real};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered names and shapes of every tensor in a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total_len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its entry index.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total_len,
        };
        self.total_len += entry.len();
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// All network weights `theta` as one contiguous vector plus its layout.
///
/// Vectors built from the same architecture share an identical layout, which
/// is what makes the elementwise arithmetic of the meta update well defined.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total_len()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<ParamLayout>, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.total_len() {
            return Err(Error::shape(format!(
                "layout holds {} parameters, got {}",
                layout.total_len(),
                data.len()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, index: usize) -> &[T] {
        &self.data[self.layout.entries()[index].range()]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut [T] {
        let range = self.layout.entries()[index].range();
        &mut self.data[range]
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.index_of(name).map(|i| self.tensor(i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::shape("parameter vectors come from different architectures"))
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Self, s: T) -> Result<()> {
        self.ensure_compatible(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            layout: self.layout.clone(),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> ParamVector<U> {
        ParamVector {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// `a + alpha (b - a)`, elementwise. Exact at `alpha = 0` and `alpha = 1`.
pub fn param_axpy<T: Real>(a: &ParamVector<T>, b: &ParamVector<T>, alpha: T) -> Result<ParamVector<T>> {
    a.ensure_compatible(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| lerp(x, y, alpha))
        .collect();
    Ok(ParamVector {
        layout: a.layout.clone(),
        data,
    })
}
