use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Stacks the channels of `a` followed by the channels of `b`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(format!(
            "concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, ha, wa], data)
}

/// Inverse of [`concat_channels`]; also splits an upstream gradient at channel `c1`.
pub fn split_channels<T: Real>(t: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = t.chw()?;
    if c1 > c {
        return Err(Error::shape(format!("split at {c1} beyond {c} channels")));
    }
    let cut = c1 * h * w;
    Ok((
        Tensor::from_vec(&[c1, h, w], t.data()[..cut].to_vec())?,
        Tensor::from_vec(&[c - c1, h, w], t.data()[cut..].to_vec())?,
    ))
}
