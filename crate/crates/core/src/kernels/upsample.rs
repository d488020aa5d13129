use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Nearest-neighbour 2x upsampling: `y[c, i, j] = x[c, i / 2, j / 2]`.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = Tensor::zeros(&[c, h2, w2]);
    let out = y.data_mut();
    for ch in 0..c {
        let src = x.channel(ch);
        for i in 0..h2 {
            let row_src = &src[(i / 2) * w..(i / 2 + 1) * w];
            let row_dst = &mut out[(ch * h2 + i) * w2..(ch * h2 + i + 1) * w2];
            for (pair, &v) in row_dst.chunks_exact_mut(2).zip(row_src) {
                pair[0] = v;
                pair[1] = v;
            }
        }
    }
    Ok(y)
}

/// Sums the upstream gradient over each 2x2 block.
pub fn upsample2x_backward<T: Real>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h2, w2) = dy.chw()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape(format!(
            "upsample gradient must have even dims, got {h2}x{w2}"
        )));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[c, h, w]);
    let out = dx.data_mut();
    for ch in 0..c {
        let g = dy.channel(ch);
        for i in 0..h2 {
            let row = &g[i * w2..(i + 1) * w2];
            let dst = &mut out[(ch * h + i / 2) * w..(ch * h + i / 2 + 1) * w];
            for (d, pair) in dst.iter_mut().zip(row.chunks_exact(2)) {
                *d += pair[0] + pair[1];
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_constant_output() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(
            y.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0,
            ]
        );
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::filled(&[3, 3, 5], 0.25_f32);
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[3, 6, 10]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_counts_four_contributions() {
        let dy = Tensor::filled(&[2, 6, 4], 1.0_f64);
        let dx = upsample2x_backward(&dy).unwrap();
        assert_eq!(dx.shape(), &[2, 3, 2]);
        assert!(dx.data().iter().all(|&v| v == 4.0));
    }
}
