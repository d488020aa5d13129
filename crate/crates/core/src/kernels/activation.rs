use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn leaky_relu_in_place<T: Real>(x: &mut [T], slope: T) {
    for v in x {
        if *v <= T::zero() {
            *v *= slope;
        }
    }
}

/// `y = x` for `x > 0`, `slope * x` otherwise.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut y = x.clone();
    leaky_relu_in_place(y.data_mut(), slope);
    y
}

/// Multiplies `grad` by the activation derivative evaluated at the
/// pre-activation `x`. The derivative at exactly zero is `slope`.
pub fn leaky_relu_backward_in_place<T: Real>(x: &[T], grad: &mut [T], slope: T) {
    for (g, &v) in grad.iter_mut().zip(x) {
        if v <= T::zero() {
            *g *= slope;
        }
    }
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut dx = dy.clone();
    leaky_relu_backward_in_place(x.data(), dx.data_mut(), slope);
    dx
}
