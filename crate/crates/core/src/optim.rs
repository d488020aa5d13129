//! Adam for the task-level updates and the Reptile interpolation for the
//! meta-parameters.

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::scalar::{lerp, Real};

/// Adam moments for one parameter vector, with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamVector<T>,
    pub v: ParamVector<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Fresh state (zero moments, `t = 0`) shaped like `params`.
    pub fn new(params: &ParamVector<T>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update of `params` in place. A non-finite gradient is refused
    /// and leaves both `params` and the state untouched.
    pub fn step(&mut self, params: &mut ParamVector<T>, grad: &ParamVector<T>) -> Result<()> {
        params.ensure_compatible(grad)?;
        params.ensure_compatible(&self.m)?;
        if !(self.lr >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !grad.all_finite() {
            return Err(Error::Numeric("refusing Adam step on a non-finite gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let it = params
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(self.m.data_mut().iter_mut().zip(self.v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    state: &AdamState<T>,
    params: &ParamVector<T>,
    grad: &ParamVector<T>,
) -> Result<(ParamVector<T>, AdamState<T>)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grad)?;
    Ok((params, state))
}

/// `theta_meta + alpha * mean_t(theta_t - theta_meta)`.
///
/// Evaluated as an interpolation toward the task mean so that a zero
/// pseudo-gradient and the `m = 1, alpha = 1` case are both exact.
pub fn reptile_outer<T: Real>(
    meta: &ParamVector<T>,
    adapted: &[ParamVector<T>],
    alpha: T,
) -> Result<ParamVector<T>> {
    let target = task_mean(meta, adapted)?;
    let data = meta
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| lerp(a, b, alpha))
        .collect();
    ParamVector::from_vec(meta.layout().clone(), data)
}

/// Mean of the adapted vectors, computed as `meta + mean(theta_t - meta)`
/// (exactly `theta_1` when there is a single task).
pub fn task_mean<T: Real>(meta: &ParamVector<T>, adapted: &[ParamVector<T>]) -> Result<ParamVector<T>> {
    let Some(first) = adapted.first() else {
        return Err(Error::config("meta update needs at least one adapted parameter vector"));
    };
    for a in adapted {
        meta.ensure_compatible(a)?;
    }
    if adapted.len() == 1 {
        return Ok(first.clone());
    }
    let inv = T::one() / T::count(adapted.len());
    let mut mean = meta.clone();
    for (i, slot) in mean.data_mut().iter_mut().enumerate() {
        let base = *slot;
        let sum: T = adapted.iter().map(|a| a.data()[i] - base).sum();
        *slot = base + sum * inv;
    }
    Ok(mean)
}

/// Outer update that feeds the Reptile pseudo-gradient `theta_meta - mean(theta_t)`
/// through its own Adam state instead of the plain interpolation.
pub fn reptile_outer_adam<T: Real>(
    meta: &mut ParamVector<T>,
    adapted: &[ParamVector<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    let target = task_mean(meta, adapted)?;
    let pseudo_grad = meta.sub(&target)?;
    state.step(meta, &pseudo_grad)
}
