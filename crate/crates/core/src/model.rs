//! U-Net style registration network mapping a channel-stacked `(M, F)` pair
//! to a dense displacement field.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::kernels::{
    concat_channels, conv2d_backward_raw, conv2d_raw, leaky_relu_backward_in_place,
    leaky_relu_in_place, split_channels, upsample2x, upsample2x_backward, ConvShape,
};
use crate::params::{ParamLayout, ParamVector};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLevel {
    pub channels: usize,
    pub stride: usize,
}

impl EncoderLevel {
    pub const fn new(channels: usize, stride: usize) -> Self {
        Self { channels, stride }
    }
}

/// Network topology. The decoder has one level per stride-2 encoder level and
/// each decoder level concatenates the deepest encoder activation at its
/// resolution (the input pair itself at full resolution when no encoder level
/// produced one).
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub encoder: Vec<EncoderLevel>,
    pub decoder: Vec<usize>,
    pub leaky_slope: f64,
    pub final_zero_init: bool,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchSpec {
    /// Encoder `[16 s1, 32 s2, 32 s2, 32 s2]`, decoder `[32, 32, 16]`.
    pub fn desk() -> Self {
        Self {
            encoder: vec![
                EncoderLevel::new(16, 1),
                EncoderLevel::new(32, 2),
                EncoderLevel::new(32, 2),
                EncoderLevel::new(32, 2),
            ],
            decoder: vec![32, 32, 16],
            leaky_slope: 0.2,
            final_zero_init: true,
        }
    }

    /// Narrow variant of [`ArchSpec::desk`] for CPU-bound experiments.
    pub fn compact() -> Self {
        Self {
            encoder: vec![
                EncoderLevel::new(8, 1),
                EncoderLevel::new(16, 2),
                EncoderLevel::new(16, 2),
            ],
            decoder: vec![16, 8],
            leaky_slope: 0.2,
            final_zero_init: true,
        }
    }

    /// Two stride-2 levels with a handful of channels, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            encoder: vec![
                EncoderLevel::new(4, 1),
                EncoderLevel::new(4, 2),
                EncoderLevel::new(6, 2),
            ],
            decoder: vec![4, 4],
            leaky_slope: 0.2,
            final_zero_init: true,
        }
    }

    pub fn downsampling_levels(&self) -> usize {
        self.encoder.iter().filter(|l| l.stride == 2).count()
    }

    /// Input sides must be divisible by this.
    pub fn stride_product(&self) -> usize {
        1 << self.downsampling_levels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::config("encoder needs at least one level"));
        }
        if let Some(l) = self.encoder.iter().find(|l| l.stride != 1 && l.stride != 2) {
            return Err(Error::config(format!("encoder stride {} not in {{1, 2}}", l.stride)));
        }
        if self.encoder.iter().any(|l| l.channels == 0) || self.decoder.contains(&0) {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.decoder.len() != self.downsampling_levels() {
            return Err(Error::config(format!(
                "decoder has {} levels but encoder downsamples {} times",
                self.decoder.len(),
                self.downsampling_levels()
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope <= 1.0) {
            return Err(Error::config(format!(
                "leaky slope {} outside (0, 1]",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LayerKind {
    Encoder,
    /// Skip source: encoder level index, or `None` for the input pair.
    Decoder { skip: Option<usize> },
    Flow,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kind: LayerKind,
    shape: ConvShape,
    weight: usize,
    bias: usize,
}

/// Activations retained by [`RegistrationNet::forward`] for the backward pass.
///
/// The cache owns a copy of the parameters it was computed with, so it can
/// only ever be replayed against the triple that produced it.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    params: ParamVector<T>,
    height: usize,
    width: usize,
    /// Input of every conv layer, in layer order.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of every activated conv layer.
    pre: Vec<Tensor<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// The registration network `G_theta` for a fixed [`ArchSpec`].
#[derive(Clone, Debug)]
pub struct RegistrationNet {
    arch: ArchSpec,
    layers: Vec<ConvLayer>,
    layout: Arc<ParamLayout>,
}

impl RegistrationNet {
    pub fn new(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut layout = ParamLayout::new();
        let mut layers = Vec::new();
        let mut push = |layout: &mut ParamLayout, name: String, kind, shape: ConvShape| {
            let weight = layout.push(format!("{name}.weight"), &[shape.c_out, shape.c_in, 3, 3]);
            let bias = layout.push(format!("{name}.bias"), &[shape.c_out]);
            layers.push(ConvLayer {
                kind,
                shape,
                weight,
                bias,
            });
        };

        // (resolution level, channels) of every tensor a decoder may reuse.
        let mut level = 0usize;
        let mut channels = 2usize;
        let mut enc_levels = Vec::with_capacity(arch.encoder.len());
        for (i, l) in arch.encoder.iter().enumerate() {
            let shape = ConvShape {
                c_in: channels,
                c_out: l.channels,
                stride: l.stride,
            };
            push(&mut layout, format!("enc{i}"), LayerKind::Encoder, shape);
            if l.stride == 2 {
                level += 1;
            }
            channels = l.channels;
            enc_levels.push((level, channels));
        }
        for (d, &c_out) in arch.decoder.iter().enumerate() {
            let target = level - d - 1;
            let skip = enc_levels.iter().rposition(|&(lv, _)| lv == target);
            let skip_channels = skip.map_or(2, |i| enc_levels[i].1);
            let shape = ConvShape {
                c_in: channels + skip_channels,
                c_out,
                stride: 1,
            };
            push(&mut layout, format!("dec{d}"), LayerKind::Decoder { skip }, shape);
            channels = c_out;
        }
        push(
            &mut layout,
            "flow".to_string(),
            LayerKind::Flow,
            ConvShape {
                c_in: channels,
                c_out: 2,
                stride: 1,
            },
        );
        Ok(Self {
            arch,
            layers,
            layout: Arc::new(layout),
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    /// Seeded initialization: hidden kernels uniform in `+-1/sqrt(fan_in)`,
    /// biases zero, and an all-zero flow layer when `final_zero_init` is set.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::zeros(self.layout.clone());
        for layer in &self.layers {
            if layer.kind == LayerKind::Flow && self.arch.final_zero_init {
                continue;
            }
            let bound = 1.0 / ((layer.shape.c_in * 9) as f64).sqrt();
            for w in params.tensor_mut(layer.weight) {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let k = self.arch.stride_product();
        if height == 0 || width == 0 || height % k != 0 || width % k != 0 {
            return Err(Error::shape(format!(
                "{height}x{width} input is not divisible by the network stride product {k}"
            )));
        }
        Ok(())
    }

    fn check_params<T: Real>(&self, params: &ParamVector<T>) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::shape("parameters do not match this architecture"));
        }
        Ok(())
    }

    /// Predicts the displacement field for `(moving, fixed)`.
    pub fn forward<T: Real>(
        &self,
        params: &ParamVector<T>,
        moving: &ImageGrid<T>,
        fixed: &ImageGrid<T>,
    ) -> Result<(DisplacementField<T>, ForwardCache<T>)> {
        self.check_params(params)?;
        moving.ensure_same_dims(fixed, "moving vs fixed")?;
        let (h, w) = moving.dims();
        self.check_dims(h, w)?;
        let slope = T::lit(self.arch.leaky_slope);

        let input = concat_channels(&moving.to_tensor(), &fixed.to_tensor())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(self.arch.encoder.len());
        let mut cur = input.clone();

        for layer in &self.layers {
            let layer_in = match layer.kind {
                LayerKind::Encoder | LayerKind::Flow => cur,
                LayerKind::Decoder { skip } => {
                    let up = upsample2x(&cur)?;
                    let skip_t = skip.map_or(&input, |i| &enc_out[i]);
                    concat_channels(&up, skip_t)?
                }
            };
            let (_, hi, wi) = layer_in.chw()?;
            let (ho, wo) = layer.shape.out_dims(hi, wi);
            let mut out = Tensor::zeros(&[layer.shape.c_out, ho, wo]);
            conv2d_raw(
                layer_in.data(),
                hi,
                wi,
                params.tensor(layer.weight),
                params.tensor(layer.bias),
                layer.shape,
                out.data_mut(),
            );
            inputs.push(layer_in);
            if layer.kind == LayerKind::Flow {
                cur = out;
                break;
            }
            pre.push(out.clone());
            leaky_relu_in_place(out.data_mut(), slope);
            if layer.kind == LayerKind::Encoder {
                enc_out.push(out.clone());
            }
            cur = out;
        }

        let phi = DisplacementField::from_tensor(&cur)?;
        if !phi.all_finite() {
            return Err(Error::Numeric("network produced a non-finite displacement".into()));
        }
        Ok((
            phi,
            ForwardCache {
                params: params.clone(),
                height: h,
                width: w,
                inputs,
                pre,
            },
        ))
    }

    /// Displacement field only, without keeping a cache around.
    pub fn predict<T: Real>(
        &self,
        params: &ParamVector<T>,
        moving: &ImageGrid<T>,
        fixed: &ImageGrid<T>,
    ) -> Result<DisplacementField<T>> {
        self.forward(params, moving, fixed).map(|(phi, _)| phi)
    }

    /// `dL/dtheta` given `dL/dphi`, by reverse composition of the layer gradients.
    pub fn backward<T: Real>(
        &self,
        cache: &ForwardCache<T>,
        grad_phi: &DisplacementField<T>,
    ) -> Result<ParamVector<T>> {
        if cache.params.layout().as_ref() != self.layout.as_ref()
            || cache.inputs.len() != self.layers.len()
        {
            return Err(Error::State("forward cache belongs to a different network".into()));
        }
        if grad_phi.dims() != cache.dims() {
            return Err(Error::State(format!(
                "gradient is {:?} but the cached forward pass was {:?}",
                grad_phi.dims(),
                cache.dims()
            )));
        }
        let slope = T::lit(self.arch.leaky_slope);
        let params = &cache.params;
        let mut grads = params.zeros_like();
        let n_enc = self.arch.encoder.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; n_enc];
        let mut g = grad_phi.to_tensor();

        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.kind != LayerKind::Flow {
                if layer.kind == LayerKind::Encoder {
                    if let Some(extra) = skip_grads[idx].take() {
                        for (a, b) in g.data_mut().iter_mut().zip(extra.data()) {
                            *a += *b;
                        }
                    }
                }
                leaky_relu_backward_in_place(cache.pre[idx].data(), g.data_mut(), slope);
            }
            let x = &cache.inputs[idx];
            let (_, hi, wi) = x.chw()?;
            let need_dx = idx > 0;
            let mut dx = if need_dx { Some(Tensor::zeros(x.shape())) } else { None };
            let entries = params.layout().entries();
            let (w_range, b_range) = (entries[layer.weight].range(), entries[layer.bias].range());
            {
                let gdata = grads.data_mut();
                let (head, tail) = gdata.split_at_mut(b_range.start);
                conv2d_backward_raw(
                    x.data(),
                    hi,
                    wi,
                    &params.data()[w_range.clone()],
                    layer.shape,
                    g.data(),
                    &mut head[w_range],
                    &mut tail[..b_range.len()],
                    dx.as_mut().map(|t| t.data_mut()),
                );
            }
            let Some(dx) = dx else { break };
            g = match layer.kind {
                LayerKind::Decoder { skip } => {
                    let up_channels = layer.shape.c_in - skip.map_or(2, |i| self.layers[i].shape.c_out);
                    let (d_up, d_skip) = split_channels(&dx, up_channels)?;
                    if let Some(i) = skip {
                        match &mut skip_grads[i] {
                            Some(acc) => {
                                for (a, b) in acc.data_mut().iter_mut().zip(d_skip.data()) {
                                    *a += *b;
                                }
                            }
                            slot => *slot = Some(d_skip),
                        }
                    }
                    upsample2x_backward(&d_up)?
                }
                LayerKind::Encoder | LayerKind::Flow => dx,
            };
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite parameter gradient".into()));
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(h: usize, w: usize, seed: u64) -> (ImageGrid<f64>, ImageGrid<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>());
        let f = ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>());
        (m, f)
    }

    #[test]
    fn parameter_count_is_a_function_of_the_arch() {
        let a = RegistrationNet::new(ArchSpec::desk()).unwrap();
        let b = RegistrationNet::new(ArchSpec::desk()).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert_eq!(a.layout(), b.layout());
        // enc: 2->16, 16->32, 32->32, 32->32; dec: 64->32, 64->32, 48->16; flow 16->2
        let conv = |ci: usize, co: usize| ci * co * 9 + co;
        let expected = conv(2, 16) + conv(16, 32) + 2 * conv(32, 32) + 2 * conv(64, 32) + conv(48, 16) + conv(16, 2);
        assert_eq!(a.param_count(), expected);
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let mut arch = ArchSpec::tiny();
        arch.decoder.pop();
        assert!(matches!(RegistrationNet::new(arch), Err(Error::Config(_))));
        let mut arch = ArchSpec::tiny();
        arch.encoder[1].stride = 3;
        assert!(RegistrationNet::new(arch).is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let net = RegistrationNet::new(ArchSpec::tiny()).unwrap();
        let a: ParamVector<f64> = net.init_params(7);
        let b: ParamVector<f64> = net.init_params(7);
        let c: ParamVector<f64> = net.init_params(8);
        assert_eq!(a, b);
        assert_ne!(a.by_name("enc0.weight"), c.by_name("enc0.weight"));
        assert!(a.by_name("flow.weight").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.by_name("enc1.bias").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_flow_layer_predicts_identity() {
        let net = RegistrationNet::new(ArchSpec::tiny()).unwrap();
        let params: ParamVector<f64> = net.init_params(3);
        let (m, f) = pair(16, 16, 1);
        let (phi, _) = net.forward(&params, &m, &f).unwrap();
        assert_eq!(phi.max_magnitude(), 0.0);
        assert_eq!(crate::kernels::warp_bilinear(&m, &phi).unwrap(), m);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut arch = ArchSpec::tiny();
        arch.final_zero_init = false;
        let net = RegistrationNet::new(arch).unwrap();
        let params: ParamVector<f64> = net.init_params(5);
        let (m, f) = pair(8, 8, 2);
        let a = net.predict(&params, &m, &f).unwrap();
        let b = net.predict(&params, &m, &f).unwrap();
        assert_eq!(a, b);
        assert!(a.max_magnitude() > 0.0);
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let net = RegistrationNet::new(ArchSpec::tiny()).unwrap();
        let params: ParamVector<f64> = net.init_params(0);
        let (m, f) = pair(10, 8, 3);
        assert!(matches!(net.forward(&params, &m, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient_and_scaling_is_homogeneous() {
        let mut arch = ArchSpec::tiny();
        arch.final_zero_init = false;
        let net = RegistrationNet::new(arch).unwrap();
        let params: ParamVector<f64> = net.init_params(11);
        let (m, f) = pair(8, 8, 4);
        let (_, cache) = net.forward(&params, &m, &f).unwrap();
        let zero = net.backward(&cache, &DisplacementField::zeros(8, 8)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = DisplacementField::new(
            ImageGrid::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)),
            ImageGrid::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let mut g2 = g.clone();
        g2.scale(2.0);
        let a = net.backward(&cache, &g).unwrap();
        let b = net.backward(&cache, &g2).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn mismatched_gradient_is_a_state_error() {
        let net = RegistrationNet::new(ArchSpec::tiny()).unwrap();
        let params: ParamVector<f64> = net.init_params(0);
        let (m, f) = pair(8, 8, 5);
        let (_, cache) = net.forward(&params, &m, &f).unwrap();
        let err = net.backward(&cache, &DisplacementField::zeros(4, 4)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
