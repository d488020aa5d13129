//! Unsupervised deformable 2D image registration with a Reptile-style
//! meta-learning outer loop.
//!
//! Every numeric routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the bottom of this file pick a concrete precision.

pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod metatrain;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use data::{DomainSpec, PairSample, Task, TaskSpec, TextureKind};
pub use error::{Error, Result};
pub use grid::{DisplacementField, ImageGrid};
pub use loss::{local_cc, local_cc_map, smoothness, total_loss, LossConfig, LossEval};
pub use metatrain::{fine_tune, meta_train, pretrain, register_pair, InnerPairs, TrainConfig};
pub use model::{ArchSpec, EncoderLevel, ForwardCache, RegistrationNet};
pub use optim::{adam_step, reptile_outer, reptile_outer_adam, AdamState};
pub use params::{param_axpy, ParamLayout, ParamVector};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Image32 = ImageGrid<f32>;
pub type Image64 = ImageGrid<f64>;
pub type Field32 = DisplacementField<f32>;
pub type Field64 = DisplacementField<f64>;
pub type Params32 = ParamVector<f32>;
pub type Params64 = ParamVector<f64>;
