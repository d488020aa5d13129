//! Synthetic multi-domain registration tasks and preprocessing of real images.

mod field;
mod pair;
mod preprocess;
mod task;
mod texture;

pub use field::{gaussian_blur, gen_gt_field};
pub use pair::{make_pair, Landmark, LandmarkSet, PairSample};
pub use preprocess::{hist_equalize, resize_bilinear, rescale_unit, GrayImage};
pub use task::{Task, TaskSource, TaskSpec};
pub use texture::{gen_texture, DomainSpec, TextureKind, TextureParams};
