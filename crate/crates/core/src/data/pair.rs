use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::kernels::warp_bilinear;
use crate::rng::{derive_seed, stream};
use crate::scalar::Real;

use super::field::gen_gt_field;
use super::texture::{gen_texture, DomainSpec};

/// One correspondence: a moving-frame point and its fixed-frame counterpart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub moving: (f64, f64),
    pub fixed: (f64, f64),
}

/// Paired correspondence points, `(x, y)` pixel coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub pairs: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean `|moving - fixed|`: the distance with no deformation applied.
    pub fn mean_raw_distance(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs
            .iter()
            .map(|l| (l.moving.0 - l.fixed.0).hypot(l.moving.1 - l.fixed.1))
            .sum::<f64>()
            / self.pairs.len() as f64
    }

    pub fn within_bounds(&self, height: usize, width: usize) -> bool {
        let inside = |(x, y): (f64, f64)| {
            x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
        };
        self.pairs.iter().all(|l| inside(l.moving) && inside(l.fixed))
    }
}

/// A `(moving, fixed)` pair with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample<T> {
    pub id: String,
    pub moving: ImageGrid<T>,
    pub fixed: ImageGrid<T>,
    pub gt_field: Option<DisplacementField<T>>,
    pub landmarks: Option<LandmarkSet>,
}

/// Synthesizes a pair: `F = clamp(M(phi_gt) + noise, 0, 1)` with the noise
/// truncated at four standard deviations, plus `n_landmarks` integer fixed
/// points at least `ceil(amplitude) + 2` pixels from the border, each paired
/// with `f + phi_gt(f)`.
pub fn make_pair<T: Real>(spec: &DomainSpec, seed: u64, n_landmarks: usize) -> Result<PairSample<T>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let margin = spec.warp_amplitude.ceil() as usize + 2;
    if n_landmarks > 0 && (2 * margin >= h || 2 * margin >= w) {
        return Err(Error::config(format!(
            "{h}x{w} image leaves no room for landmarks with a {margin}px margin"
        )));
    }
    let moving: ImageGrid<T> = gen_texture(spec, derive_seed(seed, &[1]))?;
    let gt: DisplacementField<T> = gen_gt_field(spec, derive_seed(seed, &[2]))?;
    let mut fixed = warp_bilinear(&moving, &gt)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = stream(seed, &[3]);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
        let cap = 4.0 * spec.noise_sigma;
        for v in fixed.data_mut() {
            let n = normal.sample(&mut rng).clamp(-cap, cap);
            *v = T::lit((v.to_f64_lossy() + n).clamp(0.0, 1.0));
        }
    }
    let mut rng = stream(seed, &[4]);
    let pairs = (0..n_landmarks)
        .map(|_| {
            let fx = rng.random_range(margin..w - margin);
            let fy = rng.random_range(margin..h - margin);
            let u = gt.u.get(fy, fx).to_f64_lossy();
            let v = gt.v.get(fy, fx).to_f64_lossy();
            Landmark {
                moving: (fx as f64 + u, fy as f64 + v),
                fixed: (fx as f64, fy as f64),
            }
        })
        .collect();
    Ok(PairSample {
        id: format!("pair_{seed:016x}"),
        moving,
        fixed,
        gt_field: Some(gt),
        landmarks: Some(LandmarkSet { pairs }),
    })
}
