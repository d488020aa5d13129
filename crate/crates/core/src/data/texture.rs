use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::stream;
use crate::scalar::Real;

/// Texture family of a synthetic domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureKind {
    /// Soft-thresholded mixture of Gaussian bumps.
    Blobs,
    /// Branching smooth curves, vessel-like.
    Curves,
    /// Rotated, smoothed checkerboard.
    Checker,
    /// Mixture of oriented sinusoids.
    Ridges,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [Self::Blobs, Self::Curves, Self::Checker, Self::Ridges];

    pub fn name(self) -> &'static str {
        match self {
            Self::Blobs => "blobs",
            Self::Curves => "curves",
            Self::Checker => "checker",
            Self::Ridges => "ridges",
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown texture kind `{s}`")))
    }
}

/// Per-kind shape parameters. Each kind reads the subset it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureParams {
    /// Features per 1000 pixels (blobs, curves).
    pub density: f64,
    /// Blob radius or curve half-width, pixels.
    pub thickness: f64,
    /// Spatial frequency, cycles per 64 pixels (checker, ridges).
    pub frequency: f64,
}

impl TextureParams {
    pub fn default_for(kind: TextureKind) -> Self {
        match kind {
            TextureKind::Blobs => Self { density: 20.0, thickness: 3.5, frequency: 0.0 },
            TextureKind::Curves => Self { density: 4.0, thickness: 1.2, frequency: 0.0 },
            TextureKind::Checker => Self { density: 0.0, thickness: 1.5, frequency: 5.0 },
            TextureKind::Ridges => Self { density: 0.0, thickness: 0.0, frequency: 6.0 },
        }
    }
}

/// One synthetic registration domain: texture family, deformation statistics
/// and image size.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub kind: TextureKind,
    pub texture: TextureParams,
    /// Gaussian smoothing scale of the random displacement, pixels.
    pub warp_sigma: f64,
    /// Maximum displacement magnitude, pixels.
    pub warp_amplitude: f64,
    /// Standard deviation of additive intensity noise on the fixed image.
    pub noise_sigma: f64,
    pub height: usize,
    pub width: usize,
}

impl DomainSpec {
    /// Desk-scale defaults: 64x64, amplitude 6 px, smoothing 8 px, noise 0.02.
    pub fn new(kind: TextureKind) -> Self {
        Self {
            kind,
            texture: TextureParams::default_for(kind),
            warp_sigma: 8.0,
            warp_amplitude: 6.0,
            noise_sigma: 0.02,
            height: 64,
            width: 64,
        }
    }

    /// Size profile matching the 400x400 ingestion path.
    pub fn full_size(kind: TextureKind) -> Self {
        Self {
            height: 400,
            width: 400,
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::config(format!(
                "domain size {}x{} too small",
                self.height, self.width
            )));
        }
        if !(self.warp_amplitude >= 0.0) {
            return Err(Error::config("warp amplitude must be >= 0"));
        }
        if !(self.warp_sigma > 0.0) {
            return Err(Error::config("warp smoothing sigma must be > 0"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise sigma must be >= 0"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn blobs(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let p = spec.texture;
    let count = ((p.density * (h * w) as f64 / 1000.0).round() as usize).max(1);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let cx = rng.random_range(-4.0..w as f64 + 4.0);
            let cy = rng.random_range(-4.0..h as f64 + 4.0);
            let sigma = p.thickness * rng.random_range(0.6..1.6);
            let amp = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.6..1.0);
            (cx, cy, sigma, amp)
        })
        .collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = bumps
                .iter()
                .map(|&(cx, cy, sg, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * sg * sg)).exp()
                })
                .sum();
            out[y * w + x] = sigmoid(s / 0.3);
        }
    }
    out
}

fn curves(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let p = spec.texture;
    let roots = ((p.density * (h * w) as f64 / 1000.0).round() as usize).max(1);
    // Polyline vertices, one pixel apart.
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    let mut pending: Vec<(f64, f64, f64, f64, usize)> = (0..roots)
        .map(|_| {
            let x = rng.random_range(0.0..w as f64);
            let y = rng.random_range(0.0..h as f64);
            let theta = rng.random_range(0.0..2.0 * PI);
            (x, y, theta, p.thickness, 0usize)
        })
        .collect();
    let max_len = (h.max(w) as f64 * 1.5) as usize;
    while let Some((mut x, mut y, mut theta, width, depth)) = pending.pop() {
        let mut turn = 0.0;
        let len = rng.random_range(max_len / 3..=max_len);
        for step in 0..len {
            turn = 0.85 * turn + rng.random_range(-0.06..0.06);
            theta += turn;
            x += theta.cos();
            y += theta.sin();
            if x < -3.0 || y < -3.0 || x > w as f64 + 3.0 || y > h as f64 + 3.0 {
                break;
            }
            points.push((x, y, width));
            if depth < 2 && step > 4 && rng.random_bool(0.025) {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                pending.push((x, y, theta + side * rng.random_range(0.5..1.1), width * 0.8, depth + 1));
            }
        }
    }
    let mut out = vec![0.0_f64; h * w];
    for &(px, py, half) in &points {
        let reach = (3.0 * half).ceil() as isize + 1;
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        for yy in (cy - reach).max(0)..(cy + reach + 1).min(h as isize) {
            for xx in (cx - reach).max(0)..(cx + reach + 1).min(w as isize) {
                let d2 = (xx as f64 - px).powi(2) + (yy as f64 - py).powi(2);
                let v = (-d2 / (2.0 * half * half)).exp();
                let slot = &mut out[yy as usize * w + xx as usize];
                *slot = slot.max(v);
            }
        }
    }
    out
}

fn checker(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let p = spec.texture;
    let k = 2.0 * PI * p.frequency * rng.random_range(0.8..1.25) / 64.0;
    let angle = rng.random_range(0.0..PI / 2.0);
    let (ca, sa) = (angle.cos(), angle.sin());
    let (px, py) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let sharp = 1.0 / p.thickness.max(1e-3) * 4.0;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let u = ca * x as f64 + sa * y as f64;
            let v = -sa * x as f64 + ca * y as f64;
            let s = (k * u + px).sin() * (k * v + py).sin();
            out[y * w + x] = 0.2 + 0.6 * sigmoid(sharp * s);
        }
    }
    out
}

fn ridges(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let p = spec.texture;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let k = 2.0 * PI * p.frequency * rng.random_range(0.6..1.4) / 64.0;
            let a = rng.random_range(0.0..PI);
            (k * a.cos(), k * a.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0))
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).sin())
                .sum();
            out[y * w + x] = 0.5 + 0.5 * s / norm;
        }
    }
    out
}

/// Deterministic texture for `(spec, seed)` with values in `[0, 1]`.
pub fn gen_texture<T: Real>(spec: &DomainSpec, seed: u64) -> Result<ImageGrid<T>> {
    spec.validate()?;
    let mut rng = stream(seed, &[0x7E47]);
    let raw = match spec.kind {
        TextureKind::Blobs => blobs(spec, &mut rng),
        TextureKind::Curves => curves(spec, &mut rng),
        TextureKind::Checker => checker(spec, &mut rng),
        TextureKind::Ridges => ridges(spec, &mut rng),
    };
    let data = raw.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))).collect();
    ImageGrid::from_vec(spec.height, spec.width, data)
}
