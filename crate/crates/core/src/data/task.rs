use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::{read_pair_dir, Preprocess};
use crate::rng::derive_seed;
use crate::scalar::Real;

use super::pair::{make_pair, PairSample};
use super::texture::DomainSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSource {
    Synthetic {
        domain: DomainSpec,
        pairs: usize,
        landmarks: usize,
    },
    Directory {
        path: PathBuf,
        preprocess: Preprocess,
    },
}

/// A named registration task: where its pairs come from plus the generator seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub source: TaskSource,
    pub seed: u64,
}

impl TaskSpec {
    pub fn synthetic(id: impl Into<String>, domain: DomainSpec, pairs: usize, seed: u64) -> Self {
        Self {
            id: id.into(),
            source: TaskSource::Synthetic { domain, pairs, landmarks: 25 },
            seed,
        }
    }

    pub fn directory(id: impl Into<String>, path: impl Into<PathBuf>, preprocess: Preprocess) -> Self {
        Self {
            id: id.into(),
            source: TaskSource::Directory { path: path.into(), preprocess },
            seed: 0,
        }
    }

    /// Generates or loads every pair. Synthetic pair `i` is seeded from `(seed, i)`.
    pub fn materialize<T: Real>(&self) -> Result<Task<T>> {
        let pairs = match &self.source {
            TaskSource::Synthetic { domain, pairs, landmarks } => (0..*pairs)
                .map(|i| {
                    let mut p = make_pair(domain, derive_seed(self.seed, &[i as u64]), *landmarks)?;
                    p.id = format!("{}_{i:03}", self.id);
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()?,
            TaskSource::Directory { path, preprocess } => read_pair_dir(path, preprocess)?,
        };
        Task::new(self.id.clone(), pairs)
    }
}

/// Materialized pairs of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<T> {
    pub id: String,
    pub pairs: Vec<PairSample<T>>,
}

impl<T: Real> Task<T> {
    pub fn new(id: String, pairs: Vec<PairSample<T>>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let dims = first.moving.dims();
            if let Some(bad) = pairs.iter().find(|p| p.moving.dims() != dims || p.fixed.dims() != dims) {
                return Err(Error::shape(format!(
                    "task {id}: pair {} is {:?}, expected {:?}",
                    bad.id,
                    bad.moving.dims(),
                    dims
                )));
            }
        }
        Ok(Self { id, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.pairs.first().map(|p| p.moving.dims())
    }

    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R) -> Result<&'a PairSample<T>> {
        if self.pairs.is_empty() {
            return Err(Error::config(format!("task {} has no pairs", self.id)));
        }
        Ok(&self.pairs[rng.random_range(0..self.pairs.len())])
    }

    /// Splits off the trailing `ceil(test_fraction * len)` pairs as a test set.
    pub fn split(&self, test_fraction: f64) -> Result<(Task<T>, Task<T>)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::config(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let n_test = (test_fraction * self.len() as f64).ceil() as usize;
        let cut = self.len() - n_test.min(self.len());
        Ok((
            Task { id: self.id.clone(), pairs: self.pairs[..cut].to_vec() },
            Task { id: self.id.clone(), pairs: self.pairs[cut..].to_vec() },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TextureKind;
    use crate::rng::stream;

    #[test]
    fn materialize_is_reproducible() {
        let spec = TaskSpec::synthetic("ridges", DomainSpec::new(TextureKind::Ridges), 4, 17);
        let a: Task<f32> = spec.materialize().unwrap();
        let b: Task<f32> = spec.materialize().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_ne!(a.pairs[0].moving, a.pairs[1].moving);
        assert_eq!(a.pairs[2].id, "ridges_002");
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let task: Task<f32> = TaskSpec::synthetic("b", DomainSpec::new(TextureKind::Blobs), 5, 1)
            .materialize()
            .unwrap();
        let draw = |s| {
            let mut rng = stream(s, &[]);
            (0..20).map(|_| task.sample(&mut rng).unwrap().id.clone()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn split_keeps_every_pair_once() {
        let task: Task<f32> = TaskSpec::synthetic("c", DomainSpec::new(TextureKind::Checker), 10, 2)
            .materialize()
            .unwrap();
        let (train, test) = task.split(0.2).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(test.pairs[0], task.pairs[8]);
        assert!(task.split(1.5).is_err());
    }

    #[test]
    fn empty_task_cannot_be_sampled() {
        let task: Task<f64> = Task::new("none".into(), vec![]).unwrap();
        assert!(matches!(task.sample(&mut stream(0, &[])), Err(Error::Config(_))));
    }
}
