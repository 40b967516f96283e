//! Observation-stream environments.
//!
//! An environment starts episodes (one target category each) and produces an
//! unbounded stream of observations per episode. Every episode carries its own
//! random generator, seeded from the environment's generator when the episode
//! starts, so the stream of an episode does not depend on how many
//! observations other episodes consumed.

pub mod cifar;
mod dataset;
pub mod mnist;

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cifar::load_cifar10;
pub use dataset::{ImageDataset, Split};
pub use mnist::load_mnist;

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::numerics::{Scalar, Tensor};

/// Patch sizes the image environments are defined for.
pub const PATCH_SIZES: [usize; 6] = [5, 8, 10, 12, 16, 20];

/// One classification trial.
#[derive(Debug, Clone)]
pub struct Episode {
    pub target: usize,
    /// Index of the source image (image environments) or the target class.
    pub source: usize,
    /// Observations drawn so far.
    pub cursor: usize,
    rng: ChaCha8Rng,
}

pub trait Environment {
    fn observation_shape(&self) -> InputShape;

    fn num_categories(&self) -> usize;

    fn start_episode(&mut self) -> Result<Episode>;

    fn next_observation<T: Scalar>(&self, episode: &mut Episode) -> Tensor<T>;

    /// Short identifier used in report names, e.g. `mnist_16x16`.
    fn id(&self) -> String;
}

/// Random patches of dataset images, zero-padded and centred.
#[derive(Debug, Clone)]
pub struct PatchStreamEnv {
    dataset: Arc<ImageDataset>,
    patch: usize,
    rng: ChaCha8Rng,
}

impl PatchStreamEnv {
    pub fn new(dataset: Arc<ImageDataset>, patch: usize, seed: u64) -> Result<Self> {
        let s = dataset.shape();
        if patch == 0 || patch > s.height.min(s.width) {
            return Err(Error::invalid(format!(
                "patch size {patch} does not fit {}x{} images",
                s.height, s.width
            )));
        }
        if dataset.is_empty() {
            return Err(Error::invalid("patch stream over an empty dataset"));
        }
        Ok(Self {
            dataset,
            patch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dataset(&self) -> &ImageDataset {
        &self.dataset
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    /// Top-left corner of the output region that holds the patch.
    pub fn centre_offset(&self) -> (usize, usize) {
        let s = self.dataset.shape();
        ((s.height - self.patch) / 2, (s.width - self.patch) / 2)
    }

    /// Copies the `p × p` region at `(top, left)` of image `index` into the
    /// centre of an all-zero canvas.
    pub fn patch_at<T: Scalar>(&self, index: usize, top: usize, left: usize) -> Tensor<T> {
        let s = self.dataset.shape();
        let (w, c, p) = (s.width, s.channels, self.patch);
        let (oy, ox) = self.centre_offset();
        let src = self.dataset.image_bytes(index);
        let mut out = Tensor::zeros(&s.hwc());
        let data = out.data_mut();
        for dy in 0..p {
            let src_row = ((top + dy) * w + left) * c;
            let dst_row = ((oy + dy) * w + ox) * c;
            for i in 0..p * c {
                // same rounding as `ImageDataset::image`
                data[dst_row + i] = T::lit(src[src_row + i] as f64 / 255.0);
            }
        }
        out
    }
}

impl Environment for PatchStreamEnv {
    fn observation_shape(&self) -> InputShape {
        self.dataset.shape()
    }

    fn num_categories(&self) -> usize {
        self.dataset.num_categories()
    }

    fn start_episode(&mut self) -> Result<Episode> {
        let index = self.rng.random_range(0..self.dataset.len());
        Ok(Episode {
            target: self.dataset.label(index),
            source: index,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(self.rng.next_u64()),
        })
    }

    fn next_observation<T: Scalar>(&self, episode: &mut Episode) -> Tensor<T> {
        let s = self.dataset.shape();
        let top = episode.rng.random_range(0..=s.height - self.patch);
        let left = episode.rng.random_range(0..=s.width - self.patch);
        episode.cursor += 1;
        self.patch_at(episode.source, top, left)
    }

    fn id(&self) -> String {
        format!("{}_{}x{}", self.dataset.name(), self.patch, self.patch)
    }
}

/// Observations are one-hot symbols: the target's own symbol with probability
/// `1 − η`, otherwise one of the other `K − 1` symbols uniformly.
#[derive(Debug, Clone)]
pub struct SyntheticEvidenceEnv {
    k: usize,
    eta: f64,
    rng: ChaCha8Rng,
}

impl SyntheticEvidenceEnv {
    pub fn new(num_categories: usize, eta: f64, seed: u64) -> Result<Self> {
        if num_categories < 2 {
            return Err(Error::invalid("synthetic environment needs at least 2 categories"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("noise rate {eta} outside [0, 1]")));
        }
        Ok(Self {
            k: num_categories,
            eta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn noise(&self) -> f64 {
        self.eta
    }

    /// Row `c` is the distribution of symbols emitted for class `c`.
    pub fn emission_matrix(&self) -> Vec<Vec<f64>> {
        let off = self.eta / (self.k - 1) as f64;
        (0..self.k)
            .map(|c| (0..self.k).map(|s| if s == c { 1.0 - self.eta } else { off }).collect())
            .collect()
    }

    /// Draws the symbol emitted at the next step of `episode`.
    pub fn next_symbol(&self, episode: &mut Episode) -> usize {
        episode.cursor += 1;
        let noisy = self.eta > 0.0 && episode.rng.random::<f64>() < self.eta;
        if !noisy {
            return episode.target;
        }
        let other = episode.rng.random_range(0..self.k - 1);
        if other >= episode.target {
            other + 1
        } else {
            other
        }
    }
}

impl Environment for SyntheticEvidenceEnv {
    fn observation_shape(&self) -> InputShape {
        InputShape {
            height: 1,
            width: self.k,
            channels: 1,
        }
    }

    fn num_categories(&self) -> usize {
        self.k
    }

    fn start_episode(&mut self) -> Result<Episode> {
        let target = self.rng.random_range(0..self.k);
        Ok(Episode {
            target,
            source: target,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(self.rng.next_u64()),
        })
    }

    fn next_observation<T: Scalar>(&self, episode: &mut Episode) -> Tensor<T> {
        let symbol = self.next_symbol(episode);
        let mut t = Tensor::zeros(&[1, self.k, 1]);
        t.data_mut()[symbol] = T::one();
        t
    }

    fn id(&self) -> String {
        format!("synthetic_eta{}", self.eta)
    }
}

/// Either kind of environment, chosen at run time.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Patch(PatchStreamEnv),
    Synthetic(SyntheticEvidenceEnv),
}

impl Environment for AnyEnv {
    fn observation_shape(&self) -> InputShape {
        match self {
            AnyEnv::Patch(e) => e.observation_shape(),
            AnyEnv::Synthetic(e) => e.observation_shape(),
        }
    }

    fn num_categories(&self) -> usize {
        match self {
            AnyEnv::Patch(e) => e.num_categories(),
            AnyEnv::Synthetic(e) => e.num_categories(),
        }
    }

    fn start_episode(&mut self) -> Result<Episode> {
        match self {
            AnyEnv::Patch(e) => e.start_episode(),
            AnyEnv::Synthetic(e) => e.start_episode(),
        }
    }

    fn next_observation<T: Scalar>(&self, episode: &mut Episode) -> Tensor<T> {
        match self {
            AnyEnv::Patch(e) => e.next_observation(episode),
            AnyEnv::Synthetic(e) => e.next_observation(episode),
        }
    }

    fn id(&self) -> String {
        match self {
            AnyEnv::Patch(e) => e.id(),
            AnyEnv::Synthetic(e) => e.id(),
        }
    }
}

/// Builds a fresh copy of an environment with a new seed; used to derive
/// independent training, validation and evaluation streams.
pub trait Reseed: Sized {
    fn reseeded(&self, seed: u64) -> Self;
}

impl Reseed for PatchStreamEnv {
    fn reseeded(&self, seed: u64) -> Self {
        Self {
            dataset: Arc::clone(&self.dataset),
            patch: self.patch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Reseed for SyntheticEvidenceEnv {
    fn reseeded(&self, seed: u64) -> Self {
        Self {
            k: self.k,
            eta: self.eta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Reseed for AnyEnv {
    fn reseeded(&self, seed: u64) -> Self {
        match self {
            AnyEnv::Patch(e) => AnyEnv::Patch(e.reseeded(seed)),
            AnyEnv::Synthetic(e) => AnyEnv::Synthetic(e.reseeded(seed)),
        }
    }
}
