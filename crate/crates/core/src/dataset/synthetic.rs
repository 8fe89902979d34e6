//! Seeded synthetic data for tests, benchmarks and demos.
//!
//! `ClusteredU8` produces uint8 descriptors in the style of SIFT/BIGANN:
//! points lie near a low-dimensional manifold made of Gaussian clusters,
//! are embedded into the full dimension by a random linear map, and are
//! then quantized to bytes. Uniform random bytes would have no locality
//! structure at all, which makes them a poor stand-in for real
//! descriptor data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Metric, VectorDataset};

#[derive(Clone, Debug)]
pub struct ClusteredU8 {
    dim: usize,
    latent: usize,
    centers: Vec<Vec<f32>>,
    basis: Vec<f32>,
    offset: Vec<f32>,
    within: f32,
    noise: f32,
}

impl ClusteredU8 {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_shape(dim, 16, 64, seed)
    }

    /// `latent` is the intrinsic dimension, `clusters` the mixture size.
    pub fn with_shape(dim: usize, latent: usize, clusters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0f32, 1.0).unwrap();
        let centers = (0..clusters)
            .map(|_| (0..latent).map(|_| unit.sample(&mut rng) * 2.0).collect())
            .collect();
        let scale = 1.0 / (latent as f32).sqrt();
        let basis = (0..dim * latent).map(|_| unit.sample(&mut rng) * scale * 24.0).collect();
        let offset = (0..dim).map(|_| rng.random_range(20.0f32..70.0)).collect();
        Self { dim, latent, centers, basis, offset, within: 1.0, noise: 3.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
        let unit = Normal::new(0.0f32, 1.0).unwrap();
        let center = &self.centers[rng.random_range(0..self.centers.len())];
        let z: Vec<f32> =
            center.iter().map(|&c| c + unit.sample(rng) * self.within).collect();
        for d in 0..self.dim {
            let row = &self.basis[d * self.latent..(d + 1) * self.latent];
            let mut x = self.offset[d] + unit.sample(rng) * self.noise;
            for (b, zi) in row.iter().zip(&z) {
                x += b * zi;
            }
            out.push(x.round().clamp(0.0, 255.0) as u8);
        }
    }

    /// `n` fresh points drawn with `seed`; distinct seeds give disjoint draws
    /// from the same distribution (e.g. base vs. queries).
    pub fn generate(&self, n: usize, seed: u64) -> VectorDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            self.sample_into(&mut rng, &mut values);
        }
        VectorDataset::from_u8(self.dim, values, Metric::L2).expect("generator output is well formed")
    }
}

/// Uniform random `f32` vectors in `[0, 1)`.
pub fn uniform_f32(n: usize, dim: usize, metric: Metric, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * dim).map(|_| rng.random::<f32>()).collect();
    VectorDataset::from_f32(dim, values, metric).expect("generator output is well formed")
}

/// Uniform random bytes.
pub fn uniform_u8(n: usize, dim: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * dim).map(|_| rng.random::<u8>()).collect();
    VectorDataset::from_u8(dim, values, Metric::L2).expect("generator output is well formed")
}
