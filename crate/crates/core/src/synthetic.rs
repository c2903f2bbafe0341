//! Seeded Gaussian-mixture datasets for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};

/// Parameters of an isotropic Gaussian mixture with means drawn uniformly
/// from the unit hypercube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub spread: f32,
    pub seed: u64,
}

/// A generated mixture together with its component means and the component
/// each row was drawn from.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub data: Dataset,
    pub means: Dataset,
    pub components: Vec<u32>,
}

pub fn gen_synthetic(n: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> Result<Dataset> {
    Ok(gen_mixture(&SyntheticSpec {
        n,
        dim,
        clusters,
        spread,
        seed,
    })?
    .data)
}

pub fn gen_mixture(spec: &SyntheticSpec) -> Result<Mixture> {
    let SyntheticSpec {
        n,
        dim,
        clusters,
        spread,
        seed,
    } = *spec;
    if n == 0 || dim == 0 || clusters == 0 {
        return Err(invalid("n, dim and clusters must be positive"));
    }
    if clusters > n {
        return Err(invalid(format!("clusters ({clusters}) exceeds n ({n})")));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(invalid(format!("spread must be finite and >= 0, got {spread}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f32> = (0..clusters * dim).map(|_| rng.gen::<f32>()).collect();
    let noise = Normal::new(0.0f32, spread).map_err(|e| invalid(e.to_string()))?;

    let mut data = Vec::with_capacity(n * dim);
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..clusters);
        components.push(c as u32);
        let mean = &means[c * dim..(c + 1) * dim];
        data.extend(mean.iter().map(|&m| m + noise.sample(&mut rng)));
    }

    Ok(Mixture {
        data: Dataset::new(dim, data)?,
        means: Dataset::new(dim, means)?,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = gen_synthetic(500, 8, 4, 0.1, 42).unwrap();
        let b = gen_synthetic(500, 8, 4, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(500, 8, 4, 0.1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_spread_single_cluster_is_constant() {
        let m = gen_mixture(&SyntheticSpec {
            n: 50,
            dim: 3,
            clusters: 1,
            spread: 0.0,
            seed: 7,
        })
        .unwrap();
        for row in m.data.rows() {
            assert_eq!(row, m.means.row(0));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_synthetic(3, 2, 4, 0.1, 0).is_err());
        assert!(gen_synthetic(3, 0, 1, 0.1, 0).is_err());
        assert!(gen_synthetic(3, 2, 1, -1.0, 0).is_err());
    }
}
