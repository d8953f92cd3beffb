use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Diagonal quadratic `f(w) = 1/2 * sum_i lambda_i (w_i - w*_i)^2` split into
/// layer blocks. The minimum value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    dim: usize,
    block_sizes: Vec<usize>,
    offsets: Vec<usize>,
    curvature: Vec<f64>,
    optimum: Vec<f64>,
    noise_sigma: f64,
    mu: f64,
    beta: f64,
}

impl Problem {
    pub fn new(
        block_sizes: Vec<usize>,
        curvature: Vec<f64>,
        optimum: Vec<f64>,
        noise_sigma: f64,
        mu: f64,
        beta: f64,
    ) -> Result<Self> {
        if block_sizes.is_empty() || block_sizes.contains(&0) {
            return Err(Error::Validation("block sizes must be positive and non-empty".into()));
        }
        let dim: usize = block_sizes.iter().sum();
        if curvature.len() != dim || optimum.len() != dim {
            return Err(Error::Validation(format!(
                "blocks sum to {dim} but curvature has {} and optimum {} entries",
                curvature.len(),
                optimum.len()
            )));
        }
        if !(mu > 0.0 && mu <= beta && beta.is_finite()) {
            return Err(Error::Validation(format!(
                "need 0 < mu <= beta, got mu={mu} beta={beta}"
            )));
        }
        if let Some(bad) = curvature.iter().find(|&&l| !(l >= mu && l <= beta)) {
            return Err(Error::Validation(format!("eigenvalue {bad} outside [{mu}, {beta}]")));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "noise sigma must be >= 0, got {noise_sigma}"
            )));
        }
        if optimum.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("optimum must be finite".into()));
        }
        let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
        offsets.push(0);
        for b in &block_sizes {
            offsets.push(offsets.last().unwrap() + b);
        }
        Ok(Problem {
            dim,
            block_sizes,
            offsets,
            curvature,
            optimum,
            noise_sigma,
            mu,
            beta,
        })
    }

    /// Eigenvalues drawn uniformly from `[mu, beta]` with both endpoints
    /// present, optimum drawn from `N(0, optimum_scale^2)`.
    pub fn synthetic(
        block_sizes: Vec<usize>,
        mu: f64,
        beta: f64,
        noise_sigma: f64,
        optimum_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let dim: usize = block_sizes.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut curvature: Vec<f64> = (0..dim)
            .map(|_| if beta > mu { rng.random_range(mu..=beta) } else { mu })
            .collect();
        if dim > 0 {
            curvature[0] = mu;
            curvature[dim - 1] = beta;
        }
        let optimum = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                optimum_scale * z
            })
            .collect();
        Problem::new(block_sizes, curvature, optimum, noise_sigma, mu, beta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Coordinate range of layer `l` (1-based).
    pub fn block(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l - 1]..self.offsets[l]
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa(&self) -> f64 {
        self.beta / self.mu
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.optimum)
            .zip(&self.curvature)
            .map(|((x, o), l)| l * (x - o) * (x - o))
            .sum::<f64>()
    }

    /// Optimal value of the objective.
    pub fn f_star(&self) -> f64 {
        0.0
    }

    pub fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.curvature[i] * (w[i] - self.optimum[i]);
        }
    }
}

/// Exact gradient plus zero-mean Gaussian noise of total variance `sigma^2`.
pub fn stochastic_gradient(problem: &Problem, w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut g = vec![0.0; problem.dim()];
    stochastic_gradient_into(problem, w, rng, &mut g);
    g
}

pub(crate) fn stochastic_gradient_into(problem: &Problem, w: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    problem.gradient_into(w, out);
    if problem.noise_sigma() > 0.0 {
        let scale = problem.noise_sigma() / (problem.dim() as f64).sqrt();
        for g in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *g += scale * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, sigma: f64) -> Problem {
        Problem::new(vec![d], vec![1.0; d], vec![0.5; d], sigma, 1.0, 1.0).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let p = unit(4, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(stochastic_gradient(&p, p.optimum(), &mut rng), vec![0.0; 4]);
        let mut w = p.optimum().to_vec();
        w[0] += 1.0;
        assert_eq!(stochastic_gradient(&p, &w, &mut rng), vec![1.0, 0.0, 0.0, 0.0]);

        let p = unit(4, 1.0);
        let rng = ChaCha8Rng::seed_from_u64(9);
        let a = stochastic_gradient(&p, &w, &mut rng.clone());
        let b = stochastic_gradient(&p, &w, &mut rng.clone());
        assert_eq!(a, b);
        assert_ne!(a[1], 0.0);
    }

    #[test]
    fn noise_has_total_variance_sigma_squared() {
        let p = unit(8, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mean_sq: f64 = (0..n)
            .map(|_| {
                stochastic_gradient(&p, p.optimum(), &mut rng)
                    .iter()
                    .map(|g| g * g)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq - 4.0).abs() < 0.1, "{mean_sq}");
    }

    #[test]
    fn validation() {
        assert!(Problem::new(vec![2, 0], vec![1.0; 2], vec![0.0; 2], 0.0, 1.0, 1.0).is_err());
        assert!(Problem::new(vec![3], vec![1.0; 2], vec![0.0; 2], 0.0, 1.0, 1.0).is_err());
        assert!(Problem::new(vec![2], vec![1.0, 3.0], vec![0.0; 2], 0.0, 1.0, 2.0).is_err());
        assert!(Problem::new(vec![2], vec![1.0; 2], vec![0.0; 2], -1.0, 1.0, 1.0).is_err());
        assert!(Problem::new(vec![2], vec![1.0; 2], vec![0.0; 2], 0.0, 0.0, 1.0).is_err());
        let p = Problem::synthetic(vec![3, 5], 0.5, 4.0, 1.0, 1.0, 2).unwrap();
        assert_eq!(p.dim(), 8);
        assert_eq!(p.block(2), 3..8);
        let min = p.curvature().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = p.curvature().iter().cloned().fold(0.0, f64::max);
        assert_eq!((min, max), (0.5, 4.0));
        assert_eq!(p.value(p.optimum()), p.f_star());
    }
}
