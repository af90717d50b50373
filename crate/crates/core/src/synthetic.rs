//! Ground truth for the synthetic experiments: central distributions,
//! s-sparse perturbations and categorical sampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Distribution;

const MAX_REDRAWS: usize = 64;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which entries a perturbation touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub cluster_id: u64,
    pub changed_indices: Vec<usize>,
    /// Sum of the selected entries before (and after) the perturbation.
    pub original_mass: f64,
}

pub fn uniform_central(dim: usize) -> Result<Distribution> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall { dim });
    }
    Distribution::new(vec![1.0 / dim as f64; dim])
}

/// `p_k = (1 - beta) beta^k / (1 - beta^d)` for `k = 0..d`.
pub fn truncated_geometric_central(dim: usize, beta: f64) -> Result<Distribution> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BetaOutOfRange { beta });
    }
    if dim < 2 {
        return Err(Error::DimensionTooSmall { dim });
    }
    let scale = (1.0 - beta) / (1.0 - beta.powi(dim as i32));
    Distribution::new((0..dim).map(|k| scale * beta.powi(k as i32)).collect())
}

/// Redraws `s` uniformly chosen entries of `center` from Uniform[0, 1] and
/// rescales the draws so they keep the selected entries' total mass. Every
/// other entry is left bit-identical. `s = 0` returns the center unchanged.
pub fn perturb_sparse(
    center: &Distribution,
    s: usize,
    seed: u64,
    cluster_id: u64,
) -> Result<(Distribution, PerturbationRecord)> {
    let dim = center.dim();
    if s > dim {
        return Err(Error::SBudgetExceedsDim { s, dim });
    }
    let mut rng = rng(seed);
    let mut changed_indices = index::sample(&mut rng, dim, s).into_vec();
    changed_indices.sort_unstable();
    let original_mass: f64 = changed_indices.iter().map(|&k| center.probs()[k]).sum();

    let mut draws = Vec::with_capacity(s);
    let mut attempts = 0;
    let total = loop {
        draws.clear();
        draws.extend((0..s).map(|_| rng.random::<f64>()));
        let total: f64 = draws.iter().sum();
        if s == 0 || total > 1e-300 {
            break total;
        }
        attempts += 1;
        if attempts >= MAX_REDRAWS {
            return Err(Error::DegenerateDraw { attempts });
        }
    };

    let mut probs = center.probs().to_vec();
    for (&k, &u) in changed_indices.iter().zip(&draws) {
        // u / total is exactly 1 when s == 1, so a single entry keeps its value.
        probs[k] = original_mass * (u / total);
    }
    Ok((
        Distribution::new(probs)?,
        PerturbationRecord {
            cluster_id,
            changed_indices,
            original_mass,
        },
    ))
}

/// Inverse-CDF sampler over a fixed distribution.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(p: &Distribution) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = p
            .probs()
            .iter()
            .map(|&x| {
                acc += x;
                acc
            })
            .collect();
        // Draws in [acc, 1) land on the last non-empty entry.
        let last = p.probs().iter().rposition(|&x| x > 0.0).unwrap_or(0);
        for c in &mut cdf[last..] {
            *c = f64::INFINITY;
        }
        Self { cdf }
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u) as u32
    }

    pub fn draw_n(&self, n: usize, seed: u64) -> Vec<u32> {
        let mut rng = rng(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

/// `n` i.i.d. draws from `Cat(p)`, deterministic in `seed`.
pub fn sample_cluster(p: &Distribution, n: usize, seed: u64) -> Vec<u32> {
    CategoricalSampler::new(p).draw_n(n, seed)
}
