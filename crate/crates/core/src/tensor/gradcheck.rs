//! Central finite-difference verification of the tape's gradients.
//!
//! The computation is replayed in `f64`. Coordinates whose `±step`
//! perturbation flips a ReLU mask, an |x| sign or a max-pool winner are
//! resampled: the function is not differentiable across such a boundary and
//! the finite difference there says nothing about the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            samples: 20,
            tolerance: 1e-4,
            seed: 0,
            abs_floor: 1e-8,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates rejected because the perturbation crossed a kink.
    pub resampled: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn evaluate<F>(leaves: &[Tensor<f64>], build: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    if g.shape(out) != Shape::scalar() {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar output, got {}",
            g.shape(out)
        )));
    }
    Ok((g.value(out).data()[0], g.branch_digest()))
}

/// Compare the analytic gradient of `build(leaves)` against central
/// differences on `config.samples` coordinates drawn round-robin over leaves.
pub fn grad_check<F>(leaves: &[Tensor<f64>], build: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if leaves.is_empty() {
        return Err(Error::Contract("gradient check without leaves".into()));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let base_digest = g.branch_digest();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().expect("leaf gradient"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut resampled = 0;
    let max_attempts = config.samples * 20;
    let mut attempts = 0;
    let mut perturbed = leaves.to_vec();
    while checked < config.samples && attempts < max_attempts {
        attempts += 1;
        let li = (checked + resampled) % leaves.len();
        if leaves[li].is_empty() {
            resampled += 1;
            continue;
        }
        let idx = rng.random_range(0..leaves[li].len());
        let orig = leaves[li].data()[idx];

        perturbed[li].data_mut()[idx] = orig + config.step;
        let (plus, d_plus) = evaluate(&perturbed, &build)?;
        perturbed[li].data_mut()[idx] = orig - config.step;
        let (minus, d_minus) = evaluate(&perturbed, &build)?;
        perturbed[li].data_mut()[idx] = orig;

        if d_plus != base_digest || d_minus != base_digest {
            resampled += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * config.step);
        let a = analytic[li].data()[idx];
        let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
        let rel = (a - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    if checked == 0 {
        return Err(Error::Contract(
            "gradient check could not find a smooth coordinate".into(),
        ));
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked,
        resampled,
        tolerance: config.tolerance,
        passed: max_rel < config.tolerance && checked == config.samples,
    })
}
