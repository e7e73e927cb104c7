//! Entropic mirror descent on the probability simplex.
//!
//! The update is multiplicative exponentiated-gradient ascent:
//! `r = gamma * grad; pi' = pi .* exp(r - max r) / norm`, which keeps every
//! iterate strictly positive on the simplex. The step size follows
//! `gamma_i = gamma0 / sqrt(i)` (non-compounding). Within one iteration the
//! order is: estimate the bound and its gradient, decay the step size, test
//! the stopping rule against the previous bound estimate, then update. The
//! previous-bound register starts at 0, so a stopping tolerance of infinity
//! ends the loop after the first comparison without touching `pi`.
//!
//! Early stopping compares raw successive Monte-Carlo estimates; a tolerance
//! below the Monte-Carlo noise level effectively disables it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::{dreg_gradient, exact_elbo, exact_elbo_gradient, iw_bound, SampleBatch};
use crate::error::{Error, Result};
use crate::graph::{NodeId, SceneFactorGraph};
use crate::potentials::PotentialModel;
use crate::rng::{derive_rng, stream};
use crate::sampler::{sample_gumbel, GumbelNoise, Temperature, VariationalParams};
use crate::score::local_score_vector;

/// Mirror-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdConfig {
    /// Maximum number of iterations `M`.
    pub max_iters: usize,
    /// Initial learning rate `gamma0`.
    pub gamma0: f64,
    /// Stopping tolerance on successive bound estimates.
    pub epsilon: f64,
    /// Samples per gradient estimate.
    pub samples_per_step: usize,
}

impl Default for EmdConfig {
    fn default() -> Self {
        EmdConfig {
            max_iters: 50,
            gamma0: 1.0,
            epsilon: 1e-4,
            samples_per_step: 20,
        }
    }
}

impl EmdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.gamma0 > 0.0
            && self.epsilon > 0.0
            && self.samples_per_step > 0;
        if !ok {
            return Err(Error::InvalidConfig {
                field: "emd".into(),
                message: "max_iters, gamma0, epsilon and samples_per_step must be positive".into(),
            });
        }
        Ok(())
    }
}

/// How the per-iteration ascent direction is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    /// Doubly reparameterized Monte-Carlo gradient with fresh noise each
    /// iteration.
    Dreg,
    /// Doubly reparameterized gradient with one noise set drawn up front and
    /// reused every iteration.
    DregFrozenNoise,
    /// Exact gradient of the deterministic hard-sample surrogate.
    ExactElbo,
}

/// One multiplicative update; `pi` must be strictly positive, `grad` finite.
pub fn emd_step(
    pi: &VariationalParams,
    grad: &[f64],
    gamma: f64,
) -> Result<VariationalParams> {
    if grad.len() != pi.len() {
        return Err(Error::ShapeMismatch {
            context: "emd gradient length",
            expected: pi.len(),
            got: grad.len(),
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    if let Some(index) = pi.probs().iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroProbability { index });
    }
    let r: Vec<f64> = grad.iter().map(|g| gamma * g).collect();
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut next: Vec<f64> = pi
        .probs()
        .iter()
        .zip(&r)
        .map(|(p, ri)| p * (ri - m).exp())
        .collect();
    let norm: f64 = next.iter().sum();
    for p in &mut next {
        // clamp away exact zeros from exp underflow; the update is
        // multiplicative and must stay interior
        *p = (*p / norm).max(1e-300);
    }
    Ok(VariationalParams::new_unchecked(next))
}

/// Trajectory record for one optimized node.
#[derive(Debug, Clone)]
pub struct EmdTrace {
    pub bounds: Vec<f64>,
    pub gammas: Vec<f64>,
    pub iterations: usize,
}

/// Outcome of a per-node optimization.
#[derive(Debug, Clone)]
pub struct NodeOptimum {
    pub pi: VariationalParams,
    pub bound: f64,
    pub trace: EmdTrace,
}

/// Maximize the per-node bound over the simplex by mirror ascent, starting
/// from `init`.
pub fn optimize_logits(
    score_logits: &[f64],
    init: VariationalParams,
    cfg: &EmdConfig,
    tau: f64,
    source: GradientSource,
    rng: &mut ChaCha8Rng,
) -> Result<NodeOptimum> {
    cfg.validate()?;
    let mut pi = init.floored();
    let mut prev_bound = 0.0; // the predefined objective register
    let mut bounds = Vec::new();
    let mut gammas = Vec::new();
    let mut last_bound = f64::NAN;

    let frozen: Option<Vec<GumbelNoise>> = match source {
        GradientSource::DregFrozenNoise => Some(
            (0..cfg.samples_per_step)
                .map(|_| sample_gumbel(pi.len(), rng))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };

    let mut iterations = 0;
    for i in 1..=cfg.max_iters {
        iterations = i;
        let (bound, grad) = match source {
            GradientSource::ExactElbo => (
                exact_elbo(score_logits, &pi)?,
                exact_elbo_gradient(score_logits, &pi)?,
            ),
            GradientSource::Dreg => {
                let batch =
                    SampleBatch::draw(score_logits, &pi, tau, cfg.samples_per_step, rng)?;
                let grad = dreg_gradient(&batch, score_logits, &pi.log()?)?;
                (iw_bound(&batch)?, grad)
            }
            GradientSource::DregFrozenNoise => {
                let noises = frozen.clone().unwrap();
                let batch = SampleBatch::from_noises(score_logits, &pi, tau, noises)?;
                let grad = dreg_gradient(&batch, score_logits, &pi.log()?)?;
                (iw_bound(&batch)?, grad)
            }
        };
        let gamma = cfg.gamma0 / (i as f64).sqrt();
        bounds.push(bound);
        gammas.push(gamma);
        last_bound = bound;
        if (bound - prev_bound).abs() < cfg.epsilon {
            break;
        }
        prev_bound = bound;
        pi = emd_step(&pi, &grad, gamma)?;
    }
    Ok(NodeOptimum {
        pi,
        bound: last_bound,
        trace: EmdTrace {
            bounds,
            gammas,
            iterations,
        },
    })
}

/// Optimize the variational distribution of one graph node. Draws its local
/// score vector from the model, then runs [`optimize_logits`] with a stream
/// derived from `(seed, NODE_SAMPLING, node)`.
pub fn optimize_node(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    node: NodeId,
    cfg: &EmdConfig,
    temp: &Temperature,
    seed: u64,
) -> Result<(VariationalParams, f64)> {
    let lsv = local_score_vector(graph, model, node)?;
    let init = VariationalParams::uniform(lsv.logits.len());
    let mut rng = derive_rng(seed, &[stream::NODE_SAMPLING, node.0 as u64]);
    let opt = optimize_logits(
        &lsv.logits,
        init,
        cfg,
        temp.tau,
        GradientSource::Dreg,
        &mut rng,
    )?;
    Ok((opt.pi, opt.bound))
}

/// Uniform or Dirichlet(1) variational initialization.
pub fn init_pi<R: Rng>(v: usize, random: bool, rng: &mut R) -> VariationalParams {
    if random {
        VariationalParams::random_dirichlet(v, rng)
    } else {
        VariationalParams::uniform(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{argmax, kl_divergence, softmax, tv_distance};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_pi_unchanged() {
        let pi = VariationalParams::new(vec![0.3, 0.45, 0.25]).unwrap();
        let next = emd_step(&pi, &[0.0, 0.0, 0.0], 0.7).unwrap();
        for (a, b) in pi.probs().iter().zip(next.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn constant_gradient_leaves_pi_unchanged() {
        let pi = VariationalParams::new(vec![0.6, 0.1, 0.3]).unwrap();
        let next = emd_step(&pi, &[2.5, 2.5, 2.5], 1.3).unwrap();
        for (a, b) in pi.probs().iter().zip(next.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn known_update_value() {
        let pi = VariationalParams::uniform(2);
        let next = emd_step(&pi, &[1.0, 0.0], 1.0).unwrap();
        let e_inv = (-1.0f64).exp();
        assert_abs_diff_eq!(next.probs()[0], 1.0 / (1.0 + e_inv), epsilon = 1e-12);
        assert_abs_diff_eq!(next.probs()[1], e_inv / (1.0 + e_inv), epsilon = 1e-12);
        assert_abs_diff_eq!(next.probs()[0], 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pi = VariationalParams::uniform(2);
        assert!(matches!(
            emd_step(&pi, &[f64::NAN, 0.0], 1.0),
            Err(Error::NonFiniteGradient { index: 0 })
        ));
        let zero = VariationalParams::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            emd_step(&zero, &[0.1, 0.2], 1.0),
            Err(Error::ZeroProbability { index: 1 })
        ));
    }

    #[test]
    fn simplex_preserved_across_many_steps() {
        let mut pi = VariationalParams::uniform(4);
        let mut rng = derive_rng(17, &[1]);
        for i in 1..=200 {
            let grad: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            pi = emd_step(&pi, &grad, 1.0 / (i as f64).sqrt()).unwrap();
            let sum: f64 = pi.probs().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(pi.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn infinite_epsilon_stops_after_one_iteration() {
        let cfg = EmdConfig {
            epsilon: f64::INFINITY,
            ..EmdConfig::default()
        };
        let mut rng = derive_rng(3, &[5]);
        let opt = optimize_logits(
            &[3.0, 0.0],
            VariationalParams::uniform(2),
            &cfg,
            0.3,
            GradientSource::Dreg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(opt.trace.iterations, 1);
        // stop fires before the update, so pi is still uniform
        assert_abs_diff_eq!(opt.pi.probs()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gamma_schedule_is_gamma0_over_sqrt_i() {
        let cfg = EmdConfig {
            epsilon: 1e-300,
            max_iters: 9,
            gamma0: 2.0,
            samples_per_step: 2,
        };
        let mut rng = derive_rng(3, &[6]);
        let opt = optimize_logits(
            &[1.0, -1.0],
            VariationalParams::uniform(2),
            &cfg,
            0.3,
            GradientSource::Dreg,
            &mut rng,
        )
        .unwrap();
        for (i, g) in opt.trace.gammas.iter().enumerate() {
            assert_abs_diff_eq!(*g, 2.0 / ((i + 1) as f64).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn uninformative_logits_keep_pi_near_uniform() {
        let cfg = EmdConfig::default();
        let mut rng = derive_rng(8, &[7]);
        let opt = optimize_logits(
            &[0.7, 0.7, 0.7],
            VariationalParams::uniform(3),
            &cfg,
            0.2,
            GradientSource::Dreg,
            &mut rng,
        )
        .unwrap();
        let uniform = vec![1.0 / 3.0; 3];
        assert!(tv_distance(opt.pi.probs(), &uniform) <= 0.05);
    }

    #[test]
    fn dominant_logit_wins_almost_always() {
        let theta = [5.0, 0.0, 0.0];
        let cfg = EmdConfig {
            samples_per_step: 20,
            ..EmdConfig::default()
        };
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = derive_rng(1000 + seed, &[9]);
            let opt = optimize_logits(
                &theta,
                VariationalParams::uniform(3),
                &cfg,
                0.2,
                GradientSource::Dreg,
                &mut rng,
            )
            .unwrap();
            if argmax(opt.pi.probs()) == 0 {
                wins += 1;
            }
        }
        assert!(wins >= 99, "wins = {wins}");
    }

    #[test]
    fn exact_surrogate_converges_and_is_monotone() {
        let theta = [1.5, -0.5, 0.3, 0.0];
        let target = softmax(&theta);
        let cfg = EmdConfig {
            max_iters: 200,
            epsilon: 1e-300,
            gamma0: 0.5,
            samples_per_step: 1,
        };
        let mut rng = derive_rng(0, &[0]);
        let opt = optimize_logits(
            &theta,
            VariationalParams::uniform(4),
            &cfg,
            0.2,
            GradientSource::ExactElbo,
            &mut rng,
        )
        .unwrap();
        assert!(kl_divergence(opt.pi.probs(), &target) < 1e-3);
        for w in opt.trace.bounds.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective decreased: {w:?}");
        }
    }
}
