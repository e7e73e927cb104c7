//! Gumbel-Softmax sampling, temperature annealing, and the linear
//! log-density surrogate used by the importance weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, log_softmax, logsumexp, softmax};

/// A vector of independent standard Gumbel draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub values: Vec<f64>,
}

/// Softmax temperature with its annealing schedule.
///
/// `tau0` is the base temperature; [`Temperature::anneal`] evaluates the
/// schedule `tau_t = max(tau0 * exp(-beta * t), tau_min)` at step `t`. The
/// schedule is evaluated from the base each time (not compounded), so the
/// sequence is deterministic and non-increasing in `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub tau0: f64,
    pub tau: f64,
    pub tau_min: f64,
    pub beta: f64,
    pub step: usize,
}

impl Temperature {
    pub fn new(tau0: f64, tau_min: f64, beta: f64) -> Result<Self> {
        if !(tau_min > 0.0 && tau0 >= tau_min && beta >= 0.0) {
            return Err(Error::InvalidTemperature {
                tau: tau0,
                tau_min,
            });
        }
        Ok(Temperature {
            tau0,
            tau: tau0,
            tau_min,
            beta,
            step: 0,
        })
    }

    /// Temperature after annealing step `t`.
    pub fn anneal(&self, t: usize) -> Temperature {
        let tau = (self.tau0 * (-self.beta * t as f64).exp()).max(self.tau_min);
        Temperature {
            tau,
            step: t,
            ..*self
        }
    }
}

/// Per-node categorical parameters on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pi: Vec<f64>,
}

impl VariationalParams {
    /// Validates non-negativity and unit sum (within 1e-9).
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.len() < 2 {
            return Err(Error::VocabTooSmall(pi.len()));
        }
        let sum: f64 = pi.iter().sum();
        if pi.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSimplex {
                reason: format!("entries sum to {sum}"),
            });
        }
        Ok(VariationalParams { pi })
    }

    /// Wrap raw positive coordinates without the simplex check. Gradients
    /// are defined with respect to these free coordinates, so finite
    /// difference probes need off-simplex points.
    pub fn new_unchecked(pi: Vec<f64>) -> Self {
        VariationalParams { pi }
    }

    pub fn uniform(v: usize) -> Self {
        VariationalParams {
            pi: vec![1.0 / v as f64; v],
        }
    }

    /// Dirichlet(1) draw: a uniformly random simplex point.
    pub fn random_dirichlet<R: Rng>(v: usize, rng: &mut R) -> Self {
        let mut e: Vec<f64> = (0..v)
            .map(|_| -(rng.gen_range(1e-12..1.0f64)).ln())
            .collect();
        let s: f64 = e.iter().sum();
        for x in &mut e {
            *x /= s;
        }
        VariationalParams { pi: e }
    }

    /// Floor entries at 1e-20 and renormalize; makes the distribution safe
    /// to take logarithms of.
    pub fn floored(&self) -> Self {
        let mut pi: Vec<f64> = self.pi.iter().map(|&p| p.max(1e-20)).collect();
        let s: f64 = pi.iter().sum();
        for p in &mut pi {
            *p /= s;
        }
        VariationalParams { pi }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.pi
    }

    /// Elementwise log; errors on zero entries.
    pub fn log(&self) -> Result<Vec<f64>> {
        if let Some(index) = self.pi.iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroProbability { index });
        }
        Ok(self.pi.iter().map(|p| p.ln()).collect())
    }
}

/// Draw `v` independent standard Gumbel variates, `-log(-log(u))` with `u`
/// clamped away from {0, 1}.
pub fn sample_gumbel<R: Rng>(v: usize, rng: &mut R) -> Result<GumbelNoise> {
    if v < 2 {
        return Err(Error::VocabTooSmall(v));
    }
    let values = (0..v)
        .map(|_| {
            let u = rng.gen_range(0.0f64..1.0).clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect();
    Ok(GumbelNoise { values })
}

/// Relaxed categorical sample:
/// `z_i = exp((log pi_i + sigma_i) / tau) / sum_j exp((log pi_j + sigma_j) / tau)`.
///
/// Differentiable in `pi`; see [`gumbel_softmax_jacobian`].
pub fn gumbel_softmax(pi: &VariationalParams, sigma: &GumbelNoise, tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature {
            tau,
            tau_min: f64::MIN_POSITIVE,
        });
    }
    if sigma.values.len() != pi.len() {
        return Err(Error::ShapeMismatch {
            context: "gumbel noise length",
            expected: pi.len(),
            got: sigma.values.len(),
        });
    }
    let log_pi = pi.log()?;
    let scaled: Vec<f64> = log_pi
        .iter()
        .zip(&sigma.values)
        .map(|(lp, s)| (lp + s) / tau)
        .collect();
    Ok(softmax(&scaled))
}

/// Analytic Jacobian `J[k][i] = d z_k / d pi_i = z_k (delta_ki - z_i) / (tau * pi_i)`
/// of [`gumbel_softmax`] at fixed noise, with `pi` treated as free positive
/// coordinates.
pub fn gumbel_softmax_jacobian(
    pi: &VariationalParams,
    sigma: &GumbelNoise,
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    let z = gumbel_softmax(pi, sigma, tau)?;
    let p = pi.probs();
    let v = z.len();
    let mut jac = vec![vec![0.0; v]; v];
    for k in 0..v {
        for i in 0..v {
            let delta = if k == i { 1.0 } else { 0.0 };
            jac[k][i] = z[k] * (delta - z[i]) / (tau * p[i]);
        }
    }
    Ok(jac)
}

/// Linear surrogate log-density of a relaxed sample: with `lambda` the
/// log-space parameters, returns `dot(lambda, z) - logsumexp(lambda)`, the
/// log-softmax of `lambda` contracted with `z`. On hard one-hot samples this
/// is an exact categorical log-mass.
pub fn log_q(lambda: &[f64], z: &[f64]) -> Result<f64> {
    if lambda.len() != z.len() {
        return Err(Error::ShapeMismatch {
            context: "log_q dimensions",
            expected: lambda.len(),
            got: z.len(),
        });
    }
    Ok(dot(lambda, z) - logsumexp(lambda))
}

/// `log_q` for a [`VariationalParams`], using `lambda = log(pi)`.
pub fn log_q_pi(pi: &VariationalParams, z: &[f64]) -> Result<f64> {
    log_q(&pi.log()?, z)
}

/// Gradient of `log_q` with respect to the relaxed sample: the log-softmax
/// of `lambda`.
pub fn log_q_grad_z(lambda: &[f64]) -> Vec<f64> {
    log_softmax(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::argmax;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gumbel_rejects_tiny_vocab() {
        let mut rng = derive_rng(0, &[0]);
        assert!(sample_gumbel(1, &mut rng).is_err());
    }

    #[test]
    fn gumbel_is_deterministic_per_seed() {
        let a = sample_gumbel(5, &mut derive_rng(42, &[1])).unwrap();
        let b = sample_gumbel(5, &mut derive_rng(42, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gumbel_moments_match_theory() {
        let mut rng = derive_rng(7, &[2]);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n / 4 {
            let g = sample_gumbel(4, &mut rng).unwrap();
            for v in g.values {
                sum += v;
                sum_sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let euler_mascheroni = 0.577_215_664_901_532_9;
        let pi_sq_over_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert_abs_diff_eq!(mean, euler_mascheroni, epsilon = 0.01);
        assert_abs_diff_eq!(var, pi_sq_over_6, epsilon = 0.02);
    }

    #[test]
    fn softmax_symmetry_yields_uniform() {
        let pi = VariationalParams::uniform(4);
        let sigma = GumbelNoise {
            values: vec![0.7; 4],
        };
        let z = gumbel_softmax(&pi, &sigma, 0.5).unwrap();
        for &zi in &z {
            assert_abs_diff_eq!(zi, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_known_value() {
        let pi = VariationalParams::uniform(2);
        let sigma = GumbelNoise {
            values: vec![1.0, 0.0],
        };
        let z = gumbel_softmax(&pi, &sigma, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(z[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 1.0 / (e + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let pi = VariationalParams::new(vec![0.5, 0.2, 0.3]).unwrap();
        let sigma = GumbelNoise {
            values: vec![0.3, -0.6, 1.4],
        };
        let z = gumbel_softmax(&pi, &sigma, 1e-6).unwrap();
        let log_pi = pi.log().unwrap();
        let keys: Vec<f64> = log_pi.iter().zip(&sigma.values).map(|(l, s)| l + s).collect();
        let winner = argmax(&keys);
        assert!(z[winner] > 1.0 - 1e-9);
    }

    #[test]
    fn zero_probability_reports_floor_advice() {
        let pi = VariationalParams::new(vec![1.0, 0.0]).unwrap();
        let sigma = GumbelNoise {
            values: vec![0.0, 0.0],
        };
        let err = gumbel_softmax(&pi, &sigma, 1.0).unwrap_err();
        assert!(err.to_string().contains("floored"));
        // and flooring repairs it
        let z = gumbel_softmax(&pi.floored(), &sigma, 1.0).unwrap();
        assert_abs_diff_eq!(z.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn anneal_identity_when_beta_zero() {
        let t = Temperature::new(0.8, 0.1, 0.0).unwrap();
        assert_eq!(t.anneal(100).tau, 0.8);
    }

    #[test]
    fn anneal_known_value_and_floor() {
        let t = Temperature::new(1.0, 0.2, 0.1).unwrap();
        assert_abs_diff_eq!(t.anneal(1).tau, (-0.1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.anneal(1).tau, 0.904_837_418_035_959_5, epsilon = 1e-12);
        // far future clamps at tau_min
        assert_eq!(t.anneal(10_000).tau, 0.2);
    }

    #[test]
    fn anneal_sequence_non_increasing() {
        let t = Temperature::new(1.0, 0.05, 3e-4).unwrap();
        let mut prev = f64::INFINITY;
        let mut reached_floor = false;
        for step in 1..=20_000 {
            let tau = t.anneal(step).tau;
            assert!(tau <= prev);
            assert!(tau >= t.tau_min);
            prev = tau;
            if tau == t.tau_min {
                reached_floor = true;
            }
        }
        assert!(reached_floor);
    }

    #[test]
    fn log_q_uniform_is_minus_log_v() {
        let lambda = vec![0.3; 5]; // any constant vector
        let z = vec![0.1, 0.2, 0.3, 0.25, 0.15];
        assert_abs_diff_eq!(log_q(&lambda, &z).unwrap(), -(5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_q_one_hot_selects_coordinate() {
        let lambda = vec![0.5, -1.0, 2.0];
        let z = vec![0.0, 1.0, 0.0];
        assert_abs_diff_eq!(
            log_q(&lambda, &z).unwrap(),
            lambda[1] - logsumexp(&lambda),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_q_normalizes_over_hard_samples() {
        let lambda = vec![0.5, -1.0, 2.0, 0.0];
        let total: f64 = (0..4)
            .map(|k| {
                let mut z = vec![0.0; 4];
                z[k] = 1.0;
                log_q(&lambda, &z).unwrap().exp()
            })
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let pi = VariationalParams::new(vec![0.5, 0.2, 0.3]).unwrap();
        let sigma = GumbelNoise {
            values: vec![0.4, -0.2, 0.9],
        };
        let tau = 0.7;
        let jac = gumbel_softmax_jacobian(&pi, &sigma, tau).unwrap();
        let h = 1e-7;
        for i in 0..3 {
            // perturb pi_i as a free coordinate (no renormalization)
            let mut plus = pi.probs().to_vec();
            plus[i] += h;
            let mut minus = pi.probs().to_vec();
            minus[i] -= h;
            let zp = gumbel_softmax(&VariationalParams { pi: plus }, &sigma, tau).unwrap();
            let zm = gumbel_softmax(&VariationalParams { pi: minus }, &sigma, tau).unwrap();
            for k in 0..3 {
                let fd = (zp[k] - zm[k]) / (2.0 * h);
                let rel = (jac[k][i] - fd).abs() / fd.abs().max(1e-9);
                assert!(rel <= 1e-5, "jac[{k}][{i}]={} fd={fd}", jac[k][i]);
            }
        }
    }

    #[test]
    fn gumbel_max_frequencies_match_pi() {
        let pi = VariationalParams::new(vec![0.5, 0.2, 0.25, 0.05]).unwrap();
        let mut rng = derive_rng(31, &[4]);
        let n = 100_000;
        let mut counts = vec![0usize; 4];
        for _ in 0..n {
            let sigma = sample_gumbel(4, &mut rng).unwrap();
            let z = gumbel_softmax(&pi, &sigma, 1e-4).unwrap();
            counts[argmax(&z)] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let tv = crate::math::tv_distance(&freqs, pi.probs());
        assert!(tv <= 0.02, "tv = {tv}");
    }
}
