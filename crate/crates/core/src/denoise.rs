//! Coordinate-wise denoisers and their weak derivatives.
//!
//! Both engines and the state-evolution expectations share this module.
//! A denoiser is parametrized by the current effective-noise level `tau`:
//! soft thresholding uses `theta = alpha * tau`, the Bayes denoiser uses
//! `tau` directly as the noise standard deviation of its observation model.

use crate::error::{Error, Result};
use crate::model::{PriorKind, PriorSpec};
use crate::scalar::Real;

/// `sign(u) * max(|u| - theta, 0)`.
#[inline]
pub fn soft_threshold<T: Real>(u: T, theta: T) -> T {
    debug_assert!(theta >= T::zero());
    if u > theta {
        u - theta
    } else if u < -theta {
        u + theta
    } else {
        T::zero()
    }
}

/// Weak derivative of [`soft_threshold`]; the kink at `|u| = theta` is
/// resolved to 0 (a measure-zero choice that never feeds the correction
/// term in expectation). `theta = 0` is the identity with derivative 1.
#[inline]
pub fn soft_threshold_deriv<T: Real>(u: T, theta: T) -> T {
    debug_assert!(theta >= T::zero());
    if theta == T::zero() || u.abs() > theta {
        T::one()
    } else {
        T::zero()
    }
}

/// Posterior mean E[X | X + tau Z = u] under the Bernoulli-Gaussian prior.
pub fn bayes_bg<T: Real>(u: T, tau: T, epsilon: T, v: T) -> T {
    debug_assert!(tau > T::zero());
    let (w, shrink) = bg_slab_weight(u, tau, epsilon, v);
    w * shrink * u
}

/// Derivative of [`bayes_bg`] in `u`; equals Var(X | U = u) / tau^2.
pub fn bayes_bg_deriv<T: Real>(u: T, tau: T, epsilon: T, v: T) -> T {
    debug_assert!(tau > T::zero());
    let tau_sq = tau * tau;
    let (w, shrink) = bg_slab_weight(u, tau, epsilon, v);
    let post_mean = shrink * u;
    let post_var_slab = v * tau_sq / (v + tau_sq);
    let ex2 = w * (post_var_slab + post_mean * post_mean);
    let mean = w * post_mean;
    (ex2 - mean * mean) / tau_sq
}

/// Slab responsibility and shrink factor for the Bernoulli-Gaussian
/// posterior; computed in log space so extreme `u/tau` stay stable.
#[inline]
fn bg_slab_weight<T: Real>(u: T, tau: T, epsilon: T, v: T) -> (T, T) {
    let tau_sq = tau * tau;
    let vt = v + tau_sq;
    let shrink = v / vt;
    if epsilon >= T::one() {
        return (T::one(), shrink);
    }
    if epsilon <= T::zero() {
        return (T::zero(), shrink);
    }
    let half = T::of(0.5);
    let u_sq = u * u;
    let log_slab = epsilon.ln() - half * vt.ln() - u_sq / (vt + vt);
    let log_spike = (T::one() - epsilon).ln() - half * tau_sq.ln() - u_sq / (tau_sq + tau_sq);
    let m = log_slab.max(log_spike);
    let ws = (log_slab - m).exp();
    let wp = (log_spike - m).exp();
    (ws / (ws + wp), shrink)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denoiser<T> {
    /// Threshold policy `theta = alpha * tau`.
    SoftThreshold { alpha: T },
    /// Conditional expectation under a Bernoulli-Gaussian prior.
    BayesBg { prior: PriorSpec<T> },
}

impl<T: Real> Denoiser<T> {
    /// `alpha = infinity` is accepted and gives the all-zero denoiser.
    pub fn soft_threshold(alpha: T) -> Result<Self> {
        if !(alpha >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "threshold multiplier must be nonnegative, got {alpha}"
            )));
        }
        Ok(Denoiser::SoftThreshold { alpha })
    }

    pub fn bayes(prior: PriorSpec<T>) -> Result<Self> {
        match prior.kind {
            PriorKind::BernoulliGaussian => Ok(Denoiser::BayesBg { prior }),
            PriorKind::RademacherSparse => Err(Error::InvalidArgument(
                "the Bayes denoiser is implemented for the Bernoulli-Gaussian prior".into(),
            )),
        }
    }

    #[inline]
    pub fn eta(&self, u: T, tau: T) -> T {
        match *self {
            Denoiser::SoftThreshold { alpha } => soft_threshold(u, alpha * tau),
            Denoiser::BayesBg { prior } => {
                bayes_bg(u, tau, prior.epsilon, prior.nonzero_variance)
            }
        }
    }

    #[inline]
    pub fn eta_deriv(&self, u: T, tau: T) -> T {
        match *self {
            Denoiser::SoftThreshold { alpha } => soft_threshold_deriv(u, alpha * tau),
            Denoiser::BayesBg { prior } => {
                bayes_bg_deriv(u, tau, prior.epsilon, prior.nonzero_variance)
            }
        }
    }

    /// Input locations where `eta(., tau)` is not differentiable, if any.
    /// The expectation engine splits its quadrature panels there.
    pub fn kinks(&self, tau: T) -> Vec<T> {
        match *self {
            Denoiser::SoftThreshold { alpha } => {
                let theta = alpha * tau;
                if theta > T::zero() {
                    vec![-theta, theta]
                } else {
                    Vec::new()
                }
            }
            Denoiser::BayesBg { .. } => Vec::new(),
        }
    }
}

/// Applies the denoiser coordinate-wise; returns the output and the mean
/// weak derivative `(1/m) sum eta'`, which feeds the correction term.
pub fn apply_denoiser<T: Real>(
    values: &[T],
    denoiser: &Denoiser<T>,
    tau: T,
) -> Result<(Vec<T>, T)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty denoiser input".into()));
    }
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "effective noise level must be positive, got {tau}"
        )));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut deriv_sum = T::zero();
    for &u in values {
        out.push(denoiser.eta(u, tau));
        deriv_sum += denoiser.eta_deriv(u, tau);
    }
    Ok((out, deriv_sum / T::of(values.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream_rng, Lane};

    fn bg_prior(eps: f64, v: f64) -> PriorSpec<f64> {
        PriorSpec::bernoulli_gaussian(eps, v).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.0, 1.0), 0.0);
        assert_eq!(soft_threshold(2.5, 1.0), 1.5);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
    }

    #[test]
    fn soft_threshold_deriv_examples() {
        assert_eq!(soft_threshold_deriv(2.5, 1.0), 1.0);
        assert_eq!(soft_threshold_deriv(0.5, 1.0), 0.0);
        // kink resolved to 0
        assert_eq!(soft_threshold_deriv(1.0, 1.0), 0.0);
    }

    #[test]
    fn bayes_symmetry_and_pure_gaussian() {
        let (eps, v, tau) = (0.3f64, 2.0f64, 0.7f64);
        for u in [0.25f64, 1.0, 3.0] {
            let plus = bayes_bg(u, tau, eps, v);
            let minus = bayes_bg(-u, tau, eps, v);
            assert!((plus + minus).abs() < 1e-15);
        }
        assert_eq!(bayes_bg(0.0, tau, eps, v), 0.0);

        // epsilon = 1: posterior mean of a Gaussian, u * v/(v+tau^2).
        for u in [-2.0f64, 0.3, 5.0] {
            let got = bayes_bg(u, tau, 1.0, v);
            let want = u * v / (v + tau * tau);
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn bayes_matches_posterior_integral_oracle() {
        // Independent oracle: Simpson quadrature of the posterior-mean
        // integral, eta(u) = eps * I1 / (eps * I0 + (1-eps) * phi_tau(u)),
        // I_k = integral x^k phi_v(x) phi_tau(u - x) dx.
        fn oracle(u: f64, tau: f64, eps: f64, v: f64) -> f64 {
            let phi = |x: f64, var: f64| (-x * x / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt();
            let (lo, hi) = (-12.0 * v.sqrt(), 12.0 * v.sqrt());
            let m = 40_000;
            let h = (hi - lo) / m as f64;
            let (mut i0, mut i1) = (0.0, 0.0);
            for j in 0..=m {
                let x = lo + j as f64 * h;
                let weight = if j == 0 || j == m {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let f = phi(x, v) * phi(u - x, tau * tau) * weight;
                i0 += f;
                i1 += x * f;
            }
            i0 *= h / 3.0;
            i1 *= h / 3.0;
            eps * i1 / (eps * i0 + (1.0 - eps) * phi(u, tau * tau))
        }

        let got = bayes_bg(3.0, 1.0, 0.1, 1.0);
        assert!((got - oracle(3.0, 1.0, 0.1, 1.0)).abs() < 1e-8);
        // frozen from a 30-digit evaluation of the closed form
        assert!((got - 0.640611402104850_6).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let tau = 0.8;
        let soft = Denoiser::soft_threshold(1.1403).unwrap();
        let bayes = Denoiser::bayes(bg_prior(0.15, 1.3)).unwrap();
        let h = 1e-6;
        let mut rng = stream_rng(5, 0, Lane::Scratch(0));
        for _ in 0..200 {
            let u: f64 = rng.gen_range(-4.0..4.0);
            for den in [&soft, &bayes] {
                let fd = (den.eta(u + h, tau) - den.eta(u - h, tau)) / (2.0 * h);
                let an = den.eta_deriv(u, tau);
                // skip points straddling a kink
                if den
                    .kinks(tau)
                    .iter()
                    .any(|&k| (u - k).abs() < 10.0 * h)
                {
                    continue;
                }
                assert!((fd - an).abs() < 1e-6, "u={u} fd={fd} analytic={an}");
            }
        }
    }

    #[test]
    fn lipschitz_on_sampled_pairs() {
        let tau = 0.5;
        let soft = Denoiser::soft_threshold(1.1403).unwrap();
        let bayes = Denoiser::bayes(bg_prior(0.1, 1.0)).unwrap();
        // Bound the Bayes slope by a grid scan with margin; soft threshold
        // is 1-Lipschitz by construction.
        let mut l_bayes = 0.0f64;
        let mut u = -8.0;
        while u <= 8.0 {
            l_bayes = l_bayes.max(bayes.eta_deriv(u, tau).abs());
            u += 1e-3;
        }
        l_bayes *= 1.05;
        let mut rng = stream_rng(6, 0, Lane::Scratch(1));
        for _ in 0..10_000 {
            let a: f64 = rng.gen_range(-6.0..6.0);
            let b: f64 = rng.gen_range(-6.0..6.0);
            assert!((soft.eta(a, tau) - soft.eta(b, tau)).abs() <= (a - b).abs() + 1e-15);
            assert!(
                (bayes.eta(a, tau) - bayes.eta(b, tau)).abs() <= l_bayes * (a - b).abs() + 1e-12
            );
        }
    }

    #[test]
    fn apply_denoiser_examples() {
        let soft = Denoiser::soft_threshold(1.0).unwrap();
        let (out, md) = apply_denoiser(&[0.0, 0.0, 0.0], &soft, 1.0).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
        assert_eq!(md, 0.0);

        // theta = 0 is the identity
        let id = Denoiser::soft_threshold(0.0).unwrap();
        let vals = [1.5, -0.3, 0.0, 2.0];
        let (out, md) = apply_denoiser(&vals, &id, 1.0).unwrap();
        assert_eq!(out, vals.to_vec());
        assert_eq!(md, 1.0);

        // mean derivative equals the fraction above threshold (direct scan)
        let mut rng = stream_rng(7, 0, Lane::Scratch(2));
        let vals: Vec<f64> = (0..501).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let tau = 0.9;
        let (_, md) = apply_denoiser(&vals, &soft, tau).unwrap();
        let frac = vals.iter().filter(|&&u| u.abs() > tau).count() as f64 / vals.len() as f64;
        assert!((md - frac).abs() < 1e-12);
    }

    #[test]
    fn apply_denoiser_rejects_bad_input() {
        let soft = Denoiser::soft_threshold(1.0).unwrap();
        assert!(apply_denoiser::<f64>(&[], &soft, 1.0).is_err());
        assert!(apply_denoiser(&[1.0], &soft, 0.0).is_err());
        assert!(apply_denoiser(&[1.0], &soft, -1.0).is_err());
        assert!(Denoiser::soft_threshold(-0.5).is_err());
    }

    #[test]
    fn coordinatewise_concat_property() {
        let bayes = Denoiser::bayes(bg_prior(0.2, 1.0)).unwrap();
        let tau = 0.6;
        let mut rng = stream_rng(8, 0, Lane::Scratch(3));
        let a: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (da, _) = apply_denoiser(&a, &bayes, tau).unwrap();
        let (db, _) = apply_denoiser(&b, &bayes, tau).unwrap();
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (dj, _) = apply_denoiser(&joined, &bayes, tau).unwrap();
        let expect: Vec<f64> = da.iter().chain(&db).copied().collect();
        assert_eq!(dj, expect);
    }
}
