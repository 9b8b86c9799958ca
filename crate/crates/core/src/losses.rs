//! Per-coordinate loss functions recorded along trajectories.
//!
//! A loss maps `(estimate, truth)` to a scalar and must be pseudo-Lipschitz
//! of order 2; the registry spot-checks that numerically before a loss is
//! used in a study.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Lane};

/// Named PL(2) loss evaluated coordinate-wise at `f64`.
#[derive(Debug, Clone)]
pub struct Pl2Loss {
    pub name: &'static str,
    pub eval: fn(f64, f64) -> f64,
}

impl Pl2Loss {
    /// Mean loss over paired coordinates.
    pub fn mean(&self, estimate: &[f64], truth: &[f64]) -> f64 {
        debug_assert_eq!(estimate.len(), truth.len());
        let mut acc = 0.0;
        for (&a, &b) in estimate.iter().zip(truth) {
            acc += (self.eval)(a, b);
        }
        acc / estimate.len() as f64
    }
}

pub fn squared_error() -> Pl2Loss {
    Pl2Loss {
        name: "squared_error",
        eval: |a, b| (a - b) * (a - b),
    }
}

pub fn absolute_error() -> Pl2Loss {
    Pl2Loss {
        name: "absolute_error",
        eval: |a, b| (a - b).abs(),
    }
}

/// Second moment of the estimate itself (truth ignored).
pub fn estimate_energy() -> Pl2Loss {
    Pl2Loss {
        name: "estimate_energy",
        eval: |a, _| a * a,
    }
}

pub fn builtin_losses() -> Vec<Pl2Loss> {
    vec![squared_error(), absolute_error(), estimate_energy()]
}

pub fn lookup(name: &str) -> Result<Pl2Loss> {
    builtin_losses()
        .into_iter()
        .find(|l| l.name == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{name}'")))
}

/// Checks `|phi(a) - phi(b)| <= L (1 + |a| + |b|) |a - b|` on random pairs in
/// `[-B, B]^2`, estimating `L` from the worst observed ratio on a calibration
/// sample and then verifying a fresh sample against it (with margin).
pub fn pl2_spot_check(loss: &Pl2Loss, seed: u64) -> Result<()> {
    let mut rng = stream_rng(seed, 0, Lane::Scratch(100));
    let bound = 10.0;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let a = [rng.gen_range(-bound..bound), rng.gen_range(-bound..bound)];
        let b = [rng.gen_range(-bound..bound), rng.gen_range(-bound..bound)];
        (a, b)
    };
    let ratio = |a: [f64; 2], b: [f64; 2]| {
        let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
        let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        if dist < 1e-9 {
            return 0.0;
        }
        let num = ((loss.eval)(a[0], a[1]) - (loss.eval)(b[0], b[1])).abs();
        num / ((1.0 + na + nb) * dist)
    };
    let mut l_est = 0.0f64;
    for _ in 0..2000 {
        let (a, b) = draw(&mut rng);
        l_est = l_est.max(ratio(a, b));
    }
    let l_cap = l_est.max(1e-12) * 4.0;
    for _ in 0..2000 {
        let (a, b) = draw(&mut rng);
        if ratio(a, b) > l_cap {
            return Err(Error::InvalidArgument(format!(
                "loss '{}' fails the PL(2) spot check",
                loss.name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_pass_spot_check() {
        for loss in builtin_losses() {
            pl2_spot_check(&loss, 3).unwrap();
        }
    }

    #[test]
    fn exponential_blowup_fails_spot_check() {
        let bad = Pl2Loss {
            name: "exp_gap",
            eval: |a, b| ((a - b).abs()).exp(),
        };
        assert!(pl2_spot_check(&bad, 3).is_err());
    }

    #[test]
    fn mean_matches_direct_scan() {
        let l = squared_error();
        let est = [1.0, 2.0, 3.0];
        let truth = [1.0, 1.0, 1.0];
        assert!((l.mean(&est, &truth) - (0.0 + 1.0 + 4.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lookup_by_name() {
        assert!(lookup("squared_error").is_ok());
        assert!(lookup("absolute_error").is_ok());
        assert!(lookup("nope").is_err());
    }
}
