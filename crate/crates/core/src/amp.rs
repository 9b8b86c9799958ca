//! Centralized baseline: residual step with correction term, then
//! coordinate-wise denoising.
//!
//!   z_t = y - A x_t + (z_{t-1}/n) * sum_i eta'([x_{t-1} + A* z_{t-1}]_i)
//!   x_{t+1} = eta(x_t + A* z_t)
//!
//! starting from x_0 = 0 with all negative-index vectors zero, so z_0 = y
//! exactly.

use crate::denoise::{apply_denoiser, Denoiser};
use crate::error::{Error, Result};
use crate::losses::Pl2Loss;
use crate::mat::{norm_sq, Mat};
use crate::model::ProblemInstance;
use crate::scalar::Real;
use crate::se::SeTauTable;

/// Effective-noise level fed to the denoiser at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    /// `tau = sqrt(|z|^2 / n)` from the current residual (the default).
    Estimated,
    /// Read the predicted `tau` from a state-evolution trajectory; useful
    /// for validating the predictions without estimation noise.
    SeDriven,
}

/// Smallest effective-noise level we will parametrize a denoiser with;
/// keeps the Bayes posterior well-defined when the residual hits zero.
pub fn tau_floor<T: Real>() -> T {
    T::of(1e-12).max(T::min_positive_value().sqrt())
}

#[derive(Debug, Clone)]
pub struct AmpState<T> {
    pub t: usize,
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub tau_hat: T,
    /// `sum_i eta'` from the denoise that produced `x`; feeds the next
    /// correction term.
    deriv_sum: T,
}

impl<T: Real> AmpState<T> {
    pub fn initial(n: usize, n_cols: usize) -> Self {
        Self {
            t: 0,
            x: vec![T::zero(); n_cols],
            z: vec![T::zero(); n],
            tau_hat: T::zero(),
            deriv_sum: T::zero(),
        }
    }
}

/// `sqrt(|z|^2 / n)`.
pub fn estimate_tau<T: Real>(z: &[T]) -> T {
    (norm_sq(z) / T::of(z.len() as f64)).sqrt()
}

/// One full iteration. `se_tau` supplies the denoiser level in SE-driven
/// mode; pass `None` to estimate it from the residual.
pub fn amp_step<T: Real>(
    state: &AmpState<T>,
    a: &Mat<T>,
    y: &[T],
    denoiser: &Denoiser<T>,
    se_tau: Option<T>,
) -> Result<AmpState<T>> {
    let n = a.rows();
    if y.len() != n || state.x.len() != a.cols() || state.z.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "amp step: matrix {}x{}, y {}, x {}, z {}",
            n,
            a.cols(),
            y.len(),
            state.x.len(),
            state.z.len()
        )));
    }
    let inv_n = T::one() / T::of(n as f64);
    let ax = a.matvec(&state.x);
    let onsager = state.deriv_sum * inv_n;
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        z.push(y[i] - ax[i] + state.z[i] * onsager);
    }
    let tau_hat = estimate_tau(&z);
    let tau_used = match se_tau {
        Some(t) => t,
        None => tau_hat.max(tau_floor::<T>()),
    };
    let mut u = a.matvec_t(&z);
    for (ui, &xi) in u.iter_mut().zip(&state.x) {
        *ui += xi;
    }
    let (x_next, mean_deriv) = apply_denoiser(&u, denoiser, tau_used)?;
    let deriv_sum = mean_deriv * T::of(a.cols() as f64);
    let next = AmpState {
        t: state.t + 1,
        x: x_next,
        z,
        tau_hat,
        deriv_sum,
    };
    if !next.x.iter().all(|v| v.is_finite()) || !next.z.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence {
            s: state.t,
            k: 0,
            p: 0,
        });
    }
    Ok(next)
}

/// One row per iteration of a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AmpRecord {
    pub t: usize,
    pub mse: f64,
    pub tau_hat: f64,
    pub tau_se: Option<f64>,
    pub losses: Vec<f64>,
}

#[derive(Debug)]
pub struct AmpRun<T> {
    pub records: Vec<AmpRecord>,
    /// Iteration at which an iterate left the finite range, if any; the
    /// records hold the last finite state.
    pub diverged_at: Option<usize>,
    pub final_state: AmpState<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct AmpOptions<'a, T> {
    pub tau_mode: TauMode,
    pub se_taus: Option<&'a SeTauTable<T>>,
    pub losses: &'a [Pl2Loss],
    /// Stop when `|mse_t - mse_{t-1}| <= stop_tol * mse_{t-1}`; zero disables.
    pub stop_tol: f64,
}

impl<'a, T> Default for AmpOptions<'a, T> {
    fn default() -> Self {
        Self {
            tau_mode: TauMode::Estimated,
            se_taus: None,
            losses: &[],
            stop_tol: 1e-8,
        }
    }
}

pub fn run_amp<T: Real>(
    inst: &ProblemInstance<T>,
    denoiser: &Denoiser<T>,
    max_iter: usize,
    opts: &AmpOptions<'_, T>,
) -> Result<AmpRun<T>> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }
    if opts.tau_mode == TauMode::SeDriven && opts.se_taus.is_none() {
        return Err(Error::InvalidArgument(
            "SE-driven tau mode needs a tau table".into(),
        ));
    }
    let n_cols = inst.n_cols() as f64;
    let mut state = AmpState::initial(inst.n(), inst.n_cols());
    let mut records = Vec::new();
    let mut diverged_at = None;
    let mut tau0: Option<T> = None;
    let mut prev_mse: Option<f64> = None;
    let truth: Vec<f64> = inst.x.iter().map(|v| v.as_f64()).collect();
    for t in 0..max_iter {
        let se_tau = match opts.tau_mode {
            TauMode::Estimated => None,
            TauMode::SeDriven => Some(opts.se_taus.unwrap().tau(0, t).ok_or_else(|| {
                Error::InvalidArgument(format!("SE tau table has no entry for t={t}"))
            })?),
        };
        let next = match amp_step(&state, &inst.a, &inst.y, denoiser, se_tau) {
            Ok(s) => s,
            Err(Error::Divergence { .. }) => {
                diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        let blow = tau0.get_or_insert(next.tau_hat.max(tau_floor::<T>()));
        if next.tau_hat > T::of(1e6) * *blow {
            diverged_at = Some(t);
            break;
        }
        let est: Vec<f64> = next.x.iter().map(|v| v.as_f64()).collect();
        let mut se_sq = 0.0;
        for (a, b) in est.iter().zip(&truth) {
            se_sq += (a - b) * (a - b);
        }
        let mse = se_sq / n_cols;
        records.push(AmpRecord {
            t,
            mse,
            tau_hat: next.tau_hat.as_f64(),
            tau_se: opts
                .se_taus
                .and_then(|tab| tab.tau(0, t))
                .map(|v| v.as_f64()),
            losses: opts.losses.iter().map(|l| l.mean(&est, &truth)).collect(),
        });
        state = next;
        if opts.stop_tol > 0.0 {
            if let Some(prev) = prev_mse {
                if (mse - prev).abs() <= opts.stop_tol * prev.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        prev_mse = Some(mse);
    }
    Ok(AmpRun {
        records,
        diverged_at,
        final_state: state,
    })
}
