//! Independent cross-check of the engines.
//!
//! Re-derives the algorithm's iterates through an equivalent coupled vector
//! recursion written directly in terms of the error quantities
//!
//!   h_p^{t+1} = A_p* m_p^t - q_p^t      q_p^t = eta_{t-1}(x_p - h_p^t) - x_p
//!   b_p^t     = A_p q_p^t - lambda_p^t m_p^{t-1}
//!   m_p^t     = b_p^t + sum_{u != p} b_u^{anchor(t)} - w
//!
//! with `lambda_p^t = (1/n) sum_i f_t'` and `anchor(t) = floor(t/k_hat) *
//! k_hat` the global index of the current fusion round's start. Negative
//! indices are zero vectors; `q_p^0 = -x_p` seeds the recursion. The mapping
//! to engine iterates is
//!
//!   q_p^t = x_p^t - x_p      b_p^t = r_p^t - A_p x_p
//!   m_p^t = -z_p^t           h_p^{t+1} = x_p - (A_p* z_p^t + x_p^t)
//!
//! This module shares only the denoiser with the engines; its linear algebra
//! is local and even uses the opposite (column-major) layout on purpose.

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::multiproc::{run_cmp_amp_recording, DampingConfig, RunOptions, Schedule, StepSnapshot};
use crate::scalar::Real;

pub use crate::amp::tau_floor;

/// Column-major copy of one processor's block.
struct ColBlock<T> {
    n: usize,
    cols: Vec<Vec<T>>,
}

impl<T: Real> ColBlock<T> {
    fn from_instance(inst: &ProblemInstance<T>, p: usize) -> Self {
        let n = inst.n();
        let off = inst.partition.offset(p);
        let width = inst.partition.size(p);
        let cols = (off..off + width)
            .map(|j| (0..n).map(|i| inst.a.get(i, j)).collect())
            .collect();
        Self { n, cols }
    }

    /// `A_p v` accumulated column by column.
    fn apply(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (col, &vj) in self.cols.iter().zip(v) {
            for (o, &c) in out.iter_mut().zip(col) {
                *o += c * vj;
            }
        }
        out
    }

    /// `A_p* v` as per-column inner products.
    fn apply_t(&self, v: &[T]) -> Vec<T> {
        self.cols
            .iter()
            .map(|col| {
                let mut acc = T::zero();
                for (&c, &vi) in col.iter().zip(v) {
                    acc += c * vi;
                }
                acc
            })
            .collect()
    }
}

/// Per-processor vectors at one global step.
#[derive(Debug, Clone)]
pub struct GeneralRecursionState<T> {
    pub t: usize,
    pub anchor: usize,
    /// `h_p^{t+1}` (produced by step `t`).
    pub h_next: Vec<Vec<T>>,
    pub q: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
    pub m: Vec<Vec<T>>,
    pub lambda: Vec<T>,
}

/// Driver owning the problem data and the rolling recursion state.
pub struct GeneralRecursion<'a, T: Real> {
    inst: &'a ProblemInstance<T>,
    blocks: Vec<ColBlock<T>>,
    denoiser: Denoiser<T>,
    k_hat: usize,
    t: usize,
    h: Vec<Vec<T>>,
    m_prev: Vec<Vec<T>>,
    anchor_b: Vec<Vec<T>>,
}

impl<'a, T: Real> GeneralRecursion<'a, T> {
    /// Constant inner-count schedules only; the changing-anchor bookkeeping
    /// of variable schedules is not modeled here.
    pub fn new(
        inst: &'a ProblemInstance<T>,
        denoiser: &Denoiser<T>,
        k_hat: usize,
    ) -> Result<Self> {
        if k_hat == 0 {
            return Err(Error::InvalidArgument("k_hat must be >= 1".into()));
        }
        let processors = inst.partition.processors();
        let blocks = (0..processors)
            .map(|p| ColBlock::from_instance(inst, p))
            .collect();
        Ok(Self {
            inst,
            blocks,
            denoiser: *denoiser,
            k_hat,
            t: 0,
            h: Vec::new(),
            m_prev: Vec::new(),
            anchor_b: Vec::new(),
        })
    }

    /// Advances one global step and returns the full state at that step.
    pub fn step(&mut self) -> GeneralRecursionState<T> {
        let processors = self.blocks.len();
        let n = self.inst.n();
        let n_f = T::of(n as f64);
        let t = self.t;
        let anchor = (t / self.k_hat) * self.k_hat;

        // q_p^t and lambda_p^t
        let mut q = Vec::with_capacity(processors);
        let mut lambda = Vec::with_capacity(processors);
        if t == 0 {
            for p in 0..processors {
                q.push(self.inst.x_block(p).iter().map(|&x| -x).collect());
                lambda.push(T::zero());
            }
        } else {
            for p in 0..processors {
                let truth = self.inst.x_block(p);
                let h_p = &self.h[p];
                // effective noise level of the previous step, from this
                // side's own m vector
                let mut m_norm_sq = T::zero();
                for &v in &self.m_prev[p] {
                    m_norm_sq += v * v;
                }
                let tau = (m_norm_sq / n_f).sqrt().max(tau_floor::<T>());
                let mut q_p = Vec::with_capacity(truth.len());
                let mut deriv_sum = T::zero();
                for (&x, &h) in truth.iter().zip(h_p) {
                    let u = x - h;
                    q_p.push(self.denoiser.eta(u, tau) - x);
                    deriv_sum += self.denoiser.eta_deriv(u, tau);
                }
                q.push(q_p);
                // f_t'(h, x) = -eta'(x - h)
                lambda.push(-deriv_sum / n_f);
            }
        }

        // b_p^t = A_p q_p^t - lambda_p^t m_p^{t-1}
        let mut b = Vec::with_capacity(processors);
        for p in 0..processors {
            let mut b_p = self.blocks[p].apply(&q[p]);
            if t > 0 {
                let l = lambda[p];
                for (bi, &mi) in b_p.iter_mut().zip(&self.m_prev[p]) {
                    *bi -= l * mi;
                }
            }
            b.push(b_p);
        }
        if anchor == t {
            self.anchor_b = b.clone();
        }

        // m_p^t = b_p^t + sum_{u != p} b_u^{anchor} - w
        let mut m = Vec::with_capacity(processors);
        for p in 0..processors {
            let mut m_p = b[p].clone();
            for u in 0..processors {
                if u != p {
                    for (mi, &bu) in m_p.iter_mut().zip(&self.anchor_b[u]) {
                        *mi += bu;
                    }
                }
            }
            for (mi, &wi) in m_p.iter_mut().zip(&self.inst.w) {
                *mi -= wi;
            }
            m.push(m_p);
        }

        // h_p^{t+1} = A_p* m_p^t - q_p^t
        let mut h_next = Vec::with_capacity(processors);
        for p in 0..processors {
            let mut h_p = self.blocks[p].apply_t(&m[p]);
            for (hi, &qi) in h_p.iter_mut().zip(&q[p]) {
                *hi -= qi;
            }
            h_next.push(h_p);
        }

        self.h = h_next.clone();
        self.m_prev = m.clone();
        self.t += 1;

        GeneralRecursionState {
            t,
            anchor,
            h_next,
            q,
            b,
            m,
            lambda,
        }
    }
}

/// The four mapped vector families of an engine run, indexed `[t][p]`.
#[derive(Debug)]
pub struct MappedFamilies<T> {
    pub h_next: Vec<Vec<Vec<T>>>,
    pub q: Vec<Vec<Vec<T>>>,
    pub b: Vec<Vec<Vec<T>>>,
    pub m: Vec<Vec<Vec<T>>>,
}

/// Translates recorded engine iterates into the recursion's coordinates.
pub fn map_from_algorithm<T: Real>(
    history: &[Vec<StepSnapshot<T>>],
    inst: &ProblemInstance<T>,
) -> Result<MappedFamilies<T>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("empty iterate history".into()));
    }
    let processors = inst.partition.processors();
    let blocks: Vec<ColBlock<T>> = (0..processors)
        .map(|p| ColBlock::from_instance(inst, p))
        .collect();
    let ax: Vec<Vec<T>> = (0..processors)
        .map(|p| blocks[p].apply(inst.x_block(p)))
        .collect();
    let mut out = MappedFamilies {
        h_next: Vec::new(),
        q: Vec::new(),
        b: Vec::new(),
        m: Vec::new(),
    };
    for snaps in history {
        if snaps.len() != processors {
            return Err(Error::DimensionMismatch(
                "history entry does not cover all processors".into(),
            ));
        }
        let mut h_t = Vec::with_capacity(processors);
        let mut q_t = Vec::with_capacity(processors);
        let mut b_t = Vec::with_capacity(processors);
        let mut m_t = Vec::with_capacity(processors);
        for (p, snap) in snaps.iter().enumerate() {
            let truth = inst.x_block(p);
            q_t.push(
                snap.x_enter
                    .iter()
                    .zip(truth)
                    .map(|(&xe, &x)| xe - x)
                    .collect(),
            );
            b_t.push(
                snap.r_enter
                    .iter()
                    .zip(&ax[p])
                    .map(|(&r, &a)| r - a)
                    .collect(),
            );
            m_t.push(snap.z.iter().map(|&z| -z).collect());
            let azt = blocks[p].apply_t(&snap.z);
            h_t.push(
                truth
                    .iter()
                    .zip(azt.iter().zip(&snap.x_enter))
                    .map(|(&x, (&az, &xe))| x - (az + xe))
                    .collect(),
            );
        }
        out.h_next.push(h_t);
        out.q.push(q_t);
        out.b.push(b_t);
        out.m.push(m_t);
    }
    Ok(out)
}

/// Worst absolute deviation per vector family between the recursion and the
/// mapped engine run.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport<T> {
    pub h: T,
    pub q: T,
    pub b: T,
    pub m: T,
}

impl<T: Real> EquivalenceReport<T> {
    pub fn worst(&self) -> T {
        self.h.max(self.q).max(self.b).max(self.m)
    }
}

fn family_dev<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> T {
    let mut worst = T::zero();
    for (va, vb) in a.iter().zip(b) {
        for (&x, &y) in va.iter().zip(vb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Runs the engine (sequential, undamped) and the recursion side by side on
/// the same instance and reports per-family deviations over `t <= t_max`.
pub fn check_equivalence<T: Real>(
    inst: &ProblemInstance<T>,
    k_hat: usize,
    t_max: usize,
    denoiser: &Denoiser<T>,
) -> Result<EquivalenceReport<T>> {
    let steps = t_max + 1;
    let rounds = steps.div_ceil(k_hat);
    let schedule = Schedule::constant(rounds, k_hat)?;
    let (run, history) = run_cmp_amp_recording(
        inst,
        &schedule,
        denoiser,
        &DampingConfig::off(),
        &RunOptions::default(),
    )?;
    if let Some((s, k, p)) = run.divergence {
        return Err(Error::Divergence { s, k, p });
    }
    let mapped = map_from_algorithm(&history[..steps], inst)?;

    let mut recursion = GeneralRecursion::new(inst, denoiser, k_hat)?;
    let mut report = EquivalenceReport {
        h: T::zero(),
        q: T::zero(),
        b: T::zero(),
        m: T::zero(),
    };
    for t in 0..steps {
        let state = recursion.step();
        debug_assert_eq!(state.t, t);
        report.h = report.h.max(family_dev(&state.h_next, &mapped.h_next[t]));
        report.q = report.q.max(family_dev(&state.q, &mapped.q[t]));
        report.b = report.b.max(family_dev(&state.b, &mapped.b[t]));
        report.m = report.m.max(family_dev(&state.m, &mapped.m[t]));
    }
    Ok(report)
}
