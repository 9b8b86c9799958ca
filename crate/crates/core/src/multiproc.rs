//! Fusion-center coordination of processors running inner loops on their
//! own column blocks.
//!
//! Each outer round `s`: the center aggregates the processors' contribution
//! estimates, `g_s = sum_u r_u`, and broadcasts it; every processor then runs
//! `k_hat_s` inner steps against the modified residual
//!
//!   z_p = y - g_s - (r_p - r_p_anchor)
//!   x_p <- eta(x_p + A_p* z_p)
//!   r_p <- A_p x_p - (z_p/n) * sum_i eta'([x_p + A_p* z_p]_i)
//!
//! where `r_p_anchor` is `r_p` at the round start. Everything is zero-
//! initialized, so the very first inner step sees `z_p = y` exactly.
//! Sequential, in-process-parallel, and socket-distributed execution produce
//! bit-identical trajectories; the parallel paths live in `runtime`.

use crate::denoise::{apply_denoiser, Denoiser};
use crate::error::{Error, Result};
use crate::losses::Pl2Loss;
use crate::mat::{norm_sq, Mat};
use crate::model::ProblemInstance;
use crate::runtime;
use crate::scalar::Real;
use crate::se::SeTauTable;

pub use crate::amp::{tau_floor, TauMode};

/// Outer-round count and per-round inner iteration counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    k_hats: Vec<usize>,
}

impl Schedule {
    pub fn new(k_hats: Vec<usize>) -> Result<Self> {
        if k_hats.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one round".into()));
        }
        if k_hats.iter().any(|&k| k == 0) {
            return Err(Error::InvalidArgument("inner iteration counts must be >= 1".into()));
        }
        Ok(Self { k_hats })
    }

    pub fn constant(outer_rounds: usize, k_hat: usize) -> Result<Self> {
        if outer_rounds == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one round".into()));
        }
        Self::new(vec![k_hat; outer_rounds])
    }

    pub fn outer_rounds(&self) -> usize {
        self.k_hats.len()
    }

    /// Inner iterations of round `s` (1-indexed, matching the trajectory).
    pub fn inner_iters(&self, s: usize) -> usize {
        self.k_hats[s - 1]
    }

    pub fn k_hats(&self) -> &[usize] {
        &self.k_hats
    }

    pub fn total_inner_steps(&self) -> usize {
        self.k_hats.iter().sum()
    }

    /// The common inner count if the schedule is constant.
    pub fn constant_k(&self) -> Option<usize> {
        let k = self.k_hats[0];
        self.k_hats.iter().all(|&v| v == k).then_some(k)
    }
}

/// Convex blending of consecutive iterates; `rho = 1` is the undamped path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingConfig<T> {
    pub rho: T,
    pub damp_x: bool,
    pub damp_r: bool,
}

impl<T: Real> DampingConfig<T> {
    pub fn new(rho: T) -> Result<Self> {
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "damping factor must lie in (0, 1], got {rho}"
            )));
        }
        Ok(Self {
            rho,
            damp_x: true,
            damp_r: true,
        })
    }

    pub fn off() -> Self {
        Self {
            rho: T::one(),
            damp_x: true,
            damp_r: true,
        }
    }
}

impl<T: Real> Default for DampingConfig<T> {
    fn default() -> Self {
        Self::off()
    }
}

/// `rho * new + (1 - rho) * old`, with `rho = 1` returning `new` unchanged
/// (bit-identical to the undamped path).
pub fn apply_damping<T: Real>(old: &[T], new: &[T], rho: T) -> Result<Vec<T>> {
    if !(rho > T::zero() && rho <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "damping factor must lie in (0, 1], got {rho}"
        )));
    }
    if old.len() != new.len() {
        return Err(Error::DimensionMismatch(format!(
            "damping blend: {} vs {}",
            old.len(),
            new.len()
        )));
    }
    if rho == T::one() {
        return Ok(new.to_vec());
    }
    let keep = T::one() - rho;
    Ok(old
        .iter()
        .zip(new)
        .map(|(&o, &n)| rho * n + keep * o)
        .collect())
}

/// Componentwise sum of the processors' contributions, in ascending
/// processor order.
pub fn fusion_aggregate<T: Real>(contributions: &[Vec<T>]) -> Result<Vec<T>> {
    let n = contributions
        .first()
        .ok_or_else(|| Error::InvalidArgument("no contributions to aggregate".into()))?
        .len();
    let mut g = vec![T::zero(); n];
    for r in contributions {
        if r.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "contribution length {} vs {}",
                r.len(),
                n
            )));
        }
        for (gi, &ri) in g.iter_mut().zip(r) {
            *gi += ri;
        }
    }
    Ok(g)
}

/// Per-processor iterates plus the round-start anchor.
#[derive(Debug, Clone)]
pub struct ProcessorState<T> {
    pub p: usize,
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub r_anchor: Vec<T>,
}

impl<T: Real> ProcessorState<T> {
    pub fn initial(p: usize, n: usize, block_cols: usize) -> Self {
        Self {
            p,
            x: vec![T::zero(); block_cols],
            z: vec![T::zero(); n],
            r: vec![T::zero(); n],
            r_anchor: vec![T::zero(); n],
        }
    }
}

/// One trajectory row.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub s: usize,
    pub k: usize,
    pub p: usize,
    pub mse: f64,
    pub tau_hat: f64,
    pub tau_se: Option<f64>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    Sequential,
    /// Workers on threads exchanging in-process messages.
    Parallel,
    /// Workers on threads exchanging framed messages over loopback sockets.
    Distributed,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a, T> {
    pub tau_mode: TauMode,
    pub se_taus: Option<&'a SeTauTable<T>>,
    pub losses: &'a [Pl2Loss],
}

impl<'a, T> Default for RunOptions<'a, T> {
    fn default() -> Self {
        Self {
            tau_mode: TauMode::Estimated,
            se_taus: None,
            losses: &[],
        }
    }
}

/// Snapshot of one processor at one global inner step; kept only when a
/// caller asks for the full iterate history.
#[derive(Debug, Clone)]
pub struct StepSnapshot<T> {
    /// Estimate entering the step.
    pub x_enter: Vec<T>,
    /// Modified residual computed during the step.
    pub z: Vec<T>,
    /// Contribution estimate entering the step.
    pub r_enter: Vec<T>,
    /// Denoiser level used by the step.
    pub tau_used: T,
}

/// `history[t][p]` = snapshot of processor `p` at global inner step `t`.
pub type StateHistory<T> = Vec<Vec<StepSnapshot<T>>>;

pub struct CmpRun<T> {
    pub records: Vec<StepRecord>,
    pub divergence: Option<(usize, usize, usize)>,
    /// Final per-processor estimates, concatenated in column order.
    pub estimate: Vec<T>,
}

/// One processor's share of the computation; drives its own inner loop and
/// records its rows. The fusion layer only ever hands it `g_s`.
pub(crate) struct Worker<T: Real> {
    pub p: usize,
    n: usize,
    block: Mat<T>,
    truth: Vec<T>,
    truth_f64: Vec<f64>,
    y: Vec<T>,
    denoiser: Denoiser<T>,
    damping: DampingConfig<T>,
    tau_mode: TauMode,
    se_taus: Vec<Option<T>>,
    losses: Vec<Pl2Loss>,
    pub state: ProcessorState<T>,
    global_step: usize,
    tau0: Option<T>,
    /// First `(s, k, p)` at which this processor left the finite range; a
    /// diverged worker stops iterating but keeps answering fusion rounds
    /// with its last finite contribution, so every execution mode sees the
    /// same protocol traffic.
    pub diverged: Option<(usize, usize, usize)>,
    pub records: Vec<StepRecord>,
    pub snapshots: Option<Vec<StepSnapshot<T>>>,
}

impl<T: Real> Worker<T> {
    pub(crate) fn build(
        inst: &ProblemInstance<T>,
        p: usize,
        schedule: &Schedule,
        denoiser: &Denoiser<T>,
        damping: &DampingConfig<T>,
        opts: &RunOptions<'_, T>,
        keep_snapshots: bool,
    ) -> Result<Self> {
        let (off, width) = (inst.partition.offset(p), inst.partition.size(p));
        let total_steps = schedule.total_inner_steps();
        let se_taus: Vec<Option<T>> = match opts.tau_mode {
            TauMode::Estimated => vec![None; total_steps],
            TauMode::SeDriven => {
                let table = opts.se_taus.ok_or_else(|| {
                    Error::InvalidArgument("SE-driven tau mode needs a tau table".into())
                })?;
                (0..total_steps)
                    .map(|t| {
                        table.tau(p, t).map(Some).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "SE tau table has no entry for processor {p}, step {t}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?
            }
        };
        // In SE-driven mode tau_se doubles as the recorded prediction; in
        // estimated mode the table still feeds the tau_se column if present.
        let mut worker = Self {
            p,
            n: inst.n(),
            block: inst.a.extract_block(off, width),
            truth: inst.x_block(p).to_vec(),
            truth_f64: inst.x_block(p).iter().map(|v| v.as_f64()).collect(),
            y: inst.y.clone(),
            denoiser: *denoiser,
            damping: *damping,
            tau_mode: opts.tau_mode,
            se_taus,
            losses: opts.losses.to_vec(),
            state: ProcessorState::initial(p, inst.n(), width),
            global_step: 0,
            tau0: None,
            diverged: None,
            records: Vec::new(),
            snapshots: keep_snapshots.then(Vec::new),
        };
        if let (TauMode::Estimated, Some(table)) = (opts.tau_mode, opts.se_taus) {
            worker.se_taus = (0..total_steps).map(|t| table.tau(p, t)).collect();
        }
        Ok(worker)
    }

    /// The contribution the center aggregates at the next round boundary.
    pub(crate) fn contribution(&self) -> &[T] {
        &self.state.r
    }

    /// Runs the `k_hat` inner steps of round `s` against the aggregate `g`.
    /// Divergence parks the worker rather than erroring, so the fusion
    /// protocol stays intact in every mode.
    pub(crate) fn run_round(&mut self, s: usize, k_hat: usize, g: &[T]) -> Result<()> {
        if self.diverged.is_some() {
            return Ok(());
        }
        self.state.r_anchor = self.state.r.clone();
        for k in 0..k_hat {
            match self.inner_step(s, k, g) {
                Ok(()) => {}
                Err(Error::Divergence { s, k, p }) => {
                    self.diverged = Some((s, k, p));
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn inner_step(&mut self, s: usize, k: usize, g: &[T]) -> Result<()> {
        let n = self.n;
        let n_f = T::of(n as f64);
        let st = &mut self.state;
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            z.push(self.y[i] - g[i] - (st.r[i] - st.r_anchor[i]));
        }
        let tau_hat = (norm_sq(&z) / n_f).sqrt();
        let tau_used = match self.tau_mode {
            TauMode::Estimated => tau_hat.max(tau_floor::<T>()),
            TauMode::SeDriven => self.se_taus[self.global_step]
                .expect("validated at build time"),
        };
        let blow = self.tau0.get_or_insert(tau_hat.max(tau_floor::<T>()));
        if !tau_hat.is_finite() || tau_hat > T::of(1e6) * *blow {
            return Err(Error::Divergence { s, k, p: self.p });
        }
        let mut u = self.block.matvec_t(&z);
        for (ui, &xi) in u.iter_mut().zip(&st.x) {
            *ui += xi;
        }
        let (x_cand, mean_deriv) = apply_denoiser(&u, &self.denoiser, tau_used)?;
        let onsager = mean_deriv * T::of(self.block.cols() as f64) / n_f;
        let mut r_cand = self.block.matvec(&x_cand);
        for (ri, &zi) in r_cand.iter_mut().zip(&z) {
            *ri -= zi * onsager;
        }
        let (x_next, r_next) = if self.damping.rho == T::one() {
            (x_cand, r_cand)
        } else {
            let x_next = if self.damping.damp_x {
                apply_damping(&st.x, &x_cand, self.damping.rho)?
            } else {
                x_cand
            };
            let r_next = if self.damping.damp_r {
                apply_damping(&st.r, &r_cand, self.damping.rho)?
            } else {
                r_cand
            };
            (x_next, r_next)
        };
        if !x_next.iter().all(|v| v.is_finite()) || !r_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { s, k, p: self.p });
        }
        if let Some(snaps) = &mut self.snapshots {
            snaps.push(StepSnapshot {
                x_enter: st.x.clone(),
                z: z.clone(),
                r_enter: st.r.clone(),
                tau_used,
            });
        }
        st.x = x_next;
        st.r = r_next;
        st.z = z;

        let est: Vec<f64> = st.x.iter().map(|v| v.as_f64()).collect();
        let mut se_sq = 0.0;
        for (a, b) in est.iter().zip(&self.truth_f64) {
            se_sq += (a - b) * (a - b);
        }
        self.records.push(StepRecord {
            s,
            k,
            p: self.p,
            mse: se_sq / self.truth.len() as f64,
            tau_hat: tau_hat.as_f64(),
            tau_se: self.se_taus[self.global_step].map(|v| v.as_f64()),
            losses: self
                .losses
                .iter()
                .map(|l| l.mean(&est, &self.truth_f64))
                .collect(),
        });
        self.global_step += 1;
        Ok(())
    }
}

pub(crate) fn build_workers<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    opts: &RunOptions<'_, T>,
    keep_snapshots: bool,
) -> Result<Vec<Worker<T>>> {
    (0..inst.partition.processors())
        .map(|p| Worker::build(inst, p, schedule, denoiser, damping, opts, keep_snapshots))
        .collect()
}

/// Merges per-worker rows into `(s, k, p)` order up to the first divergence
/// and assembles the final estimate; shared by every execution mode.
pub(crate) fn finish_run<T: Real>(workers: Vec<Worker<T>>, schedule: &Schedule) -> CmpRun<T> {
    let divergence = workers.iter().filter_map(|w| w.diverged).min();
    let mut records = Vec::new();
    let mut idx = 0;
    'outer: for s in 1..=schedule.outer_rounds() {
        for k in 0..schedule.inner_iters(s) {
            for w in &workers {
                match w.records.get(idx) {
                    Some(rec) => {
                        debug_assert_eq!((rec.s, rec.k, rec.p), (s, k, w.p));
                        records.push(rec.clone());
                    }
                    None => break 'outer,
                }
            }
            idx += 1;
        }
    }
    let mut estimate = Vec::new();
    for w in &workers {
        estimate.extend_from_slice(&w.state.x);
    }
    CmpRun {
        records,
        divergence,
        estimate,
    }
}

fn run_sequential_impl<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    opts: &RunOptions<'_, T>,
    keep_snapshots: bool,
) -> Result<(CmpRun<T>, Option<StateHistory<T>>)> {
    let mut workers = build_workers(inst, schedule, denoiser, damping, opts, keep_snapshots)?;
    for s in 1..=schedule.outer_rounds() {
        let contributions: Vec<Vec<T>> =
            workers.iter().map(|w| w.contribution().to_vec()).collect();
        let g = fusion_aggregate(&contributions)?;
        for w in workers.iter_mut() {
            w.run_round(s, schedule.inner_iters(s), &g)?;
        }
    }
    let history = keep_snapshots.then(|| {
        let total: usize = workers
            .iter()
            .map(|w| w.snapshots.as_ref().map_or(0, Vec::len))
            .min()
            .unwrap_or(0);
        (0..total)
            .map(|t| {
                workers
                    .iter()
                    .map(|w| w.snapshots.as_ref().unwrap()[t].clone())
                    .collect()
            })
            .collect()
    });
    Ok((finish_run(workers, schedule), history))
}

/// Runs the full algorithm. All modes yield identical trajectories; the
/// parallel and distributed modes exercise the message-passing layer.
pub fn run_cmp_amp<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    mode: ExecutionMode,
    opts: &RunOptions<'_, T>,
) -> Result<CmpRun<T>> {
    match mode {
        ExecutionMode::Sequential => {
            run_sequential_impl(inst, schedule, denoiser, damping, opts, false).map(|(run, _)| run)
        }
        ExecutionMode::Parallel => {
            runtime::run_channel_parallel(inst, schedule, denoiser, damping, opts)
        }
        ExecutionMode::Distributed => {
            runtime::run_distributed(inst, schedule, denoiser, damping, opts)
        }
    }
}

/// Sequential run that also returns the per-step iterate history; the
/// equivalence oracle consumes this.
pub fn run_cmp_amp_recording<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    opts: &RunOptions<'_, T>,
) -> Result<(CmpRun<T>, StateHistory<T>)> {
    let (run, history) = run_sequential_impl(inst, schedule, denoiser, damping, opts, true)?;
    Ok((run, history.expect("history requested")))
}
