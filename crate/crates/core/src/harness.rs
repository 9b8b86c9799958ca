//! Experiment harness: seeded trial batteries, empirical-vs-predicted
//! comparison tables, concentration studies, and damping sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{run_amp, AmpOptions, AmpRecord};
use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::losses::{lookup, pl2_spot_check, Pl2Loss};
use crate::model::{
    generate_instance, generate_noise, generate_signal, Partition, PriorSpec, ProblemInstance,
};
use crate::multiproc::{
    run_cmp_amp, DampingConfig, ExecutionMode, RunOptions, Schedule, StepRecord, TauMode,
};
use crate::rng::{stream_rng, Lane};
use crate::se::{run_amp_se, run_cmp_se, ExpectationEngine, SeTauTable, SeTrajectory};

/// Everything needed to reproduce a batch of trials.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub prior: PriorSpec<f64>,
    pub sigma_w_sq: f64,
    pub denoiser: Denoiser<f64>,
    pub schedule: Schedule,
    pub rho: f64,
    pub execution_mode: ExecutionMode,
    pub tau_mode: TauMode,
    pub trials: usize,
    pub seed: u64,
    pub loss_names: Vec<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        self.partition()?;
        for name in &self.loss_names {
            let loss = lookup(name)?;
            pl2_spot_check(&loss, self.seed)?;
        }
        DampingConfig::new(self.rho)?;
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::new(self.sizes.iter().sum(), &self.sizes)
    }

    pub fn losses(&self) -> Result<Vec<Pl2Loss>> {
        self.loss_names.iter().map(|n| lookup(n)).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.sizes
            .iter()
            .map(|&s| self.n as f64 / s as f64)
            .collect()
    }

    pub fn delta(&self) -> f64 {
        let n_cols: usize = self.sizes.iter().sum();
        self.n as f64 / n_cols as f64
    }

    /// Same aspect ratios at a different row count; block sizes must scale
    /// to integers.
    pub fn scaled_to(&self, n: usize) -> Result<ExperimentSpec> {
        let sizes = self
            .sizes
            .iter()
            .map(|&s| {
                let scaled = s * n;
                if scaled % self.n != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "block of {s} columns does not scale integrally from n={} to n={n}",
                        self.n
                    )));
                }
                Ok(scaled / self.n)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentSpec {
            n,
            sizes,
            ..self.clone()
        })
    }

    pub fn instance(&self, trial: u64) -> Result<ProblemInstance<f64>> {
        generate_instance(
            self.n,
            self.partition()?,
            self.prior,
            self.sigma_w_sq,
            self.seed,
            trial,
        )
    }

    /// The matching multiprocessor state-evolution trajectory.
    pub fn se_trajectory(&self, engine: &ExpectationEngine<f64>) -> Result<SeTrajectory<f64>> {
        run_cmp_se(
            self.schedule.k_hats(),
            &self.deltas(),
            self.sigma_w_sq,
            &self.denoiser,
            &self.prior,
            engine,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub records: Vec<StepRecord>,
    pub divergence: Option<(usize, usize, usize)>,
}

/// Mean and standard deviation per `(s, k, p)` over the completed trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub s: usize,
    pub k: usize,
    pub p: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub loss_means: Vec<f64>,
    pub loss_stds: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentResult {
    pub loss_names: Vec<String>,
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<SummaryRow>,
}

fn run_one_trial(spec: &ExperimentSpec, trial: u64) -> Result<TrialOutcome> {
    let inst = spec.instance(trial)?;
    let losses = spec.losses()?;
    let engine = ExpectationEngine::quadrature();
    let se = spec.se_trajectory(&engine).ok();
    let table = se
        .as_ref()
        .and_then(|traj| SeTauTable::from_trajectory(traj, spec.schedule.k_hats()).ok());
    let opts = RunOptions {
        tau_mode: spec.tau_mode,
        se_taus: table.as_ref(),
        losses: &losses,
    };
    let run = run_cmp_amp(
        &inst,
        &spec.schedule,
        &spec.denoiser,
        &DampingConfig::new(spec.rho)?,
        spec.execution_mode,
        &opts,
    )?;
    Ok(TrialOutcome {
        trial,
        records: run.records,
        divergence: run.divergence,
    })
}

/// Runs `spec.trials` independent trials (trial `i` draws from its own
/// random streams) and summarizes per-index losses over the completed ones.
/// Trials run in parallel; results merge in trial order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let trials: Vec<TrialOutcome> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|trial| run_one_trial(spec, trial))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&trials, spec.loss_names.len());
    Ok(ExperimentResult {
        loss_names: spec.loss_names.clone(),
        trials,
        summary,
    })
}

fn summarize(trials: &[TrialOutcome], loss_count: usize) -> Vec<SummaryRow> {
    let complete: Vec<&TrialOutcome> =
        trials.iter().filter(|t| t.divergence.is_none()).collect();
    let Some(first) = complete.first() else {
        return Vec::new();
    };
    let count = complete.len() as f64;
    first
        .records
        .iter()
        .enumerate()
        .map(|(idx, rec0)| {
            let mut mse_sum = 0.0;
            let mut mse_sq = 0.0;
            let mut loss_sums = vec![0.0; loss_count];
            let mut loss_sqs = vec![0.0; loss_count];
            for t in &complete {
                let r = &t.records[idx];
                mse_sum += r.mse;
                mse_sq += r.mse * r.mse;
                for (j, &v) in r.losses.iter().enumerate() {
                    loss_sums[j] += v;
                    loss_sqs[j] += v * v;
                }
            }
            let mean = mse_sum / count;
            let var = (mse_sq / count - mean * mean).max(0.0);
            SummaryRow {
                s: rec0.s,
                k: rec0.k,
                p: rec0.p,
                mse_mean: mean,
                mse_std: var.sqrt(),
                loss_means: loss_sums.iter().map(|v| v / count).collect(),
                loss_stds: loss_sums
                    .iter()
                    .zip(&loss_sqs)
                    .map(|(&s, &sq)| {
                        let m = s / count;
                        (sq / count - m * m).max(0.0).sqrt()
                    })
                    .collect(),
            }
        })
        .collect()
}

/// One line of an empirical-vs-predicted table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub s: usize,
    pub k: usize,
    pub p: usize,
    pub empirical_mean: f64,
    pub se_prediction: f64,
    pub abs_gap: f64,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

/// Trial-mean squared error per `(s, k, p)` against the state-evolution
/// prediction `E[(eta(X + tau Z) - X)^2]` at the recorded `tau`.
pub fn compare_empirical_vs_se(
    spec: &ExperimentSpec,
    engine: &ExpectationEngine<f64>,
) -> Result<CompareReport> {
    let se = spec.se_trajectory(engine)?;
    let result = run_experiment(spec)?;
    let rows = result
        .summary
        .iter()
        .map(|row| {
            let tau_sq = se.tau_sq_at(row.s, row.k, row.p).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no state-evolution entry for ({}, {}, {})",
                    row.s, row.k, row.p
                ))
            })?;
            let pred = engine.mse_expectation(tau_sq.sqrt(), &spec.denoiser, &spec.prior)?;
            Ok(CompareRow {
                s: row.s,
                k: row.k,
                p: row.p,
                empirical_mean: row.mse_mean,
                se_prediction: pred,
                abs_gap: (row.mse_mean - pred).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { rows })
}

/// Centralized counterpart of [`compare_empirical_vs_se`]; rows carry
/// `(s = t, k = 0, p = 0)`.
pub fn compare_amp_vs_se(
    spec: &ExperimentSpec,
    max_iter: usize,
    engine: &ExpectationEngine<f64>,
) -> Result<CompareReport> {
    spec.validate()?;
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }
    let se = run_amp_se(
        max_iter.saturating_sub(1),
        spec.delta(),
        spec.sigma_w_sq,
        &spec.denoiser,
        &spec.prior,
        engine,
    )?;
    let losses = spec.losses()?;
    let runs: Vec<Vec<AmpRecord>> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let inst = spec.instance(trial)?;
            let run = run_amp(
                &inst,
                &spec.denoiser,
                max_iter,
                &AmpOptions {
                    tau_mode: spec.tau_mode,
                    se_taus: None,
                    losses: &losses,
                    stop_tol: 0.0,
                },
            )?;
            if run.diverged_at.is_some() {
                return Ok(Vec::new());
            }
            Ok(run.records)
        })
        .collect::<Result<Vec<_>>>()?;
    let complete: Vec<&Vec<AmpRecord>> = runs.iter().filter(|r| !r.is_empty()).collect();
    if complete.is_empty() {
        return Ok(CompareReport { rows: Vec::new() });
    }
    let count = complete.len() as f64;
    let rows = (0..max_iter)
        .map(|t| {
            let mut mean = 0.0;
            for r in &complete {
                mean += r[t].mse;
            }
            mean /= count;
            let tau_sq = se.tau_sq_at(t, 0, 0).unwrap();
            let pred = engine.mse_expectation(tau_sq.sqrt(), &spec.denoiser, &spec.prior)?;
            Ok(CompareRow {
                s: t,
                k: 0,
                p: 0,
                empirical_mean: mean,
                se_prediction: pred,
                abs_gap: (mean - pred).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationRecord {
    pub n: usize,
    pub trials: usize,
    /// Fraction of `(trial, s, k, p)` observations deviating from the
    /// prediction by at least `epsilon`.
    pub deviation_rate: f64,
    pub mean_abs_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub records: Vec<ConcentrationRecord>,
}

/// Deviation of per-processor losses from their predictions across a grid
/// of problem sizes at fixed aspect ratios.
pub fn concentration_study(
    spec: &ExperimentSpec,
    n_grid: &[usize],
    epsilon: f64,
) -> Result<ConcentrationReport> {
    spec.validate()?;
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "n grid must be ascending and non-empty".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    // predictions depend only on the aspect ratios, which the grid preserves
    let engine = ExpectationEngine::quadrature();
    let se = spec.se_trajectory(&engine)?;
    let mut predictions = std::collections::BTreeMap::new();
    for entry in se.entries.iter().filter(|e| e.s >= 1) {
        let pred = engine.mse_expectation(entry.tau_sq.sqrt(), &spec.denoiser, &spec.prior)?;
        predictions.insert((entry.s, entry.k, entry.p), pred);
    }
    let mut records = Vec::new();
    for &n in n_grid {
        let spec_n = spec.scaled_to(n)?;
        let result = run_experiment(&spec_n)?;
        let mut deviations: Vec<f64> = Vec::new();
        for trial in result.trials.iter().filter(|t| t.divergence.is_none()) {
            for rec in &trial.records {
                let pred = predictions[&(rec.s, rec.k, rec.p)];
                deviations.push((rec.mse - pred).abs());
            }
        }
        let count = deviations.len().max(1) as f64;
        let rate = deviations.iter().filter(|&&d| d >= epsilon).count() as f64 / count;
        let mad = deviations.iter().sum::<f64>() / count;
        records.push(ConcentrationRecord {
            n,
            trials: spec.trials,
            deviation_rate: rate,
            mean_abs_deviation: mad,
        });
    }
    Ok(ConcentrationReport { epsilon, records })
}

#[derive(Debug, Clone, Serialize)]
pub struct DampingOutcome {
    pub rho: f64,
    pub divergence: Option<(usize, usize, usize)>,
    /// Block-size-weighted final mean squared error over all processors,
    /// when the run produced at least one full row.
    pub final_mse: Option<f64>,
}

/// Runs one instance (trial 0) at each damping factor.
pub fn damping_sweep(spec: &ExperimentSpec, rhos: &[f64]) -> Result<Vec<DampingOutcome>> {
    let inst = spec.instance(0)?;
    let losses = spec.losses()?;
    let mut out = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let run = run_cmp_amp(
            &inst,
            &spec.schedule,
            &spec.denoiser,
            &DampingConfig::new(rho)?,
            spec.execution_mode,
            &RunOptions {
                tau_mode: spec.tau_mode,
                se_taus: None,
                losses: &losses,
            },
        )?;
        let final_mse = last_full_row_mse(&run.records, &spec.sizes);
        out.push(DampingOutcome {
            rho,
            divergence: run.divergence,
            final_mse,
        });
    }
    Ok(out)
}

fn last_full_row_mse(records: &[StepRecord], sizes: &[usize]) -> Option<f64> {
    let processors = sizes.len();
    if records.len() < processors {
        return None;
    }
    let tail = &records[records.len() - processors..];
    let n_cols: usize = sizes.iter().sum();
    let mut acc = 0.0;
    for rec in tail {
        acc += rec.mse * sizes[rec.p] as f64;
    }
    Some(acc / n_cols as f64)
}

/// A deliberately hard instance: within every block the columns share a
/// common component with weight `corr`, which breaks the independence the
/// convergence theory assumes. Used for damping studies only.
pub fn correlated_instance(
    n: usize,
    sizes: &[usize],
    corr: f64,
    prior: PriorSpec<f64>,
    sigma_w_sq: f64,
    seed: u64,
) -> Result<ProblemInstance<f64>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if !(0.0..1.0).contains(&corr) {
        return Err(Error::InvalidArgument(format!(
            "column correlation must lie in [0, 1), got {corr}"
        )));
    }
    let n_cols: usize = sizes.iter().sum();
    let partition = Partition::new(n_cols, sizes)?;
    let base = crate::model::generate_partitioned_matrix::<f64>(n, &partition, seed, 0)?;
    let scale = 1.0 / (n as f64).sqrt();
    let mix = (1.0 - corr * corr).sqrt();
    let mut data = vec![0.0f64; n * n_cols];
    for p in 0..partition.processors() {
        let mut rng = stream_rng(seed, 0, Lane::Scratch(200 + p as u16));
        let shared: Vec<f64> = (0..n)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            })
            .collect();
        let (off, width) = (partition.offset(p), partition.size(p));
        for j in off..off + width {
            for i in 0..n {
                data[i * n_cols + j] = mix * base.get(i, j) + corr * shared[i];
            }
        }
    }
    let a = crate::mat::Mat::from_vec(n, n_cols, data);
    let x = generate_signal(n_cols, &prior, seed, 0)?;
    let w = generate_noise(n, sigma_w_sq, seed, 0)?;
    crate::model::assemble_instance(a, x, w, partition, sigma_w_sq, prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> ExperimentSpec {
        ExperimentSpec {
            n: 100,
            sizes: vec![100, 100],
            prior: PriorSpec::bernoulli_gaussian(0.1, 1.0).unwrap(),
            sigma_w_sq: 0.01,
            denoiser: Denoiser::bayes(PriorSpec::bernoulli_gaussian(0.1, 1.0).unwrap()).unwrap(),
            schedule: Schedule::constant(3, 2).unwrap(),
            rho: 1.0,
            execution_mode: ExecutionMode::Sequential,
            tau_mode: TauMode::Estimated,
            trials: 4,
            seed: 7,
            loss_names: vec!["absolute_error".into()],
        }
    }

    #[test]
    fn single_trial_reproduces_direct_run() {
        let mut spec = base_spec();
        spec.trials = 1;
        let result = run_experiment(&spec).unwrap();
        let direct = run_one_trial(&spec, 0).unwrap();
        assert_eq!(result.trials[0].records, direct.records);
        for (row, rec) in result.summary.iter().zip(&direct.records) {
            assert_eq!(row.mse_mean, rec.mse);
            assert_eq!(row.mse_std, 0.0);
        }
    }

    #[test]
    fn identical_summaries_for_identical_seeds() {
        let spec = base_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.summary.len(), b.summary.len());
        for (ra, rb) in a.summary.iter().zip(&b.summary) {
            assert_eq!(ra.mse_mean, rb.mse_mean);
            assert_eq!(ra.loss_means, rb.loss_means);
        }
    }

    #[test]
    fn summary_mean_is_plain_arithmetic_mean() {
        let spec = base_spec();
        let result = run_experiment(&spec).unwrap();
        for (idx, row) in result.summary.iter().enumerate() {
            let mut acc = 0.0;
            for t in &result.trials {
                acc += t.records[idx].mse;
            }
            assert!((row.mse_mean - acc / spec.trials as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = base_spec();
        spec.trials = 0;
        assert!(run_experiment(&spec).is_err());
        let mut spec = base_spec();
        spec.loss_names = vec!["nope".into()];
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn scaling_preserves_ratios() {
        let spec = base_spec();
        let scaled = spec.scaled_to(250).unwrap();
        assert_eq!(scaled.sizes, vec![250, 250]);
        assert_eq!(scaled.deltas(), spec.deltas());
        let mut odd = base_spec();
        odd.sizes = vec![150, 50];
        assert!(odd.scaled_to(130).unwrap().sizes == vec![195, 65]);
    }

    #[test]
    fn concentration_trivia() {
        let mut spec = base_spec();
        spec.trials = 2;
        // enormous epsilon: no observation can deviate that much
        let report = concentration_study(&spec, &[100], 1e3).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].deviation_rate, 0.0);
        assert!(report.records[0].mean_abs_deviation >= 0.0);
        assert!(concentration_study(&spec, &[200, 100], 0.1).is_err());
        assert!(concentration_study(&spec, &[], 0.1).is_err());
    }

    #[test]
    fn compare_has_row_per_index() {
        let mut spec = base_spec();
        spec.trials = 2;
        let engine = ExpectationEngine::quadrature();
        let report = compare_empirical_vs_se(&spec, &engine).unwrap();
        assert_eq!(report.rows.len(), 3 * 2 * 2);
        for row in &report.rows {
            assert!((row.abs_gap - (row.empirical_mean - row.se_prediction).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn correlated_instance_is_reproducible_and_consistent() {
        let prior = PriorSpec::bernoulli_gaussian(0.1, 1.0).unwrap();
        let a = correlated_instance(30, &[20, 20], 0.15, prior, 0.01, 3).unwrap();
        let b = correlated_instance(30, &[20, 20], 0.15, prior, 0.01, 3).unwrap();
        assert_eq!(a.a, b.a);
        assert!(crate::model::residual_check(&a) <= 1e-12);
        assert!(correlated_instance(10, &[10], 1.0, prior, 0.01, 3).is_err());
    }
}
