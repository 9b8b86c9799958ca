//! Synthetic problem instances `y = A x + w` with a column partition.
//!
//! Matrix entries are i.i.d. N(0, 1/n); the signal is drawn from a sparse
//! prior with a closed-form second moment; the noise is i.i.d. Gaussian.
//! Everything is a pure function of the seed.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{stream_rng, Lane};
use crate::scalar::Real;

/// Non-overlapping column blocks tiling `[0, N)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl Partition {
    /// Blocks of the given sizes; they must be positive and sum to `n_cols`.
    pub fn new(n_cols: usize, sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("partition needs at least one block".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("partition block sizes must be positive".into()));
        }
        let total: usize = sizes.iter().sum();
        if total != n_cols {
            return Err(Error::InvalidArgument(format!(
                "partition sizes sum to {total}, expected {n_cols}"
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
        })
    }

    /// `count` blocks as equal as possible (remainder spread over the first blocks).
    pub fn equal(n_cols: usize, count: usize) -> Result<Self> {
        if count == 0 || count > n_cols {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n_cols} columns into {count} blocks"
            )));
        }
        let base = n_cols / count;
        let extra = n_cols % count;
        let sizes: Vec<usize> = (0..count).map(|p| base + usize::from(p < extra)).collect();
        Self::new(n_cols, &sizes)
    }

    pub fn processors(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, p: usize) -> usize {
        self.sizes[p]
    }

    pub fn offset(&self, p: usize) -> usize {
        self.offsets[p]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_cols(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Per-processor sampling ratios `n / N_p`.
    pub fn deltas<T: Real>(&self, n_rows: usize) -> Vec<T> {
        self.sizes
            .iter()
            .map(|&s| T::of(n_rows as f64) / T::of(s as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    BernoulliGaussian,
    RademacherSparse,
}

/// Sparse signal prior: each entry is nonzero with probability `epsilon`,
/// and a nonzero entry is either N(0, v) or ±sqrt(v) with equal probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T> {
    pub kind: PriorKind,
    pub epsilon: T,
    pub nonzero_variance: T,
}

impl<T: Real> PriorSpec<T> {
    pub fn new(kind: PriorKind, epsilon: T, nonzero_variance: T) -> Result<Self> {
        if !(epsilon >= T::zero() && epsilon <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0,1], got {epsilon}"
            )));
        }
        if !(nonzero_variance > T::zero()) || !nonzero_variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "nonzero variance must be positive and finite, got {nonzero_variance}"
            )));
        }
        Ok(Self {
            kind,
            epsilon,
            nonzero_variance,
        })
    }

    pub fn bernoulli_gaussian(epsilon: T, nonzero_variance: T) -> Result<Self> {
        Self::new(PriorKind::BernoulliGaussian, epsilon, nonzero_variance)
    }

    pub fn rademacher_sparse(epsilon: T, nonzero_variance: T) -> Result<Self> {
        Self::new(PriorKind::RademacherSparse, epsilon, nonzero_variance)
    }

    /// E[X^2] = epsilon * nonzero_variance for both priors.
    pub fn second_moment(&self) -> T {
        self.epsilon * self.nonzero_variance
    }
}

/// The tuple `(A, x, w, y)` with its column partition. Ground truth is kept
/// so per-iteration losses can be evaluated.
#[derive(Debug, Clone)]
pub struct ProblemInstance<T> {
    pub a: Mat<T>,
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub y: Vec<T>,
    pub partition: Partition,
    pub sigma_w_sq: T,
    pub prior: PriorSpec<T>,
}

impl<T: Real> ProblemInstance<T> {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.a.cols()
    }

    /// Ground-truth slice for processor `p`.
    pub fn x_block(&self, p: usize) -> &[T] {
        let off = self.partition.offset(p);
        &self.x[off..off + self.partition.size(p)]
    }

    /// Overall sampling ratio `n / N`.
    pub fn delta(&self) -> T {
        T::of(self.n() as f64) / T::of(self.n_cols() as f64)
    }
}

/// i.i.d. N(0, 1/n) matrix, deterministic in the seed. This is the single
/// block variant; partitioned instances draw one lane per block so that a
/// worker can regenerate its own columns.
pub fn generate_matrix<T: Real>(n: usize, n_cols: usize, seed: u64) -> Result<Mat<T>> {
    let partition = Partition::new(n_cols, &[n_cols])?;
    generate_partitioned_matrix(n, &partition, seed, 0)
}

/// i.i.d. N(0, 1/n) matrix with block `p` drawn from lane `MatrixBlock(p)`.
pub fn generate_partitioned_matrix<T: Real>(
    n: usize,
    partition: &Partition,
    seed: u64,
    trial: u64,
) -> Result<Mat<T>> {
    let n_cols = partition.n_cols();
    if n == 0 || n_cols == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    let scale = T::of(1.0 / (n as f64).sqrt());
    let mut data = vec![T::zero(); n * n_cols];
    for p in 0..partition.processors() {
        let mut rng = stream_rng(seed, trial, Lane::MatrixBlock(p));
        let (off, width) = (partition.offset(p), partition.size(p));
        // Column-major draw order within the block keeps the block's bytes
        // independent of how the other blocks are laid out.
        for j in off..off + width {
            for i in 0..n {
                let g: f64 = rng.sample(StandardNormal);
                data[i * n_cols + j] = T::of(g) * scale;
            }
        }
    }
    Ok(Mat::from_vec(n, n_cols, data))
}

/// i.i.d. draws from the prior, deterministic in the seed.
pub fn generate_signal<T: Real>(
    n_cols: usize,
    prior: &PriorSpec<T>,
    seed: u64,
    trial: u64,
) -> Result<Vec<T>> {
    if n_cols == 0 {
        return Err(Error::InvalidArgument("signal length must be positive".into()));
    }
    // Re-validate: a PriorSpec built via the constructor is always fine, but
    // literals arrive here from config files too.
    PriorSpec::new(prior.kind, prior.epsilon, prior.nonzero_variance)?;
    let mut rng = stream_rng(seed, trial, Lane::Signal);
    let eps = prior.epsilon.as_f64();
    let amp = prior.nonzero_variance.sqrt();
    let mut out = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let active = rng.gen::<f64>() < eps;
        let value = if !active {
            T::zero()
        } else {
            match prior.kind {
                PriorKind::BernoulliGaussian => {
                    let g: f64 = rng.sample(StandardNormal);
                    T::of(g) * amp
                }
                PriorKind::RademacherSparse => {
                    if rng.gen::<bool>() {
                        amp
                    } else {
                        -amp
                    }
                }
            }
        };
        out.push(value);
    }
    Ok(out)
}

/// i.i.d. N(0, sigma_w_sq) noise.
pub fn generate_noise<T: Real>(n: usize, sigma_w_sq: T, seed: u64, trial: u64) -> Result<Vec<T>> {
    if sigma_w_sq < T::zero() {
        return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
    }
    let sd = sigma_w_sq.sqrt();
    let mut rng = stream_rng(seed, trial, Lane::Noise);
    Ok((0..n)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            T::of(g) * sd
        })
        .collect())
}

/// Assembles `y = A x + w` and bundles the pieces.
pub fn assemble_instance<T: Real>(
    a: Mat<T>,
    x: Vec<T>,
    w: Vec<T>,
    partition: Partition,
    sigma_w_sq: T,
    prior: PriorSpec<T>,
) -> Result<ProblemInstance<T>> {
    if a.cols() != x.len() || a.cols() != partition.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns, signal {} entries, partition {}",
            a.cols(),
            x.len(),
            partition.n_cols()
        )));
    }
    if a.rows() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, noise {} entries",
            a.rows(),
            w.len()
        )));
    }
    let mut y = a.matvec(&x);
    for (yi, &wi) in y.iter_mut().zip(&w) {
        *yi += wi;
    }
    Ok(ProblemInstance {
        a,
        x,
        w,
        y,
        partition,
        sigma_w_sq,
        prior,
    })
}

/// One-call generation used by the experiment harness.
pub fn generate_instance<T: Real>(
    n: usize,
    partition: Partition,
    prior: PriorSpec<T>,
    sigma_w_sq: T,
    seed: u64,
    trial: u64,
) -> Result<ProblemInstance<T>> {
    let a = generate_partitioned_matrix(n, &partition, seed, trial)?;
    let x = generate_signal(partition.n_cols(), &prior, seed, trial)?;
    let w = generate_noise(n, sigma_w_sq, seed, trial)?;
    assemble_instance(a, x, w, partition, sigma_w_sq, prior)
}

/// Max residual of recomputing `y - sum_p A_p x_p - w`, relative to `1 + |y|_inf`.
pub fn residual_check<T: Real>(inst: &ProblemInstance<T>) -> T {
    let n = inst.n();
    let mut recomputed = inst.w.clone();
    for p in 0..inst.partition.processors() {
        let contrib = inst.a.block_matvec(
            inst.partition.offset(p),
            inst.partition.size(p),
            inst.x_block(p),
        );
        for i in 0..n {
            recomputed[i] += contrib[i];
        }
    }
    let y_inf = inst
        .y
        .iter()
        .fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let mut worst = T::zero();
    for i in 0..n {
        worst = worst.max((inst.y[i] - recomputed[i]).abs());
    }
    worst / (T::one() + y_inf)
}

// --- binary container -------------------------------------------------------
//
// Layout: magic "CMPA" | version u16 | n u32 | N u32 | P u32 | sizes [u32]
// followed by A (row-major), x, w, y, all 64-bit IEEE-754, little-endian.

const CONTAINER_MAGIC: [u8; 4] = *b"CMPA";
const CONTAINER_VERSION: u16 = 1;

pub fn write_instance<T: Real, W: Write>(inst: &ProblemInstance<T>, mut out: W) -> Result<()> {
    out.write_all(&CONTAINER_MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    let n = inst.n() as u32;
    let n_cols = inst.n_cols() as u32;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&n_cols.to_le_bytes())?;
    out.write_all(&(inst.partition.processors() as u32).to_le_bytes())?;
    for &s in inst.partition.sizes() {
        out.write_all(&(s as u32).to_le_bytes())?;
    }
    for section in [inst.a.data(), &inst.x[..], &inst.w[..], &inst.y[..]] {
        for &v in section {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64_vec<T: Real, R: Read>(r: &mut R, len: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(T::of(f64::from_le_bytes(b)));
    }
    Ok(out)
}

/// Reads a container written by [`write_instance`]. The container stores the
/// numeric payload only; prior and noise-variance metadata come from the
/// caller's configuration.
pub fn read_instance<T: Real, R: Read>(
    mut input: R,
    prior: PriorSpec<T>,
    sigma_w_sq: T,
) -> Result<ProblemInstance<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Container(format!("bad magic {magic:?}")));
    }
    let mut vb = [0u8; 2];
    input.read_exact(&mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut input)? as usize;
    let n_cols = read_u32(&mut input)? as usize;
    let processors = read_u32(&mut input)? as usize;
    if processors == 0 || processors > n_cols {
        return Err(Error::Container(format!("bad processor count {processors}")));
    }
    let mut sizes = Vec::with_capacity(processors);
    for _ in 0..processors {
        sizes.push(read_u32(&mut input)? as usize);
    }
    let partition =
        Partition::new(n_cols, &sizes).map_err(|e| Error::Container(e.to_string()))?;
    let a = Mat::from_vec(n, n_cols, read_f64_vec(&mut input, n * n_cols)?);
    let x = read_f64_vec(&mut input, n_cols)?;
    let w = read_f64_vec(&mut input, n)?;
    let y = read_f64_vec(&mut input, n)?;
    Ok(ProblemInstance {
        a,
        x,
        w,
        y,
        partition,
        sigma_w_sq,
        prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::norm_sq;

    fn bg(eps: f64) -> PriorSpec<f64> {
        PriorSpec::bernoulli_gaussian(eps, 1.0).unwrap()
    }

    #[test]
    fn partition_offsets_cumulative() {
        let p = Partition::new(10, &[4, 3, 3]).unwrap();
        assert_eq!(p.offset(0), 0);
        assert_eq!(p.offset(1), 4);
        assert_eq!(p.offset(2), 7);
        let single = Partition::new(10, &[10]).unwrap();
        assert_eq!(single.offset(0), 0);
        assert!(Partition::new(10, &[4, 4]).is_err());
        assert!(Partition::new(10, &[4, 0, 6]).is_err());
    }

    #[test]
    fn matrix_seeded_determinism() {
        let a: Mat<f64> = generate_matrix(4, 4, 7).unwrap();
        let b: Mat<f64> = generate_matrix(4, 4, 7).unwrap();
        assert_eq!(a, b);
        let c: Mat<f64> = generate_matrix(4, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn matrix_rejects_zero_dims() {
        assert!(generate_matrix::<f64>(0, 5, 1).is_err());
        assert!(Partition::new(0, &[]).is_err());
    }

    #[test]
    fn matrix_column_norms_concentrate() {
        // E|column|^2 = n * (1/n) = 1; chi-square concentration at n=10^4
        // keeps every column within 10%. Checked by direct scan.
        let n = 10_000;
        let a: Mat<f64> = generate_matrix(n, 100, 3).unwrap();
        for j in 0..100 {
            let mut s = 0.0;
            for i in 0..n {
                let v = a.get(i, j);
                s += v * v;
            }
            assert!((s - 1.0).abs() < 0.1, "column {j} norm^2 = {s}");
        }
    }

    #[test]
    fn partitioned_matrix_blocks_match_block_lanes() {
        // A worker regenerating only its own block must reproduce the columns
        // the full generation produced.
        let part = Partition::new(9, &[4, 5]).unwrap();
        let full: Mat<f64> = generate_partitioned_matrix(6, &part, 11, 0).unwrap();
        let lone = Partition::new(5, &[5]).unwrap();
        let block_only: Mat<f64> =
            generate_partitioned_matrix(6, &lone, 11, 0).unwrap();
        // Block 0 of a [5]-partition uses the same lane as... block 0 of the
        // original. To regenerate block 1 the worker needs lane MatrixBlock(1),
        // which `extract_block` comparison exercises end to end here.
        let extracted = full.extract_block(4, 5);
        let mut data = vec![0.0; 6 * 5];
        let mut rng = stream_rng(11, 0, Lane::MatrixBlock(1));
        let scale = 1.0 / (6f64).sqrt();
        for j in 0..5 {
            for i in 0..6 {
                let g: f64 = rng.sample(StandardNormal);
                data[i * 5 + j] = g * scale;
            }
        }
        assert_eq!(extracted, Mat::from_vec(6, 5, data));
        // And block generation for a different partition differs.
        assert_ne!(extracted, block_only);
    }

    #[test]
    fn signal_degenerate_and_moments() {
        let zero = generate_signal::<f64>(100, &bg(0.0), 5, 0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let n = 1_000_000;
        let dense = generate_signal::<f64>(n, &bg(1.0), 5, 0).unwrap();
        let mean: f64 = dense.iter().sum::<f64>() / n as f64;
        let m2: f64 = dense.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((m2 - 1.0).abs() < 0.01, "second moment {m2}");

        let sparse = generate_signal::<f64>(n, &bg(0.1), 5, 0).unwrap();
        let frac = sparse.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.005, "nonzero fraction {frac}");
    }

    #[test]
    fn signal_rejects_bad_epsilon() {
        assert!(PriorSpec::bernoulli_gaussian(1.5, 1.0).is_err());
        assert!(PriorSpec::bernoulli_gaussian(-0.1, 1.0).is_err());
        assert!(PriorSpec::bernoulli_gaussian(0.5, 0.0).is_err());
    }

    #[test]
    fn rademacher_values_are_ternary() {
        let prior = PriorSpec::rademacher_sparse(0.3, 4.0).unwrap();
        let s = generate_signal::<f64>(10_000, &prior, 9, 0).unwrap();
        assert!(s.iter().all(|&v| v == 0.0 || v == 2.0 || v == -2.0));
        assert!(s.iter().any(|&v| v == 2.0));
        assert!(s.iter().any(|&v| v == -2.0));
    }

    #[test]
    fn assemble_trivial_cases() {
        let part = Partition::new(3, &[3]).unwrap();
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let inst = assemble_instance(
            a.clone(),
            vec![0.0; 3],
            vec![0.0; 2],
            part.clone(),
            0.0,
            bg(0.1),
        )
        .unwrap();
        assert_eq!(inst.y, vec![0.0, 0.0]);

        // P=1: single block equals the full matrix.
        assert_eq!(inst.a.extract_block(0, 3), a);

        let bad = assemble_instance(a, vec![0.0; 2], vec![0.0; 2], part, 0.0, bg(0.1));
        assert!(bad.is_err());
    }

    #[test]
    fn residual_identity_on_generated_instances() {
        for seed in [1, 2, 3] {
            let part = Partition::new(60, &[20, 25, 15]).unwrap();
            let inst =
                generate_instance(40, part, bg(0.2), 0.01, seed, 0).unwrap();
            assert!(residual_check(&inst) <= 1e-12);
        }
    }

    #[test]
    fn instances_bit_identical_for_same_seed() {
        let part = Partition::new(30, &[15, 15]).unwrap();
        let a = generate_instance::<f64>(20, part.clone(), bg(0.2), 0.01, 42, 3).unwrap();
        let b = generate_instance::<f64>(20, part, bg(0.2), 0.01, 42, 3).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.x, b.x);
        assert_eq!(a.w, b.w);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn container_roundtrip_and_validation() {
        let part = Partition::new(12, &[5, 7]).unwrap();
        let inst = generate_instance::<f64>(8, part, bg(0.25), 0.02, 17, 0).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let back: ProblemInstance<f64> =
            read_instance(&buf[..], inst.prior, inst.sigma_w_sq).unwrap();
        assert_eq!(back.a, inst.a);
        assert_eq!(back.x, inst.x);
        assert_eq!(back.w, inst.w);
        assert_eq!(back.y, inst.y);
        assert_eq!(back.partition, inst.partition);

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(read_instance::<f64, _>(&corrupt[..], inst.prior, inst.sigma_w_sq).is_err());

        let mut bad_version = buf.clone();
        bad_version[4] = 99;
        assert!(read_instance::<f64, _>(&bad_version[..], inst.prior, inst.sigma_w_sq).is_err());

        let truncated = &buf[..buf.len() - 3];
        assert!(read_instance::<f64, _>(truncated, inst.prior, inst.sigma_w_sq).is_err());
    }

    #[test]
    fn signal_energy_matches_prior_second_moment() {
        let n = 10_000;
        let prior = bg(0.2);
        let s = generate_signal::<f64>(n, &prior, 21, 0).unwrap();
        let m2 = norm_sq(&s) / n as f64;
        assert!((m2 - prior.second_moment()).abs() < 0.02);
    }
}
