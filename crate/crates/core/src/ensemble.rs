//! Ground-truth signals and random sub-gaussian measurement ensembles.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparsity or low-rank structure of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Sparse {
        s: usize,
    },
    /// `d × d` matrix of rank `r`, vectorized row-major (`n = d²`).
    LowRank {
        d: usize,
        r: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub n: usize,
    pub structure: Structure,
    pub norm_target: f64,
    pub seed: u64,
}

impl SignalSpec {
    pub fn sparse(n: usize, s: usize, norm_target: f64, seed: u64) -> Self {
        Self {
            n,
            structure: Structure::Sparse { s },
            norm_target,
            seed,
        }
    }

    pub fn lowrank(d: usize, r: usize, norm_target: f64, seed: u64) -> Self {
        Self {
            n: d * d,
            structure: Structure::LowRank { d, r },
            norm_target,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.norm_target > 0.0 && self.norm_target.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "norm_target must be positive and finite, got {}",
                self.norm_target
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be positive".into()));
        }
        match self.structure {
            Structure::Sparse { s } if s == 0 || s > self.n => Err(Error::InvalidSpec(format!(
                "sparsity s = {s} must satisfy 1 <= s <= n = {}",
                self.n
            ))),
            Structure::LowRank { d, r } if r == 0 || r > d => Err(Error::InvalidSpec(format!(
                "rank r = {r} must satisfy 1 <= r <= d = {d}"
            ))),
            Structure::LowRank { d, .. } if d * d != self.n => Err(Error::InvalidSpec(format!(
                "low-rank signal needs n = d^2, got n = {} and d = {d}",
                self.n
            ))),
            _ => Ok(()),
        }
    }
}

/// Draws an `s`-sparse vector: uniform support, standard normal nonzeros,
/// rescaled to the requested ℓ2 norm.
pub fn gen_sparse_signal<R: Rng + ?Sized>(spec: &SignalSpec, rng: &mut R) -> Result<DVector<f64>> {
    spec.validate()?;
    let Structure::Sparse { s } = spec.structure else {
        return Err(Error::InvalidSpec("expected a sparse structure".into()));
    };
    loop {
        let support = rand::seq::index::sample(rng, spec.n, s);
        let mut x = DVector::zeros(spec.n);
        for i in support.iter() {
            x[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let norm = x.norm();
        if norm > 0.0 {
            x *= spec.norm_target / norm;
            return Ok(x);
        }
    }
}

/// Draws `X₀ = U Vᵀ` with Gaussian `d × r` factors, rescaled to the requested
/// Frobenius norm, returned row-major.
pub fn gen_lowrank_signal<R: Rng + ?Sized>(spec: &SignalSpec, rng: &mut R) -> Result<DVector<f64>> {
    spec.validate()?;
    let Structure::LowRank { d, r } = spec.structure else {
        return Err(Error::InvalidSpec("expected a low-rank structure".into()));
    };
    loop {
        let u = DMatrix::<f64>::from_fn(d, r, |_, _| rng.sample(StandardNormal));
        let v = DMatrix::<f64>::from_fn(d, r, |_, _| rng.sample(StandardNormal));
        let x = &u * v.transpose();
        let norm = x.norm();
        if norm > 0.0 {
            let scale = spec.norm_target / norm;
            return Ok(DVector::from_iterator(d * d, x.transpose().iter().map(|v| v * scale)));
        }
    }
}

pub fn gen_signal<R: Rng + ?Sized>(spec: &SignalSpec, rng: &mut R) -> Result<DVector<f64>> {
    match spec.structure {
        Structure::Sparse { .. } => gen_sparse_signal(spec, rng),
        Structure::LowRank { .. } => gen_lowrank_signal(spec, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Gaussian,
    Rademacher,
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ensemble::Gaussian => "gaussian",
            Ensemble::Rademacher => "rademacher",
        })
    }
}

impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Ensemble::Gaussian),
            "rademacher" => Ok(Ensemble::Rademacher),
            other => Err(Error::InvalidSpec(format!("unknown ensemble kind '{other}'"))),
        }
    }
}

/// Row distribution plus its sub-gaussian (`l`) and small-ball (`alpha`)
/// constants. The constants are reporting metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleKind {
    pub kind: Ensemble,
    pub l: f64,
    pub alpha: f64,
}

impl EnsembleKind {
    pub fn gaussian() -> Self {
        Self {
            kind: Ensemble::Gaussian,
            l: 1.0,
            alpha: (2.0 / std::f64::consts::PI).sqrt(),
        }
    }

    pub fn rademacher() -> Self {
        Self {
            kind: Ensemble::Rademacher,
            l: 1.0,
            alpha: 1.0,
        }
    }
}

impl From<Ensemble> for EnsembleKind {
    fn from(kind: Ensemble) -> Self {
        match kind {
            Ensemble::Gaussian => Self::gaussian(),
            Ensemble::Rademacher => Self::rademacher(),
        }
    }
}

/// `m × n` matrix whose rows are the measurement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    data: DMatrix<f64>,
    kind: Option<EnsembleKind>,
    seed: Option<u64>,
}

impl MeasurementMatrix {
    /// Wraps an arbitrary matrix (no ensemble metadata).
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape("measurement matrix must be nonempty".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("measurement matrix has non-finite entries".into()));
        }
        Ok(Self {
            data,
            kind: None,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn kind(&self) -> Option<EnsembleKind> {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    /// `A x`, checking dimensions.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                found: x.len(),
            });
        }
        Ok(&self.data * x)
    }

    /// `Aᵀ v`, checking dimensions.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                found: v.len(),
            });
        }
        Ok(self.data.tr_mul(v))
    }
}

/// Builds a Gaussian matrix row by row from an arbitrary source of standard
/// normal draws.
pub(crate) fn gaussian_from_draws(m: usize, n: usize, draw: impl FnMut() -> f64) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m, n, std::iter::repeat_with(draw).take(m * n))
}

pub fn sample_measurements<R: Rng + ?Sized>(
    kind: EnsembleKind,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<MeasurementMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidSpec(format!(
            "measurement matrix needs m >= 1 and n >= 1, got {m} x {n}"
        )));
    }
    let data = match kind.kind {
        Ensemble::Gaussian => gaussian_from_draws(m, n, || rng.sample(StandardNormal)),
        Ensemble::Rademacher => {
            // 64 signs per word, consumed row-major.
            let mut word = 0u64;
            let mut left = 0u32;
            let signs = std::iter::repeat_with(|| {
                if left == 0 {
                    word = rng.next_u64();
                    left = 64;
                }
                let bit = word & 1;
                word >>= 1;
                left -= 1;
                if bit == 1 {
                    1.0
                } else {
                    -1.0
                }
            });
            DMatrix::from_row_iterator(m, n, signs.take(m * n))
        }
    };
    Ok(MeasurementMatrix {
        data,
        kind: Some(kind),
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn sparse_signal_has_requested_support_and_norm() {
        let spec = SignalSpec::sparse(100, 25, 8.0, 1);
        let x = gen_sparse_signal(&spec, &mut seeded(1)).unwrap();
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 25);
        assert!((x.norm() - 8.0).abs() <= 1e-9);
    }

    #[test]
    fn fully_dense_sparse_signal() {
        let spec = SignalSpec::sparse(4, 4, 1.0, 0);
        let x = gen_sparse_signal(&spec, &mut seeded(5)).unwrap();
        assert!(x.iter().all(|v| *v != 0.0));
        assert!((x.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn one_sparse_signal_is_scaled_basis_vector() {
        let spec = SignalSpec::sparse(10, 1, 3.0, 0);
        for seed in 0..20 {
            let x = gen_sparse_signal(&spec, &mut seeded(seed)).unwrap();
            let nz: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert!((nz[0].abs() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sparse_specs() {
        let mut rng = seeded(0);
        assert!(matches!(
            gen_sparse_signal(&SignalSpec::sparse(5, 6, 1.0, 0), &mut rng),
            Err(Error::InvalidSpec(_))
        ));
        assert!(gen_sparse_signal(&SignalSpec::sparse(5, 2, 0.0, 0), &mut rng).is_err());
        assert!(gen_sparse_signal(&SignalSpec::sparse(5, 0, 1.0, 0), &mut rng).is_err());
    }

    fn as_matrix(x: &DVector<f64>, d: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(d, d, x.as_slice())
    }

    #[test]
    fn lowrank_rank_one() {
        let spec = SignalSpec::lowrank(10, 1, 1.0, 0);
        let x = gen_lowrank_signal(&spec, &mut seeded(3)).unwrap();
        let sv = as_matrix(&x, 10).singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((x.norm() - 1.0).abs() < 1e-12);
        assert!(s[1] < 1e-10);
    }

    #[test]
    fn lowrank_full_rank_and_rank_two() {
        let x = gen_lowrank_signal(&SignalSpec::lowrank(5, 5, 2.0, 0), &mut seeded(4)).unwrap();
        assert!((x.norm() - 2.0).abs() < 1e-9);
        let s = as_matrix(&x, 5).singular_values();
        assert!(s.iter().all(|v| *v > 1e-10));

        let x = gen_lowrank_signal(&SignalSpec::lowrank(8, 2, 8.0, 0), &mut seeded(9)).unwrap();
        assert!((x.norm() - 8.0).abs() < 1e-9);
        let mut s: Vec<f64> = as_matrix(&x, 8).singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] > 1e-6);
        assert!(s[2] < 1e-10);
    }

    #[test]
    fn lowrank_rejects_excess_rank() {
        let spec = SignalSpec::lowrank(3, 4, 1.0, 0);
        assert!(matches!(
            gen_lowrank_signal(&spec, &mut seeded(0)),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let a = sample_measurements(EnsembleKind::rademacher(), 1000, 100, &mut seeded(2)).unwrap();
        assert!(a.matrix().iter().all(|v| *v == 1.0 || *v == -1.0));
        let plus = a.matrix().iter().filter(|v| **v > 0.0).count() as f64 / 1e5;
        assert!((plus - 0.5).abs() < 0.01);
    }

    #[test]
    fn gaussian_column_means_are_small() {
        let m = 2000;
        let a = sample_measurements(EnsembleKind::gaussian(), m, 100, &mut seeded(8)).unwrap();
        let bound = 4.0 / (m as f64).sqrt();
        for j in 0..100 {
            let mean = a.matrix().column(j).mean();
            assert!(mean.abs() < bound, "column {j} mean {mean}");
        }
    }

    #[test]
    fn smallest_gaussian_instance() {
        let a = sample_measurements(EnsembleKind::gaussian(), 1, 1, &mut seeded(0)).unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 1));
        assert!(a.matrix()[(0, 0)].is_finite());
    }

    #[test]
    fn empty_shapes_are_rejected() {
        assert!(sample_measurements(EnsembleKind::gaussian(), 0, 3, &mut seeded(0)).is_err());
        assert!("laplace".parse::<Ensemble>().is_err());
        assert_eq!("Rademacher".parse::<Ensemble>().unwrap(), Ensemble::Rademacher);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        for kind in [EnsembleKind::gaussian(), EnsembleKind::rademacher()] {
            let a = sample_measurements(kind, 30, 7, &mut seeded(11)).unwrap();
            let b = sample_measurements(kind, 30, 7, &mut seeded(11)).unwrap();
            assert_eq!(a, b);
        }
        let spec = SignalSpec::sparse(50, 5, 2.0, 0);
        assert_eq!(
            gen_sparse_signal(&spec, &mut seeded(4)).unwrap(),
            gen_sparse_signal(&spec, &mut seeded(4)).unwrap()
        );
    }

    #[test]
    fn negated_draws_negate_the_matrix() {
        let mut r1 = seeded(21);
        let mut r2 = seeded(21);
        let a = gaussian_from_draws(6, 4, || r1.sample(StandardNormal));
        let b = gaussian_from_draws(6, 4, || -r2.sample::<f64, _>(StandardNormal));
        assert_eq!(a, -b);
        let sampled = sample_measurements(EnsembleKind::gaussian(), 6, 4, &mut seeded(21)).unwrap();
        assert_eq!(sampled.matrix(), &a);
    }

    #[test]
    fn empirical_isotropy() {
        // ‖(1/m)AᵀA − I‖_max < 10/√m with m = 50 n, for both kinds.
        let n = 20;
        let m = 50 * n;
        for kind in [EnsembleKind::gaussian(), EnsembleKind::rademacher()] {
            let mut failures = 0;
            for seed in 0..100 {
                let a = sample_measurements(kind, m, n, &mut seeded(seed)).unwrap();
                let cov = a.matrix().tr_mul(a.matrix()) / m as f64;
                let dev = (cov - DMatrix::<f64>::identity(n, n)).amax();
                if dev >= 10.0 / (m as f64).sqrt() {
                    failures += 1;
                }
            }
            assert!(failures <= 1, "{:?}: {failures} failures", kind.kind);
        }
    }
}
