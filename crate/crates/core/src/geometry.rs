//! Constraint sets with exact Euclidean projections, Gaussian-width bounds and
//! sampled descent-cone diagnostics.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::MeasurementMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    L1Ball {
        radius: f64,
    },
    /// Nuclear-norm ball over row-major vectorized `d × d` matrices.
    NuclearBall {
        radius: f64,
        d: usize,
    },
    Unconstrained,
}

impl ConstraintSet {
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match *self {
            ConstraintSet::L1Ball { radius } => project_l1_ball(v, radius),
            ConstraintSet::NuclearBall { radius, d } => {
                if v.len() != d * d {
                    return Err(Error::Shape(format!(
                        "expected a vectorized {d}x{d} matrix, got length {}",
                        v.len()
                    )));
                }
                project_nuclear_ball(v, radius)
            }
            ConstraintSet::Unconstrained => Ok(v.clone()),
        }
    }

    /// How far `x` lies outside the set (zero when inside).
    pub fn excess(&self, x: &DVector<f64>) -> Result<f64> {
        match *self {
            ConstraintSet::L1Ball { radius } => Ok((x.lp_norm(1) - radius).max(0.0)),
            ConstraintSet::NuclearBall { radius, d } => {
                if x.len() != d * d {
                    return Err(Error::Shape(format!("expected length {}", d * d)));
                }
                Ok((nuclear_norm(x, d) - radius).max(0.0))
            }
            ConstraintSet::Unconstrained => Ok(0.0),
        }
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRadius(radius))
    }
}

/// Soft-threshold level that puts a nonnegative vector on the simplex
/// boundary `Σ u_i = radius`. Requires `Σ u_i > radius`.
fn simplex_threshold(magnitudes: &[f64], radius: f64) -> f64 {
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    // Descending magnitude; ties broken by index so the result is deterministic.
    order.sort_by(|&a, &b| {
        magnitudes[b]
            .partial_cmp(&magnitudes[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &i) in order.iter().enumerate() {
        let u = magnitudes[i];
        cumsum += u;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}` by sort-and-threshold.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    check_radius(radius)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("cannot project a non-finite vector".into()));
    }
    if v.lp_norm(1) <= radius {
        return Ok(v.clone());
    }
    let magnitudes: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let theta = simplex_threshold(&magnitudes, radius);
    Ok(v.map(|x| x.signum() * (x.abs() - theta).max(0.0)))
}

fn to_matrix(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, v.as_slice())
}

fn to_row_major(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.transpose().iter().copied())
}

fn side_length(len: usize) -> Result<usize> {
    let d = (len as f64).sqrt().round() as usize;
    if d * d != len || d == 0 {
        return Err(Error::Shape(format!("length {len} is not a perfect square")));
    }
    Ok(d)
}

/// Nonzero singular triplets `(σ, u, v)` of a square matrix, read off the
/// positive eigenpairs of the symmetric embedding `[[0, X], [Xᵀ, 0]]`.
///
/// nalgebra's bidiagonal SVD returns inconsistent singular vectors for
/// rank-deficient inputs, which is exactly what this projection produces.
fn singular_triplets(x: &DMatrix<f64>) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
    let d = x.nrows();
    let mut embed = DMatrix::zeros(2 * d, 2 * d);
    embed.view_mut((0, d), (d, d)).copy_from(x);
    embed.view_mut((d, 0), (d, d)).copy_from(&x.transpose());
    let eig = embed.symmetric_eigen();
    let scale = std::f64::consts::SQRT_2;
    let mut out: Vec<_> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 0.0)
        .map(|(i, s)| {
            let col = eig.eigenvectors.column(i);
            (*s, col.rows(0, d) * scale, col.rows(d, d) * scale)
        })
        .collect();
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    out.truncate(d);
    out
}

pub fn nuclear_norm(v: &DVector<f64>, d: usize) -> f64 {
    singular_triplets(&to_matrix(v, d)).iter().map(|t| t.0).sum()
}

/// Euclidean (Frobenius) projection onto the nuclear-norm ball: project the
/// singular values onto the ℓ1 ball and reassemble.
pub fn project_nuclear_ball(v: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    check_radius(radius)?;
    let d = side_length(v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("cannot project a non-finite matrix".into()));
    }
    let triplets = singular_triplets(&to_matrix(v, d));
    let sv: Vec<f64> = triplets.iter().map(|t| t.0).collect();
    // The computed nuclear norm carries rounding error of a few ulps.
    if sv.iter().sum::<f64>() <= radius * (1.0 + 1e-13) {
        return Ok(v.clone());
    }
    let theta = simplex_threshold(&sv, radius);
    let mut x = DMatrix::zeros(d, d);
    for (s, u, w) in &triplets {
        let shrunk = s - theta;
        if shrunk > 0.0 {
            x += u * w.transpose() * shrunk;
        }
    }
    Ok(to_row_major(&x))
}

/// `√(2 s ln(n/s) + 3s/2)`, an upper bound on the Gaussian width of the
/// ℓ1 descent cone at an `s`-sparse point.
pub fn gw_bound_sparse(n: usize, s: usize) -> Result<f64> {
    if s == 0 || s > n {
        return Err(Error::InvalidSpec(format!("need 1 <= s <= n, got s = {s}, n = {n}")));
    }
    let (n, s) = (n as f64, s as f64);
    Ok((2.0 * s * (n / s).ln() + 1.5 * s).sqrt())
}

/// `√(6 d r)` for a rank-`r` `d × d` matrix under the nuclear-norm ball.
pub fn gw_bound_lowrank(d: usize, r: usize) -> Result<f64> {
    if r == 0 || r > d {
        return Err(Error::InvalidSpec(format!("need 1 <= r <= d, got r = {r}, d = {d}")));
    }
    Ok((6.0 * d as f64 * r as f64).sqrt())
}

const ANCHOR_TOL: f64 = 1e-9;
const MIN_DISPLACEMENT: f64 = 1e-12;

/// Unit vectors in the descent cone of `k` at `x0`, obtained by projecting
/// small Gaussian perturbations of `x0` back onto `k`.
pub fn sample_descent_directions<R: Rng + ?Sized>(
    k: &ConstraintSet,
    x0: &DVector<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let excess = k.excess(x0)?;
    if excess > ANCHOR_TOL {
        return Err(Error::InfeasibleAnchor { excess });
    }
    let norm = x0.norm();
    let step = if norm > 0.0 { 0.01 * norm } else { 0.01 };
    let n = x0.len();
    let mut out = Vec::with_capacity(count);
    let max_attempts = 1000 * count.max(1);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidSpec(
                "descent cone appears degenerate: no nonzero displacement found".into(),
            ));
        }
        let g = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let moved = k.project(&(x0 + g * step))? - x0;
        let len = moved.norm();
        if len >= MIN_DISPLACEMENT {
            out.push(moved / len);
        }
    }
    Ok(out)
}

/// Minimum of `(1/m)‖A w‖²` over the supplied directions.
pub fn smallball_inf(a: &MeasurementMatrix, directions: &[DVector<f64>]) -> Result<f64> {
    let m = a.rows() as f64;
    directions
        .iter()
        .map(|w| a.apply(w).map(|aw| aw.norm_squared() / m))
        .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// Sampled estimate (from above) of `inf_w (1/m)Σ(a_iᵀw)²` over the descent cone.
pub fn estimate_smallball_inf<R: Rng + ?Sized>(
    a: &MeasurementMatrix,
    k: &ConstraintSet,
    x0: &DVector<f64>,
    num_directions: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.cols() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: x0.len(),
        });
    }
    let dirs = sample_descent_directions(k, x0, num_directions, rng)?;
    smallball_inf(a, &dirs)
}

/// Mean over Gaussian draws of the best alignment with a sampled direction.
/// Bounds the Gaussian width of the cone section from below.
pub fn width_lower_estimate<R: Rng + ?Sized>(directions: &[DVector<f64>], draws: usize, rng: &mut R) -> f64 {
    let Some(first) = directions.first() else {
        return 0.0;
    };
    let n = first.len();
    let total: f64 = (0..draws)
        .map(|_| {
            let g = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
            directions.iter().map(|w| g.dot(w)).fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / draws.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeDiagnostics {
    pub width_bound: f64,
    pub width_lower: f64,
    pub smallball_inf: f64,
    pub num_directions: usize,
    pub seed: u64,
}

impl ConeDiagnostics {
    pub fn compute(
        a: &MeasurementMatrix,
        k: &ConstraintSet,
        x0: &DVector<f64>,
        width_bound: f64,
        num_directions: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        let dirs = sample_descent_directions(k, x0, num_directions, &mut rng)?;
        Ok(Self {
            width_bound,
            width_lower: width_lower_estimate(&dirs, 200, &mut rng),
            smallball_inf: smallball_inf(a, &dirs)?,
            num_directions,
            seed,
        })
    }
}
