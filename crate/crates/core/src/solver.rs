//! Generalized Lasso by projected gradient descent, plus the one-shot
//! back-projection baselines.
//!
//! The objective is `ℒ(x) = (1/2m) Σ (μ y_i − a_iᵀx)²` minimized over a
//! constraint set `K`. The solver factors `A` once so that each iteration
//! costs `O(n²)` regardless of `m`:
//!
//! ```text
//! ‖μy − Ax‖² = ‖R x − z‖² + r⊥²
//! ```
//!
//! where `RᵀR = AᵀA`, `z` is the matching transform of `μy` and `r⊥` is the
//! least-squares residual norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::geometry::ConstraintSet;
use crate::quantizer::QuantizedObservations;

#[derive(Debug, Clone, Copy)]
pub struct GLassoProblem<'a> {
    a: &'a MeasurementMatrix,
    y: &'a DVector<f64>,
    mu: f64,
    k: &'a ConstraintSet,
}

impl<'a> GLassoProblem<'a> {
    pub fn new(a: &'a MeasurementMatrix, y: &'a DVector<f64>, mu: f64, k: &'a ConstraintSet) -> Result<Self> {
        if a.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: y.len(),
            });
        }
        if !mu.is_finite() {
            return Err(Error::InvalidSpec(format!("mu must be finite, got {mu}")));
        }
        Ok(Self { a, y, mu, k })
    }

    pub fn from_observations(
        a: &'a MeasurementMatrix,
        obs: &'a QuantizedObservations,
        mu: f64,
        k: &'a ConstraintSet,
    ) -> Result<Self> {
        Self::new(a, &obs.y, mu, k)
    }

    pub fn matrix(&self) -> &MeasurementMatrix {
        self.a
    }

    pub fn observations(&self) -> &DVector<f64> {
        self.y
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn constraint(&self) -> &ConstraintSet {
        self.k
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.a.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.a.cols(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// `(1/2m) Σ (μ y_i − a_iᵀx)²`, evaluated directly from `A`.
pub fn objective(p: &GLassoProblem<'_>, x: &DVector<f64>) -> Result<f64> {
    p.check_dim(x)?;
    let r = p.a.matrix() * x - p.y * p.mu;
    Ok(r.norm_squared() / (2.0 * p.a.rows() as f64))
}

/// `(1/m) Aᵀ(Ax − μy)`, evaluated directly from `A`.
pub fn gradient(p: &GLassoProblem<'_>, x: &DVector<f64>) -> Result<DVector<f64>> {
    p.check_dim(x)?;
    let r = p.a.matrix() * x - p.y * p.mu;
    Ok(p.a.matrix().tr_mul(&r) / p.a.rows() as f64)
}

const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-8;
const LIPSCHITZ_SAFETY: f64 = 1.01;

/// Largest eigenvalue of a PSD operator by power iteration.
fn power_iteration(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    // Fixed, non-symmetric start so no eigenvector is systematically missed.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda
}

/// `λ_max(AᵀA)/m` by power iteration, inflated by 1%.
pub fn estimate_lipschitz(a: &MeasurementMatrix) -> f64 {
    let m = a.rows() as f64;
    let mat = a.matrix();
    LIPSCHITZ_SAFETY * power_iteration(a.cols(), |v| mat.tr_mul(&(mat * v)) / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    FixedInverseLipschitz,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step_rule: StepRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            rel_tol: 1e-10,
            step_rule: StepRule::FixedInverseLipschitz,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidSpec("max_iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub x_hat: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step_size: f64,
}

/// Square-root factor of the least-squares objective.
struct Factor {
    r: DMatrix<f64>,
    z: DVector<f64>,
    resid_sq: f64,
    m: f64,
}

impl Factor {
    fn new(a: &DMatrix<f64>, target: &DVector<f64>) -> Self {
        let m = a.nrows();
        let gram = a.tr_mul(a);
        let aty = a.tr_mul(target);
        // Cholesky of the Gram matrix when it is well posed, QR otherwise.
        if m >= a.ncols() {
            if let Some(chol) = gram.cholesky() {
                let l = chol.l();
                if let Some(z) = l.solve_lower_triangular(&aty) {
                    let r = l.transpose();
                    if let Some(x_ls) = r.solve_upper_triangular(&z) {
                        let resid_sq = (target - a * x_ls).norm_squared();
                        if z.iter().all(|v| v.is_finite()) && resid_sq.is_finite() {
                            return Self {
                                r,
                                z,
                                resid_sq,
                                m: m as f64,
                            };
                        }
                    }
                }
            }
        }
        let qr = a.clone().qr();
        let q = qr.q();
        let z = q.tr_mul(target);
        let resid_sq = (target - &q * &z).norm_squared();
        Self {
            r: qr.r(),
            z,
            resid_sq,
            m: m as f64,
        }
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.r * x - &self.z
    }

    fn objective_from_residual(&self, res: &DVector<f64>) -> f64 {
        (res.norm_squared() + self.resid_sq) / (2.0 * self.m)
    }

    fn gradient_from_residual(&self, res: &DVector<f64>) -> DVector<f64> {
        self.r.tr_mul(res) / self.m
    }

    fn lipschitz(&self) -> f64 {
        let r = &self.r;
        let m = self.m;
        LIPSCHITZ_SAFETY * power_iteration(r.ncols(), |v| r.tr_mul(&(r * v)) / m)
    }
}

/// Projected gradient descent from `x = 0`.
pub fn glasso_solve(p: &GLassoProblem<'_>, opts: &SolverOptions) -> Result<SolverResult> {
    opts.validate()?;
    let n = p.a.cols();
    let factor = Factor::new(p.a.matrix(), &(p.y * p.mu));
    let lipschitz = factor.lipschitz();
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let mut x = p.k.project(&DVector::zeros(n))?;
    let mut res = factor.residual(&x);
    let mut f = factor.objective_from_residual(&res);
    if !f.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            objective: f,
        });
    }
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let grad = factor.gradient_from_residual(&res);
        let (next, next_res, next_f) = loop {
            let cand = p.k.project(&(&x - &grad * step))?;
            let cand_res = factor.residual(&cand);
            let cand_f = factor.objective_from_residual(&cand_res);
            if opts.step_rule == StepRule::FixedInverseLipschitz {
                break (cand, cand_res, cand_f);
            }
            let d = &cand - &x;
            let model = f + grad.dot(&d) + d.norm_squared() / (2.0 * step);
            if cand_f <= model + 1e-12 * f.abs() || step < 1e-20 {
                break (cand, cand_res, cand_f);
            }
            step *= 0.5;
        };
        if !next_f.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                objective: next_f,
            });
        }
        let change = (f - next_f).abs();
        x = next;
        res = next_res;
        trace.push(next_f);
        let done = change <= opts.rel_tol * f.abs() || next_f == 0.0;
        f = next_f;
        if done {
            converged = true;
            break;
        }
    }

    Ok(SolverResult {
        x_hat: x,
        objective_trace: trace,
        iterations,
        converged,
        step_size: step,
    })
}

fn back_projection(a: &MeasurementMatrix, y: &DVector<f64>, k: &ConstraintSet, scale: f64) -> Result<DVector<f64>> {
    let aty = a.apply_transpose(y)?;
    k.project(&(aty * (scale / a.rows() as f64)))
}

/// Projected back projection: `P_K((μ/m) Aᵀy)`.
pub fn pbp_estimate(a: &MeasurementMatrix, y: &DVector<f64>, k: &ConstraintSet, mu: f64) -> Result<DVector<f64>> {
    back_projection(a, y, k, mu)
}

/// Maximizer over `K` of `(1/m) Σ y_i a_iᵀx − ‖x‖²/(2λ)`. Completing the square
/// turns it into `P_K((λ/m) Aᵀy)`.
pub fn dm_estimate(a: &MeasurementMatrix, y: &DVector<f64>, k: &ConstraintSet, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidSpec(format!("lambda must be positive, got {lambda}")));
    }
    back_projection(a, y, k, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_measurements, EnsembleKind};
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(m: usize, n: usize, seed: u64) -> MeasurementMatrix {
        sample_measurements(EnsembleKind::gaussian(), m, n, &mut seeded(seed)).unwrap()
    }

    fn randn(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = seeded(seed);
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn objective_examples() {
        let a = gaussian(40, 5, 1);
        let x0 = randn(5, 2);
        let y = a.apply(&x0).unwrap();
        let k = ConstraintSet::Unconstrained;
        let p = GLassoProblem::new(&a, &y, 1.0, &k).unwrap();
        assert!(objective(&p, &x0).unwrap() < 1e-25);
        let p2 = GLassoProblem::new(&a, &y, 2.0, &k).unwrap();
        let expected = 4.0 * y.norm_squared() / 80.0;
        assert!((objective(&p2, &DVector::zeros(5)).unwrap() - expected).abs() < 1e-12 * expected);

        let signs = DVector::from_fn(40, |i, _| if i % 3 == 0 { -1.0 } else { 1.0 });
        let t = 7.5;
        let p3 = GLassoProblem::new(&a, &signs, t, &k).unwrap();
        assert!((objective(&p3, &DVector::zeros(5)).unwrap() - t * t / 2.0).abs() < 1e-12);
        assert!(matches!(
            objective(&p, &DVector::zeros(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn problem_rejects_bad_inputs() {
        let a = gaussian(4, 3, 0);
        let k = ConstraintSet::Unconstrained;
        let y = DVector::zeros(5);
        assert!(GLassoProblem::new(&a, &y, 1.0, &k).is_err());
        let y = DVector::zeros(4);
        assert!(GLassoProblem::new(&a, &y, f64::NAN, &k).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let m = 9;
        let iso = MeasurementMatrix::from_matrix(DMatrix::identity(m, m) * (m as f64).sqrt()).unwrap();
        assert!((estimate_lipschitz(&iso) - 1.01).abs() < 1e-9);

        let row = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let single = MeasurementMatrix::from_matrix(row).unwrap();
        assert!((estimate_lipschitz(&single) / 1.01 - 5.25).abs() < 1e-9);

        let a = gaussian(400, 100, 3);
        let exact = (a.matrix().tr_mul(a.matrix()) / 400.0).symmetric_eigenvalues().max();
        let est = estimate_lipschitz(&a);
        assert!(est >= exact * 0.995 && est <= exact * 1.0101, "{est} vs {exact}");
        assert!((est / 2.25 - 1.0).abs() < 0.05, "{est}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seeded(11);
        for trial in 0..10 {
            let n = 3 + trial;
            let a = gaussian(2 * n + 5, n, 100 + trial as u64);
            let y = randn(2 * n + 5, 200 + trial as u64);
            let k = ConstraintSet::Unconstrained;
            let p = GLassoProblem::new(&a, &y, 1.3, &k).unwrap();
            let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = gradient(&p, &x).unwrap();
            let h = 1e-5;
            let fd = DVector::from_fn(n, |i, _| {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                (objective(&p, &up).unwrap() - objective(&p, &dn).unwrap()) / (2.0 * h)
            });
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1.0));
        }
    }

    fn normal_equations(a: &MeasurementMatrix, y: &DVector<f64>, mu: f64) -> DVector<f64> {
        let g = a.matrix().tr_mul(a.matrix());
        g.cholesky().unwrap().solve(&(a.matrix().tr_mul(y) * mu))
    }

    #[test]
    fn unconstrained_matches_least_squares() {
        let a = gaussian(120, 20, 4);
        let x0 = randn(20, 5);
        let y = a.apply(&x0).unwrap() + randn(120, 6) * 0.01;
        let k = ConstraintSet::Unconstrained;
        let p = GLassoProblem::new(&a, &y, 1.0, &k).unwrap();
        let res = glasso_solve(&p, &SolverOptions::default()).unwrap();
        let ls = normal_equations(&a, &y, 1.0);
        assert!(res.converged);
        assert!((&res.x_hat - &ls).norm() <= 1e-6 * ls.norm());
        let direct = objective(&p, &res.x_hat).unwrap();
        let last = *res.objective_trace.last().unwrap();
        assert!((direct - last).abs() <= 1e-9 * direct.max(1e-12));
    }

    #[test]
    fn inactive_constraint_changes_nothing() {
        let a = gaussian(60, 8, 7);
        let y = randn(60, 8);
        let free = ConstraintSet::Unconstrained;
        let p = GLassoProblem::new(&a, &y, 1.0, &free).unwrap();
        let unconstrained = glasso_solve(&p, &SolverOptions::default()).unwrap();
        let ball = ConstraintSet::L1Ball {
            radius: 10.0 * unconstrained.x_hat.lp_norm(1),
        };
        let p = GLassoProblem::new(&a, &y, 1.0, &ball).unwrap();
        let constrained = glasso_solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(constrained.x_hat, unconstrained.x_hat);
    }

    #[test]
    fn constrained_solution_is_a_fixed_point() {
        for rule in [StepRule::FixedInverseLipschitz, StepRule::Backtracking] {
            let a = gaussian(50, 30, 9);
            let mut x0 = DVector::zeros(30);
            x0[3] = 2.0;
            x0[17] = -1.0;
            let y = a.apply(&x0).unwrap() + randn(50, 10) * 0.2;
            let k = ConstraintSet::L1Ball { radius: x0.lp_norm(1) };
            let p = GLassoProblem::new(&a, &y, 1.0, &k).unwrap();
            let opts = SolverOptions {
                step_rule: rule,
                ..Default::default()
            };
            let res = glasso_solve(&p, &opts).unwrap();
            assert!(res.converged);
            assert!(k.excess(&res.x_hat).unwrap() <= 1e-9);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let eta = 1.0 / estimate_lipschitz(&a);
            let g = gradient(&p, &res.x_hat).unwrap();
            let moved = k.project(&(&res.x_hat - g * eta)).unwrap();
            assert!((moved - &res.x_hat).norm() <= 1e-6 * (1.0 + res.x_hat.norm()));
        }
    }

    #[test]
    fn underdetermined_problems_use_the_qr_path() {
        let a = gaussian(10, 25, 12);
        let y = randn(10, 13);
        let k = ConstraintSet::L1Ball { radius: 1.0 };
        let p = GLassoProblem::new(&a, &y, 1.0, &k).unwrap();
        let res = glasso_solve(&p, &SolverOptions::default()).unwrap();
        let direct = objective(&p, &res.x_hat).unwrap();
        assert!((direct - res.objective_trace.last().unwrap()).abs() <= 1e-9 * direct);
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn options_are_validated() {
        let a = gaussian(5, 2, 0);
        let y = DVector::zeros(5);
        let k = ConstraintSet::Unconstrained;
        let p = GLassoProblem::new(&a, &y, 1.0, &k).unwrap();
        let bad = SolverOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(glasso_solve(&p, &bad).is_err());
        let bad = SolverOptions {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(glasso_solve(&p, &bad).is_err());
    }

    #[test]
    fn back_projection_examples() {
        let a = gaussian(30, 4, 1);
        let y = randn(30, 2);
        let free = ConstraintSet::Unconstrained;
        let expected = a.matrix().tr_mul(&y) / 30.0;
        assert!((pbp_estimate(&a, &y, &free, 1.0).unwrap() - &expected).amax() < 1e-15);
        assert!((dm_estimate(&a, &y, &free, 2.5).unwrap() - expected * 2.5).amax() < 1e-14);
        assert!(dm_estimate(&a, &y, &free, 0.0).is_err());

        let m = 4;
        let iso = MeasurementMatrix::from_matrix(DMatrix::identity(m, m) * (m as f64).sqrt()).unwrap();
        let x0 = DVector::from_column_slice(&[0.5, -0.25, 0.0, 0.125]);
        let y = &x0 * (m as f64).sqrt();
        let ball = ConstraintSet::L1Ball { radius: 1.0 };
        assert!((pbp_estimate(&iso, &y, &ball, 1.0).unwrap() - &x0).amax() < 1e-15);

        let single = MeasurementMatrix::from_matrix(DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5])).unwrap();
        let y1 = DVector::from_element(1, -1.0);
        let ball = ConstraintSet::L1Ball { radius: 1.5 };
        let got = dm_estimate(&single, &y1, &ball, 1.0).unwrap();
        let want = ball.project(&(single.row(0) * -1.0)).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn dm_and_pbp_agree_at_equal_scale() {
        let a = gaussian(80, 10, 3);
        let y = randn(80, 4);
        let k = ConstraintSet::L1Ball { radius: 0.7 };
        let lambda = 3.7;
        let d = dm_estimate(&a, &y, &k, lambda).unwrap();
        let p = pbp_estimate(&a, &y, &k, lambda).unwrap();
        assert!((d - p).amax() <= 1e-12);
    }

    #[test]
    fn dm_matches_grid_search() {
        let a = gaussian(15, 3, 21);
        let y = DVector::from_fn(15, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let radius = 1.0;
        let lambda = 2.0;
        let k = ConstraintSet::L1Ball { radius };
        let x = dm_estimate(&a, &y, &k, lambda).unwrap();

        let aty = a.matrix().tr_mul(&y) / 15.0;
        let value = |p: &DVector<f64>| aty.dot(p) - p.norm_squared() / (2.0 * lambda);
        let steps = 200;
        let mut best = (f64::NEG_INFINITY, DVector::zeros(3));
        for i in 0..=steps {
            for j in 0..=steps {
                let u = -radius + 2.0 * radius * i as f64 / steps as f64;
                let v = -radius + 2.0 * radius * j as f64 / steps as f64;
                let rest = radius - u.abs() - v.abs();
                if rest < 0.0 {
                    continue;
                }
                // Optimal third coordinate for fixed (u, v), clipped to the ball.
                let w = (lambda * aty[2]).clamp(-rest, rest);
                let p = DVector::from_column_slice(&[u, v, w]);
                let val = value(&p);
                if val > best.0 {
                    best = (val, p);
                }
            }
        }
        assert!((&x - &best.1).norm() < 1e-2, "{x} vs {}", best.1);
        assert!(value(&x) >= best.0 - 1e-9);
        assert!((value(&x) - best.0).abs() < 1e-3);
    }
}
