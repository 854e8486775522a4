//! Self-checks behind the `verify` subcommand. Each check compares the library
//! against an independent route: Monte Carlo against closed forms, projections
//! against optimality certificates, the solver against the normal equations
//! and the gradient against finite differences.

use nalgebra::{DMatrix, DVector};
use qlasso_core::ensemble::{sample_measurements, EnsembleKind};
use qlasso_core::experiment::onebit_moment_check;
use qlasso_core::geometry::{project_l1_ball, project_nuclear_ball};
use qlasso_core::quantizer::{dither_mean_residual, one_bit_mean_formula, DitherKind};
use qlasso_core::rng::{substream, Purpose, Stream};
use qlasso_core::solver::{glasso_solve, gradient, objective};
use qlasso_core::{ConstraintSet, GLassoProblem, QuantizerConfig, SolverOptions};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    pub details: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifySizes {
    pub dither_samples: usize,
    pub moment_samples: usize,
    pub projections: usize,
}

impl Default for VerifySizes {
    fn default() -> Self {
        Self {
            dither_samples: 100_000,
            moment_samples: 200_000,
            projections: 500,
        }
    }
}

fn stream(seed: u64, check: u64) -> Stream {
    substream(seed, Purpose::Verification, check, 0)
}

fn randn(n: usize, rng: &mut Stream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn dither_unbiasedness(seed: u64, sizes: VerifySizes) -> Result<Check, CliError> {
    let mut rng = stream(seed, 1);
    let n = sizes.dither_samples;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for delta in [0.5, 1.0, 3.0] {
        let q = QuantizerConfig::Uniform { delta };
        for d in [
            DitherKind::UniformHalfOpen { delta },
            DitherKind::KFoldUniform { k: 2, delta },
        ] {
            for x in [-2.7, -0.4, 0.0, 0.9, 1.5, 3.3] {
                let est = dither_mean_residual(x, &q, &d, 1.0, n, &mut rng)?;
                worst = worst.max(est.mean.abs() / (delta / (n as f64).sqrt()));
                cases += 1;
            }
        }
    }
    Ok(Check {
        name: "dither unbiasedness",
        passed: worst < 5.0,
        summary: format!("max |E[Q(x+tau)] - x| / (delta/sqrt(N)) = {worst:.3} (limit 5) over {cases} cases, N = {n}"),
        details: Vec::new(),
    })
}

fn one_bit_bias(seed: u64, sizes: VerifySizes) -> Result<Check, CliError> {
    let mut rng = stream(seed, 2);
    let t = 2.0;
    let q = QuantizerConfig::OneBit { t };
    let d = DitherKind::UniformSymmetric { t };
    let mut worst: f64 = 0.0;
    let mut passed = true;
    let mut details = Vec::new();
    for x in [0.0, 0.5 * t, 2.0 * t, -2.0 * t, 3.0 * t, -3.0 * t] {
        let est = dither_mean_residual(x, &q, &d, t, sizes.dither_samples, &mut rng)?;
        let closed = one_bit_mean_formula(x, t, t)?;
        let z = if est.std_err > 0.0 {
            (est.mean - closed) / est.std_err
        } else {
            0.0
        };
        passed &= est.agrees_with(closed, 5.0);
        worst = worst.max(z.abs());
        details.push(format!(
            "x = {x:+.1}: mc = {:+.6} closed = {closed:+.6} z = {z:+.2}",
            est.mean
        ));
    }
    Ok(Check {
        name: "one-bit bias identity",
        passed,
        summary: format!("max |z| = {worst:.3} (limit 5), T = {t}, N = {}", sizes.dither_samples),
        details,
    })
}

/// For the ℓ1 ball, `p` is the projection of `v` iff `p` is feasible and
/// `<v − p, z − p> ≤ 0` at every vertex `z = ±r e_i`.
fn l1_projection(seed: u64, sizes: VerifySizes) -> Result<Check, CliError> {
    let mut rng = stream(seed, 3);
    let r = 1.5;
    let (mut feas, mut opt, mut expand): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..sizes.projections {
        let v = randn(12, &mut rng) * 2.0;
        let p = project_l1_ball(&v, r)?;
        feas = feas.max(p.lp_norm(1) / r - 1.0);
        let g = &v - &p;
        opt = opt.max((r * g.amax() - g.dot(&p)) / (1.0 + v.norm_squared()));
        let w = randn(12, &mut rng) * 2.0;
        let pw = project_l1_ball(&w, r)?;
        expand = expand.max((&p - &pw).norm() / (&v - &w).norm() - 1.0);
    }
    let passed = feas <= 1e-12 && opt <= 1e-10 && expand <= 1e-10;
    Ok(Check {
        name: "l1 projection certificate",
        passed,
        summary: format!(
            "feasibility excess {feas:.2e}, vertex optimality gap {opt:.2e}, expansion {expand:.2e} over {} inputs",
            sizes.projections
        ),
        details: Vec::new(),
    })
}

fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    x.tr_mul(x)
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// For the nuclear ball, `p` is the projection of `v` iff `p` is feasible and
/// `r ‖v − p‖_op ≤ <v − p, p>`, since `r ‖·‖_op` is the support function.
fn nuclear_projection(seed: u64, sizes: VerifySizes) -> Result<Check, CliError> {
    let mut rng = stream(seed, 4);
    let (d, r) = (4, 1.5);
    let as_matrix = |v: &DVector<f64>| DMatrix::from_row_slice(d, d, v.as_slice());
    let (mut feas, mut opt, mut expand): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..sizes.projections {
        let v = randn(d * d, &mut rng);
        let p = project_nuclear_ball(&v, r)?;
        let nuclear: f64 = singular_values(&as_matrix(&p)).iter().sum();
        feas = feas.max(nuclear / r - 1.0);
        let g = &v - &p;
        let op = singular_values(&as_matrix(&g)).into_iter().fold(0.0, f64::max);
        opt = opt.max((r * op - g.dot(&p)) / (1.0 + v.norm_squared()));
        let w = randn(d * d, &mut rng);
        let pw = project_nuclear_ball(&w, r)?;
        expand = expand.max((&p - &pw).norm() / (&v - &w).norm() - 1.0);
    }
    let passed = feas <= 1e-6 && opt <= 1e-8 && expand <= 1e-10;
    Ok(Check {
        name: "nuclear projection certificate",
        passed,
        summary: format!(
            "feasibility excess {feas:.2e}, support-function gap {opt:.2e}, expansion {expand:.2e} over {} inputs",
            sizes.projections
        ),
        details: Vec::new(),
    })
}

fn gradient_check(seed: u64) -> Result<Check, CliError> {
    let mut rng = stream(seed, 5);
    let (m, n) = (60, 20);
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let a = sample_measurements(
            EnsembleKind::gaussian(),
            m,
            n,
            &mut substream(seed, Purpose::Verification, 5, 1 + i),
        )?;
        let y = randn(m, &mut rng);
        let free = ConstraintSet::Unconstrained;
        let p = GLassoProblem::new(&a, &y, 1.3, &free)?;
        let x = randn(n, &mut rng);
        let g = gradient(&p, &x)?;
        let h = 1e-5;
        let mut fd = DVector::zeros(n);
        for j in 0..n {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            fd[j] = (objective(&p, &up)? - objective(&p, &dn)?) / (2.0 * h);
        }
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    Ok(Check {
        name: "gradient vs central differences",
        passed: worst <= 1e-5,
        summary: format!("max relative error {worst:.2e} (limit 1e-5) over 5 instances"),
        details: Vec::new(),
    })
}

fn solver_check(seed: u64) -> Result<Check, CliError> {
    let mut rng = stream(seed, 6);
    let (m, n) = (300, 50);
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for i in 0..3 {
        let a = sample_measurements(
            EnsembleKind::gaussian(),
            m,
            n,
            &mut substream(seed, Purpose::Verification, 6, 1 + i),
        )?;
        let x0 = randn(n, &mut rng);
        let y = a.apply(&x0)? + randn(m, &mut rng) * 0.01;
        let free = ConstraintSet::Unconstrained;
        let res = glasso_solve(&GLassoProblem::new(&a, &y, 1.0, &free)?, &opts)?;
        let ls = a
            .matrix()
            .tr_mul(a.matrix())
            .cholesky()
            .ok_or_else(|| CliError::Verification("Gram matrix is not positive definite".into()))?
            .solve(&a.matrix().tr_mul(&y));
        worst = worst.max((&res.x_hat - &ls).norm() / ls.norm());
        monotone &= res.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let ball = ConstraintSet::L1Ball {
            radius: 0.5 * x0.lp_norm(1),
        };
        let res = glasso_solve(&GLassoProblem::new(&a, &y, 1.0, &ball)?, &opts)?;
        monotone &= res.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    }
    Ok(Check {
        name: "solver vs normal equations",
        passed: worst <= 1e-6 && monotone,
        summary: format!("max relative error {worst:.2e} (limit 1e-6), objective traces monotone: {monotone}"),
        details: Vec::new(),
    })
}

fn moments(seed: u64, sizes: VerifySizes) -> Result<Check, CliError> {
    let mut rng = stream(seed, 7);
    let mut passed = true;
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (sigma, t) in [(1.0, 2.0), (3.0, 2.0), (2.0, 5.0)] {
        let report = onebit_moment_check(sigma, t, t, sizes.moment_samples, &mut rng)?;
        passed &= report.passed();
        for row in &report.rows {
            if row.required {
                worst = worst.max(row.z_score.abs());
            }
            details.push(format!(
                "||x0|| = {sigma}, T = {t}: {:<16} mc = {:+.6} +- {:.6}  closed = {:+.6}  z = {:+.2}{}",
                row.name,
                row.monte_carlo.mean,
                row.monte_carlo.std_err,
                row.closed_form,
                row.z_score,
                if row.required { "" } else { "  (reported only)" }
            ));
        }
    }
    Ok(Check {
        name: "one-bit noise moments",
        passed,
        summary: format!(
            "max |z| for E[eta^2] = {worst:.3} (limit 5), N = {}",
            sizes.moment_samples
        ),
        details,
    })
}

pub fn run_checks(seed: u64, sizes: VerifySizes) -> Result<Vec<Check>, CliError> {
    Ok(vec![
        dither_unbiasedness(seed, sizes)?,
        one_bit_bias(seed, sizes)?,
        l1_projection(seed, sizes)?,
        nuclear_projection(seed, sizes)?,
        gradient_check(seed)?,
        solver_check(seed)?,
        moments(seed, sizes)?,
    ])
}

pub fn report(checks: &[Check]) -> String {
    let mut out = String::from("verification report\n\n");
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("[{tag}] {}: {}\n", c.name, c.summary));
        for d in &c.details {
            out.push_str(&format!("    {d}\n"));
        }
    }
    let ok = checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("\n{ok}/{} checks passed\n", checks.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_at_small_sizes() {
        let sizes = VerifySizes {
            dither_samples: 20_000,
            moment_samples: 20_000,
            projections: 50,
        };
        let checks = run_checks(3, sizes).unwrap();
        assert_eq!(checks.len(), 7);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.summary);
        }
        let text = report(&checks);
        assert!(text.contains("7/7 checks passed"));
        assert!(text.contains("E[xi] (literal)"));
    }

    #[test]
    fn certificate_rejects_a_wrong_projection() {
        // Radial scaling is feasible but not the ℓ1 projection.
        let v = DVector::from_vec(vec![3.0, 1.0, -0.5]);
        let r: f64 = 1.0;
        let p: DVector<f64> = &v * (r / v.lp_norm(1));
        let g = &v - &p;
        assert!(r * g.amax() - g.dot(&p) > 1e-3);
        let exact = project_l1_ball(&v, r).unwrap();
        let g = &v - &exact;
        assert!(r * g.amax() - g.dot(&exact) < 1e-12);
    }
}
