//! Monte Carlo harness: paired trials, error curves, Δ sweeps, rate fits and
//! the Gaussian one-bit moment check.
//!
//! Every trial draws its signal, matrix and dither from substreams keyed by
//! `(master_seed, m, trial_id)`. The estimator never enters the key, so all
//! estimators in a run see identical data, and results do not depend on the
//! order in which trials are scheduled.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{gen_signal, sample_measurements, Ensemble, SignalSpec, Structure};
use crate::error::{Error, Result};
use crate::geometry::{nuclear_norm, ConstraintSet};
use crate::quantizer::{measure, QuantizedObservations, QuantizerConfig};
use crate::rng::{substream, Purpose};
use crate::solver::{dm_estimate, glasso_solve, pbp_estimate, GLassoProblem, SolverOptions};
use crate::stats::{MeanEstimate, Running};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Glasso,
    Pbp,
    Dm,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Glasso, Estimator::Pbp, Estimator::Dm];

    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Glasso => "glasso",
            Estimator::Pbp => "pbp",
            Estimator::Dm => "dm",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "glasso" => Ok(Estimator::Glasso),
            "pbp" => Ok(Estimator::Pbp),
            "dm" => Ok(Estimator::Dm),
            other => Err(Error::InvalidSpec(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Which measurement channel an experiment uses. The one-bit dither range is
/// derived per `m` as `T = R √(ln m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerSpec {
    Uniform { delta: f64 },
    OneBit,
}

pub const DEFAULT_UNIFORM_GRID: [usize; 6] = [200, 400, 700, 1000, 1400, 2000];
pub const DEFAULT_ONEBIT_GRID: [usize; 5] = [500, 1000, 2000, 4000, 8000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub structure: Structure,
    pub norm_target: f64,
    /// Upper bound `R` on the signal norm.
    pub r_bound: f64,
    pub ensemble: Ensemble,
    pub quantizer: QuantizerSpec,
    pub m_grid: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    /// Sparse recovery from dithered uniform measurements with Rademacher rows.
    pub fn uniform_sparse(n: usize, s: usize, delta: f64) -> Self {
        Self {
            n,
            structure: Structure::Sparse { s },
            norm_target: 8.0,
            r_bound: 10.0,
            ensemble: Ensemble::Rademacher,
            quantizer: QuantizerSpec::Uniform { delta },
            m_grid: DEFAULT_UNIFORM_GRID.to_vec(),
            trials: 200,
            master_seed: 0x5eed,
            estimators: vec![Estimator::Glasso, Estimator::Pbp],
            solver: SolverOptions::default(),
        }
    }

    /// Sparse recovery from dithered one-bit measurements.
    pub fn onebit_sparse(n: usize, s: usize, ensemble: Ensemble) -> Self {
        Self {
            ensemble,
            quantizer: QuantizerSpec::OneBit,
            m_grid: DEFAULT_ONEBIT_GRID.to_vec(),
            estimators: vec![Estimator::Glasso, Estimator::Dm],
            ..Self::uniform_sparse(n, s, 1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.signal_spec(0).validate()?;
        if !(self.r_bound >= self.norm_target && self.r_bound.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "R = {} must be at least the signal norm {}",
                self.r_bound, self.norm_target
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidSpec("trials must be at least 1".into()));
        }
        if self.m_grid.is_empty() || self.m_grid.contains(&0) {
            return Err(Error::InvalidSpec(
                "m_grid must be nonempty with positive entries".into(),
            ));
        }
        if self.m_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("m_grid must be strictly increasing".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("at least one estimator is required".into()));
        }
        match self.quantizer {
            QuantizerSpec::Uniform { delta } => QuantizerConfig::Uniform { delta }.validate()?,
            QuantizerSpec::OneBit => {
                if self.m_grid[0] < 2 {
                    return Err(Error::InvalidSpec("one-bit runs need m >= 2 so that ln m > 0".into()));
                }
            }
        }
        self.solver.validate()
    }

    fn signal_spec(&self, seed: u64) -> SignalSpec {
        SignalSpec {
            n: self.n,
            structure: self.structure,
            norm_target: self.norm_target,
            seed,
        }
    }

    /// Quantizer and estimator scale `μ` used at `m` measurements.
    pub fn channel(&self, m: usize) -> (QuantizerConfig, f64) {
        match self.quantizer {
            QuantizerSpec::Uniform { delta } => (QuantizerConfig::Uniform { delta }, 1.0),
            QuantizerSpec::OneBit => {
                let t = onebit_range(self.r_bound, m);
                (QuantizerConfig::OneBit { t }, t)
            }
        }
    }
}

/// `T = R √(ln m)`.
pub fn onebit_range(r_bound: f64, m: usize) -> f64 {
    r_bound * (m as f64).ln().sqrt()
}

/// One realization of signal, matrix and quantized measurements.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub x0: DVector<f64>,
    pub a: crate::ensemble::MeasurementMatrix,
    pub obs: QuantizedObservations,
    pub mu: f64,
    pub k: ConstraintSet,
}

impl TrialInstance {
    pub fn generate(cfg: &ExperimentConfig, m: usize, trial_id: u64) -> Result<Self> {
        let seed = cfg.master_seed;
        let x0 = gen_signal(
            &cfg.signal_spec(seed),
            &mut substream(seed, Purpose::Signal, m as u64, trial_id),
        )?;
        let a = sample_measurements(
            cfg.ensemble.into(),
            m,
            cfg.n,
            &mut substream(seed, Purpose::Matrix, m as u64, trial_id),
        )?
        .with_seed(seed);
        let (q, mu) = cfg.channel(m);
        let mut obs = measure(
            &a,
            &x0,
            &q,
            &q.default_dither(),
            &mut substream(seed, Purpose::Dither, m as u64, trial_id),
        )?;
        obs.dither_seed = Some(seed);
        let k = match cfg.structure {
            Structure::Sparse { .. } => ConstraintSet::L1Ball { radius: x0.lp_norm(1) },
            Structure::LowRank { d, .. } => ConstraintSet::NuclearBall {
                radius: nuclear_norm(&x0, d),
                d,
            },
        };
        Ok(Self { x0, a, obs, mu, k })
    }

    pub fn estimate(&self, estimator: Estimator, opts: &SolverOptions) -> Result<DVector<f64>> {
        match estimator {
            Estimator::Glasso => {
                let p = GLassoProblem::from_observations(&self.a, &self.obs, self.mu, &self.k)?;
                Ok(glasso_solve(&p, opts)?.x_hat)
            }
            Estimator::Pbp => pbp_estimate(&self.a, &self.obs.y, &self.k, self.mu),
            // λ = T for one-bit data, which is the configured μ.
            Estimator::Dm => dm_estimate(&self.a, &self.obs.y, &self.k, self.mu),
        }
    }

    pub fn error(&self, estimator: Estimator, opts: &SolverOptions) -> Result<f64> {
        Ok((self.estimate(estimator, opts)? - &self.x0).norm())
    }
}

fn trial_errors_unchecked(
    cfg: &ExperimentConfig,
    m: usize,
    trial_id: u64,
    estimators: &[Estimator],
) -> Result<Vec<f64>> {
    let wrap = |e: Error| Error::Trial {
        m,
        trial_id,
        seed: cfg.master_seed,
        source: Box::new(e),
    };
    let inst = TrialInstance::generate(cfg, m, trial_id).map_err(wrap)?;
    estimators
        .iter()
        .map(|e| inst.error(*e, &cfg.solver).map_err(wrap))
        .collect()
}

/// `‖x̂ − x₀‖₂` for one estimator on one trial.
pub fn run_trial(cfg: &ExperimentConfig, m: usize, trial_id: u64, estimator: Estimator) -> Result<f64> {
    cfg.validate()?;
    if !cfg.m_grid.contains(&m) {
        return Err(Error::InvalidSpec(format!("m = {m} is not in the configured grid")));
    }
    Ok(trial_errors_unchecked(cfg, m, trial_id, &[estimator])?[0])
}

/// Errors of every estimator on every trial at one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedErrors {
    pub m: usize,
    pub estimators: Vec<Estimator>,
    /// `errors[trial][estimator index]`.
    pub errors: Vec<Vec<f64>>,
}

impl PairedErrors {
    fn column(&self, estimator: Estimator) -> Option<impl Iterator<Item = f64> + '_> {
        let idx = self.estimators.iter().position(|e| *e == estimator)?;
        Some(self.errors.iter().map(move |row| row[idx]))
    }

    pub fn summary(&self, estimator: Estimator) -> Option<CurvePoint> {
        let acc: Running = self.column(estimator)?.collect();
        Some(CurvePoint {
            m: self.m,
            mean: acc.mean(),
            std: acc.std_dev(),
            trials: acc.count(),
        })
    }

    /// Fraction of trials where `a` has strictly smaller error than `b`.
    pub fn win_rate(&self, a: Estimator, b: Estimator) -> Option<f64> {
        let ea: Vec<f64> = self.column(a)?.collect();
        let eb: Vec<f64> = self.column(b)?.collect();
        let wins = ea.iter().zip(&eb).filter(|(x, y)| x < y).count();
        Some(wins as f64 / ea.len().max(1) as f64)
    }
}

/// Runs every (m, trial) pair of the grid, in parallel, for all configured
/// estimators. Output is ordered by `m` then trial id.
pub fn run_paired(cfg: &ExperimentConfig) -> Result<Vec<PairedErrors>> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = cfg
        .m_grid
        .iter()
        .flat_map(|&m| (0..cfg.trials as u64).map(move |t| (m, t)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(m, t)| trial_errors_unchecked(cfg, m, t, &cfg.estimators))
        .collect::<Result<_>>()?;
    Ok(cfg
        .m_grid
        .iter()
        .zip(rows.chunks(cfg.trials))
        .map(|(&m, chunk)| PairedErrors {
            m,
            estimators: cfg.estimators.clone(),
            errors: chunk.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: usize,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub estimator: Estimator,
    pub points: Vec<CurvePoint>,
    pub master_seed: u64,
}

pub fn curves_from_paired(cfg: &ExperimentConfig, paired: &[PairedErrors]) -> Vec<ErrorCurve> {
    cfg.estimators
        .iter()
        .map(|&estimator| ErrorCurve {
            estimator,
            points: paired.iter().filter_map(|p| p.summary(estimator)).collect(),
            master_seed: cfg.master_seed,
        })
        .collect()
}

/// Mean and spread of the error over `cfg.trials` trials at each `m`.
pub fn run_curve(cfg: &ExperimentConfig, estimator: Estimator) -> Result<ErrorCurve> {
    let single = ExperimentConfig {
        estimators: vec![estimator],
        ..cfg.clone()
    };
    let paired = run_paired(&single)?;
    Ok(curves_from_paired(&single, &paired).remove(0))
}

/// All configured estimators on shared data.
pub fn run_curves(cfg: &ExperimentConfig) -> Result<Vec<ErrorCurve>> {
    let paired = run_paired(cfg)?;
    Ok(curves_from_paired(cfg, &paired))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweep {
    pub m: usize,
    pub curves: Vec<(Estimator, Vec<SweepPoint>)>,
}

impl DeltaSweep {
    pub fn curve(&self, estimator: Estimator) -> Option<&[SweepPoint]> {
        self.curves
            .iter()
            .find(|(e, _)| *e == estimator)
            .map(|(_, pts)| pts.as_slice())
    }
}

/// Error versus quantizer resolution at the single `m` in `cfg.m_grid`.
/// Every Δ reuses the same signal, matrix and dither draws.
pub fn delta_sweep(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<DeltaSweep> {
    if cfg.m_grid.len() != 1 {
        return Err(Error::InvalidSpec(format!(
            "delta sweep needs exactly one m in m_grid, got {}",
            cfg.m_grid.len()
        )));
    }
    if deltas.is_empty() {
        return Err(Error::InvalidSpec("delta grid is empty".into()));
    }
    let m = cfg.m_grid[0];
    let mut curves: Vec<(Estimator, Vec<SweepPoint>)> = cfg.estimators.iter().map(|e| (*e, Vec::new())).collect();
    for &delta in deltas {
        let at = ExperimentConfig {
            quantizer: QuantizerSpec::Uniform { delta },
            ..cfg.clone()
        };
        let paired = run_paired(&at)?.remove(0);
        for (estimator, points) in curves.iter_mut() {
            let s = paired.summary(*estimator).expect("estimator is configured");
            points.push(SweepPoint {
                delta,
                mean: s.mean,
                std: s.std,
                trials: s.trials,
            });
        }
    }
    Ok(DeltaSweep { m, curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `c / √m`
    InvSqrtM,
    /// `c √(ln m / m)`
    SqrtLogMOverSqrtM,
}

impl RateModel {
    pub fn label(&self) -> &'static str {
        match self {
            RateModel::InvSqrtM => "inv_sqrt_m",
            RateModel::SqrtLogMOverSqrtM => "sqrtlog_m_over_sqrt_m",
        }
    }

    fn ln_shape(&self, m: f64) -> f64 {
        match self {
            RateModel::InvSqrtM => -0.5 * m.ln(),
            RateModel::SqrtLogMOverSqrtM => 0.5 * (m.ln().ln() - m.ln()),
        }
    }
}

/// Fit of `err ≈ c · g(m)` in log space, plus the free log-log slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub coefficient: f64,
    pub slope: f64,
    /// RMS of `ln err − ln(c g(m))` over the curve.
    pub residual_rms: f64,
}

pub fn fit_rate(curve: &ErrorCurve, model: RateModel) -> Result<RateFit> {
    fit_rate_points(
        &curve.points.iter().map(|p| (p.m as f64, p.mean)).collect::<Vec<_>>(),
        model,
    )
}

pub fn fit_rate_points(points: &[(f64, f64)], model: RateModel) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some((m, e)) = points.iter().find(|(_, e)| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Fit(format!("nonpositive mean error {e} at m = {m}")));
    }
    if model == RateModel::SqrtLogMOverSqrtM && points.iter().any(|(m, _)| *m <= 1.0) {
        return Err(Error::Fit("sqrt(ln m / m) needs m > 1".into()));
    }
    let xs: Vec<f64> = points.iter().map(|(m, _)| m.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all m values coincide".into()));
    }
    let slope = sxy / sxx;

    let offsets: Vec<f64> = points.iter().map(|(m, e)| e.ln() - model.ln_shape(*m)).collect();
    let ln_c = offsets.iter().sum::<f64>() / k;
    let residual_rms = (offsets.iter().map(|o| (o - ln_c).powi(2)).sum::<f64>() / k).sqrt();
    Ok(RateFit {
        model,
        coefficient: ln_c.exp(),
        slope,
        residual_rms,
    })
}

/// Standard normal upper tail `Q(x) = P(Z > x)`.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Closed forms for the scalar Gaussian one-bit model with
/// `σ = ‖x₀‖`, `ζ ~ N(0,1)`, `τ ~ Unif[−T, T]`, `s = sign(σζ + τ)`,
/// `ξ = (μs − σζ)ζ`, `η = μs − σζ`.
pub mod moments {
    use super::normal_tail;

    fn ratio(sigma: f64, t: f64) -> f64 {
        if sigma == 0.0 {
            f64::INFINITY
        } else {
            t / sigma
        }
    }

    /// `E ξ` exactly as printed in the source derivation (no `σ` on the tail term).
    pub fn xi_mean_literal(sigma: f64, t: f64, mu: f64) -> f64 {
        sigma * (mu / t - 1.0) - 2.0 * (mu / t) * normal_tail(ratio(sigma, t))
    }

    /// `E ξ = μ E[ζ s] − σ` with `E[ζ s] = (σ/T)(1 − 2Q(T/σ))`.
    pub fn xi_mean(sigma: f64, t: f64, mu: f64) -> f64 {
        sigma * (mu / t - 1.0) - 2.0 * sigma * (mu / t) * normal_tail(ratio(sigma, t))
    }

    pub fn xi_second_moment(sigma: f64, t: f64, mu: f64) -> f64 {
        let s2 = sigma * sigma;
        let q = normal_tail(ratio(sigma, t));
        let gauss = if sigma == 0.0 {
            0.0
        } else {
            (-(t * t) / (2.0 * s2)).exp()
        };
        3.0 * s2 + mu * mu - 6.0 * s2 * mu / t
            + 12.0 * s2 * (mu / t) * q
            + 2.0 * mu * (2.0 / std::f64::consts::PI).sqrt() * sigma * gauss
    }

    pub fn eta_second_moment(sigma: f64, t: f64, mu: f64) -> f64 {
        let s2 = sigma * sigma;
        mu * mu + s2 - 2.0 * (mu / t) * s2 * (1.0 - 2.0 * normal_tail(ratio(sigma, t)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub name: String,
    pub monte_carlo: MeanEstimate,
    pub closed_form: f64,
    /// `(MC − closed form) / SE`; zero when both agree exactly.
    pub z_score: f64,
    pub agrees: bool,
    /// Whether disagreement counts as a failure.
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub norm_x0: f64,
    pub t: f64,
    pub mu: f64,
    pub samples: usize,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().filter(|r| r.required).all(|r| r.agrees)
    }

    pub fn row(&self, name: &str) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub const MOMENT_MIN_SAMPLES: usize = 10_000;
pub const MOMENT_SIGMAS: f64 = 5.0;

/// Monte Carlo moments of the scalar one-bit model against their closed forms.
pub fn onebit_moment_check<R: Rng + ?Sized>(
    norm_x0: f64,
    t: f64,
    mu: f64,
    samples: usize,
    rng: &mut R,
) -> Result<MomentReport> {
    if samples < MOMENT_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            requested: samples,
            minimum: MOMENT_MIN_SAMPLES,
        });
    }
    if !(t > 0.0 && t.is_finite()) || !(norm_x0 >= 0.0 && norm_x0.is_finite()) || !mu.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "need T > 0, ||x0|| >= 0 and finite mu (T = {t}, ||x0|| = {norm_x0}, mu = {mu})"
        )));
    }
    let mut xi = Running::new();
    let mut xi2 = Running::new();
    let mut eta2 = Running::new();
    for _ in 0..samples {
        let zeta: f64 = rng.sample(StandardNormal);
        let tau = t * (2.0 * rng.random::<f64>() - 1.0);
        let s = if norm_x0 * zeta + tau >= 0.0 { 1.0 } else { -1.0 };
        let eta = mu * s - norm_x0 * zeta;
        let x = eta * zeta;
        xi.push(x);
        xi2.push(x * x);
        eta2.push(eta * eta);
    }
    let row = |name: &str, acc: &Running, closed: f64, required: bool| {
        let est = acc.estimate();
        let diff = est.mean - closed;
        MomentRow {
            name: name.to_string(),
            monte_carlo: est,
            closed_form: closed,
            z_score: if diff == 0.0 { 0.0 } else { diff / est.std_err },
            agrees: est.agrees_with(closed, MOMENT_SIGMAS),
            required,
        }
    };
    Ok(MomentReport {
        norm_x0,
        t,
        mu,
        samples,
        rows: vec![
            row("E[xi] (literal)", &xi, moments::xi_mean_literal(norm_x0, t, mu), false),
            row("E[xi]", &xi, moments::xi_mean(norm_x0, t, mu), false),
            row("E[xi^2]", &xi2, moments::xi_second_moment(norm_x0, t, mu), false),
            row("E[eta^2]", &eta2, moments::eta_second_moment(norm_x0, t, mu), true),
        ],
    })
}
