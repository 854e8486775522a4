//! Uniform mid-riser and one-bit quantizers with dithering.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::stats::{MeanEstimate, Running};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerConfig {
    /// Mid-riser quantizer with resolution `delta`.
    Uniform { delta: f64 },
    /// Sign quantizer; `t` is the range of the matching uniform dither.
    OneBit { t: f64 },
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            QuantizerConfig::Uniform { delta } => ("delta", delta),
            QuantizerConfig::OneBit { t } => ("T", t),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "{name} must be positive and finite, got {v}"
            )))
        }
    }

    pub fn quantize(&self, x: f64) -> Result<f64> {
        match *self {
            QuantizerConfig::Uniform { delta } => uniform_quantize(x, delta),
            QuantizerConfig::OneBit { .. } => one_bit_quantize(x),
        }
    }

    /// Natural dither for this quantizer.
    pub fn default_dither(&self) -> DitherKind {
        match *self {
            QuantizerConfig::Uniform { delta } => DitherKind::UniformHalfOpen { delta },
            QuantizerConfig::OneBit { t } => DitherKind::UniformSymmetric { t },
        }
    }

    fn quantize_unchecked(&self, x: f64) -> f64 {
        match *self {
            QuantizerConfig::Uniform { delta } => delta * ((x / delta).floor() + 0.5),
            QuantizerConfig::OneBit { .. } => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DitherKind {
    /// Uniform on `(−Δ/2, Δ/2]`.
    UniformHalfOpen {
        delta: f64,
    },
    /// Uniform on `[−T, T]`.
    UniformSymmetric {
        t: f64,
    },
    /// Sum of `k` independent `UniformHalfOpen { delta }` draws.
    KFoldUniform {
        k: usize,
        delta: f64,
    },
    None,
}

impl DitherKind {
    /// Length of the support interval.
    pub fn support_width(&self) -> f64 {
        match *self {
            DitherKind::UniformHalfOpen { delta } => delta,
            DitherKind::UniformSymmetric { t } => 2.0 * t,
            DitherKind::KFoldUniform { k, delta } => k as f64 * delta,
            DitherKind::None => 0.0,
        }
    }
}

/// `Δ(⌊x/Δ⌋ + 1/2)`, using the mathematical floor.
pub fn uniform_quantize(x: f64, delta: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot quantize non-finite input {x}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidSpec(format!("delta must be positive, got {delta}")));
    }
    Ok(delta * ((x / delta).floor() + 0.5))
}

/// `sign(x)` with `sign(0) = +1`.
pub fn one_bit_quantize(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot quantize non-finite input {x}")));
    }
    Ok(if x >= 0.0 { 1.0 } else { -1.0 })
}

pub fn sample_dither<R: Rng + ?Sized>(kind: &DitherKind, rng: &mut R) -> f64 {
    // `1/2 − u` with u in [0, 1) lands in (−1/2, 1/2].
    let half_open = |rng: &mut R, delta: f64| delta * (0.5 - rng.random::<f64>());
    match *kind {
        DitherKind::UniformHalfOpen { delta } => half_open(rng, delta),
        DitherKind::UniformSymmetric { t } => t * (2.0 * rng.random::<f64>() - 1.0),
        DitherKind::KFoldUniform { k, delta } => (0..k).map(|_| half_open(rng, delta)).sum(),
        DitherKind::None => 0.0,
    }
}

fn check_pairing(q: &QuantizerConfig, d: &DitherKind) -> Result<()> {
    q.validate()?;
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let ok = match (*q, *d) {
        (QuantizerConfig::Uniform { delta }, DitherKind::UniformHalfOpen { delta: dd }) => same(delta, dd),
        (QuantizerConfig::Uniform { delta }, DitherKind::KFoldUniform { k, delta: dd }) => k >= 1 && same(delta, dd),
        (QuantizerConfig::OneBit { t }, DitherKind::UniformSymmetric { t: dt }) => same(t, dt),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::IncompatibleDither(format!("{q:?} with {d:?}")))
    }
}

/// Quantized measurements `y_i = Q(a_iᵀx₀ + τ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedObservations {
    pub y: DVector<f64>,
    pub quantizer: QuantizerConfig,
    pub dither: DitherKind,
    pub dither_seed: Option<u64>,
}

impl QuantizedObservations {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn measure<R: Rng + ?Sized>(
    a: &MeasurementMatrix,
    x0: &DVector<f64>,
    q: &QuantizerConfig,
    d: &DitherKind,
    rng: &mut R,
) -> Result<QuantizedObservations> {
    check_pairing(q, d)?;
    let clean = a.apply(x0)?;
    if clean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite clean measurement".into()));
    }
    let y = clean.map(|v| q.quantize_unchecked(v + sample_dither(d, rng)));
    Ok(QuantizedObservations {
        y,
        quantizer: *q,
        dither: *d,
        dither_seed: None,
    })
}

/// `e_i = μ y_i − a_iᵀx₀`.
pub fn quantization_noise(
    y: &QuantizedObservations,
    a: &MeasurementMatrix,
    x0: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            found: y.len(),
        });
    }
    let clean = a.apply(x0)?;
    Ok(&y.y * mu - clean)
}

/// Monte Carlo estimate of `E_τ[μ Q(x + τ)] − x`.
pub fn dither_mean_residual<R: Rng + ?Sized>(
    x: f64,
    q: &QuantizerConfig,
    d: &DitherKind,
    mu: f64,
    samples: usize,
    rng: &mut R,
) -> Result<MeanEstimate> {
    check_pairing(q, d)?;
    if samples == 0 {
        return Err(Error::TooFewSamples {
            requested: 0,
            minimum: 1,
        });
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite input {x}")));
    }
    let acc: Running = (0..samples)
        .map(|_| mu * q.quantize_unchecked(x + sample_dither(d, rng)) - x)
        .collect();
    Ok(acc.estimate())
}

/// Closed-form bias of the one-bit quantizer under `Unif[−T, T]` dither,
/// valid for the scale `μ = T` only.
pub fn one_bit_mean_formula(x: f64, t: f64, mu: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidSpec(format!("T must be positive, got {t}")));
    }
    if (mu - t).abs() > 1e-12 * t {
        return Err(Error::UnsupportedParameters(format!(
            "closed form requires mu = T (mu = {mu}, T = {t})"
        )));
    }
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(-x * ind(x.abs() > t) + t * ind(x > t) - t * ind(x < -t))
}
