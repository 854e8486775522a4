//! Flat JSON run configuration and its resolution against flags and defaults.
//!
//! Precedence for every key is flag > config file > built-in default. The
//! master seed additionally falls back to `QLASSO_SEED` before the default.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use qlasso_core::experiment::{QuantizerSpec, DEFAULT_ONEBIT_GRID};
use qlasso_core::{Ensemble, Estimator, ExperimentConfig, Structure};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "QLASSO_SEED";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_DELTAS: [f64; 6] = [4.0, 2.0, 1.0, 0.5, 0.25, 0.125];

/// A scalar or a list, so `"s": 25` and `"s": [5, 10, 25]` both parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Keys accepted in the config file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub s: Option<OneOrMany<usize>>,
    /// Side length of a low-rank signal.
    pub d: Option<OneOrMany<usize>>,
    /// Rank of a low-rank signal; its presence selects the low-rank model.
    pub rank: Option<OneOrMany<usize>>,
    pub norm: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub ensemble: Option<String>,
    pub quantizer: Option<String>,
    pub delta: Option<OneOrMany<f64>>,
    pub m_grid: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub estimators: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))
    }
}

/// Config file contents as read from disk.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: Option<PathBuf>,
    pub text: Option<String>,
    pub file: FileConfig,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                path: None,
                text: None,
                file: FileConfig::default(),
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config parse error in {}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            text: Some(text),
            file,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Uniform,
    OneBit,
    Compare,
    DeltaSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Config,
    Env,
    Default,
}

pub fn resolve_seed(flag: Option<u64>, file: &FileConfig, env: Option<&str>) -> Result<(u64, SeedSource), CliError> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(s) = file.seed {
        return Ok((s, SeedSource::Config));
    }
    if let Some(raw) = env {
        let s = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?;
        return Ok((s, SeedSource::Env));
    }
    Ok((
        ExperimentConfig::uniform_sparse(1, 1, 1.0).master_seed,
        SeedSource::Default,
    ))
}

pub fn resolve_out_dir(flag: Option<&Path>, file: &FileConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn single<T: Clone + std::fmt::Display>(key: &str, v: &OneOrMany<T>) -> Result<T, CliError> {
    match v {
        OneOrMany::One(x) => Ok(x.clone()),
        OneOrMany::Many(xs) if xs.len() == 1 => Ok(xs[0].clone()),
        OneOrMany::Many(xs) => Err(CliError::Config(format!(
            "key '{key}' must be a single value for this command, got {} values",
            xs.len()
        ))),
    }
}

fn parse_quantizer(raw: &str) -> Result<bool, CliError> {
    match raw.to_ascii_lowercase().as_str() {
        "uniform" => Ok(false),
        "onebit" | "one_bit" | "one-bit" => Ok(true),
        other => Err(CliError::Config(format!(
            "unknown quantizer '{other}' (expected uniform or onebit)"
        ))),
    }
}

/// Experiment configuration plus the Δ grid for sweeps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    /// Δ grid of a sweep; empty for other commands.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
    pub seed_source: SeedSource,
}

pub fn resolve_experiment(preset: Preset, file: &FileConfig, seed: (u64, SeedSource)) -> Result<Resolved, CliError> {
    let mut cfg = match preset {
        Preset::OneBit => ExperimentConfig::onebit_sparse(100, 10, Ensemble::Gaussian),
        _ => ExperimentConfig::uniform_sparse(100, 25, 3.0),
    };
    match preset {
        Preset::Compare => cfg.estimators = Estimator::ALL.to_vec(),
        Preset::DeltaSweep => cfg.m_grid = vec![1000],
        _ => {}
    }

    let onebit = match (&file.quantizer, preset) {
        (None, p) => p == Preset::OneBit,
        (Some(q), Preset::Uniform) if parse_quantizer(q)? => {
            return Err(CliError::Config("run-uniform needs quantizer 'uniform'".into()));
        }
        (Some(q), Preset::OneBit) if !parse_quantizer(q)? => {
            return Err(CliError::Config("run-onebit needs quantizer 'onebit'".into()));
        }
        (Some(q), Preset::DeltaSweep) if parse_quantizer(q)? => {
            return Err(CliError::Config("delta-sweep needs quantizer 'uniform'".into()));
        }
        (Some(q), _) => parse_quantizer(q)?,
    };

    let mut deltas = DEFAULT_DELTAS.to_vec();
    if onebit {
        if file.delta.is_some() {
            return Err(CliError::Config(
                "key 'delta' does not apply to the one-bit quantizer".into(),
            ));
        }
        cfg.quantizer = QuantizerSpec::OneBit;
        if preset != Preset::OneBit && file.m_grid.is_none() {
            cfg.m_grid = DEFAULT_ONEBIT_GRID.to_vec();
        }
    } else if let Some(d) = &file.delta {
        if preset == Preset::DeltaSweep {
            deltas = d.to_vec();
        } else {
            cfg.quantizer = QuantizerSpec::Uniform {
                delta: single("delta", d)?,
            };
        }
    }

    if let Some(n) = file.n {
        cfg.n = n;
    }
    match (&file.rank, &file.d) {
        (Some(r), d) => {
            let r = single("rank", r)?;
            let d = match d {
                Some(d) => single("d", d)?,
                None => {
                    let side = (cfg.n as f64).sqrt().round() as usize;
                    if side * side != cfg.n {
                        return Err(CliError::Config(format!(
                            "low-rank runs need n to be a perfect square or an explicit 'd' (n = {})",
                            cfg.n
                        )));
                    }
                    side
                }
            };
            if file.n.is_none() {
                cfg.n = d * d;
            }
            if file.s.is_some() {
                return Err(CliError::Config("keys 's' and 'rank' are mutually exclusive".into()));
            }
            cfg.structure = Structure::LowRank { d, r };
        }
        (None, Some(_)) => return Err(CliError::Config("key 'd' requires 'rank'".into())),
        (None, None) => {
            if let Some(s) = &file.s {
                cfg.structure = Structure::Sparse { s: single("s", s)? };
            }
        }
    }
    if let Some(norm) = file.norm {
        cfg.norm_target = norm;
    }
    if let Some(r) = file.r {
        cfg.r_bound = r;
    }
    if let Some(e) = &file.ensemble {
        cfg.ensemble = Ensemble::from_str(e).map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(grid) = &file.m_grid {
        cfg.m_grid = grid.clone();
    }
    if let Some(t) = file.trials {
        cfg.trials = t;
    }
    if let Some(list) = &file.estimators {
        cfg.estimators = list
            .iter()
            .map(|e| Estimator::from_str(e).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_, _>>()?;
        let mut seen = cfg.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != cfg.estimators.len() {
            return Err(CliError::Config("estimators must not repeat".into()));
        }
    }
    cfg.master_seed = seed.0;

    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    match preset {
        Preset::Compare if !cfg.estimators.contains(&Estimator::Glasso) => {
            return Err(CliError::Config("compare needs glasso among the estimators".into()));
        }
        Preset::DeltaSweep => {
            if cfg.m_grid.len() != 1 {
                return Err(CliError::Config(format!(
                    "delta-sweep needs exactly one m in m_grid, got {}",
                    cfg.m_grid.len()
                )));
            }
            if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(CliError::Config(
                    "delta grid must be nonempty with positive entries".into(),
                ));
            }
        }
        _ => {}
    }
    if preset != Preset::DeltaSweep {
        deltas.clear();
    }
    Ok(Resolved {
        experiment: cfg,
        deltas,
        seed_source: seed.1,
    })
}

/// `(n, s)` or `(d, r)` pairs.
pub type WidthGrid = Vec<(usize, usize)>;

/// Sparse and low-rank pairs for the width table.
pub fn width_grids(file: &FileConfig) -> Result<(WidthGrid, WidthGrid), CliError> {
    let mut sparse = Vec::new();
    let mut lowrank = Vec::new();
    if let Some(s) = &file.s {
        let n = file
            .n
            .ok_or_else(|| CliError::Config("widths: key 's' requires 'n'".into()))?;
        sparse.extend(s.to_vec().into_iter().map(|s| (n, s)));
    }
    match (&file.d, &file.rank) {
        (Some(d), Some(r)) => {
            for d in d.to_vec() {
                lowrank.extend(r.to_vec().into_iter().map(|r| (d, r)));
            }
        }
        (None, None) => {}
        _ => return Err(CliError::Config("widths: keys 'd' and 'rank' go together".into())),
    }
    if sparse.is_empty() && lowrank.is_empty() {
        let n = file.n.unwrap_or(100);
        sparse = [1, 5, 10, 25, 50, 100]
            .iter()
            .filter(|&&s| s <= n)
            .map(|&s| (n, s))
            .collect();
        lowrank = [1, 2, 5, 10].iter().map(|&r| (10, r)).collect();
    }
    Ok((sparse, lowrank))
}

/// Δ values for the quantizer demo.
pub fn demo_deltas(file: &FileConfig) -> Result<Vec<f64>, CliError> {
    let deltas = file.delta.as_ref().map(|d| d.to_vec()).unwrap_or_else(|| vec![1.0]);
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(CliError::Config("delta values must be positive and finite".into()));
    }
    Ok(deltas)
}
