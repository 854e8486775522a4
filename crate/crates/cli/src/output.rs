//! CSV tables. Every file opens with a `#` provenance line carrying the master
//! seed and config hash; floats are written with 17 significant digits so
//! values survive a write/read cycle bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use qlasso_core::experiment::{PairedErrors, RateFit, SweepPoint};
use qlasso_core::{CurvePoint, ErrorCurve, Estimator};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!(
            "qlasso master_seed={} config_hash={}",
            self.master_seed, self.config_hash
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let rest = line.trim_start_matches('#').trim().strip_prefix("qlasso ")?;
        let mut seed = None;
        let mut hash = None;
        for field in rest.split_whitespace() {
            match field.split_once('=')? {
                ("master_seed", v) => seed = v.parse().ok(),
                ("config_hash", v) => hash = Some(v.to_string()),
                _ => {}
            }
        }
        Some(Self {
            master_seed: seed?,
            config_hash: hash?,
        })
    }
}

/// Git blob id computed with SHA-256: `sha256("blob <len>\0" ++ content)`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short tag of the data streams behind a row. Rows with equal tags were
/// computed on identical signals, matrices and dithers.
pub fn seed_hash(master_seed: u64, m: usize) -> String {
    let digest = Sha256::digest(format!("{master_seed}:{m}").as_bytes());
    hex(&digest[..8])
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, field: &str, raw: &str) -> Result<f64, CliError> {
    raw.trim().parse().map_err(|_| CliError::Format {
        path: path.to_path_buf(),
        message: format!("{field}: '{raw}' is not a number"),
    })
}

fn create(path: &Path, prov: &Provenance) -> Result<File, CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "# {}", prov.line()).map_err(|e| CliError::io(path, e))?;
    Ok(f)
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_rows<R: Serialize>(path: &Path, prov: &Provenance, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path, prov)?);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_provenance(path: &Path) -> Result<Provenance, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(f)
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    Provenance::parse_line(&first).ok_or_else(|| CliError::Format {
        path: path.to_path_buf(),
        message: "missing provenance header".into(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    estimator: Estimator,
    m: usize,
    mean_err: String,
    /// Standard deviation of the per-trial error.
    std_err: String,
    trials: usize,
    seed_hash: String,
}

pub fn write_curves(path: &Path, prov: &Provenance, curves: &[ErrorCurve]) -> Result<(), CliError> {
    let rows: Vec<CurveRow> = curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| CurveRow {
                estimator: c.estimator,
                m: p.m,
                mean_err: fmt_f64(p.mean),
                std_err: fmt_f64(p.std),
                trials: p.trials,
                seed_hash: seed_hash(c.master_seed, p.m),
            })
        })
        .collect();
    write_rows(path, prov, &rows)
}

/// Reads curves back, grouped by estimator in order of first appearance.
pub fn read_curves(path: &Path) -> Result<(Provenance, Vec<ErrorCurve>), CliError> {
    let prov = read_provenance(path)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut curves: Vec<ErrorCurve> = Vec::new();
    for row in r.deserialize::<CurveRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.seed_hash != seed_hash(prov.master_seed, row.m) {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!("seed_hash mismatch at m = {}", row.m),
            });
        }
        let point = CurvePoint {
            m: row.m,
            mean: parse_f64(path, "mean_err", &row.mean_err)?,
            std: parse_f64(path, "std_err", &row.std_err)?,
            trials: row.trials,
        };
        match curves.iter_mut().find(|c| c.estimator == row.estimator) {
            Some(c) => c.points.push(point),
            None => curves.push(ErrorCurve {
                estimator: row.estimator,
                points: vec![point],
                master_seed: prov.master_seed,
            }),
        }
    }
    Ok((prov, curves))
}

#[derive(Debug, Serialize)]
struct FitRow {
    estimator: Estimator,
    model: &'static str,
    coefficient: String,
    slope: String,
    residual_rms: String,
    points: usize,
}

pub fn write_fits(path: &Path, prov: &Provenance, fits: &[(Estimator, usize, RateFit)]) -> Result<(), CliError> {
    let rows: Vec<FitRow> = fits
        .iter()
        .map(|(e, points, f)| FitRow {
            estimator: *e,
            model: f.model.label(),
            coefficient: fmt_f64(f.coefficient),
            slope: fmt_f64(f.slope),
            residual_rms: fmt_f64(f.residual_rms),
            points: *points,
        })
        .collect();
    write_rows(path, prov, &rows)
}

#[derive(Debug, Serialize)]
struct CompareRow {
    m: usize,
    estimator: Estimator,
    mean_err: String,
    std_err: String,
    trials: usize,
    /// Fraction of trials where glasso is strictly better; empty on glasso rows.
    win_rate: String,
    seed_hash: String,
}

/// Per-m summary with the glasso win rate against each other estimator.
pub fn write_compare(path: &Path, prov: &Provenance, paired: &[PairedErrors]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in paired {
        for &e in &p.estimators {
            let s = p.summary(e).expect("estimator present");
            let win_rate = match e {
                Estimator::Glasso => String::new(),
                other => p.win_rate(Estimator::Glasso, other).map(fmt_f64).unwrap_or_default(),
            };
            rows.push(CompareRow {
                m: p.m,
                estimator: e,
                mean_err: fmt_f64(s.mean),
                std_err: fmt_f64(s.std),
                trials: s.trials,
                win_rate,
                seed_hash: seed_hash(prov.master_seed, p.m),
            });
        }
    }
    write_rows(path, prov, &rows)
}

/// One row per (m, trial) with the error of every estimator.
pub fn write_paired(path: &Path, prov: &Provenance, paired: &[PairedErrors]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path, prov)?);
    let Some(first) = paired.first() else {
        return w.flush().map_err(|e| CliError::io(path, e));
    };
    let mut header = vec!["m".to_string(), "trial".to_string()];
    header.extend(first.estimators.iter().map(|e| e.label().to_string()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in paired {
        for (t, errs) in p.errors.iter().enumerate() {
            let mut rec = vec![p.m.to_string(), t.to_string()];
            rec.extend(errs.iter().map(|&x| fmt_f64(x)));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    estimator: Estimator,
    delta: String,
    mean_err: String,
    std_err: String,
    trials: usize,
    seed_hash: String,
}

pub fn write_sweep(
    path: &Path,
    prov: &Provenance,
    m: usize,
    curves: &[(Estimator, Vec<SweepPoint>)],
) -> Result<(), CliError> {
    let rows: Vec<SweepRow> = curves
        .iter()
        .flat_map(|(e, pts)| {
            pts.iter().map(move |p| SweepRow {
                estimator: *e,
                delta: fmt_f64(p.delta),
                mean_err: fmt_f64(p.mean),
                std_err: fmt_f64(p.std),
                trials: p.trials,
                seed_hash: seed_hash(prov.master_seed, m),
            })
        })
        .collect();
    write_rows(path, prov, &rows)
}

/// Plain rows under a header, written as given.
pub fn write_text_table(path: &Path, prov: &Provenance, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut f = create(path, prov)?;
    let mut body = format!("{header}\n");
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_line_round_trips() {
        let p = Provenance {
            master_seed: 42,
            config_hash: "abc123".into(),
        };
        assert_eq!(Provenance::parse_line(&format!("# {}\n", p.line())), Some(p));
        assert_eq!(Provenance::parse_line("estimator,m"), None);
    }

    #[test]
    fn content_hash_matches_git_blob_layout() {
        // sha256 of "blob 0\0", i.e. the hash git uses for an empty blob in
        // SHA-256 repositories.
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn float_format_is_lossless() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE, 2.0f64.sqrt()] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn seed_hash_depends_on_seed_and_m() {
        assert_eq!(seed_hash(1, 200).len(), 16);
        assert_ne!(seed_hash(1, 200), seed_hash(2, 200));
        assert_ne!(seed_hash(1, 200), seed_hash(1, 400));
    }
}
