use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qlasso_core::experiment::{curves_from_paired, delta_sweep, fit_rate, run_paired, RateModel};
use qlasso_core::geometry::{gw_bound_lowrank, gw_bound_sparse};
use qlasso_core::quantizer::{sample_dither, uniform_quantize, DitherKind};
use qlasso_core::rng::{substream, Purpose};
use qlasso_core::{ErrorCurve, Estimator, QuantizerSpec};
use serde_json::{json, Value};

use crate::config::{
    demo_deltas, resolve_experiment, resolve_out_dir, resolve_seed, width_grids, LoadedConfig, Preset, Resolved,
};
use crate::error::CliError;
use crate::manifest::{now_rfc3339, write_file, RunManifest};
use crate::output::{self, content_hash, fmt_f64, Provenance};
use crate::svg::{self, Guide, Plot, Series};
use crate::verify::{self, VerifySizes};

const PRECEDENCE: &str = "\
Settings are resolved as flag > config file > built-in default. The master seed \
falls back to the QLASSO_SEED environment variable when neither --seed nor the \
config key 'seed' is given.

Config keys (flat JSON): n, s, d, rank, norm, R, ensemble, quantizer, delta, \
m_grid, trials, seed, estimators, out_dir.

Exit codes: 0 success, 1 verification failure, 2 configuration error, 3 runtime failure.";

#[derive(Debug, Parser)]
#[command(
    name = "qlasso",
    version,
    about = "Generalized Lasso recovery from dithered quantized measurements"
)]
#[command(after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// JSON config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Maximum number of concurrent trials.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Master seed; overrides the config and QLASSO_SEED.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    /// Output directory; overrides the config key out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Error curves under dithered uniform quantization.
    RunUniform,
    /// Error curves under dithered one-bit quantization.
    RunOnebit,
    /// Paired comparison of the estimators with win rates.
    Compare,
    /// Error against the quantizer resolution at a fixed m.
    DeltaSweep,
    /// Internal consistency checks; exits 1 if any fails.
    Verify,
    /// Gaussian width bounds for sparse and low-rank models.
    Widths,
    /// Tables of the uniform quantizer and its dithered mean.
    QuantizeDemo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RunUniform => "run-uniform",
            Command::RunOnebit => "run-onebit",
            Command::Compare => "compare",
            Command::DeltaSweep => "delta-sweep",
            Command::Verify => "verify",
            Command::Widths => "widths",
            Command::QuantizeDemo => "quantize-demo",
        }
    }
}

/// What a finished command leaves behind.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    /// Lines for standard output.
    pub stdout: Vec<String>,
    /// Names of failed verification checks.
    pub failed_checks: Vec<String>,
}

struct Context {
    command: Command,
    loaded: LoadedConfig,
    out_dir: PathBuf,
    master_seed: u64,
    jobs: Option<usize>,
}

impl Context {
    fn manifest(&self, resolved: Value) -> RunManifest {
        let config_hash = match &self.loaded.text {
            Some(text) => content_hash(text.as_bytes()),
            None => content_hash(resolved.to_string().as_bytes()),
        };
        RunManifest {
            command: self.command.name().to_string(),
            config_path: self.loaded.path.clone(),
            resolved_config: resolved,
            out_dir: self.out_dir.clone(),
            master_seed: self.master_seed,
            config_hash,
            timestamp: now_rfc3339(),
            files: Vec::new(),
        }
    }

    fn path(&self, manifest: &mut RunManifest, name: &str) -> PathBuf {
        manifest.files.push(name.to_string());
        self.out_dir.join(name)
    }

    fn pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
        match self.jobs {
            None => Ok(f()),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|p| p.install(f))
                .map_err(|e| CliError::Io {
                    path: PathBuf::from("<thread pool>"),
                    source: std::io::Error::other(e),
                }),
        }
    }
}

pub fn run(cli: &Cli, env_seed: Option<&str>) -> Result<Outcome, CliError> {
    let loaded = LoadedConfig::load(cli.flags.config.as_deref())?;
    let (master_seed, source) = resolve_seed(cli.flags.seed, &loaded.file, env_seed)?;
    let out_dir = resolve_out_dir(cli.flags.out.as_deref(), &loaded.file);
    let ctx = Context {
        command: cli.command,
        loaded,
        out_dir,
        master_seed,
        jobs: cli.flags.jobs.map(|j| j as usize),
    };
    let preset = match cli.command {
        Command::RunUniform => Some(Preset::Uniform),
        Command::RunOnebit => Some(Preset::OneBit),
        Command::Compare => Some(Preset::Compare),
        Command::DeltaSweep => Some(Preset::DeltaSweep),
        _ => None,
    };
    // Resolve everything before touching the file system.
    let resolved = match preset {
        Some(p) => Some(resolve_experiment(p, &ctx.loaded.file, (master_seed, source))?),
        None => None,
    };
    let widths = match cli.command {
        Command::Widths => Some(width_grids(&ctx.loaded.file)?),
        _ => None,
    };
    let deltas = match cli.command {
        Command::QuantizeDemo => Some(demo_deltas(&ctx.loaded.file)?),
        _ => None,
    };
    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;

    let outcome = match (cli.command, resolved) {
        (Command::RunUniform | Command::RunOnebit, Some(r)) => run_curves_cmd(&ctx, &r)?,
        (Command::Compare, Some(r)) => compare_cmd(&ctx, &r)?,
        (Command::DeltaSweep, Some(r)) => sweep_cmd(&ctx, &r)?,
        (Command::Verify, _) => verify_cmd(&ctx)?,
        (Command::Widths, _) => {
            let (sparse, lowrank) = widths.expect("resolved above");
            widths_cmd(&ctx, &sparse, &lowrank)?
        }
        (Command::QuantizeDemo, _) => quantize_demo_cmd(&ctx, &deltas.expect("resolved above"))?,
        _ => unreachable!("experiment commands always resolve a config"),
    };
    outcome.manifest.write()?;
    Ok(outcome)
}

fn curve_plot(title: &str, prov: &Provenance, curves: &[&ErrorCurve]) -> String {
    svg::render(&Plot {
        title: title.to_string(),
        x_label: "m (number of measurements)".into(),
        y_label: "mean ||x_hat - x0||".into(),
        provenance: prov.line(),
        series: curves
            .iter()
            .map(|c| Series {
                label: c.estimator.label().to_string(),
                points: c.points.iter().map(|p| (p.m as f64, p.mean)).collect(),
            })
            .collect(),
        guide: Some(Guide {
            exponent: -0.5,
            label: "1/sqrt(m)".into(),
        }),
    })
}

fn run_curves_cmd(ctx: &Context, r: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &r.experiment;
    let prefix = match cfg.quantizer {
        QuantizerSpec::Uniform { .. } => "uniform",
        QuantizerSpec::OneBit => "onebit",
    };
    let paired = ctx.pool(|| run_paired(cfg))??;
    let curves = curves_from_paired(cfg, &paired);

    let mut manifest = ctx.manifest(serde_json::to_value(r).expect("config serializes"));
    let prov = manifest.provenance();
    let mut stdout = Vec::new();
    let mut fits = Vec::new();
    for c in &curves {
        let name = c.estimator.label();
        output::write_curves(
            &ctx.path(&mut manifest, &format!("{prefix}_{name}.csv")),
            &prov,
            std::slice::from_ref(c),
        )?;
        write_file(
            &ctx.path(&mut manifest, &format!("{prefix}_{name}.svg")),
            &curve_plot(&format!("{prefix} quantization: {name}"), &prov, &[c]),
        )?;
        for model in [RateModel::InvSqrtM, RateModel::SqrtLogMOverSqrtM] {
            match fit_rate(c, model) {
                Ok(f) => {
                    stdout.push(format!(
                        "{name}: {} slope {:.4} coefficient {:.4} residual rms {:.4}",
                        model.label(),
                        f.slope,
                        f.coefficient,
                        f.residual_rms
                    ));
                    fits.push((c.estimator, c.points.len(), f));
                }
                Err(e) => stdout.push(format!("{name}: no {} fit ({e})", model.label())),
            }
        }
    }
    output::write_fits(&ctx.path(&mut manifest, &format!("{prefix}_fit.csv")), &prov, &fits)?;
    let all: Vec<&ErrorCurve> = curves.iter().collect();
    write_file(
        &ctx.path(&mut manifest, &format!("{prefix}_all.svg")),
        &curve_plot(&format!("{prefix} quantization"), &prov, &all),
    )?;
    Ok(Outcome {
        manifest,
        stdout,
        failed_checks: Vec::new(),
    })
}

fn compare_cmd(ctx: &Context, r: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &r.experiment;
    let paired = ctx.pool(|| run_paired(cfg))??;
    let curves = curves_from_paired(cfg, &paired);
    let mut manifest = ctx.manifest(serde_json::to_value(r).expect("config serializes"));
    let prov = manifest.provenance();
    output::write_compare(&ctx.path(&mut manifest, "compare.csv"), &prov, &paired)?;
    output::write_paired(&ctx.path(&mut manifest, "compare_paired.csv"), &prov, &paired)?;
    let all: Vec<&ErrorCurve> = curves.iter().collect();
    write_file(
        &ctx.path(&mut manifest, "compare.svg"),
        &curve_plot("estimator comparison", &prov, &all),
    )?;
    let mut stdout = Vec::new();
    for p in &paired {
        for &e in cfg.estimators.iter().filter(|e| **e != Estimator::Glasso) {
            let rate = p.win_rate(Estimator::Glasso, e).unwrap_or(f64::NAN);
            stdout.push(format!(
                "m = {}: glasso beats {} in {:.1}% of {} trials",
                p.m,
                e,
                100.0 * rate,
                p.errors.len()
            ));
        }
    }
    Ok(Outcome {
        manifest,
        stdout,
        failed_checks: Vec::new(),
    })
}

fn sweep_cmd(ctx: &Context, r: &Resolved) -> Result<Outcome, CliError> {
    let sweep = ctx.pool(|| delta_sweep(&r.experiment, &r.deltas))??;
    let mut manifest = ctx.manifest(serde_json::to_value(r).expect("config serializes"));
    let prov = manifest.provenance();
    output::write_sweep(
        &ctx.path(&mut manifest, "delta_sweep.csv"),
        &prov,
        sweep.m,
        &sweep.curves,
    )?;
    let plot = svg::render(&Plot {
        title: format!("error against delta at m = {}", sweep.m),
        x_label: "delta".into(),
        y_label: "mean ||x_hat - x0||".into(),
        provenance: prov.line(),
        series: sweep
            .curves
            .iter()
            .map(|(e, pts)| Series {
                label: e.label().to_string(),
                points: pts.iter().map(|p| (p.delta, p.mean)).collect(),
            })
            .collect(),
        guide: Some(Guide {
            exponent: 1.0,
            label: "linear in delta".into(),
        }),
    });
    write_file(&ctx.path(&mut manifest, "delta_sweep.svg"), &plot)?;
    let stdout = sweep
        .curves
        .iter()
        .map(|(e, pts)| {
            let means: Vec<String> = pts.iter().map(|p| format!("{:.4}", p.mean)).collect();
            format!("{e}: {}", means.join(" "))
        })
        .collect();
    Ok(Outcome {
        manifest,
        stdout,
        failed_checks: Vec::new(),
    })
}

fn verify_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let sizes = VerifySizes::default();
    let checks = ctx.pool(|| verify::run_checks(ctx.master_seed, sizes))??;
    let mut manifest = ctx.manifest(json!({
        "seed": ctx.master_seed,
        "dither_samples": sizes.dither_samples,
        "moment_samples": sizes.moment_samples,
        "projections": sizes.projections,
    }));
    let prov = manifest.provenance();
    let report = verify::report(&checks);
    write_file(
        &ctx.path(&mut manifest, "verify_report.txt"),
        &format!("# {}\n{report}", prov.line()),
    )?;
    Ok(Outcome {
        manifest,
        stdout: report.lines().map(str::to_string).collect(),
        failed_checks: checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.to_string())
            .collect(),
    })
}

fn widths_cmd(ctx: &Context, sparse: &[(usize, usize)], lowrank: &[(usize, usize)]) -> Result<Outcome, CliError> {
    let mut manifest = ctx.manifest(json!({ "sparse": sparse, "lowrank": lowrank }));
    let prov = manifest.provenance();
    let mut stdout = Vec::new();
    if !sparse.is_empty() {
        let rows = sparse
            .iter()
            .map(|&(n, s)| Ok(format!("{n},{s},{:.3}", gw_bound_sparse(n, s)?)))
            .collect::<Result<Vec<_>, qlasso_core::Error>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        output::write_text_table(
            &ctx.path(&mut manifest, "widths_sparse.csv"),
            &prov,
            "n,s,gw_bound",
            &rows,
        )?;
        stdout.push("n,s,gw_bound".to_string());
        stdout.extend(rows);
    }
    if !lowrank.is_empty() {
        let rows = lowrank
            .iter()
            .map(|&(d, r)| Ok(format!("{d},{r},{:.3}", gw_bound_lowrank(d, r)?)))
            .collect::<Result<Vec<_>, qlasso_core::Error>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        output::write_text_table(
            &ctx.path(&mut manifest, "widths_lowrank.csv"),
            &prov,
            "d,r,gw_bound",
            &rows,
        )?;
        stdout.push("d,r,gw_bound".to_string());
        stdout.extend(rows);
    }
    Ok(Outcome {
        manifest,
        stdout,
        failed_checks: Vec::new(),
    })
}

const DEMO_DITHER_SAMPLES: usize = 20_000;

fn quantize_demo_cmd(ctx: &Context, deltas: &[f64]) -> Result<Outcome, CliError> {
    let mut manifest = ctx.manifest(json!({ "delta": deltas, "dither_samples": DEMO_DITHER_SAMPLES }));
    let prov = manifest.provenance();
    let mut rows = Vec::new();
    let mut stdout = vec![format!(
        "{:>8} {:>10} {:>10} {:>14}",
        "delta", "x", "Q(x)", "E[Q(x+tau)]"
    )];
    for (i, &delta) in deltas.iter().enumerate() {
        let mut rng = substream(ctx.master_seed, Purpose::Dither, i as u64, 0);
        let dither = DitherKind::UniformHalfOpen { delta };
        for k in -8i32..=8 {
            let x = delta * k as f64 / 4.0;
            let q = uniform_quantize(x, delta)?;
            let mut sum = 0.0;
            for _ in 0..DEMO_DITHER_SAMPLES {
                sum += uniform_quantize(x + sample_dither(&dither, &mut rng), delta)?;
            }
            let mean = sum / DEMO_DITHER_SAMPLES as f64;
            rows.push(format!(
                "{},{},{},{}",
                fmt_f64(delta),
                fmt_f64(x),
                fmt_f64(q),
                fmt_f64(mean)
            ));
            stdout.push(format!("{delta:>8.3} {x:>10.4} {q:>10.4} {mean:>14.4}"));
        }
    }
    output::write_text_table(
        &ctx.path(&mut manifest, "quantize_demo.csv"),
        &prov,
        "delta,x,q,dithered_mean",
        &rows,
    )?;
    Ok(Outcome {
        manifest,
        stdout,
        failed_checks: Vec::new(),
    })
}
