//! Command line surface: mixing, scoring, oracle-mask denoising, mask
//! fitting and manifest-driven batch reports.
//!
//! Exit codes: 0 success, 1 partial batch failure, 2 missing input or other
//! I/O failure, 3 degenerate (zero-energy or silent) signal, 4 length or
//! sample-rate mismatch, 5 bad argument or malformed input, 6 numeric
//! divergence during fitting.

mod config;
mod eval;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use specfit_core::{
    achieved_snr_db, fit_with_gl_iterations, grid, iam_label, ibm_label, irm_label, mix_at_snr,
    pesq_loss, psm_label, read_wav, reconstruct_estimate, si_sdr, stft, write_wav, Error,
    FitConfig, FitOutcome, FitResult, LossKind, MaskConfig, MaskInit, MaskKind, MixSpec, Result,
    Waveform, SDR_CLAMP_DB,
};

use config::RunConfig;
use eval::{evaluate_row, fit_context, parse_manifest, report_csv, report_json, round6};

#[derive(Parser)]
#[command(
    name = "specfit",
    about = "Spectral mask fitting and speech denoising objectives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix a clean signal with noise at a target SNR.
    Mix {
        clean: PathBuf,
        noise: PathBuf,
        /// Target SNR in dB; clean is kept fixed and the noise scaled.
        #[arg(long)]
        snr: f64,
        /// Output path of the noisy mixture.
        #[arg(long)]
        out: PathBuf,
        /// Output path of the scaled noise (default: `<out>.noise.wav`).
        #[arg(long)]
        noise_out: Option<PathBuf>,
        /// Seed for the noise crop offset.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score an estimate against its clean reference.
    Score {
        clean: PathBuf,
        estimate: PathBuf,
        /// Emit machine-readable JSON instead of key=value lines.
        #[arg(long)]
        json: bool,
        /// TOML file overriding STFT/PESQ constants.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Denoise with an oracle mask computed from clean and noise.
    Oracle {
        clean: PathBuf,
        noise: PathBuf,
        /// Mask kind: ibm, irm, iam or psm.
        #[arg(long)]
        mask: String,
        /// Griffin-Lim iterations for the reconstruction.
        #[arg(long, default_value_t = 1)]
        gl_iters: usize,
        /// Output path of the denoised waveform.
        #[arg(long)]
        out: PathBuf,
        /// Optional binary grid dump of the mask.
        #[arg(long)]
        dump_mask: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a free mask by gradient ascent on a chosen loss.
    Fit {
        clean: PathBuf,
        /// Scaled noise making up the mixture (e.g. from `mix --noise-out`).
        noise: PathBuf,
        /// Loss kind: sdr, snr-mse, sdr-mse, sdr-pesq or pesq.
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        /// Griffin-Lim iterations inside the forward pass.
        #[arg(long, default_value_t = 1)]
        gl_iters: usize,
        /// Trajectory CSV (step,loss,si_sdr,pesq), one row per step.
        #[arg(long)]
        out_csv: PathBuf,
        /// Optional denoised waveform for the final mask.
        #[arg(long)]
        out_wav: Option<PathBuf>,
        /// Mask initialization: ones, iam, or a numeric fill value.
        #[arg(long, default_value = "iam")]
        init: String,
        /// Weight of the perceptual or MSE term in joint losses.
        #[arg(long, default_value_t = 1.0)]
        pesq_weight: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a manifest of utterances and write CSV/JSON reports.
    Eval {
        manifest: PathBuf,
        /// Report base path; writes `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses one per core. Output order is unaffected.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap help/version output is a success, argument errors are not
            if err.use_stderr() {
                eprintln!("{err}");
                std::process::exit(5);
            }
            print!("{err}");
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::ZeroEnergy(_) | Error::SilentInput => 3,
        Error::LengthMismatch { .. }
        | Error::SampleRateMismatch { .. }
        | Error::WaveformTooShort { .. }
        | Error::DimensionMismatch { .. } => 4,
        Error::Divergence { .. } => 6,
        _ => 5,
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Mix {
            clean,
            noise,
            snr,
            out,
            noise_out,
            seed,
        } => cmd_mix(&clean, &noise, snr, &out, noise_out.as_deref(), seed),
        Command::Score {
            clean,
            estimate,
            json,
            config,
        } => cmd_score(&clean, &estimate, json, config.as_deref()),
        Command::Oracle {
            clean,
            noise,
            mask,
            gl_iters,
            out,
            dump_mask,
            json,
            config,
        } => cmd_oracle(
            &clean,
            &noise,
            &mask,
            gl_iters,
            &out,
            dump_mask.as_deref(),
            json,
            config.as_deref(),
        ),
        Command::Fit {
            clean,
            noise,
            loss,
            steps,
            lr,
            gl_iters,
            out_csv,
            out_wav,
            init,
            pesq_weight,
            config,
        } => cmd_fit(
            &clean,
            &noise,
            &loss,
            steps,
            lr,
            gl_iters,
            &out_csv,
            out_wav.as_deref(),
            &init,
            pesq_weight,
            config.as_deref(),
        ),
        Command::Eval {
            manifest,
            out,
            jobs,
            config,
        } => cmd_eval(&manifest, &out, jobs, config.as_deref()),
    }
}

fn cmd_mix(
    clean_path: &Path,
    noise_path: &Path,
    snr: f64,
    out: &Path,
    noise_out: Option<&Path>,
    seed: u64,
) -> Result<i32> {
    let clean = read_wav(clean_path)?;
    let noise = read_wav(noise_path)?;
    let (noisy, scaled) = mix_at_snr(&clean, &noise, MixSpec::new(snr, seed)?)?;
    write_wav(&noisy, out, true)?;
    let noise_out = noise_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("noise.wav"));
    write_wav(&scaled, &noise_out, true)?;
    println!("achieved_snr_db={:.6}", achieved_snr_db(&clean, &scaled)?);
    Ok(0)
}

/// Clean/estimate pair trimmed to the synthesizable prefix, with the
/// resolved run configuration.
fn load_pair(
    clean_path: &Path,
    other_path: &Path,
    config: Option<&Path>,
) -> Result<(Waveform, Waveform, RunConfig)> {
    let clean = read_wav(clean_path)?;
    let other = read_wav(other_path)?;
    if clean.len() != other.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: other.len(),
        });
    }
    if clean.sample_rate() != other.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate(),
            right: other.sample_rate(),
        });
    }
    let run = RunConfig::resolve(clean.sample_rate(), config)?;
    let aligned = run.stft.aligned_len(clean.len())?;
    Ok((clean.truncated(aligned)?, other.truncated(aligned)?, run))
}

fn cmd_score(
    clean_path: &Path,
    estimate_path: &Path,
    json: bool,
    config: Option<&Path>,
) -> Result<i32> {
    let (clean, estimate, run) = load_pair(clean_path, estimate_path, config)?;
    let sdr = si_sdr(&clean, &estimate)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let pesq = pesq_loss(&clean, &estimate, &run.stft, &run.pesq, &run.table)?.score;
    if json {
        println!(
            "{}",
            serde_json::json!({ "si_sdr": round6(sdr), "pesq": round6(pesq) })
        );
    } else {
        println!("si_sdr={sdr:.6}");
        println!("pesq={pesq:.6}");
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle(
    clean_path: &Path,
    noise_path: &Path,
    mask_kind: &str,
    gl_iters: usize,
    out: &Path,
    dump_mask: Option<&Path>,
    json: bool,
    config: Option<&Path>,
) -> Result<i32> {
    let kind = MaskKind::parse(mask_kind)?;
    if kind == MaskKind::Free {
        return Err(Error::UnknownMaskKind(mask_kind.to_string()));
    }
    let (clean, noise, run) = load_pair(clean_path, noise_path, config)?;
    let noisy = Waveform::new(
        clean
            .samples()
            .iter()
            .zip(noise.samples())
            .map(|(c, n)| c + n)
            .collect(),
        clean.sample_rate(),
    )?;

    let clean_spec = stft(&clean, &run.stft)?;
    let noisy_spec = stft(&noisy, &run.stft)?;
    let mask_cfg = MaskConfig::default();
    let mask = match kind {
        MaskKind::Ibm => ibm_label(&clean_spec, &stft(&noise, &run.stft)?, &mask_cfg)?,
        MaskKind::Irm => irm_label(&clean_spec, &stft(&noise, &run.stft)?)?,
        MaskKind::Iam => iam_label(&clean_spec, &noisy_spec, &mask_cfg)?,
        MaskKind::Psm => psm_label(&clean_spec, &noisy_spec, &mask_cfg)?,
        MaskKind::Free => unreachable!(),
    };
    if let Some(path) = dump_mask {
        grid::write_real_grid(mask.values(), path)?;
    }

    let ctx = fit_context(&run);
    let estimate = reconstruct_estimate(&mask, &noisy_spec, &ctx, clean.len(), gl_iters)?;
    write_wav(&estimate, out, true)?;

    let si_in = si_sdr(&clean, &noisy)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let si_out = si_sdr(&clean, &estimate)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let pesq_in = pesq_loss(&clean, &noisy, &run.stft, &run.pesq, &run.table)?.score;
    let pesq_out = pesq_loss(&clean, &estimate, &run.stft, &run.pesq, &run.table)?.score;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "mask": kind.name(),
                "gl_iters": gl_iters,
                "si_sdr_in": round6(si_in),
                "si_sdr_out": round6(si_out),
                "pesq_in": round6(pesq_in),
                "pesq_out": round6(pesq_out),
            })
        );
    } else {
        println!("si_sdr_in={si_in:.6}");
        println!("si_sdr_out={si_out:.6}");
        println!("pesq_in={pesq_in:.6}");
        println!("pesq_out={pesq_out:.6}");
    }
    Ok(0)
}

fn trajectory_csv(result: &FitResult) -> String {
    let mut out = String::from("step,loss,si_sdr,pesq\n");
    for r in &result.trajectory {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.step, r.loss, r.si_sdr, r.pesq
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    clean_path: &Path,
    noise_path: &Path,
    loss: &str,
    steps: usize,
    lr: f64,
    gl_iters: usize,
    out_csv: &Path,
    out_wav: Option<&Path>,
    init: &str,
    pesq_weight: f64,
    config: Option<&Path>,
) -> Result<i32> {
    let loss_kind = LossKind::parse(loss)?;
    let mask_init = match init.to_ascii_lowercase().as_str() {
        "ones" => MaskInit::Ones,
        "iam" => MaskInit::Iam,
        other => match other.parse::<f64>() {
            Ok(v) => MaskInit::Value(v),
            Err(_) => {
                return Err(Error::InvalidConfig(format!(
                    "mask init must be ones, iam or a number, got {other:?}"
                )))
            }
        },
    };
    let (clean, noise, run) = load_pair(clean_path, noise_path, config)?;
    let noisy = Waveform::new(
        clean
            .samples()
            .iter()
            .zip(noise.samples())
            .map(|(c, n)| c + n)
            .collect(),
        clean.sample_rate(),
    )?;

    let cfg = FitConfig {
        loss_kind,
        steps,
        step_size: lr,
        mask_init,
        clamp: Some((-2.0, 3.0)),
        pesq_weight,
    };
    let ctx = fit_context(&run);
    let result = fit_with_gl_iterations(&noisy, &clean, &noise, &cfg, &ctx, gl_iters)?;

    std::fs::write(out_csv, trajectory_csv(&result))?;
    if let Some(path) = out_wav {
        let noisy_spec = stft(&noisy, &run.stft)?;
        let estimate =
            reconstruct_estimate(&result.mask, &noisy_spec, &ctx, clean.len(), gl_iters)?;
        write_wav(&estimate, path, true)?;
    }

    let last = result.trajectory.last().expect("trajectory never empty");
    println!(
        "loss_kind={} steps={} final_loss={:.6} final_si_sdr={:.6} final_pesq={:.6}",
        loss_kind.name(),
        result.trajectory.len() - 1,
        last.loss,
        last.si_sdr,
        last.pesq
    );
    match result.outcome {
        FitOutcome::Completed => Ok(0),
        FitOutcome::Diverged { step } => {
            eprintln!("error: non-finite loss at step {step}; partial trajectory kept");
            Ok(6)
        }
    }
}

fn cmd_eval(manifest: &Path, out: &Path, jobs: usize, config: Option<&Path>) -> Result<i32> {
    let rows = parse_manifest(manifest)?;
    let config = config.map(Path::to_path_buf);

    let evaluate = |row: &std::result::Result<eval::ManifestRow, Error>| match row {
        Ok(row) => evaluate_row(row, config.as_deref()).map_err(|e| (row.line, e)),
        Err(e) => Err((line_of(e), clone_manifest_error(e))),
    };

    let results: Vec<std::result::Result<eval::ReportRow, (usize, Error)>> = if jobs == 1 {
        rows.iter().map(evaluate).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            rows.par_iter().map(evaluate).collect()
        })
    };

    let mut report = Vec::new();
    let mut failures = 0usize;
    for result in results {
        match result {
            Ok(row) => report.push(row),
            Err((line, err)) => {
                failures += 1;
                eprintln!("manifest line {line}: {err}");
            }
        }
    }

    let base = out.with_extension("");
    std::fs::write(base.with_extension("csv"), report_csv(&report))?;
    std::fs::write(base.with_extension("json"), report_json(&report))?;
    println!(
        "rows={} failed={} report={}",
        report.len(),
        failures,
        base.with_extension("csv").display()
    );
    Ok(if failures > 0 { 1 } else { 0 })
}

fn line_of(err: &Error) -> usize {
    match err {
        Error::Manifest { line, .. } => *line,
        _ => 0,
    }
}

fn clone_manifest_error(err: &Error) -> Error {
    match err {
        Error::Manifest { line, message } => Error::Manifest {
            line: *line,
            message: message.clone(),
        },
        other => Error::InvalidConfig(other.to_string()),
    }
}
