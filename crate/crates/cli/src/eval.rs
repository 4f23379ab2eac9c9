//! Manifest-driven batch evaluation with CSV and JSON reports.
//!
//! Manifest: comma-separated with a header line, one utterance per row,
//! paths relative to the manifest file. Columns:
//!
//! ```text
//! id,clean,noisy,noise,snr_db,method,seed
//! ```
//!
//! Either `noisy` is given directly (the noise signal is then the sample
//! difference), or `noise` plus `snr_db` synthesize it. `method` is one of
//! `none`, `ibm`, `irm`, `iam`, `psm`; `none` scores the noisy input as the
//! estimate. `seed` controls the noise crop and defaults to 0.
//!
//! Malformed rows are reported with their line number and skipped; the run
//! continues and exits nonzero if any row failed. Output order matches the
//! manifest regardless of worker count.

use std::path::{Path, PathBuf};

use specfit_core::{
    apply_mask, iam_label, ibm_label, irm_label, mix_at_snr, pesq_loss, psm_label, read_wav,
    si_sdr, stft, Error, FitContext, MaskConfig, MaskKind, MixSpec, Result, Waveform, SDR_CLAMP_DB,
};

use crate::config::RunConfig;

#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub line: usize,
    pub id: String,
    pub clean: PathBuf,
    pub noisy: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub snr_db: Option<f64>,
    pub method: String,
    pub seed: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReportRow {
    pub id: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub pesq_in: f64,
    pub pesq_out: f64,
    pub loss_kind: String,
    pub config_digest: String,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<std::result::Result<ManifestRow, Error>>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();

    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line,
            None => return Ok(rows),
        }
    };
    let expected = "id,clean,noisy,noise,snr_db,method,seed";
    if header.trim() != expected {
        return Err(Error::Manifest {
            line: 1,
            message: format!("header must be {expected:?}, got {:?}", header.trim()),
        });
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        rows.push(parse_row(line_no, trimmed, &base));
    }
    Ok(rows)
}

fn parse_row(line: usize, text: &str, base: &Path) -> std::result::Result<ManifestRow, Error> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(Error::Manifest {
            line,
            message: format!("expected 7 fields, got {}", fields.len()),
        });
    }
    let id = fields[0].to_string();
    if id.is_empty() {
        return Err(Error::Manifest {
            line,
            message: "empty id".into(),
        });
    }
    if fields[1].is_empty() {
        return Err(Error::Manifest {
            line,
            message: "clean path is required".into(),
        });
    }
    let opt_path = |s: &str| -> Option<PathBuf> {
        if s.is_empty() {
            None
        } else {
            Some(base.join(s))
        }
    };
    let snr_db = if fields[4].is_empty() {
        None
    } else {
        Some(fields[4].parse::<f64>().map_err(|e| Error::Manifest {
            line,
            message: format!("bad snr_db: {e}"),
        })?)
    };
    let seed = if fields[6].is_empty() {
        0
    } else {
        fields[6].parse::<u64>().map_err(|e| Error::Manifest {
            line,
            message: format!("bad seed: {e}"),
        })?
    };
    let method = fields[5].to_ascii_lowercase();
    if method != "none" {
        MaskKind::parse(&method).map_err(|_| Error::Manifest {
            line,
            message: format!("unknown method {method:?}"),
        })?;
    }
    let row = ManifestRow {
        line,
        id,
        clean: base.join(fields[1]),
        noisy: opt_path(fields[2]),
        noise: opt_path(fields[3]),
        snr_db,
        method,
        seed,
    };
    if row.noisy.is_none() && (row.noise.is_none() || row.snr_db.is_none()) {
        return Err(Error::Manifest {
            line,
            message: "need either a noisy path or noise plus snr_db".into(),
        });
    }
    Ok(row)
}

/// Scores one manifest row with the shipped defaults for the clean file's
/// sample rate, or the given override config.
pub fn evaluate_row(row: &ManifestRow, config_path: Option<&Path>) -> Result<ReportRow> {
    let clean = read_wav(&row.clean)?;
    let run = RunConfig::resolve(clean.sample_rate(), config_path)?;

    let (noisy, noise) = match (&row.noisy, &row.noise, row.snr_db) {
        (Some(noisy_path), _, _) => {
            let noisy = read_wav(noisy_path)?;
            if noisy.len() != clean.len() {
                return Err(Error::LengthMismatch {
                    left: clean.len(),
                    right: noisy.len(),
                });
            }
            let noise = Waveform::new(
                noisy
                    .samples()
                    .iter()
                    .zip(clean.samples())
                    .map(|(y, x)| y - x)
                    .collect(),
                clean.sample_rate(),
            )?;
            (noisy, noise)
        }
        (None, Some(noise_path), Some(snr)) => {
            let noise = read_wav(noise_path)?;
            mix_at_snr(&clean, &noise, MixSpec::new(snr, row.seed)?)?
        }
        _ => unreachable!("validated at parse time"),
    };

    let aligned = run.stft.aligned_len(clean.len())?;
    let clean = clean.truncated(aligned)?;
    let noisy = noisy.truncated(aligned)?;
    let noise = noise.truncated(aligned)?;

    let si_sdr_in = si_sdr(&clean, &noisy)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let pesq_in = pesq_loss(&clean, &noisy, &run.stft, &run.pesq, &run.table)?.score;

    let estimate = if row.method == "none" {
        noisy.clone()
    } else {
        let kind = MaskKind::parse(&row.method)?;
        let clean_spec = stft(&clean, &run.stft)?;
        let noisy_spec = stft(&noisy, &run.stft)?;
        let mask_cfg = MaskConfig::default();
        let mask = match kind {
            MaskKind::Ibm => ibm_label(&clean_spec, &stft(&noise, &run.stft)?, &mask_cfg)?,
            MaskKind::Irm => irm_label(&clean_spec, &stft(&noise, &run.stft)?)?,
            MaskKind::Iam => iam_label(&clean_spec, &noisy_spec, &mask_cfg)?,
            MaskKind::Psm => psm_label(&clean_spec, &noisy_spec, &mask_cfg)?,
            MaskKind::Free => return Err(Error::UnknownMaskKind("free".into())),
        };
        let masked = apply_mask(&mask, &noisy_spec)?;
        specfit_core::istft_gl(&masked, &run.stft, aligned)?
    };

    let si_sdr_out = si_sdr(&clean, &estimate)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let pesq_out = pesq_loss(&clean, &estimate, &run.stft, &run.pesq, &run.table)?.score;

    Ok(ReportRow {
        id: row.id.clone(),
        si_sdr_in,
        si_sdr_out,
        pesq_in,
        pesq_out,
        loss_kind: row.method.clone(),
        config_digest: run.digest(),
    })
}

/// Six-decimal rounding so CSV and JSON carry identical precision.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out =
        String::from("id,si_sdr_in,si_sdr_out,pesq_in,pesq_out,loss_kind,config_digest\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.id, r.si_sdr_in, r.si_sdr_out, r.pesq_in, r.pesq_out, r.loss_kind, r.config_digest
        ));
    }
    out
}

pub fn report_json(rows: &[ReportRow]) -> String {
    let rounded: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow {
            si_sdr_in: round6(r.si_sdr_in),
            si_sdr_out: round6(r.si_sdr_out),
            pesq_in: round6(r.pesq_in),
            pesq_out: round6(r.pesq_out),
            ..r.clone()
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rounded).expect("report serializes");
    text.push('\n');
    text
}

/// Context bundle borrowed from a [`RunConfig`].
pub fn fit_context(run: &RunConfig) -> FitContext<'_> {
    FitContext {
        stft: &run.stft,
        pesq: &run.pesq,
        table: &run.table,
    }
}
