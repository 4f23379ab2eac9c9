//! Effective run configuration: defaults by sample rate, optional TOML
//! override file, and a stable digest for report rows.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use specfit_core::{BarkTable, Error, PesqConfig, Result, StftConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub pesq: PesqConfig,
    pub table: BarkTable,
}

impl RunConfig {
    /// Shipped defaults for a sample rate (8 or 16 kHz).
    pub fn for_rate(sample_rate: u32) -> Result<Self> {
        Ok(Self {
            stft: StftConfig::default_for_rate(sample_rate)?,
            pesq: PesqConfig::default(),
            table: BarkTable::for_rate(sample_rate)?.clone(),
        })
    }

    /// Defaults overridden by a TOML file, when one was given.
    pub fn resolve(sample_rate: u32, config_path: Option<&Path>) -> Result<Self> {
        let mut run = Self::for_rate(sample_rate)?;
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)?;
            let file: OverrideFile = toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))?;
            file.apply(&mut run, path.parent().unwrap_or(Path::new(".")))?;
        }
        run.table
            .check_compatible(sample_rate, run.stft.fft_size())?;
        Ok(run)
    }

    /// Hex digest of every constant that affects scoring; stable across runs.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!(
            "stft:{}:{}:{:?}:{:?};pesq:{:?};",
            self.stft.fft_size(),
            self.stft.hop(),
            self.stft.window(),
            self.stft.synthesis_window(),
            self.pesq,
        ));
        hasher.update(self.table.to_toml_string().unwrap_or_default());
        let hex = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        hex[..16].to_string()
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OverrideFile {
    stft: Option<StftOverride>,
    pesq: Option<PesqOverride>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StftOverride {
    fft_size: Option<usize>,
    hop: Option<usize>,
    /// "hann" or "rectangular"
    window: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PesqOverride {
    target_power: Option<f64>,
    iir_gain: Option<f64>,
    c1: Option<f64>,
    c2: Option<f64>,
    smoothing: Option<(f64, f64)>,
    dead_zone_factor: Option<f64>,
    asym_exponent: Option<f64>,
    asym_offset: Option<f64>,
    asym_clip_high: Option<f64>,
    asym_clip_low: Option<f64>,
    window_len: Option<usize>,
    window_step: Option<usize>,
    score_base: Option<f64>,
    sym_weight: Option<f64>,
    asym_weight: Option<f64>,
    eq_ratio_clip: Option<(f64, f64)>,
    gain_clip: Option<(f64, f64)>,
    level_band_hz: Option<(f64, f64)>,
    /// Bark table file, relative to the config file.
    table: Option<PathBuf>,
}

impl OverrideFile {
    fn apply(self, run: &mut RunConfig, base_dir: &Path) -> Result<()> {
        if let Some(stft) = self.stft {
            let fft_size = stft.fft_size.unwrap_or_else(|| run.stft.fft_size());
            let hop = stft.hop.unwrap_or_else(|| run.stft.hop());
            let window = stft.window.as_deref().unwrap_or("hann");
            run.stft = match window {
                "hann" => StftConfig::hann(fft_size, hop)?,
                "rectangular" => StftConfig::rectangular(fft_size, hop)?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown window {other:?}; expected hann or rectangular"
                    )))
                }
            };
        }
        if let Some(pesq) = self.pesq {
            macro_rules! set {
                ($($field:ident),*) => {
                    $(if let Some(v) = pesq.$field { run.pesq.$field = v; })*
                };
            }
            set!(
                target_power,
                iir_gain,
                c1,
                c2,
                smoothing,
                dead_zone_factor,
                asym_exponent,
                asym_offset,
                asym_clip_high,
                asym_clip_low,
                window_len,
                window_step,
                score_base,
                sym_weight,
                asym_weight,
                eq_ratio_clip,
                gain_clip,
                level_band_hz
            );
            run.pesq.validate()?;
            if let Some(table_path) = pesq.table {
                let full = base_dir.join(table_path);
                let text = std::fs::read_to_string(&full)?;
                run.table = BarkTable::from_toml_str(&text)?;
            }
        }
        Ok(())
    }
}
