//! Scale-invariant SDR, the SDR decomposition, time-domain squared error,
//! the spectrum MSE term and the two joint objectives.
//!
//! All losses here are oriented so that larger is better, matching how the
//! metrics are reported; spectrum MSE therefore enters the joint objective
//! with a negative sign, and the fitting harness can ascend everything
//! uniformly. Per-utterance SDR values are clamped to +/-60 dB when batches
//! are averaged so perfect reconstructions keep means finite.

use ndarray::Array2;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::masks::{d2, MaskGrid};
use crate::pesq::{pesq_loss_batch, BarkTable, PesqConfig};
use crate::spectral::StftConfig;

/// Clamp applied to per-utterance SDR values inside batch means.
pub const SDR_CLAMP_DB: f64 = 60.0;

/// Projection of an estimate onto the clean and noise directions.
#[derive(Debug, Clone)]
pub struct SdrDecomposition {
    pub x_target: Waveform,
    pub e_noise: Waveform,
    pub e_artif: Waveform,
    /// Projection coefficient of the estimate onto the clean signal.
    pub alpha: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(clean: &Waveform, estimate: &Waveform) -> Result<()> {
    if clean.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: estimate.len(),
        });
    }
    if clean.sample_rate() != estimate.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate(),
            right: estimate.sample_rate(),
        });
    }
    Ok(())
}

/// Splits an estimate into a clean-parallel part, a noise-parallel part and
/// the residual artifact. The three parts sum back to the estimate exactly.
pub fn sdr_decompose(
    clean: &Waveform,
    noise: &Waveform,
    estimate: &Waveform,
) -> Result<SdrDecomposition> {
    check_pair(clean, estimate)?;
    check_pair(noise, estimate)?;
    let clean_energy = clean.energy();
    let noise_energy = noise.energy();
    if clean_energy <= 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    if noise_energy <= 0.0 {
        return Err(Error::ZeroEnergy("noise segment"));
    }

    let alpha = dot(clean.samples(), estimate.samples()) / clean_energy;
    let beta = dot(noise.samples(), estimate.samples()) / noise_energy;

    let x_target: Vec<f64> = clean.samples().iter().map(|x| alpha * x).collect();
    let e_noise: Vec<f64> = noise.samples().iter().map(|n| beta * n).collect();
    let e_artif: Vec<f64> = estimate
        .samples()
        .iter()
        .zip(&x_target)
        .zip(&e_noise)
        .map(|((e, t), n)| e - t - n)
        .collect();

    let rate = clean.sample_rate();
    Ok(SdrDecomposition {
        x_target: Waveform::new(x_target, rate)?,
        e_noise: Waveform::new(e_noise, rate)?,
        e_artif: Waveform::new(e_artif, rate)?,
        alpha,
    })
}

/// Scale-invariant SDR in dB: `10 log10(|a x|^2 / |a x - est|^2)` with the
/// projection coefficient `a = <x, est> / |x|^2`.
///
/// Estimates exactly proportional to the clean signal return `+inf`;
/// estimates orthogonal to it (zero projected target) return `-inf`.
pub fn si_sdr(clean: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(clean, estimate)?;
    let clean_energy = clean.energy();
    if clean_energy <= 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let alpha = dot(clean.samples(), estimate.samples()) / clean_energy;
    let target_energy = alpha * alpha * clean_energy;
    if target_energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let residual_energy: f64 = clean
        .samples()
        .iter()
        .zip(estimate.samples())
        .map(|(x, e)| {
            let r = alpha * x - e;
            r * r
        })
        .sum();
    if residual_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target_energy / residual_energy).log10())
}

/// Mean of clamped per-utterance SI-SDR over a batch. Larger is better.
pub fn sdr_loss(batch: &[(&Waveform, &Waveform)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut total = 0.0;
    for (clean, estimate) in batch {
        total += si_sdr(clean, estimate)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    }
    Ok(total / batch.len() as f64)
}

/// Plain time-domain squared error `sum (x - est)^2`. Smaller is better.
pub fn snr_mse_loss(clean: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(clean, estimate)?;
    Ok(clean
        .samples()
        .iter()
        .zip(estimate.samples())
        .map(|(x, e)| {
            let d = x - e;
            d * d
        })
        .sum())
}

/// Spectrum-domain MSE of a masked magnitude against the clean magnitude:
/// `sum (M |Y| - |X|)^2`. Identical to the magnitude distortion metric; it
/// lives here as the second term of the joint SDR-MSE objective.
pub fn spectrum_mse(
    mask: &MaskGrid,
    noisy_mag: &Array2<f64>,
    clean_mag: &Array2<f64>,
) -> Result<f64> {
    d2(mask, clean_mag, noisy_mag)
}

/// Weighting of the perceptual or MSE term inside a joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointLossConfig {
    pub pesq_weight: f64,
    /// Expected batch size; zero skips the check.
    pub batch_size: usize,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            pesq_weight: 1.0,
            batch_size: 0,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self, batch_len: usize) -> Result<()> {
        if !(self.pesq_weight >= 0.0) || !self.pesq_weight.is_finite() {
            return Err(Error::InvalidConfig("pesq_weight must be >= 0".into()));
        }
        if self.batch_size != 0 && self.batch_size != batch_len {
            return Err(Error::InvalidConfig(format!(
                "batch holds {batch_len} items, config expects {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Joint objective: batch SDR plus the weighted batch perceptual score.
pub fn joint_sdr_pesq(
    batch: &[(&Waveform, &Waveform)],
    cfg: &JointLossConfig,
    stft_cfg: &StftConfig,
    pesq_cfg: &PesqConfig,
    table: &BarkTable,
) -> Result<f64> {
    cfg.validate(batch.len())?;
    let sdr = sdr_loss(batch)?;
    if cfg.pesq_weight == 0.0 {
        return Ok(sdr);
    }
    let pesq = pesq_loss_batch(batch, stft_cfg, pesq_cfg, table)?;
    Ok(sdr + cfg.pesq_weight * pesq)
}

/// One utterance of the joint SDR-MSE objective: the time-domain pair plus
/// the masked-spectrum context for the MSE term.
pub struct SdrMseItem<'a> {
    pub clean: &'a Waveform,
    pub estimate: &'a Waveform,
    pub mask: &'a MaskGrid,
    pub noisy_mag: &'a Array2<f64>,
    pub clean_mag: &'a Array2<f64>,
}

/// Joint objective: batch SDR minus the weighted spectrum MSE (the MSE is
/// minimized, so it enters negatively in the maximize orientation). The MSE
/// term sums over the batch.
pub fn joint_sdr_mse(batch: &[SdrMseItem<'_>], cfg: &JointLossConfig) -> Result<f64> {
    cfg.validate(batch.len())?;
    let pairs: Vec<(&Waveform, &Waveform)> = batch
        .iter()
        .map(|item| (item.clean, item.estimate))
        .collect();
    let sdr = sdr_loss(&pairs)?;
    if cfg.pesq_weight == 0.0 {
        return Ok(sdr);
    }
    let mut mse = 0.0;
    for item in batch {
        mse += spectrum_mse(item.mask, item.noisy_mag, item.clean_mag)?;
    }
    Ok(sdr - cfg.pesq_weight * mse)
}
