//! Loss values and exact gradients with respect to a free time-frequency
//! mask, a finite-difference oracle for them, and a small gradient-ascent
//! harness that fits a mask directly on one utterance.
//!
//! Every loss kind is oriented so larger is better; plain squared error
//! enters negated. The forward path is mask -> masked spectrogram ->
//! least-squares synthesis -> loss on the time-domain signal, with the
//! spectrum-MSE term of the joint objective acting on the mask directly.
//! Gradients are exact under one-sided subgradient conventions at clips and
//! floors; the whole path is double precision.

pub(crate) mod chain;

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::masks::{iam_label, MaskConfig, MaskGrid, MaskKind};
use crate::pesq::{pesq_backward, pesq_forward, BarkTable, PesqConfig};
use crate::sdr::SDR_CLAMP_DB;
use crate::spectral::{stft, ComplexSpectrogram, StftConfig};
use crate::trace::BranchTrace;

/// Objective maximized by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Sdr,
    SnrMse,
    SdrMse,
    SdrPesq,
    Pesq,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdr" => Ok(Self::Sdr),
            "snr-mse" | "snr_mse" | "snr" => Ok(Self::SnrMse),
            "sdr-mse" | "sdr_mse" => Ok(Self::SdrMse),
            "sdr-pesq" | "sdr_pesq" => Ok(Self::SdrPesq),
            "pesq" => Ok(Self::Pesq),
            other => Err(Error::UnknownLossKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sdr => "sdr",
            Self::SnrMse => "snr-mse",
            Self::SdrMse => "sdr-mse",
            Self::SdrPesq => "sdr-pesq",
            Self::Pesq => "pesq",
        }
    }

    fn needs_pesq(&self) -> bool {
        matches!(self, Self::Pesq | Self::SdrPesq)
    }

    fn needs_sdr(&self) -> bool {
        matches!(self, Self::Sdr | Self::SdrMse | Self::SdrPesq)
    }
}

/// Starting point of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskInit {
    Ones,
    /// Amplitude-ratio label against the clean reference, clipped to [0, 10].
    Iam,
    Value(f64),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub loss_kind: LossKind,
    pub steps: usize,
    pub step_size: f64,
    pub mask_init: MaskInit,
    /// Mask values are clamped into this range after every update.
    pub clamp: Option<(f64, f64)>,
    /// Weight of the perceptual or MSE term in the joint kinds.
    pub pesq_weight: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Sdr,
            steps: 100,
            step_size: 0.05,
            mask_init: MaskInit::Ones,
            clamp: Some((-2.0, 3.0)),
            pesq_weight: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::InvalidConfig("bad mask clamp range".into()));
            }
        }
        if !(self.pesq_weight >= 0.0) || !self.pesq_weight.is_finite() {
            return Err(Error::InvalidConfig("pesq_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Configuration shared by every loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub stft: &'a StftConfig,
    pub pesq: &'a PesqConfig,
    pub table: &'a BarkTable,
}

/// Loss value, optional mask gradient, and named scalar intermediates.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub gradient: Option<Array2<f64>>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// One row of a fit trajectory. `si_sdr` is clamped to +/-60 dB so rows
/// stay finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRecord {
    pub step: usize,
    pub loss: f64,
    pub si_sdr: f64,
    pub pesq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitOutcome {
    Completed,
    /// The loss went non-finite; the result holds the last finite state.
    Diverged {
        step: usize,
    },
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mask: MaskGrid,
    pub trajectory: Vec<FitRecord>,
    pub outcome: FitOutcome,
}

struct Forward {
    value: f64,
    trace: u64,
    chain: chain::ReconChain,
    sdr_grad_ctx: Option<SdrGradCtx>,
    pesq_fwd: Option<crate::pesq::PesqForward>,
    diagnostics: BTreeMap<String, f64>,
}

struct SdrGradCtx {
    alpha: f64,
    target_energy: f64,
    residual_energy: f64,
    clamped: bool,
}

fn validate_inputs(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    ctx: &FitContext<'_>,
) -> Result<()> {
    if mask.dim() != noisy.dim() {
        return Err(Error::DimensionMismatch {
            expected: noisy.dim(),
            got: mask.dim(),
        });
    }
    if clean.len() != noise.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: noise.len(),
        });
    }
    if clean.len() > ctx.stft.coverage(noisy.frames()) {
        return Err(Error::InvalidConfig(format!(
            "signal length {} exceeds coverage {} of the mask grid",
            clean.len(),
            ctx.stft.coverage(noisy.frames())
        )));
    }
    Ok(())
}

fn forward(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
    gl_iterations: usize,
) -> Result<Forward> {
    validate_inputs(mask, noisy, clean, noise, ctx)?;
    let mut trace = BranchTrace::new();
    let chain = chain::reconstruct(
        mask,
        noisy,
        ctx.stft,
        clean.len(),
        gl_iterations,
        &mut trace,
    )?;
    let estimate = &chain.signal;
    let mut diagnostics = BTreeMap::new();

    let mut value = 0.0;
    let mut sdr_grad_ctx = None;
    let mut pesq_fwd = None;

    if cfg.loss_kind.needs_sdr() {
        let clean_energy = clean.energy();
        if clean_energy <= 0.0 {
            return Err(Error::ZeroEnergy("reference"));
        }
        let alpha = clean
            .samples()
            .iter()
            .zip(estimate.samples())
            .map(|(x, e)| x * e)
            .sum::<f64>()
            / clean_energy;
        let target_energy = alpha * alpha * clean_energy;
        let residual_energy: f64 = clean
            .samples()
            .iter()
            .zip(estimate.samples())
            .map(|(x, e)| {
                let r = alpha * x - e;
                r * r
            })
            .sum();
        let raw_db = if target_energy == 0.0 {
            f64::NEG_INFINITY
        } else if residual_energy == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (target_energy / residual_energy).log10()
        };
        let clamped_db = raw_db.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
        let clamped = raw_db != clamped_db || !raw_db.is_finite();
        trace.push(clamped);
        value += clamped_db;
        diagnostics.insert("si_sdr".into(), clamped_db);
        sdr_grad_ctx = Some(SdrGradCtx {
            alpha,
            target_energy,
            residual_energy,
            clamped,
        });
    }

    match cfg.loss_kind {
        LossKind::SnrMse => {
            let mse: f64 = clean
                .samples()
                .iter()
                .zip(estimate.samples())
                .map(|(x, e)| {
                    let d = x - e;
                    d * d
                })
                .sum();
            value = -mse;
            diagnostics.insert("snr_mse".into(), mse);
        }
        LossKind::SdrMse => {
            let clean_spec = stft(clean, ctx.stft)?;
            let mse = crate::sdr::spectrum_mse(mask, &noisy.magnitude(), &clean_spec.magnitude())?;
            value -= cfg.pesq_weight * mse;
            diagnostics.insert("spectrum_mse".into(), mse);
        }
        _ => {}
    }

    if cfg.loss_kind.needs_pesq() {
        let fwd = pesq_forward(clean, estimate, ctx.stft, ctx.pesq, ctx.table)?;
        trace.mix(fwd.trace);
        let weight = if cfg.loss_kind == LossKind::Pesq {
            1.0
        } else {
            cfg.pesq_weight
        };
        value += weight * fwd.score;
        diagnostics.insert("pesq".into(), fwd.score);
        pesq_fwd = Some(fwd);
    }

    Ok(Forward {
        value,
        trace: trace.value(),
        chain,
        sdr_grad_ctx,
        pesq_fwd,
        diagnostics,
    })
}

fn backward(
    fwd: &Forward,
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
) -> Result<Array2<f64>> {
    let estimate = &fwd.chain.signal;
    let mut d_signal = vec![0.0; estimate.len()];

    if let Some(sdr) = &fwd.sdr_grad_ctx {
        if !sdr.clamped {
            // d/dz of 10 log10(|ax|^2 / |ax - z|^2) with a = <x,z>/|x|^2.
            let c = 10.0 / std::f64::consts::LN_10;
            for (g, (x, z)) in d_signal
                .iter_mut()
                .zip(clean.samples().iter().zip(estimate.samples()))
            {
                let e = sdr.alpha * x - z;
                *g += c * (2.0 * sdr.alpha * x / sdr.target_energy + 2.0 * e / sdr.residual_energy);
            }
        }
    }

    if cfg.loss_kind == LossKind::SnrMse {
        for (g, (x, z)) in d_signal
            .iter_mut()
            .zip(clean.samples().iter().zip(estimate.samples()))
        {
            *g += 2.0 * (x - z);
        }
    }

    if let Some(pesq) = &fwd.pesq_fwd {
        let weight = if cfg.loss_kind == LossKind::Pesq {
            1.0
        } else {
            cfg.pesq_weight
        };
        let d_pesq = pesq_backward(pesq, ctx.stft, ctx.pesq, ctx.table, weight);
        for (g, d) in d_signal.iter_mut().zip(d_pesq) {
            *g += d;
        }
    }

    let mut d_mask = chain::backward(&fwd.chain, &d_signal, mask, noisy, ctx.stft);

    if cfg.loss_kind == LossKind::SdrMse {
        // The MSE term acts on the mask directly, not through the synthesis.
        let clean_mag = stft(clean, ctx.stft)?.magnitude();
        let noisy_mag = noisy.magnitude();
        for m in 0..d_mask.dim().0 {
            for k in 0..d_mask.dim().1 {
                let y = noisy_mag[[m, k]];
                let err = mask.values()[[m, k]] * y - clean_mag[[m, k]];
                d_mask[[m, k]] -= cfg.pesq_weight * 2.0 * err * y;
            }
        }
    }

    Ok(d_mask)
}

/// Loss value and exact gradient with respect to the mask, through the
/// masked synthesis, for the configured loss kind.
pub fn loss_and_grad(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
) -> Result<LossReport> {
    loss_and_grad_gl(mask, noisy, clean, noise, cfg, ctx, 1)
}

/// [`loss_and_grad`] with the forward pass running `gl_iterations`
/// Griffin-Lim passes; the gradient goes through the unrolled iterations.
pub fn loss_and_grad_gl(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
    gl_iterations: usize,
) -> Result<LossReport> {
    if gl_iterations == 0 {
        return Err(Error::InvalidConfig("gl_iterations must be >= 1".into()));
    }
    cfg.validate()?;
    let fwd = forward(mask, noisy, clean, noise, cfg, ctx, gl_iterations)?;
    let gradient = backward(&fwd, mask, noisy, clean, cfg, ctx)?;
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(LossReport {
        value: fwd.value,
        gradient: Some(gradient),
        diagnostics: fwd.diagnostics,
    })
}

/// Central finite differences of an arbitrary mask objective.
pub(crate) fn fd_over_mask(
    mask: &MaskGrid,
    epsilon: f64,
    mut f: impl FnMut(&MaskGrid) -> Result<f64>,
) -> Result<Array2<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    let (frames, bins) = mask.dim();
    let mut grad = Array2::<f64>::zeros((frames, bins));
    for m in 0..frames {
        for k in 0..bins {
            let mut plus = mask.values().clone();
            plus[[m, k]] += epsilon;
            let mut minus = mask.values().clone();
            minus[[m, k]] -= epsilon;
            let fp = f(&MaskGrid::new(plus, MaskKind::Free)?)?;
            let fm = f(&MaskGrid::new(minus, MaskKind::Free)?)?;
            grad[[m, k]] = (fp - fm) / (2.0 * epsilon);
        }
    }
    Ok(grad)
}

/// Central-difference gradient of the configured loss, recomputing the full
/// forward pipeline per perturbed entry.
pub fn fd_gradient(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
    epsilon: f64,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    fd_over_mask(mask, epsilon, |m| {
        Ok(forward(m, noisy, clean, noise, cfg, ctx, 1)?.value)
    })
}

/// Finite-difference gradient plus a per-entry flag marking perturbations
/// that crossed a subgradient kink (branch decisions changed); those entries
/// are not valid finite-difference estimates.
pub fn fd_gradient_checked(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
    epsilon: f64,
) -> Result<(Array2<f64>, Array2<bool>)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    cfg.validate()?;
    let center = forward(mask, noisy, clean, noise, cfg, ctx, 1)?;
    let (frames, bins) = mask.dim();
    let mut grad = Array2::<f64>::zeros((frames, bins));
    let mut crossed = Array2::from_elem((frames, bins), false);
    for m in 0..frames {
        for k in 0..bins {
            let mut plus = mask.values().clone();
            plus[[m, k]] += epsilon;
            let mut minus = mask.values().clone();
            minus[[m, k]] -= epsilon;
            let fp = forward(
                &MaskGrid::new(plus, MaskKind::Free)?,
                noisy,
                clean,
                noise,
                cfg,
                ctx,
                1,
            )?;
            let fm = forward(
                &MaskGrid::new(minus, MaskKind::Free)?,
                noisy,
                clean,
                noise,
                cfg,
                ctx,
                1,
            )?;
            grad[[m, k]] = (fp.value - fm.value) / (2.0 * epsilon);
            crossed[[m, k]] = fp.trace != center.trace || fm.trace != center.trace;
        }
    }
    Ok((grad, crossed))
}

fn init_mask(
    init: MaskInit,
    clean: &Waveform,
    noisy_spec: &ComplexSpectrogram,
    ctx: &FitContext<'_>,
) -> Result<MaskGrid> {
    let values = match init {
        MaskInit::Ones => Array2::from_elem(noisy_spec.dim(), 1.0),
        MaskInit::Value(v) => {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(
                    "mask init value must be finite".into(),
                ));
            }
            Array2::from_elem(noisy_spec.dim(), v)
        }
        MaskInit::Iam => {
            let clean_spec = stft(clean, ctx.stft)?;
            let label = iam_label(&clean_spec, noisy_spec, &MaskConfig::default())?;
            label.clipped(0.0, 10.0)?.values().clone()
        }
    };
    MaskGrid::new(values, MaskKind::Free)
}

/// Reconstruction metrics recorded along a trajectory.
fn trajectory_metrics(
    estimate: &Waveform,
    clean: &Waveform,
    ctx: &FitContext<'_>,
) -> Result<(f64, f64)> {
    let sdr = crate::sdr::si_sdr(clean, estimate)?.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    let pesq = pesq_forward(clean, estimate, ctx.stft, ctx.pesq, ctx.table)?.score;
    Ok((sdr, pesq))
}

/// Fits a free mask to one utterance by plain gradient ascent on the
/// configured loss, halving the step within an iteration when it would
/// decrease the loss. Records loss, SI-SDR and the perceptual score at
/// every step, including step zero.
pub fn fit_mask(
    noisy_wave: &Waveform,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
) -> Result<FitResult> {
    fit_with_gl_iterations(noisy_wave, clean, noise, cfg, ctx, 1)
}

/// [`fit_mask`] with the forward synthesis running `gl_iterations`
/// Griffin-Lim passes. One iteration reproduces [`fit_mask`] exactly.
pub fn fit_with_gl_iterations(
    noisy_wave: &Waveform,
    clean: &Waveform,
    noise: &Waveform,
    cfg: &FitConfig,
    ctx: &FitContext<'_>,
    gl_iterations: usize,
) -> Result<FitResult> {
    cfg.validate()?;
    if gl_iterations == 0 {
        return Err(Error::InvalidConfig("gl_iterations must be >= 1".into()));
    }
    if noisy_wave.len() != clean.len() || noisy_wave.len() != noise.len() {
        return Err(Error::LengthMismatch {
            left: noisy_wave.len(),
            right: clean.len().max(noise.len()),
        });
    }

    // Work on the frame-aligned prefix so synthesis covers every sample.
    let aligned = ctx.stft.aligned_len(noisy_wave.len())?;
    let noisy_wave = noisy_wave.truncated(aligned)?;
    let clean = clean.truncated(aligned)?;
    let noise = noise.truncated(aligned)?;
    let noisy_spec = stft(&noisy_wave, ctx.stft)?;

    let mut mask = init_mask(cfg.mask_init, &clean, &noisy_spec, ctx)?;
    let mut report = loss_and_grad_gl(&mask, &noisy_spec, &clean, &noise, cfg, ctx, gl_iterations)?;
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    {
        let mut trace = BranchTrace::new();
        let chain = chain::reconstruct(
            &mask,
            &noisy_spec,
            ctx.stft,
            clean.len(),
            gl_iterations,
            &mut trace,
        )?;
        let (sdr, pesq) = trajectory_metrics(&chain.signal, &clean, ctx)?;
        trajectory.push(FitRecord {
            step: 0,
            loss: report.value,
            si_sdr: sdr,
            pesq,
        });
    }

    const MAX_HALVINGS: usize = 30;
    for step in 1..=cfg.steps {
        let grad = report
            .gradient
            .as_ref()
            .expect("loss_and_grad always returns a gradient");

        let mut accepted: Option<(MaskGrid, f64)> = None;
        let mut best_finite: Option<(MaskGrid, f64)> = None;
        let mut lr = cfg.step_size;
        for _ in 0..=MAX_HALVINGS {
            let mut values = mask.values() + &(grad * lr);
            if let Some((lo, hi)) = cfg.clamp {
                values.mapv_inplace(|v| v.clamp(lo, hi));
            }
            let candidate = MaskGrid::new(values, MaskKind::Free)?;
            let value = forward(
                &candidate,
                &noisy_spec,
                &clean,
                &noise,
                cfg,
                ctx,
                gl_iterations,
            )?
            .value;
            if value.is_finite() {
                if best_finite.as_ref().map_or(true, |(_, b)| value > *b) {
                    best_finite = Some((candidate.clone(), value));
                }
                if value >= report.value {
                    accepted = Some((candidate, value));
                    break;
                }
            }
            lr /= 2.0;
        }

        let next = accepted.or(best_finite);
        let Some((next_mask, _)) = next else {
            return Ok(FitResult {
                mask,
                trajectory,
                outcome: FitOutcome::Diverged { step },
            });
        };

        mask = next_mask;
        report = loss_and_grad_gl(&mask, &noisy_spec, &clean, &noise, cfg, ctx, gl_iterations)?;
        let mut trace = BranchTrace::new();
        let chain = chain::reconstruct(
            &mask,
            &noisy_spec,
            ctx.stft,
            clean.len(),
            gl_iterations,
            &mut trace,
        )?;
        let (sdr, pesq) = trajectory_metrics(&chain.signal, &clean, ctx)?;
        trajectory.push(FitRecord {
            step,
            loss: report.value,
            si_sdr: sdr,
            pesq,
        });
        if !report.value.is_finite() {
            return Ok(FitResult {
                mask,
                trajectory,
                outcome: FitOutcome::Diverged { step },
            });
        }
    }

    Ok(FitResult {
        mask,
        trajectory,
        outcome: FitOutcome::Completed,
    })
}

/// Reconstructs the denoised waveform for a fitted (or oracle) mask.
pub fn reconstruct_estimate(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    ctx: &FitContext<'_>,
    length: usize,
    gl_iterations: usize,
) -> Result<Waveform> {
    let mut trace = BranchTrace::new();
    Ok(chain::reconstruct(mask, noisy, ctx.stft, length, gl_iterations, &mut trace)?.signal)
}

#[cfg(test)]
mod tests;
