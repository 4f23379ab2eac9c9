//! Differentiable perceptual quality score modeled on the PESQ pipeline:
//! level alignment, bark banding, time-frequency equalization, loudness
//! mapping, disturbance processing and two-stage aggregation.
//!
//! Compared to full ITU-T P.862 the input IIR filtering, time alignment and
//! bad-interval reprocessing are absent: inputs are assumed time-aligned and
//! every remaining stage is smooth enough to differentiate (see
//! [`crate::fit`] for the gradient path). The score is
//! `base - 0.1 d_sym - 0.0309 d_asym`, 4.5 for identical signals, unbounded
//! below.

mod grad;
mod table;

pub(crate) use grad::{pesq_backward, pesq_forward, PesqForward};
pub use table::{bark_of, freq_of_bark, terhardt_threshold_db, BarkTable};

use ndarray::Array2;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::spectral::{power_spectrogram, stft, PowerSpectrogram, StftConfig};

/// Constants of the perceptual pipeline. Defaults follow the classic
/// wideband score; the extra clips keep silence from blowing up ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct PesqConfig {
    /// Target average band power after level alignment.
    pub target_power: f64,
    /// Amplitude gain of the removed input filter, folded into alignment.
    pub iir_gain: f64,
    /// Stabilizer in the frequency-equalization ratio.
    pub c1: f64,
    /// Stabilizer in the per-frame gain ratio.
    pub c2: f64,
    /// First-order gain smoothing (previous, current) coefficients.
    pub smoothing: (f64, f64),
    /// Dead zone as a fraction of the smaller loudness.
    pub dead_zone_factor: f64,
    /// Exponent of the asymmetry factor.
    pub asym_exponent: f64,
    /// Additive offset inside the asymmetry ratio.
    pub asym_offset: f64,
    /// Asymmetry factor above this clips to the ceiling value.
    pub asym_clip_high: f64,
    /// Asymmetry factor below this is zeroed.
    pub asym_clip_low: f64,
    /// Frames per aggregation window.
    pub window_len: usize,
    /// Frame step between aggregation windows.
    pub window_step: usize,
    /// Score of an undisturbed signal.
    pub score_base: f64,
    /// Weight of the symmetric disturbance.
    pub sym_weight: f64,
    /// Weight of the asymmetric disturbance.
    pub asym_weight: f64,
    /// Clip range of the frequency-equalization ratio.
    pub eq_ratio_clip: (f64, f64),
    /// Clip range of the smoothed per-frame gain.
    pub gain_clip: (f64, f64),
    /// Frequency band (Hz) whose average power is aligned.
    pub level_band_hz: (f64, f64),
}

impl Default for PesqConfig {
    fn default() -> Self {
        Self {
            target_power: 1e7,
            iir_gain: 2.47,
            c1: 1000.0,
            c2: 5000.0,
            smoothing: (0.2, 0.8),
            dead_zone_factor: 0.25,
            asym_exponent: 1.2,
            asym_offset: 50.0,
            asym_clip_high: 12.0,
            asym_clip_low: 3.0,
            window_len: 20,
            window_step: 10,
            score_base: 4.5,
            sym_weight: 0.1,
            asym_weight: 0.0309,
            eq_ratio_clip: (0.01, 100.0),
            gain_clip: (3e-4, 5.0),
            level_band_hz: (300.0, 3000.0),
        }
    }
}

impl PesqConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("target_power", self.target_power),
            ("iir_gain", self.iir_gain),
            ("c1", self.c1),
            ("c2", self.c2),
            ("dead_zone_factor", self.dead_zone_factor),
            ("asym_exponent", self.asym_exponent),
            ("asym_offset", self.asym_offset),
            ("asym_clip_high", self.asym_clip_high),
            ("asym_clip_low", self.asym_clip_low),
            ("sym_weight", self.sym_weight),
            ("asym_weight", self.asym_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.window_len == 0 || self.window_step == 0 || self.window_step > self.window_len {
            return Err(Error::InvalidConfig(
                "need 1 <= window_step <= window_len".into(),
            ));
        }
        if self.smoothing.0 < 0.0 || self.smoothing.1 < 0.0 {
            return Err(Error::InvalidConfig(
                "smoothing weights must be >= 0".into(),
            ));
        }
        if !(self.eq_ratio_clip.0 > 0.0 && self.eq_ratio_clip.0 < self.eq_ratio_clip.1) {
            return Err(Error::InvalidConfig("bad eq ratio clip range".into()));
        }
        if !(self.gain_clip.0 > 0.0 && self.gain_clip.0 < self.gain_clip.1) {
            return Err(Error::InvalidConfig("bad gain clip range".into()));
        }
        if !(self.level_band_hz.0 >= 0.0 && self.level_band_hz.0 < self.level_band_hz.1) {
            return Err(Error::InvalidConfig("bad level band".into()));
        }
        Ok(())
    }

    /// Power the alignment band is scaled to, filter gain folded in.
    pub fn align_target(&self) -> f64 {
        self.target_power * self.iir_gain * self.iir_gain
    }
}

/// Band powers on the perceptual scale, with per-cell audibility flags.
#[derive(Debug, Clone, PartialEq)]
pub struct BarkSpectrogram {
    power: Array2<f64>,
    silence: Array2<bool>,
}

impl BarkSpectrogram {
    pub fn new(power: Array2<f64>, silence: Array2<bool>) -> Result<Self> {
        if power.dim() != silence.dim() {
            return Err(Error::DimensionMismatch {
                expected: power.dim(),
                got: silence.dim(),
            });
        }
        if power.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "bark powers must be finite and non-negative".into(),
            ));
        }
        Ok(Self { power, silence })
    }

    pub fn power(&self) -> &Array2<f64> {
        &self.power
    }

    /// True where the band power exceeds its audibility threshold.
    pub fn audible(&self) -> &Array2<bool> {
        &self.silence
    }

    pub fn frames(&self) -> usize {
        self.power.dim().0
    }

    pub fn bands(&self) -> usize {
        self.power.dim().1
    }
}

/// Perceptual loudness per frame and band.
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessGrid {
    values: Array2<f64>,
}

impl LoudnessGrid {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Per-frame symmetric/asymmetric disturbances plus the raw grid behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSeries {
    pub sym: Vec<f64>,
    pub asym: Vec<f64>,
    pub raw: Array2<f64>,
}

/// Score plus per-stage intermediates for debugging.
#[derive(Debug, Clone)]
pub struct PesqReport {
    pub score: f64,
    pub d_sym: f64,
    pub d_asym: f64,
    pub bark_clean: BarkSpectrogram,
    pub bark_estimate: BarkSpectrogram,
    pub eq_clean: BarkSpectrogram,
    pub eq_estimate: BarkSpectrogram,
    pub loudness_clean: LoudnessGrid,
    pub loudness_estimate: LoudnessGrid,
    pub disturbance: DisturbanceSeries,
}

impl PesqReport {
    /// Dumps every per-stage grid into `dir` using the binary grid format,
    /// one file per stage.
    pub fn dump_diagnostics(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let stages: [(&str, &Array2<f64>); 7] = [
            ("bark_clean", self.bark_clean.power()),
            ("bark_estimate", self.bark_estimate.power()),
            ("eq_clean", self.eq_clean.power()),
            ("eq_estimate", self.eq_estimate.power()),
            ("loudness_clean", self.loudness_clean.values()),
            ("loudness_estimate", self.loudness_estimate.values()),
            ("disturbance", &self.disturbance.raw),
        ];
        for (name, grid) in stages {
            crate::grid::write_real_grid(grid, dir.join(format!("{name}.grid")))?;
        }
        Ok(())
    }
}

/// One-sided bins whose center frequency falls inside the alignment band.
pub(crate) fn level_band_bins(
    cfg: &PesqConfig,
    sample_rate: u32,
    bins: usize,
) -> Result<(usize, usize)> {
    let fft_size = (bins - 1) * 2;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let lo = (cfg.level_band_hz.0 / bin_hz).ceil() as usize;
    let hi = ((cfg.level_band_hz.1 / bin_hz).floor() as usize).min(bins - 1);
    if lo > hi {
        return Err(Error::InvalidConfig(format!(
            "alignment band {:?} Hz holds no bins at {sample_rate} Hz / {fft_size} points",
            cfg.level_band_hz
        )));
    }
    Ok((lo, hi))
}

/// Mean power over the alignment band, all frames.
pub(crate) fn band_mean(power: &Array2<f64>, band: (usize, usize)) -> f64 {
    let frames = power.dim().0;
    let count = frames * (band.1 - band.0 + 1);
    let mut sum = 0.0;
    for m in 0..frames {
        for k in band.0..=band.1 {
            sum += power[[m, k]];
        }
    }
    sum / count as f64
}

/// Scales a power spectrogram so its average power in the configured band
/// equals `target_power x iir_gain^2`. Scaling is invariant to the input
/// level; silent input is an error.
pub fn level_align(
    power: &PowerSpectrogram,
    cfg: &PesqConfig,
    sample_rate: u32,
) -> Result<PowerSpectrogram> {
    cfg.validate()?;
    let (_, bins) = power.dim();
    let band = level_band_bins(cfg, sample_rate, bins)?;
    let mean = band_mean(power.values(), band);
    if mean <= 0.0 {
        return Err(Error::SilentInput);
    }
    let scale = cfg.align_target() / mean;
    PowerSpectrogram::new(power.values().mapv(|v| v * scale))
}

/// Averages linear bins into the table's bands and flags audible cells.
pub fn bark_spectrum(power: &PowerSpectrogram, table: &BarkTable) -> Result<BarkSpectrogram> {
    table.validate()?;
    let (frames, bins) = power.dim();
    let bands = table.bands();
    if *table.band_edges.last().unwrap() > bins {
        return Err(Error::InvalidConfig(format!(
            "table edges need {} bins, grid has {bins}",
            table.band_edges.last().unwrap()
        )));
    }
    let mut out = Array2::<f64>::zeros((frames, bands));
    let mut audible = Array2::from_elem((frames, bands), false);
    for m in 0..frames {
        for i in 0..bands {
            let lo = table.band_edges[i];
            let hi = table.band_edges[i + 1];
            let mut sum = 0.0;
            for k in lo..hi {
                sum += power.values()[[m, k]];
            }
            let value = sum / (hi - lo) as f64;
            out[[m, i]] = value;
            audible[[m, i]] = value > table.silence_threshold[i];
        }
    }
    BarkSpectrogram::new(out, audible)
}

/// Audibility-masked per-band average over frames (divided by the total
/// frame count).
pub(crate) fn masked_band_average(bark: &BarkSpectrogram) -> Vec<f64> {
    let (frames, bands) = bark.power.dim();
    let mut avg = vec![0.0; bands];
    for i in 0..bands {
        let mut sum = 0.0;
        for m in 0..frames {
            if bark.silence[[m, i]] {
                sum += bark.power[[m, i]];
            }
        }
        avg[i] = sum / frames as f64;
    }
    avg
}

/// Per-band frequency compensation ratios, clipped.
pub(crate) fn freq_ratios(pn: &[f64], pc: &[f64], cfg: &PesqConfig) -> (Vec<f64>, Vec<bool>) {
    let mut ratios = Vec::with_capacity(pn.len());
    let mut clipped = Vec::with_capacity(pn.len());
    for (n, c) in pn.iter().zip(pc) {
        let raw = (n + cfg.c1) / (c + cfg.c1);
        let r = raw.clamp(cfg.eq_ratio_clip.0, cfg.eq_ratio_clip.1);
        clipped.push(r != raw);
        ratios.push(r);
    }
    (ratios, clipped)
}

pub(crate) struct GainTrace {
    pub applied: Vec<f64>,
    /// -1 clipped low, 0 pass-through, +1 clipped high.
    pub clip_state: Vec<i8>,
}

/// Per-frame gain ratios, first-order smoothed then clipped.
pub(crate) fn compute_gains(gc: &[f64], gn: &[f64], cfg: &PesqConfig) -> GainTrace {
    let frames = gc.len();
    let mut smoothed = Vec::with_capacity(frames);
    let mut applied = Vec::with_capacity(frames);
    let mut clip_state = Vec::with_capacity(frames);
    for m in 0..frames {
        let r = (gc[m] + cfg.c2) / (gn[m] + cfg.c2);
        let s = if m == 0 {
            r
        } else {
            cfg.smoothing.0 * smoothed[m - 1] + cfg.smoothing.1 * r
        };
        smoothed.push(s);
        let clipped = s.clamp(cfg.gain_clip.0, cfg.gain_clip.1);
        clip_state.push(if s < cfg.gain_clip.0 {
            -1
        } else if s > cfg.gain_clip.1 {
            1
        } else {
            0
        });
        applied.push(clipped);
    }
    GainTrace {
        applied,
        clip_state,
    }
}

/// Time-frequency equalization: per-band power-ratio compensation on the
/// clean side, smoothed per-frame gain compensation on the noisy side.
pub fn tf_equalize(
    clean: &BarkSpectrogram,
    noisy: &BarkSpectrogram,
    cfg: &PesqConfig,
) -> Result<(BarkSpectrogram, BarkSpectrogram)> {
    cfg.validate()?;
    if clean.power.dim() != noisy.power.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.power.dim(),
            got: noisy.power.dim(),
        });
    }
    let (frames, bands) = clean.power.dim();
    if frames == 0 {
        return Err(Error::InvalidConfig("need at least one frame".into()));
    }

    let pn = masked_band_average(noisy);
    let pc = masked_band_average(clean);
    let (ratios, _) = freq_ratios(&pn, &pc, cfg);

    let mut eq_clean = Array2::<f64>::zeros((frames, bands));
    for m in 0..frames {
        for i in 0..bands {
            eq_clean[[m, i]] = ratios[i] * clean.power[[m, i]];
        }
    }

    let gc: Vec<f64> = (0..frames)
        .map(|m| (0..bands).map(|i| eq_clean[[m, i]]).sum())
        .collect();
    let gn: Vec<f64> = (0..frames)
        .map(|m| (0..bands).map(|i| noisy.power[[m, i]]).sum())
        .collect();
    let gains = compute_gains(&gc, &gn, cfg);

    let mut eq_noisy = Array2::<f64>::zeros((frames, bands));
    for m in 0..frames {
        for i in 0..bands {
            eq_noisy[[m, i]] = gains.applied[m] * noisy.power[[m, i]];
        }
    }

    Ok((
        BarkSpectrogram::new(eq_clean, clean.silence.clone())?,
        BarkSpectrogram::new(eq_noisy, noisy.silence.clone())?,
    ))
}

/// Loudness of one band power; `active` is false where the floor at zero
/// holds (band at or below its absolute threshold).
pub(crate) fn loudness_cell(e: f64, p0: f64, scale: f64, gamma: f64) -> (f64, bool) {
    if e > p0 {
        let v = scale * (p0 / 0.5).powf(gamma) * ((0.5 + 0.5 * e / p0).powf(gamma) - 1.0);
        (v.max(0.0), true)
    } else {
        (0.0, false)
    }
}

/// Derivative of [`loudness_cell`] with respect to the band power, valid on
/// the active branch.
pub(crate) fn loudness_cell_deriv(e: f64, p0: f64, scale: f64, gamma: f64) -> f64 {
    scale * (p0 / 0.5).powf(gamma) * gamma * (0.5 + 0.5 * e / p0).powf(gamma - 1.0) * 0.5 / p0
}

/// Compressive loudness mapping with the sub-threshold floor at zero.
pub fn loudness(eq: &BarkSpectrogram, table: &BarkTable) -> Result<LoudnessGrid> {
    table.validate()?;
    let (frames, bands) = eq.power.dim();
    if bands != table.bands() {
        return Err(Error::DimensionMismatch {
            expected: (frames, table.bands()),
            got: (frames, bands),
        });
    }
    let values = Array2::from_shape_fn((frames, bands), |(m, i)| {
        loudness_cell(
            eq.power[[m, i]],
            table.abs_threshold[i],
            table.loudness_scale[i],
            table.zwicker_power,
        )
        .0
    });
    Ok(LoudnessGrid { values })
}

pub(crate) struct DisturbanceCell {
    pub d: f64,
    pub branch_a: bool,
    pub branch_b: bool,
    /// True when the clean loudness is the smaller one in the dead zone.
    pub clean_min: bool,
}

pub(crate) fn disturbance_cell(lc: f64, ln: f64, factor: f64) -> DisturbanceCell {
    let clean_min = lc <= ln;
    let dz = factor * lc.min(ln);
    let delta = lc - ln;
    let a = (delta - dz).max(0.0);
    let b = (delta + dz).min(0.0);
    DisturbanceCell {
        d: a + b,
        branch_a: delta - dz > 0.0,
        branch_b: delta + dz < 0.0,
        clean_min,
    }
}

/// Loudness difference with the dead zone applied; zero inside the zone.
pub fn raw_disturbance(
    clean: &LoudnessGrid,
    estimate: &LoudnessGrid,
    cfg: &PesqConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    if clean.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.dim(),
            got: estimate.dim(),
        });
    }
    Ok(Array2::from_shape_fn(clean.dim(), |(m, i)| {
        disturbance_cell(
            clean.values[[m, i]],
            estimate.values[[m, i]],
            cfg.dead_zone_factor,
        )
        .d
    }))
}

pub(crate) struct AsymCell {
    pub h: f64,
    /// -1 zeroed, 0 pass-through, +1 ceiling.
    pub state: i8,
}

pub(crate) fn asym_cell(bn: f64, bc: f64, cfg: &PesqConfig) -> AsymCell {
    let raw = ((bn + cfg.asym_offset) / (bc + cfg.asym_offset)).powf(cfg.asym_exponent);
    if raw > cfg.asym_clip_high {
        AsymCell {
            h: cfg.asym_clip_high,
            state: 1,
        }
    } else if raw < cfg.asym_clip_low {
        AsymCell { h: 0.0, state: -1 }
    } else {
        AsymCell { h: raw, state: 0 }
    }
}

/// Weighted band norm: `sqrt(sum_w * sum_i (W_i x_i)^2)`.
pub(crate) fn frame_norm(sq_sum: f64, total_weight: f64) -> f64 {
    (total_weight * sq_sum).sqrt()
}

/// Per-frame symmetric and asymmetric disturbances from the raw grid.
///
/// The asymmetry factor is computed from the pre-equalization bark spectra
/// and clipped to `{0} U [low, high]`.
pub fn frame_disturbances(
    raw: &Array2<f64>,
    bark_clean: &BarkSpectrogram,
    bark_estimate: &BarkSpectrogram,
    table: &BarkTable,
    cfg: &PesqConfig,
) -> Result<DisturbanceSeries> {
    cfg.validate()?;
    table.validate()?;
    let (frames, bands) = raw.dim();
    if bands != table.bands() {
        return Err(Error::DimensionMismatch {
            expected: (frames, table.bands()),
            got: (frames, bands),
        });
    }
    if bark_clean.power.dim() != raw.dim() || bark_estimate.power.dim() != raw.dim() {
        return Err(Error::DimensionMismatch {
            expected: raw.dim(),
            got: bark_clean.power.dim(),
        });
    }
    let total_weight = table.total_outer_weight();
    let mut sym = Vec::with_capacity(frames);
    let mut asym = Vec::with_capacity(frames);
    for m in 0..frames {
        let mut sq_sym = 0.0;
        let mut sq_asym = 0.0;
        for i in 0..bands {
            let wd = table.weight_inner[i] * raw[[m, i]];
            sq_sym += wd * wd;
            let h = asym_cell(bark_estimate.power[[m, i]], bark_clean.power[[m, i]], cfg).h;
            let wdh = wd * h;
            sq_asym += wdh * wdh;
        }
        sym.push(frame_norm(sq_sym, total_weight));
        asym.push(frame_norm(sq_asym, total_weight));
    }
    Ok(DisturbanceSeries {
        sym,
        asym,
        raw: raw.clone(),
    })
}

/// Aggregation windows over `frames` frames: `max(frames / step, 1)` windows
/// of `len` frames stepping by `step`, the last clamped to the data.
pub(crate) fn window_layout(frames: usize, cfg: &PesqConfig) -> Vec<(usize, usize)> {
    let count = (frames / cfg.window_step).max(1);
    (0..count)
        .map(|s| {
            let lo = s * cfg.window_step;
            let hi = (lo + cfg.window_len).min(frames);
            (lo, hi)
        })
        .collect()
}

/// Sixth-order window norms followed by a quadratic mean across windows.
/// Returns the aggregate along with per-window internals for the backward
/// pass: the window means of the sixth powers and the window norms.
pub(crate) fn two_stage_internals(values: &[f64], cfg: &PesqConfig) -> (f64, Vec<f64>, Vec<f64>) {
    let windows = window_layout(values.len(), cfg);
    let mut mean6 = Vec::with_capacity(windows.len());
    let mut psqm = Vec::with_capacity(windows.len());
    for &(lo, hi) in &windows {
        let count = (hi - lo) as f64;
        let m6 = values[lo..hi].iter().map(|v| v.powi(6)).sum::<f64>() / count;
        mean6.push(m6);
        psqm.push(m6.powf(1.0 / 6.0));
    }
    let s = windows.len() as f64;
    let quad = (psqm.iter().map(|p| p * p).sum::<f64>() / s).sqrt();
    (quad, mean6, psqm)
}

/// Two-stage average of a per-frame disturbance series.
pub fn two_stage_average(values: &[f64], cfg: &PesqConfig) -> Result<f64> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::InvalidConfig("need at least one frame".into()));
    }
    Ok(two_stage_internals(values, cfg).0)
}

/// Batch score from per-utterance disturbance series: per-utterance two-stage
/// averages, batch means, then the linear combination.
pub fn aggregate(series: &[DisturbanceSeries], cfg: &PesqConfig) -> Result<f64> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut d_sym = 0.0;
    let mut d_asym = 0.0;
    for s in series {
        if s.sym.is_empty() {
            return Err(Error::InvalidConfig("need at least one frame".into()));
        }
        d_sym += two_stage_internals(&s.sym, cfg).0;
        d_asym += two_stage_internals(&s.asym, cfg).0;
    }
    let b = series.len() as f64;
    Ok(cfg.score_base - cfg.sym_weight * d_sym / b - cfg.asym_weight * d_asym / b)
}

/// Full perceptual score of an estimate against its clean reference.
///
/// Both signals go through the same STFT; per-stage grids are returned for
/// inspection. Scores live in `(-inf, score_base]`.
pub fn pesq_loss(
    clean: &Waveform,
    estimate: &Waveform,
    stft_cfg: &StftConfig,
    cfg: &PesqConfig,
    table: &BarkTable,
) -> Result<PesqReport> {
    cfg.validate()?;
    table.validate()?;
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
    table.check_compatible(clean.sample_rate(), stft_cfg.fft_size())?;

    let clean_power = power_spectrogram(&stft(clean, stft_cfg)?);
    let est_power = power_spectrogram(&stft(estimate, stft_cfg)?);

    let clean_aligned = level_align(&clean_power, cfg, clean.sample_rate())?;
    let est_aligned = level_align(&est_power, cfg, estimate.sample_rate())?;

    let bark_clean = bark_spectrum(&clean_aligned, table)?;
    let bark_estimate = bark_spectrum(&est_aligned, table)?;

    let (eq_clean, eq_estimate) = tf_equalize(&bark_clean, &bark_estimate, cfg)?;

    let loudness_clean = loudness(&eq_clean, table)?;
    let loudness_estimate = loudness(&eq_estimate, table)?;

    let raw = raw_disturbance(&loudness_clean, &loudness_estimate, cfg)?;
    let disturbance = frame_disturbances(&raw, &bark_clean, &bark_estimate, table, cfg)?;

    let d_sym = two_stage_internals(&disturbance.sym, cfg).0;
    let d_asym = two_stage_internals(&disturbance.asym, cfg).0;
    let score = cfg.score_base - cfg.sym_weight * d_sym - cfg.asym_weight * d_asym;

    Ok(PesqReport {
        score,
        d_sym,
        d_asym,
        bark_clean,
        bark_estimate,
        eq_clean,
        eq_estimate,
        loudness_clean,
        loudness_estimate,
        disturbance,
    })
}

/// Mean score over a batch of (clean, estimate) pairs.
pub fn pesq_loss_batch(
    pairs: &[(&Waveform, &Waveform)],
    stft_cfg: &StftConfig,
    cfg: &PesqConfig,
    table: &BarkTable,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut series = Vec::with_capacity(pairs.len());
    for (clean, estimate) in pairs {
        series.push(pesq_loss(clean, estimate, stft_cfg, cfg, table)?.disturbance);
    }
    aggregate(&series, cfg)
}
