//! STFT analysis and least-squares (Griffin-Lim) synthesis.
//!
//! The signal is zero-padded by `fft_size - hop` at head and tail and
//! analysis frames cover `[m*hop, m*hop + fft_size)` of the padded signal,
//! taken only where they fit entirely inside it. With any hop at or below
//! half the frame size this gives every original sample full overlap
//! coverage, so the least-squares synthesis (each frame inverted, weighted
//! by the analysis window, overlap-added and normalized by the summed
//! squared window) never divides by a vanishing weight inside the signal.
//! Where the weight still falls below `1e-12` (sparse hops, exotic windows)
//! the output is zero.
//!
//! Spectrograms are one-sided (`fft_size/2 + 1` bins). All mismatch sums
//! weight interior bins twice so they equal the full two-sided sums, keeping
//! Parseval-style checks exact.

use ndarray::Array2;
use num_complex::Complex64;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::fft;

/// Overlap-add weight below which synthesis outputs zero instead of dividing.
pub const SYNTHESIS_WEIGHT_FLOOR: f64 = 1e-12;

/// Frame layout and windows for STFT analysis/synthesis.
///
/// The synthesis window is kept for config round-trips and validation; the
/// least-squares synthesis itself is fully determined by the analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    synthesis_window: Vec<f64>,
}

impl StftConfig {
    pub fn new(
        fft_size: usize,
        hop: usize,
        window: Vec<f64>,
        synthesis_window: Vec<f64>,
    ) -> Result<Self> {
        if fft_size == 0 || !fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be a power of two, got {fft_size}"
            )));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::InvalidConfig(format!(
                "hop must satisfy 1 <= hop <= fft_size, got {hop}"
            )));
        }
        for (name, taps) in [("analysis", &window), ("synthesis", &synthesis_window)] {
            if taps.len() != fft_size {
                return Err(Error::InvalidConfig(format!(
                    "{name} window has {} taps, expected {fft_size}",
                    taps.len()
                )));
            }
            if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} window taps must be finite and non-negative"
                )));
            }
        }
        if window.iter().map(|w| w * w).sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig(
                "analysis window is all zero; synthesis denominator would vanish".into(),
            ));
        }
        Ok(Self {
            fft_size,
            hop,
            window,
            synthesis_window,
        })
    }

    /// Hann analysis and synthesis windows.
    pub fn hann(fft_size: usize, hop: usize) -> Result<Self> {
        let w = hann_window(fft_size);
        Self::new(fft_size, hop, w.clone(), w)
    }

    /// Rectangular windows, mostly useful for bin-exact tests.
    pub fn rectangular(fft_size: usize, hop: usize) -> Result<Self> {
        let w = vec![1.0; fft_size];
        Self::new(fft_size, hop, w.clone(), w)
    }

    /// 512/256 Hann layout used for 16 kHz material.
    pub fn default_16k() -> Self {
        Self::hann(512, 256).expect("static config")
    }

    /// 256/128 Hann layout used for 8 kHz material.
    pub fn default_8k() -> Self {
        Self::hann(256, 128).expect("static config")
    }

    /// Default layout for a sample rate, when one is defined.
    pub fn default_for_rate(sample_rate: u32) -> Result<Self> {
        match sample_rate {
            16000 => Ok(Self::default_16k()),
            8000 => Ok(Self::default_8k()),
            other => Err(Error::InvalidConfig(format!(
                "no default STFT layout for {other} Hz; supply one explicitly"
            ))),
        }
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn synthesis_window(&self) -> &[f64] {
        &self.synthesis_window
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zero padding applied to each end of the signal before framing.
    pub fn pad(&self) -> usize {
        self.fft_size - self.hop
    }

    /// Number of full frames over the padded signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.fft_size {
            return Err(Error::WaveformTooShort {
                len,
                need: self.fft_size,
            });
        }
        Ok((len + 2 * self.pad() - self.fft_size) / self.hop + 1)
    }

    /// Longest signal synthesizable from `frames` frames.
    pub fn coverage(&self, frames: usize) -> usize {
        frames * self.hop
    }

    /// Longest prefix of `len` whose samples are all synthesizable; with the
    /// padded framing this is `len` itself whenever `hop <= fft_size / 2`.
    pub fn aligned_len(&self, len: usize) -> Result<usize> {
        Ok(self.coverage(self.frame_count(len)?).min(len))
    }

    /// Longest synthesizable length whose re-analysis reproduces exactly
    /// `frames` frames; iterative refinement works at this length.
    pub fn round_trip_len(&self, frames: usize) -> usize {
        let max_same_grid = (frames + 2) * self.hop - self.fft_size;
        max_same_grid.saturating_sub(1).min(self.coverage(frames))
    }

    /// Two-sided multiplicity of a one-sided bin (1 at DC/Nyquist, else 2).
    pub fn bin_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.fft_size / 2 {
            1.0
        } else {
            2.0
        }
    }

    /// Overlap-add denominator `sum_m w^2` over the original-signal samples
    /// `[0, length)`, accounting for the head padding.
    pub fn synthesis_weight(&self, frames: usize, length: usize) -> Vec<f64> {
        let pad = self.pad();
        let mut weight = vec![0.0; length];
        for m in 0..frames {
            let start = m * self.hop;
            for (t, &w) in self.window.iter().enumerate() {
                if let Some(n) = (start + t).checked_sub(pad) {
                    if let Some(slot) = weight.get_mut(n) {
                        *slot += w * w;
                    }
                }
            }
        }
        weight
    }
}

/// One-sided complex STFT grid, frames by bins.
///
/// Carries the source sample rate so synthesis can tag its output.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Array2<Complex64>,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(values: Array2<Complex64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidConfig(
                "spectrogram contains non-finite values".into(),
            ));
        }
        Ok(Self {
            values,
            sample_rate,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.values.mapv(|v| v.arg())
    }

    pub(crate) fn check_same_dim(&self, other: &ComplexSpectrogram) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Squared-magnitude grid, frames by bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    values: Array2<f64>,
}

impl PowerSpectrogram {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "power spectrogram must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Spectrum-domain objective value, plus the per-iteration trace when the
/// iterative refinement produced one.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    pub objective: f64,
    pub per_iteration: Vec<f64>,
}

/// Forward STFT with the configured analysis window.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let frames = cfg.frame_count(w.len())?;
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let pad = cfg.pad() as isize;
    let plan = fft::forward(n);
    let samples = w.samples();

    let mut values = Array2::from_elem((frames, bins), Complex64::new(0.0, 0.0));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        let start = (m * cfg.hop) as isize - pad;
        for t in 0..n {
            let idx = start + t as isize;
            let sample = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            buf[t] = Complex64::new(sample * cfg.window[t], 0.0);
        }
        plan.process(&mut buf);
        for k in 0..bins {
            values[[m, k]] = buf[k];
        }
    }
    ComplexSpectrogram::new(values, w.sample_rate())
}

/// Power spectrogram `|S|^2` of a complex grid.
pub fn power_spectrogram(s: &ComplexSpectrogram) -> PowerSpectrogram {
    PowerSpectrogram {
        values: s.values.mapv(|v| v.norm_sqr()),
    }
}

/// Least-squares synthesis: the signal whose STFT is closest to `s`.
///
/// For a legitimate spectrogram (one produced by [`stft`]) this recovers the
/// original samples exactly wherever the overlap-add weight is nonzero.
pub fn istft_gl(s: &ComplexSpectrogram, cfg: &StftConfig, length: usize) -> Result<Waveform> {
    check_spectrogram_config(s, cfg)?;
    let frames = s.frames();
    if length == 0 || length > cfg.coverage(frames) {
        return Err(Error::InvalidConfig(format!(
            "requested length {length} outside coverage {}",
            cfg.coverage(frames)
        )));
    }

    let n = cfg.fft_size;
    let pad = cfg.pad();
    let plan = fft::inverse(n);
    let mut numerator = vec![0.0; length];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        expand_one_sided(&s.values, m, &mut buf);
        plan.process(&mut buf);
        let start = m * cfg.hop;
        // rustfft inverse is unnormalized; fold 1/N into the frame here.
        for t in 0..n {
            if let Some(slot) = (start + t)
                .checked_sub(pad)
                .and_then(|idx| numerator.get_mut(idx))
            {
                *slot += cfg.window[t] * buf[t].re / n as f64;
            }
        }
    }

    let weight = cfg.synthesis_weight(frames, length);
    let samples: Vec<f64> = numerator
        .iter()
        .zip(&weight)
        .map(|(num, w)| {
            if *w > SYNTHESIS_WEIGHT_FLOOR {
                num / w
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, s.sample_rate)
}

/// Two-sided-equivalent complex mismatch between `target` and `stft(z)`.
pub fn spectrum_mismatch(
    target: &ComplexSpectrogram,
    z: &Waveform,
    cfg: &StftConfig,
) -> Result<MismatchReport> {
    check_spectrogram_config(target, cfg)?;
    let spec = stft(z, cfg)?;
    target.check_same_dim(&spec)?;
    let mut objective = 0.0;
    for m in 0..target.frames() {
        for k in 0..target.bins() {
            let d = target.values[[m, k]] - spec.values[[m, k]];
            objective += cfg.bin_weight(k) * d.norm_sqr();
        }
    }
    Ok(MismatchReport {
        objective,
        per_iteration: Vec::new(),
    })
}

/// Two-sided-equivalent magnitude mismatch between a target magnitude grid
/// and the STFT of a signal.
pub(crate) fn magnitude_mismatch(
    target_mag: &Array2<f64>,
    spec: &ComplexSpectrogram,
    cfg: &StftConfig,
) -> f64 {
    let mut total = 0.0;
    for m in 0..spec.frames() {
        for k in 0..spec.bins() {
            let d = target_mag[[m, k]] - spec.values[[m, k]].norm();
            total += cfg.bin_weight(k) * d * d;
        }
    }
    total
}

/// Iterative Griffin-Lim refinement from a magnitude grid and initial phase.
///
/// Iteration 1 is exactly the closed-form synthesis of
/// `magnitude * exp(j init_phase)`; later iterations re-estimate phase from
/// the previous signal while holding the magnitude fixed. `per_iteration`
/// records the magnitude mismatch after each iteration and is non-increasing.
pub fn griffin_lim_iterate(
    magnitude: &Array2<f64>,
    init_phase: &Array2<f64>,
    cfg: &StftConfig,
    iterations: usize,
    sample_rate: u32,
) -> Result<(Waveform, MismatchReport)> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    if magnitude.dim() != init_phase.dim() {
        return Err(Error::DimensionMismatch {
            expected: magnitude.dim(),
            got: init_phase.dim(),
        });
    }
    if magnitude.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig(
            "magnitude grid must be finite and non-negative".into(),
        ));
    }
    let (frames, bins) = magnitude.dim();
    if bins != cfg.bins() || frames == 0 {
        return Err(Error::DimensionMismatch {
            expected: (1, cfg.bins()),
            got: (frames, bins),
        });
    }
    let length = cfg.round_trip_len(frames);

    let initial = Array2::from_shape_fn((frames, bins), |(m, k)| {
        Complex64::from_polar(magnitude[[m, k]], init_phase[[m, k]])
    });
    let mut estimate = ComplexSpectrogram::new(initial, sample_rate)?;
    let mut per_iteration = Vec::with_capacity(iterations);
    let mut signal = istft_gl(&estimate, cfg, length)?;
    let mut rebuilt = stft(&signal, cfg)?;
    per_iteration.push(magnitude_mismatch(magnitude, &rebuilt, cfg));

    for _ in 1..iterations {
        // Keep the target magnitude, take the phase of the latest legitimate signal.
        let projected = Array2::from_shape_fn((frames, bins), |(m, k)| {
            let z = rebuilt.values[[m, k]];
            let r = z.norm();
            if r > 0.0 {
                z * (magnitude[[m, k]] / r)
            } else {
                Complex64::new(magnitude[[m, k]], 0.0)
            }
        });
        estimate = ComplexSpectrogram::new(projected, sample_rate)?;
        signal = istft_gl(&estimate, cfg, length)?;
        rebuilt = stft(&signal, cfg)?;
        per_iteration.push(magnitude_mismatch(magnitude, &rebuilt, cfg));
    }

    let objective = *per_iteration.last().expect("iterations >= 1");
    Ok((
        signal,
        MismatchReport {
            objective,
            per_iteration,
        },
    ))
}

/// Adjoint of [`stft`]: maps per-bin gradients (w.r.t. the stored real and
/// imaginary parts) back to a gradient over the input samples.
pub(crate) fn stft_backward(
    d_re: &Array2<f64>,
    d_im: &Array2<f64>,
    cfg: &StftConfig,
    signal_len: usize,
) -> Vec<f64> {
    let (frames, bins) = d_re.dim();
    debug_assert_eq!(bins, cfg.bins());
    let n = cfg.fft_size();
    let plan = fft::inverse(n);
    let mut grad = vec![0.0; signal_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        for k in 0..bins {
            buf[k] = Complex64::new(d_re[[m, k]], d_im[[m, k]]);
        }
        for slot in buf.iter_mut().take(n).skip(bins) {
            *slot = Complex64::new(0.0, 0.0);
        }
        plan.process(&mut buf);
        let start = m * cfg.hop();
        for t in 0..n {
            if let Some(slot) = (start + t)
                .checked_sub(cfg.pad())
                .and_then(|idx| grad.get_mut(idx))
            {
                *slot += cfg.window()[t] * buf[t].re;
            }
        }
    }
    grad
}

/// Adjoint of [`istft_gl`]: maps a gradient over the synthesized samples to
/// per-bin gradients (w.r.t. the stored real and imaginary parts) of the
/// input spectrogram. The one-sided bin multiplicity and the 1/N of the
/// inverse transform are folded in.
pub(crate) fn istft_gl_backward(
    d_signal: &[f64],
    cfg: &StftConfig,
    frames: usize,
) -> (Array2<f64>, Array2<f64>) {
    let n = cfg.fft_size();
    let bins = cfg.bins();
    let length = d_signal.len();
    let weight = cfg.synthesis_weight(frames, length);
    let scaled: Vec<f64> = d_signal
        .iter()
        .zip(&weight)
        .map(|(g, w)| {
            if *w > SYNTHESIS_WEIGHT_FLOOR {
                g / w
            } else {
                0.0
            }
        })
        .collect();

    let plan = fft::forward(n);
    let mut d_re = Array2::zeros((frames, bins));
    let mut d_im = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        let start = m * cfg.hop();
        for t in 0..n {
            let v = (start + t)
                .checked_sub(cfg.pad())
                .and_then(|idx| scaled.get(idx).copied())
                .unwrap_or(0.0);
            buf[t] = Complex64::new(cfg.window()[t] * v, 0.0);
        }
        plan.process(&mut buf);
        for k in 0..bins {
            let scale = cfg.bin_weight(k) / n as f64;
            d_re[[m, k]] = scale * buf[k].re;
            d_im[[m, k]] = scale * buf[k].im;
        }
    }
    (d_re, d_im)
}

pub(crate) fn check_spectrogram_config(s: &ComplexSpectrogram, cfg: &StftConfig) -> Result<()> {
    if s.bins() != cfg.bins() || s.frames() == 0 {
        return Err(Error::DimensionMismatch {
            expected: (1, cfg.bins()),
            got: s.dim(),
        });
    }
    Ok(())
}

/// Fills `buf` with the conjugate-symmetric full spectrum of frame `m`.
pub(crate) fn expand_one_sided(values: &Array2<Complex64>, m: usize, buf: &mut [Complex64]) {
    let n = buf.len();
    let bins = n / 2 + 1;
    for k in 0..bins {
        buf[k] = values[[m, k]];
    }
    for k in bins..n {
        buf[k] = values[[m, n - k]].conj();
    }
}

pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos()))
        .collect()
}
