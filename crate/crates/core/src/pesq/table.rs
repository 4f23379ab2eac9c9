//! Perceptual band table: bark band edges over one-sided FFT bins plus the
//! per-band constants the loudness and disturbance stages consume.
//!
//! The shipped defaults are derived from standard formulas (Traunmueller's
//! bark mapping and Terhardt's absolute-threshold curve) via [`BarkTable::derive`]
//! and frozen into TOML data files; every value can be overridden by loading
//! a custom file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base per-band loudness scaling, defined on the perceptual reference unit.
pub const DEFAULT_LOUDNESS_SCALE: f64 = 0.1866055;
/// Default compressive loudness exponent (Zwicker's law).
pub const DEFAULT_ZWICKER_POWER: f64 = 0.23;
/// Silence thresholds default to this multiple of the absolute threshold.
pub const SILENCE_FACTOR: f64 = 100.0;
/// Conversion from the level-aligned internal power unit to the perceptual
/// reference unit the threshold curve and loudness scaling are defined on.
/// Thresholds scale by this factor and the loudness scaling by its
/// `-zwicker_power` power, which leaves loudness values invariant under the
/// unit change.
pub const INTERNAL_LEVEL_SCALE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarkTable {
    pub version: u32,
    pub sample_rate: u32,
    pub fft_size: usize,
    /// Compressive exponent applied in the loudness mapping.
    pub zwicker_power: f64,
    /// `bands + 1` ascending one-sided bin indices; band `i` spans
    /// `[band_edges[i], band_edges[i+1])`.
    pub band_edges: Vec<usize>,
    /// Absolute hearing threshold per band, internal power units.
    pub abs_threshold: Vec<f64>,
    /// Band power above this counts as audible for the equalization averages.
    pub silence_threshold: Vec<f64>,
    /// Loudness scaling factor per band.
    pub loudness_scale: Vec<f64>,
    /// Outer norm weight per band (w).
    pub weight_outer: Vec<f64>,
    /// Inner norm weight per band (W).
    pub weight_inner: Vec<f64>,
}

impl BarkTable {
    pub fn bands(&self) -> usize {
        self.band_edges.len().saturating_sub(1)
    }

    /// Sum of the outer weights.
    pub fn total_outer_weight(&self) -> f64 {
        self.weight_outer.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bands = self.bands();
        if bands == 0 {
            return Err(Error::InvalidConfig(
                "bark table needs at least one band".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig(
                "bark table sample rate must be positive".into(),
            ));
        }
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(
                "bark table fft_size must be a power of two".into(),
            ));
        }
        if !self.band_edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "bark band edges must be strictly increasing".into(),
            ));
        }
        let bins = self.fft_size / 2 + 1;
        if *self.band_edges.last().unwrap() > bins {
            return Err(Error::InvalidConfig(format!(
                "bark band edges exceed the {bins} one-sided bins"
            )));
        }
        for (name, v) in [
            ("abs_threshold", &self.abs_threshold),
            ("silence_threshold", &self.silence_threshold),
            ("loudness_scale", &self.loudness_scale),
            ("weight_outer", &self.weight_outer),
            ("weight_inner", &self.weight_inner),
        ] {
            if v.len() != bands {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {} entries for {bands} bands",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must be finite and positive"
                )));
            }
        }
        if !(self.zwicker_power > 0.0 && self.zwicker_power < 1.0) {
            return Err(Error::InvalidConfig(
                "zwicker_power must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Checks the table against an STFT layout and sample rate.
    pub fn check_compatible(&self, sample_rate: u32, fft_size: usize) -> Result<()> {
        if self.sample_rate != sample_rate {
            return Err(Error::SampleRateMismatch {
                left: self.sample_rate,
                right: sample_rate,
            });
        }
        if self.fft_size != fft_size {
            return Err(Error::InvalidConfig(format!(
                "bark table built for fft_size {}, got {fft_size}",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: BarkTable = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("bark table parse: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("bark table encode: {e}")))
    }

    /// Shipped 49-band table for 16 kHz / 512-point frames.
    pub fn wideband_16k() -> &'static BarkTable {
        static TABLE: once_cell::sync::Lazy<BarkTable> = once_cell::sync::Lazy::new(|| {
            BarkTable::from_toml_str(include_str!("../../data/bark_16k.toml"))
                .expect("shipped 16k table is valid")
        });
        &TABLE
    }

    /// Shipped 49-band table for 8 kHz / 256-point frames.
    pub fn narrowband_8k() -> &'static BarkTable {
        static TABLE: once_cell::sync::Lazy<BarkTable> = once_cell::sync::Lazy::new(|| {
            BarkTable::from_toml_str(include_str!("../../data/bark_8k.toml"))
                .expect("shipped 8k table is valid")
        });
        &TABLE
    }

    /// Shipped table for a sample rate, when one exists.
    pub fn for_rate(sample_rate: u32) -> Result<&'static BarkTable> {
        match sample_rate {
            16000 => Ok(Self::wideband_16k()),
            8000 => Ok(Self::narrowband_8k()),
            other => Err(Error::InvalidConfig(format!(
                "no shipped bark table for {other} Hz; load one via config"
            ))),
        }
    }

    /// Builds a table from first principles: bands equally spaced on the
    /// bark scale from bin 1 to Nyquist, Terhardt absolute thresholds at the
    /// band centers, bark band widths as norm weights.
    pub fn derive(sample_rate: u32, fft_size: usize, bands: usize) -> Result<BarkTable> {
        if bands == 0 {
            return Err(Error::InvalidConfig("need at least one band".into()));
        }
        let bins = fft_size / 2 + 1;
        if bands + 1 > bins {
            return Err(Error::InvalidConfig(format!(
                "{bands} bands do not fit {bins} one-sided bins"
            )));
        }
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let lo = bark_of(bin_hz);
        let hi = bark_of(sample_rate as f64 / 2.0);

        let mut band_edges = Vec::with_capacity(bands + 1);
        band_edges.push(1usize);
        for i in 1..bands {
            let target = lo + (hi - lo) * i as f64 / bands as f64;
            let f = freq_of_bark(target);
            let raw = (f / bin_hz).round() as isize;
            let min = band_edges[i - 1] as isize + 1;
            let max = (bins - (bands - i)) as isize;
            band_edges.push(raw.clamp(min, max) as usize);
        }
        band_edges.push(bins);

        let mut abs_threshold = Vec::with_capacity(bands);
        let mut weight = Vec::with_capacity(bands);
        for i in 0..bands {
            let f_lo = band_edges[i] as f64 * bin_hz;
            let f_hi = band_edges[i + 1] as f64 * bin_hz;
            let center = 0.5 * (band_edges[i] + band_edges[i + 1] - 1) as f64 * bin_hz;
            let threshold = 10f64.powf(terhardt_threshold_db(center) / 10.0);
            abs_threshold.push(threshold * INTERNAL_LEVEL_SCALE);
            weight.push(bark_of(f_hi) - bark_of(f_lo));
        }
        let silence_threshold = abs_threshold.iter().map(|t| t * SILENCE_FACTOR).collect();
        let loudness_scale =
            DEFAULT_LOUDNESS_SCALE / INTERNAL_LEVEL_SCALE.powf(DEFAULT_ZWICKER_POWER);

        let table = BarkTable {
            version: 1,
            sample_rate,
            fft_size,
            zwicker_power: DEFAULT_ZWICKER_POWER,
            band_edges,
            abs_threshold,
            silence_threshold,
            loudness_scale: vec![loudness_scale; bands],
            weight_outer: weight.clone(),
            weight_inner: weight,
        };
        table.validate()?;
        Ok(table)
    }
}

/// Traunmueller's frequency-to-bark mapping.
pub fn bark_of(hz: f64) -> f64 {
    26.81 * hz / (1960.0 + hz) - 0.53
}

/// Inverse of [`bark_of`].
pub fn freq_of_bark(bark: f64) -> f64 {
    1960.0 * (bark + 0.53) / (26.28 - bark)
}

/// Terhardt's approximation of the absolute hearing threshold in dB.
pub fn terhardt_threshold_db(hz: f64) -> f64 {
    let fk = hz / 1000.0;
    3.64 * fk.powf(-0.8) - 6.5 * (-0.6 * (fk - 3.3) * (fk - 3.3)).exp() + 1e-3 * fk.powi(4)
}
