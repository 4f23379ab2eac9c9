//! Oracle time-frequency mask labels and the distortion metrics that pick
//! between them.
//!
//! A mask scales the noisy amplitude spectrum; the noisy phase is reused
//! untouched. Negative mask values (possible for PSM and free masks) simply
//! flip the phase by pi, which the complex representation handles for free.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectral::ComplexSpectrogram;

/// Provenance of a mask grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Ibm,
    Irm,
    Iam,
    Psm,
    Free,
}

impl MaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ibm" => Ok(Self::Ibm),
            "irm" => Ok(Self::Irm),
            "iam" => Ok(Self::Iam),
            "psm" => Ok(Self::Psm),
            "free" => Ok(Self::Free),
            other => Err(Error::UnknownMaskKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ibm => "ibm",
            Self::Irm => "irm",
            Self::Iam => "iam",
            Self::Psm => "psm",
            Self::Free => "free",
        }
    }
}

/// Real-valued mask over a frames-by-bins grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    values: Array2<f64>,
    kind: MaskKind,
}

impl MaskGrid {
    pub fn new(values: Array2<f64>, kind: MaskKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "mask contains non-finite values".into(),
            ));
        }
        match kind {
            MaskKind::Ibm => {
                if values.iter().any(|v| *v != 0.0 && *v != 1.0) {
                    return Err(Error::InvalidConfig("IBM mask must be 0/1 valued".into()));
                }
            }
            MaskKind::Irm => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidConfig("IRM mask must lie in [0, 1]".into()));
                }
            }
            _ => {}
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Elementwise clamp, revalidated against the kind's invariants.
    pub fn clipped(&self, lo: f64, hi: f64) -> Result<Self> {
        Self::new(self.values.mapv(|v| v.clamp(lo, hi)), self.kind)
    }
}

/// Knobs shared by the oracle label builders.
#[derive(Debug, Clone)]
pub struct MaskConfig {
    /// Log-scale IBM threshold applied to every bin.
    pub ibm_threshold_db: f64,
    /// Optional per-bin override; length must match the grids when present.
    pub ibm_threshold_db_per_bin: Option<Vec<f64>>,
    /// Stabilizer for magnitude ratios.
    pub epsilon: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            ibm_threshold_db: 0.0,
            ibm_threshold_db_per_bin: None,
            epsilon: 1e-8,
        }
    }
}

impl MaskConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }

    fn threshold_ratio(&self, bin: usize, bins: usize) -> Result<f64> {
        let db = match &self.ibm_threshold_db_per_bin {
            Some(table) => {
                if table.len() != bins {
                    return Err(Error::InvalidConfig(format!(
                        "per-bin IBM thresholds: {} entries for {} bins",
                        table.len(),
                        bins
                    )));
                }
                table[bin]
            }
            None => self.ibm_threshold_db,
        };
        Ok(10f64.powf(db / 10.0))
    }
}

fn check_dims(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<()> {
    a.check_same_dim(b)
}

/// Binary label: 1 where the clean-to-noise magnitude ratio clears the
/// per-bin threshold; noise-free bins count as clear.
pub fn ibm_label(
    clean: &ComplexSpectrogram,
    noise: &ComplexSpectrogram,
    cfg: &MaskConfig,
) -> Result<MaskGrid> {
    check_dims(clean, noise)?;
    cfg.validate()?;
    let (frames, bins) = clean.dim();
    let mut values = Array2::<f64>::zeros((frames, bins));
    for m in 0..frames {
        for k in 0..bins {
            let x = clean.values()[[m, k]].norm();
            let n = noise.values()[[m, k]].norm();
            let on = if n == 0.0 {
                true
            } else {
                x / n >= cfg.threshold_ratio(k, bins)?
            };
            values[[m, k]] = if on { 1.0 } else { 0.0 };
        }
    }
    MaskGrid::new(values, MaskKind::Ibm)
}

/// Ratio label `|X| / (|X| + |N|)`; the 0/0 bin takes the symmetric limit 0.5.
pub fn irm_label(clean: &ComplexSpectrogram, noise: &ComplexSpectrogram) -> Result<MaskGrid> {
    check_dims(clean, noise)?;
    let values = Array2::from_shape_fn(clean.dim(), |(m, k)| {
        let x = clean.values()[[m, k]].norm();
        let n = noise.values()[[m, k]].norm();
        if x + n == 0.0 {
            0.5
        } else {
            x / (x + n)
        }
    });
    MaskGrid::new(values, MaskKind::Irm)
}

/// Amplitude label `|X| / max(|Y|, epsilon)`; unbounded above by design.
pub fn iam_label(
    clean: &ComplexSpectrogram,
    noisy: &ComplexSpectrogram,
    cfg: &MaskConfig,
) -> Result<MaskGrid> {
    check_dims(clean, noisy)?;
    cfg.validate()?;
    let values = Array2::from_shape_fn(clean.dim(), |(m, k)| {
        let x = clean.values()[[m, k]].norm();
        let y = noisy.values()[[m, k]].norm();
        x / y.max(cfg.epsilon)
    });
    MaskGrid::new(values, MaskKind::Iam)
}

/// Phase-sensitive label: the amplitude ratio scaled by the cosine of the
/// noisy-minus-clean phase difference. May be negative.
pub fn psm_label(
    clean: &ComplexSpectrogram,
    noisy: &ComplexSpectrogram,
    cfg: &MaskConfig,
) -> Result<MaskGrid> {
    check_dims(clean, noisy)?;
    cfg.validate()?;
    let values = Array2::from_shape_fn(clean.dim(), |(m, k)| {
        let x = clean.values()[[m, k]];
        let y = noisy.values()[[m, k]];
        let ratio = x.norm() / y.norm().max(cfg.epsilon);
        ratio * (y.arg() - x.arg()).cos()
    });
    MaskGrid::new(values, MaskKind::Psm)
}

/// Applies a real mask to a complex spectrogram, reusing the noisy phase.
pub fn apply_mask(mask: &MaskGrid, noisy: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if mask.dim() != noisy.dim() {
        return Err(Error::DimensionMismatch {
            expected: noisy.dim(),
            got: mask.dim(),
        });
    }
    let values = Array2::from_shape_fn(noisy.dim(), |(m, k)| {
        noisy.values()[[m, k]] * mask.values()[[m, k]]
    });
    ComplexSpectrogram::new(values, noisy.sample_rate())
}

/// Direct mask regression distortion: grid sum of `(M - L)^2`.
pub fn d1(mask: &MaskGrid, label: &MaskGrid) -> Result<f64> {
    if mask.dim() != label.dim() {
        return Err(Error::DimensionMismatch {
            expected: label.dim(),
            got: mask.dim(),
        });
    }
    Ok(mask
        .values()
        .iter()
        .zip(label.values().iter())
        .map(|(m, l)| (m - l) * (m - l))
        .sum())
}

/// Magnitude-spectrum distortion: grid sum of `(M |Y| - |X|)^2`.
pub fn d2(mask: &MaskGrid, clean_mag: &Array2<f64>, noisy_mag: &Array2<f64>) -> Result<f64> {
    if mask.dim() != clean_mag.dim() || mask.dim() != noisy_mag.dim() {
        return Err(Error::DimensionMismatch {
            expected: mask.dim(),
            got: clean_mag.dim(),
        });
    }
    let mut total = 0.0;
    for ((m, x), y) in mask
        .values()
        .iter()
        .zip(clean_mag.iter())
        .zip(noisy_mag.iter())
    {
        let d = m * y - x;
        total += d * d;
    }
    Ok(total)
}

/// Complex-spectrum distortion: grid sum of `|M Y - X|^2`.
pub fn d3_complex(
    mask: &MaskGrid,
    clean: &ComplexSpectrogram,
    noisy: &ComplexSpectrogram,
) -> Result<f64> {
    check_dims(clean, noisy)?;
    if mask.dim() != clean.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.dim(),
            got: mask.dim(),
        });
    }
    let mut total = 0.0;
    for ((m, x), y) in mask
        .values()
        .iter()
        .zip(clean.values().iter())
        .zip(noisy.values().iter())
    {
        total += (y * *m - x).norm_sqr();
    }
    Ok(total)
}

/// Cosine rearrangement of [`d3_complex`]: grid sum of
/// `(M |Y| - |X| cos(angle Y - angle X))^2`. Differs from the complex form
/// by a mask-independent constant.
pub fn d3_cosine(
    mask: &MaskGrid,
    clean: &ComplexSpectrogram,
    noisy: &ComplexSpectrogram,
) -> Result<f64> {
    check_dims(clean, noisy)?;
    if mask.dim() != clean.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.dim(),
            got: mask.dim(),
        });
    }
    let mut total = 0.0;
    for ((m, x), y) in mask
        .values()
        .iter()
        .zip(clean.values().iter())
        .zip(noisy.values().iter())
    {
        let d = m * y.norm() - x.norm() * (y.arg() - x.arg()).cos();
        total += d * d;
    }
    Ok(total)
}
