//! Mask-to-signal reconstruction chain and its exact backward pass.
//!
//! Forward: apply the mask to the noisy spectrogram, synthesize with the
//! least-squares inverse, optionally refine the phase with further
//! Griffin-Lim iterations (magnitude held at `|mask| * |Y|`). One iteration
//! is exactly the closed-form synthesis of the masked spectrogram.
//!
//! Backward: the chain is linear in the mask for one iteration; extra
//! iterations add the phase-projection pointwise map and the `|mask|`
//! magnitude kink, both handled with exact local jacobians and one-sided
//! subgradients (sign flips are recorded as branch bits).

use ndarray::Array2;

use crate::error::Result;
use crate::masks::{apply_mask, MaskGrid};
use crate::spectral::{
    istft_gl, istft_gl_backward, stft, stft_backward, ComplexSpectrogram, StftConfig,
};
use crate::Waveform;

use crate::trace::BranchTrace;

/// Spectrum magnitudes below this carry no phase information; the projection
/// holds them at zero phase and their gradient is dropped.
const PHASE_FLOOR: f64 = 1e-12;

/// Cached intermediate state of one Griffin-Lim refinement step.
struct GlStage {
    spec_re: Array2<f64>,
    spec_im: Array2<f64>,
    norm: Array2<f64>,
}

pub(crate) struct ReconChain {
    mags: Array2<f64>,
    stages: Vec<GlStage>,
    pub signal: Waveform,
    frames: usize,
}

/// Reconstructs the time-domain estimate for `mask` applied to `noisy`,
/// running `gl_iterations` Griffin-Lim passes, and caches what the backward
/// sweep needs. Branch bits for the non-smooth pieces land in `trace`.
pub(crate) fn reconstruct(
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    cfg: &StftConfig,
    length: usize,
    gl_iterations: usize,
    trace: &mut BranchTrace,
) -> Result<ReconChain> {
    let masked = apply_mask(mask, noisy)?;
    let frames = masked.frames();
    if gl_iterations > 1 && cfg.frame_count(length)? != frames {
        return Err(crate::error::Error::DimensionMismatch {
            expected: (frames, masked.bins()),
            got: (cfg.frame_count(length)?, masked.bins()),
        });
    }
    let mags = masked.magnitude();
    let mut signal = istft_gl(&masked, cfg, length)?;

    let mut stages = Vec::with_capacity(gl_iterations.saturating_sub(1));
    for _ in 1..gl_iterations {
        let spec = stft(&signal, cfg)?;
        let norm = spec.values().mapv(|v| v.norm());
        let projected = Array2::from_shape_fn(masked.dim(), |(m, k)| {
            let r = norm[[m, k]];
            if r > PHASE_FLOOR {
                spec.values()[[m, k]] * (mags[[m, k]] / r)
            } else {
                num_complex::Complex64::new(mags[[m, k]], 0.0)
            }
        });
        let projected = ComplexSpectrogram::new(projected, noisy.sample_rate())?;
        signal = istft_gl(&projected, cfg, length)?;
        stages.push(GlStage {
            spec_re: spec.values().mapv(|v| v.re),
            spec_im: spec.values().mapv(|v| v.im),
            norm,
        });
    }

    if !stages.is_empty() {
        // Magnitude re-imposition makes the chain sensitive to mask signs
        // and to near-zero spectra; both are kinks worth tracking.
        for v in mask.values() {
            trace.push(*v >= 0.0);
        }
        for stage in &stages {
            for r in &stage.norm {
                trace.push(*r > PHASE_FLOOR);
            }
        }
    }

    Ok(ReconChain {
        mags,
        stages,
        signal,
        frames,
    })
}

/// Maps a gradient over the reconstructed samples back to the mask.
pub(crate) fn backward(
    chain: &ReconChain,
    d_signal: &[f64],
    mask: &MaskGrid,
    noisy: &ComplexSpectrogram,
    cfg: &StftConfig,
) -> Array2<f64> {
    let (frames, bins) = noisy.dim();
    debug_assert_eq!(frames, chain.frames);
    let mut g = d_signal.to_vec();
    let mut d_mag: Array2<f64> = Array2::zeros((frames, bins));

    for stage in chain.stages.iter().rev() {
        let (d_s_re, d_s_im) = istft_gl_backward(&g, cfg, frames);
        let mut d_z_re = Array2::<f64>::zeros((frames, bins));
        let mut d_z_im = Array2::<f64>::zeros((frames, bins));
        for m in 0..frames {
            for k in 0..bins {
                let r = stage.norm[[m, k]];
                let (u_re, u_im) = if r > PHASE_FLOOR {
                    (stage.spec_re[[m, k]] / r, stage.spec_im[[m, k]] / r)
                } else {
                    (1.0, 0.0)
                };
                d_mag[[m, k]] += d_s_re[[m, k]] * u_re + d_s_im[[m, k]] * u_im;
                if r > PHASE_FLOOR {
                    let mag = chain.mags[[m, k]];
                    let du_re = d_s_re[[m, k]] * mag;
                    let du_im = d_s_im[[m, k]] * mag;
                    let re = stage.spec_re[[m, k]];
                    let im = stage.spec_im[[m, k]];
                    let r3 = r * r * r;
                    d_z_re[[m, k]] = (du_re * im * im - du_im * re * im) / r3;
                    d_z_im[[m, k]] = (-du_re * re * im + du_im * re * re) / r3;
                }
            }
        }
        g = stft_backward(&d_z_re, &d_z_im, cfg, g.len());
    }

    let (d_s_re, d_s_im) = istft_gl_backward(&g, cfg, frames);
    let mut d_mask = Array2::<f64>::zeros((frames, bins));
    for m in 0..frames {
        for k in 0..bins {
            let y = noisy.values()[[m, k]];
            d_mask[[m, k]] = d_s_re[[m, k]] * y.re + d_s_im[[m, k]] * y.im;
            if !chain.stages.is_empty() {
                let sign = if mask.values()[[m, k]] >= 0.0 {
                    1.0
                } else {
                    -1.0
                };
                d_mask[[m, k]] += d_mag[[m, k]] * sign * y.norm();
            }
        }
    }
    d_mask
}
