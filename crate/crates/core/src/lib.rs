//! Denoising objective stack for single-channel speech enhancement.
//!
//! The crate covers the full path from a noisy waveform to a trainable
//! objective: STFT analysis with least-squares (Griffin-Lim) synthesis,
//! oracle time-frequency mask labels, the scale-invariant SDR loss, a
//! differentiable PESQ-style perceptual loss, joint objectives, and exact
//! analytic gradients of every loss with respect to a free mask, validated
//! against central finite differences. A small harness fits a mask by
//! gradient ascent to exercise the whole chain end to end.
//!
//! Everything is `f64`; the gradient path does not survive single precision.

pub mod audio;
pub mod error;
pub(crate) mod fft;
pub mod fit;
pub mod grid;
pub mod masks;
pub mod pesq;
pub mod sdr;
pub mod spectral;
pub mod synth;
pub(crate) mod trace;

pub use audio::{achieved_snr_db, mix_at_snr, read_wav, write_wav, MixSpec, Waveform};
pub use error::{Error, Result};
pub use fit::{
    fd_gradient, fd_gradient_checked, fit_mask, fit_with_gl_iterations, loss_and_grad,
    loss_and_grad_gl, reconstruct_estimate, FitConfig, FitContext, FitOutcome, FitRecord,
    FitResult, LossKind, LossReport, MaskInit,
};
pub use masks::{
    apply_mask, d1, d2, d3_complex, d3_cosine, iam_label, ibm_label, irm_label, psm_label,
    MaskConfig, MaskGrid, MaskKind,
};
pub use pesq::{
    aggregate, bark_spectrum, frame_disturbances, level_align, loudness, pesq_loss,
    pesq_loss_batch, raw_disturbance, tf_equalize, two_stage_average, BarkSpectrogram, BarkTable,
    DisturbanceSeries, LoudnessGrid, PesqConfig, PesqReport,
};
pub use sdr::{
    joint_sdr_mse, joint_sdr_pesq, sdr_decompose, sdr_loss, si_sdr, snr_mse_loss, spectrum_mse,
    JointLossConfig, SdrDecomposition, SdrMseItem, SDR_CLAMP_DB,
};
pub use spectral::{
    griffin_lim_iterate, istft_gl, power_spectrogram, spectrum_mismatch, stft, ComplexSpectrogram,
    MismatchReport, PowerSpectrogram, StftConfig,
};
