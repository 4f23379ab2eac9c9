//! Cached forward pass and hand-derived reverse pass of the perceptual
//! score, producing the gradient with respect to the estimate's samples.
//!
//! The forward composes the public pipeline ops, so its score is identical
//! to [`super::pesq_loss`]. Alongside the grids it records every branch
//! decision (silence masks, ratio and gain clips, loudness floors, dead-zone
//! branches, asymmetry clips) both for the reverse sweep and as a hash that
//! finite-difference checks use to skip kink-crossing perturbations.
//!
//! Non-smooth points follow one-sided subgradients: clipped sides carry zero
//! gradient. Square and sixth roots are stabilized as `root(v + 1e-12)` in
//! the derivative path only, so forward values stay exact.

use ndarray::Array2;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::spectral::{power_spectrogram, stft, stft_backward, StftConfig};
use crate::trace::BranchTrace;

use super::table::BarkTable;
use super::{
    asym_cell, band_mean, bark_spectrum, compute_gains, disturbance_cell, freq_ratios, level_align,
    level_band_bins, loudness, loudness_cell_deriv, masked_band_average, raw_disturbance,
    tf_equalize, two_stage_internals, window_layout, PesqConfig,
};

const GRAD_EPS: f64 = 1e-12;

/// Everything the reverse sweep needs, captured during one forward run.
pub(crate) struct PesqForward {
    pub score: f64,
    pub d_sym: f64,
    pub d_asym: f64,
    /// Hash of every mask-dependent branch decision.
    pub trace: u64,

    frames: usize,
    bands: usize,
    bins: usize,
    est_len: usize,
    band: (usize, usize),

    est_spec_re: Array2<f64>,
    est_spec_im: Array2<f64>,
    power_raw: Array2<f64>,
    align_scale: f64,
    band_mean: f64,

    bark_est: Array2<f64>,
    audible_est: Array2<bool>,
    bark_clean: Array2<f64>,

    pc: Vec<f64>,
    ratio_clipped: Vec<bool>,
    eq_clean: Array2<f64>,

    gain_applied: Vec<f64>,
    gain_clip_state: Vec<i8>,
    gc: Vec<f64>,
    gn: Vec<f64>,

    eq_est: Array2<f64>,
    active_clean: Array2<bool>,
    active_est: Array2<bool>,

    d: Array2<f64>,
    branch_a: Array2<bool>,
    branch_b: Array2<bool>,
    clean_min: Array2<bool>,
    h: Array2<f64>,
    h_state: Array2<i8>,

    sq_sym: Vec<f64>,
    sq_asym: Vec<f64>,
    fd: Vec<f64>,
    afd: Vec<f64>,
    mean6_sym: Vec<f64>,
    psqm_sym: Vec<f64>,
    mean6_asym: Vec<f64>,
    psqm_asym: Vec<f64>,
}

pub(crate) fn pesq_forward(
    clean: &Waveform,
    estimate: &Waveform,
    stft_cfg: &StftConfig,
    cfg: &PesqConfig,
    table: &BarkTable,
) -> Result<PesqForward> {
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

    let clean_spec = stft(clean, stft_cfg)?;
    let est_spec = stft(estimate, stft_cfg)?;
    let clean_power = power_spectrogram(&clean_spec);
    let est_power = power_spectrogram(&est_spec);
    let (frames, bins) = est_power.dim();
    let bands = table.bands();

    let band = level_band_bins(cfg, estimate.sample_rate(), bins)?;
    let mean_est = band_mean(est_power.values(), band);
    if mean_est <= 0.0 {
        return Err(Error::SilentInput);
    }
    let align_scale = cfg.align_target() / mean_est;

    let clean_aligned = level_align(&clean_power, cfg, clean.sample_rate())?;
    let est_aligned = level_align(&est_power, cfg, estimate.sample_rate())?;

    let bark_clean_full = bark_spectrum(&clean_aligned, table)?;
    let bark_est_full = bark_spectrum(&est_aligned, table)?;

    let pn = masked_band_average(&bark_est_full);
    let pc = masked_band_average(&bark_clean_full);
    let (_, ratio_clipped) = freq_ratios(&pn, &pc, cfg);

    let (eq_clean_full, eq_est_full) = tf_equalize(&bark_clean_full, &bark_est_full, cfg)?;
    let gc: Vec<f64> = (0..frames)
        .map(|m| (0..bands).map(|i| eq_clean_full.power()[[m, i]]).sum())
        .collect();
    let gn: Vec<f64> = (0..frames)
        .map(|m| (0..bands).map(|i| bark_est_full.power()[[m, i]]).sum())
        .collect();
    let gains = compute_gains(&gc, &gn, cfg);

    let loud_clean = loudness(&eq_clean_full, table)?;
    let loud_est = loudness(&eq_est_full, table)?;
    let active_clean = Array2::from_shape_fn((frames, bands), |(m, i)| {
        eq_clean_full.power()[[m, i]] > table.abs_threshold[i]
    });
    let active_est = Array2::from_shape_fn((frames, bands), |(m, i)| {
        eq_est_full.power()[[m, i]] > table.abs_threshold[i]
    });

    let d = raw_disturbance(&loud_clean, &loud_est, cfg)?;
    let mut branch_a = Array2::from_elem((frames, bands), false);
    let mut branch_b = Array2::from_elem((frames, bands), false);
    let mut clean_min = Array2::from_elem((frames, bands), false);
    let mut h = Array2::<f64>::zeros((frames, bands));
    let mut h_state = Array2::<i8>::zeros((frames, bands));
    for m in 0..frames {
        for i in 0..bands {
            let cell = disturbance_cell(
                loud_clean.values()[[m, i]],
                loud_est.values()[[m, i]],
                cfg.dead_zone_factor,
            );
            branch_a[[m, i]] = cell.branch_a;
            branch_b[[m, i]] = cell.branch_b;
            clean_min[[m, i]] = cell.clean_min;
            let asym = asym_cell(
                bark_est_full.power()[[m, i]],
                bark_clean_full.power()[[m, i]],
                cfg,
            );
            h[[m, i]] = asym.h;
            h_state[[m, i]] = asym.state;
        }
    }

    let total_w = table.total_outer_weight();
    let mut sq_sym = Vec::with_capacity(frames);
    let mut sq_asym = Vec::with_capacity(frames);
    let mut fd = Vec::with_capacity(frames);
    let mut afd = Vec::with_capacity(frames);
    for m in 0..frames {
        let mut s = 0.0;
        let mut a = 0.0;
        for i in 0..bands {
            let wd = table.weight_inner[i] * d[[m, i]];
            s += wd * wd;
            let wdh = wd * h[[m, i]];
            a += wdh * wdh;
        }
        sq_sym.push(s);
        sq_asym.push(a);
        fd.push((total_w * s).sqrt());
        afd.push((total_w * a).sqrt());
    }

    let (d_sym, mean6_sym, psqm_sym) = two_stage_internals(&fd, cfg);
    let (d_asym, mean6_asym, psqm_asym) = two_stage_internals(&afd, cfg);
    let score = cfg.score_base - cfg.sym_weight * d_sym - cfg.asym_weight * d_asym;

    let mut trace = BranchTrace::new();
    for v in bark_est_full.audible() {
        trace.push(*v);
    }
    for v in &ratio_clipped {
        trace.push(*v);
    }
    for v in &gains.clip_state {
        trace.push_i8(*v);
    }
    for v in &active_clean {
        trace.push(*v);
    }
    for v in &active_est {
        trace.push(*v);
    }
    for m in 0..frames {
        for i in 0..bands {
            trace.push(branch_a[[m, i]]);
            trace.push(branch_b[[m, i]]);
            trace.push(clean_min[[m, i]]);
            trace.push_i8(h_state[[m, i]]);
        }
    }

    Ok(PesqForward {
        score,
        d_sym,
        d_asym,
        trace: trace.value(),
        frames,
        bands,
        bins,
        est_len: estimate.len(),
        band,
        est_spec_re: est_spec.values().mapv(|v| v.re),
        est_spec_im: est_spec.values().mapv(|v| v.im),
        power_raw: est_power.values().clone(),
        align_scale,
        band_mean: mean_est,
        bark_est: bark_est_full.power().clone(),
        audible_est: bark_est_full.audible().clone(),
        bark_clean: bark_clean_full.power().clone(),
        pc,
        ratio_clipped,
        eq_clean: eq_clean_full.power().clone(),
        gain_applied: gains.applied,
        gain_clip_state: gains.clip_state,
        gc,
        gn,
        eq_est: eq_est_full.power().clone(),
        active_clean,
        active_est,
        d,
        branch_a,
        branch_b,
        clean_min,
        h,
        h_state,
        sq_sym,
        sq_asym,
        fd,
        afd,
        mean6_sym,
        psqm_sym,
        mean6_asym,
        psqm_asym,
    })
}

/// Gradient of `dscore * score` with respect to the estimate's samples.
pub(crate) fn pesq_backward(
    fwd: &PesqForward,
    stft_cfg: &StftConfig,
    cfg: &PesqConfig,
    table: &BarkTable,
    dscore: f64,
) -> Vec<f64> {
    let frames = fwd.frames;
    let bands = fwd.bands;
    let bins = fwd.bins;
    let total_w = table.total_outer_weight();

    // Aggregation: score -> per-frame disturbances.
    let mut d_fd = vec![0.0; frames];
    let mut d_afd = vec![0.0; frames];
    for (series, agg, mean6, psqm, out) in [
        (&fwd.fd, fwd.d_sym, &fwd.mean6_sym, &fwd.psqm_sym, &mut d_fd),
        (
            &fwd.afd,
            fwd.d_asym,
            &fwd.mean6_asym,
            &fwd.psqm_asym,
            &mut d_afd,
        ),
    ] {
        let weight = if std::ptr::eq(series, &fwd.fd) {
            cfg.sym_weight
        } else {
            cfg.asym_weight
        };
        let d_agg = -weight * dscore;
        let windows = window_layout(frames, cfg);
        let s = windows.len() as f64;
        let quad_denom = (agg * agg + GRAD_EPS).sqrt();
        for (w, &(lo, hi)) in windows.iter().enumerate() {
            let d_psqm = d_agg * psqm[w] / (s * quad_denom);
            let d_mean6 = d_psqm * (1.0 / 6.0) * (mean6[w] + GRAD_EPS).powf(-5.0 / 6.0);
            let count = (hi - lo) as f64;
            for m in lo..hi {
                out[m] += d_mean6 * 6.0 * series[m].powi(5) / count;
            }
        }
    }

    // Frame norms -> raw disturbance and asymmetry factor.
    let mut d_d = Array2::<f64>::zeros((frames, bands));
    let mut d_h = Array2::<f64>::zeros((frames, bands));
    for m in 0..frames {
        let d_sq_sym = d_fd[m] * total_w / (2.0 * (total_w * fwd.sq_sym[m] + GRAD_EPS).sqrt());
        let d_sq_asym = d_afd[m] * total_w / (2.0 * (total_w * fwd.sq_asym[m] + GRAD_EPS).sqrt());
        for i in 0..bands {
            let w2 = table.weight_inner[i] * table.weight_inner[i];
            let dv = fwd.d[[m, i]];
            let hv = fwd.h[[m, i]];
            d_d[[m, i]] += d_sq_sym * 2.0 * w2 * dv;
            d_d[[m, i]] += d_sq_asym * 2.0 * w2 * dv * hv * hv;
            d_h[[m, i]] += d_sq_asym * 2.0 * w2 * dv * dv * hv;
        }
    }

    // Dead-zone branches -> loudness grids.
    let mut d_loud_clean = Array2::<f64>::zeros((frames, bands));
    let mut d_loud_est = Array2::<f64>::zeros((frames, bands));
    let dz = cfg.dead_zone_factor;
    for m in 0..frames {
        for i in 0..bands {
            let g = d_d[[m, i]];
            if g == 0.0 {
                continue;
            }
            let sel_c = if fwd.clean_min[[m, i]] { 1.0 } else { 0.0 };
            if fwd.branch_a[[m, i]] {
                d_loud_clean[[m, i]] += g * (1.0 - dz * sel_c);
                d_loud_est[[m, i]] += g * (-1.0 - dz * (1.0 - sel_c));
            }
            if fwd.branch_b[[m, i]] {
                d_loud_clean[[m, i]] += g * (1.0 + dz * sel_c);
                d_loud_est[[m, i]] += g * (-1.0 + dz * (1.0 - sel_c));
            }
        }
    }

    // Loudness -> equalized band powers.
    let mut d_eq_clean = Array2::<f64>::zeros((frames, bands));
    let mut d_eq_est = Array2::<f64>::zeros((frames, bands));
    for m in 0..frames {
        for i in 0..bands {
            if fwd.active_clean[[m, i]] {
                d_eq_clean[[m, i]] += d_loud_clean[[m, i]]
                    * loudness_cell_deriv(
                        fwd.eq_clean[[m, i]],
                        table.abs_threshold[i],
                        table.loudness_scale[i],
                        table.zwicker_power,
                    );
            }
            if fwd.active_est[[m, i]] {
                d_eq_est[[m, i]] += d_loud_est[[m, i]]
                    * loudness_cell_deriv(
                        fwd.eq_est[[m, i]],
                        table.abs_threshold[i],
                        table.loudness_scale[i],
                        table.zwicker_power,
                    );
            }
        }
    }

    // Gain equalization: eq_est = gain_m * bark_est.
    let mut d_bark_est = Array2::<f64>::zeros((frames, bands));
    let mut d_gain_applied = vec![0.0; frames];
    for m in 0..frames {
        for i in 0..bands {
            d_gain_applied[m] += d_eq_est[[m, i]] * fwd.bark_est[[m, i]];
            d_bark_est[[m, i]] += d_eq_est[[m, i]] * fwd.gain_applied[m];
        }
    }

    // Clip, then the smoothing recursion, then the ratio.
    let mut d_sigma = vec![0.0; frames];
    for m in 0..frames {
        if fwd.gain_clip_state[m] == 0 {
            d_sigma[m] = d_gain_applied[m];
        }
    }
    let mut d_r = vec![0.0; frames];
    for m in (1..frames).rev() {
        d_r[m] += cfg.smoothing.1 * d_sigma[m];
        d_sigma[m - 1] += cfg.smoothing.0 * d_sigma[m];
    }
    d_r[0] += d_sigma[0];

    let mut d_gc = vec![0.0; frames];
    let mut d_gn = vec![0.0; frames];
    for m in 0..frames {
        let denom = fwd.gn[m] + cfg.c2;
        d_gc[m] = d_r[m] / denom;
        d_gn[m] = -d_r[m] * (fwd.gc[m] + cfg.c2) / (denom * denom);
    }
    for m in 0..frames {
        for i in 0..bands {
            d_bark_est[[m, i]] += d_gn[m];
            d_eq_clean[[m, i]] += d_gc[m];
        }
    }

    // Frequency equalization: eq_clean = ratio_i * bark_clean (clean constant).
    let mut d_ratio = vec![0.0; bands];
    for m in 0..frames {
        for i in 0..bands {
            d_ratio[i] += d_eq_clean[[m, i]] * fwd.bark_clean[[m, i]];
        }
    }
    let mut d_pn = vec![0.0; bands];
    for i in 0..bands {
        if !fwd.ratio_clipped[i] {
            d_pn[i] = d_ratio[i] / (fwd.pc[i] + cfg.c1);
        }
    }
    for m in 0..frames {
        for i in 0..bands {
            if fwd.audible_est[[m, i]] {
                d_bark_est[[m, i]] += d_pn[i] / frames as f64;
            }
        }
    }

    // Asymmetry factor feeds straight from the raw estimate bark spectrum.
    for m in 0..frames {
        for i in 0..bands {
            if fwd.h_state[[m, i]] == 0 {
                d_bark_est[[m, i]] += d_h[[m, i]] * cfg.asym_exponent * fwd.h[[m, i]]
                    / (fwd.bark_est[[m, i]] + cfg.asym_offset);
            }
        }
    }

    // Bark banding -> aligned power bins.
    let mut d_power_aligned = Array2::<f64>::zeros((frames, bins));
    for m in 0..frames {
        for i in 0..bands {
            let lo = table.band_edges[i];
            let hi = table.band_edges[i + 1];
            let per_bin = d_bark_est[[m, i]] / (hi - lo) as f64;
            for k in lo..hi {
                d_power_aligned[[m, k]] += per_bin;
            }
        }
    }

    // Level alignment: aligned = scale * raw with scale = target / band-mean.
    let mut inner = 0.0;
    for m in 0..frames {
        for k in 0..bins {
            inner += d_power_aligned[[m, k]] * fwd.power_raw[[m, k]];
        }
    }
    let band_count = (frames * (fwd.band.1 - fwd.band.0 + 1)) as f64;
    let d_mean = -inner * fwd.align_scale / fwd.band_mean;
    let mut d_power_raw = Array2::<f64>::zeros((frames, bins));
    for m in 0..frames {
        for k in 0..bins {
            let mut g = fwd.align_scale * d_power_aligned[[m, k]];
            if k >= fwd.band.0 && k <= fwd.band.1 {
                g += d_mean / band_count;
            }
            d_power_raw[[m, k]] = g;
        }
    }

    // Power -> complex spectrum -> samples.
    let d_re = Array2::from_shape_fn((frames, bins), |(m, k)| {
        2.0 * fwd.est_spec_re[[m, k]] * d_power_raw[[m, k]]
    });
    let d_im = Array2::from_shape_fn((frames, bins), |(m, k)| {
        2.0 * fwd.est_spec_im[[m, k]] * d_power_raw[[m, k]]
    });
    stft_backward(&d_re, &d_im, stft_cfg, fwd.est_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_table() -> BarkTable {
        BarkTable::derive(16000, 32, 6).unwrap()
    }

    fn wave(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-0.5..0.5)).collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn forward_matches_public_score() {
        let stft_cfg = StftConfig::hann(32, 16).unwrap();
        let cfg = PesqConfig::default();
        let table = tiny_table();
        let clean = wave(1, 160);
        let est = wave(2, 160);
        let fwd = pesq_forward(&clean, &est, &stft_cfg, &cfg, &table).unwrap();
        let report = super::super::pesq_loss(&clean, &est, &stft_cfg, &cfg, &table).unwrap();
        assert_eq!(fwd.score, report.score);
        assert_eq!(fwd.d_sym, report.d_sym);
        assert_eq!(fwd.d_asym, report.d_asym);
    }

    #[test]
    fn gradient_matches_finite_differences_on_samples() {
        let stft_cfg = StftConfig::hann(32, 16).unwrap();
        let cfg = PesqConfig::default();
        let table = tiny_table();
        let clean = wave(3, 96);
        let est = wave(4, 96);

        let fwd = pesq_forward(&clean, &est, &stft_cfg, &cfg, &table).unwrap();
        let grad = pesq_backward(&fwd, &stft_cfg, &cfg, &table, 1.0);

        let eps = 1e-5;
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut checked = 0;
        let mut skipped = 0;
        for idx in (0..est.len()).step_by(7) {
            let perturbed = |delta: f64| {
                let mut v = est.samples().to_vec();
                v[idx] += delta;
                Waveform::new(v, 16000).unwrap()
            };
            let fp = pesq_forward(&clean, &perturbed(eps), &stft_cfg, &cfg, &table).unwrap();
            let fm = pesq_forward(&clean, &perturbed(-eps), &stft_cfg, &cfg, &table).unwrap();
            if fp.trace != fwd.trace || fm.trace != fwd.trace {
                skipped += 1;
                continue;
            }
            let fd = (fp.score - fm.score) / (2.0 * eps);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-6 * scale + 1e-12);
            let rel = (grad[idx] - fd).abs() / denom;
            assert!(
                rel < 1e-4,
                "sample {idx}: analytic {} vs fd {fd}",
                grad[idx]
            );
            checked += 1;
        }
        assert!(
            checked > 5,
            "only {checked} entries checked, {skipped} skipped"
        );
    }
}
