use approx::assert_abs_diff_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{mix_at_snr, MixSpec};
use crate::masks::MaskKind;
use crate::pesq::BarkTable;
use crate::synth;

use super::*;

fn tiny_table() -> BarkTable {
    BarkTable::derive(16000, 16, 4).unwrap()
}

fn tiny_stft() -> StftConfig {
    StftConfig::hann(16, 8).unwrap()
}

struct Instance {
    stft: StftConfig,
    pesq: PesqConfig,
    table: BarkTable,
    clean: Waveform,
    noise: Waveform,
    noisy: Waveform,
}

impl Instance {
    fn new(seed: u64, len: usize) -> Self {
        let stft = tiny_stft();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let smooth = |rng: &mut ChaCha8Rng| {
            let mut acc = 0.0;
            let samples: Vec<f64> = (0..len)
                .map(|_| {
                    acc = 0.7 * acc + 0.3 * rng.random_range(-1.0..1.0);
                    acc
                })
                .collect();
            Waveform::new(samples, 16000).unwrap()
        };
        let clean = smooth(&mut rng);
        let noise = smooth(&mut rng);
        let noisy = Waveform::new(
            clean
                .samples()
                .iter()
                .zip(noise.samples())
                .map(|(c, n)| c + n)
                .collect(),
            16000,
        )
        .unwrap();
        Self {
            stft,
            pesq: PesqConfig::default(),
            table: tiny_table(),
            clean,
            noise,
            noisy,
        }
    }

    fn ctx(&self) -> FitContext<'_> {
        FitContext {
            stft: &self.stft,
            pesq: &self.pesq,
            table: &self.table,
        }
    }

    fn mask(&self, seed: u64) -> (MaskGrid, ComplexSpectrogram) {
        let spec = stft(&self.noisy, &self.stft).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = MaskGrid::new(
            Array2::from_shape_fn(spec.dim(), |_| rng.random_range(0.3..1.4)),
            MaskKind::Free,
        )
        .unwrap();
        (mask, spec)
    }
}

fn relative_errors(
    analytic: &Array2<f64>,
    fd: &Array2<f64>,
    crossed: &Array2<bool>,
) -> (f64, usize, usize) {
    let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for ((a, f), c) in analytic.iter().zip(fd.iter()).zip(crossed.iter()) {
        if *c {
            skipped += 1;
            continue;
        }
        let denom = a.abs().max(f.abs()).max(1e-6 * scale + 1e-12);
        max_rel = max_rel.max((a - f).abs() / denom);
        checked += 1;
    }
    (max_rel, checked, skipped)
}

#[test]
fn finite_difference_on_quadratic_toy() {
    let mask = MaskGrid::new(Array2::zeros((2, 3)), MaskKind::Free).unwrap();
    let grad = fd_over_mask(&mask, 1e-5, |m| {
        Ok(m.values().iter().map(|v| (v - 1.0) * (v - 1.0)).sum())
    })
    .unwrap();
    for g in grad.iter() {
        assert_abs_diff_eq!(*g, -2.0, epsilon = 1e-8);
    }
}

#[test]
fn zero_epsilon_is_rejected() {
    let inst = Instance::new(1, 40);
    let (mask, spec) = inst.mask(2);
    let cfg = FitConfig::default();
    assert!(fd_gradient(
        &mask,
        &spec,
        &inst.clean,
        &inst.noise,
        &cfg,
        &inst.ctx(),
        0.0
    )
    .is_err());
}

#[test]
fn every_loss_kind_matches_finite_differences() {
    let inst = Instance::new(3, 40);
    let (mask, spec) = inst.mask(4);
    for kind in [
        LossKind::Sdr,
        LossKind::SnrMse,
        LossKind::SdrMse,
        LossKind::SdrPesq,
        LossKind::Pesq,
    ] {
        let cfg = FitConfig {
            loss_kind: kind,
            ..FitConfig::default()
        };
        let report =
            loss_and_grad(&mask, &spec, &inst.clean, &inst.noise, &cfg, &inst.ctx()).unwrap();
        let analytic = report.gradient.unwrap();
        let (fd, crossed) = fd_gradient_checked(
            &mask,
            &spec,
            &inst.clean,
            &inst.noise,
            &cfg,
            &inst.ctx(),
            1e-4,
        )
        .unwrap();
        let (max_rel, checked, skipped) = relative_errors(&analytic, &fd, &crossed);
        assert!(
            max_rel < 1e-4,
            "{}: max relative error {max_rel:.3e} ({checked} checked, {skipped} skipped)",
            kind.name()
        );
        assert!(checked > 0, "{}: nothing checked", kind.name());
    }
}

#[test]
fn unrolled_gl_gradient_matches_finite_differences() {
    let inst = Instance::new(5, 40);
    let (mask, spec) = inst.mask(6);
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        ..FitConfig::default()
    };
    let ctx = inst.ctx();
    let report = loss_and_grad_gl(&mask, &spec, &inst.clean, &inst.noise, &cfg, &ctx, 3).unwrap();
    let analytic = report.gradient.unwrap();

    let fd = fd_over_mask(&mask, 1e-5, |m| {
        Ok(super::forward(m, &spec, &inst.clean, &inst.noise, &cfg, &ctx, 3)?.value)
    })
    .unwrap();
    let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    for (a, f) in analytic.iter().zip(fd.iter()) {
        let denom = a.abs().max(f.abs()).max(1e-6 * scale + 1e-12);
        assert!(
            (a - f).abs() / denom < 1e-4,
            "gl-unrolled gradient mismatch: {a} vs {f}"
        );
    }
}

#[test]
fn perfect_reconstruction_has_vanishing_sdr_gradient() {
    // Noise-free "mixture": the identity mask reconstructs the clean signal,
    // SI-SDR saturates at the clamp and the gradient is zero.
    let stft_cfg = tiny_stft();
    let clean = synth::sine(1000.0, 40, 16000, 0.4);
    let aligned = clean.truncated(stft_cfg.aligned_len(40).unwrap()).unwrap();
    let spec = stft(&aligned, &stft_cfg).unwrap();
    let mask = MaskGrid::new(Array2::from_elem(spec.dim(), 1.0), MaskKind::Free).unwrap();
    let zero_noise = Waveform::new(vec![1e-9; aligned.len()], 16000).unwrap();

    let inst_table = tiny_table();
    let pesq = PesqConfig::default();
    let ctx = FitContext {
        stft: &stft_cfg,
        pesq: &pesq,
        table: &inst_table,
    };
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        ..FitConfig::default()
    };
    let report = loss_and_grad(&mask, &spec, &aligned, &zero_noise, &cfg, &ctx).unwrap();
    assert_abs_diff_eq!(report.value, 60.0, epsilon = 1e-12);
    let norm: f64 = report
        .gradient
        .unwrap()
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    assert!(norm < 1e-12, "gradient norm {norm}");
}

#[test]
fn pesq_loss_kind_at_identity_scores_base() {
    let inst = Instance::new(7, 40);
    let stft_cfg = &inst.stft;
    let aligned = inst
        .clean
        .truncated(stft_cfg.aligned_len(inst.clean.len()).unwrap())
        .unwrap();
    let spec = stft(&aligned, stft_cfg).unwrap();
    let mask = MaskGrid::new(Array2::from_elem(spec.dim(), 1.0), MaskKind::Free).unwrap();
    let cfg = FitConfig {
        loss_kind: LossKind::Pesq,
        ..FitConfig::default()
    };
    let report = loss_and_grad(&mask, &spec, &aligned, &aligned, &cfg, &inst.ctx()).unwrap();
    assert_abs_diff_eq!(report.value, 4.5, epsilon = 1e-9);
    assert!(report.gradient.unwrap().iter().all(|g| g.is_finite()));
}

#[test]
fn ascent_keeps_loss_non_decreasing() {
    let clean = synth::harmonic_voice(11, 400, 16000);
    let noise = synth::white_noise(12, 800, 16000, 0.4);
    let (noisy, scaled) = mix_at_snr(&clean, &noise, MixSpec::new(0.0, 1).unwrap()).unwrap();

    let stft_cfg = tiny_stft();
    let pesq = PesqConfig::default();
    let table = tiny_table();
    let ctx = FitContext {
        stft: &stft_cfg,
        pesq: &pesq,
        table: &table,
    };
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        steps: 10,
        step_size: 1e-3,
        mask_init: MaskInit::Ones,
        clamp: Some((-2.0, 3.0)),
        pesq_weight: 1.0,
    };
    let result = fit_mask(&noisy, &clean, &scaled, &cfg, &ctx).unwrap();
    assert_eq!(result.outcome, FitOutcome::Completed);
    assert_eq!(result.trajectory.len(), 11);
    for pair in result.trajectory.windows(2) {
        assert!(
            pair[1].loss >= pair[0].loss - 1e-12,
            "loss decreased: {pair:?}"
        );
    }
}

#[test]
fn single_step_moves_by_exactly_step_size() {
    let inst = Instance::new(13, 64);
    let ctx = inst.ctx();
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        steps: 1,
        step_size: 1e-4,
        mask_init: MaskInit::Ones,
        clamp: None,
        pesq_weight: 1.0,
    };
    let result = fit_mask(&inst.noisy, &inst.clean, &inst.noise, &cfg, &ctx).unwrap();

    let aligned = ctx.stft.aligned_len(inst.noisy.len()).unwrap();
    let noisy_spec = stft(&inst.noisy.truncated(aligned).unwrap(), ctx.stft).unwrap();
    let clean_t = inst.clean.truncated(aligned).unwrap();
    let noise_t = inst.noise.truncated(aligned).unwrap();
    let init = MaskGrid::new(Array2::from_elem(noisy_spec.dim(), 1.0), MaskKind::Free).unwrap();
    let report = loss_and_grad(&init, &noisy_spec, &clean_t, &noise_t, &cfg, &ctx).unwrap();
    let expect = init.values() + &(report.gradient.unwrap() * cfg.step_size);
    assert_eq!(result.mask.values(), &expect);
}

#[test]
fn zero_steps_is_rejected() {
    let inst = Instance::new(14, 64);
    let cfg = FitConfig {
        steps: 0,
        ..FitConfig::default()
    };
    assert!(fit_mask(&inst.noisy, &inst.clean, &inst.noise, &cfg, &inst.ctx()).is_err());
}

#[test]
fn trajectories_are_deterministic_and_gl1_matches_fit_mask() {
    let clean = synth::harmonic_voice(15, 300, 16000);
    let noise = synth::white_noise(16, 600, 16000, 0.3);
    let (noisy, scaled) = mix_at_snr(&clean, &noise, MixSpec::new(5.0, 2).unwrap()).unwrap();

    let stft_cfg = tiny_stft();
    let pesq = PesqConfig::default();
    let table = tiny_table();
    let ctx = FitContext {
        stft: &stft_cfg,
        pesq: &pesq,
        table: &table,
    };
    let cfg = FitConfig {
        loss_kind: LossKind::SdrPesq,
        steps: 5,
        step_size: 1e-3,
        mask_init: MaskInit::Iam,
        clamp: Some((-2.0, 3.0)),
        pesq_weight: 1.0,
    };

    let a = fit_mask(&noisy, &clean, &scaled, &cfg, &ctx).unwrap();
    let b = fit_mask(&noisy, &clean, &scaled, &cfg, &ctx).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.mask.values(), b.mask.values());

    let c = fit_with_gl_iterations(&noisy, &clean, &scaled, &cfg, &ctx, 1).unwrap();
    assert_eq!(a.trajectory, c.trajectory);
    assert_eq!(a.mask.values(), c.mask.values());
}

#[test]
fn gl_iteration_sweep_stays_finite() {
    let clean = synth::harmonic_voice(17, 300, 16000);
    let noise = synth::white_noise(18, 600, 16000, 0.3);
    let (noisy, scaled) = mix_at_snr(&clean, &noise, MixSpec::new(0.0, 3).unwrap()).unwrap();

    let stft_cfg = tiny_stft();
    let pesq = PesqConfig::default();
    let table = tiny_table();
    let ctx = FitContext {
        stft: &stft_cfg,
        pesq: &pesq,
        table: &table,
    };
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        steps: 3,
        step_size: 1e-3,
        mask_init: MaskInit::Ones,
        clamp: Some((-2.0, 3.0)),
        pesq_weight: 1.0,
    };
    for gl in 1..=4 {
        let result = fit_with_gl_iterations(&noisy, &clean, &scaled, &cfg, &ctx, gl).unwrap();
        assert_eq!(result.outcome, FitOutcome::Completed);
        assert!(result
            .trajectory
            .iter()
            .all(|r| r.loss.is_finite() && r.si_sdr.is_finite() && r.pesq.is_finite()));
    }
}

#[test]
fn sdr_fit_improves_over_noisy_input() {
    let clean = synth::harmonic_voice(19, 600, 16000);
    let noise = synth::white_noise(20, 1200, 16000, 0.4);
    let (noisy, scaled) = mix_at_snr(&clean, &noise, MixSpec::new(0.0, 4).unwrap()).unwrap();

    let stft_cfg = tiny_stft();
    let pesq = PesqConfig::default();
    let table = tiny_table();
    let ctx = FitContext {
        stft: &stft_cfg,
        pesq: &pesq,
        table: &table,
    };
    let cfg = FitConfig {
        loss_kind: LossKind::Sdr,
        steps: 80,
        step_size: 0.3,
        mask_init: MaskInit::Ones,
        clamp: Some((-2.0, 3.0)),
        pesq_weight: 1.0,
    };
    let result = fit_mask(&noisy, &clean, &scaled, &cfg, &ctx).unwrap();
    let first = result.trajectory.first().unwrap();
    let last = result.trajectory.last().unwrap();
    assert!(
        last.si_sdr > first.si_sdr + 3.0,
        "no improvement: {} -> {}",
        first.si_sdr,
        last.si_sdr
    );
}

#[test]
fn istft_backward_is_the_exact_adjoint() {
    use num_complex::Complex64;
    let cfg = tiny_stft();
    let frames = 6usize;
    let length = 40usize;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let s = ComplexSpectrogram::new(
        Array2::from_shape_fn((frames, cfg.bins()), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        }),
        16000,
    )
    .unwrap();
    let u: Vec<f64> = (0..length).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (d_re, d_im) = crate::spectral::istft_gl_backward(&u, &cfg, frames);
    let inner = |spec: &ComplexSpectrogram| -> f64 {
        let z = crate::spectral::istft_gl(spec, &cfg, length).unwrap();
        z.samples().iter().zip(&u).map(|(a, b)| a * b).sum()
    };
    let eps = 1e-6;
    for m in 0..frames {
        for k in 0..cfg.bins() {
            for part in 0..2 {
                let delta = if part == 0 {
                    Complex64::new(eps, 0.0)
                } else {
                    Complex64::new(0.0, eps)
                };
                let mut plus = s.values().clone();
                plus[[m, k]] += delta;
                let mut minus = s.values().clone();
                minus[[m, k]] -= delta;
                let fp = inner(&ComplexSpectrogram::new(plus, 16000).unwrap());
                let fm = inner(&ComplexSpectrogram::new(minus, 16000).unwrap());
                let fd = (fp - fm) / (2.0 * eps);
                let an = if part == 0 {
                    d_re[[m, k]]
                } else {
                    d_im[[m, k]]
                };
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-9) < 1e-5,
                    "({m},{k}) part {part}: {an} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn reconstruction_backward_is_the_exact_adjoint() {
    let cfg = tiny_stft();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let w = Waveform::new(
        (0..40).map(|_| rng.random_range(-1.0..1.0)).collect(),
        16000,
    )
    .unwrap();
    let spec = stft(&w, &cfg).unwrap();
    let mask = MaskGrid::new(
        Array2::from_shape_fn(spec.dim(), |_| rng.random_range(0.3..1.4)),
        MaskKind::Free,
    )
    .unwrap();
    let u: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut trace = crate::trace::BranchTrace::new();
    let chain = chain::reconstruct(&mask, &spec, &cfg, 40, 1, &mut trace).unwrap();
    let d_mask = chain::backward(&chain, &u, &mask, &spec, &cfg);

    let inner = |mask: &MaskGrid| -> f64 {
        let mut trace = crate::trace::BranchTrace::new();
        let c = chain::reconstruct(mask, &spec, &cfg, 40, 1, &mut trace).unwrap();
        c.signal.samples().iter().zip(&u).map(|(a, b)| a * b).sum()
    };
    let fd = fd_over_mask(&mask, 1e-6, |m| Ok(inner(m))).unwrap();
    for (a, f) in d_mask.iter().zip(fd.iter()) {
        assert!(
            (a - f).abs() / a.abs().max(f.abs()).max(1e-9) < 1e-5,
            "{a} vs {f}"
        );
    }
}
