use criterion::{criterion_group, criterion_main, Criterion};
use specfit_core::*;

struct Setup {
    stft_cfg: StftConfig,
    pesq_cfg: PesqConfig,
    table: BarkTable,
    clean: Waveform,
    noise: Waveform,
    noisy: Waveform,
    noisy_spec: ComplexSpectrogram,
    mask: MaskGrid,
}

fn setup() -> Setup {
    let stft_cfg = StftConfig::default_16k();
    let clean = synth::harmonic_voice(1, 8000, 16000);
    let noise_src = synth::white_noise(2, 16000, 16000, 0.4);
    let (noisy, noise) = mix_at_snr(&clean, &noise_src, MixSpec::new(0.0, 3).unwrap()).unwrap();
    let noisy_spec = stft(&noisy, &stft_cfg).unwrap();
    let clean_spec = stft(&clean, &stft_cfg).unwrap();
    let mask = iam_label(&clean_spec, &noisy_spec, &MaskConfig::default()).unwrap();
    Setup {
        stft_cfg,
        pesq_cfg: PesqConfig::default(),
        table: BarkTable::wideband_16k().clone(),
        clean,
        noise,
        noisy,
        noisy_spec,
        mask,
    }
}

fn bench_transforms(c: &mut Criterion) {
    let s = setup();
    c.bench_function("stft_half_second", |b| {
        b.iter(|| stft(&s.noisy, &s.stft_cfg).unwrap())
    });
    c.bench_function("istft_half_second", |b| {
        b.iter(|| istft_gl(&s.noisy_spec, &s.stft_cfg, s.noisy.len()).unwrap())
    });
    c.bench_function("griffin_lim_4_iters", |b| {
        let mag = s.noisy_spec.magnitude();
        let phase = s.noisy_spec.phase();
        b.iter(|| griffin_lim_iterate(&mag, &phase, &s.stft_cfg, 4, 16000).unwrap())
    });
}

fn bench_losses(c: &mut Criterion) {
    let s = setup();
    c.bench_function("si_sdr_half_second", |b| {
        b.iter(|| si_sdr(&s.clean, &s.noisy).unwrap())
    });
    c.bench_function("pesq_loss_half_second", |b| {
        b.iter(|| pesq_loss(&s.clean, &s.noisy, &s.stft_cfg, &s.pesq_cfg, &s.table).unwrap())
    });
}

fn bench_gradients(c: &mut Criterion) {
    let s = setup();
    let ctx = FitContext {
        stft: &s.stft_cfg,
        pesq: &s.pesq_cfg,
        table: &s.table,
    };
    for kind in [LossKind::Sdr, LossKind::SdrPesq] {
        let cfg = FitConfig {
            loss_kind: kind,
            ..FitConfig::default()
        };
        c.bench_function(&format!("loss_and_grad_{}", kind.name()), |b| {
            b.iter(|| {
                loss_and_grad(&s.mask, &s.noisy_spec, &s.clean, &s.noise, &cfg, &ctx).unwrap()
            })
        });
    }
}

criterion_group!(transforms, bench_transforms);
criterion_group!(losses, bench_losses);
criterion_group!(gradients, bench_gradients);
criterion_main!(transforms, losses, gradients);
