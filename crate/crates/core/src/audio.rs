//! PCM audio I/O and SNR-controlled mixing.
//!
//! Only 16-bit PCM mono WAV is supported; anything else is rejected so the
//! round trip through disk stays bit-exact within one LSB.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting empty or non-finite input.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("waveform must not be empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite sample at index {idx}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Shortens the waveform to `len` samples.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.samples.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot truncate length {} to {len}",
                self.samples.len()
            )));
        }
        Waveform::new(self.samples[..len].to_vec(), self.sample_rate)
    }
}

/// How a synthetic mixture is produced.
#[derive(Debug, Clone, Copy)]
pub struct MixSpec {
    /// Desired clean-to-noise ratio in dB; clean is kept fixed and noise scaled.
    pub target_snr_db: f64,
    /// Seed for the noise crop offset.
    pub seed: u64,
}

impl MixSpec {
    pub fn new(target_snr_db: f64, seed: u64) -> Result<Self> {
        if !target_snr_db.is_finite() {
            return Err(Error::InvalidConfig("target SNR must be finite".into()));
        }
        Ok(Self {
            target_snr_db,
            seed,
        })
    }
}

/// Reads a 16-bit PCM mono WAV file, scaling samples to [-1, 1] by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedBitDepth(spec.bits_per_sample));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(map_hound)?;
    let samples: Vec<f64> = samples.iter().map(|&s| f64::from(s) / PCM_SCALE).collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a waveform as 16-bit PCM mono WAV.
///
/// With `clamp` disabled any sample outside [-1, 1] is an error; with it
/// enabled samples are clipped to the representable range first.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>, clamp: bool) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for (index, &value) in w.samples.iter().enumerate() {
        if !clamp && !(-1.0..=1.0).contains(&value) {
            return Err(Error::Overrange { index, value });
        }
        let scaled = (value * PCM_SCALE).round().clamp(-32768.0, 32767.0);
        writer.write_sample(scaled as i16).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)?;
    Ok(())
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::MalformedWav(msg.to_string()),
        hound::Error::TooWide => Error::MalformedWav("sample too wide for format".into()),
        other => Error::MalformedWav(other.to_string()),
    }
}

/// Scales `noise` so that `clean + scaled_noise` sits at the requested SNR,
/// returning the mixture and the scaled noise that went into it.
///
/// `noise` must be at least as long as `clean`; a seeded random offset picks
/// the crop so mixtures are reproducible.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    spec: MixSpec,
) -> Result<(Waveform, Waveform)> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate,
            right: noise.sample_rate,
        });
    }
    if noise.len() < clean.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: noise.len(),
        });
    }
    let clean_energy = clean.energy();
    if clean_energy <= 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_offset = noise.len() - clean.len();
    let offset = if max_offset == 0 {
        0
    } else {
        rng.random_range(0..=max_offset)
    };
    let crop = &noise.samples[offset..offset + clean.len()];
    let noise_energy: f64 = crop.iter().map(|s| s * s).sum();
    if noise_energy <= 0.0 {
        return Err(Error::ZeroEnergy("noise segment"));
    }

    // 10 log10(E_clean / (s^2 E_noise)) = target  =>  s = sqrt(E_clean / (E_noise 10^(t/10)))
    let scale = (clean_energy / (noise_energy * 10f64.powf(spec.target_snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = crop.iter().map(|s| s * scale).collect();
    let noisy: Vec<f64> = clean
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(c, n)| c + n)
        .collect();

    Ok((
        Waveform::new(noisy, clean.sample_rate)?,
        Waveform::new(scaled_noise, clean.sample_rate)?,
    ))
}

/// Achieved SNR of a (clean, scaled noise) pair in dB.
pub fn achieved_snr_db(clean: &Waveform, scaled_noise: &Waveform) -> Result<f64> {
    let ce = clean.energy();
    let ne = scaled_noise.energy();
    if ce <= 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    if ne <= 0.0 {
        return Err(Error::ZeroEnergy("noise segment"));
    }
    Ok(10.0 * (ce / ne).log10())
}
