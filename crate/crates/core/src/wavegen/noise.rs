use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Result, WaveError, WavefieldDataset};

/// Adds white Gaussian noise so that `10·log10(P_signal / P_noise)` equals
/// `snr_db`, with powers taken as mean squares over the whole stack.
///
/// `snr_db = +∞` returns the dataset unchanged.
pub fn add_noise(dataset: &WavefieldDataset, snr_db: f64, seed: u64) -> Result<WavefieldDataset> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(WaveError::NonFiniteInput(format!("snr_db = {snr_db}")));
    }
    dataset.validate()?;
    if snr_db == f64::INFINITY {
        return Ok(dataset.clone());
    }
    let power = mean_square(dataset.snapshots.iter().copied());
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut out = dataset.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Rescale the realization so the stack-level SNR is met exactly.
        let noise: Vec<f64> = (0..out.snapshots.len()).map(|_| normal.sample(&mut rng)).collect();
        let rms = mean_square(noise.iter().copied()).sqrt();
        for (v, e) in out.snapshots.iter_mut().zip(&noise) {
            *v += sigma * e / rms;
        }
    }
    out.provenance = format!(
        "{}; noise: gaussian snr_db={snr_db} seed={seed}",
        dataset.provenance
    );
    Ok(out)
}

/// Empirical SNR of `noisy` against `clean` in dB.
pub fn measured_snr_db(clean: &WavefieldDataset, noisy: &WavefieldDataset) -> f64 {
    let signal = mean_square(clean.snapshots.iter().copied());
    let noise = mean_square(noisy.snapshots.iter().zip(clean.snapshots.iter()).map(|(a, b)| a - b));
    10.0 * (signal / noise).log10()
}

fn mean_square(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
