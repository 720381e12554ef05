#![allow(dead_code)]

use std::path::PathBuf;

use hvalign::imagefilter::{bin_radius, Fft2d};
use hvalign::{ConditionResponseMatrix, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bits(s: &str) -> Vec<bool> {
    s.bytes().map(|b| b == b'1').collect()
}

/// Rows with a per-row accuracy drawn uniformly, so some rows are close to
/// constant.
pub fn random_rows(rng: &mut ChaCha8Rng, observers: usize, stimuli: usize) -> Vec<Vec<bool>> {
    (0..observers)
        .map(|_| {
            let acc: f64 = rng.random();
            (0..stimuli).map(|_| rng.random_bool(acc)).collect()
        })
        .collect()
}

pub fn random_matrix(
    rng: &mut ChaCha8Rng,
    experiment: &str,
    condition: &str,
    observers: usize,
    stimuli: usize,
) -> ConditionResponseMatrix {
    ConditionResponseMatrix::from_rows(experiment, condition, random_rows(rng, observers, stimuli))
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> Image {
    Image::load(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub const PHOTOS: [&str; 4] = ["astronaut.png", "camera.png", "chelsea.png", "coffee.png"];

/// Noise with amplitude spectrum `1 / r^exponent`, rescaled to mean 0.5 and
/// standard deviation 0.15, then clamped.
pub fn power_law_noise(seed: u64, size: usize, channels: usize, exponent: f64) -> Image {
    let mut rng = rng(seed);
    let fft = Fft2d::new(size, size);
    let mut data = Vec::with_capacity(size * size * channels);
    for _ in 0..channels {
        let white: Vec<f64> = (0..size * size).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut spectrum = fft.forward_real(&white);
        for u in 0..size {
            for v in 0..size {
                let r = bin_radius(u, v, size, size);
                spectrum[u * size + v] *= if r == 0.0 { 0.0 } else { r.powf(-exponent) };
            }
        }
        fft.inverse(&mut spectrum);
        let plane: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let sd = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        data.extend(plane.iter().map(|v| (0.5 + 0.15 * (v - mean) / sd).clamp(0.0, 1.0)));
    }
    Image::from_data(size, size, channels, data)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
