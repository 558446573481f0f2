//! Seeded synthetic cubes: one background material, one object material
//! filling a centered square, additive Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hsio::{BinaryMask, HyperspectralCube};
use crate::nncore::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Square side as a fraction of `min(height, width)`.
    pub square_fraction: f64,
    pub noise_sigma: f64,
    /// Minimum mean absolute gap between the two spectra.
    pub min_contrast: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 8,
            square_fraction: 0.375,
            noise_sigma: 0.02,
            min_contrast: 0.15,
        }
    }
}

impl SynthParams {
    pub fn small(size: usize, bands: usize) -> Self {
        Self {
            height: size,
            width: size,
            bands,
            ..Self::default()
        }
    }

    /// `(top, left, side)` of the salient square.
    pub fn square(&self) -> (usize, usize, usize) {
        let side = (self.square_fraction * self.height.min(self.width) as f64).round() as usize;
        let side = side.clamp(1, self.height.min(self.width));
        ((self.height - side) / 2, (self.width - side) / 2, side)
    }
}

/// A smooth spectrum in `[0.1, 0.9]`: offset plus one low-frequency sine.
fn smooth_spectrum(rng: &mut impl Rng, bands: usize) -> Vec<f64> {
    let base = rng.gen_range(0.3..0.7);
    let amp = rng.gen_range(0.05..0.2);
    let freq = rng.gen_range(0.3..1.2);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..bands)
        .map(|b| {
            let t = b as f64 / bands.max(2) as f64;
            (base + amp * (std::f64::consts::TAU * freq * t + phase).sin()).clamp(0.1, 0.9)
        })
        .collect()
}

fn mean_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Deterministic in `(params, seed)`. Returns the cube and its square mask.
pub fn synthetic_cube(params: &SynthParams, seed: u64) -> Result<(HyperspectralCube, BinaryMask)> {
    let (h, w, bands) = (params.height, params.width, params.bands);
    if h < 2 || w < 2 || bands < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic cube {h}x{w}x{bands} too small"
        )));
    }
    if !(params.noise_sigma >= 0.0) || !(params.square_fraction > 0.0 && params.square_fraction < 1.0) {
        return Err(Error::InvalidArgument("bad noise or square fraction".into()));
    }
    let mut rng = seeded_rng(seed);
    let background = smooth_spectrum(&mut rng, bands);
    let object = loop {
        let s = smooth_spectrum(&mut rng, bands);
        if mean_gap(&s, &background) >= params.min_contrast {
            break s;
        }
    };
    let (top, left, side) = params.square();
    let mask: Vec<bool> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            (top..top + side).contains(&r) && (left..left + side).contains(&c)
        })
        .collect();
    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(bands * h * w);
    for b in 0..bands {
        for &inside in &mask {
            let v = if inside { object[b] } else { background[b] };
            data.push(v + noise.sample(&mut rng));
        }
    }
    Ok((
        HyperspectralCube::new(h, w, bands, data)?,
        BinaryMask::new(h, w, mask)?,
    ))
}
