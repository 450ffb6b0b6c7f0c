//! Brain-like synthetic slices with dark lesion blobs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Difficulty {
    /// High lesion contrast, flat tissue, no distractors.
    Easy,
    /// Lesion-like dark tissue that is not in the mask, stronger texture, lower contrast.
    Hard,
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(Error::Config(format!("difficulty: expected easy|hard, got `{s}`"))),
        }
    }
}

/// Probability of 0, 1, 2 and 3 lesions in a slice.
pub const LESION_COUNT_WEIGHTS: [f64; 4] = [0.15, 0.45, 0.25, 0.15];

/// Pareto tail exponent of the lesion radius.
const RADIUS_TAIL: f64 = 1.3;

/// Rotated ellipse whose boundary is perturbed by three low harmonics.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub angle: f64,
    /// `(amplitude, phase)` of harmonics 2, 3 and 4.
    pub harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, cy: f64, cx: f64, radius: f64) -> Self {
        let stretch = rng.random_range(0.7..1.3);
        Self {
            cy,
            cx,
            ry: radius * stretch,
            rx: radius / stretch,
            angle: rng.random_range(0.0..PI),
            harmonics: std::array::from_fn(|_| (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI))),
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 - self.cy, x as f64 - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        let r = u.hypot(v);
        if r == 0.0 {
            return true;
        }
        let theta = v.atan2(u);
        let boundary: f64 = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, p))| a * ((k as f64 + 2.0) * theta + p).cos())
                .sum::<f64>();
        r <= boundary
    }
}

/// A generated slice with the shapes that produced its mask.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub pair: SamplePair,
    pub lesions: Vec<Blob>,
    pub distractors: Vec<Blob>,
}

struct Texture([(f64, f64, f64); 3]);

impl Texture {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        Self(std::array::from_fn(|_| {
            (
                rng.random_range(1.0..4.0) * 2.0 * PI / h as f64,
                rng.random_range(1.0..4.0) * 2.0 * PI / w as f64,
                rng.random_range(0.0..2.0 * PI),
            )
        }))
    }

    /// In `[-1, 1]`.
    fn at(&self, y: usize, x: usize) -> f64 {
        self.0.iter().map(|&(fy, fx, p)| (fy * y as f64 + fx * x as f64 + p).sin()).sum::<f64>() / 3.0
    }
}

/// Draws an index from `weights`.
fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Point inside the unit disk scaled to the brain ellipse, at most `reach` of its radius.
fn point_in_brain(rng: &mut ChaCha8Rng, brain: &Blob, reach: f64) -> (f64, f64) {
    let r = reach * rng.random_range(0.0f64..1.0).sqrt();
    let t = rng.random_range(0.0..2.0 * PI);
    ((brain.cy + r * brain.ry * t.sin()).round(), (brain.cx + r * brain.rx * t.cos()).round())
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16 as f32 / 65535.0
}

/// Sample `index` of the dataset defined by `seed`; each index has its own stream.
pub fn synth_sample(index: usize, size: (usize, usize), seed: u64, difficulty: Difficulty) -> SynthSample {
    let (h, w) = size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let side = h.min(w) as f64;

    let brain = Blob {
        cy: h as f64 / 2.0 + rng.random_range(-0.03..0.03) * h as f64,
        cx: w as f64 / 2.0 + rng.random_range(-0.03..0.03) * w as f64,
        ry: rng.random_range(0.40..0.46) * h as f64,
        rx: rng.random_range(0.38..0.45) * w as f64,
        angle: 0.0,
        harmonics: std::array::from_fn(|_| (rng.random_range(0.0..0.04), rng.random_range(0.0..2.0 * PI))),
    };
    let texture = Texture::random(&mut rng, h, w);
    let (tissue, grain, lesion_level, r_min) = match difficulty {
        Difficulty::Easy => (0.75, 0.04, 0.15, 0.05 * side),
        Difficulty::Hard => (0.62, 0.10, 0.36, 0.025 * side),
    };
    let r_min = r_min.max(1.0);
    let r_max = 0.18 * side;

    let distractors: Vec<Blob> = match difficulty {
        Difficulty::Easy => Vec::new(),
        Difficulty::Hard => (0..rng.random_range(1..=3))
            .map(|_| {
                let (cy, cx) = point_in_brain(&mut rng, &brain, 0.8);
                let r = rng.random_range(r_min..(2.0 * r_min).max(r_min + 1.0));
                Blob::random(&mut rng, cy, cx, r)
            })
            .collect(),
    };
    let count = categorical(&mut rng, &LESION_COUNT_WEIGHTS);
    let lesions: Vec<Blob> = (0..count)
        .map(|_| {
            let (cy, cx) = point_in_brain(&mut rng, &brain, 0.7);
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let r = (r_min * u.powf(-1.0 / RADIUS_TAIL)).min(r_max);
            Blob::random(&mut rng, cy, cx, r)
        })
        .collect();

    let mut mask = BinaryMask::zeros(h, w);
    let image = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        let t = texture.at(y, x);
        let mut v = if brain.contains(y, x) { tissue + grain * t } else { 0.02 };
        if distractors.iter().any(|b| b.contains(y, x)) {
            v = lesion_level + 0.05 + 0.03 * t;
        }
        if lesions.iter().any(|b| b.contains(y, x)) {
            mask.set(y, x, true);
            v = lesion_level + 0.03 * t;
        }
        quantize(v)
    });
    let pair = SamplePair::new(image, mask, format!("synth{index:04}"), 0).expect("dims match");
    SynthSample {
        pair,
        lesions,
        distractors,
    }
}

/// `n` slices of size `(h, w)`, one subject each, reproducible from `seed`.
///
/// Intensities are multiples of 1/65535 so a 16-bit PNG round trip is exact.
pub fn synth_dataset(n: usize, size: (usize, usize), seed: u64, difficulty: Difficulty) -> Result<Vec<SamplePair>> {
    let (h, w) = size;
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::IndivisibleInput { h, w, divisor: 16 });
    }
    Ok((0..n).map(|i| synth_sample(i, size, seed, difficulty).pair).collect())
}
