//! Gaussian noise, Gaussian blur, fog and contrast corruptions at five severities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tensorio::ImageTensor;

/// Versioned severity table shipped with the crate.
pub const DEFAULT_CONSTANTS: &str = include_str!("../../data/corruptions_v1.txt");

/// Per-level amplitude multiplier of the fog plasma fractal.
pub const FOG_DECAY: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    GaussianBlur,
    Fog,
    Contrast,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Fog,
        CorruptionKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown corruption {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Argument(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity, seed })
    }
}

/// A corruption with its parameter resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    GaussianNoise { sigma: f64 },
    GaussianBlur { sigma: f64 },
    Fog { strength: f64 },
    Contrast { factor: f64 },
}

/// Parsed `kind:severity = params` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionTable {
    entries: BTreeMap<(CorruptionKind, u8), Vec<f64>>,
}

impl Default for CorruptionTable {
    fn default() -> Self {
        Self::parse(DEFAULT_CONSTANTS).expect("bundled corruption constants parse")
    }
}

impl CorruptionTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Argument(format!("constants line {}: {m}: {raw:?}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (kind, severity) = key
                .trim()
                .split_once(':')
                .ok_or_else(|| bad("expected kind:severity"))?;
            let kind: CorruptionKind = kind.trim().parse()?;
            let severity: u8 = severity.trim().parse().map_err(|_| bad("bad severity"))?;
            if !(1..=5).contains(&severity) {
                return Err(bad("severity outside 1..=5"));
            }
            let params = value
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad parameter"))?;
            if params.is_empty() || params.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(bad("parameters must be finite and non-negative"));
            }
            entries.insert((kind, severity), params);
        }
        Ok(Self { entries })
    }

    pub fn params(&self, kind: CorruptionKind, severity: u8) -> Option<&[f64]> {
        self.entries.get(&(kind, severity)).map(Vec::as_slice)
    }

    pub fn resolve(&self, kind: CorruptionKind, severity: u8) -> Result<Corruption> {
        let p = self
            .params(kind, severity)
            .ok_or_else(|| Error::Argument(format!("no constants for {kind}:{severity}")))?[0];
        Ok(match kind {
            CorruptionKind::GaussianNoise => Corruption::GaussianNoise { sigma: p },
            CorruptionKind::GaussianBlur => Corruption::GaussianBlur { sigma: p },
            CorruptionKind::Fog => Corruption::Fog { strength: p },
            CorruptionKind::Contrast => Corruption::Contrast { factor: p },
        })
    }

    /// Corrupts image number `index` of a batch, drawing from stream `index` of `spec.seed`.
    pub fn apply(&self, image: &ImageTensor, spec: &CorruptionSpec, index: u64) -> Result<ImageTensor> {
        let corruption = self.resolve(spec.kind, spec.severity)?;
        Ok(corrupt_with(image, corruption, &mut rng::stream(spec.seed, index)))
    }
}

/// Corrupts one image with the bundled constants.
pub fn corrupt(image: &ImageTensor, spec: &CorruptionSpec) -> Result<ImageTensor> {
    CorruptionTable::default().apply(image, spec, 0)
}

/// Applies a resolved corruption. Output values are clamped to `[0, 1]`.
pub fn corrupt_with(image: &ImageTensor, corruption: Corruption, rng: &mut StreamRng) -> ImageTensor {
    let (h, w, c) = image.dims();
    let mut data = match corruption {
        Corruption::GaussianNoise { sigma } => image
            .data()
            .iter()
            .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        Corruption::GaussianBlur { sigma } => {
            let kernel = gaussian_kernel(sigma);
            (0..c)
                .flat_map(|ch| blur_plane(image.plane(ch), h, w, &kernel))
                .collect()
        }
        Corruption::Contrast { factor } => {
            let mut out = Vec::with_capacity(h * w * c);
            for ch in 0..c {
                let plane = image.plane(ch);
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                out.extend(plane.iter().map(|&v| factor * v + (1.0 - factor) * mean));
            }
            out
        }
        Corruption::Fog { strength } => {
            let side = h.max(w).next_power_of_two();
            let layer = plasma_fractal(side, FOG_DECAY, rng);
            let peak = image.max_value().max(0.0);
            let n = h * w;
            image
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let (i, j) = ((k % n) / w, k % w);
                    let fogged = v + strength * layer[i * side + j];
                    if peak + strength > 0.0 {
                        fogged * peak / (peak + strength)
                    } else {
                        fogged
                    }
                })
                .collect()
        }
    };
    for v in &mut data {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
    ImageTensor::from_parts_unchecked(h, w, c, data, image.label())
}

/// Normalized Gaussian taps over `[-ceil(4 sigma), ceil(4 sigma)]`.
/// `sigma = 0` yields the delta kernel `[1.0]`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn blur_plane(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut rows = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(t, &k)| k * plane[i * w + reflect(j as i64 + t as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(t, &k)| k * rows[reflect(i as i64 + t as i64 - r, h) * w + j])
                .sum();
        }
    }
    out
}

/// Toroidal diamond-square heightmap on a `side x side` grid (`side` a power
/// of two), rescaled to `[0, 1]`. The random displacement shrinks by `decay`
/// at every level.
pub fn plasma_fractal(side: usize, decay: f64, rng: &mut StreamRng) -> Vec<f64> {
    assert!(side.is_power_of_two(), "plasma side must be a power of two");
    let mut map = vec![0.0; side * side];
    let at = |i: usize, j: usize| (i % side) * side + (j % side);
    let mut wibble = 1.0;
    let mut step = side;
    while step >= 2 {
        let half = step / 2;
        for i in (0..side).step_by(step) {
            for j in (0..side).step_by(step) {
                let mean =
                    (map[at(i, j)] + map[at(i + step, j)] + map[at(i, j + step)] + map[at(i + step, j + step)]) / 4.0;
                map[at(i + half, j + half)] = mean + wibble * rng.random_range(-1.0..1.0);
            }
        }
        for i in (0..side).step_by(half) {
            let start = if (i / half).is_multiple_of(2) { half } else { 0 };
            for j in (start..side).step_by(step) {
                let mean = (map[at(i + side - half, j)]
                    + map[at(i + half, j)]
                    + map[at(i, j + side - half)]
                    + map[at(i, j + half)])
                    / 4.0;
                map[at(i, j)] = mean + wibble * rng.random_range(-1.0..1.0);
            }
        }
        step = half;
        wibble *= decay;
    }
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        map.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        map.fill(0.0);
    }
    map
}
