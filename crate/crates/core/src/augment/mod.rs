//! Frequency-domain augmentations and the per-batch transform hooks.
//!
//! [`rfc_swap`] exchanges the high band of two same-class images around a
//! circular low-pass mask; [`apr_recombine`] pairs one image's phase with
//! another's amplitude. [`augment_batch`] expands a dataset offline and
//! [`OnlineAugment`] applies the same stages to training batches.

mod corrupt;
mod spatial;

pub use corrupt::{
    corrupt, corrupt_with, plasma_fractal, Corruption, CorruptionKind, CorruptionSpec, CorruptionTable,
    DEFAULT_CONSTANTS, FOG_DECAY,
};
pub use spatial::{crop_at, hflip, random_crop, random_hflip, Baseline};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::spectral::{dft2, from_polar, idft2, make_masks, merge_bands, to_polar, PolarSpectrum};
use crate::tensorio::{ImageTensor, LabeledDataset};

pub const DEFAULT_RADIUS: f64 = 4.0;
pub const DEFAULT_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Rfc,
    Apr,
    /// RFC and APR composed; each stage has its own coin.
    RfcApr(ComposeOrder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComposeOrder {
    #[default]
    RfcFirst,
    AprFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Rfc,
    Apr,
}

impl AugmentMode {
    fn stages(self) -> &'static [Stage] {
        match self {
            AugmentMode::Rfc => &[Stage::Rfc],
            AugmentMode::Apr => &[Stage::Apr],
            AugmentMode::RfcApr(ComposeOrder::RfcFirst) => &[Stage::Rfc, Stage::Apr],
            AugmentMode::RfcApr(ComposeOrder::AprFirst) => &[Stage::Apr, Stage::Rfc],
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::Rfc => "rfc",
            AugmentMode::Apr => "apr",
            AugmentMode::RfcApr(_) => "rfc+apr",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rfc" => Ok(AugmentMode::Rfc),
            "apr" => Ok(AugmentMode::Apr),
            "rfc+apr" => Ok(AugmentMode::RfcApr(ComposeOrder::RfcFirst)),
            other => Err(Error::Argument(format!(
                "unknown mode {other:?}, expected rfc, apr or rfc+apr"
            ))),
        }
    }
}

impl fmt::Display for ComposeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComposeOrder::RfcFirst => "rfc-first",
            ComposeOrder::AprFirst => "apr-first",
        })
    }
}

impl FromStr for ComposeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rfc-first" => Ok(ComposeOrder::RfcFirst),
            "apr-first" => Ok(ComposeOrder::AprFirst),
            other => Err(Error::Argument(format!(
                "unknown order {other:?}, expected rfc-first or apr-first"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub radius: f64,
    pub apply_probability: f64,
    pub mode: AugmentMode,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            apply_probability: DEFAULT_PROBABILITY,
            mode: AugmentMode::Rfc,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::Argument(format!(
                "apply probability {} outside [0, 1]",
                self.apply_probability
            )));
        }
        if self.radius.is_nan() || self.radius < 0.0 {
            return Err(Error::Argument(format!("radius {} must be >= 0", self.radius)));
        }
        Ok(())
    }
}

fn pair_label(x: &ImageTensor, other: &ImageTensor) -> Result<Option<usize>> {
    if !x.same_dims(other) {
        return Err(Error::Shape(format!(
            "image pair is {:?} vs {:?}",
            x.dims(),
            other.dims()
        )));
    }
    match (x.label(), other.label()) {
        (Some(a), Some(b)) if a != b => Err(Error::Class(format!("cannot pair class {a} with class {b}"))),
        (a, b) => Ok(a.or(b)),
    }
}

/// RFC without the final clamp: low band of one image joined to the high band of the other.
pub fn rfc_swap_unclamped(x: &ImageTensor, x_prime: &ImageTensor, radius: f64) -> Result<(ImageTensor, ImageTensor)> {
    let label = pair_label(x, x_prime)?;
    let (low, _) = make_masks(x.height(), x.width(), radius)?;
    let z = dft2(x);
    let z_prime = dft2(x_prime);
    // F^-1(z_l) + F^-1(z_h') folded into one inverse by linearity.
    let mix = idft2(&merge_bands(&low, &z, &z_prime)?).with_label(label);
    let mix_prime = idft2(&merge_bands(&low, &z_prime, &z)?).with_label(label);
    Ok((mix, mix_prime))
}

/// Swaps the frequency bands of two same-class images.
///
/// Returns `(x_mix, x_prime_mix)` where `x_mix` keeps the components of `x`
/// inside the radius and takes those of `x_prime` outside it, and vice versa.
/// Outputs are clamped to `[0, 1]` and carry the pair's shared label.
pub fn rfc_swap(x: &ImageTensor, x_prime: &ImageTensor, radius: f64) -> Result<(ImageTensor, ImageTensor)> {
    let (mut a, mut b) = rfc_swap_unclamped(x, x_prime, radius)?;
    a.clamp_in_place();
    b.clamp_in_place();
    Ok((a, b))
}

pub fn apr_recombine_unclamped(phase_source: &ImageTensor, amplitude_source: &ImageTensor) -> Result<ImageTensor> {
    if !phase_source.same_dims(amplitude_source) {
        return Err(Error::Shape(format!(
            "phase source is {:?}, amplitude source is {:?}",
            phase_source.dims(),
            amplitude_source.dims()
        )));
    }
    let (h, w, c) = phase_source.dims();
    let (_, phase) = to_polar(&dft2(phase_source)).into_parts();
    let (amplitude, _) = to_polar(&dft2(amplitude_source)).into_parts();
    let spectrum = from_polar(&PolarSpectrum::new(h, w, c, amplitude, phase)?)?;
    Ok(idft2(&spectrum).with_label(phase_source.label()))
}

/// Amplitude spectrum of `amplitude_source` under the phase of `phase_source`,
/// clamped, labeled like the phase source.
pub fn apr_recombine(phase_source: &ImageTensor, amplitude_source: &ImageTensor) -> Result<ImageTensor> {
    let mut out = apr_recombine_unclamped(phase_source, amplitude_source)?;
    out.clamp_in_place();
    Ok(out)
}

/// Runs the configured stages on `x`. `None` when no stage's coin came up.
fn apply_stages(
    x: &ImageTensor,
    pool: &LabeledDataset,
    config: &AugmentConfig,
    rng: &mut StreamRng,
) -> Result<Option<Vec<ImageTensor>>> {
    let label = x.label().ok_or(Error::MissingLabel { index: 0 })?;
    let members = pool.class_members(label);
    if members.is_empty() {
        return Err(Error::Class(format!("class {label} has no members to pair with")));
    }
    let mut current = vec![x.clone()];
    let mut fired = false;
    for stage in config.mode.stages() {
        // Both draws happen on every stage so the stream layout never depends on outcomes.
        let coin: f64 = rng.random();
        let partner = &pool.images()[members[rng.random_range(0..members.len())]];
        if coin >= config.apply_probability {
            continue;
        }
        fired = true;
        current = match stage {
            Stage::Rfc => current
                .iter()
                .map(|y| rfc_swap(y, partner, config.radius).map(|(a, b)| [a, b]))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect(),
            Stage::Apr => current
                .iter()
                .map(|y| apr_recombine(y, partner))
                .collect::<Result<_>>()?,
        };
    }
    Ok(fired.then_some(current))
}

/// Offline expansion: the originals followed by the augmented images.
///
/// Image `i` draws from stream `i` of `config.seed`, so the result does not
/// depend on the worker count.
pub fn augment_batch(dataset: &LabeledDataset, config: &AugmentConfig) -> Result<LabeledDataset> {
    config.validate()?;
    if dataset.is_empty() {
        return Ok(dataset.clone());
    }
    let extra = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(config.seed, i as u64);
            apply_stages(&dataset.images()[i], dataset, config, &mut rng).map(Option::unwrap_or_default)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut images = dataset.images().to_vec();
    images.extend(extra.into_iter().flatten());
    LabeledDataset::new(images, dataset.class_count())
}

/// Per-batch transform applied during training.
pub trait BatchTransform: Sync {
    /// Transforms a batch. `seed` is unique per (epoch, batch).
    fn transform(&self, batch: &[ImageTensor], seed: u64) -> Result<Vec<ImageTensor>>;
}

/// Online RFC/APR: each image is replaced by its first augmented output when
/// a stage fires, partners drawn from `pool`.
#[derive(Debug, Clone, Copy)]
pub struct OnlineAugment<'a> {
    pub pool: &'a LabeledDataset,
    pub config: AugmentConfig,
}

impl BatchTransform for OnlineAugment<'_> {
    fn transform(&self, batch: &[ImageTensor], seed: u64) -> Result<Vec<ImageTensor>> {
        self.config.validate()?;
        batch
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let mut rng = rng::stream(seed, k as u64);
                Ok(match apply_stages(x, self.pool, &self.config, &mut rng)? {
                    Some(mut out) => out.swap_remove(0),
                    None => x.clone(),
                })
            })
            .collect()
    }
}

/// Applies transforms left to right, each with its own derived seed.
pub struct Chain<'a>(pub Vec<Box<dyn BatchTransform + 'a>>);

impl BatchTransform for Chain<'_> {
    fn transform(&self, batch: &[ImageTensor], seed: u64) -> Result<Vec<ImageTensor>> {
        let mut current = batch.to_vec();
        for (k, t) in self.0.iter().enumerate() {
            current = t.transform(&current, rng::derive_seed(seed, k as u64, 0x5EED))?;
        }
        Ok(current)
    }
}
