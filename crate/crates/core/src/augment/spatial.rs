//! RandomCrop / RandomHorizontalFlip baseline transforms.

use rand::Rng;
use rayon::prelude::*;

use super::BatchTransform;
use crate::error::Result;
use crate::rng;
use crate::tensorio::ImageTensor;

/// Zero-pads by `padding` on every side and cuts the original-size window
/// whose top-left corner sits at `(row_offset, col_offset)` of the padded image.
/// Offsets must lie in `0..=2 * padding`.
pub fn crop_at(image: &ImageTensor, padding: usize, row_offset: usize, col_offset: usize) -> ImageTensor {
    assert!(
        row_offset <= 2 * padding && col_offset <= 2 * padding,
        "crop offset outside padded image"
    );
    let (h, w, c) = image.dims();
    let mut data = vec![0.0; h * w * c];
    for ch in 0..c {
        for i in 0..h {
            let Some(src_i) = (i + row_offset).checked_sub(padding).filter(|&r| r < h) else {
                continue;
            };
            for j in 0..w {
                if let Some(src_j) = (j + col_offset).checked_sub(padding).filter(|&s| s < w) {
                    data[(ch * h + i) * w + j] = image.get(ch, src_i, src_j);
                }
            }
        }
    }
    ImageTensor::from_parts_unchecked(h, w, c, data, image.label())
}

pub fn random_crop<R: Rng + ?Sized>(image: &ImageTensor, padding: usize, rng: &mut R) -> ImageTensor {
    let row = rng.random_range(0..=2 * padding);
    let col = rng.random_range(0..=2 * padding);
    crop_at(image, padding, row, col)
}

/// Mirrors columns: column `k` moves to `width - 1 - k`.
pub fn hflip(image: &ImageTensor) -> ImageTensor {
    let (h, w, c) = image.dims();
    let mut data = image.data().to_vec();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    ImageTensor::from_parts_unchecked(h, w, c, data, image.label())
}

pub fn random_hflip<R: Rng + ?Sized>(image: &ImageTensor, rng: &mut R) -> ImageTensor {
    if rng.random_bool(0.5) {
        hflip(image)
    } else {
        image.clone()
    }
}

/// Crop-then-flip training baseline.
#[derive(Debug, Clone, Copy)]
pub struct Baseline {
    pub padding: usize,
    pub flip: bool,
}

impl Default for Baseline {
    fn default() -> Self {
        Self { padding: 4, flip: true }
    }
}

impl BatchTransform for Baseline {
    fn transform(&self, batch: &[ImageTensor], seed: u64) -> Result<Vec<ImageTensor>> {
        Ok(batch
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let mut rng = rng::stream(seed, k as u64);
                let cropped = random_crop(x, self.padding, &mut rng);
                if self.flip {
                    random_hflip(&cropped, &mut rng)
                } else {
                    cropped
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w * 3).map(|k| (k + 1) as f64 / (h * w * 3) as f64).collect();
        ImageTensor::new(h, w, 3, data, Some(1)).unwrap()
    }

    #[test]
    fn zero_padding_is_identity() {
        let x = ramp(5, 4);
        let mut rng = rng::stream(0, 0);
        assert_eq!(random_crop(&x, 0, &mut rng), x);
    }

    #[test]
    fn origin_offset_shifts_down_right() {
        let x = ramp(8, 8);
        let y = crop_at(&x, 4, 0, 0);
        for c in 0..3 {
            for i in 0..8 {
                for j in 0..8 {
                    let want = if i >= 4 && j >= 4 { x.get(c, i - 4, j - 4) } else { 0.0 };
                    assert_eq!(y.get(c, i, j), want);
                }
            }
        }
        assert_eq!(crop_at(&x, 4, 4, 4), x);
    }

    #[test]
    fn all_crops_of_2x2_with_padding_1() {
        let x = ramp(2, 2);
        // Enumerate the 3x3 offsets; every window differs.
        let outputs: HashSet<Vec<u64>> = (0..=2)
            .flat_map(|r| (0..=2).map(move |c| (r, c)))
            .map(|(r, c)| crop_at(&x, 1, r, c).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(outputs.len(), 9);

        let mut rng = rng::stream(3, 0);
        let sampled: HashSet<Vec<u64>> = (0..500)
            .map(|_| {
                random_crop(&x, 1, &mut rng)
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        assert_eq!(sampled, outputs);
    }

    #[test]
    fn flip_properties() {
        let x = ramp(3, 5);
        assert_eq!(hflip(&hflip(&x)), x);
        let f = hflip(&x);
        for k in 0..5 {
            assert_eq!(f.get(1, 2, k), x.get(1, 2, 4 - k));
        }
        let narrow = ramp(4, 1);
        let mut rng = rng::stream(1, 1);
        for _ in 0..10 {
            assert_eq!(random_hflip(&narrow, &mut rng), narrow);
        }
    }

    #[test]
    fn baseline_keeps_labels() {
        let batch = vec![ramp(8, 8); 4];
        let out = Baseline::default().transform(&batch, 9).unwrap();
        assert!(out.iter().all(|x| x.label() == Some(1)));
        assert_eq!(out, Baseline::default().transform(&batch, 9).unwrap());
    }
}
