//! Center-shifted 2D DFTs, circular band masks and polar decomposition.
//!
//! Conventions:
//! - forward transform is unnormalized (DC coefficient = pixel sum), the
//!   inverse carries `1 / (H * W)`;
//! - spectra are stored center-shifted, DC at `(H / 2, W / 2)` (floor);
//! - masks are evaluated on the shifted grid;
//! - the phase of an exact zero coefficient is 0.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensorio::ImageTensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Complex coefficients per channel, channel-planar, center-shifted.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    channels: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width * channels || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} spectrum cannot hold {} coefficients",
                coeffs.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            coeffs,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            coeffs: vec![Complex64::new(0.0, 0.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at shifted position `(row, col)` of `channel`.
    pub fn get(&self, channel: usize, row: usize, col: usize) -> Complex64 {
        self.coeffs[(channel * self.height + row) * self.width + col]
    }

    /// Index of the DC coefficient on the shifted grid.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Sum of squared moduli over all channels.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_dims(other.dims())?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(self.with_coeffs(coeffs))
    }

    pub fn max_abs_diff(&self, other: &Spectrum) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn with_coeffs(&self, coeffs: Vec<Complex64>) -> Spectrum {
        Spectrum {
            height: self.height,
            width: self.width,
            channels: self.channels,
            coeffs,
        }
    }

    fn check_dims(&self, dims: (usize, usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "spectrum is {:?}, operand is {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &FreqMask) -> Result<()> {
        if (self.height, self.width) != (mask.height, mask.width) {
            return Err(Error::Shape(format!(
                "{}x{} mask on a {}x{} spectrum",
                mask.height, mask.width, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Unnormalized forward DFT of every channel, center-shifted.
pub fn dft2(image: &ImageTensor) -> Spectrum {
    let (h, w, c) = image.dims();
    let n = h * w;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n * c];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..c {
        for (dst, &v) in buf.iter_mut().zip(image.plane(ch)) {
            *dst = Complex64::new(v, 0.0);
        }
        transform_plane(&mut buf, &mut scratch, h, w, FftDirection::Forward);
        let out = &mut coeffs[ch * n..(ch + 1) * n];
        for r in 0..h {
            let sr = (r + h / 2) % h;
            for col in 0..w {
                out[sr * w + (col + w / 2) % w] = buf[r * w + col];
            }
        }
    }
    Spectrum {
        height: h,
        width: w,
        channels: c,
        coeffs,
    }
}

/// Inverse of [`dft2`], keeping the real part. The result is not clamped.
pub fn idft2(spectrum: &Spectrum) -> ImageTensor {
    idft2_with_residue(spectrum).0
}

/// Inverse of [`dft2`] plus the largest discarded imaginary magnitude.
/// The residue stays at rounding level when the spectrum is Hermitian symmetric,
/// i.e. when it came from a real image.
pub fn idft2_with_residue(spectrum: &Spectrum) -> (ImageTensor, f64) {
    let (h, w, c) = spectrum.dims();
    let n = h * w;
    let scale = 1.0 / n as f64;
    let mut data = vec![0.0; n * c];
    let mut residue: f64 = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..c {
        let src = &spectrum.coeffs[ch * n..(ch + 1) * n];
        for r in 0..h {
            let sr = (r + h / 2) % h;
            for col in 0..w {
                buf[r * w + col] = src[sr * w + (col + w / 2) % w];
            }
        }
        transform_plane(&mut buf, &mut scratch, h, w, FftDirection::Inverse);
        for (dst, v) in data[ch * n..(ch + 1) * n].iter_mut().zip(&buf) {
            *dst = v.re * scale;
            residue = residue.max((v.im * scale).abs());
        }
    }
    (ImageTensor::from_parts_unchecked(h, w, c, data, None), residue)
}

/// In-place 2D transform of one row-major `h x w` plane.
fn transform_plane(buf: &mut [Complex64], scratch: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    if w > 1 {
        plan(w, direction).process(buf);
    }
    if h > 1 {
        for r in 0..h {
            for col in 0..w {
                scratch[col * h + r] = buf[r * w + col];
            }
        }
        plan(h, direction).process(scratch);
        for r in 0..h {
            for col in 0..w {
                buf[r * w + col] = scratch[col * h + r];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    LowPass,
    HighPass,
}

/// Binary disk (low-pass) or disk complement (high-pass) around the DC index.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask {
    height: usize,
    width: usize,
    radius: f64,
    kind: MaskKind,
    bits: Vec<bool>,
}

impl FreqMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Low-pass and high-pass masks of radius `radius` on an `height x width` grid.
/// A cell is low-pass iff its Euclidean distance from `(H/2, W/2)` is strictly
/// below `radius`; the high-pass mask is the exact complement.
pub fn make_masks(height: usize, width: usize, radius: f64) -> Result<(FreqMask, FreqMask)> {
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::Domain(format!("mask radius {radius} must be >= 0")));
    }
    let (ci, cj) = ((height / 2) as f64, (width / 2) as f64);
    let low: Vec<bool> = (0..height)
        .flat_map(|i| (0..width).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (di, dj) = (i as f64 - ci, j as f64 - cj);
            (di * di + dj * dj).sqrt() < radius
        })
        .collect();
    let high = low.iter().map(|b| !b).collect();
    let mask = |kind, bits| FreqMask {
        height,
        width,
        radius,
        kind,
        bits,
    };
    Ok((mask(MaskKind::LowPass, low), mask(MaskKind::HighPass, high)))
}

/// Zeroes every coefficient outside `mask`, in every channel.
pub fn apply_mask(spectrum: &Spectrum, mask: &FreqMask) -> Result<Spectrum> {
    spectrum.check_mask(mask)?;
    let n = spectrum.height * spectrum.width;
    let zero = Complex64::new(0.0, 0.0);
    let coeffs = spectrum
        .coeffs
        .iter()
        .enumerate()
        .map(|(k, &z)| if mask.bits[k % n] { z } else { zero })
        .collect();
    Ok(spectrum.with_coeffs(coeffs))
}

/// `(M_l ⊗ z, M_h ⊗ z)`. Masks are binary, so the two parts sum back to `z` exactly.
pub fn band_split(spectrum: &Spectrum, low: &FreqMask, high: &FreqMask) -> Result<(Spectrum, Spectrum)> {
    Ok((apply_mask(spectrum, low)?, apply_mask(spectrum, high)?))
}

/// Coefficients of `low_source` inside `low`, of `high_source` elsewhere.
pub fn merge_bands(low: &FreqMask, low_source: &Spectrum, high_source: &Spectrum) -> Result<Spectrum> {
    low_source.check_dims(high_source.dims())?;
    low_source.check_mask(low)?;
    let n = low.height * low.width;
    let coeffs = low_source
        .coeffs
        .iter()
        .zip(&high_source.coeffs)
        .enumerate()
        .map(|(k, (&a, &b))| if low.bits[k % n] { a } else { b })
        .collect();
    Ok(low_source.with_coeffs(coeffs))
}

/// Amplitude and phase planes of a spectrum, same layout as [`Spectrum`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSpectrum {
    height: usize,
    width: usize,
    channels: usize,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl PolarSpectrum {
    pub fn new(height: usize, width: usize, channels: usize, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let n = height * width * channels;
        if amplitude.len() != n || phase.len() != n {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} polar spectrum needs {n} amplitudes and phases"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            amplitude,
            phase,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.amplitude, self.phase)
    }
}

/// Principal argument in `(-pi, pi]`, with `arg(0) = 0`.
pub fn principal_arg(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn to_polar(spectrum: &Spectrum) -> PolarSpectrum {
    let amplitude = spectrum.coeffs.iter().map(|z| z.norm()).collect();
    let phase = spectrum.coeffs.iter().map(|&z| principal_arg(z)).collect();
    PolarSpectrum {
        height: spectrum.height,
        width: spectrum.width,
        channels: spectrum.channels,
        amplitude,
        phase,
    }
}

/// `amplitude * e^{i * phase}` elementwise. Negative amplitudes are rejected.
pub fn from_polar(polar: &PolarSpectrum) -> Result<Spectrum> {
    if let Some(k) = polar.amplitude.iter().position(|&a| a.is_nan() || a < 0.0) {
        return Err(Error::Domain(format!(
            "amplitude {} at index {k} is negative",
            polar.amplitude[k]
        )));
    }
    let coeffs = polar
        .amplitude
        .iter()
        .zip(&polar.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Ok(Spectrum {
        height: polar.height,
        width: polar.width,
        channels: polar.channels,
        coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
        let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(h, w, c, data, None).unwrap()
    }

    /// Direct O(N^4) DFT, shifted, as an independent reference.
    fn naive_dft2(img: &ImageTensor) -> Vec<Complex64> {
        let (h, w, c) = img.dims();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w * c];
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for x in 0..h {
                        for y in 0..w {
                            let t = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                            acc += Complex64::from_polar(img.get(ch, x, y), t);
                        }
                    }
                    let (su, sv) = ((u + h / 2) % h, (v + w / 2) % w);
                    out[(ch * h + su) * w + sv] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_image_has_zero_spectrum() {
        let z = dft2(&ImageTensor::zeros(5, 3, 3).unwrap());
        assert!(z.coeffs().iter().all(|c| c.norm() == 0.0));
        assert!(idft2(&z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = ImageTensor::new(4, 4, 1, vec![0.3; 16], None).unwrap();
        let z = dft2(&img);
        assert_eq!(z.center(), (2, 2));
        for r in 0..4 {
            for c in 0..4 {
                let v = z.get(0, r, c);
                if (r, c) == (2, 2) {
                    assert!((v - Complex64::new(16.0 * 0.3, 0.0)).norm() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w) in &[(1, 1), (1, 5), (3, 4), (5, 7), (6, 6), (8, 3)] {
            let img = random_image(&mut rng, h, w, 3);
            let fast = dft2(&img);
            let slow = naive_dft2(&img);
            let err = fast
                .coeffs()
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{h}x{w}: {err}");
        }
    }

    #[test]
    fn parseval_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 8, 8, 1);
        let pixel_energy: f64 = img.data().iter().map(|v| v * v).sum();
        let coeff_energy: f64 = naive_dft2(&img).iter().map(|c| c.norm_sqr()).sum::<f64>() / 64.0;
        let fast_energy = dft2(&img).energy() / 64.0;
        assert!((pixel_energy - coeff_energy).abs() / pixel_energy < 1e-9);
        assert!((pixel_energy - fast_energy).abs() / pixel_energy < 1e-9);
    }

    #[test]
    fn round_trips_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 7, 6, 3);
        let z = dft2(&img);
        let (back, residue) = idft2_with_residue(&z);
        assert!(back.max_abs_diff(&img) < 1e-6);
        assert!(residue < 1e-9);
        assert!(dft2(&back).max_abs_diff(&z) < 1e-6);
    }

    #[test]
    fn mask_extremes() {
        let (low, high) = make_masks(6, 5, 0.0).unwrap();
        assert_eq!(low.popcount(), 0);
        assert_eq!(high.popcount(), 30);
        let (low, high) = make_masks(6, 5, 100.0).unwrap();
        assert_eq!(low.popcount(), 30);
        assert_eq!(high.popcount(), 0);
        assert!(make_masks(4, 4, -1.0).is_err());
    }

    #[test]
    fn radius_four_popcount() {
        let (low, high) = make_masks(32, 32, 4.0).unwrap();
        // Lattice points with di^2 + dj^2 < 16.
        let brute = (-4i32..=4)
            .flat_map(|a| (-4i32..=4).map(move |b| a * a + b * b))
            .filter(|&d| d < 16)
            .count();
        assert_eq!(brute, 45);
        assert_eq!(low.popcount(), 45);
        assert!(low.get(16, 16));
        assert!(!low.get(16, 20));
        assert!(high.get(16, 20));
    }

    #[test]
    fn band_split_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = dft2(&random_image(&mut rng, 8, 8, 3));
        let (low, high) = make_masks(8, 8, 2.5).unwrap();
        let (zl, zh) = band_split(&z, &low, &high).unwrap();
        assert_eq!(zl.add(&zh).unwrap(), z);
        let rel = (z.energy() - zl.energy() - zh.energy()).abs() / z.energy();
        assert!(rel < 1e-12);

        let (low0, high0) = make_masks(8, 8, 0.0).unwrap();
        let (zl, zh) = band_split(&z, &low0, &high0).unwrap();
        assert_eq!(zl.energy(), 0.0);
        assert_eq!(zh, z);
    }

    #[test]
    fn band_split_rejects_mismatch() {
        let z = Spectrum::zeros(8, 8, 1);
        let (low, high) = make_masks(4, 8, 2.0).unwrap();
        assert!(matches!(band_split(&z, &low, &high), Err(Error::Shape(_))));
    }

    #[test]
    fn polar_conventions() {
        let z = Spectrum::new(
            1,
            3,
            1,
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(-5.0, 0.0),
                Complex64::new(-5.0, -0.0),
            ],
        )
        .unwrap();
        let p = to_polar(&z);
        assert_eq!(p.amplitude(), &[0.0, 5.0, 5.0]);
        assert_eq!(p.phase(), &[0.0, PI, PI]);
        let back = from_polar(&p).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn polar_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = dft2(&random_image(&mut rng, 8, 5, 3));
        let p = to_polar(&z);
        assert!(p.amplitude().iter().all(|&a| a >= 0.0));
        assert!(p.phase().iter().all(|&t| t > -PI && t <= PI));
        assert!(from_polar(&p).unwrap().max_abs_diff(&z) < 1e-6);
    }

    #[test]
    fn negative_amplitude_rejected() {
        let p = PolarSpectrum::new(1, 1, 1, vec![-1.0], vec![0.0]).unwrap();
        assert!(matches!(from_polar(&p), Err(Error::Domain(_))));
    }
}
