//! Band-limited and phase-only probe images, and the accuracy table over them.
//!
//! A phase-only image keeps an image's phase and replaces its amplitude with
//! the dataset-mean amplitude `A_m`. Banded probes keep only the coefficients
//! inside (low) or outside (high) a circular mask, with or without the
//! amplitude replacement.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::classifier::{argmax, ScoringModel};
use crate::error::{Error, Result};
use crate::spectral::{apply_mask, dft2, from_polar, idft2, make_masks, to_polar, PolarSpectrum, Spectrum};
use crate::tensorio::{ImageTensor, LabeledDataset};

/// Elementwise mean of the amplitude spectra of a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAmplitude {
    height: usize,
    width: usize,
    channels: usize,
    amplitude: Vec<f64>,
    source_count: usize,
}

impl MeanAmplitude {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }
}

/// Mean amplitude spectrum over `images`, which must be nonempty and uniformly sized.
pub fn mean_amplitude(images: &[ImageTensor]) -> Result<MeanAmplitude> {
    let first = images
        .first()
        .ok_or_else(|| Error::Domain("mean amplitude of an empty dataset".into()))?;
    let (h, w, c) = first.dims();
    if let Some(index) = images.iter().position(|img| img.dims() != (h, w, c)) {
        return Err(Error::ShapeAt {
            index,
            message: format!("{:?} differs from {:?}", images[index].dims(), (h, w, c)),
        });
    }
    // Sequential, in input order, so the mean is bit-reproducible.
    let mut sum = vec![0.0; h * w * c];
    for img in images {
        let (amplitude, _) = to_polar(&dft2(img)).into_parts();
        sum.iter_mut().zip(&amplitude).for_each(|(s, a)| *s += a);
    }
    let n = images.len() as f64;
    Ok(MeanAmplitude {
        height: h,
        width: w,
        channels: c,
        amplitude: sum.into_iter().map(|a| a / n).collect(),
        source_count: images.len(),
    })
}

/// Which probe image to build. Banded kinds carry their mask radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeKind {
    Low(f64),
    High(f64),
    LowPhase(f64),
    HighPhase(f64),
    PhaseOnly,
}

impl ProbeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeKind::Low(_) => "low",
            ProbeKind::High(_) => "high",
            ProbeKind::LowPhase(_) => "low_phase",
            ProbeKind::HighPhase(_) => "high_phase",
            ProbeKind::PhaseOnly => "phase_only",
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            ProbeKind::Low(r) | ProbeKind::High(r) | ProbeKind::LowPhase(r) | ProbeKind::HighPhase(r) => Some(r),
            ProbeKind::PhaseOnly => None,
        }
    }

    pub fn needs_mean_amplitude(&self) -> bool {
        !matches!(self, ProbeKind::Low(_) | ProbeKind::High(_))
    }

    /// The four banded kinds at `radius`, in table order.
    pub fn banded(radius: f64) -> [ProbeKind; 4] {
        [
            ProbeKind::Low(radius),
            ProbeKind::High(radius),
            ProbeKind::LowPhase(radius),
            ProbeKind::HighPhase(radius),
        ]
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.radius() {
            Some(r) => write!(f, "{}(r={r})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

fn check_mean(image: &ImageTensor, mean_amp: &MeanAmplitude) -> Result<()> {
    if image.dims() != mean_amp.dims() {
        return Err(Error::Shape(format!(
            "image is {:?}, mean amplitude is {:?}",
            image.dims(),
            mean_amp.dims()
        )));
    }
    Ok(())
}

/// Spectrum with `A_m` as amplitude and the phase of `image`.
fn mean_amplitude_spectrum(image: &ImageTensor, mean_amp: &MeanAmplitude) -> Result<Spectrum> {
    check_mean(image, mean_amp)?;
    let (h, w, c) = image.dims();
    let (_, phase) = to_polar(&dft2(image)).into_parts();
    from_polar(&PolarSpectrum::new(h, w, c, mean_amp.amplitude.clone(), phase)?)
}

pub fn phase_only_unclamped(image: &ImageTensor, mean_amp: &MeanAmplitude) -> Result<ImageTensor> {
    Ok(idft2(&mean_amplitude_spectrum(image, mean_amp)?).with_label(image.label()))
}

/// Inverse transform of `A_m ⊗ e^{i P_x}`, clamped, label preserved.
pub fn phase_only(image: &ImageTensor, mean_amp: &MeanAmplitude) -> Result<ImageTensor> {
    Ok(phase_only_unclamped(image, mean_amp)?.clamped())
}

pub fn band_probe_unclamped(
    image: &ImageTensor,
    kind: ProbeKind,
    mean_amp: Option<&MeanAmplitude>,
) -> Result<ImageTensor> {
    let mean = || mean_amp.ok_or_else(|| Error::Argument(format!("probe {} needs a mean amplitude", kind.name())));
    let spectrum = match kind {
        ProbeKind::PhaseOnly => mean_amplitude_spectrum(image, mean()?)?,
        ProbeKind::Low(r) | ProbeKind::High(r) | ProbeKind::LowPhase(r) | ProbeKind::HighPhase(r) => {
            let (low, high) = make_masks(image.height(), image.width(), r)?;
            let mask = if matches!(kind, ProbeKind::Low(_) | ProbeKind::LowPhase(_)) {
                &low
            } else {
                &high
            };
            let base = if kind.needs_mean_amplitude() {
                mean_amplitude_spectrum(image, mean()?)?
            } else {
                dft2(image)
            };
            apply_mask(&base, mask)?
        }
    };
    Ok(idft2(&spectrum).with_label(image.label()))
}

/// Builds the probe image of `kind` for `image`, clamped to `[0, 1]`.
pub fn band_probe(image: &ImageTensor, kind: ProbeKind, mean_amp: Option<&MeanAmplitude>) -> Result<ImageTensor> {
    Ok(band_probe_unclamped(image, kind, mean_amp)?.clamped())
}

/// One accuracy cell: `column` is `original` or a probe kind name.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub column: &'static str,
    pub radius: Option<f64>,
    pub correct: usize,
    pub total: usize,
}

impl ProbeRow {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub radii: Vec<f64>,
    pub rows: Vec<ProbeRow>,
}

impl ProbeTable {
    pub fn row(&self, column: &str, radius: Option<f64>) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.column == column && r.radius == radius)
    }

    /// `kind,radius,accuracy` with one line per row; radius is empty for unbanded rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,radius,accuracy\n");
        for row in &self.rows {
            let radius = row.radius.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.6}", row.column, radius, row.accuracy());
        }
        out
    }

    /// Aligned text table with one column per probe kind; banded cells list the
    /// first radius and the others in parentheses.
    pub fn render_text(&self) -> String {
        let pct = |r: Option<&ProbeRow>| r.map(|r| format!("{:.2}", 100.0 * r.accuracy())).unwrap_or_default();
        let mut cells = vec![("Original".to_string(), pct(self.row("original", None)))];
        for (title, name) in [
            ("Low", "low"),
            ("High", "high"),
            ("Low-P", "low_phase"),
            ("High-P", "high_phase"),
        ] {
            let mut vals = self.radii.iter().map(|&r| pct(self.row(name, Some(r))));
            let mut cell = vals.next().unwrap_or_default();
            for v in vals {
                let _ = write!(cell, " ({v})");
            }
            cells.push((title.to_string(), cell));
        }
        cells.push(("Phase only".to_string(), pct(self.row("phase_only", None))));

        let radii: Vec<String> = self.radii.iter().map(|r| r.to_string()).collect();
        let mut out = format!("accuracy (%) at r = {}\n", radii.join(", "));
        let widths: Vec<usize> = cells.iter().map(|(t, v)| t.len().max(v.len())).collect();
        let line = |pick: &dyn Fn(&(String, String)) -> &str| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{:>w$}", pick(c)))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "{}", line(&|c| c.0.as_str()));
        let _ = writeln!(out, "{}", line(&|c| c.1.as_str()));
        out
    }
}

fn count_correct(
    model: &dyn ScoringModel,
    dataset: &LabeledDataset,
    kind: Option<ProbeKind>,
    mean_amp: &MeanAmplitude,
) -> Result<usize> {
    dataset
        .images()
        .par_iter()
        .enumerate()
        .map(|(index, image)| {
            let wrap = |source: Error| match kind {
                Some(k) => Error::Probe {
                    kind: k.name().to_string(),
                    radius: k.radius(),
                    index,
                    source: Box::new(source),
                },
                None => Error::Model {
                    index,
                    source: Box::new(source),
                },
            };
            let probed;
            let input = match kind {
                Some(k) => {
                    probed = band_probe(image, k, Some(mean_amp)).map_err(wrap)?;
                    &probed
                }
                None => image,
            };
            let scores = model.scores(input).map_err(wrap)?;
            Ok::<_, Error>(usize::from(argmax(&scores) == image.label()))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Classification accuracy on the original images and on every probe kind at
/// every radius. Rows: original, then low/high/low_phase/high_phase for each
/// radius, then phase_only.
pub fn probe_table(
    model: &dyn ScoringModel,
    dataset: &LabeledDataset,
    radii: &[f64],
    mean_amp: &MeanAmplitude,
) -> Result<ProbeTable> {
    let total = dataset.len();
    let row = |column, kind: Option<ProbeKind>| -> Result<ProbeRow> {
        Ok(ProbeRow {
            column,
            radius: kind.and_then(|k| k.radius()),
            correct: count_correct(model, dataset, kind, mean_amp)?,
            total,
        })
    };
    let mut rows = vec![row("original", None)?];
    for &r in radii {
        for kind in ProbeKind::banded(r) {
            rows.push(row(kind.name(), Some(kind))?);
        }
    }
    rows.push(row("phase_only", Some(ProbeKind::PhaseOnly))?);
    Ok(ProbeTable {
        radii: radii.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(seed: u64, label: usize) -> ImageTensor {
        let mut rng = rng::stream(seed, 0);
        let data = (0..8 * 8 * 3).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(8, 8, 3, data, Some(label)).unwrap()
    }

    #[test]
    fn singleton_mean_is_own_amplitude() {
        let x = random_image(1, 0);
        let m = mean_amplitude(std::slice::from_ref(&x)).unwrap();
        assert_eq!(m.amplitude(), to_polar(&dft2(&x)).amplitude());
        assert_eq!(m.source_count(), 1);
        let twice = mean_amplitude(&[x.clone(), x.clone()]).unwrap();
        let err = twice
            .amplitude()
            .iter()
            .zip(m.amplitude())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert!(phase_only_unclamped(&x, &m).unwrap().max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn two_image_mean() {
        let (x, y) = (random_image(2, 0), random_image(3, 1));
        let m = mean_amplitude(&[x.clone(), y.clone()]).unwrap();
        let ax = to_polar(&dft2(&x));
        let ay = to_polar(&dft2(&y));
        for k in 0..m.amplitude().len() {
            let want = (ax.amplitude()[k] + ay.amplitude()[k]) / 2.0;
            assert!((m.amplitude()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_amplitude_errors() {
        assert!(matches!(mean_amplitude(&[]), Err(Error::Domain(_))));
        let small = ImageTensor::zeros(4, 4, 3).unwrap();
        assert!(matches!(
            mean_amplitude(&[random_image(1, 0), small]),
            Err(Error::ShapeAt { index: 1, .. })
        ));
    }

    #[test]
    fn phase_only_keeps_phase() {
        let (x, y) = (random_image(4, 0), random_image(5, 0));
        let m = mean_amplitude(&[x.clone(), y]).unwrap();
        let p = phase_only_unclamped(&x, &m).unwrap();
        let want = to_polar(&dft2(&x));
        let got = to_polar(&dft2(&p));
        for k in 0..m.amplitude().len() {
            if m.amplitude()[k] > 1e-9 {
                let mut d = (want.phase()[k] - got.phase()[k]).abs();
                d = d.min(2.0 * std::f64::consts::PI - d);
                assert!(d < 1e-6, "coefficient {k}: {d}");
            }
        }
    }

    #[test]
    fn band_identities() {
        let (x, y) = (random_image(6, 0), random_image(7, 0));
        let m = mean_amplitude(&[x.clone(), y]).unwrap();
        for r in [0.0, 2.0, 3.5, 100.0] {
            let lo = band_probe_unclamped(&x, ProbeKind::Low(r), None).unwrap();
            let hi = band_probe_unclamped(&x, ProbeKind::High(r), None).unwrap();
            let sum: Vec<f64> = lo.data().iter().zip(hi.data()).map(|(a, b)| a + b).collect();
            assert!(sum.iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-6));

            let lp = band_probe_unclamped(&x, ProbeKind::LowPhase(r), Some(&m)).unwrap();
            let hp = band_probe_unclamped(&x, ProbeKind::HighPhase(r), Some(&m)).unwrap();
            let po = band_probe_unclamped(&x, ProbeKind::PhaseOnly, Some(&m)).unwrap();
            let sum: Vec<f64> = lp.data().iter().zip(hp.data()).map(|(a, b)| a + b).collect();
            assert!(sum.iter().zip(po.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let zero_low = band_probe(&x, ProbeKind::Low(0.0), None).unwrap();
        assert!(zero_low.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn phase_kinds_need_mean() {
        let x = random_image(8, 0);
        assert!(matches!(
            band_probe(&x, ProbeKind::HighPhase(4.0), None),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            band_probe(&x, ProbeKind::PhaseOnly, None),
            Err(Error::Argument(_))
        ));
        let m = mean_amplitude(&[ImageTensor::zeros(4, 4, 3).unwrap()]).unwrap();
        assert!(matches!(phase_only(&x, &m), Err(Error::Shape(_))));
    }

    fn balanced(n_per_class: usize, classes: usize) -> LabeledDataset {
        let imgs = (0..n_per_class * classes)
            .map(|i| random_image(100 + i as u64, i % classes))
            .collect();
        LabeledDataset::new(imgs, classes).unwrap()
    }

    #[test]
    fn constant_model_is_chance() {
        let ds = balanced(3, 10);
        let m = mean_amplitude(ds.images()).unwrap();
        let model = |_: &ImageTensor| -> Result<Vec<f64>> {
            let mut s = vec![0.0; 10];
            s[0] = 1.0;
            Ok(s)
        };
        let table = probe_table(&model, &ds, &[4.0, 8.0], &m).unwrap();
        assert_eq!(table.rows.len(), 4 * 2 + 2);
        for row in &table.rows {
            assert!((row.accuracy() - 0.1).abs() < 1e-12, "{row:?}");
        }
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.contains("low_phase,8,0.100000"));
        assert!(table.render_text().contains("10.00 (10.00)"));
    }

    #[test]
    fn label_reading_model_is_perfect_on_original() {
        // Images of class k carry the value k/10 in their first pixel.
        let imgs: Vec<ImageTensor> = (0..20)
            .map(|i| {
                let mut data = vec![0.5; 8 * 8 * 3];
                data[0] = (i % 4) as f64 / 10.0;
                ImageTensor::new(8, 8, 3, data, Some(i % 4)).unwrap()
            })
            .collect();
        let ds = LabeledDataset::new(imgs, 4).unwrap();
        let m = mean_amplitude(ds.images()).unwrap();
        let model = |x: &ImageTensor| -> Result<Vec<f64>> {
            let k = (x.get(0, 0, 0) * 10.0).round() as usize;
            let mut s = vec![0.0; 4];
            s[k.min(3)] = 1.0;
            Ok(s)
        };
        let table = probe_table(&model, &ds, &[4.0], &m).unwrap();
        assert_eq!(table.row("original", None).unwrap().accuracy(), 1.0);
    }

    #[test]
    fn model_errors_carry_context() {
        let ds = balanced(1, 2);
        let m = mean_amplitude(ds.images()).unwrap();
        let model = |_: &ImageTensor| -> Result<Vec<f64>> { Err(Error::Shape("boom".into())) };
        let err = probe_table(&model, &ds, &[4.0], &m).unwrap_err();
        assert!(matches!(err, Error::Model { .. }), "{err}");
    }
}
