//! Image data model and on-disk codecs.
//!
//! Images are stored channel-planar (all of channel 0, then channel 1, ...),
//! row-major within each plane, the same layout as a CIFAR-10 binary record.
//! Pixel values are `f64`. Loaders always produce values in `[0, 1]`;
//! intermediate spectral results may leave that range until [`ImageTensor::clamped`].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    label: Option<usize>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, label: Option<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("{channels} channels, expected 1 or 3")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            label,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels], None)
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

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Value at `(channel, row, col)`.
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Copy with every value clamped into `[0, 1]`. NaN becomes 0.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        out.clamp_in_place();
        out
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        label: Option<usize>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
            label,
        }
    }
}

/// Labeled images plus a per-class index of their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<ImageTensor>,
    class_count: usize,
    class_index: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageTensor>, class_count: usize) -> Result<Self> {
        let mut class_index = vec![Vec::new(); class_count];
        for (index, image) in images.iter().enumerate() {
            let label = image.label.ok_or(Error::MissingLabel { index })?;
            if label >= class_count {
                return Err(Error::Label {
                    index,
                    label,
                    class_count,
                });
            }
            class_index[label].push(index);
        }
        Ok(Self {
            images,
            class_count,
            class_index,
        })
    }

    pub fn empty(class_count: usize) -> Self {
        Self {
            images: Vec::new(),
            class_count,
            class_index: vec![Vec::new(); class_count],
        }
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn into_images(self) -> Vec<ImageTensor> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Positions of the images labeled `class`.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    /// The label of image `index`. Always present for a constructed dataset.
    pub fn label_of(&self, index: usize) -> usize {
        self.images[index].label.expect("dataset images are labeled")
    }
}

/// Decodes CIFAR-10 binary records: one label byte, then 1024 R, 1024 G and
/// 1024 B bytes, each plane row-major.
pub fn parse_cifar_binary(bytes: &[u8], class_count: usize) -> Result<LabeledDataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            record: bytes.len() / CIFAR_RECORD,
            message: format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() % CIFAR_RECORD
            ),
        });
    }
    let images = bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let data = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            ImageTensor::from_parts_unchecked(CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS, data, Some(rec[0] as usize))
        })
        .collect();
    LabeledDataset::new(images, class_count)
}

pub fn load_cifar_binary(path: impl AsRef<Path>, class_count: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_binary(&bytes, class_count)
}

pub fn encode_cifar_binary(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for (index, image) in dataset.images().iter().enumerate() {
        if image.dims() != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS) {
            return Err(Error::ShapeAt {
                index,
                message: format!(
                    "{}x{}x{} image, CIFAR records are 32x32x3",
                    image.height, image.width, image.channels
                ),
            });
        }
        let label = image.label.ok_or(Error::MissingLabel { index })?;
        let label = u8::try_from(label).map_err(|_| Error::Label {
            index,
            label,
            class_count: 256,
        })?;
        out.push(label);
        out.extend(image.data.iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

pub fn write_cifar_binary(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cifar_binary(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `round(v * 255)` saturated to a byte.
pub fn quantize(v: f64) -> u8 {
    // `as` saturates and maps NaN to 0.
    (v * 255.0).round() as u8
}

/// Decodes an NPY array of `u8` with shape `N x H x W x C` in C order.
/// Images come back channel-planar with values `b / 255` and no labels.
pub fn parse_npy_u8(bytes: &[u8]) -> Result<Vec<ImageTensor>> {
    let (header, payload) = split_npy(bytes)?;
    let bad = |message: &str| Error::NpyHeader {
        header: header.to_string(),
        message: message.to_string(),
    };

    let descr = dict_value(header, "descr").ok_or_else(|| bad("missing 'descr'"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if !matches!(descr, "|u1" | "<u1" | ">u1" | "u1" | "=u1") {
        return Err(bad("dtype must be unsigned 8-bit"));
    }
    match dict_value(header, "fortran_order") {
        Some("False") => {}
        Some("True") => return Err(bad("fortran_order arrays are not supported")),
        _ => return Err(bad("missing or malformed 'fortran_order'")),
    }
    let shape = dict_value(header, "shape").ok_or_else(|| bad("missing 'shape'"))?;
    let dims = parse_shape(shape).ok_or_else(|| bad("malformed 'shape'"))?;
    let [n, h, w, c] = dims[..] else {
        return Err(bad("shape must be 4-D (N, H, W, C)"));
    };
    if h == 0 || w == 0 || (c != 1 && c != 3) {
        return Err(bad("image dims must be nonzero with 1 or 3 channels"));
    }
    let per_image = h * w * c;
    if payload.len() != n * per_image {
        return Err(bad(&format!(
            "payload holds {} bytes, shape needs {}",
            payload.len(),
            n * per_image
        )));
    }

    Ok(payload
        .chunks_exact(per_image)
        .map(|raw| {
            let mut data = vec![0.0; per_image];
            for (k, &b) in raw.iter().enumerate() {
                let ch = k % c;
                let pix = k / c;
                data[ch * h * w + pix] = f64::from(b) / 255.0;
            }
            ImageTensor::from_parts_unchecked(h, w, c, data, None)
        })
        .collect())
}

pub fn load_npy_u8(path: impl AsRef<Path>) -> Result<Vec<ImageTensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_npy_u8(&bytes)
}

/// Encodes same-sized images as an NPY v1.0 `u8` array of shape `N x H x W x C`.
pub fn encode_npy_u8(images: &[ImageTensor]) -> Result<Vec<u8>> {
    let (h, w, c) = match images.first() {
        Some(img) => img.dims(),
        None => (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS),
    };
    let mut dict = format!(
        "{{'descr': '|u1', 'fortran_order': False, 'shape': ({}, {h}, {w}, {c}), }}",
        images.len()
    );
    // Total header (magic + version + length + dict + newline) is padded to 64 bytes.
    let unpadded = NPY_MAGIC.len() + 2 + 2 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len() + images.len() * h * w * c);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for (index, img) in images.iter().enumerate() {
        if img.dims() != (h, w, c) {
            return Err(Error::ShapeAt {
                index,
                message: "NPY arrays need uniform image dims".into(),
            });
        }
        for pix in 0..h * w {
            for ch in 0..c {
                out.push(quantize(img.data[ch * h * w + pix]));
            }
        }
    }
    Ok(out)
}

fn split_npy(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let fail = |message: &str| Error::NpyHeader {
        header: String::new(),
        message: message.to_string(),
    };
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(fail("missing \\x93NUMPY magic"));
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(fail("truncated header length"));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
            (len, 12)
        }
        v => return Err(fail(&format!("unsupported NPY version {v}.{}", bytes[7]))),
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(fail("header runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[start..end]).map_err(|_| fail("header is not text"))?;
    Ok((header.trim_end(), &bytes[end..]))
}

/// Raw text of `key`'s value in a Python dict literal, for scalar and tuple values.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let at = header
        .find(&format!("'{key}'"))
        .or_else(|| header.find(&format!("\"{key}\"")))?;
    let rest = header[at + key.len() + 2..]
        .trim_start()
        .strip_prefix(':')?
        .trim_start();
    if rest.starts_with('(') {
        let close = rest.find(')')?;
        return Some(&rest[..=close]);
    }
    let end = rest.find([',', '}']).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn parse_shape(tuple: &str) -> Option<Vec<usize>> {
    let inner = tuple.strip_prefix('(')?.strip_suffix(')')?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse().ok())
        .collect()
}

/// Binary P6 PPM with maxval 255. Only 3-channel images are supported.
pub fn encode_ppm(image: &ImageTensor) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::Unsupported(format!(
            "PPM export needs 3 channels, image has {}",
            image.channels
        )));
    }
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    let n = image.plane_len();
    let mut out = Vec::with_capacity(header.len() + 3 * n);
    out.extend_from_slice(header.as_bytes());
    for pix in 0..n {
        for ch in 0..3 {
            out.push(quantize(image.data[ch * n + pix]));
        }
    }
    Ok(out)
}

pub fn write_ppm(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR_RECORD];
        r[0] = label;
        r
    }

    #[test]
    fn saturated_cifar_record() {
        let ds = parse_cifar_binary(&record(3, 0xFF), 10).unwrap();
        assert_eq!(ds.len(), 1);
        let img = &ds.images()[0];
        assert_eq!(img.dims(), (32, 32, 3));
        assert_eq!(img.label(), Some(3));
        assert!(img.data().iter().all(|&v| v == 1.0));
        assert_eq!(ds.class_members(3), &[0]);
    }

    #[test]
    fn empty_cifar_file_is_empty_dataset() {
        let ds = parse_cifar_binary(&[], 10).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.class_count(), 10);
    }

    #[test]
    fn truncated_cifar_names_record() {
        let mut bytes = record(0, 0);
        bytes.push(9);
        match parse_cifar_binary(&bytes, 10) {
            Err(Error::Format { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label() {
        let mut bytes = record(0, 0);
        bytes.extend(record(10, 0));
        assert!(matches!(
            parse_cifar_binary(&bytes, 10),
            Err(Error::Label {
                index: 1,
                label: 10,
                ..
            })
        ));
    }

    #[test]
    fn cifar_planes_are_rgb_in_order() {
        let mut bytes = record(1, 0);
        bytes[1..1025].fill(255);
        bytes[1025 + 5] = 51;
        let img = parse_cifar_binary(&bytes, 10).unwrap().images()[0].clone();
        assert_eq!(img.get(0, 31, 31), 1.0);
        assert_eq!(img.get(1, 0, 5), 0.2);
        assert_eq!(img.get(2, 0, 0), 0.0);
    }

    #[test]
    fn cifar_write_rejects_wrong_shape() {
        let good = ImageTensor::zeros(32, 32, 3).unwrap().with_label(Some(0));
        let bad = ImageTensor::zeros(16, 16, 3).unwrap().with_label(Some(0));
        let ds = LabeledDataset::new(vec![good.clone(), good, bad], 2).unwrap();
        assert!(matches!(encode_cifar_binary(&ds), Err(Error::ShapeAt { index: 2, .. })));
    }

    #[test]
    fn cifar_write_empty_dataset() {
        assert!(encode_cifar_binary(&LabeledDataset::empty(10)).unwrap().is_empty());
    }

    #[test]
    fn cifar_round_trip_five_images() {
        let bytes: Vec<u8> = (0..5 * CIFAR_RECORD)
            .map(|k| {
                if k % CIFAR_RECORD == 0 {
                    (k / CIFAR_RECORD) as u8
                } else {
                    (k * 7 % 256) as u8
                }
            })
            .collect();
        let ds = parse_cifar_binary(&bytes, 10).unwrap();
        let again = parse_cifar_binary(&encode_cifar_binary(&ds).unwrap(), 10).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn missing_label_rejected() {
        let img = ImageTensor::zeros(2, 2, 1).unwrap();
        assert!(matches!(
            LabeledDataset::new(vec![img], 2),
            Err(Error::MissingLabel { index: 0 })
        ));
    }

    fn npy(header_dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = NPY_MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        let dict = format!("{header_dict}\n");
        out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn npy_zero_payload() {
        let bytes = npy(
            "{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2, 2, 3), }",
            &[0; 24],
        );
        let imgs = parse_npy_u8(&bytes).unwrap();
        assert_eq!(imgs.len(), 2);
        for img in imgs {
            assert_eq!(img.dims(), (2, 2, 3));
            assert_eq!(img.label(), None);
            assert!(img.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn npy_fortran_order_rejected_with_header() {
        let header = "{'descr': '|u1', 'fortran_order': True, 'shape': (1, 2, 2, 3), }";
        match parse_npy_u8(&npy(header, &[0; 12])) {
            Err(Error::NpyHeader { header: h, .. }) => assert!(h.contains("True")),
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn npy_rejects_other_dtypes_and_ranks() {
        let f4 = npy(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1, 1), }",
            &[0; 4],
        );
        assert!(matches!(parse_npy_u8(&f4), Err(Error::NpyHeader { .. })));
        let rank3 = npy(
            "{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2, 3), }",
            &[0; 12],
        );
        assert!(matches!(parse_npy_u8(&rank3), Err(Error::NpyHeader { .. })));
        let short = npy(
            "{'descr': '|u1', 'fortran_order': False, 'shape': (1, 2, 2, 3), }",
            &[0; 11],
        );
        assert!(matches!(parse_npy_u8(&short), Err(Error::NpyHeader { .. })));
        assert!(parse_npy_u8(b"not an npy file").is_err());
    }

    #[test]
    fn npy_byte_indexing() {
        let payload: Vec<u8> = (0..32 * 32 * 3).map(|k| (k % 256) as u8).collect();
        let bytes = npy(
            "{'descr': '|u1', 'fortran_order': False, 'shape': (1, 32, 32, 3), }",
            &payload,
        );
        let img = &parse_npy_u8(&bytes).unwrap()[0];
        // Oracle: payload element k sits at row k/(W*C), col (k/C)%W, channel k%C.
        for k in 0..payload.len() {
            let (row, col, ch) = (k / 96, (k / 3) % 32, k % 3);
            assert_eq!(img.get(ch, row, col), (k % 256) as f64 / 255.0, "pixel {k}");
        }
    }

    #[test]
    fn npy_v2_header() {
        let dict = "{'descr': '|u1', 'fortran_order': False, 'shape': (1, 1, 1, 1), }\n";
        let mut bytes = NPY_MAGIC.to_vec();
        bytes.extend_from_slice(&[2, 0]);
        bytes.extend_from_slice(&(dict.len() as u32).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.push(255);
        let imgs = parse_npy_u8(&bytes).unwrap();
        assert_eq!(imgs[0].data(), &[1.0]);
    }

    #[test]
    fn npy_encode_round_trip() {
        let payload: Vec<u8> = (0..2 * 4 * 3 * 3).map(|k| (k * 11 % 256) as u8).collect();
        let bytes = npy(
            "{'descr': '|u1', 'fortran_order': False, 'shape': (2, 4, 3, 3), }",
            &payload,
        );
        let imgs = parse_npy_u8(&bytes).unwrap();
        let again = parse_npy_u8(&encode_npy_u8(&imgs).unwrap()).unwrap();
        assert_eq!(imgs, again);
    }

    #[test]
    fn ppm_single_pixel() {
        let img = ImageTensor::new(1, 1, 3, vec![1.0, 0.0, 0.5], None).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend_from_slice(&[255, 0, 128]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn ppm_zero_image_and_clamp() {
        let zero = ImageTensor::zeros(2, 2, 3).unwrap();
        let bytes = encode_ppm(&zero).unwrap();
        assert_eq!(&bytes[bytes.len() - 12..], &[0; 12]);
        assert_eq!(bytes.len(), "P6\n2 2\n255\n".len() + 12);

        let hot = ImageTensor::new(1, 1, 3, vec![1.5, -0.2, f64::NAN], None).unwrap();
        assert_eq!(&encode_ppm(&hot).unwrap()[11..], &[255, 0, 0]);
    }

    #[test]
    fn ppm_rejects_grayscale() {
        let gray = ImageTensor::zeros(2, 2, 1).unwrap();
        assert!(matches!(encode_ppm(&gray), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn cifar_bytes_round_trip_exactly(
            records in proptest::collection::vec(
                (0u8..10, proptest::collection::vec(any::<u8>(), CIFAR_PIXELS)), 0..4)
        ) {
            let mut bytes = Vec::new();
            for (label, pixels) in &records {
                bytes.push(*label);
                bytes.extend_from_slice(pixels);
            }
            let ds = parse_cifar_binary(&bytes, 10).unwrap();
            for img in ds.images() {
                prop_assert!(img.min_value() >= 0.0 && img.max_value() <= 1.0);
            }
            let total: usize = (0..10).map(|c| ds.class_members(c).len()).sum();
            prop_assert_eq!(total, ds.len());
            prop_assert_eq!(encode_cifar_binary(&ds).unwrap(), bytes);
        }
    }
}
