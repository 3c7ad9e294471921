#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use rfcaug_core::rng;
use rfcaug_core::tensorio::{quantize, CIFAR_SIDE};
use rfcaug_core::{ImageTensor, LabeledDataset};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfcaug"))
}

/// Runs the CLI in `dir` with whitespace-separated `args`, panicking with its
/// stderr on failure.
pub fn run_ok(dir: &Path, args: &str) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "rfcaug {args} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn run(dir: &Path, args: &str) -> Output {
    bin()
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("spawn rfcaug")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Values already on the 8-bit grid, so CIFAR round-trips are exact.
fn on_grid(v: f64) -> f64 {
    quantize(v) as f64 / 255.0
}

/// 32x32 RGB images whose class shifts the mean colour and sets the stripe
/// orientation. Tint jitter, stripe frequency/phase and pixel noise are random
/// per image, so the classes overlap.
pub fn synthetic(n: usize, class_count: usize, seed: u64) -> LabeledDataset {
    let side = CIFAR_SIDE;
    let images = (0..n)
        .map(|i| {
            let class = i % class_count;
            let mut r = rng::stream(seed, i as u64);
            let jitter = 0.6 * (r.random::<f64>() - 0.5);
            let angle = std::f64::consts::PI * (class as f64 + jitter) / class_count as f64;
            let (s, c) = angle.sin_cos();
            let freq = 0.3 + 0.4 * r.random::<f64>();
            let phase = r.random::<f64>() * std::f64::consts::TAU;
            let contrast = 0.05 + 0.15 * r.random::<f64>();
            let hue = std::f64::consts::TAU * class as f64 / class_count as f64;
            let tints: Vec<f64> = (0..3)
                .map(|ch| {
                    let centre = 0.5 + 0.12 * (hue + std::f64::consts::TAU * ch as f64 / 3.0).cos();
                    centre + 0.3 * (r.random::<f64>() - 0.5)
                })
                .collect();
            let mut data = Vec::with_capacity(3 * side * side);
            for tint in tints {
                for y in 0..side {
                    for x in 0..side {
                        let t = freq * (c * x as f64 + s * y as f64) + phase;
                        let v = tint + contrast * t.sin() + 0.2 * (r.random::<f64>() - 0.5);
                        data.push(on_grid(v));
                    }
                }
            }
            ImageTensor::new(side, side, 3, data, Some(class)).unwrap()
        })
        .collect();
    LabeledDataset::new(images, class_count).unwrap()
}

/// Uniform-noise images on the 8-bit grid, unlabeled.
pub fn uniform_noise(n: usize, seed: u64) -> Vec<ImageTensor> {
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let data = (0..3 * CIFAR_SIDE * CIFAR_SIDE).map(|_| on_grid(r.random())).collect();
            ImageTensor::new(CIFAR_SIDE, CIFAR_SIDE, 3, data, None).unwrap()
        })
        .collect()
}
