//! Naive reference implementations used as test oracles. Deliberately
//! written against raw pixel vectors with plain loops and floating point,
//! sharing no code with the crate's own arithmetic.

#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stopline_core::image::GrayImage;

pub fn random_gray(width: u32, height: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; width as usize * height as usize];
    rng.fill_bytes(&mut buf);
    GrayImage::from_raw(width, height, buf).unwrap()
}

pub fn random_bools(len: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..len)
        .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 <= density)
        .collect()
}

/// Luma with the 0.299/0.587/0.114 weights in floating point. Exact values
/// are multiples of 0.001, so the small bias only moves representation
/// error at .5 ties upward, matching round-half-up.
pub fn luma_oracle(r: u8, g: u8, b: u8) -> u8 {
    let v = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    (v + 1e-6).round().clamp(0.0, 255.0) as u8
}

pub fn abs_diff_oracle(a: &GrayImage, b: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = a.get(x, y) as i32 - b.get(x, y) as i32;
            out.push(d.unsigned_abs() as u8);
        }
    }
    out
}

pub fn mean_gray_oracle(img: &GrayImage) -> f64 {
    let mut sum: u128 = 0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            sum += img.get(x, y) as u128;
        }
    }
    sum as f64 / (img.width() as u128 * img.height() as u128) as f64
}

/// Per-pixel float mean of the images, `f64::round` (half away from zero).
pub fn mean_of_images_oracle(imgs: &[GrayImage]) -> Vec<u8> {
    let n = imgs[0].pixels().len();
    (0..n)
        .map(|i| {
            let s: f64 = imgs.iter().map(|img| img.pixels()[i] as f64).sum();
            (s / imgs.len() as f64).round() as u8
        })
        .collect()
}

/// Longest run by enumerating every contiguous subrange.
pub fn longest_run_oracle(samples: &[bool]) -> u32 {
    let mut best = 0;
    for i in 0..samples.len() {
        for j in i..samples.len() {
            if samples[i..=j].iter().all(|&s| s) {
                best = best.max(j - i + 1);
            } else {
                break;
            }
        }
    }
    best as u32
}

/// Ideal sample positions of scan line `k`: `y = y0 + k*gap + dx*tan(skew)`, rounded.
pub fn line_samples_oracle(anchor: [u32; 2], length: u32, skew_deg: f64, gap: u32, k: u32) -> Vec<(i64, i64)> {
    let slope = skew_deg.to_radians().tan();
    (0..length as i64)
        .map(|dx| {
            let y = anchor[1] as f64 + (k * gap) as f64 + dx as f64 * slope;
            (anchor[0] as i64 + dx, y.round() as i64)
        })
        .collect()
}

/// Step-by-step replay of the adaptive background rule on raw vectors.
pub struct ReferenceBackground {
    pub ring: Vec<Vec<u8>>,
    pub mean: Vec<u8>,
    pub d_th: f64,
}

impl ReferenceBackground {
    pub fn new(seeds: &[GrayImage], d_th: f64) -> Self {
        let ring: Vec<Vec<u8>> = seeds.iter().map(|s| s.pixels().to_vec()).collect();
        let mean = Self::average(&ring);
        Self { ring, mean, d_th }
    }

    fn average(ring: &[Vec<u8>]) -> Vec<u8> {
        (0..ring[0].len())
            .map(|i| {
                let s: f64 = ring.iter().map(|r| r[i] as f64).sum();
                (s / ring.len() as f64).round() as u8
            })
            .collect()
    }

    /// Returns `(is_background, mean_diff)`.
    pub fn step(&mut self, frame: &[u8]) -> (bool, f64) {
        let total: u64 = frame
            .iter()
            .zip(&self.mean)
            .map(|(&f, &m)| (f as i64 - m as i64).unsigned_abs())
            .sum();
        let mean_diff = total as f64 / frame.len() as f64;
        if mean_diff > self.d_th {
            return (false, mean_diff);
        }
        self.ring.remove(0);
        self.ring.push(frame.to_vec());
        self.mean = Self::average(&self.ring);
        (true, mean_diff)
    }
}
