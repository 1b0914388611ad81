//! Dense 8-bit pixel buffers and the arithmetic every later stage is built on.
//!
//! Images are row-major with the origin at the top-left corner; `y` grows
//! downward. All differencing happens on [`GrayImage`].

use rayon::prelude::*;
use thiserror::Error;

/// Number of images averaged into a mean background.
pub const MEAN_WINDOW: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("incompatible frames: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("expected exactly {expected} images, got {actual}")]
    WrongCount { expected: usize, actual: usize },
}

/// 8-bit single-channel image.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

/// 24-bit RGB image, stored as interleaved `r, g, b` bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for ColorImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ColorImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

fn pixel_count(width: u32, height: u32) -> Result<usize, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    Ok(width as usize * height as usize)
}

impl GrayImage {
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = pixel_count(width, height)?;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single gray value.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        let n = pixel_count(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![value; n],
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, ImageError> {
        let n = pixel_count(width, height)?;
        let mut pixels = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    /// Pixel at `(x, y)`. Panics when out of bounds.
    pub fn get(&self, x: u32, y: u32) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }

    fn check_same_dims(&self, other: &GrayImage) -> Result<(), ImageError> {
        if self.dimensions() != other.dimensions() {
            return Err(ImageError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }
}

impl ColorImage {
    /// `rgb` holds `width * height` interleaved triples.
    pub fn from_raw(width: u32, height: u32, rgb: Vec<u8>) -> Result<Self, ImageError> {
        let expected = pixel_count(width, height)? * 3;
        if rgb.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: rgb.len(),
            });
        }
        Ok(Self { width, height, rgb })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let n = pixel_count(width, height)?;
        let mut rgb = Vec::with_capacity(n * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self { width, height, rgb })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn raw(&self) -> &[u8] {
        &self.rgb
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Luma of one RGB triple with weights 0.299 / 0.587 / 0.114, rounded half up.
///
/// Evaluated in integer thousandths so ties round exactly.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

pub fn to_grayscale(img: &ColorImage) -> GrayImage {
    let pixels = img
        .rgb
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Per-pixel `|a - b|`.
pub fn abs_diff(a: &GrayImage, b: &GrayImage) -> Result<GrayImage, ImageError> {
    a.check_same_dims(b)?;
    let pixels = a
        .pixels
        .par_iter()
        .zip(b.pixels.par_iter())
        .map(|(&p, &q)| p.abs_diff(q))
        .collect();
    Ok(GrayImage {
        width: a.width,
        height: a.height,
        pixels,
    })
}

/// Exact integer sum of all pixels.
pub fn pixel_sum(img: &GrayImage) -> u64 {
    img.pixels.iter().map(|&p| p as u64).sum()
}

/// Arithmetic mean of all pixel values.
pub fn mean_gray(img: &GrayImage) -> Result<f64, ImageError> {
    if img.pixels.is_empty() {
        return Err(ImageError::EmptyImage {
            width: img.width,
            height: img.height,
        });
    }
    Ok(pixel_sum(img) as f64 / img.pixels.len() as f64)
}

/// Pixel-wise mean of exactly five images, rounded half away from zero.
pub fn mean_of_images<I: AsRef<GrayImage>>(imgs: &[I]) -> Result<GrayImage, ImageError> {
    if imgs.len() != MEAN_WINDOW {
        return Err(ImageError::WrongCount {
            expected: MEAN_WINDOW,
            actual: imgs.len(),
        });
    }
    let first = imgs[0].as_ref();
    for other in &imgs[1..] {
        first.check_same_dims(other.as_ref())?;
    }
    let planes: Vec<&[u8]> = imgs.iter().map(|i| i.as_ref().pixels()).collect();
    let pixels = (0..first.pixels.len())
        .into_par_iter()
        .map(|i| {
            let sum: u32 = planes.iter().map(|p| p[i] as u32).sum();
            // round(sum / 5) for non-negative sums == floor((2 * sum + 5) / 10)
            ((2 * sum + MEAN_WINDOW as u32) / (2 * MEAN_WINDOW as u32)) as u8
        })
        .collect();
    Ok(GrayImage {
        width: first.width,
        height: first.height,
        pixels,
    })
}

impl AsRef<GrayImage> for GrayImage {
    fn as_ref(&self) -> &GrayImage {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_black_and_white() {
        let black = ColorImage::from_fn(4, 3, |_, _| [0, 0, 0]).unwrap();
        assert!(to_grayscale(&black).pixels().iter().all(|&p| p == 0));
        let white = ColorImage::from_fn(4, 3, |_, _| [255, 255, 255]).unwrap();
        assert!(to_grayscale(&white).pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn grayscale_keeps_dimensions() {
        let img = ColorImage::from_fn(7, 2, |x, y| [x as u8, y as u8, 9]).unwrap();
        assert_eq!(to_grayscale(&img).dimensions(), (7, 2));
    }

    #[test]
    fn abs_diff_single_pixel() {
        let a = GrayImage::from_raw(1, 1, vec![10]).unwrap();
        let b = GrayImage::from_raw(1, 1, vec![250]).unwrap();
        assert_eq!(abs_diff(&a, &b).unwrap().pixels(), &[240]);
    }

    #[test]
    fn abs_diff_identity_is_zero() {
        let a = GrayImage::from_fn(5, 5, |x, y| (x * 40 + y) as u8).unwrap();
        assert!(abs_diff(&a, &a).unwrap().pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn abs_diff_rejects_mismatch() {
        let a = GrayImage::filled(4, 4, 0).unwrap();
        let b = GrayImage::filled(4, 5, 0).unwrap();
        assert!(matches!(
            abs_diff(&a, &b),
            Err(ImageError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_gray_cases() {
        assert_eq!(mean_gray(&GrayImage::filled(4, 4, 0).unwrap()).unwrap(), 0.0);
        let img = GrayImage::from_raw(2, 2, vec![0, 0, 0, 100]).unwrap();
        assert_eq!(mean_gray(&img).unwrap(), 25.0);
    }

    #[test]
    fn zero_pixel_images_cannot_be_built() {
        assert!(GrayImage::from_raw(0, 3, vec![]).is_err());
        assert!(GrayImage::filled(3, 0, 1).is_err());
    }

    #[test]
    fn mean_of_identical_images() {
        let img = GrayImage::from_fn(6, 4, |x, y| (x * 31 + y * 7) as u8).unwrap();
        let five = vec![img.clone(); 5];
        assert_eq!(mean_of_images(&five).unwrap(), img);
    }

    #[test]
    fn mean_of_images_forced_arithmetic() {
        let imgs: Vec<GrayImage> = [0u8, 10, 20, 30, 40]
            .iter()
            .map(|&v| GrayImage::from_raw(1, 1, vec![v]).unwrap())
            .collect();
        assert_eq!(mean_of_images(&imgs).unwrap().pixels(), &[20]);
    }

    #[test]
    fn mean_of_images_rounds_half_away_from_zero() {
        // A sum over five integers divided by 5 never lands on .5; check the .4/.6 neighbours.
        let build = |vals: [u8; 5]| -> Vec<GrayImage> {
            vals.iter()
                .map(|&v| GrayImage::from_raw(1, 1, vec![v]).unwrap())
                .collect()
        };
        assert_eq!(mean_of_images(&build([2, 2, 2, 3, 3])).unwrap().pixels(), &[2]);
        assert_eq!(mean_of_images(&build([2, 2, 3, 3, 3])).unwrap().pixels(), &[3]);
        assert_eq!(
            mean_of_images(&build([255; 5])).unwrap().pixels(),
            &[255]
        );
    }

    #[test]
    fn mean_of_images_errors() {
        let img = GrayImage::filled(3, 3, 1).unwrap();
        assert_eq!(
            mean_of_images(&vec![img.clone(); 4]),
            Err(ImageError::WrongCount {
                expected: 5,
                actual: 4
            })
        );
        let mut imgs = vec![img; 5];
        imgs[3] = GrayImage::filled(3, 4, 1).unwrap();
        assert!(matches!(
            mean_of_images(&imgs),
            Err(ImageError::DimensionMismatch { .. })
        ));
    }
}
