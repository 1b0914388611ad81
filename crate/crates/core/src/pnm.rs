//! Binary PGM (P5) / PPM (P6) codec, plus decoding of BMP/PNG frames via the
//! `image` crate. Only `maxval = 255` is supported.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::image::{to_grayscale, ColorImage, GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("not a binary PGM/PPM stream")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 255)")]
    MaxVal(u32),
    #[error("truncated pixel data: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("expected a {expected} stream")]
    WrongKind { expected: &'static str },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Gray,
    Rgb,
}

struct Header {
    kind: Kind,
    width: u32,
    height: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PnmError> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => Kind::Gray,
        Some(b"P6") => Kind::Rgb,
        _ => return Err(PnmError::BadMagic),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and '#' comments may precede each token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | None) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PnmError::Header("unexpected end of header".into())),
            }
        }
        let start = pos;
        while matches!(bytes.get(pos), Some(b) if b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::Header(format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| PnmError::Header(format!("number out of range: {text}")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::Header("missing separator after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PnmError::MaxVal(maxval));
    }
    Ok(Header {
        kind,
        width,
        height,
        data_offset: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let expected = header.width as usize * header.height as usize * channels;
    let data = &bytes[header.data_offset..];
    if data.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            actual: data.len(),
        });
    }
    Ok(&data[..expected])
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PnmError> {
    let header = parse_header(bytes)?;
    if header.kind != Kind::Gray {
        return Err(PnmError::WrongKind { expected: "P5" });
    }
    let data = raster(bytes, &header, 1)?;
    Ok(GrayImage::from_raw(header.width, header.height, data.to_vec())?)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ColorImage, PnmError> {
    let header = parse_header(bytes)?;
    if header.kind != Kind::Rgb {
        return Err(PnmError::WrongKind { expected: "P6" });
    }
    let data = raster(bytes, &header, 3)?;
    Ok(ColorImage::from_raw(header.width, header.height, data.to_vec())?)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn encode_ppm(img: &ColorImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.raw());
    out
}

/// Decodes any supported frame format to grayscale. PGM passes through,
/// PPM goes through [`to_grayscale`], everything else through `image`.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage, PnmError> {
    match bytes.get(..2) {
        Some(b"P5") => decode_pgm(bytes),
        Some(b"P6") => Ok(to_grayscale(&decode_ppm(bytes)?)),
        _ => {
            let decoded = image::load_from_memory(bytes)
                .map_err(|e| PnmError::Decode(e.to_string()))?
                .into_rgb8();
            let (w, h) = decoded.dimensions();
            let color = ColorImage::from_raw(w, h, decoded.into_raw())?;
            Ok(to_grayscale(&color))
        }
    }
}

pub fn load_gray(path: &Path) -> Result<GrayImage, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_gray(&bytes)
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<(), PnmError> {
    fs::write(path, encode_pgm(img)).map_err(|source| PnmError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// PNG encoding of a gray image, used for HTTP responses.
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, PnmError> {
    let buf = image::GrayImage::from_raw(img.width(), img.height(), img.pixels().to_vec())
        .expect("dimensions already validated");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| PnmError::Decode(e.to_string()))?;
    Ok(out.into_inner())
}
