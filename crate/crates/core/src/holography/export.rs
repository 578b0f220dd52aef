//! Phase-mask files.
//!
//! PHAS layout (little-endian): the 16-byte NVFR-style header with magic
//! "PHAS" and dims (width, height, 1), then f64 wavelength, f64 pixel pitch,
//! then width·height f32 phases in radians, row-major.
//!
//! The PNG export quantizes [0, 2π) onto 0..=255 and is lossy: decoding a
//! level `q` gives `q·2π/256`, within 2π/256 of the original phase.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PhasePattern;
use crate::nvfr::{parse_header, to_u32, write_header, FormatError, HEADER_LEN};

pub const PHAS_MAGIC: [u8; 4] = *b"PHAS";
const META_LEN: usize = 16;

pub fn encode_phas<W: Write>(p: &PhasePattern, w: &mut W) -> Result<(), FormatError> {
    if p.phases.len() != p.width * p.height {
        return Err(FormatError::DimensionMismatch("phase buffer does not match grid".into()));
    }
    write_header(w, PHAS_MAGIC, [to_u32(p.width, "width")?, to_u32(p.height, "height")?, 1])?;
    let mut buf = Vec::with_capacity(META_LEN + 4 * p.phases.len());
    buf.extend_from_slice(&p.wavelength.to_le_bytes());
    buf.extend_from_slice(&p.pixel_pitch.to_le_bytes());
    for &phi in &p.phases {
        buf.extend_from_slice(&(phi as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn decode_phas(bytes: &[u8]) -> Result<PhasePattern, FormatError> {
    let [width, height, planes] = parse_header(bytes, PHAS_MAGIC)?;
    if planes != 1 {
        return Err(FormatError::DimensionMismatch(format!("{planes} phase planes; only 1 is supported")));
    }
    let expected = HEADER_LEN + META_LEN + 4 * width * height;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::DimensionMismatch(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let phases = bytes[HEADER_LEN + META_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(PhasePattern {
        width,
        height,
        phases,
        wavelength: f64_at(HEADER_LEN),
        pixel_pitch: f64_at(HEADER_LEN + 8),
    })
}

pub fn write_phas(p: &PhasePattern, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_phas(p, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_phas(path: impl AsRef<Path>) -> Result<PhasePattern, FormatError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_phas(&bytes)
}

/// Gray level for each phase: floor(φ·256/2π), clamped to 255.
pub fn quantize_u8(p: &PhasePattern) -> Vec<u8> {
    p.phases
        .iter()
        .map(|&phi| ((phi / TAU * 256.0).floor() as i64).clamp(0, 255) as u8)
        .collect()
}

pub fn write_png(p: &PhasePattern, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let img = image::GrayImage::from_raw(to_u32(p.width, "width")?, to_u32(p.height, "height")?, quantize_u8(p))
        .ok_or_else(|| FormatError::DimensionMismatch("phase buffer does not match grid".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| FormatError::Io(std::io::Error::other(e)))
}
