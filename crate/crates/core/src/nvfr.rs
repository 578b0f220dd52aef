//! NVFR frame-stack container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NVFR"
//! 4       4     width   (u32)
//! 8       4     height  (u32)
//! 12      4     n_frames (u32)
//! 16      2·w·h·n  pixels, u16, frame-major then row-major
//! ```
//!
//! The phase-mask export in [`crate::holography`] reuses the same 16-byte
//! header with magic "PHAS".

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::camera::CameraModel;

pub const FRAME_MAGIC: [u8; 4] = *b"NVFR";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub pixels: Vec<u16>,
    /// Readout model the frames were rendered with; not stored in the NVFR file.
    pub camera: Option<CameraModel>,
    /// Seed of the synthetic run; not stored in the NVFR file.
    pub seed: Option<u64>,
}

impl FrameStack {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self, FormatError> {
        if width == 0 || height == 0 {
            return Err(FormatError::DimensionMismatch(format!("{width}x{height} frame")));
        }
        let per = width * height;
        if pixels.is_empty() || !pixels.len().is_multiple_of(per) {
            return Err(FormatError::DimensionMismatch(format!(
                "{} pixels is not a positive multiple of {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            n_frames: pixels.len() / per,
            pixels,
            camera: None,
            seed: None,
        })
    }

    pub fn from_frames(width: usize, height: usize, frames: Vec<Vec<u16>>) -> Result<Self, FormatError> {
        if frames.iter().any(|f| f.len() != width * height) {
            return Err(FormatError::DimensionMismatch("frame length differs from width*height".into()));
        }
        Self::new(width, height, frames.concat())
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, i: usize) -> &[u16] {
        let n = self.frame_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u16]> {
        self.pixels.chunks_exact(self.frame_len())
    }

    pub fn with_meta(mut self, camera: Option<CameraModel>, seed: Option<u64>) -> Self {
        self.camera = camera;
        self.seed = seed;
        self
    }

    /// Per-pixel mean over all frames.
    pub fn mean_image(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.frame_len()];
        for f in self.frames() {
            for (a, &p) in acc.iter_mut().zip(f) {
                *a += f64::from(p);
            }
        }
        let n = self.n_frames as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: [u8; 4], dims: [u32; 3]) -> io::Result<()> {
    w.write_all(&magic)?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn parse_header(bytes: &[u8], magic: [u8; 4]) -> Result<[usize; 3], FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(FormatError::BadMagic { found, expected: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let dims = [u(4), u(8), u(12)];
    if dims.contains(&0) {
        return Err(FormatError::DimensionMismatch(format!(
            "header declares {}x{}x{}",
            dims[0], dims[1], dims[2]
        )));
    }
    Ok(dims)
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::DimensionMismatch(format!("{what} {v} exceeds u32")))
}

pub fn encode_frames<W: Write>(stack: &FrameStack, w: &mut W) -> Result<(), FormatError> {
    if stack.pixels.len() != stack.width * stack.height * stack.n_frames || stack.n_frames == 0 {
        return Err(FormatError::DimensionMismatch("pixel buffer does not match header".into()));
    }
    write_header(
        w,
        FRAME_MAGIC,
        [
            to_u32(stack.width, "width")?,
            to_u32(stack.height, "height")?,
            to_u32(stack.n_frames, "n_frames")?,
        ],
    )?;
    let mut buf = Vec::with_capacity(stack.pixels.len() * 2);
    for p in &stack.pixels {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn decode_frames(bytes: &[u8]) -> Result<FrameStack, FormatError> {
    let [width, height, n_frames] = parse_header(bytes, FRAME_MAGIC)?;
    let expected = HEADER_LEN + 2 * width * height * n_frames;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::DimensionMismatch(format!(
            "{} trailing bytes after {width}x{height}x{n_frames} payload",
            bytes.len() - expected
        )));
    }
    let pixels = bytes[HEADER_LEN..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(FrameStack {
        width,
        height,
        n_frames,
        pixels,
        camera: None,
        seed: None,
    })
}

pub fn write_frames(stack: &FrameStack, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_frames(stack, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameStack, FormatError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_frames(&bytes)
}
