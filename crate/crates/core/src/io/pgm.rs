//! Binary PGM (P5, maxval 255) reading and writing, bit-exact on round
//! trips.

use std::path::Path;

use super::IoError;
use crate::imgproc::Raster;

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> HeaderScanner<'a> {
    /// Skips whitespace and `#` comments, then reads one ASCII integer.
    fn next_int(&mut self) -> Result<u32, IoError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(u8::is_ascii_digit)
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(IoError::BadHeader {
                path: self.path.to_string(),
                reason: "expected an integer".to_string(),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ASCII")
            .parse()
            .map_err(|_| IoError::BadHeader {
                path: self.path.to_string(),
                reason: "integer out of range".to_string(),
            })
    }
}

fn parse_pgm_named(bytes: &[u8], path: &str) -> Result<Raster, IoError> {
    if bytes.len() < 2 {
        return Err(IoError::BadMagic {
            path: path.to_string(),
        });
    }
    let magic = &bytes[..2];
    if magic != b"P5" {
        // Recognize sibling PNM variants to give a precise error.
        if magic[0] == b'P' && (b'1'..=b'7').contains(&magic[1]) {
            return Err(IoError::UnsupportedVariant {
                path: path.to_string(),
                variant: format!("P{}", magic[1] as char),
            });
        }
        return Err(IoError::BadMagic {
            path: path.to_string(),
        });
    }
    let mut scanner = HeaderScanner {
        bytes,
        pos: 2,
        path,
    };
    let width = scanner.next_int()? as usize;
    let height = scanner.next_int()? as usize;
    let maxval = scanner.next_int()?;
    if maxval != 255 {
        return Err(IoError::UnsupportedMaxval {
            path: path.to_string(),
            maxval,
        });
    }
    if width == 0 || height == 0 {
        return Err(IoError::BadHeader {
            path: path.to_string(),
            reason: "zero dimension".to_string(),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    let pos = scanner.pos;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(IoError::BadHeader {
            path: path.to_string(),
            reason: "missing whitespace after maxval".to_string(),
        });
    }
    let data = &bytes[pos + 1..];
    let expected = width * height;
    if data.len() < expected {
        return Err(IoError::TruncatedData {
            path: path.to_string(),
            expected,
            found: data.len(),
        });
    }
    Ok(Raster::from_bytes(width, height, &data[..expected]))
}

/// Parses an in-memory binary PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<Raster, IoError> {
    parse_pgm_named(bytes, "<memory>")
}

/// Encodes a raster as binary PGM. Intensities are clamped to [0, 255]
/// and rounded; already-integral rasters round trip bit-exactly.
pub fn encode_pgm(img: &Raster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn read_pgm(path: &Path) -> Result<Raster, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm_named(&bytes, &path.display().to_string())
}

pub fn write_pgm(path: &Path, img: &Raster) -> Result<(), IoError> {
    std::fs::write(path, encode_pgm(img)).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}
