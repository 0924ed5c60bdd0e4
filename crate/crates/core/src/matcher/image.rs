//! 8-bit grayscale images and binary PGM (P5) I/O.

use crate::geometry::ImageSize;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a binary PGM: {0}")]
    Format(String),
    #[error("unsupported maxval {0} (only 8-bit images are supported)")]
    MaxVal(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    /// Panics if `data` does not hold `width * height` bytes.
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "pixel buffer size");
        Self { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut reader = BufReader::new(bytes);
        let header = read_header(&mut reader)?;
        let expected = header.width as usize * header.height as usize;
        let mut data = Vec::with_capacity(expected);
        reader.take(expected as u64).read_to_end(&mut data)?;
        if data.len() != expected {
            return Err(ImageError::Truncated {
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new(header.width, header.height, data))
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImageError> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

struct Header {
    width: u32,
    height: u32,
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn next_token(r: &mut impl BufRead) -> Result<String, ImageError> {
    let mut tok = String::new();
    loop {
        let buf = r.fill_buf()?;
        let Some(&c) = buf.first() else {
            return if tok.is_empty() {
                Err(ImageError::Format("unexpected end of header".into()))
            } else {
                Ok(tok)
            };
        };
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            r.consume(1);
            if !tok.is_empty() {
                return Ok(tok);
            }
            continue;
        }
        tok.push(c as char);
        r.consume(1);
        if tok.len() > 16 {
            return Err(ImageError::Format("header token too long".into()));
        }
    }
}

fn read_header(r: &mut impl BufRead) -> Result<Header, ImageError> {
    // The single whitespace byte after maxval is consumed by `next_token`.
    let magic = next_token(r)?;
    if magic != "P5" {
        return Err(ImageError::Format(format!("magic {magic:?}")));
    }
    let mut num = |what: &str| -> Result<u32, ImageError> {
        let t = next_token(r)?;
        t.parse()
            .map_err(|_| ImageError::Format(format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::MaxVal(maxval));
    }
    Ok(Header { width, height })
}

/// Reads only the header of a PGM file.
pub fn pgm_size(path: &Path) -> Result<ImageSize, ImageError> {
    let file = std::fs::File::open(path)?;
    let h = read_header(&mut BufReader::new(file))?;
    Ok(ImageSize::new(h.width, h.height))
}
