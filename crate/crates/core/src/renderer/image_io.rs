use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with float channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != (width * height * 3) as usize {
            return Err(Error::InvalidArgument(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        for a in 0..3 {
            self.data[i + a] = c[a] as f32;
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

pub fn write_png(img: &ImageBuf, path: &Path) -> Result<()> {
    image::save_buffer(path, &img.to_rgb8(), img.width, img.height, image::ColorType::Rgb8).map_err(|source| {
        Error::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

/// Portable float map: rows stored bottom to top, little-endian.
pub fn write_pfm(img: &ImageBuf, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut body = Vec::with_capacity(img.data.len() * 4 + 32);
    body.extend_from_slice(format!("PF\n{} {}\n-1.0\n", img.width, img.height).as_bytes());
    let stride = (img.width * 3) as usize;
    for row in img.data.chunks(stride).rev() {
        for v in row {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&body).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
