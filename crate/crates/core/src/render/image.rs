use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Quantizes to 8 bits and writes a PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::RgbImage::from_raw(self.width, self.height, bytes)
            .expect("buffer length matches dimensions");
        img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect();
        Self::from_data(w, h, data)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        write_pfm(path, self.width as usize, self.height as usize, 3, &data)
    }
}

/// Writes a portable float map (`PF` for 3 channels, `Pf` for 1), rows
/// bottom-to-top, little-endian.
pub fn write_pfm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    let path = path.as_ref();
    if !(channels == 1 || channels == 3) || data.len() != width * height * channels {
        return Err(Error::DimensionMismatch(format!(
            "PFM {width}x{height}x{channels} cannot hold {} values",
            data.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
        for row in (0..height).rev() {
            let start = row * width * channels;
            for v in &data[start..start + width * channels] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_values_survive_png() {
        let data: Vec<f64> = (0..4 * 3 * 3)
            .map(|k| ((k * 7) % 256) as f64 / 255.0)
            .collect();
        let img = Image::from_data(4, 3, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
    }

    #[test]
    fn from_data_checks_length() {
        assert!(Image::from_data(2, 2, vec![0.0; 11]).is_err());
        assert!(Image::new(2, 3).same_shape(&Image::new(3, 2)).is_err());
    }

    #[test]
    fn pfm_rows_run_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pfm");
        write_pfm(&p, 2, 2, 1, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let body: Vec<f32> = bytes[header.len()..]
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(body, vec![3.0, 4.0, 1.0, 2.0]);
        assert!(write_pfm(&p, 2, 2, 2, &[0.0; 8]).is_err());
    }
}
