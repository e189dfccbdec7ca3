//! Single-channel images with intensities nominally in `[0, 1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height * width != data.len() {
            return config(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Copies the `h × w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return config(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            ));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    /// `[1, 1, H, W]` tensor view for the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("dims agree")
    }

    /// Accepts `[H, W]` or any tensor whose leading extents are all 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&e| e != 1) {
            return config(format!("tensor {s:?} is not a single image"));
        }
        Self::new(s[s.len() - 2], s[s.len() - 1], t.data().to_vec())
    }

    pub fn write_ft1(&self, path: &Path) -> Result<()> {
        Tensor::new(&[self.height, self.width], self.data.clone())?.write_ft1(path)
    }

    pub fn read_ft1(path: &Path) -> Result<Self> {
        Self::from_tensor(&Tensor::read_ft1(path)?)
    }

    /// Reads an 8-bit or 16-bit grayscale PNG, normalized to `[0, 1]`.
    pub fn read_png(path: &Path) -> Result<Self> {
        let png_err = |e: png::DecodingError| Error::Png(format!("{}: {e}", path.display()));
        let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(png_err)?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let data: Vec<f32> = match (info.color_type, info.bit_depth) {
            (png::ColorType::Grayscale, png::BitDepth::Sixteen) => bytes
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
                .collect(),
            (png::ColorType::Grayscale, _) => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            (ct, bd) => {
                return Err(Error::Png(format!(
                    "{}: expected grayscale, found {ct:?}/{bd:?}",
                    path.display()
                )))
            }
        };
        Self::new(h, w, data)
    }

    /// Writes an 8-bit grayscale PNG after clamping to `[0, 1]`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let enc_err = |e: png::EncodingError| Error::Png(format!("{}: {e}", path.display()));
        let mut writer = enc.write_header().map_err(enc_err)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer.write_image_data(&bytes).map_err(enc_err)?;
        writer.finish().map_err(enc_err)?;
        Ok(())
    }

    /// Loads PNG or FT1 by extension.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") | Some("PNG") => Self::read_png(path),
            Some("ft1") => Self::read_ft1(path),
            _ => config(format!("unsupported image file {}", path.display())),
        }
    }
}
