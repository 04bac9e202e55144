//! 8-bit grayscale images and binary masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Row-major 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayscalePatch {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayscalePatch {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn contains(&self, b: &BoundingBox) -> bool {
        b.fits(self.width, self.height)
    }

    /// Copy of the pixels under `b`.
    pub fn crop(&self, b: &BoundingBox) -> Result<GrayscalePatch> {
        if !self.contains(b) {
            return Err(Error::ShapeMismatch(format!(
                "crop {b:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(GrayscalePatch::from_fn(b.w as usize, b.h as usize, |x, y| {
            self.get(b.x as usize + x, b.y as usize + y)
        }))
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Mean intensity over the pixels of `b` (assumed in bounds).
    pub fn region_mean(&self, b: &BoundingBox) -> f64 {
        let mut sum = 0u64;
        for y in b.y as usize..b.bottom() as usize {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            sum += row[b.x as usize..b.right() as usize]
                .iter()
                .map(|&p| p as u64)
                .sum::<u64>();
        }
        sum as f64 / b.area() as f64
    }

    pub fn flip_horizontal(&self) -> GrayscalePatch {
        GrayscalePatch::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayscalePatch {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        GrayscalePatch::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let top = self.get(x0, y0) as f64 * (1.0 - ax) + self.get(x1, y0) as f64 * ax;
            let bot = self.get(x0, y1) as f64 * (1.0 - ax) + self.get(x1, y1) as f64 * ax;
            (top * (1.0 - ay) + bot * ay).round().clamp(0.0, 255.0) as u8
        })
    }

    pub fn load_png(path: &Path) -> Result<GrayscalePatch> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        GrayscalePatch::new(w as usize, h as usize, luma.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Row-major binary image with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Set every pixel of `b` (clipped to the mask) to 1.
    pub fn fill_box(&mut self, b: &BoundingBox) {
        let x1 = (b.right() as usize).min(self.width);
        let y1 = (b.bottom() as usize).min(self.height);
        for y in (b.y as usize).min(y1)..y1 {
            for x in (b.x as usize).min(x1)..x1 {
                self.set(x, y, true);
            }
        }
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Nearest-neighbour resampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            self.get(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }

    /// Write as a 1-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let png_err = |e: png::EncodingError| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&packed).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Load any grayscale PNG, treating nonzero pixels as foreground.
    pub fn load_png(path: &Path) -> Result<BinaryMask> {
        let img = GrayscalePatch::load_png(path)?;
        Ok(BinaryMask::from_fn(img.width(), img.height(), |x, y| {
            img.get(x, y) != 0
        }))
    }
}
