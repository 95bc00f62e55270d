use std::path::Path;

use image::{imageops, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// 8-bit RGB image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                "image",
                format!("{height}x{width} RGB needs {} bytes, got {}", height * width * 3, data.len()),
            ));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        Image {
            height,
            width,
            data: rgb.iter().copied().cycle().take(height * width * 3).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Reads an 8-bit grayscale or RGB PNG. Grayscale is replicated to three channels.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(h as usize, w as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image(other),
            })
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }

    /// Bilinear resize to exactly `height x width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let out = imageops::resize(
            &self.to_rgb_image(),
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        Image {
            height,
            width,
            data: out.into_raw(),
        }
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({row}, {col}) exceeds {}x{}", self.height, self.width),
            ));
        }
        let data = (row..row + h)
            .flat_map(|r| self.data[(r * self.width + col) * 3..][..w * 3].iter().copied())
            .collect();
        Ok(Image {
            height: h,
            width: w,
            data,
        })
    }

    /// `(1, 3, h, w)` tensor scaled to `[0, 1]`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::of(px[c] as f64 / 255.0);
            }
        }
        Tensor::new(Shape::new(1, 3, self.height, self.width), out).expect("image dimensions are consistent")
    }
}
