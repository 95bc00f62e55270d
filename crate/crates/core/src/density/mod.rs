//! Ground truth: point annotations to density maps and segmentation masks.

mod augment;
mod image;
pub mod io;
mod synth;

pub use augment::{augment, hflip_density, hflip_image, hflip_mask, AugmentSpec};
pub use image::Image;
pub use synth::{synth_scene, SceneConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Default Gaussian width in pixels.
pub const DEFAULT_SIGMA: f64 = 4.0;
/// Default density threshold for the segmentation target, applied at 1/4 scale.
pub const DEFAULT_SEG_TAU: f64 = 1e-3;
/// Kernel support in multiples of sigma.
pub const KERNEL_RADIUS_SIGMAS: f64 = 4.0;

/// Head positions for one image, in sub-pixel coordinates.
///
/// Pixel `(row, col)` covers `[col, col + 1) x [row, row + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    points: Vec<(f64, f64)>,
    height: usize,
    width: usize,
}

impl PointAnnotation {
    pub fn new(points: Vec<(f64, f64)>, height: usize, width: usize) -> Result<Self> {
        for &(x, y) in &points {
            if !(x >= 0.0 && x < width as f64 && y >= 0.0 && y < height as f64) {
                return Err(Error::Data(format!(
                    "point ({x}, {y}) lies outside the {height}x{width} image"
                )));
            }
        }
        Ok(PointAnnotation {
            points,
            height,
            width,
        })
    }

    /// `(x, y)` pairs.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Single-channel non-negative map whose sum is the head count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    resolution_divisor: usize,
    values: Vec<f32>,
}

impl DensityMap {
    pub fn new(height: usize, width: usize, resolution_divisor: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "density map",
                format!("{height}x{width} map needs {} values, got {}", height * width, values.len()),
            ));
        }
        if resolution_divisor == 0 {
            return Err(Error::InvalidArgument("resolution divisor must be at least 1".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!("density value {v} is not a finite non-negative number")));
        }
        Ok(DensityMap {
            height,
            width,
            resolution_divisor,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, resolution_divisor: usize) -> Self {
        DensityMap {
            height,
            width,
            resolution_divisor,
            values: vec![0.0; height * width],
        }
    }

    /// Builds a map from model output, clamping tiny negative values to zero.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, sample: usize, resolution_divisor: usize) -> Result<Self> {
        let s = t.shape();
        if s.c() != 1 || sample >= s.n() {
            return Err(Error::shape("density map", format!("cannot take sample {sample} of {s}")));
        }
        let values = t
            .plane(sample, 0)
            .iter()
            .map(|v| v.as_f64().max(0.0) as f32)
            .collect();
        Self::new(s.h(), s.w(), resolution_divisor, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn resolution_divisor(&self) -> usize {
        self.resolution_divisor
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Total mass, accumulated in `f64` in row-major order.
    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            Shape::new(1, 1, self.height, self.width),
            self.values.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("density map dimensions are consistent")
    }

    /// Sub-window `[row, row + h) x [col, col + w)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({row}, {col}) exceeds {}x{}", self.height, self.width),
            ));
        }
        let values = (row..row + h)
            .flat_map(|r| self.values[r * self.width + col..][..w].iter().copied())
            .collect();
        Ok(DensityMap {
            height: h,
            width: w,
            resolution_divisor: self.resolution_divisor,
            values,
        })
    }
}

/// Binary segmentation target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    resolution_divisor: usize,
    values: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, resolution_divisor: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "segmentation mask",
                format!("{height}x{width} mask needs {} values, got {}", height * width, values.len()),
            ));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Data("segmentation mask must be binary".into()));
        }
        Ok(SegMask {
            height,
            width,
            resolution_divisor,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn resolution_divisor(&self) -> usize {
        self.resolution_divisor
    }
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            Shape::new(1, 1, self.height, self.width),
            self.values.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect(),
        )
        .expect("mask dimensions are consistent")
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({row}, {col}) exceeds {}x{}", self.height, self.width),
            ));
        }
        let values = (row..row + h)
            .flat_map(|r| self.values[r * self.width + col..][..w].iter().copied())
            .collect();
        Ok(SegMask {
            height: h,
            width: w,
            resolution_divisor: self.resolution_divisor,
            values,
        })
    }
}

pub const RESIZE_MULTIPLE: usize = 16;
pub const RESIZE_MAX_SIDE: usize = 1024;

/// Target size for an image: longest side scaled down to at most 1024, then
/// each side floored to a multiple of 16 (never below 16).
pub fn resize_dims(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < RESIZE_MULTIPLE || w < RESIZE_MULTIPLE {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than {RESIZE_MULTIPLE} pixels on a side"
        )));
    }
    let longest = h.max(w);
    let scale = |d: usize| -> usize {
        let scaled = if longest > RESIZE_MAX_SIDE {
            // exact integer form of floor(d * 1024 / longest)
            (d as u128 * RESIZE_MAX_SIDE as u128 / longest as u128) as usize
        } else {
            d
        };
        (scaled / RESIZE_MULTIPLE * RESIZE_MULTIPLE).max(RESIZE_MULTIPLE)
    };
    Ok((scale(h), scale(w)))
}

/// Sums a unit-mass truncated Gaussian per head into a full-resolution map.
///
/// Each kernel covers `ceil(4 sigma)` pixels around its head and is
/// renormalized over the part that falls inside the image, so heads near the
/// border still contribute exactly one.
pub fn generate_density_map(ann: &PointAnnotation, sigma: f64) -> Result<DensityMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let (h, w) = ann.image_size();
    let radius = (KERNEL_RADIUS_SIGMAS * sigma).ceil() as isize;
    let two_var = 2.0 * sigma * sigma;
    let mut acc = vec![0.0f64; h * w];
    let mut kernel = Vec::new();
    for &(x, y) in ann.points() {
        let (cx, cy) = (x.floor() as isize, y.floor() as isize);
        let rows = (cy - radius).max(0)..=(cy + radius).min(h as isize - 1);
        let cols = (cx - radius).max(0)..=(cx + radius).min(w as isize - 1);
        kernel.clear();
        let mut mass = 0.0;
        for r in rows.clone() {
            let dy = r as f64 + 0.5 - y;
            for c in cols.clone() {
                let dx = c as f64 + 0.5 - x;
                let v = (-(dx * dx + dy * dy) / two_var).exp();
                mass += v;
                kernel.push((r as usize * w + c as usize, v));
            }
        }
        for &(idx, v) in &kernel {
            acc[idx] += v / mass;
        }
    }
    DensityMap::new(h, w, 1, acc.into_iter().map(|v| v as f32).collect())
}

/// Sum-pools `factor x factor` blocks; the total mass is unchanged.
pub fn downsample_sum(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be at least 1".into()));
    }
    if map.height % factor != 0 || map.width % factor != 0 {
        return Err(Error::shape(
            "downsample_sum",
            format!("{}x{} is not divisible by {factor}", map.height, map.width),
        ));
    }
    let (oh, ow) = (map.height / factor, map.width / factor);
    let mut acc = vec![0.0f64; oh * ow];
    for r in 0..map.height {
        for c in 0..map.width {
            acc[(r / factor) * ow + c / factor] += map.values[r * map.width + c] as f64;
        }
    }
    DensityMap::new(
        oh,
        ow,
        map.resolution_divisor * factor,
        acc.into_iter().map(|v| v as f32).collect(),
    )
}

/// `1` where the density exceeds `tau`, else `0`.
pub fn make_seg_mask(density: &DensityMap, tau: f64) -> Result<SegMask> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("mask threshold must be >= 0, got {tau}")));
    }
    let values = density
        .values
        .iter()
        .map(|&v| u8::from(v as f64 > tau))
        .collect();
    SegMask::new(density.height, density.width, density.resolution_divisor, values)
}

/// Ground truth for one training or evaluation image at the model's scales.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Counting target at 1/4 scale.
    pub density4: DensityMap,
    /// Intermediate-supervision target at 1/8 scale.
    pub density8: DensityMap,
    /// Segmentation target at 1/4 scale.
    pub mask4: SegMask,
}

impl GroundTruth {
    /// Derives every target from a full-resolution density map.
    pub fn from_full(full: &DensityMap, tau: f64) -> Result<Self> {
        let density4 = downsample_sum(full, 4)?;
        let density8 = downsample_sum(&density4, 2)?;
        let mask4 = make_seg_mask(&density4, tau)?;
        Ok(GroundTruth {
            density4,
            density8,
            mask4,
        })
    }
}
