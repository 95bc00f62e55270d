use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DensityMap, Image, SegMask};
use crate::error::{Error, Result};

/// Random crop, horizontal flip and colour jitter settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub crop: usize,
    pub hflip_prob: f64,
    pub brightness_range: (f64, f64),
    pub saturation_range: (f64, f64),
    /// Crop offsets are multiples of this, so maps at divisors that divide it
    /// crop exactly alongside the image.
    pub align: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            crop: 224,
            hflip_prob: 0.5,
            brightness_range: (0.8, 1.2),
            saturation_range: (0.8, 1.2),
            align: 8,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if self.crop == 0 || self.align == 0 || self.crop % self.align != 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of the alignment {}",
                self.crop, self.align
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        if !range_ok(self.brightness_range) || !range_ok(self.saturation_range) {
            return Err(Error::Config("jitter ranges must be positive and ordered".into()));
        }
        Ok(())
    }
}

fn check_divisor(what: &str, divisor: usize, spec: &AugmentSpec) -> Result<()> {
    if divisor == 0 || spec.align % divisor != 0 || spec.crop % divisor != 0 {
        return Err(Error::InvalidArgument(format!(
            "{what} at 1/{divisor} scale cannot follow a crop aligned to {}",
            spec.align
        )));
    }
    Ok(())
}

/// Crops, flips and colour-jitters one sample.
///
/// The density map and mask may be stored at any resolution divisor that
/// divides `spec.align`; the same window and flip are applied to all three.
/// Colour jitter touches only the image.
pub fn augment(
    image: &Image,
    density: &DensityMap,
    mask: &SegMask,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<(Image, DensityMap, SegMask)> {
    spec.validate()?;
    let (h, w) = (image.height(), image.width());
    if h < spec.crop || w < spec.crop {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {0}x{0} crop",
            spec.crop
        )));
    }
    let (dd, md) = (density.resolution_divisor(), mask.resolution_divisor());
    check_divisor("density map", dd, spec)?;
    check_divisor("mask", md, spec)?;
    if density.height() * dd != h || density.width() * dd != w || mask.height() * md != h || mask.width() * md != w {
        return Err(Error::shape(
            "augment",
            "density map and mask must cover the image exactly".to_string(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = spec.align * rng.random_range(0..=(h - spec.crop) / spec.align);
    let col = spec.align * rng.random_range(0..=(w - spec.crop) / spec.align);
    let flip = rng.random_bool(spec.hflip_prob);
    let brightness = sample(&mut rng, spec.brightness_range);
    let saturation = sample(&mut rng, spec.saturation_range);

    let c = spec.crop;
    let mut img = image.crop(row, col, c, c)?;
    let mut dens = density.crop(row / dd, col / dd, c / dd, c / dd)?;
    let mut m = mask.crop(row / md, col / md, c / md, c / md)?;
    if flip {
        img = hflip_image(&img);
        dens = hflip_density(&dens);
        m = hflip_mask(&m);
    }
    Ok((jitter(&img, brightness, saturation), dens, m))
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Saturation blends each pixel with its luma; brightness scales the result.
fn jitter(image: &Image, brightness: f64, saturation: f64) -> Image {
    if brightness == 1.0 && saturation == 1.0 {
        return image.clone();
    }
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let [r, g, b] = [px[0] as f64, px[1] as f64, px[2] as f64];
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            [r, g, b].map(|v| {
                let v = ((1.0 - saturation) * luma + saturation * v) * brightness;
                v.round().clamp(0.0, 255.0) as u8
            })
        })
        .collect();
    Image::new(image.height(), image.width(), data).expect("same dimensions")
}

fn flip_rows<T: Copy>(values: &[T], width: usize, channels: usize) -> Vec<T> {
    values
        .chunks_exact(width * channels)
        .flat_map(|row| row.chunks_exact(channels).rev().flatten().copied())
        .collect()
}

pub fn hflip_image(image: &Image) -> Image {
    Image::new(image.height(), image.width(), flip_rows(image.data(), image.width(), 3)).expect("same dimensions")
}

pub fn hflip_density(map: &DensityMap) -> DensityMap {
    DensityMap::new(
        map.height(),
        map.width(),
        map.resolution_divisor(),
        flip_rows(map.values(), map.width(), 1),
    )
    .expect("same dimensions")
}

pub fn hflip_mask(mask: &SegMask) -> SegMask {
    SegMask::new(
        mask.height(),
        mask.width(),
        mask.resolution_divisor(),
        flip_rows(mask.values(), mask.width(), 1),
    )
    .expect("same dimensions")
}
