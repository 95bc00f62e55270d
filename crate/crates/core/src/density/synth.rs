//! Synthetic crowd scenes: bright blobs on a textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Image, PointAnnotation};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of head counts.
    pub count_range: (usize, usize),
    /// Inclusive range of blob radii in pixels.
    pub head_radius_range: (f64, f64),
    /// Amplitude of the background texture in `[0, 1]` intensity units.
    pub bg_texture: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            count_range: (5, 30),
            head_radius_range: (1.5, 2.5),
            bg_texture: 0.12,
        }
    }
}

/// Renders one scene. The annotation lists the exact blob centres.
pub fn synth_scene(cfg: &SceneConfig, seed: u64) -> Result<(Image, PointAnnotation)> {
    let (lo, hi) = cfg.count_range;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty count range {lo}:{hi}")));
    }
    let (rlo, rhi) = cfg.head_radius_range;
    if !(rlo > 0.0 && rlo <= rhi) {
        return Err(Error::InvalidArgument(format!("bad head radius range {rlo}..{rhi}")));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidArgument("scene must be non-empty".into()));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base: f64 = rng.random_range(0.15..0.35);
    let tint: [f64; 3] = [rng.random_range(0.8..1.2), rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)];
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut canvas = vec![0.0f64; h * w * 3];
    for r in 0..h {
        for c in 0..w {
            let wave: f64 = waves
                .iter()
                .map(|&(f, a, p)| (f * (c as f64 * a.cos() + r as f64 * a.sin()) + p).sin())
                .sum::<f64>()
                / 3.0;
            let noise: f64 = rng.random_range(-0.5..0.5);
            let v = base + cfg.bg_texture * (wave + noise);
            for ch in 0..3 {
                canvas[(r * w + c) * 3 + ch] = v * tint[ch];
            }
        }
    }

    let count = rng.random_range(lo..=hi);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.random_range(0.0..w as f64);
        let y = rng.random_range(0.0..h as f64);
        let radius = if rlo == rhi { rlo } else { rng.random_range(rlo..=rhi) };
        let strength: f64 = rng.random_range(0.5..0.7);
        let reach = (3.0 * radius).ceil() as isize;
        let (cx, cy) = (x.floor() as isize, y.floor() as isize);
        for r in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
            for c in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                let dx = c as f64 + 0.5 - x;
                let dy = r as f64 + 0.5 - y;
                let v = strength * (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
                let idx = (r as usize * w + c as usize) * 3;
                for (ch, warm) in [1.0, 0.85, 0.7].iter().enumerate() {
                    canvas[idx + ch] += v * warm;
                }
            }
        }
        points.push((x, y));
    }

    let data = canvas
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((Image::new(h, w, data)?, PointAnnotation::new(points, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_count_range() {
        let cfg = SceneConfig {
            count_range: (0, 0),
            ..SceneConfig::default()
        };
        let (_, ann) = synth_scene(&cfg, 1).unwrap();
        assert_eq!(ann.count(), 0);
        let bad = SceneConfig {
            count_range: (3, 2),
            ..SceneConfig::default()
        };
        assert!(synth_scene(&bad, 1).is_err());
    }

    #[test]
    fn deterministic_and_exact_count() {
        let cfg = SceneConfig {
            count_range: (30, 30),
            ..SceneConfig::default()
        };
        let a = synth_scene(&cfg, 7).unwrap();
        let b = synth_scene(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.count(), 30);
        for &(x, y) in a.1.points() {
            assert!((0.0..64.0).contains(&x) && (0.0..64.0).contains(&y));
        }
        assert_ne!(synth_scene(&cfg, 8).unwrap().0, a.0);
    }

    #[test]
    fn heads_are_brighter_than_background() {
        let cfg = SceneConfig {
            count_range: (1, 1),
            head_radius_range: (2.0, 2.0),
            ..SceneConfig::default()
        };
        let (img, ann) = synth_scene(&cfg, 3).unwrap();
        let (x, y) = ann.points()[0];
        let head = img.pixel(y as usize, x as usize)[0] as i32;
        let mean: i32 = (0..img.height()).map(|r| img.pixel(r, 0)[0] as i32).sum::<i32>() / img.height() as i32;
        assert!(head > mean + 60, "head {head} vs background {mean}");
    }
}
