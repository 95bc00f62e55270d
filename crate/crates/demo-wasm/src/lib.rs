//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation is a plain Rust function wrapped by a thin exported shim,
//! so the same code runs under native tests.

use ifnet::autodiff::Graph;
use ifnet::density::{generate_density_map, synth_scene, SceneConfig};
use ifnet::model::{ifm_forward, sdb, xavier_uniform, ParamStore};
use ifnet::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// A rendered scene with its ground-truth density.
#[wasm_bindgen]
pub struct Scene {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    density: Vec<f32>,
    points: Vec<f64>,
    density_sum: f64,
}

#[wasm_bindgen]
impl Scene {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Image pixels, RGBA row-major, ready for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Full-resolution density, row-major.
    pub fn density(&self) -> Vec<f32> {
        self.density.clone()
    }

    /// Flattened `[x0, y0, x1, y1, ...]` head positions.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn count(&self) -> usize {
        self.points.len() / 2
    }

    pub fn density_sum(&self) -> f64 {
        self.density_sum
    }
}

pub fn make_scene(seed: u64, side: usize, min_heads: usize, max_heads: usize, sigma: f64) -> Result<Scene, String> {
    let cfg = SceneConfig {
        height: side,
        width: side,
        count_range: (min_heads.min(max_heads), max_heads.max(min_heads)),
        ..SceneConfig::default()
    };
    let (image, ann) = synth_scene(&cfg, seed).map_err(|e| e.to_string())?;
    let map = generate_density_map(&ann, sigma).map_err(|e| e.to_string())?;
    let rgba = image
        .data()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect();
    Ok(Scene {
        width: side,
        height: side,
        rgba,
        density: map.values().to_vec(),
        points: ann.points().iter().flat_map(|&(x, y)| [x, y]).collect(),
        density_sum: map.sum(),
    })
}

/// `sdb(t, 0, k)` at `samples` evenly spaced gaps in `[-half_width, half_width]`.
pub fn sdb_values(k: f64, half_width: f64, samples: usize) -> Result<Vec<f64>, String> {
    if samples < 2 {
        return Err("need at least two samples".into());
    }
    let gaps: Vec<f64> = (0..samples)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (samples - 1) as f64)
        .collect();
    let n = gaps.len();
    let p = Tensor::new(Shape::vector(n), gaps).map_err(|e| e.to_string())?;
    let b = Tensor::zeros(Shape::vector(n));
    Ok(sdb(&p, &b, k).map_err(|e| e.to_string())?.data().to_vec())
}

/// Row-stochastic `channels x channels` affinity of column 1 to column 2 for
/// random features and Xavier-initialized fusion convs. `contrast` scales the
/// features, which sharpens the softmax.
pub fn affinity(seed: u64, channels: usize, side: usize, contrast: f64) -> Result<Vec<f64>, String> {
    if channels == 0 || side < 2 || side % 2 != 0 {
        return Err("channels must be positive and side even".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::<f64>::new();
    for col in ["conv1", "conv2"] {
        p.insert(format!("f.{col}.weight"), xavier_uniform(Shape::new(channels, channels, 3, 3), &mut rng))
            .map_err(|e| e.to_string())?;
        p.insert(format!("f.{col}.bias"), Tensor::zeros(Shape::vector(channels)))
            .map_err(|e| e.to_string())?;
    }
    let shape = Shape::new(1, channels, side, side);
    let mut features = || {
        let v = (0..shape.numel()).map(|_| contrast * rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, v)
    };
    let (x1, x2) = (features().map_err(|e| e.to_string())?, features().map_err(|e| e.to_string())?);
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let a = g.constant(x1);
    let b = g.constant(x2);
    let out = ifm_forward(&mut g, &bound, "f", [a, b], 0.3).map_err(|e| e.to_string())?;
    Ok(g.value(out.weights[0]).data().to_vec())
}

#[wasm_bindgen]
pub fn scene(seed: u32, side: usize, min_heads: usize, max_heads: usize, sigma: f64) -> Result<Scene, JsError> {
    make_scene(u64::from(seed), side, min_heads, max_heads, sigma).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sdb_curve(k: f64, half_width: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    sdb_values(k, half_width, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ifm_affinity(seed: u32, channels: usize, contrast: f64) -> Result<Vec<f64>, JsError> {
    affinity(u64::from(seed), channels, 8, contrast).map_err(|e| JsError::new(&e))
}
