//! Optimisation, metrics and inference.

mod adam;
mod check;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{model_grad_check, MODEL_CHECK_EPS, MODEL_CHECK_SIDE};
pub use metrics::{
    count_errors, evaluate_counts, gaussian_taps, psnr, ssim, ssim_planes, MetricReport, PSNR_CAP_DB, SSIM_K1,
    SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::density::{
    augment, downsample_sum, generate_density_map, resize_dims, AugmentSpec, DensityMap,
    GroundTruth, Image, PointAnnotation, SegMask, DEFAULT_SEG_TAU, DEFAULT_SIGMA,
};
use crate::error::{Error, Result};
use crate::losses::{network_loss, LossWeights, Targets};
use crate::model::{model_forward, predict, sdb, ModelConfig, ParamStore};
use crate::tensor::Tensor;

/// Optimisation and ground-truth settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// The learning rate halves after every this many epochs.
    pub lr_halve_every: usize,
    pub batch: usize,
    pub crop: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub sigma: f64,
    pub seg_tau: f64,
    pub hflip_prob: f64,
    pub brightness_range: (f64, f64),
    pub saturation_range: (f64, f64),
    /// Supervise every block's intermediate density map.
    pub intermediate_supervision: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            lr_halve_every: 1000,
            batch: 16,
            crop: 224,
            epochs: 200,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            sigma: DEFAULT_SIGMA,
            seg_tau: DEFAULT_SEG_TAU,
            hflip_prob: 0.5,
            brightness_range: (0.8, 1.2),
            saturation_range: (0.8, 1.2),
            intermediate_supervision: true,
        }
    }
}

impl TrainConfig {
    /// Settings for 64x64 synthetic scenes and [`ModelConfig::tiny`].
    ///
    /// Faster rates drive the ReLU density head negative on every pixel
    /// within the first epoch, after which it never recovers.
    pub fn tiny() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 4,
            crop: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.lr_halve_every == 0 {
            return Err(Error::Config("batch and lr_halve_every must be at least 1".into()));
        }
        if self.crop == 0 || self.crop % 16 != 0 {
            return Err(Error::Config(format!("crop {} must be a positive multiple of 16", self.crop)));
        }
        if !(self.sigma > 0.0) || !(self.seg_tau >= 0.0) {
            return Err(Error::Config("sigma must be > 0 and seg_tau >= 0".into()));
        }
        self.weights.validate()?;
        self.adam.validate()?;
        self.augment_spec().validate()
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            crop: self.crop,
            hflip_prob: self.hflip_prob,
            brightness_range: self.brightness_range,
            saturation_range: self.saturation_range,
            align: 8,
        }
    }

    /// Learning rate used during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.lr_halve_every).min(1074) as i32;
        self.lr * 0.5f64.powi(halvings)
    }
}

/// An image resized to network-friendly dimensions with its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Image,
    pub annotation: PointAnnotation,
    pub full: DensityMap,
    pub gt: GroundTruth,
}

impl Sample {
    /// Resizes per [`resize_dims`], scaling the head positions with the image.
    pub fn new(image: &Image, annotation: &PointAnnotation, sigma: f64, tau: f64) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        if annotation.image_size() != (h, w) {
            return Err(Error::Data(format!(
                "annotation is for a {:?} image, image is {h}x{w}",
                annotation.image_size()
            )));
        }
        let (rh, rw) = resize_dims(h, w)?;
        let (image, annotation) = if (rh, rw) == (h, w) {
            (image.clone(), annotation.clone())
        } else {
            let (sy, sx) = (rh as f64 / h as f64, rw as f64 / w as f64);
            let points = annotation
                .points()
                .iter()
                .map(|&(x, y)| ((x * sx).min(rw as f64 - 1e-9), (y * sy).min(rh as f64 - 1e-9)))
                .collect();
            (image.resized(rh, rw), PointAnnotation::new(points, rh, rw)?)
        };
        let full = generate_density_map(&annotation, sigma)?;
        let gt = GroundTruth::from_full(&full, tau)?;
        Ok(Sample {
            image,
            annotation,
            full,
            gt,
        })
    }
}

/// Per-epoch means of the objective and its terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_i: f64,
    pub loss_c: f64,
    pub loss_s: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,loss_total,loss_I,loss_C,loss_S\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss_total, r.loss_i, r.loss_c, r.loss_s
        );
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

struct Batch {
    images: Vec<Tensor<f32>>,
    density4: Vec<Tensor<f32>>,
    density8: Vec<Tensor<f32>>,
    mask4: Vec<Tensor<f32>>,
}

fn augmented(sample: &Sample, spec: &AugmentSpec, seed: u64) -> Result<(Image, DensityMap, SegMask)> {
    augment(&sample.image, &sample.full, &sample.gt.mask4, spec, seed)
}

fn collect_batch(parts: Vec<(Image, DensityMap, SegMask)>) -> Result<Batch> {
    let mut b = Batch {
        images: Vec::with_capacity(parts.len()),
        density4: Vec::with_capacity(parts.len()),
        density8: Vec::with_capacity(parts.len()),
        mask4: Vec::with_capacity(parts.len()),
    };
    for (image, full, mask4) in parts {
        let d4 = downsample_sum(&full, 4)?;
        let d8 = downsample_sum(&d4, 2)?;
        b.images.push(image.to_tensor());
        b.density4.push(d4.to_tensor());
        b.density8.push(d8.to_tensor());
        b.mask4.push(mask4.to_tensor());
    }
    Ok(b)
}

/// Loss terms `[total, I, C, S]` and one gradient per parameter.
fn batch_gradients(
    params: &ParamStore<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    batch: &Batch,
) -> Result<([f64; 4], Vec<Vec<f32>>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let x = g.constant(Tensor::stack(&batch.images)?);
    let targets = Targets {
        density4: g.constant(Tensor::stack(&batch.density4)?),
        density8: g.constant(Tensor::stack(&batch.density8)?),
        mask4: g.constant(Tensor::stack(&batch.mask4)?),
    };
    let out = model_forward(&mut g, &bound, model, x)?;
    let terms = network_loss(
        &mut g,
        &out,
        &targets,
        model.sdb_k,
        &cfg.weights,
        cfg.intermediate_supervision,
    )?;
    let values = [terms.total, terms.intermediate, terms.counting, terms.segmentation].map(|v| g.scalar(v) as f64);
    if values.iter().any(|v| !v.is_finite()) {
        return Ok((values, Vec::new()));
    }
    g.backward(terms.total)?;
    let grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
        .collect();
    Ok((values, grads))
}

/// Trains from `params` for `cfg.epochs` passes over `data`.
///
/// Each epoch shuffles the samples, augments every one with a fresh seed and
/// takes one Adam step per batch. A non-finite loss aborts with the epoch,
/// batch and loss terms in the error.
pub fn train(
    params: ParamStore<f32>,
    model: &ModelConfig,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ParamStore<f32>, Vec<EpochRecord>)> {
    cfg.validate()?;
    model.validate()?;
    params.check_against(model)?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let spec = cfg.augment_spec();
    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let parts = chunk
                .iter()
                .map(|&i| augmented(&data[i], &spec, rng.random()))
                .collect::<Result<Vec<_>>>()?;
            let batch = collect_batch(parts)?;
            let (terms, grads) = batch_gradients(&params, model, cfg, &batch)?;
            if terms.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b} (lr {lr}): loss_total {}, loss_I {}, loss_C {}, loss_S {}",
                    terms[0], terms[1], terms[2], terms[3]
                )));
            }
            adam_step(&mut params, &grads, &mut state, lr, &cfg.adam).map_err(|e| {
                Error::NonFinite(format!(
                    "epoch {epoch}, batch {b} (lr {lr}): {e}; loss_total {}, loss_I {}, loss_C {}, loss_S {}",
                    terms[0], terms[1], terms[2], terms[3]
                ))
            })?;
            for (s, t) in sums.iter_mut().zip(terms) {
                *s += t * chunk.len() as f64;
            }
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: sums[0] / n,
            loss_i: sums[1] / n,
            loss_c: sums[2] / n,
            loss_s: sums[3] / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} (I {:.6}, C {:.6}, S {:.6})",
            record.loss_total,
            record.loss_i,
            record.loss_c,
            record.loss_s
        );
        history.push(record);
    }
    Ok((params, history))
}

/// Whole-image prediction.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Density at 1/4 of the resized input.
    pub density: DensityMap,
    /// Sum of `density`.
    pub count: f64,
    /// `sdb(P, B, k) > 0.5` at 1/4 scale.
    pub mask: SegMask,
    /// Size the image was resized to before the forward pass.
    pub input_size: (usize, usize),
}

pub fn infer(image: &Image, params: &ParamStore<f32>, model: &ModelConfig) -> Result<Inference> {
    let (h, w) = resize_dims(image.height(), image.width())?;
    let resized;
    let input = if (h, w) == (image.height(), image.width()) {
        image
    } else {
        resized = image.resized(h, w);
        &resized
    };
    let pred = predict(params, model, &input.to_tensor())?;
    let density = DensityMap::from_tensor(&pred.density, 0, 4)?;
    let m = sdb(&pred.seg_p, &pred.seg_b, model.sdb_k)?;
    let s = m.shape();
    let mask = SegMask::new(
        s.h(),
        s.w(),
        4,
        m.data().iter().map(|&v| u8::from(v > 0.5)).collect(),
    )?;
    Ok(Inference {
        count: density.sum(),
        density,
        mask,
        input_size: (h, w),
    })
}

/// Scores for one evaluation image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub pred_count: f64,
    pub gt_count: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub images: Vec<ImageScore>,
}

/// Scores predicted 1/4-scale maps against ground truth maps and counts.
pub fn score_maps(preds: &[DensityMap], gts: &[(&DensityMap, f64)]) -> Result<Evaluation> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut images = Vec::with_capacity(preds.len());
    for (pred, &(gt, count)) in preds.iter().zip(gts) {
        let scored = gt.max() > 0.0;
        let big = gt.height() >= SSIM_WINDOW && gt.width() >= SSIM_WINDOW;
        images.push(ImageScore {
            pred_count: pred.sum(),
            gt_count: count,
            psnr: if scored { Some(psnr(pred, gt)?) } else { None },
            ssim: if scored && big { Some(ssim(pred, gt)?) } else { None },
        });
    }
    let pred_counts: Vec<f64> = images.iter().map(|s| s.pred_count).collect();
    let gt_counts: Vec<f64> = images.iter().map(|s| s.gt_count).collect();
    let (mae, mse) = count_errors(&pred_counts, &gt_counts)?;
    let mean = |f: fn(&ImageScore) -> Option<f64>| {
        let v: Vec<f64> = images.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let report = MetricReport {
        mae,
        mse,
        psnr: mean(|s| s.psnr),
        ssim: mean(|s| s.ssim),
    };
    Ok(Evaluation { report, images })
}

/// Runs [`infer`] on every sample and scores it against its ground truth.
pub fn evaluate(params: &ParamStore<f32>, model: &ModelConfig, samples: &[Sample]) -> Result<Evaluation> {
    let preds = samples
        .iter()
        .map(|s| infer(&s.image, params, model).map(|i| i.density))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<(&DensityMap, f64)> = samples
        .iter()
        .map(|s| (&s.gt.density4, s.annotation.count() as f64))
        .collect();
    score_maps(&preds, &gts)
}
