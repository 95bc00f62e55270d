use serde::{Deserialize, Serialize};

use crate::density::DensityMap;
use crate::error::{Error, Result};

/// PSNR reported for identical maps.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Counting and map-quality scores over an evaluation set.
///
/// `mse` is the root of the mean squared count error. `psnr` and `ssim` are
/// averaged over images whose ground truth is not all zero and are `None` when
/// no image qualifies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// `(MAE, root-mean-square error)` between predicted and annotated counts.
pub fn count_errors(pred: &[f64], gt: &[f64]) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal, non-empty count lists; got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let (abs, sq) = pred.iter().zip(gt).fold((0.0, 0.0), |(a, s), (p, g)| {
        let d = p - g;
        (a + d.abs(), s + d * d)
    });
    Ok((abs / n, (sq / n).sqrt()))
}

/// [`count_errors`] with each prediction's count taken as its map sum.
pub fn evaluate_counts(preds: &[DensityMap], gts: &[f64]) -> Result<(f64, f64)> {
    let counts: Vec<f64> = preds.iter().map(DensityMap::sum).collect();
    count_errors(&counts, gts)
}

fn normalized_pair(pred: &DensityMap, gt: &DensityMap) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape(
            "metric",
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        ));
    }
    let peak = gt.max() as f64;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("ground-truth map is all zero".into()));
    }
    let scale = |m: &DensityMap| m.values().iter().map(|&v| v as f64 / peak).collect();
    Ok((scale(pred), scale(gt)))
}

/// Peak signal-to-noise ratio after dividing both maps by `max(gt)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    let (p, g) = normalized_pair(pred, gt)?;
    let mse = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean structural similarity after dividing both maps by `max(gt)`.
pub fn ssim(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    let (p, g) = normalized_pair(pred, gt)?;
    ssim_planes(&p, &g, gt.height(), gt.width(), 1.0)
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over every fully contained 11x11 Gaussian window of two real
/// planes with dynamic range `range`.
pub fn ssim_planes(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("ssim", format!("planes do not have {h}x{w} entries")));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs maps of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    // Separable filtering of x, y, x^2, y^2, xy: rows first, then columns.
    let filter = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                rows[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * f(r * w + c + k)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
            }
        }
        out
    };
    let mu_a = filter(&|i| a[i]);
    let mu_b = filter(&|i| b[i]);
    let aa = filter(&|i| a[i] * a[i]);
    let bb = filter(&|i| b[i] * b[i]);
    let ab = filter(&|i| a[i] * b[i]);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}
