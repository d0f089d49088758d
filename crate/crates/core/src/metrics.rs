//! Depth and photometric evaluation.
//!
//! Depth metrics are computed per image over valid ground-truth pixels
//! (`gt > 0`) and averaged over images by [`MetricsReport::from_images`].

use crate::error::check_len;
use crate::io::{write_bytes, RgbImage};
use crate::{Error, Map2, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Reported in place of `+∞` for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// `None` when some prediction under the mask is not positive.
    pub rmse_log: Option<f64>,
    pub valid: usize,
}

pub fn valid_mask(gt: &[f64]) -> Vec<bool> {
    gt.iter().map(|&d| d > 0.0 && d.is_finite()).collect()
}

pub fn depth_metrics(gt: &[f64], pred: &[f64], mask: &[bool]) -> Result<DepthMetrics> {
    check_len(gt.len(), pred.len())?;
    check_len(gt.len(), mask.len())?;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut log_ok = true;
    let mut n = 0usize;
    for ((&d, &p), _) in gt.iter().zip(pred).zip(mask).filter(|(_, &m)| m) {
        if !(d > 0.0) {
            return Err(Error::input(format!("ground truth {d} under the mask must be positive")));
        }
        if !p.is_finite() {
            return Err(Error::input(format!("prediction {p} is not finite")));
        }
        let e = p - d;
        abs_rel += e.abs() / d;
        sq_rel += e * e / d;
        sq += e * e;
        if p > 0.0 {
            sq_log += (p.ln() - d.ln()).powi(2);
        } else {
            log_ok = false;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("empty evaluation mask"));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: log_ok.then(|| (sq_log / nf).sqrt()),
        valid: n,
    })
}

/// Depth metrics over the pixels where `gt > 0`.
pub fn depth_metrics_map(gt: &Map2, pred: &Map2) -> Result<DepthMetrics> {
    gt.check_same_shape(pred)?;
    depth_metrics(gt.data(), pred.data(), &valid_mask(gt.data()))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

pub fn psnr(rendered: &RgbImage, gt: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(rendered.mse(gt)?))
}

/// `mean(gt) / mean(pred)` over the mask.
pub fn align_scale_mean(gt: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    check_len(gt.len(), pred.len())?;
    check_len(gt.len(), mask.len())?;
    let (mut sg, mut sp, mut n) = (0.0, 0.0, 0usize);
    for ((&g, &p), _) in gt.iter().zip(pred).zip(mask).filter(|(_, &m)| m) {
        sg += g;
        sp += p;
        n += 1;
    }
    if n == 0 || !(sg > 0.0) || !(sp > 0.0) {
        return Err(Error::input("scale alignment needs positive means over a nonempty mask"));
    }
    Ok(sg / sp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub view: usize,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: Option<f64>,
    pub psnr: Option<f64>,
    pub valid_fraction: f64,
}

impl ImageMetrics {
    pub fn new(view: usize, depth: DepthMetrics, pixels: usize, psnr: Option<f64>) -> Self {
        Self {
            view,
            abs_rel: depth.abs_rel,
            sq_rel: depth.sq_rel,
            rmse: depth.rmse,
            rmse_log: depth.rmse_log,
            psnr,
            valid_fraction: depth.valid as f64 / pixels.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: Option<f64>,
    pub psnr: Option<f64>,
    pub valid_pixel_fraction: f64,
    pub per_image: Vec<ImageMetrics>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_of(v.into_iter()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Mean over images of each metric.
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::input("metrics report needs at least one image"));
        }
        Ok(Self {
            abs_rel: mean_of(per_image.iter().map(|m| m.abs_rel)),
            sq_rel: mean_of(per_image.iter().map(|m| m.sq_rel)),
            rmse: mean_of(per_image.iter().map(|m| m.rmse)),
            rmse_log: mean_opt(per_image.iter().map(|m| m.rmse_log)),
            psnr: mean_opt(per_image.iter().map(|m| m.psnr)),
            valid_pixel_fraction: mean_of(per_image.iter().map(|m| m.valid_fraction)),
            per_image,
        })
    }

    /// Per-image rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,abs_rel,sq_rel,rmse,rmse_log,psnr,valid_fraction\n");
        for m in &self.per_image {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                m.view,
                m.abs_rel,
                m.sq_rel,
                m.rmse,
                opt(m.rmse_log),
                opt(m.psnr),
                m.valid_fraction
            );
        }
        let _ = writeln!(
            s,
            "mean,{},{},{},{},{},{}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            opt(self.rmse_log),
            opt(self.psnr),
            self.valid_pixel_fraction
        );
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        write_bytes(&dir.join("metrics.json"), self.to_json()?.as_bytes())
    }
}

/// One row of an uncertainty-threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    /// Mean error over pixels with `u >= threshold`; `None` if there are none.
    pub error_above: Option<f64>,
    pub error_below: Option<f64>,
    pub fraction_above: f64,
}

pub const CURVE_THRESHOLDS: [f64; 9] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// Mean prior error above and below each uncertainty threshold, pooled
/// over all pixels of all images.
pub fn threshold_curve(uncertainty: &[&Map2], error: &[&Map2], thresholds: &[f64]) -> Result<Vec<ThresholdRow>> {
    check_len(uncertainty.len(), error.len())?;
    for (u, e) in uncertainty.iter().zip(error) {
        u.check_same_shape(e)?;
    }
    let pairs: Vec<(f64, f64)> = uncertainty
        .iter()
        .zip(error)
        .flat_map(|(u, e)| u.data().iter().copied().zip(e.data().iter().copied()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::input("threshold curve needs at least one pixel"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
            for &(u, e) in &pairs {
                if u >= t {
                    sa += e;
                    na += 1;
                } else {
                    sb += e;
                    nb += 1;
                }
            }
            ThresholdRow {
                threshold: t,
                error_above: (na > 0).then(|| sa / na as f64),
                error_below: (nb > 0).then(|| sb / nb as f64),
                fraction_above: na as f64 / pairs.len() as f64,
            }
        })
        .collect())
}

pub fn threshold_curve_csv(rows: &[ThresholdRow]) -> String {
    let mut s = String::from("threshold,error_above,error_below,fraction_above\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.threshold,
            opt(r.error_above),
            opt(r.error_below),
            r.fraction_above
        );
    }
    s
}
