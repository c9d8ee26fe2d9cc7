//! Full-reference quality metrics for `W × H × S` images and the iterate
//! relative error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::DenseTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("image must be 3rd order, got {0:?}")]
    Order(Vec<usize>),
    #[error("band {0} of the reference has zero mean")]
    ZeroMean(usize),
    #[error("image {w}x{h} is smaller than the {win}x{win} window")]
    TooSmall { w: usize, h: usize, win: usize },
    #[error("every pixel has a zero-norm spectrum")]
    AllZero,
    #[error("previous iterate has zero norm")]
    ZeroNorm,
    #[error("invalid parameter: {0}")]
    Param(String),
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub ergas: f64,
    pub sam_deg: f64,
    pub psnr_per_band: Vec<f64>,
}

impl MetricReport {
    /// All four metrics with peak 1.
    pub fn compute(reference: &DenseTensor, estimate: &DenseTensor, sf: usize) -> Result<Self, MetricError> {
        let (psnr_db, psnr_per_band) = psnr(reference, estimate, 1.0)?;
        Ok(Self {
            psnr_db,
            ssim: ssim(reference, estimate, 1.0)?,
            ergas: ergas(reference, estimate, sf as f64)?,
            sam_deg: sam(reference, estimate)?,
            psnr_per_band,
        })
    }
}

fn dims(a: &DenseTensor, b: &DenseTensor) -> Result<(usize, usize, usize), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape(a.shape().to_vec(), b.shape().to_vec()));
    }
    match *a.shape() {
        [w, h, s] => Ok((w, h, s)),
        _ => Err(MetricError::Order(a.shape().to_vec())),
    }
}

/// Per-band `10 log10(peak² / MSE_b)` and their mean. A band that matches
/// exactly gives `+inf`, which propagates to the mean.
pub fn psnr(reference: &DenseTensor, estimate: &DenseTensor, peak: f64) -> Result<(f64, Vec<f64>), MetricError> {
    let (w, h, s) = dims(reference, estimate)?;
    if !(peak > 0.0) {
        return Err(MetricError::Param(format!("peak must be positive, got {peak}")));
    }
    let n = w * h;
    let per: Vec<f64> = (0..s)
        .map(|b| {
            let r = &reference.data()[b * n..(b + 1) * n];
            let e = &estimate.data()[b * n..(b + 1) * n];
            let mse = r.iter().zip(e).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (peak * peak / mse).log10()
            }
        })
        .collect();
    let mean = per.iter().sum::<f64>() / s as f64;
    Ok((mean, per))
}

fn gaussian_window() -> [f64; SSIM_WIN] {
    let c = (SSIM_WIN / 2) as f64;
    let mut g = [0.0; SSIM_WIN];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable 'valid' filtering of a `w × h` plane (x fastest).
fn filter_valid(plane: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[x + ow * y] = g.iter().enumerate().map(|(t, gv)| gv * plane[x + t + w * y]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[x + ow * y] = g.iter().enumerate().map(|(t, gv)| gv * tmp[x + ow * (y + t)]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over bands: 11-tap Gaussian window (σ = 1.5),
/// valid region only, `C1 = (0.01 peak)²`, `C2 = (0.03 peak)²`.
pub fn ssim(reference: &DenseTensor, estimate: &DenseTensor, peak: f64) -> Result<f64, MetricError> {
    let (w, h, s) = dims(reference, estimate)?;
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(MetricError::TooSmall { w, h, win: SSIM_WIN });
    }
    let g = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = w * h;
    let mut total = 0.0;
    for b in 0..s {
        let x = &reference.data()[b * n..(b + 1) * n];
        let y = &estimate.data()[b * n..(b + 1) * n];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(x, w, h, &g);
        let my = filter_valid(y, w, h, &g);
        let sxx = filter_valid(&xx, w, h, &g);
        let syy = filter_valid(&yy, w, h, &g);
        let sxy = filter_valid(&xy, w, h, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += (2.0 * ux * uy + c1) * (2.0 * cxy + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / s as f64)
}

/// `100/sf · sqrt(mean_b (RMSE_b / mean_b)²)` with band means of the reference.
pub fn ergas(reference: &DenseTensor, estimate: &DenseTensor, sf: f64) -> Result<f64, MetricError> {
    let (w, h, s) = dims(reference, estimate)?;
    if !(sf >= 1.0) {
        return Err(MetricError::Param(format!("scale factor must be >= 1, got {sf}")));
    }
    let n = w * h;
    let mut acc = 0.0;
    for b in 0..s {
        let r = &reference.data()[b * n..(b + 1) * n];
        let e = &estimate.data()[b * n..(b + 1) * n];
        let mean = r.iter().sum::<f64>() / n as f64;
        if mean == 0.0 {
            return Err(MetricError::ZeroMean(b));
        }
        let mse = r.iter().zip(e).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / sf * (acc / s as f64).sqrt())
}

/// Mean spectral angle in degrees and the number of skipped zero-norm pixels.
pub fn sam_detail(reference: &DenseTensor, estimate: &DenseTensor) -> Result<(f64, usize), MetricError> {
    let (w, h, s) = dims(reference, estimate)?;
    let n = w * h;
    let (r, e) = (reference.data(), estimate.data());
    let mut sum = 0.0;
    let mut used = 0usize;
    for p in 0..n {
        let (mut dot, mut nr, mut ne) = (0.0, 0.0, 0.0);
        for b in 0..s {
            let (x, y) = (r[p + n * b], e[p + n * b]);
            dot += x * y;
            nr += x * x;
            ne += y * y;
        }
        if nr == 0.0 || ne == 0.0 {
            continue;
        }
        let c = (dot / (nr.sqrt() * ne.sqrt())).clamp(-1.0, 1.0);
        sum += c.acos();
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::AllZero);
    }
    Ok((sum / used as f64 * 180.0 / std::f64::consts::PI, n - used))
}

pub fn sam(reference: &DenseTensor, estimate: &DenseTensor) -> Result<f64, MetricError> {
    sam_detail(reference, estimate).map(|(deg, _)| deg)
}

/// `ln(‖curr − prev‖_F / ‖prev‖_F)`; `-inf` when the iterates are equal.
pub fn relative_error(prev: &DenseTensor, curr: &DenseTensor) -> Result<f64, MetricError> {
    if prev.shape() != curr.shape() {
        return Err(MetricError::Shape(prev.shape().to_vec(), curr.shape().to_vec()));
    }
    let norm = prev.frobenius_norm();
    if norm == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    let diff = prev.sq_distance(curr).expect("same shape").sqrt();
    Ok((diff / norm).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, s: usize, phase: f64) -> DenseTensor {
        DenseTensor::from_fn(&[w, h, s], |ix| {
            let (x, y, b) = (ix[0] as f64, ix[1] as f64, ix[2] as f64);
            0.5 + 0.4 * (0.37 * x + 0.23 * y + phase * (b + 1.0)).sin() * (0.11 * x * y + b).cos()
        })
        .unwrap()
    }

    #[test]
    fn psnr_cases() {
        let r = pattern(8, 8, 3, 0.0);
        let (m, per) = psnr(&r, &r, 1.0).unwrap();
        assert!(m.is_infinite() && per.iter().all(|v| v.is_infinite()));

        let e = r.map(|v| v + 0.1);
        let (m, _) = psnr(&r, &e, 1.0).unwrap();
        assert!((m - 20.0).abs() < 1e-10);

        let mut e = r.clone();
        e.set(&[3, 4, 0], r.get(&[3, 4, 0]).unwrap() + 0.5).unwrap();
        let (_, per) = psnr(&r, &e, 1.0).unwrap();
        assert!((per[0] - 10.0 * (64.0f64 / 0.25).log10()).abs() < 1e-10);
        assert!(per[1].is_infinite());
    }

    #[test]
    fn psnr_rejects_mismatch() {
        let a = pattern(4, 4, 2, 0.0);
        let b = pattern(4, 4, 3, 0.0);
        assert!(matches!(psnr(&a, &b, 1.0), Err(MetricError::Shape(..))));
    }

    #[test]
    fn ssim_identity_and_negation() {
        let r = pattern(16, 16, 2, 0.3);
        assert!((ssim(&r, &r, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // Flip the deviations around the common level: means agree, the
        // covariance changes sign.
        let flipped = r.map(|v| 1.0 - v);
        assert!(ssim(&r, &flipped, 1.0).unwrap() < 0.0);
        let small = pattern(10, 16, 1, 0.0);
        assert!(matches!(ssim(&small, &small, 1.0), Err(MetricError::TooSmall { .. })));
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
        // use_sample_covariance=False, data_range=1) on the same pair,
        // averaged over bands; see tools/oracles/metrics.py.
        let r = pattern(16, 16, 2, 0.3);
        let e = pattern(16, 16, 2, 0.35);
        let got = ssim(&r, &e, 1.0).unwrap();
        assert!((got - SSIM_ORACLE).abs() < 1e-10, "{got}");
    }

    const SSIM_ORACLE: f64 = 0.996_801_145_142_695_8;

    #[test]
    fn ergas_cases() {
        let r = pattern(8, 8, 3, 0.1);
        assert_eq!(ergas(&r, &r, 4.0).unwrap(), 0.0);
        // Constant bands: RMSE_b / mean_b is exactly the relative offset.
        let r = DenseTensor::from_fn(&[8, 8, 3], |ix| 0.2 + 0.3 * ix[2] as f64).unwrap();
        let e = r.map(|v| v * 1.02);
        let v4 = ergas(&r, &e, 4.0).unwrap();
        assert!((v4 - 100.0 / 4.0 * 0.02).abs() < 1e-12);
        let v8 = ergas(&r, &e, 8.0).unwrap();
        assert!((v4 - 2.0 * v8).abs() < 1e-12);
        let z = DenseTensor::zeros(&[4, 4, 1]).unwrap();
        assert_eq!(ergas(&z, &z, 1.0), Err(MetricError::ZeroMean(0)));
    }

    #[test]
    fn sam_cases() {
        let r = pattern(8, 8, 3, 0.2);
        assert!(sam(&r, &r).unwrap().abs() < 1e-6);
        assert!(sam(&r, &r.scale(2.0)).unwrap().abs() < 1e-6);
        let a = DenseTensor::from_fn(&[3, 3, 2], |ix| if ix[2] == 0 { 1.0 } else { 0.0 }).unwrap();
        let b = DenseTensor::from_fn(&[3, 3, 2], |ix| if ix[2] == 1 { 1.0 } else { 0.0 }).unwrap();
        assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);

        let mut c = a.clone();
        c.set(&[1, 1, 0], 0.0).unwrap();
        assert_eq!(sam_detail(&c, &a).unwrap(), (0.0, 1));
        let z = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        assert_eq!(sam(&z, &z), Err(MetricError::AllZero));
    }

    #[test]
    fn relative_error_cases() {
        let p = pattern(4, 4, 2, 0.0);
        assert_eq!(relative_error(&p, &p).unwrap(), f64::NEG_INFINITY);
        // ‖diff‖ / ‖prev‖ = 1/e.
        let c = p.scale(1.0 + (-1.0f64).exp());
        assert!((relative_error(&p, &c).unwrap() + 1.0).abs() < 1e-12);
        let (p2, c2) = (p.scale(3.0), c.scale(3.0));
        assert!((relative_error(&p2, &c2).unwrap() + 1.0).abs() < 1e-12);
        let z = DenseTensor::zeros(&[4, 4, 2]).unwrap();
        assert_eq!(relative_error(&z, &p), Err(MetricError::ZeroNorm));
    }

    #[test]
    fn report_collects_everything() {
        let r = pattern(16, 16, 3, 0.1);
        let e = r.map(|v| v * 0.99 + 0.003);
        let m = MetricReport::compute(&r, &e, 4).unwrap();
        assert_eq!(m.psnr_per_band.len(), 3);
        assert!(m.psnr_db > 30.0 && m.ssim > 0.9 && m.ergas > 0.0 && m.sam_deg > 0.0);
    }
}
