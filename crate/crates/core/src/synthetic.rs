//! Deterministic synthetic scenes for tests, ablations and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{fctn_compose, DenseTensor, FactorSet, FctnRanks, TensorError};

/// A `w × h × bands` reflectance-like cube in `[0, 1]`.
///
/// Pixels mix a handful of materials with smooth spectra. Abundances come
/// from soft blobs plus a few sharp-edged rectangles, so the scene has both
/// low-frequency content and edges the MSI has to supply.
pub fn scene(w: usize, h: usize, bands: usize, seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let materials = 5;
    let spectra: Vec<Vec<f64>> = (0..materials)
        .map(|_| {
            let c1 = rng.random_range(0.0..1.0);
            let c2 = rng.random_range(0.0..1.0);
            let wd = rng.random_range(0.15..0.5);
            let base = rng.random_range(0.05..0.3);
            (0..bands)
                .map(|b| {
                    let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
                    let g = |c: f64| (-((t - c) / wd).powi(2)).exp();
                    base + 0.6 * g(c1) + 0.3 * g(c2)
                })
                .collect()
        })
        .collect();

    struct Blob {
        cx: f64,
        cy: f64,
        r: f64,
        mat: usize,
    }
    struct Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        mat: usize,
    }
    let blobs: Vec<Blob> = (0..8)
        .map(|_| Blob {
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            r: rng.random_range(0.1..0.35) * w.min(h) as f64,
            mat: rng.random_range(0..materials),
        })
        .collect();
    let rects: Vec<Rect> = (0..4)
        .map(|_| {
            let (x0, y0) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            Rect {
                x0,
                y0,
                x1: x0 + rng.random_range(0.1..0.4) * w as f64,
                y1: y0 + rng.random_range(0.1..0.4) * h as f64,
                mat: rng.random_range(0..materials),
            }
        })
        .collect();

    let mut abund = vec![0.0; w * h * materials];
    for y in 0..h {
        for x in 0..w {
            let a = &mut abund[(x + w * y) * materials..(x + w * y + 1) * materials];
            a[0] = 0.3;
            for bl in &blobs {
                let d2 = ((x as f64 - bl.cx).powi(2) + (y as f64 - bl.cy).powi(2)) / (bl.r * bl.r);
                a[bl.mat] += (-d2).exp();
            }
            for r in &rects {
                let (xf, yf) = (x as f64, y as f64);
                if xf >= r.x0 && xf < r.x1 && yf >= r.y0 && yf < r.y1 {
                    a[r.mat] += 1.5;
                }
            }
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= s);
        }
    }
    let mut z = DenseTensor::from_fn(&[w, h, bands], |ix| {
        let a = &abund[(ix[0] + w * ix[1]) * materials..][..materials];
        a.iter().zip(&spectra).map(|(ai, sp)| ai * sp[ix[2]]).sum()
    })
    .expect("positive dims");
    let max = z.data().iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        z = z.scale(1.0 / max);
    }
    z
}

/// A 4th-order tensor with exact FCTN structure at `ranks`, built from
/// factors with i.i.d. `U(0, 1)` entries and scaled to a maximum of 1, so it
/// looks like reflectance data.
pub fn exact_rank(dims: [usize; 4], ranks: FctnRanks, seed: u64) -> Result<DenseTensor, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = FactorSet::from_sampler(dims, ranks, |r| r.random_range(0.0..1.0), &mut rng)?;
    let z = fctn_compose(&f);
    let max = z.data().iter().cloned().fold(0.0, f64::max);
    Ok(if max > 0.0 { z.scale(1.0 / max) } else { z })
}
