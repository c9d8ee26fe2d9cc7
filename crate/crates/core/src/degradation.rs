//! Spatial and spectral degradation operators, blur kernels and noise.
//!
//! Axis convention for images: mode 0 is width (x), mode 1 is height (y),
//! mode 2 is spectral. Kernel matrices are indexed `[x, y]`.
//!
//! Spatial operators blur then decimate. Output sample `i` of a length-`n`
//! 1D kernel `u` reads input samples `sf*i + k - floor((n - sf)/2)` for
//! `k = 0..n`, reflecting symmetrically at the borders. For `n == sf` this is
//! plain block averaging of `[sf*i, sf*i + sf)`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use ndarray_linalg::SVD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegradationError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("scale factor {sf} does not divide size {size}")]
    ScaleFactor { sf: usize, size: usize },
    #[error("invalid spectral response: {0}")]
    InvalidSrf(String),
    #[error("signal has zero power; SNR is undefined")]
    ZeroPower,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Blur kernel parameterizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `size x size` box.
    Average { size: usize },
    /// Isotropic Gaussian sampled on a `support x support` grid.
    Gaussian { sigma: f64, support: usize },
    /// Line segment of `length` pixels at `angle_deg` from the x axis.
    Motion { length: f64, angle_deg: f64 },
    /// Rotated anisotropic Gaussian.
    Elliptical {
        sigma_x: f64,
        sigma_y: f64,
        angle_deg: f64,
        support: usize,
    },
    /// Gaussian convolved with a motion segment.
    Hybrid {
        sigma: f64,
        support: usize,
        length: f64,
        angle_deg: f64,
    },
    /// Per-band Gaussian with sigma rising linearly across the bands.
    SensorVarying {
        sigma_min: f64,
        sigma_max: f64,
        support: usize,
    },
}

impl KernelSpec {
    /// Named presets: `average` (sf x sf box), `g4`, `g7`, `m30`, `m45`,
    /// `e30`, `hybrid`, `svar`.
    pub fn preset(name: &str, sf: usize) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "average" | "avg" => KernelSpec::Average { size: sf },
            "g4" => KernelSpec::Gaussian { sigma: 2.0, support: 4 },
            "g7" => KernelSpec::Gaussian { sigma: 2.0, support: 7 },
            "m30" => KernelSpec::Motion {
                length: 4.0,
                angle_deg: 30.0,
            },
            "m45" => KernelSpec::Motion {
                length: 4.0,
                angle_deg: 45.0,
            },
            "e30" => KernelSpec::Elliptical {
                sigma_x: 1.0,
                sigma_y: 3.0,
                angle_deg: 30.0,
                support: 13,
            },
            "hybrid" => KernelSpec::Hybrid {
                sigma: 2.0,
                support: 4,
                length: 4.0,
                angle_deg: 30.0,
            },
            "svar" => KernelSpec::SensorVarying {
                sigma_min: 1.0,
                sigma_max: 3.0,
                support: 7,
            },
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 8] = ["average", "g4", "g7", "m30", "m45", "e30", "hybrid", "svar"];

    /// Parses a preset name or an explicit form such as `gaussian:2:7`,
    /// `average:4`, `motion:4:30`, `elliptical:1:3:30:13`,
    /// `hybrid:2:4:4:30`, `svar:1:3:7`. Presets resolve against `sf`.
    pub fn parse(s: &str, sf: usize) -> Result<Self, DegradationError> {
        let s = s.trim();
        if let Some(k) = Self::preset(s, sf) {
            return Ok(k);
        }
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<&str> = parts.collect();
        let bad = || DegradationError::InvalidKernel(format!("cannot parse kernel spec {s:?}"));
        let f = |i: usize| -> Result<f64, DegradationError> {
            let v: f64 = nums.get(i).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let u = |i: usize| -> Result<usize, DegradationError> {
            nums.get(i).ok_or_else(bad)?.trim().parse().map_err(|_| bad())
        };
        let want = |n: usize| if nums.len() == n { Ok(()) } else { Err(bad()) };
        let spec = match head.as_str() {
            "average" | "avg" => {
                want(1)?;
                KernelSpec::Average { size: u(0)? }
            }
            "gaussian" | "gauss" => {
                want(2)?;
                KernelSpec::Gaussian {
                    sigma: f(0)?,
                    support: u(1)?,
                }
            }
            "motion" => {
                want(2)?;
                KernelSpec::Motion {
                    length: f(0)?,
                    angle_deg: f(1)?,
                }
            }
            "elliptical" => {
                want(4)?;
                KernelSpec::Elliptical {
                    sigma_x: f(0)?,
                    sigma_y: f(1)?,
                    angle_deg: f(2)?,
                    support: u(3)?,
                }
            }
            "hybrid" => {
                want(4)?;
                KernelSpec::Hybrid {
                    sigma: f(0)?,
                    support: u(1)?,
                    length: f(2)?,
                    angle_deg: f(3)?,
                }
            }
            "svar" | "sensor" => {
                want(3)?;
                KernelSpec::SensorVarying {
                    sigma_min: f(0)?,
                    sigma_max: f(1)?,
                    support: u(2)?,
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), DegradationError> {
        let err = |m: &str| Err(DegradationError::InvalidKernel(m.to_string()));
        const MAX_SUPPORT: usize = 1024;
        match *self {
            KernelSpec::Average { size } if size == 0 || size > MAX_SUPPORT => err("bad average size"),
            KernelSpec::Gaussian { sigma, support } if !(sigma > 0.0) || support == 0 || support > MAX_SUPPORT => {
                err("gaussian needs sigma > 0 and support >= 1")
            }
            KernelSpec::Motion { length, angle_deg }
                if !(length > 0.0 && length <= MAX_SUPPORT as f64) || !angle_deg.is_finite() =>
            {
                err("motion needs a positive length")
            }
            KernelSpec::Elliptical {
                sigma_x,
                sigma_y,
                angle_deg,
                support,
            } if !(sigma_x > 0.0 && sigma_y > 0.0)
                || support == 0
                || support > MAX_SUPPORT
                || !angle_deg.is_finite() =>
            {
                err("elliptical needs positive sigmas and support")
            }
            KernelSpec::Hybrid {
                sigma,
                support,
                length,
                angle_deg,
            } if !(sigma > 0.0)
                || support == 0
                || support > MAX_SUPPORT
                || !(length > 0.0 && length <= MAX_SUPPORT as f64)
                || !angle_deg.is_finite() =>
            {
                err("hybrid needs positive sigma, support and length")
            }
            KernelSpec::SensorVarying {
                sigma_min,
                sigma_max,
                support,
            } if !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite())
                || support == 0
                || support > MAX_SUPPORT =>
            {
                err("sensor-varying needs 0 < sigma_min <= sigma_max")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Average { size } => write!(f, "average:{size}"),
            KernelSpec::Gaussian { sigma, support } => write!(f, "gaussian:{sigma}:{support}"),
            KernelSpec::Motion { length, angle_deg } => write!(f, "motion:{length}:{angle_deg}"),
            KernelSpec::Elliptical {
                sigma_x,
                sigma_y,
                angle_deg,
                support,
            } => write!(f, "elliptical:{sigma_x}:{sigma_y}:{angle_deg}:{support}"),
            KernelSpec::Hybrid {
                sigma,
                support,
                length,
                angle_deg,
            } => write!(f, "hybrid:{sigma}:{support}:{length}:{angle_deg}"),
            KernelSpec::SensorVarying {
                sigma_min,
                sigma_max,
                support,
            } => write!(f, "svar:{sigma_min}:{sigma_max}:{support}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = DegradationError;

    /// Explicit forms only; presets need a scale factor, see [`KernelSpec::parse`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if Self::preset(s, 1).is_some() && s.trim().to_ascii_lowercase().starts_with("av") {
            return Err(DegradationError::InvalidKernel(
                "average preset needs a size, e.g. average:4".into(),
            ));
        }
        Self::parse(s, 1)
    }
}

/// A normalized blur kernel, indexed `[x, y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub spec: KernelSpec,
    /// Band-shared kernel. For sensor-varying blur this is the mean-sigma
    /// Gaussian used as the fusion model's approximation.
    pub values: Array2<f64>,
    /// True per-band kernels, if the blur depends on the band.
    pub per_band: Option<Vec<Array2<f64>>>,
}

impl Kernel2D {
    pub fn is_band_varying(&self) -> bool {
        self.per_band.is_some()
    }

    /// Kernel applied to `band` by the simulator.
    pub fn band(&self, band: usize) -> &Array2<f64> {
        match &self.per_band {
            Some(k) => &k[band],
            None => &self.values,
        }
    }
}

/// Builds a kernel. `bands` is only used by band-varying kinds.
pub fn build_kernel(spec: &KernelSpec, bands: usize) -> Result<Kernel2D, DegradationError> {
    spec.validate()?;
    let (values, per_band) = match *spec {
        KernelSpec::Average { size } => (Array2::from_elem((size, size), 1.0), None),
        KernelSpec::Gaussian { sigma, support } => (gaussian(sigma, sigma, 0.0, support), None),
        KernelSpec::Motion { length, angle_deg } => (motion(length, angle_deg), None),
        KernelSpec::Elliptical {
            sigma_x,
            sigma_y,
            angle_deg,
            support,
        } => (gaussian(sigma_x, sigma_y, angle_deg, support), None),
        KernelSpec::Hybrid {
            sigma,
            support,
            length,
            angle_deg,
        } => {
            let g = gaussian(sigma, sigma, 0.0, support);
            let m = motion(length, angle_deg);
            (convolve_full(&g, &m), None)
        }
        KernelSpec::SensorVarying {
            sigma_min,
            sigma_max,
            support,
        } => {
            if bands == 0 {
                return Err(DegradationError::InvalidKernel(
                    "sensor-varying kernel needs at least one band".into(),
                ));
            }
            let sigmas = band_sigmas(sigma_min, sigma_max, bands);
            let mean = sigmas.iter().sum::<f64>() / bands as f64;
            let per: Vec<Array2<f64>> = sigmas.iter().map(|&s| gaussian(s, s, 0.0, support)).collect();
            (gaussian(mean, mean, 0.0, support), Some(per))
        }
    };
    let per_band = per_band.map(|v| v.into_iter().map(normalized).collect::<Vec<_>>());
    let ok = |k: &Array2<f64>| k.sum() > 0.0 && k.iter().all(|v| v.is_finite());
    if !ok(&values) || per_band.iter().flatten().any(|k| !ok(k)) {
        return Err(DegradationError::InvalidKernel(format!(
            "{spec} has no mass on its sampling grid"
        )));
    }
    Ok(Kernel2D {
        spec: spec.clone(),
        values: normalized(values),
        per_band,
    })
}

/// Linearly spaced per-band sigmas from `lo` to `hi`.
pub fn band_sigmas(lo: f64, hi: f64, bands: usize) -> Vec<f64> {
    if bands == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..bands)
        .map(|b| lo + (hi - lo) * b as f64 / (bands - 1) as f64)
        .collect()
}

fn normalized(mut k: Array2<f64>) -> Array2<f64> {
    let s = k.sum();
    k.mapv_inplace(|v| v / s);
    k
}

/// Rotated Gaussian sampled at offsets `i - (support - 1)/2` on both axes.
fn gaussian(sigma_x: f64, sigma_y: f64, angle_deg: f64, support: usize) -> Array2<f64> {
    let c = (support as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    Array2::from_shape_fn((support, support), |(i, j)| {
        let x = i as f64 - c;
        let y = j as f64 - c;
        let xr = x * cos + y * sin;
        let yr = -x * sin + y * cos;
        (-0.5 * (xr * xr / (sigma_x * sigma_x) + yr * yr / (sigma_y * sigma_y))).exp()
    })
}

/// Rasterizes a centered segment: each cell gets the length of the segment
/// inside it. The grid spans `ceil` of the segment's extent on each axis with
/// cells centered on the segment midpoint.
fn motion(length: f64, angle_deg: f64) -> Array2<f64> {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (dx, dy) = (length * cos, length * sin);
    let cells = |extent: f64| ((extent.abs() - 1e-9).ceil() as usize).max(1);
    let (nx, ny) = (cells(dx), cells(dy));
    let (x0, y0) = (-dx / 2.0, -dy / 2.0);
    let mut k = Array2::<f64>::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            let lo = [i as f64 - nx as f64 / 2.0, j as f64 - ny as f64 / 2.0];
            let hi = [lo[0] + 1.0, lo[1] + 1.0];
            if let Some((t0, t1)) = clip_segment([x0, y0], [dx, dy], lo, hi) {
                k[(i, j)] = (t1 - t0) * length;
            }
        }
    }
    if k.sum() <= 0.0 {
        // Degenerate length below one cell: a single tap.
        k.fill(0.0);
        k[(nx / 2, ny / 2)] = 1.0;
    }
    k
}

/// Liang-Barsky clip of `p + t d`, `t in [0,1]`, against an axis box.
fn clip_segment(p: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..2 {
        if d[a].abs() < 1e-15 {
            if p[a] < lo[a] || p[a] > hi[a] {
                return None;
            }
            continue;
        }
        let mut ta = (lo[a] - p[a]) / d[a];
        let mut tb = (hi[a] - p[a]) / d[a];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

fn convolve_full(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<f64>::zeros((ar + br - 1, ac + bc - 1));
    for ((i, j), &va) in a.indexed_iter() {
        for ((k, l), &vb) in b.indexed_iter() {
            out[(i + k, j + l)] += va * vb;
        }
    }
    out
}

/// Zero-pads to a square, centering the kernel; the extra zero of an odd
/// pad goes to the end.
pub fn pad_square(k: &Array2<f64>) -> Array2<f64> {
    let (r, c) = k.dim();
    let n = r.max(c);
    let (or, oc) = ((n - r) / 2, (n - c) / 2);
    let mut out = Array2::<f64>::zeros((n, n));
    out.slice_mut(ndarray::s![or..or + r, oc..oc + c]).assign(k);
    out
}

/// Rank-1 separation `k ≈ u vᵀ` (after square zero-padding).
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    /// Along x (mode 0), sums to 1.
    pub u: Vec<f64>,
    /// Along y (mode 1), sums to 1.
    pub v: Vec<f64>,
    /// `σ1² / Σ σj²`.
    pub quality: f64,
}

pub fn separate_kernel(k: &Array2<f64>) -> Result<Separation, DegradationError> {
    if k.iter().any(|v| !v.is_finite()) || k.iter().all(|&v| v == 0.0) {
        return Err(DegradationError::InvalidKernel("kernel is zero or not finite".into()));
    }
    let padded = pad_square(k);
    let (u, s, vt) = padded
        .svd(true, true)
        .map_err(|e| DegradationError::InvalidKernel(e.to_string()))?;
    let (u, vt) = (u.expect("requested U"), vt.expect("requested Vt"));
    let energy: f64 = s.iter().map(|x| x * x).sum();
    let quality = s[0] * s[0] / energy;
    let mut uu: Vec<f64> = u.column(0).to_vec();
    let mut vv: Vec<f64> = vt.row(0).to_vec();
    let (su, sv): (f64, f64) = (uu.iter().sum(), vv.iter().sum());
    if su == 0.0 || sv == 0.0 {
        return Err(DegradationError::InvalidKernel(
            "leading singular vectors sum to zero".into(),
        ));
    }
    uu.iter_mut().for_each(|x| *x /= su);
    vv.iter_mut().for_each(|x| *x /= sv);
    Ok(Separation { u: uu, v: vv, quality })
}

/// Symmetric half-sample reflection into `0..size`.
fn reflect(idx: isize, size: usize) -> usize {
    let n = size as isize;
    let period = 2 * n;
    let m = idx.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn tap_offset(n: usize, sf: usize) -> isize {
    (n as isize - sf as isize).div_euclid(2)
}

/// Blur-and-decimate operator of shape `(size/sf, size)`.
pub fn build_spatial_operator(u: &[f64], sf: usize, size: usize) -> Result<Array2<f64>, DegradationError> {
    if sf == 0 || size == 0 || !size.is_multiple_of(sf) {
        return Err(DegradationError::ScaleFactor { sf, size });
    }
    if u.is_empty() {
        return Err(DegradationError::InvalidKernel("empty 1D kernel".into()));
    }
    let off = tap_offset(u.len(), sf);
    let rows = size / sf;
    let mut p = Array2::<f64>::zeros((rows, size));
    for i in 0..rows {
        for (k, &w) in u.iter().enumerate() {
            let src = reflect((sf * i) as isize + k as isize - off, size);
            p[(i, src)] += w;
        }
    }
    Ok(p)
}

/// Row-normalizes a nonnegative `s x S` spectral response.
pub fn build_spectral_operator(srf: &Array2<f64>) -> Result<Array2<f64>, DegradationError> {
    if srf.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(DegradationError::InvalidSrf(
            "entries must be finite and nonnegative".into(),
        ));
    }
    let mut p = srf.clone();
    for (r, mut row) in p.rows_mut().into_iter().enumerate() {
        let total: f64 = row.sum();
        if !(total > 0.0) {
            return Err(DegradationError::InvalidSrf(format!("row {r} has zero response")));
        }
        row.mapv_inplace(|v| v / total);
        row.mapv_inplace(|v| if v < 1e-12 { 0.0 } else { v });
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    Ok(p)
}

/// Gaussian response curves over band indices `0..bands`.
pub fn gaussian_srf(bands: usize, centers: &[f64], sigma: f64) -> Array2<f64> {
    Array2::from_shape_fn((centers.len(), bands), |(r, b)| {
        let d = b as f64 - centers[r];
        (-0.5 * d * d / (sigma * sigma)).exp()
    })
}

/// Box responses: band `b` belongs to output `floor(b * out / bands)`.
pub fn block_srf(bands: usize, out: usize) -> Array2<f64> {
    Array2::from_shape_fn((out, bands), |(r, b)| if b * out / bands == r { 1.0 } else { 0.0 })
}

/// Default multispectral response: three Gaussian bands evenly placed
/// across the spectrum.
pub fn default_srf(bands: usize) -> Array2<f64> {
    let s = bands as f64;
    let centers = [s / 6.0 - 0.5, s / 2.0 - 0.5, 5.0 * s / 6.0 - 0.5];
    gaussian_srf(bands, &centers, (s / 8.0).max(0.5))
}

/// Spatial and spectral degradation for images of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationModel {
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
    pub p3: Array2<f64>,
    pub sf: usize,
    pub separation_quality: f64,
    pub kernel: Kernel2D,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl DegradationModel {
    /// Operators for a `width x height` image. `srf` is `s x S`.
    pub fn new(
        kernel: Kernel2D,
        srf: &Array2<f64>,
        sf: usize,
        width: usize,
        height: usize,
    ) -> Result<Self, DegradationError> {
        let sep = separate_kernel(&kernel.values)?;
        let p1 = build_spatial_operator(&sep.u, sf, width)?;
        let p2 = build_spatial_operator(&sep.v, sf, height)?;
        let p3 = build_spectral_operator(srf)?;
        Ok(Self {
            p1,
            p2,
            p3,
            sf,
            separation_quality: sep.quality,
            kernel,
            u: sep.u,
            v: sep.v,
        })
    }

    /// Same kernel and response, rebuilt for another spatial size.
    pub fn for_size(&self, width: usize, height: usize) -> Result<Self, DegradationError> {
        Ok(Self {
            p1: build_spatial_operator(&self.u, self.sf, width)?,
            p2: build_spatial_operator(&self.v, self.sf, height)?,
            ..self.clone()
        })
    }

    pub fn hr_bands(&self) -> usize {
        self.p3.ncols()
    }

    pub fn ms_bands(&self) -> usize {
        self.p3.nrows()
    }

    fn check(&self, z: &DenseTensor) -> Result<(), DegradationError> {
        let s = z.shape();
        if s.len() != 3 || s[0] != self.p1.ncols() || s[1] != self.p2.ncols() || s[2] != self.p3.ncols() {
            return Err(DegradationError::Shape(format!(
                "image {:?} vs operators ({}, {}, {})",
                s,
                self.p1.ncols(),
                self.p2.ncols(),
                self.p3.ncols()
            )));
        }
        Ok(())
    }

    /// Noise-free `(Z ×1 P1 ×2 P2, Z ×3 P3)` using the separable model.
    pub fn degrade(&self, z: &DenseTensor) -> Result<(DenseTensor, DenseTensor), DegradationError> {
        self.check(z)?;
        let h = z.mode_product(&self.p1, 0)?.mode_product(&self.p2, 1)?;
        let m = z.mode_product(&self.p3, 2)?;
        Ok((h, m))
    }

    /// Noise-free pair using the true 2D (possibly band-varying) kernel.
    /// Equals [`DegradationModel::degrade`] for separable kernels.
    pub fn simulate(&self, z: &DenseTensor) -> Result<(DenseTensor, DenseTensor), DegradationError> {
        self.check(z)?;
        let s = z.shape();
        let (w, h, bands) = (s[0], s[1], s[2]);
        let sf = self.sf;
        let (lw, lh) = (w / sf, h / sf);
        let mut out = DenseTensor::zeros(&[lw, lh, bands])?;
        let data = z.data();
        for b in 0..bands {
            let k = pad_square(self.kernel.band(b));
            let n = k.nrows();
            let off = tap_offset(n, sf);
            let xs: Vec<Vec<usize>> = (0..lw)
                .map(|i| {
                    (0..n)
                        .map(|t| reflect((sf * i) as isize + t as isize - off, w))
                        .collect()
                })
                .collect();
            let ys: Vec<Vec<usize>> = (0..lh)
                .map(|j| {
                    (0..n)
                        .map(|t| reflect((sf * j) as isize + t as isize - off, h))
                        .collect()
                })
                .collect();
            let base = b * w * h;
            let obase = b * lw * lh;
            let od = out.data_mut();
            for j in 0..lh {
                for i in 0..lw {
                    let mut acc = 0.0;
                    for (l, &y) in ys[j].iter().enumerate() {
                        for (t, &x) in xs[i].iter().enumerate() {
                            let wgt = k[(t, l)];
                            if wgt != 0.0 {
                                acc += wgt * data[base + x + w * y];
                            }
                        }
                    }
                    od[obase + i + lw * j] = acc;
                }
            }
        }
        let m = z.mode_product(&self.p3, 2)?;
        Ok((out, m))
    }
}

/// Adds i.i.d. Gaussian noise at `snr_db` relative to the mean square of
/// `x`. An infinite SNR returns `x` unchanged.
pub fn add_noise(x: &DenseTensor, snr_db: f64, seed: u64) -> Result<DenseTensor, DegradationError> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if !snr_db.is_finite() {
        return Err(DegradationError::Shape(format!(
            "SNR must be finite or +inf, got {snr_db}"
        )));
    }
    let power = x.data().iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(power > 0.0) {
        return Err(DegradationError::ZeroPower);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// `10 log10(mean(clean²) / mean((noisy - clean)²))`.
pub fn empirical_snr_db(clean: &DenseTensor, noisy: &DenseTensor) -> Result<f64, DegradationError> {
    let noise = noisy.sq_distance(clean)?;
    let signal: f64 = clean.data().iter().map(|v| v * v).sum();
    Ok(10.0 * (signal / noise).log10())
}

/// Pixel-replication upsampling of the first two modes by `sf`.
pub fn upsample_nearest(h: &DenseTensor, sf: usize) -> Result<DenseTensor, DegradationError> {
    let s = h.shape();
    if s.len() != 3 || sf == 0 {
        return Err(DegradationError::Shape(format!("cannot upsample {s:?} by {sf}")));
    }
    let shape = [s[0] * sf, s[1] * sf, s[2]];
    Ok(DenseTensor::from_fn(&shape, |ix| {
        h.data()[ix[0] / sf + s[0] * (ix[1] / sf + s[1] * ix[2])]
    })?)
}
