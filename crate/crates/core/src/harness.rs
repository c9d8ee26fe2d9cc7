//! Scenario and ablation runner.
//!
//! A scenario simulates the two observations from a reference cube, fuses
//! them and scores the result. Outputs written to a run directory:
//!
//! | file              | content                                               |
//! |-------------------|-------------------------------------------------------|
//! | `fused.hdr/.raw`  | fused cube                                            |
//! | `metrics.csv`     | `scenario,sf,snr,kernel,seed,psnr,ssim,ergas,sam,wall_seconds` |
//! | `elbo.csv`        | `group,iteration,elbo`                                |
//! | `psnr_bands.csv`  | `band,psnr`                                           |
//! | `spec.json`       | the [`ScenarioSpec`] that produced the run            |
//!
//! Ablations write one `ablation_<kind>.csv` with one row per grid point;
//! the convergence ablation also writes `convergence.csv`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{add_noise, build_kernel, default_srf, gaussian_srf, DegradationModel, KernelSpec};
use crate::inference::{fuse_traced, group_seed, FixedParams, FusionConfig, FusionOutput};
use crate::io::{load_srf, write_image};
use crate::metrics::MetricReport;
use crate::tensor::{DenseTensor, FctnRanks};
use crate::{Error, Result};

/// Where the spectral response comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SrfSource {
    /// Three Gaussian bands spread over the spectrum.
    Default,
    /// `bands` Gaussians with evenly spaced centres and width `sigma`
    /// (in band units).
    Gaussian { bands: usize, sigma: f64 },
    /// CSV file, one row per MSI band.
    File { path: PathBuf },
}

impl SrfSource {
    pub fn matrix(&self, hs_bands: usize) -> Result<Array2<f64>> {
        match self {
            SrfSource::Default => Ok(default_srf(hs_bands)),
            SrfSource::Gaussian { bands, sigma } => {
                if *bands == 0 || !(*sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "bad Gaussian response: {bands} bands, sigma {sigma}"
                    )));
                }
                let step = hs_bands as f64 / *bands as f64;
                let centers: Vec<f64> = (0..*bands).map(|i| (i as f64 + 0.5) * step - 0.5).collect();
                Ok(gaussian_srf(hs_bands, &centers, *sigma))
            }
            SrfSource::File { path } => {
                let m = load_srf(path)?;
                if m.ncols() != hs_bands {
                    return Err(Error::Config(format!(
                        "{} has {} columns, image has {hs_bands} bands",
                        path.display(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub sf: usize,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub kernel: KernelSpec,
    pub srf: SrfSource,
    pub fusion: FusionConfig,
}

/// `(SNR dB, sf)` of the six standard scenarios.
pub const SCENARIOS: [(f64, usize); 6] = [(35.0, 4), (35.0, 8), (35.0, 16), (30.0, 4), (20.0, 4), (10.0, 4)];

impl ScenarioSpec {
    /// Standard scenario `n` in `1..=6` with an `sf × sf` average kernel.
    pub fn preset(n: usize) -> Option<Self> {
        let &(snr, sf) = SCENARIOS.get(n.checked_sub(1)?)?;
        Some(Self {
            name: format!("scenario{n}"),
            sf,
            snr_db: Some(snr),
            kernel: KernelSpec::Average { size: sf },
            srf: SrfSource::Default,
            fusion: FusionConfig::default(),
        })
    }

    /// Accepts `scenario3`, `s3` or `3`.
    pub fn from_name(name: &str) -> Option<Self> {
        let n = name.trim().to_ascii_lowercase();
        let digits = n.strip_prefix("scenario").or_else(|| n.strip_prefix('s')).unwrap_or(&n);
        Self::preset(digits.parse().ok()?)
    }

    /// Noise seeds for the two observations, derived from the fusion seed.
    fn noise_seeds(&self) -> (u64, u64) {
        let s = self.fusion.seed ^ 0x005E_ED0F_DA7A;
        (group_seed(s, 0), group_seed(s, 1))
    }

    pub fn degradation(&self, width: usize, height: usize, bands: usize) -> Result<DegradationModel> {
        let kernel = build_kernel(&self.kernel, bands)?;
        let srf = self.srf.matrix(bands)?;
        Ok(DegradationModel::new(kernel, &srf, self.sf, width, height)?)
    }
}

/// Simulated observations for a reference cube.
#[derive(Debug, Clone)]
pub struct Observations {
    pub hsi: DenseTensor,
    pub msi: DenseTensor,
    pub model: DegradationModel,
}

pub fn simulate(spec: &ScenarioSpec, reference: &DenseTensor) -> Result<Observations> {
    let s = reference.shape();
    if s.len() != 3 {
        return Err(Error::Config(format!("reference must be W x H x S, got {s:?}")));
    }
    let model = spec.degradation(s[0], s[1], s[2])?;
    let (h, m) = model.simulate(reference)?;
    let snr = spec.snr_db.unwrap_or(f64::INFINITY);
    let (sh, sm) = spec.noise_seeds();
    Ok(Observations {
        hsi: add_noise(&h, snr, sh)?,
        msi: add_noise(&m, snr, sm)?,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub sf: usize,
    pub snr: f64,
    pub kernel: String,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub ergas: f64,
    pub sam: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub row: MetricsRow,
    pub report: MetricReport,
    pub fusion: FusionOutput,
}

/// Simulate, fuse, score; writes artifacts when `out` is given.
pub fn run_scenario(spec: &ScenarioSpec, reference: &DenseTensor, out: Option<&Path>) -> Result<ScenarioResult> {
    let obs = simulate(spec, reference)?;
    let start = Instant::now();
    let fusion = fuse_traced(&spec.fusion, &obs.hsi, &obs.msi, &obs.model, false)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let report = MetricReport::compute(reference, &fusion.image, spec.sf)?;
    let row = MetricsRow {
        scenario: spec.name.clone(),
        sf: spec.sf,
        snr: spec.snr_db.unwrap_or(f64::INFINITY),
        kernel: spec.kernel.to_string(),
        seed: spec.fusion.seed,
        psnr: report.psnr_db,
        ssim: report.ssim,
        ergas: report.ergas,
        sam: report.sam_deg,
        wall_seconds,
    };
    log::info!(
        "{}: PSNR {:.3} dB, SSIM {:.4}, ERGAS {:.4}, SAM {:.3} deg, {:.2} s",
        row.scenario,
        row.psnr,
        row.ssim,
        row.ergas,
        row.sam,
        row.wall_seconds
    );
    let result = ScenarioResult { row, report, fusion };
    if let Some(dir) = out {
        write_scenario_outputs(dir, spec, &result)?;
    }
    Ok(result)
}

fn out_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Output {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Writes `rows` with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| out_err(path, e))?;
    }
    w.flush().map_err(|e| out_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))
}

#[derive(Serialize)]
struct ElboRow {
    group: usize,
    iteration: usize,
    elbo: f64,
}

#[derive(Serialize)]
struct BandRow {
    band: usize,
    psnr: f64,
}

fn write_elbo(path: &Path, fusion: &FusionOutput) -> Result<()> {
    let rows: Vec<ElboRow> = fusion
        .groups
        .iter()
        .flat_map(|g| {
            g.elbo_trace.iter().enumerate().map(move |(i, &elbo)| ElboRow {
                group: g.index,
                iteration: i + 1,
                elbo,
            })
        })
        .collect();
    write_csv(path, &rows)
}

pub fn write_spec(path: &Path, spec: &ScenarioSpec) -> Result<()> {
    let json = serde_json::to_string_pretty(spec).map_err(|e| out_err(path, e))?;
    fs::write(path, json).map_err(|e| out_err(path, e))
}

fn write_scenario_outputs(dir: &Path, spec: &ScenarioSpec, r: &ScenarioResult) -> Result<()> {
    ensure_dir(dir)?;
    write_image(&dir.join("fused"), &r.fusion.image)?;
    write_csv(&dir.join("metrics.csv"), std::slice::from_ref(&r.row))?;
    write_elbo(&dir.join("elbo.csv"), &r.fusion)?;
    let bands: Vec<BandRow> = r
        .report
        .psnr_per_band
        .iter()
        .enumerate()
        .map(|(band, &psnr)| BandRow { band, psnr })
        .collect();
    write_csv(&dir.join("psnr_bands.csv"), &bands)?;
    write_spec(&dir.join("spec.json"), spec)
}

/// Fuses a given observation pair without scoring; writes `fused`,
/// `elbo.csv` and `spec.json` when `out` is given.
pub fn run_fusion_only(
    spec: &ScenarioSpec,
    hsi: &DenseTensor,
    msi: &DenseTensor,
    out: Option<&Path>,
) -> Result<FusionOutput> {
    let ms = msi.shape();
    if ms.len() != 3 || hsi.order() != 3 {
        return Err(Error::Config(format!(
            "images must be 3rd order: {:?}, {:?}",
            hsi.shape(),
            ms
        )));
    }
    let model = spec.degradation(ms[0], ms[1], hsi.shape()[2])?;
    let fusion = fuse_traced(&spec.fusion, hsi, msi, &model, false)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_image(&dir.join("fused"), &fusion.image)?;
        write_elbo(&dir.join("elbo.csv"), &fusion)?;
        write_spec(&dir.join("spec.json"), spec)?;
    }
    Ok(fusion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Ranks,
    ChunkOverlap,
    Kernels,
    FixedParams,
    Convergence,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [
        AblationKind::Ranks,
        AblationKind::ChunkOverlap,
        AblationKind::Kernels,
        AblationKind::FixedParams,
        AblationKind::Convergence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationKind::Ranks => "ranks",
            AblationKind::ChunkOverlap => "chunk-overlap",
            AblationKind::Kernels => "kernels",
            AblationKind::FixedParams => "fixed-params",
            AblationKind::Convergence => "convergence",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s.trim()).ok_or_else(|| {
            Error::Config(format!(
                "unknown ablation `{s}`; expected one of ranks, chunk-overlap, kernels, fixed-params, convergence"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: String,
    pub label: String,
    pub ranks: String,
    pub patch: usize,
    pub overlap: usize,
    pub kernel: String,
    pub fixed_lambda: Option<f64>,
    pub fixed_tau: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub ergas: f64,
    pub sam: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iteration: usize,
    /// `ln(‖Z_t − Z_{t−1}‖ / ‖Z_{t−1}‖)` of the aggregated image; empty for
    /// the first sweep.
    pub rel_error: Option<f64>,
    pub elbo_mean: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
    /// Filled by the convergence ablation only.
    pub convergence: Vec<ConvergenceRow>,
}

/// Ranks expressed as the four tied values `(R1, R2, R3, R4)` where
/// `R13 = R23 = R2` and `R14 = R24 = R3`.
pub fn tied_ranks(r1: usize, r2: usize, r3: usize, r4: usize) -> Result<FctnRanks> {
    Ok(FctnRanks::new([r1, r2, r3, r2, r3, r4])?)
}

/// Grid points for `kind` around `base`, labelled. Chunk settings that do
/// not fit a `width × height` image or the scale factor are skipped.
pub fn ablation_grid(
    kind: AblationKind,
    base: &ScenarioSpec,
    width: usize,
    height: usize,
) -> Result<Vec<(String, ScenarioSpec)>> {
    let mut out = Vec::new();
    let with = |f: &dyn Fn(&mut ScenarioSpec)| {
        let mut s = base.clone();
        f(&mut s);
        s
    };
    match kind {
        AblationKind::Ranks => {
            let b = base.fusion.ranks;
            let (r2, r3) = (b.get(0, 2), b.get(0, 3));
            for r1 in [5, 15, 25, 35] {
                for r4 in [2, 4, 6] {
                    let ranks = tied_ranks(r1, r2, r3, r4)?;
                    out.push((format!("R1={r1},R4={r4}"), with(&|s| s.fusion.ranks = ranks)));
                }
            }
            let (r1, r4) = (b.get(0, 1), b.get(2, 3));
            for r2 in [2, 4, 6] {
                for r3 in [4, 8, 12] {
                    let ranks = tied_ranks(r1, r2, r3, r4)?;
                    out.push((format!("R2={r2},R3={r3}"), with(&|s| s.fusion.ranks = ranks)));
                }
            }
        }
        AblationKind::ChunkOverlap => {
            for m in [16, 32, 64, 128] {
                for p in [m / 4, m / 2, 3 * m / 4] {
                    if crate::patchwork::PatchGrid::plan(width, height, m, p, base.sf).is_err() {
                        log::warn!("skipping m={m}, p={p}: does not fit {width}x{height} at sf {}", base.sf);
                        continue;
                    }
                    out.push((
                        format!("m={m},p={p}"),
                        with(&|s| {
                            s.fusion.patch = m;
                            s.fusion.overlap = p;
                        }),
                    ));
                }
            }
        }
        AblationKind::Kernels => {
            for name in KernelSpec::PRESETS {
                let k = KernelSpec::preset(name, base.sf).expect("listed preset");
                out.push((name.to_string(), with(&|s| s.kernel = k.clone())));
            }
        }
        AblationKind::FixedParams => {
            for (which, l, t) in [("lambda", true, false), ("tau", false, true), ("both", true, true)] {
                for c in [1e-2, 1e-1, 1.0] {
                    let fixed = FixedParams {
                        lambda: l.then_some(c),
                        tau: t.then_some(c),
                    };
                    out.push((format!("{which}={c}"), with(&|s| s.fusion.fixed = fixed)));
                }
            }
        }
        AblationKind::Convergence => out.push(("convergence".into(), base.clone())),
    }
    Ok(out)
}

fn ablation_row(kind: AblationKind, label: &str, spec: &ScenarioSpec, r: &ScenarioResult) -> AblationRow {
    AblationRow {
        kind: kind.to_string(),
        label: label.to_string(),
        ranks: spec.fusion.ranks.to_string(),
        patch: spec.fusion.patch,
        overlap: spec.fusion.overlap,
        kernel: spec.kernel.to_string(),
        fixed_lambda: spec.fusion.fixed.lambda,
        fixed_tau: spec.fusion.fixed.tau,
        psnr: r.row.psnr,
        ssim: r.row.ssim,
        ergas: r.row.ergas,
        sam: r.row.sam,
        wall_seconds: r.row.wall_seconds,
    }
}

/// Runs every grid point of `kind` (in parallel) and writes the table.
pub fn run_ablation(
    kind: AblationKind,
    base: &ScenarioSpec,
    reference: &DenseTensor,
    out: Option<&Path>,
) -> Result<AblationReport> {
    let s = reference.shape();
    if s.len() != 3 {
        return Err(Error::Config(format!("reference must be W x H x S, got {s:?}")));
    }
    let grid = ablation_grid(kind, base, s[0], s[1])?;
    let mut convergence = Vec::new();
    let rows = if kind == AblationKind::Convergence {
        let obs = simulate(base, reference)?;
        let start = Instant::now();
        let fusion = fuse_traced(&base.fusion, &obs.hsi, &obs.msi, &obs.model, true)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let report = MetricReport::compute(reference, &fusion.image, base.sf)?;
        let iters = base.fusion.max_iters;
        for t in 0..iters {
            let elbos: Vec<f64> = fusion.groups.iter().map(|g| g.elbo_trace[t]).collect();
            convergence.push(ConvergenceRow {
                iteration: t + 1,
                rel_error: t.checked_sub(1).map(|j| fusion.image_rel_trace[j]),
                elbo_mean: elbos.iter().sum::<f64>() / elbos.len() as f64,
            });
        }
        let row = MetricsRow {
            scenario: base.name.clone(),
            sf: base.sf,
            snr: base.snr_db.unwrap_or(f64::INFINITY),
            kernel: base.kernel.to_string(),
            seed: base.fusion.seed,
            psnr: report.psnr_db,
            ssim: report.ssim,
            ergas: report.ergas,
            sam: report.sam_deg,
            wall_seconds,
        };
        let r = ScenarioResult { row, report, fusion };
        if let Some(dir) = out {
            ensure_dir(dir)?;
            write_elbo(&dir.join("elbo.csv"), &r.fusion)?;
        }
        vec![ablation_row(kind, "convergence", base, &r)]
    } else {
        grid.par_iter()
            .map(|(label, spec)| run_scenario(spec, reference, None).map(|r| ablation_row(kind, label, spec, &r)))
            .collect::<Result<Vec<_>>>()?
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_csv(
            &dir.join(format!("ablation_{}.csv", kind.as_str().replace('-', "_"))),
            &rows,
        )?;
        if !convergence.is_empty() {
            write_csv(&dir.join("convergence.csv"), &convergence)?;
        }
        write_spec(&dir.join("spec.json"), base)?;
    }
    Ok(AblationReport {
        kind,
        rows,
        convergence,
    })
}
