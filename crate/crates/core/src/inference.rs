//! Variational EM over one FCTN per patch group.
//!
//! Each group's state holds point estimates of the four factors, Gamma
//! posteriors over the bond sparsity weights `λ` and the two noise precisions
//! `τ_h`, `τ_m`. A sweep updates, in order, all `λ`, `τ_h`, `τ_m`, then
//! factors 0..=3, and records the evidence lower bound.
//!
//! Observation model for a group, with `Ĥ = FCTN(T0×0P1, T1×1P2, T2, T3)`
//! and `M̂ = FCTN(T0, T1, T2×2P3, T3)`:
//! `H ~ N(Ĥ, 1/τ_h)`, `M ~ N(M̂, 1/τ_m)`, and each factor has a zero-mean
//! tensor-normal prior whose precision on bond `(n, j)` index `r` is
//! `λ_{nj}[r]`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::degradation::{DegradationError, DegradationModel};
use crate::metrics::{self, MetricError};
use crate::patchwork::{extract_groups, Aggregator, PatchError, PatchGrid};
use crate::sylvester::{solve_right_linear, solve_sylvester, SylvesterError};
use crate::tensor::{
    compose_excluding, fctn_compose, kron_diag, DenseTensor, FactorSet, FctnRanks, TensorError, RANK_PAIRS,
};

/// Added to every diagonal entry of the factor precision before solving.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("factor {mode} update failed: {source}")]
    Solve {
        mode: usize,
        #[source]
        source: SylvesterError,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Degradation(#[from] DegradationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Gamma prior parameters `(a0, b0)` for `λ`, `(c0, d0)` for `τ_h`,
/// `(e0, f0)` for `τ_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
    pub e0: f64,
    pub f0: f64,
}

impl Hyperpriors {
    pub fn uniform(v: f64) -> Self {
        Self {
            a0: v,
            b0: v,
            c0: v,
            d0: v,
            e0: v,
            f0: v,
        }
    }
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self::uniform(1e-6)
    }
}

/// Constants that replace the Gamma-distributed parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub ranks: FctnRanks,
    pub patch: usize,
    pub overlap: usize,
    pub max_iters: usize,
    pub hyper: Hyperpriors,
    /// Standard deviation of the Gaussian factor initialization. `None`
    /// calibrates it per group so the composed tensor starts at the energy
    /// of the observations (see [`calibrated_init_scale`]).
    pub init_scale: Option<f64>,
    pub seed: u64,
    pub fixed: FixedParams,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            ranks: FctnRanks::new([35, 4, 12, 4, 12, 4]).expect("positive"),
            patch: 64,
            overlap: 48,
            max_iters: 6,
            hyper: Hyperpriors::default(),
            init_scale: None,
            seed: 0,
            fixed: FixedParams::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::Config(m));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        let h = self.hyper;
        if [h.a0, h.b0, h.c0, h.d0, h.e0, h.f0]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return bad(format!("hyperpriors must be positive and finite: {h:?}"));
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("init scale must be finite and >= 0, got {s}"));
            }
        }
        for v in [self.fixed.lambda, self.fixed.tau].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("fixed parameters must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn new(shape: f64, rate: f64) -> Self {
        debug_assert!(shape > 0.0 && rate > 0.0, "Gamma({shape}, {rate})");
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[ln x] = ψ(a) − ln b`.
    pub fn log_mean(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    /// ELBO block `lnΓ(a) + a(1 − ln b − prior_rate / b)`, valid when the
    /// shape is at its conjugate closed form.
    fn elbo_block(&self, prior_rate: f64) -> f64 {
        let (a, b) = (self.shape, self.rate);
        ln_gamma(a) + a * (1.0 - b.ln() - prior_rate / b)
    }
}

/// Posteriors over the six bond weight vectors, in [`RANK_PAIRS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaField {
    pub pairs: [Vec<GammaPosterior>; 6],
}

impl LambdaField {
    fn means(&self, pair: usize) -> Vec<f64> {
        self.pairs[pair].iter().map(GammaPosterior::mean).collect()
    }
}

/// Fallback when the observations carry no energy.
const DEFAULT_INIT_SCALE: f64 = 0.1;

/// `σ` such that an FCTN with i.i.d. `N(0, σ²)` factors has the same mean
/// square as `obs`: every entry sums `∏R` products of four factor entries,
/// so `E[z²] = ∏R · σ⁸`.
///
/// Too small a start lets the first `λ` update shrink the factors to the
/// all-zero fixed point; too large a start swamps the first `τ` update.
pub fn calibrated_init_scale(obs: &DenseTensor, ranks: &FctnRanks) -> f64 {
    let ms = obs.frobenius_norm().powi(2) / obs.len().max(1) as f64;
    let prod: f64 = ranks.as_array().iter().map(|&r| r as f64).product();
    let s = (ms / prod).powf(0.125);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        DEFAULT_INIT_SCALE
    }
}

/// Conjugate shape `a − a0` for bond pair `(n1, n2)`: half the number of
/// prior terms in which each weight appears.
pub fn lambda_shape_increment(dims: [usize; 4], ranks: &FctnRanks, n1: usize, n2: usize) -> f64 {
    let side = |n: usize, other: usize| -> usize {
        dims[n]
            * (0..4)
                .filter(|&j| j != n && j != other)
                .map(|j| ranks.get(n, j))
                .product::<usize>()
    };
    (side(n1, n2) + side(n2, n1)) as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub factors: FactorSet,
    pub lambdas: LambdaField,
    pub tau_h: GammaPosterior,
    pub tau_m: GammaPosterior,
    pub elbo_trace: Vec<f64>,
    /// `ln(‖Z_t − Z_{t−1}‖ / ‖Z_{t−1}‖)` between successive sweeps, when tracked.
    pub rel_trace: Vec<f64>,
    pub iteration: usize,
}

/// Observations and operators for one group.
#[derive(Debug, Clone)]
pub struct GroupData {
    /// `I'1 × I'2 × I3 × I4`.
    pub h: DenseTensor,
    /// `I1 × I2 × I'3 × I4`.
    pub m: DenseTensor,
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
    pub p3: Array2<f64>,
    b: [Array2<f64>; 3],
}

fn symmetrize(a: Array2<f64>) -> Array2<f64> {
    (&a + &a.t()) * 0.5
}

impl GroupData {
    pub fn new(
        h: DenseTensor,
        m: DenseTensor,
        p1: Array2<f64>,
        p2: Array2<f64>,
        p3: Array2<f64>,
    ) -> Result<Self, InferenceError> {
        let (hs, ms) = (h.shape().to_vec(), m.shape().to_vec());
        let ok = hs.len() == 4
            && ms.len() == 4
            && p1.dim() == (hs[0], ms[0])
            && p2.dim() == (hs[1], ms[1])
            && p3.dim() == (ms[2], hs[2])
            && hs[3] == ms[3];
        if !ok {
            return Err(InferenceError::Shape(format!(
                "H {hs:?}, M {ms:?}, P1 {:?}, P2 {:?}, P3 {:?}",
                p1.dim(),
                p2.dim(),
                p3.dim()
            )));
        }
        let b = [
            symmetrize(p1.t().dot(&p1)),
            symmetrize(p2.t().dot(&p2)),
            symmetrize(p3.t().dot(&p3)),
        ];
        Ok(Self { h, m, p1, p2, p3, b })
    }

    /// Full-resolution dims `(I1, I2, I3, I4)`.
    pub fn dims(&self) -> [usize; 4] {
        let (hs, ms) = (self.h.shape(), self.m.shape());
        [ms[0], ms[1], hs[2], hs[3]]
    }

    /// `c − c0`.
    pub fn tau_h_shape_increment(&self) -> f64 {
        self.h.len() as f64 / 2.0
    }

    /// `e − e0`.
    pub fn tau_m_shape_increment(&self) -> f64 {
        self.m.len() as f64 / 2.0
    }

    fn h_side(&self, f: &FactorSet) -> Result<FactorSet, TensorError> {
        f.with_mode_product(0, &self.p1)?.with_mode_product(1, &self.p2)
    }

    fn m_side(&self, f: &FactorSet) -> Result<FactorSet, TensorError> {
        f.with_mode_product(2, &self.p3)
    }

    /// Squared residuals `(‖H − Ĥ‖², ‖M − M̂‖²)`.
    pub fn residuals(&self, f: &FactorSet) -> Result<(f64, f64), InferenceError> {
        let hh = fctn_compose(&self.h_side(f)?);
        let mm = fctn_compose(&self.m_side(f)?);
        Ok((self.h.sq_distance(&hh)?, self.m.sq_distance(&mm)?))
    }
}

/// One group's inference: data, configuration and evolving state.
#[derive(Debug, Clone)]
pub struct GroupRun {
    pub cfg: FusionConfig,
    pub data: GroupData,
    pub state: GroupState,
    track_iterates: bool,
    last_z: Option<DenseTensor>,
    cached_residuals: Option<(f64, f64)>,
}

impl GroupRun {
    /// Random factors `N(0, σ²)` from `seed`; `λ` and `τ` posteriors
    /// start at their conjugate shapes with mean 1.
    pub fn new(cfg: &FusionConfig, data: GroupData, seed: u64) -> Result<Self, InferenceError> {
        cfg.validate()?;
        let dims = data.dims();
        let ranks = cfg.ranks;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = cfg.init_scale.unwrap_or_else(|| calibrated_init_scale(&data.h, &ranks));
        let factors = FactorSet::random(dims, ranks, scale, &mut rng)?;
        let hp = cfg.hyper;
        let pairs = RANK_PAIRS.map(|(n1, n2)| {
            let a = hp.a0 + lambda_shape_increment(dims, &ranks, n1, n2);
            vec![GammaPosterior::new(a, a); ranks.get(n1, n2)]
        });
        let c = hp.c0 + data.tau_h_shape_increment();
        let e = hp.e0 + data.tau_m_shape_increment();
        Ok(Self {
            cfg: cfg.clone(),
            data,
            state: GroupState {
                factors,
                lambdas: LambdaField { pairs },
                tau_h: GammaPosterior::new(c, c),
                tau_m: GammaPosterior::new(e, e),
                elbo_trace: Vec::new(),
                rel_trace: Vec::new(),
                iteration: 0,
            },
            track_iterates: false,
            last_z: None,
            cached_residuals: None,
        })
    }

    /// Also compose `Z` after every sweep and record the relative change.
    pub fn track_iterates(mut self, on: bool) -> Self {
        self.track_iterates = on;
        self
    }

    fn lambda_means(&self, pair: usize) -> Vec<f64> {
        match self.cfg.fixed.lambda {
            Some(c) => vec![c; self.state.lambdas.pairs[pair].len()],
            None => self.state.lambdas.means(pair),
        }
    }

    fn tau_means(&self) -> (f64, f64) {
        match self.cfg.fixed.tau {
            Some(c) => (c, c),
            None => (self.state.tau_h.mean(), self.state.tau_m.mean()),
        }
    }

    /// Diagonal of `Λ_n`, aligned with the columns of `unfold(T_n, n)`.
    pub fn lambda_diag(&self, n: usize) -> Vec<f64> {
        let vecs: Vec<Vec<f64>> = (0..4)
            .filter(|&j| j != n)
            .map(|j| self.lambda_means(FctnRanks::pair_index(n, j)))
            .collect();
        let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
        kron_diag(&refs)
            .expect("positive means")
            .into_iter()
            .map(|v| v + LAMBDA_FLOOR)
            .collect()
    }

    /// `Σ_{entries with bond (n1,n2) index r} T_{n1}² · (other bond means)`
    /// for every `r`.
    fn bond_quadratic(&self, n1: usize, n2: usize) -> Vec<f64> {
        let t = self.state.factors.factor(n1);
        let u = t.unfold(n2).expect("mode in range");
        let vecs: Vec<Vec<f64>> = (0..4)
            .filter(|&j| j != n2)
            .map(|j| {
                if j == n1 {
                    vec![1.0; t.shape()[n1]]
                } else {
                    self.lambda_means(FctnRanks::pair_index(n1, j))
                }
            })
            .collect();
        let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
        let w = kron_diag(&refs).expect("positive means");
        u.rows()
            .into_iter()
            .map(|row| row.iter().zip(&w).map(|(x, wc)| wc * x * x).sum())
            .collect()
    }

    pub fn update_lambda(&mut self) {
        if self.cfg.fixed.lambda.is_some() {
            return;
        }
        let b0 = self.cfg.hyper.b0;
        for (p, &(n1, n2)) in RANK_PAIRS.iter().enumerate() {
            let q1 = self.bond_quadratic(n1, n2);
            let q2 = self.bond_quadratic(n2, n1);
            for (r, g) in self.state.lambdas.pairs[p].iter_mut().enumerate() {
                g.rate = b0 + 0.5 * (q1[r] + q2[r]);
            }
        }
    }

    fn residuals(&mut self) -> Result<(f64, f64), InferenceError> {
        if let Some(r) = self.cached_residuals {
            return Ok(r);
        }
        let r = self.data.residuals(&self.state.factors)?;
        self.cached_residuals = Some(r);
        Ok(r)
    }

    pub fn update_tau_h(&mut self) -> Result<(), InferenceError> {
        if self.cfg.fixed.tau.is_some() {
            return Ok(());
        }
        let (rh, _) = self.residuals()?;
        self.state.tau_h.rate = self.cfg.hyper.d0 + 0.5 * rh;
        Ok(())
    }

    pub fn update_tau_m(&mut self) -> Result<(), InferenceError> {
        if self.cfg.fixed.tau.is_some() {
            return Ok(());
        }
        let (_, rm) = self.residuals()?;
        self.state.tau_m.rate = self.cfg.hyper.f0 + 0.5 * rm;
        Ok(())
    }

    /// Point estimate of factor `n` given everything else.
    pub fn update_factor(&mut self, n: usize) -> Result<(), InferenceError> {
        if n >= 4 {
            return Err(InferenceError::Config(format!("factor index {n} out of range")));
        }
        let (tau_h, tau_m) = self.tau_means();
        let f = &self.state.factors;
        let d = &self.data;
        let hx = compose_excluding(&d.h_side(f)?, n)?;
        let mx = compose_excluding(&d.m_side(f)?, n)?;
        let gh = symmetrize(hx.dot(&hx.t()));
        let gm = symmetrize(mx.dot(&mx.t()));
        let hu = d.h.unfold(n)?;
        let mu = d.m.unfold(n)?;
        let mut lam = Array2::<f64>::zeros(gh.dim());
        for (i, v) in self.lambda_diag(n).into_iter().enumerate() {
            lam[(i, i)] = v;
        }
        let solve_err = |source| InferenceError::Solve { mode: n, source };
        let x = match n {
            0 | 1 => {
                let p = if n == 0 { &d.p1 } else { &d.p2 };
                let s1 = &gm * tau_m + &lam;
                let s2 = &gh * tau_h;
                let e = mu.dot(&mx.t()) * tau_m + p.t().dot(&hu).dot(&hx.t()) * tau_h;
                solve_sylvester(&s1, &d.b[n], &s2, &e).map_err(solve_err)?.x
            }
            2 => {
                let s1 = &gh * tau_h + &lam;
                let s2 = &gm * tau_m;
                let e = d.p3.t().dot(&mu).dot(&mx.t()) * tau_m + hu.dot(&hx.t()) * tau_h;
                solve_sylvester(&s1, &d.b[2], &s2, &e).map_err(solve_err)?.x
            }
            _ => {
                let s = &gh * tau_h + &gm * tau_m + &lam;
                let e = hu.dot(&hx.t()) * tau_h + mu.dot(&mx.t()) * tau_m;
                solve_right_linear(&e, &s).map_err(solve_err)?
            }
        };
        let shape = f.factor(n).shape().to_vec();
        let t = DenseTensor::fold(&x, n, &shape)?;
        self.state.factors.set_factor(n, t)?;
        self.cached_residuals = None;
        Ok(())
    }

    /// Evidence lower bound up to an additive constant.
    pub fn compute_elbo(&mut self) -> Result<f64, InferenceError> {
        let (rh, rm) = self.residuals()?;
        let (tau_h, tau_m) = self.tau_means();
        let mut elbo = -0.5 * tau_h * rh - 0.5 * tau_m * rm;
        for n in 0..4 {
            let u = self.state.factors.factor(n).unfold(n)?;
            let lam = self.lambda_diag(n);
            let quad: f64 = u
                .rows()
                .into_iter()
                .map(|row| row.iter().zip(&lam).map(|(x, l)| l * x * x).sum::<f64>())
                .sum();
            elbo -= 0.5 * quad;
        }
        let hp = self.cfg.hyper;
        if self.cfg.fixed.lambda.is_none() {
            for pair in &self.state.lambdas.pairs {
                elbo += pair.iter().map(|g| g.elbo_block(hp.b0)).sum::<f64>();
            }
        }
        if self.cfg.fixed.tau.is_none() {
            elbo += self.state.tau_h.elbo_block(hp.d0) + self.state.tau_m.elbo_block(hp.f0);
        }
        Ok(elbo)
    }

    /// One sweep: `λ`, `τ_h`, `τ_m`, factors 0..=3, then the ELBO.
    pub fn sweep(&mut self) -> Result<(), InferenceError> {
        self.update_lambda();
        self.update_tau_h()?;
        self.update_tau_m()?;
        for n in 0..4 {
            self.update_factor(n)?;
        }
        let elbo = self.compute_elbo()?;
        self.state.elbo_trace.push(elbo);
        self.state.iteration += 1;
        if self.track_iterates {
            let z = self.compose();
            if let Some(prev) = &self.last_z {
                self.state.rel_trace.push(rel_change(prev, &z)?);
            }
            self.last_z = Some(z);
        }
        Ok(())
    }

    /// `FCTN(T0, T1, T2, T3)` at the current point estimates.
    pub fn compose(&self) -> DenseTensor {
        fctn_compose(&self.state.factors)
    }

    pub fn run(mut self) -> Result<(DenseTensor, GroupState), InferenceError> {
        for _ in 0..self.cfg.max_iters {
            self.sweep()?;
        }
        let z = match self.last_z.take() {
            Some(z) => z,
            None => self.compose(),
        };
        Ok((z, self.state))
    }
}

/// Runs `cfg.max_iters` sweeps on one group and returns the composed tensor
/// with the final state (ELBO and relative-change traces included).
pub fn fuse_group(cfg: &FusionConfig, data: GroupData, seed: u64) -> Result<(DenseTensor, GroupState), InferenceError> {
    GroupRun::new(cfg, data, seed)?.track_iterates(true).run()
}

/// Log relative change, `NaN` when the previous iterate is all zero.
fn rel_change(prev: &DenseTensor, curr: &DenseTensor) -> Result<f64, InferenceError> {
    match metrics::relative_error(prev, curr) {
        Err(MetricError::ZeroNorm) => Ok(f64::NAN),
        r => Ok(r?),
    }
}

/// Seed for group `k`: a splitmix64 step over the master seed and index.
pub fn group_seed(master: u64, k: usize) -> u64 {
    let mut z = master ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub index: usize,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub image: DenseTensor,
    pub grid: PatchGrid,
    pub groups: Vec<GroupSummary>,
    /// Relative change of the aggregated image between successive sweeps
    /// (empty unless tracing was requested).
    pub image_rel_trace: Vec<f64>,
}

/// Fuses a `w × h × S` LR-HSI with a `W × H × s` HR-MSI.
pub fn fuse(
    cfg: &FusionConfig,
    hsi: &DenseTensor,
    msi: &DenseTensor,
    dm: &DegradationModel,
) -> Result<DenseTensor, InferenceError> {
    fuse_traced(cfg, hsi, msi, dm, false).map(|o| o.image)
}

/// [`fuse`] with per-group ELBO traces and, if `trace_image`, the relative
/// change of the aggregated image after every sweep.
pub fn fuse_traced(
    cfg: &FusionConfig,
    hsi: &DenseTensor,
    msi: &DenseTensor,
    dm: &DegradationModel,
    trace_image: bool,
) -> Result<FusionOutput, InferenceError> {
    cfg.validate()?;
    let ms = msi.shape();
    if ms.len() != 3 || hsi.order() != 3 {
        return Err(InferenceError::Shape(format!("HSI {:?}, MSI {:?}", hsi.shape(), ms)));
    }
    if dm.hr_bands() != hsi.shape()[2] || dm.ms_bands() != ms[2] {
        return Err(InferenceError::Shape(format!(
            "spectral operator is {}x{}, images have {} and {} bands",
            dm.ms_bands(),
            dm.hr_bands(),
            ms[2],
            hsi.shape()[2]
        )));
    }
    let grid = PatchGrid::plan(ms[0], ms[1], cfg.patch, cfg.overlap, dm.sf)?;
    let patch_dm = dm.for_size(cfg.patch, cfg.patch)?;
    let groups = extract_groups(hsi, msi, &grid)?;
    let mut runs: Vec<GroupRun> = groups
        .into_iter()
        .map(|g| {
            let data = GroupData::new(g.h, g.m, patch_dm.p1.clone(), patch_dm.p2.clone(), patch_dm.p3.clone())?;
            GroupRun::new(cfg, data, group_seed(cfg.seed, g.index))
        })
        .collect::<Result<_, _>>()?;
    log::info!(
        "fusing {} groups of {} patches, {} sweeps",
        grid.groups(),
        grid.patches_per_group(),
        cfg.max_iters
    );

    let bands = hsi.shape()[2];
    let assemble = |runs: &[GroupRun]| -> Result<DenseTensor, InferenceError> {
        let mut acc = Aggregator::new(&grid, bands);
        for (k, r) in runs.iter().enumerate() {
            acc.add(k, &r.compose())?;
        }
        Ok(acc.finish()?)
    };

    let mut image_rel_trace = Vec::new();
    let mut prev: Option<DenseTensor> = None;
    for sweep in 0..cfg.max_iters {
        runs.par_iter_mut()
            .map(GroupRun::sweep)
            .collect::<Result<Vec<()>, _>>()?;
        log::debug!("sweep {} done", sweep + 1);
        if trace_image && sweep + 1 < cfg.max_iters {
            let img = assemble(&runs)?;
            if let Some(p) = &prev {
                image_rel_trace.push(rel_change(p, &img)?);
            }
            prev = Some(img);
        }
    }
    let image = assemble(&runs)?;
    if let Some(p) = &prev {
        image_rel_trace.push(rel_change(p, &image)?);
    }
    let groups = runs
        .into_iter()
        .enumerate()
        .map(|(index, r)| GroupSummary {
            index,
            elbo_trace: r.state.elbo_trace,
        })
        .collect();
    Ok(FusionOutput {
        image,
        grid,
        groups,
        image_rel_trace,
    })
}
