//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. The
//! process exits nonzero if any criterion fails, except the ones listed in
//! `KNOWN_LIMITATIONS`, which print `FAIL (known limitation ...)` and are
//! analysed in the README.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use bfctn::degradation::{
    add_noise, build_kernel, build_spatial_operator, default_srf, empirical_snr_db, separate_kernel, upsample_nearest,
    DegradationModel, KernelSpec,
};
use bfctn::harness::{run_scenario, simulate, ScenarioSpec, SrfSource};
use bfctn::inference::{fuse_group, fuse_traced, FixedParams, FusionConfig, GroupData, GroupRun};
use bfctn::io::load_image;
use bfctn::metrics::MetricReport;
use bfctn::patchwork::{aggregate, extract_image, PatchGrid};
use bfctn::sylvester::{relative_residual, solve_sylvester};
use bfctn::synthetic::{exact_rank, scene};
use bfctn::tensor::{compose_excluding, fctn_compose, FactorSet, RANK_PAIRS};
use bfctn::{DenseTensor, FctnRanks};
use ndarray::Array2;
use ndarray_linalg::Solve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_LIMITATIONS: &[&str] = &["4b", "10"];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn rel(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sq_distance(b).unwrap().sqrt() / b.frobenius_norm()
}

fn mat_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = (a - b).mapv(|v| v * v).sum().sqrt();
    d / b.mapv(|v| v * v).sum().sqrt()
}

fn small_ranks(rng: &mut ChaCha8Rng, max: usize) -> FctnRanks {
    FctnRanks::new(std::array::from_fn(|_| rng.random_range(1..=max))).unwrap()
}

// Written out independently of the library's contraction code.
fn sextuple_sum(f: &FactorSet) -> DenseTensor {
    let d = f.dims();
    let r = f.ranks().as_array();
    let t: Vec<(&[f64], &[usize])> = f.factors().iter().map(|x| (x.data(), x.shape())).collect();
    let at = |n: usize, ix: [usize; 4]| {
        let s = t[n].1;
        t[n].0[ix[0] + s[0] * (ix[1] + s[1] * (ix[2] + s[2] * ix[3]))]
    };
    DenseTensor::from_fn(&d, |i| {
        let mut sum = 0.0;
        for a in 0..r[0] {
            for b in 0..r[1] {
                for c in 0..r[2] {
                    for e in 0..r[3] {
                        for g in 0..r[4] {
                            for h in 0..r[5] {
                                sum += at(0, [i[0], a, b, c])
                                    * at(1, [a, i[1], e, g])
                                    * at(2, [b, e, i[2], h])
                                    * at(3, [c, g, h, i[3]]);
                            }
                        }
                    }
                }
            }
        }
        sum
    })
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dims = std::array::from_fn(|_| rng.random_range(1..=3));
        let ranks = small_ranks(&mut rng, 2);
        let f = FactorSet::random(dims, ranks, 1.0, &mut rng).unwrap();
        worst = worst.max(rel(&fctn_compose(&f), &sextuple_sum(&f)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-12 && secs < 5.0,
        format!("max rel err {worst:.2e} over 50 sets, {secs:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dims = std::array::from_fn(|_| rng.random_range(1..=4));
        let ranks = small_ranks(&mut rng, 3);
        let f = FactorSet::random(dims, ranks, 1.0, &mut rng).unwrap();
        let z = fctn_compose(&f);
        for n in 0..4 {
            let lhs = z.unfold(n).unwrap();
            let rhs = f.factor(n).unfold(n).unwrap().dot(&compose_excluding(&f, n).unwrap());
            worst = worst.max(mat_rel(&rhs, &lhs));
        }
    }
    check(
        worst < 1e-12,
        format!("max rel err {worst:.2e} over 20 instances x 4 modes"),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn gram(g: &Array2<f64>) -> Array2<f64> {
    let m = g.dot(&g.t());
    (&m + &m.t()) * 0.5
}

fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for p in 1..=10 {
        for q in 1..=(100 / p).min(10) {
            let s1 = gram(&random_matrix(&mut rng, q, q + 2)) + Array2::<f64>::eye(q) * 0.1;
            let s2 = gram(&random_matrix(&mut rng, q, q));
            let b = gram(&random_matrix(&mut rng, p, p / 2 + 1));
            let e = random_matrix(&mut rng, p, q);
            let x = match solve_sylvester(&s1, &b, &s2, &e) {
                Ok(s) => s.x,
                Err(err) => return Outcome::Fail(format!("p={p} q={q}: {err}")),
            };
            // (S1ᵀ ⊗ I + S2ᵀ ⊗ B) vec X = vec E, column-major vec.
            let k = kron(&s1.t().to_owned(), &Array2::eye(p)) + kron(&s2.t().to_owned(), &b);
            let vec_e = ndarray::Array1::from_iter(e.t().iter().cloned());
            let vx = k.solve(&vec_e).unwrap();
            let oracle = Array2::from_shape_vec((q, p), vx.to_vec()).unwrap().reversed_axes();
            worst = worst.max(mat_rel(&x, &oracle));
            cases += 1;
        }
    }

    // Full-size mode-1 shape: p = 64 pixels, q = 35·4·12 bonds.
    let (p, q) = (64, 1680);
    let s1 = gram(&random_matrix(&mut rng, q, 600)) + Array2::<f64>::eye(q) * 1e-3;
    let s2 = gram(&random_matrix(&mut rng, q, 600));
    let avg = build_spatial_operator(&[0.25; 4], 4, p).unwrap();
    let b = gram(&avg.t().to_owned());
    let e = random_matrix(&mut rng, p, q);
    let start = Instant::now();
    let big = solve_sylvester(&s1, &b, &s2, &e);
    let secs = start.elapsed().as_secs_f64();
    let residual = match big {
        Ok(s) => relative_residual(&s1, &b, &s2, &e, &s.x),
        Err(err) => return Outcome::Fail(format!("full-size solve: {err}")),
    };
    check(
        worst < 1e-8 && residual < 1e-9 && secs < 10.0,
        format!(
            "oracle max rel err {worst:.2e} over {cases} cases with pq<=100; 64x1680 residual {residual:.2e} in {secs:.2} s"
        ),
    )
}

fn desk_ranks() -> FctnRanks {
    FctnRanks::new([8, 2, 3, 2, 3, 2]).unwrap()
}

fn criterion_4() -> Outcome {
    let slack = 1e-6;
    let mut traces = 0;
    let mut worst_drop = 0.0f64;
    let z = scene(64, 64, 8, 44);
    for n in 1..=6 {
        let mut spec = ScenarioSpec::preset(n).unwrap();
        spec.fusion = FusionConfig {
            ranks: desk_ranks(),
            patch: 32,
            overlap: 16,
            seed: n as u64,
            ..FusionConfig::default()
        };
        let obs = simulate(&spec, &z).unwrap();
        let out = match fuse_traced(&spec.fusion, &obs.hsi, &obs.msi, &obs.model, false) {
            Ok(o) => o,
            Err(e) => return Outcome::Fail(format!("{}: {e}", spec.name)),
        };
        for g in &out.groups {
            for w in g.elbo_trace.windows(2) {
                let drop = (w[0] - w[1]) / w[0].abs();
                worst_drop = worst_drop.max(drop);
            }
            traces += 1;
        }
    }
    let run = criterion_6_data();
    let last = run.rel_log.last().copied().unwrap_or(f64::NAN);
    check(
        worst_drop <= slack && last < -2.0,
        format!(
            "{traces} group traces over 6 presets, worst relative ELBO drop {worst_drop:.2e}; ln rel change at sweep 6 on exact-rank data {last:.2}"
        ),
    )
}

/// Noiseless exact-rank group: how close 6 sweeps get to the truth.
fn criterion_4b() -> Outcome {
    let ranks = desk_ranks();
    let z = exact_rank([16, 16, 8, 4], ranks, 7).unwrap();
    let dm = DegradationModel::new(
        build_kernel(&KernelSpec::Average { size: 2 }, 8).unwrap(),
        &default_srf(8),
        2,
        16,
        16,
    )
    .unwrap();
    let h = z.mode_product(&dm.p1, 0).unwrap().mode_product(&dm.p2, 1).unwrap();
    let m = z.mode_product(&dm.p3, 2).unwrap();
    let data = GroupData::new(h, m, dm.p1.clone(), dm.p2.clone(), dm.p3.clone()).unwrap();
    let cfg = FusionConfig {
        ranks,
        ..FusionConfig::default()
    };
    let (est, _) = fuse_group(&cfg, data, 3).unwrap();
    let err = rel(&est, &z);
    check(
        err < 1e-3,
        format!("noiseless exact-rank recovery rel err {err:.2e} after 6 sweeps (target 1e-3)"),
    )
}

fn criterion_5() -> Outcome {
    // Group geometry of a 512x512x31 image at sf 4 with 64/48 patches.
    let ranks = FctnRanks::new([35, 4, 12, 4, 12, 4]).unwrap();
    let spatial = build_spatial_operator(&[0.25; 4], 4, 64).unwrap();
    let spectral = bfctn::degradation::build_spectral_operator(&default_srf(31)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let h = DenseTensor::from_fn(&[16, 16, 31, 29], |_| rng.random_range(0.0..1.0)).unwrap();
    let m = DenseTensor::from_fn(&[64, 64, 3, 29], |_| rng.random_range(0.0..1.0)).unwrap();
    let data = GroupData::new(h, m, spatial.clone(), spatial, spectral).unwrap();
    let cfg = FusionConfig {
        ranks,
        ..FusionConfig::default()
    };
    let run = GroupRun::new(&cfg, data, 1).unwrap();
    let s = &run.state;
    let mut ok = s.tau_h.shape == 1e-6 + 115072.0
        && s.tau_m.shape == 1e-6 + 178176.0
        && s.lambdas.pairs[0].iter().all(|g| g.shape == 1e-6 + 3072.0);
    let first = (s.tau_h.shape, s.tau_m.shape, s.lambdas.pairs[0][0].shape);

    // Every pair against the hand formula, and invariance across sweeps on a
    // smaller group.
    let dims = [16usize, 16, 6, 5];
    let r = desk_ranks();
    let hand = |n1: usize, n2: usize| {
        let side = |n: usize, o: usize| {
            dims[n]
                * (0..4)
                    .filter(|&j| j != n && j != o)
                    .map(|j| r.get(n, j))
                    .product::<usize>()
        };
        1e-6 + (side(n1, n2) + side(n2, n1)) as f64 / 2.0
    };
    let z = scene(16, 16, 6 * 5, 5);
    let z = DenseTensor::new(vec![16, 16, 6, 5], z.into_data()).unwrap();
    let dm = DegradationModel::new(
        build_kernel(&KernelSpec::Average { size: 4 }, 6).unwrap(),
        &default_srf(6),
        4,
        16,
        16,
    )
    .unwrap();
    let h = z.mode_product(&dm.p1, 0).unwrap().mode_product(&dm.p2, 1).unwrap();
    let m = z.mode_product(&dm.p3, 2).unwrap();
    let (c, e) = (
        1e-6 + (4 * 4 * 6 * 5) as f64 / 2.0,
        1e-6 + (16 * 16 * 3 * 5) as f64 / 2.0,
    );
    let data = GroupData::new(h, m, dm.p1.clone(), dm.p2.clone(), dm.p3.clone()).unwrap();
    let mut run = GroupRun::new(
        &FusionConfig {
            ranks: r,
            ..FusionConfig::default()
        },
        data,
        2,
    )
    .unwrap();
    for _ in 0..6 {
        run.sweep().unwrap();
        let s = &run.state;
        ok &= s.tau_h.shape == c && s.tau_m.shape == e;
        for (p, &(n1, n2)) in RANK_PAIRS.iter().enumerate() {
            ok &= s.lambdas.pairs[p].iter().all(|g| g.shape == hand(n1, n2));
        }
    }
    check(
        ok,
        format!(
            "64/29 group: a-a0={}, c-c0={}, e-e0={}; all six pairs unchanged over 6 sweeps",
            first.2 - 1e-6,
            first.0 - 1e-6,
            first.1 - 1e-6
        ),
    )
}

struct SyntheticRun {
    fused: MetricReport,
    nearest: MetricReport,
    fixed: MetricReport,
    rel_log: Vec<f64>,
    secs: f64,
}

/// Shared by criteria 4, 6 and 10; computed once.
fn criterion_6_data() -> &'static SyntheticRun {
    static RUN: OnceLock<SyntheticRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ranks = desk_ranks();
        let z4 = exact_rank([64, 64, 8, 1], ranks, 0).unwrap();
        let z = DenseTensor::new(vec![64, 64, 8], z4.into_data()).unwrap();
        let mut spec = ScenarioSpec::preset(1).unwrap();
        spec.srf = SrfSource::Default;
        spec.fusion = FusionConfig {
            ranks,
            ..FusionConfig::default()
        };
        let start = Instant::now();
        let obs = simulate(&spec, &z).unwrap();
        let out = fuse_traced(&spec.fusion, &obs.hsi, &obs.msi, &obs.model, true).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let fused = MetricReport::compute(&z, &out.image, 4).unwrap();
        let up = upsample_nearest(&obs.hsi, 4).unwrap();
        let nearest = MetricReport::compute(&z, &up, 4).unwrap();
        let mut fixed_cfg = spec.fusion.clone();
        fixed_cfg.fixed = FixedParams {
            lambda: Some(1.0),
            tau: Some(1.0),
        };
        let img = fuse_traced(&fixed_cfg, &obs.hsi, &obs.msi, &obs.model, false)
            .unwrap()
            .image;
        let fixed = MetricReport::compute(&z, &img, 4).unwrap();
        SyntheticRun {
            fused,
            nearest,
            fixed,
            rel_log: out.image_rel_trace,
            secs,
        }
    })
}

fn criterion_6() -> Outcome {
    let r = criterion_6_data();
    check(
        r.fused.psnr_db >= r.nearest.psnr_db + 5.0 && r.fused.sam_deg < r.nearest.sam_deg && r.secs < 60.0,
        format!(
            "PSNR {:.2} vs upsampled {:.2} dB, SAM {:.2} vs {:.2} deg, {:.1} s",
            r.fused.psnr_db, r.nearest.psnr_db, r.fused.sam_deg, r.nearest.sam_deg, r.secs
        ),
    )
}

fn row_sum_error(p: &Array2<f64>) -> f64 {
    p.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let z = scene(512, 512, 31, 77);
    let mut worst_snr = 0.0f64;
    for (k, snr) in [10.0, 20.0, 30.0, 35.0].into_iter().enumerate() {
        let noisy = add_noise(&z, snr, k as u64).unwrap();
        worst_snr = worst_snr.max((empirical_snr_db(&z, &noisy).unwrap() - snr).abs());
    }

    let mut worst_row = 0.0f64;
    for sf in [4, 8, 16] {
        for name in KernelSpec::PRESETS {
            let spec = KernelSpec::preset(name, sf).unwrap();
            let dm = DegradationModel::new(build_kernel(&spec, 31).unwrap(), &default_srf(31), sf, 512, 512).unwrap();
            worst_row = worst_row.max(row_sum_error(&dm.p1)).max(row_sum_error(&dm.p2));
        }
    }
    for srf in [
        default_srf(31),
        SrfSource::Gaussian { bands: 4, sigma: 2.0 }.matrix(31).unwrap(),
    ] {
        let p3 = bfctn::degradation::build_spectral_operator(&srf).unwrap();
        worst_row = worst_row.max(row_sum_error(&p3));
    }

    let quality = |name: &str, sf: usize| {
        let k = build_kernel(&KernelSpec::preset(name, sf).unwrap(), 1).unwrap();
        separate_kernel(&k.values).unwrap().quality
    };
    let separable = [("average", 4), ("average", 8), ("average", 16), ("g4", 4), ("g7", 4)];
    let worst_sep = separable
        .iter()
        .map(|&(n, sf)| (quality(n, sf) - 1.0).abs())
        .fold(0.0, f64::max);
    let (m30, m45) = (quality("m30", 4), quality("m45", 4));
    check(
        worst_snr <= 0.1 && worst_row <= 1e-12 && worst_sep <= 1e-12 && m30 < 1.0 && m45 < 1.0,
        format!(
            "SNR max dev {worst_snr:.4} dB; row-sum max dev {worst_row:.1e}; separable quality dev {worst_sep:.1e}; motion quality {m30:.4}/{m45:.4}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    let big = PatchGrid::plan(512, 512, 64, 48, 4).unwrap();
    let counts_ok = big.groups() == 29 && big.patches_per_group() == 29;
    for (w, h, m, p, sf, bands) in [
        (512, 512, 64, 48, 4, 3),
        (64, 64, 64, 48, 4, 2),
        (96, 80, 32, 16, 8, 3),
        (100, 60, 20, 10, 5, 2),
        (48, 48, 16, 0, 1, 4),
    ] {
        let grid = PatchGrid::plan(w, h, m, p, sf).unwrap();
        let img = DenseTensor::from_fn(&[w, h, bands], |_| rng.random_range(-1.0..1.0)).unwrap();
        let back = aggregate(&extract_image(&img, &grid).unwrap(), &grid).unwrap();
        worst = worst.max(rel(&back, &img));
    }
    check(
        counts_ok && worst < 1e-12,
        format!(
            "512/64/48 gives K={} I4={}; max round-trip rel err {worst:.1e}",
            big.groups(),
            big.patches_per_group()
        ),
    )
}

fn criterion_9() -> Outcome {
    let Some(dir) = std::env::var_os("BFCTN_CAVE_DIR").map(PathBuf::from) else {
        return Outcome::Skip(
            "set BFCTN_CAVE_DIR to a directory with statue, balloons, tiles, beers, toy containers".into(),
        );
    };
    let mut spec = ScenarioSpec::preset(1).unwrap();
    let srf = dir.join("srf.csv");
    if srf.exists() {
        spec.srf = SrfSource::File { path: srf };
    }
    let names = ["statue", "balloons", "tiles", "beers", "toy"];
    let (mut psnr, mut sam, mut slowest) = (0.0, 0.0, 0.0f64);
    for name in names {
        let z = match load_image(&dir.join(name)) {
            Ok((z, _)) => z,
            Err(e) => return Outcome::Fail(format!("{name}: {e}")),
        };
        let r = match run_scenario(&spec, &z, None) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("{name}: {e}")),
        };
        psnr += r.row.psnr / 5.0;
        sam += r.row.sam / 5.0;
        slowest = slowest.max(r.row.wall_seconds);
    }
    check(
        (psnr - 45.5716).abs() <= 1.0 && (sam - 9.1925).abs() <= 1.5 && slowest <= 4.0 * 849.98,
        format!("mean PSNR {psnr:.4} dB (45.5716 +- 1), SAM {sam:.4} deg (9.1925 +- 1.5), slowest {slowest:.0} s"),
    )
}

fn criterion_10() -> Outcome {
    let r = criterion_6_data();
    let gap = r.fused.psnr_db - r.fixed.psnr_db;
    check(
        gap.abs() <= 1.0,
        format!(
            "fixed lambda=tau=1 PSNR {:.2} dB vs Gamma-prior {:.2} dB (gap {gap:.2})",
            r.fixed.psnr_db, r.fused.psnr_db
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("4b", criterion_4b),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (id, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("criterion {id:>3}: PASS  {d} [{secs:.1} s]"),
            Outcome::Skip(d) => println!("criterion {id:>3}: SKIP  {d}"),
            Outcome::Fail(d) if KNOWN_LIMITATIONS.contains(&id) => {
                println!("criterion {id:>3}: FAIL (known limitation, see README)  {d} [{secs:.1} s]")
            }
            Outcome::Fail(d) => {
                println!("criterion {id:>3}: FAIL  {d} [{secs:.1} s]");
                unexpected.push(id);
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
