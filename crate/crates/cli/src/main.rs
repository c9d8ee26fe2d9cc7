//! `bfctn`: fuse, score and ablate from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 file access,
//! 4 malformed input, 5 shape mismatch, 6 solver failure, 7 degradation
//! setup, 8 metric failure. On failure one JSON object
//! `{"error":{"category":..,"message":..}}` is printed to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use bfctn::degradation::KernelSpec;
use bfctn::harness::{self, AblationKind, ScenarioSpec, SrfSource};
use bfctn::io::load_image;
use bfctn::{synthetic, DenseTensor, Error, FctnRanks};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bfctn", version, about = "Hyperspectral and multispectral image fusion")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate, fuse and score one scenario (the default).
    Run(RunArgs),
    /// Sweep one setting and write a table.
    Ablation {
        /// ranks, chunk-overlap, kernels, fixed-params or convergence.
        kind: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Scenario preset 1..6 (also `scenario3`, `s3`).
    #[arg(long, default_value = "1")]
    scenario: String,
    /// Spatial scale factor; overrides the preset.
    #[arg(long)]
    sf: Option<usize>,
    /// SNR in dB, or `none` for noiseless; overrides the preset.
    #[arg(long)]
    snr: Option<String>,
    /// Six bond ranks `R12,R13,R14,R23,R24,R34`.
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    /// Sweeps per group.
    #[arg(long)]
    iters: Option<usize>,
    /// Kernel preset (average, g4, g7, m30, m45, e30, hybrid, svar) or an
    /// explicit form such as `gaussian:2:7`.
    #[arg(long)]
    kernel: Option<String>,
    /// `default`, `gaussian:<bands>:<sigma>` or a CSV path.
    #[arg(long)]
    srf: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Factor init standard deviation; calibrated from the data if unset.
    #[arg(long)]
    init_scale: Option<f64>,
    /// Reference cube: simulate observations, fuse and score.
    #[arg(long, conflicts_with_all = ["in_hsi", "in_msi", "synthetic"])]
    in_ref: Option<PathBuf>,
    /// Observed low-resolution hyperspectral cube (fuse only).
    #[arg(long, requires = "in_msi", conflicts_with = "synthetic")]
    in_hsi: Option<PathBuf>,
    /// Observed high-resolution multispectral cube (fuse only).
    #[arg(long, requires = "in_hsi", conflicts_with = "synthetic")]
    in_msi: Option<PathBuf>,
    /// Use a generated `WxHxS` scene as the reference, e.g. `64x64x31`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_srf(s: &str) -> Result<SrfSource, Error> {
    if s == "default" {
        return Ok(SrfSource::Default);
    }
    if let Some(rest) = s.strip_prefix("gaussian:") {
        let (b, sig) = rest
            .split_once(':')
            .ok_or_else(|| config(format!("expected gaussian:<bands>:<sigma>, got `{s}`")))?;
        let bands = b.parse().map_err(|_| config(format!("bad band count `{b}`")))?;
        let sigma = sig.parse().map_err(|_| config(format!("bad sigma `{sig}`")))?;
        return Ok(SrfSource::Gaussian { bands, sigma });
    }
    Ok(SrfSource::File { path: PathBuf::from(s) })
}

fn parse_dims(s: &str) -> Result<[usize; 3], Error> {
    let v: Vec<usize> = s
        .split('x')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| config(format!("expected WxHxS, got `{s}`")))?;
    match v.as_slice() {
        &[w, h, b] if w > 0 && h > 0 && b > 0 => Ok([w, h, b]),
        _ => Err(config(format!("expected WxHxS with positive sizes, got `{s}`"))),
    }
}

fn build_spec(a: &RunArgs) -> Result<ScenarioSpec, Error> {
    let mut spec =
        ScenarioSpec::from_name(&a.scenario).ok_or_else(|| config(format!("unknown scenario `{}`", a.scenario)))?;
    if let Some(sf) = a.sf {
        spec.sf = sf;
        spec.kernel = KernelSpec::Average { size: sf };
    }
    if let Some(snr) = &a.snr {
        spec.snr_db = match snr.as_str() {
            "none" | "inf" => None,
            v => Some(v.parse().map_err(|_| config(format!("bad SNR `{v}`")))?),
        };
    }
    if let Some(k) = &a.kernel {
        spec.kernel = KernelSpec::parse(k, spec.sf)?;
    }
    if let Some(s) = &a.srf {
        spec.srf = parse_srf(s)?;
    }
    let f = &mut spec.fusion;
    if let Some(r) = &a.ranks {
        f.ranks = r.parse::<FctnRanks>()?;
    }
    if let Some(p) = a.patch {
        f.patch = p;
    }
    if let Some(p) = a.overlap {
        f.overlap = p;
    }
    if let Some(i) = a.iters {
        f.max_iters = i;
    }
    if let Some(s) = a.seed {
        f.seed = s;
    }
    if a.init_scale.is_some() {
        f.init_scale = a.init_scale;
    }
    f.validate().map_err(Error::from)?;
    Ok(spec)
}

fn reference(a: &RunArgs, seed: u64) -> Result<DenseTensor, Error> {
    if let Some(p) = &a.in_ref {
        return Ok(load_image(p)?.0);
    }
    if let Some(d) = &a.synthetic {
        let [w, h, b] = parse_dims(d)?;
        return Ok(synthetic::scene(w, h, b, seed));
    }
    Err(config("need --in-ref, --synthetic, or both --in-hsi and --in-msi"))
}

fn run(cli: Cli) -> Result<(), Error> {
    let (args, ablation) = match cli.command {
        None => (cli.run, None),
        Some(Command::Run(a)) => (a, None),
        Some(Command::Ablation { kind, run }) => (run, Some(kind.parse::<AblationKind>()?)),
    };
    let spec = build_spec(&args)?;
    let out = args.out.as_deref();
    if let Some(kind) = ablation {
        let z = reference(&args, spec.fusion.seed)?;
        let rep = harness::run_ablation(kind, &spec, &z, out)?;
        for r in &rep.rows {
            println!("{}", serde_json::to_string(r).expect("serializable row"));
        }
        return Ok(());
    }
    if let (Some(h), Some(m)) = (&args.in_hsi, &args.in_msi) {
        let (hsi, _) = load_image(h)?;
        let (msi, _) = load_image(m)?;
        let fusion = harness::run_fusion_only(&spec, &hsi, &msi, out)?;
        let s = fusion.image.shape();
        println!(
            "{}",
            serde_json::json!({ "fused": { "width": s[0], "height": s[1], "bands": s[2], "groups": fusion.groups.len() } })
        );
        return Ok(());
    }
    let z = reference(&args, spec.fusion.seed)?;
    let r = harness::run_scenario(&spec, &z, out)?;
    println!("{}", serde_json::to_string(&r.row).expect("serializable row"));
    Ok(())
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "format" => 4,
        "shape" => 5,
        "solver" => 6,
        "degradation" => 7,
        "metric" => 8,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "category": cat, "message": e.to_string() } })
            );
            ExitCode::from(exit_code(cat))
        }
    }
}
