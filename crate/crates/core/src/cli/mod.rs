//! `mlkrim` command line: phantom generation, masks, reconstruction, evaluation and reports.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use image::{GrayImage, Luma};

pub use config::{Emit, MaskKind, RunConfig};

use crate::dataset::{generate_phantom, load_tensor, save_tensor, PhantomSpec};
use crate::error::{Error, Result};
use crate::manifold::dictionary_from_data;
use crate::metrics::{evaluate, metrics_csv, MetricReport};
use crate::model::{data_scale, Hyperparams};
use crate::sampling::{acceleration_rate, cartesian_mask, radial_mask, SamplingMask};
use crate::solver::{multi_restart, trace_csv, zero_filled, RestartSummary};
use crate::tensor::{ComplexTensor3, DataDims};

#[derive(Debug, Parser)]
#[command(name = "mlkrim", version, about = "Dynamic MRI reconstruction with multi-linear kernel regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restart seed; repeat for several restarts. Overrides `seeds` in the config.
    #[arg(long = "seed", global = true)]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Comma list of artifacts: png, csv, trace.
    #[arg(long, global = true)]
    pub emit: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the phantom image series and its k-space.
    Generate,
    /// Write the sampling mask and print the achieved acceleration.
    Mask,
    /// Reconstruct from k-space and mask, one run per seed.
    Reconstruct,
    /// Score estimates against the reference series.
    Evaluate,
    /// Full pipeline with the zero-filled baseline and a summary table.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Mask => "mask",
            Command::Reconstruct => "reconstruct",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

/// Process exit code for an error: 2 config, 3 numerical, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Parameter(_) | Error::Shape(_) | Error::InfeasibleAcceleration { .. } => 2,
        Error::Numerical(_) | Error::State(_) | Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Format { .. } => 4,
        Error::Seeded { .. } => 3,
    }
}

/// Resolves the config file and flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(e) = &cli.emit {
        cfg.emit = e.parse()?;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        // a pool already installed by an earlier call in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    execute(cli.command, &cfg)
}

/// Runs one command with a resolved config.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Generate => cmd_generate(cfg).map(drop),
        Command::Mask => cmd_mask(cfg).map(|rate| println!("acceleration {rate}")),
        Command::Reconstruct => cmd_reconstruct(cfg).map(drop),
        Command::Evaluate => cmd_evaluate(cfg).map(drop),
        Command::Report => cmd_report(cfg).map(drop),
    }?;
    write_manifest(command, cfg)
}

fn write_manifest(command: Command, cfg: &RunConfig) -> Result<()> {
    let text = format!(
        "# mlkrim {} {}\n# seeds {}\n{}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        cfg.render()
    );
    fs::write(cfg.out.join(format!("manifest_{}.txt", command.name())), text)?;
    Ok(())
}

fn phantom_spec(cfg: &RunConfig) -> Result<PhantomSpec> {
    let mut spec = PhantomSpec::default_for(cfg.dims()?);
    spec.noise_std = cfg.noise_std;
    spec.seed = cfg.phantom_seed;
    spec.ring.period = cfg.ring_period;
    spec.validate()?;
    Ok(spec)
}

/// Writes `image.tens` and `kspace.tens`; validates everything before touching the disk.
pub fn cmd_generate(cfg: &RunConfig) -> Result<(ComplexTensor3, ComplexTensor3)> {
    let spec = phantom_spec(cfg)?;
    let (image, kspace) = generate_phantom(&spec)?;
    fs::create_dir_all(&cfg.out)?;
    save_tensor(&cfg.out.join("image.tens"), &image)?;
    save_tensor(&cfg.out.join("kspace.tens"), &kspace)?;
    Ok((image, kspace))
}

/// Radial spoke count whose acceleration is closest to the target (fewest spokes on ties).
pub fn spokes_for_acceleration(dims: DataDims, acceleration: f64, upsilon: usize, seed: u64) -> Result<usize> {
    let mut best = (1, f64::INFINITY);
    for spokes in 1..=dims.n_f.max(dims.n_p) {
        let rate = acceleration_rate(&radial_mask(dims, spokes, upsilon, seed)?)?;
        let gap = (rate - acceleration).abs();
        if gap < best.1 {
            best = (spokes, gap);
        }
        if rate < acceleration {
            break;
        }
    }
    Ok(best.0)
}

pub fn build_mask(cfg: &RunConfig) -> Result<SamplingMask> {
    let dims = cfg.dims()?;
    match cfg.mask_kind {
        MaskKind::Full => Ok(SamplingMask::full(dims)),
        MaskKind::Cartesian => cartesian_mask(dims, cfg.acceleration, cfg.upsilon, cfg.mask_seed),
        MaskKind::Radial => {
            let spokes = match cfg.spokes {
                Some(s) => s,
                None => spokes_for_acceleration(dims, cfg.acceleration, cfg.upsilon, cfg.mask_seed)?,
            };
            radial_mask(dims, spokes, cfg.upsilon, cfg.mask_seed)
        }
    }
}

/// Writes `mask.tens` and returns the achieved acceleration.
pub fn cmd_mask(cfg: &RunConfig) -> Result<f64> {
    let mask = build_mask(cfg)?;
    let rate = acceleration_rate(&mask)?;
    fs::create_dir_all(&cfg.out)?;
    mask.save(&cfg.out.join("mask.tens"))?;
    Ok(rate)
}

/// Configured hyperparameters, with `λ3` scaled by the data unless given explicitly.
pub fn hyperparams(cfg: &RunConfig, mask: &SamplingMask, y: &ComplexTensor3) -> Result<Hyperparams> {
    let mut hp = cfg.hp.clone();
    hp.lambda3 = match cfg.lambda3 {
        Some(l3) => l3,
        None => Hyperparams::default().lambda3 * data_scale(mask, y)?,
    };
    hp.validate()?;
    Ok(hp)
}

fn load_truth(cfg: &RunConfig, dims: DataDims) -> Result<Option<ComplexTensor3>> {
    let Some(path) = cfg.truth_path() else {
        return Ok(None);
    };
    let t = load_tensor(&path)?;
    if t.dims() != dims {
        return Err(Error::shape(format!("reference {} vs data {}", t.dims(), dims)));
    }
    Ok(Some(t))
}

/// Runs every seed; writes `recon_seed<S>.tens`, `trace_seed<S>.csv` and `restarts.csv`.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<RestartSummary> {
    let y = load_tensor(&cfg.kspace_path())?;
    let mask = SamplingMask::load(&cfg.mask_path())?;
    if mask.dims() != y.dims() {
        return Err(Error::shape(format!("mask {} vs k-space {}", mask.dims(), y.dims())));
    }
    let mut model = cfg.model()?;
    model.dims = y.dims();
    model.validate()?;
    let hp = hyperparams(cfg, &mask, &y)?;
    let truth = load_truth(cfg, y.dims())?;
    let (_, kernels) = dictionary_from_data(&y, &mask, cfg.upsilon, cfg.n_l, cfg.m)?;

    let summary = multi_restart(&model, &kernels, &mask, &y, &hp, &cfg.seeds, truth.as_ref())?;

    fs::create_dir_all(&cfg.out)?;
    let mut table = String::from("seed,best,iterations,objective,nrmse,ssim,hfen,m1,m2\n");
    for (i, run) in summary.runs.iter().enumerate() {
        save_tensor(&cfg.out.join(format!("recon_seed{}.tens", run.seed)), &run.image)?;
        if cfg.emit.trace {
            fs::write(cfg.out.join(format!("trace_seed{}.csv", run.seed)), trace_csv(&run.solution.trace))?;
        }
        let last = run.solution.trace.last().map_or(0, |r| r.n);
        let m = run
            .metrics
            .map(|m| format!("{},{},{},{},{}", m.nrmse, m.ssim, m.hfen, m.m1, m.m2))
            .unwrap_or_else(|| ",,,,".into());
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            run.seed,
            u8::from(i == summary.best),
            last,
            run.solution.final_objective(),
            m
        ));
        for w in &run.solution.warnings {
            eprintln!("seed {}: {w}", run.seed);
        }
        let secs: f64 = run.solution.trace.iter().map(|r| r.seconds).sum();
        eprintln!("seed {}: {} iterations in {secs:.2} s", run.seed, last);
    }
    if cfg.emit.csv {
        fs::write(cfg.out.join("restarts.csv"), table)?;
    }
    Ok(summary)
}

/// Shared min–max normalization over the whole series, one 8-bit PNG per frame.
pub fn write_pngs(x: &ComplexTensor3, dir: &Path, stem: &str) -> Result<()> {
    let d = x.dims();
    let mag = x.magnitude();
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    fs::create_dir_all(dir)?;
    for t in 0..d.n_fr {
        let img = GrayImage::from_fn(d.n_p as u32, d.n_f as u32, |c, r| {
            let v = x.get(r as usize, c as usize, t).norm();
            let level = if span > 0.0 { 255.0 * (v - lo) / span } else { 0.0 };
            Luma([level.round().clamp(0.0, 255.0) as u8])
        });
        img.save(dir.join(format!("{stem}_{t:03}.png")))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "estimate".into(), |s| s.to_string_lossy().into_owned())
}

/// Scores every configured estimate; writes `metrics.csv` and optional PNGs.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<(String, MetricReport)>> {
    let truth_path = cfg
        .truth_path()
        .ok_or_else(|| Error::Config("evaluate needs a reference ('truth' or <out>/image.tens)".into()))?;
    let truth = load_tensor(&truth_path)?;
    if cfg.estimates.is_empty() {
        return Err(Error::Config("evaluate needs at least one 'estimate' path".into()));
    }
    let mut rows = Vec::new();
    for p in &cfg.estimates {
        let est = load_tensor(p)?;
        rows.push((stem(p), evaluate(&truth, &est)?));
        if cfg.emit.png {
            write_pngs(&est, &cfg.out.join("png"), &stem(p))?;
        }
    }
    fs::create_dir_all(&cfg.out)?;
    if cfg.emit.csv {
        fs::write(cfg.out.join("metrics.csv"), metrics_csv(&rows))?;
    }
    Ok(rows)
}

/// Generate, mask, reconstruct and compare against the zero-filled baseline in `report.csv`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<(String, MetricReport)>> {
    let (image, kspace) = cmd_generate(cfg)?;
    let rate = cmd_mask(cfg)?;
    println!("acceleration {rate}");
    let mut run_cfg = cfg.clone();
    run_cfg.truth = Some(cfg.out.join("image.tens"));
    run_cfg.kspace = Some(cfg.out.join("kspace.tens"));
    run_cfg.mask = Some(cfg.out.join("mask.tens"));
    let summary = cmd_reconstruct(&run_cfg)?;

    let mask = SamplingMask::load(&cfg.out.join("mask.tens"))?;
    let zf = zero_filled(&mask, &kspace)?;
    save_tensor(&cfg.out.join("zero_filled.tens"), &zf)?;
    let mut rows = vec![("zero_filled".to_string(), evaluate(&image, &zf)?)];
    for run in &summary.runs {
        if let Some(m) = run.metrics {
            rows.push((format!("seed{}", run.seed), m));
        }
    }
    if let Some(mean) = summary.mean {
        rows.push(("mean".into(), mean));
    }
    fs::write(cfg.out.join("report.csv"), metrics_csv(&rows))?;
    if cfg.emit.png {
        let png = cfg.out.join("png");
        write_pngs(&image, &png, "truth")?;
        write_pngs(&zf, &png, "zero_filled")?;
        write_pngs(&summary.runs[summary.best].image, &png, "best")?;
    }
    for (label, m) in &rows {
        println!("{label}: nrmse {:.4} ssim {:.4} hfen {:.4}", m.nrmse, m.ssim, m.hfen);
    }
    Ok(rows)
}
