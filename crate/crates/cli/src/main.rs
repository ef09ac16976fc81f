use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use octuf::io::checkpoint;
use octuf::io::image::{list_images, load_dir, load_image, save_image};
use octuf::metrics::{complexity, evaluate, noise_sweep};
use octuf::train::{train, EpochLog};
use octuf::verify::run_gradcheck_suite;
use octuf::{AdamConfig, Error, OctufModel, PatchDataset, RunConfig, Trainer};

#[derive(Parser, Debug)]
#[command(
    name = "octuf",
    version,
    about = "Compressive sensing reconstruction with unfolded cross-attention iterations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on patches cropped from a directory of images.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Receives metrics.csv, config.json and one checkpoint per epoch.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample and reconstruct one image; prints its PSNR and SSIM.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-image and mean PSNR/SSIM over a directory, as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Parameter and FLOP counts per layer, as CSV.
    Count {
        /// Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input extent as HEIGHTxWIDTH.
        #[arg(long, default_value = "256x256", value_parser = parse_extent)]
        hw: (usize, usize),
    },
    /// Reconstruction quality under additive Gaussian input noise.
    NoiseSweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated, strictly increasing noise levels.
        #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05,0.1")]
        sigmas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient checks of every primitive and the model.
    Gradcheck {
        /// Run in double precision.
        #[arg(long)]
        f64: bool,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn parse_extent(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("{v:?} is not a positive integer"))
    };
    Ok((dim(h)?, dim(w)?))
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    GradcheckFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Config(_) | Error::Dimension(_)) => 1,
            Failure::Core(Error::Io { .. } | Error::Format { .. }) => 2,
            Failure::Core(Error::Numerical(_) | Error::Contract(_)) => 3,
            Failure::GradcheckFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::GradcheckFailed(n) => write!(f, "gradcheck: {n} check(s) failed"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, data, out } => run_train(&config, &data, &out),
        Command::Reconstruct {
            ckpt,
            input,
            output,
        } => run_reconstruct(&ckpt, &input, &output),
        Command::Eval { ckpt, data } => run_eval(&ckpt, &data),
        Command::Count { config, hw } => run_count(config.as_deref(), hw),
        Command::NoiseSweep {
            ckpt,
            data,
            sigmas,
            out,
            seed,
        } => run_noise_sweep(&ckpt, &data, &sigmas, &out, seed),
        Command::Gradcheck { f64, seeds } => run_gradcheck(f64, seeds),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn run_train(config: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    cfg.validate()?;
    let images = load_dir::<f32>(data)?;
    let dataset = PatchDataset::new(
        images,
        cfg.patch_size,
        cfg.patches_per_epoch,
        cfg.augment,
        cfg.seed,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    write_file(&out.join("config.json"), cfg.to_json())?;
    let model = OctufModel::<f32>::new(cfg.model(), cfg.seed)?;
    log::info!(
        "training {} parameters on {} source images",
        model.params.scalar_count(),
        dataset.images().len()
    );
    let mut trainer = Trainer::new(model, AdamConfig::default());
    let metrics_path = out.join("metrics.csv");
    let mut csv = format!("{}\n", EpochLog::CSV_HEADER);
    train(
        &mut trainer,
        &dataset,
        &cfg.schedule(),
        cfg.train_options(),
        |row, t| {
            csv += &row.csv_row();
            csv.push('\n');
            write_file(&metrics_path, &csv)?;
            let path = out.join(format!("epoch_{:03}.ckpt", row.epoch));
            checkpoint::save(&path, &cfg, &t.model, Some(&t.adam))
        },
    )?;
    checkpoint::save(
        &out.join("final.ckpt"),
        &cfg,
        &trainer.model,
        Some(&trainer.adam),
    )?;
    Ok(())
}

fn run_reconstruct(ckpt: &Path, input: &Path, output: &Path) -> Result<(), Failure> {
    let model = checkpoint::load(ckpt)?.model;
    let image = load_image::<f32>(input)?;
    let e = evaluate(&model, &image)?;
    save_image(output, &e.reconstruction)?;
    println!("psnr_db,ssim");
    println!("{},{:.6}", fmt_db(e.psnr), e.ssim);
    Ok(())
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        v.to_string()
    }
}

fn run_eval(ckpt: &Path, data: &Path) -> Result<(), Failure> {
    let model = checkpoint::load(ckpt)?.model;
    let paths = list_images(data)?;
    let mut out = String::from("image,psnr_db,ssim\n");
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for path in &paths {
        let e = evaluate(&model, &load_image::<f32>(path)?)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        writeln!(out, "{name},{},{:.6}", fmt_db(e.psnr), e.ssim).expect("string write");
        psnr += e.psnr;
        ssim += e.ssim;
    }
    let n = paths.len() as f64;
    writeln!(out, "mean,{},{:.6}", fmt_db(psnr / n), ssim / n).expect("string write");
    print!("{out}");
    Ok(())
}

fn run_count(config: Option<&Path>, (h, w): (usize, usize)) -> Result<(), Failure> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let model = OctufModel::<f32>::new(cfg.model(), cfg.seed)?;
    let report = complexity(&model, h, w)?;
    eprintln!("{}", report.convention());
    eprintln!(
        "total: {:.2}M parameters, {:.2} GFLOPs at {h}x{w}",
        report.total_params() as f64 / 1e6,
        report.total_flops() as f64 / 1e9
    );
    print!("{}", report.to_csv());
    Ok(())
}

fn run_noise_sweep(
    ckpt: &Path,
    data: &Path,
    sigmas: &[f64],
    out: &Path,
    seed: u64,
) -> Result<(), Failure> {
    let model = checkpoint::load(ckpt)?.model;
    let images = load_dir::<f32>(data)?;
    let sweep = noise_sweep(&model, &images, sigmas, seed)?;
    let csv = sweep.to_csv();
    write_file(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_gradcheck(wide: bool, seeds: u64) -> Result<(), Failure> {
    let reports = if wide {
        run_gradcheck_suite::<f64>(seeds)?
    } else {
        run_gradcheck_suite::<f32>(seeds)?
    };
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        println!(
            "{verdict:4} {:<28} rel {:.3e} (tol {:.0e})",
            r.name, r.rel_error, r.tolerance
        );
        failed += usize::from(!r.passed);
    }
    println!("{} checks, {failed} failed", reports.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::GradcheckFailed(failed))
    }
}
