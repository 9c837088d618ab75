//! Command-line front end: dataset synthesis, training, evaluation,
//! topology analysis, end-to-end reproduction, and single-shot tools.
//!
//! Exit codes: 0 success, 2 configuration/artifact error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sparseview_core::io::{
    load_checkpoint, load_image, load_sinogram, save_image, save_pgm16, write_csv,
};
use sparseview_core::nn::LearnMode;
use sparseview_core::pipeline::{
    build_dataset, evaluate, homology_experiment, random_phantom, reproduce, train_variant,
    ExperimentConfig,
};
use sparseview_core::tomo::{fbp, subsample_views};
use sparseview_core::tv::{reconstruct_tv_traced, TvConfig};
use sparseview_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sparseview", about = "Sparse-view CT laboratory", version)]
struct Cli {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress wall-clock outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Experiment output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Residual,
    Image,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Multi,
    Single,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize phantoms, references, sparse inputs, and residual labels.
    Dataset,
    /// Train one (mode, scale) network variant against the dataset.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        scale: ScaleArg,
    },
    /// Evaluate FBP, TV, and trained variants on held-out phantoms.
    Eval,
    /// Compare the topology of reference and residual image manifolds.
    Homology,
    /// Run everything end-to-end and write a Markdown report.
    Reproduce,
    /// Rasterize one seeded random phantom.
    Phantom {
        #[arg(long)]
        output: PathBuf,
        /// Also export a 16-bit PGM over the given window.
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        window_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        window_hi: f64,
    },
    /// Filtered back-projection of a stored sinogram.
    Fbp {
        #[arg(long)]
        input: PathBuf,
        /// Image size the sinogram geometry was derived from.
        #[arg(long)]
        size: usize,
        #[arg(long)]
        output: PathBuf,
        /// Subsample to this many views first.
        #[arg(long)]
        views: Option<usize>,
    },
    /// TV-regularized iterative reconstruction of a stored sinogram.
    Tv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Reference image for per-iteration PSNR in the trace CSV.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Objective trace CSV path (defaults next to the output).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a trained network on a stored image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out: &Path = &cli.out;
    match &cli.cmd {
        Cmd::Dataset => {
            let manifest = build_dataset(&cfg, out)?;
            println!(
                "dataset: {} train, {} test, {} homology phantoms (peak {:.4})",
                manifest.train.len(),
                manifest.test.len(),
                manifest.homology.len(),
                manifest.peak
            );
        }
        Cmd::Train { mode, scale } => {
            let mode = match mode {
                ModeArg::Residual => LearnMode::Residual,
                ModeArg::Image => LearnMode::Image,
            };
            let multi = matches!(scale, ScaleArg::Multi);
            let outcome = train_variant(&cfg, out, mode, multi)?;
            println!(
                "trained {}: checkpoint {}, final val PSNR {}",
                outcome.name,
                outcome.checkpoint,
                outcome
                    .final_val_psnr
                    .map(|p| format!("{p:.3} dB"))
                    .unwrap_or_else(|| "-".into())
            );
        }
        Cmd::Eval => {
            let report = evaluate(&cfg, out, !cli.deterministic)?;
            println!(
                "evaluated {} reconstructions (TV lambda {:.6}); see eval/",
                report.rows.len(),
                report.tv_lambda
            );
        }
        Cmd::Homology => {
            let outcome = homology_experiment(&cfg, out)?;
            println!(
                "verdict: {}",
                if outcome.residual_simpler {
                    "residual manifold simpler"
                } else {
                    "inconclusive"
                }
            );
        }
        Cmd::Reproduce => {
            let outcome = reproduce(&cfg, out, !cli.deterministic)?;
            println!("report: {}", out.join(outcome.report_md).display());
        }
        Cmd::Phantom {
            output,
            pgm,
            window_lo,
            window_hi,
        } => {
            use sparseview_core::image::rasterize;
            let mut rng = rand_seeded(cfg.seed);
            let phantom = random_phantom(&mut rng);
            let img = rasterize(&phantom, cfg.image_size)?;
            save_image(output, &img)?;
            if let Some(pgm) = pgm {
                save_pgm16(pgm, &img, *window_lo, *window_hi)?;
            }
            println!("phantom written to {}", output.display());
        }
        Cmd::Fbp {
            input,
            size,
            output,
            views,
        } => {
            let mut sino = load_sinogram(input, *size)?;
            if let Some(m) = views {
                sino = subsample_views(&sino, *m)?;
            }
            let img = fbp(&sino, *size)?;
            save_image(output, &img)?;
            println!("reconstruction written to {}", output.display());
        }
        Cmd::Tv {
            input,
            size,
            output,
            lambda,
            iterations,
            reference,
            trace,
        } => {
            let sino = load_sinogram(input, *size)?;
            let tv_cfg = TvConfig {
                lambda_tv: lambda.unwrap_or(cfg.tv.lambda_tv),
                iterations: iterations.unwrap_or(cfg.tv.iterations),
                ..cfg.tv.clone()
            };
            let reference = reference.as_ref().map(|p| load_image(p)).transpose()?;
            let ref_peak = reference
                .as_ref()
                .map(|r| r.data().iter().cloned().fold(f64::MIN, f64::max).max(1e-12));
            let (img, obj_trace, psnr_trace) = reconstruct_tv_traced(
                &sino,
                *size,
                &tv_cfg,
                reference.as_ref().map(|r| (r, ref_peak.unwrap())),
            )?;
            save_image(output, &img)?;
            let trace_path = trace
                .clone()
                .unwrap_or_else(|| output.with_extension("trace.csv"));
            write_trace_csv(&trace_path, &obj_trace, &psnr_trace)?;
            println!(
                "reconstruction written to {} (trace {})",
                output.display(),
                trace_path.display()
            );
        }
        Cmd::Infer {
            checkpoint,
            input,
            output,
        } => {
            let mut net = load_checkpoint(checkpoint)?;
            let img = load_image(input)?;
            let restored = net.infer(&img)?;
            save_image(output, &restored)?;
            println!("restored image written to {}", output.display());
        }
    }
    Ok(())
}

fn rand_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn write_trace_csv(path: &Path, trace: &[f64], psnr_trace: &[f64]) -> Result<()> {
    if psnr_trace.is_empty() {
        let rows: Vec<Vec<String>> = trace
            .iter()
            .enumerate()
            .map(|(i, &f)| vec![i.to_string(), format!("{f:.9}")])
            .collect();
        write_csv(path, &["iteration", "objective"], &rows)
    } else {
        let rows: Vec<Vec<String>> = trace
            .iter()
            .zip(psnr_trace)
            .enumerate()
            .map(|(i, (&f, &p))| vec![i.to_string(), format!("{f:.9}"), format!("{p:.6}")])
            .collect();
        write_csv(path, &["iteration", "objective", "psnr_db"], &rows)
    }
}

/// Exit code classification: configuration and artifact problems are 2,
/// numerical failures are 3.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. }
        | Error::DegenerateCloud
        | Error::UninitializedStats
        | Error::Truncation { .. }
        | Error::OutOfDomain(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
