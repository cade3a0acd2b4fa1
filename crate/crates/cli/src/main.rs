mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::Config;
use stages::Stages;

#[derive(Parser)]
#[command(name = "tsplat", version, about = "Planar Gaussian splatting surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(short, long, default_value = "tsplat.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: coarse, partition, refine, merge, mesh and eval.
    Reconstruct { config: PathBuf },
    /// Train the coarse scene on downsampled images.
    Coarse(ConfigArg),
    /// Split the coarse scene into cells.
    Partition(ConfigArg),
    /// Refine one cell, or every cell when --cell is omitted.
    Refine {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        cell: Option<usize>,
    },
    /// Merge refined cells into one scene.
    Merge(ConfigArg),
    /// Fuse rendered depth into a TSDF and extract a mesh.
    Mesh(ConfigArg),
    /// Held-out PSNR/SSIM and mesh accuracy.
    Eval(ConfigArg),
    /// Render one view of the merged scene (or --checkpoint).
    Render {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also dump color, alpha, normal, distance and depth as PFM.
        #[arg(long)]
        pfm: bool,
    },
}

fn print_report(report: &tsplat::eval::EvalReport) {
    if !report.views.is_empty() {
        println!("held-out PSNR {:.2} dB, SSIM {:.4} over {} views", report.mean_psnr, report.mean_ssim, report.views.len());
    }
    if let Some(g) = &report.geometry {
        println!("mesh MAE {:.5}, RMSE {:.5}", g.mae, g.rmse);
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = match &cli.command {
        Command::Reconstruct { config } => config,
        Command::Coarse(c) | Command::Partition(c) | Command::Merge(c) | Command::Mesh(c) | Command::Eval(c) => &c.config,
        Command::Refine { config, .. } | Command::Render { config, .. } => &config.config,
    };
    let cfg = Config::load(path)?;
    let stages = Stages::new(&cfg)?;
    match cli.command {
        Command::Reconstruct { .. } => {
            stages.coarse()?;
            stages.partition()?;
            stages.refine(None)?;
            stages.merge()?;
            stages.mesh()?;
            print_report(&stages.eval()?);
        }
        Command::Coarse(_) => stages.coarse()?,
        Command::Partition(_) => stages.partition()?,
        Command::Refine { cell, .. } => stages.refine(cell)?,
        Command::Merge(_) => stages.merge()?,
        Command::Mesh(_) => stages.mesh()?,
        Command::Eval(_) => print_report(&stages.eval()?),
        Command::Render { view, checkpoint, pfm, .. } => {
            let out = stages.render(view, checkpoint.as_deref(), pfm)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
