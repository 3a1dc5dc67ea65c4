//! `mtseg`: phantoms, projections, reconstructions, experiments, reports.
//!
//! Exit status: 0 on success, 1 for bad invocations, 2 when the inputs or
//! the run itself fail.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtseg_core::fdk::{fdk_reconstruct_with, FdkOptions, RampWindow};
use mtseg_core::phantom::MIN_PHANTOM_DIM;
use mtseg_core::projector::{load_projections, save_projections};
use mtseg_core::{load_scalar, make_phantom, save_labels, save_volume, simulate_projections, ConeBeamGeometry};
use mtseg_experiment::dataset::case_seeds;
use mtseg_experiment::report::{collect_results, summary_json, write_atomic, write_summary_csv};
use mtseg_experiment::{run_experiment, summarize, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mtseg", version, about = "Multi-task liver segmentation on simulated CBCT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write phantom_XXX.vol and mask_XXX.vol for each case.
    Phantom {
        #[arg(long, default_value_t = 1)]
        cases: usize,
        /// Cubic grid edge in voxels.
        #[arg(long, default_value_t = 64)]
        dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-project a volume over `--np` views.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "np")]
        n_proj: usize,
        #[arg(long)]
        arc_deg: Option<f64>,
        #[arg(long)]
        sad_mm: Option<f64>,
        #[arg(long)]
        sdd_mm: Option<f64>,
        #[arg(long)]
        det_rows: Option<usize>,
        #[arg(long)]
        det_cols: Option<usize>,
        #[arg(long)]
        pixel_mm: Option<f64>,
        /// Output stem; `.proj` and `.json` are written.
        #[arg(long)]
        out: PathBuf,
    },
    /// FDK reconstruction of a projection set.
    Reconstruct {
        /// Projection stem, as given to `simulate --out`.
        #[arg(long = "in")]
        input: PathBuf,
        /// `D` for a cube or `X,Y,Z`.
        #[arg(long, value_parser = parse_dims)]
        dims: [usize; 3],
        #[arg(long, default_value_t = 1.0)]
        spacing_mm: f64,
        #[arg(long, value_enum, default_value_t = Window::None)]
        window: Window,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarise every results.csv below a directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// `.csv` writes CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Window {
    None,
    Hann,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let dims = match parts[..] {
        [d] => [d; 3],
        [x, y, z] => [x, y, z],
        _ => return Err("expected D or X,Y,Z".into()),
    };
    if dims.contains(&0) {
        return Err("dimensions must be positive".into());
    }
    Ok(dims)
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn phantom(cases: usize, dims: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if dims < MIN_PHANTOM_DIM {
        return Err(Failure::Usage(format!("--dims {dims} is below the minimum of {MIN_PHANTOM_DIM}")));
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    for (i, case_seed) in case_seeds(seed, cases).into_iter().enumerate() {
        let (volume, mask) = make_phantom([dims; 3], case_seed).map_err(data)?;
        let source = format!("phantom seed {case_seed}");
        save_volume(&volume, &out.join(format!("phantom_{i:03}.vol")), &source).map_err(data)?;
        save_labels(&mask, &out.join(format!("mask_{i:03}.vol")), &source).map_err(data)?;
    }
    println!("wrote {cases} phantoms to {}", out.display());
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Phantom { cases, dims, seed, out } => phantom(cases, dims, seed, &out),
        Command::Simulate {
            input,
            n_proj,
            arc_deg,
            sad_mm,
            sdd_mm,
            det_rows,
            det_cols,
            pixel_mm,
            out,
        } => {
            if n_proj == 0 {
                return Err(Failure::Usage("--np must be at least 1".into()));
            }
            let volume = load_scalar(&input).map_err(data)?;
            let d = ConeBeamGeometry::default_for(volume.grid(), n_proj);
            let geometry = ConeBeamGeometry {
                n_proj,
                arc_deg: arc_deg.unwrap_or(d.arc_deg),
                sad_mm: sad_mm.unwrap_or(d.sad_mm),
                sdd_mm: sdd_mm.unwrap_or(d.sdd_mm),
                det_rows: det_rows.unwrap_or(d.det_rows),
                det_cols: det_cols.unwrap_or(d.det_cols),
                pixel_mm: pixel_mm.unwrap_or(d.pixel_mm),
            };
            geometry.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let set = simulate_projections(&volume, &geometry).map_err(data)?;
            save_projections(&set, &out).map_err(data)?;
            println!("wrote {n_proj} projections to {}", out.with_extension("proj").display());
            Ok(())
        }
        Command::Reconstruct {
            input,
            dims,
            spacing_mm,
            window,
            out,
        } => {
            if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
                return Err(Failure::Usage(format!("--spacing-mm {spacing_mm} must be positive")));
            }
            let set = load_projections(&input).map_err(data)?;
            let window = match window {
                Window::None => RampWindow::None,
                Window::Hann => RampWindow::Hann,
            };
            let recon = fdk_reconstruct_with(&set, dims, [spacing_mm; 3], FdkOptions { window }).map_err(data)?;
            let source = format!("fdk of {}", input.display());
            save_volume(&recon, &out, &source).map_err(data)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(data)?;
            let outcome = run_experiment(&cfg).map_err(data)?;
            for s in &outcome.summary {
                println!(
                    "{}: mean {:.4} median {:.4} [{:.4}, {:.4}] n={}",
                    s.key(),
                    s.mean,
                    s.median,
                    s.q1,
                    s.q3,
                    s.count
                );
            }
            Ok(())
        }
        Command::Report { results, out } => {
            let rows = collect_results(&results).map_err(data)?;
            let summary = summarize(&rows);
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                write_summary_csv(&out, &summary).map_err(data)?;
            } else {
                write_atomic(&out, summary_json(&summary).as_bytes()).map_err(data)?;
            }
            println!("summarised {} rows into {} groups", rows.len(), summary.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
