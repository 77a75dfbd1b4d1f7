//! `superlab` — experiment runner for the superposition/adversarial toy
//! laboratory.
//!
//! Usage: `superlab <recipe> --config <file> [--seeds 0,1,2] [--out dir]`
//! or `superlab report <dir>`. Every flag is mirrored by an environment
//! variable with the `SUPERLAB_` prefix (e.g. `SUPERLAB_CONFIG`,
//! `SUPERLAB_SEEDS`, `SUPERLAB_OUT`).
//!
//! Exit codes: 0 on success, 1 when a quantitative band check fails,
//! 2 on configuration or execution errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "superlab", version, about = "Superposition & adversarial-vulnerability experiment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; omit for recipe defaults. Unknown keys are
    /// rejected.
    #[arg(long, env = "SUPERLAB_CONFIG")]
    config: Option<PathBuf>,

    /// Comma-separated seed list.
    #[arg(long, env = "SUPERLAB_SEEDS", value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,

    /// Output directory; runs are stored under `<out>/<spec-hash>/`.
    #[arg(long, env = "SUPERLAB_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// PGD vs closed-form optimal attack alignment across (k, m) settings.
    AlignmentTable(RunArgs),
    /// Geometric similarity of independently trained models per correlation mode.
    CorrelationGeometry(RunArgs),
    /// Cross-model attack transferability vs geometric similarity.
    TransferMatrix(RunArgs),
    /// Robust accuracy as class count grows at fixed bottleneck width.
    CapacitySweep(RunArgs),
    /// Perturbation budget allocation when one class is held orthogonal,
    /// plus the m = k zero-AE control.
    OrthogonalAblation(RunArgs),
    /// Clean accuracy across class counts and feature densities.
    DensityAccuracySweep(RunArgs),
    /// Modular-addition grokking, key frequencies, and frequency-space attacks.
    ModularStudy(RunArgs),
    /// Minimal attack budgets: PGD vs informed vs naive baselines.
    ModularBaselines(RunArgs),
    /// Re-render the markdown report for a completed run directory.
    Report {
        /// A `runs/<spec-hash>` directory containing manifest.json.
        dir: PathBuf,
    },
}

fn run_recipe(recipe: &str, args: &RunArgs) -> anyhow::Result<bool> {
    let config_json = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?,
        None => String::new(),
    };
    let outcome = superlab_core::harness::run(recipe, &config_json, &args.seeds, &args.out)?;
    println!(
        "run {} complete: artifacts in {}",
        outcome.manifest.spec_hash,
        outcome.run_dir.display()
    );
    for check in &outcome.manifest.band_checks {
        println!(
            "  [{}] {}: {:.4} (want {})",
            if check.pass { "pass" } else { "FAIL" },
            check.name,
            check.value,
            check.requirement
        );
    }
    for cell in &outcome.manifest.failed_cells {
        println!("  [cell failed] {cell}");
    }
    Ok(outcome.all_bands_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::AlignmentTable(a) => run_recipe("alignment_table", a),
        Command::CorrelationGeometry(a) => run_recipe("correlation_geometry", a),
        Command::TransferMatrix(a) => run_recipe("transfer_matrix", a),
        Command::CapacitySweep(a) => run_recipe("capacity_sweep", a),
        Command::OrthogonalAblation(a) => run_recipe("orthogonal_ablation", a),
        Command::DensityAccuracySweep(a) => run_recipe("density_accuracy_sweep", a),
        Command::ModularStudy(a) => run_recipe("modular_study", a),
        Command::ModularBaselines(a) => run_recipe("modular_baselines", a),
        Command::Report { dir } => match superlab_core::harness::report(dir) {
            Ok(text) => {
                println!("{text}");
                Ok(true)
            }
            Err(e) => Err(e.into()),
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
