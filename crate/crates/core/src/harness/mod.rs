//! Experiment orchestration: named recipes with JSON configuration, seeded
//! sweeps, `runs/<spec-hash>/<seed>/` persistence, summary CSVs, and
//! markdown reports with pass/fail band checks.

mod configs;
mod recipes;

pub use configs::*;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RECIPES: [&str; 8] = [
    "alignment_table",
    "correlation_geometry",
    "transfer_matrix",
    "capacity_sweep",
    "orthogonal_ablation",
    "density_accuracy_sweep",
    "modular_study",
    "modular_baselines",
];

/// One quantitative expectation checked against the run's results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub pass: bool,
}

impl BandCheck {
    pub fn new(name: impl Into<String>, value: f64, requirement: impl Into<String>, pass: bool) -> Self {
        BandCheck {
            name: name.into(),
            value,
            requirement: requirement.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub recipe: String,
    pub version: String,
    pub spec_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Paths of produced artifacts, relative to the run directory.
    pub artifacts: Vec<String>,
    pub wall_time_secs: f64,
    pub band_checks: Vec<BandCheck>,
    /// Grid cells that failed to execute (the run continues past them).
    pub failed_cells: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
}

impl RunOutcome {
    pub fn all_bands_pass(&self) -> bool {
        self.manifest.band_checks.iter().all(|c| c.pass) && self.manifest.failed_cells.is_empty()
    }
}

/// Short content hash identifying (recipe, config, seeds).
pub fn spec_hash(recipe: &str, config: &serde_json::Value, seeds: &[u64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(recipe.as_bytes());
    hasher.update(serde_json::to_string(config).unwrap_or_default().as_bytes());
    for s in seeds {
        hasher.update(s.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Executes a recipe for every seed and writes artifacts under
/// `<out_dir>/<spec-hash>/`. Band checks are evaluated on the aggregated
/// results; failures are recorded, not fatal.
pub fn run(recipe: &str, config_json: &str, seeds: &[u64], out_dir: &Path) -> Result<RunOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    let started = std::time::Instant::now();
    let (config_value, mut ctx) = recipes::prepare(recipe, config_json)?;
    let hash = spec_hash(recipe, &config_value, seeds);
    let run_dir = out_dir.join(&hash);
    std::fs::create_dir_all(&run_dir)?;
    for seed in seeds {
        std::fs::create_dir_all(run_dir.join(seed.to_string()))?;
    }

    let (band_checks, artifacts, failed_cells) = ctx.execute(seeds, &run_dir)?;

    let manifest = RunManifest {
        recipe: recipe.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec_hash: hash,
        config: config_value,
        seeds: seeds.to_vec(),
        artifacts,
        wall_time_secs: started.elapsed().as_secs_f64(),
        band_checks,
        failed_cells,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(run_dir.join("manifest.json"), manifest_json)?;
    let report_md = render_report(&manifest)?;
    std::fs::write(run_dir.join("report.md"), report_md)?;
    Ok(RunOutcome { manifest, run_dir })
}

/// Rebuilds the markdown report for a completed run directory and returns
/// it. Errors if the manifest or any listed artifact is missing.
pub fn report(run_dir: &Path) -> Result<String> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Contract(format!(
            "no manifest.json in {}",
            run_dir.display()
        )));
    }
    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let mut missing = Vec::new();
    for artifact in &manifest.artifacts {
        if !run_dir.join(artifact).exists() {
            missing.push(artifact.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::Contract(format!(
            "missing artifacts: {}",
            missing.join(", ")
        )));
    }
    let rendered = render_report(&manifest)?;
    std::fs::write(run_dir.join("report.md"), &rendered)?;
    Ok(rendered)
}

fn render_report(manifest: &RunManifest) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "# {} report", manifest.recipe).ok();
    writeln!(out).ok();
    writeln!(
        out,
        "- spec hash: `{}`\n- seeds: {:?}\n- version: {}\n- wall time: {:.1}s",
        manifest.spec_hash, manifest.seeds, manifest.version, manifest.wall_time_secs
    )
    .ok();
    writeln!(out).ok();
    if !manifest.failed_cells.is_empty() {
        writeln!(out, "## Failed cells").ok();
        for cell in &manifest.failed_cells {
            writeln!(out, "- {cell}").ok();
        }
        writeln!(out).ok();
    }
    writeln!(out, "## Band checks").ok();
    writeln!(out).ok();
    writeln!(out, "| check | value | requirement | verdict |").ok();
    writeln!(out, "|---|---|---|---|").ok();
    for c in &manifest.band_checks {
        writeln!(
            out,
            "| {} | {:.4} | {} | {} |",
            c.name,
            c.value,
            c.requirement,
            if c.pass { "pass" } else { "FAIL" }
        )
        .ok();
    }
    writeln!(out).ok();
    let overall = manifest.band_checks.iter().all(|c| c.pass) && manifest.failed_cells.is_empty();
    writeln!(out, "Overall: {}", if overall { "PASS" } else { "FAIL" }).ok();
    Ok(out)
}

/// Fixed-precision float formatting so summary CSVs are byte-identical
/// across re-runs.
pub(crate) fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub(crate) fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Stable sub-seed derivation for grid cells within one run seed.
pub(crate) fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    crate::numerics::Rng::new(seed).derive(label, index).seed()
}
