use std::path::{Path, PathBuf};

use clap::Args;
use flowrecon::datapipe::{write_dataset, DatasetOptions, MANIFEST_FILE, SPARSE_FRACTION};
use flowrecon::flowgen::{generate_population, PopulationConfig, SolverConfig};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{layer, path_text, Context, FileConfig, RunConfig};
use crate::error::CliError;

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Output dataset directory [default: <data-root>/dataset]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for geometries, inflow speeds, sparse masks and folds [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of ventricle geometries [default: 8]
    #[arg(long)]
    pub geometries: Option<usize>,
    /// Inflow speeds per geometry; overrides --runs
    #[arg(long)]
    pub inlets: Option<usize>,
    /// Total runs spread over the geometries [default: 47 for 8 geometries, same ratio otherwise]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fraction of ventricle voxels kept in the sparse input [default: 0.05]
    #[arg(long)]
    pub sparse_fraction: Option<f64>,
    /// Cubic grid extent [default: from --scale]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Solver time steps per run [default: from --scale]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Keep runs whose last pressure solve did not converge
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_unconverged: Option<bool>,
}

#[derive(Debug, Serialize)]
struct GenerateSettings {
    out: String,
    population: PopulationConfig,
    solver: SolverConfig,
    folds: usize,
    sparse_fraction: f64,
    include_unconverged: bool,
}

/// Removes a partially written directory unless disarmed.
struct Partial(Option<PathBuf>);

impl Drop for Partial {
    fn drop(&mut self) {
        if let Some(p) = self.0.take() {
            let _ = std::fs::remove_dir_all(&p);
        }
    }
}

fn default_runs(geometries: usize) -> usize {
    ((geometries * 47 + 4) / 8).max(geometries)
}

pub fn run(ctx: &Context, flags: &GenerateArgs, file: &FileConfig) -> Result<(), CliError> {
    let a = layer(flags, &file.generate)?;
    let preset = ctx.preset();
    let out = a.out.clone().unwrap_or_else(|| ctx.dataset_dir());
    let geometries = a.geometries.unwrap_or(8);
    if geometries == 0 {
        return Err(CliError::Usage("--geometries must be at least 1".into()));
    }
    let population = PopulationConfig {
        seed: a.seed.unwrap_or(0),
        n_geometries: geometries,
        total_runs: a.inlets.map_or_else(|| a.runs.unwrap_or_else(|| default_runs(geometries)), |k| k * geometries),
        inlets_per_geometry: a.inlets.map(|k| vec![k; geometries]),
        ..PopulationConfig::default()
    };
    let grid = a.grid.unwrap_or(preset.grid);
    let solver = SolverConfig { grid_dims: [grid; 3], steps: a.steps.unwrap_or(preset.solver_steps), ..ctx.scale.solver() };
    solver.validate()?;
    let settings = GenerateSettings {
        out: path_text(&out),
        population,
        solver,
        folds: a.folds.unwrap_or(5),
        sparse_fraction: a.sparse_fraction.unwrap_or(SPARSE_FRACTION),
        include_unconverged: a.include_unconverged.unwrap_or(false),
    };
    if !(settings.sparse_fraction > 0.0 && settings.sparse_fraction <= 1.0) {
        return Err(CliError::Usage(format!("--sparse-fraction {} must lie in (0, 1]", settings.sparse_fraction)));
    }
    if settings.folds == 0 {
        return Err(CliError::Usage("--folds must be at least 1".into()));
    }
    check_target(&out)?;

    let partial = partial_dir(&out);
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| CliError::io(&partial, e))?;
    }
    let mut guard = Partial(Some(partial.clone()));
    info!(
        "simulating {} runs over {} geometries on a {grid}³ grid",
        settings.population.total_runs, settings.population.n_geometries
    );
    let (plan, outputs) = generate_population(&settings.population, &settings.solver)?;
    let opts = DatasetOptions {
        seed: settings.population.seed,
        sparse_fraction: settings.sparse_fraction,
        folds: settings.folds,
        include_unconverged: settings.include_unconverged,
    };
    let manifest = write_dataset(&partial, &plan, &outputs, &settings.solver, &opts)?;
    if manifest.runs.is_empty() {
        return Err(CliError::Numeric("no run converged; nothing to write".into()));
    }
    RunConfig::new("generate", ctx, &settings).write(&partial)?;
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    }
    std::fs::rename(&partial, &out).map_err(|e| CliError::io(&out, e))?;
    guard.0 = None;
    println!(
        "wrote {} samples from {} geometries ({} folds) to {}",
        manifest.runs.len(),
        manifest.geometries.len(),
        manifest.folds.len(),
        out.display()
    );
    Ok(())
}

/// Sibling directory the dataset is assembled in before being moved into
/// place.
fn partial_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    out.with_file_name(format!(".{name}.partial"))
}

/// Refuses to replace a non-empty directory that is not a dataset.
fn check_target(out: &Path) -> Result<(), CliError> {
    if !out.exists() {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        return Ok(());
    }
    if !out.is_dir() {
        return Err(CliError::Usage(format!("{} exists and is not a directory", out.display())));
    }
    let empty = std::fs::read_dir(out).map_err(|e| CliError::io(out, e))?.next().is_none();
    if empty || out.join(MANIFEST_FILE).exists() {
        return Ok(());
    }
    Err(CliError::Usage(format!("{} is not empty and holds no {MANIFEST_FILE}; refusing to replace it", out.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_count_keeps_the_reference_ratio() {
        assert_eq!(default_runs(8), 47);
        assert_eq!(default_runs(1), 6);
        assert_eq!(default_runs(16), 94);
    }

    #[test]
    fn partial_dir_is_a_hidden_sibling() {
        assert_eq!(partial_dir(Path::new("a/ds")), PathBuf::from("a/.ds.partial"));
    }
}
