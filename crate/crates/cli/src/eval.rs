use std::path::PathBuf;

use clap::{Args, ValueEnum};
use flowrecon::datapipe::{Component, Partition};
use flowrecon::evalkit::{evaluate, fold_means, velocity_magnitude, write_report, write_slices, EvalOptions, MetricReport, Region};
use flowrecon::models::{Model, ModelConfig};
use flowrecon::trainer::{Checkpoint, BEST_CHECKPOINT, LAST_CHECKPOINT};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{layer, model_config, path_text, run_name, Context, FileConfig, InputsKind, ModelKind, RunConfig};
use crate::error::CliError;
use crate::train::open_dataset;

pub const REPORT_FILE: &str = "report.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    /// Lowest validation loss.
    #[default]
    Best,
    /// End of training.
    Last,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Dataset directory [default: <data-root>/dataset]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory holding the training runs [default: <data-root>/runs]
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Report directory [default: <data-root>/eval/<model>_<inputs>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    pub inputs: Option<InputsKind>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub vin_channel: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_skips: Option<bool>,
    /// Comma-separated folds [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub checkpoint: Option<Which>,
    /// Write mid-plane slice images of the first test sample per fold
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub slices: Option<bool>,
    /// Axis normal to the exported slices: 0 (z), 1 (y) or 2 (x) [default: 0]
    #[arg(long)]
    pub slice_axis: Option<usize>,
    /// Score only voxels inside the ventricle
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub in_mask: Option<bool>,
    /// PSNR peak in normalized units [default: 1]
    #[arg(long)]
    pub peak: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct EvalSettings {
    data: String,
    dataset_manifest_fnv: String,
    runs_dir: String,
    out: String,
    model: ModelConfig,
    folds: Vec<usize>,
    checkpoint: Which,
    checkpoints: Vec<String>,
    options: EvalOptions,
    slices: Option<usize>,
}

pub fn run(ctx: &Context, flags: &EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let a = layer(flags, &file.eval)?;
    let preset = ctx.preset();
    let inputs = a.inputs.unwrap_or_default();
    let model = model_config(
        a.model.unwrap_or_default(),
        preset.channel_divisor,
        inputs,
        !a.no_skips.unwrap_or(false),
        a.vin_channel.unwrap_or(false),
    );
    let folds = a.folds.clone().unwrap_or_else(|| vec![0]);
    if folds.is_empty() {
        return Err(CliError::Usage("--folds must name at least one fold".into()));
    }
    let which = a.checkpoint.unwrap_or_default();
    let opts = EvalOptions {
        peak: a.peak.unwrap_or(1.0),
        region: if a.in_mask.unwrap_or(false) { Region::InMask } else { Region::Full },
        batch_size: a.batch_size.unwrap_or(preset.batch_size),
    };
    if !(opts.peak > 0.0) {
        return Err(CliError::Usage(format!("--peak {} must be positive", opts.peak)));
    }
    let slice_axis = a.slice_axis.unwrap_or(0);
    if slice_axis > 2 {
        return Err(CliError::Usage(format!("--slice-axis {slice_axis} must be 0, 1 or 2")));
    }
    let data = a.data.clone().unwrap_or_else(|| ctx.dataset_dir());
    let runs_dir = a.runs_dir.clone().unwrap_or_else(|| ctx.runs_dir());
    let tag = run_name(&model, inputs, Component::X, 0);
    let tag = tag.trim_end_matches("_x_fold0");
    let out = a.out.clone().unwrap_or_else(|| ctx.data_root.join("eval").join(tag));

    let (ds, fnv) = open_dataset(&data)?;
    let ck_name = match which {
        Which::Best => BEST_CHECKPOINT,
        Which::Last => LAST_CHECKPOINT,
    };
    let mut rows: Vec<MetricReport> = Vec::new();
    let mut used = Vec::new();
    let mut slices = Vec::new();
    for &fold in &folds {
        ds.manifest.fold(fold)?;
        let test = ds.samples(fold, Partition::Test)?;
        if test.is_empty() {
            return Err(CliError::Data(format!("fold {fold} has no test samples")));
        }
        let mut models: [Option<Model>; 3] = [None, None, None];
        let mut seed = None;
        for d in Component::ALL {
            let path = runs_dir.join(run_name(&model, inputs, d, fold)).join(ck_name);
            if !path.exists() {
                warn!("fold {fold}: no checkpoint for component {} at {}", d.name(), path.display());
                continue;
            }
            let ck = Checkpoint::load(&path, Some(&model))?;
            if ck.meta.train.component != d || ck.meta.train.inputs != inputs.variant().inputs {
                return Err(CliError::Data(format!(
                    "{} was trained for component {} with {:?}, expected {} with {:?}",
                    path.display(),
                    ck.meta.train.component.name(),
                    ck.meta.train.inputs,
                    d.name(),
                    inputs.variant().inputs
                )));
            }
            seed = seed.or(Some(ck.meta.train.seed));
            models[d.index()] = Some(ck.model()?);
            used.push(path_text(&path));
        }
        if models.iter().all(Option::is_none) {
            return Err(CliError::Data(format!(
                "fold {fold}: no {ck_name} checkpoints under {} for {tag}",
                runs_dir.display()
            )));
        }
        let refs = [models[0].as_ref(), models[1].as_ref(), models[2].as_ref()];
        let e = evaluate(refs, &test, inputs.variant().inputs, fold, seed, &opts)?;
        info!("fold {fold}: {} rows over {} test samples", e.rows.len(), test.len());
        rows.extend(e.rows);
        if a.slices.unwrap_or(false) {
            let dir = out.join("slices");
            std::fs::create_dir_all(&dir).map_err(|err| CliError::io(&dir, err))?;
            let s = &test[0];
            for d in Component::ALL {
                if let Some(p) = &e.predictions[d.index()] {
                    let stem = format!("fold{fold}_{}_{}", s.run_id, d.name());
                    slices.push(write_slices(&dir, &stem, &p[0], &s.velocity[d.index()], slice_axis)?);
                }
            }
            if let Some(m) = &e.magnitude {
                let truth = velocity_magnitude(&s.velocity[0], &s.velocity[1], &s.velocity[2])?;
                let stem = format!("fold{fold}_{}_magnitude", s.run_id);
                slices.push(write_slices(&dir, &stem, &m[0], &truth, slice_axis)?);
            }
        }
    }
    if folds.len() > 1 {
        let means = fold_means(&rows, opts.peak);
        rows.extend(means);
    }
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let report = out.join(REPORT_FILE);
    write_report(&report, &rows)?;
    let settings = EvalSettings {
        data: path_text(&data),
        dataset_manifest_fnv: fnv,
        runs_dir: path_text(&runs_dir),
        out: path_text(&out),
        model,
        folds,
        checkpoint: which,
        checkpoints: used,
        options: opts,
        slices: a.slices.unwrap_or(false).then_some(slice_axis),
    };
    RunConfig::new("eval", ctx, &settings).write(&out)?;
    for r in &rows {
        println!("{}", r.csv_row());
    }
    println!("wrote {} rows to {}{}", rows.len(), report.display(), if slices.is_empty() { String::new() } else { format!(" and {} slice sets", slices.len()) });
    Ok(())
}
