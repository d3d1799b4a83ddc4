use std::path::{Path, PathBuf};

use clap::Args;
use flowrecon::datapipe::{fnv1a64, Component, Dataset, Partition, MANIFEST_FILE};
use flowrecon::models::{Model, ModelConfig};
use flowrecon::trainer::{prepare, Checkpoint, TrainConfig, Trainer, LAST_CHECKPOINT};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{layer, model_config, parse_component, path_text, run_name, Context, FileConfig, InputsKind, ModelKind, RunConfig};
use crate::error::CliError;

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset directory [default: <data-root>/dataset]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory [default: <data-root>/runs/<model>_<inputs>_<component>_fold<k>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Velocity component: x, y or z
    #[arg(long, value_parser = parse_component)]
    pub component: Option<Component>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Total epochs of the run [default: from --scale]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub inputs: Option<InputsKind>,
    /// Feed the inflow speed as an extra input channel instead of the latent
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub vin_channel: Option<bool>,
    /// Drop the encoder-decoder skip connections
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_skips: Option<bool>,
    /// Initial learning rate [default: 1e-3]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate floor of the cosine schedule [default: 0]
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// [default: from --scale]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initialization and shuffling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the run directory's last checkpoint
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
}

#[derive(Debug, Serialize)]
struct TrainSettings {
    data: String,
    dataset_manifest_fnv: String,
    out: String,
    fold: usize,
    resume: bool,
    model: ModelConfig,
    train: TrainConfig,
}

/// Fails with a data error naming the manifest a dataset must provide.
pub fn open_dataset(dir: &Path) -> Result<(Dataset, String), CliError> {
    let manifest = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&manifest).map_err(|_| {
        CliError::Data(format!(
            "no dataset at {}: expected manifest {} (run `flowrecon generate` first)",
            dir.display(),
            manifest.display()
        ))
    })?;
    let ds = Dataset::open(dir)?;
    Ok((ds, format!("{:016x}", fnv1a64(&bytes))))
}

pub fn run(ctx: &Context, flags: &TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let a = layer(flags, &file.train)?;
    let preset = ctx.preset();
    let inputs = a.inputs.unwrap_or_default();
    let model = model_config(
        a.model.unwrap_or_default(),
        preset.channel_divisor,
        inputs,
        !a.no_skips.unwrap_or(false),
        a.vin_channel.unwrap_or(false),
    );
    let d = a.component.ok_or_else(|| CliError::Usage("--component is required (x, y or z)".into()))?;
    let fold = a.fold.unwrap_or(0);
    let data = a.data.clone().unwrap_or_else(|| ctx.dataset_dir());
    let out = a.out.clone().unwrap_or_else(|| ctx.runs_dir().join(run_name(&model, inputs, d, fold)));
    let tc = TrainConfig {
        component: d,
        inputs: inputs.variant().inputs,
        lr0: a.lr.unwrap_or(1e-3),
        lr_min: a.lr_min.unwrap_or(0.0),
        epochs: a.epochs.unwrap_or(preset.epochs),
        batch_size: a.batch_size.unwrap_or(preset.batch_size),
        seed: a.seed.unwrap_or(0),
        ..TrainConfig::new(d)
    };
    tc.validate()?;
    model.validate()?;
    let resume = a.resume.unwrap_or(false);

    let (ds, fnv) = open_dataset(&data)?;
    ds.manifest.fold(fold)?;
    let train = prepare(&ds.samples(fold, Partition::Train)?, d, tc.inputs)?;
    let val = prepare(&ds.samples(fold, Partition::Val)?, d, tc.inputs)?;
    if train.is_empty() {
        return Err(CliError::Data(format!("fold {fold} has no training samples")));
    }
    if let Some(s) = train.first() {
        let div = model.spatial_divisor();
        if s.input.shape()[1..].iter().any(|e| e % div != 0) {
            return Err(CliError::Usage(format!(
                "grid {:?} is not divisible by {div} as {} requires",
                &s.input.shape()[1..],
                model.model_id()
            )));
        }
    }

    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut trainer = if resume {
        let path = out.join(LAST_CHECKPOINT);
        if !path.exists() {
            return Err(CliError::Data(format!("cannot resume: {} does not exist", path.display())));
        }
        let ck = Checkpoint::load(&path, Some(&model))?;
        info!("resuming {} at step {} (epoch {})", path.display(), ck.meta.progress.step, ck.meta.progress.epoch);
        Trainer::resume(ck, Some(tc.epochs))?
    } else {
        Trainer::new(Model::new(model.clone(), tc.seed)?, tc.clone())?
    };
    let settings = TrainSettings {
        data: path_text(&data),
        dataset_manifest_fnv: fnv,
        out: path_text(&out),
        fold,
        resume,
        model: model.clone(),
        train: trainer.config().clone(),
    };
    RunConfig::new("train", ctx, &settings).write(&out)?;

    let start = trainer.progress().step;
    if trainer.progress().epoch >= trainer.config().epochs {
        println!("{}: already trained for {} epochs", out.display(), trainer.progress().epoch);
        return Ok(());
    }
    let report = trainer.fit(&train, &val, Some(&out))?;
    let last = report.epochs.last().expect("at least one epoch runs");
    println!(
        "trained {} on fold {fold}: epochs {}..={}, steps {start}..{}, train Huber {:.4e}, val Huber {}",
        model.model_id(),
        report.epochs[0].epoch,
        last.epoch,
        last.step,
        last.train_huber,
        last.val_huber.map_or("n/a".into(), |v| format!("{v:.4e}"))
    );
    Ok(())
}
