use std::path::PathBuf;

use clap::{Args, ValueEnum};
use flowrecon::evalkit::{run_ablation, write_report, AblationConfig, Suite};
use flowrecon::models::ModelConfig;
use flowrecon::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::config::{layer, path_text, Context, FileConfig, ModelKind, RunConfig};
use crate::error::CliError;
use crate::train::open_dataset;

pub const TABLE_FILE: &str = "table.csv";
pub const RUNS_FILE: &str = "runs.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SuiteArg {
    /// Skip connections on versus off, per component
    Skip,
    /// Sparse, sparse + RDF, sparse + RDF + inflow speed
    Inputs,
}

impl SuiteArg {
    fn suite(self) -> Suite {
        match self {
            SuiteArg::Skip => Suite::Skip,
            SuiteArg::Inputs => Suite::Inputs,
        }
    }
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub suite: Option<SuiteArg>,
    /// Dataset directory [default: <data-root>/dataset]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory [default: <data-root>/ablation/<suite>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epochs per training run [default: from --scale]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated seeds [default: 0,1,2]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated folds [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    /// Models of the inputs suite [default: lvadnet3d,unet3d]
    #[arg(long, value_enum, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct AblateSettings {
    suite: Suite,
    data: String,
    dataset_manifest_fnv: String,
    out: String,
    study: AblationConfig,
}

pub fn run(ctx: &Context, flags: &AblateArgs, file: &FileConfig) -> Result<(), CliError> {
    let a = layer(flags, &file.ablate)?;
    let preset = ctx.preset();
    let suite = a.suite.ok_or_else(|| CliError::Usage("--suite is required (skip or inputs)".into()))?.suite();
    let data = a.data.clone().unwrap_or_else(|| ctx.dataset_dir());
    let out = a.out.clone().unwrap_or_else(|| ctx.data_root.join("ablation").join(suite.name()));
    let models = a.models.clone().unwrap_or_else(|| vec![ModelKind::Lvadnet3d, ModelKind::Unet3d]);
    let mut study = AblationConfig::desk(preset.channel_divisor);
    study.input_models = models.iter().map(|m| m.base(preset.channel_divisor)).collect::<Vec<ModelConfig>>();
    study.epochs = a.epochs.unwrap_or(preset.ablation_epochs);
    study.seeds = a.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]);
    study.folds = a.folds.clone().unwrap_or_else(|| vec![0]);
    study.train = TrainConfig {
        lr0: a.lr.unwrap_or(1e-3),
        batch_size: a.batch_size.unwrap_or(preset.batch_size),
        epochs: study.epochs.max(1),
        ..study.train
    };
    study.train.validate()?;
    study.eval.batch_size = study.train.batch_size;

    let (ds, fnv) = open_dataset(&data)?;
    let result = run_ablation(suite, &study, &ds)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write_report(&out.join(TABLE_FILE), &result.table)?;
    write_report(&out.join(RUNS_FILE), &result.runs)?;
    let settings = AblateSettings { suite, data: path_text(&data), dataset_manifest_fnv: fnv, out: path_text(&out), study };
    RunConfig::new("ablate", ctx, &settings).write(&out)?;
    for r in &result.table {
        println!("{}", r.csv_row());
    }
    println!("wrote {} table rows and {} runs to {}", result.table.len(), result.runs.len(), out.display());
    Ok(())
}
