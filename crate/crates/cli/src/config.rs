//! Scale presets, the optional TOML config file and the run manifest written
//! next to every output.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use flowrecon::datapipe::Component;
use flowrecon::evalkit::{input_variants, InputVariant};
use flowrecon::flowgen::SolverConfig;
use flowrecon::models::{Conditioning, ModelConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "FLOWRECON_DATA";
pub const DEFAULT_DATA_ROOT: &str = "data";
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

/// Settings that must change together when switching scale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub grid: usize,
    pub channel_divisor: usize,
    pub epochs: usize,
    pub ablation_epochs: usize,
    pub batch_size: usize,
    pub solver_steps: usize,
}

impl Scale {
    pub fn preset(self) -> Preset {
        match self {
            Scale::Desk => Preset {
                grid: 32,
                channel_divisor: 4,
                epochs: 20,
                ablation_epochs: 8,
                batch_size: 4,
                solver_steps: SolverConfig::desk().steps,
            },
            Scale::Paper => Preset {
                grid: 128,
                channel_divisor: 1,
                epochs: 100,
                ablation_epochs: 100,
                batch_size: 1,
                solver_steps: SolverConfig::paper().steps,
            },
        }
    }

    pub fn solver(self) -> SolverConfig {
        match self {
            Scale::Desk => SolverConfig::desk(),
            Scale::Paper => SolverConfig::paper(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Lvadnet3d,
    Unet3d,
}

impl ModelKind {
    pub fn base(self, divisor: usize) -> ModelConfig {
        match self {
            ModelKind::Lvadnet3d => ModelConfig::lvadnet3d(),
            ModelKind::Unet3d => ModelConfig::unet3d(),
        }
        .desk(divisor)
    }
}

/// Network inputs: the sparse component, optionally the RDF, optionally the
/// inflow speed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum InputsKind {
    Sparse,
    SparseRdf,
    #[default]
    SparseRdfVin,
}

impl InputsKind {
    pub fn variant(self) -> InputVariant {
        let name = match self {
            InputsKind::Sparse => "sparse",
            InputsKind::SparseRdf => "sparse_rdf",
            InputsKind::SparseRdfVin => "sparse_rdf_vin",
        };
        input_variants().into_iter().find(|v| v.name == name).expect("every kind has a variant")
    }
}

pub fn parse_component(s: &str) -> Result<Component, String> {
    Component::parse(s).ok_or_else(|| format!("unknown component {s:?}; expected x, y or z"))
}

/// The model a (kind, inputs, skips, inflow-as-channel) selection denotes.
pub fn model_config(kind: ModelKind, divisor: usize, inputs: InputsKind, skips: bool, vin_channel: bool) -> ModelConfig {
    let mut cfg = inputs.variant().apply(&kind.base(divisor).with_skips(skips));
    if vin_channel && cfg.conditioning == Conditioning::Latent {
        cfg = cfg.with_conditioning(Conditioning::Input);
    }
    cfg
}

/// Training-run directory name: model, inputs, component, fold.
pub fn run_name(model: &ModelConfig, inputs: InputsKind, d: Component, fold: usize) -> String {
    let suffix = if model.conditioning == Conditioning::Input { "_ch" } else { "" };
    format!("{}_{}{suffix}_{}_fold{fold}", model.model_id(), inputs.variant().name, d.name())
}

/// Layers `flags` over `file`: every field set on the command line wins.
pub fn layer<T: Serialize + DeserializeOwned>(flags: &T, file: &T) -> Result<T, CliError> {
    let to_obj = |v: &T| match serde_json::to_value(v) {
        Ok(serde_json::Value::Object(m)) => Ok(m),
        _ => Err(CliError::Usage("settings do not serialize to a table".into())),
    };
    let mut merged = to_obj(file)?;
    for (k, v) in to_obj(flags)? {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| CliError::Usage(e.to_string()))
}

/// Contents of `--config`; each table mirrors the flags of one subcommand.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scale: Option<Scale>,
    pub data_root: Option<PathBuf>,
    pub generate: crate::generate::GenerateArgs,
    pub train: crate::train::TrainArgs,
    pub eval: crate::eval::EvalArgs,
    pub ablate: crate::ablate::AblateArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Settings shared by every subcommand once flags, config file, environment
/// and defaults are resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub scale: Scale,
    pub data_root: PathBuf,
}

impl Context {
    pub fn resolve(scale: Option<Scale>, data_root: Option<PathBuf>, file: &FileConfig) -> Self {
        let data_root = data_root
            .or_else(|| file.data_root.clone())
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_ROOT));
        Context { scale: scale.or(file.scale).unwrap_or_default(), data_root }
    }

    pub fn preset(&self) -> Preset {
        self.scale.preset()
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.data_root.join("dataset")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_root.join("runs")
    }
}

/// Written as `run.json` into every output directory: enough to repeat the
/// run exactly.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub scale: Scale,
    pub preset: Preset,
    pub settings: &'a S,
}

impl<'a, S: Serialize> RunConfig<'a, S> {
    pub fn new(command: &'static str, ctx: &Context, settings: &'a S) -> Self {
        RunConfig {
            tool: "flowrecon",
            version: env!("CARGO_PKG_VERSION"),
            command,
            scale: ctx.scale,
            preset: ctx.preset(),
            settings,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RUN_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

/// Path as text; paths are recorded exactly as given.
pub fn path_text(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
