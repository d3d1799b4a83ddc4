use log::info;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, evaluate_component};
use super::metrics::EvalOptions;
use super::report::{summarize, InputFlags, MetricReport, Target};
use super::EvalError;
use crate::datapipe::{Component, Dataset, InputConfig, Partition, Sample};
use crate::models::{Conditioning, Model, ModelConfig};
use crate::trainer::{prepare, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Skip connections on versus off, per component.
    Skip,
    /// Sparse only, sparse + RDF, sparse + RDF + latent inflow speed.
    Inputs,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "skip" => Some(Suite::Skip),
            "inputs" => Some(Suite::Inputs),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Skip => "skip",
            Suite::Inputs => "inputs",
        }
    }
}

/// One row of the input-configuration study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputVariant {
    pub name: &'static str,
    pub inputs: InputConfig,
    pub conditioning: Conditioning,
}

impl InputVariant {
    pub fn apply(&self, cfg: &ModelConfig) -> ModelConfig {
        cfg.clone().with_in_channels(self.inputs.channels()).with_conditioning(self.conditioning)
    }
}

pub fn input_variants() -> [InputVariant; 3] {
    [
        InputVariant { name: "sparse", inputs: InputConfig { rdf: false }, conditioning: Conditioning::Off },
        InputVariant { name: "sparse_rdf", inputs: InputConfig { rdf: true }, conditioning: Conditioning::Off },
        InputVariant { name: "sparse_rdf_vin", inputs: InputConfig { rdf: true }, conditioning: Conditioning::Latent },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Model whose skip connections are toggled.
    pub skip_model: ModelConfig,
    /// Models compared across input configurations.
    pub input_models: Vec<ModelConfig>,
    /// Template for every training run; component, inputs and seed are
    /// overwritten per run.
    pub train: TrainConfig,
    /// Epochs per run; 0 evaluates the freshly initialized models.
    pub epochs: usize,
    pub folds: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Components of the skip suite.
    pub components: Vec<Component>,
    pub eval: EvalOptions,
}

impl AblationConfig {
    pub fn desk(divisor: usize) -> Self {
        AblationConfig {
            skip_model: ModelConfig::lvadnet3d().desk(divisor),
            input_models: vec![ModelConfig::lvadnet3d().desk(divisor), ModelConfig::unet3d().desk(divisor)],
            train: TrainConfig::new(Component::X),
            epochs: 10,
            folds: vec![0],
            seeds: vec![0, 1, 2],
            components: Component::ALL.to_vec(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    /// Every (setting, fold, seed) evaluation.
    pub runs: Vec<MetricReport>,
    /// The study table: one row per setting, averaged over folds and seeds.
    pub table: Vec<MetricReport>,
}

fn train_one(
    cfg: &AblationConfig,
    model: &ModelConfig,
    d: Component,
    inputs: InputConfig,
    seed: u64,
    train: &[Sample],
) -> Result<Model, EvalError> {
    let net = Model::new(model.clone(), seed)?;
    if cfg.epochs == 0 {
        return Ok(net);
    }
    let tc = TrainConfig { component: d, inputs, seed, epochs: cfg.epochs, ..cfg.train.clone() };
    let mut trainer = Trainer::new(net, tc)?;
    let data = prepare(train, d, inputs)?;
    let report = trainer.fit(&data, &[], None)?;
    if let Some(last) = report.epochs.last() {
        info!("{} {} seed {seed}: train Huber {:.4e} after {} steps", model.model_id(), d.name(), last.train_huber, last.step);
    }
    Ok(trainer.into_model())
}

fn split(ds: &Dataset, fold: usize) -> Result<(Vec<Sample>, Vec<Sample>), EvalError> {
    let train = ds.samples(fold, Partition::Train)?;
    let test = ds.samples(fold, Partition::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::Invalid(format!("fold {fold} has an empty train or test partition")));
    }
    Ok((train, test))
}

/// Trains and scores every setting of `suite` on each fold and seed.
///
/// The skip suite yields one table row per (component, skips on/off); the
/// inputs suite one magnitude row per (model, input variant).
pub fn run_ablation(suite: Suite, cfg: &AblationConfig, ds: &Dataset) -> Result<AblationResult, EvalError> {
    if cfg.folds.is_empty() || cfg.seeds.is_empty() {
        return Err(EvalError::Invalid("ablation needs at least one fold and one seed".into()));
    }
    let mut runs = Vec::new();
    match suite {
        Suite::Skip => {
            let inputs = InputConfig { rdf: cfg.skip_model.in_channels > 1 };
            for &d in &cfg.components {
                for skips in [true, false] {
                    let model = cfg.skip_model.clone().with_skips(skips);
                    for &fold in &cfg.folds {
                        let (train, test) = split(ds, fold)?;
                        for &seed in &cfg.seeds {
                            let net = train_one(cfg, &model, d, inputs, seed, &train)?;
                            let (metrics, _) = evaluate_component(&net, &test, d, inputs, &cfg.eval)?;
                            runs.push(MetricReport {
                                model: model.model_id(),
                                target: Target::Component(d),
                                inputs: InputFlags {
                                    sparse: true,
                                    rdf: inputs.rdf,
                                    vin: model.conditioning != Conditioning::Off,
                                },
                                fold: Some(fold),
                                seed: Some(seed),
                                metrics,
                            });
                        }
                    }
                }
            }
            let table = summarize(&runs, cfg.eval.peak);
            Ok(AblationResult { runs, table })
        }
        Suite::Inputs => {
            for base in &cfg.input_models {
                for variant in input_variants() {
                    let model = variant.apply(base);
                    for &fold in &cfg.folds {
                        let (train, test) = split(ds, fold)?;
                        for &seed in &cfg.seeds {
                            let nets = Component::ALL
                                .iter()
                                .map(|&d| train_one(cfg, &model, d, variant.inputs, seed, &train))
                                .collect::<Result<Vec<_>, _>>()?;
                            let refs = [Some(&nets[0]), Some(&nets[1]), Some(&nets[2])];
                            let e = evaluate(refs, &test, variant.inputs, fold, Some(seed), &cfg.eval)?;
                            runs.extend(e.rows);
                        }
                    }
                }
            }
            let magnitude: Vec<MetricReport> = runs.iter().filter(|r| r.target == Target::Magnitude).cloned().collect();
            let table = summarize(&magnitude, cfg.eval.peak);
            Ok(AblationResult { runs, table })
        }
    }
}
