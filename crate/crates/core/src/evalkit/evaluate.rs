use log::warn;

use super::metrics::{velocity_magnitude, Accumulator, EvalOptions, Metrics, Region};
use super::report::{InputFlags, MetricReport, Target};
use super::EvalError;
use crate::datapipe::{Component, InputConfig, Sample};
use crate::models::{Conditioning, Model};
use crate::trainer::{prepare, stack};
use crate::VolumeField;

/// Scores plus the reconstructions they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricReport>,
    /// Per component, one field per sample.
    pub predictions: [Option<Vec<VolumeField>>; 3],
    pub magnitude: Option<Vec<VolumeField>>,
}

/// Reconstructs component `d` of every sample.
pub fn predict_component(
    model: &Model,
    samples: &[Sample],
    d: Component,
    inputs: InputConfig,
    batch_size: usize,
) -> Result<Vec<VolumeField>, EvalError> {
    let prepared = prepare(samples, d, inputs)?;
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, raw) in prepared.chunks(batch_size.max(1)).zip(samples.chunks(batch_size.max(1))) {
        let refs: Vec<_> = chunk.iter().collect();
        let (x, _, v) = stack(&refs)?;
        let pred = model.predict(&x, v.data())?;
        let per = pred.numel() / chunk.len();
        for (k, s) in raw.iter().enumerate() {
            let data = pred.data()[k * per..(k + 1) * per].to_vec();
            out.push(VolumeField::new(s.dims(), s.mask.spacing(), data)?);
        }
    }
    Ok(out)
}

fn score<'a>(
    preds: &[VolumeField],
    truths: impl Iterator<Item = &'a VolumeField>,
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<Metrics, EvalError> {
    let mut acc = Accumulator::default();
    for ((p, t), s) in preds.iter().zip(truths).zip(samples) {
        let mask = (opts.region == Region::InMask).then_some(&s.mask);
        acc.add(p, t, mask)?;
    }
    acc.finish(opts.peak)
}

pub fn evaluate_component(
    model: &Model,
    samples: &[Sample],
    d: Component,
    inputs: InputConfig,
    opts: &EvalOptions,
) -> Result<(Metrics, Vec<VolumeField>), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Invalid("no samples to evaluate".into()));
    }
    let preds = predict_component(model, samples, d, inputs, opts.batch_size)?;
    let m = score(&preds, samples.iter().map(|s| &s.velocity[d.index()]), samples, opts)?;
    Ok((m, preds))
}

fn flags(model: &Model, inputs: InputConfig) -> InputFlags {
    InputFlags { sparse: true, rdf: inputs.rdf, vin: model.config().conditioning != Conditioning::Off }
}

/// Scores every component that has a model and, when all three do, the
/// velocity magnitude composed from the three reconstructions. A missing
/// component drops the magnitude row with a warning.
pub fn evaluate(
    models: [Option<&Model>; 3],
    samples: &[Sample],
    inputs: InputConfig,
    fold: usize,
    seed: Option<u64>,
    opts: &EvalOptions,
) -> Result<Evaluation, EvalError> {
    let mut rows = Vec::new();
    let mut predictions: [Option<Vec<VolumeField>>; 3] = [None, None, None];
    for d in Component::ALL {
        let Some(model) = models[d.index()] else { continue };
        let (metrics, preds) = evaluate_component(model, samples, d, inputs, opts)?;
        rows.push(MetricReport {
            model: model.config().model_id(),
            target: Target::Component(d),
            inputs: flags(model, inputs),
            fold: Some(fold),
            seed,
            metrics,
        });
        predictions[d.index()] = Some(preds);
    }
    let magnitude = match &predictions {
        [Some(px), Some(py), Some(pz)] => {
            let mags = (0..samples.len())
                .map(|k| velocity_magnitude(&px[k], &py[k], &pz[k]))
                .collect::<Result<Vec<_>, _>>()?;
            let truths = samples
                .iter()
                .map(|s| velocity_magnitude(&s.velocity[0], &s.velocity[1], &s.velocity[2]))
                .collect::<Result<Vec<_>, _>>()?;
            let model = models[0].expect("all components present");
            rows.push(MetricReport {
                model: model.config().model_id(),
                target: Target::Magnitude,
                inputs: flags(model, inputs),
                fold: Some(fold),
                seed,
                metrics: score(&mags, truths.iter(), samples, opts)?,
            });
            Some(mags)
        }
        _ => {
            if !rows.is_empty() {
                let missing: Vec<&str> =
                    Component::ALL.iter().filter(|d| models[d.index()].is_none()).map(|d| d.name()).collect();
                warn!("no model for component(s) {}; magnitude rows omitted", missing.join(", "));
            }
            None
        }
    };
    Ok(Evaluation { rows, predictions, magnitude })
}

/// Like [`evaluate`], but every component must have a model: three
/// component rows plus one magnitude row.
pub fn evaluate_components(
    models: [Option<&Model>; 3],
    samples: &[Sample],
    inputs: InputConfig,
    fold: usize,
    seed: Option<u64>,
    opts: &EvalOptions,
) -> Result<Evaluation, EvalError> {
    if let Some(d) = Component::ALL.into_iter().find(|d| models[d.index()].is_none()) {
        return Err(EvalError::MissingComponent(d.name()));
    }
    evaluate(models, samples, inputs, fold, seed, opts)
}
