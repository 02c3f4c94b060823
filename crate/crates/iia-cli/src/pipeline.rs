//! Shared plumbing for the dataset-driven commands: model construction,
//! sample loading, class-selector resolution, and the parallel map pass.

use ndarray::{Array2, ArrayD};
use rayon::prelude::*;

use iia::io::{load_and_preprocess, load_dataset};
use iia::{AttributionMap, ClassSelector};
use iia_models::{build_model, AnyModel, BuildOptions, ModelMeta, TapModel};

use crate::config::{ClassChoice, MethodId, RunConfig};
use crate::methods::compute_map;
use crate::CliError;

/// One dataset sample decoded and preprocessed for the model.
pub struct LoadedSample {
    pub name: String,
    pub image: ArrayD<f32>,
    pub label: Option<usize>,
    pub mask: Option<Array2<bool>>,
}

pub fn build(cfg: &RunConfig) -> Result<AnyModel, CliError> {
    let opts = BuildOptions {
        seed: cfg.seed,
        ..BuildOptions::default()
    };
    Ok(build_model(&cfg.model, &opts)?)
}

/// Load and preprocess every dataset sample into memory.
pub fn load_samples(cfg: &RunConfig, meta: &ModelMeta) -> Result<Vec<LoadedSample>, CliError> {
    let spec = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --dataset".into()))?;
    let samples = load_dataset(spec)?;
    log::info!("dataset: {} sample(s) from {}", samples.len(), spec.root.display());
    let mut loaded = Vec::with_capacity(samples.len());
    for sample in samples {
        loaded.push(LoadedSample {
            image: load_and_preprocess::<f32>(&sample.path, meta)?,
            name: sample.name,
            label: sample.label,
            mask: sample.mask,
        });
    }
    Ok(loaded)
}

/// Resolve the class selector for one sample.
pub fn selector_for(
    choice: ClassChoice,
    sample: &LoadedSample,
    fallback_label: Option<usize>,
) -> Result<ClassSelector, CliError> {
    match choice {
        ClassChoice::Predicted => Ok(ClassSelector::Predicted),
        ClassChoice::Target => sample
            .label
            .or(fallback_label)
            .map(ClassSelector::Target)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "sample '{}' has no label; --class target needs a labeled dataset or --label",
                    sample.name
                ))
            }),
    }
}

/// Compute one attribution map per sample on a worker pool. Each worker owns
/// a model clone; results come back in sample order, so the output is
/// independent of scheduling.
pub fn compute_maps(
    model: &AnyModel,
    samples: &[LoadedSample],
    method: MethodId,
    cfg: &RunConfig,
    choice: ClassChoice,
) -> Result<Vec<AttributionMap>, CliError> {
    let selectors = samples
        .iter()
        .map(|s| selector_for(choice, s, cfg.label))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let maps: iia::Result<Vec<AttributionMap>> = pool.install(|| {
        samples
            .par_iter()
            .zip(selectors.par_iter())
            .map_init(
                || model.clone(),
                |model, (sample, selector)| {
                    compute_map(model, &sample.image, method, cfg.n, *selector, cfg.batch)
                },
            )
            .collect()
    });
    Ok(maps?)
}

/// Which selectors a reporting command should cover: an explicit `--class`
/// wins; otherwise both, dropping `target` when the dataset has no labels.
pub fn selectors_to_report(cfg: &RunConfig, samples: &[LoadedSample]) -> Vec<ClassChoice> {
    if let Some(choice) = cfg.class {
        return vec![choice];
    }
    let labeled = cfg.label.is_some() || samples.iter().all(|s| s.label.is_some());
    if labeled {
        vec![ClassChoice::Predicted, ClassChoice::Target]
    } else {
        log::warn!("dataset has no labels; reporting the predicted class only");
        vec![ClassChoice::Predicted]
    }
}

/// Architecture check for every requested method, before any work runs.
pub fn check_methods(methods: &[MethodId], meta: &ModelMeta) -> Result<(), CliError> {
    for &method in methods {
        crate::config::check_compat(method, meta)?;
    }
    Ok(())
}
