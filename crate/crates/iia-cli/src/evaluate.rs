//! `evaluate`: score attribution maps with perturbation and confidence
//! metrics over a dataset, for each requested method and class selector.

use ndarray::{Array2, ArrayD};

use iia::io::{write_report, MetricRecord};
use iia::metrics::{
    adp_pic, insertion_deletion, perturbation_curve, sic_aic, InsDel, PerturbOrder, ScoreKind,
};
use iia_models::{AnyModel, TapModel};

use crate::config::{resolve, ClassChoice, MethodId, RunConfig, SharedArgs};
use crate::pipeline::{build, check_methods, compute_maps, load_samples, selectors_to_report, LoadedSample};
use crate::CliError;

/// Scores for one method under one class selector, in report row order.
fn score_rows(
    model: &AnyModel,
    samples: &[LoadedSample],
    maps: &[iia::AttributionMap],
    sic: bool,
) -> Result<Vec<(&'static str, f64)>, CliError> {
    let count = samples.len() as f64;
    let (mut pos, mut neg, mut ins, mut del) = (0.0, 0.0, 0.0, 0.0);
    let mut batch: Vec<(ArrayD<f32>, Array2<f64>, usize)> = Vec::with_capacity(samples.len());
    for (sample, map) in samples.iter().zip(maps) {
        let class = map.class_index;
        pos += perturbation_curve(model, &sample.image, &map.values, class, PerturbOrder::Pos, ScoreKind::Probability)?.auc;
        neg += perturbation_curve(model, &sample.image, &map.values, class, PerturbOrder::Neg, ScoreKind::Probability)?.auc;
        ins += insertion_deletion(model, &sample.image, &map.values, class, InsDel::Insertion)?.auc;
        del += insertion_deletion(model, &sample.image, &map.values, class, InsDel::Deletion)?.auc;
        batch.push((sample.image.clone(), map.values.clone(), class));
    }
    let confidence = adp_pic(model, &batch)?;
    let mut rows = vec![
        ("pos_auc", pos / count),
        ("neg_auc", neg / count),
        ("ins_auc", ins / count),
        ("del_auc", del / count),
        ("adp", confidence.adp),
        ("pic", confidence.pic),
    ];
    if sic {
        let (h, w) = model.meta().input_hw;
        let sigma = h.min(w) as f64 / 4.0;
        let info = sic_aic(model, &batch, sigma, 11)?;
        rows.push(("sic", info.sic));
        rows.push(("aic", info.aic));
    }
    Ok(rows)
}

fn record(cfg: &RunConfig, method: MethodId, choice: ClassChoice, metric: &str, value: f64) -> MetricRecord {
    MetricRecord {
        model: cfg.model.clone(),
        method: method.name().into(),
        metric: metric.into(),
        class_selector: choice.name().into(),
        value,
    }
}

pub fn run(shared: &SharedArgs, sic: bool) -> Result<(), CliError> {
    let cfg = resolve(shared, "toy_cnn", &[MethodId::Iia2])?;
    let model = build(&cfg)?;
    check_methods(&cfg.methods, model.meta())?;
    let samples = load_samples(&cfg, model.meta())?;
    std::fs::create_dir_all(&cfg.out)?;

    let mut records = Vec::new();
    if samples.is_empty() {
        log::warn!("dataset is empty; writing a header-only report");
    } else {
        let selectors = selectors_to_report(&cfg, &samples);
        for &method in &cfg.methods {
            for &choice in &selectors {
                let maps = compute_maps(&model, &samples, method, &cfg, choice)?;
                for (metric, value) in score_rows(&model, &samples, &maps, sic)? {
                    println!("{} {} {} {:.4}", method.name(), choice.name(), metric, value);
                    records.push(record(&cfg, method, choice, metric, value));
                }
            }
        }
    }
    let (csv, md) = write_report(&records, &cfg.out.join("evaluate"))?;
    log::info!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}
