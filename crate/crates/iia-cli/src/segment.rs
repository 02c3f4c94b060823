//! `segment-eval`: score attribution maps against ground-truth masks.

use iia::bilinear_resize;
use iia::io::{write_report, MetricRecord};
use iia::metrics::{aggregate_seg, segmentation_scores, SegScore};
use iia_models::TapModel;

use crate::config::{resolve, ClassChoice, MethodId, SharedArgs};
use crate::pipeline::{build, check_methods, compute_maps, load_samples};
use crate::CliError;

pub fn run(shared: &SharedArgs) -> Result<(), CliError> {
    let cfg = resolve(shared, "toy_cnn", &[MethodId::Iia2])?;
    let model = build(&cfg)?;
    check_methods(&cfg.methods, model.meta())?;
    let samples = load_samples(&cfg, model.meta())?;
    if samples.iter().any(|s| s.mask.is_none()) {
        return Err(CliError::Usage(
            "segment-eval needs a mask dataset (in_seg, coco_masks, or voc_masks)".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let choice = cfg.class.unwrap_or(ClassChoice::Predicted);

    let mut records = Vec::new();
    if samples.is_empty() {
        log::warn!("dataset is empty; writing a header-only report");
    } else {
        for &method in &cfg.methods {
            let maps = compute_maps(&model, &samples, method, &cfg, choice)?;
            let mut scores: Vec<SegScore> = Vec::with_capacity(samples.len());
            for (sample, map) in samples.iter().zip(&maps) {
                let mask = sample.mask.as_ref().expect("checked above");
                let (mh, mw) = mask.dim();
                // Masks keep the source resolution; bring the map to it.
                let score = if map.values.dim() == (mh, mw) {
                    segmentation_scores(&map.values, mask)?
                } else {
                    segmentation_scores(&bilinear_resize(&map.values, mh, mw), mask)?
                };
                scores.push(score);
            }
            let agg = aggregate_seg(&scores)?;
            for (metric, value) in [
                ("pixel_acc", agg.pa),
                ("map", agg.ap),
                ("miou", agg.iou),
                ("mf1", agg.f1),
            ] {
                println!("{} {} {} {:.4}", method.name(), choice.name(), metric, value);
                records.push(MetricRecord {
                    model: cfg.model.clone(),
                    method: method.name().into(),
                    metric: metric.into(),
                    class_selector: choice.name().into(),
                    value,
                });
            }
        }
    }
    let (csv, md) = write_report(&records, &cfg.out.join("segment_eval"))?;
    log::info!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}
