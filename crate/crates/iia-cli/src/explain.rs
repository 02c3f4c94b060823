//! `explain`: attribute one or more images and write archives plus renders.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::ArrayD;
use rayon::prelude::*;

use iia::io::{load_and_preprocess, render_heatmap, render_overlay, save_map, write_report, MetricRecord};
use iia::{AttributionMap, ClassSelector};
use iia_models::TapModel;

use crate::config::{resolve, ClassChoice, MethodId, SharedArgs};
use crate::methods::{compute_map, synthetic_image};
use crate::pipeline::build;
use crate::CliError;

pub fn run(shared: &SharedArgs, images: &[PathBuf], synthetic: bool) -> Result<(), CliError> {
    let cfg = resolve(shared, "toy_cnn", &[MethodId::Iia2])?;
    if cfg.methods.len() != 1 {
        return Err(CliError::Usage("explain takes exactly one --method".into()));
    }
    let method = cfg.methods[0];
    let model = build(&cfg)?;
    let meta = model.meta().clone();
    crate::config::check_compat(method, &meta)?;

    let selector = match cfg.class.unwrap_or(ClassChoice::Predicted) {
        ClassChoice::Predicted => ClassSelector::Predicted,
        ClassChoice::Target => ClassSelector::Target(cfg.label.ok_or_else(|| {
            CliError::Usage("--class target needs --label for raw image inputs".into())
        })?),
    };

    let mut inputs: Vec<(String, ArrayD<f32>)> = Vec::new();
    for path in images {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        inputs.push((name, load_and_preprocess(path, &meta)?));
    }
    if synthetic {
        inputs.push(("synthetic".into(), synthetic_image(&meta, cfg.seed)));
    }
    if inputs.is_empty() {
        return Err(CliError::Usage(
            "explain needs image paths or --synthetic".into(),
        ));
    }

    std::fs::create_dir_all(&cfg.out)?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let maps: iia::Result<Vec<AttributionMap>> = pool.install(|| {
        inputs
            .par_iter()
            .map_init(
                || model.clone(),
                |model, (_, image)| compute_map(model, image, method, cfg.n, selector, cfg.batch),
            )
            .collect()
    });
    let maps = maps?;
    log::info!("{} map(s) in {:?}", maps.len(), started.elapsed());

    let mut records = Vec::new();
    for ((name, image), map) in inputs.iter().zip(&maps) {
        save_map(&cfg.out.join(name), map, &cfg.model, &map.method_tag)?;
        std::fs::write(
            cfg.out.join(format!("{name}_heatmap.png")),
            render_heatmap(&map.values)?,
        )?;
        let display = image.mapv(f64::from);
        std::fs::write(
            cfg.out.join(format!("{name}_overlay.png")),
            render_overlay(&map.values, &display, &meta.preproc)?,
        )?;

        let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let abs_sum: f64 = map.values.iter().map(|v| v.abs()).sum();
        println!(
            "{name}: class {} {} min {min:.6} max {max:.6} abs_sum {abs_sum:.6}",
            map.class_index, map.method_tag
        );
        records.push(MetricRecord {
            model: cfg.model.clone(),
            method: method.name().into(),
            metric: format!("{name}/abs_sum"),
            class_selector: selector.to_string(),
            value: abs_sum,
        });
    }
    let (csv, md) = write_report(&records, &cfg.out.join("explain"))?;
    log::info!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}
