//! Pilot run of the sanity suite at acceptance scale: times the twin
//! training and prints the correlation envelopes the suite asserts against.

use std::time::Instant;

use iia::sanity::{
    cascading_randomization, data_randomization, glyph_dataset, independent_randomization,
    train_classifier, TrainConfig,
};
use iia::{
    iterated_attribution, ClassSelector, Integrand, InterpolationPlan, Preset, ReferencePlan,
};
use iia_models::models::toy::sanity_cnn;
use iia_models::models::StagedCnn;
use ndarray::{Array2, ArrayD};

fn act_map(model: &StagedCnn<f64>, img: &ArrayD<f64>) -> iia::Result<Array2<f64>> {
    let plan = InterpolationPlan::preset(Preset::Act, 2, ClassSelector::Predicted)?;
    let refs = ReferencePlan::default_for(iia_models::ArchKind::Cnn);
    Ok(iterated_attribution(
        model,
        img,
        &plan,
        Integrand::ActivationGradientProduct,
        &refs,
        16,
    )?
    .values)
}

fn main() {
    let t0 = Instant::now();
    let data = glyph_dataset::<f64>(1, 40, 20);
    println!("dataset: {} train / {} test", data.train.len(), data.test.len());

    let cfg = TrainConfig::default();
    let mut model = sanity_cnn::<f64>(cfg.seed);
    let t = Instant::now();
    let acc = train_classifier(&mut model, &data.train.images, &data.train.labels, &cfg)
        .expect("true labels trainable");
    println!("true-label training: acc {acc:.3} in {:?}", t.elapsed());

    let images: Vec<ArrayD<f64>> = data.test.images[..50]
        .iter()
        .map(|im| im.clone().into_dyn())
        .collect();

    for seed in [11, 13, 97] {
        let t = Instant::now();
        let casc = cascading_randomization(&act_map, &model, &images, 4, seed).unwrap();
        println!("cascading seed {seed} ({:?}):", t.elapsed());
        for s in &casc.steps {
            println!(
                "  {:<12} mean {:+.4} std {:.4} median {:+.4} degenerate {}",
                s.label, s.rho_mean, s.rho_std, s.rho_median, s.degenerate
            );
        }
    }

    let t = Instant::now();
    let ind = independent_randomization(&act_map, &model, &images, 12).unwrap();
    println!("independent ({:?}):", t.elapsed());
    for s in &ind.steps {
        println!(
            "  {:<12} mean {:+.4} std {:.4} median {:+.4} degenerate {}",
            s.label, s.rho_mean, s.rho_std, s.rho_median, s.degenerate
        );
    }

    let t = Instant::now();
    let dr = data_randomization(&act_map, &|seed| sanity_cnn::<f64>(seed), &data, &cfg).unwrap();
    let s = &dr.steps[0];
    println!(
        "data randomization ({:?}): mean {:+.4} median {:+.4} permuted test acc {:.3}",
        t.elapsed(),
        s.rho_mean,
        s.rho_median,
        dr.permuted_test_accuracy.unwrap()
    );
    println!("total {:?}", t0.elapsed());
}
