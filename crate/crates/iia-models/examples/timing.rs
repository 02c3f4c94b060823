//! Rough forward/backward timing for the big models at reduced input sizes.

use std::time::Instant;

use iia_models::{build_model, AnyModel, BuildOptions, GradRequest, TapModel, WeightInit};
use ndarray::ArrayD;

fn time_model(id: &str, hw: Option<usize>) {
    let opts = BuildOptions {
        seed: 0,
        input_hw: hw.map(|s| (s, s)),
        weights: WeightInit::Seeded,
    };
    let t0 = Instant::now();
    let model = build_model(id, &opts).unwrap();
    let built = t0.elapsed();
    let meta = model.meta().clone();
    let x = ArrayD::<f32>::from_elem(
        ndarray::IxDyn(&[meta.in_channels, meta.input_hw.0, meta.input_hw.1]),
        0.25f32,
    );
    let t1 = Instant::now();
    let mut run = model.begin(x.clone()).unwrap();
    let _ = model.finish(&mut run).unwrap();
    let fwd = t1.elapsed();
    let t2 = Instant::now();
    let want = match &model {
        AnyModel::Vit(_) => GradRequest {
            at_layer: Some(0),
            attentions_upto: Some(meta.layer_count),
        },
        _ => GradRequest::at(0),
    };
    let _ = model.backward(&run, 0, &want).unwrap();
    let bwd = t2.elapsed();
    println!(
        "{id} @{}: build {built:?} fwd {fwd:?} bwd {bwd:?}",
        meta.input_hw.0
    );
}

fn main() {
    time_model("resnet101", Some(64));
    time_model("resnet101", Some(112));
    time_model("vit_base_patch16", Some(112));
    time_model("toy_cnn", None);
}
