//! Parameter-randomization sanity tests: re-initialize layer groups top-down
//! (cascading) or one at a time (independent) and measure how strongly the
//! attribution maps still agree with the original model's maps.

use iia_models::weights::visit_cnn;
use iia_models::models::StagedCnn;
use iia_models::{init, Scalar};
use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AttributionError, Result};

use super::spearman::spearman;
use super::{MapMethod, RandomizationMode, RandomizationReport, StepStat};

/// Layer groups in forward order: the first two components of each parameter
/// name (stage and layer index, or the head slot), deduplicated.
pub fn layer_groups<T: Scalar>(model: &StagedCnn<T>) -> Vec<String> {
    let mut scratch = model.clone();
    let mut groups: Vec<String> = Vec::new();
    visit_cnn(&mut scratch, &mut |name, _slot| {
        let group = name.split('.').take(2).collect::<Vec<_>>().join(".");
        if groups.last() != Some(&group) && !groups.contains(&group) {
            groups.push(group);
        }
    });
    groups
}

/// Re-initialize every parameter whose name falls under `group`, drawing from
/// the same initializer family the layer started from: He-scaled normals for
/// weight matrices and kernels, ones for normalization scales and running
/// variances, zeros for biases and running means.
fn reinit_group<T: Scalar>(model: &mut StagedCnn<T>, group: &str, rng: &mut ChaCha8Rng) {
    let prefix = format!("{group}.");
    visit_cnn(model, &mut |name, mut slot| {
        if !name.starts_with(&prefix) {
            return;
        }
        let shape = slot.shape();
        let fresh: ArrayD<T> = if shape.len() >= 2 {
            let fan_in: usize = shape[1..].iter().product();
            let sd = (2.0 / fan_in as f64).sqrt();
            ArrayD::from_shape_simple_fn(shape, || T::from_f64(sd * init::normal(rng)))
        } else if name.ends_with(".weight") || name.ends_with(".running_var") {
            ArrayD::from_elem(shape, T::from_f64(1.0))
        } else {
            ArrayD::zeros(shape)
        };
        slot.set(fresh).expect("shape preserved by construction");
    });
}

fn maps_for<T: Scalar>(
    method: &MapMethod<'_, T>,
    model: &StagedCnn<T>,
    images: &[ArrayD<T>],
) -> Result<Vec<Array2<f64>>> {
    images.iter().map(|img| method(model, img)).collect()
}

fn correlate(base: &[Array2<f64>], new: &[Array2<f64>]) -> Result<(Vec<f64>, usize)> {
    let mut rhos = Vec::with_capacity(base.len());
    let mut degenerate = 0usize;
    for (a, b) in base.iter().zip(new) {
        let s = spearman(a, b)?;
        if s.degenerate {
            degenerate += 1;
        }
        rhos.push(s.rho);
    }
    Ok((rhos, degenerate))
}

fn check_sample<T>(images: &[T]) -> Result<()> {
    if images.is_empty() {
        Err(AttributionError::InvalidArgument(
            "randomization tests need at least one image".into(),
        ))
    } else {
        Ok(())
    }
}

/// Randomize the last `depth_steps` layer groups one after another, starting
/// from the top, re-deriving maps after each step. Step 0 is the untouched
/// model, whose correlation with itself is 1 by construction.
pub fn cascading_randomization<T: Scalar>(
    method: &MapMethod<'_, T>,
    model: &StagedCnn<T>,
    images: &[ArrayD<T>],
    depth_steps: usize,
    seed: u64,
) -> Result<RandomizationReport> {
    check_sample(images)?;
    let groups = layer_groups(model);
    if depth_steps > groups.len() {
        return Err(AttributionError::InvalidArgument(format!(
            "cascading depth {depth_steps} exceeds the {} layer groups",
            groups.len()
        )));
    }
    let base = maps_for(method, model, images)?;
    let mut steps = vec![StepStat::from_rhos("original", vec![1.0; images.len()], 0)];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = model.clone();
    for group in groups.iter().rev().take(depth_steps) {
        reinit_group(&mut current, group, &mut rng);
        let maps = maps_for(method, &current, images)?;
        let (rhos, degenerate) = correlate(&base, &maps)?;
        steps.push(StepStat::from_rhos(group.clone(), rhos, degenerate));
    }
    Ok(RandomizationReport {
        mode: RandomizationMode::Cascading,
        steps,
        sample_size: images.len(),
        seed,
        permuted_test_accuracy: None,
    })
}

/// Randomize one layer group at a time, keeping all others fixed; one report
/// entry per group, top-down.
pub fn independent_randomization<T: Scalar>(
    method: &MapMethod<'_, T>,
    model: &StagedCnn<T>,
    images: &[ArrayD<T>],
    seed: u64,
) -> Result<RandomizationReport> {
    check_sample(images)?;
    let groups = layer_groups(model);
    let base = maps_for(method, model, images)?;
    let mut steps = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().rev().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(gi as u64));
        let mut twin = model.clone();
        reinit_group(&mut twin, group, &mut rng);
        let maps = maps_for(method, &twin, images)?;
        let (rhos, degenerate) = correlate(&base, &maps)?;
        steps.push(StepStat::from_rhos(group.clone(), rhos, degenerate));
    }
    Ok(RandomizationReport {
        mode: RandomizationMode::Independent,
        steps,
        sample_size: images.len(),
        seed,
        permuted_test_accuracy: None,
    })
}
