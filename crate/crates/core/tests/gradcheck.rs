mod common;

use chromavit::fusion::FusionModel;
use chromavit::nn::{Parameterized, Real};
use common::ops::*;
use common::*;

#[test]
fn every_op_matches_central_differences_f64() {
    for &name in OPS {
        let err = check_case::<f64>(&op_inputs(name), &|t, v| build_op(name, t, v), 1e-6);
        assert!(err <= 1e-3, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_op_matches_central_differences_f32() {
    // Perturbing raw probabilities by 1e-2 breaks row normalization, so the
    // f32 pass covers crossentropy through softmax only.
    for &name in OPS.iter().filter(|&&n| n != "crossentropy") {
        let err = check_case::<f32>(&op_inputs(name), &|t, v| build_op(name, t, v), 1e-2);
        assert!(err <= 1e-2, "{name}: relative error {err:e}");
    }
}

#[test]
fn toy_fused_model_is_small() {
    let model = FusionModel::<f64>::new(&gradcheck_config(), 1).unwrap();
    assert!(model.param_count() <= 10_000, "{}", model.param_count());
}

fn end_to_end<T: Real>(seed: u64) -> FusionModel<T> {
    let mut model = FusionModel::<T>::new(&gradcheck_config(), seed).unwrap();
    model.set_backbone_mode(chromavit::fusion::BackboneMode::EndToEnd);
    model
}

#[test]
fn toy_fused_model_gradients_f64() {
    let model = end_to_end::<f64>(3);
    let (name, err) = check_model(&model, &model, &random_inputs(model.config(), 2, 5), 1e-5);
    assert!(err <= 1e-3, "{name}: relative error {err:e}");
}

#[test]
fn toy_fused_model_gradients_f32() {
    // f32 losses carry ~1e-7 relative rounding, which swamps f32 differences
    // of small gradients; the reference differences are taken on the same
    // parameters widened to f64.
    let model = end_to_end::<f32>(3);
    let (name, err) = check_model(
        &model,
        &model.cast::<f64>(),
        &random_inputs(model.config(), 2, 5),
        1e-5,
    );
    assert!(err <= 1e-2, "{name}: relative error {err:e}");
}
