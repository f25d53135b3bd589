mod common;

use common::{example, mixed_items, small_model};
use vlnie_iedl::Batch;

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
/// Below this magnitude a gradient entry is compared absolutely.
const FLOOR: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut model = small_model(11);
    let batch = Batch { items: mixed_items() };
    let (_, grads) = model.gradients(&batch).unwrap();
    let names: Vec<String> = model.specs().iter().map(|s| s.name.clone()).collect();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for p in 0..grads.len() {
        for i in 0..grads[p].data.len() {
            let original = model.params()[p].data[i];
            model.params_mut()[p].data[i] = original + STEP;
            let up = model.batch_loss(&batch).unwrap();
            model.params_mut()[p].data[i] = original - STEP;
            let down = model.batch_loss(&batch).unwrap();
            model.params_mut()[p].data[i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(grads[p].data[i], numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]: analytic {} numeric {numeric}", names[p], grads[p].data[i]));
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
    assert!(worst.0 <= TOLERANCE, "relative error {} at {}", worst.0, worst.1);
}

#[test]
fn zero_loss_weights_give_zero_gradients() {
    let mut model = small_model(2);
    model.config.detection_weight = 0.0;
    model.config.localization_weight = 0.0;
    let (loss, grads) = model.gradients(&Batch { items: mixed_items() }).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.data.iter().all(|&x| x == 0.0)));
}

#[test]
fn empty_instruction_leaves_instruction_side_parameters_untouched() {
    let model = small_model(4);
    let batch = Batch { items: vec![example("e", &[], &[&[1, 2], &[3]], &[])] };
    let (loss, grads) = model.gradients(&batch).unwrap();
    assert!(loss.is_finite());
    for (spec, g) in model.specs().iter().zip(&grads) {
        let untouched = spec.name == "token_embedding"
            || [".cross.query.", ".cross.key.", ".cross.value."].iter().any(|s| spec.name.contains(s));
        if untouched {
            assert!(g.data.iter().all(|&x| x == 0.0), "{} has gradient", spec.name);
        }
    }
}
