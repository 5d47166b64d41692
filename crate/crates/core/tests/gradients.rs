mod common;

use proptest::prelude::*;
use tdnn_kws::training::loss_and_gradients;

const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const FD_FLOOR: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-5;

#[test]
fn fifty_tiny_models_agree_with_finite_differences() {
    for seed in 0..50 {
        let (net, phone, word) = common::gradient_case(seed);
        let p = common::gradient_check(&net, &phone, FD_STEP, FD_FLOOR);
        let w = common::gradient_check(&net, &word, FD_STEP, FD_FLOOR);
        assert!(p < FD_REL_TOL, "seed {seed}: phone batch rel err {p:e}");
        assert!(w < FD_REL_TOL, "seed {seed}: word batch rel err {w:e}");
    }
}

fn descend(seed: u64, lr: f64) -> Vec<f64> {
    let (mut net, _, batch) = common::gradient_case(seed);
    let mut losses = Vec::new();
    for _ in 0..=10 {
        let (loss, g) = loss_and_gradients(&net, &batch, false).unwrap();
        losses.push(loss);
        net.sgd_step(&g, lr, false);
    }
    losses
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn small_steps_never_raise_the_full_batch_loss(seed in any::<u64>()) {
        let losses = descend(seed, 1e-3);
        for w in losses.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", losses);
        }
    }

    #[test]
    fn phone_batches_descend_too(seed in any::<u64>()) {
        let (mut net, batch, _) = common::gradient_case(seed);
        let (mut prev, _) = loss_and_gradients(&net, &batch, false).unwrap();
        for _ in 0..10 {
            let (_, g) = loss_and_gradients(&net, &batch, false).unwrap();
            net.sgd_step(&g, 1e-3, false);
            let (loss, _) = loss_and_gradients(&net, &batch, false).unwrap();
            prop_assert!(loss <= prev + 1e-12);
            prev = loss;
        }
    }
}
