use perspective_core::diff::{AdamConfig, Graph, ParameterStore};
use perspective_core::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_ignores_constant_shift(
        logits in prop::collection::vec(-30.0f64..30.0, 1..8),
        shift in -100.0f64..100.0,
    ) {
        let mut g = Graph::new();
        let a = g.constant_vec(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = g.constant_vec(&shifted).unwrap();
        let pa = g.softmax(a).unwrap();
        let pb = g.softmax(b).unwrap();
        let total: f64 = g.value(pa).values().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in g.value(pa).values().iter().zip(g.value(pb).values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    /// Without moment averaging the bias-corrected step is lr·g/(|g| + ε):
    /// a sign step of size lr rather than a gradient-scaled one.
    #[test]
    fn adam_without_averaging_takes_sign_steps(
        grads in prop::collection::vec(prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0], 1..10),
        lr in 1e-4f64..1e-1,
    ) {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::vector(vec![0.0; grads.len()]));
        store.set_grad(id, &grads);
        let adam = AdamConfig { beta1: 0.0, beta2: 0.0, eps: 1e-8 };
        store.adam_step(&adam, lr, f64::INFINITY).unwrap();
        for (w, g) in store.value(id).values().iter().zip(&grads) {
            let expected = -lr * g / (g.abs() + 1e-8);
            prop_assert!((w - expected).abs() <= 1e-15 * lr.max(1.0));
            prop_assert!((w + lr * g.signum()).abs() < lr * 1e-5);
        }
    }
}

#[test]
fn clipping_scales_gradients_jointly_before_the_update() {
    let mut store = ParameterStore::new();
    let a = store.add("a", Tensor::vector(vec![0.0]));
    let b = store.add("b", Tensor::vector(vec![0.0]));
    store.set_grad(a, &[3.0]);
    store.set_grad(b, &[4.0]);
    let stats = store.adam_step(&AdamConfig::default(), 1e-3, 1.0).unwrap();
    assert_eq!(stats.grad_norm, 5.0);
    assert!(stats.clipped);
    let m: Vec<f64> = store.to_named().iter().map(|t| t.adam_m[0]).collect();
    assert!((m[0] - 0.1 * 0.6).abs() < 1e-15);
    assert!((m[1] - 0.1 * 0.8).abs() < 1e-15);
    assert_eq!(store.global_grad_norm(), 0.0);
}
