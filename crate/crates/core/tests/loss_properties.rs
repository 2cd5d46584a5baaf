use proptest::prelude::*;
use respan::loss::{
    boundary_penalty, full_loss, l1_loss, l2_loss, residual_elem, residual_elem_deriv,
    residual_loss, LossReport, RES_A, RES_B,
};
use respan::tensor::gaussian_field;
use respan::{ImageTensor, SeededGaussian};

type LossFn = fn(&ImageTensor, &ImageTensor) -> respan::Result<LossReport>;

fn full(a: &ImageTensor, b: &ImageTensor) -> respan::Result<LossReport> {
    full_loss(a, b, 3.0)
}

/// Central differences through the f32 tensor interface: perturb one element
/// by a step that is exactly representable, compare with the analytic grad.
#[test]
fn tensor_gradients_match_central_differences() {
    let losses: [(&str, LossFn); 5] = [
        ("res", residual_loss),
        ("l1", l1_loss),
        ("l2", l2_loss),
        ("penalty", boundary_penalty),
        ("full", full),
    ];
    let mut rng = SeededGaussian::new(42);
    let step = 1.0 / 1024.0;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let e0 = gaussian_field(&mut rng, (2, 3, 3), 0.0, 0.4).unwrap();
        let pred = gaussian_field(&mut rng, (2, 3, 3), 0.0, 0.9).unwrap();
        let (lo, hi) = (e0.min() as f64, e0.max() as f64);
        for (name, f) in losses {
            let an = f(&pred, &e0).unwrap();
            for i in 0..pred.len() {
                let p = pred.data()[i] as f64;
                let h = e0.data()[i] as f64 - p;
                let near = |x: f64| x.abs() < 2.0 * step;
                if near(h.abs() - 1.0) || near(h) || near(p - lo) || near(p - hi) {
                    continue;
                }
                // Divide by the perturbation actually stored in f32.
                let eval = |d: f64| {
                    let mut v = pred.data().to_vec();
                    v[i] = (p + d) as f32;
                    let x = v[i] as f64;
                    (
                        f(&ImageTensor::new(2, 3, 3, v).unwrap(), &e0)
                            .unwrap()
                            .value,
                        x,
                    )
                };
                let ((up, xu), (down, xd)) = (eval(step), eval(-step));
                let fd = (up - down) / (xu - xd);
                let g = an.grad[i];
                // Piecewise-smooth losses: curvature error is O(step^2).
                let tol = 1e-5 * g.abs().max(fd.abs()) + 2e-7;
                assert!(
                    (g - fd).abs() <= tol,
                    "{name} case {case} elem {i}: {g} vs {fd}, h={h}, p={p}, lo={lo}, hi={hi}"
                );
                worst = worst.max((g - fd).abs());
            }
        }
    }
    assert!(worst < 1e-5);
}

#[test]
fn seam_and_reference_points() {
    let inner = 2.0 - (-1.0f64).exp();
    assert!((inner - 1.632_120_558_828_557_7).abs() < 1e-15);
    assert!(((1.0 + RES_A).powi(2) + RES_B - inner).abs() < 1e-12);
    assert!((2.0 * (1.0 + RES_A) - (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((residual_elem(2.0) - 4.0).abs() < 1e-12);
    assert!((residual_elem(-2.0) - 4.0).abs() < 1e-12);
    assert!((residual_elem_deriv(0.5) - 1.606_530_659_712_633_4).abs() < 1e-12);
}

#[test]
fn penalty_reference_case() {
    let e0 = ImageTensor::new(1, 1, 4, vec![-0.2, 0.0, 0.1, 0.4]).unwrap();
    let pred = ImageTensor::filled(1, 1, 4, 0.5);
    let p = boundary_penalty(&pred, &e0).unwrap();
    assert!((p.value - 0.1).abs() < 1e-7);
    assert!(p.grad.iter().all(|&g| g == 0.25));
    let f = full_loss(&pred, &e0, 10_000.0).unwrap();
    let r = residual_loss(&pred, &e0).unwrap();
    assert!((f.value - (r.value + 1000.0)).abs() < 1e-3);
    let zero = full_loss(&pred, &e0, 0.0).unwrap();
    assert_eq!(zero.value, r.value);
    assert!(full_loss(&pred, &e0, -1.0).is_err());
}

#[test]
fn gradient_magnitudes_at_half() {
    let e0 = ImageTensor::filled(1, 1, 2, 0.5);
    let pred = ImageTensor::zeros(1, 1, 2);
    let n = 2.0;
    let l2 = l2_loss(&pred, &e0).unwrap();
    let l1 = l1_loss(&pred, &e0).unwrap();
    let res = residual_loss(&pred, &e0).unwrap();
    assert!((l2.grad[0] + 1.0 / n).abs() < 1e-12);
    assert!((l1.grad[0] + 1.0 / n).abs() < 1e-12);
    assert!((res.grad[0] + (1.0 + (-0.5f64).exp()) / n).abs() < 1e-12);
}

proptest! {
    #[test]
    fn residual_is_even_monotone_and_zero_only_at_zero(h in -5.0f64..5.0, d in 0.0f64..1.0) {
        prop_assert_eq!(residual_elem(h), residual_elem(-h));
        prop_assert!(residual_elem(h.abs() + d) >= residual_elem(h));
        prop_assert!(residual_elem(h) >= 0.0);
        if h != 0.0 {
            prop_assert!(residual_elem(h) > 0.0);
        }
    }

    #[test]
    fn identical_inputs_cost_nothing(seed in 0u64..1000) {
        let t = gaussian_field(&mut SeededGaussian::new(seed), (2, 4, 4), 0.0, 1.0).unwrap();
        for f in [residual_loss as LossFn, l1_loss, l2_loss, boundary_penalty, full] {
            let r = f(&t, &t).unwrap();
            prop_assert_eq!(r.value, 0.0);
            prop_assert!(r.grad.iter().all(|&g| g == 0.0));
        }
    }
}
