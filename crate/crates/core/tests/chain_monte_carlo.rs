use respan::chain::{
    forward_step, forward_step_scalar, make_training_sample, posterior, sample, sample_traced,
    Predictor,
};
use respan::datagen::{generate_scene, SceneConfig};
use respan::{
    build_schedule, ConditionSet, ImageTensor, ScheduleConfig, ScheduleTable, SeededGaussian,
};

fn tab() -> ScheduleTable {
    build_schedule(&ScheduleConfig::default()).unwrap()
}

#[test]
fn iterated_chain_forgets_e0_at_t_max() {
    let tab = tab();
    let mut rng = SeededGaussian::new(9);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let mut e = 0.8;
        for t in 1..=15 {
            e = forward_step_scalar(e, 0.8, t, &tab, &mut rng).unwrap();
        }
        sum += e;
    }
    assert!((sum / n as f64).abs() < 0.02 * tab.kappa());
}

#[test]
fn tensor_step_without_drift_is_pure_diffusion() {
    let tab = tab();
    let prev = ImageTensor::filled(1, 2, 2, 0.25);
    let zero = ImageTensor::zeros(1, 2, 2);
    let mut a = SeededGaussian::new(4);
    let mut b = SeededGaussian::new(4);
    let next = forward_step(&prev, &zero, 6, &tab, &mut a).unwrap();
    let sd = tab.alpha(6).sqrt();
    for &v in next.data() {
        let expect = 0.25 + sd * b.normal();
        assert!((v as f64 - expect).abs() < 1e-6);
    }
}

#[test]
fn training_steps_are_uniform() {
    let tab = tab();
    let x0 = ImageTensor::filled(1, 1, 1, 0.6);
    let xt = ImageTensor::filled(1, 1, 1, 0.4);
    let mut rng = SeededGaussian::new(1);
    let n = 100_000;
    let mut counts = [0usize; 16];
    for _ in 0..n {
        counts[make_training_sample(&x0, &xt, &tab, &mut rng).unwrap().t] += 1;
    }
    assert_eq!(counts[0], 0);
    let p = 1.0 / 15.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for &c in &counts[1..] {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn equal_inputs_give_pure_noise_latents() {
    let tab = tab();
    let x = ImageTensor::filled(2, 3, 3, 0.5);
    let s = make_training_sample(&x, &x, &tab, &mut SeededGaussian::new(8)).unwrap();
    assert!(s.e0.data().iter().all(|&v| v == 0.0));
    let again = make_training_sample(&x, &x, &tab, &mut SeededGaussian::new(8)).unwrap();
    assert_eq!(s, again);
    let recon = s.x_t.sub(&x).unwrap();
    for (a, b) in recon.data().iter().zip(s.e_t.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

struct Zero;

impl Predictor for Zero {
    fn predict(
        &self,
        x_t: &ImageTensor,
        _: &ConditionSet,
        _: usize,
        _: usize,
    ) -> respan::Result<ImageTensor> {
        Ok(ImageTensor::zeros_like(x_t))
    }
}

#[test]
fn zero_predictor_is_unbiased() {
    let tab = tab();
    let lrms = ImageTensor::filled(1, 2, 2, 0.5);
    let pan = ImageTensor::filled(1, 2, 2, 0.5);
    let cond = ConditionSet::build(&lrms, &pan).unwrap();
    let mut rng = SeededGaussian::new(3);
    let runs = 10_000;
    let mut mean = 0.0f64;
    for _ in 0..runs {
        let out = sample(&lrms, &cond, &Zero, &tab, &mut rng).unwrap();
        mean += out.x0_hat.sub(&lrms).unwrap().band_mean()[0] / runs as f64;
    }
    assert!(mean.abs() < 0.01);
}

#[test]
fn latent_identity_holds_along_the_chain() {
    let tab = tab();
    let scene = generate_scene(&SceneConfig {
        size: 16,
        ..Default::default()
    })
    .unwrap();
    let cond = ConditionSet::build(&scene.lrms, &scene.pan).unwrap();
    let mut steps = Vec::new();
    sample_traced(
        &scene.lrms,
        &cond,
        &Zero,
        &tab,
        &mut SeededGaussian::new(0),
        |s| {
            let back = s.x_t.sub(&s.e_t).unwrap();
            let err = back
                .data()
                .iter()
                .zip(scene.lrms.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(err < 1e-6, "t={} err={err}", s.t);
            steps.push(s.t);
        },
    )
    .unwrap();
    assert_eq!(steps, (0..=15).rev().collect::<Vec<_>>());
}

#[test]
fn posterior_std_vanishes_only_at_first_step() {
    let tab = tab();
    let e = ImageTensor::filled(1, 1, 1, 0.1);
    for t in 1..=15 {
        let p = posterior(&e, &e, t, &tab).unwrap();
        assert_eq!(p.std == 0.0, t == 1);
    }
    assert!(posterior(&e, &e, 0, &tab).is_err());
    assert!(posterior(&e, &e, 16, &tab).is_err());
}
