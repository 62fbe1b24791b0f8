use super::*;
use crate::tensor::grad_check;

const E: f64 = std::f64::consts::E;

#[test]
fn temperature_softmax_is_uniform_on_equal_logits() {
    for t in [0.5, 1.0, 3.0, 10.0] {
        let out = temperature_softmax(&[1.0, 1.0, 1.0, 1.0], t).unwrap();
        for v in out {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn temperature_softmax_closed_forms() {
    // [3,1] at T=1: [e^2/(e^2+1), 1/(e^2+1)]
    let out = temperature_softmax(&[3.0, 1.0], 1.0).unwrap();
    let e2 = E * E;
    assert!((out[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
    assert!((out[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);
    assert!((out[0] - 0.88080).abs() < 5e-6);
    assert!((out[1] - 0.11920).abs() < 5e-6);

    // [3,1] at T=2: [e/(e+1), 1/(e+1)] = logistic(1)
    let out = temperature_softmax(&[3.0, 1.0], 2.0).unwrap();
    assert!((out[0] - E / (E + 1.0)).abs() < 1e-15);
    assert!((out[0] - 0.73106).abs() < 5e-6);
    assert!((out[1] - 0.26894).abs() < 5e-6);
}

#[test]
fn temperature_zero_is_argmax_one_hot() {
    assert_eq!(temperature_softmax(&[5.0, 1.0, 0.0], 0.0).unwrap(), vec![1.0, 0.0, 0.0]);
    // Ties resolve to the lowest index.
    assert_eq!(temperature_softmax(&[2.0, 7.0, 7.0], 0.0).unwrap(), vec![0.0, 1.0, 0.0]);
}

#[test]
fn temperature_softmax_rejects_bad_inputs() {
    assert!(matches!(
        temperature_softmax(&[f64::NAN, 0.0], 1.0),
        Err(DistillError::Numerics { .. })
    ));
    assert!(matches!(
        temperature_softmax(&[1.0], -1.0),
        Err(DistillError::Numerics { .. })
    ));
}

#[test]
fn softmax_sums_to_one_and_preserves_argmax() {
    let logits = [0.4, -2.0, 3.5, 3.0, 0.0];
    for t in [0.1, 0.5, 1.0, 2.0, 6.0, 50.0] {
        let p = temperature_softmax(&logits, t).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let argmax = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2, "argmax moved at T={t}");
    }
}

#[test]
fn higher_temperature_flattens_the_distribution() {
    let logits = [0.4, -2.0, 3.5, 3.0, 0.0];
    let mut last_max = 1.0;
    for t in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let p = temperature_softmax(&logits, t).unwrap();
        let max = p.iter().cloned().fold(0.0, f64::max);
        assert!(max <= last_max + 1e-15, "max entry grew from {last_max} to {max} at T={t}");
        last_max = max;
    }
}

#[test]
fn soft_ce_self_match_equals_entropy() {
    // Uniform teacher over 4: entropy ln 4.
    let teacher = [2.0, 2.0, 2.0, 2.0];
    let loss = soft_loss_ce(&teacher, &teacher, 1.0).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    assert!((loss - 1.38629).abs() < 5e-6);
}

#[test]
fn soft_ce_closed_form_uniform_student() {
    let loss = soft_loss_ce(&[3.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);
    assert!((loss - 0.69315).abs() < 5e-6);
}

#[test]
fn soft_ce_gradient_matches_finite_differences() {
    let teacher = [1.5, -0.5, 0.25, 2.0];
    let cfg = LossConfig { alpha: 1.0, temperature: 3.0, soft_loss: SoftLossKind::CrossEntropy };
    let student = [0.3, 0.1, -0.8, 0.4];
    let err = grad_check(
        |tape, id| {
            combined_loss_on(tape, &cfg, &[1, 0, 0, 0], Some(&teacher), id)
                .map_err(|_| crate::tensor::TensorError::NonFinite { op: "loss" })
        },
        (&student, &[4]),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "soft CE grad error {err}");
}

#[test]
fn soft_mse_is_zero_on_identical_logits() {
    let logits = [0.5, -1.0, 2.0];
    for t in [1.0, 3.0] {
        assert!(soft_loss_mse(&logits, &logits, t).unwrap() < 1e-30);
    }
}

#[test]
fn soft_mse_saturated_student_approaches_half() {
    // Uniform teacher over 2 against a (near) one-hot student.
    let loss = soft_loss_mse(&[1.0, 1.0], &[20.0, -20.0], 1.0).unwrap();
    assert!((loss - 0.5).abs() < 1e-9, "got {loss}");
}

#[test]
fn soft_mse_matches_direct_recomputation() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let teacher: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let student: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let t = 2.0;

    // Independent recomputation with a plain unstabilized softmax.
    let soften = |logits: &[f64]| -> Vec<f64> {
        let exps: Vec<f64> = logits.iter().map(|&v| (v / t).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    };
    let tt = soften(&teacher);
    let pp = soften(&student);
    let expected: f64 = tt.iter().zip(&pp).map(|(a, b)| (a - b) * (a - b)).sum();

    let got = soft_loss_mse(&teacher, &student, t).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn hard_loss_closed_forms() {
    // Single positive, all mass on it.
    let mut logits = vec![-30.0; 10];
    logits[3] = 30.0;
    let mut labels = vec![0u8; 10];
    labels[3] = 1;
    assert!(hard_loss(&labels, &logits).unwrap() < 1e-9);

    // Single positive, uniform student over C=10.
    let loss = hard_loss(&labels, &vec![0.0; 10]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
    assert!((loss - 2.30259).abs() < 5e-6);

    // Two positives, uniform student over C=4.
    let loss = hard_loss(&[1, 1, 0, 0], &[0.0; 4]).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn hard_loss_rejects_all_zero_labels() {
    assert!(matches!(hard_loss(&[0, 0], &[0.0, 0.0]), Err(DistillError::Label { .. })));
}

#[test]
fn combined_loss_boundaries_and_mix() {
    let labels = [0u8, 1, 0, 0];
    let teacher = [0.2, 1.4, -0.3, 0.9];
    let student = [0.1, 0.5, -0.2, 0.0];

    let at = |alpha: f64, kind: SoftLossKind, t: f64| {
        combined_loss(
            &LossConfig { alpha, temperature: t, soft_loss: kind },
            &labels,
            Some(&teacher),
            &student,
        )
        .unwrap()
    };

    // alpha 0: exactly the hard loss, teacher ignored.
    let no_teacher = combined_loss(
        &LossConfig { alpha: 0.0, temperature: 3.0, soft_loss: SoftLossKind::CrossEntropy },
        &labels,
        None,
        &student,
    )
    .unwrap();
    assert_eq!(at(0.0, SoftLossKind::CrossEntropy, 3.0), no_teacher);
    assert_eq!(no_teacher, hard_loss(&labels, &student).unwrap());

    // alpha 1: exactly the chosen soft loss.
    assert_eq!(
        at(1.0, SoftLossKind::MeanSquaredError, 3.0),
        soft_loss_mse(&teacher, &student, 3.0).unwrap()
    );

    // The paper's best LSTM mix: alpha 0.2, T 3, MSE.
    let mixed = at(0.2, SoftLossKind::MeanSquaredError, 3.0);
    let expected = 0.2 * soft_loss_mse(&teacher, &student, 3.0).unwrap()
        + 0.8 * hard_loss(&labels, &student).unwrap();
    assert_eq!(mixed, expected);
}

#[test]
fn combined_loss_is_affine_in_alpha() {
    let labels = [1u8, 0, 0];
    let teacher = [2.0, 0.0, -1.0];
    let student = [0.4, 0.3, 0.2];
    let soft = soft_loss_ce(&teacher, &student, 2.0).unwrap();
    let hard = hard_loss(&labels, &student).unwrap();
    for alpha in [0.1, 0.25, 0.5, 0.65, 0.9] {
        let cfg =
            LossConfig { alpha, temperature: 2.0, soft_loss: SoftLossKind::CrossEntropy };
        let loss = combined_loss(&cfg, &labels, Some(&teacher), &student).unwrap();
        assert_eq!(loss, alpha * soft + (1.0 - alpha) * hard);
    }
}

#[test]
fn alpha_positive_without_cache_is_an_error() {
    let cfg = LossConfig { alpha: 0.5, temperature: 1.0, soft_loss: SoftLossKind::CrossEntropy };
    assert!(matches!(
        combined_loss(&cfg, &[1, 0], None, &[0.0, 0.0]),
        Err(DistillError::Cache { .. })
    ));
}

#[test]
fn soft_ce_lower_bounded_by_teacher_entropy() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let teacher: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let student: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = rng.gen_range(0.5..4.0);
        let loss = soft_loss_ce(&teacher, &student, t).unwrap();
        let target = temperature_softmax(&teacher, t).unwrap();
        let entropy: f64 = -target.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!(loss >= entropy - 1e-9);

        // Equality iff the softened distributions match.
        let self_loss = soft_loss_ce(&teacher, &teacher, t).unwrap();
        assert!((self_loss - entropy).abs() < 1e-9);
    }
}

#[test]
fn experiment_config_round_trips_with_spec_field_names() {
    let text = r#"{"alpha":0.2,"temperature":3.0,"soft_loss":"mse","student":"lstm",
                   "epochs":4,"lr":0.001,"batch_size":8,"seed":7,"data_fraction":0.1}"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.alpha, 0.2);
    assert_eq!(cfg.soft_loss, SoftLossKind::MeanSquaredError);
    assert_eq!(cfg.student, StudentVariant::Lstm);
    assert_eq!(cfg.data_fraction, 0.1);
    let back = serde_json::to_string(&cfg).unwrap();
    assert!(back.contains("\"soft_loss\":\"mse\""));
    assert!(back.contains("\"student\":\"lstm\""));
}
