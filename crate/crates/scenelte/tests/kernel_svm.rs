//! SVM checks against the independent quadratic-programming oracle.

mod common;

use common::*;
use ndarray::Array2;
use scenelte::kernelbase::{predict_svm, smo_decision_check, train_ovo_svm};
use scenelte::seed::stream_rng;

use rand::Rng;

fn linear_points(n_per_side: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
    let mut rng = stream_rng(seed, "svm-oracle-points");
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for side in 0..2u32 {
        let offset = if side == 0 { -2.0 } else { 2.0 };
        for _ in 0..n_per_side {
            points.push(vec![offset + rng.gen_range(-0.8..0.8), rng.gen_range(-1.0..1.0)]);
            labels.push(side);
        }
    }
    (points, labels)
}

fn linear_gram(points: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), points.len()), |(i, j)| {
        points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum()
    })
}

#[test]
fn separable_set_reaches_full_accuracy_and_matches_qp_decisions() {
    let (points, labels) = linear_points(10, 11);
    let gram = linear_gram(&points);
    let cost = 5.0;
    let model = train_ovo_svm(&gram, &labels, cost, 1e-6, 1_000_000).unwrap();

    // Training accuracy 1.0.
    for i in 0..labels.len() {
        let row: Vec<f64> = (0..labels.len()).map(|j| gram[(i, j)]).collect();
        assert_eq!(predict_svm(&model, &row).unwrap(), labels[i]);
    }

    // Decision values agree with the projected-gradient QP oracle.
    let y: Vec<f64> = labels.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let kernel = |a: usize, b: usize| gram[(a, b)];
    let (alpha_smo, bias_smo) = smo_decision_check(&kernel, &y, cost, 1e-6, 1_000_000).unwrap();
    let (alpha_qp, bias_qp) = qp_svm_oracle(&kernel, &y, cost, 60_000);
    let d_smo = decision_values(&kernel, &y, &alpha_smo, bias_smo);
    let d_qp = decision_values(&kernel, &y, &alpha_qp, bias_qp);
    let mut worst: f64 = 0.0;
    for (a, b) in d_smo.iter().zip(&d_qp) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-4, "decision values diverge by {worst}");

    // Margin constraints: |alpha y| within the box.
    for m in &model.machines {
        assert!(m.coef.iter().all(|c| c.abs() <= cost + 1e-9));
    }
}

#[test]
fn duplicating_every_training_point_leaves_predictions_unchanged() {
    let (points, labels) = linear_points(8, 13);
    let gram = linear_gram(&points);
    let model = train_ovo_svm(&gram, &labels, 10.0, 1e-6, 1_000_000).unwrap();

    // Duplicate the training set and re-solve.
    let mut dup_points = points.clone();
    dup_points.extend(points.iter().cloned());
    let mut dup_labels = labels.clone();
    dup_labels.extend(labels.iter().copied());
    let dup_gram = linear_gram(&dup_points);
    let dup_model = train_ovo_svm(&dup_gram, &dup_labels, 10.0, 1e-6, 1_000_000).unwrap();

    // Predictions on a probe grid agree between the two models and with
    // the oracle solution of the duplicated problem.
    let y_dup: Vec<f64> =
        dup_labels.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let kernel_dup = |a: usize, b: usize| dup_gram[(a, b)];
    let (alpha_qp, bias_qp) = qp_svm_oracle(&kernel_dup, &y_dup, 10.0, 60_000);

    let mut rng = stream_rng(13, "svm-probes");
    for _ in 0..40 {
        let probe = [rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5)];
        let row: Vec<f64> = points
            .iter()
            .map(|p| p[0] * probe[0] + p[1] * probe[1])
            .collect();
        let dup_row: Vec<f64> = dup_points
            .iter()
            .map(|p| p[0] * probe[0] + p[1] * probe[1])
            .collect();
        let a = predict_svm(&model, &row).unwrap();
        let b = predict_svm(&dup_model, &dup_row).unwrap();
        assert_eq!(a, b, "probe {probe:?}");

        // Oracle decision on the duplicated problem: positive -> class 0.
        let oracle_decision: f64 = (0..dup_points.len())
            .map(|j| alpha_qp[j] * y_dup[j] * dup_row[j])
            .sum::<f64>()
            + bias_qp;
        if oracle_decision.abs() > 1e-3 {
            let oracle_label = if oracle_decision >= 0.0 { 0 } else { 1 };
            assert_eq!(b, oracle_label, "probe {probe:?} oracle {oracle_decision}");
        }
    }
}
