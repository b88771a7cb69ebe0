//! Chi-square kernel baseline classifier.
//!
//! Average-pooled LTE vectors are compared with the chi-square distance
//! D(u, v) = 1/2 sum (u_i - v_i)^2 / (u_i + v_i). Channels fuse through the
//! extended Gaussian kernel K(x_i, x_j) = exp(-sum_k D_k / Dbar_k), where
//! Dbar_k is the mean pairwise training distance of channel k; a
//! single-channel system is the same kernel with one term. Classification
//! is one-vs-one SVM on the precomputed Gram matrix, solved by an SMO-style
//! maximal-violating-pair method.

use crate::error::{Error, Result};
use crate::seed::derive_seed_from_ids;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Chi-square distance between nonnegative vectors; terms with a zero
/// denominator contribute zero.
pub fn chi2_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in u.iter().zip(v).enumerate() {
        if a < 0.0 {
            return Err(Error::NegativeEntry { index: i, value: a });
        }
        if b < 0.0 {
            return Err(Error::NegativeEntry { index: i, value: b });
        }
        let denom = a + b;
        if denom > 0.0 {
            let diff = a - b;
            acc += diff * diff / denom;
        }
    }
    Ok(0.5 * acc)
}

/// Mean chi-square distance over all unordered training pairs.
pub fn mean_train_distance(vectors: &[Vec<f64>]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += chi2_distance(&vectors[i], &vectors[j])?;
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

/// Per-channel normalizers of the fusion kernel, computed on training data.
#[derive(Debug, Clone)]
pub struct FusionSpec {
    pub mean_distances: Vec<f64>,
}

impl FusionSpec {
    pub fn new(mean_distances: Vec<f64>) -> Result<Self> {
        for &d in &mean_distances {
            if !(d > 0.0) {
                return Err(Error::NonPositiveMeanDistance(d));
            }
        }
        if mean_distances.is_empty() {
            return Err(Error::InvalidConfig("fusion spec needs >= 1 channel".into()));
        }
        Ok(Self { mean_distances })
    }

    /// Estimate the per-channel mean distances from training descriptors.
    /// `channels[k][i]` is the channel-k descriptor of training instance i.
    pub fn from_training(channels: &[Vec<Vec<f64>>]) -> Result<Self> {
        let means = channels
            .iter()
            .map(|vecs| mean_train_distance(vecs))
            .collect::<Result<Vec<f64>>>()?;
        Self::new(means)
    }
}

/// Extended Gaussian chi-square kernel between two multi-channel descriptors.
pub fn fusion_kernel(xi: &[&[f64]], xj: &[&[f64]], spec: &FusionSpec) -> Result<f64> {
    if xi.len() != spec.mean_distances.len() || xj.len() != spec.mean_distances.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.mean_distances.len(),
            got: xi.len().min(xj.len()),
        });
    }
    let mut exponent = 0.0;
    for ((u, v), &dbar) in xi.iter().zip(xj).zip(&spec.mean_distances) {
        if !(dbar > 0.0) {
            return Err(Error::NonPositiveMeanDistance(dbar));
        }
        exponent += chi2_distance(u, v)? / dbar;
    }
    Ok((-exponent).exp())
}

/// Full training Gram matrix of the fusion kernel.
pub fn build_gram(channels: &[Vec<Vec<f64>>], spec: &FusionSpec) -> Result<Array2<f64>> {
    let n = channels
        .first()
        .map(|c| c.len())
        .ok_or_else(|| Error::InvalidConfig("no channels".into()))?;
    for c in channels {
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
    }
    let mut gram = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let xi: Vec<&[f64]> = channels.iter().map(|c| c[i].as_slice()).collect();
            let xj: Vec<&[f64]> = channels.iter().map(|c| c[j].as_slice()).collect();
            let k = fusion_kernel(&xi, &xj, spec)?;
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }
    Ok(gram)
}

/// Kernel values of one probe against every training instance.
pub fn gram_row(
    train_channels: &[Vec<Vec<f64>>],
    probe: &[&[f64]],
    spec: &FusionSpec,
) -> Result<Vec<f64>> {
    let n = train_channels[0].len();
    (0..n)
        .map(|i| {
            let xi: Vec<&[f64]> = train_channels.iter().map(|c| c[i].as_slice()).collect();
            fusion_kernel(&xi, probe, spec)
        })
        .collect()
}

/// One binary machine of the one-vs-one decomposition.
#[derive(Debug, Clone)]
pub struct PairMachine {
    /// Class mapped to +1 decisions.
    pub positive: u32,
    /// Class mapped to -1 decisions.
    pub negative: u32,
    /// Indices into the training set with nonzero dual coefficient.
    pub support: Vec<usize>,
    /// alpha_i * y_i for each support index.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl PairMachine {
    /// Decision value from kernel evaluations against the training set.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&i, &c)| c * kernel_row[i])
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone)]
pub struct SvmModel {
    pub classes: Vec<u32>,
    pub machines: Vec<PairMachine>,
    pub cost: f64,
}

/// Train C(C-1)/2 pairwise SVMs on a precomputed Gram matrix.
pub fn train_ovo_svm(
    gram: &Array2<f64>,
    labels: &[u32],
    cost: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SvmModel> {
    let n = labels.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::NotSquare(gram.nrows(), gram.ncols()));
    }
    check_symmetric(gram)?;
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabelSet(classes.len()));
    }
    let pairs: Vec<(u32, u32)> = classes
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| classes[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let machines = pairs
        .par_iter()
        .map(|&(a, b)| train_pair(gram, labels, a, b, cost, tol, max_iter))
        .collect::<Result<Vec<PairMachine>>>()?;
    Ok(SvmModel { classes, machines, cost })
}

fn check_symmetric(gram: &Array2<f64>) -> Result<()> {
    for i in 0..gram.nrows() {
        for j in (i + 1)..gram.ncols() {
            let diff = (gram[(i, j)] - gram[(j, i)]).abs();
            if diff > 1e-8 {
                return Err(Error::AsymmetricGram { i, j, diff });
            }
        }
    }
    Ok(())
}

fn train_pair(
    gram: &Array2<f64>,
    labels: &[u32],
    positive: u32,
    negative: u32,
    cost: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PairMachine> {
    let members: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == positive || labels[i] == negative)
        .collect();
    let y: Vec<f64> = members
        .iter()
        .map(|&i| if labels[i] == positive { 1.0 } else { -1.0 })
        .collect();
    let sub_kernel = |a: usize, b: usize| gram[(members[a], members[b])];
    let (alpha, bias) = smo_solve(&sub_kernel, &y, cost, tol, max_iter, |_| {})?;
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (k, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(members[k]);
            coef.push(a * y[k]);
        }
    }
    Ok(PairMachine { positive, negative, support, coef, bias })
}

/// SMO with maximal-violating-pair working-set selection on a kernel oracle.
///
/// Minimizes 1/2 a'Qa - sum(a) with Q_ij = y_i y_j K_ij subject to
/// 0 <= a <= C and sum(y a) = 0, stopping when the KKT gap m - M drops to
/// `tol`. `on_iter` observes the dual objective after every update (the
/// objective is non-decreasing).
pub(crate) fn smo_solve(
    kernel: &dyn Fn(usize, usize) -> f64,
    y: &[f64],
    cost: f64,
    tol: f64,
    max_iter: usize,
    mut on_iter: impl FnMut(f64),
) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut alpha = vec![0.0f64; n];
    // G_i = d f / d alpha_i; starts at -1 for alpha = 0.
    let mut grad = vec![-1.0f64; n];
    let mut dual = 0.0f64;

    let mut last_gap = f64::INFINITY;
    for _ in 0..max_iter {
        // Maximal violating pair.
        let mut m = f64::NEG_INFINITY;
        let mut m_idx = usize::MAX;
        let mut mm = f64::INFINITY;
        let mut mm_idx = usize::MAX;
        for i in 0..n {
            let v = -y[i] * grad[i];
            let in_up = (y[i] > 0.0 && alpha[i] < cost) || (y[i] < 0.0 && alpha[i] > 0.0);
            let in_low = (y[i] > 0.0 && alpha[i] > 0.0) || (y[i] < 0.0 && alpha[i] < cost);
            if in_up && v > m {
                m = v;
                m_idx = i;
            }
            if in_low && v < mm {
                mm = v;
                mm_idx = i;
            }
        }
        last_gap = m - mm;
        if last_gap <= tol {
            let bias = (m + mm) / 2.0;
            return Ok((alpha, bias));
        }
        let (i, j) = (m_idx, mm_idx);

        // Step along the direction that raises y_i a_i and lowers y_j a_j.
        let quad = (kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j)).max(1e-12);
        let mut t = (m - mm) / quad;
        let cap_i = if y[i] > 0.0 { cost - alpha[i] } else { alpha[i] };
        let cap_j = if y[j] > 0.0 { alpha[j] } else { cost - alpha[j] };
        t = t.min(cap_i).min(cap_j);

        // Exact objective decrease of the two-variable subproblem.
        dual += (m - mm) * t - 0.5 * quad * t * t;

        alpha[i] += y[i] * t;
        alpha[j] -= y[j] * t;
        for (k, g) in grad.iter_mut().enumerate() {
            *g += y[k] * t * (kernel(k, i) - kernel(k, j));
        }
        on_iter(dual);
    }
    Err(Error::SmoNonConvergence { max_iter, residual: last_gap })
}

/// Solve one binary SVM dual on a kernel oracle; returns the dual
/// variables and the bias. `y` entries must be +1 or -1. Exposed so
/// external checks can compare decision values against an independent
/// quadratic-programming solution.
pub fn smo_decision_check(
    kernel: &dyn Fn(usize, usize) -> f64,
    y: &[f64],
    cost: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    smo_solve(kernel, y, cost, tol, max_iter, |_| {})
}

/// Majority vote over pairwise machines; ties (in vote count) resolve by
/// the summed absolute decision margins, then by class order.
pub fn predict_svm(model: &SvmModel, kernel_row: &[f64]) -> Result<u32> {
    let mut votes: std::collections::HashMap<u32, (usize, f64)> = model
        .classes
        .iter()
        .map(|&c| (c, (0usize, 0.0f64)))
        .collect();
    for machine in &model.machines {
        let d = machine.decision(kernel_row);
        let winner = if d >= 0.0 { machine.positive } else { machine.negative };
        let entry = votes.get_mut(&winner).expect("classes cover machines");
        entry.0 += 1;
        entry.1 += d.abs();
    }
    let mut best: Option<(u32, usize, f64)> = None;
    for &c in &model.classes {
        let (v, margin) = votes[&c];
        let replace = match best {
            None => true,
            Some((_, bv, bm)) => v > bv || (v == bv && margin > bm),
        };
        if replace {
            best = Some((c, v, margin));
        }
    }
    Ok(best.expect("at least one class").0)
}

/// Pick the SVM cost from a grid by stratified k-fold cross-validation on
/// the training Gram. Ties resolve to the smaller cost.
pub fn tune_cost(
    gram: &Array2<f64>,
    labels: &[u32],
    grid: &[f64],
    folds: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty cost grid".into()));
    }
    let n = labels.len();
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let min_class = classes
        .iter()
        .map(|&c| labels.iter().filter(|&&l| l == c).count())
        .min()
        .unwrap_or(0);
    let k = folds.min(min_class).max(2);
    if min_class < 2 {
        return Err(Error::InvalidConfig(
            "cost tuning needs >= 2 instances per class".into(),
        ));
    }

    let mut fold_of = vec![0usize; n];
    for &c in &classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let stream = derive_seed_from_ids(seed, "cost-folds", &members);
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }

    let mut best: Option<(f64, f64)> = None; // (accuracy, cost)
    for &cost in grid {
        let mut correct = 0usize;
        let mut total = 0usize;
        for fold in 0..k {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let eval: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            if eval.is_empty() {
                continue;
            }
            let sub_gram = Array2::from_shape_fn((train.len(), train.len()), |(a, b)| {
                gram[(train[a], train[b])]
            });
            let sub_labels: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
            let model = train_ovo_svm(&sub_gram, &sub_labels, cost, tol, max_iter)?;
            for &e in &eval {
                let row: Vec<f64> = train.iter().map(|&t| gram[(e, t)]).collect();
                if predict_svm(&model, &row)? == labels[e] {
                    correct += 1;
                }
            }
            total += eval.len();
        }
        let acc = correct as f64 / total.max(1) as f64;
        let replace = match best {
            None => true,
            Some((ba, bc)) => acc > ba || (acc == ba && cost < bc),
        };
        if replace {
            best = Some((acc, cost));
        }
    }
    Ok(best.expect("grid nonempty").1)
}

/// Default logarithmic cost grid 2^-3 .. 2^7.
pub fn default_cost_grid() -> Vec<f64> {
    (-3..=7).map(|e| 2f64.powi(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn chi2_of_identical_vectors_is_zero() {
        let u = vec![0.2, 0.5, 0.3];
        assert_eq!(chi2_distance(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn chi2_of_disjoint_unit_masses_is_one() {
        assert_abs_diff_eq!(
            chi2_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn chi2_is_symmetric_nonnegative_and_zero_iff_equal() {
        let mut rng = crate::seed::stream_rng(1, "chi2");
        for _ in 0..1000 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let duv = chi2_distance(&u, &v).unwrap();
            let dvu = chi2_distance(&v, &u).unwrap();
            assert_abs_diff_eq!(duv, dvu, epsilon = 1e-12);
            assert!(duv >= 0.0);
            if duv == 0.0 {
                assert_eq!(u, v);
            }
        }
    }

    #[test]
    fn chi2_rejects_negative_entries() {
        assert!(matches!(
            chi2_distance(&[0.5, -0.1], &[0.5, 0.1]),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn mean_distance_examples() {
        // Two points: the mean is their distance.
        let two = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_abs_diff_eq!(mean_train_distance(&two).unwrap(), 1.0, epsilon = 1e-15);

        // Three points with known pairwise distances average exactly.
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0];
        let c = vec![0.0, 0.0, 1.0];
        let vecs = vec![a.clone(), b.clone(), c.clone()];
        let expect = (chi2_distance(&a, &b).unwrap()
            + chi2_distance(&a, &c).unwrap()
            + chi2_distance(&b, &c).unwrap())
            / 3.0;
        assert_abs_diff_eq!(mean_train_distance(&vecs).unwrap(), expect, epsilon = 1e-15);

        // Permutation invariance.
        let permuted = vec![c, a, b];
        assert_abs_diff_eq!(
            mean_train_distance(&vecs).unwrap(),
            mean_train_distance(&permuted).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn mean_distance_needs_two_instances() {
        assert!(matches!(
            mean_train_distance(&[vec![1.0]]),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn kernel_of_identical_descriptors_is_one() {
        let spec = FusionSpec::new(vec![0.4, 0.7]).unwrap();
        let x = [vec![0.2, 0.8], vec![0.5, 0.5]];
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        assert_abs_diff_eq!(
            fusion_kernel(&refs, &refs, &spec).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kernel_at_mean_distance_is_inverse_e() {
        // One channel with D = Dbar gives exp(-1).
        let u = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        let d = chi2_distance(&u, &v).unwrap();
        let spec = FusionSpec::new(vec![d]).unwrap();
        let k = fusion_kernel(&[&u], &[&v], &spec).unwrap();
        assert_abs_diff_eq!(k, (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(k, 0.3679, epsilon = 1e-4);
    }

    #[test]
    fn fusion_spec_rejects_non_positive_means() {
        assert!(matches!(
            FusionSpec::new(vec![0.5, 0.0]),
            Err(Error::NonPositiveMeanDistance(_))
        ));
    }

    fn random_descriptors(n: usize, channels: usize, dim: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = crate::seed::stream_rng(seed, "descriptors");
        (0..channels)
            .map(|_| {
                (0..n)
                    .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gram_is_symmetric_with_unit_diagonal() {
        let channels = random_descriptors(20, 3, 8, 5);
        let spec = FusionSpec::from_training(&channels).unwrap();
        let gram = build_gram(&channels, &spec).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(gram[(i, i)], 1.0, epsilon = 1e-12);
            for j in 0..20 {
                assert_abs_diff_eq!(gram[(i, j)], gram[(j, i)], epsilon = 1e-12);
                assert!(gram[(i, j)] > 0.0 && gram[(i, j)] <= 1.0);
            }
        }
    }

    /// Linearly separable toy set with a linear kernel for the SMO tests.
    fn linear_problem(n_per_side: usize, seed: u64) -> (Array2<f64>, Vec<u32>, Vec<Vec<f64>>) {
        let mut rng = crate::seed::stream_rng(seed, "svm-linear");
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for side in 0..2 {
            let offset = if side == 0 { -2.0 } else { 2.0 };
            for _ in 0..n_per_side {
                points.push(vec![
                    offset + rng.gen_range(-0.5..0.5),
                    rng.gen_range(-1.0..1.0),
                ]);
                labels.push(side as u32);
            }
        }
        let n = points.len();
        let gram = Array2::from_shape_fn((n, n), |(i, j)| {
            points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum()
        });
        (gram, labels, points)
    }

    #[test]
    fn separable_problem_reaches_full_training_accuracy() {
        let (gram, labels, _) = linear_problem(10, 3);
        let model = train_ovo_svm(&gram, &labels, 10.0, 1e-3, 1_000_000).unwrap();
        for i in 0..labels.len() {
            let row: Vec<f64> = (0..labels.len()).map(|j| gram[(i, j)]).collect();
            assert_eq!(predict_svm(&model, &row).unwrap(), labels[i]);
        }
        // Margin constraints: no dual coefficient exceeds the cost box.
        for machine in &model.machines {
            for &c in &machine.coef {
                assert!(c.abs() <= 10.0 + 1e-9);
            }
        }
    }

    #[test]
    fn fifteen_classes_give_105_machines() {
        // Gram = identity keeps every pair trivially solvable.
        let n = 45;
        let labels: Vec<u32> = (0..n).map(|i| (i % 15) as u32).collect();
        let gram = Array2::eye(n);
        let model = train_ovo_svm(&gram, &labels, 1.0, 1e-3, 100_000).unwrap();
        assert_eq!(model.machines.len(), 105);
    }

    #[test]
    fn dual_objective_is_non_decreasing() {
        let (gram, labels, _) = linear_problem(12, 9);
        let members: Vec<usize> = (0..labels.len()).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l == 0 { -1.0 } else { 1.0 }).collect();
        let kernel = |a: usize, b: usize| gram[(members[a], members[b])];
        let mut history = Vec::new();
        smo_solve(&kernel, &y, 5.0, 1e-4, 1_000_000, |obj| history.push(obj)).unwrap();
        assert!(!history.is_empty());
        for w in history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "dual objective decreased: {w:?}");
        }
    }

    #[test]
    fn asymmetric_gram_is_rejected() {
        let mut gram = Array2::eye(4);
        gram[(0, 1)] = 0.5;
        let labels = vec![0u32, 0, 1, 1];
        assert!(matches!(
            train_ovo_svm(&gram, &labels, 1.0, 1e-3, 1000),
            Err(Error::AsymmetricGram { .. })
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let (gram, labels, _) = linear_problem(10, 11);
        let err = train_ovo_svm(&gram, &labels, 1.0, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::SmoNonConvergence { max_iter: 3, .. }));
    }

    #[test]
    fn cost_tuning_picks_from_the_grid_deterministically() {
        let (gram, labels, _) = linear_problem(12, 13);
        let grid = default_cost_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.125);
        assert_eq!(grid[10], 128.0);
        let a = tune_cost(&gram, &labels, &grid, 10, 1e-3, 1_000_000, 13).unwrap();
        let b = tune_cost(&gram, &labels, &grid, 10, 1e-3, 1_000_000, 13).unwrap();
        assert_eq!(a, b);
        assert!(grid.contains(&a));
    }

    #[test]
    fn ties_resolve_by_summed_margins() {
        // Three classes, three machines; engineer a vote tie by giving each
        // machine a constant decision via bias-only machines.
        let model = SvmModel {
            classes: vec![0, 1, 2],
            machines: vec![
                PairMachine { positive: 0, negative: 1, support: vec![], coef: vec![], bias: 0.4 },
                PairMachine { positive: 1, negative: 2, support: vec![], coef: vec![], bias: 2.0 },
                PairMachine { positive: 2, negative: 0, support: vec![], coef: vec![], bias: -0.1 },
            ],
        // votes: class 0 <- m0 (0.4) and m2 (|-0.1|); class 1 <- m1 (2.0)
        // class 0 has 2 votes and wins outright here; swap below for a tie.
            cost: 1.0,
        };
        let row = vec![0.0; 0];
        assert_eq!(predict_svm(&model, &row).unwrap(), 0);

        let tied = SvmModel {
            classes: vec![0, 1, 2],
            machines: vec![
                // class 0 beats 1 weakly, class 1 beats 2 strongly, class 2
                // beats 0 moderately: one vote each, margins decide.
                PairMachine { positive: 0, negative: 1, support: vec![], coef: vec![], bias: 0.1 },
                PairMachine { positive: 1, negative: 2, support: vec![], coef: vec![], bias: 3.0 },
                PairMachine { positive: 2, negative: 0, support: vec![], coef: vec![], bias: 0.5 },
            ],
            cost: 1.0,
        };
        assert_eq!(predict_svm(&tied, &row).unwrap(), 1);
    }
}
