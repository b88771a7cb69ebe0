//! 1-X pooling convolutional networks on multi-channel LTE images.
//!
//! Three layers: a convolutional layer of R filter sets (one per width w,
//! Q filters each) sliding only along time over the P x F x T image, ReLU,
//! a 1-X pooling layer reducing every feature map to one value (its max,
//! its mean, or both concatenated), and a softmax layer. Training minimizes
//! the cross-entropy error plus an L2 penalty over all parameters with
//! minibatch Adam.
//!
//! Convolution is evaluated as a matrix product against a per-sample
//! "unrolled window" matrix, which also makes the filter gradient a single
//! transposed product. Gradients are exact: max pooling routes to the
//! argmax position, mean pooling spreads uniformly, ReLU gates on positive
//! pre-activations.
//!
//! # Model file format
//!
//! `magic "LCNN" | version u32 | json_len u32 | json header | f64 tensors`
//! in order: per-width filters ((P*F*w) x Q, row-major), per-width biases,
//! softmax weights (feat_len x C, row-major), softmax biases.

use crate::embed::MultiChannelImage;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream_rng};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const CNN_MAGIC: &[u8; 4] = b"LCNN";
const CNN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolingMode {
    Max,
    Mean,
    Mix,
}

impl PoolingMode {
    pub fn name(&self) -> &'static str {
        match self {
            PoolingMode::Max => "max",
            PoolingMode::Mean => "mean",
            PoolingMode::Mix => "mix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolingMode::Max),
            "mean" => Ok(PoolingMode::Mean),
            "mix" => Ok(PoolingMode::Mix),
            _ => Err(Error::InvalidConfig(format!("unknown pooling mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Filter widths in segments (R = widths.len() filter sets).
    pub widths: Vec<usize>,
    /// Filters per width (Q).
    pub filters_per_width: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// L2 regularization weight.
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub pooling: PoolingMode,
    pub rng_seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Apply dropout to the softmax weight matrix instead of the pooled
    /// feature vector.
    pub dropout_on_weights: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: vec![3, 5, 7],
            filters_per_width: 32,
            learning_rate: 1e-4,
            dropout_rate: 0.5,
            lambda: 1e-3,
            epochs: 100,
            minibatch: 50,
            pooling: PoolingMode::Mix,
            rng_seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_on_weights: false,
        }
    }
}

impl CnnConfig {
    /// The configuration used in the reference experiments: 1000 filters
    /// per width and 500 training epochs.
    pub fn paper_scale() -> Self {
        Self { filters_per_width: 1000, epochs: 500, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("widths must be nonempty and >= 1".into()));
        }
        if self.filters_per_width == 0 {
            return Err(Error::InvalidConfig("filters_per_width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidConfig("minibatch must be >= 1".into()));
        }
        Ok(())
    }

    /// Pooled feature length: Q*R for max/mean, 2*Q*R for mix.
    pub fn feature_len(&self) -> usize {
        let base = self.filters_per_width * self.widths.len();
        match self.pooling {
            PoolingMode::Mix => 2 * base,
            _ => base,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub widths: Vec<usize>,
    pub q: usize,
    pub pooling: PoolingMode,
    pub classes: Vec<u32>,
    pub p: usize,
    pub f: usize,
    /// Per width: (P*F*w) x Q, one filter per column, window flattened as
    /// (channel * F + row) * w + offset.
    pub filters: Vec<Array2<f64>>,
    pub conv_bias: Vec<Array1<f64>>,
    pub softmax_w: Array2<f64>,
    pub softmax_b: Array1<f64>,
}

/// Unroll the width-w windows of an image into a (T-w+1) x (P*F*w) matrix,
/// so convolution is a single matrix product.
pub fn im2col(image: &MultiChannelImage, w: usize) -> Result<Array2<f64>> {
    let (p, f, t) = (image.channels(), image.f_dim(), image.t_dim());
    if w == 0 || w > t {
        return Err(Error::ImageTooShort { t, width: w });
    }
    let positions = t - w + 1;
    let cols = p * f * w;
    let mut out = Array2::zeros((positions, cols));
    for i in 0..positions {
        for k in 0..p {
            for l in 0..f {
                for m in 0..w {
                    out[(i, (k * f + l) * w + m)] = image.values[(k, l, i + m)];
                }
            }
        }
    }
    Ok(out)
}

/// Temporal convolution of one filter over an image, with bias and ReLU.
///
/// Returns `(pre_activation, feature_map)`: o_i is the full elementwise
/// product sum of the filter against the width-w window at position i, and
/// a_i = max(0, o_i + bias).
pub fn conv_forward(
    image: &MultiChannelImage,
    filter: &Array3<f64>,
    bias: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (p, f, t) = (image.channels(), image.f_dim(), image.t_dim());
    let shape = filter.shape();
    if shape[0] != p || shape[1] != f {
        return Err(Error::ShapeMismatch(format!(
            "filter {:?} does not match image {p}x{f}xT",
            shape
        )));
    }
    let w = shape[2];
    if w == 0 || w > t {
        return Err(Error::ImageTooShort { t, width: w });
    }
    let unrolled = im2col(image, w)?;
    let flat: Vec<f64> = (0..p * f * w)
        .map(|idx| {
            let m = idx % w;
            let l = (idx / w) % f;
            let k = idx / (w * f);
            filter[(k, l, m)]
        })
        .collect();
    let pre: Vec<f64> = unrolled
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&flat).map(|(a, b)| a * b).sum())
        .collect();
    let act: Vec<f64> = pre.iter().map(|&o| (o + bias).max(0.0)).collect();
    Ok((pre, act))
}

/// Reduce feature maps to the pooled feature vector.
///
/// `maps` holds the Q*R feature maps in canonical order (widths outer,
/// filters inner). Mix concatenates the max block before the mean block.
pub fn pool(maps: &[&[f64]], mode: PoolingMode) -> Result<Vec<f64>> {
    if maps.is_empty() || maps.iter().any(|m| m.is_empty()) {
        return Err(Error::EmptyFeatureMap);
    }
    let maxes = || -> Vec<f64> {
        maps.iter()
            .map(|m| m.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };
    let means = || -> Vec<f64> {
        maps.iter()
            .map(|m| m.iter().sum::<f64>() / m.len() as f64)
            .collect()
    };
    Ok(match mode {
        PoolingMode::Max => maxes(),
        PoolingMode::Mean => means(),
        PoolingMode::Mix => {
            let mut v = maxes();
            v.extend(means());
            v
        }
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy of one sample from raw logits via log-sum-exp, plus the
/// L2 term (lambda/2)*theta_sq. Never NaN for finite logits.
pub fn softmax_loss(
    logits: &[f64],
    target: usize,
    lambda: f64,
    theta_sq: f64,
) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let ce = lse - logits[target];
    (softmax(logits), ce + 0.5 * lambda * theta_sq)
}

/// Inverted dropout on a value vector: training mode zeroes entries with
/// probability `rate` and scales survivors by 1/(1-rate); inference mode is
/// the identity and draws nothing from the RNG.
pub fn dropout_apply(values: &mut [f64], rate: f64, rng: &mut impl Rng, train: bool) {
    if !train || rate == 0.0 {
        return;
    }
    let scale = 1.0 / (1.0 - rate);
    for v in values.iter_mut() {
        if rng.gen::<f64>() < rate {
            *v = 0.0;
        } else {
            *v *= scale;
        }
    }
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update; `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Gradients mirroring the model tensors.
#[derive(Debug, Clone)]
pub struct Grads {
    pub filters: Vec<Array2<f64>>,
    pub conv_bias: Vec<Array1<f64>>,
    pub softmax_w: Array2<f64>,
    pub softmax_b: Array1<f64>,
}

impl Grads {
    /// Flat parameter-order view (filters, conv biases, softmax weights,
    /// softmax biases), matching [`CnnModel::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        CnnModel::flatten_grads(self)
    }

    fn zeros_like(model: &CnnModel) -> Self {
        Self {
            filters: model.filters.iter().map(|f| Array2::zeros(f.raw_dim())).collect(),
            conv_bias: model.conv_bias.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            softmax_w: Array2::zeros(model.softmax_w.raw_dim()),
            softmax_b: Array1::zeros(model.softmax_b.raw_dim()),
        }
    }

    fn add(&mut self, other: &Grads) {
        for (a, b) in self.filters.iter_mut().zip(&other.filters) {
            *a += b;
        }
        for (a, b) in self.conv_bias.iter_mut().zip(&other.conv_bias) {
            *a += b;
        }
        self.softmax_w += &other.softmax_w;
        self.softmax_b += &other.softmax_b;
    }

    fn scale(&mut self, s: f64) {
        for a in self.filters.iter_mut() {
            *a *= s;
        }
        for a in self.conv_bias.iter_mut() {
            *a *= s;
        }
        self.softmax_w *= s;
        self.softmax_b *= s;
    }
}

impl CnnModel {
    /// Initialize with zero-mean uniform weights scaled by 1/sqrt(fan-in)
    /// and zero biases.
    pub fn init(cfg: &CnnConfig, classes: Vec<u32>, p: usize, f: usize) -> Result<CnnModel> {
        cfg.validate()?;
        if classes.len() < 2 {
            return Err(Error::DegenerateLabelSet(classes.len()));
        }
        let q = cfg.filters_per_width;
        let mut filters = Vec::new();
        let mut conv_bias = Vec::new();
        for (r, &w) in cfg.widths.iter().enumerate() {
            let fan_in = p * f * w;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.rng_seed,
                &format!("init/filters/{r}"),
            ));
            filters.push(Array2::from_shape_fn((fan_in, q), |_| {
                rng.gen_range(-bound..bound)
            }));
            conv_bias.push(Array1::zeros(q));
        }
        let feat_len = cfg.feature_len();
        let bound = 1.0 / (feat_len as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, "init/softmax"));
        let softmax_w =
            Array2::from_shape_fn((feat_len, classes.len()), |_| rng.gen_range(-bound..bound));
        let softmax_b = Array1::zeros(classes.len());
        Ok(CnnModel {
            widths: cfg.widths.clone(),
            q,
            pooling: cfg.pooling,
            classes,
            p,
            f,
            filters,
            conv_bias,
            softmax_w,
            softmax_b,
        })
    }

    pub fn feature_len(&self) -> usize {
        let base = self.q * self.widths.len();
        match self.pooling {
            PoolingMode::Mix => 2 * base,
            _ => base,
        }
    }

    /// Sum of squares of every parameter (the ||Theta||^2 of the loss).
    pub fn theta_sq(&self) -> f64 {
        let mut acc = 0.0;
        for m in &self.filters {
            acc += m.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.conv_bias {
            acc += b.iter().map(|v| v * v).sum::<f64>();
        }
        acc += self.softmax_w.iter().map(|v| v * v).sum::<f64>();
        acc += self.softmax_b.iter().map(|v| v * v).sum::<f64>();
        acc
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.filters {
            out.extend(m.iter());
        }
        for b in &self.conv_bias {
            out.extend(b.iter());
        }
        out.extend(self.softmax_w.iter());
        out.extend(self.softmax_b.iter());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for m in &mut self.filters {
            for v in m.iter_mut() {
                *v = *it.next().expect("flat vector too short");
            }
        }
        for b in &mut self.conv_bias {
            for v in b.iter_mut() {
                *v = *it.next().expect("flat vector too short");
            }
        }
        for v in self.softmax_w.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
        for v in self.softmax_b.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    fn flatten_grads(grads: &Grads) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &grads.filters {
            out.extend(m.iter());
        }
        for b in &grads.conv_bias {
            out.extend(b.iter());
        }
        out.extend(grads.softmax_w.iter());
        out.extend(grads.softmax_b.iter());
        out
    }
}

/// Per-sample im2col matrices, one per filter width.
pub type Unrolled = Vec<Array2<f64>>;

pub fn unroll_image(image: &MultiChannelImage, widths: &[usize]) -> Result<Unrolled> {
    widths.iter().map(|&w| im2col(image, w)).collect()
}

struct ForwardTrace {
    /// Per width: (positions x Q) pre-activations including bias.
    preact: Vec<Array2<f64>>,
    /// Pooled vector before dropout.
    pooled: Vec<f64>,
    /// Per-element multiplier the dropout applied to the pooled vector.
    pooled_mask: Vec<f64>,
    /// Multiplier applied to each softmax weight (weight-dropout mode).
    weight_mask: Option<Array2<f64>>,
    /// Argmax positions per (width, filter) for max routing.
    argmax: Vec<Vec<usize>>,
    probs: Vec<f64>,
}

enum DropoutCtx<'a> {
    Off,
    Pooled { rate: f64, rng: &'a mut ChaCha8Rng },
    Weights { rate: f64, rng: &'a mut ChaCha8Rng },
}

fn forward(model: &CnnModel, cols: &Unrolled, dropout: DropoutCtx<'_>) -> ForwardTrace {
    let r_sets = model.widths.len();
    let mut preact = Vec::with_capacity(r_sets);
    let mut argmax = Vec::with_capacity(r_sets);
    let mut maxes = Vec::with_capacity(r_sets * model.q);
    let mut means = Vec::with_capacity(r_sets * model.q);
    for r in 0..r_sets {
        let mut pre = cols[r].dot(&model.filters[r]);
        for mut row in pre.rows_mut() {
            row += &model.conv_bias[r];
        }
        let positions = pre.nrows();
        let mut arg_r = Vec::with_capacity(model.q);
        for qi in 0..model.q {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for i in 0..positions {
                let a = pre[(i, qi)].max(0.0);
                sum += a;
                if a > best_v {
                    best_v = a;
                    best = i;
                }
            }
            maxes.push(best_v);
            means.push(sum / positions as f64);
            arg_r.push(best);
        }
        preact.push(pre);
        argmax.push(arg_r);
    }
    let pooled: Vec<f64> = match model.pooling {
        PoolingMode::Max => maxes,
        PoolingMode::Mean => means,
        PoolingMode::Mix => {
            let mut v = maxes;
            v.extend(means);
            v
        }
    };

    let mut pooled_mask = vec![1.0; pooled.len()];
    let mut weight_mask = None;
    let mut dropped = pooled.clone();
    match dropout {
        DropoutCtx::Off => {}
        DropoutCtx::Pooled { rate, rng } => {
            let scale = 1.0 / (1.0 - rate);
            for m in pooled_mask.iter_mut() {
                *m = if rng.gen::<f64>() < rate { 0.0 } else { scale };
            }
            for (d, m) in dropped.iter_mut().zip(&pooled_mask) {
                *d *= m;
            }
        }
        DropoutCtx::Weights { rate, rng } => {
            let scale = 1.0 / (1.0 - rate);
            weight_mask = Some(Array2::from_shape_fn(
                model.softmax_w.raw_dim(),
                |_| if rng.gen::<f64>() < rate { 0.0 } else { scale },
            ));
        }
    }

    let effective_w = match &weight_mask {
        Some(mask) => &model.softmax_w * mask,
        None => model.softmax_w.clone(),
    };
    let z = Array1::from_vec(dropped);
    let logits = z.dot(&effective_w) + &model.softmax_b;
    let probs = softmax(logits.as_slice().expect("contiguous logits"));
    ForwardTrace { preact, pooled, pooled_mask, weight_mask, argmax, probs }
}

fn backward(model: &CnnModel, cols: &Unrolled, trace: &ForwardTrace, target: usize) -> Grads {
    let mut grads = Grads::zeros_like(model);
    let c = model.classes.len();
    let feat = model.feature_len();

    let mut dlogits = Array1::from_vec(trace.probs.clone());
    dlogits[target] -= 1.0;

    // z as used by the softmax layer (after pooled dropout).
    let z: Vec<f64> = trace
        .pooled
        .iter()
        .zip(&trace.pooled_mask)
        .map(|(p, m)| p * m)
        .collect();

    let effective_w = match &trace.weight_mask {
        Some(mask) => &model.softmax_w * mask,
        None => model.softmax_w.clone(),
    };
    for fi in 0..feat {
        for ci in 0..c {
            let g = z[fi] * dlogits[ci];
            grads.softmax_w[(fi, ci)] += match &trace.weight_mask {
                Some(mask) => g * mask[(fi, ci)],
                None => g,
            };
        }
    }
    grads.softmax_b += &dlogits;

    // Gradient into the pooled vector, through the dropout mask.
    let mut dz = effective_w.dot(&dlogits);
    for (d, m) in dz.iter_mut().zip(&trace.pooled_mask) {
        *d *= m;
    }

    // Unpool and gate through ReLU.
    let r_sets = model.widths.len();
    let base = model.q * r_sets;
    for r in 0..r_sets {
        let positions = trace.preact[r].nrows();
        let mut dpre = Array2::zeros((positions, model.q));
        for qi in 0..model.q {
            let flat = r * model.q + qi;
            match model.pooling {
                PoolingMode::Max => {
                    route_max(&mut dpre, &trace.preact[r], trace.argmax[r][qi], qi, dz[flat]);
                }
                PoolingMode::Mean => {
                    route_mean(&mut dpre, &trace.preact[r], qi, dz[flat]);
                }
                PoolingMode::Mix => {
                    route_max(&mut dpre, &trace.preact[r], trace.argmax[r][qi], qi, dz[flat]);
                    route_mean(&mut dpre, &trace.preact[r], qi, dz[base + flat]);
                }
            }
        }
        grads.filters[r] += &cols[r].t().dot(&dpre);
        for qi in 0..model.q {
            grads.conv_bias[r][qi] += dpre.column(qi).sum();
        }
    }
    grads
}

fn route_max(dpre: &mut Array2<f64>, preact: &Array2<f64>, pos: usize, qi: usize, g: f64) {
    if preact[(pos, qi)] > 0.0 {
        dpre[(pos, qi)] += g;
    }
}

fn route_mean(dpre: &mut Array2<f64>, preact: &Array2<f64>, qi: usize, g: f64) {
    let share = g / preact.nrows() as f64;
    for i in 0..preact.nrows() {
        if preact[(i, qi)] > 0.0 {
            dpre[(i, qi)] += share;
        }
    }
}

/// Mean cross-entropy plus L2 term and its exact gradients over a batch.
///
/// Dropout is disabled; this is the deterministic objective of Eq-style
/// training loss that the finite-difference checks verify.
pub fn batch_loss_and_grads(
    model: &CnnModel,
    batch: &[(&Unrolled, usize)],
    lambda: f64,
) -> (f64, Grads) {
    let n = batch.len().max(1) as f64;
    let mut total_ce = 0.0;
    let mut grads = Grads::zeros_like(model);
    for &(cols, target) in batch {
        let trace = forward(model, cols, DropoutCtx::Off);
        total_ce += -trace.probs[target].max(1e-300).ln();
        grads.add(&backward(model, cols, &trace, target));
    }
    grads.scale(1.0 / n);
    add_l2(&mut grads, model, lambda);
    (total_ce / n + 0.5 * lambda * model.theta_sq(), grads)
}

fn add_l2(grads: &mut Grads, model: &CnnModel, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (g, m) in grads.filters.iter_mut().zip(&model.filters) {
        g.scaled_add(lambda, m);
    }
    for (g, b) in grads.conv_bias.iter_mut().zip(&model.conv_bias) {
        g.scaled_add(lambda, b);
    }
    grads.softmax_w.scaled_add(lambda, &model.softmax_w);
    grads.softmax_b.scaled_add(lambda, &model.softmax_b);
}

/// Per-epoch mean training loss, as recorded during training.
pub type LossCurve = Vec<f64>;

/// Train a 1-X pooling network with shuffled minibatch Adam.
pub fn train_cnn(
    images: &[MultiChannelImage],
    labels: &[u32],
    cfg: &CnnConfig,
) -> Result<(CnnModel, LossCurve)> {
    cfg.validate()?;
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: images.len(),
            truth: labels.len(),
        });
    }
    let (p, f, t) = (images[0].channels(), images[0].f_dim(), images[0].t_dim());
    for img in images {
        if img.channels() != p || img.f_dim() != f || img.t_dim() != t {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{}x{} differs from {p}x{f}x{t}",
                img.channels(),
                img.f_dim(),
                img.t_dim()
            )));
        }
    }
    let max_width = *cfg.widths.iter().max().expect("widths nonempty");
    if t < max_width {
        return Err(Error::ImageTooShort { t, width: max_width });
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let class_pos: std::collections::HashMap<u32, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let targets: Vec<usize> = labels.iter().map(|l| class_pos[l]).collect();

    let mut model = CnnModel::init(cfg, classes, p, f)?;

    // Window matrices are reused across every epoch; fall back to per-use
    // unrolling when the cache would not fit comfortably in memory.
    let per_sample: usize = cfg
        .widths
        .iter()
        .map(|&w| (t - w + 1) * p * f * w * std::mem::size_of::<f64>())
        .sum();
    let cache_all = per_sample.saturating_mul(images.len()) <= 1_500_000_000;
    let cache: Option<Vec<Unrolled>> = if cache_all {
        Some(
            images
                .iter()
                .map(|img| unroll_image(img, &cfg.widths))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let get_cols = |i: usize| -> Result<std::borrow::Cow<'_, Unrolled>> {
        match &cache {
            Some(c) => Ok(std::borrow::Cow::Borrowed(&c[i])),
            None => Ok(std::borrow::Cow::Owned(unroll_image(&images[i], &cfg.widths)?)),
        }
    };

    let flat_len = model.flatten_params().len();
    let mut adam = AdamState::zeros(flat_len);
    let mut dropout_rng = stream_rng(cfg.rng_seed, "dropout");
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut shuffle_rng = stream_rng(cfg.rng_seed, &format!("epoch/{epoch}"));
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let mut grads = Grads::zeros_like(&model);
            let mut ce = 0.0;
            for &i in chunk {
                let cols = get_cols(i)?;
                let ctx = if cfg.dropout_rate > 0.0 {
                    if cfg.dropout_on_weights {
                        DropoutCtx::Weights { rate: cfg.dropout_rate, rng: &mut dropout_rng }
                    } else {
                        DropoutCtx::Pooled { rate: cfg.dropout_rate, rng: &mut dropout_rng }
                    }
                } else {
                    DropoutCtx::Off
                };
                let trace = forward(&model, &cols, ctx);
                ce += -trace.probs[targets[i]].max(1e-300).ln();
                grads.add(&backward(&model, &cols, &trace, targets[i]));
            }
            grads.scale(1.0 / chunk.len() as f64);
            add_l2(&mut grads, &model, cfg.lambda);
            let batch_loss = ce / chunk.len() as f64 + 0.5 * cfg.lambda * model.theta_sq();
            if !batch_loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss;
            batches += 1;

            step += 1;
            let mut flat = model.flatten_params();
            let flat_grads = CnnModel::flatten_grads(&grads);
            adam_step(
                &mut flat,
                &flat_grads,
                &mut adam,
                step,
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            );
            model.set_params(&flat);
        }
        losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((model, losses))
}

/// Predict the class of one image (dropout disabled, any T >= max width).
pub fn predict_cnn(model: &CnnModel, image: &MultiChannelImage) -> Result<(u32, Vec<f64>)> {
    if image.channels() != model.p || image.f_dim() != model.f {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{}x{} does not match model {}x{}",
            image.channels(),
            image.f_dim(),
            image.t_dim(),
            model.p,
            model.f
        )));
    }
    let max_width = *model.widths.iter().max().expect("widths nonempty");
    if image.t_dim() < max_width {
        return Err(Error::ImageTooShort { t: image.t_dim(), width: max_width });
    }
    let cols = unroll_image(image, &model.widths)?;
    let trace = forward(model, &cols, DropoutCtx::Off);
    let mut best = 0usize;
    for (i, &p) in trace.probs.iter().enumerate() {
        if p > trace.probs[best] {
            best = i;
        }
    }
    Ok((model.classes[best], trace.probs))
}

/// Pooled feature vector of one image (used by the prediction-invariance
/// checks; dropout disabled).
pub fn pooled_features(model: &CnnModel, image: &MultiChannelImage) -> Result<Vec<f64>> {
    let cols = unroll_image(image, &model.widths)?;
    Ok(forward(model, &cols, DropoutCtx::Off).pooled)
}

impl CnnModel {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "widths": self.widths,
            "q": self.q,
            "pooling": self.pooling.name(),
            "classes": self.classes,
            "p": self.p,
            "f": self.f,
        });
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(CNN_MAGIC)?;
        w.write_all(&CNN_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        let mut write_slice = |data: &[f64]| -> Result<()> {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for m in &self.filters {
            write_slice(m.as_slice().expect("standard layout"))?;
        }
        for b in &self.conv_bias {
            write_slice(b.as_slice().expect("standard layout"))?;
        }
        write_slice(self.softmax_w.as_slice().expect("standard layout"))?;
        write_slice(self.softmax_b.as_slice().expect("standard layout"))?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<CnnModel> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CNN_MAGIC {
            return Err(Error::ModelFormat(format!("bad cnn magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CNN_VERSION {
            return Err(Error::ModelFormat(format!("unsupported cnn version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let header_len = u32::from_le_bytes(u32buf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
        let widths: Vec<usize> = serde_json::from_value(header["widths"].clone())?;
        let q = header["q"].as_u64().ok_or_else(|| Error::ModelFormat("missing q".into()))?
            as usize;
        let pooling = PoolingMode::parse(
            header["pooling"]
                .as_str()
                .ok_or_else(|| Error::ModelFormat("missing pooling".into()))?,
        )?;
        let classes: Vec<u32> = serde_json::from_value(header["classes"].clone())?;
        let p = header["p"].as_u64().ok_or_else(|| Error::ModelFormat("missing p".into()))?
            as usize;
        let f = header["f"].as_u64().ok_or_else(|| Error::ModelFormat("missing f".into()))?
            as usize;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                out.push(f64::from_le_bytes(buf));
            }
            Ok(out)
        };
        let mut filters = Vec::new();
        for &w in &widths {
            let rows = p * f * w;
            let data = read_vec(rows * q)?;
            filters.push(
                Array2::from_shape_vec((rows, q), data)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
            );
        }
        let mut conv_bias = Vec::new();
        for _ in &widths {
            conv_bias.push(Array1::from_vec(read_vec(q)?));
        }
        let base = q * widths.len();
        let feat_len = match pooling {
            PoolingMode::Mix => 2 * base,
            _ => base,
        };
        let softmax_w = Array2::from_shape_vec(
            (feat_len, classes.len()),
            read_vec(feat_len * classes.len())?,
        )
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let softmax_b = Array1::from_vec(read_vec(classes.len())?);
        Ok(CnnModel {
            widths,
            q,
            pooling,
            classes,
            p,
            f,
            filters,
            conv_bias,
            softmax_w,
            softmax_b,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn load(path: &std::path::Path) -> Result<CnnModel> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        CnnModel::read_from(&mut file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn image_from_fn(p: usize, f: usize, t: usize, g: impl Fn(usize, usize, usize) -> f64) -> MultiChannelImage {
        MultiChannelImage { values: Array3::from_shape_fn((p, f, t), |(a, b, c)| g(a, b, c)) }
    }

    fn random_image(p: usize, f: usize, t: usize, seed: u64) -> MultiChannelImage {
        let mut rng = stream_rng(seed, "cnn-test-image");
        MultiChannelImage {
            values: Array3::from_shape_fn((p, f, t), |_| rng.gen_range(0.0..1.0)),
        }
    }

    #[test]
    fn conv_forward_matches_hand_example() {
        // S = 1x1x[1,2,3], filter 1x1x[1,1], b = 0 -> O = [3, 5].
        let image = image_from_fn(1, 1, 3, |_, _, t| (t + 1) as f64);
        let filter = Array3::from_elem((1, 1, 2), 1.0);
        let (pre, act) = conv_forward(&image, &filter, 0.0).unwrap();
        assert_eq!(pre, vec![3.0, 5.0]);
        assert_eq!(act, vec![3.0, 5.0]);
    }

    #[test]
    fn negative_preactivations_relu_to_zero() {
        let image = random_image(2, 3, 6, 1);
        let filter = Array3::from_elem((2, 3, 2), 1.0);
        // Large negative bias drives everything below zero.
        let (_, act) = conv_forward(&image, &filter, -1000.0).unwrap();
        assert!(act.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn feature_map_length_is_t_minus_w_plus_1() {
        let image = random_image(2, 4, 118, 2);
        let filter = Array3::from_elem((2, 4, 3), 0.1);
        let (pre, _) = conv_forward(&image, &filter, 0.0).unwrap();
        assert_eq!(pre.len(), 116);
        // Full-width filter leaves one position.
        let wide = Array3::from_elem((2, 4, 118), 0.1);
        let (pre, _) = conv_forward(&image, &wide, 0.0).unwrap();
        assert_eq!(pre.len(), 1);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let image = random_image(2, 3, 5, 3);
        let filter = Array3::from_elem((2, 2, 2), 1.0);
        assert!(matches!(
            conv_forward(&image, &filter, 0.0),
            Err(Error::ShapeMismatch(_))
        ));
        let long = Array3::from_elem((2, 3, 6), 1.0);
        assert!(matches!(
            conv_forward(&image, &long, 0.0),
            Err(Error::ImageTooShort { t: 5, width: 6 })
        ));
    }

    #[test]
    fn pooling_arithmetic_and_block_placement() {
        let map = [3.0, 5.0];
        assert_eq!(pool(&[&map], PoolingMode::Max).unwrap(), vec![5.0]);
        assert_eq!(pool(&[&map], PoolingMode::Mean).unwrap(), vec![4.0]);
        assert_eq!(pool(&[&map], PoolingMode::Mix).unwrap(), vec![5.0, 4.0]);

        let constant = [2.5; 7];
        let mixed = pool(&[&constant], PoolingMode::Mix).unwrap();
        assert_eq!(mixed, vec![2.5, 2.5]);
    }

    #[test]
    fn mix_output_doubles_the_map_count() {
        let maps: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0, 2.0]).collect();
        let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
        assert_eq!(pool(&refs, PoolingMode::Max).unwrap().len(), 6);
        assert_eq!(pool(&refs, PoolingMode::Mean).unwrap().len(), 6);
        let mixed = pool(&refs, PoolingMode::Mix).unwrap();
        assert_eq!(mixed.len(), 12);
        // First half max, second half mean.
        assert_eq!(mixed[0], 2.0);
        assert_abs_diff_eq!(mixed[6], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_maps_are_rejected() {
        assert!(matches!(pool(&[], PoolingMode::Max), Err(Error::EmptyFeatureMap)));
        let empty: &[f64] = &[];
        assert!(matches!(pool(&[empty], PoolingMode::Max), Err(Error::EmptyFeatureMap)));
    }

    #[test]
    fn softmax_loss_examples() {
        // Zero logits: uniform prediction, cross-entropy ln C.
        let (probs, loss) = softmax_loss(&[0.0, 0.0, 0.0, 0.0], 2, 0.0, 0.0);
        for &p in &probs {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);

        // Saturated correct logit: loss 0.
        let (_, loss) = softmax_loss(&[1000.0, 0.0, 0.0], 0, 0.0, 0.0);
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-9);

        // Zero parameters leave the regularizer at zero.
        let (_, loss) = softmax_loss(&[0.5, -0.5], 0, 0.7, 0.0);
        let (_, base) = softmax_loss(&[0.5, -0.5], 0, 0.0, 0.0);
        assert_abs_diff_eq!(loss, base, epsilon = 1e-15);

        // Positive theta makes the regularized loss strictly larger.
        let (_, reg) = softmax_loss(&[0.5, -0.5], 0, 0.7, 2.0);
        assert!(reg > base);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_inference_ignores_rng() {
        let mut rng = stream_rng(9, "dropout");
        let mut v = vec![1.0, 2.0, 3.0];
        dropout_apply(&mut v, 0.0, &mut rng, true);
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
        dropout_apply(&mut v, 0.9, &mut rng, false);
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_zeroes_about_the_requested_fraction() {
        let mut rng = stream_rng(11, "dropout-frac");
        let mut v = vec![1.0; 100_000];
        dropout_apply(&mut v, 0.5, &mut rng, true);
        let zeroed = v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len() as f64;
        assert!((zeroed - 0.5).abs() < 0.05, "zeroed fraction {zeroed}");
        // Survivors carry the inverse-keep scale.
        assert!(v.iter().filter(|&&x| x != 0.0).all(|&x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut params = vec![0.0];
        let grads = vec![1.0];
        let mut state = AdamState::zeros(1);
        adam_step(&mut params, &grads, &mut state, 1, 1e-4, 0.9, 0.999, 1e-8);
        assert_abs_diff_eq!(params[0], -9.99999e-5, epsilon = 1e-9);
    }

    #[test]
    fn adam_with_zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![0.7, -0.3];
        let mut state = AdamState::zeros(2);
        for t in 1..=10 {
            adam_step(&mut params, &[0.0, 0.0], &mut state, t, 1e-2, 0.9, 0.999, 1e-8);
        }
        assert_eq!(params, vec![0.7, -0.3]);
    }

    #[test]
    fn adam_treats_identical_coordinates_identically() {
        let mut params = vec![0.5, 0.5];
        let mut state = AdamState::zeros(2);
        for t in 1..=5 {
            adam_step(&mut params, &[0.3, 0.3], &mut state, t, 1e-3, 0.9, 0.999, 1e-8);
        }
        assert_eq!(params[0], params[1]);
    }

    /// Central finite differences of the batch loss at the current params.
    fn numeric_grads(
        model: &CnnModel,
        batch: &[(&Unrolled, usize)],
        lambda: f64,
        delta: f64,
    ) -> Vec<f64> {
        let base = model.flatten_params();
        let mut out = Vec::with_capacity(base.len());
        let mut probe = model.clone();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += delta;
            probe.set_params(&plus);
            let (lp, _) = batch_loss_and_grads(&probe, batch, lambda);
            let mut minus = base.clone();
            minus[i] -= delta;
            probe.set_params(&minus);
            let (lm, _) = batch_loss_and_grads(&probe, batch, lambda);
            out.push((lp - lm) / (2.0 * delta));
        }
        out
    }

    fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| {
                let scale = a.abs().max(n.abs());
                if scale < 1e-8 {
                    0.0
                } else {
                    (a - n).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for pooling in [PoolingMode::Max, PoolingMode::Mean, PoolingMode::Mix] {
            let cfg = CnnConfig {
                widths: vec![2, 3],
                filters_per_width: 2,
                pooling,
                lambda: 1e-3,
                rng_seed: 31,
                ..Default::default()
            };
            let model = CnnModel::init(&cfg, vec![0, 1, 2], 2, 3).unwrap();
            let images: Vec<MultiChannelImage> =
                (0..4).map(|i| random_image(2, 3, 10, 100 + i)).collect();
            let unrolled: Vec<Unrolled> = images
                .iter()
                .map(|img| unroll_image(img, &cfg.widths).unwrap())
                .collect();
            let batch: Vec<(&Unrolled, usize)> = unrolled
                .iter()
                .enumerate()
                .map(|(i, u)| (u, i % 3))
                .collect();
            let (_, grads) = batch_loss_and_grads(&model, &batch, cfg.lambda);
            let analytic = CnnModel::flatten_grads(&grads);
            let numeric = numeric_grads(&model, &batch, cfg.lambda, 1e-5);
            let err = max_rel_error(&analytic, &numeric);
            assert!(err <= 1e-4, "{:?} pooling rel error {err}", pooling);
        }
    }

    #[test]
    fn dead_relu_filters_receive_no_gradient() {
        let cfg = CnnConfig {
            widths: vec![2],
            filters_per_width: 2,
            pooling: PoolingMode::Max,
            lambda: 0.0,
            rng_seed: 7,
            ..Default::default()
        };
        let mut model = CnnModel::init(&cfg, vec![0, 1], 1, 2).unwrap();
        // Drive filter 0 permanently negative via a large negative bias.
        model.conv_bias[0][0] = -1000.0;
        let image = random_image(1, 2, 8, 5);
        let unrolled = unroll_image(&image, &cfg.widths).unwrap();
        let batch = [(&unrolled, 0usize)];
        let (_, grads) = batch_loss_and_grads(&model, &batch, 0.0);
        for r in 0..grads.filters[0].nrows() {
            assert_eq!(grads.filters[0][(r, 0)], 0.0);
        }
        assert_eq!(grads.conv_bias[0][0], 0.0);
    }

    #[test]
    fn zero_image_gradients_land_only_in_the_softmax_bias() {
        let cfg = CnnConfig {
            widths: vec![2],
            filters_per_width: 2,
            pooling: PoolingMode::Mean,
            lambda: 0.0,
            rng_seed: 13,
            ..Default::default()
        };
        let mut model = CnnModel::init(&cfg, vec![0, 1], 1, 2).unwrap();
        // Zero conv output and zero pooled vector: softmax bias gradient is
        // probs - onehot, filter gradients vanish.
        for m in &mut model.filters {
            m.fill(0.0);
        }
        let image = MultiChannelImage { values: Array3::zeros((1, 2, 6)) };
        let unrolled = unroll_image(&image, &cfg.widths).unwrap();
        let batch = [(&unrolled, 1usize)];
        let (_, grads) = batch_loss_and_grads(&model, &batch, 0.0);
        assert!(grads.filters[0].iter().all(|&g| g == 0.0));
        assert!(grads.softmax_w.iter().all(|&g| g == 0.0));
        // probs = (0.5, 0.5) at zero logits; target 1.
        assert_abs_diff_eq!(grads.softmax_b[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grads.softmax_b[1], -0.5, epsilon = 1e-12);
    }

    fn separable_images(n_per_class: usize, t: usize, seed: u64) -> (Vec<MultiChannelImage>, Vec<u32>) {
        // Class 0 lights up feature row 0, class 1 lights up row 1.
        let mut rng = stream_rng(seed, "separable");
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2u32 {
            for _ in 0..n_per_class {
                let mut values = Array3::from_shape_fn((1, 2, t), |_| rng.gen_range(0.0..0.1));
                for ti in 0..t {
                    values[(0, c as usize, ti)] += 0.8;
                }
                images.push(MultiChannelImage { values });
                labels.push(c);
            }
        }
        (images, labels)
    }

    #[test]
    fn training_separates_a_trivial_image_set() {
        let (images, labels) = separable_images(10, 12, 17);
        let cfg = CnnConfig {
            widths: vec![3],
            filters_per_width: 4,
            epochs: 50,
            minibatch: 5,
            learning_rate: 1e-2,
            dropout_rate: 0.0,
            lambda: 1e-4,
            pooling: PoolingMode::Mix,
            rng_seed: 17,
            ..Default::default()
        };
        let (model, losses) = train_cnn(&images, &labels, &cfg).unwrap();
        assert_eq!(losses.len(), 50);
        assert!(
            losses.last().unwrap() < &losses[0],
            "loss did not decrease: {losses:?}"
        );
        let correct = images
            .iter()
            .zip(&labels)
            .filter(|(img, &l)| predict_cnn(&model, img).unwrap().0 == l)
            .count();
        assert_eq!(correct, images.len());
    }

    #[test]
    fn prediction_is_deterministic_and_a_distribution() {
        let (images, labels) = separable_images(4, 10, 23);
        let cfg = CnnConfig {
            widths: vec![2, 3],
            filters_per_width: 3,
            epochs: 3,
            minibatch: 4,
            dropout_rate: 0.5,
            rng_seed: 23,
            ..Default::default()
        };
        let (model, _) = train_cnn(&images, &labels, &cfg).unwrap();
        let (l1, p1) = predict_cnn(&model, &images[0]).unwrap();
        let (l2, p2) = predict_cnn(&model, &images[0]).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
        let sum: f64 = p1.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pooled_length_is_independent_of_t() {
        let cfg = CnnConfig {
            widths: vec![3, 5],
            filters_per_width: 4,
            pooling: PoolingMode::Mix,
            rng_seed: 3,
            ..Default::default()
        };
        let model = CnnModel::init(&cfg, vec![0, 1], 2, 3).unwrap();
        let mut lens = Vec::new();
        for t in [7usize, 50, 118, 300] {
            let image = random_image(2, 3, t, t as u64);
            lens.push(pooled_features(&model, &image).unwrap().len());
        }
        assert!(lens.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(lens[0], 2 * 4 * 2);
    }

    #[test]
    fn mix_equals_max_concat_mean_for_identical_filters() {
        let cfg = CnnConfig {
            widths: vec![3],
            filters_per_width: 3,
            rng_seed: 41,
            ..Default::default()
        };
        let image = random_image(2, 4, 20, 41);
        let mk = |pooling| {
            let model = CnnModel {
                pooling,
                ..CnnModel::init(&CnnConfig { pooling, ..cfg.clone() }, vec![0, 1], 2, 4).unwrap()
            };
            pooled_features(&model, &image).unwrap()
        };
        let max = mk(PoolingMode::Max);
        let mean = mk(PoolingMode::Mean);
        let mix = mk(PoolingMode::Mix);
        assert_eq!(&mix[..3], &max[..]);
        assert_eq!(&mix[3..], &mean[..]);
    }

    #[test]
    fn regularized_loss_exceeds_unregularized_for_nonzero_params() {
        let cfg = CnnConfig {
            widths: vec![2],
            filters_per_width: 2,
            rng_seed: 51,
            ..Default::default()
        };
        let model = CnnModel::init(&cfg, vec![0, 1], 1, 2).unwrap();
        assert!(model.theta_sq() > 0.0);
        let image = random_image(1, 2, 8, 51);
        let unrolled = unroll_image(&image, &cfg.widths).unwrap();
        let batch = [(&unrolled, 0usize)];
        let (l0, _) = batch_loss_and_grads(&model, &batch, 0.0);
        let (l1, _) = batch_loss_and_grads(&model, &batch, 1e-3);
        assert!(l1 > l0);
    }

    #[test]
    fn circular_extension_preserves_max_pooled_features() {
        // Spike-column image: every max window either contains the spike
        // (present identically in both lengths) or is all zero, so the max
        // over the repeated sequence equals the original max.
        let cfg = CnnConfig {
            widths: vec![3, 5],
            filters_per_width: 4,
            pooling: PoolingMode::Max,
            rng_seed: 61,
            ..Default::default()
        };
        let model = CnnModel::init(&cfg, vec![0, 1], 2, 3).unwrap();
        let mut rng = stream_rng(61, "spike");
        let t = 118;
        let mut values = Array3::zeros((2, 3, t));
        for k in 0..2 {
            for l in 0..3 {
                values[(k, l, 50)] = rng.gen_range(0.5..1.0);
            }
        }
        let image = MultiChannelImage { values: values.clone() };
        let mut extended = Array3::zeros((2, 3, 2 * t));
        for k in 0..2 {
            for l in 0..3 {
                for ti in 0..2 * t {
                    extended[(k, l, ti)] = values[(k, l, ti % t)];
                }
            }
        }
        let extended = MultiChannelImage { values: extended };
        let a = pooled_features(&model, &image).unwrap();
        let b = pooled_features(&model, &extended).unwrap();
        assert_eq!(a, b);
        let (la, _) = predict_cnn(&model, &image).unwrap();
        let (lb, _) = predict_cnn(&model, &extended).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn prediction_rejects_images_shorter_than_the_widest_filter() {
        let cfg = CnnConfig {
            widths: vec![3, 5],
            filters_per_width: 2,
            rng_seed: 71,
            ..Default::default()
        };
        let model = CnnModel::init(&cfg, vec![0, 1], 1, 2).unwrap();
        let image = random_image(1, 2, 4, 71);
        assert!(matches!(
            predict_cnn(&model, &image),
            Err(Error::ImageTooShort { t: 4, width: 5 })
        ));
    }

    #[test]
    fn model_serialization_round_trips() {
        let (images, labels) = separable_images(3, 10, 81);
        let cfg = CnnConfig {
            widths: vec![2, 3],
            filters_per_width: 3,
            epochs: 2,
            minibatch: 3,
            rng_seed: 81,
            ..Default::default()
        };
        let (model, _) = train_cnn(&images, &labels, &cfg).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = CnnModel::read_from(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(model.flatten_params(), back.flatten_params());
        assert_eq!(model.classes, back.classes);
        let (la, pa) = predict_cnn(&model, &images[0]).unwrap();
        let (lb, pb) = predict_cnn(&back, &images[0]).unwrap();
        assert_eq!((la, pa), (lb, pb));
    }

    #[test]
    fn weight_dropout_mode_trains_without_error() {
        let (images, labels) = separable_images(4, 10, 91);
        let cfg = CnnConfig {
            widths: vec![3],
            filters_per_width: 2,
            epochs: 3,
            minibatch: 4,
            dropout_rate: 0.5,
            dropout_on_weights: true,
            rng_seed: 91,
            ..Default::default()
        };
        let (model, losses) = train_cnn(&images, &labels, &cfg).unwrap();
        assert_eq!(losses.len(), 3);
        assert!(losses.iter().all(|l| l.is_finite()));
        let (_, probs) = predict_cnn(&model, &images[0]).unwrap();
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn default_config_matches_reference_hyperparameters() {
        let cfg = CnnConfig::default();
        assert_eq!(cfg.widths, vec![3, 5, 7]);
        assert_abs_diff_eq!(cfg.learning_rate, 1e-4, epsilon = 0.0);
        assert_abs_diff_eq!(cfg.dropout_rate, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(cfg.lambda, 1e-3, epsilon = 0.0);
        assert_eq!(cfg.minibatch, 50);
        let paper = CnnConfig::paper_scale();
        assert_eq!(paper.filters_per_width, 1000);
        assert_eq!(paper.epochs, 500);
    }
}
