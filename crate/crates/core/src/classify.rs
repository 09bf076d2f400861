//! Point-cloud classification: a handcrafted rotation-z-insensitive feature
//! descriptor feeding a linear softmax head, trained from scratch with
//! mini-batch adaptive-moments updates, cosine learning-rate annealing, and
//! optional point-cloud mixup.
//!
//! The head also accepts externally computed feature or probability matrices
//! (CSV), so deep backbones can drive the adaptation loop without being
//! linked here.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::{cast, mix_seed, to_f64, Real};
use crate::pointcloud::{mixup, PointCloud};

/// Layout of the feature descriptor. `dim` equals
/// `16 + radial_bins + height_bins + 4 * shells` for the built-in extractor;
/// an "external" spec (structure fields zero) marks models fed by precomputed
/// feature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub dim: usize,
    pub radial_bins: usize,
    pub height_bins: usize,
    pub knn_k: usize,
    pub shells: usize,
}

impl FeatureSpec {
    /// The default 64-dimensional descriptor.
    pub fn builtin() -> Self {
        Self {
            dim: 64,
            radial_bins: 16,
            height_bins: 16,
            knn_k: 8,
            shells: 4,
        }
    }

    /// Marker spec for models trained on externally supplied features.
    pub fn external(dim: usize) -> Self {
        Self {
            dim,
            radial_bins: 0,
            height_bins: 0,
            knn_k: 0,
            shells: 0,
        }
    }

    pub fn is_builtin(&self) -> bool {
        self.radial_bins > 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_builtin()
            && self.dim != 16 + self.radial_bins + self.height_bins + 4 * self.shells
        {
            return Err(Error::InvalidConfig(format!(
                "feature dim {} inconsistent with layout",
                self.dim
            )));
        }
        Ok(())
    }
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Deterministic descriptor of a unit-ball-normalized cloud: covariance
/// eigen-structure and radial moments, radial and height histograms, and
/// per-shell k-NN spacing statistics. Invariant to rotation about z by
/// construction.
pub fn extract_features<T: Real>(pc: &PointCloud<T>, spec: &FeatureSpec) -> Result<Vec<T>> {
    spec.validate()?;
    if !spec.is_builtin() {
        return Err(Error::InvalidConfig(
            "external feature spec cannot extract from clouds".into(),
        ));
    }
    let pts = pc.points();
    let n = pts.len();
    if n < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: n,
            context: "feature extraction".into(),
        });
    }

    let centroid = pc.centroid();
    let radii: Vec<T> = pts.iter().map(|p| (p - centroid).norm()).collect();
    let max_r = radii.iter().fold(T::zero(), |a, &b| a.max(b));
    if max_r <= T::zero() {
        return Err(Error::Degenerate("all points identical".into()));
    }

    let mut features = Vec::with_capacity(spec.dim);

    // Covariance eigen-structure (invariant to any rotation).
    let inv_n = T::one() / cast::<T>(n as f64);
    let mut cov = Matrix3::<T>::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov *= inv_n;
    let mut eig: Vec<T> = cov
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&e| e.max(T::zero()))
        .collect();
    eig.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let trace = (eig[0] + eig[1] + eig[2]).max(cast::<T>(1e-30));
    let (e1, e2, e3) = (eig[0] / trace, eig[1] / trace, eig[2] / trace);
    let e1s = e1.max(cast::<T>(1e-30));
    features.push(e1);
    features.push(e2);
    features.push(e3);
    features.push(e2 / e1s);
    features.push(e3 / e1s);
    features.push(e3 / e2.max(cast::<T>(1e-30)));
    features.push((e1 - e2) / e1s); // linearity
    features.push((e2 - e3) / e1s); // planarity
    features.push((e1 - e3) / e1s); // anisotropy
    let mut entropy = T::zero();
    for &e in &[e1, e2, e3] {
        if e > T::zero() {
            entropy -= e * e.ln();
        }
    }
    features.push(entropy);

    // Radial moments and extrema; z spread (z is preserved by z-rotation).
    let mean_r = radii.iter().fold(T::zero(), |a, &b| a + b) * inv_n;
    let var_r = radii
        .iter()
        .fold(T::zero(), |a, &b| a + (b - mean_r) * (b - mean_r))
        * inv_n;
    let std_r = var_r.sqrt();
    let (skew, kurt) = if std_r > T::zero() {
        let m3 = radii
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean_r).powi(3))
            * inv_n;
        let m4 = radii
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean_r).powi(4))
            * inv_n;
        (m3 / std_r.powi(3), m4 / var_r.powi(2))
    } else {
        (T::zero(), T::zero())
    };
    let min_r = radii.iter().fold(max_r, |a, &b| a.min(b));
    let zs: Vec<T> = pts.iter().map(|p| p.z - centroid.z).collect();
    let min_z = zs.iter().fold(zs[0], |a, &b| a.min(b));
    let max_z = zs.iter().fold(zs[0], |a, &b| a.max(b));
    features.push(mean_r);
    features.push(std_r);
    features.push(skew);
    features.push(kurt);
    features.push(min_r / max_r);
    features.push((max_z - min_z) / (max_r + max_r)); // z extent vs diameter
    debug_assert_eq!(features.len(), 16);

    // Radial histogram over [0, max_r].
    let mut radial = vec![T::zero(); spec.radial_bins];
    for &r in &radii {
        let b = (to_f64(r / max_r) * spec.radial_bins as f64) as usize;
        radial[b.min(spec.radial_bins - 1)] += inv_n;
    }
    features.extend_from_slice(&radial);

    // Height histogram over [min_z, max_z].
    let mut height = vec![T::zero(); spec.height_bins];
    let z_span = (max_z - min_z).max(cast::<T>(1e-30));
    for &z in &zs {
        let b = (to_f64((z - min_z) / z_span) * spec.height_bins as f64) as usize;
        height[b.min(spec.height_bins - 1)] += inv_n;
    }
    features.extend_from_slice(&height);

    // Local spacing: mean distance to the k nearest neighbors per point,
    // summarized per radial shell as mean/std/min/max.
    let k = spec.knn_k.min(n - 1);
    let spacings: Vec<T> = (0..n)
        .map(|i| {
            let mut d2: Vec<T> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (pts[i] - pts[j]).norm_squared())
                .collect();
            d2.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite"));
            let sum = d2[..k].iter().fold(T::zero(), |a, &b| a + b.sqrt());
            sum / cast::<T>(k as f64)
        })
        .collect();
    for shell in 0..spec.shells {
        let lo = cast::<T>(shell as f64 / spec.shells as f64) * max_r;
        let hi = cast::<T>((shell + 1) as f64 / spec.shells as f64) * max_r;
        let members: Vec<T> = radii
            .iter()
            .zip(&spacings)
            .filter(|(&r, _)| r >= lo && (r < hi || shell == spec.shells - 1))
            .map(|(_, &s)| s)
            .collect();
        if members.is_empty() {
            features.extend_from_slice(&[T::zero(); 4]);
            continue;
        }
        let m = cast::<T>(members.len() as f64);
        let mean = members.iter().fold(T::zero(), |a, &b| a + b) / m;
        let var = members
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
            / m;
        let mn = members.iter().fold(members[0], |a, &b| a.min(b));
        let mx = members.iter().fold(members[0], |a, &b| a.max(b));
        features.push(mean);
        features.push(var.sqrt());
        features.push(mn);
        features.push(mx);
    }

    debug_assert_eq!(features.len(), spec.dim);
    Ok(features)
}

/// Training record: seed, schedule length, loss curve, and the accuracy the
/// model reached on its own training set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_accuracy: f64,
    pub loss_curve: Vec<f64>,
}

/// Linear softmax head over a fixed feature descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T: Real> {
    pub spec: FeatureSpec,
    pub num_classes: usize,
    /// K x D, row-major by class.
    weights: Vec<T>,
    bias: Vec<T>,
    pub meta: TrainingMeta,
}

impl<T: Real> ClassifierModel<T> {
    pub fn zeroed(spec: FeatureSpec, num_classes: usize) -> Self {
        Self {
            spec,
            num_classes,
            weights: vec![T::zero(); num_classes * spec.dim],
            bias: vec![T::zero(); num_classes],
            meta: TrainingMeta::default(),
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.dim
    }

    /// Class probabilities for a precomputed feature vector.
    pub fn predict_proba_features(&self, features: &[T]) -> Result<Vec<T>> {
        if features.len() != self.spec.dim {
            return Err(Error::Checkpoint(format!(
                "feature dimension {} does not match model dimension {}",
                features.len(),
                self.spec.dim
            )));
        }
        let mut logits = vec![T::zero(); self.num_classes];
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &self.weights[k * self.spec.dim..(k + 1) * self.spec.dim];
            let mut acc = self.bias[k];
            for (w, x) in row.iter().zip(features) {
                acc += *w * *x;
            }
            *l = acc;
        }
        Ok(softmax(&logits))
    }
}

/// Class probabilities for a cloud, using the model's built-in descriptor.
pub fn predict_proba<T: Real>(model: &ClassifierModel<T>, pc: &PointCloud<T>) -> Result<Vec<T>> {
    if !model.spec.is_builtin() {
        return Err(Error::Checkpoint(
            "model was trained on external features; supply a feature matrix".into(),
        ));
    }
    let f = extract_features(pc, &model.spec)?;
    model.predict_proba_features(&f)
}

/// Numerically stable softmax; output sums to 1.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(logits[0], |a, &b| a.max(b));
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = out.iter().fold(T::zero(), |a, &b| a + b);
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Optimizer settings: adaptive moments with a cosine-annealed learning rate.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-5,
            batch_size: 16,
            epochs: 200,
            seed: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train on labeled clouds with the built-in descriptor. Every class in
/// [0, num_classes) must be present. With `mixup_enabled`, one mixed sample
/// per original is added to the pool and consumed with soft-label
/// cross-entropy.
pub fn train<T: Real>(
    data: &[PointCloud<T>],
    num_classes: usize,
    cfg: &TrainConfig,
    mixup_enabled: bool,
) -> Result<ClassifierModel<T>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training clouds".into()));
    }
    let mut seen = vec![false; num_classes];
    for pc in data {
        match pc.label {
            Some(l) if l < num_classes => seen[l] = true,
            _ => {
                return Err(Error::InvalidConfig(
                    "every training cloud needs a label below num_classes".into(),
                ))
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::ClassAbsent(missing));
    }

    let spec = FeatureSpec::builtin();
    let mut xs: Vec<Vec<T>> = data
        .par_iter()
        .map(|pc| extract_features(pc, &spec))
        .collect::<Result<_>>()?;
    let mut ys: Vec<Vec<T>> = data
        .iter()
        .map(|pc| one_hot(pc.label.unwrap(), num_classes))
        .collect();

    if mixup_enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x6d69_7875));
        let min_points = data.iter().map(|c| c.len()).min().unwrap();
        let mixed: Vec<(PointCloud<T>, Vec<T>)> = (0..data.len())
            .map(|_| {
                let a = rng.random_range(0..data.len());
                let b = rng.random_range(0..data.len());
                let lambda = rng.random::<f64>();
                mixup(
                    &data[a],
                    &data[b],
                    lambda,
                    min_points,
                    num_classes,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let mixed_feats: Vec<Vec<T>> = mixed
            .par_iter()
            .map(|(pc, _)| extract_features(pc, &spec))
            .collect::<Result<_>>()?;
        for ((_, soft), f) in mixed.into_iter().zip(mixed_feats) {
            xs.push(f);
            ys.push(soft);
        }
    }

    train_on_soft_features(&xs, &ys, num_classes, spec, cfg)
}

/// Train the softmax head on feature rows with soft-label targets. This is
/// the engine behind both [`train`] and the self-training loop.
pub fn train_on_soft_features<T: Real>(
    xs: &[Vec<T>],
    ys: &[Vec<T>],
    num_classes: usize,
    spec: FeatureSpec,
    cfg: &TrainConfig,
) -> Result<ClassifierModel<T>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::EmptyInput(
            "empty or mismatched training matrices".into(),
        ));
    }
    let d = spec.dim;
    for x in xs {
        if x.len() != d {
            return Err(Error::InvalidConfig(
                "feature row dimension mismatch".into(),
            ));
        }
    }
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("bad optimizer settings".into()));
    }

    let n = xs.len();
    let mut model = ClassifierModel::zeroed(spec, num_classes);
    model.meta.seed = cfg.seed;
    model.meta.epochs = cfg.epochs;

    let mut m_w = vec![0.0f64; num_classes * d];
    let mut v_w = vec![0.0f64; num_classes * d];
    let mut m_b = vec![0.0f64; num_classes];
    let mut v_b = vec![0.0f64; num_classes];
    let mut step = 0i32;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate
            * 0.5
            * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;

        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad_w, grad_b) = batch_loss_and_grad(&model, xs, ys, batch);
            epoch_loss += loss * batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step);
            let bc2 = 1.0 - ADAM_BETA2.powi(step);
            for (i, g) in grad_w.iter().enumerate() {
                let g = g + cfg.weight_decay * to_f64(model.weights[i]);
                m_w[i] = ADAM_BETA1 * m_w[i] + (1.0 - ADAM_BETA1) * g;
                v_w[i] = ADAM_BETA2 * v_w[i] + (1.0 - ADAM_BETA2) * g * g;
                let update = lr * (m_w[i] / bc1) / ((v_w[i] / bc2).sqrt() + ADAM_EPS);
                model.weights[i] -= cast::<T>(update);
            }
            for (i, g) in grad_b.iter().enumerate() {
                m_b[i] = ADAM_BETA1 * m_b[i] + (1.0 - ADAM_BETA1) * g;
                v_b[i] = ADAM_BETA2 * v_b[i] + (1.0 - ADAM_BETA2) * g * g;
                let update = lr * (m_b[i] / bc1) / ((v_b[i] / bc2).sqrt() + ADAM_EPS);
                model.bias[i] -= cast::<T>(update);
            }
        }

        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        model.meta.loss_curve.push(epoch_loss);
    }

    let mut correct = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        let p = model.predict_proba_features(x)?;
        if argmax(&p) == argmax(y) {
            correct += 1;
        }
    }
    model.meta.final_train_accuracy = correct as f64 / n as f64;
    Ok(model)
}

/// Mean soft-label cross-entropy over `batch` and its gradient w.r.t. the
/// head weights and biases (without the weight-decay term).
fn batch_loss_and_grad<T: Real>(
    model: &ClassifierModel<T>,
    xs: &[Vec<T>],
    ys: &[Vec<T>],
    batch: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = model.spec.dim;
    let k = model.num_classes;
    let mut grad_w = vec![0.0f64; k * d];
    let mut grad_b = vec![0.0f64; k];
    let mut loss = 0.0f64;
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let p = model
            .predict_proba_features(&xs[i])
            .expect("dimensions checked at entry");
        for c in 0..k {
            let yc = to_f64(ys[i][c]);
            let pc = to_f64(p[c]);
            if yc > 0.0 {
                loss -= yc * pc.max(1e-300).ln() * scale;
            }
            let g = (pc - yc) * scale;
            grad_b[c] += g;
            for (j, x) in xs[i].iter().enumerate() {
                grad_w[c * d + j] += g * to_f64(*x);
            }
        }
    }
    (loss, grad_w, grad_b)
}

/// Loss and analytic gradient of the softmax head on explicit parameters:
/// mean cross-entropy plus (weight_decay / 2) * ||W||^2. Exposed for the
/// finite-difference gradient checks.
pub fn head_loss_and_grad<T: Real>(
    weights: &[T],
    bias: &[T],
    num_classes: usize,
    xs: &[Vec<T>],
    ys: &[Vec<T>],
    weight_decay: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let mut model = ClassifierModel::<T>::zeroed(FeatureSpec::external(d), num_classes);
    model.weights.copy_from_slice(weights);
    model.bias.copy_from_slice(bias);
    let batch: Vec<usize> = (0..xs.len()).collect();
    let (mut loss, mut grad_w, grad_b) = batch_loss_and_grad(&model, xs, ys, &batch);
    for (g, w) in grad_w.iter_mut().zip(weights) {
        let w = to_f64(*w);
        *g += weight_decay * w;
        loss += 0.5 * weight_decay * w * w;
    }
    (loss, grad_w, grad_b)
}

/// Accuracy, per-class accuracy, and confusion matrix. Confusion rows are
/// true classes, columns predicted.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

pub fn evaluate_predictions(
    predicted: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<Evaluation> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::EmptyInput(
            "empty or mismatched evaluation inputs".into(),
        ));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut correct = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1;
        if p == t {
            correct += 1;
        }
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[t] as f64 / total as f64
            }
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        per_class_accuracy,
        confusion,
        samples: truth.len(),
    })
}

/// Evaluate a model on labeled clouds.
pub fn evaluate<T: Real>(model: &ClassifierModel<T>, data: &[PointCloud<T>]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no evaluation clouds".into()));
    }
    let predicted: Vec<usize> = data
        .par_iter()
        .map(|pc| predict_proba(model, pc).map(|p| argmax(&p)))
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = data
        .iter()
        .map(|pc| {
            pc.label
                .ok_or_else(|| Error::InvalidConfig("evaluation clouds must be labeled".into()))
        })
        .collect::<Result<_>>()?;
    evaluate_predictions(&predicted, &truth, model.num_classes)
}

/// Index of the largest value; ties break toward the lower index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn one_hot<T: Real>(label: usize, k: usize) -> Vec<T> {
    let mut v = vec![T::zero(); k];
    v[label] = T::one();
    v
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PCLS";
const CHECKPOINT_VERSION: u32 = 1;

/// Save the versioned binary checkpoint (magic, layout, K, D, weights,
/// biases, training meta).
pub fn save_checkpoint<T: Real>(model: &ClassifierModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(io)?;
    for v in [
        model.spec.dim,
        model.spec.radial_bins,
        model.spec.height_bins,
        model.spec.knn_k,
        model.spec.shells,
        model.num_classes,
    ] {
        out.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
    }
    for w in model.weights.iter().chain(model.bias.iter()) {
        out.write_all(&to_f64(*w).to_le_bytes()).map_err(io)?;
    }
    out.write_all(&model.meta.seed.to_le_bytes()).map_err(io)?;
    out.write_all(&(model.meta.epochs as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&model.meta.final_train_accuracy.to_le_bytes())
        .map_err(io)?;
    out.write_all(&(model.meta.loss_curve.len() as u64).to_le_bytes())
        .map_err(io)?;
    for l in &model.meta.loss_curve {
        out.write_all(&l.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ClassifierModel<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<Vec<u8>> {
        if bytes.len() < pos + n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = bytes[pos..pos + n].to_vec();
        pos += n;
        Ok(s)
    };

    if take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut next_u32 =
        || -> Result<usize> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize) };
    let dim = next_u32()?;
    let radial_bins = next_u32()?;
    let height_bins = next_u32()?;
    let knn_k = next_u32()?;
    let shells = next_u32()?;
    let num_classes = next_u32()?;
    let spec = FeatureSpec {
        dim,
        radial_bins,
        height_bins,
        knn_k,
        shells,
    };
    spec.validate()
        .map_err(|_| Error::Checkpoint("inconsistent feature layout".into()))?;

    let mut next_f64 = || -> Result<f64> { Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())) };
    let mut weights = Vec::with_capacity(num_classes * dim);
    for _ in 0..num_classes * dim {
        weights.push(cast::<T>(next_f64()?));
    }
    let mut bias = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        bias.push(cast::<T>(next_f64()?));
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let epochs = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let final_train_accuracy = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let curve_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut loss_curve = Vec::with_capacity(curve_len.min(1 << 24));
    for _ in 0..curve_len {
        loss_curve.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    Ok(ClassifierModel {
        spec,
        num_classes,
        weights,
        bias,
        meta: TrainingMeta {
            seed,
            epochs,
            final_train_accuracy,
            loss_curve,
        },
    })
}

/// Write an n x K probability (or feature) matrix as bare CSV.
pub fn write_matrix_csv<T: Real>(rows: &[Vec<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{}", to_f64(*v))).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_matrix_csv<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Vec<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<T> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map(cast)
                    .map_err(|e| Error::parse(path, lineno + 1, format!("bad number: {e}")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn random_unit_cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| loop {
                let p = Point3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                if p.coords.norm() <= 1.0 {
                    break p;
                }
            })
            .collect();
        PointCloud::new(points)
    }

    fn shell_cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                let v = nalgebra::Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize();
                Point3::from(v)
            })
            .collect();
        PointCloud::new(points)
    }

    pub(crate) fn gaussian_clusters(
        per_class: &[usize],
        d: usize,
        spread: f64,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                let mut x = vec![0.0f64; d];
                x[c % d] += 4.0;
                for v in x.iter_mut() {
                    let g: f64 =
                        rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5;
                    *v += g * spread;
                }
                xs.push(x);
                ys.push(c);
            }
        }
        (xs, ys)
    }

    fn to_soft(ys: &[usize], k: usize) -> Vec<Vec<f64>> {
        ys.iter().map(|&y| one_hot(y, k)).collect()
    }

    #[test]
    fn features_are_z_rotation_invariant() {
        let pc = random_unit_cloud(256, 1);
        let spec = FeatureSpec::builtin();
        let f0 = extract_features(&pc, &spec).unwrap();
        for angle in [0.3f64, 1.7, 4.4] {
            let (s, c) = angle.sin_cos();
            let rotated = PointCloud::new(
                pc.points()
                    .iter()
                    .map(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
                    .collect(),
            );
            let f1 = extract_features(&rotated, &spec).unwrap();
            for (a, b) in f0.iter().zip(&f1) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn features_distinguish_shell_from_ball() {
        let spec = FeatureSpec::builtin();
        let ball = extract_features(&random_unit_cloud(512, 2), &spec).unwrap();
        let shell = extract_features(&shell_cloud(512, 3), &spec).unwrap();
        // radial histogram block sits at features[16..32]
        let diff: f64 = (16..32).map(|i| (ball[i] - shell[i]).abs()).sum();
        assert!(diff > 0.5, "radial histograms too similar: {diff}");
    }

    #[test]
    fn features_are_deterministic_and_sized() {
        let pc = random_unit_cloud(128, 4);
        let spec = FeatureSpec::builtin();
        let a = extract_features(&pc, &spec).unwrap();
        let b = extract_features(&pc, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn degenerate_cloud_errors() {
        let pc = PointCloud::new(vec![Point3::new(0.5, 0.5, 0.5); 32]);
        assert!(extract_features(&pc, &FeatureSpec::builtin()).is_err());
    }

    #[test]
    fn softmax_known_values() {
        let p = softmax(&[2.0f64, 0.0, 0.0]);
        assert!((p[0] - 0.7869).abs() < 1e-4);
        assert!((p[1] - 0.1065).abs() < 1e-4);
        assert!((p[2] - 0.1065).abs() < 1e-4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let model = ClassifierModel::<f64>::zeroed(FeatureSpec::external(3), 4);
        let p = model.predict_proba_features(&[0.3, -0.7, 2.0]).unwrap();
        for v in &p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_toy_set_overfits_to_full_accuracy() {
        let (xs, ys) = gaussian_clusters(&[10, 10, 10, 10], 8, 0.4, 5);
        let cfg = TrainConfig {
            epochs: 200,
            seed: 1,
            ..TrainConfig::default()
        };
        let model =
            train_on_soft_features(&xs, &to_soft(&ys, 4), 4, FeatureSpec::external(8), &cfg)
                .unwrap();
        assert_eq!(model.meta.final_train_accuracy, 1.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (xs, ys) = gaussian_clusters(&[4, 4], 5, 0.5, 6);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let model =
            train_on_soft_features(&xs, &to_soft(&ys, 2), 2, FeatureSpec::external(5), &cfg)
                .unwrap();
        assert!(model.weights().iter().all(|&w| w == 0.0));
        let p = model.predict_proba_features(&xs[0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (xs, ys) = gaussian_clusters(&[8, 8, 8], 6, 0.8, 7);
        let cfg = TrainConfig {
            epochs: 30,
            seed: 42,
            ..TrainConfig::default()
        };
        let soft = to_soft(&ys, 3);
        let a = train_on_soft_features(&xs, &soft, 3, FeatureSpec::external(6), &cfg).unwrap();
        let b = train_on_soft_features(&xs, &soft, 3, FeatureSpec::external(6), &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.bias(), b.bias());
    }

    #[test]
    fn full_batch_training_loss_is_non_increasing() {
        let (xs, ys) = gaussian_clusters(&[12, 12, 12], 6, 0.6, 8);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: xs.len(),
            epochs: 60,
            seed: 3,
        };
        let model =
            train_on_soft_features(&xs, &to_soft(&ys, 3), 3, FeatureSpec::external(6), &cfg)
                .unwrap();
        for w in model.meta.loss_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (d, k, n) = (4usize, 3usize, 6usize);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| one_hot(rng.random_range(0..k), k)).collect();
            let weights: Vec<f64> = (0..k * d).map(|_| rng.random::<f64>() - 0.5).collect();
            let bias: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
            let wd = 1e-2;
            let (_, grad_w, grad_b) = head_loss_and_grad(&weights, &bias, k, &xs, &ys, wd);
            let h = 1e-6;
            for i in 0..k * d {
                let mut wp = weights.clone();
                let mut wm = weights.clone();
                wp[i] += h;
                wm[i] -= h;
                let (lp, _, _) = head_loss_and_grad(&wp, &bias, k, &xs, &ys, wd);
                let (lm, _, _) = head_loss_and_grad(&wm, &bias, k, &xs, &ys, wd);
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad_w[i].abs()).max(1e-8);
                assert!(
                    ((grad_w[i] - fd) / denom).abs() < 1e-4,
                    "weight {i}: analytic {} vs fd {fd}",
                    grad_w[i]
                );
            }
            for i in 0..k {
                let mut bp = bias.clone();
                let mut bm = bias.clone();
                bp[i] += h;
                bm[i] -= h;
                let (lp, _, _) = head_loss_and_grad(&weights, &bp, k, &xs, &ys, wd);
                let (lm, _, _) = head_loss_and_grad(&weights, &bm, k, &xs, &ys, wd);
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad_b[i].abs()).max(1e-8);
                assert!(((grad_b[i] - fd) / denom).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn evaluate_counts_and_random_baseline() {
        let truth: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let eval = evaluate_predictions(&truth, &truth, 4).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        for t in 0..4 {
            assert_eq!(eval.confusion[t].iter().sum::<usize>(), 25);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 2000;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let eval = evaluate_predictions(&pred, &truth, 10).unwrap();
        assert!((eval.accuracy - 0.1).abs() < 0.03, "acc {}", eval.accuracy);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let (xs, ys) = gaussian_clusters(&[6, 6], 5, 0.7, 14);
        let cfg = TrainConfig {
            epochs: 10,
            seed: 2,
            ..TrainConfig::default()
        };
        let model =
            train_on_soft_features(&xs, &to_soft(&ys, 2), 2, FeatureSpec::external(5), &cfg)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&model, &p).unwrap();
        let back = load_checkpoint::<f64>(&p).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn matrix_csv_roundtrip() {
        let rows = vec![vec![0.25f64, 0.5, 0.25], vec![1.0, 0.0, 0.0]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("proba.csv");
        write_matrix_csv(&rows, &p).unwrap();
        let back = read_matrix_csv::<f64>(&p).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn train_on_clouds_requires_full_class_coverage() {
        let mut clouds: Vec<PointCloud<f64>> = (0..6)
            .map(|i| {
                let mut c = random_unit_cloud(64, 20 + i);
                c.label = Some((i % 2) as usize);
                c
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&clouds, 3, &cfg, false),
            Err(Error::ClassAbsent(2))
        ));
        clouds[5].label = Some(2);
        assert!(train(&clouds, 3, &cfg, false).is_ok());
    }

    #[test]
    fn mixup_training_runs_and_is_deterministic() {
        let clouds: Vec<PointCloud<f64>> = (0..8)
            .map(|i| {
                let mut c = random_unit_cloud(128, 30 + i);
                c.label = Some((i % 2) as usize);
                c
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train(&clouds, 2, &cfg, true).unwrap();
        let b = train(&clouds, 2, &cfg, true).unwrap();
        assert_eq!(a.weights(), b.weights());
    }
}
