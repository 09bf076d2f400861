//! Self-training for unsupervised domain adaptation: confident pseudo-label
//! generation under a growing threshold, quasi-balanced selection driven by
//! predicted-class sparsity, the threshold-only and equal-proportion
//! baselines, and the iterative from-scratch retraining loop.
//!
//! Source samples never enter a self-training batch: every round trains a
//! fresh model on selected pseudo-labeled target samples only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{self, argmax, extract_features, ClassifierModel, FeatureSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::num::{cast, mix_seed, to_f64, Real};
use crate::pointcloud::PointCloud;

/// Confident pseudo-labels over a target set. One entry per assigned sample;
/// samples whose top probability did not exceed the threshold are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet<T: Real> {
    pub num_classes: usize,
    /// Threshold the set was generated with.
    pub theta: f64,
    /// Indices into the target set, ascending.
    pub sample_index: Vec<usize>,
    /// Argmax class per assigned sample.
    pub label: Vec<usize>,
    /// Top probability per assigned sample; strictly greater than theta.
    pub confidence: Vec<T>,
    /// Selection mask over the assigned samples (filled by a select call).
    pub selected: Vec<bool>,
    /// L_k: confident samples per predicted class.
    pub per_class_confident: Vec<usize>,
    /// L: total confident samples.
    pub total_confident: usize,
    /// mu_k = 1 - L_k / L; zero for empty classes and when L = 0.
    pub weights: Vec<T>,
}

impl<T: Real> PseudoLabelSet<T> {
    pub fn selected_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for (i, &sel) in self.selected.iter().enumerate() {
            if sel {
                counts[self.label[i]] += 1;
            }
        }
        counts
    }

    pub fn selected_total(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Shannon entropy (nats) of the selected-set label distribution.
    pub fn selected_entropy(&self) -> f64 {
        let counts = self.selected_counts();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let mut h = 0.0;
        for &c in &counts {
            if c > 0 {
                let q = c as f64 / total as f64;
                h -= q * q.ln();
            }
        }
        h
    }
}

/// Assign pseudo-labels from an n x K probability matrix: a sample is
/// assigned its argmax class only when that probability strictly exceeds
/// `theta`; otherwise it stays unassigned.
pub fn pseudo_labels_from_proba<T: Real>(
    proba: &[Vec<T>],
    num_classes: usize,
    theta: f64,
) -> Result<PseudoLabelSet<T>> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie in (0, 1), got {theta}"
        )));
    }
    let th = cast::<T>(theta);
    let mut sample_index = Vec::new();
    let mut label = Vec::new();
    let mut confidence = Vec::new();
    let mut per_class_confident = vec![0usize; num_classes];
    for (i, p) in proba.iter().enumerate() {
        if p.len() != num_classes {
            return Err(Error::InvalidConfig(
                "probability row width does not match class count".into(),
            ));
        }
        let k = argmax(p);
        if p[k] > th {
            sample_index.push(i);
            label.push(k);
            confidence.push(p[k]);
            per_class_confident[k] += 1;
        }
    }
    let total_confident = sample_index.len();
    let weights = per_class_confident
        .iter()
        .map(|&lk| {
            if total_confident == 0 || lk == 0 {
                T::zero()
            } else {
                T::one() - cast::<T>(lk as f64) / cast::<T>(total_confident as f64)
            }
        })
        .collect();
    let selected = vec![false; total_confident];
    Ok(PseudoLabelSet {
        num_classes,
        theta,
        sample_index,
        label,
        confidence,
        selected,
        per_class_confident,
        total_confident,
        weights,
    })
}

/// Pseudo-labels for target clouds under `model`.
pub fn generate_pseudo_labels<T: Real>(
    model: &ClassifierModel<T>,
    target: &[PointCloud<T>],
    theta: f64,
) -> Result<PseudoLabelSet<T>> {
    let proba: Vec<Vec<T>> = target
        .iter()
        .map(|pc| classify::predict_proba(model, pc))
        .collect::<Result<_>>()?;
    pseudo_labels_from_proba(&proba, model.num_classes, theta)
}

/// Per-class order of assigned samples: confidence descending, ties broken
/// by the lower sample index.
fn class_order<T: Real>(pls: &PseudoLabelSet<T>, class: usize) -> Vec<usize> {
    let mut members: Vec<usize> = (0..pls.label.len())
        .filter(|&i| pls.label[i] == class)
        .collect();
    members.sort_by(|&a, &b| {
        pls.confidence[b]
            .partial_cmp(&pls.confidence[a])
            .expect("finite confidences")
            .then(pls.sample_index[a].cmp(&pls.sample_index[b]))
    });
    members
}

/// Quasi-balanced selection: class k keeps its top max(1, ceil(mu_k * L_k))
/// confident samples, so sparsely predicted classes keep a larger share.
/// The count is computed exactly as ceil(L_k * (L - L_k) / L) in integers.
pub fn quasi_balanced_select<T: Real>(mut pls: PseudoLabelSet<T>) -> PseudoLabelSet<T> {
    pls.selected.fill(false);
    let l = pls.total_confident;
    if l == 0 {
        return pls;
    }
    for k in 0..pls.num_classes {
        let lk = pls.per_class_confident[k];
        if lk == 0 {
            continue;
        }
        let take = (lk * (l - lk)).div_ceil(l).max(1);
        for &i in class_order(&pls, k).iter().take(take) {
            pls.selected[i] = true;
        }
    }
    pls
}

/// Threshold-only baseline: every confident sample is selected.
pub fn spst_select<T: Real>(mut pls: PseudoLabelSet<T>) -> PseudoLabelSet<T> {
    pls.selected.fill(true);
    pls
}

/// Equal-proportion baseline: class k keeps its top ceil(proportion * L_k)
/// confident samples.
pub fn cbst_select<T: Real>(
    mut pls: PseudoLabelSet<T>,
    proportion: f64,
) -> Result<PseudoLabelSet<T>> {
    if !(0.0..=1.0).contains(&proportion) || proportion == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "proportion must lie in (0, 1], got {proportion}"
        )));
    }
    pls.selected.fill(false);
    for k in 0..pls.num_classes {
        let lk = pls.per_class_confident[k];
        if lk == 0 {
            continue;
        }
        // Absorb upward float noise so exact products like 1.0 * L_k do not
        // round up an extra sample.
        let take = ((proportion * lk as f64) - 1e-9).ceil().max(1.0) as usize;
        for &i in class_order(&pls, k).iter().take(take.min(lk)) {
            pls.selected[i] = true;
        }
    }
    Ok(pls)
}

/// Which selection rule a self-training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Qbst,
    Spst,
    Cbst,
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qbst" => Ok(Self::Qbst),
            "spst" => Ok(Self::Spst),
            "cbst" => Ok(Self::Cbst),
            other => Err(Error::InvalidConfig(format!(
                "unknown selection method '{other}' (expected qbst, spst, or cbst)"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Qbst => "qbst",
            Self::Spst => "spst",
            Self::Cbst => "cbst",
        })
    }
}

/// Self-training schedule and inner-loop optimizer settings.
#[derive(Debug, Clone, Copy)]
pub struct SelfTrainConfig {
    pub theta0: f64,
    pub epsilon: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub inner_learning_rate: f64,
    pub inner_batch_size: usize,
    pub method: SelectionMethod,
    pub cbst_proportion: f64,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            theta0: 0.8,
            epsilon: 5e-3,
            rounds: 10,
            epochs_per_round: 10,
            inner_learning_rate: 1e-3,
            inner_batch_size: 32,
            method: SelectionMethod::Qbst,
            cbst_proportion: 0.5,
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta0) || self.theta0 == 0.0 {
            return Err(Error::InvalidConfig("theta0 must lie in (0, 1)".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be non-negative".into()));
        }
        if self.theta0 + self.rounds as f64 * self.epsilon >= 1.0 {
            return Err(Error::InvalidConfig(
                "theta0 + rounds * epsilon must stay below 1".into(),
            ));
        }
        Ok(())
    }

    pub fn theta_at(&self, round: usize) -> f64 {
        self.theta0 + round as f64 * self.epsilon
    }
}

/// One self-training round's diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub theta: f64,
    pub total_confident: usize,
    pub per_class_confident: Vec<usize>,
    pub selected_per_class: Vec<usize>,
    pub selected_total: usize,
    pub selected_entropy: f64,
    /// Fraction of selected pseudo-labels that match held-back target labels
    /// (reporting only; absent when no labels were held back).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_label_precision: Option<f64>,
    /// Accuracy of the round's freshly trained model on the full target set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub rounds: Vec<RoundRecord>,
    /// Round at which selection came up empty and the loop stopped.
    pub aborted_at_round: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_target_accuracy: Option<f64>,
}

/// Target samples for adaptation. Labels on incoming clouds are stripped and
/// held back for diagnostics only; the training path cannot reach them.
#[derive(Debug, Clone)]
pub struct UnlabeledTargets<T: Real> {
    clouds: Vec<PointCloud<T>>,
    eval_labels: Option<Vec<usize>>,
}

impl<T: Real> UnlabeledTargets<T> {
    /// Strip labels from the clouds; when every cloud was labeled, keep the
    /// labels aside for precision reporting.
    pub fn new(clouds: Vec<PointCloud<T>>) -> Self {
        let labels: Option<Vec<usize>> = clouds.iter().map(|c| c.label).collect();
        let clouds = clouds.into_iter().map(|c| c.without_label()).collect();
        Self {
            clouds,
            eval_labels: labels,
        }
    }

    pub fn without_eval_labels(mut self) -> Self {
        self.eval_labels = None;
        self
    }

    pub fn clouds(&self) -> &[PointCloud<T>] {
        &self.clouds
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// Cloud-level self-training. Warm-up trains a pseudo-label generator on the
/// labeled source; each round raises the threshold by epsilon, selects
/// pseudo-labeled target samples with the configured rule, and trains a
/// fresh model from scratch on those samples only, which then becomes the
/// generator. Returns the final generator and per-round diagnostics.
pub fn self_train<T: Real>(
    source: &[PointCloud<T>],
    target: &UnlabeledTargets<T>,
    num_classes: usize,
    cfg: &SelfTrainConfig,
    warmup_cfg: &TrainConfig,
    warmup_mixup: bool,
) -> Result<(ClassifierModel<T>, SelfTrainReport)> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyInput("target set is empty".into()));
    }
    let warmup = classify::train(source, num_classes, warmup_cfg, warmup_mixup)?;
    self_train_from_generator(warmup, target, num_classes, cfg)
}

/// Run the self-training rounds from an existing pseudo-label generator
/// (e.g. a previously trained checkpoint) instead of warming up here.
pub fn self_train_from_generator<T: Real>(
    generator: ClassifierModel<T>,
    target: &UnlabeledTargets<T>,
    num_classes: usize,
    cfg: &SelfTrainConfig,
) -> Result<(ClassifierModel<T>, SelfTrainReport)> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyInput("target set is empty".into()));
    }
    if !generator.spec.is_builtin() {
        return Err(Error::Checkpoint(
            "generator expects external features; use the feature-level entry point".into(),
        ));
    }
    let spec = generator.spec;
    let target_feats: Vec<Vec<T>> = target
        .clouds
        .iter()
        .map(|pc| extract_features(pc, &spec))
        .collect::<Result<_>>()?;
    run_rounds(
        generator,
        &target_feats,
        target.eval_labels.as_deref(),
        num_classes,
        cfg,
    )
}

/// Feature-level self-training: the same loop over precomputed source and
/// target feature matrices (synthetic tasks, external backbones). Hard
/// source labels; `eval_labels` are used for diagnostics only.
pub fn self_train_on_features<T: Real>(
    source_features: &[Vec<T>],
    source_labels: &[usize],
    target_features: &[Vec<T>],
    eval_labels: Option<&[usize]>,
    num_classes: usize,
    cfg: &SelfTrainConfig,
    warmup_cfg: &TrainConfig,
) -> Result<(ClassifierModel<T>, SelfTrainReport)> {
    cfg.validate()?;
    if source_features.is_empty() || target_features.is_empty() {
        return Err(Error::EmptyInput("empty source or target features".into()));
    }
    let d = source_features[0].len();
    let soft: Vec<Vec<T>> = source_labels
        .iter()
        .map(|&l| {
            let mut v = vec![T::zero(); num_classes];
            v[l] = T::one();
            v
        })
        .collect();
    let warmup = classify::train_on_soft_features(
        source_features,
        &soft,
        num_classes,
        FeatureSpec::external(d),
        warmup_cfg,
    )?;
    run_rounds(warmup, target_features, eval_labels, num_classes, cfg)
}

fn run_rounds<T: Real>(
    warmup: ClassifierModel<T>,
    target_feats: &[Vec<T>],
    eval_labels: Option<&[usize]>,
    num_classes: usize,
    cfg: &SelfTrainConfig,
) -> Result<(ClassifierModel<T>, SelfTrainReport)> {
    let mut report = SelfTrainReport {
        warmup_target_accuracy: accuracy_on(&warmup, target_feats, eval_labels)?,
        ..SelfTrainReport::default()
    };
    let mut generator = warmup;

    for round in 0..cfg.rounds {
        let theta = cfg.theta_at(round);
        let proba: Vec<Vec<T>> = target_feats
            .iter()
            .map(|f| generator.predict_proba_features(f))
            .collect::<Result<_>>()?;
        let pls = pseudo_labels_from_proba(&proba, num_classes, theta)?;
        let pls = match cfg.method {
            SelectionMethod::Qbst => quasi_balanced_select(pls),
            SelectionMethod::Spst => spst_select(pls),
            SelectionMethod::Cbst => cbst_select(pls, cfg.cbst_proportion)?,
        };

        let selected: Vec<(usize, usize)> = (0..pls.label.len())
            .filter(|&i| pls.selected[i])
            .map(|i| (pls.sample_index[i], pls.label[i]))
            .collect();

        let precision = eval_labels.map(|truth| {
            if selected.is_empty() {
                0.0
            } else {
                let correct = selected
                    .iter()
                    .filter(|&&(idx, lbl)| truth[idx] == lbl)
                    .count();
                correct as f64 / selected.len() as f64
            }
        });

        if selected.is_empty() {
            report.rounds.push(RoundRecord {
                round,
                theta,
                total_confident: pls.total_confident,
                per_class_confident: pls.per_class_confident.clone(),
                selected_per_class: pls.selected_counts(),
                selected_total: 0,
                selected_entropy: 0.0,
                pseudo_label_precision: precision,
                target_accuracy: None,
            });
            report.aborted_at_round = Some(round);
            log::warn!("self-training aborted at round {round}: empty selection");
            return Ok((generator, report));
        }

        // Fresh model, trained from scratch on the selected pseudo-labeled
        // target samples only.
        let xs: Vec<Vec<T>> = selected
            .iter()
            .map(|&(i, _)| target_feats[i].clone())
            .collect();
        let ys: Vec<Vec<T>> = selected
            .iter()
            .map(|&(_, l)| {
                let mut v = vec![T::zero(); num_classes];
                v[l] = T::one();
                v
            })
            .collect();
        let inner_cfg = TrainConfig {
            learning_rate: cfg.inner_learning_rate,
            weight_decay: 0.0,
            batch_size: cfg.inner_batch_size,
            epochs: cfg.epochs_per_round,
            seed: mix_seed(cfg.seed, round as u64 + 1),
        };
        let fresh =
            classify::train_on_soft_features(&xs, &ys, num_classes, generator.spec, &inner_cfg)?;

        report.rounds.push(RoundRecord {
            round,
            theta,
            total_confident: pls.total_confident,
            per_class_confident: pls.per_class_confident.clone(),
            selected_per_class: pls.selected_counts(),
            selected_total: selected.len(),
            selected_entropy: pls.selected_entropy(),
            pseudo_label_precision: precision,
            target_accuracy: accuracy_on(&fresh, target_feats, eval_labels)?,
        });
        generator = fresh;
    }
    Ok((generator, report))
}

fn accuracy_on<T: Real>(
    model: &ClassifierModel<T>,
    feats: &[Vec<T>],
    labels: Option<&[usize]>,
) -> Result<Option<f64>> {
    let Some(labels) = labels else {
        return Ok(None);
    };
    let mut correct = 0usize;
    for (f, &l) in feats.iter().zip(labels) {
        if argmax(&model.predict_proba_features(f)?) == l {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / labels.len() as f64))
}

/// Append-style JSON-lines report: one record per round.
pub fn write_report_jsonl(report: &SelfTrainReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &report.rounds {
        let line =
            serde_json::to_string(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Selection mask export for inspection: sample_index, label, confidence,
/// selected.
pub fn write_selection_csv<T: Real>(pls: &PseudoLabelSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "sample_index,label,confidence,selected").map_err(|e| Error::io(path, e))?;
    for i in 0..pls.label.len() {
        writeln!(
            out,
            "{},{},{},{}",
            pls.sample_index[i],
            pls.label[i],
            to_f64(pls.confidence[i]),
            pls.selected[i] as u8
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
