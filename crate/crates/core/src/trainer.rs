//! Two-phase training: a model is first fit with cross-entropy on the
//! original data (becoming the frozen organic teacher and the student's warm
//! start), then fine-tuned on the original/augmented mixture under the
//! selected objective. All comparison methods share phase one, the batch
//! sampling streams, early stopping, and evaluation, so runs differ only in
//! the phase-two objective.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    corrupt_tokens, eda_augment, flip_labels, identity_augment, EdaConfig, Lexicon, NoiseConfig,
};
use crate::classifier::{Architecture, Classifier, LossItem, LossTarget};
use crate::data::{split_dev, subsample, Dataset};
use crate::error::{OddaError, Result};
use crate::features::FeatureVector;
use crate::losses::{
    glitter_select, hard_ce, reweight_factors, small_loss_select, softmax, temperature_softmax,
    BaselineConfig, BaselineMode, MaskPlan, OdConfig, PoolCandidate, SrConfig, POOL_AUG, POOL_ORIG,
};
use crate::metrics::{accuracy, macro_f1, per_class_f1};
use crate::report::RunReport;
use crate::rng::SeededRng;

/// Phase-two training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-entropy on the original data only.
    Supervised,
    /// Plain augmentation: cross-entropy over the mixture with hard labels.
    Eda,
    /// Keep the highest-loss candidates from a larger pool, then train as Eda.
    Glitter,
    /// Keep the lowest-loss candidates, then train as Eda.
    SmallLoss,
    /// Loss-softmax re-weighting of augmented instances within each batch.
    Reweight,
    /// Cross-entropy on originals plus a KL tie to each augmented variant.
    Consistency,
    /// Teacher-divergence selection stub, then train as Eda.
    EpidaStub,
    /// Distillation of frozen-teacher soft targets onto augmented data.
    OddaOd,
    /// Hard-label mixture training plus dropout self-regularization.
    OddaSr,
    /// Distillation plus self-regularization (the full joint objective).
    OddaBoth,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::Eda => "eda",
            Method::Glitter => "glitter",
            Method::SmallLoss => "small_loss",
            Method::Reweight => "reweight",
            Method::Consistency => "consistency",
            Method::EpidaStub => "epida_stub",
            Method::OddaOd => "odda_od",
            Method::OddaSr => "odda_sr",
            Method::OddaBoth => "odda_both",
        }
    }

    pub fn all() -> &'static [Method] {
        &[
            Method::Supervised,
            Method::Eda,
            Method::Glitter,
            Method::SmallLoss,
            Method::Reweight,
            Method::Consistency,
            Method::EpidaStub,
            Method::OddaOd,
            Method::OddaSr,
            Method::OddaBoth,
        ]
    }

    fn uses_soft_targets(&self) -> bool {
        matches!(self, Method::OddaOd | Method::OddaBoth)
    }

    fn uses_sr(&self) -> bool {
        matches!(self, Method::OddaSr | Method::OddaBoth)
    }

    fn is_filtering(&self) -> bool {
        matches!(self, Method::Glitter | Method::SmallLoss | Method::EpidaStub)
    }

    /// Methods that draw mixed original/augmented batches at the 1:k ratio.
    fn mixes_batches(&self) -> bool {
        !matches!(self, Method::Supervised | Method::Consistency)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = OddaError;
    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| OddaError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub hash_bits: u32,
    pub ngram_max: u32,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { arch: Architecture::Mlp1, hash_bits: 18, ngram_max: 2, hidden: 64, dropout_rate: 0.1 }
    }
}

impl ModelConfig {
    pub fn build(&self, num_classes: usize, rng: &SeededRng) -> Result<Classifier> {
        Classifier::new(
            self.arch,
            self.hash_bits,
            self.ngram_max,
            num_classes,
            if self.arch == Architecture::Mlp1 { self.hidden } else { 0 },
            self.dropout_rate,
            rng,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    MacroF1,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    pub metric: EarlyStopMetric,
    /// Evaluations without improvement before training stops.
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { metric: EarlyStopMetric::MacroF1, patience: 10 }
    }
}

/// All training hyperparameters. Steps, not epochs, are the unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub model: ModelConfig,
    pub od: OdConfig,
    pub sr: SrConfig,
    pub baseline: Option<BaselineConfig>,
    /// Amplification factor: augmented variants per original, and the
    /// original:augmented mixing ratio of each batch.
    pub k: usize,
    pub dev_fraction: f64,
    pub eval_interval: usize,
    pub early_stopping: EarlyStopping,
    pub seed: u64,
    pub iterative_teacher: bool,
    /// Separate root for the dropout-mask streams; defaults to `seed`.
    pub dropout_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            teacher_steps: 300,
            student_steps: 500,
            batch_size: 32,
            lr: 0.1,
            weight_decay: 0.0,
            model: ModelConfig::default(),
            od: OdConfig::default(),
            sr: SrConfig::default(),
            baseline: None,
            k: 3,
            dev_fraction: 0.1,
            eval_interval: 25,
            early_stopping: EarlyStopping::default(),
            seed: 0,
            iterative_teacher: false,
            dropout_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, method: Method) -> Result<()> {
        if self.teacher_steps < 1 || self.student_steps < 1 {
            return Err(OddaError::Config("teacher_steps and student_steps must be >= 1".into()));
        }
        if self.eval_interval < 1 || self.eval_interval > self.student_steps {
            return Err(OddaError::Config(format!(
                "eval_interval must be in [1, student_steps], got {}",
                self.eval_interval
            )));
        }
        if self.k < 1 {
            return Err(OddaError::Config("k must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(OddaError::Config("batch_size must be >= 1".into()));
        }
        if method.mixes_batches() && self.batch_size < self.k + 1 {
            return Err(OddaError::Config(format!(
                "batch_size {} cannot hold the 1:{} original:augmented ratio",
                self.batch_size, self.k
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(OddaError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(OddaError::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(OddaError::Config(format!(
                "dev_fraction must be in [0,1), got {}",
                self.dev_fraction
            )));
        }
        self.od.validate()?;
        self.sr.validate()?;
        if let Some(b) = &self.baseline {
            b.validate()?;
        }
        if method.is_filtering() && self.baseline.is_none() {
            return Err(OddaError::Config(format!(
                "method `{method}` needs a baseline config (pool_k, select_k)"
            )));
        }
        Ok(())
    }

    fn dropout_rng(&self) -> SeededRng {
        SeededRng::new(self.dropout_seed.unwrap_or(self.seed))
    }
}

/// One loss-log entry. `dev_macro_f1` appears on evaluation steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub ce: f64,
    pub od: f64,
    pub sr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Classifier,
    /// Best dev macro-F1 seen at an evaluation boundary, if dev was non-empty.
    pub best_dev: Option<f64>,
    pub log: Vec<LogRecord>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// Dropout-disabled metrics on a dataset.
pub fn evaluate(model: &Classifier, d: &Dataset) -> Result<EvalMetrics> {
    if model.num_classes != d.num_classes() {
        return Err(OddaError::Data(format!(
            "label mismatch: model has {} classes, dataset {}",
            model.num_classes,
            d.num_classes()
        )));
    }
    if d.is_empty() {
        return Err(OddaError::Data("cannot evaluate on an empty dataset".into()));
    }
    let preds: Vec<usize> =
        d.examples.iter().map(|e| model.predict(&model.featurize(&e.text))).collect();
    let golds: Vec<usize> = d.examples.iter().map(|e| e.label).collect();
    Ok(EvalMetrics {
        macro_f1: macro_f1(&preds, &golds, d.num_classes())?,
        accuracy: accuracy(&preds, &golds)?,
        per_class_f1: per_class_f1(&preds, &golds, d.num_classes())?,
    })
}

fn featurize_all(d: &Dataset, cfg: &ModelConfig) -> Vec<FeatureVector> {
    d.examples
        .iter()
        .map(|e| {
            crate::features::featurize_tokens(
                &crate::features::tokenize(&e.text),
                cfg.hash_bits,
                cfg.ngram_max,
            )
        })
        .collect()
}

fn dev_macro_f1(model: &Classifier, dev: &Dataset, feats: &[FeatureVector]) -> Result<f64> {
    let preds: Vec<usize> = feats.iter().map(|f| model.predict(f)).collect();
    let golds: Vec<usize> = dev.examples.iter().map(|e| e.label).collect();
    macro_f1(&preds, &golds, dev.num_classes())
}

/// Best-checkpoint tracking with patience measured in evaluation intervals.
struct BestTracker {
    patience: usize,
    best: Option<(f64, Classifier)>,
    evals_since_improvement: usize,
}

impl BestTracker {
    fn new(patience: usize) -> Self {
        Self { patience, best: None, evals_since_improvement: 0 }
    }

    /// Returns true when this evaluation improved on the best so far.
    fn observe(&mut self, metric: f64, model: &Classifier) -> bool {
        let improved = self.best.as_ref().is_none_or(|(b, _)| metric > *b);
        if improved {
            self.best = Some((metric, model.clone()));
            self.evals_since_improvement = 0;
        } else {
            self.evals_since_improvement += 1;
        }
        improved
    }

    fn exhausted(&self) -> bool {
        self.evals_since_improvement >= self.patience
    }

    fn finish(self, fallback: Classifier) -> (Classifier, Option<f64>) {
        match self.best {
            Some((metric, model)) => (model, Some(metric)),
            None => (fallback, None),
        }
    }
}

fn sample_indices(
    rng: &SeededRng,
    tag: &str,
    step: usize,
    sub: u64,
    count: usize,
    n: usize,
) -> Vec<usize> {
    let mut stream = rng.stream(tag, &[step as u64, sub]);
    (0..count).map(|_| stream.gen_range(0..n)).collect()
}

/// Phase one: cross-entropy on the original data, early-stopped on dev
/// macro-F1. The returned checkpoint is the best dev evaluation (or the
/// final parameters when dev is empty).
pub fn train_teacher(d: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(Method::Supervised)?;
    let rng = SeededRng::new(cfg.seed);
    let (train, dev) = split_dev(d, cfg.dev_fraction, &rng)?;
    teacher_phase(&train, &dev, cfg)
}

fn teacher_phase(train: &Dataset, dev: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(OddaError::Data("cannot train on an empty dataset".into()));
    }
    let rng = SeededRng::new(cfg.seed);
    let mut model = cfg.model.build(train.num_classes(), &rng)?;
    let train_feats = featurize_all(train, &cfg.model);
    let dev_feats = featurize_all(dev, &cfg.model);
    let mut tracker = BestTracker::new(cfg.early_stopping.patience);
    let mut log = Vec::new();
    let mut steps = 0;
    for step in 1..=cfg.teacher_steps {
        steps = step;
        let idx = sample_indices(&rng, "teacher-batch", step, 0, cfg.batch_size, train.len());
        let weight = 1.0 / idx.len() as f64;
        let items: Vec<LossItem> = idx
            .iter()
            .map(|&i| LossItem {
                features: &train_feats[i],
                target: LossTarget::Hard { label: train.examples[i].label },
                mask: None,
                weight,
            })
            .collect();
        let (sums, grads) = model.backward(&items)?;
        model.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;
        let mut record = LogRecord {
            step,
            ce: sums.hard,
            od: 0.0,
            sr: 0.0,
            consistency: None,
            total: sums.total(),
            dev_macro_f1: None,
        };
        let mut stop = false;
        if step % cfg.eval_interval == 0 && !dev.is_empty() {
            let f1 = dev_macro_f1(&model, dev, &dev_feats)?;
            record.dev_macro_f1 = Some(f1);
            tracker.observe(f1, &model);
            stop = tracker.exhausted();
        }
        log.push(record);
        if stop {
            break;
        }
    }
    let (model, best_dev) = tracker.finish(model);
    Ok(TrainOutcome { model, best_dev, log, steps, warnings: Vec::new() })
}

/// Phase two with the full joint objective (distillation plus
/// self-regularization). Carves the dev split from `d` internally.
pub fn train_student_odda(
    d: &Dataset,
    d_aug: &Dataset,
    teacher: &Classifier,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let rng = SeededRng::new(cfg.seed);
    let (train, dev) = split_dev(d, cfg.dev_fraction, &rng)?;
    train_student(Method::OddaBoth, &train, &dev, d_aug, teacher, cfg)
}

/// Phase two under the baseline mode named in `cfg.baseline`.
pub fn train_baseline(
    d: &Dataset,
    d_aug_pool: &Dataset,
    teacher: &Classifier,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mode = cfg
        .baseline
        .as_ref()
        .ok_or_else(|| OddaError::Config("train_baseline needs cfg.baseline".into()))?
        .mode;
    let method = match mode {
        BaselineMode::Glitter => Method::Glitter,
        BaselineMode::SmallLoss => Method::SmallLoss,
        BaselineMode::Reweight => Method::Reweight,
        BaselineMode::Consistency => Method::Consistency,
        BaselineMode::EpidaStub => Method::EpidaStub,
    };
    let rng = SeededRng::new(cfg.seed);
    let (train, dev) = split_dev(d, cfg.dev_fraction, &rng)?;
    train_student(method, &train, &dev, d_aug_pool, teacher, cfg)
}

/// Phase-two training core, shared by every method. The student warm-starts
/// from the teacher parameters; the teacher stays frozen unless
/// `iterative_teacher` swaps in the best student at an improving evaluation.
pub fn train_student(
    method: Method,
    train: &Dataset,
    dev: &Dataset,
    aug_pool: &Dataset,
    teacher: &Classifier,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(method)?;
    if train.is_empty() {
        return Err(OddaError::Data("cannot train on an empty dataset".into()));
    }
    if teacher.num_classes != train.num_classes() {
        return Err(OddaError::Data("teacher/dataset class count mismatch".into()));
    }
    let mut warnings = Vec::new();
    if aug_pool.is_empty() && method != Method::Supervised {
        warnings.push(format!(
            "augmented pool is empty; `{method}` degrades to original-data terms only"
        ));
    }

    let rng = SeededRng::new(cfg.seed);
    let dropout_rng = cfg.dropout_rng();
    let mut student = teacher.clone();
    let mut frozen_teacher = teacher.clone();

    let train_feats = featurize_all(train, &cfg.model);
    let dev_feats = featurize_all(dev, &cfg.model);
    let aug_feats = featurize_all(aug_pool, &cfg.model);

    // teacher soft targets for the distillation term, cached once
    let mut teacher_probs: Vec<Vec<f64>> = if method.uses_soft_targets() {
        teacher_soft_targets(&frozen_teacher, &aug_feats, cfg.od.tau)?
    } else {
        Vec::new()
    };

    // consistency needs the origin -> variants mapping
    let variants_by_origin: BTreeMap<u64, Vec<usize>> = if method == Method::Consistency {
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (pos, ex) in aug_pool.examples.iter().enumerate() {
            let origin = ex.origin_id.ok_or_else(|| {
                OddaError::Data(
                    "consistency training needs origin_id on every augmented example".into(),
                )
            })?;
            map.entry(origin).or_default().push(pos);
        }
        map
    } else {
        BTreeMap::new()
    };

    let select_k = cfg.baseline.as_ref().map(|b| b.select_k).unwrap_or(cfg.k);
    // filtering pools are re-scored once per epoch-equivalent of the mixture
    let epoch_steps = ((train.len() + select_k * train.len()) + cfg.batch_size - 1)
        / cfg.batch_size.max(1);
    let id_to_pos: BTreeMap<u64, usize> =
        aug_pool.examples.iter().enumerate().map(|(pos, e)| (e.id, pos)).collect();

    let mut active: Vec<usize> = (0..aug_pool.len()).collect();
    if method == Method::EpidaStub {
        // teacher is static, so the divergence selection never changes
        let origin_feats = |origin: u64| {
            train
                .examples
                .iter()
                .position(|e| e.id == origin)
                .map(|pos| train_feats[pos].clone())
        };
        let pool = pool_candidates(aug_pool, &aug_feats)?;
        let ids =
            crate::losses::epida_stub_select(&pool, &origin_feats, &frozen_teacher, select_k)?;
        active = ids.iter().map(|id| id_to_pos[id]).collect();
    }

    let n_orig_batch = if method.mixes_batches() {
        (cfg.batch_size / (cfg.k + 1)).max(1)
    } else {
        cfg.batch_size
    };

    let mut tracker = BestTracker::new(cfg.early_stopping.patience);
    let mut log = Vec::new();
    let mut steps = 0;
    for step in 1..=cfg.student_steps {
        steps = step;

        if matches!(method, Method::Glitter | Method::SmallLoss) && (step - 1) % epoch_steps == 0 {
            let pool = pool_candidates(aug_pool, &aug_feats)?;
            let ids = match method {
                Method::Glitter => glitter_select(&pool, &student, select_k)?,
                _ => small_loss_select(&pool, &student, select_k)?,
            };
            active = ids.iter().map(|id| id_to_pos[id]).collect();
        }

        let orig_idx = sample_indices(&rng, "batch", step, 0, n_orig_batch, train.len());
        let n_aug_batch = if method.mixes_batches() && !active.is_empty() {
            cfg.batch_size - n_orig_batch
        } else {
            0
        };
        let aug_positions: Vec<usize> =
            sample_indices(&rng, "batch", step, 1, n_aug_batch, active.len().max(1))
                .into_iter()
                .map(|j| active[j])
                .collect();

        let plan = MaskPlan {
            base_key: dropout_rng.key("srmask", &[step as u64]),
            m: cfg.sr.m,
            rate: cfg.model.dropout_rate,
        };
        let items = build_items(
            method,
            cfg,
            train,
            &train_feats,
            aug_pool,
            &aug_feats,
            &teacher_probs,
            &variants_by_origin,
            &orig_idx,
            &aug_positions,
            &plan,
            &student,
        )?;

        let (sums, grads) = student.backward(&items)?;
        student.sgd_step(&grads, cfg.lr, cfg.weight_decay)?;

        let sr_raw = if method.uses_sr() && cfg.sr.alpha > 0.0 {
            sums.self_reg / cfg.sr.alpha
        } else {
            0.0
        };
        let mut record = LogRecord {
            step,
            ce: sums.hard,
            od: sums.soft,
            sr: sr_raw,
            consistency: (method == Method::Consistency).then_some(sums.consistency),
            total: sums.total(),
            dev_macro_f1: None,
        };

        let mut stop = false;
        if step % cfg.eval_interval == 0 && !dev.is_empty() {
            let f1 = dev_macro_f1(&student, dev, &dev_feats)?;
            record.dev_macro_f1 = Some(f1);
            let improved = tracker.observe(f1, &student);
            if improved && cfg.iterative_teacher && method.uses_soft_targets() {
                frozen_teacher = student.clone();
                teacher_probs = teacher_soft_targets(&frozen_teacher, &aug_feats, cfg.od.tau)?;
            }
            stop = tracker.exhausted();
        }
        log.push(record);
        if stop {
            break;
        }
    }
    let (model, best_dev) = tracker.finish(student);
    Ok(TrainOutcome { model, best_dev, log, steps, warnings })
}

fn teacher_soft_targets(
    teacher: &Classifier,
    aug_feats: &[FeatureVector],
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    aug_feats
        .iter()
        .map(|f| temperature_softmax(&teacher.forward(f, None), tau))
        .collect()
}

fn pool_candidates<'a>(
    pool: &'a Dataset,
    feats: &'a [FeatureVector],
) -> Result<Vec<PoolCandidate<'a>>> {
    pool.examples
        .iter()
        .zip(feats)
        .map(|(ex, f)| {
            let origin_id = ex.origin_id.ok_or_else(|| {
                OddaError::Data(format!(
                    "pool filtering needs origin_id on every candidate (example {})",
                    ex.id
                ))
            })?;
            Ok(PoolCandidate { id: ex.id, origin_id, label: ex.label, features: f })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_items<'a>(
    method: Method,
    cfg: &TrainConfig,
    train: &Dataset,
    train_feats: &'a [FeatureVector],
    aug_pool: &Dataset,
    aug_feats: &'a [FeatureVector],
    teacher_probs: &[Vec<f64>],
    variants_by_origin: &BTreeMap<u64, Vec<usize>>,
    orig_idx: &[usize],
    aug_positions: &[usize],
    plan: &MaskPlan,
    student: &Classifier,
) -> Result<Vec<LossItem<'a>>> {
    let n_orig = orig_idx.len();
    let n_aug = aug_positions.len();
    let n_all = n_orig + n_aug;
    let mut items: Vec<LossItem<'a>> = Vec::new();

    let ce_mask = |pool: u64, id: u64| {
        if cfg.sr.shares_forward && method.uses_sr() {
            Some(plan.mask_at(pool, id, 0))
        } else {
            None
        }
    };

    match method {
        Method::Supervised => {
            for &i in orig_idx {
                items.push(LossItem {
                    features: &train_feats[i],
                    target: LossTarget::Hard { label: train.examples[i].label },
                    mask: None,
                    weight: 1.0 / n_orig as f64,
                });
            }
        }
        Method::Eda | Method::Glitter | Method::SmallLoss | Method::EpidaStub => {
            // uniform hard cross-entropy over the mixed batch
            let weight = 1.0 / n_all as f64;
            for &i in orig_idx {
                items.push(LossItem {
                    features: &train_feats[i],
                    target: LossTarget::Hard { label: train.examples[i].label },
                    mask: None,
                    weight,
                });
            }
            for &pos in aug_positions {
                items.push(LossItem {
                    features: &aug_feats[pos],
                    target: LossTarget::Hard { label: aug_pool.examples[pos].label },
                    mask: None,
                    weight,
                });
            }
        }
        Method::Reweight => {
            let lambda = cfg.baseline.as_ref().map(|b| b.lambda).unwrap_or(1.0);
            let weight = 1.0 / n_all as f64;
            for &i in orig_idx {
                items.push(LossItem {
                    features: &train_feats[i],
                    target: LossTarget::Hard { label: train.examples[i].label },
                    mask: None,
                    weight,
                });
            }
            if n_aug > 0 {
                // weights come from the current batch losses and are treated
                // as constants by the gradient
                let losses: Vec<f64> = aug_positions
                    .iter()
                    .map(|&pos| {
                        let p = softmax(&student.forward(&aug_feats[pos], None));
                        hard_ce(&p, aug_pool.examples[pos].label)
                    })
                    .collect::<Result<_>>()?;
                let factors = reweight_factors(&losses, lambda)?;
                for (&pos, w) in aug_positions.iter().zip(&factors) {
                    items.push(LossItem {
                        features: &aug_feats[pos],
                        target: LossTarget::Hard { label: aug_pool.examples[pos].label },
                        mask: None,
                        weight: w * n_aug as f64 / n_all as f64,
                    });
                }
            }
        }
        Method::Consistency => {
            let alpha_c = cfg.baseline.as_ref().map(|b| b.alpha_c).unwrap_or(10.0);
            for &i in orig_idx {
                items.push(LossItem {
                    features: &train_feats[i],
                    target: LossTarget::Hard { label: train.examples[i].label },
                    mask: None,
                    weight: 1.0 / n_orig as f64,
                });
                if alpha_c > 0.0 {
                    let variants: Vec<&FeatureVector> = variants_by_origin
                        .get(&train.examples[i].id)
                        .map(|positions| positions.iter().map(|&p| &aug_feats[p]).collect())
                        .unwrap_or_default();
                    if !variants.is_empty() {
                        items.push(LossItem {
                            features: &train_feats[i],
                            target: LossTarget::Consistency { variants },
                            mask: None,
                            weight: alpha_c / n_orig as f64,
                        });
                    }
                }
            }
        }
        Method::OddaOd | Method::OddaSr | Method::OddaBoth => {
            if method == Method::OddaSr {
                // hard labels on the whole mixture, as in plain augmentation
                let weight = 1.0 / n_all as f64;
                for &i in orig_idx {
                    items.push(LossItem {
                        features: &train_feats[i],
                        target: LossTarget::Hard { label: train.examples[i].label },
                        mask: ce_mask(POOL_ORIG, train.examples[i].id),
                        weight,
                    });
                }
                for &pos in aug_positions {
                    items.push(LossItem {
                        features: &aug_feats[pos],
                        target: LossTarget::Hard { label: aug_pool.examples[pos].label },
                        mask: ce_mask(POOL_AUG, aug_pool.examples[pos].id),
                        weight,
                    });
                }
            } else {
                for &i in orig_idx {
                    items.push(LossItem {
                        features: &train_feats[i],
                        target: LossTarget::Hard { label: train.examples[i].label },
                        mask: ce_mask(POOL_ORIG, train.examples[i].id),
                        weight: 1.0 / n_orig as f64,
                    });
                }
                for &pos in aug_positions {
                    items.push(LossItem {
                        features: &aug_feats[pos],
                        target: LossTarget::Soft {
                            target: teacher_probs[pos].clone(),
                            scale: cfg.od.od_scale(),
                        },
                        mask: ce_mask(POOL_AUG, aug_pool.examples[pos].id),
                        weight: 1.0 / n_aug.max(1) as f64,
                    });
                }
            }
            if method.uses_sr() && cfg.sr.alpha > 0.0 {
                let weight = cfg.sr.alpha / n_all as f64;
                for &i in orig_idx {
                    items.push(LossItem {
                        features: &train_feats[i],
                        target: LossTarget::SelfReg {
                            masks: plan.sr_masks(POOL_ORIG, train.examples[i].id),
                        },
                        mask: None,
                        weight,
                    });
                }
                for &pos in aug_positions {
                    items.push(LossItem {
                        features: &aug_feats[pos],
                        target: LossTarget::SelfReg {
                            masks: plan.sr_masks(POOL_AUG, aug_pool.examples[pos].id),
                        },
                        mask: None,
                        weight,
                    });
                }
            }
        }
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Full pipeline: subsample -> augment -> corrupt -> noise -> teacher ->
// student -> evaluate, once per seed.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmenterKind {
    Eda,
    Identity,
    /// Pre-generated augmented file supplied by the caller.
    External,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub p_n: f64,
    /// Separate noise stream root; defaults to a stream derived from the
    /// run seed, so flipping strength is the only thing `p_n` changes.
    pub seed: Option<u64>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { p_n: 0.0, seed: None }
    }
}

/// Deletion of recognizable tokens from augmented texts (for benchmarks
/// that degrade augmentation quality). Empty prefix disables it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptParams {
    pub prefix: String,
    pub rate: f64,
}

impl Default for CorruptParams {
    fn default() -> Self {
        Self { prefix: String::new(), rate: 0.0 }
    }
}

/// Everything one experiment needs beyond the datasets themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub augmenter: AugmenterKind,
    pub subsample_fraction: f64,
    /// Edit probabilities for the EDA augmenter. The pipeline overrides its
    /// `k` with `train.k` (or `baseline.pool_k` for filtering methods).
    pub eda: EdaConfig,
    pub noise: NoiseParams,
    pub corrupt: CorruptParams,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::OddaBoth,
            augmenter: AugmenterKind::Eda,
            subsample_fraction: 1.0,
            eda: EdaConfig::default(),
            noise: NoiseParams::default(),
            corrupt: CorruptParams::default(),
            train: TrainConfig::default(),
        }
    }
}

pub struct PipelineInputs<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub lexicon: &'a Lexicon,
    pub stopwords: &'a BTreeSet<String>,
    /// Pre-generated augmented dataset for [`AugmenterKind::External`].
    pub external_aug: Option<&'a Dataset>,
}

#[derive(Debug)]
pub struct SingleRunOutcome {
    pub metrics: EvalMetrics,
    pub model: Classifier,
    pub best_dev: Option<f64>,
    pub teacher_log: Vec<LogRecord>,
    pub student_log: Vec<LogRecord>,
    pub warnings: Vec<String>,
}

/// One full pipeline run under one seed.
pub fn run_single(cfg: &RunConfig, inputs: &PipelineInputs, seed: u64) -> Result<SingleRunOutcome> {
    let mut cfg = cfg.clone();
    cfg.train.seed = seed;
    cfg.train.validate(cfg.method)?;
    if !(0.0 < cfg.subsample_fraction && cfg.subsample_fraction <= 1.0) {
        return Err(OddaError::Config(format!(
            "subsample_fraction must be in (0,1], got {}",
            cfg.subsample_fraction
        )));
    }
    let rng = SeededRng::new(seed);

    let sub = if cfg.subsample_fraction < 1.0 {
        subsample(inputs.train, cfg.subsample_fraction, &rng)?
    } else {
        inputs.train.clone()
    };
    let (train_part, dev) = split_dev(&sub, cfg.train.dev_fraction, &rng)?;

    let aug = if cfg.method == Method::Supervised {
        Dataset::from_parts(train_part.label_names.clone(), Vec::new())
    } else {
        let amplification = if cfg.method.is_filtering() {
            cfg.train
                .baseline
                .as_ref()
                .map(|b| b.pool_k)
                .unwrap_or(BaselineConfig::default().pool_k)
        } else {
            cfg.train.k
        };
        let base = match cfg.augmenter {
            AugmenterKind::Eda => {
                let eda = EdaConfig { k: amplification, ..cfg.eda };
                eda_augment(&train_part, &eda, inputs.lexicon, inputs.stopwords, &rng)?
            }
            AugmenterKind::Identity => identity_augment(&train_part, amplification),
            AugmenterKind::External => inputs
                .external_aug
                .ok_or_else(|| {
                    OddaError::Config("external augmenter selected but no file provided".into())
                })?
                .clone(),
        };
        let base = if cfg.corrupt.rate > 0.0 && !cfg.corrupt.prefix.is_empty() {
            corrupt_tokens(&base, &cfg.corrupt.prefix, cfg.corrupt.rate, &rng)?
        } else {
            base
        };
        if cfg.noise.p_n > 0.0 {
            let noise_seed = cfg.noise.seed.unwrap_or_else(|| rng.key("noise-seed", &[]));
            flip_labels(&base, &NoiseConfig { p_n: cfg.noise.p_n, seed: noise_seed })?
        } else {
            base
        }
    };

    let teacher_out = teacher_phase(&train_part, &dev, &cfg.train)?;
    let student_out =
        train_student(cfg.method, &train_part, &dev, &aug, &teacher_out.model, &cfg.train)?;
    let metrics = evaluate(&student_out.model, inputs.test)?;
    Ok(SingleRunOutcome {
        metrics,
        model: student_out.model,
        best_dev: student_out.best_dev,
        teacher_log: teacher_out.log,
        student_log: student_out.log,
        warnings: student_out.warnings,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub f1: RunReport,
    pub accuracy: RunReport,
    pub per_seed: Vec<(u64, EvalMetrics)>,
}

/// Full pipeline per seed, aggregated into mean and population std.
pub fn run_experiment(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    seeds: &[u64],
) -> Result<ExperimentOutcome> {
    if seeds.is_empty() {
        return Err(OddaError::Config("need at least one seed".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let out = run_single(cfg, inputs, seed).map_err(|e| match e {
            OddaError::Config(m) => OddaError::Config(format!("seed {seed}: {m}")),
            OddaError::Data(m) => OddaError::Data(format!("seed {seed}: {m}")),
            OddaError::Numeric(m) => OddaError::Numeric(format!("seed {seed}: {m}")),
            other => other,
        })?;
        per_seed.push((seed, out.metrics));
    }
    let hyper = serde_json::to_value(cfg).expect("config serializes");
    let f1 = RunReport::new(
        cfg.method.name(),
        "macro_f1",
        seeds.to_vec(),
        per_seed.iter().map(|(_, m)| m.macro_f1).collect(),
        hyper.clone(),
    );
    let accuracy = RunReport::new(
        cfg.method.name(),
        "accuracy",
        seeds.to_vec(),
        per_seed.iter().map(|(_, m)| m.accuracy).collect(),
        hyper,
    );
    Ok(ExperimentOutcome { f1, accuracy, per_seed })
}
