//! Dropout-capable softmax classifier over hashed features, with exact
//! analytic gradients and plain SGD updates.
//!
//! Two architectures share one type: a linear softmax layer, and a one
//! hidden-layer MLP with ReLU. Dropout sits on the hidden layer for the MLP
//! and directly on the input features for the linear model, so
//! self-regularization is meaningful for both. The teacher and the student
//! are both just values of this type.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OddaError, Result};
use crate::features::FeatureVector;
use crate::losses::softmax;
use crate::metrics::LOG_EPS;
use crate::rng::{unit_uniform, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp1,
}

/// A dropout mask, materialized lazily per unit from a 64-bit key. Surviving
/// units are scaled by 1/keep so the expectation over masks matches the
/// undropped activations. The key is derived from
/// (root seed, step, instance id, mask index), which makes every mask
/// replayable in isolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutMask {
    key: u64,
    rate: f64,
}

impl DropoutMask {
    pub fn new(key: u64, rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        Self { key, rate }
    }

    /// Scale for one unit: 0 if dropped, 1/(1-rate) if kept.
    #[inline]
    pub fn scale(&self, unit: u64) -> f64 {
        if self.rate == 0.0 {
            return 1.0;
        }
        let keep = 1.0 - self.rate;
        if unit_uniform(self.key, unit) < keep {
            1.0 / keep
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    /// `w[bucket * C + y]`, bias `b[y]`.
    Linear { w: Vec<f64>, b: Vec<f64> },
    /// `w1[bucket * H + t]`, `b1[t]`, `w2[y * H + t]`, `b2[y]`.
    Mlp { w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub arch: Architecture,
    pub bits: u32,
    pub ngram_max: u32,
    pub num_classes: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    params: Params,
}

impl Classifier {
    /// Fresh model. Linear weights start at zero (the objective is convex);
    /// MLP weights start uniform in ±0.05 from the seed's "init" stream.
    pub fn new(
        arch: Architecture,
        bits: u32,
        ngram_max: u32,
        num_classes: usize,
        hidden: usize,
        dropout_rate: f64,
        rng: &SeededRng,
    ) -> Result<Self> {
        if !(12..=24).contains(&bits) {
            return Err(OddaError::Config(format!("hash bits must be in [12, 24], got {bits}")));
        }
        if num_classes < 2 {
            return Err(OddaError::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(OddaError::Config(format!(
                "dropout_rate must be in [0,1), got {dropout_rate}"
            )));
        }
        let n_buckets = 1usize << bits;
        let params = match arch {
            Architecture::Linear => Params::Linear {
                w: vec![0.0; n_buckets * num_classes],
                b: vec![0.0; num_classes],
            },
            Architecture::Mlp1 => {
                if hidden == 0 {
                    return Err(OddaError::Config("mlp1 needs hidden width >= 1".into()));
                }
                use rand::Rng;
                let mut s1 = rng.stream("init", &[0]);
                let mut s2 = rng.stream("init", &[1]);
                let w1 = (0..n_buckets * hidden).map(|_| s1.gen_range(-0.05..0.05)).collect();
                let w2 = (0..num_classes * hidden).map(|_| s2.gen_range(-0.05..0.05)).collect();
                Params::Mlp { w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; num_classes] }
            }
        };
        Ok(Self { arch, bits, ngram_max, num_classes, hidden, dropout_rate, params })
    }

    pub fn n_buckets(&self) -> usize {
        1usize << self.bits
    }

    /// Featurize text with this model's hashing parameters.
    pub fn featurize(&self, text: &str) -> FeatureVector {
        crate::features::featurize_tokens(
            &crate::features::tokenize(text),
            self.bits,
            self.ngram_max,
        )
    }

    /// Logits for one input. Without a mask this is a deterministic function
    /// of (params, input); with a mask, dropout applies to the input features
    /// (linear) or the hidden activations (mlp1).
    pub fn forward(&self, x: &FeatureVector, mask: Option<&DropoutMask>) -> Vec<f64> {
        match &self.params {
            Params::Linear { w, b } => {
                let c = self.num_classes;
                let mut z = b.clone();
                for &(bucket, count) in x.pairs() {
                    let scale = mask.map_or(1.0, |m| m.scale(bucket as u64));
                    if scale == 0.0 {
                        continue;
                    }
                    let v = count as f64 * scale;
                    let row = &w[bucket as usize * c..(bucket as usize + 1) * c];
                    for (zy, wy) in z.iter_mut().zip(row) {
                        *zy += v * wy;
                    }
                }
                z
            }
            Params::Mlp { .. } => self.forward_mlp(x, mask).logits,
        }
    }

    fn forward_mlp(&self, x: &FeatureVector, mask: Option<&DropoutMask>) -> MlpTrace {
        let Params::Mlp { w1, b1, w2, b2 } = &self.params else {
            unreachable!("forward_mlp on linear params")
        };
        let h = self.hidden;
        let mut pre = b1.clone();
        for &(bucket, count) in x.pairs() {
            let v = count as f64;
            let row = &w1[bucket as usize * h..(bucket as usize + 1) * h];
            for (pt, wt) in pre.iter_mut().zip(row) {
                *pt += v * wt;
            }
        }
        let mut dropped = vec![0.0; h];
        for t in 0..h {
            let act = pre[t].max(0.0);
            let scale = mask.map_or(1.0, |m| m.scale(t as u64));
            dropped[t] = act * scale;
        }
        let mut logits = b2.clone();
        for (y, zy) in logits.iter_mut().enumerate() {
            let row = &w2[y * h..(y + 1) * h];
            *zy += row.iter().zip(&dropped).map(|(w, d)| w * d).sum::<f64>();
        }
        MlpTrace { pre, dropped, logits }
    }

    /// Argmax prediction with dropout disabled; ties go to the lowest class.
    pub fn predict(&self, x: &FeatureVector) -> usize {
        let z = self.forward(x, None);
        let mut best = 0;
        for (y, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = y;
            }
        }
        best
    }

    /// Loss sums and exact gradient of a weighted batch of loss terms.
    ///
    /// The epsilon clamp inside logarithms guards only the reported loss
    /// value; gradients use the unclamped cross-entropy/KL derivatives, which
    /// coincide whenever probabilities are above the clamp (always, in
    /// practice, for finite logits).
    pub fn backward(&self, items: &[LossItem]) -> Result<(LossSums, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let mut sums = LossSums::default();
        for item in items {
            if item.weight == 0.0 {
                continue;
            }
            match &item.target {
                LossTarget::Hard { label } => {
                    if *label >= self.num_classes {
                        return Err(OddaError::Numeric(format!(
                            "hard label {label} out of range for {} classes",
                            self.num_classes
                        )));
                    }
                    sums.hard += self.backprop_ce(item, *label, &mut grads)?;
                }
                LossTarget::Soft { target, scale } => {
                    if target.len() != self.num_classes {
                        return Err(OddaError::Numeric("soft target length mismatch".into()));
                    }
                    sums.soft += self.backprop_soft(item, target, *scale, &mut grads)?;
                }
                LossTarget::SelfReg { masks } => {
                    if masks.len() < 2 {
                        return Err(OddaError::Numeric(format!(
                            "self-regularization needs m >= 2 dropout passes, got {}",
                            masks.len()
                        )));
                    }
                    sums.self_reg += self.backprop_sr(item, masks, &mut grads)?;
                }
                LossTarget::Consistency { variants } => {
                    sums.consistency += self.backprop_consistency(item, variants, &mut grads)?;
                }
            };
        }
        Ok((sums, grads))
    }

    fn backprop_ce(&self, item: &LossItem, label: usize, grads: &mut Gradients) -> Result<f64> {
        let mask = item.mask.as_ref();
        let (p, trace) = self.probs_with_trace(item.features, mask);
        let loss = -p[label].max(LOG_EPS).ln();
        let mut dz: Vec<f64> = p;
        dz[label] -= 1.0;
        for g in dz.iter_mut() {
            *g *= item.weight;
        }
        self.accumulate(item.features, mask, &dz, trace.as_ref(), grads);
        Ok(item.weight * loss)
    }

    fn backprop_soft(
        &self,
        item: &LossItem,
        target: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let mask = item.mask.as_ref();
        let (p, trace) = self.probs_with_trace(item.features, mask);
        let loss: f64 = -target.iter().zip(&p).map(|(q, pi)| q * pi.max(LOG_EPS).ln()).sum::<f64>();
        let dz: Vec<f64> =
            p.iter().zip(target).map(|(pi, q)| item.weight * scale * (pi - q)).collect();
        self.accumulate(item.features, mask, &dz, trace.as_ref(), grads);
        Ok(item.weight * scale * loss)
    }

    fn backprop_sr(
        &self,
        item: &LossItem,
        masks: &[DropoutMask],
        grads: &mut Gradients,
    ) -> Result<f64> {
        let m = masks.len();
        let mut probs = Vec::with_capacity(m);
        let mut traces = Vec::with_capacity(m);
        for mask in masks {
            let (p, trace) = self.probs_with_trace(item.features, Some(mask));
            probs.push(p);
            traces.push(trace);
        }
        let c = self.num_classes;
        let mut mean = vec![0.0; c];
        for p in &probs {
            for (my, py) in mean.iter_mut().zip(p) {
                *my += py / m as f64;
            }
        }
        // loss = (1/m) sum_i KL(mean || p_i)
        let mut loss = 0.0;
        for p in &probs {
            for (my, py) in mean.iter().zip(p) {
                if *my > 0.0 {
                    loss += my * (my / py.max(LOG_EPS)).ln() / m as f64;
                }
            }
        }
        // dL/dp_jy = (1/m) [ ln(mean_y) + 1 - (1/m) sum_i ln(p_iy) - mean_y / p_jy ]
        let mut mean_logp = vec![0.0; c];
        for p in &probs {
            for (ly, py) in mean_logp.iter_mut().zip(p) {
                *ly += py.max(LOG_EPS).ln() / m as f64;
            }
        }
        for (j, p_j) in probs.iter().enumerate() {
            let dp: Vec<f64> = (0..c)
                .map(|y| {
                    (mean[y].max(LOG_EPS).ln() + 1.0 - mean_logp[y]
                        - mean[y] / p_j[y].max(LOG_EPS))
                        / m as f64
                })
                .collect();
            let mut dz = softmax_backward(p_j, &dp);
            for g in dz.iter_mut() {
                *g *= item.weight;
            }
            self.accumulate(item.features, Some(&masks[j]), &dz, traces[j].as_ref(), grads);
        }
        Ok(item.weight * loss)
    }

    /// KL(p_orig || p_variant) summed over the variants, with the gradient
    /// flowing through both forward passes.
    fn backprop_consistency(
        &self,
        item: &LossItem,
        variants: &[&FeatureVector],
        grads: &mut Gradients,
    ) -> Result<f64> {
        let (p, p_trace) = self.probs_with_trace(item.features, item.mask.as_ref());
        let c = self.num_classes;
        let mut loss = 0.0;
        let mut dp = vec![0.0; c];
        for vf in variants {
            let (q, q_trace) = self.probs_with_trace(vf, None);
            for y in 0..c {
                if p[y] > 0.0 {
                    loss += p[y] * (p[y] / q[y].max(LOG_EPS)).ln();
                }
                dp[y] += p[y].max(LOG_EPS).ln() + 1.0 - q[y].max(LOG_EPS).ln();
            }
            let dq: Vec<f64> = (0..c).map(|y| -p[y] / q[y].max(LOG_EPS)).collect();
            let mut dzq = softmax_backward(&q, &dq);
            for g in dzq.iter_mut() {
                *g *= item.weight;
            }
            self.accumulate(vf, None, &dzq, q_trace.as_ref(), grads);
        }
        let mut dzp = softmax_backward(&p, &dp);
        for g in dzp.iter_mut() {
            *g *= item.weight;
        }
        self.accumulate(item.features, item.mask.as_ref(), &dzp, p_trace.as_ref(), grads);
        Ok(item.weight * loss)
    }

    fn probs_with_trace(
        &self,
        x: &FeatureVector,
        mask: Option<&DropoutMask>,
    ) -> (Vec<f64>, Option<MlpTrace>) {
        match self.arch {
            Architecture::Linear => (softmax(&self.forward(x, mask)), None),
            Architecture::Mlp1 => {
                let trace = self.forward_mlp(x, mask);
                (softmax(&trace.logits), Some(trace))
            }
        }
    }

    /// Push dL/dz through the network into the gradient accumulator.
    fn accumulate(
        &self,
        x: &FeatureVector,
        mask: Option<&DropoutMask>,
        dz: &[f64],
        trace: Option<&MlpTrace>,
        grads: &mut Gradients,
    ) {
        match (&self.params, &mut grads.blocks) {
            (Params::Linear { .. }, GradBlocks::Linear { rows, b }) => {
                for (gy, dy) in b.iter_mut().zip(dz) {
                    *gy += dy;
                }
                let c = self.num_classes;
                for &(bucket, count) in x.pairs() {
                    let scale = mask.map_or(1.0, |m| m.scale(bucket as u64));
                    if scale == 0.0 {
                        continue;
                    }
                    let v = count as f64 * scale;
                    let row = rows.entry(bucket).or_insert_with(|| vec![0.0; c]);
                    for (ry, dy) in row.iter_mut().zip(dz) {
                        *ry += v * dy;
                    }
                }
            }
            (Params::Mlp { w2, .. }, GradBlocks::Mlp { w1_rows, b1, w2: gw2, b2 }) => {
                let trace = trace.expect("mlp backward needs a forward trace");
                let h = self.hidden;
                for (gy, dy) in b2.iter_mut().zip(dz) {
                    *gy += dy;
                }
                let mut d_dropped = vec![0.0; h];
                for (y, dy) in dz.iter().enumerate() {
                    let row = &w2[y * h..(y + 1) * h];
                    for t in 0..h {
                        gw2[y * h + t] += dy * trace.dropped[t];
                        d_dropped[t] += dy * row[t];
                    }
                }
                let mut d_pre = vec![0.0; h];
                for t in 0..h {
                    if trace.pre[t] > 0.0 {
                        let scale = mask.map_or(1.0, |m| m.scale(t as u64));
                        d_pre[t] = d_dropped[t] * scale;
                    }
                }
                for (gt, dt) in b1.iter_mut().zip(&d_pre) {
                    *gt += dt;
                }
                for &(bucket, count) in x.pairs() {
                    let v = count as f64;
                    let row = w1_rows.entry(bucket).or_insert_with(|| vec![0.0; h]);
                    for (rt, dt) in row.iter_mut().zip(&d_pre) {
                        *rt += v * dt;
                    }
                }
            }
            _ => unreachable!("gradient shape does not match parameters"),
        }
    }

    /// In-place SGD update: theta <- theta - lr * (g + weight_decay * theta).
    pub fn sgd_step(&mut self, g: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        g.check_finite()?;
        if weight_decay != 0.0 {
            let shrink = 1.0 - lr * weight_decay;
            for (_, block) in self.blocks_mut() {
                for w in block.iter_mut() {
                    *w *= shrink;
                }
            }
        }
        match (&mut self.params, &g.blocks) {
            (Params::Linear { w, b }, GradBlocks::Linear { rows, b: gb }) => {
                let c = b.len();
                for (bucket, row) in rows {
                    let base = *bucket as usize * c;
                    for (y, gy) in row.iter().enumerate() {
                        w[base + y] -= lr * gy;
                    }
                }
                for (by, gy) in b.iter_mut().zip(gb) {
                    *by -= lr * gy;
                }
            }
            (Params::Mlp { w1, b1, w2, b2 }, GradBlocks::Mlp { w1_rows, b1: gb1, w2: gw2, b2: gb2 }) => {
                let h = b1.len();
                for (bucket, row) in w1_rows {
                    let base = *bucket as usize * h;
                    for (t, gt) in row.iter().enumerate() {
                        w1[base + t] -= lr * gt;
                    }
                }
                for (bt, gt) in b1.iter_mut().zip(gb1) {
                    *bt -= lr * gt;
                }
                for (wy, gy) in w2.iter_mut().zip(gw2) {
                    *wy -= lr * gy;
                }
                for (by, gy) in b2.iter_mut().zip(gb2) {
                    *by -= lr * gy;
                }
            }
            _ => {
                return Err(OddaError::Numeric(
                    "gradient architecture does not match classifier".into(),
                ))
            }
        }
        Ok(())
    }

    /// Named views of every parameter block (used by checkpoints and the
    /// finite-difference tests).
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        match &self.params {
            Params::Linear { w, b } => vec![("w", w.as_slice()), ("b", b.as_slice())],
            Params::Mlp { w1, b1, w2, b2 } => vec![
                ("w1", w1.as_slice()),
                ("b1", b1.as_slice()),
                ("w2", w2.as_slice()),
                ("b2", b2.as_slice()),
            ],
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match &mut self.params {
            Params::Linear { w, b } => vec![("w", w.as_mut_slice()), ("b", b.as_mut_slice())],
            Params::Mlp { w1, b1, w2, b2 } => vec![
                ("w1", w1.as_mut_slice()),
                ("b1", b1.as_mut_slice()),
                ("w2", w2.as_mut_slice()),
                ("b2", b2.as_mut_slice()),
            ],
        }
    }
}

struct MlpTrace {
    pre: Vec<f64>,
    dropped: Vec<f64>,
    logits: Vec<f64>,
}

/// dL/dz from dL/dp through a softmax: p * (g - <g, p>).
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(pi, gi)| pi * gi).sum();
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// One term of a composite loss: an input, what to regress it against, and
/// its weight in the batch objective.
pub struct LossItem<'a> {
    pub features: &'a FeatureVector,
    pub target: LossTarget<'a>,
    /// Forward-pass mask for Hard/Soft terms; None means inference-mode
    /// forward. SelfReg carries its own masks.
    pub mask: Option<DropoutMask>,
    pub weight: f64,
}

pub enum LossTarget<'a> {
    Hard { label: usize },
    /// Soft cross-entropy against a fixed target distribution; `scale`
    /// multiplies the whole term (1.0 unless tau^2 rescaling is enabled).
    Soft { target: Vec<f64>, scale: f64 },
    /// KL(mean || each pass) averaged over the m dropout passes.
    SelfReg { masks: Vec<DropoutMask> },
    /// KL(this instance || each variant), gradients through both sides.
    Consistency { variants: Vec<&'a FeatureVector> },
}

/// Weighted loss totals per term kind from one backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossSums {
    pub hard: f64,
    pub soft: f64,
    pub self_reg: f64,
    pub consistency: f64,
}

impl LossSums {
    pub fn total(&self) -> f64 {
        self.hard + self.soft + self.self_reg + self.consistency
    }
}

#[derive(Debug, Clone)]
enum GradBlocks {
    Linear { rows: BTreeMap<u32, Vec<f64>>, b: Vec<f64> },
    Mlp { w1_rows: BTreeMap<u32, Vec<f64>>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64> },
}

/// Sparse gradient: bucket-major matrices keep only touched rows.
#[derive(Debug, Clone)]
pub struct Gradients {
    blocks: GradBlocks,
}

impl Gradients {
    fn zeros_like(c: &Classifier) -> Self {
        let blocks = match c.arch {
            Architecture::Linear => GradBlocks::Linear {
                rows: BTreeMap::new(),
                b: vec![0.0; c.num_classes],
            },
            Architecture::Mlp1 => GradBlocks::Mlp {
                w1_rows: BTreeMap::new(),
                b1: vec![0.0; c.hidden],
                w2: vec![0.0; c.num_classes * c.hidden],
                b2: vec![0.0; c.num_classes],
            },
        };
        Self { blocks }
    }

    /// Gradient entry by block name and flat index; untouched rows read 0.
    pub fn get(&self, block: &str, index: usize) -> f64 {
        match &self.blocks {
            GradBlocks::Linear { rows, b } => match block {
                "w" => {
                    let c = b.len();
                    rows.get(&((index / c) as u32)).map_or(0.0, |r| r[index % c])
                }
                "b" => b[index],
                other => panic!("unknown linear gradient block `{other}`"),
            },
            GradBlocks::Mlp { w1_rows, b1, w2, b2 } => match block {
                "w1" => {
                    let h = b1.len();
                    w1_rows.get(&((index / h) as u32)).map_or(0.0, |r| r[index % h])
                }
                "b1" => b1[index],
                "w2" => w2[index],
                "b2" => b2[index],
                other => panic!("unknown mlp gradient block `{other}`"),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        let all_zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
        match &self.blocks {
            GradBlocks::Linear { rows, b } => {
                rows.values().all(|r| all_zero(r)) && all_zero(b)
            }
            GradBlocks::Mlp { w1_rows, b1, w2, b2 } => {
                w1_rows.values().all(|r| all_zero(r)) && all_zero(b1) && all_zero(w2) && all_zero(b2)
            }
        }
    }

    /// Reject NaN/inf before they can reach the parameters, naming the block.
    fn check_finite(&self) -> Result<()> {
        let check = |name: &str, v: &[f64]| -> Result<()> {
            if v.iter().any(|x| !x.is_finite()) {
                Err(OddaError::Numeric(format!("non-finite gradient in parameter block `{name}`")))
            } else {
                Ok(())
            }
        };
        match &self.blocks {
            GradBlocks::Linear { rows, b } => {
                for row in rows.values() {
                    check("w", row)?;
                }
                check("b", b)
            }
            GradBlocks::Mlp { w1_rows, b1, w2, b2 } => {
                for row in w1_rows.values() {
                    check("w1", row)?;
                }
                check("b1", b1)?;
                check("w2", w2)?;
                check("b2", b2)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, header, raw little-endian f64 arrays.
// A saved-then-loaded model reproduces logits bit-for-bit.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"ODCK";
const CKPT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Classifier, label_names: &[String], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CKPT_MAGIC)?;
    out.write_all(&CKPT_VERSION.to_le_bytes())?;
    let header = serde_json::json!({
        "arch": match model.arch { Architecture::Linear => "linear", Architecture::Mlp1 => "mlp1" },
        "bits": model.bits,
        "ngram_max": model.ngram_max,
        "num_classes": model.num_classes,
        "hidden": model.hidden,
        "dropout_rate": model.dropout_rate,
        "label_names": label_names,
    });
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, block) in model.blocks() {
        out.write_all(&(block.len() as u64).to_le_bytes())?;
        for v in block {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Classifier, Vec<String>)> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(OddaError::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != CKPT_VERSION {
        return Err(OddaError::Data(format!("unsupported checkpoint version {version}")));
    }
    let mut len8 = [0u8; 8];
    input.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    #[derive(Deserialize)]
    struct Header {
        arch: String,
        bits: u32,
        ngram_max: u32,
        num_classes: usize,
        hidden: usize,
        dropout_rate: f64,
        label_names: Vec<String>,
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| OddaError::Data(format!("bad checkpoint header: {e}")))?;
    let arch = match header.arch.as_str() {
        "linear" => Architecture::Linear,
        "mlp1" => Architecture::Mlp1,
        other => return Err(OddaError::Data(format!("unknown architecture `{other}`"))),
    };
    let mut model = Classifier::new(
        arch,
        header.bits,
        header.ngram_max,
        header.num_classes,
        if arch == Architecture::Mlp1 { header.hidden } else { 0 },
        header.dropout_rate,
        &SeededRng::new(0),
    )?;
    for (name, block) in model.blocks_mut() {
        input.read_exact(&mut len8)?;
        let n = u64::from_le_bytes(len8) as usize;
        if n != block.len() {
            return Err(OddaError::Data(format!(
                "checkpoint block `{name}` has {n} values, expected {}",
                block.len()
            )));
        }
        let mut buf = [0u8; 8];
        for v in block.iter_mut() {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok((model, header.label_names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::featurize;

    fn fv(text: &str) -> FeatureVector {
        featurize(text, 12, 1).unwrap()
    }

    fn linear(rng_seed: u64) -> Classifier {
        Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.1, &SeededRng::new(rng_seed)).unwrap()
    }

    fn mlp(rng_seed: u64) -> Classifier {
        Classifier::new(Architecture::Mlp1, 12, 1, 3, 8, 0.2, &SeededRng::new(rng_seed)).unwrap()
    }

    #[test]
    fn zero_params_zero_logits() {
        let c = linear(0);
        let z = c.forward(&fv("some words here"), None);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn single_bucket_reads_weight_plus_bias() {
        let mut c = linear(0);
        let x = fv("token");
        let bucket = x.pairs()[0].0 as usize;
        {
            let mut blocks = c.blocks_mut();
            let (_, w) = &mut blocks[0];
            w[bucket * 2] = 0.7;
            w[bucket * 2 + 1] = -0.2;
            let (_, b) = &mut blocks[1];
            b[0] = 0.1;
            b[1] = 0.3;
        }
        let z = c.forward(&x, None);
        assert!((z[0] - 0.8).abs() < 1e-15);
        assert!((z[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_dropout_rate_ignores_mask_choice() {
        let mut c = mlp(1);
        c.dropout_rate = 0.0;
        let x = fv("alpha beta gamma");
        let m1 = DropoutMask::new(111, 0.0);
        let m2 = DropoutMask::new(222, 0.0);
        assert_eq!(c.forward(&x, Some(&m1)), c.forward(&x, Some(&m2)));
    }

    #[test]
    fn same_mask_bit_identical_different_masks_differ() {
        let c = mlp(2);
        let x = fv("alpha beta gamma delta");
        let rate = c.dropout_rate;
        let a1 = c.forward(&x, Some(&DropoutMask::new(5, rate)));
        let a2 = c.forward(&x, Some(&DropoutMask::new(5, rate)));
        assert_eq!(a1, a2);
        // probability-1 property: some key in a small range produces a
        // different masked forward on a non-degenerate input
        let differs = (6..40u64)
            .any(|k| c.forward(&x, Some(&DropoutMask::new(k, rate))) != a1);
        assert!(differs);
    }

    #[test]
    fn dropout_expectation_matches_undropped() {
        // mean over masks of dropped activation ~= activation, within 3 sigma
        let keep: f64 = 0.8;
        let rate = 1.0 - keep;
        let n = 10_000;
        let act: f64 = 1.7;
        let mut sum = 0.0;
        for k in 0..n {
            let mask = DropoutMask::new(k as u64, rate);
            sum += act * mask.scale(3);
        }
        let mean = sum / n as f64;
        let sigma = act * ((1.0 - keep) / (keep * n as f64)).sqrt();
        assert!(
            (mean - act).abs() <= 3.0 * sigma,
            "mean {mean} vs activation {act} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn zero_weight_batch_zero_gradient() {
        let c = linear(3);
        let x = fv("a b c");
        let items = vec![LossItem {
            features: &x,
            target: LossTarget::Hard { label: 1 },
            mask: None,
            weight: 0.0,
        }];
        let (sums, g) = c.backward(&items).unwrap();
        assert_eq!(sums.total(), 0.0);
        assert!(g.is_zero());
    }

    #[test]
    fn linear_hard_ce_gradient_closed_form() {
        // grad of -ln softmax(z)_y w.r.t. W is (softmax(z) - onehot(y)) x^T
        let mut c = linear(4);
        let x = fv("tok");
        let bucket = x.pairs()[0].0;
        {
            let mut blocks = c.blocks_mut();
            let (_, w) = &mut blocks[0];
            w[bucket as usize * 2] = 0.4;
            w[bucket as usize * 2 + 1] = -0.1;
        }
        let z = c.forward(&x, None);
        let p = softmax(&z);
        let items = vec![LossItem {
            features: &x,
            target: LossTarget::Hard { label: 0 },
            mask: None,
            weight: 1.0,
        }];
        let (_, g) = c.backward(&items).unwrap();
        match &g.blocks {
            GradBlocks::Linear { rows, b } => {
                let row = &rows[&bucket];
                assert!((row[0] - (p[0] - 1.0)).abs() < 1e-14);
                assert!((row[1] - p[1]).abs() < 1e-14);
                assert!((b[0] - (p[0] - 1.0)).abs() < 1e-14);
                assert!((b[1] - p[1]).abs() < 1e-14);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        let mut c = linear(5);
        let x = fv("tok");
        let items = vec![LossItem {
            features: &x,
            target: LossTarget::Hard { label: 0 },
            mask: None,
            weight: 1.0,
        }];
        let (_, g) = c.backward(&items).unwrap();
        let before = c.blocks()[0].1.to_vec();
        c.sgd_step(&g, 0.0, 0.0).unwrap(); // lr = 0: unchanged
        assert_eq!(c.blocks()[0].1, before.as_slice());

        // theta = 1, g = 1, lr = 0.1, wd = 0 -> 0.9
        let bucket = x.pairs()[0].0 as usize;
        {
            let mut blocks = c.blocks_mut();
            blocks[0].1[bucket * 2] = 1.0;
        }
        let mut rows = BTreeMap::new();
        rows.insert(bucket as u32, vec![1.0, 0.0]);
        let g = Gradients { blocks: GradBlocks::Linear { rows, b: vec![0.0, 0.0] } };
        c.sgd_step(&g, 0.1, 0.0).unwrap();
        assert!((c.blocks()[0].1[bucket * 2] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut c = linear(6);
        let mut rows = BTreeMap::new();
        rows.insert(0u32, vec![f64::NAN, 0.0]);
        let g = Gradients { blocks: GradBlocks::Linear { rows, b: vec![0.0, 0.0] } };
        let err = c.sgd_step(&g, 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("`w`"), "error should name the block: {err}");
    }

    #[test]
    fn weight_decay_shrinks_all_parameters() {
        let mut c = linear(7);
        {
            let mut blocks = c.blocks_mut();
            blocks[0].1[10] = 2.0;
            blocks[1].1[0] = -1.0;
        }
        let g = Gradients::zeros_like(&c);
        c.sgd_step(&g, 0.1, 0.5).unwrap();
        // theta * (1 - 0.1 * 0.5) = theta * 0.95
        assert!((c.blocks()[0].1[10] - 1.9).abs() < 1e-15);
        assert!((c.blocks()[1].1[0] + 0.95).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_identical_logits() {
        let dir = tempfile::tempdir().unwrap();
        for model in [mlp(8), linear(9)] {
            let path = dir.path().join("model.ckpt");
            let labels = ["neg".to_string(), "pos".to_string(), "other".to_string()];
            save_checkpoint(&model, &labels[..model.num_classes], &path).unwrap();
            let (loaded, names) = load_checkpoint(&path).unwrap();
            assert_eq!(names.len(), model.num_classes);
            let x = fv("alpha beta gamma delta epsilon");
            let a = model.forward(&x, None);
            let b = loaded.forward(&x, None);
            assert_eq!(a, b, "logits must round-trip bit-exactly");
        }
    }
}
