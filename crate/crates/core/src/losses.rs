//! Objective terms: temperature softmax, hard/soft cross-entropy, the
//! distillation loss on augmented data, the dropout self-regularization
//! loss, their joint combination, and the baseline scorers (loss-based
//! selection, loss-softmax re-weighting, consistency).
//!
//! Everything here is a pure function; the trainer owns batching and
//! parameter updates. Logs are clamped at [`LOG_EPS`] throughout.

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, DropoutMask};
use crate::error::{OddaError, Result};
use crate::features::FeatureVector;
use crate::metrics::{kl_divergence, LOG_EPS, NORM_TOL};
use crate::rng::mix64;

/// Distillation settings. `tau` smooths the teacher distribution; the tau^2
/// rescale of classic distillation is off by default because the objective
/// here carries no such factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OdConfig {
    pub tau: f64,
    pub scale_od_by_tau_sq: bool,
}

impl Default for OdConfig {
    fn default() -> Self {
        Self { tau: 1.0, scale_od_by_tau_sq: false }
    }
}

impl OdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(OddaError::Config(format!("od.tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn od_scale(&self) -> f64 {
        if self.scale_od_by_tau_sq {
            self.tau * self.tau
        } else {
            1.0
        }
    }
}

/// Self-regularization settings: coefficient `alpha` and the number of
/// dropout passes `m` (>= 2). `shares_forward` makes the cross-entropy
/// term reuse the first dropout pass instead of a separate clean forward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SrConfig {
    pub alpha: f64,
    pub m: usize,
    pub shares_forward: bool,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self { alpha: 10.0, m: 2, shares_forward: false }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(OddaError::Config(format!(
                "sr.alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.m < 2 {
            return Err(OddaError::Config(format!("sr.m must be >= 2, got {}", self.m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Glitter,
    SmallLoss,
    Reweight,
    Consistency,
    EpidaStub,
}

/// Settings for the comparison baselines. Filtering modes draw `pool_k`
/// candidates per origin and keep `select_k`; `lambda` is the re-weighting
/// temperature; `alpha_c` the consistency coefficient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub mode: BaselineMode,
    pub pool_k: usize,
    pub select_k: usize,
    pub lambda: f64,
    pub alpha_c: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { mode: BaselineMode::Glitter, pool_k: 50, select_k: 3, lambda: 1.0, alpha_c: 10.0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.select_k == 0 || self.select_k > self.pool_k {
            return Err(OddaError::Config(format!(
                "need 1 <= select_k <= pool_k, got select_k={} pool_k={}",
                self.select_k, self.pool_k
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(OddaError::Config(format!(
                "lambda must be a positive finite value, got {}",
                self.lambda
            )));
        }
        if self.alpha_c < 0.0 {
            return Err(OddaError::Config(format!(
                "alpha_c must be non-negative, got {}",
                self.alpha_c
            )));
        }
        Ok(())
    }
}

/// Standard softmax with max-subtraction. Non-finite logits (a diverged
/// run) propagate as NaN and trip the gradient finiteness check, which
/// aborts with the offending parameter block named.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Temperature-controlled softmax: q_y = exp(z_y/tau) / sum_j exp(z_j/tau).
pub fn temperature_softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(OddaError::Config(format!("temperature must be positive, got {tau}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(OddaError::Numeric("non-finite logits in temperature_softmax".into()));
    }
    let scaled: Vec<f64> = z.iter().map(|v| v / tau).collect();
    Ok(softmax(&scaled))
}

fn check_normalized(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(OddaError::Numeric(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(OddaError::Numeric(format!("{name} sums to {sum}, not normalized")));
    }
    Ok(())
}

/// -ln p_y with the epsilon clamp.
pub fn hard_ce(p: &[f64], y: usize) -> Result<f64> {
    check_normalized("p", p)?;
    if y >= p.len() {
        return Err(OddaError::Numeric(format!("class index {y} out of range {}", p.len())));
    }
    Ok(-p[y].max(LOG_EPS).ln())
}

/// -sum_y q_y ln p_y with the epsilon clamp.
pub fn soft_ce(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(OddaError::Numeric("distribution length mismatch in soft_ce".into()));
    }
    check_normalized("p", p)?;
    check_normalized("q", q)?;
    Ok(-q.iter().zip(p).map(|(qy, py)| qy * py.max(LOG_EPS).ln()).sum::<f64>())
}

/// Distillation loss on one augmented instance: cross-entropy of the
/// student's standard-softmax prediction against the teacher's
/// temperature-softened distribution. Teacher logits must come from a
/// dropout-disabled forward.
pub fn od_loss(student_logits: &[f64], teacher_logits: &[f64], tau: f64) -> Result<f64> {
    let p = temperature_softmax(student_logits, 1.0)?;
    let q = temperature_softmax(teacher_logits, tau)?;
    soft_ce(&p, &q)
}

/// Self-regularization over m dropout passes: the mean distribution is
/// pulled toward each pass, (1/m) sum_i KL(mean || p_i).
pub fn sr_loss(prob_list: &[Vec<f64>]) -> Result<f64> {
    let m = prob_list.len();
    if m < 2 {
        return Err(OddaError::Numeric(format!("sr_loss needs m >= 2 distributions, got {m}")));
    }
    let c = prob_list[0].len();
    for p in prob_list {
        if p.len() != c {
            return Err(OddaError::Numeric("sr_loss distributions differ in length".into()));
        }
        check_normalized("p_i", p)?;
    }
    let mut mean = vec![0.0; c];
    for p in prob_list {
        for (my, py) in mean.iter_mut().zip(p) {
            *my += py / m as f64;
        }
    }
    let mut total = 0.0;
    for p in prob_list {
        total += kl_divergence(&mean, p)?;
    }
    Ok(total / m as f64)
}

/// Batch re-weighting factors: softmax of loss over temperature lambda.
/// Larger-loss instances get larger weights; the weights sum to one.
pub fn reweight_factors(batch_losses: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if batch_losses.is_empty() {
        return Err(OddaError::Numeric("reweight_factors on an empty batch".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(OddaError::Config(format!("lambda must be a positive finite value, got {lambda}")));
    }
    let scaled: Vec<f64> = batch_losses.iter().map(|l| l / lambda).collect();
    Ok(softmax(&scaled))
}

/// Consistency objective: alpha_c * sum_j KL(orig || aug_j). Assumes each
/// augmented distribution comes from a variant of the same origin.
pub fn consistency_loss(orig_prob: &[f64], aug_probs: &[Vec<f64>], alpha_c: f64) -> Result<f64> {
    if alpha_c == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in aug_probs {
        total += kl_divergence(orig_prob, q)?;
    }
    Ok(alpha_c * total)
}

// ---------------------------------------------------------------------------
// Joint objective
// ---------------------------------------------------------------------------

/// An original instance in a mixed batch: features, hard label, id.
pub struct OrigInstance<'a> {
    pub features: &'a FeatureVector,
    pub label: usize,
    pub id: u64,
}

/// An augmented instance in a mixed batch. Deliberately carries no label:
/// the joint objective learns augmented data only through the teacher's
/// soft targets, which is what makes it insensitive to label flips.
pub struct AugInstance<'a> {
    pub features: &'a FeatureVector,
    pub id: u64,
}

/// Deterministic dropout-mask derivation for the self-regularization
/// passes of one step: key chain (base, pool, instance id, pass index).
#[derive(Debug, Clone, Copy)]
pub struct MaskPlan {
    pub base_key: u64,
    pub m: usize,
    pub rate: f64,
}

/// Pool tags for mask derivation.
pub const POOL_ORIG: u64 = 0;
pub const POOL_AUG: u64 = 1;

impl MaskPlan {
    pub fn sr_masks(&self, pool: u64, id: u64) -> Vec<DropoutMask> {
        (0..self.m as u64).map(|i| self.mask_at(pool, id, i)).collect()
    }

    pub fn mask_at(&self, pool: u64, id: u64, index: u64) -> DropoutMask {
        let mut k = self.base_key;
        k = mix64(k ^ pool);
        k = mix64(k ^ id);
        k = mix64(k ^ index);
        DropoutMask::new(k, self.rate)
    }
}

/// Per-term values of one joint-objective evaluation.
/// `total = ce + od + alpha * sr` holds exactly by construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointLossBreakdown {
    pub ce: f64,
    pub od: f64,
    pub sr: f64,
    pub total: f64,
}

/// Evaluate the joint objective on a mixed batch, forwards only: mean hard
/// cross-entropy over the originals, mean distillation loss over the
/// augmented instances, and the self-regularization mean over both pools.
/// The per-batch means estimate the dataset-level normalizers when batches
/// mix the pools at the 1:k ratio.
pub fn joint_loss(
    student: &Classifier,
    teacher: &Classifier,
    orig: &[OrigInstance],
    aug: &[AugInstance],
    od: &OdConfig,
    sr: &SrConfig,
    masks: &MaskPlan,
) -> Result<JointLossBreakdown> {
    od.validate()?;
    sr.validate()?;

    let mut ce = 0.0;
    for item in orig {
        let p = softmax(&student.forward(item.features, None));
        ce += hard_ce(&p, item.label)?;
    }
    if !orig.is_empty() {
        ce /= orig.len() as f64;
    }

    let mut od_term = 0.0;
    for item in aug {
        let sz = student.forward(item.features, None);
        let tz = teacher.forward(item.features, None);
        od_term += od_loss(&sz, &tz, od.tau)?;
    }
    if !aug.is_empty() {
        od_term = od.od_scale() * od_term / aug.len() as f64;
    }

    let mut sr_term = 0.0;
    let n_sr = orig.len() + aug.len();
    for (pool, features, id) in orig
        .iter()
        .map(|o| (POOL_ORIG, o.features, o.id))
        .chain(aug.iter().map(|a| (POOL_AUG, a.features, a.id)))
    {
        let probs: Vec<Vec<f64>> = masks
            .sr_masks(pool, id)
            .iter()
            .map(|mask| softmax(&student.forward(features, Some(mask))))
            .collect();
        sr_term += sr_loss(&probs)?;
    }
    if n_sr > 0 {
        sr_term /= n_sr as f64;
    }

    let total = ce + od_term + sr.alpha * sr_term;
    Ok(JointLossBreakdown { ce, od: od_term, sr: sr_term, total })
}

// ---------------------------------------------------------------------------
// Pool selection for the filtering baselines
// ---------------------------------------------------------------------------

/// One augmented candidate in a filtering pool.
pub struct PoolCandidate<'a> {
    pub id: u64,
    pub origin_id: u64,
    pub label: usize,
    pub features: &'a FeatureVector,
}

/// Per origin, keep the `select_k` candidates with the largest current-
/// student hard cross-entropy loss. Ties break toward the smaller id.
pub fn glitter_select(
    pool: &[PoolCandidate],
    student: &Classifier,
    select_k: usize,
) -> Result<Vec<u64>> {
    select_by_loss(pool, student, select_k, true)
}

/// Mirror of [`glitter_select`] keeping the smallest losses.
pub fn small_loss_select(
    pool: &[PoolCandidate],
    student: &Classifier,
    select_k: usize,
) -> Result<Vec<u64>> {
    select_by_loss(pool, student, select_k, false)
}

fn select_by_loss(
    pool: &[PoolCandidate],
    student: &Classifier,
    select_k: usize,
    largest: bool,
) -> Result<Vec<u64>> {
    let score = |c: &PoolCandidate| -> Result<f64> {
        let p = softmax(&student.forward(c.features, None));
        hard_ce(&p, c.label)
    };
    select_by_score(pool, select_k, largest, score)
}

/// Diversity-proxy selection: keep candidates whose teacher distribution
/// diverges most from the teacher's distribution on their origin. A stand-in
/// scorer, not a reimplementation of any published filter.
pub fn epida_stub_select(
    pool: &[PoolCandidate],
    origin_features: &dyn Fn(u64) -> Option<FeatureVector>,
    teacher: &Classifier,
    select_k: usize,
) -> Result<Vec<u64>> {
    let score = |c: &PoolCandidate| -> Result<f64> {
        let of = origin_features(c.origin_id).ok_or_else(|| {
            OddaError::Data(format!("pool candidate {} references unknown origin {}", c.id, c.origin_id))
        })?;
        let q_aug = softmax(&teacher.forward(c.features, None));
        let q_orig = softmax(&teacher.forward(&of, None));
        kl_divergence(&q_aug, &q_orig)
    };
    select_by_score(pool, select_k, true, score)
}

fn select_by_score(
    pool: &[PoolCandidate],
    select_k: usize,
    largest: bool,
    score: impl Fn(&PoolCandidate) -> Result<f64>,
) -> Result<Vec<u64>> {
    use std::collections::BTreeMap;
    let mut by_origin: BTreeMap<u64, Vec<(f64, u64)>> = BTreeMap::new();
    for cand in pool {
        by_origin.entry(cand.origin_id).or_default().push((score(cand)?, cand.id));
    }
    let mut selected = Vec::new();
    for (origin, mut scored) in by_origin {
        if scored.len() < select_k {
            return Err(OddaError::Data(format!(
                "origin {origin} has only {} pool candidates, need {select_k}",
                scored.len()
            )));
        }
        scored.sort_by(|a, b| {
            let ord = a.0.partial_cmp(&b.0).expect("finite losses");
            let ord = if largest { ord.reverse() } else { ord };
            ord.then(a.1.cmp(&b.1))
        });
        selected.extend(scored.into_iter().take(select_k).map(|(_, id)| id));
    }
    selected.sort_unstable();
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;
    use crate::features::featurize;
    use crate::rng::SeededRng;

    #[test]
    fn symmetric_logits_uniform() {
        for tau in [0.5, 1.0, 2.0, 3.0] {
            let q = temperature_softmax(&[0.0, 0.0], tau).unwrap();
            assert_eq!(q, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn huge_temperature_flattens() {
        let q = temperature_softmax(&[1.0, 2.0], 1e6).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-5);
        assert!((q[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn temperature_softmax_known_value() {
        let q = temperature_softmax(&[1.0, 2.0, 3.0], 2.0).unwrap();
        let expect = [0.186_323_723, 0.307_195_885, 0.506_480_391];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn temperature_softmax_rejects_bad_input() {
        assert!(temperature_softmax(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(temperature_softmax(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn softmax_properties_on_random_logits() {
        use rand::Rng;
        let mut rng = SeededRng::new(31).stream("test-logits", &[]);
        let taus = [0.5, 1.0, 2.0, 3.0];
        for _ in 0..200 {
            let c = rng.gen_range(2..6);
            let z: Vec<f64> = (0..c).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut last_entropy = -1.0;
            let argmax = |p: &[f64]| {
                p.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
            };
            let base = temperature_softmax(&z, 1.0).unwrap();
            for &tau in &taus {
                let q = temperature_softmax(&z, tau).unwrap();
                let sum: f64 = q.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                let entropy: f64 = -q.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
                assert!(entropy >= last_entropy - 1e-12, "entropy must not decrease in tau");
                last_entropy = entropy;
                assert_eq!(argmax(&q), argmax(&base), "argmax must be tau-invariant");
            }
        }
    }

    #[test]
    fn hard_ce_values() {
        assert_eq!(hard_ce(&[0.0, 1.0], 1).unwrap(), 0.0);
        let v = hard_ce(&[0.7, 0.3], 0).unwrap();
        assert!((v - 0.356_674_943_938_732_4).abs() < 1e-12);
        let u = hard_ce(&[0.25; 4], 2).unwrap();
        assert!((u - 4.0f64.ln()).abs() < 1e-12);
        assert!(hard_ce(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn soft_ce_values() {
        let c = 5;
        let uniform = vec![1.0 / c as f64; c];
        let v = soft_ce(&uniform, &uniform).unwrap();
        assert!((v - (c as f64).ln()).abs() < 1e-12);
        // one-hot target reduces to hard_ce
        let p = [0.7, 0.3];
        assert!((soft_ce(&p, &[1.0, 0.0]).unwrap() - hard_ce(&p, 0).unwrap()).abs() < 1e-15);
        let v = soft_ce(&[0.6, 0.4], &[0.8, 0.2]).unwrap();
        assert!((v - 0.591_918_645_387_623_6).abs() < 1e-12);
    }

    #[test]
    fn od_loss_matches_hand_values() {
        // identical logits at tau=1: CE(p, p) = H(p)
        let z = [1.0, -0.5, 0.3];
        let p = softmax(&z);
        let entropy: f64 = -p.iter().map(|&x| x * x.ln()).sum::<f64>();
        assert!((od_loss(&z, &z, 1.0).unwrap() - entropy).abs() < 1e-12);

        // saturated teacher matched by student: near zero
        let z = [10.0, -10.0];
        assert!(od_loss(&z, &z, 1.0).unwrap() < 1e-6);

        // uniform student against any teacher: ln 2
        let v = od_loss(&[0.0, 0.0], &[1.0, 2.0], 2.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn od_loss_shift_invariance() {
        let s = [0.3, -1.2, 0.8];
        let t = [1.0, 0.1, -0.4];
        let base = od_loss(&s, &t, 2.0).unwrap();
        let s2: Vec<f64> = s.iter().map(|v| v + 7.5).collect();
        let t2: Vec<f64> = t.iter().map(|v| v - 3.25).collect();
        assert!((od_loss(&s2, &t2, 2.0).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn sr_loss_values() {
        let same = vec![vec![0.2, 0.3, 0.5]; 4];
        assert_eq!(sr_loss(&same).unwrap(), 0.0);

        let v = sr_loss(&[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        assert!((v - 0.020_410_997_260_127_56).abs() < 1e-9, "got {v}");

        // disjoint one-hot supports: finite because of the epsilon clamp,
        // each KL = 0.5 ln(0.5/eps) + 0.5 ln(0.5/1)
        let v = sr_loss(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let expect = 0.5 * (0.5f64 / LOG_EPS).ln() + 0.5 * 0.5f64.ln();
        assert!((v - expect).abs() < 1e-9, "got {v}, expected {expect}");

        assert!(sr_loss(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn sr_loss_permutation_invariant() {
        let a = vec![0.7, 0.3];
        let b = vec![0.5, 0.5];
        let c = vec![0.1, 0.9];
        let v1 = sr_loss(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let v2 = sr_loss(&[c, a, b]).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
        assert!(v1 > 0.0);
    }

    #[test]
    fn reweight_values_and_limits() {
        let w = reweight_factors(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));

        let w = reweight_factors(&[1.0, 2.0], 1.0).unwrap();
        assert!((w[0] - 0.268_941_421_369_995_1).abs() < 1e-9);
        assert!((w[1] - 0.731_058_578_630_004_9).abs() < 1e-9);

        let w = reweight_factors(&[1.0, 2.0], 1e6).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-5);

        assert!(reweight_factors(&[], 1.0).is_err());
        assert!(reweight_factors(&[1.0], 0.0).is_err());
    }

    #[test]
    fn reweight_is_distribution_and_monotone() {
        use rand::Rng;
        let mut rng = SeededRng::new(77).stream("test-reweight", &[]);
        for _ in 0..100 {
            let n = rng.gen_range(2..10);
            let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            let w = reweight_factors(&losses, 0.7).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..n {
                for j in 0..n {
                    if losses[i] > losses[j] {
                        assert!(w[i] > w[j], "larger loss must carry larger weight");
                    }
                }
            }
        }
    }

    #[test]
    fn consistency_loss_values() {
        let p = vec![0.5, 0.5];
        assert_eq!(consistency_loss(&p, &[p.clone(), p.clone()], 10.0).unwrap(), 0.0);
        assert_eq!(consistency_loss(&p, &[vec![0.9, 0.1]], 0.0).unwrap(), 0.0);
        let v = consistency_loss(&p, &[vec![0.25, 0.75]], 10.0).unwrap();
        assert!((v - 1.438_410_362_258_904_6).abs() < 1e-9);
    }

    fn tiny_models() -> (Classifier, Classifier) {
        let rng = SeededRng::new(400);
        let mut student =
            Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.1, &rng).unwrap();
        let mut teacher = Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.0, &rng).unwrap();
        // nonzero weights everywhere so any input yields non-trivial logits
        {
            let mut blocks = student.blocks_mut();
            for (i, v) in blocks[0].1.iter_mut().enumerate() {
                *v = ((i % 7) as f64 - 3.0) * 0.1;
            }
            let mut blocks = teacher.blocks_mut();
            for (i, v) in blocks[0].1.iter_mut().enumerate() {
                *v = ((i % 5) as f64 - 2.0) * 0.1;
            }
        }
        (student, teacher)
    }

    #[test]
    fn joint_loss_breakdown_identity_and_reductions() {
        let (student, teacher) = tiny_models();
        let xs: Vec<FeatureVector> =
            ["a b", "c d", "e f g"].iter().map(|t| featurize(t, 12, 1).unwrap()).collect();
        let orig: Vec<OrigInstance> = xs
            .iter()
            .enumerate()
            .map(|(i, f)| OrigInstance { features: f, label: i % 2, id: i as u64 })
            .collect();
        let aug: Vec<AugInstance> =
            xs.iter().map(|f| AugInstance { features: f, id: 100 }).collect();
        let od = OdConfig { tau: 2.0, scale_od_by_tau_sq: false };
        let sr = SrConfig { alpha: 7.0, m: 2, shares_forward: false };
        let plan = MaskPlan { base_key: 99, m: 2, rate: 0.1 };
        let out = joint_loss(&student, &teacher, &orig, &aug, &od, &sr, &plan).unwrap();
        assert!((out.total - (out.ce + out.od + sr.alpha * out.sr)).abs() < 1e-12);
        assert!(out.sr > 0.0, "dropout produces disagreement on non-degenerate inputs");

        // alpha = 0 and empty augmented pool: reduces to mean hard CE
        let sr0 = SrConfig { alpha: 0.0, m: 2, shares_forward: false };
        let out = joint_loss(&student, &teacher, &orig, &[], &od, &sr0, &plan).unwrap();
        let mut ce = 0.0;
        for item in &orig {
            ce += hard_ce(&softmax(&student.forward(item.features, None)), item.label).unwrap();
        }
        ce /= orig.len() as f64;
        assert!((out.total - ce).abs() < 1e-12);

        // dropout rate 0: SR term exactly 0 regardless of alpha
        let plan0 = MaskPlan { base_key: 99, m: 2, rate: 0.0 };
        let out = joint_loss(&student, &teacher, &orig, &aug, &od, &sr, &plan0).unwrap();
        assert_eq!(out.sr, 0.0);
    }

    /// A student whose loss on candidate i strictly decreases in i: each
    /// candidate is a unique single-token text whose bucket weight grows
    /// with i.
    fn graded_student_and_feats() -> (Classifier, Vec<FeatureVector>) {
        let rng = SeededRng::new(500);
        let mut student = Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.0, &rng).unwrap();
        let feats: Vec<FeatureVector> =
            (0..6).map(|i| student.featurize(&format!("tok{i}"))).collect();
        let buckets: Vec<u32> = feats.iter().map(|f| f.pairs()[0].0).collect();
        let mut uniq = buckets.clone();
        uniq.dedup();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), buckets.len(), "test tokens must hash apart");
        {
            let mut blocks = student.blocks_mut();
            for (i, &b) in buckets.iter().enumerate() {
                blocks[0].1[b as usize * 2] = 0.5 * i as f64;
            }
        }
        (student, feats)
    }

    #[test]
    fn selection_ordering_ties_and_complement() {
        let (student, feats) = graded_student_and_feats();
        let pool: Vec<PoolCandidate> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| PoolCandidate {
                id: i as u64,
                origin_id: (i / 3) as u64,
                label: 0,
                features: f,
            })
            .collect();

        // whole pool when select_k equals pool size per origin
        let all = glitter_select(&pool, &student, 3).unwrap();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);

        // glitter and small-loss partition the pool when losses are distinct
        let hi = glitter_select(&pool, &student, 1).unwrap();
        let lo = small_loss_select(&pool, &student, 2).unwrap();
        for id in &hi {
            assert!(!lo.contains(id), "selections must be disjoint complements");
        }
        assert_eq!(hi.len() + lo.len(), pool.len());

        // insufficient pool
        assert!(glitter_select(&pool, &student, 4).is_err());
    }

    #[test]
    fn equal_losses_select_lowest_ids() {
        // an untrained zero model scores every candidate identically
        let rng = SeededRng::new(0);
        let student = Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.0, &rng).unwrap();
        let feats: Vec<FeatureVector> =
            ["x", "y", "z", "w"].iter().map(|t| student.featurize(t)).collect();
        let pool: Vec<PoolCandidate> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| PoolCandidate { id: i as u64, origin_id: 0, label: 0, features: f })
            .collect();
        assert_eq!(glitter_select(&pool, &student, 2).unwrap(), vec![0, 1]);
        assert_eq!(small_loss_select(&pool, &student, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn losses_ordering_glitter_picks_largest() {
        let (student, feats) = graded_student_and_feats();
        let pool: Vec<PoolCandidate> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| PoolCandidate { id: i as u64, origin_id: 0, label: 0, features: f })
            .collect();
        let losses: Vec<f64> = pool
            .iter()
            .map(|c| hard_ce(&softmax(&student.forward(c.features, None)), c.label).unwrap())
            .collect();
        let picked = glitter_select(&pool, &student, 2).unwrap();
        let min_picked =
            picked.iter().map(|&id| losses[id as usize]).fold(f64::INFINITY, f64::min);
        for (i, &l) in losses.iter().enumerate() {
            if !picked.contains(&(i as u64)) {
                assert!(l <= min_picked, "unpicked loss must not exceed picked losses");
            }
        }
    }
}
