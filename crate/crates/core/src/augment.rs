//! Token-level augmentation (synonym replacement, random insertion, swap,
//! deletion), the amplification pipeline that turns a dataset into k
//! augmented variants per example, and synthetic label-flip noise.
//!
//! Every operation draws from a per-(origin, copy) stream, so augmenting
//! distinct examples is order-independent and each variant can be replayed
//! alone. Ops compose in the fixed order SR -> RI -> RS -> RD.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{OddaError, Result};
use crate::features::tokenize;
use crate::rng::SeededRng;

/// Headword -> synonyms table. File format: `headword<TAB>syn1,syn2,...`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Self {
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| OddaError::Data(format!("{}: {e}", path.display())))?;
        let reader = std::io::BufReader::new(file);
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let head = parts.next().unwrap_or_default().trim().to_string();
            let syns = parts.next().ok_or_else(|| OddaError::MalformedRecord {
                line: i + 1,
                message: "expected headword<TAB>syn1,syn2,...".into(),
            })?;
            let syns: Vec<String> = syns
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if head.is_empty() || syns.is_empty() {
                return Err(OddaError::MalformedRecord {
                    line: i + 1,
                    message: "empty headword or synonym list".into(),
                });
            }
            entries.insert(head, syns);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (head, syns) in &self.entries {
            writeln!(out, "{head}\t{}", syns.join(","))?;
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(|v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// One token per line.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let file = std::fs::File::open(path)
        .map_err(|e| OddaError::Data(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut set = BTreeSet::new();
    for line in reader.lines() {
        let token = line?.trim().to_string();
        if !token.is_empty() {
            set.insert(token);
        }
    }
    Ok(set)
}

/// Per-operation probabilities and the amplification factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EdaConfig {
    pub p_sr: f64,
    pub p_ri: f64,
    pub p_rs: f64,
    pub p_rd: f64,
    pub k: usize,
}

impl Default for EdaConfig {
    fn default() -> Self {
        Self { p_sr: 0.05, p_ri: 0.05, p_rs: 0.05, p_rd: 0.05, k: 3 }
    }
}

impl EdaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in
            [("p_sr", self.p_sr), ("p_ri", self.p_ri), ("p_rs", self.p_rs), ("p_rd", self.p_rd)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(OddaError::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if self.k < 1 {
            return Err(OddaError::Config("amplification factor k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Label-flip noise on augmented data. The original dataset is never
/// touched; the trainer applies this to augmented pools only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p_n: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { p_n: 0.0, seed: 0 }
    }
}

fn eligible(token: &str, lexicon: &Lexicon, stopwords: &BTreeSet<String>) -> bool {
    !stopwords.contains(token) && lexicon.get(token).is_some()
}

/// Each eligible token is independently replaced by a uniformly chosen
/// synonym with probability `p_sr`.
pub fn synonym_replace(
    tokens: &[String],
    p_sr: f64,
    lexicon: &Lexicon,
    stopwords: &BTreeSet<String>,
    rng: &mut impl Rng,
) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            if eligible(t, lexicon, stopwords) && rng.gen::<f64>() < p_sr {
                let syns = lexicon.get(t).expect("eligibility implies an entry");
                syns[rng.gen_range(0..syns.len())].clone()
            } else {
                t.clone()
            }
        })
        .collect()
}

/// With probability `p_ri` per original token, insert a synonym of a random
/// eligible token at a random position. No eligible token means no insertion.
pub fn random_insert(
    tokens: &[String],
    p_ri: f64,
    lexicon: &Lexicon,
    stopwords: &BTreeSet<String>,
    rng: &mut impl Rng,
) -> Vec<String> {
    let eligible_tokens: Vec<&String> =
        tokens.iter().filter(|t| eligible(t, lexicon, stopwords)).collect();
    let mut out: Vec<String> = tokens.to_vec();
    for _ in 0..tokens.len() {
        if rng.gen::<f64>() < p_ri {
            if eligible_tokens.is_empty() {
                continue;
            }
            let source = eligible_tokens[rng.gen_range(0..eligible_tokens.len())];
            let syns = lexicon.get(source).expect("eligibility implies an entry");
            let synonym = syns[rng.gen_range(0..syns.len())].clone();
            let at = rng.gen_range(0..=out.len());
            out.insert(at, synonym);
        }
    }
    out
}

/// With probability `p_rs` per token, exchange two uniformly chosen
/// positions. Token multiset is preserved.
pub fn random_swap(tokens: &[String], p_rs: f64, rng: &mut impl Rng) -> Vec<String> {
    random_swap_counted(tokens, p_rs, rng).0
}

/// [`random_swap`] plus the number of triggered swap events, so tests can
/// audit the per-token application rate (swaps can cancel in the output).
pub fn random_swap_counted(
    tokens: &[String],
    p_rs: f64,
    rng: &mut impl Rng,
) -> (Vec<String>, usize) {
    let mut out: Vec<String> = tokens.to_vec();
    let mut triggers = 0;
    for _ in 0..tokens.len() {
        if rng.gen::<f64>() < p_rs {
            triggers += 1;
            if out.len() >= 2 {
                let i = rng.gen_range(0..out.len());
                let j = rng.gen_range(0..out.len());
                out.swap(i, j);
            }
        }
    }
    (out, triggers)
}

/// Drop each token independently with probability `p_rd`, but never delete
/// the last remaining token: if every token is marked, the final one stays.
pub fn random_delete(tokens: &[String], p_rd: f64, rng: &mut impl Rng) -> Vec<String> {
    let marks: Vec<bool> = tokens.iter().map(|_| rng.gen::<f64>() < p_rd).collect();
    let mut out: Vec<String> =
        tokens.iter().zip(&marks).filter(|(_, &m)| !m).map(|(t, _)| t.clone()).collect();
    if out.is_empty() {
        if let Some(last) = tokens.last() {
            out.push(last.clone());
        }
    }
    out
}

/// Amplify a dataset: k augmented variants per example, ops composed
/// SR -> RI -> RS -> RD on independent per-(origin, copy) streams. Labels
/// are copied from the origin; output ids run 0..k*n grouped by origin. If
/// the pipeline leaves the token list unchanged the original text is kept
/// verbatim.
pub fn eda_augment(
    d: &Dataset,
    cfg: &EdaConfig,
    lexicon: &Lexicon,
    stopwords: &BTreeSet<String>,
    rng: &SeededRng,
) -> Result<Dataset> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(d.len() * cfg.k);
    let mut next_id = 0u64;
    for ex in &d.examples {
        let tokens = tokenize(&ex.text);
        for copy in 0..cfg.k as u64 {
            let mut stream = rng.stream("augment", &[ex.id, copy]);
            let text = if tokens.is_empty() {
                // nothing to edit; keep the original text
                ex.text.clone()
            } else {
                let step1 = synonym_replace(&tokens, cfg.p_sr, lexicon, stopwords, &mut stream);
                let step2 = random_insert(&step1, cfg.p_ri, lexicon, stopwords, &mut stream);
                let step3 = random_swap(&step2, cfg.p_rs, &mut stream);
                let step4 = random_delete(&step3, cfg.p_rd, &mut stream);
                if step4 == tokens {
                    ex.text.clone()
                } else {
                    step4.join(" ")
                }
            };
            out.push(Example {
                id: next_id,
                origin_id: Some(ex.id),
                text,
                label: ex.label,
            });
            next_id += 1;
        }
    }
    Ok(Dataset::from_parts(d.label_names.clone(), out))
}

/// The identity augmenter: k verbatim copies per example, ids grouped by
/// origin like [`eda_augment`].
pub fn identity_augment(d: &Dataset, k: usize) -> Dataset {
    let mut out = Vec::with_capacity(d.len() * k);
    let mut next_id = 0u64;
    for ex in &d.examples {
        for _ in 0..k {
            out.push(Example {
                id: next_id,
                origin_id: Some(ex.id),
                text: ex.text.clone(),
                label: ex.label,
            });
            next_id += 1;
        }
    }
    Dataset::from_parts(d.label_names.clone(), out)
}

/// Flip each label independently with probability `p_n`: binary goes to the
/// other class, multiclass to a uniform choice among the other classes.
/// Texts, ids, and origins are untouched; the input is not mutated.
pub fn flip_labels(d_aug: &Dataset, cfg: &NoiseConfig) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&cfg.p_n) {
        return Err(OddaError::Config(format!("p_n must be in [0,1], got {}", cfg.p_n)));
    }
    let classes = d_aug.num_classes();
    if classes < 2 {
        return Err(OddaError::Data("label flipping needs at least 2 classes".into()));
    }
    let noise = SeededRng::new(cfg.seed);
    let mut out = d_aug.clone();
    for ex in out.examples.iter_mut() {
        let mut stream = noise.stream("noise", &[ex.id]);
        if stream.gen::<f64>() < cfg.p_n {
            let offset = stream.gen_range(1..classes);
            ex.label = (ex.label + offset) % classes;
        }
    }
    Ok(out)
}

/// Delete tokens carrying a given prefix with probability `rate`, keeping at
/// least one token per text. Used to corrupt augmented texts in the
/// synthetic noise studies.
pub fn corrupt_tokens(d: &Dataset, prefix: &str, rate: f64, rng: &SeededRng) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(OddaError::Config(format!("corrupt rate must be in [0,1], got {rate}")));
    }
    let mut out = d.clone();
    for ex in out.examples.iter_mut() {
        let tokens = tokenize(&ex.text);
        if tokens.is_empty() {
            continue;
        }
        let mut stream = rng.stream("corrupt", &[ex.id]);
        let kept: Vec<String> = tokens
            .iter()
            .filter(|t| !(t.starts_with(prefix) && stream.gen::<f64>() < rate))
            .cloned()
            .collect();
        let kept = if kept.is_empty() { vec![tokens.last().unwrap().clone()] } else { kept };
        if kept != tokens {
            ex.text = kept.join(" ");
        }
    }
    Ok(out)
}
