//! Synthetic text-classification corpus with a known Bayes-optimal
//! accuracy, used by the noise studies and the acceptance checks.
//!
//! Each class owns a disjoint signal vocabulary; a shared noise vocabulary
//! carries no class information. Every token of an example is a signal
//! token of its class with probability `signal_strength`, otherwise a noise
//! token. Observing any signal token identifies the class exactly, so the
//! best achievable accuracy is
//!
//! `1 - (1 - s)^len * (classes - 1) / classes`
//!
//! which the generator reports alongside the data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Lexicon;
use crate::data::{Dataset, Example};
use crate::error::{OddaError, Result};
use crate::rng::SeededRng;

/// Prefix of every class-indicative token (for corruption by prefix).
pub const SIGNAL_PREFIX: &str = "sig";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub vocab_per_class: usize,
    pub noise_vocab: usize,
    pub text_len: usize,
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 500,
            classes: 2,
            vocab_per_class: 16,
            noise_vocab: 64,
            text_len: 8,
            signal_strength: 0.25,
            seed: 0,
        }
    }
}

/// A generated corpus plus a synonym lexicon that maps every token to
/// same-group siblings (label-preserving under synonym replacement).
pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub lexicon: Lexicon,
    pub bayes_accuracy: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(OddaError::Config(format!("classes must be >= 2, got {}", self.classes)));
        }
        if self.n_train < self.classes || self.n_test < self.classes {
            return Err(OddaError::Config(
                "need at least one train and test example per class".into(),
            ));
        }
        if self.vocab_per_class == 0 || self.noise_vocab == 0 || self.text_len == 0 {
            return Err(OddaError::Config(
                "vocab_per_class, noise_vocab and text_len must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(OddaError::Config(format!(
                "signal_strength must be in [0,1], got {}",
                self.signal_strength
            )));
        }
        Ok(())
    }

    /// Best achievable accuracy on this generator: an example with no signal
    /// token (probability (1-s)^len) can only be guessed at chance.
    pub fn bayes_accuracy(&self) -> f64 {
        let miss = (1.0 - self.signal_strength).powi(self.text_len as i32);
        1.0 - miss * (self.classes as f64 - 1.0) / self.classes as f64
    }

    fn signal_token(&self, class: usize, index: usize) -> String {
        format!("{SIGNAL_PREFIX}{class}w{index}")
    }

    fn noise_token(&self, index: usize) -> String {
        format!("nz{index}")
    }

    /// Class names padded so that lexicographic and numeric order agree.
    pub fn label_names(&self) -> Vec<String> {
        let width = (self.classes - 1).to_string().len();
        (0..self.classes).map(|c| format!("c{c:0width$}")).collect()
    }

    pub fn generate(&self) -> Result<SynthOutput> {
        self.validate()?;
        let rng = SeededRng::new(self.seed);
        let train = self.generate_split("gen-train", self.n_train, &rng);
        let test = self.generate_split("gen-test", self.n_test, &rng);
        Ok(SynthOutput {
            train,
            test,
            lexicon: self.lexicon(),
            bayes_accuracy: self.bayes_accuracy(),
        })
    }

    fn generate_split(&self, tag: &str, n: usize, rng: &SeededRng) -> Dataset {
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % self.classes; // balanced by construction
            let mut stream = rng.stream(tag, &[i as u64]);
            let tokens: Vec<String> = (0..self.text_len)
                .map(|_| {
                    if stream.gen::<f64>() < self.signal_strength {
                        self.signal_token(label, stream.gen_range(0..self.vocab_per_class))
                    } else {
                        self.noise_token(stream.gen_range(0..self.noise_vocab))
                    }
                })
                .collect();
            examples.push(Example {
                id: i as u64,
                origin_id: None,
                text: tokens.join(" "),
                label,
            });
        }
        Dataset::from_parts(self.label_names(), examples)
    }

    /// Synonyms stay within a token's own group, so replacement never leaks
    /// signal across classes: each signal token maps to up to 3 siblings of
    /// the same class, each noise token to other noise tokens.
    fn lexicon(&self) -> Lexicon {
        let mut entries = std::collections::BTreeMap::new();
        let siblings = |i: usize, n: usize| -> Vec<usize> {
            (1..=3usize.min(n - 1)).map(|d| (i + d) % n).collect()
        };
        if self.vocab_per_class >= 2 {
            for c in 0..self.classes {
                for i in 0..self.vocab_per_class {
                    let syns = siblings(i, self.vocab_per_class)
                        .into_iter()
                        .map(|j| self.signal_token(c, j))
                        .collect();
                    entries.insert(self.signal_token(c, i), syns);
                }
            }
        }
        if self.noise_vocab >= 2 {
            for i in 0..self.noise_vocab {
                let syns =
                    siblings(i, self.noise_vocab).into_iter().map(|j| self.noise_token(j)).collect();
                entries.insert(self.noise_token(i), syns);
            }
        }
        Lexicon::new(entries)
    }
}
