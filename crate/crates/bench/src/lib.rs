//! Shared fixtures for the criterion benchmarks.

use std::collections::BTreeSet;

use odda_core::rng::SeededRng;
use odda_core::synth::SynthSpec;
use odda_core::trainer::ModelConfig;
use odda_core::{Architecture, Classifier, Dataset, Lexicon};

pub struct Fixture {
    pub train: Dataset,
    pub lexicon: Lexicon,
    pub stopwords: BTreeSet<String>,
    pub model: Classifier,
}

pub fn fixture(n: usize, arch: Architecture) -> Fixture {
    let spec = SynthSpec { n_train: n, n_test: 2, text_len: 12, seed: 42, ..Default::default() };
    let out = spec.generate().expect("benchmark corpus generates");
    let model_cfg = ModelConfig {
        arch,
        hash_bits: 18,
        ngram_max: 2,
        hidden: 64,
        dropout_rate: 0.1,
    };
    let model = model_cfg.build(out.train.num_classes(), &SeededRng::new(7)).unwrap();
    Fixture { train: out.train, lexicon: out.lexicon, stopwords: BTreeSet::new(), model }
}
