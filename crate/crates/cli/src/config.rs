//! Config file loading, `--set` dot-path overrides, and run manifests.
//!
//! Every command resolves its full configuration up front and writes it to
//! `out/manifest.json`; pointing `--config` at a manifest replays the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use odda_core::augment::{load_stopwords, Lexicon};
use odda_core::data::{load_augmented, load_dataset, FileFormat};
use odda_core::synth::SynthSpec;
use odda_core::trainer::RunConfig;
use odda_core::{Dataset, OddaError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_path: Option<String>,
    pub test_path: Option<String>,
    /// tsv | csv | jsonl; inferred from the extension when absent.
    pub format: Option<String>,
    pub lexicon_path: Option<String>,
    pub stopwords_path: Option<String>,
    /// Pre-generated augmented JSONL for the external augmenter.
    pub augmented_path: Option<String>,
    /// Model checkpoint consumed by `eval`.
    pub checkpoint_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub p_n_list: Vec<f64>,
    pub methods: Vec<String>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            p_n_list: vec![0.0, 0.1, 0.3, 0.5],
            methods: vec![
                "eda".into(),
                "glitter".into(),
                "small_loss".into(),
                "reweight".into(),
                "consistency".into(),
                "odda_od".into(),
                "odda_sr".into(),
                "odda_both".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateParams {
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub ms: Vec<usize>,
}

impl Default for AblateParams {
    fn default() -> Self {
        Self { taus: vec![0.5, 1.0, 2.0, 3.0], alphas: vec![5.0, 10.0, 20.0, 50.0, 100.0], ms: vec![2] }
    }
}

/// Full configuration of one CLI invocation. The pipeline settings flatten
/// to the top level; `data`, `synth`, `sweep`, and `ablate` hold the
/// command-specific parts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub sweep: SweepParams,
    pub ablate: AblateParams,
    #[serde(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seeds: Vec<u64>,
    pub root_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bayes_accuracy: Option<f64>,
    pub config: serde_json::Value,
    /// Wall-clock timestamp; lives here so report files stay reproducible.
    pub created_at: String,
}

/// Load a config file (or start from defaults), apply `--set` overrides,
/// and return both the typed config and its fully resolved JSON. Accepts a
/// previous run's manifest in place of a config file.
pub fn resolve_config(
    config_path: Option<&Path>,
    sets: &[String],
) -> Result<(CliConfig, serde_json::Value, Option<Vec<u64>>)> {
    let mut manifest_seeds = None;
    let mut value = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| OddaError::Config(format!("{}: {e}", path.display())))?;
            if let (Some(cfg), Some(seeds)) = (v.get("config"), v.get("seeds")) {
                if v.get("command").is_some() {
                    // a manifest: replay its config and remember its seeds
                    manifest_seeds = serde_json::from_value(seeds.clone()).ok();
                    v = cfg.clone();
                }
            }
            v
        }
        None => serde_json::json!({}),
    };
    // overlay on the defaults so dot paths can be checked for typos
    let mut resolved = serde_json::to_value(CliConfig::default()).expect("defaults serialize");
    merge_into(&mut resolved, &value);
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| OddaError::Config(format!("--set needs KEY=VALUE, got `{set}`")))?;
        let parsed: serde_json::Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(raw.to_string()),
        };
        apply_path(&mut resolved, key, parsed)?;
    }
    value = resolved.clone();
    let cfg: CliConfig = serde_json::from_value(resolved)
        .map_err(|e| OddaError::Config(format!("invalid config: {e}")))?;
    // normalize: re-serialize so the manifest carries exactly what ran
    let final_value = serde_json::to_value(&cfg).expect("config serializes");
    let _ = value;
    Ok((cfg, final_value, manifest_seeds))
}

fn merge_into(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_into(slot, v),
                    Some(slot) => *slot = v.clone(),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Set a dot-path key, erroring on paths that do not exist in the config
/// layout. A null intermediate (e.g. an unset optional section) becomes an
/// object so its fields can be set.
fn apply_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if node.is_null() {
            *node = serde_json::json!({});
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            OddaError::Config(format!("config key `{}` is not a section", segments[..i].join(".")))
        })?;
        if last {
            if !obj.contains_key(*seg) && !was_null_section(&segments[..i]) {
                return Err(OddaError::Config(format!("unknown config key `{path}`")));
            }
            obj.insert(seg.to_string(), new);
            return Ok(());
        }
        node = match obj.get_mut(*seg) {
            Some(v) => v,
            None => {
                return Err(OddaError::Config(format!(
                    "unknown config section `{}`",
                    segments[..=i].join(".")
                )))
            }
        };
    }
    Ok(())
}

// sections that default to null (optional configs) accept any field; their
// final shape is checked by deserialization
fn was_null_section(prefix: &[&str]) -> bool {
    matches!(prefix.last(), Some(&"baseline"))
}

pub fn format_from(data: &DataConfig, path: &Path) -> Result<FileFormat> {
    match &data.format {
        Some(f) => f.parse(),
        None => FileFormat::from_path(path),
    }
}

pub struct LoadedInputs {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub lexicon: Lexicon,
    pub stopwords: BTreeSet<String>,
    pub external_aug: Option<Dataset>,
}

pub fn load_inputs(data: &DataConfig, need_test: bool) -> Result<LoadedInputs> {
    let train_path = data
        .train_path
        .as_ref()
        .ok_or_else(|| OddaError::Config("data.train_path is required".into()))?;
    let train_path = PathBuf::from(train_path);
    let train = load_dataset(&train_path, format_from(data, &train_path)?)?;

    let test = match (&data.test_path, need_test) {
        (Some(p), _) => {
            let p = PathBuf::from(p);
            let raw = load_dataset(&p, format_from(data, &p)?)?;
            if raw.label_names != train.label_names {
                return Err(OddaError::Data(format!(
                    "train and test label sets differ: {:?} vs {:?}",
                    train.label_names, raw.label_names
                )));
            }
            Some(raw)
        }
        (None, true) => return Err(OddaError::Config("data.test_path is required".into())),
        (None, false) => None,
    };

    let lexicon = match &data.lexicon_path {
        Some(p) => Lexicon::load(Path::new(p))?,
        None => Lexicon::default(),
    };
    let stopwords = match &data.stopwords_path {
        Some(p) => load_stopwords(Path::new(p))?,
        None => BTreeSet::new(),
    };
    let external_aug = match &data.augmented_path {
        Some(p) => Some(load_augmented(Path::new(p), &train.label_names)?),
        None => None,
    };
    Ok(LoadedInputs { train, test, lexicon, stopwords, external_aug })
}

pub fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    seeds: &[u64],
    root_seed: u64,
    bayes_accuracy: Option<f64>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        seeds: seeds.to_vec(),
        root_seed,
        bayes_accuracy,
        config,
        created_at: now_utc(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Seconds since the epoch; avoids a clock-formatting dependency.
fn now_utc() -> String {
    match std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH) {
        Ok(d) => format!("{}s", d.as_secs()),
        Err(_) => "unknown".into(),
    }
}
