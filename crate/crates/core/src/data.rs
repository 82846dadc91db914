//! Datasets of labeled text instances, file ingestion, and stratified
//! subsampling.
//!
//! One `Example` struct serves both original and augmented instances: an
//! augmented example carries `origin_id` pointing at the original it was
//! derived from (absent for augmenters with no origin mapping). Original and
//! augmented pools are kept as separate `Dataset` values throughout the
//! pipeline.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OddaError, Result};
use crate::rng::SeededRng;

/// A labeled text instance. `label` indexes into the owning dataset's
/// `label_names`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_id: Option<u64>,
    pub text: String,
    pub label: usize,
}

/// An ordered collection of examples over a fixed label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub label_names: Vec<String>,
    pub examples: Vec<Example>,
}

/// Input file format for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tsv,
    Csv,
    Jsonl,
}

impl std::str::FromStr for FileFormat {
    type Err = OddaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(FileFormat::Tsv),
            "csv" => Ok(FileFormat::Csv),
            "jsonl" => Ok(FileFormat::Jsonl),
            other => Err(OddaError::Config(format!("unknown format `{other}`"))),
        }
    }
}

impl FileFormat {
    /// Guess from a file extension; errors on anything unrecognized.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => Ok(FileFormat::Tsv),
            Some("csv") => Ok(FileFormat::Csv),
            Some("jsonl") | Some("json") => Ok(FileFormat::Jsonl),
            other => Err(OddaError::Config(format!(
                "cannot infer format from extension {:?} of {}",
                other,
                path.display()
            ))),
        }
    }
}

impl Dataset {
    /// Build a dataset, checking the structural invariants: at least two
    /// classes, labels in range, ids unique, texts non-empty after trimming.
    pub fn new(label_names: Vec<String>, examples: Vec<Example>) -> Result<Self> {
        if label_names.len() < 2 {
            return Err(OddaError::Data(format!(
                "need at least 2 classes, got {}",
                label_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.label >= label_names.len() {
                return Err(OddaError::Data(format!(
                    "example {} has label {} but only {} classes exist",
                    ex.id,
                    ex.label,
                    label_names.len()
                )));
            }
            if ex.text.trim().is_empty() {
                return Err(OddaError::Data(format!("example {} has empty text", ex.id)));
            }
            if !seen.insert(ex.id) {
                return Err(OddaError::Data(format!("duplicate example id {}", ex.id)));
            }
        }
        Ok(Self { label_names, examples })
    }

    pub(crate) fn from_parts(label_names: Vec<String>, examples: Vec<Example>) -> Self {
        Self { label_names, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Per-class example counts, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    pub fn find(&self, id: u64) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Write as JSONL, one `{"text", "label", ["origin_id"]}` object per line.
    /// Labels are written by name so the file stands alone.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        for ex in &self.examples {
            let mut obj = serde_json::Map::new();
            obj.insert("id".into(), ex.id.into());
            if let Some(origin) = ex.origin_id {
                obj.insert("origin_id".into(), origin.into());
            }
            obj.insert("text".into(), ex.text.clone().into());
            obj.insert("label".into(), self.label_names[ex.label].clone().into());
            writeln!(out, "{}", serde_json::Value::Object(obj))?;
        }
        Ok(())
    }
}

/// Load a dataset from disk. Label names are collected from the file and
/// sorted lexicographically; label indices follow that order. Ids are
/// assigned 0..n-1 in file order.
pub fn load_dataset(path: &Path, format: FileFormat) -> Result<Dataset> {
    let records = read_records(path, format)?;
    if records.is_empty() {
        return Err(OddaError::Data(format!("{}: empty file", path.display())));
    }
    let mut names: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
    names.sort();
    names.dedup();
    dataset_from_records(records, names)
}

/// Load an augmented dataset whose labels must come from an existing label
/// set (so a file missing some class still aligns with the original data).
pub fn load_augmented(path: &Path, label_names: &[String]) -> Result<Dataset> {
    let records = read_records(path, FileFormat::Jsonl)?;
    if records.is_empty() {
        return Err(OddaError::Data(format!("{}: empty file", path.display())));
    }
    dataset_from_records(records, label_names.to_vec())
}

struct RawRecord {
    line: usize,
    text: String,
    label: String,
    origin_id: Option<u64>,
}

fn dataset_from_records(records: Vec<RawRecord>, names: Vec<String>) -> Result<Dataset> {
    let index: BTreeMap<&str, usize> =
        names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut examples = Vec::with_capacity(records.len());
    for (id, rec) in records.into_iter().enumerate() {
        let label = *index.get(rec.label.as_str()).ok_or_else(|| OddaError::MalformedRecord {
            line: rec.line,
            message: format!("unknown label `{}`", rec.label),
        })?;
        if rec.text.trim().is_empty() {
            return Err(OddaError::MalformedRecord {
                line: rec.line,
                message: "empty text".into(),
            });
        }
        examples.push(Example { id: id as u64, origin_id: rec.origin_id, text: rec.text, label });
    }
    Dataset::new(names, examples)
}

fn read_records(path: &Path, format: FileFormat) -> Result<Vec<RawRecord>> {
    match format {
        FileFormat::Tsv => read_tsv(path),
        FileFormat::Csv => read_csv(path),
        FileFormat::Jsonl => read_jsonl(path),
    }
}

fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| OddaError::Data(format!("{}: {e}", path.display())))
}

fn read_tsv(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(open_file(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let text = parts.next().unwrap_or_default();
        let label = parts.next().ok_or_else(|| OddaError::MalformedRecord {
            line: lineno,
            message: "missing label column (expected text<TAB>label)".into(),
        })?;
        records.push(RawRecord {
            line: lineno,
            text: text.to_string(),
            label: label.trim().to_string(),
            origin_id: None,
        });
    }
    Ok(records)
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (text_col, label_col) = match (col("text"), col("label")) {
        (Some(t), Some(l)) => (t, l),
        _ => {
            return Err(OddaError::Data(format!(
                "{}: CSV header must contain `text` and `label` columns, got {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            )))
        }
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let lineno = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |c: usize| {
            row.get(c).map(str::to_string).ok_or_else(|| OddaError::MalformedRecord {
                line: lineno,
                message: format!("missing column {c}"),
            })
        };
        records.push(RawRecord {
            line: lineno,
            text: get(text_col)?,
            label: get(label_col)?.trim().to_string(),
            origin_id: None,
        });
    }
    Ok(records)
}

fn csv_err(e: csv::Error) -> OddaError {
    match e.position() {
        Some(pos) => OddaError::MalformedRecord {
            line: pos.line() as usize,
            message: e.to_string(),
        },
        None => OddaError::Data(e.to_string()),
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    #[derive(Deserialize)]
    struct Row {
        text: String,
        label: serde_json::Value,
        #[serde(default)]
        origin_id: Option<u64>,
    }
    let reader = BufReader::new(open_file(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| OddaError::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        let label = match &row.label {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(OddaError::MalformedRecord {
                    line: lineno,
                    message: format!("label must be string or number, got {other}"),
                })
            }
        };
        records.push(RawRecord { line: lineno, text: row.text, label, origin_id: row.origin_id });
    }
    Ok(records)
}

/// Stratified subsample preserving class proportions as closely as integer
/// rounding allows, with at least one example per class. Deterministic in
/// `(dataset, fraction, rng)`; the result is ordered by example id.
pub fn subsample(d: &Dataset, fraction: f64, rng: &SeededRng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(OddaError::Config(format!("fraction must be in (0,1], got {fraction}")));
    }
    let total = (fraction * d.len() as f64).ceil() as usize;
    if total < d.num_classes() {
        return Err(OddaError::Data(format!(
            "fraction {fraction} keeps {total} examples, fewer than {} classes",
            d.num_classes()
        )));
    }
    let selected = stratified_pick(d, fraction, "subsample", rng, false);
    let mut examples: Vec<Example> =
        selected.into_iter().map(|i| d.examples[i].clone()).collect();
    examples.sort_by_key(|e| e.id);
    Ok(Dataset::from_parts(d.label_names.clone(), examples))
}

/// Stratified train/dev split. The dev side gets `round(fraction * n_c)`
/// examples of each class, clamped so both sides keep at least one example
/// of every class that has two or more.
pub fn split_dev(d: &Dataset, fraction: f64, rng: &SeededRng) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(OddaError::Config(format!("dev fraction must be in [0,1), got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok((d.clone(), Dataset::from_parts(d.label_names.clone(), Vec::new())));
    }
    let dev_positions = stratified_pick(d, fraction, "dev", rng, true);
    let dev_set: std::collections::HashSet<usize> = dev_positions.iter().copied().collect();
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, ex) in d.examples.iter().enumerate() {
        if dev_set.contains(&i) {
            dev.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((
        Dataset::from_parts(d.label_names.clone(), train),
        Dataset::from_parts(d.label_names.clone(), dev),
    ))
}

/// Pick positions per class: `round(fraction * n_c)` of each, at least one,
/// capped so `hold_back` leaves a remainder. Shuffles within a class come
/// from a per-class stream so the choice is independent of file size.
fn stratified_pick(
    d: &Dataset,
    fraction: f64,
    tag: &str,
    rng: &SeededRng,
    hold_back: bool,
) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes()];
    for (i, ex) in d.examples.iter().enumerate() {
        by_class[ex.label].push(i);
    }
    let mut picked = Vec::new();
    for (class, positions) in by_class.into_iter().enumerate() {
        if positions.is_empty() {
            continue;
        }
        let n_c = positions.len();
        let mut target = (fraction * n_c as f64).round() as usize;
        target = target.max(1).min(n_c);
        if hold_back && n_c >= 2 {
            target = target.min(n_c - 1);
        } else if hold_back && n_c < 2 {
            target = 0;
        }
        let mut shuffled = positions;
        shuffled.shuffle(&mut rng.stream(tag, &[class as u64]));
        picked.extend(shuffled.into_iter().take(target));
    }
    picked
}
