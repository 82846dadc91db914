//! The six subcommands. Each resolves its config, runs, and leaves behind
//! `manifest.json` plus its outputs under `--out`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use odda_core::augment::eda_augment;
use odda_core::classifier::{load_checkpoint, save_checkpoint};
use odda_core::report::{ablate_to_csv, AblateCell, RunReport, SweepRow, SweepTable};
use odda_core::trainer::{
    evaluate, run_single, EvalMetrics, LogRecord, Method, PipelineInputs, RunConfig,
};
use odda_core::{OddaError, Result, SeededRng};

use crate::config::{load_inputs, write_manifest, CliConfig, LoadedInputs};
use crate::{log_debug, log_info, log_warn};

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_jsonl(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("log record serializes"))?;
    }
    Ok(())
}

/// Method-specific view of the shared config: sets the method and makes
/// sure baseline settings exist (with the matching mode) when needed.
fn config_for_method(base: &RunConfig, method: Method) -> RunConfig {
    use odda_core::BaselineMode;
    let mut cfg = base.clone();
    cfg.method = method;
    let mode = match method {
        Method::Glitter => Some(BaselineMode::Glitter),
        Method::SmallLoss => Some(BaselineMode::SmallLoss),
        Method::Reweight => Some(BaselineMode::Reweight),
        Method::Consistency => Some(BaselineMode::Consistency),
        Method::EpidaStub => Some(BaselineMode::EpidaStub),
        _ => None,
    };
    if let Some(mode) = mode {
        let mut b = cfg.train.baseline.unwrap_or_default();
        b.mode = mode;
        b.select_k = b.select_k.max(1).min(b.pool_k);
        cfg.train.baseline = Some(b);
    }
    cfg
}

fn inputs_view<'a>(loaded: &'a LoadedInputs, test: &'a odda_core::Dataset) -> PipelineInputs<'a> {
    PipelineInputs {
        train: &loaded.train,
        test,
        lexicon: &loaded.lexicon,
        stopwords: &loaded.stopwords,
        external_aug: loaded.external_aug.as_ref(),
    }
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

pub fn gen_synthetic(cfg: &CliConfig, resolved: serde_json::Value, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let generated = cfg.synth.generate()?;
    generated.train.save_jsonl(&out.join("train.jsonl"))?;
    generated.test.save_jsonl(&out.join("test.jsonl"))?;
    generated.lexicon.save(&out.join("lexicon.tsv"))?;
    write_manifest(
        out,
        "gen-synthetic",
        resolved,
        &[cfg.synth.seed],
        cfg.synth.seed,
        Some(generated.bayes_accuracy),
    )?;
    log_info(&format!(
        "wrote {} train / {} test examples (bayes accuracy {:.4}) to {}",
        generated.train.len(),
        generated.test.len(),
        generated.bayes_accuracy,
        out.display()
    ));
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

pub fn augment(cfg: &CliConfig, resolved: serde_json::Value, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let loaded = load_inputs(&cfg.data, false)?;
    let seed = cfg.run.train.seed;
    let rng = SeededRng::new(seed);
    let augmented =
        eda_augment(&loaded.train, &cfg.run.eda, &loaded.lexicon, &loaded.stopwords, &rng)?;
    augmented.save_jsonl(&out.join("augmented.jsonl"))?;
    write_manifest(out, "augment", resolved, &[seed], seed, None)?;
    log_info(&format!(
        "augmented {} examples x k={} -> {} lines",
        loaded.train.len(),
        cfg.run.eda.k,
        augmented.len()
    ));
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SeedMetrics {
    seed: u64,
    macro_f1: f64,
    accuracy: f64,
    per_class_f1: Vec<f64>,
    best_dev: Option<f64>,
}

#[derive(Serialize)]
struct TrainReport {
    f1: RunReport,
    accuracy: RunReport,
    per_seed: Vec<SeedMetrics>,
}

pub fn train(cfg: &CliConfig, resolved: serde_json::Value, out: &Path, seeds: &[u64]) -> Result<()> {
    ensure_out(out)?;
    std::fs::create_dir_all(out.join("checkpoints"))?;
    std::fs::create_dir_all(out.join("logs"))?;
    let loaded = load_inputs(&cfg.data, true)?;
    let test = loaded.test.clone().expect("test required");
    let inputs = inputs_view(&loaded, &test);
    let run_cfg = config_for_method(&cfg.run, cfg.run.method);

    let mut per_seed = Vec::new();
    for &seed in seeds {
        log_info(&format!("training method={} seed={seed}", run_cfg.method));
        let outcome = run_single(&run_cfg, &inputs, seed).map_err(|e| seed_err(seed, e))?;
        for w in &outcome.warnings {
            log_warn(w);
        }
        write_jsonl(&out.join(format!("logs/seed_{seed}_teacher.jsonl")), &outcome.teacher_log)?;
        write_jsonl(&out.join(format!("logs/seed_{seed}_student.jsonl")), &outcome.student_log)?;
        save_checkpoint(
            &outcome.model,
            &loaded.train.label_names,
            &out.join(format!("checkpoints/seed_{seed}.ckpt")),
        )?;
        log_debug(&format!(
            "seed {seed}: macro_f1={:.4} accuracy={:.4}",
            outcome.metrics.macro_f1, outcome.metrics.accuracy
        ));
        per_seed.push(SeedMetrics {
            seed,
            macro_f1: outcome.metrics.macro_f1,
            accuracy: outcome.metrics.accuracy,
            per_class_f1: outcome.metrics.per_class_f1.clone(),
            best_dev: outcome.best_dev,
        });
    }
    let hyper = serde_json::to_value(&run_cfg).expect("config serializes");
    let f1 = RunReport::new(
        run_cfg.method.name(),
        "macro_f1",
        seeds.to_vec(),
        per_seed.iter().map(|m| m.macro_f1).collect(),
        hyper.clone(),
    );
    let accuracy = RunReport::new(
        run_cfg.method.name(),
        "accuracy",
        seeds.to_vec(),
        per_seed.iter().map(|m| m.accuracy).collect(),
        hyper,
    );
    println!("{}", odda_core::report::render_text(std::slice::from_ref(&f1)));
    write_json(&out.join("report.json"), &TrainReport { f1, accuracy, per_seed })?;
    write_manifest(out, "train", resolved, seeds, cfg.run.train.seed, None)?;
    Ok(())
}

fn seed_err(seed: u64, e: OddaError) -> OddaError {
    match e {
        OddaError::Config(m) => OddaError::Config(format!("seed {seed}: {m}")),
        OddaError::Data(m) => OddaError::Data(format!("seed {seed}: {m}")),
        OddaError::Numeric(m) => OddaError::Numeric(format!("seed {seed}: {m}")),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalReport {
    checkpoint: String,
    dataset: String,
    metrics: EvalMetrics,
}

pub fn eval(cfg: &CliConfig, resolved: serde_json::Value, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let ckpt_path = cfg
        .data
        .checkpoint_path
        .as_ref()
        .ok_or_else(|| OddaError::Config("data.checkpoint_path is required for eval".into()))?;
    let test_path = cfg
        .data
        .test_path
        .as_ref()
        .ok_or_else(|| OddaError::Config("data.test_path is required for eval".into()))?;
    let (model, label_names) = load_checkpoint(Path::new(ckpt_path))?;
    let test_pb = std::path::PathBuf::from(test_path);
    let test = odda_core::data::load_dataset(&test_pb, crate::config::format_from(&cfg.data, &test_pb)?)?;
    if test.label_names != label_names {
        return Err(OddaError::Data(format!(
            "label mismatch: checkpoint {:?} vs dataset {:?}",
            label_names, test.label_names
        )));
    }
    let metrics = evaluate(&model, &test)?;
    println!(
        "macro_f1={:.4} accuracy={:.4} per_class_f1={:?}",
        metrics.macro_f1, metrics.accuracy, metrics.per_class_f1
    );
    write_json(
        &out.join("report.json"),
        &EvalReport { checkpoint: ckpt_path.clone(), dataset: test_path.clone(), metrics },
    )?;
    write_manifest(out, "eval", resolved, &[], cfg.run.train.seed, None)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep-noise
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SweepCell {
    method: String,
    p_n: f64,
    f1: RunReport,
    accuracy: RunReport,
}

#[derive(Serialize)]
struct SweepReport {
    p_n_list: Vec<f64>,
    methods: Vec<String>,
    cells: Vec<SweepCell>,
}

const SWEEP_METHODS: &[&str] = &[
    "eda",
    "glitter",
    "small_loss",
    "reweight",
    "consistency",
    "odda_od",
    "odda_sr",
    "odda_both",
];

pub fn sweep_noise(
    cfg: &CliConfig,
    resolved: serde_json::Value,
    out: &Path,
    seeds: &[u64],
) -> Result<()> {
    ensure_out(out)?;
    let methods: Vec<Method> = cfg
        .sweep
        .methods
        .iter()
        .map(|name| {
            if !SWEEP_METHODS.contains(&name.as_str()) {
                return Err(OddaError::Config(format!(
                    "unknown sweep method `{name}` (expected one of {SWEEP_METHODS:?})"
                )));
            }
            name.parse()
        })
        .collect::<Result<_>>()?;
    if methods.is_empty() || cfg.sweep.p_n_list.is_empty() {
        return Err(OddaError::Config("sweep needs at least one method and one p_n".into()));
    }
    let loaded = load_inputs(&cfg.data, true)?;
    let test = loaded.test.clone().expect("test required");
    let inputs = inputs_view(&loaded, &test);

    // every (method, p_n, seed) triple is an isolated pipeline; run them in
    // the worker pool and assemble in (method, p_n, seed) order
    let grid: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| cfg.sweep.p_n_list.iter().map(move |&p| (m, p)))
        .collect();
    let triples: Vec<(Method, f64, u64)> = grid
        .iter()
        .flat_map(|&(m, p)| seeds.iter().map(move |&s| (m, p, s)))
        .collect();
    use rayon::prelude::*;
    let runs: Vec<Result<odda_core::trainer::EvalMetrics>> = triples
        .par_iter()
        .map(|&(method, p_n, seed)| {
            let mut cell_cfg = config_for_method(&cfg.run, method);
            cell_cfg.noise.p_n = p_n;
            let out = run_single(&cell_cfg, &inputs, seed).map_err(|e| seed_err(seed, e))?;
            log_debug(&format!(
                "method={method} p_n={p_n} seed={seed}: f1={:.4}",
                out.metrics.macro_f1
            ));
            Ok(out.metrics)
        })
        .collect();
    let runs: Vec<odda_core::trainer::EvalMetrics> = runs.into_iter().collect::<Result<_>>()?;
    let cells: Vec<SweepCell> = grid
        .iter()
        .enumerate()
        .map(|(i, &(method, p_n))| {
            let chunk = &runs[i * seeds.len()..(i + 1) * seeds.len()];
            let mut cell_cfg = config_for_method(&cfg.run, method);
            cell_cfg.noise.p_n = p_n;
            let hyper = serde_json::to_value(&cell_cfg).expect("config serializes");
            SweepCell {
                method: method.name().to_string(),
                p_n,
                f1: RunReport::new(
                    method.name(),
                    "macro_f1",
                    seeds.to_vec(),
                    chunk.iter().map(|m| m.macro_f1).collect(),
                    hyper.clone(),
                ),
                accuracy: RunReport::new(
                    method.name(),
                    "accuracy",
                    seeds.to_vec(),
                    chunk.iter().map(|m| m.accuracy).collect(),
                    hyper,
                ),
            }
        })
        .collect();

    let table = SweepTable {
        p_n_values: cfg.sweep.p_n_list.clone(),
        rows: methods
            .iter()
            .map(|m| SweepRow {
                method: m.name().to_string(),
                means: cells
                    .iter()
                    .filter(|c| c.method == m.name())
                    .map(|c| c.f1.mean)
                    .collect(),
            })
            .collect(),
    };
    table.write_csv(&out.join("table.csv"))?;
    print!("{}", table.to_csv());
    write_json(
        &out.join("report.json"),
        &SweepReport {
            p_n_list: cfg.sweep.p_n_list.clone(),
            methods: methods.iter().map(|m| m.name().to_string()).collect(),
            cells,
        },
    )?;
    write_manifest(out, "sweep-noise", resolved, seeds, cfg.run.train.seed, None)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AblateReport {
    method: String,
    cells: Vec<AblateCell>,
}

#[derive(Serialize)]
struct CellTiming {
    tau: f64,
    alpha: f64,
    m: usize,
    seconds: f64,
}

pub fn ablate(cfg: &CliConfig, resolved: serde_json::Value, out: &Path, seeds: &[u64]) -> Result<()> {
    ensure_out(out)?;
    let grid: Vec<(f64, f64, usize)> = cfg
        .ablate
        .taus
        .iter()
        .flat_map(|&t| {
            cfg.ablate.alphas.iter().flat_map(move |&a| cfg.ablate.ms.iter().map(move |&m| (t, a, m)))
        })
        .collect();
    if grid.is_empty() {
        return Err(OddaError::Config("ablation grid is empty".into()));
    }
    let loaded = load_inputs(&cfg.data, true)?;
    let test = loaded.test.clone().expect("test required");
    let inputs = inputs_view(&loaded, &test);
    let method = cfg.run.method;

    use rayon::prelude::*;
    let results: Vec<Result<(AblateCell, CellTiming)>> = grid
        .par_iter()
        .map(|&(tau, alpha, m)| {
            let mut cell_cfg = config_for_method(&cfg.run, method);
            cell_cfg.train.od.tau = tau;
            cell_cfg.train.sr.alpha = alpha;
            cell_cfg.train.sr.m = m;
            let start = std::time::Instant::now();
            let outcome = odda_core::trainer::run_experiment(&cell_cfg, &inputs, seeds)?;
            let seconds = start.elapsed().as_secs_f64();
            Ok((
                AblateCell { tau, alpha, m, report: outcome.f1, best: false },
                CellTiming { tau, alpha, m, seconds },
            ))
        })
        .collect();
    let mut cells = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        let (cell, timing) = r?;
        cells.push(cell);
        timings.push(timing);
    }
    // highlight the best mean; ties keep the first cell in grid order
    let best = cells
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.report
                .mean
                .partial_cmp(&b.report.mean)
                .expect("finite means")
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    cells[best].best = true;

    for (cell, timing) in cells.iter().zip(&timings) {
        println!(
            "tau={:<4} alpha={:<5} m={} mean={:.4} std={:.4} ({:.2}s){}",
            cell.tau,
            cell.alpha,
            cell.m,
            cell.report.mean,
            cell.report.std,
            timing.seconds,
            if cell.best { "  <- best" } else { "" }
        );
    }
    std::fs::write(out.join("table.csv"), ablate_to_csv(&cells))?;
    write_json(&out.join("report.json"), &AblateReport { method: method.name().into(), cells })?;
    // timings stay out of report.json so replays stay byte-identical
    write_json(&out.join("timings.json"), &timings)?;
    write_manifest(out, "ablate", resolved, seeds, cfg.run.train.seed, None)?;
    Ok(())
}
