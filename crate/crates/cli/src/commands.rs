use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use coco_core::evalues::{budget_select, BudgetInput};
use coco_core::knowledge::KnowledgeTable;
use coco_core::pipeline::{
    budget_evaluate, calibration_scores, evaluate_predictions, predict, BudgetReport, CalibrationState,
    RecordPrediction,
};
use coco_core::synthio::{generate, ingest, write_records};
use coco_core::{EvaluationReport, ExampleRecord, Method, Provenance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LevelChoice, RunConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-seed artifacts recorded in the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    /// File name to SHA-256 of its contents.
    pub digests: BTreeMap<String, String>,
    pub reports: BTreeMap<String, EvaluationReport>,
    /// Wall-clock milliseconds per phase.
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<u64, SeedEntry>,
}

impl RunManifest {
    pub fn path(cfg: &RunConfig) -> PathBuf {
        cfg.out_dir.join("manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    fn load_or_new(cfg: &RunConfig) -> Result<Self> {
        let path = Self::path(cfg);
        let mut m = if path.exists() {
            Self::load(&path)?
        } else {
            Self { tool_version: TOOL_VERSION.into(), config: cfg.clone(), seeds: BTreeMap::new() }
        };
        m.tool_version = TOOL_VERSION.into();
        m.config = cfg.clone();
        Ok(m)
    }

    fn store(&self, cfg: &RunConfig) -> Result<()> {
        write_json(&Self::path(cfg), self)
    }
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(out)
}

/// File names inside a seed directory.
pub mod files {
    pub const RECORDS: &str = "records.jsonl";
    pub const CALIBRATION: &str = "calibration.json";
    pub const BUDGET: &str = "budget.json";

    pub fn predictions(method: coco_core::Method) -> String {
        format!("predictions-{method}.jsonl")
    }

    pub fn report(method: coco_core::Method) -> String {
        format!("report-{method}.json")
    }
}

struct Session<'a> {
    cfg: &'a RunConfig,
    kt: KnowledgeTable,
    manifest: RunManifest,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, kt: cfg.knowledge_table()?, manifest: RunManifest::load_or_new(cfg)? })
    }

    fn entry(&mut self, seed: u64) -> &mut SeedEntry {
        self.manifest.seeds.entry(seed).or_default()
    }

    fn record_file(&mut self, seed: u64, name: &str, start: Instant, phase: &str) -> Result<()> {
        let digest = digest_file(&self.cfg.seed_dir(seed).join(name))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let e = self.entry(seed);
        e.digests.insert(name.to_string(), digest);
        e.timings_ms.insert(phase.to_string(), ms);
        Ok(())
    }

    fn records(&self, seed: u64) -> Result<(Vec<ExampleRecord>, Vec<ExampleRecord>)> {
        let path = self.cfg.seed_dir(seed).join(files::RECORDS);
        let file = fs::File::open(&path)
            .with_context(|| format!("opening {} (run `gen` first)", path.display()))?;
        let mut all = ingest(BufReader::new(file), &self.kt, self.cfg.strict)
            .with_context(|| format!("ingesting {}", path.display()))?;
        let n_cal = split_point(all.len(), self.cfg.calibration_fraction)?;
        let test = all.split_off(n_cal);
        Ok((all, test))
    }

    fn finish(self) -> Result<()> {
        self.manifest.store(self.cfg)
    }
}

fn split_point(n: usize, fraction: f64) -> Result<usize> {
    let n_cal = (n as f64 * fraction).floor() as usize;
    if n_cal == 0 || n_cal >= n {
        anyhow::bail!("cannot split {n} records with calibration fraction {fraction}");
    }
    Ok(n_cal)
}

/// Writes `records.jsonl` per seed, generated or copied from the input file.
pub fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let mut ctx = Session::new(cfg)?;
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let records = match (&cfg.data.generate, &cfg.data.input) {
            (Some(g), _) => {
                let (mut a, b) = generate(&ctx.kt, &g.predictor, g.n_records, 0, seed)?;
                a.extend(b);
                a
            }
            (None, Some(path)) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                ingest(BufReader::new(file), &ctx.kt, cfg.strict)
                    .with_context(|| format!("ingesting {}", path.display()))?
            }
            (None, None) => unreachable!("validated"),
        };
        let path = cfg.seed_dir(seed).join(files::RECORDS);
        fs::create_dir_all(cfg.seed_dir(seed))?;
        write_records(BufWriter::new(fs::File::create(&path)?), &records)?;
        ctx.record_file(seed, files::RECORDS, start, "gen")?;
    }
    ctx.finish()
}

/// Fits the calibration state on each seed's calibration split. Under
/// budgets the levels are the bootstrap means over the test inputs.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let mut ctx = Session::new(cfg)?;
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (cal, test) = ctx.records(seed)?;
        let (alpha, beta) = match cfg.level_choice() {
            LevelChoice::Levels(l) => (l.alpha, l.beta),
            LevelChoice::Budgets(b) => {
                let scores = calibration_scores(&cal, &ctx.kt)?;
                let label_probs: Vec<Vec<f64>> =
                    test.iter().map(|r| r.label_probs(&ctx.kt).map(|p| p.into_owned())).collect::<Result<_, _>>()?;
                let inputs: Vec<BudgetInput<'_>> = test
                    .iter()
                    .zip(&label_probs)
                    .map(|(r, lp)| BudgetInput { label_probs: lp, concepts: &r.concept_probs, y_star: None, c_star: None })
                    .collect();
                let sel = budget_select(&scores, &inputs, &cfg.budget_config(&b, seed))?;
                (sel.mean_alpha, sel.mean_beta)
            }
        };
        let state = CalibrationState::fit(&cal, &ctx.kt, alpha, beta, cfg.mode)?;
        write_json(&cfg.seed_dir(seed).join(files::CALIBRATION), &state)?;
        ctx.record_file(seed, files::CALIBRATION, start, "calibrate")?;
    }
    ctx.finish()
}

fn provenance(cfg: &RunConfig, state: &CalibrationState, digest: String) -> Provenance {
    Provenance {
        alpha: Some(state.alpha),
        beta: Some(state.beta),
        budgets: cfg.budgets.as_ref().map(|b| (b.labels, b.concepts)),
        calibration_digest: Some(digest),
    }
}

/// Applies the configured method to each seed's test split.
pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let mut ctx = Session::new(cfg)?;
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (_, test) = ctx.records(seed)?;
        let state_path = cfg.seed_dir(seed).join(files::CALIBRATION);
        let state: CalibrationState = read_json(&state_path).context("run `calibrate` first")?;
        let prov = provenance(cfg, &state, digest_file(&state_path)?);
        let preds = predict(&test, &state, &ctx.kt, cfg.method, &prov, cfg.parallel)?;
        let name = files::predictions(cfg.method);
        write_jsonl(&cfg.seed_dir(seed).join(&name), &preds)?;
        ctx.record_file(seed, &name, start, &format!("predict-{}", cfg.method))?;
    }
    ctx.finish()
}

/// Scores each seed's predictions and stores the reports in the manifest.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<EvaluationReport>> {
    let mut ctx = Session::new(cfg)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (_, test) = ctx.records(seed)?;
        let dir = cfg.seed_dir(seed);
        let preds: Vec<RecordPrediction> =
            read_jsonl(&dir.join(files::predictions(cfg.method))).context("run `predict` first")?;
        let state: CalibrationState = read_json(&dir.join(files::CALIBRATION))?;
        let report = evaluate_predictions(&preds, &test, &ctx.kt, state.alpha, state.beta)?;
        let name = files::report(cfg.method);
        write_json(&dir.join(&name), &report)?;
        ctx.record_file(seed, &name, start, &format!("evaluate-{}", cfg.method))?;
        ctx.entry(seed).reports.insert(cfg.method.to_string(), report.clone());
        reports.push(report);
    }
    ctx.finish()?;
    Ok(reports)
}

/// Bootstrap budget selection plus revised-set coverage per seed.
pub fn cmd_budget(cfg: &RunConfig) -> Result<Vec<BudgetReport>> {
    let mut ctx = Session::new(cfg)?;
    let b = match cfg.level_choice() {
        LevelChoice::Budgets(b) => b,
        LevelChoice::Levels(_) => anyhow::bail!("budgets: `budget` needs a [budgets] section and method coco-star"),
    };
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (cal, test) = ctx.records(seed)?;
        let report = budget_evaluate(&cal, &test, &ctx.kt, &cfg.budget_config(&b, seed))?;
        write_json(&cfg.seed_dir(seed).join(files::BUDGET), &report)?;
        ctx.record_file(seed, files::BUDGET, start, "budget")?;
        out.push(report);
    }
    ctx.finish()?;
    Ok(out)
}

/// gen, calibrate, predict and evaluate in sequence.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<EvaluationReport>> {
    cmd_gen(cfg)?;
    cmd_calibrate(cfg)?;
    cmd_predict(cfg)?;
    cmd_evaluate(cfg)
}

/// Methods present in a manifest, in canonical order.
pub fn methods_in(manifest: &RunManifest) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| manifest.seeds.values().any(|e| e.reports.contains_key(m.as_str())))
        .collect()
}
