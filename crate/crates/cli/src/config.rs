use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coco_core::evalues::{DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID};
use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable, DEFAULT_CAP};
use coco_core::{Aggregation, BudgetConfig, Method, PredictorSpec, SelectionRule};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetsConfig {
    pub labels: f64,
    pub concepts: f64,
    #[serde(default = "default_grid_alpha")]
    pub grid_alpha: Vec<f64>,
    #[serde(default = "default_grid_beta")]
    pub grid_beta: Vec<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub rule: SelectionRule,
}

impl BudgetsConfig {
    pub fn new(labels: f64, concepts: f64) -> Self {
        Self {
            labels,
            concepts,
            grid_alpha: default_grid_alpha(),
            grid_beta: default_grid_beta(),
            iterations: default_iterations(),
            rule: SelectionRule::default(),
        }
    }
}

fn default_grid_alpha() -> Vec<f64> {
    DEFAULT_ALPHA_GRID.to_vec()
}

fn default_grid_beta() -> Vec<f64> {
    DEFAULT_BETA_GRID.to_vec()
}

fn default_iterations() -> usize {
    100
}

/// An explicit weight table on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSource {
    pub path: PathBuf,
    pub domain_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_records: usize,
    pub predictor: PredictorSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Line-delimited record file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random instances per suite per seed.
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Largest concept space drawn for the optimality suite.
    #[serde(default = "default_max_total")]
    pub max_total_size: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { instances: default_instances(), max_total_size: default_max_total() }
    }
}

fn default_instances() -> usize {
    200
}

fn default_max_total() -> usize {
    1024
}

/// Run configuration, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_table: Option<TableSource>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<LevelsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<BudgetsConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataConfig,
    /// Leading fraction of each record stream used for calibration.
    #[serde(default = "default_fraction")]
    pub calibration_fraction: f64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub mode: Aggregation,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_method() -> Method {
    Method::Coco
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_fraction() -> f64 {
    0.2
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_parallel() -> bool {
    true
}

/// Levels to build the raw sets at, or budgets to select them from.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelChoice {
    Levels(LevelsConfig),
    Budgets(BudgetsConfig),
}

impl RunConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = &mut cfg.knowledge_table {
            resolve(&mut t.path);
        }
        if let Some(p) = &mut cfg.data.input {
            resolve(p);
        }
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Checks cross-field invariants; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        match (&self.knowledge, &self.knowledge_table) {
            (None, None) => bail!("knowledge: one of `knowledge` or `knowledge_table` is required"),
            (Some(_), Some(_)) => bail!("knowledge: set only one of `knowledge` and `knowledge_table`"),
            _ => {}
        }
        if self.seeds.is_empty() {
            bail!("seeds: must be nonempty");
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            bail!("calibration_fraction: {} not in (0, 1)", self.calibration_fraction);
        }
        if self.cap == 0 {
            bail!("cap: must be positive");
        }
        match (&self.data.input, &self.data.generate) {
            (None, None) => bail!("data: one of `data.input` or `data.generate` is required"),
            (Some(_), Some(_)) => bail!("data: set only one of `data.input` and `data.generate`"),
            _ => {}
        }
        if let Some(l) = &self.levels {
            for (name, v) in [("levels.alpha", l.alpha), ("levels.beta", l.beta)] {
                if !(v > 0.0 && v < 1.0) {
                    bail!("{name}: {v} not in (0, 1)");
                }
            }
        }
        if let Some(b) = &self.budgets {
            if self.method != Method::CocoStar {
                bail!("budgets: only apply to method `coco-star`, not `{}`", self.method);
            }
            if self.levels.is_some() {
                bail!("levels: set exactly one of `levels` and `budgets` for coco-star");
            }
            if !(b.labels > 0.0) || !(b.concepts > 0.0) {
                bail!("budgets: label and concept budgets must be positive");
            }
            if b.iterations == 0 {
                bail!("budgets.iterations: must be positive");
            }
        }
        Ok(())
    }

    pub fn level_choice(&self) -> LevelChoice {
        match (&self.levels, &self.budgets) {
            (_, Some(b)) => LevelChoice::Budgets(b.clone()),
            (Some(l), None) => LevelChoice::Levels(l.clone()),
            (None, None) => LevelChoice::Levels(LevelsConfig { alpha: 0.1, beta: 0.1 }),
        }
    }

    pub fn budget_config(&self, b: &BudgetsConfig, seed: u64) -> BudgetConfig {
        BudgetConfig {
            grid_alpha: b.grid_alpha.clone(),
            grid_beta: b.grid_beta.clone(),
            label_budget: b.labels,
            concept_budget: b.concepts,
            iterations: b.iterations,
            seed,
            mode: self.mode,
            rule: b.rule,
        }
    }

    pub fn knowledge_table(&self) -> Result<KnowledgeTable> {
        if let Some(p) = &self.knowledge {
            return Ok(KnowledgeTable::compile_with_cap(p, self.cap)?);
        }
        let t = self.knowledge_table.as_ref().expect("validated");
        let file = fs::File::open(&t.path).with_context(|| format!("opening {}", t.path.display()))?;
        Ok(KnowledgeTable::from_text(t.domain_sizes.clone(), std::io::BufReader::new(file), self.cap)?)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed-{seed}"))
    }
}
