//! Seeded, repeated benchmark runs and their reports.
//!
//! A run is fully described by an [`ExperimentConfig`]. Repeat `r` uses seed
//! `seed + r` for both the data draw and training, so reruns reproduce every
//! discovered group exactly.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_lasso, train_oracle, LassoConfig};
use crate::datasets::{load_binary_csv, read_groups_file, LabeledDataset, Task};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::LossWeights;
use crate::trainer::{self, Evaluation, TrainConfig};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "COMPFS_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// The five-learner ensemble.
    #[serde(alias = "compfs5")]
    CompFs,
    /// A single gated learner without the overlap term.
    CompFs1,
    Oracle,
    Lasso,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::CompFs, ModelKind::CompFs1, ModelKind::Oracle, ModelKind::Lasso];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CompFs => "compfs",
            ModelKind::CompFs1 => "compfs1",
            ModelKind::Oracle => "oracle",
            ModelKind::Lasso => "lasso",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "compfs" | "compfs5" => Ok(ModelKind::CompFs),
            "compfs1" => Ok(ModelKind::CompFs1),
            "oracle" => Ok(ModelKind::Oracle),
            "lasso" => Ok(ModelKind::Lasso),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// A built-in benchmark or an external binary CSV.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskSpec {
    Builtin(Task),
    /// `file:<path>`. Truth, if any, is read from `<path>` with its
    /// extension replaced by `.groups`.
    File(PathBuf),
}

impl TaskSpec {
    pub fn name(&self) -> String {
        self.to_string()
    }

    /// Task whose presets apply. External files are binary like the chemistry
    /// tasks and borrow Chem1's row.
    fn preset_task(&self) -> Task {
        match self {
            TaskSpec::Builtin(t) => *t,
            TaskSpec::File(_) => Task::Chem1,
        }
    }

    /// Train and test sets for one repeat.
    pub fn load(&self, n_train: Option<usize>, n_test: Option<usize>, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            TaskSpec::Builtin(task) => {
                let (tr, te) = task.default_sizes();
                task.train_test(n_train.unwrap_or(tr), n_test.unwrap_or(te), seed)
            }
            TaskSpec::File(path) => {
                let mut data = load_binary_csv(path)?;
                let sidecar = path.with_extension("groups");
                if sidecar.exists() {
                    data = data.with_truth(read_groups_file(&sidecar)?)?;
                }
                split(&data, n_train, n_test, seed)
            }
        }
    }
}

/// Shuffled split of an external file; by default 80% trains.
fn split(
    data: &LabeledDataset,
    n_train: Option<usize>,
    n_test: Option<usize>,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = data.len();
    let train_len = n_train.unwrap_or(n - n / 5).min(n);
    let test_len = n_test.unwrap_or(n - train_len).min(n - train_len);
    if train_len == 0 || test_len == 0 {
        return Err(Error::invalid(format!(
            "{}: {n} rows cannot fill a train and a test split",
            data.name
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |idx: &[usize]| {
        let y = idx.iter().map(|&i| data.y[i]).collect();
        LabeledDataset::new(
            data.name.clone(),
            data.x.gather_rows(idx),
            y,
            data.n_classes,
            data.truth.clone(),
        )
    };
    Ok((part(&order[..train_len])?, part(&order[train_len..train_len + test_len])?))
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Builtin(t) => write!(f, "{t}"),
            TaskSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("file:") {
            Some("") => Err(Error::invalid("file task needs a path")),
            Some(path) => Ok(TaskSpec::File(PathBuf::from(path))),
            None => Ok(TaskSpec::Builtin(s.parse()?)),
        }
    }
}

impl TryFrom<String> for TaskSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskSpec> for String {
    fn from(t: TaskSpec) -> String {
        t.to_string()
    }
}

/// Everything tunable about one model fit. For LASSO, `beta` is the L1
/// coefficient and the ensemble fields are unused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_learners: usize,
    pub hidden: usize,
    pub beta: f64,
    pub beta_e: f64,
    pub beta_r: f64,
    pub scale_by_sqrt_p: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub temperature: f64,
    pub threshold: f64,
}

/// Published hyperparameters for `task` and `model`.
pub fn preset(task: Task, model: ModelKind) -> Hyperparams {
    let synthetic = task.is_synthetic();
    let base = Hyperparams {
        n_learners: 5,
        hidden: 20,
        beta: 4.5,
        beta_e: 1.0,
        beta_r: 1.2,
        scale_by_sqrt_p: true,
        batch_size: if synthetic { 50 } else { 20 },
        learning_rate: 0.003,
        lr_decay: 0.99,
        epochs: 35,
        temperature: 0.1,
        threshold: 0.7,
    };
    match model {
        ModelKind::CompFs => Hyperparams {
            beta: match task {
                Task::Chem1 | Task::Chem3 => 2.0,
                Task::Chem2 => 3.4,
                _ => 4.5,
            },
            ..base
        },
        ModelKind::CompFs1 | ModelKind::Oracle => Hyperparams {
            n_learners: 1,
            hidden: 30,
            beta: match task {
                Task::Chem1 | Task::Chem2 => 0.4,
                Task::Chem3 => 0.7,
                _ => 0.35,
            },
            beta_r: 0.0,
            batch_size: if synthetic { 100 } else { 20 },
            ..base
        },
        ModelKind::Lasso => Hyperparams {
            beta: match task {
                Task::Chem2 | Task::Chem3 => 0.2,
                _ => 0.4,
            },
            epochs: LassoConfig::EPOCHS,
            ..base
        },
    }
}

/// Parses a preset name such as `syn1/compfs5`.
pub fn named_preset(name: &str) -> Result<(Task, ModelKind, Hyperparams)> {
    let (task, model) = name
        .split_once('/')
        .ok_or_else(|| Error::Config(format!("preset {name:?} is not of the form task/model")))?;
    let task: Task = task.parse()?;
    let model: ModelKind = model.parse()?;
    Ok((task, model, preset(task, model)))
}

/// Resolved description of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub model: ModelKind,
    pub repeats: usize,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub hyper: Hyperparams,
}

impl ExperimentConfig {
    /// Preset configuration with ten repeats from seed 0.
    pub fn new(task: TaskSpec, model: ModelKind) -> Self {
        let hyper = preset(task.preset_task(), model);
        Self {
            task,
            model,
            repeats: 10,
            seed: 0,
            n_train: None,
            n_test: None,
            hyper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if matches!(self.model, ModelKind::CompFs1 | ModelKind::Oracle) && self.hyper.n_learners != 1 {
            return Err(Error::Config(format!("{} uses exactly one learner", self.model)));
        }
        Ok(())
    }

    fn train_config(&self, data: &LabeledDataset, seed: u64) -> TrainConfig {
        let h = &self.hyper;
        TrainConfig {
            model: ModelConfig {
                n_features: data.n_features(),
                n_learners: h.n_learners,
                hidden: h.hidden,
                n_classes: data.n_classes,
                temperature: h.temperature,
                threshold: h.threshold,
            },
            weights: LossWeights {
                beta: h.beta,
                beta_e: h.beta_e,
                beta_r: h.beta_r,
                scale_by_sqrt_p: h.scale_by_sqrt_p,
            },
            epochs: h.epochs,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            lr_decay: h.lr_decay,
            seed,
        }
    }

    fn lasso_config(&self, seed: u64) -> LassoConfig {
        let h = &self.hyper;
        LassoConfig {
            reg: h.beta,
            epochs: h.epochs,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            lr_decay: h.lr_decay,
            relevance_threshold: LassoConfig::RELEVANCE_THRESHOLD,
            seed,
        }
    }
}

/// Partial configuration as written in a TOML file or given on the command
/// line. Later layers override earlier ones; unset fields fall back to the
/// preset of the resolved task and model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub preset: Option<String>,
    pub task: Option<String>,
    pub model: Option<String>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub n_learners: Option<usize>,
    pub hidden: Option<usize>,
    pub beta: Option<f64>,
    pub beta_e: Option<f64>,
    pub beta_r: Option<f64>,
    pub scale_by_sqrt_p: Option<bool>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub temperature: Option<f64>,
    pub threshold: Option<f64>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `other` wins wherever it sets a field.
    pub fn overlay(self, other: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigLayer { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset, task, model, repeats, seed, n_train, n_test, n_learners, hidden, beta, beta_e, beta_r,
            scale_by_sqrt_p, batch_size, learning_rate, lr_decay, epochs, temperature, threshold
        )
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let named = self.preset.as_deref().map(named_preset).transpose()?;
        let task: TaskSpec = match (&self.task, &named) {
            (Some(t), _) => t.parse()?,
            (None, Some((t, _, _))) => TaskSpec::Builtin(*t),
            (None, None) => return Err(Error::Config("no task given".into())),
        };
        let model: ModelKind = match (&self.model, &named) {
            (Some(m), _) => m.parse()?,
            (None, Some((_, m, _))) => *m,
            (None, None) => return Err(Error::Config("no model given".into())),
        };
        let mut config = ExperimentConfig::new(task, model);
        if let Some((_, _, hyper)) = named {
            config.hyper = hyper;
        }
        let h = &mut config.hyper;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { h.$f = v; })* };
        }
        set!(
            n_learners, hidden, beta, beta_e, beta_r, scale_by_sqrt_p, batch_size, learning_rate, lr_decay,
            epochs, temperature, threshold
        );
        config.repeats = self.repeats.unwrap_or(config.repeats);
        config.seed = self.seed.unwrap_or(config.seed);
        config.n_train = self.n_train.or(config.n_train);
        config.n_test = self.n_test.or(config.n_test);
        config.validate()?;
        Ok(config)
    }
}

/// Outcome of one seeded train-and-evaluate cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub task: String,
    pub model: String,
    /// Metrics are fractions in `[0, 1]`; the selection scores are absent
    /// without ground truth and every metric is absent for a failed run.
    pub tpr: Option<f64>,
    pub fdr: Option<f64>,
    pub g_sim: Option<f64>,
    pub n_groups: Option<usize>,
    pub accuracy: Option<f64>,
    /// Discovered groups with 1-based feature indices.
    pub groups: Vec<Vec<usize>>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tpr: Option<Summary>,
    pub fdr: Option<Summary>,
    pub g_sim: Option<Summary>,
    pub n_groups: Option<Summary>,
    pub accuracy: Option<Summary>,
}

impl Aggregate {
    pub fn of(runs: &[RunRecord]) -> Aggregate {
        let collect = |f: fn(&RunRecord) -> Option<f64>| Summary::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
        Aggregate {
            tpr: collect(|r| r.tpr),
            fdr: collect(|r| r.fdr),
            g_sim: collect(|r| r.g_sim),
            n_groups: collect(|r| r.n_groups.map(|n| n as f64)),
            accuracy: collect(|r| r.accuracy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
    /// Set when at least one run failed; the aggregate covers the rest.
    pub partial: bool,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, runs: Vec<RunRecord>) -> Self {
        let aggregate = Aggregate::of(&runs);
        let partial = runs.iter().any(|r| !r.succeeded());
        Self {
            config,
            runs,
            aggregate,
            partial,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table; rates and accuracy in percent, features 1-based.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(out, "task {}  model {}  repeats {}  base seed {}", c.task, c.model, c.repeats, c.seed);
        let _ = writeln!(
            out,
            "{:>6} {:>7} {:>7} {:>6} {:>7} {:>9} {:>8}  groups",
            "seed", "TPR", "FDR", "G_sim", "groups", "accuracy", "time(s)"
        );
        for r in &self.runs {
            if let Some(err) = &r.error {
                let _ = writeln!(out, "{:>6} failed: {err}", r.seed);
                continue;
            }
            let groups: Vec<String> = r
                .groups
                .iter()
                .map(|g| format!("{{{}}}", g.iter().map(usize::to_string).collect::<Vec<_>>().join(",")))
                .collect();
            let _ = writeln!(
                out,
                "{:>6} {:>7} {:>7} {:>6} {:>7} {:>9} {:>8.1}  {}",
                r.seed,
                pct(r.tpr),
                pct(r.fdr),
                num(r.g_sim),
                r.n_groups.map_or_else(|| "-".into(), |n| n.to_string()),
                pct(r.accuracy),
                r.wall_time_s,
                groups.join(" ")
            );
        }
        let a = &self.aggregate;
        let ms = |s: Option<Summary>, scale: f64, digits: usize| {
            s.map_or_else(
                || "-".to_string(),
                |s| format!("{:.*} ± {:.*}", digits, scale * s.mean, digits, scale * s.std),
            )
        };
        let _ = writeln!(
            out,
            "mean ± std: TPR {}  FDR {}  G_sim {}  groups {}  accuracy {}",
            ms(a.tpr, 100.0, 1),
            ms(a.fdr, 100.0, 1),
            ms(a.g_sim, 1.0, 2),
            ms(a.n_groups, 1.0, 1),
            ms(a.accuracy, 100.0, 1)
        );
        if self.partial {
            let failed = self.runs.iter().filter(|r| !r.succeeded()).count();
            let _ = writeln!(out, "PARTIAL: {failed} of {} runs failed", self.runs.len());
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(format!("writing {}", json.display()), e))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.table()).map_err(|e| Error::io(format!("writing {}", txt.display()), e))
    }
}

/// Trains and evaluates one repeat.
pub fn run_once(config: &ExperimentConfig, seed: u64) -> RunRecord {
    let start = Instant::now();
    let result = fit_and_evaluate(config, seed);
    let wall_time_s = start.elapsed().as_secs_f64();
    let mut record = RunRecord {
        seed,
        task: config.task.name(),
        model: config.model.name().to_string(),
        tpr: None,
        fdr: None,
        g_sim: None,
        n_groups: None,
        accuracy: None,
        groups: Vec::new(),
        wall_time_s,
        error: None,
    };
    match result {
        Ok(eval) => {
            record.tpr = eval.scores.map(|s| s.tpr);
            record.fdr = eval.scores.map(|s| s.fdr);
            record.g_sim = eval.scores.map(|s| s.g_sim);
            record.n_groups = Some(eval.n_groups());
            record.accuracy = Some(eval.accuracy);
            record.groups = eval.groups.to_one_based();
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn fit_and_evaluate(config: &ExperimentConfig, seed: u64) -> Result<Evaluation> {
    let (train, test) = config.task.load(config.n_train, config.n_test, seed)?;
    let truth = test.truth.clone();
    match config.model {
        ModelKind::CompFs | ModelKind::CompFs1 => {
            let out = trainer::train(&config.train_config(&train, seed), &train)?;
            trainer::evaluate(&out.model, &test, truth.as_ref())
        }
        ModelKind::Oracle => {
            let out = train_oracle(&config.train_config(&train, seed), &train)?;
            trainer::evaluate(&out.model, &test, truth.as_ref())
        }
        ModelKind::Lasso => {
            let model = train_lasso(&config.lasso_config(seed), &train)?;
            Evaluation::new(&model.predict(&test.x)?, &test.y, model.groups(), truth.as_ref())
        }
    }
}

/// Worker count: `COMPFS_THREADS` if set and positive, else all cores.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))
}

/// Runs every repeat and, given `out_dir`, writes the report files there.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|r| config.seed + r).collect();
    let runs = pool()?.install(|| seeds.par_iter().map(|&s| run_once(config, s)).collect());
    let report = ExperimentReport::new(config.clone(), runs);
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// Grid of ablation settings: every learner count is crossed with every
/// overlap weight (at the fixed sparsity weight) and every sparsity weight
/// (at the fixed overlap weight).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub learners: Vec<usize>,
    pub beta_r: Vec<f64>,
    pub beta: Vec<f64>,
    /// Sparsity weight held while the overlap weight varies.
    pub fixed_beta: f64,
    /// Overlap weight held while the sparsity weight varies.
    pub fixed_beta_r: f64,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            learners: vec![2, 5, 8, 10],
            beta_r: vec![0.4, 1.2, 2.0],
            beta: vec![0.4, 1.0, 2.0],
            fixed_beta: 1.0,
            fixed_beta_r: 1.2,
        }
    }
}

/// Mean discovered-group count for each (learner count, swept value).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base: ExperimentConfig,
    pub grid: AblationGrid,
    /// `[learner index][beta_r index]`.
    pub groups_by_beta_r: Vec<Vec<f64>>,
    /// `[learner index][beta index]`.
    pub groups_by_beta: Vec<Vec<f64>>,
    pub runs: Vec<RunRecord>,
    pub partial: bool,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let mut block = |title: &str, values: &[f64], rows: &[Vec<f64>]| {
            let _ = writeln!(out, "mean discovered groups, {title}");
            let _ = write!(out, "{:>9}", "learners");
            for v in values {
                let _ = write!(out, " {v:>7}");
            }
            out.push('\n');
            for (n, row) in self.grid.learners.iter().zip(rows) {
                let _ = write!(out, "{n:>9}");
                for c in row {
                    let _ = write!(out, " {c:>7.2}");
                }
                out.push('\n');
            }
        };
        block(
            &format!("varying beta_r (beta = {})", self.grid.fixed_beta),
            &self.grid.beta_r,
            &self.groups_by_beta_r,
        );
        block(
            &format!("varying beta (beta_r = {})", self.grid.fixed_beta_r),
            &self.grid.beta,
            &self.groups_by_beta,
        );
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json = dir.join("ablation.json");
        fs::write(&json, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(format!("writing {}", json.display()), e))?;
        let txt = dir.join("ablation.txt");
        fs::write(&txt, self.table()).map_err(|e| Error::io(format!("writing {}", txt.display()), e))
    }
}

/// Sweeps the grid around `base`, which should be a CompFS configuration.
pub fn run_ablation(base: &ExperimentConfig, grid: &AblationGrid, out_dir: Option<&Path>) -> Result<AblationReport> {
    base.validate()?;
    if grid.learners.is_empty() || (grid.beta_r.is_empty() && grid.beta.is_empty()) {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    // (learner row, swept-beta_r?, column, config)
    let mut cells = Vec::new();
    for (li, &n) in grid.learners.iter().enumerate() {
        for (ci, &br) in grid.beta_r.iter().enumerate() {
            let mut c = base.clone();
            c.hyper.n_learners = n;
            c.hyper.beta = grid.fixed_beta;
            c.hyper.beta_r = br;
            cells.push((li, true, ci, c));
        }
        for (ci, &b) in grid.beta.iter().enumerate() {
            let mut c = base.clone();
            c.hyper.n_learners = n;
            c.hyper.beta = b;
            c.hyper.beta_r = grid.fixed_beta_r;
            cells.push((li, false, ci, c));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|i| (0..base.repeats as u64).map(move |r| (i, base.seed + r)))
        .collect();
    let runs: Vec<RunRecord> = pool()?.install(|| jobs.par_iter().map(|&(i, s)| run_once(&cells[i].3, s)).collect());

    let mut by_beta_r = vec![vec![f64::NAN; grid.beta_r.len()]; grid.learners.len()];
    let mut by_beta = vec![vec![f64::NAN; grid.beta.len()]; grid.learners.len()];
    for (i, (li, sweeps_r, ci, _)) in cells.iter().enumerate() {
        let counts: Vec<f64> = jobs
            .iter()
            .zip(&runs)
            .filter(|((j, _), _)| *j == i)
            .filter_map(|(_, r)| r.n_groups.map(|n| n as f64))
            .collect();
        let mean = Summary::of(&counts).map_or(f64::NAN, |s| s.mean);
        if *sweeps_r {
            by_beta_r[*li][*ci] = mean;
        } else {
            by_beta[*li][*ci] = mean;
        }
    }
    let partial = runs.iter().any(|r| !r.succeeded());
    let report = AblationReport {
        base: base.clone(),
        grid: grid.clone(),
        groups_by_beta_r: by_beta_r,
        groups_by_beta: by_beta,
        runs,
        partial,
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}
