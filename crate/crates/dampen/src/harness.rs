//! Experiment orchestration: config resolution, end-to-end scenario runs,
//! alpha sensitivity sweeps, and report emission.
//!
//! Reports split into a canonical section (deterministic, hashed, reproducible
//! byte-for-byte from the config) and an informational section (timings).

use crate::autodiff::BackwardPassCounter;
use crate::data::{
    load_csv, make_split, splitmix64, synthesize_blobs, CsvSchema, Dataset, ForgetSplit,
    LabelSource, SplitRule,
};
use crate::dampening::{apply_dampening, unlearn, BlockCount, DampeningConfig, Method};
use crate::error::{Error, Result};
use crate::evaluation::{mia, MiaConfig, MiaReport};
use crate::importance::{
    fisher_diagonal, file_hash, lfssd_sensitivity, save_importance, ImportanceOver,
    ImportanceVector, OutputSpace,
};
use crate::model::{init_model, save_checkpoint, ModelSpec, ParameterVector};
use crate::training::{accuracy, finetune_baseline, retrain_baseline, train, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

// Seed-derivation tags, combined with the master seed via splitmix64.
const SEED_TAG_INIT: u64 = 1;
const SEED_TAG_SHUFFLE: u64 = 2;
const SEED_TAG_DATA: u64 = 3;
const SEED_TAG_TEST_DATA: u64 = 4;
const SEED_TAG_ATTACK: u64 = 5;
const SEED_TAG_SPLIT: u64 = 6;

fn derive_seed(master: u64, tag: u64) -> u64 {
    // Masked to 63 bits so resolved configs stay representable as TOML
    // integers (i64).
    splitmix64(master ^ tag.wrapping_mul(0xA5A5_5A5A_DEAD_BEEF)) & (i64::MAX as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synth {
        n_classes: usize,
        n_per_class: usize,
        n_features: usize,
        separation: f64,
        #[serde(default)]
        subclasses_per_class: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        test_seed: Option<u64>,
        #[serde(default)]
        test_n_per_class: Option<usize>,
    },
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    /// Forget one fine class entirely; training uses fine labels.
    FullClass { class: usize },
    /// Forget one fine sub-cluster; training uses coarse labels.
    SubClass { class: usize },
    /// Forget a seeded random fraction of all rows.
    Random {
        fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnParams {
    pub method: Method,
    pub alpha: f64,
    pub lambda: f64,
    #[serde(default = "default_output_space")]
    pub output_space: OutputSpace,
}

fn default_output_space() -> OutputSpace {
    OutputSpace::Logits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaParams {
    #[serde(default)]
    pub attack_seed: Option<u64>,
    pub members_per_class: u32,
    pub lr: f64,
    pub iterations: u32,
}

fn default_finetune_epochs() -> u32 {
    2
}

/// Complete description of one experiment. All optional seeds are filled in
/// from `master_seed` by [`ExperimentConfig::resolve`]; the resolved form is
/// echoed verbatim in reports so a report reproduces its run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub scenario: ScenarioConfig,
    pub train: TrainParams,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: u32,
    pub unlearn: UnlearnParams,
    pub mia: MiaParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        // An unreadable config is a configuration problem (exit 1), not a
        // runtime failure.
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Fill every absent seed deterministically from the master seed.
    pub fn resolve(&self) -> Self {
        let mut cfg = self.clone();
        let master = cfg.master_seed;
        if cfg.model.init_seed.is_none() {
            cfg.model.init_seed = Some(derive_seed(master, SEED_TAG_INIT));
        }
        if cfg.train.shuffle_seed.is_none() {
            cfg.train.shuffle_seed = Some(derive_seed(master, SEED_TAG_SHUFFLE));
        }
        if cfg.mia.attack_seed.is_none() {
            cfg.mia.attack_seed = Some(derive_seed(master, SEED_TAG_ATTACK));
        }
        if let DataConfig::Synth { seed, test_seed, .. } = &mut cfg.data {
            if seed.is_none() {
                *seed = Some(derive_seed(master, SEED_TAG_DATA));
            }
            if test_seed.is_none() {
                *test_seed = Some(derive_seed(master, SEED_TAG_TEST_DATA));
            }
        }
        if let ScenarioConfig::Random { seed, .. } = &mut cfg.scenario {
            if seed.is_none() {
                *seed = Some(derive_seed(master, SEED_TAG_SPLIT));
            }
        }
        cfg
    }

    pub fn label_source(&self) -> LabelSource {
        match self.scenario {
            ScenarioConfig::SubClass { .. } => LabelSource::Coarse,
            _ => LabelSource::Fine,
        }
    }

    fn split_rule(&self) -> SplitRule {
        match &self.scenario {
            ScenarioConfig::FullClass { class } => SplitRule::FullClass { class: *class },
            ScenarioConfig::SubClass { class } => SplitRule::SubClass { class: *class },
            ScenarioConfig::Random { fraction, seed } => SplitRule::RandomFraction {
                fraction: *fraction,
                seed: seed.expect("resolve() fills the split seed"),
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            shuffle_seed: self.train.shuffle_seed.expect("resolved"),
            label_source: self.label_source(),
        }
    }

    fn mia_config(&self) -> MiaConfig {
        MiaConfig {
            attack_seed: self.mia.attack_seed.expect("resolved"),
            members_per_class: self.mia.members_per_class,
            lr: self.mia.lr,
            iterations: self.mia.iterations,
        }
    }

    pub fn dampening_config(&self) -> DampeningConfig {
        DampeningConfig {
            alpha: self.unlearn.alpha,
            lambda: self.unlearn.lambda,
        }
    }
}

/// Everything shared by the pipeline stages: datasets, split, model spec.
pub struct ExperimentContext {
    pub config: ExperimentConfig,
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub split: ForgetSplit,
    pub spec: ModelSpec,
    pub label_source: LabelSource,
}

impl ExperimentContext {
    /// Resolve seeds, materialize datasets, build the split, and derive the
    /// model spec. Fails pre-flight when the forget set comes out empty.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let config = config.resolve();
        if config.train.epochs < 1 {
            return Err(Error::InvalidConfig("train.epochs must be >= 1".into()));
        }
        let label_source = config.label_source();
        let (train_set, test_set) = build_datasets(&config).map_err(|e| e.in_stage("data"))?;
        if matches!(config.scenario, ScenarioConfig::SubClass { .. })
            && train_set.coarse_labels.is_none()
        {
            return Err(Error::InvalidConfig(
                "subclass scenario needs coarse labels (set subclasses_per_class or a coarse column)"
                    .into(),
            ));
        }
        let split =
            make_split(&train_set, &config.split_rule()).map_err(|e| e.in_stage("split"))?;
        if split.forget_indices.is_empty() {
            return Err(Error::EmptyForgetSet.in_stage("split"));
        }
        let n_classes = train_set
            .n_classes(label_source)
            .max(test_set.n_classes(label_source));
        let mut layer_sizes = Vec::with_capacity(config.model.hidden.len() + 2);
        layer_sizes.push(train_set.n_features);
        layer_sizes.extend_from_slice(&config.model.hidden);
        layer_sizes.push(n_classes);
        let spec = ModelSpec::new(layer_sizes, config.model.init_seed.expect("resolved"))?;
        Ok(Self {
            config,
            train_set,
            test_set,
            split,
            spec,
            label_source,
        })
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.train_set.n_samples()).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.test_set.n_samples()).collect()
    }

    /// Full-set importance with the configured method's estimator.
    pub fn importance_full(&self, theta: &ParameterVector) -> Result<ImportanceVector> {
        self.importance(theta, &self.all_indices(), ImportanceOver::FullSet)
    }

    pub fn importance(
        &self,
        theta: &ParameterVector,
        indices: &[usize],
        over: ImportanceOver,
    ) -> Result<ImportanceVector> {
        match self.config.unlearn.method {
            Method::Ssd => fisher_diagonal(
                &self.spec,
                theta,
                &self.train_set,
                indices,
                self.label_source,
                over,
            ),
            Method::Lfssd => lfssd_sensitivity(
                &self.spec,
                theta,
                self.train_set.features_view(),
                indices,
                self.config.unlearn.output_space,
                over,
            ),
        }
    }

    /// Accuracy on retain/forget/test plus the membership inference attack.
    pub fn evaluate(&self, theta: &ParameterVector) -> Result<ModelEval> {
        let retain_acc = accuracy(
            &self.spec,
            theta,
            &self.train_set,
            &self.split.retain_indices,
            self.label_source,
        )?;
        let forget_acc = accuracy(
            &self.spec,
            theta,
            &self.train_set,
            &self.split.forget_indices,
            self.label_source,
        )?;
        let test_acc = accuracy(
            &self.spec,
            theta,
            &self.test_set,
            &self.test_indices(),
            self.label_source,
        )?;
        let mia_report = mia(
            &self.spec,
            theta,
            &self.train_set,
            &self.split,
            &self.test_set,
            self.label_source,
            &self.config.mia_config(),
        )?;
        Ok(ModelEval {
            retain_acc,
            forget_acc,
            test_acc,
            mia: mia_report,
        })
    }
}

fn build_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.data {
        DataConfig::Synth {
            n_classes,
            n_per_class,
            n_features,
            separation,
            subclasses_per_class,
            seed,
            test_seed,
            test_n_per_class,
        } => {
            let train = synthesize_blobs(
                *n_classes,
                *n_per_class,
                *n_features,
                *separation,
                seed.expect("resolved"),
                *subclasses_per_class,
            );
            let test = synthesize_blobs(
                *n_classes,
                test_n_per_class.unwrap_or(*n_per_class),
                *n_features,
                *separation,
                test_seed.expect("resolved"),
                *subclasses_per_class,
            );
            Ok((train, test))
        }
        DataConfig::Csv {
            train_path,
            test_path,
            schema,
        } => Ok((load_csv(train_path, schema)?, load_csv(test_path, schema)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub test_acc: f64,
    pub mia: MiaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub n_params: usize,
    pub n_selected: usize,
    pub mean_beta: f64,
    pub per_block: Vec<BlockCount>,
}

/// Backward passes per stage; the full-set importance runs once per
/// checkpoint and the unlearn stage runs once per forget request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePasses {
    pub importance_full: u64,
    pub unlearn_stage: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalReport {
    pub config: ExperimentConfig,
    pub baseline: ModelEval,
    pub retrain: ModelEval,
    pub finetune: ModelEval,
    pub unlearned: ModelEval,
    pub selection: SelectionSummary,
    pub backward_passes: StagePasses,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfoSection {
    pub timings_ms: BTreeMap<String, u64>,
    pub canonical_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub canonical: CanonicalReport,
    pub info: InfoSection,
}

impl UnlearnReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("report: {e}")))
    }

    /// Bytes of the canonical section only; identical configs give identical
    /// bytes across runs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.canonical).expect("report serializes")
    }

    pub fn canonical_hash(&self) -> String {
        hex_string(&Sha256::digest(self.canonical_bytes()))
    }

    /// Metric table, one row per model. f64 cells use the shortest
    /// round-trippable representation, so parsing the table back is lossless.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("model,retain_acc,forget_acc,test_acc,mia_score\n");
        for (name, eval) in self.model_evals() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                name, eval.retain_acc, eval.forget_acc, eval.test_acc, eval.mia.mia_score
            ));
        }
        out
    }

    pub fn model_evals(&self) -> [(&'static str, &ModelEval); 4] {
        [
            ("baseline", &self.canonical.baseline),
            ("retrain", &self.canonical.retrain),
            ("finetune", &self.canonical.finetune),
            ("unlearned", &self.canonical.unlearned),
        ]
    }
}

/// Parse the metric table emitted by [`UnlearnReport::metrics_csv`] back into
/// (model, retain, forget, test, mia) rows.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<(String, [f64; 4])>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidConfig(format!(
                "metrics csv line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        let mut values = [0.0; 4];
        for (slot, raw) in values.iter_mut().zip(&fields[1..]) {
            *slot = raw
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("metrics csv: bad number '{raw}'")))?;
        }
        rows.push((fields[0].to_string(), values));
    }
    Ok(rows)
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// End-to-end pipeline: data, split, baseline training, importance
/// persistence, unlearning, the retrain and finetune baselines, and
/// evaluation of all four models. Writes `baseline.ckpt`, `imp_full.bin`,
/// `unlearned.ckpt`, `report.json`, and `report.csv` when the config names an
/// output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<UnlearnReport> {
    let mut timings: BTreeMap<String, u64> = BTreeMap::new();
    let mut timed = |name: &str, start: Instant| {
        timings.insert(name.to_string(), start.elapsed().as_millis() as u64);
    };

    let start = Instant::now();
    let ctx = ExperimentContext::prepare(config)?;
    timed("prepare", start);

    if let Some(dir) = &ctx.config.output_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }

    let start = Instant::now();
    let theta_init = init_model(&ctx.spec).map_err(|e| e.in_stage("init"))?;
    let (baseline, _) = train(
        &ctx.spec,
        &theta_init,
        &ctx.train_set,
        &ctx.all_indices(),
        &ctx.config.train_config(),
    )
    .map_err(|e| e.in_stage("train"))?;
    timed("train_baseline", start);

    let checkpoint_hash = if let Some(dir) = &ctx.config.output_dir {
        let path = dir.join("baseline.ckpt");
        save_checkpoint(&ctx.spec, &baseline, &path).map_err(|e| e.in_stage("persist"))?;
        file_hash(&path).map_err(|e| e.in_stage("persist"))?
    } else {
        [0u8; 32]
    };

    let start = Instant::now();
    let counter = BackwardPassCounter::start();
    let imp_full = ctx
        .importance_full(&baseline)
        .map_err(|e| e.in_stage("importance"))?;
    let importance_full_passes = counter.since_start();
    timed("importance_full", start);
    if let Some(dir) = &ctx.config.output_dir {
        save_importance(&imp_full, &checkpoint_hash, &dir.join("imp_full.bin"))
            .map_err(|e| e.in_stage("persist"))?;
    }

    let start = Instant::now();
    let counter = BackwardPassCounter::start();
    let (unlearned, selection) = unlearn(
        &ctx.spec,
        &baseline,
        &ctx.train_set,
        &ctx.split,
        ctx.config.unlearn.method,
        &ctx.config.dampening_config(),
        ctx.label_source,
        ctx.config.unlearn.output_space,
        Some(&imp_full),
    )
    .map_err(|e| e.in_stage("unlearn"))?;
    let unlearn_passes = counter.since_start();
    timed("unlearn", start);
    if let Some(dir) = &ctx.config.output_dir {
        save_checkpoint(&ctx.spec, &unlearned, &dir.join("unlearned.ckpt"))
            .map_err(|e| e.in_stage("persist"))?;
    }

    let start = Instant::now();
    let (retrained, _) = retrain_baseline(
        &ctx.spec,
        &ctx.train_set,
        &ctx.split.retain_indices,
        &ctx.config.train_config(),
    )
    .map_err(|e| e.in_stage("retrain"))?;
    timed("retrain", start);

    let start = Instant::now();
    let finetune_config = TrainConfig {
        epochs: ctx.config.finetune_epochs,
        ..ctx.config.train_config()
    };
    let (finetuned, _) = finetune_baseline(
        &ctx.spec,
        &baseline,
        &ctx.train_set,
        &ctx.split.retain_indices,
        &finetune_config,
    )
    .map_err(|e| e.in_stage("finetune"))?;
    timed("finetune", start);

    let start = Instant::now();
    let canonical = CanonicalReport {
        config: ctx.config.clone(),
        baseline: ctx.evaluate(&baseline).map_err(|e| e.in_stage("evaluate"))?,
        retrain: ctx.evaluate(&retrained).map_err(|e| e.in_stage("evaluate"))?,
        finetune: ctx.evaluate(&finetuned).map_err(|e| e.in_stage("evaluate"))?,
        unlearned: ctx.evaluate(&unlearned).map_err(|e| e.in_stage("evaluate"))?,
        selection: SelectionSummary {
            n_params: ctx.spec.n_params(),
            n_selected: selection.n_selected(),
            mean_beta: selection.mean_beta(),
            per_block: selection.counts.clone(),
        },
        backward_passes: StagePasses {
            importance_full: importance_full_passes,
            unlearn_stage: unlearn_passes,
        },
    };
    timed("evaluate", start);

    let mut report = UnlearnReport {
        canonical,
        info: InfoSection {
            timings_ms: timings,
            canonical_sha256: String::new(),
        },
    };
    report.info.canonical_sha256 = report.canonical_hash();

    if let Some(dir) = &ctx.config.output_dir {
        write_output(&dir.join("report.json"), report.to_json().as_bytes())
            .map_err(|e| e.in_stage("persist"))?;
        write_output(&dir.join("report.csv"), report.metrics_csv().as_bytes())
            .map_err(|e| e.in_stage("persist"))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub mia_score: f64,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub baseline: ModelEval,
    /// Backward passes spent on importance estimation across the whole sweep;
    /// independent of the grid size because the importance pair is reused.
    pub importance_passes: u64,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,retain_acc,forget_acc,mia_score,n_selected\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.alpha, row.retain_acc, row.forget_acc, row.mia_score, row.n_selected
            ));
        }
        out
    }
}

/// One unlearn + evaluation per alpha, reusing a single trained checkpoint
/// and a single full/forget importance pair (importances do not depend on
/// alpha). Writes `sweep.csv` when the config names an output directory.
pub fn sweep_alpha(config: &ExperimentConfig, alpha_grid: &[f64]) -> Result<SweepResult> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    if alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("alpha grid must be ascending".into()));
    }
    let ctx = ExperimentContext::prepare(config)?;
    let theta_init = init_model(&ctx.spec)?;
    let (baseline, _) = train(
        &ctx.spec,
        &theta_init,
        &ctx.train_set,
        &ctx.all_indices(),
        &ctx.config.train_config(),
    )
    .map_err(|e| e.in_stage("train"))?;

    let counter = BackwardPassCounter::start();
    let imp_full = ctx
        .importance_full(&baseline)
        .map_err(|e| e.in_stage("importance"))?;
    let imp_forget = ctx
        .importance(&baseline, &ctx.split.forget_indices, ImportanceOver::ForgetSet)
        .map_err(|e| e.in_stage("importance"))?;
    let importance_passes = counter.since_start();

    let baseline_eval = ctx.evaluate(&baseline).map_err(|e| e.in_stage("evaluate"))?;
    let mut rows = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let cfg = DampeningConfig {
            alpha,
            lambda: ctx.config.unlearn.lambda,
        };
        let (theta, selection) = apply_dampening(&baseline, &imp_full, &imp_forget, &cfg)
            .map_err(|e| e.in_stage("unlearn"))?;
        let eval = ctx.evaluate(&theta).map_err(|e| e.in_stage("evaluate"))?;
        rows.push(SweepRow {
            alpha,
            retain_acc: eval.retain_acc,
            forget_acc: eval.forget_acc,
            mia_score: eval.mia.mia_score,
            n_selected: selection.n_selected(),
        });
    }
    let result = SweepResult {
        rows,
        baseline: baseline_eval,
        importance_passes,
    };
    if let Some(dir) = &ctx.config.output_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        write_output(&dir.join("sweep.csv"), result.to_csv().as_bytes())?;
    }
    Ok(result)
}
