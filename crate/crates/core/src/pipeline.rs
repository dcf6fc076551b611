//! Manifest-driven experiments: ingest, split, train, evaluate, report.
//!
//! Every stage reads and writes files under one output directory and drops a
//! copy of the resolved configuration next to its outputs. The in-memory
//! functions (`fit_experiment`, `predict`, `evaluate`) are what the file-based
//! commands call, so tests can run a whole experiment without touching disk.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Behaviour, ChannelConfig, Dataset};
use crate::error::{Error, Result};
use crate::eval::{EvaluationReport, Prediction};
use crate::ingest::{ingest_csv, IngestConfig, Summary};
use crate::mlp::{self, MlpConfig, MlpModel, ValidationData};
use crate::par;
use crate::preprocess::PreprocessConfig;
use crate::ridge::{self, ClassWeight, Fold, GridPoint, GridSearchResult, RidgeModel, Scoring};
use crate::rocket::minirocket::fit_minirocket;
use crate::rocket::{FeatureMatrix, RocketTransform, Transform};
use crate::splitter::{plan_split, SplitConfig, SplitPlan};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATASET_FILE: &str = "dataset.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const MODEL_FILE: &str = "model.json";
pub const GRID_FILE: &str = "grid.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const FEATURES_FILE: &str = "features_train.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CONFUSION_NORM_FILE: &str = "confusion_norm.csv";
pub const REPORT_FILE: &str = "report.txt";

const ARTIFACT_FORMAT: &str = "calfrocket-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Raw CSV; relative paths resolve against the config file's directory.
    #[serde(default)]
    pub path: PathBuf,
    #[serde(flatten)]
    pub ingest: IngestConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            ingest: IngestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rocket,
    #[default]
    Minirocket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub kind: TransformKind,
    /// MiniRocket features requested per channel; rounded down to a multiple of 84.
    pub features_per_channel: usize,
    /// ROCKET kernel count; each kernel yields two features per channel.
    pub kernels: usize,
    pub seed: u64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            kind: TransformKind::Minirocket,
            features_per_channel: 10_000,
            kernels: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Ridge,
    Mlp,
}

/// Hyperparameter grid for the ridge classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeGridConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_count: usize,
    pub class_weights: Vec<ClassWeight>,
    pub fit_intercept: Vec<bool>,
    /// Number of grid points drawn for the search; absent means the full grid.
    pub sample: Option<usize>,
    pub seed: u64,
    pub scoring: Scoring,
}

impl Default for RidgeGridConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.001,
            alpha_max: 1000.0,
            alpha_count: 100,
            class_weights: vec![ClassWeight::None, ClassWeight::Balanced],
            fit_intercept: vec![true, false],
            sample: Some(50),
            seed: 0,
            scoring: Scoring::MacroRecall,
        }
    }
}

impl RidgeGridConfig {
    pub fn points(&self) -> Vec<GridPoint> {
        let alphas = ridge::linspace(self.alpha_min, self.alpha_max, self.alpha_count);
        let grid: Vec<GridPoint> = ridge::full_grid(&alphas)
            .into_iter()
            .filter(|p| self.class_weights.contains(&p.class_weight) && self.fit_intercept.contains(&p.fit_intercept))
            .collect();
        match self.sample {
            Some(n) => ridge::sample_grid(&grid, n, self.seed),
            None => grid,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.alpha_count == 0 || self.class_weights.is_empty() || self.fit_intercept.is_empty() {
            return Err(Error::validation("ridge grid has an empty axis"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_max >= self.alpha_min && self.alpha_max.is_finite()) {
            return Err(Error::validation("ridge alphas need 0 < alpha_min <= alpha_max"));
        }
        if self.alpha_count == 1 && self.alpha_min != self.alpha_max {
            return Err(Error::validation("a single alpha needs alpha_min == alpha_max"));
        }
        if self.sample == Some(0) {
            return Err(Error::validation("ridge grid sample must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub ridge: RidgeGridConfig,
    pub mlp: MlpConfig,
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    /// Worker threads; absent means the runtime default.
    pub workers: Option<usize>,
    /// Also write the training feature matrix when training.
    pub export_features: bool,
    pub dataset: DatasetConfig,
    pub channels: ChannelConfig,
    pub preprocess: PreprocessConfig,
    pub transform: TransformConfig,
    pub classifier: ClassifierConfig,
    pub split: SplitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            workers: None,
            export_features: false,
            dataset: DatasetConfig::default(),
            channels: ChannelConfig::default(),
            preprocess: PreprocessConfig::default(),
            transform: TransformConfig::default(),
            classifier: ClassifierConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

/// Command-line overrides of config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    /// Replaces the seed of every stochastic stage.
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("config: {e}")))
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if !config.dataset.path.as_os_str().is_empty() && config.dataset.path.is_relative() {
            config.dataset.path = base.join(&config.dataset.path);
        }
        if config.output.is_relative() {
            config.output = base.join(&config.output);
        }
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(w) = overrides.workers {
            self.workers = Some(w);
        }
        if let Some(seed) = overrides.seed {
            self.transform.seed = seed;
            self.split.search.seed = seed;
            self.classifier.ridge.seed = seed;
            self.classifier.mlp.seed = seed;
        }
        if let Some(out) = &overrides.output {
            self.output = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be at least 1"));
        }
        if self.channels.channels.is_empty() {
            return Err(Error::validation("no channels configured"));
        }
        let ing = &self.dataset.ingest;
        if !(ing.sample_rate_hz > 0.0 && ing.window_seconds > 0.0 && ing.max_gap_periods >= 1.0) {
            return Err(Error::validation(
                "sample rate and window length must be positive and max_gap_periods at least 1",
            ));
        }
        self.preprocess.validate()?;
        match self.transform.kind {
            TransformKind::Minirocket if self.transform.features_per_channel < 84 => {
                return Err(Error::validation("MiniRocket needs at least 84 features per channel"))
            }
            TransformKind::Rocket if self.transform.kernels == 0 => {
                return Err(Error::validation("ROCKET needs at least one kernel"))
            }
            _ => {}
        }
        match self.classifier.kind {
            ClassifierKind::Ridge => self.classifier.ridge.validate()?,
            ClassifierKind::Mlp => self.classifier.mlp.validate()?,
        }
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0 && s.val_fraction > 0.0 && s.val_fraction < 1.0) {
            return Err(Error::validation("split fractions must lie in (0, 1)"));
        }
        if s.folds == 0 || !(s.target_ratio.is_finite() && s.target_ratio > 0.0) {
            return Err(Error::validation("split needs folds >= 1 and a positive target ratio"));
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    fn write_copy(&self) -> Result<()> {
        fs::create_dir_all(&self.output)?;
        fs::write(self.path(CONFIG_FILE), self.to_toml()?)?;
        Ok(())
    }

    fn read_required(&self, name: &str, producer: &str) -> Result<String> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| {
            Error::validation(format!("cannot read {} (run `{producer}` first): {e}", p.display()))
        })
    }
}

/// The classifier half of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Ridge { model: RidgeModel, hyperparameters: GridPoint },
    Mlp { model: MlpModel },
}

/// Everything `evaluate` needs: fitted transform, classifier and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub label_order: Vec<String>,
    pub train_calves: Vec<String>,
    pub transform: Option<Transform>,
    pub classifier: TrainedClassifier,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(s)?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::Format(format!(
                "model artifact tagged '{}', expected '{ARTIFACT_FORMAT}'",
                a.format
            )));
        }
        Ok(a)
    }
}

pub struct TrainOutcome {
    pub artifact: ModelArtifact,
    /// Present when more than one ridge grid point was searched.
    pub grid: Option<GridSearchResult>,
    /// Transformed training windows; absent for the MLP, which reads raw windows.
    pub train_features: Option<FeatureMatrix>,
}

/// Label vocabulary: behaviours occurring anywhere in the dataset, canonical order.
pub fn label_order(dataset: &Dataset) -> Vec<String> {
    dataset.label_set().iter().map(|b| b.as_str().to_string()).collect()
}

/// The only data fit-time code may see. Fails on any test calf reaching it.
pub fn training_view(dataset: &Dataset, plan: &SplitPlan) -> Result<Dataset> {
    plan.validate()?;
    let view = dataset.for_calves(&plan.train_calves);
    let test: BTreeSet<&str> = plan.test_calves.iter().map(String::as_str).collect();
    if let Some(w) = view.windows().iter().find(|w| test.contains(w.calf_id.as_str())) {
        return Err(Error::Leakage(format!("test calf {} reached training", w.calf_id)));
    }
    Ok(view)
}

/// Raw windows flattened channel-major, one row per window.
pub fn flatten_windows(dataset: &Dataset) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = dataset.windows().iter().map(|w| w.data.concat()).collect();
    FeatureMatrix::from_rows(&rows)
}

fn fit_transform(training: &Dataset, config: &TransformConfig) -> Result<Transform> {
    Ok(match config.kind {
        TransformKind::Minirocket => {
            Transform::Minirocket(fit_minirocket(training, config.features_per_channel, config.seed)?)
        }
        TransformKind::Rocket => Transform::Rocket(RocketTransform::fit(training, config.kernels, config.seed)?),
    })
}

/// Row-index folds of `view` from the calf folds of `plan`.
fn row_folds(view: &Dataset, plan: &SplitPlan) -> Vec<Fold> {
    plan.folds
        .iter()
        .map(|f| Fold {
            train: view.indices_of(&f.train),
            validation: view.indices_of(&f.validation),
        })
        .collect()
}

/// Fits transform and classifier on the training calves of `plan`.
pub fn fit_experiment(dataset: &Dataset, plan: &SplitPlan, config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let order = label_order(dataset);
    let view = training_view(dataset, plan)?;
    if view.is_empty() {
        return Err(Error::EmptyInput("no training windows".into()));
    }
    let labels = view.label_indices(dataset.label_set())?;
    par::with_workers(config.workers, || match config.classifier.kind {
        ClassifierKind::Ridge => {
            let transform = fit_transform(&view, &config.transform)?;
            let features = transform.transform(&view)?;
            let points = config.classifier.ridge.points();
            let (best, grid) = if points.len() == 1 {
                (points[0], None)
            } else {
                let groups: Vec<String> = view.windows().iter().map(|w| w.calf_id.clone()).collect();
                let folds = row_folds(&view, plan);
                let result = ridge::grid_search(
                    &features,
                    &labels,
                    &order,
                    &groups,
                    &folds,
                    &points,
                    config.classifier.ridge.scoring,
                )?;
                (result.best(), Some(result))
            };
            let model = ridge::fit(&features, &labels, &order, &best.config(), &[])?;
            Ok(TrainOutcome {
                artifact: ModelArtifact {
                    format: ARTIFACT_FORMAT.into(),
                    label_order: order.clone(),
                    train_calves: plan.train_calves.clone(),
                    transform: Some(transform),
                    classifier: TrainedClassifier::Ridge {
                        model,
                        hyperparameters: best,
                    },
                },
                grid,
                train_features: Some(features),
            })
        }
        ClassifierKind::Mlp => {
            // Train on the first fold's training calves, monitor its validation calves.
            let fold = plan
                .folds
                .first()
                .ok_or_else(|| Error::validation("the MLP needs at least one validation fold"))?;
            let inputs = flatten_windows(&view)?;
            let rows = |calves: &[String]| view.indices_of(calves);
            let (tr, va) = (rows(&fold.train), rows(&fold.validation));
            let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<usize>>();
            let (x_tr, y_tr) = (inputs.select_rows(&tr), pick(&tr));
            let (x_va, y_va) = (inputs.select_rows(&va), pick(&va));
            let validation = (!va.is_empty()).then_some(ValidationData {
                inputs: &x_va,
                labels: &y_va,
            });
            let model = mlp::train(&x_tr, &y_tr, &order, &config.classifier.mlp, validation)?;
            Ok(TrainOutcome {
                artifact: ModelArtifact {
                    format: ARTIFACT_FORMAT.into(),
                    label_order: order.clone(),
                    train_calves: plan.train_calves.clone(),
                    transform: None,
                    classifier: TrainedClassifier::Mlp { model },
                },
                grid: None,
                train_features: None,
            })
        }
    })
}

/// Predicts every window of `dataset`.
pub fn predict(dataset: &Dataset, artifact: &ModelArtifact) -> Result<Vec<Prediction>> {
    let names: Vec<String> = match &artifact.classifier {
        TrainedClassifier::Ridge { model, .. } => {
            let transform = artifact
                .transform
                .as_ref()
                .ok_or_else(|| Error::Format("ridge artifact without a transform".into()))?;
            model.predict(&transform.transform(dataset)?)?
        }
        TrainedClassifier::Mlp { model } => {
            let (idx, _) = model.predict(&flatten_windows(dataset)?)?;
            idx.into_iter().map(|i| model.label_order[i].clone()).collect()
        }
    };
    Ok(dataset
        .window_ids()
        .into_iter()
        .zip(dataset.windows())
        .zip(names)
        .map(|((window_id, w), predicted)| Prediction {
            window_id,
            truth: w.label.as_str().to_string(),
            predicted,
        })
        .collect())
}

/// Predicts the test calves of `plan` and builds the report.
pub fn evaluate(
    dataset: &Dataset,
    plan: &SplitPlan,
    artifact: &ModelArtifact,
) -> Result<(Vec<Prediction>, EvaluationReport)> {
    plan.validate()?;
    let trained: BTreeSet<&String> = artifact.train_calves.iter().collect();
    if let Some(c) = plan.test_calves.iter().find(|c| trained.contains(c)) {
        return Err(Error::Leakage(format!("test calf {c} was used to train the model")));
    }
    let test = dataset.for_calves(&plan.test_calves);
    if test.is_empty() {
        return Err(Error::EmptyInput("no test windows".into()));
    }
    let predictions = predict(&test, artifact)?;
    let report = EvaluationReport::build(&test.window_ids(), &predictions, &artifact.label_order)?;
    Ok((predictions, report))
}

pub fn predictions_csv(predictions: &[Prediction]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in predictions {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_predictions(text: &str) -> Result<Vec<Prediction>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    Dataset::from_json_bytes(config.read_required(DATASET_FILE, "ingest")?.as_bytes())
}

fn load_plan(config: &ExperimentConfig) -> Result<SplitPlan> {
    SplitPlan::from_manifest(&config.read_required(SPLIT_FILE, "split")?)
}

/// `ingest`: CSV to dataset archive plus summary. Nothing is written on failure.
pub fn cmd_ingest(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    if config.dataset.path.as_os_str().is_empty() {
        return Err(Error::validation("dataset.path is not set"));
    }
    if !config.dataset.path.is_file() {
        return Err(Error::validation(format!("dataset {} not found", config.dataset.path.display())));
    }
    let (dataset, summary) = ingest_csv(
        &config.dataset.path,
        &config.dataset.ingest,
        &config.channels,
        &config.preprocess,
    )?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("no segment is long enough for one window".into()));
    }
    config.write_copy()?;
    fs::write(config.path(DATASET_FILE), dataset.to_json_bytes()?)?;
    fs::write(config.path(SUMMARY_CSV), summary.to_csv())?;
    fs::write(config.path(SUMMARY_TXT), summary.text())?;
    Ok(summary)
}

/// `split`: calf-level test split and validation folds.
pub fn cmd_split(config: &ExperimentConfig) -> Result<SplitPlan> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let plan = par::with_workers(config.workers, || plan_split(&dataset, &config.split))?;
    config.write_copy()?;
    fs::write(config.path(SPLIT_FILE), plan.to_manifest()?)?;
    Ok(plan)
}

/// `train`: fit on the training calves and persist the artifact and grid table.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let plan = load_plan(config)?;
    let outcome = fit_experiment(&dataset, &plan, config)?;
    config.write_copy()?;
    fs::write(config.path(MODEL_FILE), outcome.artifact.to_json()?)?;
    if let Some(grid) = &outcome.grid {
        fs::write(config.path(GRID_FILE), grid.to_csv())?;
    }
    if let TrainedClassifier::Mlp { model } = &outcome.artifact.classifier {
        fs::write(config.path(HISTORY_FILE), model.history_csv())?;
    }
    if config.export_features {
        if let Some(f) = &outcome.train_features {
            f.write_csv(fs::File::create(config.path(FEATURES_FILE))?)?;
        }
    }
    Ok(outcome)
}

fn write_report(config: &ExperimentConfig, report: &EvaluationReport) -> Result<()> {
    fs::write(config.path(METRICS_FILE), report.metrics_csv())?;
    fs::write(config.path(CONFUSION_FILE), report.confusion_csv())?;
    fs::write(config.path(CONFUSION_NORM_FILE), report.confusion_norm_csv())?;
    fs::write(config.path(REPORT_FILE), report.text())?;
    Ok(())
}

/// `evaluate`: predict the test calves and write every report file.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let plan = load_plan(config)?;
    let artifact = ModelArtifact::from_json(&config.read_required(MODEL_FILE, "train")?)?;
    let (predictions, report) = par::with_workers(config.workers, || evaluate(&dataset, &plan, &artifact))?;
    config.write_copy()?;
    fs::write(config.path(PREDICTIONS_FILE), predictions_csv(&predictions)?)?;
    write_report(config, &report)?;
    Ok(report)
}

/// `report`: rebuild the report files from stored predictions.
pub fn cmd_report(config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let plan = load_plan(config)?;
    let artifact = ModelArtifact::from_json(&config.read_required(MODEL_FILE, "train")?)?;
    let predictions = read_predictions(&config.read_required(PREDICTIONS_FILE, "evaluate")?)?;
    let expected = dataset.for_calves(&plan.test_calves).window_ids();
    let report = EvaluationReport::build(&expected, &predictions, &artifact.label_order)?;
    config.write_copy()?;
    write_report(config, &report)?;
    Ok(report)
}

/// Behaviour names in canonical order, for callers building label lists.
pub fn canonical_labels() -> Vec<String> {
    Behaviour::ALL.iter().map(|b| b.as_str().to_string()).collect()
}
