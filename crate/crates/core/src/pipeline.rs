//! End-to-end plumbing shared by the CLI: configuration, stratified splits,
//! persisted models, inference and the experiment drivers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::astro::{default_synth_catalog, read_catalog, Catalog};
use crate::augment::{adasyn, AdasynParams};
use crate::baselines::{
    ensemble_importance, predict_ensemble, predict_knn, train_bagged, train_knn, BaggingParams,
    EnsembleModel, KnnModel,
};
use crate::datagen::{lambert_grid_search, record_seed, GenOptions, TransferScenario};
use crate::dnn::{train, Layer, MlpConfig, Network, TrainHistory};
use crate::error::{Error, Result};
use crate::features::{feature_names, scenario_features, select_top_k, FeatureTable, Scaler};
use crate::hyperopt::{bo_run, dnn_space_with, BoOptions, DnnHyper, SearchSpace, Trial, TrialStatus};
use crate::metrics::{evaluate, write_roc_csv, EvalReport, RocPoint, DEFAULT_THRESHOLD};

/// Feature counts swept by the feature-selection experiment.
pub const K_GRID: [usize; 8] = [30, 40, 50, 55, 60, 65, 70, 103];
/// Majority-to-minority ratios of the imbalance study.
pub const MAJORITY_MULTIPLES: [usize; 4] = [1, 2, 3, 5];
pub const CLASS_ORDER: [&str; 2] = ["infeasible", "feasible"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    /// Zero validation or test shares are allowed; training must be non-empty.
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || !(self.train > 0.0) {
            return Err(Error::Config("split fractions must be non-negative with a positive train share".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: FeatureTable,
    pub val: FeatureTable,
    pub test: FeatureTable,
}

/// Shuffles each class with a seeded generator and cuts it at the rounded
/// fractions, so every split keeps the class ratio to within one sample.
pub fn split_dataset(table: &FeatureTable, fractions: &SplitFractions, seed: u64) -> Result<Splits> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..table.len()).filter(|&i| table.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let m = idx.len();
        let n_train = ((fractions.train * m as f64).round() as usize).min(m);
        let n_val = ((fractions.val * m as f64).round() as usize).min(m - n_train);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for p in &mut parts {
        p.shuffle(&mut rng);
    }
    Ok(Splits {
        train: table.subset(&parts[0]),
        val: table.subset(&parts[1]),
        test: table.subset(&parts[2]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dnn,
    Ensemble,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Accuracy,
    F10,
}

impl Objective {
    pub fn score(self, report: &EvalReport) -> Option<f64> {
        match self {
            Objective::Accuracy => report.accuracy,
            Objective::F10 => report.f10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SizeCurve,
    ImbalanceStudy,
    FeatureSelect,
    FinalEval,
}

/// Depth, width and batch-size ranges of the tuned network. The default is
/// sized for a single desk machine; `table()` is the full published range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceBounds {
    pub layers: [i64; 2],
    pub neurons: [i64; 2],
    pub batch: [i64; 2],
}

impl Default for SpaceBounds {
    fn default() -> Self {
        Self {
            layers: [1, 4],
            neurons: [16, 128],
            batch: [32, 256],
        }
    }
}

impl SpaceBounds {
    pub fn table() -> Self {
        Self {
            layers: [5, 10],
            neurons: [200, 500],
            batch: [200, 800],
        }
    }

    pub fn space(&self) -> Result<SearchSpace> {
        let s = dnn_space_with(
            self.layers[0],
            self.layers[1],
            self.neurons[0],
            self.neurons[1],
            self.batch[0],
            self.batch[1],
        );
        SearchSpace::new(s.dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub budget: usize,
    pub init: usize,
    pub batch: usize,
    pub restarts: usize,
    pub objective: Objective,
    pub space: SpaceBounds,
    pub n_candidates: usize,
    pub n_refine: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        let bo = BoOptions::default();
        Self {
            budget: bo.budget,
            init: bo.init,
            batch: bo.batch,
            restarts: 1,
            objective: Objective::Accuracy,
            space: SpaceBounds::default(),
            n_candidates: bo.n_candidates,
            n_refine: bo.n_refine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Nested training-set sizes of the size curve.
    pub sizes: Vec<usize>,
    /// Feasible training rows held fixed in the imbalance study.
    pub minority: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: vec![250, 500, 1000, 2000],
            minority: 200,
        }
    }
}

/// Everything a pipeline run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Keplerian catalog CSV; the built-in synthetic catalog when absent.
    pub catalog: Option<PathBuf>,
    pub generation: GenOptions,
    pub top_k: usize,
    pub dnn: DnnHyper,
    pub training: TrainingConfig,
    pub tuning: TuneConfig,
    pub ensemble: BaggingParams,
    pub knn_k: usize,
    pub adasyn: AdasynParams,
    pub split: SplitFractions,
    pub experiments: ExperimentConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            generation: GenOptions::default(),
            top_k: crate::features::DEFAULT_TOP_K,
            dnn: DnnHyper::default(),
            training: TrainingConfig::default(),
            tuning: TuneConfig::default(),
            ensemble: BaggingParams::default(),
            knn_k: 5,
            adasyn: AdasynParams::default(),
            split: SplitFractions::default(),
            experiments: ExperimentConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. A relative catalog path is taken relative to the
    /// config file and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(cat) = &cfg.catalog {
            if cat.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.catalog = Some(base.join(cat));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.generation.validate()?;
        if let Some(cat) = &self.catalog {
            if !cat.is_file() {
                return Err(Error::Config(format!("catalog {} not found", cat.display())));
            }
        }
        if self.top_k == 0 || self.top_k > crate::features::FEATURE_COUNT {
            return Err(Error::Config(format!(
                "top_k must be in 1..={}",
                crate::features::FEATURE_COUNT
            )));
        }
        if self.knn_k == 0 || self.ensemble.n_trees == 0 {
            return Err(Error::Config("knn_k and the tree count must be positive".into()));
        }
        let t = &self.tuning;
        if t.budget == 0 || t.init == 0 || t.batch == 0 || t.restarts == 0 {
            return Err(Error::Config("tuning budget, init, batch and restarts must be positive".into()));
        }
        self.tuning.space.space()?;
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(p) => read_catalog(p),
            None => Ok(default_synth_catalog()),
        }
    }

    pub fn bo_options(&self, restart: usize) -> BoOptions {
        BoOptions {
            budget: self.tuning.budget,
            init: self.tuning.init,
            batch: self.tuning.batch,
            seed: record_seed(self.seed, restart as u64),
            n_candidates: self.tuning.n_candidates,
            n_refine: self.tuning.n_refine,
        }
    }
}

/// A trained classifier of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Dnn { config: MlpConfig, layers: Vec<Layer> },
    Ensemble { model: EnsembleModel },
    Knn { model: KnnModel },
}

impl Classifier {
    pub fn from_network(net: Network) -> Self {
        Classifier::Dnn {
            config: net.config,
            layers: net.layers,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Dnn { .. } => ModelKind::Dnn,
            Classifier::Ensemble { .. } => ModelKind::Ensemble,
            Classifier::Knn { .. } => ModelKind::Knn,
        }
    }

    /// Feasible-class probability per row of already scaled features.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let probs = match self {
            Classifier::Dnn { config, layers } => Network {
                config: *config,
                layers: layers.clone(),
            }
            .predict_proba(x)?,
            Classifier::Ensemble { model } => predict_ensemble(model, x)?,
            Classifier::Knn { model } => predict_knn(model, x)?,
        };
        Ok(probs.iter().map(|p| p[1]).collect())
    }
}

/// On-disk model: the classifier, a reference to its scaler file (relative
/// to the model file) and the class order of the probability columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub classifier: Classifier,
    pub scaler_ref: String,
    pub class_order: Vec<String>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Writes `path` and its scaler next to it as `<stem>.scaler.json`.
pub fn save_model(path: &Path, classifier: &Classifier, scaler: &Scaler) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Input(format!("bad model path {}", path.display())))?;
    let scaler_name = format!("{stem}.scaler.json");
    let dir = path.parent().unwrap_or(Path::new(""));
    scaler.save(&dir.join(&scaler_name))?;
    let file = ModelFile {
        classifier: classifier.clone(),
        scaler_ref: scaler_name,
        class_order: CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&file, path)
}

/// A loaded model together with its scaler: raw features in, feasibility
/// probability out.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub model: ModelFile,
    pub scaler: Scaler,
}

impl Predictor {
    pub fn new(classifier: Classifier, scaler: Scaler) -> Self {
        Self {
            model: ModelFile {
                classifier,
                scaler_ref: String::new(),
                class_order: CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            },
            scaler,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ModelFile = read_json(path)?;
        if model.class_order != CLASS_ORDER {
            return Err(Error::Input(format!(
                "{}: unsupported class order {:?}",
                path.display(),
                model.class_order
            )));
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        let scaler = Scaler::load(&dir.join(&model.scaler_ref))?;
        Ok(Self { model, scaler })
    }

    /// Feature columns the model consumes, in order.
    pub fn feature_names(&self) -> &[String] {
        &self.scaler.names
    }

    /// Scores a table holding at least the model's columns.
    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let t = self.scaler.apply_table(&table.select_columns(&self.scaler.names)?)?;
        self.model.classifier.predict_proba(&t.rows)
    }

    /// Scores one row of the full feature vector.
    pub fn predict_full_row(&self, row: &[f64]) -> Result<f64> {
        let names = feature_names();
        if row.len() != names.len() {
            return Err(Error::Shape {
                expected: names.len(),
                got: row.len(),
            });
        }
        let picked = self
            .scaler
            .names
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|m| m == n)
                    .map(|j| row[j])
                    .ok_or_else(|| Error::Input(format!("unknown feature column {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let z = self.scaler.transform_row(&picked)?;
        Ok(self.model.classifier.predict_proba(&[z])?[0])
    }

    /// Full screening path for one transfer: Lambert search for the
    /// reference time of flight, ephemerides, features, scaler and model.
    pub fn predict_transfer(
        &self,
        catalog: &Catalog,
        body1_id: i64,
        body2_id: i64,
        epoch_mjd: f64,
        m0_kg: f64,
        tof_days: f64,
        grid_step_days: f64,
    ) -> Result<f64> {
        if !(m0_kg > 0.0 && tof_days > 0.0) {
            return Err(Error::Input("initial mass and time of flight must be positive".into()));
        }
        let (tof_ini, dv) =
            lambert_grid_search(catalog.get(body1_id)?, catalog.get(body2_id)?, epoch_mjd, grid_step_days)?;
        let scenario = TransferScenario {
            body1_id,
            body2_id,
            epoch_mjd,
            m0: m0_kg,
            tof_days,
            tof_ini_days: tof_ini,
            lambert_dv_kms: dv,
        };
        self.predict_full_row(&scenario_features(&scenario, catalog)?)
    }
}

/// Importance of every column of `train` from a bagged tree ensemble,
/// sorted by descending importance.
pub fn rank_features(train: &FeatureTable, bagging: &BaggingParams, seed: u64) -> Result<Vec<(String, f64)>> {
    let model = train_bagged(&train.rows, &train.labels, bagging, seed)?;
    let (importance, ranking) = ensemble_importance(&model, train.width());
    Ok(ranking
        .into_iter()
        .map(|j| (train.names[j].clone(), importance[j]))
        .collect())
}

pub fn write_ranking(ranking: &[(String, f64)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["rank", "feature", "importance"])?;
    for (i, (name, v)) in ranking.iter().enumerate() {
        w.write_record([(i + 1).to_string(), name.clone(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_ranking(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let name = rec
            .get(1)
            .ok_or_else(|| Error::Input(format!("{}: missing feature column", path.display())))?;
        out.push(name.to_string());
    }
    Ok(out)
}

/// Splits with the chosen columns, scaled by a scaler fit on train only.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub ranking: Vec<(String, f64)>,
    pub scaler: Scaler,
    pub train: FeatureTable,
    pub val: FeatureTable,
    pub test: FeatureTable,
}

/// Ranks features on `train` when fewer than all columns are kept, keeps
/// the top `k`, then fits the scaler on train.
pub fn prepare_splits(splits: &Splits, k: usize, bagging: &BaggingParams, seed: u64) -> Result<Prepared> {
    let ranking = if k < splits.train.width() {
        rank_features(&splits.train, bagging, seed)?
    } else {
        splits.train.names.iter().map(|n| (n.clone(), f64::NAN)).collect()
    };
    let names: Vec<String> = ranking.iter().map(|(n, _)| n.clone()).collect();
    prepare_with_ranking(splits, &names, k).map(|mut p| {
        p.ranking = ranking;
        p
    })
}

pub fn prepare_with_ranking(splits: &Splits, ranking: &[String], k: usize) -> Result<Prepared> {
    let keep = |t: &FeatureTable| -> Result<FeatureTable> {
        if ranking.len() == t.width() {
            select_top_k(t, ranking, k)
        } else {
            t.select_columns(&ranking[..k.min(ranking.len())])
        }
    };
    let train = keep(&splits.train)?;
    let scaler = Scaler::fit_table(&train)?;
    let scale = |t: &FeatureTable| -> Result<FeatureTable> {
        let t = keep(t)?;
        if t.is_empty() {
            Ok(t)
        } else {
            scaler.apply_table(&t)
        }
    };
    Ok(Prepared {
        ranking: ranking.iter().map(|n| (n.clone(), f64::NAN)).collect(),
        train: scaler.apply_table(&train)?,
        val: scale(&splits.val)?,
        test: scale(&splits.test)?,
        scaler,
    })
}

pub fn train_dnn(
    train_t: &FeatureTable,
    val: &FeatureTable,
    hyper: &DnnHyper,
    training: &TrainingConfig,
    seed: u64,
) -> Result<(Network, TrainHistory)> {
    train(
        &train_t.rows,
        &train_t.labels,
        &val.rows,
        &val.labels,
        hyper.mlp(train_t.width()),
        &hyper.schedule(training.max_epochs, training.patience, seed),
        &hyper.adam,
    )
}

/// Trains one classifier on scaled rows; `val` only drives DNN early stopping.
pub fn fit_classifier(
    kind: ModelKind,
    train_t: &FeatureTable,
    val: &FeatureTable,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Classifier> {
    Ok(match kind {
        ModelKind::Dnn => Classifier::from_network(train_dnn(train_t, val, &cfg.dnn, &cfg.training, seed)?.0),
        ModelKind::Ensemble => Classifier::Ensemble {
            model: train_bagged(&train_t.rows, &train_t.labels, &cfg.ensemble, seed)?,
        },
        ModelKind::Knn => Classifier::Knn {
            model: train_knn(&train_t.rows, &train_t.labels, cfg.knn_k)?,
        },
    })
}

pub fn evaluate_on(classifier: &Classifier, table: &FeatureTable) -> Result<(EvalReport, Vec<RocPoint>)> {
    if table.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty table".into()));
    }
    let p = classifier.predict_proba(&table.rows)?;
    evaluate(&p, &table.labels, DEFAULT_THRESHOLD)
}

/// Accuracy of always predicting the larger class.
pub fn majority_baseline(table: &FeatureTable) -> f64 {
    let c = table.class_counts();
    c[0].max(c[1]) as f64 / table.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub hyper: DnnHyper,
    pub objective: f64,
    pub network: Network,
    pub history: Vec<Trial>,
}

/// Bayesian search over the DNN space scored on `val`, repeated
/// `restarts` times with fresh seeds. The winning configuration is retrained
/// with the training seed used during the search.
pub fn tune_dnn(train_t: &FeatureTable, val: &FeatureTable, cfg: &PipelineConfig) -> Result<TuneOutcome> {
    if val.is_empty() {
        return Err(Error::Config("tuning needs a non-empty validation split".into()));
    }
    let space = cfg.tuning.space.space()?;
    let objective = |c: &crate::hyperopt::Config| -> Result<f64> {
        let hyper = DnnHyper::from_config(&space, c)?;
        let (net, _) = train_dnn(train_t, val, &hyper, &cfg.training, cfg.seed)?;
        let (report, _) = evaluate_on(&Classifier::from_network(net), val)?;
        cfg.tuning
            .objective
            .score(&report)
            .ok_or_else(|| Error::NumericalFailure {
                context: "tuning objective",
                residual: f64::NAN,
            })
    };
    let mut history: Vec<Trial> = Vec::new();
    let mut best: Option<Trial> = None;
    for r in 0..cfg.tuning.restarts {
        let result = bo_run(&objective, &space, &cfg.bo_options(r))?;
        let offset = history.len();
        history.extend(result.history.into_iter().map(|mut t| {
            t.index += offset;
            t
        }));
        if best.as_ref().is_none_or(|b| result.best.objective > b.objective) {
            best = Some(result.best);
        }
    }
    let best = best
        .filter(|b| b.status == TrialStatus::Completed)
        .ok_or_else(|| Error::Experiment("every tuning trial failed".into()))?;
    let hyper = DnnHyper::from_config(&space, &best.point)?;
    let (network, _) = train_dnn(train_t, val, &hyper, &cfg.training, cfg.seed)?;
    Ok(TuneOutcome {
        hyper,
        objective: best.objective,
        network,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub model: ModelKind,
    pub size: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub multiple: usize,
    pub adasyn: bool,
    pub n_train: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectRow {
    pub k: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub hyper: DnnHyper,
    pub tuned_objective: f64,
    pub majority_baseline: f64,
    pub dnn_val: EvalReport,
    pub dnn_test: Option<EvalReport>,
    pub ensemble_val: EvalReport,
    pub ensemble_test: Option<EvalReport>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
    #[serde(skip)]
    pub trials: Vec<Trial>,
    #[serde(skip)]
    pub predictor: Option<Predictor>,
}

fn shortfall(what: &str, need: usize, have: usize) -> Error {
    Error::Experiment(format!("{what} needs {need} rows but only {have} are available"))
}

/// Accuracy on the test split of every model kind trained on nested
/// prefixes of the training split.
pub fn size_curve(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Vec<SizeRow>> {
    let splits = split_dataset(table, &cfg.split, cfg.seed)?;
    let mut sizes = cfg.experiments.sizes.clone();
    sizes.sort_unstable();
    if let Some(&largest) = sizes.last() {
        if largest > splits.train.len() {
            return Err(shortfall("size-curve subset", largest, splits.train.len()));
        }
    }
    let ranking = if cfg.top_k < splits.train.width() {
        rank_features(&splits.train, &cfg.ensemble, cfg.seed)?
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    } else {
        splits.train.names.clone()
    };
    let eval_split = if splits.test.is_empty() { &splits.val } else { &splits.test };
    let mut rows = Vec::new();
    for &size in &sizes {
        let idx: Vec<usize> = (0..size).collect();
        let sub = Splits {
            train: splits.train.subset(&idx),
            val: splits.val.clone(),
            test: eval_split.clone(),
        };
        if sub.train.class_counts().contains(&0) {
            return Err(Error::Experiment(format!("size-curve subset of {size} rows holds one class only")));
        }
        let p = prepare_with_ranking(&sub, &ranking, cfg.top_k)?;
        for kind in [ModelKind::Dnn, ModelKind::Ensemble, ModelKind::Knn] {
            if kind == ModelKind::Knn && cfg.knn_k > size {
                continue;
            }
            let clf = fit_classifier(kind, &p.train, &p.val, cfg, cfg.seed)?;
            let (report, _) = evaluate_on(&clf, &p.test)?;
            rows.push(SizeRow {
                model: kind,
                size,
                accuracy: report.accuracy,
                auc: report.auc,
            });
        }
    }
    Ok(rows)
}

/// DNN recall and precision on the test split when the feasible class is
/// held at `experiments.minority` training rows and the infeasible class
/// is 1, 2, 3 and 5 times larger, with and without ADASYN.
pub fn imbalance_study(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Vec<ImbalanceRow>> {
    let splits = split_dataset(table, &cfg.split, cfg.seed)?;
    let m = cfg.experiments.minority;
    let biggest = MAJORITY_MULTIPLES[MAJORITY_MULTIPLES.len() - 1];
    let pos: Vec<usize> = (0..splits.train.len()).filter(|&i| splits.train.labels[i] == 1).collect();
    let neg: Vec<usize> = (0..splits.train.len()).filter(|&i| splits.train.labels[i] == 0).collect();
    if pos.len() < m {
        return Err(shortfall("imbalance-study minority", m, pos.len()));
    }
    if neg.len() < biggest * m {
        return Err(shortfall("imbalance-study majority", biggest * m, neg.len()));
    }
    let ranking: Vec<String> = if cfg.top_k < splits.train.width() {
        rank_features(&splits.train, &cfg.ensemble, cfg.seed)?
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    } else {
        splits.train.names.clone()
    };
    let eval_split = if splits.test.is_empty() { &splits.val } else { &splits.test };
    let mut rows = Vec::new();
    for &mult in &MAJORITY_MULTIPLES {
        let mut idx: Vec<usize> = pos[..m].to_vec();
        idx.extend_from_slice(&neg[..mult * m]);
        let sub = Splits {
            train: splits.train.subset(&idx),
            val: splits.val.clone(),
            test: eval_split.clone(),
        };
        let p = prepare_with_ranking(&sub, &ranking, cfg.top_k)?;
        for augmented in [false, true] {
            let train_t = if augmented && mult > 1 {
                let a = adasyn(&p.train.rows, &p.train.labels, &cfg.adasyn)?;
                FeatureTable::new(p.train.names.clone(), a.x, a.y)?
            } else {
                p.train.clone()
            };
            let clf = fit_classifier(ModelKind::Dnn, &train_t, &p.val, cfg, cfg.seed)?;
            let (report, _) = evaluate_on(&clf, &p.test)?;
            rows.push(ImbalanceRow {
                multiple: mult,
                adasyn: augmented,
                n_train: train_t.len(),
                accuracy: report.accuracy,
                precision: report.precision,
                recall: report.recall,
                f10: report.f10,
            });
        }
    }
    Ok(rows)
}

/// Test metrics of the configured DNN trained on the top-k ensemble-ranked
/// features for every k of the grid.
pub fn feature_select(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Vec<FeatureSelectRow>> {
    let splits = split_dataset(table, &cfg.split, cfg.seed)?;
    if splits.train.width() < K_GRID[K_GRID.len() - 1] {
        return Err(Error::Experiment(format!(
            "feature-select needs {} feature columns, table has {}",
            K_GRID[K_GRID.len() - 1],
            splits.train.width()
        )));
    }
    let ranking: Vec<String> = rank_features(&splits.train, &cfg.ensemble, cfg.seed)?
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let eval_split = if splits.test.is_empty() { splits.val.clone() } else { splits.test.clone() };
    let sub = Splits {
        test: eval_split,
        ..splits
    };
    K_GRID
        .iter()
        .map(|&k| {
            let p = prepare_with_ranking(&sub, &ranking, k)?;
            let clf = fit_classifier(ModelKind::Dnn, &p.train, &p.val, cfg, cfg.seed)?;
            let (r, _) = evaluate_on(&clf, &p.test)?;
            Ok(FeatureSelectRow {
                k,
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                auc: r.auc,
            })
        })
        .collect()
}

/// Tunes the DNN on the validation split, retrains the winner, and scores
/// it and the tree ensemble on validation and test.
pub fn final_eval(table: &FeatureTable, cfg: &PipelineConfig) -> Result<FinalEval> {
    let splits = split_dataset(table, &cfg.split, cfg.seed)?;
    let p = prepare_splits(&splits, cfg.top_k, &cfg.ensemble, cfg.seed)?;
    let tuned = tune_dnn(&p.train, &p.val, cfg)?;
    let dnn = Classifier::from_network(tuned.network);
    let ens = fit_classifier(ModelKind::Ensemble, &p.train, &p.val, cfg, cfg.seed)?;
    let (dnn_val, val_roc) = evaluate_on(&dnn, &p.val)?;
    let (ensemble_val, _) = evaluate_on(&ens, &p.val)?;
    let (dnn_test, roc) = if p.test.is_empty() {
        (None, val_roc)
    } else {
        let (r, roc) = evaluate_on(&dnn, &p.test)?;
        (Some(r), roc)
    };
    let ensemble_test = if p.test.is_empty() {
        None
    } else {
        Some(evaluate_on(&ens, &p.test)?.0)
    };
    Ok(FinalEval {
        hyper: tuned.hyper,
        tuned_objective: tuned.objective,
        majority_baseline: majority_baseline(&p.val),
        dnn_val,
        dnn_test,
        ensemble_val,
        ensemble_test,
        roc,
        trials: tuned.history,
        predictor: Some(Predictor::new(dnn, p.scaler)),
    })
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a, T: Serialize> {
    experiment: ExperimentKind,
    seed: u64,
    config: &'a PipelineConfig,
    n_rows: usize,
    class_counts: [usize; 2],
    results: T,
}

/// Runs one experiment and writes its outputs into `out_dir`. Every run
/// leaves a `report.json` holding the resolved config and seed; the
/// returned paths list all files written.
pub fn run_experiment(
    table: &FeatureTable,
    cfg: &PipelineConfig,
    kind: ExperimentKind,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report_path = out_dir.join("report.json");
    let report = |results: serde_json::Value| RunReport {
        experiment: kind,
        seed: cfg.seed,
        config: cfg,
        n_rows: table.len(),
        class_counts: table.class_counts(),
        results,
    };
    let mut files = vec![report_path.clone()];
    match kind {
        ExperimentKind::SizeCurve => {
            let rows = size_curve(table, cfg)?;
            let csv_path = out_dir.join("size_curve.csv");
            write_rows(&rows, &csv_path)?;
            write_json(&report(serde_json::to_value(&rows)?), &report_path)?;
            files.push(csv_path);
        }
        ExperimentKind::ImbalanceStudy => {
            let rows = imbalance_study(table, cfg)?;
            let csv_path = out_dir.join("imbalance.csv");
            write_rows(&rows, &csv_path)?;
            write_json(&report(serde_json::to_value(&rows)?), &report_path)?;
            files.push(csv_path);
        }
        ExperimentKind::FeatureSelect => {
            let rows = feature_select(table, cfg)?;
            let csv_path = out_dir.join("feature_select.csv");
            write_rows(&rows, &csv_path)?;
            write_json(&report(serde_json::to_value(&rows)?), &report_path)?;
            files.push(csv_path);
        }
        ExperimentKind::FinalEval => {
            let fe = final_eval(table, cfg)?;
            let roc_path = out_dir.join("roc.csv");
            let trials_path = out_dir.join("trials.json");
            let model_path = out_dir.join("model.json");
            write_roc_csv(&fe.roc, &roc_path)?;
            write_json(&fe.trials, &trials_path)?;
            if let Some(pred) = &fe.predictor {
                save_model(&model_path, &pred.model.classifier, &pred.scaler)?;
                files.push(model_path);
                files.push(out_dir.join("model.scaler.json"));
            }
            write_json(&report(serde_json::to_value(&fe)?), &report_path)?;
            files.push(roc_path);
            files.push(trials_path);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, width: usize, pos_frac: f64, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let c = usize::from(rng.random::<f64>() < pos_frac);
            let row: Vec<f64> = (0..width)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if j < 3 {
                        z + if c == 1 { 1.2 } else { -1.2 }
                    } else {
                        z * (1.0 + j as f64)
                    }
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
        let names = (0..width).map(|j| format!("f{j}")).collect();
        FeatureTable::new(names, rows, labels).unwrap()
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            top_k: 4,
            ensemble: BaggingParams {
                n_trees: 8,
                ..Default::default()
            },
            training: TrainingConfig {
                max_epochs: 10,
                patience: 3,
            },
            tuning: TuneConfig {
                budget: 4,
                init: 3,
                n_candidates: 200,
                n_refine: 2,
                space: SpaceBounds {
                    layers: [1, 2],
                    neurons: [4, 16],
                    batch: [16, 64],
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn everything_in_train_for_unit_fraction() {
        let t = blobs(50, 3, 0.3, 1);
        let s = split_dataset(&t, &SplitFractions { train: 1.0, val: 0.0, test: 0.0 }, 3).unwrap();
        assert_eq!(s.train.len(), 50);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn bad_fractions_rejected() {
        for f in [(0.5, 0.5, 0.5), (0.0, 0.5, 0.5), (1.2, -0.1, -0.1)] {
            let fr = SplitFractions { train: f.0, val: f.1, test: f.2 };
            assert!(matches!(fr.validate(), Err(Error::Config(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn split_is_stratified_partition(n in 20usize..300, frac in 0.05f64..0.95, seed in 0u64..50) {
            let t = blobs(n, 2, frac, seed);
            let fr = SplitFractions::default();
            let s = split_dataset(&t, &fr, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            let global = t.class_counts()[1] as f64 / n as f64;
            for (part, f) in [(&s.train, fr.train), (&s.val, fr.val), (&s.test, fr.test)] {
                let expect = global * f * n as f64;
                prop_assert!((part.class_counts()[1] as f64 - expect).abs() <= 1.0);
            }
            // same seed, same split
            prop_assert_eq!(&s, &split_dataset(&t, &fr, seed).unwrap());
            // every row lands exactly once
            let mut all: Vec<Vec<u64>> = [&s.train, &s.val, &s.test]
                .iter()
                .flat_map(|p| p.rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()))
                .collect();
            let mut orig: Vec<Vec<u64>> = t.rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }

    #[test]
    fn model_file_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let t = blobs(200, 5, 0.5, 2);
        let cfg = small_cfg();
        let s = split_dataset(&t, &cfg.split, 0).unwrap();
        let p = prepare_splits(&s, 5, &cfg.ensemble, 0).unwrap();
        for kind in [ModelKind::Dnn, ModelKind::Ensemble, ModelKind::Knn] {
            let clf = fit_classifier(kind, &p.train, &p.val, &cfg, 1).unwrap();
            let path = dir.path().join(format!("{kind:?}.json"));
            save_model(&path, &clf, &p.scaler).unwrap();
            let loaded = Predictor::load(&path).unwrap();
            assert_eq!(loaded.model.classifier, clf);
            let direct = clf.predict_proba(&p.test.rows).unwrap();
            let raw_test = s.test.select_columns(&p.scaler.names).unwrap();
            let via = loaded.predict_table(&raw_test).unwrap();
            for (a, b) in direct.iter().zip(&via) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("Dnn.json")).unwrap()).unwrap();
        assert_eq!(v["kind"], "dnn");
        assert!(v["layers"][0]["W"].is_array());
        assert_eq!(v["scaler_ref"], "Dnn.scaler.json");
        assert_eq!(v["class_order"][1], "feasible");
        assert!(v["config"]["n_layers"].is_u64());
    }

    #[test]
    fn missing_scaler_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let t = blobs(60, 3, 0.5, 3);
        let scaler = Scaler::fit_table(&t).unwrap();
        let clf = Classifier::Knn {
            model: train_knn(&t.rows, &t.labels, 3).unwrap(),
        };
        let path = dir.path().join("m.json");
        save_model(&path, &clf, &scaler).unwrap();
        fs::remove_file(dir.path().join("m.scaler.json")).unwrap();
        assert!(matches!(Predictor::load(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn config_defaults_and_path_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, r#"{"seed": 9, "catalog": "cat.csv"}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&cfg_path), Err(Error::Config(_))));
        crate::astro::write_catalog(&crate::astro::synth_catalog(4, 1, &Default::default()), &dir.path().join("cat.csv"))
            .unwrap();
        let cfg = PipelineConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.split, SplitFractions::default());
        assert_eq!(cfg.top_k, 60);
        assert_eq!(cfg.load_catalog().unwrap().len(), 4);
        fs::write(&cfg_path, r#"{"split": {"train": 0.5, "val": 0.1, "test": 0.1}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&cfg_path), Err(Error::Config(_))));
    }

    #[test]
    fn feature_select_emits_grid_rows() {
        let t = blobs(300, 103, 0.5, 4);
        let mut cfg = small_cfg();
        cfg.dnn.n_neuron = 8;
        let rows = feature_select(&t, &cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), K_GRID.to_vec());
        let narrow = blobs(100, 20, 0.5, 4);
        assert!(matches!(feature_select(&narrow, &cfg), Err(Error::Experiment(_))));
    }

    #[test]
    fn shortfall_names_the_subset() {
        let t = blobs(200, 5, 0.5, 5);
        let mut cfg = small_cfg();
        cfg.experiments.sizes = vec![50, 1000];
        match size_curve(&t, &cfg) {
            Err(Error::Experiment(msg)) => assert!(msg.contains("1000"), "{msg}"),
            other => panic!("{other:?}"),
        }
        cfg.experiments.minority = 40;
        match imbalance_study(&t, &cfg) {
            Err(Error::Experiment(msg)) => assert!(msg.contains("200"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn size_curve_rows_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let t = blobs(400, 6, 0.5, 6);
        let mut cfg = small_cfg();
        cfg.experiments.sizes = vec![40, 200];
        let files = run_experiment(&t, &cfg, ExperimentKind::SizeCurve, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let text = fs::read_to_string(dir.path().join("size_curve.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report["seed"], 0);
        assert_eq!(report["config"]["top_k"], 4);
        assert_eq!(report["experiment"], "size-curve");
    }

    #[test]
    fn final_eval_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let t = blobs(300, 6, 0.5, 7);
        let cfg = small_cfg();
        let files = run_experiment(&t, &cfg, ExperimentKind::FinalEval, dir.path()).unwrap();
        for f in &files {
            assert!(f.is_file(), "{}", f.display());
        }
        let trials: Vec<Trial> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("trials.json")).unwrap()).unwrap();
        assert_eq!(trials.len(), 4);
        let pred = Predictor::load(&dir.path().join("model.json")).unwrap();
        assert_eq!(pred.feature_names().len(), 4);
    }

    #[test]
    fn tune_is_deterministic() {
        let t = blobs(200, 4, 0.5, 8);
        let cfg = small_cfg();
        let s = split_dataset(&t, &cfg.split, 0).unwrap();
        let p = prepare_splits(&s, 4, &cfg.ensemble, 0).unwrap();
        let a = tune_dnn(&p.train, &p.val, &cfg).unwrap();
        let b = tune_dnn(&p.train, &p.val, &cfg).unwrap();
        assert_eq!(a.hyper, b.hyper);
        assert_eq!(a.network, b.network);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn transfer_prediction_runs_full_path() {
        let cat = crate::astro::synth_catalog(10, 2, &Default::default());
        let names = feature_names();
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| (0..names.len()).map(|j| (i * j) as f64 % 7.0).collect())
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let t = FeatureTable::new(names.clone(), rows, labels).unwrap();
        let keep: Vec<String> = names[..10].to_vec();
        let sub = t.select_columns(&keep).unwrap();
        let scaler = Scaler::fit_table(&sub).unwrap();
        let z = scaler.apply_table(&sub).unwrap();
        let clf = Classifier::Knn {
            model: train_knn(&z.rows, &z.labels, 3).unwrap(),
        };
        let pred = Predictor::new(clf, scaler);
        let p = pred.predict_transfer(&cat, 1, 2, 59000.0, 1500.0, 600.0, 10.0).unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(matches!(
            pred.predict_transfer(&cat, 1, 99, 59000.0, 1500.0, 600.0, 10.0),
            Err(Error::CatalogMiss(99))
        ));
    }
}
