//! `ltfeas`: dataset generation, feature building, training, tuning,
//! evaluation and screening of low-thrust transfers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ltfeas::astro::{synth_catalog, write_catalog, SynthOptions};
use ltfeas::augment::adasyn_table;
use ltfeas::datagen::{generate_dataset, read_dataset};
use ltfeas::features::{build_feature_table, FeatureTable};
use ltfeas::hyperopt::write_trials;
use ltfeas::metrics::{evaluate, write_roc_csv, DEFAULT_THRESHOLD};
use ltfeas::pipeline::{
    fit_classifier, evaluate_on, prepare_splits, prepare_with_ranking, rank_features, read_ranking,
    run_experiment, save_model, split_dataset, tune_dnn, write_json, write_ranking, Classifier,
    ExperimentKind, ModelKind, Objective, PipelineConfig, Predictor,
};
use ltfeas::{Error, Result};

#[derive(Parser)]
#[command(name = "ltfeas", version, about = "Low-thrust transfer feasibility pipeline")]
struct Cli {
    /// JSON pipeline configuration; flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (never changes results)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Keplerian catalog CSV (default: built-in synthetic catalog)
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog utilities
    Catalog {
        #[command(subcommand)]
        action: CatalogCmd,
    },
    /// Sample and label transfers into a JSON-lines dataset
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the 103-column feature table of a dataset
    Features {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank features by tree-ensemble importance on the training split
    Importance {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trees: Option<usize>,
    },
    /// ADASYN oversampling of the minority class
    Augment {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and save it with its scaler
    Train(TrainArgs),
    /// Bayesian hyperparameter search for the DNN
    Tune(TuneArgs),
    /// Score a saved model on a feature table
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// ROC points CSV (default: roc.csv next to the report)
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Feasibility probability of a single transfer
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        body1: i64,
        #[arg(long)]
        body2: i64,
        /// Departure epoch, MJD
        #[arg(long)]
        epoch: f64,
        /// Initial mass, kg
        #[arg(long)]
        m0: f64,
        /// Time of flight, days
        #[arg(long)]
        tof: f64,
    },
    /// Run one of the experiment sequences
    Experiment {
        #[arg(long, value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Write a synthetic main-belt-like catalog
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Dnn)]
    model: ModelKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    /// Ranking CSV from `importance`; computed on the training split if absent
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Also write the raw held-out test split here
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Dnn)]
    model: ModelKind,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Trials JSON
    #[arg(long)]
    out: PathBuf,
    /// Also save the retrained best model here
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(c) = &cli.catalog {
        cfg.catalog = Some(c.clone());
    }
    match &cli.command {
        Command::Train(a) => {
            if let Some(k) = a.top_k {
                cfg.top_k = k;
            }
        }
        Command::Tune(a) => {
            let t = &mut cfg.tuning;
            t.budget = a.budget.unwrap_or(t.budget);
            t.batch = a.batch.unwrap_or(t.batch);
            t.objective = a.objective.unwrap_or(t.objective);
            t.restarts = a.restarts.unwrap_or(t.restarts);
            if let Some(k) = a.top_k {
                cfg.top_k = k;
            }
        }
        Command::Importance { trees: Some(n), .. } => cfg.ensemble.n_trees = *n,
        Command::Augment { k, beta, .. } => {
            cfg.adasyn.k = k.unwrap_or(cfg.adasyn.k);
            cfg.adasyn.beta = beta.unwrap_or(cfg.adasyn.beta);
        }
        _ => {}
    }
    cfg.adasyn.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    // A second global pool is only refused when one already exists.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build_global();

    match cli.command {
        Command::Catalog {
            action: CatalogCmd::Synth { n, out },
        } => {
            if n < 2 {
                return Err(Error::Config("a catalog needs at least two bodies".into()));
            }
            write_catalog(&synth_catalog(n, cfg.seed, &SynthOptions::default()), &out)?;
            print_json(&json!({ "bodies": n, "seed": cfg.seed, "out": out }));
        }
        Command::Gen { n, out } => {
            let catalog = cfg.load_catalog()?;
            let summary = generate_dataset(&catalog, n, cfg.workers, cfg.seed, &out, &cfg.generation)?;
            print_json(&json!({ "n": n, "seed": cfg.seed, "summary": summary, "out": out }));
        }
        Command::Features { dataset, out } => {
            let catalog = cfg.load_catalog()?;
            let table = build_feature_table(&read_dataset(&dataset)?, &catalog)?;
            table.write_csv(&out)?;
            print_json(&json!({ "rows": table.len(), "columns": table.width(), "out": out }));
        }
        Command::Importance { features, out, .. } => {
            let table = FeatureTable::read_csv(&features)?;
            let splits = split_dataset(&table, &cfg.split, cfg.seed)?;
            let ranking = rank_features(&splits.train, &cfg.ensemble, cfg.seed)?;
            write_ranking(&ranking, &out)?;
            let top: Vec<&str> = ranking.iter().take(10).map(|(n, _)| n.as_str()).collect();
            print_json(&json!({ "train_rows": splits.train.len(), "top10": top, "out": out }));
        }
        Command::Augment { features, out, .. } => {
            let table = FeatureTable::read_csv(&features)?;
            let aug = adasyn_table(&table, &cfg.adasyn)?;
            aug.write_csv(&out)?;
            print_json(&json!({
                "before": table.class_counts(),
                "after": aug.class_counts(),
                "synthetic": aug.len() - table.len(),
                "out": out,
            }));
        }
        Command::Train(a) => {
            let table = FeatureTable::read_csv(&a.features)?;
            let splits = split_dataset(&table, &cfg.split, cfg.seed)?;
            let prepared = match &a.ranking {
                Some(p) => prepare_with_ranking(&splits, &read_ranking(p)?, cfg.top_k)?,
                None => prepare_splits(&splits, cfg.top_k, &cfg.ensemble, cfg.seed)?,
            };
            let clf = fit_classifier(a.model, &prepared.train, &prepared.val, &cfg, cfg.seed)?;
            save_model(&a.out, &clf, &prepared.scaler)?;
            if let Some(p) = &a.test_out {
                splits.test.write_csv(p)?;
            }
            let val = if prepared.val.is_empty() {
                None
            } else {
                Some(evaluate_on(&clf, &prepared.val)?.0)
            };
            print_json(&json!({ "model": a.model, "validation": val, "seed": cfg.seed, "out": a.out }));
        }
        Command::Tune(a) => {
            if a.model != ModelKind::Dnn {
                return Err(Error::Config("only the dnn model is tuned".into()));
            }
            let table = FeatureTable::read_csv(&a.features)?;
            let splits = split_dataset(&table, &cfg.split, cfg.seed)?;
            let prepared = prepare_splits(&splits, cfg.top_k, &cfg.ensemble, cfg.seed)?;
            let outcome = tune_dnn(&prepared.train, &prepared.val, &cfg)?;
            write_trials(&outcome.history, &a.out)?;
            if let Some(p) = &a.model_out {
                save_model(p, &Classifier::from_network(outcome.network), &prepared.scaler)?;
            }
            print_json(&json!({
                "best": outcome.hyper,
                "objective": outcome.objective,
                "trials": outcome.history.len(),
                "config": cfg,
            }));
        }
        Command::Eval {
            model,
            features,
            out,
            roc,
            threshold,
        } => {
            let predictor = Predictor::load(&model)?;
            let table = FeatureTable::read_csv(&features)?;
            let p = predictor.predict_table(&table)?;
            let (report, points) = evaluate(&p, &table.labels, threshold)?;
            write_json(&report, &out)?;
            let roc_path = roc.unwrap_or_else(|| sibling(&out, "roc.csv"));
            write_roc_csv(&points, &roc_path)?;
            print_json(&serde_json::to_value(&report)?);
        }
        Command::Predict {
            model,
            body1,
            body2,
            epoch,
            m0,
            tof,
        } => {
            let predictor = Predictor::load(&model)?;
            let catalog = cfg.load_catalog()?;
            let p = predictor.predict_transfer(
                &catalog,
                body1,
                body2,
                epoch,
                m0,
                tof,
                cfg.generation.grid_step_days,
            )?;
            print_json(&json!({
                "p_feasible": p,
                "feasible": p >= DEFAULT_THRESHOLD,
            }));
        }
        Command::Experiment { kind, features, out } => {
            let table = FeatureTable::read_csv(&features)?;
            let files = run_experiment(&table, &cfg, kind, &out)?;
            print_json(&json!({ "experiment": kind, "files": files }));
        }
    }
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
