//! `rulekit` command-line front end.
//!
//! Every subcommand starts from the TOML experiment config given by
//! `--config` (or the built-in defaults) and applies its flags on top.
//! Failures exit with the stage code: 2 config, 3 data, 4 mining,
//! 5 scoring, 6 training, 7 evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rulekit_core::augment::augment_pipeline;
use rulekit_core::eval::{evaluate, DEFAULT_HITS};
use rulekit_core::metrics::{filter_scored, score_rules, write_scored_rules};
use rulekit_core::pipeline::{
    ablation_matrix, ablation_tsv, cap_rules_per_relation, run_pipeline, AblationRow, AtStage, ExperimentConfig,
    ModelScorer, PipelineError, PipelineResult, Stage,
};
use rulekit_core::predictor::{train_predictor_with_report, CountTransform, PredictorParams, RuleScorer};
use rulekit_core::rotate::{train_rotate_with_report, DatasetPreset, RotateParams};
use rulekit_core::rule::{read_rules, write_rules};
use rulekit_core::synthetic::{SyntheticBenchmark, SyntheticConfig};
use rulekit_core::walk::mine_rules;
use rulekit_core::{Error, KnowledgeGraph, RuleSet};

#[derive(Parser, Debug)]
#[command(
    name = "rulekit",
    version,
    about = "Chain-rule mining, augmentation and rule-based link prediction"
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Shared {
    /// Dataset directory with train.txt, valid.txt and test.txt.
    #[arg(long, global = true)]
    kg: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML experiment config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct WalkFlags {
    /// Random walks per entity and length.
    #[arg(long)]
    walks: Option<usize>,
    /// Comma-separated walk lengths.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    /// PCA threshold for mined and filtered rules.
    #[arg(long)]
    min_pca: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Dataset preset for the batch size (wn18rr, fb15k237, umls, kinship).
    #[arg(long)]
    preset: Option<String>,
    /// Use raw grounding counts instead of log1p.
    #[arg(long)]
    raw_counts: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine chain rules by random walks; `--out` is a rules file.
    Mine {
        #[command(flatten)]
        walk: WalkFlags,
    },
    /// Augment a rule file; `--out` is a rules file. Without stage flags the
    /// config's stage toggles apply (all stages by default).
    Augment {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        abduce: bool,
        #[arg(long)]
        invert: bool,
        #[arg(long)]
        mine: bool,
        #[arg(long)]
        filter: bool,
        #[command(flatten)]
        walk: WalkFlags,
    },
    /// Write the scored-rules TSV for a rule file; `--out` is the TSV path.
    Score {
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Keep rules with PCA at or above the threshold; `--out` is a rules file.
    Filter {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        min_pca: Option<f64>,
        /// Keep at most this many rules per head relation (highest PCA first).
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Train the rule predictor; `--out` is a directory.
    Train {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train RotatE; `--out` is a directory.
    TrainRotate {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        negatives: Option<usize>,
        /// Dataset preset for dimension and batch size (wn18rr, fb15k237, umls, kinship).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Evaluate a predictor and/or RotatE checkpoint on the test split.
    Eval {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        rotate: Option<PathBuf>,
        /// Weight of the RotatE score in the ensemble.
        #[arg(long)]
        eta: Option<f64>,
        /// Dataset preset for eta (wn18rr, fb15k237, umls, kinship).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Leave-one-out augmentation table; `--out` is a directory.
    Ablate {
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Comma-separated rows (baseline, AUG, AUG-ABD, AUG-INV, AUG-FIL, AUG-RW).
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<String>>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write the seed-fixed synthetic benchmark and its experiment.toml
    /// into the `--out` directory.
    Synth {
        #[arg(long)]
        entities: Option<usize>,
    },
    /// Run the configured stages end to end; `--out` is a directory.
    Pipeline {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        cap: Option<usize>,
    },
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError {
        stage: Stage::Config,
        error: Error::Config(msg.into()),
    }
}

fn base_config(shared: &Shared) -> PipelineResult<ExperimentConfig> {
    let mut cfg = match &shared.config {
        Some(p) => ExperimentConfig::load(p).at(Stage::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(kg) = &shared.kg {
        cfg.data.dir = Some(kg.clone());
        cfg.data.train = None;
        cfg.data.valid = None;
        cfg.data.test = None;
    }
    if let Some(out) = &shared.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    Ok(cfg.seeded())
}

fn apply_walk(cfg: &mut ExperimentConfig, w: &WalkFlags) {
    if let Some(n) = w.walks {
        cfg.walk.walks_per_entity = n;
    }
    if let Some(l) = &w.lengths {
        cfg.walk.lengths = l.clone();
    }
    if let Some(t) = w.min_pca {
        cfg.walk.pca_threshold = t;
        cfg.filter.pca_threshold = t;
    }
}

fn apply_train(cfg: &mut ExperimentConfig, t: &TrainFlags) -> PipelineResult<()> {
    let c = &mut cfg.train;
    if let Some(p) = &t.preset {
        c.batch_size = p.parse::<DatasetPreset>().at(Stage::Config)?.batch_size();
    }
    if let Some(v) = t.epochs {
        c.epochs = v;
    }
    if let Some(v) = t.lr {
        c.learning_rate = v;
    }
    if let Some(v) = t.dim {
        c.dim = v;
    }
    if let Some(v) = t.hidden {
        c.hidden = v;
    }
    if let Some(v) = t.batch_size {
        c.batch_size = v;
    }
    if t.raw_counts {
        c.count_transform = CountTransform::Raw;
    }
    Ok(())
}

fn load_kg(cfg: &ExperimentConfig) -> PipelineResult<KnowledgeGraph> {
    let files = cfg.data.split_files().at(Stage::Config)?;
    KnowledgeGraph::load_files(&files).at(Stage::Data)
}

fn load_rules(cfg: &ExperimentConfig, flag: &Option<PathBuf>, kg: &KnowledgeGraph) -> PipelineResult<RuleSet> {
    match flag.as_ref().or(cfg.data.rules.as_ref()) {
        Some(p) => read_rules(p, kg).at(Stage::Data),
        None => Err(config_err("no rule file given (--rules or data.rules)")),
    }
}

fn out_file(shared: &Shared) -> PipelineResult<&Path> {
    shared.out.as_deref().ok_or_else(|| config_err("--out is required"))
}

fn ensure_dir(dir: &Path) -> PipelineResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).at(Stage::Config)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T, stage: Stage) -> PipelineResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(Error::from).at(stage)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e)).at(stage)
}

fn run(cli: Cli, shared: Shared) -> PipelineResult<()> {
    let mut cfg = base_config(&shared)?;
    match cli.command {
        Command::Mine { walk } => {
            apply_walk(&mut cfg, &walk);
            let out = out_file(&shared)?;
            cfg.walk.validate().at(Stage::Config)?;
            let kg = load_kg(&cfg)?;
            let rules = mine_rules(&kg, &cfg.walk).at(Stage::Mining)?;
            write_rules(out, &rules, &kg).at(Stage::Mining)?;
            println!("mined {} rules -> {}", rules.len(), out.display());
        }
        Command::Augment {
            rules,
            abduce,
            invert,
            mine,
            filter,
            walk,
        } => {
            apply_walk(&mut cfg, &walk);
            if abduce || invert || mine || filter {
                cfg.augment.enable_abduction = abduce;
                cfg.augment.enable_inversion = invert;
                cfg.augment.enable_random_walk = mine;
                cfg.augment.enable_filter = filter;
            }
            let out = out_file(&shared)?;
            let kg = load_kg(&cfg)?;
            let input = match rules.as_ref().or(cfg.data.rules.as_ref()) {
                Some(p) => read_rules(p, &kg).at(Stage::Data)?,
                None if cfg.augment.enable_random_walk => RuleSet::new(),
                None => return Err(config_err("no rule file given (--rules or data.rules)")),
            };
            let augmented = augment_pipeline(&input, &kg, &cfg.augment, &cfg.walk, &cfg.filter).at(Stage::Mining)?;
            write_rules(out, &augmented, &kg).at(Stage::Mining)?;
            println!("{} -> {} rules -> {}", input.len(), augmented.len(), out.display());
        }
        Command::Score { rules } => {
            let out = out_file(&shared)?;
            let kg = load_kg(&cfg)?;
            let rules = load_rules(&cfg, &rules, &kg)?;
            let scores = score_rules(&kg, &rules, &cfg.filter);
            write_scored_rules(out, &rules, &scores, &kg).at(Stage::Scoring)?;
            println!("scored {} rules -> {}", rules.len(), out.display());
        }
        Command::Filter { rules, min_pca, cap } => {
            if let Some(t) = min_pca {
                cfg.filter.pca_threshold = t;
            }
            if cap == Some(0) {
                return Err(config_err("--cap must be at least 1"));
            }
            cfg.filter.validate().at(Stage::Config)?;
            let out = out_file(&shared)?;
            let kg = load_kg(&cfg)?;
            let rules = load_rules(&cfg, &rules, &kg)?;
            let scores = score_rules(&kg, &rules, &cfg.filter);
            let mut kept = filter_scored(&rules, &scores, &cfg.filter);
            if let Some(cap) = cap {
                let s = score_rules(&kg, &kept, &cfg.filter);
                kept = cap_rules_per_relation(&kept, &s, cap);
            }
            write_rules(out, &kept, &kg).at(Stage::Scoring)?;
            println!("kept {} of {} rules -> {}", kept.len(), rules.len(), out.display());
        }
        Command::Train { rules, train } => {
            apply_train(&mut cfg, &train)?;
            cfg.train.validate().at(Stage::Config)?;
            let out = out_file(&shared)?.to_path_buf();
            let kg = load_kg(&cfg)?;
            let rules = load_rules(&cfg, &rules, &kg)?;
            ensure_dir(&out)?;
            let (params, report) = train_predictor_with_report(&kg, &rules, &cfg.train).at(Stage::Training)?;
            params.save(out.join("predictor.json")).at(Stage::Training)?;
            write_json(&out.join("train_report.json"), &report, Stage::Training)?;
            for e in &report.epochs {
                let mrr = e.valid_mrr.map_or("-".to_owned(), |m| format!("{m:.4}"));
                println!("epoch {}\tloss {:.5}\tvalid MRR {mrr}", e.epoch, e.mean_loss);
            }
            println!("best epoch {} -> {}", report.best_epoch, out.display());
        }
        Command::TrainRotate {
            dim,
            epochs,
            lr,
            negatives,
            preset,
        } => {
            if let Some(p) = preset {
                let p: DatasetPreset = p.parse().at(Stage::Config)?;
                cfg.rotate.dim = p.rotate_dim();
                cfg.rotate.batch_size = p.batch_size();
            }
            if let Some(v) = dim {
                cfg.rotate.dim = v;
            }
            if let Some(v) = epochs {
                cfg.rotate.epochs = v;
            }
            if let Some(v) = lr {
                cfg.rotate.learning_rate = v;
            }
            if let Some(v) = negatives {
                cfg.rotate.negatives = v;
            }
            cfg.rotate.validate().at(Stage::Config)?;
            let out = out_file(&shared)?.to_path_buf();
            let kg = load_kg(&cfg)?;
            ensure_dir(&out)?;
            let (params, epochs) = train_rotate_with_report(&kg, &cfg.rotate).at(Stage::Training)?;
            params.save(out.join("rotate.json")).at(Stage::Training)?;
            for e in &epochs {
                println!("epoch {}\tloss {:.5}", e.epoch, e.mean_loss);
            }
        }
        Command::Eval {
            rules,
            predictor,
            rotate,
            eta,
            preset,
        } => {
            if let Some(p) = preset {
                cfg.ensemble.eta = p.parse::<DatasetPreset>().at(Stage::Config)?.eta();
            }
            if let Some(eta) = eta {
                cfg.ensemble.eta = eta;
            }
            if predictor.is_none() && rotate.is_none() {
                return Err(config_err("eval needs --predictor and/or --rotate"));
            }
            if !(cfg.ensemble.eta.is_finite() && cfg.ensemble.eta >= 0.0) {
                return Err(config_err("eta must be finite and >= 0"));
            }
            let kg = load_kg(&cfg)?;
            let ruleset = match &predictor {
                Some(_) => load_rules(&cfg, &rules, &kg)?,
                None => RuleSet::new(),
            };
            let params = predictor
                .as_ref()
                .map(|p| PredictorParams::load(p, &ruleset))
                .transpose()
                .at(Stage::Data)?;
            let rot = rotate.as_ref().map(RotateParams::load).transpose().at(Stage::Data)?;
            if let Some(r) = &rot {
                r.check_graph(&kg).at(Stage::Data)?;
            }
            let scorer = ModelScorer {
                predictor: params
                    .as_ref()
                    .map(|p| RuleScorer::new(p, &kg, &ruleset))
                    .transpose()
                    .at(Stage::Evaluation)?,
                rotate: rot.as_ref().map(|r| (r, cfg.ensemble)),
            };
            let report = evaluate(&scorer, &kg, &DEFAULT_HITS).at(Stage::Evaluation)?;
            if let Some(out) = &shared.out {
                ensure_dir(out)?;
                report.write_json(out.join("metrics.json")).at(Stage::Evaluation)?;
                let p = out.join("per_query.tsv");
                fs::write(&p, report.per_query_tsv(&kg))
                    .map_err(|e| Error::io(&p, e))
                    .at(Stage::Evaluation)?;
            }
            print!("{}", report.to_json().at(Stage::Evaluation)?);
            println!();
        }
        Command::Ablate { rules, rows, train } => {
            apply_train(&mut cfg, &train)?;
            if rules.is_some() {
                cfg.data.rules = rules;
            }
            let rows = rows
                .unwrap_or_default()
                .iter()
                .map(|r| r.parse::<AblationRow>())
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Config)?;
            let results = ablation_matrix(&cfg, &rows)?;
            print!("{}", ablation_tsv(&results));
        }
        Command::Synth { entities } => {
            let out = out_file(&shared)?;
            let mut sc = SyntheticConfig::default();
            if let Some(n) = entities {
                sc.num_entities = n;
            }
            if let Some(seed) = shared.seed {
                sc.seed = seed;
            }
            let bench = SyntheticBenchmark::generate(&sc).at(Stage::Config)?;
            bench.write_dir(out).at(Stage::Data)?;
            println!(
                "{} entities, {} train / {} valid / {} test triples -> {}",
                bench.kg.num_entities(),
                bench.kg.train().len(),
                bench.kg.valid().len(),
                bench.kg.test().len(),
                out.display()
            );
        }
        Command::Pipeline { rules, cap } => {
            if rules.is_some() {
                cfg.data.rules = rules;
            }
            if cap.is_some() {
                cfg.rules_per_relation = cap;
            }
            let out = run_pipeline(&cfg)?;
            println!("{} rules -> {}", out.rules.len(), cfg.out_dir.display());
            if let Some(m) = out.metrics {
                println!("MRR {:.4}\tMR {:.3}", m.mrr, m.mr);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let shared = cli.shared.clone();
    if let Some(n) = shared.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli, shared) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
