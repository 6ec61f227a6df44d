use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use siamese_core::config::{DataSource, Preset, RunConfig};
use siamese_core::dataio::{
    gen_synthetic, load_dataset, read_cifar10, save_dataset, Dataset, SyntheticSpec,
};
use siamese_core::gradcheck::{check_contrastive, check_model_layers, check_siamese, GradReport};
use siamese_core::index::{build_index, export_embeddings, query_top_n};
use siamese_core::multiscale::MultiScaleModel;
use siamese_core::network::Mode;
use siamese_core::numerics::Rng;
use siamese_core::pairs::Embedder;
use siamese_core::trainer::{
    evaluate_accuracy_at_1, fit, load_model, save_model, MiningMode, NormStats, RunArtifacts,
};
use siamese_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "siamese",
    version,
    about = "Siamese multi-scale embeddings with online pair mining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Opms,
    Naive,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of colored, patterned class templates plus noise.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        /// Image height and width.
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert the CIFAR-10 binary batches into two dataset files.
    ImportCifar {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_test: PathBuf,
    },
    /// Train a model; writes model.simn, run_log.jsonl and the data splits to --out.
    Train {
        /// JSON run configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file, instead of the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Base preset when no --config is given.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Pairs per epoch in naive mode, comma separated; or the run_log.jsonl
        /// of an opms run to copy its per-epoch pair counts.
        #[arg(long)]
        naive_budget: Option<String>,
        /// Mine the next batch on a second thread (not reproducible).
        #[arg(long)]
        pipeline: bool,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Accuracy@1 of a model: each query's nearest repository image must share its class.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        repository_data: PathBuf,
        #[arg(long)]
        query_data: PathBuf,
    },
    /// Rank the images of a dataset by distance to one of its images.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index_data: PathBuf,
        #[arg(long)]
        image_id: u64,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Write every embedding of a dataset as TSV (id, label, d0..).
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer, the loss and the full siamese model.
    GradCheck {
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates sampled per check.
        #[arg(long, default_value_t = 256)]
        coordinates: usize,
    },
}

const GRAD_TOLERANCE: f64 = 1e-5;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData {
            classes,
            per_class,
            size,
            channels,
            sigma,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                num_classes: classes,
                per_class,
                channels,
                height: size,
                width: size,
                noise_sigma: sigma,
            };
            let data = gen_synthetic(&spec, &mut Rng::new(seed))?;
            save_dataset(&data, &out)?;
            println!(
                "wrote {} images ({classes} classes) to {}",
                data.len(),
                out.display()
            );
        }
        Command::ImportCifar {
            dir,
            out_train,
            out_test,
        } => {
            let (train, test) = read_cifar10(&dir)?;
            save_dataset(&train, &out_train)?;
            save_dataset(&test, &out_test)?;
            println!("train {} images -> {}", train.len(), out_train.display());
            println!("test {} images -> {}", test.len(), out_test.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            mode,
            preset,
            epochs,
            naive_budget,
            pipeline,
            print_config,
        } => {
            let mut cfg = match (&config, preset) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("--config and --preset are exclusive".into()))
                }
                (Some(path), None) => RunConfig::from_file(path)?,
                (None, p) => RunConfig::preset(p.map_or(Preset::Desk, Preset::from)),
            };
            if let Some(path) = data {
                cfg.data = DataSource::File { path };
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.split.seed = s;
            }
            if let Some(m) = mode {
                cfg.train.mode = match m {
                    ModeArg::Opms => MiningMode::Opms,
                    ModeArg::Naive => MiningMode::Naive,
                };
            }
            if let Some(e) = epochs {
                cfg.train.num_epochs = e;
            }
            if let Some(b) = naive_budget {
                cfg.train.naive_budget = Some(parse_budget(&b)?);
            }
            cfg.train.pipeline |= pipeline;
            cfg.validate()?;
            if print_config {
                println!("{}", cfg.to_json());
                return Ok(ExitCode::SUCCESS);
            }
            train(&cfg)?;
        }
        Command::Eval {
            model,
            repository_data,
            query_data,
        } => {
            let (model, stats) = load_model(&model)?;
            let repository = normalized(load_dataset(&repository_data)?, stats.as_ref())?;
            let queries = normalized(load_dataset(&query_data)?, stats.as_ref())?;
            let acc = evaluate_accuracy_at_1(&model, &queries, &repository)?;
            println!("accuracy@1 {acc:.4}");
        }
        Command::Query {
            model,
            index_data,
            image_id,
            top_n,
        } => {
            if top_n == 0 {
                return Err(Error::InvalidArgument("--top-n must be >= 1".into()));
            }
            let (model, stats) = load_model(&model)?;
            let data = normalized(load_dataset(&index_data)?, stats.as_ref())?;
            let query = data
                .samples
                .iter()
                .find(|s| s.id == image_id)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "image id {image_id} is not in {}",
                        index_data.display()
                    ))
                })?;
            let index = build_index(&model, &data)?;
            let matches = query_top_n(&index, &model.embed_eval(&query.image)?, top_n)?;
            println!("rank\tid\tlabel\tdistance");
            for (rank, m) in matches.iter().enumerate() {
                println!("{}\t{}\t{}\t{:.8}", rank + 1, m.id, m.label, m.distance);
            }
        }
        Command::ExportEmbeddings { model, data, out } => {
            let (model, stats) = load_model(&model)?;
            let data = normalized(load_dataset(&data)?, stats.as_ref())?;
            let index = build_index(&model, &data)?;
            export_embeddings(&index, &out)?;
            println!(
                "wrote {} embeddings of width {} to {}",
                index.len(),
                index.dim(),
                out.display()
            );
        }
        Command::GradCheck {
            preset,
            seed,
            coordinates,
        } => {
            let cfg = RunConfig::preset(preset.into());
            let shape = match preset {
                PresetArg::Desk => vec![3, 16, 16],
                PresetArg::Paper => vec![3, 32, 32],
            };
            let model = MultiScaleModel::build(cfg.model_for(&shape), &mut Rng::new(seed))?;
            let mut reports: Vec<GradReport> = check_model_layers(&model, coordinates, seed)?;
            reports.push(check_contrastive(seed)?);
            for mode in [Mode::Eval, Mode::Train] {
                reports.push(check_siamese(&model, 4, mode, coordinates, seed)?);
            }
            let mut worst: f64 = 0.0;
            for r in &reports {
                println!(
                    "{:<40} {:>5} coords  max rel err {:.3e}",
                    r.name, r.coordinates, r.max_rel_error
                );
                worst = worst.max(r.max_rel_error);
            }
            let pass = worst < GRAD_TOLERANCE;
            println!(
                "max relative error {worst:.3e} {}",
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_budget(arg: &str) -> Result<Vec<usize>> {
    let path = Path::new(arg);
    if path.is_file() {
        let reports = siamese_core::trainer::read_run_log(path)?;
        return Ok(reports.iter().map(|r| r.pairs_trained()).collect());
    }
    arg.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "--naive-budget: {s:?} is neither a count nor a run log"
                ))
            })
        })
        .collect()
}

fn normalized(data: Dataset, stats: Option<&NormStats>) -> Result<Dataset> {
    match stats {
        Some(s) if !data.normalized => s.apply(&data),
        _ => Ok(data),
    }
}

fn train(cfg: &RunConfig) -> Result<()> {
    let data = cfg.data.load()?;
    let (train_raw, held_raw) = cfg.split_data(&data)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(dir.join("config.json"), cfg.to_json())
        .map_err(|e| Error::io(dir.join("config.json"), e))?;
    save_dataset(&train_raw, &dir.join("train.simd"))?;
    if let Some(h) = &held_raw {
        save_dataset(h, &dir.join("validation.simd"))?;
    }
    let shape = data.image_shape().expect("non-empty dataset").to_vec();
    let model_cfg = cfg.model_for(&shape);
    println!(
        "training on {} images ({} held out), {} epochs, mode {:?}",
        train_raw.len(),
        held_raw.as_ref().map_or(0, Dataset::len),
        cfg.train.num_epochs,
        cfg.train.mode
    );
    let mut artifacts = RunArtifacts::create(
        dir,
        cfg.train.checkpoint_every,
        Some(NormStats::compute(&train_raw)?),
    )?;
    artifacts.echo = true;
    let fitted = fit(
        &train_raw,
        held_raw.as_ref(),
        model_cfg,
        &cfg.train,
        &mut artifacts,
    )?;
    if let Some(v) = fitted.outcome.initial_validation_loss {
        println!("initial validation loss {v:.6}");
    }
    let path = dir.join("model.simn");
    save_model(&path, &fitted.model, Some(&fitted.stats))?;
    if let Some(h) = &held_raw {
        let acc = evaluate_accuracy_at_1(
            &fitted.model,
            &fitted.stats.apply(h)?,
            &fitted.stats.apply(&train_raw)?,
        )?;
        println!("held-out accuracy@1 {acc:.4}");
    }
    println!("model written to {}", path.display());
    Ok(())
}
