use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cdnet::classifier::{build_small_cnn, finetune, pretrain, TrainConfig};
use cdnet::dataio::{load_dataset, save_dataset, split_paths, Dataset};
use cdnet::eval::{
    compare_methods, evaluate, load_checkpoint, parse_results_csv, rank_methods, results_csv,
    save_checkpoint, stream, sweep_levels, Checkpoint,
};
use cdnet::losses::{LossReport, UncertaintyWeights};
use cdnet::reverse::{generate_contrastive_sets, train_chain_set, ChainTrainConfig};
use cdnet::rng;
use cdnet::simgen::{generate_sim_dataset, Knob, SimConfig};

/// Contrastive diffusion pretraining for binary time-series classifiers.
#[derive(Parser)]
#[command(name = "cdnet", version)]
struct Cli {
    /// Flat JSON file with defaults for any training or simulation flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving configs, checkpoints, logs and results.
    #[arg(
        long,
        global = true,
        env = "CDNET_RUN_DIR",
        default_value = "runs/latest"
    )]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset in UCR format.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Output directory; defaults to <run-dir>/data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the four reverse chains on a training split.
    TrainChains {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Pretrain a classifier on contrastive sets from trained chains.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Chain checkpoint; defaults to <run-dir>/chains.ckpt.
        #[arg(long)]
        chains: Option<PathBuf>,
    },
    /// Fine-tune the head of a pretrained classifier.
    Finetune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Defaults to <run-dir>/pretrained.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report test accuracy of a checkpointed classifier.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to <run-dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Baseline versus CDNet on one dataset over several seeds.
    Compare {
        /// UCR dataset; omit to compare on a simulated dataset.
        #[command(flatten)]
        data: OptionalDataArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Compare both methods across levels of one simulation knob.
    Sweep {
        #[arg(long)]
        knob: Knob,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
        levels: Vec<u8>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Average ranks, Friedman statistic and Nemenyi CD from results CSVs.
    Rank {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding <name>_TRAIN.tsv and <name>_TEST.tsv.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Skip per-series z-normalization (use for simulated data).
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct OptionalDataArgs {
    #[arg(long, requires = "dataset")]
    data_dir: Option<PathBuf>,
    #[arg(long, requires = "data_dir")]
    dataset: Option<String>,
    #[arg(long)]
    no_normalize: bool,
}

/// Every tunable accepted on the command line or in the config file.
#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    epochs_pretrain: Option<usize>,
    #[arg(long)]
    epochs_finetune: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epsilon_snn: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    chain_epochs: Option<usize>,
    #[arg(long)]
    chain_batch_size: Option<usize>,
    #[arg(long)]
    chain_learning_rate: Option<f64>,
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimArgs {
    #[arg(long)]
    noise_level: Option<u8>,
    #[arg(long)]
    similarity_level: Option<u8>,
    #[arg(long)]
    multimodality_level: Option<u8>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    patterns_per_sample: Option<usize>,
    #[arg(long)]
    max_delay: Option<f64>,
    #[arg(long)]
    sim_seed: Option<u64>,
}

const SIM_KEYS: [&str; 8] = [
    "noise_level",
    "similarity_level",
    "multimodality_level",
    "n_per_class",
    "length",
    "patterns_per_sample",
    "max_delay",
    "sim_seed",
];

fn read_file_config(path: Option<&Path>) -> Result<(TrainArgs, SimArgs)> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // One flat object mixing training and simulation keys.
    let file: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (sim, train): (serde_json::Map<_, _>, serde_json::Map<_, _>) = file
        .into_iter()
        .partition(|(k, _)| SIM_KEYS.contains(&k.as_str()));
    let train = serde_json::from_value(train.into()).context("training keys in config file")?;
    let sim = serde_json::from_value(sim.into()).context("simulation keys in config file")?;
    Ok((train, sim))
}

macro_rules! overlay {
    ($target:expr, $src:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field { $target.$field = v; })+
    };
}

fn train_config(cli: &TrainArgs, file: &TrainArgs) -> TrainConfig {
    let mut c = TrainConfig::default();
    for src in [file, cli] {
        overlay!(
            c,
            src,
            epochs_pretrain,
            epochs_finetune,
            batch_size,
            learning_rate,
            seed,
            margin,
            temperature,
            epsilon_snn,
            steps,
            beta_min,
            beta_max,
            noise_std,
            embedding_dim
        );
        let chain: &mut ChainTrainConfig = &mut c.chain;
        if let Some(v) = src.chain_epochs {
            chain.epochs = v;
        }
        if let Some(v) = src.chain_batch_size {
            chain.batch_size = v;
        }
        if let Some(v) = src.chain_learning_rate {
            chain.learning_rate = v;
        }
    }
    c.chain.noise_std = c.noise_std;
    c
}

fn sim_config(cli: &SimArgs, file: &SimArgs) -> SimConfig {
    let mut c = SimConfig::default();
    for src in [file, cli] {
        overlay!(
            c,
            src,
            noise_level,
            similarity_level,
            multimodality_level,
            n_per_class,
            length,
            patterns_per_sample,
            max_delay
        );
        if let Some(s) = src.sim_seed {
            c.seed = s;
        }
    }
    c
}

fn load(data: &DataArgs) -> Result<Dataset> {
    let (train, test) = split_paths(&data.data_dir, &data.dataset);
    let ds = load_dataset(&data.dataset, &train, &test, !data.no_normalize)?;
    ds.validate_for_training()?;
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_loss_log(path: &Path, log: &[LossReport]) -> Result<()> {
    let mut out = String::from(LossReport::CSV_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    write_text(path, &out)
}

fn run(cli: Cli) -> Result<()> {
    let run_dir = cli.run_dir;
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let (file_train, file_sim) = read_file_config(cli.config.as_deref())?;

    match cli.command {
        Command::Simulate { sim, out } => {
            let config = sim_config(&sim, &file_sim);
            let data = generate_sim_dataset(&config)?;
            let dir = out.unwrap_or_else(|| run_dir.join("data"));
            let (train, test) = save_dataset(&data.dataset, &dir)?;
            write_json(&run_dir.join("sim_config.json"), &config)?;
            println!(
                "dataset {}: wrote {} and {}",
                data.dataset.name,
                train.display(),
                test.display()
            );
        }
        Command::TrainChains { data, train } => {
            let config = train_config(&train, &file_train);
            config.validate()?;
            let ds = load(&data)?;
            let (chains, reports) = train_chain_set(
                &ds.train,
                &config.schedule()?,
                &config.chain,
                rng::derive_seed(config.seed, stream::CHAINS),
            )?;
            let ckpt = Checkpoint {
                config: config.clone(),
                classifier: None,
                weights: None,
                chains: Some(chains),
            };
            save_checkpoint(&ckpt, &run_dir.join("chains.ckpt"))?;
            write_json(&run_dir.join("chain_reports.json"), &reports)?;
            write_json(&run_dir.join("config.json"), &config)?;
            for r in &reports {
                println!(
                    "{}: final validation MSE {:?} (identity {:?})",
                    r.kind.label(),
                    r.final_mse(),
                    r.identity_mse
                );
            }
        }
        Command::Pretrain {
            data,
            train,
            chains,
        } => {
            let config = train_config(&train, &file_train);
            config.validate()?;
            let ds = load(&data)?;
            let path = chains.unwrap_or_else(|| run_dir.join("chains.ckpt"));
            let Some(chain_set) = load_checkpoint(&path)?.chains else {
                bail!("{} holds no reverse chains", path.display());
            };
            let m = ds.validate_for_training()?;
            let mut clf = build_small_cnn(
                m,
                config.embedding_dim,
                &mut rng::derive(config.seed, stream::INIT),
            )?;
            let sets = generate_contrastive_sets(
                &ds.train,
                &chain_set,
                &config.schedule()?,
                config.noise_std,
                rng::derive_seed(config.seed, stream::CONTRASTIVE),
            )?;
            let mut weights = UncertaintyWeights::default();
            let log = pretrain(
                &mut clf,
                &sets,
                &mut weights,
                &config,
                &mut rng::derive(config.seed, stream::PRETRAIN),
            )?;
            write_loss_log(&run_dir.join("pretrain_log.csv"), &log)?;
            let ckpt = Checkpoint {
                config,
                classifier: Some(clf),
                weights: Some(weights),
                chains: Some(chain_set),
            };
            save_checkpoint(&ckpt, &run_dir.join("pretrained.ckpt"))?;
            if let Some(last) = log.last() {
                println!("final composite loss {:.6}", last.l_total);
            }
        }
        Command::Finetune {
            data,
            train,
            checkpoint,
        } => {
            let path = checkpoint.unwrap_or_else(|| run_dir.join("pretrained.ckpt"));
            let mut ckpt = load_checkpoint(&path)?;
            let config = train_config(&train, &file_train);
            config.validate()?;
            let ds = load(&data)?;
            let Some(clf) = ckpt.classifier.as_mut() else {
                bail!("{} holds no classifier", path.display());
            };
            let history = finetune(
                clf,
                &ds.train,
                &config,
                &mut rng::derive(config.seed, stream::FINETUNE),
            )?;
            let mut log = String::from("epoch,l_ce\n");
            for (i, l) in history.iter().enumerate() {
                log.push_str(&format!("{},{l}\n", i + 1));
            }
            write_text(&run_dir.join("finetune_log.csv"), &log)?;
            ckpt.config = config;
            save_checkpoint(&ckpt, &run_dir.join("model.ckpt"))?;
            println!("fine-tuned {} epochs", history.len());
        }
        Command::Evaluate { data, checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| run_dir.join("model.ckpt"));
            let Some(clf) = load_checkpoint(&path)?.classifier else {
                bail!("{} holds no classifier", path.display());
            };
            let ds = load(&data)?;
            let acc = evaluate(&clf, &ds.test)?;
            write_json(
                &run_dir.join("evaluation.json"),
                &serde_json::json!({ "dataset": ds.name, "checkpoint": path, "accuracy": acc }),
            )?;
            println!("{} accuracy {acc:.4}", ds.name);
        }
        Command::Compare {
            data,
            sim,
            train,
            seeds,
        } => {
            let config = train_config(&train, &file_train);
            let (ds, sim) = match (data.data_dir, data.dataset) {
                (Some(dir), Some(name)) => {
                    let d = DataArgs {
                        data_dir: dir,
                        dataset: name,
                        no_normalize: data.no_normalize,
                    };
                    (load(&d)?, None)
                }
                _ => {
                    let s = sim_config(&sim, &file_sim);
                    (generate_sim_dataset(&s)?.dataset, Some(s))
                }
            };
            let cmp = compare_methods(&ds, &config, sim.as_ref(), &seeds)?;
            write_text(&run_dir.join("results.csv"), &results_csv(&cmp.results))?;
            write_json(&run_dir.join("summary.json"), &cmp)?;
            for r in &cmp.results {
                println!(
                    "{} {} seed {}: {:.4}",
                    r.dataset_name, r.method_name, r.seed, r.accuracy
                );
            }
            println!("mean improvement {:+.4}", cmp.delta);
        }
        Command::Sweep {
            knob,
            levels,
            sim,
            train,
            seeds,
        } => {
            let config = train_config(&train, &file_train);
            let base = sim_config(&sim, &file_sim);
            let sweep = sweep_levels(knob, &levels, &base, &config, &seeds)?;
            write_text(
                &run_dir.join(format!("sweep_{}.csv", knob.name())),
                &sweep.csv(),
            )?;
            write_json(&run_dir.join(format!("sweep_{}.json", knob.name())), &sweep)?;
            print!("{}", sweep.csv());
        }
        Command::Rank { results } => {
            let mut rows = Vec::new();
            for path in &results {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                rows.extend(
                    parse_results_csv(&text)
                        .with_context(|| format!("parsing {}", path.display()))?,
                );
            }
            let mut methods: Vec<String> = rows.iter().map(|r| r.method_name.clone()).collect();
            let mut datasets: Vec<String> = rows.iter().map(|r| r.dataset_name.clone()).collect();
            methods.sort();
            methods.dedup();
            datasets.sort();
            datasets.dedup();
            // Seeds of one (method, dataset) cell are averaged.
            let matrix: Vec<Vec<Option<f64>>> = methods
                .iter()
                .map(|m| {
                    datasets
                        .iter()
                        .map(|d| {
                            let accs: Vec<f64> = rows
                                .iter()
                                .filter(|r| &r.method_name == m && &r.dataset_name == d)
                                .map(|r| r.accuracy)
                                .collect();
                            (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
                        })
                        .collect()
                })
                .collect();
            let table = rank_methods(&methods, &datasets, &matrix)?;
            write_text(&run_dir.join("ranks.csv"), &table.csv())?;
            write_json(&run_dir.join("ranks.json"), &table)?;
            print!("{}", table.csv());
            println!("friedman {:.6}", table.friedman_statistic);
            match table.nemenyi_cd {
                Some(cd) => println!("nemenyi_cd {cd:.6}"),
                None => println!("nemenyi_cd unavailable for {} methods", methods.len()),
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
