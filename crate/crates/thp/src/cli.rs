//! The `thp` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thp_core::encoder::attention_weights;
use thp_core::hawkes::{simulate_one, SimulatorConfig};
use thp_core::model::Thp;
use thp_core::predict::{mean_gap, DensityConfig};
use thp_core::split::split_counts;
use thp_core::train::{evaluate, train, EvalConfig, EvalReport};
use thp_core::EventSequence;

use crate::archive::{load_model, save_model, Manifest, LOSS_LOG_FILE};
use crate::config::{load_file, seed_override, TrainFile, DEFAULT_DEV_FRACTION};
use crate::dataset::{load_dataset, load_graph, save_dataset};
use crate::error::{io_err, Result, ThpError};
use crate::exec::Rayon;

#[derive(Debug, Parser)]
#[command(name = "thp", version, about = "Transformer Hawkes process: simulate, train, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a multivariate exponential Hawkes process to JSON lines.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes params.bin, manifest.json and loss_log.jsonl.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Relational graph; switches on the structured model.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model; prints a JSON report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Predict through the intensity density instead of the heads.
        #[arg(long)]
        density_prediction: bool,
        /// Bootstrap resamples of the sequences for spread estimates.
        #[arg(long, default_value_t = 0)]
        resample: usize,
    },
    /// Write per-layer, per-head attention weights of one sequence as JSON.
    AttentionDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seq: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Train {
            data,
            graph,
            config,
            out,
        } => train_cmd(&data, graph.as_deref(), &config, &out),
        Command::Eval {
            data,
            model,
            density_prediction,
            resample,
        } => {
            let report = eval_cmd(&data, &model, density_prediction, resample)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &report).expect("report serialises");
            writeln!(lock).map_err(io_err(Path::new("<stdout>")))
        }
        Command::AttentionDump { data, model, seq, out } => attention_dump(&data, &model, seq, &out),
    }
}

pub fn simulate(config: &Path, out: &Path) -> Result<()> {
    let mut cfg: SimulatorConfig = load_file(config)?;
    if let Some(s) = seed_override()? {
        cfg.seed = s;
    }
    let params = cfg.params()?;
    let seqs = (0..cfg.n_sequences)
        .into_par_iter()
        .map(|i| simulate_one(&params, cfg.horizon, cfg.seed, i as u64))
        .collect::<thp_core::Result<Vec<_>>>()?;
    save_dataset(out, &seqs)
}

fn infer_num_types(seqs: &[EventSequence]) -> usize {
    seqs.iter()
        .flat_map(|s| s.events().iter().map(|e| e.k + 1))
        .max()
        .unwrap_or(1)
}

pub fn train_cmd(data: &Path, graph: Option<&Path>, config: &Path, out: &Path) -> Result<()> {
    let seqs = load_dataset(data)?;
    if seqs.is_empty() {
        return Err(ThpError::Usage(format!("{}: no sequences", data.display())));
    }
    let graph = graph.map(load_graph).transpose()?;
    let file: TrainFile = load_file(config)?;
    let cfg = file.train_config(seed_override()?);
    let model_cfg = file
        .model_config(infer_num_types(&seqs), graph.as_ref().map(|g| g.num_vertices()))
        .map_err(|message| ThpError::Config {
            path: config.to_path_buf(),
            message,
        })?;

    let frac = file.dev_fraction.unwrap_or(DEFAULT_DEV_FRACTION);
    if !(0.0..1.0).contains(&frac) {
        return Err(ThpError::Config {
            path: config.to_path_buf(),
            message: "dev_fraction must lie in [0, 1)".into(),
        });
    }
    let n = seqs.len();
    let n_dev = if frac > 0.0 && n >= 2 {
        ((frac * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let split = split_counts(seqs, [n - n_dev, n_dev, 0], [1.0 - frac, frac, 0.0], cfg.seed)?;

    let mut model = Thp::new(model_cfg, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let log_path = out.join(LOSS_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut write_err = None;
    let report = train(
        &mut model,
        &split.train,
        &split.dev,
        graph.as_ref(),
        &cfg,
        &Rayon,
        &mut |line| {
            let r = serde_json::to_writer(&mut log, line)
                .map_err(std::io::Error::from)
                .and_then(|_| log.write_all(b"\n"))
                .and_then(|_| log.flush());
            if let Err(e) = r {
                write_err.get_or_insert(e);
            }
            match line.dev_per_event_ll {
                Some(d) => eprintln!(
                    "epoch {:>3}  train ll/event {:.4}  dev ll/event {:.4}",
                    line.epoch, line.per_event_ll, d
                ),
                None => eprintln!("epoch {:>3}  train ll/event {:.4}", line.epoch, line.per_event_ll),
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path)(e));
    }
    let gap = file
        .mean_gap
        .or_else(|| mean_gap(&split.train))
        .expect("training sequences have at least two events");
    let manifest = Manifest::new(&model, cfg, gap, report.best_epoch, report.best_dev_per_event_ll);
    save_model(out, &model, &manifest)
}

pub fn eval_cmd(data: &Path, model_dir: &Path, density: bool, resample: usize) -> Result<EvalReport> {
    let (model, manifest) = load_model(model_dir)?;
    let seqs = load_dataset(data)?;
    let cfg = EvalConfig {
        likelihood: manifest.train.likelihood.clone(),
        seed: seed_override()?.unwrap_or(manifest.train.seed),
        density: density.then(|| DensityConfig {
            mean_gap: manifest.mean_gap,
            ..DensityConfig::default()
        }),
        resample,
    };
    Ok(evaluate(&model, &seqs, &cfg, &Rayon)?)
}

#[derive(Debug, Serialize)]
struct LayerDump {
    layer: usize,
    /// `heads[h][i][j]`: weight of event `j` in event `i`'s update.
    heads: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize)]
struct AttentionDump {
    sequence: usize,
    length: usize,
    layers: Vec<LayerDump>,
}

pub fn attention_dump(data: &Path, model_dir: &Path, index: usize, out: &Path) -> Result<()> {
    let (model, _) = load_model(model_dir)?;
    let seqs = load_dataset(data)?;
    let seq = seqs.get(index).ok_or_else(|| {
        ThpError::Usage(format!(
            "sequence index {index} out of range; {} has {} sequences",
            data.display(),
            seqs.len()
        ))
    })?;
    let weights = attention_weights(&model, seq)?;
    let layers = weights
        .iter()
        .enumerate()
        .map(|(layer, heads)| LayerDump {
            layer,
            heads: heads
                .iter()
                .map(|w| (0..w.rows()).map(|i| w.row(i).to_vec()).collect())
                .collect(),
        })
        .collect();
    let dump = AttentionDump {
        sequence: index,
        length: seq.len(),
        layers,
    };
    let f = File::create(out).map_err(io_err(out))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &dump).expect("dump serialises");
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(out))
}
