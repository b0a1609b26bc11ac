//! `redsc`: pre-training, fine-tuning, baseline and diagnostic runs.
//!
//! Exit codes: 0 success, 2 configuration or contract error, 3 numerical
//! failure (divergence, failed gradient check).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::json;

use redsc_core::baselines::lsr_baseline_cluster_with;
use redsc_core::checkpoint::Checkpoint;
use redsc_core::clustering::{cluster_coefficients, ClusterResult, MetricsSummary};
use redsc_core::data::{write_idx_images, write_idx_labels, SynthParams};
use redsc_core::diagnostics::{gradcheck_suite, GRADCHECK_TOLERANCE};
use redsc_core::model::SkipMode;
use redsc_core::trainer::{finetune, pretrain, ErrMonitor};
use redsc_core::{Error, Result};

use config::{unix_now, write_json, DatasetSummary, Manifest, RunConfig};

#[derive(Parser)]
#[command(name = "redsc", version, about = "Residual encoder-decoder subspace clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the encoder-decoder on reconstruction alone.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides train.skip_mode.
        #[arg(long)]
        skip_mode: Option<SkipMode>,
    },
    /// Train the full network with the self-expressive layer, then cluster.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides train.skip_mode.
        #[arg(long)]
        skip_mode: Option<SkipMode>,
    },
    /// Closed-form least-squares self-expression on the raw data.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check reverse-mode gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample at most this many coordinates per array of the network loss.
        #[arg(long)]
        max_coords: Option<usize>,
    },
    /// Generate a synthetic union-of-subspaces image set.
    Synth {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "8x8", value_parser = parse_hw)]
        hw: (usize, usize),
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn parse_hw(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::Divergence { .. } | Error::DegenerateAffinity(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Pretrain { config, out, skip_mode } => cmd_pretrain(&config, &out, skip_mode),
        Command::Finetune { config, checkpoint, out, skip_mode } => cmd_finetune(&config, &checkpoint, &out, skip_mode),
        Command::Baseline { config, out } => cmd_baseline(&config, &out),
        Command::Gradcheck { seed, max_coords } => cmd_gradcheck(seed, max_coords),
        Command::Synth { n, d, hw, per_class, sigma, seed, out } => {
            let p = SynthParams { n_subspaces: n, dim: d, height: hw.0, width: hw.1, per_class, noise_sigma: sigma, seed };
            cmd_synth(p, &out)
        }
    }
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started: u64,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Run { command, out: out.to_path_buf(), started: unix_now(), outputs: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(mut self, cfg: &RunConfig, ds: &DatasetSummary, results: Option<serde_json::Value>) -> Result<()> {
        let path = self.path("manifest.json");
        let manifest = Manifest {
            tool: "redsc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config: serde_json::to_value(cfg).map_err(|e| Error::Numerical(format!("json encoding: {e}")))?,
            dataset: ds.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: self.outputs,
            results,
        };
        write_json(&path, &manifest)?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn cmd_pretrain(config: &Path, out: &Path, skip_mode: Option<SkipMode>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(m) = skip_mode {
        cfg.train.skip_mode = m;
    }
    let loaded = cfg.load_dataset()?;
    let ds = &loaded.dataset;
    let mut run = Run::start("pretrain", out)?;
    info!("pre-training on {} images of {}x{} for {} epochs", ds.len(), ds.height(), ds.width(), cfg.train.epochs_pretrain);
    let (params, history) = pretrain(&ds.images, &cfg.architecture, &cfg.train)?;
    Checkpoint { arch: cfg.architecture.clone(), params, seed: cfg.train.seed }.save(&run.path("checkpoint.bin"))?;
    history.write_csv(&run.path("pretrain_loss.csv"))?;
    let results = history.records.last().map(|r| json!({ "final_loss": r.loss }));
    run.finish(&cfg, &DatasetSummary::of(ds), results)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FinetuneMetrics {
    #[serde(flatten)]
    clustering: Option<MetricsSummary>,
    skip_mode: SkipMode,
    epochs: usize,
    final_total_loss: Option<f64>,
    /// First epoch whose global loss is within 110% of the final one.
    epochs_to_110pct_final: Option<usize>,
}

fn cmd_finetune(config: &Path, checkpoint: &Path, out: &Path, skip_mode: Option<SkipMode>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(m) = skip_mode {
        cfg.train.skip_mode = m;
    }
    let ck = Checkpoint::load(checkpoint)?;
    if ck.arch != cfg.architecture {
        return Err(Error::Config(format!(
            "checkpoint architecture (kernels {:?}, channels {:?}) does not match config (kernels {:?}, channels {:?})",
            ck.arch.kernel_sizes, ck.arch.channels, cfg.architecture.kernel_sizes, cfg.architecture.channels
        )));
    }
    let loaded = cfg.load_dataset()?;
    let ds = &loaded.dataset;
    if let Some(n) = ck.params.n_samples() {
        if n != ds.len() {
            return Err(Error::Config(format!(
                "checkpoint self-expressive matrix is {n} x {n}, dataset has {} images",
                ds.len()
            )));
        }
    }
    let n_clusters = cfg.n_clusters(ds)?;
    let monitor = ds.labels.as_ref().map(|truth| ErrMonitor {
        truth: truth.clone(),
        n_clusters,
        every: cfg.clustering.err_every,
        seed: cfg.clustering.seed,
    });
    let mut run = Run::start("finetune", out)?;
    info!("fine-tuning on {} images for {} epochs ({:?} skips)", ds.len(), cfg.train.epochs_finetune, cfg.train.skip_mode);
    let (params, history) = finetune(&ds.images, &ck.params, &cfg.architecture, &cfg.train, monitor.as_ref())?;
    let theta = params.theta.clone().expect("fine-tuning attaches a self-expressive matrix");
    Checkpoint { arch: cfg.architecture.clone(), params, seed: cfg.train.seed }.save(&run.path("finetuned.bin"))?;
    history.write_csv(&run.path("finetune_loss.csv"))?;

    let labels = cluster_coefficients(&theta, n_clusters, cfg.clustering.seed)?;
    let clustering = match &ds.labels {
        Some(truth) => {
            let result = ClusterResult::evaluate(labels, truth, n_clusters)?;
            fs::write(run.path("labels.csv"), result.labels_csv(truth))?;
            info!("ERR {:.4}, NMI {:.4}, PUR {:.4}", result.err, result.nmi, result.pur);
            Some(result.summary(cfg.clustering.seed))
        }
        None => {
            let text: String = std::iter::once("index,predicted\n".to_string())
                .chain(labels.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
                .collect();
            fs::write(run.path("labels.csv"), text)?;
            None
        }
    };
    let metrics = FinetuneMetrics {
        clustering,
        skip_mode: cfg.train.skip_mode,
        epochs: history.len(),
        final_total_loss: history.records.last().map(|r| r.loss.total),
        epochs_to_110pct_final: history.epochs_to_reach(1.1),
    };
    write_json(&run.path("metrics.json"), &metrics)?;
    let results = serde_json::to_value(&metrics).ok();
    run.finish(&cfg, &DatasetSummary::of(ds), results)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_baseline(config: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let loaded = cfg.load_dataset()?;
    let ds = &loaded.dataset;
    let truth = ds.labels.clone().ok_or_else(|| Error::Config("the baseline needs labelled data".into()))?;
    let n_clusters = cfg.n_clusters(ds)?;
    let mut run = Run::start("baseline", out)?;
    let result = lsr_baseline_cluster_with(
        &loaded.baseline_matrix(),
        cfg.baseline.lambda,
        cfg.baseline.zero_diag,
        n_clusters,
        cfg.clustering.seed,
        &truth,
    )?;
    info!("LSR ERR {:.4}, NMI {:.4}, PUR {:.4}", result.err, result.nmi, result.pur);
    fs::write(run.path("labels.csv"), result.labels_csv(&truth))?;
    let summary = result.summary(cfg.clustering.seed);
    write_json(&run.path("metrics.json"), &summary)?;
    run.finish(&cfg, &DatasetSummary::of(ds), serde_json::to_value(&summary).ok())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, max_coords: Option<usize>) -> Result<ExitCode> {
    let cases = gradcheck_suite(seed, max_coords)?;
    println!("{:<20} {:>14} {:>8} {:>8}", "case", "max rel err", "checked", "skipped");
    for c in &cases {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<20} {:>14.3e} {:>8} {:>8}  {verdict}", c.name, c.max_rel_error, c.checked, c.skipped);
    }
    if cases.iter().all(|c| c.passed()) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::from(3))
    }
}

fn cmd_synth(p: SynthParams, out: &Path) -> Result<ExitCode> {
    let data = redsc_core::data::synth_subspaces(&p)?;
    let mut run = Run::start("synth", out)?;
    write_idx_images(&run.path("images.idx"), &data.dataset.images)?;
    write_idx_labels(&run.path("labels.idx"), data.dataset.labels.as_deref().expect("synthetic data is labelled"))?;
    let cfg = RunConfig { dataset: config::DatasetSpec::Synth(p), ..RunConfig::default() };
    let results = json!({ "rescale_min": data.rescale.0, "rescale_max": data.rescale.1 });
    run.finish(&cfg, &DatasetSummary::of(&data.dataset), Some(results))?;
    Ok(ExitCode::SUCCESS)
}
