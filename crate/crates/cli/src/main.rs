mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use scoregen::data::ReturnsDataset;
use scoregen::sampler::{generate_scenarios, ForwardScheme, NetworkScore};
use scoregen::score_net::ScoreParams;
use scoregen::stats::{build_report, write_histogram_csv, write_qq_csv};
use scoregen::trainer::{train_from, write_loss_csv, Checkpoint};
use scoregen::Error;

use config::{RunConfig, Window, CONFIG_HELP};

#[derive(Parser)]
#[command(
    name = "scoregen",
    version,
    about = "Train score-based diffusion models on asset returns, generate scenarios and validate them",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    /// Maximum number of worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the score network; writes the checkpoint and the loss history.
    #[command(after_long_help = CONFIG_HELP)]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides input.path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides output.checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides output.loss.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Encode and decode resampled training rows with a trained checkpoint.
    #[command(after_long_help = CONFIG_HELP)]
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output.checkpoint as the checkpoint to read.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides m.
        #[arg(long)]
        m: Option<usize>,
        /// Overrides path.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides input.path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides output.scenarios.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides output.provenance.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Compare historical and synthetic returns; writes the report, Q-Q and
    /// histogram data.
    #[command(after_long_help = CONFIG_HELP)]
    Validate {
        /// Optional; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Historical returns CSV (default: the configured training window).
        #[arg(long)]
        hist: Option<PathBuf>,
        /// Synthetic returns CSV (default: output.scenarios).
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Overrides validation.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides output.report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides output.qq.
        #[arg(long)]
        qq: Option<PathBuf>,
        /// Overrides output.histogram.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
}

/// A diagnostic and the process exit status: 1 configuration, 2 data,
/// 3 numerical failure.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn from_core(context: &str, e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 1,
            Error::NonFinite(_) | Error::Singular(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: format!("{context}: {e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(Failure::config),
        None => Ok(RunConfig::default()),
    }
}

fn check(cfg: &RunConfig) -> Outcome {
    cfg.validate().map_err(Failure::config)
}

fn load_returns(cfg: &RunConfig) -> Result<ReturnsDataset, Failure> {
    if cfg.input.path.is_none() {
        return Err(Failure::config("input.path is not set"));
    }
    cfg.load_returns().map_err(|e| Failure::data(format!("loading training data: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_train(cfg: RunConfig) -> Outcome {
    let ds = load_returns(&cfg)?;
    let spec = cfg.dsde.build(ds.dim()).map_err(|e| Failure::from_core("dsde", e))?;
    let theta0 = ScoreParams::init(ds.dim(), cfg.train.hidden, cfg.train.seed)
        .map_err(|e| Failure::from_core("train", e))?;
    eprintln!(
        "training on {} rows of {} assets for {} epochs",
        ds.len(),
        ds.dim(),
        cfg.train.epochs
    );
    let snapshot = |epoch: usize, params: &ScoreParams, loss: f64| Checkpoint {
        epoch,
        loss,
        dsde: spec.clone(),
        objective: cfg.objective.clone(),
        train: cfg.train.clone(),
        params: params.clone(),
    };
    let every = cfg.train.checkpoint_every;
    let result = train_from(theta0, &ds, &spec, &cfg.objective, &cfg.train, |epoch, params, loss| {
        if every > 0 && epoch % every == 0 {
            eprintln!("epoch {epoch}: loss {loss:.6e}");
            snapshot(epoch, params, loss).save(&cfg.output.checkpoint)?;
        }
        Ok(())
    })
    .map_err(|e| Failure::from_core("training", e))?;
    let last = *result.loss_history.last().expect("history holds the initial loss");
    snapshot(cfg.train.epochs, &result.theta, last)
        .save(&cfg.output.checkpoint)
        .map_err(|e| Failure::from_core("checkpoint", e))?;
    let mut w = create(&cfg.output.loss)?;
    write_loss_csv(&mut w, &result.loss_history).map_err(|e| Failure::from_core("loss history", e))?;
    eprintln!(
        "final loss {last:.6e}; wrote {} and {}",
        cfg.output.checkpoint.display(),
        cfg.output.loss.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Provenance<'a> {
    seed: u64,
    steps: usize,
    scheme: ForwardScheme,
    m: usize,
    checkpoint: &'a Path,
    data: Option<&'a Path>,
    window: Option<Window>,
    tickers: &'a [String],
    source_indices: &'a [usize],
    source_dates: Vec<&'a str>,
}

fn cmd_generate(cfg: RunConfig) -> Outcome {
    let ck = Checkpoint::load(&cfg.output.checkpoint).map_err(|e| Failure::from_core("checkpoint", e))?;
    let ds = load_returns(&cfg)?;
    if ck.params.dim() != ds.dim() {
        return Err(Failure::data(format!(
            "checkpoint has {} assets but the data has {}",
            ck.params.dim(),
            ds.dim()
        )));
    }
    let score = NetworkScore::new(&ck.params, &ck.dsde).map_err(|e| Failure::from_core("checkpoint", e))?;
    let mut set = generate_scenarios(&ds, &ck.dsde, &score, cfg.m, &cfg.path)
        .map_err(|e| Failure::from_core("generation", e))?;
    set.checkpoint = Some(cfg.output.checkpoint.display().to_string());

    let mut w = create(&cfg.output.scenarios)?;
    set.write_csv(&mut w, ds.tickers())
        .map_err(|e| Failure::from_core("scenarios", e))?;
    let provenance = Provenance {
        seed: set.seed,
        steps: cfg.path.steps,
        scheme: cfg.path.scheme,
        m: set.len(),
        checkpoint: &cfg.output.checkpoint,
        data: cfg.input.path.as_deref(),
        window: cfg.input.window,
        tickers: ds.tickers(),
        source_indices: &set.source_indices,
        source_dates: set.source_indices.iter().map(|&i| ds.dates()[i].as_str()).collect(),
    };
    write_json(&cfg.output.provenance, &provenance)?;
    eprintln!(
        "wrote {} scenarios to {} ({})",
        set.len(),
        cfg.output.scenarios.display(),
        cfg.output.provenance.display()
    );
    Ok(())
}

fn cmd_validate(cfg: RunConfig, hist: Option<PathBuf>, synth: Option<PathBuf>) -> Outcome {
    let hist = match hist {
        Some(p) => ReturnsDataset::load_csv(&p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?,
        None => load_returns(&cfg)?,
    };
    let synth_path = synth.unwrap_or_else(|| cfg.output.scenarios.clone());
    let synth = ReturnsDataset::load_csv(&synth_path)
        .map_err(|e| Failure::data(format!("{}: {e}", synth_path.display())))?;
    if hist.tickers() != synth.tickers() {
        return Err(Failure::data(format!(
            "column mismatch: historical [{}] vs synthetic [{}]",
            hist.tickers().join(","),
            synth.tickers().join(",")
        )));
    }
    let report = build_report(&hist, synth.returns(), &cfg.validation)
        .map_err(|e| Failure::from_core("validation", e))?;
    write_json(&cfg.output.report, &report)?;
    let mut w = create(&cfg.output.qq)?;
    write_qq_csv(&mut w, &report.qq_pairs).map_err(|e| Failure::from_core("q-q data", e))?;
    let mut w = create(&cfg.output.histogram)?;
    write_histogram_csv(&mut w, &report.histogram).map_err(|e| Failure::from_core("histogram", e))?;
    println!(
        "t_cvm {:.6} p_cvm {:.4} kappa_hist {:.4} kappa_synth {:.4} (n {}, m {})",
        report.t_cvm, report.p_cvm, report.kappa_hist, report.kappa_synth, report.n, report.m
    );
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train {
            config,
            seed,
            data,
            checkpoint,
            loss,
        } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.input.path = data.or(cfg.input.path);
            cfg.output.checkpoint = checkpoint.unwrap_or(cfg.output.checkpoint);
            cfg.output.loss = loss.unwrap_or(cfg.output.loss);
            check(&cfg)?;
            cmd_train(cfg)
        }
        Command::Generate {
            config,
            checkpoint,
            m,
            seed,
            data,
            out,
            provenance,
        } => {
            let mut cfg = load_config(Some(&config))?;
            cfg.output.checkpoint = checkpoint.unwrap_or(cfg.output.checkpoint);
            cfg.m = m.unwrap_or(cfg.m);
            if let Some(s) = seed {
                cfg.path.seed = s;
            }
            cfg.input.path = data.or(cfg.input.path);
            cfg.output.scenarios = out.unwrap_or(cfg.output.scenarios);
            cfg.output.provenance = provenance.unwrap_or(cfg.output.provenance);
            check(&cfg)?;
            cmd_generate(cfg)
        }
        Command::Validate {
            config,
            hist,
            synth,
            seed,
            report,
            qq,
            histogram,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.validation.seed = s;
            }
            cfg.output.report = report.unwrap_or(cfg.output.report);
            cfg.output.qq = qq.unwrap_or(cfg.output.qq);
            cfg.output.histogram = histogram.unwrap_or(cfg.output.histogram);
            check(&cfg)?;
            cmd_validate(cfg, hist, synth)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
