//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dataio::{load_split, ClassLabel, Split};
use crate::error::Error;
use crate::featsel::{self, FeatureMask};
use crate::infer::{format_output_line, parse_frame_line, predict, StreamOptions, StreamSession};
use crate::lossmetrics::{argmax, cce, ConfusionMatrix, LossKind, Metrics};
use crate::nn::{self, load_model, Model, FORMAT_VERSION};
use crate::optim::{self, SearchSpace, TrainConfig};
use crate::{dataio, par};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "emoblend", about = "Blendshape-based facial emotion classifier", disable_version_flag = true)]
struct Cli {
    /// Print the tool and model-format versions.
    #[arg(long)]
    version: bool,

    /// Worker threads for data-parallel loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the blendshape mask on a training split.
    SelectFeatures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = featsel::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = featsel::DEFAULT_MIN_COUNT)]
        min_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Report metrics of a model (or of a prediction file) on a split.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// One prediction per sample: a class code or three probabilities.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Classify every frame of a file independently.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Classify frames read from standard input.
    Stream {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stateful: bool,
        #[arg(long, value_name = "BETA")]
        smooth: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        tie_tolerance: f64,
    },
    /// Random search over architectures and optimizer settings.
    Tune {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the winning configuration here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print model metadata.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this mask file instead of computing one from the training split.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Comma-separated LSTM layer widths.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    clipnorm: Option<f64>,
    #[arg(long)]
    no_amsgrad: bool,
    #[arg(long)]
    seed: Option<u64>,
}

/// Train command settings as read from a TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    mask: Option<PathBuf>,
    layer_units: Option<Vec<usize>>,
    threshold: Option<f64>,
    min_count: Option<usize>,
    train: TrainConfig,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Lib(Error::Io { .. }) => EXIT_IO,
        CliError::Lib(_) => EXIT_DATA,
    }
}

/// Entry point used by the binary.
pub fn run(argv: &[String]) -> i32 {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    run_with_io(argv, &mut stdin, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Runs one command against the given streams and returns the exit code.
pub fn run_with_io(argv: &[String], input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if cli.version {
        let _ = writeln!(out, "emoblend {} (model format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"));
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        let _ = writeln!(err, "{}", Cli::command().render_usage());
        let _ = writeln!(err, "a subcommand is required; see --help");
        return EXIT_USAGE;
    };

    let result = par::with_threads(cli.threads, || dispatch(command, input, out));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) => m.clone(),
                CliError::Lib(e) => e.to_string(),
            };
            let _ = writeln!(err, "error: {msg}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    match command {
        Command::SelectFeatures {
            data,
            threshold,
            min_count,
            out: path,
        } => select_features(&data, threshold, min_count, &path, out),
        Command::Train(args) => train(args, out),
        Command::Evaluate {
            model,
            data,
            split,
            predictions,
        } => evaluate(model.as_deref(), &data, split, predictions.as_deref(), out),
        Command::Predict { model, input: path } => predict_file(&model, &path, out),
        Command::Stream {
            model,
            stateful,
            smooth,
            tie_tolerance,
        } => stream(
            &model,
            StreamOptions {
                stateful,
                smoothing: smooth,
                tie_tolerance,
            },
            input,
            out,
        ),
        Command::Tune {
            space,
            trials,
            budget,
            data,
            config,
            seed,
            out: path,
        } => tune(&space, trials, budget, &data, config.as_deref(), seed, path.as_deref(), out),
        Command::Inspect { model } => inspect(&model, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Lib(Error::io("<stdout>", e)))
}

fn select_features(data: &Path, threshold: f64, min_count: usize, path: &Path, out: &mut dyn Write) -> CliResult {
    let ds = load_split(data, Split::Train)?;
    let counts = featsel::count_activations(&ds, threshold)?;
    let mask = featsel::select_features(&counts, min_count, ds.blendshape_names.clone())?;
    mask.export(path)?;
    write_out(
        out,
        &format!(
            "kept {} of {} blendshapes (threshold {threshold}, min count {min_count}) -> {}\n",
            mask.len(),
            ds.blendshape_names.len(),
            path.display()
        ),
    )
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Lib(Error::Config(format!("{}: {e}", path.display()))))
}

fn train(args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut file = match &args.config {
        Some(p) => read_toml::<TrainFile>(p)?,
        None => TrainFile::default(),
    };
    let data = args
        .data
        .or(file.data.take())
        .ok_or_else(|| CliError::Usage("train needs --data (or `data` in the config file)".into()))?;
    let out_dir = args
        .out
        .or(file.out.take())
        .ok_or_else(|| CliError::Usage("train needs --out (or `out` in the config file)".into()))?;
    let layers = args
        .layers
        .or(file.layer_units.take())
        .unwrap_or_else(|| nn::DEFAULT_LAYER_UNITS.to_vec());
    let threshold = args.threshold.or(file.threshold).unwrap_or(featsel::DEFAULT_THRESHOLD);
    let min_count = args.min_count.or(file.min_count).unwrap_or(featsel::DEFAULT_MIN_COUNT);

    let mut cfg = file.train;
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    if let Some(v) = args.patience {
        cfg.early_stop_patience = v;
    }
    if let Some(v) = args.checkpoint_interval {
        cfg.checkpoint_min_interval = v;
    }
    if let Some(v) = args.clipnorm {
        cfg.global_clipnorm = v;
    }
    if args.no_amsgrad {
        cfg.amsgrad = false;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let train_ds = load_split(&data, Split::Train)?;
    let val_ds = load_split(&data, Split::Validation)?;
    let mask = match args.mask.or(file.mask) {
        Some(p) => FeatureMask::import(p, train_ds.blendshape_names.clone())?,
        None => featsel::build_mask(&train_ds, threshold, min_count)?,
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    mask.export(out_dir.join("mask.txt"))?;

    let model = Model::init(&layers, mask, cfg.seed)?;
    let outcome = optim::train(&model, &train_ds, &val_ds, &cfg, Some(&out_dir))?;
    let h = &outcome.history;
    let best = &h.epochs[h.best_epoch - 1];
    write_out(
        out,
        &format!(
            "epochs run: {}{}\nbest epoch: {} (val loss {:.6}, val acc {:.4}, val f1 {:.4})\ncheckpoints: {}\noutput: {}\n",
            h.epochs.len(),
            if h.stopped_early { " (early stop)" } else { "" },
            h.best_epoch,
            best.val.loss,
            best.val.accuracy,
            best.val.macro_f1,
            h.checkpoints.len(),
            out_dir.display()
        ),
    )
}

/// Reads a prediction file: per line a class code or `p0,p1,p2`.
fn read_predictions(path: &Path) -> CliResult<Vec<Result<ClassLabel, Vec<f64>>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut preds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| {
            CliError::Lib(Error::Parse {
                file: path.display().to_string(),
                row: i + 1,
                column: None,
                msg,
            })
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match fields.len() {
            1 => {
                let code: usize = fields[0].parse().map_err(|_| bad(format!("invalid class code `{line}`")))?;
                preds.push(Ok(ClassLabel::from_code(code).map_err(|e| bad(e.to_string()))?));
            }
            3 => {
                let p = fields
                    .iter()
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("invalid probabilities `{line}`")))?;
                preds.push(Err(p));
            }
            n => return Err(bad(format!("expected 1 or 3 fields, got {n}"))),
        }
    }
    Ok(preds)
}

fn evaluate(
    model: Option<&Path>,
    data: &Path,
    split: Split,
    predictions: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let ds = load_split(data, split)?;
    let model = model.map(load_model).transpose()?;
    let class_names = model
        .as_ref()
        .map(|m| m.class_names.clone())
        .unwrap_or_else(nn::default_class_names);

    let metrics = match predictions {
        None => optim::evaluate(model.as_ref().expect("clap requires --model"), &ds)?,
        Some(path) => {
            let preds = read_predictions(path)?;
            if preds.len() != ds.len() {
                return Err(Error::Config(format!(
                    "{} has {} predictions for {} samples",
                    path.display(),
                    preds.len(),
                    ds.len()
                ))
                .into());
            }
            let mut cm = ConfusionMatrix::default();
            let mut cce_sum = 0.0;
            for (pred, sample) in preds.iter().zip(&ds.samples) {
                let label = match pred {
                    Ok(l) => {
                        cce_sum = f64::NAN;
                        *l
                    }
                    Err(p) => {
                        cce_sum += cce(&dataio::one_hot(sample.label3, 3)?, p)?;
                        ClassLabel::from_code(argmax(p))?
                    }
                };
                cm.record(sample.label3, label);
            }
            let mean = cce_sum / ds.len() as f64;
            Metrics::from_confusion(cm, mean, mean)?
        }
    };
    write_out(out, &metrics.report(&class_names))
}

fn predict_file(model: &Path, input: &Path, out: &mut dyn Write) -> CliResult {
    let model = load_model(model)?;
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let mut n = 0;
    let mut buf = String::new();
    for (i, line) in text.lines().enumerate() {
        let frame = parse_frame_line(line, &model.mask.source_names).map_err(|msg| Error::Parse {
            file: input.display().to_string(),
            row: i + 1,
            column: None,
            msg,
        })?;
        let Some(frame) = frame else { continue };
        n += 1;
        let (label, probs) = predict(&model, &frame)?;
        buf.push_str(&format_output_line(n, label, &probs, &model.class_names));
        buf.push('\n');
    }
    write_out(out, &buf)
}

fn stream(model: &Path, options: StreamOptions, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    let model = load_model(model)?;
    let mut session = StreamSession::new(&model, options)?;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let read = input
            .read_line(&mut line)
            .map_err(|e| Error::io("<stdin>", e))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let frame = parse_frame_line(&line, &model.mask.source_names).map_err(|msg| Error::Parse {
            file: "<stdin>".into(),
            row: line_no,
            column: None,
            msg,
        })?;
        let Some(frame) = frame else { continue };
        let o = session.step(&frame)?;
        write_out(out, &format!("{}\n", format_output_line(o.frame, o.label, &o.probs, &model.class_names)))?;
        out.flush().map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn tune(
    space: &Path,
    trials: usize,
    budget: usize,
    data: &Path,
    config: Option<&Path>,
    seed: u64,
    best_out: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let text = std::fs::read_to_string(space).map_err(|e| Error::io(space, e))?;
    let space: SearchSpace = serde_json::from_str(&text)
        .map_err(|e| CliError::Lib(Error::Config(format!("{}: {e}", space.display()))))?;
    let file = match config {
        Some(p) => read_toml::<TrainFile>(p)?,
        None => TrainFile::default(),
    };
    let train_ds = load_split(data, Split::Train)?;
    let val_ds = load_split(data, Split::Validation)?;
    let mask = match &file.mask {
        Some(p) => FeatureMask::import(p, train_ds.blendshape_names.clone())?,
        None => featsel::build_mask(
            &train_ds,
            file.threshold.unwrap_or(featsel::DEFAULT_THRESHOLD),
            file.min_count.unwrap_or(featsel::DEFAULT_MIN_COUNT),
        )?,
    };
    let outcome = optim::random_search(&space, &file.train, trials, budget, &mask, &train_ds, &val_ds, seed)?;

    let mut text = String::from("rank,trial,val_loss,val_acc,epochs,layers,learning_rate,weight_decay,batch_size,loss\n");
    for (rank, e) in outcome.leaderboard.iter().enumerate() {
        let c = &e.config;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            e.trial,
            e.final_val_loss,
            e.final_val_accuracy,
            e.epochs_run,
            c.layer_units.iter().map(|u| u.to_string()).collect::<Vec<_>>().join("-"),
            c.train.learning_rate,
            c.train.weight_decay,
            c.train.batch_size,
            serde_json::to_value(c.train.loss).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        ));
    }
    write_out(out, &text)?;
    if let Some(path) = best_out {
        let json = serde_json::to_string_pretty(&outcome.best).expect("config serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn inspect(path: &Path, out: &mut dyn Write) -> CliResult {
    let m = load_model(path)?;
    let mut text = format!(
        "format version: {FORMAT_VERSION}\ninput features: {}\nlayer units: {:?}\nparameters: {}\nclasses: {}\n",
        m.params.in_dim(),
        m.params.layer_units(),
        m.params.num_params(),
        m.class_names.join(", "),
    );
    if let Some(d) = &m.metadata.train_config_digest {
        text.push_str(&format!("train config digest: {d}\n"));
    }
    if let Some(c) = &m.metadata.created {
        text.push_str(&format!("created: {c}\n"));
    }
    text.push_str(&format!("mask ({} of {}):\n", m.mask.len(), m.mask.source_names.len()));
    for name in m.mask.kept_names() {
        text.push_str(&format!("  {name}\n"));
    }
    write_out(out, &text)
}
