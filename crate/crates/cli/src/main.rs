use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use roadclass::dataset::{build_variant, read_partition_file, DatasetVariantSpec, LabeledDataset, SplitFractions};
use roadclass::evaluation::{confusion_matrix, error_rate_curve, EvalReport};
use roadclass::model_store::{load_model_file, save_model_file, Model, Provenance};
use roadclass::nn::{build_network, Activation, HyperParams};
use roadclass::synthetic::{default_profiles, generate_synthetic_collection, SyntheticConfig};
use roadclass::training::{train_sequences, EpochLog, TrainConfig};
use roadclass::trajectory::{load_collection_from_path, parse_trajectory_file, summarize, RoadUserClass};
use roadclass::tuning::{grid_search, GridSpec, GridSummary, SearchOptions};
use roadclass::{Error, Result};

/// Road user classification from GNSS trajectories.
#[derive(Parser)]
#[command(name = "roadclass", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled trajectory collection.
    Synth(SynthArgs),
    /// Build one dataset variant archive from a collection.
    Prepare(PrepareArgs),
    /// Train a network on a dataset variant and save the model.
    Train(TrainArgs),
    /// Grid-search hyperparameters on a dataset variant.
    Tune(TuneArgs),
    /// Evaluate a model on a test partition and write eval.json.
    Eval(EvalArgs),
    /// Write per-timestep error rates for a model on a test partition.
    Curve(CurveArgs),
    /// Classify a raw trajectory CSV.
    Predict(PredictArgs),
    /// Print a JSON summary of a model, dataset archive or collection.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectories per class.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Duration of each trajectory in seconds.
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    /// Nominal sampling interval in seconds.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Output directory for manifest.json and the trajectory files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    /// Collection manifest.json.
    #[arg(long)]
    collection: PathBuf,
    /// Sampling stride, 1 or 2.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Timesteps per sequence.
    #[arg(long, default_value_t = 60)]
    window: usize,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    /// Validation share of the non-test remainder.
    #[arg(long, default_value_t = 0.20)]
    val_frac: f64,
    /// Drop samples whose accuracy estimate exceeds this many meters.
    #[arg(long)]
    max_accuracy: Option<f64>,
    /// Archive root; the variant directory is created inside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    /// Clip each batch gradient to this global norm.
    #[arg(long)]
    clip_norm: Option<f64>,
}

impl OptimArgs {
    fn config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            patience_epochs: self.patience,
            max_epochs: self.max_epochs,
            shuffle_seed,
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset variant directory written by `prepare`.
    #[arg(long)]
    dataset: PathBuf,
    /// Input-to-recurrent dense layers.
    #[arg(long, default_value_t = 1)]
    in2rec: usize,
    /// Stacked LSTM layers.
    #[arg(long, default_value_t = 1)]
    lstm: usize,
    /// Recurrent-to-output dense layers.
    #[arg(long, default_value_t = 1)]
    rec2out: usize,
    /// Units per hidden layer.
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Hidden activation: tanh or relu.
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Weight initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minibatch shuffle seed; defaults to --seed.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[command(flatten)]
    optim: OptimArgs,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Training history JSON.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Output model path.
    #[arg(long, default_value = "model.rnnmodel.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent training jobs; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Skip combinations already in the leaderboard.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    in2rec: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    lstm: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    rec2out: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    width: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "tanh,relu")]
    activation: Vec<String>,
    #[command(flatten)]
    optim: OptimArgs,
    /// Output directory for leaderboard.csv, gridsearch.json and best.rnnmodel.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestSource {
    /// Test partition CSV.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    test: Option<PathBuf>,
    /// Dataset variant directory; its test.csv is used.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl TestSource {
    fn path(&self) -> PathBuf {
        match (&self.test, &self.dataset) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => d.join("test.csv"),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: TestSource,
    #[arg(long, default_value = "eval.json")]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: TestSource,
    #[arg(long, default_value = "error_curve.csv")]
    out: PathBuf,
    /// Also write whitespace-separated columns for gnuplot.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trajectory CSV with header timestamp_ms,lat,lon,accuracy_m.
    #[arg(long)]
    trajectory: PathBuf,
    /// Write the prediction JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Collection manifest.json.
    #[arg(long)]
    collection: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn activation(name: &str) -> Result<Activation> {
    let a: Activation = name.parse()?;
    Ok(a)
}

fn synth(args: SynthArgs) -> Result<()> {
    let collection = generate_synthetic_collection(&SyntheticConfig {
        profiles: default_profiles(),
        count_per_class: args.per_class,
        duration_s: args.duration,
        sample_interval_s: args.interval,
        seed: args.seed,
    })?;
    collection.write_dir(&args.out)?;
    eprintln!("wrote {} trajectories to {}", collection.len(), args.out.display());
    Ok(())
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let spec = DatasetVariantSpec::new(args.stride, args.window)?;
    let fractions = SplitFractions {
        test: args.test_frac,
        validation: args.val_frac,
    };
    let mut collection = load_collection_from_path(&args.collection)?;
    if let Some(max) = args.max_accuracy {
        collection = collection.filter_accuracy(max)?;
    }
    let data = build_variant(&collection, spec, fractions, args.seed)?;
    let dir = data.write_archive(&args.out, fractions)?;
    eprintln!(
        "{}: train {}, validation {}, test {}",
        dir.display(),
        data.train.len(),
        data.validation.len(),
        data.test.len()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let data = LabeledDataset::read_archive(&args.dataset)?;
    let hp = HyperParams::new(args.in2rec, args.lstm, args.rec2out, args.width, activation(&args.activation)?)?;
    let shuffle_seed = args.shuffle_seed.unwrap_or(args.seed);
    let config = args.optim.config(shuffle_seed);
    let net = build_network(hp, args.seed)?;

    let mut log = match &args.log {
        Some(p) => Some(EpochLog::new(create(p)?)?),
        None => None,
    };
    let (net, history) = train_sequences(&net, &data.train, &data.validation, &config, |r| {
        if let Some(log) = log.as_mut() {
            log.record(r)?;
        }
        Ok(())
    })?;
    if let Some(p) = &args.history {
        write_json(p, &history)?;
    }
    let model = Model {
        network: net,
        standardizer: data.standardizer.clone(),
        provenance: Provenance {
            network_seed: Some(args.seed),
            shuffle_seed: Some(shuffle_seed),
            split_seed: Some(data.split_seed),
            variant: Some(data.spec.dir_name()),
            history_digest: Some(history.digest()),
        },
    };
    save_model_file(&args.out, &model)?;
    eprintln!(
        "{hp}: best epoch {} of {}, validation loss {:.6}, saved {}",
        history.best_epoch,
        history.epochs(),
        history.best_val_loss,
        args.out.display()
    );
    Ok(())
}

fn tune(args: TuneArgs) -> Result<()> {
    let data = LabeledDataset::read_archive(&args.dataset)?;
    let grid = GridSpec {
        n_in2rec: args.in2rec,
        n_lstm: args.lstm,
        n_rec2out: args.rec2out,
        width: args.width,
        activation: args.activation.iter().map(|a| activation(a)).collect::<Result<_>>()?,
    };
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let options = SearchOptions {
        workers: args.workers,
        leaderboard: Some(args.out.join("leaderboard.csv")),
        resume: args.resume,
        config_override: None,
    };
    let outcome = grid_search(&data, &grid, &args.optim.config(0), args.seed, &options)?;
    let summary = GridSummary::new(&outcome.result);
    write_json(&args.out.join("gridsearch.json"), &summary)?;
    if let Some(net) = outcome.winner_network {
        let winner = outcome.result.winner_record();
        let (network_seed, shuffle_seed) = roadclass::tuning::job_seeds(args.seed, winner.combo_index);
        save_model_file(
            &args.out.join("best.rnnmodel.json"),
            &Model {
                network: net,
                standardizer: data.standardizer.clone(),
                provenance: Provenance {
                    network_seed: Some(network_seed),
                    shuffle_seed: Some(shuffle_seed),
                    split_seed: Some(data.split_seed),
                    variant: Some(data.spec.dir_name()),
                    history_digest: None,
                },
            },
        )?;
    }
    eprintln!(
        "winner {} (combo {}), validation loss {:.6}",
        summary.winner.hyper_params,
        summary.winner.combo_index,
        summary.winner.val_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let test = read_partition_file(&args.source.path())?;
    if test.is_empty() {
        return Err(Error::Evaluation("test partition is empty".into()));
    }
    let report = EvalReport::new(&confusion_matrix(&model.network, &test));
    write_json(&args.out, &report)?;
    eprintln!("macro-F1 {:.4} over {} sequences", report.macro_f1, report.test_count);
    Ok(())
}

fn curve(args: CurveArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let test = read_partition_file(&args.source.path())?;
    let curve = error_rate_curve(&model.network, &test)?;
    curve.write_csv(create(&args.out)?)?;
    if let Some(p) = &args.gnuplot {
        let mut w = create(p)?;
        curve.write_gnuplot(&mut w)?;
        w.flush().map_err(io_err(p))?;
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let bytes = fs::read(&args.trajectory).map_err(io_err(&args.trajectory))?;
    let id = args.trajectory.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    // The label is unknown; parsing needs one, classification ignores it.
    let traj = parse_trajectory_file(&bytes, id, RoadUserClass::Pedestrian)?;
    let prediction = model.classify(&traj)?;
    match &args.out {
        Some(p) => write_json(p, &prediction)?,
        None => print_json(&prediction)?,
    }
    eprintln!("{id}: {}", prediction.label.name());
    Ok(())
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    hyper_params: &'a HyperParams,
    parameter_count: usize,
    standardizer: &'a roadclass::features::Standardizer,
    provenance: &'a Provenance,
}

fn inspect(args: InspectArgs) -> Result<()> {
    if let Some(p) = &args.model {
        let m = load_model_file(p)?;
        print_json(&ModelSummary {
            hyper_params: m.network.spec(),
            parameter_count: m.network.parameter_count(),
            standardizer: &m.standardizer,
            provenance: &m.provenance,
        })
    } else if let Some(d) = &args.dataset {
        let bytes = fs::read(d.join("meta.json")).map_err(io_err(d))?;
        let meta: roadclass::dataset::DatasetMeta = serde_json::from_slice(&bytes)?;
        print_json(&meta)
    } else if let Some(c) = &args.collection {
        print_json(&summarize(&load_collection_from_path(c)?)?)
    } else {
        unreachable!("clap requires one target")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Eval(a) => eval(a),
        Command::Curve(a) => curve(a),
        Command::Predict(a) => predict(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
