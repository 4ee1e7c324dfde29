use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use churn_core::architectures::{build_dl1_for, build_dl2_for};
use churn_core::autoencoder::{maximal_activation_images, train_autoencoder_with_progress, AutoencoderSpec};
use churn_core::evaluation::evaluate;
use churn_core::imaging::{normalize, ChannelSet};
use churn_core::ltl::LtlConfig;
use churn_core::pipeline::{prepare_population, split_and_normalize, SplitConfig};
use churn_core::synth::{generate_customers, IntendedLabel, SynthConfig};
use churn_core::training::{predict, train_with_progress, EpochRecord, TrainConfig};
use churn_core::Tensor;

use crate::checkpoint::{Checkpoint, ModelKind, Provenance};
use crate::formats::{self, DatasetFile, EventWriter};
use crate::graymap;

#[derive(Debug, Parser)]
#[command(name = "churn", version, about = "Churn prediction from customer usage images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event log and its intended labels.
    Synth(SynthArgs),
    /// Label, rasterize, split and normalize an event log.
    Prepare(PrepareArgs),
    /// Train a classifier or an autoencoder on a prepared dataset.
    Train(TrainArgs),
    /// Score a prepared dataset with a classifier and report its AUC.
    Evaluate(EvaluateArgs),
    /// Export the images that maximally activate each autoencoder unit.
    Visualize(VisualizeArgs),
    /// Score the customers in an event log with a classifier.
    Predict(PredictArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn percentile(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 100.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 100]"))
    }
}

fn open_ratio(s: &str) -> std::result::Result<f64, String> {
    let v = unit_interval(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must leave both splits non-empty"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelChoice {
    Dl1,
    Dl2,
}

impl ChannelChoice {
    fn set(self) -> ChannelSet {
        match self {
            ChannelChoice::Dl1 => ChannelSet::dl1(),
            ChannelChoice::Dl2 => ChannelSet::dl2(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub customers: usize,
    #[arg(long, default_value_t = 0.0357, value_parser = unit_interval)]
    pub churn_rate: f64,
    #[arg(long, default_value_t = 0.02, value_parser = unit_interval)]
    pub excluded: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Events file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Intended-labels file to write.
    #[arg(long)]
    pub labels_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, default_value_t = 119)]
    pub reference_day: i64,
    #[arg(long, value_enum)]
    pub channels: ChannelChoice,
    #[arg(long, default_value_t = 99.0, value_parser = percentile)]
    pub percentile: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fraction of each class that goes to the training split.
    #[arg(long, default_value_t = 0.8, value_parser = open_ratio)]
    pub split: f64,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
    /// Optional `customer_id,reason` list of excluded customers.
    #[arg(long)]
    pub exclusions_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Dl1,
    Dl2,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, required_unless_present = "ae", conflicts_with = "ae")]
    pub arch: Option<Arch>,
    /// Train an autoencoder instead of a classifier.
    #[arg(long)]
    pub ae: bool,
    /// Autoencoder hidden units.
    #[arg(long, default_value_t = 16, requires = "ae")]
    pub hidden: usize,
    /// Prepared training dataset.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-customer `customer_id,score` file.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for the `unit_<i>` files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, default_value_t = 119)]
    pub reference_day: i64,
    /// Scores file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Prepare(a) => cmd_prepare(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Visualize(a) => cmd_visualize(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
    }
}

/// Customers generated per parallel batch while streaming to disk.
const SYNTH_CHUNK: usize = 4096;

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let config = SynthConfig {
        customer_count: args.customers,
        churn_rate: args.churn_rate,
        excluded_fraction: args.excluded,
        seed: args.seed,
        ..SynthConfig::default()
    };
    config.validate()?;
    let mut events = EventWriter::new(formats::create(&args.out)?)?;
    let mut labels = Vec::with_capacity(args.customers);
    let mut start = 0;
    while start < args.customers {
        let end = (start + SYNTH_CHUNK).min(args.customers);
        for c in generate_customers(&config, start..end)? {
            for e in &c.events {
                events.write(e)?;
            }
            labels.push((c.customer_id, c.intended));
        }
        start = end;
    }
    events.finish()?;
    formats::write_labels(formats::create(&args.labels_out)?, &labels)?;
    let count = |l: IntendedLabel| labels.iter().filter(|(_, x)| *x == l).count();
    writeln!(
        out,
        "customers={} active={} churned={} excluded={}",
        labels.len(),
        count(IntendedLabel::Active),
        count(IntendedLabel::Churned),
        count(IntendedLabel::Excluded)
    )?;
    Ok(())
}

fn churn_rate(labels: impl Iterator<Item = Option<u8>>) -> (usize, f64) {
    let (mut n, mut churned) = (0usize, 0usize);
    for l in labels {
        n += 1;
        if l == Some(1) {
            churned += 1;
        }
    }
    (n, if n == 0 { 0.0 } else { churned as f64 / n as f64 })
}

pub fn cmd_prepare(args: &PrepareArgs, out: &mut dyn Write) -> Result<()> {
    let events = formats::read_events_file(&args.events)?;
    let channels = args.channels.set();
    let ltl = LtlConfig::standard(args.reference_day);
    let population = prepare_population(&events, &ltl, &channels)?;
    if population.ignored_events > 0 {
        log::warn!(
            "ignored {} events on channels outside the {} set",
            population.ignored_events,
            channels.name
        );
    }
    for (id, reason) in &population.errors {
        log::warn!("customer {id} skipped: {reason}");
    }
    ensure!(
        !population.labeled.is_empty(),
        "no labelled customers in {} ({} excluded)",
        args.events.display(),
        population.tally.excluded
    );
    let split = SplitConfig {
        train_ratio: args.split,
        percentile: args.percentile,
        seed: args.seed,
    };
    let dataset = split_and_normalize(&population.labeled, &split)?;
    let days = ltl.predictor_window_days as usize;
    for (path, images) in [(&args.out_train, &dataset.train), (&args.out_test, &dataset.test)] {
        let file = DatasetFile {
            channels: channels.clone(),
            ltl: ltl.clone(),
            normalizer: dataset.normalizer.clone(),
            days,
            images: images.clone(),
        };
        formats::write_dataset(formats::create(path)?, &file)?;
    }
    if let Some(path) = &args.exclusions_out {
        let mut w = csv::Writer::from_writer(formats::create(path)?);
        w.write_record(["customer_id", "reason"])?;
        for (id, reason) in &population.excluded {
            w.write_record([id.as_str(), reason.code()])?;
        }
        w.flush()?;
    }
    let tally = population.tally;
    writeln!(out, "labeled={} excluded={}", tally.labeled(), tally.excluded)?;
    writeln!(out, "active={} churned={}", tally.active, tally.churned)?;
    for (name, images) in [("train", &dataset.train), ("test", &dataset.test)] {
        let (n, rate) = churn_rate(images.iter().map(|i| i.label));
        writeln!(out, "{name} customers={n} churn_rate={rate:.6}")?;
    }
    if population.ignored_events > 0 {
        writeln!(out, "ignored_events={}", population.ignored_events)?;
    }
    Ok(())
}

fn echo_epoch(out: &mut dyn Write) -> impl FnMut(&EpochRecord) + '_ {
    move |r: &EpochRecord| {
        log::info!("epoch {} took {:.2}s", r.epoch, r.seconds);
        // Progress lines are best effort; a closed stdout must not abort training.
        let _ = writeln!(out, "epoch={} loss={}", r.epoch, r.loss);
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = formats::read_dataset_file(&args.train)?;
    let (images, labels) = data.tensors_and_labels()?;
    ensure!(!images.is_empty(), "{} holds no customers", args.train.display());
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let cols = data.channels.len();
    let (model, params) = if args.ae {
        let spec = AutoencoderSpec::new(data.days, cols, args.hidden);
        let (ae, _) = train_autoencoder_with_progress(&images, spec, &config, echo_epoch(out))?;
        (ModelKind::Autoencoder { autoencoder: spec }, ae.params)
    } else {
        let arch = args.arch.expect("clap requires --arch without --ae");
        let (name, expected, network) = match arch {
            Arch::Dl1 => ("dl1", ChannelSet::dl1().len(), build_dl1_for(data.days, cols)),
            Arch::Dl2 => ("dl2", ChannelSet::dl2().len(), build_dl2_for(data.days, cols)),
        };
        ensure!(
            cols == expected,
            "{name} expects {expected}-channel images, {} has {cols}",
            args.train.display()
        );
        let (params, _) = train_with_progress(&network, &images, &labels, &config, echo_epoch(out))?;
        (ModelKind::Classifier { network }, params)
    };
    let checkpoint = Checkpoint::new(
        model,
        params,
        Provenance {
            channels: data.channels,
            ltl: data.ltl,
            normalizer: data.normalizer,
            train_config: config,
        },
    )?;
    checkpoint.save(&args.out)?;
    writeln!(out, "params={} checkpoint={}", checkpoint.manifest.param_count, args.out.display())?;
    Ok(())
}

fn dataset_tag(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let spec = checkpoint.classifier()?;
    let data = formats::read_dataset_file(&args.data)?;
    ensure!(
        data.channels == checkpoint.manifest.channels,
        "dataset uses the {} channel set, model was trained on {}",
        data.channels.name,
        checkpoint.manifest.channels.name
    );
    ensure!(
        data.normalizer.fingerprint == checkpoint.manifest.dataset_fingerprint,
        "dataset was normalized with different bounds than the model's training data"
    );
    let (images, labels) = data.tensors_and_labels()?;
    let scores = predict(spec, &checkpoint.params, &images)?;
    let report = evaluate(&scores, &labels, &dataset_tag(&args.data))?;
    formats::write_report(formats::create(&args.out)?, &report)?;
    if let Some(path) = &args.scores_out {
        let rows: Vec<(String, f64)> = data.images.iter().map(|i| i.customer_id.clone()).zip(scores).collect();
        formats::write_scores(formats::create(path)?, &rows, &[])?;
    }
    writeln!(out, "auc={}", report.auc)?;
    Ok(())
}

pub fn cmd_visualize(args: &VisualizeArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let ae = checkpoint.autoencoder()?;
    let channels = &checkpoint.manifest.channels;
    let extraction = maximal_activation_images(&ae)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let (rows, cols) = (ae.spec.image.rows, ae.spec.image.cols);
    let mut summary = csv::Writer::from_writer(formats::create(&args.out.join("summary.csv"))?);
    summary.write_record(["unit", "voice_intensity", "data_intensity"])?;
    for base in &extraction.images {
        let values = base.pixels.data();
        fs::write(
            args.out.join(format!("unit_{}.pgm", base.unit)),
            graymap::render(rows, cols, values),
        )?;
        let mut table = csv::Writer::from_writer(formats::create(&args.out.join(format!("unit_{}.csv", base.unit)))?);
        table.write_record(channels.channels.iter().map(|c| c.name()))?;
        for r in 0..rows {
            table.write_record(values[r * cols..(r + 1) * cols].iter().map(f64::to_string))?;
        }
        table.flush()?;
        let (voice, data) = base.voice_and_data_intensity(channels);
        summary.write_record([base.unit.to_string(), voice.to_string(), data.to_string()])?;
        writeln!(out, "unit {}: voice={voice:.6} data={data:.6}", base.unit)?;
    }
    summary.flush()?;
    for unit in &extraction.dead_units {
        writeln!(out, "unit {unit}: dead, no image written")?;
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.model)?;
    let spec = checkpoint.classifier()?;
    let manifest = &checkpoint.manifest;
    if spec.input.cols != manifest.channels.len() {
        bail!(
            "model input has {} channels but its channel set {} has {}",
            spec.input.cols,
            manifest.channels.name,
            manifest.channels.len()
        );
    }
    let events = formats::read_events_file(&args.events)?;
    let ltl = LtlConfig {
        reference_day: args.reference_day,
        ..manifest.ltl.clone()
    };
    let population = prepare_population(&events, &ltl, &manifest.channels)?;
    if population.ignored_events > 0 {
        log::warn!(
            "ignored {} events on channels outside the {} set",
            population.ignored_events,
            manifest.channels.name
        );
    }
    let images = population
        .labeled
        .iter()
        .map(|r| normalize(&r.raw, &manifest.normalizer))
        .collect::<churn_core::Result<Vec<Tensor>>>()?;
    let scores = if images.is_empty() {
        Vec::new()
    } else {
        predict(spec, &checkpoint.params, &images)?
    };
    let rows: Vec<(String, f64)> = population
        .labeled
        .iter()
        .map(|r| r.customer_id.clone())
        .zip(scores)
        .collect();
    formats::write_scores(formats::create(&args.out)?, &rows, &population.excluded)?;
    writeln!(out, "scored={} excluded={}", rows.len(), population.excluded.len())?;
    Ok(())
}
