//! Delimited text formats: events, labels, datasets, scores and AUC reports.
//!
//! Reals are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the one written.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use churn_core::evaluation::AucReport;
use churn_core::imaging::{Channel, ChannelSet, CustomerImage, Normalizer};
use churn_core::ltl::{DayRange, EventRecord, Exclusion, LtlConfig};
use churn_core::synth::IntendedLabel;
use churn_core::Tensor;

pub const EVENTS_HEADER: [&str; 4] = ["customer_id", "day", "channel", "value"];
pub const LABELS_HEADER: [&str; 2] = ["customer_id", "label"];
pub const SCORES_HEADER: [&str; 2] = ["customer_id", "score"];
pub const EXCLUDED_MARKER: &str = "# excluded";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn check_header(found: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    ensure!(
        found.iter().eq(expected.iter().copied()),
        "{what} header must be `{}`, found `{}`",
        expected.join(","),
        found.iter().collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub struct EventWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> EventWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(EVENTS_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, e: &EventRecord) -> Result<()> {
        self.inner.write_record([
            e.customer_id.as_str(),
            &e.day.to_string(),
            e.channel.name(),
            &e.value.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn parse_event(record: &csv::StringRecord) -> Result<EventRecord> {
    ensure!(record.len() == 4, "expected 4 fields, found {}", record.len());
    let customer_id = record[0].to_string();
    ensure!(!customer_id.is_empty(), "empty customer id");
    let day: i64 = record[1]
        .parse()
        .map_err(|_| anyhow!("day {:?} is not an integer", &record[1]))?;
    let channel: Channel = record[2].parse().map_err(|e| anyhow!("{e}"))?;
    let value: f64 = record[3]
        .parse()
        .map_err(|_| anyhow!("value {:?} is not a number", &record[3]))?;
    ensure!(value.is_finite() && value >= 0.0, "value {value} must be a nonnegative real");
    Ok(EventRecord {
        customer_id,
        day,
        channel,
        value,
    })
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &EVENTS_HEADER, "events")?;
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record.context("malformed events file")?;
        let event = parse_event(&record).with_context(|| format!("events line {}", line_of(&record)))?;
        events.push(event);
    }
    Ok(events)
}

pub fn read_events_file(path: &Path) -> Result<Vec<EventRecord>> {
    read_events(open(path)?).with_context(|| path.display().to_string())
}

pub fn write_labels<W: Write>(writer: W, labels: &[(String, IntendedLabel)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LABELS_HEADER)?;
    for (id, label) in labels {
        w.write_record([id.as_str(), label.code()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<(String, IntendedLabel)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &LABELS_HEADER, "labels")?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = IntendedLabel::parse(&record[1]).with_context(|| format!("labels line {}", line_of(&record)))?;
        out.push((record[0].to_string(), label));
    }
    Ok(out)
}

/// Normalized images with the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub channels: ChannelSet,
    pub ltl: LtlConfig,
    pub normalizer: Normalizer,
    pub days: usize,
    pub images: Vec<CustomerImage>,
}

impl DatasetFile {
    pub fn tensors_and_labels(&self) -> Result<(Vec<Tensor>, Vec<u8>)> {
        Ok(churn_core::pipeline::tensors_and_labels(&self.images)?)
    }
}

/// `# key=value` header lines (channels, ltl and normalizer as JSON, days),
/// then a csv table `customer_id,label,window_start,window_end,p0,…` with
/// pixels in row-major day × channel order.
pub fn write_dataset<W: Write>(mut writer: W, data: &DatasetFile) -> Result<()> {
    writeln!(writer, "# channels={}", serde_json::to_string(&data.channels)?)?;
    writeln!(writer, "# ltl={}", serde_json::to_string(&data.ltl)?)?;
    writeln!(writer, "# normalizer={}", serde_json::to_string(&data.normalizer)?)?;
    writeln!(writer, "# days={}", data.days)?;
    let pixels = data.days * data.channels.len();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["customer_id".to_string(), "label".into(), "window_start".into(), "window_end".into()];
    header.extend((0..pixels).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for img in &data.images {
        ensure!(img.pixels.len() == pixels, "customer {} has {} pixels", img.customer_id, img.pixels.len());
        let mut row = Vec::with_capacity(pixels + 4);
        row.push(img.customer_id.clone());
        row.push(img.label.map_or_else(String::new, |l| l.to_string()));
        row.push(img.predictor_window.start.to_string());
        row.push(img.predictor_window.end.to_string());
        row.extend(img.pixels.data().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<DatasetFile> {
    let mut reader = BufReader::new(reader);
    let mut headers = BTreeMap::new();
    let mut line = String::new();
    let mut body = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        match line.strip_prefix("# ") {
            Some(rest) => {
                let (k, v) = rest
                    .trim_end()
                    .split_once('=')
                    .ok_or_else(|| anyhow!("malformed dataset header line {:?}", line.trim_end()))?;
                headers.insert(k.to_string(), v.to_string());
            }
            None => {
                body.push_str(&line);
                break;
            }
        }
    }
    reader.read_to_string(&mut body)?;
    let field = |k: &str| headers.get(k).ok_or_else(|| anyhow!("dataset header lacks `{k}`"));
    let channels: ChannelSet = serde_json::from_str(field("channels")?).context("dataset channels")?;
    let ltl: LtlConfig = serde_json::from_str(field("ltl")?).context("dataset ltl config")?;
    let normalizer: Normalizer = serde_json::from_str(field("normalizer")?).context("dataset normalizer")?;
    let days: usize = field("days")?.parse().context("dataset days")?;
    ensure!(
        normalizer.channels() == channels.len(),
        "normalizer has {} channels, channel set {}",
        normalizer.channels(),
        channels.len()
    );
    let pixels = days * channels.len();
    // Header lines precede the table, so table line n is file line n + headers.
    let offset = headers.len() as u64;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut images = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record) + offset;
        ensure!(
            record.len() == pixels + 4,
            "dataset line {line}: expected {} fields, found {}",
            pixels + 4,
            record.len()
        );
        let label = match &record[1] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => bail!("dataset line {line}: label {other:?}"),
        };
        let start: i64 = record[2].parse().with_context(|| format!("dataset line {line}: window start"))?;
        let end: i64 = record[3].parse().with_context(|| format!("dataset line {line}: window end"))?;
        let values = record
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("dataset line {line}: pixel value"))?;
        images.push(CustomerImage {
            customer_id: record[0].to_string(),
            pixels: Tensor::new(vec![days, channels.len(), 1], values)?,
            label,
            predictor_window: DayRange::new(start, end),
        });
    }
    Ok(DatasetFile {
        channels,
        ltl,
        normalizer,
        days,
        images,
    })
}

pub fn read_dataset_file(path: &Path) -> Result<DatasetFile> {
    read_dataset(open(path)?).with_context(|| path.display().to_string())
}

/// `customer_id,score` rows, then a `# excluded` line followed by
/// `customer_id,reason` rows.
pub fn write_scores<W: Write>(mut writer: W, scores: &[(String, f64)], excluded: &[(String, Exclusion)]) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut writer);
        w.write_record(SCORES_HEADER)?;
        for (id, s) in scores {
            w.write_record([id.as_str(), &s.to_string()])?;
        }
        w.flush()?;
    }
    writeln!(writer, "{EXCLUDED_MARKER}")?;
    let mut w = csv::Writer::from_writer(&mut writer);
    w.write_record(["customer_id", "reason"])?;
    for (id, reason) in excluded {
        w.write_record([id.as_str(), reason.code()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores and exclusions as written by [`write_scores`].
pub type ScoresFile = (Vec<(String, f64)>, Vec<(String, String)>);

pub fn read_scores<R: Read>(reader: R) -> Result<ScoresFile> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let (scored, excluded) = match text.split_once(&format!("{EXCLUDED_MARKER}\n")) {
        Some((a, b)) => (a, b),
        None => (text.as_str(), ""),
    };
    let mut rdr = csv::Reader::from_reader(scored.as_bytes());
    check_header(rdr.headers()?, &SCORES_HEADER, "scores")?;
    let mut scores = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let score: f64 = record[1]
            .parse()
            .with_context(|| format!("scores line {}", line_of(&record)))?;
        scores.push((record[0].to_string(), score));
    }
    let mut out_excluded = Vec::new();
    if !excluded.is_empty() {
        let mut rdr = csv::Reader::from_reader(excluded.as_bytes());
        for record in rdr.records() {
            let record = record?;
            out_excluded.push((record[0].to_string(), record[1].to_string()));
        }
    }
    Ok((scores, out_excluded))
}

/// `key=value` summary lines, a blank line, then the `fpr,tpr` table.
pub fn write_report<W: Write>(mut writer: W, report: &AucReport) -> Result<()> {
    writeln!(writer, "dataset={}", report.dataset)?;
    writeln!(writer, "auc={}", report.auc)?;
    writeln!(writer, "positives={}", report.positives)?;
    writeln!(writer, "negatives={}", report.negatives)?;
    writeln!(writer)?;
    writeln!(writer, "fpr,tpr")?;
    for (fpr, tpr) in &report.roc_points {
        writeln!(writer, "{fpr},{tpr}")?;
    }
    Ok(())
}

pub fn read_report<R: Read>(reader: R) -> Result<AucReport> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let (summary, table) = text.split_once("\n\n").ok_or_else(|| anyhow!("report lacks a ROC table"))?;
    let kv: BTreeMap<&str, &str> = summary.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| anyhow!("report lacks `{k}`"));
    let mut roc_points = Vec::new();
    for line in table.lines().skip(1) {
        let (a, b) = line.split_once(',').ok_or_else(|| anyhow!("bad ROC row {line:?}"))?;
        roc_points.push((a.parse()?, b.parse()?));
    }
    Ok(AucReport {
        dataset: get("dataset")?.to_string(),
        auc: get("auc")?.parse()?,
        positives: get("positives")?.parse()?,
        negatives: get("negatives")?.parse()?,
        roc_points,
    })
}
