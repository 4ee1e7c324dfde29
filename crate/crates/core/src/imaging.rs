//! Channels, rasterization of events into days × channels matrices, and
//! per-channel normalization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Fnv64;
use crate::ltl::{DayRange, EventRecord};
use crate::tensor::Tensor;

/// One behavioural feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    TopupFreq,
    TopupAmount,
    VoiceInFreq,
    VoiceOutFreq,
    VoiceInDur,
    VoiceOutDur,
    DataDownVol,
    DataUpVol,
    DataDownDur,
    DataUpDur,
    SmsIn,
    SmsOut,
}

impl Channel {
    pub const ALL: [Channel; 12] = [
        Channel::TopupFreq,
        Channel::TopupAmount,
        Channel::VoiceInFreq,
        Channel::VoiceOutFreq,
        Channel::VoiceInDur,
        Channel::VoiceOutDur,
        Channel::DataDownVol,
        Channel::DataUpVol,
        Channel::DataDownDur,
        Channel::DataUpDur,
        Channel::SmsIn,
        Channel::SmsOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::TopupFreq => "topup_freq",
            Channel::TopupAmount => "topup_amount",
            Channel::VoiceInFreq => "voice_in_freq",
            Channel::VoiceOutFreq => "voice_out_freq",
            Channel::VoiceInDur => "voice_in_dur",
            Channel::VoiceOutDur => "voice_out_dur",
            Channel::DataDownVol => "data_down_vol",
            Channel::DataUpVol => "data_up_vol",
            Channel::DataDownDur => "data_down_dur",
            Channel::DataUpDur => "data_up_dur",
            Channel::SmsIn => "sms_in",
            Channel::SmsOut => "sms_out",
        }
    }

    /// Voice channels are the only ones that can establish a last call.
    pub fn is_voice(self) -> bool {
        matches!(
            self,
            Channel::VoiceInFreq | Channel::VoiceOutFreq | Channel::VoiceInDur | Channel::VoiceOutDur
        )
    }

    pub fn is_data(self) -> bool {
        matches!(
            self,
            Channel::DataDownVol | Channel::DataUpVol | Channel::DataDownDur | Channel::DataUpDur
        )
    }

    pub fn is_topup(self) -> bool {
        matches!(self, Channel::TopupFreq | Channel::TopupAmount)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidEvent(format!("unknown channel {s:?}")))
    }
}

/// Ordered column layout of an image. The order is part of every file
/// format that stores images, so it never changes for a named set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub name: String,
    pub channels: Vec<Channel>,
}

impl ChannelSet {
    /// Ten columns: voice (4), data (4), SMS (2).
    pub fn dl1() -> Self {
        Self {
            name: "dl1".into(),
            channels: Channel::ALL[2..].to_vec(),
        }
    }

    /// The DL-1 columns preceded by top-up frequency and amount.
    pub fn dl2() -> Self {
        Self {
            name: "dl2".into(),
            channels: Channel::ALL.to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "dl1" => Ok(Self::dl1()),
            "dl2" => Ok(Self::dl2()),
            other => Err(Error::Config(format!("unknown channel set {other:?} (expected dl1 or dl2)"))),
        }
    }

    pub fn custom(name: &str, channels: Vec<Channel>) -> Result<Self> {
        let mut seen = channels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != channels.len() || channels.is_empty() {
            return Err(Error::Config("channel set must be nonempty with unique channels".into()));
        }
        Ok(Self {
            name: name.into(),
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn index_of(&self, channel: Channel) -> Option<usize> {
        self.channels.iter().position(|&c| c == channel)
    }

    pub fn contains(&self, channel: Channel) -> bool {
        self.index_of(channel).is_some()
    }

    /// Column indices whose channel satisfies `pred`.
    pub fn columns_where(&self, pred: impl Fn(Channel) -> bool) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| pred(self.channels[i])).collect()
    }
}

/// A customer's normalized image.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerImage {
    pub customer_id: String,
    /// days × channels × 1, values in [0, 1]
    pub pixels: Tensor,
    pub label: Option<u8>,
    pub predictor_window: DayRange,
}

/// Sums event values into a days × channels × 1 matrix, oldest day first.
/// Events outside the window are ignored; channels outside `channels` are
/// rejected.
pub fn rasterize(events: &[EventRecord], window: DayRange, channels: &ChannelSet) -> Result<Tensor> {
    let days = window.len();
    let cols = channels.len();
    let mut raw = vec![0.0; days * cols];
    for e in events {
        let col = channels.index_of(e.channel).ok_or_else(|| {
            Error::InvalidEvent(format!("channel {} is not part of the {} set", e.channel, channels.name))
        })?;
        if !window.contains(e.day) {
            continue;
        }
        let row = (e.day - window.start) as usize;
        raw[row * cols + col] += e.value;
    }
    Tensor::new(vec![days, cols, 1], raw)
}

/// Per-channel min / percentile bounds fitted on training matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub percentile: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Channels whose upper bound equals the lower bound; they map to 0.
    pub degenerate: Vec<bool>,
    /// Hash of the matrices the bounds were fitted on.
    pub fingerprint: u64,
}

impl Normalizer {
    pub fn channels(&self) -> usize {
        self.lower.len()
    }
}

/// Nearest-rank percentile of an unsorted slice: the value at 1-based rank
/// `ceil(p / 100 * n)`.
fn nearest_rank(values: &mut [f64], percentile: f64) -> f64 {
    let n = values.len();
    let rank = ((percentile / 100.0) * n as f64).ceil().max(1.0) as usize;
    let k = rank.min(n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Fits per-channel bounds over every cell of the given matrices. `lower`
/// is the channel minimum, `upper` its nearest-rank `percentile`.
pub fn fit_normalizer(raw: &[Tensor], percentile: f64) -> Result<Normalizer> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!("percentile {percentile} outside (0, 100]")));
    }
    let first = raw.first().ok_or_else(|| Error::Empty("no matrices to fit on".into()))?;
    let dims = first.dims3()?;
    let cols = dims.cols;
    let mut hasher = Fnv64::new();
    hasher.write_u64(raw.len() as u64);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(raw.len() * dims.rows); cols];
    for m in raw {
        if m.dims3()? != dims {
            return Err(Error::Shape(format!(
                "normalizer fit on mixed shapes: {:?} and {:?}",
                first.shape(),
                m.shape()
            )));
        }
        for (i, v) in m.data().iter().enumerate() {
            hasher.write_u64(v.to_bits());
            columns[i % cols].push(*v);
        }
    }
    let mut lower = Vec::with_capacity(cols);
    let mut upper = Vec::with_capacity(cols);
    for col in &mut columns {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nearest_rank(col, percentile);
        lower.push(lo);
        upper.push(hi.max(lo));
    }
    let degenerate = lower.iter().zip(&upper).map(|(l, u)| u <= l).collect();
    Ok(Normalizer {
        percentile,
        lower,
        upper,
        degenerate,
        fingerprint: hasher.finish(),
    })
}

/// `clamp((v - lower) / (upper - lower), 0, 1)` per channel; degenerate
/// channels become 0.
pub fn normalize(raw: &Tensor, normalizer: &Normalizer) -> Result<Tensor> {
    let dims = raw.dims3()?;
    if dims.cols != normalizer.channels() || dims.channels != 1 {
        return Err(Error::Shape(format!(
            "matrix has {} channels, normalizer has {}",
            dims.cols,
            normalizer.channels()
        )));
    }
    let mut out = raw.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % dims.cols;
        *v = if normalizer.degenerate[c] {
            0.0
        } else {
            ((*v - normalizer.lower[c]) / (normalizer.upper[c] - normalizer.lower[c])).clamp(0.0, 1.0)
        };
    }
    Ok(out)
}
