//! Event streams to normalized train and test images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{fit_normalizer, normalize, rasterize, ChannelSet, CustomerImage, Normalizer};
use crate::ltl::{assess, group_by_customer, DayRange, EventRecord, Exclusion, LtlConfig, LtlOutcome, Tally};
use crate::tensor::Tensor;
use crate::training::stratified_split_indices;

/// A labelled customer's un-normalized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub customer_id: String,
    pub raw: Tensor,
    pub label: u8,
    pub predictor_window: DayRange,
}

/// Per-customer result of [`prepare_customer`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCustomer {
    pub outcome: LtlOutcome,
    /// Present only for labelled customers.
    pub raw: Option<Tensor>,
    /// Events on channels outside the image's channel set.
    pub ignored_events: usize,
}

/// Labels one customer from all of its events, then rasterizes the
/// predictor window over the channels in `channels`. Events on other
/// channels still count towards labelling but are left out of the image.
pub fn prepare_customer(events: &[EventRecord], ltl: &LtlConfig, channels: &ChannelSet) -> Result<PreparedCustomer> {
    let outcome = assess(events, ltl)?;
    let in_set: Vec<EventRecord> = events.iter().filter(|e| channels.contains(e.channel)).cloned().collect();
    let ignored_events = events.len() - in_set.len();
    let raw = match outcome.predictor_window() {
        Some(window) => Some(rasterize(&in_set, window, channels)?),
        None => None,
    };
    Ok(PreparedCustomer {
        outcome,
        raw,
        ignored_events,
    })
}

/// Everything [`prepare_population`] learned about a stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreparedPopulation {
    /// Sorted by customer id.
    pub labeled: Vec<RawImage>,
    pub excluded: Vec<(String, Exclusion)>,
    pub tally: Tally,
    pub ignored_events: usize,
    /// Customers whose events were malformed, with the reason.
    pub errors: Vec<(String, String)>,
}

pub fn prepare_population(events: &[EventRecord], ltl: &LtlConfig, channels: &ChannelSet) -> Result<PreparedPopulation> {
    ltl.validate()?;
    let mut out = PreparedPopulation::default();
    for (id, group) in group_by_customer(events) {
        let owned: Vec<EventRecord> = group.into_iter().cloned().collect();
        let prepared = match prepare_customer(&owned, ltl, channels) {
            Ok(p) => p,
            Err(e) => {
                out.errors.push((id.to_string(), e.to_string()));
                continue;
            }
        };
        out.tally.add(&prepared.outcome);
        out.ignored_events += prepared.ignored_events;
        match (prepared.outcome, prepared.raw) {
            (
                LtlOutcome::Labeled {
                    label,
                    predictor_window,
                    ..
                },
                Some(raw),
            ) => out.labeled.push(RawImage {
                customer_id: id.to_string(),
                raw,
                label,
                predictor_window,
            }),
            (LtlOutcome::Excluded(reason), _) => out.excluded.push((id.to_string(), reason)),
            (LtlOutcome::Labeled { .. }, None) => unreachable!("labelled customers always get a matrix"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            percentile: 99.0,
            seed: 42,
        }
    }
}

/// Normalized train and test images plus the bounds fitted on train.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<CustomerImage>,
    pub test: Vec<CustomerImage>,
    pub normalizer: Normalizer,
}

fn normalized(raw: &RawImage, normalizer: &Normalizer) -> Result<CustomerImage> {
    Ok(CustomerImage {
        customer_id: raw.customer_id.clone(),
        pixels: normalize(&raw.raw, normalizer)?,
        label: Some(raw.label),
        predictor_window: raw.predictor_window,
    })
}

/// Stratified split, then normalization with bounds fitted on the train
/// side only.
pub fn split_and_normalize(labeled: &[RawImage], config: &SplitConfig) -> Result<Dataset> {
    if labeled.is_empty() {
        return Err(Error::Empty("no labelled customers".into()));
    }
    let labels: Vec<u8> = labeled.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = stratified_split_indices(&labels, config.train_ratio, config.seed)?;
    let train_raw: Vec<Tensor> = train_idx.iter().map(|&i| labeled[i].raw.clone()).collect();
    let normalizer = fit_normalizer(&train_raw, config.percentile)?;
    let train = train_idx
        .iter()
        .map(|&i| normalized(&labeled[i], &normalizer))
        .collect::<Result<_>>()?;
    let test = test_idx
        .iter()
        .map(|&i| normalized(&labeled[i], &normalizer))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        train,
        test,
        normalizer,
    })
}

/// Pixels and labels in the form the trainer takes.
pub fn tensors_and_labels(images: &[CustomerImage]) -> Result<(Vec<Tensor>, Vec<u8>)> {
    let mut tensors = Vec::with_capacity(images.len());
    let mut labels = Vec::with_capacity(images.len());
    for img in images {
        let label = img
            .label
            .ok_or_else(|| Error::Config(format!("customer {} has no label", img.customer_id)))?;
        tensors.push(img.pixels.clone());
        labels.push(label);
    }
    Ok((tensors, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Channel;

    fn ev(id: &str, day: i64, channel: Channel, value: f64) -> EventRecord {
        EventRecord {
            customer_id: id.into(),
            day,
            channel,
            value,
        }
    }

    #[test]
    fn out_of_set_channels_label_but_do_not_rasterize() {
        let ltl = LtlConfig::standard(119);
        // Voice call in the last-call window, top-up only in the churn window.
        let events = vec![
            ev("a", 80, Channel::VoiceOutFreq, 1.0),
            ev("a", 60, Channel::TopupAmount, 50.0),
            ev("a", 100, Channel::TopupFreq, 1.0),
        ];
        let p = prepare_customer(&events, &ltl, &ChannelSet::dl1()).unwrap();
        assert_eq!(p.outcome.label(), Some(0));
        assert_eq!(p.ignored_events, 2);
        let raw = p.raw.unwrap();
        assert_eq!(raw.shape(), &[30, 10, 1]);
        assert_eq!(raw.data().iter().sum::<f64>(), 0.0);

        let p2 = prepare_customer(&events, &ltl, &ChannelSet::dl2()).unwrap();
        assert_eq!(p2.ignored_events, 0);
        assert_eq!(p2.raw.unwrap().data().iter().sum::<f64>(), 50.0);
    }

    #[test]
    fn population_groups_and_tallies() {
        let ltl = LtlConfig::standard(119);
        let events = vec![
            ev("b", 80, Channel::VoiceInFreq, 1.0),
            ev("a", 80, Channel::VoiceInFreq, 1.0),
            ev("a", 110, Channel::SmsOut, 1.0),
            ev("c", 10, Channel::SmsOut, 1.0),
            ev("d", 80, Channel::VoiceInFreq, -1.0),
        ];
        let pop = prepare_population(&events, &ltl, &ChannelSet::dl2()).unwrap();
        assert_eq!(
            pop.tally,
            Tally {
                active: 1,
                churned: 1,
                excluded: 1
            }
        );
        let ids: Vec<_> = pop.labeled.iter().map(|r| (r.customer_id.as_str(), r.label)).collect();
        assert_eq!(ids, vec![("a", 0), ("b", 1)]);
        assert_eq!(pop.excluded, vec![("c".to_string(), Exclusion::NoLastCall)]);
        assert_eq!(pop.errors.len(), 1);
    }

    #[test]
    fn normalizer_sees_train_only() {
        let mk = |id: &str, v: f64, label: u8| RawImage {
            customer_id: id.into(),
            raw: Tensor::filled(vec![2, 1, 1], v),
            label,
            predictor_window: DayRange::new(0, 1),
        };
        let labeled: Vec<RawImage> = (0..10)
            .map(|i| mk(&format!("n{i}"), i as f64, 0))
            .chain((0..10).map(|i| mk(&format!("p{i}"), 100.0 + i as f64, 1)))
            .collect();
        let config = SplitConfig {
            train_ratio: 0.5,
            percentile: 100.0,
            seed: 7,
        };
        let ds = split_and_normalize(&labeled, &config).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (10, 10));
        let train_raw: Vec<f64> = ds
            .train
            .iter()
            .map(|img| labeled.iter().find(|r| r.customer_id == img.customer_id).unwrap().raw.data()[0])
            .collect();
        let lo = train_raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(ds.normalizer.lower, vec![lo]);
        assert_eq!(ds.normalizer.upper, vec![hi]);
        let (x, y) = tensors_and_labels(&ds.test).unwrap();
        assert_eq!(x.len(), 10);
        assert_eq!(y.iter().filter(|&&l| l == 1).count(), 5);
    }
}
