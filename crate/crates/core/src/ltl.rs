//! Lifetime-line labelling.
//!
//! Counting back from the reference day `r` with the default lengths:
//!
//! ```text
//! predictor window      gap            last-call window   churn window
//! [lc-43, lc-14]   (lc-13 .. lc)       [r-43, r-30]       [r-29, r]
//! ```
//!
//! Any event with a positive value in the churn window labels the customer
//! active (0), otherwise churned (1). The last call is the latest positive
//! voice event in the last-call window; without one the customer is
//! excluded. Every range is inclusive and counted in whole days.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Channel;

/// One dated usage observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub customer_id: String,
    pub day: i64,
    pub channel: Channel,
    pub value: f64,
}

impl EventRecord {
    pub fn is_activity(&self) -> bool {
        self.value > 0.0
    }
}

/// Inclusive range of day indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DayRange {
    pub start: i64,
    pub end: i64,
}

impl DayRange {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, day: i64) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn overlaps(&self, other: &DayRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LtlConfig {
    pub churn_window_days: u32,
    pub last_call_window_days: u32,
    pub gap_days: u32,
    pub predictor_window_days: u32,
    pub reference_day: i64,
    /// First day for which data exists. Customers whose predictor window
    /// would start before it are excluded.
    #[serde(default)]
    pub earliest_day: Option<i64>,
}

impl LtlConfig {
    /// 30-day churn window, 14-day last-call window, 14-day gap, 30-day
    /// predictor window.
    pub fn standard(reference_day: i64) -> Self {
        Self {
            churn_window_days: 30,
            last_call_window_days: 14,
            gap_days: 14,
            predictor_window_days: 30,
            reference_day,
            earliest_day: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.churn_window_days == 0 || self.last_call_window_days == 0 || self.predictor_window_days == 0 {
            return Err(Error::Config("window lengths must be at least 1 day".into()));
        }
        Ok(())
    }

    pub fn churn_window(&self) -> DayRange {
        let r = self.reference_day;
        DayRange::new(r - i64::from(self.churn_window_days) + 1, r)
    }

    pub fn last_call_window(&self) -> DayRange {
        let end = self.churn_window().start - 1;
        DayRange::new(end - i64::from(self.last_call_window_days) + 1, end)
    }

    pub fn predictor_window(&self, last_call_day: i64) -> DayRange {
        let end = last_call_day - i64::from(self.gap_days);
        DayRange::new(end - i64::from(self.predictor_window_days) + 1, end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// No voice activity in the last-call window.
    NoLastCall,
    /// The predictor window starts before the earliest available day.
    BeforeData,
}

impl Exclusion {
    pub fn code(self) -> &'static str {
        match self {
            Exclusion::NoLastCall => "no_last_call",
            Exclusion::BeforeData => "before_data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LtlOutcome {
    Labeled {
        label: u8,
        last_call_day: i64,
        predictor_window: DayRange,
    },
    Excluded(Exclusion),
}

impl LtlOutcome {
    pub fn label(&self) -> Option<u8> {
        match self {
            LtlOutcome::Labeled { label, .. } => Some(*label),
            LtlOutcome::Excluded(_) => None,
        }
    }

    pub fn predictor_window(&self) -> Option<DayRange> {
        match self {
            LtlOutcome::Labeled { predictor_window, .. } => Some(*predictor_window),
            LtlOutcome::Excluded(_) => None,
        }
    }
}

fn check_event(e: &EventRecord) -> Result<()> {
    if !(e.value >= 0.0 && e.value.is_finite()) {
        return Err(Error::InvalidEvent(format!(
            "customer {} day {} {}: value {} is not a nonnegative number",
            e.customer_id, e.day, e.channel, e.value
        )));
    }
    Ok(())
}

/// Labels one customer's timeline.
pub fn assess(events: &[EventRecord], config: &LtlConfig) -> Result<LtlOutcome> {
    config.validate()?;
    if let Some(first) = events.first() {
        if let Some(other) = events.iter().find(|e| e.customer_id != first.customer_id) {
            return Err(Error::InvalidEvent(format!(
                "assess got events for {} and {}",
                first.customer_id, other.customer_id
            )));
        }
    }
    for e in events {
        check_event(e)?;
    }

    let last_call_window = config.last_call_window();
    let last_call = events
        .iter()
        .filter(|e| e.is_activity() && e.channel.is_voice() && last_call_window.contains(e.day))
        .map(|e| e.day)
        .max();
    let Some(last_call_day) = last_call else {
        return Ok(LtlOutcome::Excluded(Exclusion::NoLastCall));
    };
    let predictor_window = config.predictor_window(last_call_day);
    if matches!(config.earliest_day, Some(first) if predictor_window.start < first) {
        return Ok(LtlOutcome::Excluded(Exclusion::BeforeData));
    }

    let churn_window = config.churn_window();
    let active = events.iter().any(|e| e.is_activity() && churn_window.contains(e.day));
    Ok(LtlOutcome::Labeled {
        label: if active { 0 } else { 1 },
        last_call_day,
        predictor_window,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub active: usize,
    pub churned: usize,
    pub excluded: usize,
}

impl Tally {
    pub fn labeled(&self) -> usize {
        self.active + self.churned
    }

    pub fn add(&mut self, outcome: &LtlOutcome) {
        match outcome.label() {
            Some(0) => self.active += 1,
            Some(_) => self.churned += 1,
            None => self.excluded += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationAssessment {
    /// One entry per customer, sorted by customer id.
    pub outcomes: Vec<(String, LtlOutcome)>,
    pub tally: Tally,
    /// Customers whose events could not be assessed, with the reason.
    pub errors: Vec<(String, String)>,
}

/// Groups events by customer (sorted by id) without copying them.
pub fn group_by_customer(events: &[EventRecord]) -> BTreeMap<&str, Vec<&EventRecord>> {
    let mut groups: BTreeMap<&str, Vec<&EventRecord>> = BTreeMap::new();
    for e in events {
        groups.entry(e.customer_id.as_str()).or_default().push(e);
    }
    groups
}

/// Runs [`assess`] on every customer in the stream.
pub fn assess_population(events: &[EventRecord], config: &LtlConfig) -> Result<PopulationAssessment> {
    config.validate()?;
    let mut result = PopulationAssessment::default();
    for (id, group) in group_by_customer(events) {
        let owned: Vec<EventRecord> = group.into_iter().cloned().collect();
        match assess(&owned, config) {
            Ok(outcome) => {
                result.tally.add(&outcome);
                result.outcomes.push((id.to_string(), outcome));
            }
            Err(e) => result.errors.push((id.to_string(), e.to_string())),
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(id: &str, day: i64, channel: Channel) -> EventRecord {
        EventRecord {
            customer_id: id.into(),
            day,
            channel,
            value: 1.0,
        }
    }

    fn cfg() -> LtlConfig {
        LtlConfig::standard(100)
    }

    #[test]
    fn windows_at_reference_100() {
        let c = cfg();
        assert_eq!(c.churn_window(), DayRange::new(71, 100));
        assert_eq!(c.last_call_window(), DayRange::new(57, 70));
        assert_eq!(c.predictor_window(60), DayRange::new(17, 46));
    }

    #[test]
    fn active_customer() {
        let events = [ev("a", 85, Channel::VoiceOutFreq), ev("a", 60, Channel::VoiceOutFreq)];
        assert_eq!(
            assess(&events, &cfg()).unwrap(),
            LtlOutcome::Labeled {
                label: 0,
                last_call_day: 60,
                predictor_window: DayRange::new(17, 46)
            }
        );
    }

    #[test]
    fn churned_customer() {
        let events = [ev("b", 60, Channel::VoiceInFreq), ev("b", 30, Channel::SmsIn)];
        assert_eq!(
            assess(&events, &cfg()).unwrap(),
            LtlOutcome::Labeled {
                label: 1,
                last_call_day: 60,
                predictor_window: DayRange::new(17, 46)
            }
        );
    }

    #[test]
    fn excluded_customer() {
        let events = [ev("c", 50, Channel::VoiceOutDur)];
        assert_eq!(assess(&events, &cfg()).unwrap(), LtlOutcome::Excluded(Exclusion::NoLastCall));
        assert_eq!(assess(&[], &cfg()).unwrap(), LtlOutcome::Excluded(Exclusion::NoLastCall));
    }

    #[test]
    fn sms_and_data_cannot_be_a_last_call() {
        let events = [ev("d", 65, Channel::SmsOut), ev("d", 66, Channel::DataDownVol), ev("d", 90, Channel::SmsIn)];
        assert_eq!(assess(&events, &cfg()).unwrap(), LtlOutcome::Excluded(Exclusion::NoLastCall));
    }

    #[test]
    fn zero_values_are_not_activity() {
        let mut call = ev("e", 60, Channel::VoiceOutFreq);
        let mut late = ev("e", 90, Channel::SmsIn);
        late.value = 0.0;
        assert_eq!(assess(&[call.clone(), late.clone()], &cfg()).unwrap().label(), Some(1));
        call.value = 0.0;
        assert_eq!(assess(&[call, late], &cfg()).unwrap(), LtlOutcome::Excluded(Exclusion::NoLastCall));
    }

    #[test]
    fn data_edge_exclusion() {
        let mut c = cfg();
        c.earliest_day = Some(18);
        let events = [ev("f", 60, Channel::VoiceOutFreq)];
        assert_eq!(assess(&events, &c).unwrap(), LtlOutcome::Excluded(Exclusion::BeforeData));
        c.earliest_day = Some(17);
        assert!(assess(&events, &c).unwrap().label().is_some());
    }

    #[test]
    fn rejects_bad_input() {
        let mut bad = ev("g", 60, Channel::VoiceOutFreq);
        bad.value = -1.0;
        assert!(assess(&[bad], &cfg()).is_err());
        assert!(assess(&[ev("g", 60, Channel::SmsIn), ev("h", 60, Channel::SmsIn)], &cfg()).is_err());
        let mut c = cfg();
        c.predictor_window_days = 0;
        assert!(assess(&[], &c).is_err());
    }

    #[test]
    fn population_counts() {
        assert_eq!(assess_population(&[], &cfg()).unwrap().tally, Tally::default());

        let events = vec![
            ev("c3", 50, Channel::VoiceOutFreq),
            ev("c1", 85, Channel::VoiceOutFreq),
            ev("c1", 60, Channel::VoiceOutFreq),
            ev("c2", 60, Channel::VoiceInFreq),
        ];
        let pop = assess_population(&events, &cfg()).unwrap();
        assert_eq!(pop.tally, Tally { active: 1, churned: 1, excluded: 1 });
        let ids: Vec<&str> = pop.outcomes.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["c1", "c2", "c3"]);

        let mut dup = events.clone();
        dup.extend(events.iter().cloned());
        assert_eq!(assess_population(&dup, &cfg()).unwrap().outcomes, pop.outcomes);
    }

    #[test]
    fn population_reports_and_skips_bad_customers() {
        let mut bad = ev("x", 60, Channel::VoiceOutFreq);
        bad.value = f64::NAN;
        let pop = assess_population(&[bad, ev("y", 60, Channel::VoiceOutFreq)], &cfg()).unwrap();
        assert_eq!(pop.errors.len(), 1);
        assert_eq!(pop.errors[0].0, "x");
        assert_eq!(pop.tally.churned, 1);
    }

    fn timeline() -> impl Strategy<Value = Vec<EventRecord>> {
        proptest::collection::vec((0i64..110, 0usize..12, 0u8..3), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(day, c, val)| EventRecord {
                    customer_id: "p".into(),
                    day,
                    channel: Channel::ALL[c],
                    value: f64::from(val),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn churn_window_fence(offset in 0i64..60) {
            let call = ev("p", 60, Channel::VoiceOutFreq);
            let probe = ev("p", 100 - offset, Channel::SmsIn);
            let label = assess(&[call, probe], &cfg()).unwrap().label().unwrap();
            prop_assert_eq!(label == 0, offset <= 29);
        }

        #[test]
        fn windows_never_overlap(events in timeline()) {
            let c = cfg();
            if let LtlOutcome::Labeled { last_call_day, predictor_window, .. } = assess(&events, &c).unwrap() {
                prop_assert!(!predictor_window.overlaps(&c.churn_window()));
                prop_assert!(!predictor_window.overlaps(&c.last_call_window()));
                prop_assert!(predictor_window.end <= last_call_day - 14);
                prop_assert_eq!(predictor_window.len(), 30);
            }
        }

        #[test]
        fn removing_last_call_voice_excludes(events in timeline()) {
            let c = cfg();
            if assess(&events, &c).unwrap().label().is_some() {
                let lc = c.last_call_window();
                let stripped: Vec<EventRecord> = events
                    .into_iter()
                    .filter(|e| !(e.channel.is_voice() && lc.contains(e.day)))
                    .collect();
                prop_assert_eq!(assess(&stripped, &c).unwrap(), LtlOutcome::Excluded(Exclusion::NoLastCall));
            }
        }
    }
}
