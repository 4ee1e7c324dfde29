//! Seeded synthetic event logs.
//!
//! Each customer gets an independent ChaCha8 stream (the run seed with the
//! customer index as stream id), so customers can be generated in any order
//! or in parallel and still come out identical. Four behavioural archetypes
//! are mixed: two that stay active and two that churn. Churners go silent
//! before the churn window opens; every labelled customer places at least
//! one voice event in the last-call window; excluded customers stop before
//! the last-call window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Channel;
use crate::ltl::{assess, group_by_customer, EventRecord, LtlConfig, LtlOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    BalancedActive,
    WeeklyCommuter,
    DecliningUser,
    DataOnlyAbandoner,
}

/// The label the generator intends `ltl::assess` to recover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntendedLabel {
    Active,
    Churned,
    Excluded,
}

impl IntendedLabel {
    /// Sidecar spelling: `0`, `1` or `excluded`.
    pub fn code(self) -> &'static str {
        match self {
            IntendedLabel::Active => "0",
            IntendedLabel::Churned => "1",
            IntendedLabel::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "0" => Ok(IntendedLabel::Active),
            "1" => Ok(IntendedLabel::Churned),
            "excluded" => Ok(IntendedLabel::Excluded),
            other => Err(Error::Config(format!("unknown label {other:?}"))),
        }
    }

    pub fn matches(self, outcome: &LtlOutcome) -> bool {
        matches!(
            (self, outcome.label()),
            (IntendedLabel::Active, Some(0)) | (IntendedLabel::Churned, Some(1)) | (IntendedLabel::Excluded, None)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub customer_count: usize,
    /// Churn probability among customers that are not excluded.
    pub churn_rate: f64,
    pub excluded_fraction: f64,
    pub seed: u64,
    /// Weight of `BalancedActive` among active customers; the rest are
    /// `WeeklyCommuter`.
    pub balanced_weight: f64,
    /// Weight of `DecliningUser` among churners; the rest are
    /// `DataOnlyAbandoner`.
    pub declining_weight: f64,
    pub horizon_days: u32,
    pub reference_day: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            customer_count: 1000,
            churn_rate: 0.0357,
            excluded_fraction: 0.02,
            seed: 42,
            balanced_weight: 0.6,
            declining_weight: 0.5,
            horizon_days: 120,
            reference_day: 119,
        }
    }
}

impl SynthConfig {
    /// Windows the generator builds timelines for.
    pub fn ltl_config(&self) -> LtlConfig {
        LtlConfig::standard(self.reference_day)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("churn rate", self.churn_rate)?;
        unit("excluded fraction", self.excluded_fraction)?;
        unit("balanced weight", self.balanced_weight)?;
        unit("declining weight", self.declining_weight)?;
        if self.churn_rate + self.excluded_fraction > 1.0 {
            return Err(Error::Config("churn rate plus excluded fraction exceeds 1".into()));
        }
        // The earliest predictor window starts 86 days before the reference day.
        let earliest_needed = self.reference_day - 86;
        if earliest_needed < 0 || self.reference_day >= i64::from(self.horizon_days) {
            return Err(Error::Config(format!(
                "reference day {} must lie in [86, horizon {})",
                self.reference_day, self.horizon_days
            )));
        }
        Ok(())
    }
}

/// Per-archetype behaviour; one row of [`PROFILES`].
#[derive(Debug, Clone, Copy)]
struct Profile {
    /// Mean calls per direction per day.
    calls: f64,
    /// Mean minutes per call.
    call_minutes: f64,
    /// Probability of a data session on a given day.
    data_prob: f64,
    data_down_mb: f64,
    data_up_mb: f64,
    data_down_min: f64,
    data_up_min: f64,
    /// Gamma shape for the data magnitudes; larger means steadier.
    data_shape: f64,
    sms_in: f64,
    sms_out: f64,
    topup_prob: f64,
    topup_amount: f64,
    /// Whether usage is scaled by a per-customer intensity drawn from
    /// Gamma(4, 0.25).
    heterogeneous: bool,
}

const PROFILES: [(Archetype, Profile); 4] = [
    (
        Archetype::BalancedActive,
        Profile {
            calls: 1.5,
            call_minutes: 3.0,
            data_prob: 0.6,
            data_down_mb: 150.0,
            data_up_mb: 30.0,
            data_down_min: 45.0,
            data_up_min: 15.0,
            data_shape: 2.0,
            sms_in: 2.0,
            sms_out: 1.0,
            topup_prob: 0.12,
            topup_amount: 100.0,
            heterogeneous: true,
        },
    ),
    (
        Archetype::WeeklyCommuter,
        Profile {
            calls: 1.8,
            call_minutes: 2.5,
            data_prob: 0.7,
            data_down_mb: 120.0,
            data_up_mb: 25.0,
            data_down_min: 40.0,
            data_up_min: 12.0,
            data_shape: 2.0,
            sms_in: 2.0,
            sms_out: 1.5,
            topup_prob: 0.15,
            topup_amount: 80.0,
            heterogeneous: true,
        },
    ),
    (
        Archetype::DecliningUser,
        Profile {
            calls: 1.5,
            call_minutes: 3.0,
            data_prob: 0.6,
            data_down_mb: 130.0,
            data_up_mb: 25.0,
            data_down_min: 40.0,
            data_up_min: 12.0,
            data_shape: 2.0,
            sms_in: 2.0,
            sms_out: 1.0,
            topup_prob: 0.12,
            topup_amount: 80.0,
            heterogeneous: true,
        },
    ),
    (
        Archetype::DataOnlyAbandoner,
        Profile {
            calls: 0.02,
            call_minutes: 1.0,
            data_prob: 0.97,
            data_down_mb: 420.0,
            data_up_mb: 85.0,
            data_down_min: 130.0,
            data_up_min: 40.0,
            data_shape: 10.0,
            sms_in: 2.0,
            sms_out: 1.5,
            topup_prob: 0.25,
            topup_amount: 60.0,
            heterogeneous: false,
        },
    ),
];

fn profile(archetype: Archetype) -> Profile {
    PROFILES
        .iter()
        .find(|(a, _)| *a == archetype)
        .map(|(_, p)| *p)
        .expect("every archetype has a profile")
}

/// Usage multiplier for a day. Commuters follow a 7-day cycle; declining
/// users fade towards zero at their last active day.
fn intensity(archetype: Archetype, day: i64, last_day: i64) -> f64 {
    match archetype {
        Archetype::WeeklyCommuter => {
            if day.rem_euclid(7) < 5 {
                1.4
            } else {
                0.3
            }
        }
        Archetype::DecliningUser => {
            let remaining = 1.0 - day as f64 / (last_day + 1) as f64;
            remaining.max(0.0).powf(1.5)
        }
        Archetype::BalancedActive | Archetype::DataOnlyAbandoner => 1.0,
    }
}

/// One generated customer.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCustomer {
    pub customer_id: String,
    pub archetype: Archetype,
    pub intended: IntendedLabel,
    /// Sorted by day, then channel.
    pub events: Vec<EventRecord>,
}

pub fn customer_id(index: usize) -> String {
    format!("c{index:07}")
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
}

fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, mean: f64) -> f64 {
    if shape <= 0.0 || mean <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, mean / shape).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// Magnitudes are kept to two decimals so event files stay compact.
fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

struct DayEvents<'a> {
    id: &'a str,
    day: i64,
    out: &'a mut Vec<EventRecord>,
}

impl DayEvents<'_> {
    fn push(&mut self, channel: Channel, value: f64) {
        if value > 0.0 {
            self.out.push(EventRecord {
                customer_id: self.id.to_string(),
                day: self.day,
                channel,
                value,
            });
        }
    }
}

/// Generates customer `index` of the run described by `config`.
pub fn generate_customer(config: &SynthConfig, index: usize) -> SynthCustomer {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let id = customer_id(index);
    let r = config.reference_day;
    let ltl = config.ltl_config();
    let last_call = ltl.last_call_window();

    let intended = if rng.random::<f64>() < config.excluded_fraction {
        IntendedLabel::Excluded
    } else if rng.random::<f64>() < config.churn_rate {
        IntendedLabel::Churned
    } else {
        IntendedLabel::Active
    };
    let archetype = match intended {
        IntendedLabel::Active | IntendedLabel::Excluded => {
            if rng.random::<f64>() < config.balanced_weight {
                Archetype::BalancedActive
            } else {
                Archetype::WeeklyCommuter
            }
        }
        IntendedLabel::Churned => {
            if rng.random::<f64>() < config.declining_weight {
                Archetype::DecliningUser
            } else {
                Archetype::DataOnlyAbandoner
            }
        }
    };
    let last_day = match intended {
        IntendedLabel::Active => r,
        IntendedLabel::Churned => last_call.end - rng.random_range(0..7),
        IntendedLabel::Excluded => last_call.start - 1 - rng.random_range(0..21),
    };
    let p = profile(archetype);
    let scale = if p.heterogeneous { gamma(&mut rng, 4.0, 1.0) } else { 1.0 };

    let mut events = Vec::new();
    for day in 0..=last_day {
        let m = intensity(archetype, day, last_day);
        let mut out = DayEvents {
            id: &id,
            day,
            out: &mut events,
        };
        let topup = rng.random::<f64>() < (p.topup_prob * m.min(1.0));
        if topup {
            out.push(Channel::TopupFreq, 1.0);
            out.push(Channel::TopupAmount, round2(gamma(&mut rng, 4.0, p.topup_amount)));
        }
        let calls_in = poisson(&mut rng, p.calls * m * scale);
        let calls_out = poisson(&mut rng, p.calls * m * scale);
        out.push(Channel::VoiceInFreq, calls_in);
        out.push(Channel::VoiceOutFreq, calls_out);
        if calls_in > 0.0 {
            out.push(Channel::VoiceInDur, round2(gamma(&mut rng, 2.0 * calls_in, p.call_minutes * calls_in)));
        }
        if calls_out > 0.0 {
            out.push(Channel::VoiceOutDur, round2(gamma(&mut rng, 2.0 * calls_out, p.call_minutes * calls_out)));
        }
        if rng.random::<f64>() < (p.data_prob * m).min(1.0) {
            let k = p.data_shape;
            out.push(Channel::DataDownVol, round2(gamma(&mut rng, k, p.data_down_mb * scale)));
            out.push(Channel::DataUpVol, round2(gamma(&mut rng, k, p.data_up_mb * scale)));
            out.push(Channel::DataDownDur, round2(gamma(&mut rng, k, p.data_down_min * scale)));
            out.push(Channel::DataUpDur, round2(gamma(&mut rng, k, p.data_up_min * scale)));
        }
        // Incoming SMS is mostly marketing and does not follow the customer's own usage.
        out.push(Channel::SmsIn, poisson(&mut rng, p.sms_in));
        out.push(Channel::SmsOut, poisson(&mut rng, p.sms_out * m * scale));
    }
    if intended != IntendedLabel::Excluded {
        let window_end = last_call.end.min(last_day);
        let has_call = events
            .iter()
            .any(|e| e.channel.is_voice() && e.value > 0.0 && (last_call.start..=window_end).contains(&e.day));
        if !has_call {
            let day = rng.random_range(last_call.start..=window_end);
            let minutes = round2(gamma(&mut rng, 2.0, p.call_minutes)).max(0.01);
            events.push(EventRecord {
                customer_id: id.clone(),
                day,
                channel: Channel::VoiceOutFreq,
                value: 1.0,
            });
            events.push(EventRecord {
                customer_id: id.clone(),
                day,
                channel: Channel::VoiceOutDur,
                value: minutes,
            });
        }
    }
    if intended == IntendedLabel::Active {
        let churn_window = ltl.churn_window();
        if !events.iter().any(|e| e.value > 0.0 && churn_window.contains(e.day)) {
            events.push(EventRecord {
                customer_id: id.clone(),
                day: r,
                channel: Channel::SmsIn,
                value: 1.0,
            });
        }
    }
    events.sort_by_key(|e| (e.day, e.channel));
    SynthCustomer {
        customer_id: id,
        archetype,
        intended,
        events,
    }
}

/// Generates customers `range` in parallel, returned in index order.
pub fn generate_customers(config: &SynthConfig, range: std::ops::Range<usize>) -> Result<Vec<SynthCustomer>> {
    config.validate()?;
    Ok(range.into_par_iter().map(|i| generate_customer(config, i)).collect())
}

/// A full generated run: the event stream and the intended-label sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Sorted by customer, then day, then channel.
    pub events: Vec<EventRecord>,
    pub labels: Vec<(String, IntendedLabel)>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let customers = generate_customers(config, 0..config.customer_count)?;
    let mut events = Vec::with_capacity(customers.iter().map(|c| c.events.len()).sum());
    let mut labels = Vec::with_capacity(customers.len());
    for c in customers {
        labels.push((c.customer_id, c.intended));
        events.extend(c.events);
    }
    Ok(SynthData { events, labels })
}

/// Fraction of customers whose assessed outcome equals the intended label.
/// Customers listed in `labels` without any events are assessed on an
/// empty timeline. An empty label list agrees vacuously.
pub fn label_fidelity_check(
    events: &[EventRecord],
    labels: &[(String, IntendedLabel)],
    config: &LtlConfig,
) -> Result<f64> {
    if labels.is_empty() {
        return Ok(1.0);
    }
    let groups = group_by_customer(events);
    let mut agree = 0usize;
    for (id, intended) in labels {
        let owned: Vec<EventRecord> = groups
            .get(id.as_str())
            .map(|g| g.iter().map(|e| (*e).clone()).collect())
            .unwrap_or_default();
        if intended.matches(&assess(&owned, config)?) {
            agree += 1;
        }
    }
    Ok(agree as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> SynthConfig {
        SynthConfig {
            customer_count: count,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_churn_no_exclusion_labels_everyone_active() {
        let config = SynthConfig {
            churn_rate: 0.0,
            excluded_fraction: 0.0,
            ..small(300)
        };
        let data = generate(&config).unwrap();
        let pop = crate::ltl::assess_population(&data.events, &config.ltl_config()).unwrap();
        assert_eq!(pop.tally.active, 300);
        assert_eq!(pop.tally.churned + pop.tally.excluded, 0);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let config = small(200);
        assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
        assert_eq!(generate_customer(&config, 150), generate_customers(&config, 0..200).unwrap()[150]);
    }

    #[test]
    fn stream_is_customer_sorted() {
        let data = generate(&small(50)).unwrap();
        for w in data.events.windows(2) {
            assert!((&w[0].customer_id, w[0].day) <= (&w[1].customer_id, w[1].day));
        }
        assert_eq!(data.labels.len(), 50);
    }

    #[test]
    fn fidelity_is_exact_by_construction() {
        let config = SynthConfig {
            churn_rate: 0.2,
            excluded_fraction: 0.1,
            ..small(500)
        };
        let data = generate(&config).unwrap();
        assert_eq!(label_fidelity_check(&data.events, &data.labels, &config.ltl_config()).unwrap(), 1.0);
    }

    #[test]
    fn deleting_last_call_flips_to_excluded() {
        let config = small(100);
        let mut data = generate(&config).unwrap();
        let (victim, _) = data.labels.iter().find(|(_, l)| *l != IntendedLabel::Excluded).unwrap().clone();
        let lc = config.ltl_config().last_call_window();
        data.events
            .retain(|e| !(e.customer_id == victim && e.channel.is_voice() && lc.contains(e.day)));
        let rate = label_fidelity_check(&data.events, &data.labels, &config.ltl_config()).unwrap();
        assert!(rate < 1.0);
        assert_eq!(rate, 0.99);
    }

    #[test]
    fn empty_stream_agrees_vacuously() {
        assert_eq!(label_fidelity_check(&[], &[], &LtlConfig::standard(119)).unwrap(), 1.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SynthConfig { churn_rate: 1.5, ..small(1) }.validate().is_err());
        assert!(SynthConfig { churn_rate: 0.7, excluded_fraction: 0.5, ..small(1) }.validate().is_err());
        assert!(SynthConfig { reference_day: 50, ..small(1) }.validate().is_err());
        assert!(SynthConfig { reference_day: 120, ..small(1) }.validate().is_err());
    }
}
