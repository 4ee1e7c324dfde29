use churn_core::architectures::build_dl1;
use churn_core::evaluation::auc;
use churn_core::imaging::ChannelSet;
use churn_core::pipeline::{prepare_population, split_and_normalize, tensors_and_labels, SplitConfig};
use churn_core::synth::{generate, label_fidelity_check, SynthConfig};
use churn_core::training::{predict, train, TrainConfig};

fn config() -> SynthConfig {
    SynthConfig {
        customer_count: 600,
        churn_rate: 0.2,
        seed: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn generated_labels_survive_assessment() {
    let cfg = config();
    let data = generate(&cfg).unwrap();
    assert_eq!(label_fidelity_check(&data.events, &data.labels, &cfg.ltl_config()).unwrap(), 1.0);
}

#[test]
fn events_to_scores() {
    let cfg = config();
    let data = generate(&cfg).unwrap();
    let prepared = prepare_population(&data.events, &cfg.ltl_config(), &ChannelSet::dl1()).unwrap();
    assert!(prepared.errors.is_empty());
    assert_eq!(prepared.tally.labeled(), prepared.labeled.len());
    let dataset = split_and_normalize(&prepared.labeled, &SplitConfig::default()).unwrap();
    let (x, y) = tensors_and_labels(&dataset.train).unwrap();
    let run = TrainConfig {
        epochs: 5,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (params, history) = train(&build_dl1(), &x, &y, &run).unwrap();
    assert_eq!(history.epochs.len(), 5);
    let (tx, ty) = tensors_and_labels(&dataset.test).unwrap();
    let scores = predict(&build_dl1(), &params, &tx).unwrap();
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    assert!(auc(&scores, &ty).unwrap() > 0.5);
}
