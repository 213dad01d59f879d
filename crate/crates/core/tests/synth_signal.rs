use std::collections::HashMap;

use rebaseline::experiment::{ExperimentSettings, Preset};
use rebaseline::marking::{MarkingScheme, SchemeKind};
use rebaseline::synth::{generate, masked_ceiling, type_marginal_ceiling, NameRuleKey, SynthConfig};
use rebaseline::train::{evaluate, prepare, train_run};

fn sized(seed: u64) -> SynthConfig {
    SynthConfig {
        train_size: 800,
        dev_size: 200,
        test_size: 300,
        seed,
        ..SynthConfig::default()
    }
}

/// Majority label per (type pair, subject family) learned on `train`,
/// scored on test_unseen, next to the best types-only accuracy there.
fn name_lookup_accuracy(cfg: &SynthConfig) -> (f64, f64) {
    let corpus = generate(cfg).unwrap();
    let key = |i: &rebaseline::RelationInstance| {
        (
            i.subj_type.clone(),
            i.obj_type.clone(),
            i.tokens[i.subj_span.start].clone(),
        )
    };
    let mut counts: HashMap<_, HashMap<String, usize>> = HashMap::new();
    for inst in &corpus.train.instances {
        *counts
            .entry(key(inst))
            .or_default()
            .entry(inst.relation.clone())
            .or_default() += 1;
    }
    let majority: HashMap<_, String> = counts
        .into_iter()
        .map(|(k, c)| {
            (
                k,
                c.into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0,
            )
        })
        .collect();
    let test = &corpus.test_unseen;
    let hits = test
        .instances
        .iter()
        .filter(|i| majority.get(&key(i)) == Some(&i.relation))
        .count();
    (hits as f64 / test.len() as f64, type_marginal_ceiling(test))
}

#[test]
fn names_carry_nothing_without_name_signal() {
    let cfg = SynthConfig {
        name_signal: 0.0,
        ..sized(3)
    };
    let (acc, types_only) = name_lookup_accuracy(&cfg);
    assert!(
        acc <= types_only + 0.05,
        "name lookup accuracy {acc} vs types-only ceiling {types_only}"
    );
}

#[test]
fn names_carry_the_label_with_full_name_signal() {
    let cfg = SynthConfig {
        name_signal: 1.0,
        ..sized(3)
    };
    let (acc, types_only) = name_lookup_accuracy(&cfg);
    assert!(
        acc > types_only + 0.1,
        "name lookup accuracy {acc} vs types-only ceiling {types_only}"
    );
}

#[test]
fn entity_mask_stays_under_type_marginal_ceiling() {
    let cfg = SynthConfig {
        name_signal: 1.0,
        name_rule_key: NameRuleKey::Identity,
        ..sized(11)
    };
    let corpus = generate(&cfg).unwrap();
    let ceiling = type_marginal_ceiling(&corpus.test_unseen);
    assert_eq!(masked_ceiling(&corpus.test_unseen).unwrap(), ceiling);

    let settings = ExperimentSettings::preset(Preset::UnseenNames);
    let scheme = MarkingScheme::new(SchemeKind::EntityMask);
    let out = train_run(&corpus.train, &corpus.dev, &scheme, &settings.model, &settings.train, 1).unwrap();
    let split = prepare(&corpus.test_unseen, &scheme, &out.vocab, settings.model.max_len).unwrap();
    let (report, _) = evaluate(&out.params, &split, &corpus.test_unseen.schema).unwrap();
    assert!(
        report.accuracy <= ceiling,
        "accuracy {} above ceiling {ceiling}",
        report.accuracy
    );
}
