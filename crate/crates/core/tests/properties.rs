use std::collections::BTreeSet;

use proptest::prelude::*;
use rebaseline::corpus::{compute_statistics, dataset_from_records, load_dataset, parse_jsonl, LoadOptions};
use rebaseline::eval::{build_filtered, score};
use rebaseline::marking::{head_indices, mark, type_label_words, MaskMode, Provenance};
use rebaseline::synth::{generate, inject_noise, NoiseMode, SynthConfig};
use rebaseline::tokenize::{build_vocab, subtokenize, VocabOptions};
use rebaseline::train::{lr_at, median_f1, TrainConfig};
use rebaseline::{Dataset, LabelSchema, MarkingScheme, MatchRule, RelationInstance, SchemeKind, Span};

const TYPES: [&str; 5] = ["PERSON", "CITY", "ORGANIZATION", "STATE_OR_PROVINCE", "DATE"];
const LABELS: [&str; 4] = ["no_relation", "per:title", "org:founded", "per:origin"];

fn schema() -> LabelSchema {
    LabelSchema::new(LABELS, "no_relation").unwrap()
}

/// Two disjoint spans over `n` tokens, in either order.
fn spans(n: usize) -> impl Strategy<Value = (Span, Span)> {
    (prop::collection::vec(0..n, 4), any::<bool>()).prop_filter_map("spans must be disjoint", |(mut cuts, swap)| {
        cuts.sort_unstable();
        let (a, b) = (Span::new(cuts[0], cuts[1]), Span::new(cuts[2], cuts[3]));
        (cuts[1] < cuts[2]).then_some(if swap { (b, a) } else { (a, b) })
    })
}

fn instance() -> impl Strategy<Value = RelationInstance> {
    (2usize..12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec("[a-zA-Z]{1,6}", n),
                spans(n),
                prop::sample::select(TYPES.to_vec()),
                prop::sample::select(TYPES.to_vec()),
                prop::sample::select(LABELS.to_vec()),
                "[a-z0-9]{1,8}",
            )
        })
        .prop_map(|(tokens, (subj_span, obj_span), st, ot, rel, id)| RelationInstance {
            id,
            tokens,
            subj_span,
            obj_span,
            subj_type: st.into(),
            obj_type: ot.into(),
            relation: rel.into(),
        })
}

fn dataset(max: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(instance(), 0..max).prop_map(|mut instances| {
        for (i, inst) in instances.iter_mut().enumerate() {
            inst.id = format!("{i}-{}", inst.id);
        }
        Dataset::new("split", instances, schema()).unwrap()
    })
}

fn scheme() -> impl Strategy<Value = MarkingScheme> {
    (prop::sample::select(SchemeKind::ALL.to_vec()), any::<bool>()).prop_map(|(kind, repeat)| {
        let mode = if repeat { MaskMode::Repeat } else { MaskMode::Collapse };
        MarkingScheme::new(kind).with_mask_mode(mode)
    })
}

fn expected_len(inst: &RelationInstance, scheme: &MarkingScheme) -> usize {
    let n = inst.tokens.len();
    match scheme.kind {
        SchemeKind::EntityMask => match scheme.mask_mode {
            MaskMode::Collapse => n - inst.subj_span.width() - inst.obj_span.width() + 2,
            MaskMode::Repeat => n,
        },
        SchemeKind::EntityMarker | SchemeKind::EntityMarkerPunct | SchemeKind::TypedEntityMarker => n + 4,
        SchemeKind::TypedEntityMarkerPunct => {
            n + 8 + type_label_words(&inst.subj_type).len() + type_label_words(&inst.obj_type).len()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn json_round_trip(ds in dataset(8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        ds.write_json(&path).unwrap();
        prop_assert_eq!(&load_dataset(&path, &schema()).unwrap(), &ds);

        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = dataset_from_records("split", parse_jsonl(buf.as_slice()).unwrap(), &schema(), LoadOptions::default()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn histogram_sums_to_instance_count(ds in dataset(20)) {
        let stats = compute_statistics(&ds);
        let split = &stats.splits[0];
        prop_assert_eq!(split.label_histogram.values().sum::<usize>(), ds.len());
        for inst in &ds.instances {
            prop_assert!(!inst.subj_tokens().is_empty() && !inst.obj_tokens().is_empty());
        }
    }

    #[test]
    fn marking_length_heads_and_restore(inst in instance(), scheme in scheme()) {
        let m = mark(&inst, &scheme).unwrap();
        prop_assert_eq!(&mark(&inst, &scheme).unwrap(), &m);
        prop_assert_eq!(m.tokens.len(), expected_len(&inst, &scheme));
        prop_assert_eq!(m.tokens.len(), m.provenance.len());
        prop_assert_eq!(m.restore(&inst.tokens), inst.tokens.clone());
        prop_assert_eq!(head_indices(&m, &scheme), (m.subj_head, m.obj_head));
        if scheme.kind.shows_names() {
            prop_assert_eq!(m.provenance[m.subj_head], Provenance::Original(inst.subj_span.start));
            prop_assert_eq!(m.provenance[m.obj_head], Provenance::Original(inst.obj_span.start));
            prop_assert_eq!(&m.tokens[m.subj_head], &inst.tokens[inst.subj_span.start]);
        }
    }

    #[test]
    fn untyped_markers_ignore_types(inst in instance(), st in prop::sample::select(TYPES.to_vec()), ot in prop::sample::select(TYPES.to_vec())) {
        let mut retyped = inst.clone();
        retyped.subj_type = st.into();
        retyped.obj_type = ot.into();
        for kind in [SchemeKind::EntityMarker, SchemeKind::EntityMarkerPunct] {
            let scheme = MarkingScheme::new(kind);
            prop_assert_eq!(mark(&inst, &scheme).unwrap().tokens, mark(&retyped, &scheme).unwrap().tokens);
        }
    }

    #[test]
    fn entity_mask_ignores_names(inst in instance(), word in "[a-z]{1,5}") {
        let mut renamed = inst.clone();
        for i in (inst.subj_span.start..=inst.subj_span.end).chain(inst.obj_span.start..=inst.obj_span.end) {
            renamed.tokens[i] = format!("{word}{i}");
        }
        let scheme = MarkingScheme::new(SchemeKind::EntityMask);
        prop_assert_eq!(mark(&inst, &scheme).unwrap().tokens, mark(&renamed, &scheme).unwrap().tokens);
    }

    #[test]
    fn subtokenization_invariants(ds in dataset(6), extra in instance(), scheme in scheme(), max_size in 20usize..120) {
        let mut instances = ds.instances.clone();
        instances.push(Dataset::new("x", vec![extra.clone()], schema()).unwrap().instances[0].clone());
        let corpus = Dataset::new("train", instances, schema()).unwrap();
        let vocab = build_vocab(&corpus, &[scheme], VocabOptions { max_size, lowercase: false }).unwrap();
        let m = mark(&extra, &scheme).unwrap();
        let sub = subtokenize(&m, &vocab).unwrap();
        prop_assert_eq!(&subtokenize(&m, &vocab).unwrap(), &sub);
        prop_assert!(sub.token_to_subtoken.windows(2).all(|w| w[0] < w[1]));
        for (i, tok) in m.tokens.iter().enumerate() {
            if m.special_tokens.contains(tok) {
                let start = sub.token_to_subtoken[i];
                let end = sub.token_to_subtoken.get(i + 1).copied().unwrap_or(sub.ids.len());
                prop_assert_eq!(end - start, 1);
                prop_assert_eq!(Some(sub.ids[start]), vocab.id(tok));
            }
        }
        let head_tok = &m.tokens[m.subj_head];
        let first_piece = if vocab.is_special(head_tok) { vocab.id(head_tok).unwrap() } else { vocab.split_word(head_tok)[0] };
        prop_assert_eq!(sub.ids[sub.subj_head_sub], first_piece);
    }

    #[test]
    fn na_rename_leaves_report_unchanged(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..40)) {
        let renamed: Vec<&str> = std::iter::once("NA").chain(LABELS[1..].iter().copied()).collect();
        let other = LabelSchema::new(renamed.clone(), "NA").unwrap();
        let g: Vec<&str> = pairs.iter().map(|p| LABELS[p.0]).collect();
        let p: Vec<&str> = pairs.iter().map(|p| LABELS[p.1]).collect();
        let g2: Vec<&str> = pairs.iter().map(|p| renamed[p.0]).collect();
        let p2: Vec<&str> = pairs.iter().map(|p| renamed[p.1]).collect();
        prop_assert_eq!(score(&g, &p, &schema()).unwrap(), score(&g2, &p2, &other).unwrap());
    }

    #[test]
    fn filtering_is_idempotent_and_monotone(test in dataset(12), train in dataset(12), more in dataset(6), fold in any::<bool>(), role in any::<bool>(), both in any::<bool>()) {
        let rule = MatchRule { case_fold: fold, role_restricted: role, require_both: both };
        let once = build_filtered(&test, &train, rule);
        let kept = once.subset(&test);
        prop_assert!(once.kept_ids.iter().all(|id| test.instances.iter().any(|i| &i.id == id)));
        prop_assert_eq!(once.kept + once.pruned, test.len());
        let twice = build_filtered(&kept, &train, rule);
        prop_assert_eq!(&twice.kept_ids, &once.kept_ids);

        let mut bigger = train.instances.clone();
        bigger.extend(more.instances.iter().map(|i| RelationInstance { id: format!("more-{}", i.id), ..i.clone() }));
        let bigger = Dataset::new("train", bigger, schema()).unwrap();
        let grown = build_filtered(&test, &bigger, rule);
        let before: BTreeSet<&String> = once.kept_ids.iter().collect();
        prop_assert!(grown.kept_ids.iter().all(|id| before.contains(id)));

        let empty = Dataset::new("train", vec![], schema()).unwrap();
        prop_assert_eq!(build_filtered(&test, &empty, rule).kept, test.len());
    }

    #[test]
    fn median_matches_sorting_oracle(scores in prop::collection::vec(-100.0f64..100.0, 1..12)) {
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let oracle = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        prop_assert_eq!(median_f1(&scores).unwrap(), oracle);
    }

    #[test]
    fn schedule_shape(total in 1usize..400, frac in 0.0f64..1.0, base in 1e-6f64..1.0) {
        let cfg = TrainConfig { base_lr: base, warmup_fraction: frac, ..TrainConfig::default() };
        let warmup = (frac * total as f64).round() as usize;
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, &cfg).unwrap()).collect();
        prop_assert_eq!(lrs[0], 0.0);
        prop_assert_eq!(lrs[total], 0.0);
        prop_assert!(lrs.iter().all(|&lr| (0.0..=base).contains(&lr)));
        let peak = warmup.clamp(1, total.saturating_sub(1).max(1));
        prop_assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
        if 0 < warmup && warmup < total {
            prop_assert_eq!(lrs[warmup], base);
            for (s, &lr) in lrs.iter().enumerate() {
                if s != warmup {
                    prop_assert!(lr < base * (1.0 - 1e-12), "second peak at {}", s);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_corpora_hold_their_contracts(seed in any::<u64>(), signal in 0.0f64..=1.0, rate in 0.0f64..=1.0) {
        let cfg = SynthConfig { train_size: 200, dev_size: 40, test_size: 60, name_signal: signal, seed, ..SynthConfig::default() };
        let corpus = generate(&cfg).unwrap();
        for ds in [&corpus.train, &corpus.dev, &corpus.test_unseen] {
            for inst in &ds.instances {
                prop_assert!(inst.validate(&ds.schema).is_ok());
            }
        }
        let filtered = build_filtered(&corpus.test_unseen, &corpus.train, MatchRule::default());
        prop_assert_eq!(filtered.kept, corpus.test_unseen.len());

        let noisy = inject_noise(&corpus.train, rate, NoiseMode::TypeConsistent, seed ^ 1).unwrap();
        let sigs = cfg.signatures();
        for inst in &noisy.instances {
            let sig = sigs.iter().find(|s| s.subj_type == inst.subj_type && s.obj_type == inst.obj_type).unwrap();
            prop_assert!(sig.labels().contains(&inst.relation.as_str()));
        }
        let flips = corpus.train.instances.iter().zip(&noisy.instances).filter(|(a, b)| a.relation != b.relation).count();
        prop_assert_eq!(flips, (rate * corpus.train.len() as f64).round() as usize);
    }
}
