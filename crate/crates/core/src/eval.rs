//! TACRED-style micro-averaged scoring and the unseen-entity / clean test
//! subset builders.
//!
//! A decision is "positive" when its label is not the no-relation label.
//! Precision and recall pool all positive decisions across relations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::corpus::{duplicate_ids, Dataset, LabelSchema, RelationInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTally {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Exact-match rate over all instances, no-relation included.
    pub accuracy: f64,
    pub total: usize,
    pub predicted_positive: usize,
    pub gold_positive: usize,
    pub correct_positive: usize,
    /// Precision fell back to 1 because nothing was predicted positive.
    pub precision_defaulted: bool,
    /// Recall fell back to 1 because no gold label is positive.
    pub recall_defaulted: bool,
    /// Positive relations only, keyed by label.
    pub per_relation: BTreeMap<String, RelationTally>,
}

/// `num / den`, or 1 when the denominator is empty. Returns whether the
/// fallback was used. Every empty-denominator decision goes through here.
fn ratio_or_one(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Scores label indices against `schema`.
pub fn score_indices(gold: &[usize], pred: &[usize], schema: &LabelSchema) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let n = schema.len();
    if let Some(bad) = gold.iter().chain(pred).find(|&&i| i >= n) {
        return Err(Error::Shape(format!("label index {bad} outside schema of {n}")));
    }
    let na = schema.na_index();
    let mut tallies = vec![RelationTally::default(); n];
    let mut exact = 0;
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            exact += 1;
        }
        if g != na {
            tallies[g].gold += 1;
        }
        if p != na {
            tallies[p].predicted += 1;
            if p == g {
                tallies[p].correct += 1;
            }
        }
    }
    let predicted_positive = tallies.iter().map(|t| t.predicted).sum();
    let gold_positive = tallies.iter().map(|t| t.gold).sum();
    let correct_positive = tallies.iter().map(|t| t.correct).sum();
    let (precision, precision_defaulted) = ratio_or_one(correct_positive, predicted_positive);
    let (recall, recall_defaulted) = ratio_or_one(correct_positive, gold_positive);
    let per_relation = tallies
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != na)
        .map(|(i, t)| (schema.labels()[i].clone(), t))
        .collect();
    Ok(EvalReport {
        precision,
        recall,
        f1: harmonic(precision, recall),
        accuracy: if gold.is_empty() {
            1.0
        } else {
            exact as f64 / gold.len() as f64
        },
        total: gold.len(),
        predicted_positive,
        gold_positive,
        correct_positive,
        precision_defaulted,
        recall_defaulted,
        per_relation,
    })
}

fn indices<S: AsRef<str>>(labels: &[S], schema: &LabelSchema) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            schema
                .index_of(l)
                .ok_or_else(|| Error::Schema(format!("unknown label {l:?}")))
        })
        .collect()
}

/// Micro precision/recall/F1 over positive (non-NA) decisions.
pub fn score<S: AsRef<str>, T: AsRef<str>>(gold: &[S], pred: &[T], schema: &LabelSchema) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    score_indices(&indices(gold, schema)?, &indices(pred, schema)?, schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: String,
}

pub fn read_predictions(reader: impl Read) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            index,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            index,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Scores id-keyed predictions against a gold dataset. Every gold id needs
/// exactly one prediction.
pub fn score_predictions(gold: &Dataset, preds: &[Prediction]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(&p.id, &p.pred).is_some() {
            return Err(Error::validation(&p.id, "duplicate prediction"));
        }
    }
    if by_id.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold instances",
            by_id.len(),
            gold.len()
        )));
    }
    let mut pred_labels = Vec::with_capacity(gold.len());
    for inst in &gold.instances {
        let p = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| Error::validation(&inst.id, "no prediction for instance"))?;
        pred_labels.push(*p);
    }
    score(&gold.gold_labels(), &pred_labels, &gold.schema)
}

/// Which entity occurrences count as "seen in training".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchRule {
    /// Compare mentions case-insensitively.
    pub case_fold: bool,
    /// Compare subjects only with training subjects, objects only with
    /// training objects.
    pub role_restricted: bool,
    /// Prune only when both mentions were seen (default: either).
    pub require_both: bool,
}

impl MatchRule {
    pub fn describe(&self) -> String {
        format!(
            "prune if {} mention occurs among training {} mentions ({})",
            if self.require_both { "both" } else { "either" },
            if self.role_restricted {
                "same-role"
            } else {
                "subject and object"
            },
            if self.case_fold { "case-folded" } else { "exact case" },
        )
    }

    fn key(&self, mention: String) -> String {
        if self.case_fold {
            mention.to_lowercase()
        } else {
            mention
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub rule: String,
    pub original: usize,
    pub kept: usize,
    pub pruned: usize,
    pub kept_ids: Vec<String>,
    pub pruned_ids: Vec<String>,
}

impl SplitReport {
    fn from_decisions<'a>(rule: String, decisions: impl IntoIterator<Item = (&'a RelationInstance, bool)>) -> Self {
        let mut kept_ids = Vec::new();
        let mut pruned_ids = Vec::new();
        for (inst, keep) in decisions {
            if keep {
                kept_ids.push(inst.id.clone());
            } else {
                pruned_ids.push(inst.id.clone());
            }
        }
        Self {
            rule,
            original: kept_ids.len() + pruned_ids.len(),
            kept: kept_ids.len(),
            pruned: pruned_ids.len(),
            kept_ids,
            pruned_ids,
        }
    }

    /// The kept instances of `dataset`, in original order.
    pub fn subset(&self, dataset: &Dataset) -> Dataset {
        let keep: HashSet<&str> = self.kept_ids.iter().map(String::as_str).collect();
        Dataset {
            split: dataset.split.clone(),
            instances: dataset
                .instances
                .iter()
                .filter(|i| keep.contains(i.id.as_str()))
                .cloned()
                .collect(),
            schema: dataset.schema.clone(),
        }
    }
}

/// Keeps test instances whose entity mentions never occur in `train`.
pub fn build_filtered(test: &Dataset, train: &Dataset, rule: MatchRule) -> SplitReport {
    let mut subjects = HashSet::new();
    let mut objects = HashSet::new();
    for inst in &train.instances {
        subjects.insert(rule.key(inst.subj_mention()));
        objects.insert(rule.key(inst.obj_mention()));
    }
    let any_role: HashSet<&String> = subjects.iter().chain(objects.iter()).collect();
    let decisions = test.instances.iter().map(|inst| {
        let s = rule.key(inst.subj_mention());
        let o = rule.key(inst.obj_mention());
        let (s_seen, o_seen) = if rule.role_restricted {
            (subjects.contains(&s), objects.contains(&o))
        } else {
            (any_role.contains(&s), any_role.contains(&o))
        };
        let prune = if rule.require_both {
            s_seen && o_seen
        } else {
            s_seen || o_seen
        };
        (inst, !prune)
    });
    SplitReport::from_decisions(rule.describe(), decisions)
}

/// Keeps instances of `original` whose (mapped) relation agrees with the
/// relabeled dataset. Ids missing from `relabeled` are pruned; labels not in
/// `label_map` map to themselves.
pub fn build_clean(
    original: &Dataset,
    relabeled: &Dataset,
    label_map: &HashMap<String, String>,
) -> Result<SplitReport> {
    for ds in [original, relabeled] {
        if let Some(id) = duplicate_ids(ds).into_iter().next() {
            return Err(Error::validation(id, format!("duplicate id in split {}", ds.split)));
        }
    }
    let relabeled_by_id: HashMap<&str, &str> = relabeled
        .instances
        .iter()
        .map(|i| (i.id.as_str(), i.relation.as_str()))
        .collect();
    let decisions = original.instances.iter().map(|inst| {
        let mapped = label_map
            .get(&inst.relation)
            .map(String::as_str)
            .unwrap_or(&inst.relation);
        let keep = relabeled_by_id.get(inst.id.as_str()) == Some(&mapped);
        (inst, keep)
    });
    Ok(SplitReport::from_decisions(
        "keep if id exists in the relabeled split with the same (mapped) relation".into(),
        decisions,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn schema() -> LabelSchema {
        LabelSchema::new(["NA", "r1", "r2"], "NA").unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let g = ["r1", "NA", "r2"];
        let r = score(&g, &g, &schema()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_enumerated_case() {
        // pos 0 correct r1; pos 1 missed r1; pos 2 false r2; pos 3 correct r2
        let r = score(&["r1", "r1", "NA", "r2"], &["r1", "NA", "r2", "r2"], &schema()).unwrap();
        assert_eq!(r.correct_positive, 2);
        assert_eq!(r.predicted_positive, 3);
        assert_eq!(r.gold_positive, 3);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            r.per_relation["r2"],
            RelationTally {
                gold: 1,
                predicted: 2,
                correct: 1
            }
        );
    }

    #[test]
    fn all_na_convention() {
        let r = score(&["NA", "NA"], &["NA", "NA"], &schema()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(r.precision_defaulted && r.recall_defaulted);
    }

    #[test]
    fn nothing_correct_gives_zero_f1() {
        let r = score(&["r1"], &["r2"], &schema()).unwrap();
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn errors() {
        assert!(score(&["r1"], &["r1", "r2"], &schema()).is_err());
        assert!(score(&["r3"], &["r1"], &schema()).is_err());
    }

    fn inst(id: &str, subj: &str, obj: &str, rel: &str) -> RelationInstance {
        RelationInstance {
            id: id.into(),
            tokens: vec![subj.into(), "x".into(), obj.into()],
            subj_span: Span::new(0, 0),
            obj_span: Span::new(2, 2),
            subj_type: "PERSON".into(),
            obj_type: "CITY".into(),
            relation: rel.into(),
        }
    }

    fn ds(split: &str, v: Vec<RelationInstance>) -> Dataset {
        Dataset::new(split, v, schema()).unwrap()
    }

    #[test]
    fn filtered_edge_cases() {
        let test = ds(
            "test",
            vec![inst("a", "Bill", "Seattle", "r1"), inst("b", "Ann", "Paris", "NA")],
        );
        let empty = ds("train", vec![]);
        let r = build_filtered(&test, &empty, MatchRule::default());
        assert_eq!((r.kept, r.pruned), (2, 0));
        let r = build_filtered(&test, &test, MatchRule::default());
        assert_eq!(r.kept, 0);
    }

    #[test]
    fn filtered_rules() {
        let test = ds(
            "test",
            vec![inst("a", "Bill", "Seattle", "r1"), inst("b", "ann", "Rome", "NA")],
        );
        // "Seattle" appears as a training subject
        let train = ds(
            "train",
            vec![inst("t", "Seattle", "Oslo", "NA"), inst("u", "Ann", "Lima", "NA")],
        );
        let r = build_filtered(&test, &train, MatchRule::default());
        assert_eq!(r.kept_ids, vec!["b".to_string()]);
        let r = build_filtered(
            &test,
            &train,
            MatchRule {
                role_restricted: true,
                ..Default::default()
            },
        );
        assert_eq!(r.kept, 2);
        let r = build_filtered(
            &test,
            &train,
            MatchRule {
                case_fold: true,
                ..Default::default()
            },
        );
        assert_eq!(r.kept, 0);
        let r = build_filtered(
            &test,
            &train,
            MatchRule {
                require_both: true,
                ..Default::default()
            },
        );
        assert_eq!(r.kept, 2);
    }

    #[test]
    fn clean_join() {
        let base = vec![
            inst("1", "a", "b", "r1"),
            inst("2", "c", "d", "r2"),
            inst("3", "e", "f", "NA"),
            inst("4", "g", "h", "r1"),
            inst("5", "i", "j", "r2"),
            inst("6", "k", "l", "NA"),
        ];
        let original = ds("tacred", base.clone());
        assert_eq!(build_clean(&original, &original, &HashMap::new()).unwrap().kept, 6);

        let mut relabeled = base;
        relabeled[1].relation = "NA".into();
        relabeled[3].relation = "r2".into();
        relabeled.remove(4);
        let relabeled = ds("retacred", relabeled);
        let r = build_clean(&original, &relabeled, &HashMap::new()).unwrap();
        assert_eq!(r.kept_ids, vec!["1", "3", "6"]);
        assert_eq!(r.pruned_ids, vec!["2", "4", "5"]);

        let map = HashMap::from([("r2".to_string(), "NA".to_string())]);
        let r = build_clean(&original, &relabeled, &map).unwrap();
        assert_eq!(r.kept_ids, vec!["1", "2", "3", "6"]);

        let dup = ds("dup", vec![inst("1", "a", "b", "r1"), inst("1", "a", "b", "r1")]);
        assert!(build_clean(&dup, &original, &HashMap::new()).is_err());
    }

    #[test]
    fn predictions_join_by_id() {
        let gold = ds("test", vec![inst("a", "x", "y", "r1"), inst("b", "x", "y", "NA")]);
        let preds =
            read_predictions("{\"id\":\"b\",\"pred\":\"NA\"}\n{\"id\":\"a\",\"pred\":\"r1\"}\n".as_bytes()).unwrap();
        let r = score_predictions(&gold, &preds).unwrap();
        assert_eq!(r.f1, 1.0);
        assert!(score_predictions(&gold, &preds[..1]).is_err());
    }
}
