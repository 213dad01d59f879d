//! TACRED-layout relation extraction data: instances, label schemas, loading
//! and summary statistics.
//!
//! Spans use inclusive end indices, as in the public TACRED JSON files.
//! Record fields other than the ones read here (POS tags, dependency heads,
//! ...) are ignored.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::{SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Label used for "no relation of interest" in TACRED and its revisions.
pub const TACRED_NA: &str = "no_relation";

const TACRED_RELATIONS: [&str; 41] = [
    "per:title",
    "org:top_members/employees",
    "per:employee_of",
    "org:alternate_names",
    "org:country_of_headquarters",
    "per:countries_of_residence",
    "org:city_of_headquarters",
    "per:cities_of_residence",
    "per:age",
    "per:stateorprovinces_of_residence",
    "per:origin",
    "org:subsidiaries",
    "org:parents",
    "per:spouse",
    "org:stateorprovince_of_headquarters",
    "per:children",
    "per:other_family",
    "per:alternate_names",
    "org:members",
    "per:siblings",
    "per:schools_attended",
    "per:parents",
    "per:date_of_death",
    "org:member_of",
    "org:founded_by",
    "org:website",
    "per:cause_of_death",
    "org:political/religious_affiliation",
    "per:religion",
    "org:founded",
    "per:city_of_death",
    "per:city_of_birth",
    "per:charges",
    "org:shareholders",
    "per:stateorprovince_of_birth",
    "per:stateorprovince_of_death",
    "per:country_of_birth",
    "org:number_of_employees/members",
    "per:date_of_birth",
    "per:country_of_death",
    "org:dissolved",
];

/// Inclusive token span `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of tokens covered.
    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }

    /// True when the spans share at least one token (nesting included).
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// One sentence with a subject/object entity pair and its gold relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_span: Span,
    pub obj_span: Span,
    pub subj_type: String,
    pub obj_type: String,
    pub relation: String,
}

impl RelationInstance {
    pub fn subj_tokens(&self) -> &[String] {
        &self.tokens[self.subj_span.start..=self.subj_span.end]
    }

    pub fn obj_tokens(&self) -> &[String] {
        &self.tokens[self.obj_span.start..=self.obj_span.end]
    }

    /// Space-joined subject mention.
    pub fn subj_mention(&self) -> String {
        self.subj_tokens().join(" ")
    }

    pub fn obj_mention(&self) -> String {
        self.obj_tokens().join(" ")
    }

    /// Checks span bounds and overlap. Label membership is checked against a
    /// schema by [`RelationInstance::validate`].
    pub fn validate_spans(&self) -> Result<()> {
        let n = self.tokens.len();
        for (role, span) in [("subject", self.subj_span), ("object", self.obj_span)] {
            if span.start > span.end {
                return Err(Error::validation(
                    &self.id,
                    format!("{role} span {span} has start after end"),
                ));
            }
            if span.end >= n {
                return Err(Error::validation(
                    &self.id,
                    format!("{role} span {span} out of bounds for {n} tokens"),
                ));
            }
        }
        if self.subj_span.overlaps(&self.obj_span) {
            return Err(Error::validation(
                &self.id,
                format!("subject span {} overlaps object span {}", self.subj_span, self.obj_span),
            ));
        }
        Ok(())
    }

    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        self.validate_spans()?;
        if schema.index_of(&self.relation).is_none() {
            return Err(Error::validation(
                &self.id,
                format!("unknown relation label {:?}", self.relation),
            ));
        }
        Ok(())
    }
}

/// Ordered relation labels, including the no-relation sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    labels: Vec<String>,
    na_index: usize,
    index: HashMap<String, usize>,
}

impl LabelSchema {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, na_label: &str) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate label {label:?}")));
            }
        }
        let na_index = *index
            .get(na_label)
            .ok_or_else(|| Error::Schema(format!("na label {na_label:?} is not in the label list")))?;
        Ok(Self {
            labels,
            na_index,
            index,
        })
    }

    /// The 42-class TACRED/TACREV schema: 41 relations plus `no_relation`.
    pub fn tacred() -> Self {
        let labels = std::iter::once(TACRED_NA).chain(TACRED_RELATIONS);
        Self::new(labels, TACRED_NA).expect("static TACRED schema is valid")
    }

    /// Reads one label per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>, na_label: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(labels, na_label)
    }

    /// Sorted distinct labels found in `relations`, with `na_label` first.
    pub fn infer<'a>(relations: impl IntoIterator<Item = &'a str>, na_label: &str) -> Self {
        let mut seen: Vec<&str> = relations
            .into_iter()
            .filter(|r| *r != na_label)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        seen.insert(0, na_label);
        Self::new(seen, na_label).expect("deduplicated labels")
    }

    /// Fails unless the schema has exactly `classes` labels (NA included).
    pub fn expect_classes(self, classes: usize) -> Result<Self> {
        if self.labels.len() != classes {
            return Err(Error::Schema(format!(
                "expected {classes} classes, schema has {}",
                self.labels.len()
            )));
        }
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn na_label(&self) -> &str {
        &self.labels[self.na_index]
    }

    pub fn na_index(&self) -> usize {
        self.na_index
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// One split of a relation extraction corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub instances: Vec<RelationInstance>,
    pub schema: LabelSchema,
}

impl Dataset {
    /// Builds a dataset, validating every instance against `schema`.
    pub fn new(split: impl Into<String>, instances: Vec<RelationInstance>, schema: LabelSchema) -> Result<Self> {
        for inst in &instances {
            inst.validate(&schema)?;
        }
        Ok(Self {
            split: split.into(),
            instances,
            schema,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn gold_labels(&self) -> Vec<&str> {
        self.instances.iter().map(|i| i.relation.as_str()).collect()
    }

    /// Distinct NER types over both roles, sorted.
    pub fn entity_types(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self
            .instances
            .iter()
            .flat_map(|i| [i.subj_type.as_str(), i.obj_type.as_str()])
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Writes the JSON array layout that [`load_dataset`] reads.
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let records: Vec<Record> = self.instances.iter().map(Record::from).collect();
        let text = serde_json::to_string(&records).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes one instance per line with the same field names as the JSON layout.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut out, &Record::from(inst))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop invalid instances (with a warning) instead of failing.
    pub lenient: bool,
}

/// A TACRED JSON record. Unknown fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub token: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    pub subj_type: String,
    pub obj_type: String,
    pub relation: String,
}

impl From<&RelationInstance> for Record {
    fn from(inst: &RelationInstance) -> Self {
        Self {
            id: inst.id.clone(),
            token: inst.tokens.clone(),
            subj_start: inst.subj_span.start,
            subj_end: inst.subj_span.end,
            obj_start: inst.obj_span.start,
            obj_end: inst.obj_span.end,
            subj_type: inst.subj_type.clone(),
            obj_type: inst.obj_type.clone(),
            relation: inst.relation.clone(),
        }
    }
}

impl From<Record> for RelationInstance {
    fn from(r: Record) -> Self {
        Self {
            id: r.id,
            tokens: r.token,
            subj_span: Span::new(r.subj_start, r.subj_end),
            obj_span: Span::new(r.obj_start, r.obj_end),
            subj_type: r.subj_type,
            obj_type: r.obj_type,
            relation: r.relation,
        }
    }
}

struct RecordSeq<'a> {
    parsed: &'a Cell<usize>,
}

impl<'de> Visitor<'de> for RecordSeq<'_> {
    type Value = Vec<Record>;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON array of relation records")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
        let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
        while let Some(record) = seq.next_element::<Record>()? {
            out.push(record);
            self.parsed.set(out.len());
        }
        Ok(out)
    }
}

/// Parses a JSON array of records; a failure reports the index of the
/// record being read.
pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let parsed = Cell::new(0);
    let mut de = serde_json::Deserializer::from_str(text);
    de.deserialize_seq(RecordSeq { parsed: &parsed })
        .and_then(|records| de.end().map(|_| records))
        .map_err(|e| Error::Parse {
            index: parsed.get(),
            message: e.to_string(),
        })
}

fn collect_instances(split: String, records: Vec<Record>, schema: LabelSchema, opts: LoadOptions) -> Result<Dataset> {
    let mut instances = Vec::with_capacity(records.len());
    for record in records {
        let inst = RelationInstance::from(record);
        match inst.validate(&schema) {
            Ok(()) => instances.push(inst),
            Err(e) if opts.lenient => log::warn!("dropping instance: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(Dataset {
        split,
        instances,
        schema,
    })
}

fn split_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string()
}

/// Loads a TACRED-layout JSON array file, strict validation.
pub fn load_dataset(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Dataset> {
    load_dataset_with(path, schema, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, schema: &LabelSchema, opts: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = if path.extension().is_some_and(|e| e == "jsonl") {
        parse_jsonl(text.as_bytes())?
    } else {
        parse_records(&text)?
    };
    collect_instances(split_name(path), records, schema.clone(), opts)
}

/// Parses the JSON Lines interchange format, one record per non-blank line.
pub fn parse_jsonl(reader: impl std::io::Read) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            index,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            index,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn dataset_from_records(
    split: impl Into<String>,
    records: Vec<Record>,
    schema: &LabelSchema,
    opts: LoadOptions,
) -> Result<Dataset> {
    collect_instances(split.into(), records, schema.clone(), opts)
}

/// Per-split counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub instances: usize,
    /// Label counts for every schema label, zeros included.
    pub label_histogram: BTreeMap<String, usize>,
    pub observed_classes: usize,
    pub entity_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Classes in the schema, no-relation included.
    pub num_classes: usize,
    pub na_label: String,
    pub splits: Vec<SplitStats>,
}

impl StatsReport {
    pub fn total_instances(&self) -> usize {
        self.splits.iter().map(|s| s.instances).sum()
    }

    pub fn merge(mut self, other: StatsReport) -> Self {
        self.splits.extend(other.splits);
        self
    }
}

pub fn compute_statistics(dataset: &Dataset) -> StatsReport {
    let mut histogram: BTreeMap<String, usize> = dataset.schema.labels().iter().map(|l| (l.clone(), 0)).collect();
    for inst in &dataset.instances {
        *histogram.entry(inst.relation.clone()).or_default() += 1;
    }
    let observed_classes = histogram.values().filter(|&&c| c > 0).count();
    StatsReport {
        num_classes: dataset.schema.len(),
        na_label: dataset.schema.na_label().to_string(),
        splits: vec![SplitStats {
            split: dataset.split.clone(),
            instances: dataset.len(),
            label_histogram: histogram,
            observed_classes,
            entity_types: dataset.entity_types(),
        }],
    }
}

/// Ids that occur more than once, in first-duplicate order.
pub fn duplicate_ids(dataset: &Dataset) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for inst in &dataset.instances {
        if !seen.insert(inst.id.as_str()) {
            dups.push(inst.id.clone());
        }
    }
    dups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LabelSchema {
        LabelSchema::new(["no_relation", "per:city_of_birth", "per:title"], "no_relation").unwrap()
    }

    fn bill_json(subj_end: usize) -> String {
        format!(
            r#"[{{"id":"b1","token":["Bill","was","born","in","Seattle","."],
                "subj_start":0,"subj_end":{subj_end},"obj_start":4,"obj_end":4,
                "subj_type":"PERSON","obj_type":"CITY","relation":"per:city_of_birth",
                "stanford_pos":["NNP","VBD","VBN","IN","NNP","."]}}]"#
        )
    }

    #[test]
    fn tacred_schema_has_42_classes() {
        let s = LabelSchema::tacred();
        assert_eq!(s.len(), 42);
        assert_eq!(s.na_label(), "no_relation");
        assert!(LabelSchema::tacred().expect_classes(42).is_ok());
        assert!(LabelSchema::tacred().expect_classes(40).is_err());
    }

    #[test]
    fn schema_rejects_duplicates_and_missing_na() {
        assert!(LabelSchema::new(["a", "a", "NA"], "NA").is_err());
        assert!(LabelSchema::new(["a", "b"], "NA").is_err());
    }

    #[test]
    fn empty_array_gives_empty_dataset() {
        let records = parse_records("[]").unwrap();
        let ds = dataset_from_records("test", records, &schema(), LoadOptions::default()).unwrap();
        assert!(ds.is_empty());
        let stats = compute_statistics(&ds);
        assert_eq!(stats.total_instances(), 0);
        assert!(stats.splits[0].label_histogram.values().all(|&c| c == 0));
    }

    #[test]
    fn bill_record_loads() {
        let records = parse_records(&bill_json(0)).unwrap();
        let ds = dataset_from_records("train", records, &schema(), LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let inst = &ds.instances[0];
        assert_eq!(inst.subj_mention(), "Bill");
        assert_eq!(inst.obj_mention(), "Seattle");
        assert_eq!(inst.subj_type, "PERSON");
    }

    #[test]
    fn subj_end_at_len_is_rejected() {
        let records = parse_records(&bill_json(6)).unwrap();
        let err = dataset_from_records("train", records, &schema(), LoadOptions::default()).unwrap_err();
        match err {
            Error::Validation { id, message } => {
                assert_eq!(id, "b1");
                assert!(message.contains("out of bounds"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lenient_drops_invalid() {
        let records = parse_records(&bill_json(6)).unwrap();
        let ds = dataset_from_records("train", records, &schema(), LoadOptions { lenient: true }).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn overlapping_and_unknown_label_rejected() {
        let mut inst: RelationInstance = parse_records(&bill_json(0)).unwrap().remove(0).into();
        inst.obj_span = Span::new(0, 1);
        assert!(inst.validate(&schema()).is_err());
        inst.obj_span = Span::new(4, 4);
        inst.relation = "org:founded".into();
        assert!(matches!(inst.validate(&schema()), Err(Error::Validation { .. })));
    }

    #[test]
    fn malformed_json_reports_record_index() {
        let text = r#"[{"id":"a","token":["x","y"],"subj_start":0,"subj_end":0,"obj_start":1,"obj_end":1,
            "subj_type":"P","obj_type":"C","relation":"per:title"},
            {"id":"b","token":["x"],"subj_start":"zero"}]"#;
        match parse_records(text) {
            Err(Error::Parse { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_records("{not json"), Err(Error::Parse { index: 0, .. })));
    }

    #[test]
    fn histogram_of_ten_instances() {
        let labels = [
            "no_relation",
            "per:title",
            "per:title",
            "no_relation",
            "per:city_of_birth",
            "no_relation",
            "per:title",
            "no_relation",
            "no_relation",
            "per:city_of_birth",
        ];
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, l)| RelationInstance {
                id: format!("s{i}"),
                tokens: vec!["a".into(), "b".into(), "c".into()],
                subj_span: Span::new(0, 0),
                obj_span: Span::new(2, 2),
                subj_type: "PERSON".into(),
                obj_type: "CITY".into(),
                relation: l.to_string(),
            })
            .collect();
        let ds = Dataset::new("train", instances, schema()).unwrap();
        let stats = compute_statistics(&ds);
        let split = &stats.splits[0];
        assert_eq!(split.label_histogram.values().sum::<usize>(), 10);
        assert_eq!(split.observed_classes, 3);
        assert_eq!(split.label_histogram["no_relation"], 5);
        assert_eq!(split.label_histogram["per:title"], 3);
        assert_eq!(split.label_histogram["per:city_of_birth"], 2);
    }
}
