//! Synthetic relation corpora with a tunable name signal, plus label-noise
//! injection.
//!
//! Every instance has a subject and object whose NER types form one of the
//! inventory's type signatures. With probability `name_signal` the label is
//! read from a per-signature name rule and the sentence is a neutral
//! template that carries no relation cue; otherwise the label is drawn
//! uniformly from the signature's relations plus NA and realized with one of
//! that label's templates. Names are `Family Stem` pairs. Families are shared
//! by every type and every split, stems are split into train-visible and
//! test-only pools, so a rule keyed on the family transfers to unseen names
//! while the stem never does.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSchema, RelationInstance, Span, TACRED_NA};
use crate::error::{Error, Result};
use crate::marking::{mark, MarkingScheme, SchemeKind};

pub const SUBJ_SLOT: &str = "SUBJ";
pub const OBJ_SLOT: &str = "OBJ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub subj_type: String,
    pub obj_type: String,
    /// Whitespace-separated tokens with `SUBJ` and `OBJ` slots.
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamePool {
    pub visible: Vec<String>,
    pub test_only: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameRuleKey {
    /// The first token of the subject name.
    #[default]
    Family,
    /// The full subject name; rules never transfer to unseen names.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Uniform,
    TypeConsistent,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "type_consistent" => Ok(Self::TypeConsistent),
            other => Err(Error::Config(format!("unknown noise mode `{other}`"))),
        }
    }
}

fn default_name_signal() -> f64 {
    0.5
}
fn default_train_size() -> usize {
    2000
}
fn default_eval_size() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_relations")]
    pub relations: Vec<RelationSpec>,
    #[serde(default = "default_na_templates")]
    pub na_templates: Vec<String>,
    /// Sentences used when the name rule decides the label.
    #[serde(default = "default_neutral_templates")]
    pub neutral_templates: Vec<String>,
    #[serde(default = "default_name_pools")]
    pub names: BTreeMap<String, NamePool>,
    #[serde(default = "default_name_signal")]
    pub name_signal: f64,
    #[serde(default)]
    pub name_rule_key: NameRuleKey,
    /// Applied to the training split only.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_eval_size")]
    pub dev_size: usize,
    #[serde(default = "default_eval_size")]
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            relations: default_relations(),
            na_templates: default_na_templates(),
            neutral_templates: default_neutral_templates(),
            names: default_name_pools(),
            name_signal: default_name_signal(),
            name_rule_key: NameRuleKey::default(),
            noise_rate: 0.0,
            noise_mode: NoiseMode::default(),
            train_size: default_train_size(),
            dev_size: default_eval_size(),
            test_size: default_eval_size(),
            seed: 0,
        }
    }
}

fn rel(name: &str, subj: &str, obj: &str, templates: &[&str]) -> RelationSpec {
    RelationSpec {
        name: name.into(),
        subj_type: subj.into(),
        obj_type: obj.into(),
        templates: templates.iter().map(|t| t.to_string()).collect(),
    }
}

fn default_relations() -> Vec<RelationSpec> {
    vec![
        rel(
            "per:employee_of",
            "PERSON",
            "ORGANIZATION",
            &["SUBJ works for OBJ .", "SUBJ joined OBJ as an analyst ."],
        ),
        rel(
            "per:city_of_birth",
            "PERSON",
            "CITY",
            &["SUBJ was born in OBJ .", "OBJ is the birthplace of SUBJ ."],
        ),
        rel(
            "per:city_of_residence",
            "PERSON",
            "CITY",
            &["SUBJ lives in OBJ .", "SUBJ moved to OBJ last year ."],
        ),
        rel(
            "org:city_of_headquarters",
            "ORGANIZATION",
            "CITY",
            &["SUBJ is based in OBJ .", "SUBJ keeps its head office in OBJ ."],
        ),
        rel(
            "per:date_of_birth",
            "PERSON",
            "DATE",
            &["SUBJ was born on OBJ .", "SUBJ , born OBJ , spoke first ."],
        ),
        rel(
            "org:founded",
            "ORGANIZATION",
            "DATE",
            &["SUBJ was founded on OBJ .", "OBJ saw the founding of SUBJ ."],
        ),
    ]
}

fn default_na_templates() -> Vec<String> {
    vec![
        "SUBJ visited OBJ once .".into(),
        "SUBJ read about OBJ in the paper .".into(),
    ]
}

fn default_neutral_templates() -> Vec<String> {
    vec!["SUBJ and OBJ were both mentioned .".into()]
}

const FAMILIES: [&str; 8] = ["Van", "Mac", "Del", "Ost", "Fitz", "Bar", "Lind", "Mor"];
const SYLLABLES: [&str; 12] = [
    "ka", "ro", "li", "ten", "mar", "sol", "vi", "dun", "el", "par", "gor", "ish",
];

/// Three-syllable stems dealt round-robin to (type, partition) so no stem
/// is shared across types or partitions, then crossed with every family.
/// Each stem is rare, so a small vocabulary splits it into pieces in every
/// split alike.
fn default_name_pools() -> BTreeMap<String, NamePool> {
    let types = ["PERSON", "ORGANIZATION", "CITY", "DATE"];
    let buckets = types.len() * 2;
    let mut stems: Vec<Vec<String>> = vec![Vec::new(); buckets];
    let mut slot = 0;
    for a in SYLLABLES {
        for b in SYLLABLES {
            for c in SYLLABLES {
                let mut stem = a[..1].to_uppercase();
                stem.push_str(&a[1..]);
                stem.push_str(b);
                stem.push_str(c);
                stems[slot % buckets].push(stem);
                slot += 1;
            }
        }
    }
    let names = |stems: &[String]| -> Vec<String> {
        FAMILIES
            .iter()
            .flat_map(|f| stems.iter().map(move |s| format!("{f} {s}")))
            .collect()
    };
    types
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pool = NamePool {
                visible: names(&stems[2 * i]),
                test_only: names(&stems[2 * i + 1]),
            };
            (t.to_string(), pool)
        })
        .collect()
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.relations.is_empty() {
            return fail("relation inventory is empty".into());
        }
        if !(0.0..=1.0).contains(&self.name_signal) {
            return fail("name_signal must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail("noise_rate must lie in [0, 1]".into());
        }
        if self.train_size == 0 {
            return fail("train_size must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for r in &self.relations {
            if r.name == TACRED_NA || !seen.insert(&r.name) {
                return fail(format!("relation `{}` is reserved or repeated", r.name));
            }
            if r.templates.is_empty() {
                return fail(format!("relation `{}` has no templates", r.name));
            }
            for t in [&r.subj_type, &r.obj_type] {
                let pool = self.names.get(t);
                if pool.is_none_or(|p| p.visible.is_empty() || p.test_only.is_empty()) {
                    return fail(format!("type `{t}` needs visible and test-only names"));
                }
            }
        }
        if self.na_templates.is_empty() || self.neutral_templates.is_empty() {
            return fail("NA and neutral templates are required".into());
        }
        for t in self
            .relations
            .iter()
            .flat_map(|r| &r.templates)
            .chain(&self.na_templates)
            .chain(&self.neutral_templates)
        {
            let toks: Vec<&str> = t.split_whitespace().collect();
            let count = |slot| toks.iter().filter(|&&w| w == slot).count();
            if count(SUBJ_SLOT) != 1 || count(OBJ_SLOT) != 1 {
                return fail(format!("template `{t}` needs exactly one SUBJ and one OBJ slot"));
            }
        }
        for (ty, pool) in &self.names {
            let visible: BTreeSet<&String> = pool.visible.iter().collect();
            if let Some(n) = pool.test_only.iter().find(|n| visible.contains(n)) {
                return fail(format!("name `{n}` of type {ty} is both visible and test-only"));
            }
            if pool
                .visible
                .iter()
                .chain(&pool.test_only)
                .any(|n| n.split_whitespace().next().is_none())
            {
                return fail(format!("type {ty} has an empty name"));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> LabelSchema {
        let labels = std::iter::once(TACRED_NA.to_string()).chain(self.relations.iter().map(|r| r.name.clone()));
        LabelSchema::new(labels, TACRED_NA).expect("validated inventory")
    }

    /// Distinct (subject type, object type) pairs with their relations, in
    /// inventory order.
    pub fn signatures(&self) -> Vec<Signature> {
        let mut out: Vec<Signature> = Vec::new();
        for r in &self.relations {
            match out
                .iter_mut()
                .find(|s| s.subj_type == r.subj_type && s.obj_type == r.obj_type)
            {
                Some(s) => s.relations.push(r.name.clone()),
                None => out.push(Signature {
                    subj_type: r.subj_type.clone(),
                    obj_type: r.obj_type.clone(),
                    relations: vec![r.name.clone()],
                }),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub subj_type: String,
    pub obj_type: String,
    pub relations: Vec<String>,
}

impl Signature {
    /// The signature's relations followed by NA.
    pub fn labels(&self) -> Vec<&str> {
        self.relations.iter().map(String::as_str).chain([TACRED_NA]).collect()
    }
}

/// The name-rule table: (subject type, object type, key) to label.
pub type NameRules = BTreeMap<(String, String, String), String>;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub test_unseen: Dataset,
    pub name_rules: NameRules,
}

fn rule_key(name: &str, key: NameRuleKey) -> String {
    match key {
        NameRuleKey::Family => name.split_whitespace().next().unwrap_or_default().to_string(),
        NameRuleKey::Identity => name.to_string(),
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    signatures: Vec<Signature>,
    templates: HashMap<&'a str, &'a [String]>,
    rules: NameRules,
    rng: ChaCha8Rng,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SynthConfig) -> Self {
        let mut templates: HashMap<&str, &[String]> = cfg
            .relations
            .iter()
            .map(|r| (r.name.as_str(), r.templates.as_slice()))
            .collect();
        templates.insert(TACRED_NA, &cfg.na_templates);
        Self {
            cfg,
            signatures: cfg.signatures(),
            templates,
            rules: NameRules::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    /// Family rules are drawn up front so the table does not depend on
    /// which names happen to be sampled.
    fn draw_family_rules(&mut self) {
        let families: BTreeSet<String> = self
            .cfg
            .names
            .values()
            .flat_map(|p| p.visible.iter().chain(&p.test_only))
            .map(|n| rule_key(n, NameRuleKey::Family))
            .collect();
        for sig in &self.signatures {
            let labels = sig.labels();
            for fam in &families {
                let label = labels[self.rng.gen_range(0..labels.len())].to_string();
                self.rules
                    .insert((sig.subj_type.clone(), sig.obj_type.clone(), fam.clone()), label);
            }
        }
    }

    fn rule_label(&mut self, sig: usize, subj_name: &str) -> String {
        let sig = &self.signatures[sig];
        let key = (
            sig.subj_type.clone(),
            sig.obj_type.clone(),
            rule_key(subj_name, self.cfg.name_rule_key),
        );
        if let Some(label) = self.rules.get(&key) {
            return label.clone();
        }
        let labels = sig.labels();
        let label = labels[self.rng.gen_range(0..labels.len())].to_string();
        self.rules.insert(key, label.clone());
        label
    }

    fn instance(&mut self, id: String, test_only: bool) -> RelationInstance {
        let sig_idx = self.rng.gen_range(0..self.signatures.len());
        let (subj_type, obj_type) = {
            let s = &self.signatures[sig_idx];
            (s.subj_type.clone(), s.obj_type.clone())
        };
        let cfg = self.cfg;
        let pick_name = |rng: &mut ChaCha8Rng, ty: &str| {
            let pool = &cfg.names[ty];
            let names = if test_only { &pool.test_only } else { &pool.visible };
            names[rng.gen_range(0..names.len())].clone()
        };
        let subj_name = pick_name(&mut self.rng, &subj_type);
        let obj_name = pick_name(&mut self.rng, &obj_type);

        let (relation, template) = if self.rng.gen_bool(self.cfg.name_signal) {
            let label = self.rule_label(sig_idx, &subj_name);
            let t = self
                .cfg
                .neutral_templates
                .choose(&mut self.rng)
                .expect("validated")
                .clone();
            (label, t)
        } else {
            let labels = self.signatures[sig_idx].labels();
            let label = labels[self.rng.gen_range(0..labels.len())];
            let t = self.templates[label].choose(&mut self.rng).expect("validated").clone();
            (label.to_string(), t)
        };

        let mut tokens = Vec::new();
        let mut subj_span = Span::new(0, 0);
        let mut obj_span = Span::new(0, 0);
        for word in template.split_whitespace() {
            let (name, span) = match word {
                SUBJ_SLOT => (&subj_name, &mut subj_span),
                OBJ_SLOT => (&obj_name, &mut obj_span),
                _ => {
                    tokens.push(word.to_string());
                    continue;
                }
            };
            let start = tokens.len();
            tokens.extend(name.split_whitespace().map(str::to_string));
            *span = Span::new(start, tokens.len() - 1);
        }
        RelationInstance {
            id,
            tokens,
            subj_span,
            obj_span,
            subj_type,
            obj_type,
            relation,
        }
    }

    fn split(&mut self, name: &str, size: usize, test_only: bool) -> Vec<RelationInstance> {
        (0..size)
            .map(|i| self.instance(format!("{name}-{i:06}"), test_only))
            .collect()
    }
}

/// Generates train, dev (visible names) and test_unseen (test-only names)
/// from one seeded stream, then applies the configured training noise.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let schema = cfg.schema();
    let mut gen = Generator::new(cfg);
    if cfg.name_rule_key == NameRuleKey::Family {
        gen.draw_family_rules();
    }
    let train = gen.split("train", cfg.train_size, false);
    let dev = gen.split("dev", cfg.dev_size, false);
    let test = gen.split("test", cfg.test_size, true);
    let noise_seed = gen.rng.gen();
    let train = Dataset::new("train", train, schema.clone())?;
    let train = inject_noise(&train, cfg.noise_rate, cfg.noise_mode, noise_seed)?;
    Ok(SynthCorpus {
        train,
        dev: Dataset::new("dev", dev, schema.clone())?,
        test_unseen: Dataset::new("test_unseen", test, schema)?,
        name_rules: gen.rules,
    })
}

/// Relations observed with each (subject type, object type) pair, NA
/// excluded.
pub fn observed_signatures(dataset: &Dataset) -> BTreeMap<(String, String), BTreeSet<String>> {
    let na = dataset.schema.na_label();
    let mut out: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for inst in &dataset.instances {
        let entry = out.entry((inst.subj_type.clone(), inst.obj_type.clone())).or_default();
        if inst.relation != na {
            entry.insert(inst.relation.clone());
        }
    }
    out
}

/// Flips exactly `round(rate * N)` labels, chosen by seeded sampling
/// without replacement among instances that have a legal replacement.
///
/// `Uniform` draws any other schema label. `TypeConsistent` draws another
/// relation seen with the same type pair in `dataset`, falling back to NA;
/// an NA instance whose type pair has no relations cannot flip.
pub fn inject_noise(dataset: &Dataset, rate: f64, mode: NoiseMode, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config("noise rate must lie in [0, 1]".into()));
    }
    let schema = &dataset.schema;
    let na = schema.na_label().to_string();
    let signatures = observed_signatures(dataset);
    let candidates = |inst: &RelationInstance| -> Vec<String> {
        match mode {
            NoiseMode::Uniform => schema
                .labels()
                .iter()
                .filter(|l| **l != inst.relation)
                .cloned()
                .collect(),
            NoiseMode::TypeConsistent => {
                let sig = &signatures[&(inst.subj_type.clone(), inst.obj_type.clone())];
                let others: Vec<String> = sig.iter().filter(|l| **l != inst.relation).cloned().collect();
                if !others.is_empty() {
                    others
                } else if inst.relation != na {
                    vec![na.clone()]
                } else {
                    vec![]
                }
            }
        }
    };
    let options: Vec<Vec<String>> = dataset.instances.iter().map(candidates).collect();
    let flippable: Vec<usize> = (0..options.len()).filter(|&i| !options[i].is_empty()).collect();
    let target = (rate * dataset.len() as f64).round() as usize;
    let count = target.min(flippable.len());
    if count < target {
        log::warn!("only {} of {target} requested flips are possible", flippable.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, flippable.len(), count)
        .into_iter()
        .map(|k| flippable[k])
        .collect();
    chosen.sort_unstable();
    let mut instances = dataset.instances.clone();
    for i in chosen {
        instances[i].relation = options[i].choose(&mut rng).expect("non-empty").clone();
    }
    Dataset::new(dataset.split.clone(), instances, schema.clone())
}

/// Accuracy of the best predictor that sees only the type pair: the
/// majority-label share summed over type pairs.
pub fn type_marginal_ceiling(dataset: &Dataset) -> f64 {
    let keys = dataset
        .instances
        .iter()
        .map(|inst| format!("{}\u{1f}{}", inst.subj_type, inst.obj_type));
    grouped_ceiling(dataset, keys)
}

/// Accuracy of the best predictor that sees only the entity-mask input.
pub fn masked_ceiling(dataset: &Dataset) -> Result<f64> {
    let scheme = MarkingScheme::new(SchemeKind::EntityMask);
    let keys = dataset
        .instances
        .iter()
        .map(|inst| mark(inst, &scheme).map(|m| m.tokens.join("\u{1f}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(grouped_ceiling(dataset, keys))
}

fn grouped_ceiling(dataset: &Dataset, keys: impl IntoIterator<Item = String>) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<String, HashMap<&str, usize>> = HashMap::new();
    for (key, inst) in keys.into_iter().zip(&dataset.instances) {
        *counts.entry(key).or_default().entry(&inst.relation).or_default() += 1;
    }
    let best: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    best as f64 / dataset.len() as f64
}
