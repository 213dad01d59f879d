//! Entity representation schemes applied at the token level.
//!
//! Every scheme inserts (or substitutes) tokens around the subject and object
//! spans of a [`RelationInstance`]. Insertions are made while walking the
//! original tokens, so the output does not depend on whether the subject
//! precedes the object. Each marked token records where it came from, which
//! is what lets head positions and round trips be checked.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    EntityMask,
    EntityMarker,
    EntityMarkerPunct,
    TypedEntityMarker,
    TypedEntityMarkerPunct,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::EntityMask,
        SchemeKind::EntityMarker,
        SchemeKind::EntityMarkerPunct,
        SchemeKind::TypedEntityMarker,
        SchemeKind::TypedEntityMarkerPunct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::EntityMask => "entity_mask",
            SchemeKind::EntityMarker => "entity_marker",
            SchemeKind::EntityMarkerPunct => "entity_marker_punct",
            SchemeKind::TypedEntityMarker => "typed_entity_marker",
            SchemeKind::TypedEntityMarkerPunct => "typed_entity_marker_punct",
        }
    }

    /// Whether the marked text exposes the NER types.
    pub fn shows_types(self) -> bool {
        matches!(
            self,
            SchemeKind::EntityMask | SchemeKind::TypedEntityMarker | SchemeKind::TypedEntityMarkerPunct
        )
    }

    /// Whether the marked text keeps the entity names.
    pub fn shows_names(self) -> bool {
        self != SchemeKind::EntityMask
    }

    /// Special tokens this scheme needs for the given NER types (either role).
    pub fn special_tokens<'a>(self, types: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
        let types: Vec<&str> = types.into_iter().collect();
        let mut out = BTreeSet::new();
        match self {
            SchemeKind::EntityMask => {
                for t in types {
                    out.insert(mask_token(Role::Subject, t));
                    out.insert(mask_token(Role::Object, t));
                }
            }
            SchemeKind::EntityMarker => {
                for tok in ["[E1]", "[/E1]", "[E2]", "[/E2]"] {
                    out.insert(tok.to_string());
                }
            }
            SchemeKind::TypedEntityMarker => {
                for t in types {
                    for role in [Role::Subject, Role::Object] {
                        let (open, close) = typed_markers(role, t);
                        out.insert(open);
                        out.insert(close);
                    }
                }
            }
            SchemeKind::EntityMarkerPunct | SchemeKind::TypedEntityMarkerPunct => {}
        }
        out
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme kind {s:?}")))
    }
}

/// Which token stands for an entity in the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAnchor {
    /// First token of the entity itself (the mask token under masking).
    #[default]
    EntityFirst,
    /// The opening marker token.
    MarkerStart,
}

impl FromStr for HeadAnchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity_first" => Ok(HeadAnchor::EntityFirst),
            "marker_start" => Ok(HeadAnchor::MarkerStart),
            _ => Err(Error::Config(format!("unknown head anchor {s:?}"))),
        }
    }
}

/// How `entity_mask` replaces a multi-token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One mask token per span.
    #[default]
    Collapse,
    /// One mask token per original token.
    Repeat,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapse" => Ok(MaskMode::Collapse),
            "repeat" => Ok(MaskMode::Repeat),
            _ => Err(Error::Config(format!("unknown mask mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkingScheme {
    pub kind: SchemeKind,
    #[serde(default)]
    pub head_anchor: HeadAnchor,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl MarkingScheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            head_anchor: HeadAnchor::default(),
            mask_mode: MaskMode::default(),
        }
    }

    pub fn with_anchor(mut self, anchor: HeadAnchor) -> Self {
        self.head_anchor = anchor;
        self
    }

    pub fn with_mask_mode(mut self, mode: MaskMode) -> Self {
        self.mask_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SchemeKind::EntityMask
            && self.mask_mode == MaskMode::Collapse
            && self.head_anchor == HeadAnchor::MarkerStart
        {
            return Err(Error::Config(
                "marker_start anchor is undefined for collapsed entity masks".into(),
            ));
        }
        Ok(())
    }
}

impl From<SchemeKind> for MarkingScheme {
    fn from(kind: SchemeKind) -> Self {
        Self::new(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Subject,
    Object,
}

/// Origin of a marked token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Copied from the original token at this index.
    Original(usize),
    /// Added by the scheme.
    Inserted,
    /// Mask standing in for (part of) the original span.
    Mask(Span),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_head: usize,
    pub obj_head: usize,
    pub special_tokens: BTreeSet<String>,
    pub provenance: Vec<Provenance>,
    pub relation: String,
    pub subj_span: Span,
    pub obj_span: Span,
    pub subj_type: String,
    pub obj_type: String,
}

impl MarkedInstance {
    pub fn display(&self) -> String {
        self.tokens.join(" ")
    }

    /// Drops inserted tokens and expands masks with `original`, recovering the
    /// source token sequence.
    pub fn restore(&self, original: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(original.len());
        let mut i = 0;
        while i < self.tokens.len() {
            match self.provenance[i] {
                Provenance::Original(_) => out.push(self.tokens[i].clone()),
                Provenance::Inserted => {}
                Provenance::Mask(span) => {
                    out.extend(original[span.start..=span.end].iter().cloned());
                    // skip the remaining repeat-mode masks of this span
                    while i + 1 < self.tokens.len() && self.provenance[i + 1] == Provenance::Mask(span) {
                        i += 1;
                    }
                }
            }
            i += 1;
        }
        out
    }
}

fn mask_token(role: Role, ner_type: &str) -> String {
    match role {
        Role::Subject => format!("[SUBJ-{ner_type}]"),
        Role::Object => format!("[OBJ-{ner_type}]"),
    }
}

fn typed_markers(role: Role, ner_type: &str) -> (String, String) {
    let tag = match role {
        Role::Subject => 'S',
        Role::Object => 'O',
    };
    (format!("<{tag}:{ner_type}>"), format!("</{tag}:{ner_type}>"))
}

/// Label text of an NER type: lowercased, underscores become word breaks.
pub fn type_label_words(ner_type: &str) -> Vec<String> {
    ner_type
        .to_lowercase()
        .split('_')
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Tokens placed before and after an entity span, plus whether the span
/// itself is replaced by a mask token.
struct Wrap {
    open: Vec<String>,
    close: Vec<String>,
    mask: Option<String>,
}

fn wrap(kind: SchemeKind, role: Role, ner_type: &str) -> Wrap {
    let s = |x: &str| x.to_string();
    match (kind, role) {
        (SchemeKind::EntityMask, _) => Wrap {
            open: vec![],
            close: vec![],
            mask: Some(mask_token(role, ner_type)),
        },
        (SchemeKind::EntityMarker, Role::Subject) => Wrap {
            open: vec![s("[E1]")],
            close: vec![s("[/E1]")],
            mask: None,
        },
        (SchemeKind::EntityMarker, Role::Object) => Wrap {
            open: vec![s("[E2]")],
            close: vec![s("[/E2]")],
            mask: None,
        },
        (SchemeKind::EntityMarkerPunct, Role::Subject) => Wrap {
            open: vec![s("@")],
            close: vec![s("@")],
            mask: None,
        },
        (SchemeKind::EntityMarkerPunct, Role::Object) => Wrap {
            open: vec![s("#")],
            close: vec![s("#")],
            mask: None,
        },
        (SchemeKind::TypedEntityMarker, _) => {
            let (open, close) = typed_markers(role, ner_type);
            Wrap {
                open: vec![open],
                close: vec![close],
                mask: None,
            }
        }
        (SchemeKind::TypedEntityMarkerPunct, _) => {
            let (boundary, type_delim) = match role {
                Role::Subject => ("@", "*"),
                Role::Object => ("#", "^"),
            };
            let mut open = vec![s(boundary), s(type_delim)];
            open.extend(type_label_words(ner_type));
            open.push(s(type_delim));
            Wrap {
                open,
                close: vec![s(boundary)],
                mask: None,
            }
        }
    }
}

/// Applies `scheme` to `instance`.
pub fn mark(instance: &RelationInstance, scheme: &MarkingScheme) -> Result<MarkedInstance> {
    scheme.validate()?;
    instance.validate_spans()?;
    let subj = wrap(scheme.kind, Role::Subject, &instance.subj_type);
    let obj = wrap(scheme.kind, Role::Object, &instance.obj_type);

    let mut tokens = Vec::with_capacity(instance.tokens.len() + 12);
    let mut provenance = Vec::with_capacity(tokens.capacity());
    let mut subj_first = None;
    let mut obj_first = None;

    let push = |tokens: &mut Vec<String>, provenance: &mut Vec<Provenance>, tok: String, p: Provenance| {
        tokens.push(tok);
        provenance.push(p);
    };

    for (i, tok) in instance.tokens.iter().enumerate() {
        for (span, w, first) in [
            (instance.subj_span, &subj, &mut subj_first),
            (instance.obj_span, &obj, &mut obj_first),
        ] {
            if !span.contains(i) {
                continue;
            }
            if i == span.start {
                for t in &w.open {
                    push(&mut tokens, &mut provenance, t.clone(), Provenance::Inserted);
                }
                *first = Some(tokens.len());
            }
            match &w.mask {
                Some(m) => {
                    let repeat = scheme.mask_mode == MaskMode::Repeat;
                    if i == span.start || repeat {
                        push(&mut tokens, &mut provenance, m.clone(), Provenance::Mask(span));
                    }
                }
                None => push(&mut tokens, &mut provenance, tok.clone(), Provenance::Original(i)),
            }
            if i == span.end {
                for t in &w.close {
                    push(&mut tokens, &mut provenance, t.clone(), Provenance::Inserted);
                }
            }
        }
        if !instance.subj_span.contains(i) && !instance.obj_span.contains(i) {
            push(&mut tokens, &mut provenance, tok.clone(), Provenance::Original(i));
        }
    }

    let subj_first = subj_first.expect("validated span start lies inside the sentence");
    let obj_first = obj_first.expect("validated span start lies inside the sentence");
    let (subj_head, obj_head) = match scheme.head_anchor {
        HeadAnchor::EntityFirst => (subj_first, obj_first),
        HeadAnchor::MarkerStart => (subj_first - subj.open.len(), obj_first - obj.open.len()),
    };

    let special_tokens = scheme
        .kind
        .special_tokens([instance.subj_type.as_str()])
        .into_iter()
        .chain(scheme.kind.special_tokens([instance.obj_type.as_str()]))
        .filter(|t| tokens.contains(t))
        .collect();

    Ok(MarkedInstance {
        id: instance.id.clone(),
        tokens,
        subj_head,
        obj_head,
        special_tokens,
        provenance,
        relation: instance.relation.clone(),
        subj_span: instance.subj_span,
        obj_span: instance.obj_span,
        subj_type: instance.subj_type.clone(),
        obj_type: instance.obj_type.clone(),
    })
}

/// Head positions of `marked` under `scheme`'s anchor, derived from
/// provenance rather than the stored heads.
pub fn head_indices(marked: &MarkedInstance, scheme: &MarkingScheme) -> (usize, usize) {
    let first_of = |span: Span| {
        marked
            .provenance
            .iter()
            .position(|p| match *p {
                Provenance::Original(i) => i == span.start,
                Provenance::Mask(s) => s == span,
                Provenance::Inserted => false,
            })
            .expect("marked instance covers both spans")
    };
    let subj_first = first_of(marked.subj_span);
    let obj_first = first_of(marked.obj_span);
    match scheme.head_anchor {
        HeadAnchor::EntityFirst => (subj_first, obj_first),
        HeadAnchor::MarkerStart => {
            let subj_open = wrap(scheme.kind, Role::Subject, &marked.subj_type).open.len();
            let obj_open = wrap(scheme.kind, Role::Object, &marked.obj_type).open.len();
            (subj_first - subj_open, obj_first - obj_open)
        }
    }
}

/// One line of the marked-corpus export consumed by external fine-tuning
/// adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedRecord {
    pub id: String,
    pub marked_tokens: Vec<String>,
    pub subj_head: usize,
    pub obj_head: usize,
    pub relation: String,
    pub special_tokens: Vec<String>,
}

impl From<&MarkedInstance> for MarkedRecord {
    fn from(m: &MarkedInstance) -> Self {
        Self {
            id: m.id.clone(),
            marked_tokens: m.tokens.clone(),
            subj_head: m.subj_head,
            obj_head: m.obj_head,
            relation: m.relation.clone(),
            special_tokens: m.special_tokens.iter().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bill() -> RelationInstance {
        RelationInstance {
            id: "bill".into(),
            tokens: ["Bill", "was", "born", "in", "Seattle", "."].map(String::from).to_vec(),
            subj_span: Span::new(0, 0),
            obj_span: Span::new(4, 4),
            subj_type: "PERSON".into(),
            obj_type: "CITY".into(),
            relation: "per:city_of_birth".into(),
        }
    }

    fn surface(kind: SchemeKind) -> String {
        mark(&bill(), &MarkingScheme::new(kind)).unwrap().display()
    }

    #[test]
    fn bill_surfaces() {
        assert_eq!(
            surface(SchemeKind::EntityMask),
            "[SUBJ-PERSON] was born in [OBJ-CITY] ."
        );
        assert_eq!(
            surface(SchemeKind::EntityMarker),
            "[E1] Bill [/E1] was born in [E2] Seattle [/E2] ."
        );
        assert_eq!(
            surface(SchemeKind::EntityMarkerPunct),
            "@ Bill @ was born in # Seattle # ."
        );
        assert_eq!(
            surface(SchemeKind::TypedEntityMarker),
            "<S:PERSON> Bill </S:PERSON> was born in <O:CITY> Seattle </O:CITY> ."
        );
        assert_eq!(
            surface(SchemeKind::TypedEntityMarkerPunct),
            "@ * person * Bill @ was born in # ^ city ^ Seattle # ."
        );
    }

    #[test]
    fn heads_on_bill() {
        let m = mark(&bill(), &MarkingScheme::new(SchemeKind::EntityMarker)).unwrap();
        assert_eq!((m.subj_head, m.obj_head), (1, 7));
        assert_eq!(m.tokens[m.obj_head], "Seattle");

        let scheme = MarkingScheme::new(SchemeKind::EntityMarker).with_anchor(HeadAnchor::MarkerStart);
        let m = mark(&bill(), &scheme).unwrap();
        assert_eq!(m.subj_head, 0);
        assert_eq!(m.tokens[m.obj_head], "[E2]");
        assert_eq!(head_indices(&m, &scheme), (m.subj_head, m.obj_head));

        // @ * person * Bill -> Bill sits at index 4
        let scheme = MarkingScheme::new(SchemeKind::TypedEntityMarkerPunct);
        let m = mark(&bill(), &scheme).unwrap();
        assert_eq!(m.subj_head, 4);
        assert_eq!(m.tokens[m.obj_head], "Seattle");
        let anchored = scheme.with_anchor(HeadAnchor::MarkerStart);
        assert_eq!(head_indices(&m, &anchored), (0, 9));
    }

    #[test]
    fn adjacent_entities() {
        let inst = RelationInstance {
            tokens: ["Acme", "Corp", "Boston", "office"].map(String::from).to_vec(),
            subj_span: Span::new(0, 1),
            obj_span: Span::new(2, 2),
            subj_type: "ORGANIZATION".into(),
            obj_type: "CITY".into(),
            ..bill()
        };
        let m = mark(&inst, &MarkingScheme::new(SchemeKind::EntityMarker)).unwrap();
        assert_eq!(m.display(), "[E1] Acme Corp [/E1] [E2] Boston [/E2] office");
        assert_eq!(m.restore(&inst.tokens), inst.tokens);
        assert_eq!(m.provenance[3], Provenance::Inserted);
        assert_eq!(m.provenance[5], Provenance::Original(2));
    }

    #[test]
    fn object_before_subject() {
        let inst = RelationInstance {
            tokens: ["In", "Seattle", ",", "Bill", "was", "born"].map(String::from).to_vec(),
            subj_span: Span::new(3, 3),
            obj_span: Span::new(1, 1),
            ..bill()
        };
        let m = mark(&inst, &MarkingScheme::new(SchemeKind::TypedEntityMarkerPunct)).unwrap();
        assert_eq!(m.display(), "In # ^ city ^ Seattle # , @ * person * Bill @ was born");
        assert_eq!(m.tokens[m.subj_head], "Bill");
        assert_eq!(m.tokens[m.obj_head], "Seattle");
    }

    #[test]
    fn multiword_type_label() {
        let inst = RelationInstance {
            obj_type: "STATE_OR_PROVINCE".into(),
            ..bill()
        };
        let m = mark(&inst, &MarkingScheme::new(SchemeKind::TypedEntityMarkerPunct)).unwrap();
        assert_eq!(
            m.display(),
            "@ * person * Bill @ was born in # ^ state or province ^ Seattle # ."
        );
    }

    #[test]
    fn mask_modes() {
        let inst = RelationInstance {
            tokens: ["Bill", "Gates", "founded", "Microsoft"].map(String::from).to_vec(),
            subj_span: Span::new(0, 1),
            obj_span: Span::new(3, 3),
            subj_type: "PERSON".into(),
            obj_type: "ORGANIZATION".into(),
            ..bill()
        };
        let collapse = mark(&inst, &MarkingScheme::new(SchemeKind::EntityMask)).unwrap();
        assert_eq!(collapse.display(), "[SUBJ-PERSON] founded [OBJ-ORGANIZATION]");
        assert_eq!(collapse.restore(&inst.tokens), inst.tokens);

        let repeat = MarkingScheme::new(SchemeKind::EntityMask).with_mask_mode(MaskMode::Repeat);
        let m = mark(&inst, &repeat).unwrap();
        assert_eq!(m.display(), "[SUBJ-PERSON] [SUBJ-PERSON] founded [OBJ-ORGANIZATION]");
        assert_eq!(m.restore(&inst.tokens), inst.tokens);
    }

    #[test]
    fn invalid_inputs() {
        let mut inst = bill();
        inst.obj_span = Span::new(0, 2);
        assert!(mark(&inst, &MarkingScheme::new(SchemeKind::EntityMarker)).is_err());

        let bad = MarkingScheme::new(SchemeKind::EntityMask).with_anchor(HeadAnchor::MarkerStart);
        assert!(matches!(mark(&bill(), &bad), Err(Error::Config(_))));
        assert!("entity_markers".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn special_token_sets() {
        let m = mark(&bill(), &MarkingScheme::new(SchemeKind::TypedEntityMarker)).unwrap();
        let expected: BTreeSet<String> = ["<S:PERSON>", "</S:PERSON>", "<O:CITY>", "</O:CITY>"]
            .map(String::from)
            .into();
        assert_eq!(m.special_tokens, expected);
        for kind in [SchemeKind::EntityMarkerPunct, SchemeKind::TypedEntityMarkerPunct] {
            let m = mark(&bill(), &MarkingScheme::new(kind)).unwrap();
            assert!(m.special_tokens.is_empty());
        }
    }
}
