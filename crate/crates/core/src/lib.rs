//! Entity-marker input formatting, a small marker-aware relation
//! classifier, and TACRED-style micro-F1 evaluation.
//!
//! The pipeline is: load a [`corpus::Dataset`], rewrite each instance with a
//! [`marking::MarkingScheme`], subtokenize against a
//! [`tokenize::Vocabulary`], train a [`model::ClassifierParams`] with
//! [`train::train_run`], and score predictions with [`eval::score`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod marking;
pub mod model;
pub mod synth;
pub mod tokenize;
pub mod train;

pub use corpus::{Dataset, LabelSchema, RelationInstance, Span};
pub use error::{Error, ErrorClass, Result};
pub use eval::{score, EvalReport, MatchRule};
pub use marking::{mark, HeadAnchor, MarkedInstance, MarkingScheme, MaskMode, SchemeKind};
pub use model::{ClassifierParams, EncoderVariant};
pub use tokenize::{build_vocab, subtokenize, Vocabulary};
pub use train::{train_run, ModelConfig, TrainConfig};
