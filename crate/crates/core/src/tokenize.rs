//! Subword vocabulary and greedy longest-prefix splitting.
//!
//! Registered special tokens are atomic: they always map to a single id and
//! are never produced by splitting. Other tokens are split left to right,
//! taking the longest vocabulary piece at each position; pieces after the
//! first carry the `##` continuation prefix. A run of characters that no
//! piece covers becomes one unknown id.
//!
//! # File format
//!
//! ```text
//! #vocab v1
//! #continuation ##
//! #lowercase false
//! #specials 3
//! [UNK]
//! <S:PERSON>
//! </S:PERSON>
//! #pieces 2
//! Bill
//! ##s
//! ```
//!
//! Ids are assigned in file order, specials first. The unknown token is
//! always the first special.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::marking::{mark, MarkedInstance, MarkingScheme};

pub const UNK: &str = "[UNK]";
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    num_specials: usize,
    lowercase: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit special and piece lists. `[UNK]` is
    /// prepended to the specials when absent.
    pub fn from_parts(
        specials: impl IntoIterator<Item = String>,
        pieces: impl IntoIterator<Item = String>,
        lowercase: bool,
    ) -> Result<Self> {
        let mut entries = vec![UNK.to_string()];
        entries.extend(specials.into_iter().filter(|s| s != UNK));
        let num_specials = entries.len();
        entries.extend(pieces);
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        Ok(Self {
            entries,
            index,
            num_specials,
            lowercase,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn specials(&self) -> &[String] {
        &self.entries[..self.num_specials]
    }

    pub fn pieces(&self) -> &[String] {
        &self.entries[self.num_specials..]
    }

    pub fn is_special(&self, token: &str) -> bool {
        self.index
            .get(token)
            .is_some_and(|&id| (id as usize) < self.num_specials)
    }

    /// Splits one non-special token into piece ids.
    pub fn split_word(&self, word: &str) -> Vec<u32> {
        let normalized;
        let word = if self.lowercase {
            normalized = word.to_lowercase();
            normalized.as_str()
        } else {
            word
        };
        if word.is_empty() {
            return vec![self.unk_id()];
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut out = Vec::new();
        let mut in_unknown_run = false;
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + CONTINUATION.len());
        while start + 1 < bounds.len() {
            let mut matched = None;
            for end in (start + 1..bounds.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    if id as usize >= self.num_specials {
                        matched = Some((id, end));
                        break;
                    }
                }
            }
            match matched {
                Some((id, end)) => {
                    out.push(id);
                    in_unknown_run = false;
                    start = end;
                }
                None => {
                    if !in_unknown_run {
                        out.push(self.unk_id());
                        in_unknown_run = true;
                    }
                    start += 1;
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("#vocab v1\n");
        s.push_str(&format!("#continuation {CONTINUATION}\n"));
        s.push_str(&format!("#lowercase {}\n", self.lowercase));
        s.push_str(&format!("#specials {}\n", self.num_specials));
        for e in self.specials() {
            s.push_str(e);
            s.push('\n');
        }
        s.push_str(&format!("#pieces {}\n", self.entries.len() - self.num_specials));
        for e in self.pieces() {
            s.push_str(e);
            s.push('\n');
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("vocabulary file: {msg}"));
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {key:?}, found {line:?}")))
        };
        if header("#vocab")? != "v1" {
            return Err(bad("unsupported version"));
        }
        if header("#continuation")? != CONTINUATION {
            return Err(bad("unsupported continuation marker"));
        }
        let lowercase = header("#lowercase")?
            .parse::<bool>()
            .map_err(|_| bad("lowercase must be true or false"))?;
        let n_specials = header("#specials")?
            .parse::<usize>()
            .map_err(|_| bad("bad specials count"))?;
        let mut take = |n: usize| -> Result<Vec<String>> {
            (0..n)
                .map(|_| lines.next().map(str::to_owned).ok_or_else(|| bad("truncated entries")))
                .collect()
        };
        let specials = take(n_specials)?;
        if specials.first().map(String::as_str) != Some(UNK) {
            return Err(bad("first special must be [UNK]"));
        }
        let mut rest = text.lines().skip(4 + n_specials);
        let n_pieces = rest
            .next()
            .and_then(|l| l.strip_prefix("#pieces"))
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| bad("missing #pieces header"))?;
        let pieces: Vec<String> = rest.take(n_pieces).map(str::to_owned).collect();
        if pieces.len() != n_pieces {
            return Err(bad("truncated pieces"));
        }
        Self::from_parts(specials, pieces, lowercase)
    }
}

/// Counts word and character-piece frequencies over token sequences.
///
/// Candidates are whole words, word-initial characters, and `##`-prefixed
/// non-initial characters, each weighted by word frequency.
#[derive(Debug, Default)]
pub struct VocabBuilder {
    counts: HashMap<String, u64>,
    specials: BTreeSet<String>,
    lowercase: bool,
}

impl VocabBuilder {
    pub fn new(lowercase: bool) -> Self {
        Self {
            lowercase,
            ..Self::default()
        }
    }

    pub fn add_special(&mut self, token: impl Into<String>) {
        self.specials.insert(token.into());
    }

    pub fn add_word(&mut self, word: &str) {
        if self.specials.contains(word) || word.is_empty() {
            return;
        }
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        for (k, ch) in word.chars().enumerate() {
            let piece = if k == 0 {
                ch.to_string()
            } else {
                format!("{CONTINUATION}{ch}")
            };
            *self.counts.entry(piece).or_default() += 1;
        }
        if word.chars().count() > 1 {
            *self.counts.entry(word).or_default() += 1;
        }
    }

    /// Keeps every special plus the most frequent candidates, `max_size`
    /// entries in total. Ties are broken by byte order.
    pub fn build(self, max_size: usize) -> Result<Vocabulary> {
        let required = 1 + self.specials.iter().filter(|s| *s != UNK).count();
        if max_size < required {
            return Err(Error::Config(format!(
                "max vocabulary size {max_size} is smaller than the {required} required special tokens"
            )));
        }
        let mut ranked: Vec<(String, u64)> = self.counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let pieces = ranked.into_iter().take(max_size - required).map(|(p, _)| p);
        Vocabulary::from_parts(self.specials, pieces, self.lowercase)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VocabOptions {
    pub max_size: usize,
    pub lowercase: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            max_size: 8000,
            lowercase: false,
        }
    }
}

/// Builds a vocabulary over `corpus` as marked by every scheme in `schemes`.
pub fn build_vocab(corpus: &Dataset, schemes: &[MarkingScheme], opts: VocabOptions) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let types = corpus.entity_types();
    let mut builder = VocabBuilder::new(opts.lowercase);
    for scheme in schemes {
        for tok in scheme.kind.special_tokens(types.iter().map(String::as_str)) {
            builder.add_special(tok);
        }
    }
    for scheme in schemes {
        for inst in &corpus.instances {
            let marked = mark(inst, scheme)?;
            for tok in &marked.tokens {
                builder.add_word(tok);
            }
        }
    }
    builder.build(opts.max_size)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtokenizedInstance {
    pub ids: Vec<u32>,
    pub subj_head_sub: usize,
    pub obj_head_sub: usize,
    /// First subtoken index of every marked token.
    pub token_to_subtoken: Vec<usize>,
}

impl SubtokenizedInstance {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn subtokenize(marked: &MarkedInstance, vocab: &Vocabulary) -> Result<SubtokenizedInstance> {
    let mut ids = Vec::with_capacity(marked.tokens.len() * 2);
    let mut token_to_subtoken = Vec::with_capacity(marked.tokens.len());
    for tok in &marked.tokens {
        token_to_subtoken.push(ids.len());
        if vocab.is_special(tok) {
            ids.push(vocab.id(tok).expect("special is registered"));
        } else if marked.special_tokens.contains(tok) {
            return Err(Error::UnregisteredSpecial(tok.clone()));
        } else {
            ids.extend(vocab.split_word(tok));
        }
    }
    Ok(SubtokenizedInstance {
        subj_head_sub: token_to_subtoken[marked.subj_head],
        obj_head_sub: token_to_subtoken[marked.obj_head],
        ids,
        token_to_subtoken,
    })
}
