//! Vocabulary, encodings and rationale masks.
//!
//! Tokenization is whitespace words, lowercased. An [`Encoding`] lays a
//! sentence out as `[CLS] w_1 .. w_n [SEP] [PAD]..` and remembers, per
//! position, which source word it came from and which characters of the
//! original text it covers. Rationale masks are only ever set on content
//! positions (real words), never on specials or padding.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CharSpan, Dataset, Example};
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary").field("len", &self.tokens.len()).finish()
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Other(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index
            .get(&word.to_lowercase())
            .copied()
            .filter(|&id| id as usize >= SPECIALS.len())
            .unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special entries in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    /// Four special-token lines, then one token per line in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io("<vocab stream>", e))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io("<vocab stream>", e))?;
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::Other("vocabulary file lacks the special-token header".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Words with corpus frequency `>= min_freq`, ordered by descending
/// frequency then lexicographically.
pub fn build_vocab(datasets: &[&Dataset], min_freq: usize) -> Result<Vocabulary> {
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in datasets.iter().flat_map(|d| &d.examples) {
        for w in &ex.words {
            *counts.entry(w.to_lowercase()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(w, _)| w))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// 1 for CLS, words and SEP; 0 for padding.
    pub padding_mask: Vec<u8>,
    /// 1 only for real word positions.
    pub content_mask: Vec<u8>,
    pub offsets: Vec<Option<CharSpan>>,
    pub word_index: Vec<Option<usize>>,
}

impl Encoding {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of non-padding positions; they always form a prefix.
    pub fn valid_len(&self) -> usize {
        self.padding_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn content_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.content_mask
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(|(i, _)| i)
    }

    pub fn n_content(&self) -> usize {
        self.content_mask.iter().filter(|&&c| c == 1).count()
    }

    /// A new encoding of the same length holding only the content positions
    /// in `keep` (other content tokens deleted, order preserved).
    pub fn retain_content(&self, keep: &BTreeSet<usize>) -> Encoding {
        let max_len = self.max_len();
        let mut out = Encoding {
            ids: vec![CLS],
            padding_mask: vec![1],
            content_mask: vec![0],
            offsets: vec![None],
            word_index: vec![None],
        };
        for p in self.content_positions().filter(|p| keep.contains(p)) {
            out.ids.push(self.ids[p]);
            out.padding_mask.push(1);
            out.content_mask.push(1);
            out.offsets.push(self.offsets[p]);
            out.word_index.push(self.word_index[p]);
        }
        out.ids.push(SEP);
        out.padding_mask.push(1);
        out.content_mask.push(0);
        out.offsets.push(None);
        out.word_index.push(None);
        while out.ids.len() < max_len {
            out.ids.push(PAD);
            out.padding_mask.push(0);
            out.content_mask.push(0);
            out.offsets.push(None);
            out.word_index.push(None);
        }
        out
    }
}

/// Lays out `[CLS] w.. [SEP]` and pads to `max_len`, truncating words that
/// do not fit. Offsets are found by scanning `text` left to right; with an
/// empty `text` they are synthesized as if the words were joined by single
/// spaces.
pub fn encode(words: &[String], text: &str, vocab: &Vocabulary, max_len: usize) -> Encoding {
    assert!(max_len >= 3, "max_len must leave room for CLS, SEP and one word");
    let kept = words.len().min(max_len - 2);
    let spans = word_offsets(words, text);

    let mut enc = Encoding {
        ids: Vec::with_capacity(max_len),
        padding_mask: Vec::with_capacity(max_len),
        content_mask: Vec::with_capacity(max_len),
        offsets: Vec::with_capacity(max_len),
        word_index: Vec::with_capacity(max_len),
    };
    let mut push = |id: u32, m: u8, c: u8, off: Option<CharSpan>, wi: Option<usize>| {
        enc.ids.push(id);
        enc.padding_mask.push(m);
        enc.content_mask.push(c);
        enc.offsets.push(off);
        enc.word_index.push(wi);
    };
    push(CLS, 1, 0, None, None);
    for (i, w) in words.iter().take(kept).enumerate() {
        push(vocab.id(w), 1, 1, spans[i], Some(i));
    }
    push(SEP, 1, 0, None, None);
    for _ in kept + 2..max_len {
        push(PAD, 0, 0, None, None);
    }
    enc
}

fn word_offsets(words: &[String], text: &str) -> Vec<Option<CharSpan>> {
    if text.is_empty() {
        let mut pos = 0;
        return words
            .iter()
            .map(|w| {
                let len = w.chars().count();
                let span = (pos, pos + len);
                pos += len + 1;
                Some(span)
            })
            .collect();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut cursor = 0;
    words
        .iter()
        .map(|w| {
            let needle: Vec<char> = w.chars().collect();
            if needle.is_empty() {
                return None;
            }
            let found = (cursor..=chars.len().saturating_sub(needle.len()))
                .find(|&s| chars[s..s + needle.len()] == needle[..]);
            found.map(|s| {
                cursor = s + needle.len();
                (s, cursor)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleMask {
    pub r: Vec<u8>,
}

impl RationaleMask {
    pub fn zeros(len: usize) -> Self {
        Self { r: vec![0; len] }
    }

    pub fn count(&self) -> usize {
        self.r.iter().filter(|&&v| v == 1).count()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.r
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

pub const VOTE_THRESHOLD: f64 = 0.5;

/// Marks a word when at least `threshold` of the supplied masks mark it.
pub fn majority_vote_word_mask(masks: &[Vec<u8>], threshold: f64) -> Result<Vec<u8>> {
    let first = masks.first().ok_or(Error::NoMasks)?;
    let n = first.len();
    let mut counts = vec![0usize; n];
    for m in masks {
        if m.len() != n {
            return Err(Error::MaskLength {
                expected: n,
                got: m.len(),
            });
        }
        for (c, &v) in counts.iter_mut().zip(m) {
            *c += (v != 0) as usize;
        }
    }
    let total = masks.len() as f64;
    Ok(counts
        .into_iter()
        .map(|c| (c as f64 / total >= threshold) as u8)
        .collect())
}

pub fn word_mask_to_token_mask(word_mask: &[u8], enc: &Encoding) -> RationaleMask {
    RationaleMask {
        r: enc
            .word_index
            .iter()
            .zip(&enc.content_mask)
            .map(|(wi, &c)| match wi {
                Some(i) if c == 1 => word_mask.get(*i).copied().unwrap_or(0).min(1),
                _ => 0,
            })
            .collect(),
    }
}

/// One annotator's spans: a content position is marked when its character
/// interval overlaps any span by at least one character.
pub fn spans_to_token_mask(spans: &[CharSpan], enc: &Encoding) -> RationaleMask {
    RationaleMask {
        r: enc
            .offsets
            .iter()
            .zip(&enc.content_mask)
            .map(|(off, &c)| match off {
                Some((a, b)) if c == 1 => {
                    spans.iter().any(|&(s, e)| *a < e && s < *b) as u8
                }
                _ => 0,
            })
            .collect(),
    }
}

/// Several annotators' spans: union within each annotator, then a per-token
/// vote at [`VOTE_THRESHOLD`] over the annotators who supplied spans.
pub fn annotator_spans_to_token_mask(annotators: &[Vec<CharSpan>], enc: &Encoding) -> RationaleMask {
    let per_annotator: Vec<Vec<u8>> = annotators
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| spans_to_token_mask(s, enc).r)
        .collect();
    match majority_vote_word_mask(&per_annotator, VOTE_THRESHOLD) {
        Ok(r) => RationaleMask { r },
        Err(_) => RationaleMask::zeros(enc.max_len()),
    }
}

/// The training target for an example: majority-voted word masks or
/// voted character spans, whichever the example carries.
pub fn rationale_for(example: &Example, enc: &Encoding) -> RationaleMask {
    if !example.annotator_word_masks.is_empty() {
        match majority_vote_word_mask(&example.annotator_word_masks, VOTE_THRESHOLD) {
            Ok(words) => word_mask_to_token_mask(&words, enc),
            Err(_) => RationaleMask::zeros(enc.max_len()),
        }
    } else {
        annotator_spans_to_token_mask(&example.char_spans, enc)
    }
}
