//! A small add-alpha smoothed n-gram language model over word or character
//! tokens. It implements [`LogitSource`] in both conditional and
//! unconditional modes so end-to-end decoding experiments run in seconds,
//! and serializes to a compact little-endian binary format.
//!
//! Model file layout (all integers little-endian, fixed width):
//!
//! ```text
//! magic      4 bytes   "NGLM"
//! version    1 byte    0x01
//! order      1 byte    n in 1..=6
//! mode       1 byte    0 = word, 1 = char
//! alpha      8 bytes   f64 bits
//! vocab_len  4 bytes   u32, number of tokens V (reserved ids included)
//! V entries: u32 byte length + UTF-8 bytes, in id order
//! ctx_count  8 bytes   u64
//! per context, sorted lexicographically by id sequence:
//!   (order-1) x u32    context token ids
//!   u32                number of next-token entries
//!   entries, sorted by id: u32 token id + u64 count
//! ```
//!
//! The format is canonical: any byte stream the loader accepts re-encodes to
//! exactly the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{LogitSource, SourceError};
use crate::sampling::{LogitVector, TokenId};

const MAGIC: &[u8; 4] = b"NGLM";
const FORMAT_VERSION: u8 = 1;

/// Reserved vocabulary ids, stable across save/load.
pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

const RESERVED_TOKENS: [&str; 3] = ["<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Lowercased whitespace-separated words.
    Word,
    /// Unicode scalar values, verbatim.
    Char,
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenMode::Word => f.write_str("word"),
            TokenMode::Char => f.write_str("char"),
        }
    }
}

impl std::str::FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(TokenMode::Word),
            "char" => Ok(TokenMode::Char),
            other => Err(format!("unknown token mode '{other}' (expected word|char)")),
        }
    }
}

/// Split text into tokens under the given mode.
pub fn tokenize(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Word => text
            .to_lowercase()
            .split_whitespace()
            .map(str::to_owned)
            .collect(),
        TokenMode::Char => text.chars().map(String::from).collect(),
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus must contain at least one record")]
    EmptyCorpus,
    #[error("order {0} outside the supported range [1, 6]")]
    OrderOutOfRange(usize),
    #[error("smoothing alpha must be a positive finite number, got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("unexpected end of stream at offset {offset} (needed {needed} more bytes)")]
    UnexpectedEof { offset: usize, needed: usize },
    #[error("bad magic bytes at offset 0 (expected \"NGLM\")")]
    BadMagic,
    #[error("unsupported model version at offset 4: expected {expected}, found {found}")]
    VersionMismatch { expected: u8, found: u8 },
    #[error("invalid {field} at offset {offset}: {reason}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("vocabulary entry {index} at offset {offset} is not valid UTF-8")]
    InvalidUtf8 { index: usize, offset: usize },
    #[error("trailing bytes after count table at offset {offset}")]
    TrailingBytes { offset: usize },
}

/// Bidirectional token <-> id map with the three reserved ids pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED_TOKENS {
            v.push_token(t.to_owned())
                .expect("reserved tokens are distinct");
        }
        v
    }

    fn push_token(&mut self, token: String) -> Result<TokenId, String> {
        if self.ids.contains_key(&token) {
            return Err(format!("duplicate token {token:?}"));
        }
        let id = self.tokens.len() as TokenId;
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        Ok(id)
    }

    fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.ids.insert(token.to_owned(), id);
        self.tokens.push(token.to_owned());
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Row {
    counts: BTreeMap<TokenId, u64>,
    total: u64,
}

/// Add-alpha smoothed n-gram model. Immutable once trained; safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    mode: TokenMode,
    alpha: f64,
    vocab: Vocabulary,
    rows: BTreeMap<Vec<TokenId>, Row>,
}

impl NGramModel {
    /// Trains a model from text records. Each record is padded with
    /// `order - 1` start-of-sequence tokens and terminated by one
    /// end-of-sequence token. Training is deterministic: the same corpus in
    /// the same order yields byte-identical model files.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        order: usize,
        alpha: f64,
        mode: TokenMode,
    ) -> Result<Self, TrainError> {
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        if !(1..=6).contains(&order) {
            return Err(TrainError::OrderOutOfRange(order));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(TrainError::InvalidAlpha(alpha));
        }

        let mut vocab = Vocabulary::with_reserved();
        let mut rows: BTreeMap<Vec<TokenId>, Row> = BTreeMap::new();
        let context_len = order - 1;

        for record in corpus {
            let mut ids: Vec<TokenId> = vec![BOS; context_len];
            for token in tokenize(record.as_ref(), mode) {
                ids.push(vocab.intern(&token));
            }
            ids.push(EOS);

            for window in ids.windows(order) {
                let (context, next) = window.split_at(context_len);
                let row = rows.entry(context.to_vec()).or_default();
                *row.counts.entry(next[0]).or_insert(0) += 1;
                row.total += 1;
            }
        }

        Ok(NGramModel {
            order,
            mode,
            alpha,
            vocab,
            rows,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Maps text to token ids under the model's tokenization; unseen tokens
    /// become the unknown id.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text, self.mode)
            .into_iter()
            .map(|t| self.vocab.id(&t).unwrap_or(UNK))
            .collect()
    }

    /// Renders token ids back to text. Word mode joins with single spaces.
    pub fn decode_text(&self, tokens: &[TokenId]) -> String {
        let parts: Vec<&str> = tokens
            .iter()
            .map(|&id| self.vocab.token(id).unwrap_or(RESERVED_TOKENS[2]))
            .collect();
        match self.mode {
            TokenMode::Word => parts.join(" "),
            TokenMode::Char => parts.concat(),
        }
    }

    /// The last `order - 1` ids of `prompt ++ generated`, left-padded with
    /// start-of-sequence; out-of-range ids collapse to the unknown id.
    fn context_of(&self, prompt: &[TokenId], generated: &[TokenId]) -> Vec<TokenId> {
        let context_len = self.order - 1;
        let vocab_len = self.vocab.len() as TokenId;
        let mut context = vec![BOS; context_len];
        let combined = prompt.iter().chain(generated.iter());
        let total = prompt.len() + generated.len();
        let skip = total.saturating_sub(context_len);
        for (slot, &id) in context
            .iter_mut()
            .skip(context_len.saturating_sub(total))
            .zip(combined.skip(skip))
        {
            *slot = if id < vocab_len { id } else { UNK };
        }
        context
    }

    /// Smoothed next-token probabilities for a context:
    /// `(count + alpha) / (total + alpha * V)`. Every entry is strictly
    /// positive, so downstream KL terms are always defined.
    pub fn smoothed_row(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let denom_base = self.alpha * v as f64;
        match self.rows.get(context) {
            Some(row) => {
                let denom = row.total as f64 + denom_base;
                let mut probs = vec![self.alpha / denom; v];
                for (&id, &count) in &row.counts {
                    probs[id as usize] = (count as f64 + self.alpha) / denom;
                }
                probs
            }
            None => vec![1.0 / v as f64; v],
        }
    }

    /// Log of the smoothed next-token probabilities given prompt and
    /// generated context (conditional mode).
    pub fn logits(&self, prompt: &[TokenId], generated: &[TokenId]) -> LogitVector {
        let context = self.context_of(prompt, generated);
        let values: Vec<f64> = self
            .smoothed_row(&context)
            .into_iter()
            .map(f64::ln)
            .collect();
        LogitVector::new(values).expect("smoothed rows are finite and at least 3 wide")
    }

    /// Log-probabilities with the prompt dropped (unconditional mode);
    /// identical to `logits(&[], generated)`.
    pub fn unconditional_logits(&self, generated: &[TokenId]) -> LogitVector {
        self.logits(&[], generated)
    }

    /// Serializes the model to its canonical byte form.
    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.order as u8);
        out.push(match self.mode {
            TokenMode::Word => 0,
            TokenMode::Char => 1,
        });
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for token in &self.vocab.tokens {
            out.extend_from_slice(&(token.len() as u32).to_le_bytes());
            out.extend_from_slice(token.as_bytes());
        }
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for (context, row) in &self.rows {
            for &id in context {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&(row.counts.len() as u32).to_le_bytes());
            for (&id, &count) in &row.counts {
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        out
    }

    /// Parses a model from bytes, rejecting anything malformed with the
    /// offending offset. Accepts exactly the canonical encoding produced by
    /// [`NGramModel::save`].
    pub fn load(bytes: &[u8]) -> Result<Self, ModelFormatError> {
        let mut cursor = Cursor::new(bytes);

        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(ModelFormatError::BadMagic);
        }
        let version = cursor.u8()?;
        if version != FORMAT_VERSION {
            return Err(ModelFormatError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let order_offset = cursor.offset;
        let order = cursor.u8()? as usize;
        if !(1..=6).contains(&order) {
            return Err(ModelFormatError::InvalidField {
                field: "order",
                offset: order_offset,
                reason: format!("{order} outside [1, 6]"),
            });
        }
        let mode_offset = cursor.offset;
        let mode = match cursor.u8()? {
            0 => TokenMode::Word,
            1 => TokenMode::Char,
            other => {
                return Err(ModelFormatError::InvalidField {
                    field: "mode",
                    offset: mode_offset,
                    reason: format!("unknown mode byte {other}"),
                })
            }
        };
        let alpha_offset = cursor.offset;
        let alpha = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ModelFormatError::InvalidField {
                field: "alpha",
                offset: alpha_offset,
                reason: format!("{alpha} is not a positive finite number"),
            });
        }

        let vocab_len_offset = cursor.offset;
        let vocab_len = cursor.u32()? as usize;
        if vocab_len < RESERVED_TOKENS.len() {
            return Err(ModelFormatError::InvalidField {
                field: "vocab_len",
                offset: vocab_len_offset,
                reason: format!("{vocab_len} is smaller than the reserved set"),
            });
        }
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for index in 0..vocab_len {
            let len_offset = cursor.offset;
            let len = cursor.u32()? as usize;
            let data_offset = cursor.offset;
            let raw = cursor.take(len)?;
            let token = std::str::from_utf8(raw).map_err(|_| ModelFormatError::InvalidUtf8 {
                index,
                offset: data_offset,
            })?;
            if let Some(&expected) = RESERVED_TOKENS.get(index) {
                if token != expected {
                    return Err(ModelFormatError::InvalidField {
                        field: "reserved token",
                        offset: data_offset,
                        reason: format!("entry {index} must be {expected:?}, found {token:?}"),
                    });
                }
            }
            vocab.push_token(token.to_owned()).map_err(|reason| {
                ModelFormatError::InvalidField {
                    field: "vocabulary entry",
                    offset: len_offset,
                    reason,
                }
            })?;
        }

        let context_len = order - 1;
        let ctx_count_offset = cursor.offset;
        let ctx_count = cursor.u64()?;
        let mut rows: BTreeMap<Vec<TokenId>, Row> = BTreeMap::new();
        let mut previous_context: Option<Vec<TokenId>> = None;
        for _ in 0..ctx_count {
            let context_offset = cursor.offset;
            let mut context = Vec::with_capacity(context_len);
            for _ in 0..context_len {
                let id = cursor.u32()?;
                if id as usize >= vocab_len {
                    return Err(ModelFormatError::InvalidField {
                        field: "context token id",
                        offset: context_offset,
                        reason: format!("id {id} outside vocabulary of {vocab_len}"),
                    });
                }
                context.push(id);
            }
            if let Some(prev) = &previous_context {
                if *prev >= context {
                    return Err(ModelFormatError::InvalidField {
                        field: "context order",
                        offset: context_offset,
                        reason: "contexts must be strictly increasing".to_owned(),
                    });
                }
            }
            previous_context = Some(context.clone());

            let entry_count_offset = cursor.offset;
            let entry_count = cursor.u32()?;
            if entry_count == 0 || entry_count as usize > vocab_len {
                return Err(ModelFormatError::InvalidField {
                    field: "entry count",
                    offset: entry_count_offset,
                    reason: format!("{entry_count} entries for a vocabulary of {vocab_len}"),
                });
            }
            let mut row = Row::default();
            let mut previous_id: Option<TokenId> = None;
            for _ in 0..entry_count {
                let entry_offset = cursor.offset;
                let id = cursor.u32()?;
                let count = cursor.u64()?;
                if id as usize >= vocab_len {
                    return Err(ModelFormatError::InvalidField {
                        field: "entry token id",
                        offset: entry_offset,
                        reason: format!("id {id} outside vocabulary of {vocab_len}"),
                    });
                }
                if previous_id.is_some_and(|prev| prev >= id) {
                    return Err(ModelFormatError::InvalidField {
                        field: "entry order",
                        offset: entry_offset,
                        reason: "entries must be strictly increasing by id".to_owned(),
                    });
                }
                if count == 0 {
                    return Err(ModelFormatError::InvalidField {
                        field: "entry count value",
                        offset: entry_offset,
                        reason: "zero counts are never stored".to_owned(),
                    });
                }
                previous_id = Some(id);
                row.total =
                    row.total
                        .checked_add(count)
                        .ok_or_else(|| ModelFormatError::InvalidField {
                            field: "row total",
                            offset: entry_offset,
                            reason: "count overflow".to_owned(),
                        })?;
                row.counts.insert(id, count);
            }
            rows.insert(context, row);
        }
        if cursor.offset != bytes.len() {
            return Err(ModelFormatError::TrailingBytes {
                offset: cursor.offset,
            });
        }
        if rows.len() != ctx_count as usize {
            return Err(ModelFormatError::InvalidField {
                field: "context table",
                offset: ctx_count_offset,
                reason: "duplicate contexts".to_owned(),
            });
        }

        Ok(NGramModel {
            order,
            mode,
            alpha,
            vocab,
            rows,
        })
    }

    pub fn save_to_path(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.save())
    }

    pub fn load_from_path(path: &Path) -> Result<Self, LoadError> {
        let bytes = std::fs::read(path)?;
        Ok(Self::load(&bytes)?)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] ModelFormatError),
}

impl LogitSource for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn logits(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<LogitVector, SourceError> {
        Ok(NGramModel::logits(self, prompt, generated))
    }

    fn unconditional_logits(&self, generated: &[TokenId]) -> Result<LogitVector, SourceError> {
        Ok(NGramModel::unconditional_logits(self, generated))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFormatError> {
        let remaining = self.bytes.len() - self.offset;
        if remaining < n {
            return Err(ModelFormatError::UnexpectedEof {
                offset: self.offset,
                needed: n - remaining,
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ModelFormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelFormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
