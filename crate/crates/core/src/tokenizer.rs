//! Subword vocabulary training and encoding.
//!
//! Words are split on whitespace and punctuation; `[CLS]`, `[NUM]` and `[ANG]`
//! are recognised before splitting and always encode to one id. The
//! vocabulary is grown by byte-pair style merges over word-internal pieces
//! (continuations carry a `##` prefix) and encoding is greedy
//! longest-match-first over that vocabulary.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{ANG_TOKEN, CLS_TOKEN, NUM_TOKEN};
use crate::util::sha256_hex;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CONTINUATION: &str = "##";

/// Reserved ids 0..5 in this order.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, NUM_TOKEN, ANG_TOKEN];
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const NUM_ID: u32 = 3;
pub const ANG_ID: u32 = 4;

pub const DEFAULT_VOCAB_SIZE: usize = 32_000;
pub const DEFAULT_MAX_LENGTH: usize = 888;
/// Sequence length of the shorter published comparison runs.
pub const SHORT_MAX_LENGTH: usize = 512;

const VOCAB_MAGIC: &str = "#!llmprop-vocab";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("vocab size {requested} is below the minimum {minimum} (special tokens + base characters)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("example of length {len} exceeds batch length {to_length}")]
    ExampleTooLong { len: usize, to_length: usize },
    #[error("max_length must be positive")]
    ZeroMaxLength,
    #[error("vocabulary file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PreToken<'a> {
    Special(u32),
    Word(&'a str),
}

fn special_id(s: &str) -> Option<u32> {
    SPECIAL_TOKENS.iter().position(|t| *t == s).map(|i| i as u32)
}

fn pre_tokenize(text: &str) -> Vec<PreToken<'_>> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(tok) = [CLS_TOKEN, NUM_TOKEN, ANG_TOKEN, PAD_TOKEN, UNK_TOKEN]
                .into_iter()
                .find(|t| rest.starts_with(t))
            {
                out.push(PreToken::Special(special_id(tok).unwrap()));
                rest = &rest[tok.len()..];
                continue;
            }
            let first = rest.chars().next().unwrap();
            let end = if first.is_alphanumeric() {
                rest.char_indices()
                    .find(|&(_, c)| !c.is_alphanumeric())
                    .map_or(rest.len(), |(i, _)| i)
            } else {
                first.len_utf8()
            };
            out.push(PreToken::Word(&rest[..end]));
            rest = &rest[end..];
        }
    }
    out
}

fn initial_pieces(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
        .collect()
}

fn count_words<I, S>(corpus: I) -> Result<BTreeMap<String, u64>, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut docs = 0usize;
    for doc in corpus {
        docs += 1;
        for pt in pre_tokenize(doc.as_ref()) {
            if let PreToken::Word(w) = pt {
                *word_counts.entry(w.to_string()).or_default() += 1;
            }
        }
    }
    if docs == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    Ok(word_counts)
}

/// A token id sequence before padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Number of ids before truncation.
    pub original_length: usize,
}

/// Rectangular batch of padded id rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<u32>>,
    pub masks: Vec<Vec<u8>>,
    pub length: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Pads every example with [`PAD_ID`] (mask 0) up to `to_length`.
pub fn pad_batch(examples: &[TokenizedExample], to_length: usize) -> Result<Batch, TokenizerError> {
    let mut batch = Batch {
        ids: Vec::with_capacity(examples.len()),
        masks: Vec::with_capacity(examples.len()),
        length: to_length,
    };
    for ex in examples {
        if ex.ids.len() > to_length {
            return Err(TokenizerError::ExampleTooLong {
                len: ex.ids.len(),
                to_length,
            });
        }
        let mut ids = ex.ids.clone();
        let mut mask = ex.attention_mask.clone();
        ids.resize(to_length, PAD_ID);
        mask.resize(to_length, 0);
        batch.ids.push(ids);
        batch.masks.push(mask);
    }
    Ok(batch)
}

/// Vocabulary plus special tokens and the truncation length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerBundle {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_length: usize,
    longest_piece: usize,
}

impl TokenizerBundle {
    fn from_tokens(tokens: Vec<String>, max_length: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let longest_piece = tokens
            .iter()
            .map(|t| t.trim_start_matches(CONTINUATION).chars().count())
            .max()
            .unwrap_or(1);
        TokenizerBundle {
            tokens,
            index,
            max_length,
            longest_piece,
        }
    }

    /// Trains a vocabulary of at most `vocab_size` entries. Small corpora may
    /// run out of merges before reaching the target. Word types are processed
    /// in sorted order, so the result does not depend on corpus order.
    pub fn train_vocab<I, S>(corpus: I, vocab_size: usize, max_length: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let word_counts = count_words(corpus)?;
        Self::train_from_counts(&word_counts, vocab_size, max_length)
    }

    fn train_from_counts(
        word_counts: &BTreeMap<String, u64>,
        vocab_size: usize,
        max_length: usize,
    ) -> Result<Self, TokenizerError> {
        if max_length == 0 {
            return Err(TokenizerError::ZeroMaxLength);
        }
        let alphabet: BTreeSet<String> = word_counts.keys().flat_map(|w| initial_pieces(w)).collect();
        let minimum = SPECIAL_TOKENS.len() + alphabet.len();
        if vocab_size < minimum {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                minimum,
            });
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet);
        let mut index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

        let mut words: Vec<(Vec<u32>, u64)> = word_counts
            .iter()
            .map(|(w, &c)| (initial_pieces(w).iter().map(|p| index[p]).collect(), c))
            .collect();

        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        let mut pair_words: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
        for (wi, (syms, c)) in words.iter().enumerate() {
            for p in syms.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += c;
                pair_words.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
        let mut heap: BinaryHeap<(u64, Reverse<u32>, Reverse<u32>)> =
            pair_counts.iter().map(|(&(a, b), &c)| (c, Reverse(a), Reverse(b))).collect();

        while tokens.len() < vocab_size {
            let Some((count, Reverse(a), Reverse(b))) = heap.pop() else { break };
            if pair_counts.get(&(a, b)).copied().unwrap_or(0) != count || count == 0 {
                continue;
            }
            let merged = format!("{}{}", tokens[a as usize], tokens[b as usize].trim_start_matches(CONTINUATION));
            let new_id = match index.get(&merged) {
                Some(&id) => id,
                None => {
                    let id = tokens.len() as u32;
                    index.insert(merged.clone(), id);
                    tokens.push(merged);
                    id
                }
            };

            let affected: Vec<usize> = pair_words.remove(&(a, b)).map(|s| s.into_iter().collect()).unwrap_or_default();
            let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
            for wi in affected {
                let (syms, c) = &mut words[wi];
                if !syms.windows(2).any(|p| p[0] == a && p[1] == b) {
                    continue;
                }
                for p in syms.windows(2) {
                    let key = (p[0], p[1]);
                    let e = pair_counts.get_mut(&key).unwrap();
                    *e -= *c;
                    touched.insert(key);
                }
                let mut merged_syms = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                        merged_syms.push(new_id);
                        i += 2;
                    } else {
                        merged_syms.push(syms[i]);
                        i += 1;
                    }
                }
                *syms = merged_syms;
                for p in syms.windows(2) {
                    let key = (p[0], p[1]);
                    *pair_counts.entry(key).or_default() += *c;
                    pair_words.entry(key).or_default().insert(wi);
                    touched.insert(key);
                }
            }
            for key in touched {
                let c = pair_counts[&key];
                if c > 0 {
                    heap.push((c, Reverse(key.0), Reverse(key.1)));
                }
            }
        }
        Ok(Self::from_tokens(tokens, max_length))
    }

    /// Character-level vocabulary (no merges): the stand-in for an encoder's
    /// stock vocabulary when no pretrained asset supplies one.
    pub fn character_level<I, S>(corpus: I, max_length: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let word_counts = count_words(corpus)?;
        let alphabet: BTreeSet<String> = word_counts.keys().flat_map(|w| initial_pieces(w)).collect();
        Self::train_from_counts(&word_counts, SPECIAL_TOKENS.len() + alphabet.len(), max_length)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn with_max_length(mut self, max_length: usize) -> Self {
        self.max_length = max_length.max(1);
        self
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let byte_at = |i: usize| if i == chars.len() { word.len() } else { chars[i].0 };
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut found = None;
            let mut end = (start + self.longest_piece).min(chars.len());
            while end > start {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.push_str(&word[byte_at(start)..byte_at(end)]);
                if let Some(&id) = self.index.get(&piece) {
                    found = Some((id, end));
                    break;
                }
                end -= 1;
            }
            match found {
                Some((id, e)) => {
                    out.push(id);
                    start = e;
                }
                None => {
                    out.push(UNK_ID);
                    start += 1;
                }
            }
        }
    }

    /// All ids for `text`, without truncation.
    pub fn encode_full(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for pt in pre_tokenize(text) {
            match pt {
                PreToken::Special(id) => ids.push(id),
                PreToken::Word(w) => self.encode_word(w, &mut ids),
            }
        }
        ids
    }

    /// Encodes and truncates to `max_length`, keeping the front.
    pub fn encode(&self, text: &str) -> TokenizedExample {
        let mut ids = self.encode_full(text);
        let original_length = ids.len();
        ids.truncate(self.max_length);
        TokenizedExample {
            attention_mask: vec![1; ids.len()],
            ids,
            original_length,
        }
    }

    /// Space-joined tokens with `##` continuations glued back on.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or(UNK_TOKEN);
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() && tok.len() > CONTINUATION.len() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }

    /// `token<TAB>id` lines after a `#!` header block.
    pub fn to_vocab_file(&self) -> String {
        let mut s = format!("{VOCAB_MAGIC}\t1\n#!max_length\t{}\n", self.max_length);
        for (i, t) in SPECIAL_TOKENS.iter().enumerate() {
            s.push_str(&format!("#!special\t{t}\t{i}\n"));
        }
        s.push_str("#!end\n");
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(&format!("{t}\t{i}\n"));
        }
        s
    }

    pub fn from_vocab_file(text: &str) -> Result<Self, TokenizerError> {
        let err = |line: usize, reason: &str| TokenizerError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut max_length = DEFAULT_MAX_LENGTH;
        let mut saw_magic = false;
        loop {
            let Some((n, line)) = lines.next() else {
                return Err(err(0, "missing #!end header terminator"));
            };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                VOCAB_MAGIC => saw_magic = true,
                "#!max_length" => {
                    max_length = fields
                        .get(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(n + 1, "bad max_length"))?
                }
                "#!special" => {
                    let (tok, id) = (fields.get(1), fields.get(2).and_then(|v| v.parse::<u32>().ok()));
                    match (tok, id) {
                        (Some(t), Some(id)) if special_id(t) == Some(id) => {}
                        _ => return Err(err(n + 1, "special token does not match its reserved id")),
                    }
                }
                "#!end" => break,
                _ => return Err(err(n + 1, "unexpected header line")),
            }
        }
        if !saw_magic {
            return Err(err(1, "missing vocabulary magic line"));
        }
        let mut tokens = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| err(n + 1, "expected token<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| err(n + 1, "bad id"))?;
            if id != tokens.len() {
                return Err(err(n + 1, "ids must be contiguous from 0"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(err(0, "special tokens missing from reserved ids"));
        }
        Ok(Self::from_tokens(tokens, max_length))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_vocab_file())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_vocab_file(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the vocabulary file.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_vocab_file().as_bytes())
    }
}
