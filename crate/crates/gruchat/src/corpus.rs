//! Corpus ingestion: character vocabulary, frequency table, encoding,
//! and training batches for truncated backpropagation through time.
//!
//! Corpus files are plain UTF-8 text with one utterance per line; the
//! newline character doubles as the end-of-utterance symbol during
//! generation.

use std::collections::HashMap;

use crate::{Error, Result};

/// Replacement character used for inputs outside the training alphabet.
pub const UNK_CHAR: char = '\u{FFFD}';

/// Character vocabulary with ids, corpus frequencies, and a reserved
/// unknown id.
///
/// Ids are contiguous `0..len()`. Characters seen in the corpus get a
/// relative frequency in `(0, 1]`; the reserved unknown character has
/// frequency 0 unless it literally occurs in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    freq: Vec<f64>,
    unk_id: usize,
}

impl Vocabulary {
    /// Rebuild a vocabulary from its stored parts (checkpoint loading).
    pub(crate) fn from_parts(chars: Vec<char>, freq: Vec<f64>, unk_id: usize) -> Result<Self> {
        if chars.len() != freq.len() || unk_id >= chars.len() {
            return Err(Error::CorruptCheckpoint(
                "inconsistent vocabulary table".into(),
            ));
        }
        let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if index.len() != chars.len() {
            return Err(Error::CorruptCheckpoint(
                "duplicate character in vocabulary".into(),
            ));
        }
        Ok(Self {
            chars,
            index,
            freq,
            unk_id,
        })
    }

    /// Number of ids, including the reserved unknown id.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Ordered characters; `chars()[i]` has id `i`.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Id of a character, if it is in the alphabet.
    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Character for an id.
    pub fn char_at(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    /// Relative corpus frequency of an id.
    pub fn freq(&self, id: usize) -> Option<f64> {
        self.freq.get(id).copied()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freq
    }

    /// Id of the replacement character for unknown input.
    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    /// Id of the end-of-utterance character (newline), when the corpus
    /// contained one.
    pub fn eou_id(&self) -> Option<usize> {
        self.index_of('\n')
    }

    /// Encode text to ids; characters outside the alphabet map to the
    /// unknown id.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars()
            .map(|c| self.index_of(c).unwrap_or(self.unk_id))
            .collect()
    }

    /// Decode ids back to text.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char_at(id).ok_or(Error::InvalidId {
                    id,
                    vocab: self.len(),
                })
            })
            .collect()
    }
}

/// Build the vocabulary of every distinct character in `text`, plus the
/// reserved unknown id, with frequencies `count / total`.
pub fn build_vocabulary(text: &str) -> Result<Vocabulary> {
    if text.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<char, u64> = HashMap::new();
    let mut total: u64 = 0;
    for c in text.chars() {
        *counts.entry(c).or_insert(0) += 1;
        total += 1;
    }
    let mut chars: Vec<char> = counts.keys().copied().collect();
    chars.sort_unstable();
    if !counts.contains_key(&UNK_CHAR) {
        chars.push(UNK_CHAR);
    }
    let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let freq: Vec<f64> = chars
        .iter()
        .map(|c| counts.get(c).map_or(0.0, |&n| n as f64 / total as f64))
        .collect();
    let unk_id = index[&UNK_CHAR];
    Ok(Vocabulary {
        chars,
        index,
        freq,
        unk_id,
    })
}

/// One-hot vector of length `size` with a single 1 at `id`.
///
/// Panics if `id >= size`; callers hold the `id < |V|` invariant.
pub fn one_hot(id: usize, size: usize) -> Vec<f64> {
    assert!(id < size, "one_hot: id {id} out of range {size}");
    let mut v = vec![0.0; size];
    v[id] = 1.0;
    v
}

/// Corpus-frequency entropy of a sequence, in nats:
/// `sum_t -freq(seq[t]) * ln(freq(seq[t]))`.
///
/// Characters with zero corpus frequency (the reserved unknown id)
/// contribute 0, the continuous limit of `-f ln f`.
pub fn corpus_entropy_of(seq: &[usize], vocab: &Vocabulary) -> Result<f64> {
    let mut h = 0.0;
    for &id in seq {
        let f = vocab.freq(id).ok_or(Error::InvalidId {
            id,
            vocab: vocab.len(),
        })?;
        if f > 0.0 {
            h -= f * f.ln();
        }
    }
    Ok(h)
}

/// One training batch: `inputs[b][t]` is a character id and
/// `targets[b][t]` is the corpus character that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Tile the corpus into `batch_size` parallel streams and cut each
/// stream into windows of `window` characters.
///
/// Batch `k` holds window `k` of every stream, so iterating batches in
/// order continues each stream and the recurrent state can be carried
/// across consecutive batches.
pub fn make_batches(
    text: &str,
    vocab: &Vocabulary,
    window: usize,
    batch_size: usize,
) -> Result<Vec<Batch>> {
    if window < 1 || batch_size < 1 {
        return Err(Error::InvalidConfig(
            "window and batch_size must be at least 1".into(),
        ));
    }
    let ids = vocab.encode(text);
    // The last character has no successor, so only len-1 positions are usable.
    let usable = ids.len().saturating_sub(1);
    let stream_len = usable / batch_size;
    let windows = stream_len / window;
    if windows == 0 {
        return Err(Error::CorpusTooShort {
            needed: window * batch_size + 1,
            available: ids.len(),
        });
    }
    let mut batches = Vec::with_capacity(windows);
    for k in 0..windows {
        let mut inputs = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let start = b * stream_len + k * window;
            inputs.push(ids[start..start + window].to_vec());
            targets.push(ids[start + 1..start + window + 1].to_vec());
        }
        batches.push(Batch { inputs, targets });
    }
    Ok(batches)
}
