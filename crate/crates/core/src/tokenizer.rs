//! Byte-level byte-pair-encoding tokenizer shared by both encoder towers.
//!
//! Ids 0..4 are the specials, ids 4..260 are the 256 raw bytes, and every
//! learned merge appends one id. Words are encoded separately, with the
//! separating space attached to the front of the following word, so decoding
//! restores whitespace-normalized text exactly.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
/// Specials plus one piece per byte value.
pub const BASE_SIZE: usize = NUM_SPECIALS + 256;

const FORMAT_HEADER: &str = "nextverse-bpe v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    target_size: usize,
    merges: Vec<(u32, u32)>,
    pieces: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

fn base_pieces() -> Vec<Vec<u8>> {
    let mut pieces = vec![Vec::new(); NUM_SPECIALS];
    pieces.extend((0..=255u8).map(|b| vec![b]));
    pieces
}

fn chunks(text_in: &str) -> Vec<Vec<u8>> {
    text::normalize_whitespace(text_in)
        .split(' ')
        .filter(|w| !w.is_empty())
        .enumerate()
        .map(|(i, w)| {
            let mut bytes = Vec::with_capacity(w.len() + 1);
            if i > 0 {
                bytes.push(b' ');
            }
            bytes.extend_from_slice(w.as_bytes());
            bytes
        })
        .collect()
}

fn byte_ids(bytes: &[u8]) -> Vec<u32> {
    bytes
        .iter()
        .map(|&b| NUM_SPECIALS as u32 + b as u32)
        .collect()
}

/// Replaces every non-overlapping occurrence of `pair`, scanning left to right.
fn merge_pair(symbols: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Learns merges until the vocabulary reaches `target_size` or no adjacent
/// pair occurs at least twice. The most frequent pair is merged first; ties go
/// to the lexicographically smallest (left piece, right piece).
pub fn train_subword<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<SubwordVocab> {
    if target_size <= BASE_SIZE {
        return Err(Error::VocabTooSmall {
            requested: target_size,
            base: BASE_SIZE,
        });
    }
    let mut freq: HashMap<Vec<u8>, usize> = HashMap::new();
    for line in corpus {
        for c in chunks(line.as_ref()) {
            *freq.entry(c).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<u8>, usize)> = freq.into_iter().collect();
    words.sort();
    let mut words: Vec<(Vec<u32>, usize)> =
        words.into_iter().map(|(b, f)| (byte_ids(&b), f)).collect();

    let mut pieces = base_pieces();
    let mut merges = Vec::new();
    while pieces.len() < target_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (symbols, f) in &words {
            for w in symbols.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += f;
            }
        }
        let best = counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .min_by(|&(pa, ca), &(pb, cb)| {
                cb.cmp(&ca).then_with(|| {
                    (&pieces[pa.0 as usize], &pieces[pa.1 as usize])
                        .cmp(&(&pieces[pb.0 as usize], &pieces[pb.1 as usize]))
                })
            });
        let Some((pair, _)) = best else { break };
        let new_id = pieces.len() as u32;
        let mut piece = pieces[pair.0 as usize].clone();
        piece.extend_from_slice(&pieces[pair.1 as usize]);
        pieces.push(piece);
        merges.push(pair);
        for (symbols, _) in words.iter_mut() {
            if symbols.windows(2).any(|w| (w[0], w[1]) == pair) {
                *symbols = merge_pair(symbols, pair, new_id);
            }
        }
    }
    Ok(SubwordVocab::from_merges(target_size, merges))
}

impl SubwordVocab {
    fn from_merges(target_size: usize, merges: Vec<(u32, u32)>) -> Self {
        let mut pieces = base_pieces();
        let mut ranks = HashMap::new();
        for (k, &(l, r)) in merges.iter().enumerate() {
            let mut piece = pieces[l as usize].clone();
            piece.extend_from_slice(&pieces[r as usize]);
            pieces.push(piece);
            ranks.insert((l, r), k as u32);
        }
        SubwordVocab {
            target_size,
            merges,
            pieces,
            ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    fn encode_chunk(&self, bytes: &[u8]) -> Vec<u32> {
        let mut symbols = byte_ids(bytes);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            symbols = merge_pair(&symbols, pair, (BASE_SIZE as u32) + rank);
        }
        symbols
    }

    /// `[BOS] pieces... [EOS]` for the whitespace-normalized text.
    pub fn encode(&self, text_in: &str) -> Vec<u32> {
        let mut ids = vec![BOS];
        for c in chunks(text_in) {
            ids.extend(self.encode_chunk(&c));
        }
        ids.push(EOS);
        ids
    }

    /// Concatenates piece bytes, skipping specials.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(Error::UnknownId(id))?;
            bytes.extend_from_slice(piece);
        }
        String::from_utf8(bytes).map_err(|_| Error::InvalidUtf8)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FORMAT_HEADER}\ntarget_size {}\nmerges {}\n",
            self.target_size,
            self.merges.len()
        );
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        out.push_str(&format!("pieces {}\n", self.pieces.len()));
        for (id, piece) in self.pieces.iter().enumerate() {
            out.push_str(&format!("{id}\t{}\n", hex::encode(piece)));
        }
        out
    }

    pub fn from_text(raw: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::parse("vocab", line, m.to_string());
        let mut lines = raw.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(0, &format!("unexpected end of file, expected {what}")))
        };
        let (_, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(1, "unsupported vocab format"));
        }
        let count = |s: &str, key: &str, line: usize| -> Result<usize> {
            s.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(line + 1, &format!("expected `{key} N`")))
        };
        let (i, l) = next("target_size")?;
        let target_size = count(l, "target_size", i)?;
        let (i, l) = next("merges")?;
        let n_merges = count(l, "merges", i)?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (i, l) = next("merge")?;
            let ids: Vec<u32> = l.split(' ').filter_map(|x| x.parse().ok()).collect();
            let [a, b] = ids.as_slice() else {
                return Err(bad(i + 1, "expected two ids"));
            };
            let limit = (BASE_SIZE + merges.len()) as u32;
            if *a >= limit || *b >= limit {
                return Err(bad(i + 1, "merge refers to a later id"));
            }
            merges.push((*a, *b));
        }
        let vocab = SubwordVocab::from_merges(target_size, merges);
        let (i, l) = next("pieces")?;
        let n_pieces = count(l, "pieces", i)?;
        if n_pieces != vocab.len() {
            return Err(bad(i + 1, "piece count does not match merges"));
        }
        for id in 0..n_pieces {
            let (i, l) = next("piece")?;
            let (idx, hexed) = l
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected id<TAB>hex"))?;
            let bytes = hex::decode(hexed).map_err(|_| bad(i + 1, "bad hex"))?;
            if idx.parse::<usize>().ok() != Some(id) || bytes != vocab.pieces[id] {
                return Err(bad(i + 1, "piece table does not match merges"));
            }
        }
        Ok(vocab)
    }
}
