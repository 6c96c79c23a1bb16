//! Byte-level BPE tokenizer trained on the corpus.
//!
//! Ids 0..256 are raw bytes, then BOS and EOS, then one id per merge.
//! Merges never cross chunk boundaries; a chunk is a run of word characters,
//! a run of blanks, a single newline, or a run of other punctuation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
const FIRST_MERGE: u32 = 258;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary size {0} is below the {FIRST_MERGE} reserved ids")]
    VocabTooSmall(usize),
    #[error("malformed tokenizer: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    merges: Vec<(u32, u32)>,
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr { merges: t.merges }
    }
}

impl TryFrom<TokenizerRepr> for Tokenizer {
    type Error = TokenizerError;
    fn try_from(r: TokenizerRepr) -> Result<Self, Self::Error> {
        Tokenizer::from_merges(r.merges)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Blank,
    Newline,
    Punct,
}

fn class(b: u8) -> Class {
    match b {
        b'\n' => Class::Newline,
        b' ' | b'\t' | b'\r' => Class::Blank,
        b'_' => Class::Word,
        _ if b.is_ascii_alphanumeric() || b >= 0x80 => Class::Word,
        _ => Class::Punct,
    }
}

fn chunks(text: &str) -> impl Iterator<Item = &[u8]> {
    let bytes = text.as_bytes();
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let c = class(bytes[start]);
        let mut end = start + 1;
        if c != Class::Newline {
            while end < bytes.len() && class(bytes[end]) == c {
                end += 1;
            }
        }
        let chunk = &bytes[start..end];
        start = end;
        Some(chunk)
    })
}

fn merge_pair(seq: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut out = 0;
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            seq[out] = id;
            i += 2;
        } else {
            seq[out] = seq[i];
            i += 1;
        }
        out += 1;
    }
    seq.truncate(out);
}

impl Tokenizer {
    /// Byte-only tokenizer with no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("no merges")
    }

    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        pieces.push(Vec::new());
        pieces.push(Vec::new());
        let mut ranks = HashMap::new();
        for (i, &(a, b)) in merges.iter().enumerate() {
            let id = FIRST_MERGE + i as u32;
            let valid = |x: u32| x < id && x != BOS && x != EOS;
            if !valid(a) || !valid(b) {
                return Err(TokenizerError::Malformed(format!("merge {i} references unknown id")));
            }
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
            if ranks.insert((a, b), i as u32).is_some() {
                return Err(TokenizerError::Malformed(format!("duplicate merge {i}")));
            }
        }
        Ok(Tokenizer { merges, ranks, pieces })
    }

    /// Learns merges until the vocabulary reaches `vocab_size` or no pair
    /// occurs twice. Ties break toward the smallest pair, so training is
    /// deterministic.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self, TokenizerError> {
        if vocab_size < FIRST_MERGE as usize {
            return Err(TokenizerError::VocabTooSmall(vocab_size));
        }
        let mut counts: HashMap<&[u8], u64> = HashMap::new();
        for t in texts {
            for c in chunks(t) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> =
            counts.into_iter().map(|(c, n)| (c.iter().map(|&b| b as u32).collect(), n)).collect();
        words.sort();
        let mut merges = Vec::new();
        while FIRST_MERGE as usize + merges.len() < vocab_size {
            let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, n) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += n;
                }
            }
            let best = pairs.into_iter().filter(|&(_, n)| n >= 2).max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let id = FIRST_MERGE + merges.len() as u32;
            merges.push(pair);
            for (w, _) in &mut words {
                merge_pair(w, pair, id);
            }
        }
        Self::from_merges(merges)
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut seq: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        while seq.len() > 1 {
            let best = seq
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            merge_pair(&mut seq, pair, FIRST_MERGE + rank);
        }
        out.extend(seq);
    }

    /// Token ids without BOS/EOS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for c in chunks(text) {
            self.encode_chunk(c, &mut out);
        }
        out
    }

    /// Decodes ids, skipping BOS/EOS and ids outside the vocabulary.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(p) = self.pieces.get(id as usize) {
                bytes.extend_from_slice(p);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking() {
        let c: Vec<&[u8]> = chunks("if (a_1 >= 2) {\n  x\n\n").collect();
        let c: Vec<String> = c.iter().map(|b| String::from_utf8_lossy(b).into_owned()).collect();
        assert_eq!(c, ["if", " ", "(", "a_1", " ", ">=", " ", "2", ")", " ", "{", "\n", "  ", "x", "\n", "\n"]);
    }

    #[test]
    fn training_merges_frequent_pairs() {
        let t = Tokenizer::train(["return return return retry"], 262).unwrap();
        assert_eq!(t.vocab_size(), 262);
        let ids = t.encode("return");
        assert!(ids.len() < 6);
        assert_eq!(t.decode(&ids), "return");
    }

    #[test]
    fn stops_when_nothing_repeats() {
        let t = Tokenizer::train(["ab"], 1000).unwrap();
        assert_eq!(t.vocab_size(), 258);
    }

    #[test]
    fn trailing_whitespace_changes_ids_only_at_the_end() {
        let t = Tokenizer::train(["fn f() { return 1; }"; 3], 300).unwrap();
        let a = t.encode("Return one.");
        let b = t.encode("Return one.  ");
        assert_eq!(&b[..a.len()], &a[..]);
    }

    #[test]
    fn serde_roundtrip() {
        let t = Tokenizer::train(["let x = x + 1;"; 4], 280).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: Tokenizer = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
        assert!(serde_json::from_str::<Tokenizer>(r#"{"merges":[[999,1]]}"#).is_err());
    }

    #[test]
    fn decode_skips_specials() {
        let t = Tokenizer::bytes_only();
        assert_eq!(t.decode(&[BOS, b'h' as u32, b'i' as u32, EOS, 99999]), "hi");
    }
}
