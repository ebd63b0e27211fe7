//! Words as byte or character id sequences, framed by `BOW … EOW`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    Byte,
    Char,
}

/// Sub-token vocabulary. Byte mode maps byte `b` to id `b` and puts the four
/// special ids at 256..260; char mode puts them at 0..4 followed by the
/// characters in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct SubtokenVocab {
    mode: VocabMode,
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    mode: VocabMode,
    #[serde(default)]
    chars: String,
}

impl TryFrom<VocabRepr> for SubtokenVocab {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        match r.mode {
            VocabMode::Byte if r.chars.is_empty() => Ok(SubtokenVocab::bytes()),
            VocabMode::Byte => Err(Error::Format("byte vocabulary carries a char list".into())),
            VocabMode::Char => Ok(SubtokenVocab::from_chars(r.chars.chars())),
        }
    }
}

impl From<SubtokenVocab> for VocabRepr {
    fn from(v: SubtokenVocab) -> Self {
        VocabRepr { mode: v.mode, chars: v.chars.into_iter().collect() }
    }
}

const CHAR_SPECIALS: u32 = 4;

impl SubtokenVocab {
    pub fn bytes() -> Self {
        SubtokenVocab { mode: VocabMode::Byte, chars: Vec::new(), index: HashMap::new() }
    }

    fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = SubtokenVocab { mode: VocabMode::Char, chars: Vec::new(), index: HashMap::new() };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, CHAR_SPECIALS + v.chars.len() as u32);
                v.chars.push(c);
            }
        }
        v
    }

    /// Char vocabulary over the words of `sentences`, in iteration order.
    pub fn build_chars<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        SubtokenVocab::from_chars(sentences.into_iter().flat_map(|s| s.tokens.iter()).flat_map(|t| t.text.chars()))
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        match self.mode {
            VocabMode::Byte => 260,
            VocabMode::Char => CHAR_SPECIALS as usize + self.chars.len(),
        }
    }

    fn base(&self) -> u32 {
        match self.mode {
            VocabMode::Byte => 256,
            VocabMode::Char => 0,
        }
    }

    pub fn pad(&self) -> u32 {
        self.base()
    }

    pub fn unk(&self) -> u32 {
        self.base() + 1
    }

    pub fn bow(&self) -> u32 {
        self.base() + 2
    }

    pub fn eow(&self) -> u32 {
        self.base() + 3
    }

    pub fn encode_word(&self, word: &str) -> SubtokenSeq {
        let mut ids = vec![self.bow()];
        match self.mode {
            VocabMode::Byte => ids.extend(word.bytes().map(u32::from)),
            VocabMode::Char => ids.extend(word.chars().map(|c| self.index.get(&c).copied().unwrap_or(self.unk()))),
        }
        ids.push(self.eow());
        SubtokenSeq { ids }
    }

    /// Inverse of [`encode_word`](Self::encode_word) for byte vocabularies;
    /// `None` when the sequence has UNK ids or invalid UTF-8.
    pub fn decode_bytes(&self, seq: &SubtokenSeq) -> Option<String> {
        if self.mode != VocabMode::Byte {
            return None;
        }
        let bytes: Option<Vec<u8>> = seq.interior().iter().map(|&id| u8::try_from(id).ok()).collect();
        String::from_utf8(bytes?).ok()
    }
}

/// Framed id sequence: first id BOW, last id EOW.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubtokenSeq {
    ids: Vec<u32>,
}

impl SubtokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn interior(&self) -> &[u32] {
        &self.ids[1..self.ids.len() - 1]
    }
}

/// Replaces each interior id by UNK with probability `rate`.
pub fn byte_dropout<R: Rng>(seq: &SubtokenSeq, rate: f64, unk: u32, rng: &mut R) -> Result<SubtokenSeq> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    let mut ids = seq.ids.clone();
    let n = ids.len();
    drop_ids(&mut ids[1..n - 1], rate, unk, rng);
    Ok(SubtokenSeq { ids })
}

/// In-place UNK replacement over an unframed id slice; `rate` is assumed
/// already validated.
pub(crate) fn drop_ids<R: Rng>(ids: &mut [u32], rate: f64, unk: u32, rng: &mut R) {
    if rate > 0.0 {
        for id in ids {
            if rng.gen::<f64>() < rate {
                *id = unk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageId, Token};
    use crate::numerics::rng::stream;

    fn sent(words: &[&str]) -> Sentence {
        Sentence {
            tokens: words.iter().map(|w| Token { text: w.to_string(), label: 0 }).collect(),
            language: LanguageId::new("eng").unwrap(),
        }
    }

    #[test]
    fn byte_mode_ids() {
        let v = SubtokenVocab::bytes();
        assert_eq!(v.size(), 260);
        assert_eq!(v.encode_word("ab").ids(), &[258, 97, 98, 259]);
        assert_eq!(v.encode_word("é").ids(), &[258, 195, 169, 259]);
        assert_eq!(v.decode_bytes(&v.encode_word("жé")).as_deref(), Some("жé"));
    }

    #[test]
    fn char_mode_unknowns() {
        let v = SubtokenVocab::build_chars(&[sent(&["abc", "cab"])]);
        assert_eq!(v.size(), 7);
        assert_eq!(v.encode_word("ж").ids(), &[v.bow(), v.unk(), v.eow()]);
        assert_eq!(v.encode_word("ba").ids(), &[2, 5, 4, 3]);
    }

    #[test]
    fn char_vocab_is_deterministic_and_serializable() {
        let data = [sent(&["xyz", "zz", "éa"])];
        let a = SubtokenVocab::build_chars(&data);
        let b = SubtokenVocab::build_chars(&data);
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: SubtokenVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.encode_word("éz").ids(), a.encode_word("éz").ids());
    }

    #[test]
    fn dropout_rates() {
        let v = SubtokenVocab::bytes();
        let w = v.encode_word("hello");
        let mut rng = stream(0, "dropout", 0);
        assert_eq!(byte_dropout(&w, 0.0, v.unk(), &mut rng).unwrap(), w);
        assert!(matches!(byte_dropout(&w, 1.0, v.unk(), &mut rng), Err(Error::InvalidRate(_))));
        assert!(matches!(byte_dropout(&w, -0.1, v.unk(), &mut rng), Err(Error::InvalidRate(_))));

        let long = v.encode_word(&"x".repeat(100_000));
        let d = byte_dropout(&long, 0.2, v.unk(), &mut rng).unwrap();
        assert_eq!(d.ids().len(), long.ids().len());
        assert_eq!(d.ids()[0], v.bow());
        assert_eq!(*d.ids().last().unwrap(), v.eow());
        let frac = d.interior().iter().filter(|&&id| id == v.unk()).count() as f64 / 1e5;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");

        let near_one = byte_dropout(&w, 1.0 - 1e-12, v.unk(), &mut rng).unwrap();
        assert!(near_one.interior().iter().all(|&id| id == v.unk()));
    }
}
