//! Flat byte-level tagger: a deep BiLSTM predicts one entity type (no BIO)
//! per byte; decoding forces every byte of a word onto the same type.

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TagSet};
use crate::crf;
use crate::encoding::{drop_ids, SubtokenVocab};
use crate::error::{Error, Result};
use crate::numerics::layers::{Embedding, Linear};
use crate::numerics::rng::Rng;
use crate::numerics::{log_sum_exp, BiLstm, BiLstmSpec, BiLstmTape, ParamStore, Tensor};

/// Byte inserted between words.
pub const WORD_SEPARATOR: u8 = b' ';

/// Score used for forbidden intra-word tag changes.
pub const FORBIDDEN: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharNerConfig {
    pub embedding_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub byte_dropout: f64,
    pub dropout: f64,
    pub final_dropout: f64,
}

impl Default for CharNerConfig {
    fn default() -> Self {
        CharNerConfig { embedding_dim: 128, layers: 5, hidden: 128, byte_dropout: 0.2, dropout: 0.5, final_dropout: 0.8 }
    }
}

impl CharNerConfig {
    pub fn toy(dim: usize) -> Self {
        CharNerConfig { embedding_dim: dim, layers: 2, hidden: dim, ..CharNerConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.byte_dropout, self.dropout, self.final_dropout] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidRate(r));
            }
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
        Ok(())
    }

    fn layer_rates(&self) -> Vec<f64> {
        (0..self.layers).map(|l| if l + 1 == self.layers { self.final_dropout } else { self.dropout }).collect()
    }
}

/// Word index of each byte position; `None` marks a separator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordBoundaryMap {
    word_of: Vec<Option<usize>>,
    words: usize,
}

impl WordBoundaryMap {
    pub fn new(word_of: Vec<Option<usize>>) -> Result<Self> {
        let mut expected = 0;
        let mut prev: Option<usize> = None;
        for &w in &word_of {
            match (prev, w) {
                (_, None) => {}
                (Some(p), Some(w)) if p == w => {}
                (_, Some(w)) if w == expected => expected += 1,
                _ => return Err(Error::InvalidCorpus("each word must cover one contiguous run of bytes, in order".into())),
            }
            prev = w;
        }
        Ok(WordBoundaryMap { word_of, words: expected })
    }

    pub fn len(&self) -> usize {
        self.word_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_of.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.words
    }

    pub fn word_of(&self, pos: usize) -> Option<usize> {
        self.word_of[pos]
    }

    fn same_word(&self, a: usize, b: usize) -> bool {
        matches!((self.word_of[a], self.word_of[b]), (Some(x), Some(y)) if x == y)
    }
}

/// Bytes of the words joined by [`WORD_SEPARATOR`], with their boundary map.
pub fn sentence_bytes(sentence: &Sentence) -> (Vec<u32>, WordBoundaryMap) {
    let mut ids = Vec::new();
    let mut word_of = Vec::new();
    for (w, word) in sentence.words().enumerate() {
        if w > 0 {
            ids.push(WORD_SEPARATOR as u32);
            word_of.push(None);
        }
        for b in word.bytes() {
            ids.push(b as u32);
            word_of.push(Some(w));
        }
    }
    let map = WordBoundaryMap::new(word_of).expect("constructed in order");
    (ids, map)
}

/// The untrained within-word transition matrix: 0 to stay, [`FORBIDDEN`] to
/// change tag.
pub fn consistency_transitions(num_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[num_classes, num_classes]);
    for i in 0..num_classes {
        for j in 0..num_classes {
            if i != j {
                *t.at_mut(i, j) = FORBIDDEN;
            }
        }
    }
    t
}

fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let lse = log_sum_exp(logits.row(r));
        out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Word-level BIO labels from per-byte logits `[B × (K+1)]` (class 0 = O,
/// class k+1 = entity type k). `within_word` scores tag pairs between
/// adjacent bytes of one word; any change is free across a separator, and
/// separators do not vote.
pub fn charner_decode(logits: &Tensor, boundaries: &WordBoundaryMap, within_word: &Tensor, tagset: &TagSet) -> Result<Vec<usize>> {
    if logits.rows() != boundaries.len() {
        return Err(Error::BoundaryMismatch { boundaries: boundaries.len(), logits: logits.rows() });
    }
    let k = logits.cols();
    if k != tagset.entity_types().len() + 1 || within_word.shape() != [k, k] {
        return Err(Error::ShapeMismatch(format!("expected {} classes", tagset.entity_types().len() + 1)));
    }
    let mut scores = log_softmax_rows(logits);
    for pos in 0..boundaries.len() {
        if boundaries.word_of(pos).is_none() {
            scores.row_mut(pos).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let zeros = vec![0.0; k];
    let (path, _) = crf::viterbi_with(&scores, &zeros, &zeros, |t, i, j| {
        if boundaries.same_word(t - 1, t) {
            within_word.at(i, j)
        } else {
            0.0
        }
    });
    let mut word_class = vec![0usize; boundaries.num_words()];
    for (pos, &c) in path.iter().enumerate() {
        if let Some(w) = boundaries.word_of(pos) {
            word_class[w] = c;
        }
    }
    Ok(word_classes_to_bio(&word_class, tagset))
}

/// Maximal runs of equal non-O classes become `B-t I-t …`.
pub fn word_classes_to_bio(classes: &[usize], tagset: &TagSet) -> Vec<usize> {
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| match c {
            0 => 0,
            c if i > 0 && classes[i - 1] == c => tagset.inside(c - 1),
            c => tagset.begin(c - 1),
        })
        .collect()
}

pub struct CharNerTape {
    ids: Vec<u32>,
    embedded: Tensor,
    lstm_tape: BiLstmTape,
    lstm_out: Tensor,
}

#[derive(Clone, Debug)]
pub struct CharNer {
    config: CharNerConfig,
    tagset: TagSet,
    vocab: SubtokenVocab,
    embed: Embedding,
    encoder: BiLstm,
    output: Linear,
}

impl CharNer {
    pub fn new(config: CharNerConfig, tagset: TagSet) -> Result<Self> {
        config.validate()?;
        let vocab = SubtokenVocab::bytes();
        let embed = Embedding::new("embed/table", vocab.size(), config.embedding_dim);
        let encoder = BiLstm::new(
            "encoder",
            BiLstmSpec { layers: config.layers, hidden: config.hidden, input_dim: config.embedding_dim },
        )?;
        let output = Linear::new("output", 2 * config.hidden, tagset.entity_types().len() + 1);
        Ok(CharNer { config, tagset, vocab, embed, encoder, output })
    }

    pub fn config(&self) -> &CharNerConfig {
        &self.config
    }

    pub fn init(&self, params: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.embed.init(params, rng)?;
        self.encoder.init(params, rng)?;
        self.output.init(params, rng)
    }

    /// Per-byte logits. `train_rng` enables byte and layer dropout.
    pub fn forward(
        &self,
        params: &ParamStore,
        sentence: &Sentence,
        train_rng: Option<&mut Rng>,
    ) -> Result<(Tensor, WordBoundaryMap, CharNerTape)> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let (mut ids, map) = sentence_bytes(sentence);
        let rates = self.config.layer_rates();
        let dropout = match train_rng {
            Some(rng) => {
                let mut start = 0;
                while start < ids.len() {
                    let end = (start..ids.len()).find(|&p| map.word_of(p).is_none()).unwrap_or(ids.len());
                    drop_ids(&mut ids[start..end], self.config.byte_dropout, self.vocab.unk(), rng);
                    start = end + 1;
                }
                Some((rates.as_slice(), rng))
            }
            None => None,
        };
        let embedded = self.embed.forward(params, &ids)?;
        let (lstm_out, lstm_tape) = self.encoder.forward(params, &embedded, dropout)?;
        let logits = self.output.forward(params, &lstm_out)?;
        Ok((logits, map, CharNerTape { ids, embedded, lstm_tape, lstm_out }))
    }

    pub fn logits(&self, params: &ParamStore, sentence: &Sentence, train_rng: Option<&mut Rng>) -> Result<(Tensor, WordBoundaryMap)> {
        let (l, m, _) = self.forward(params, sentence, train_rng)?;
        Ok((l, m))
    }

    /// Per-byte class targets: the word's entity type, O on separators.
    pub fn byte_targets(&self, sentence: &Sentence, map: &WordBoundaryMap) -> Vec<usize> {
        (0..map.len())
            .map(|p| match map.word_of(p) {
                Some(w) => self.tagset.class_of(sentence.tokens[w].label).map_or(0, |t| t + 1),
                None => 0,
            })
            .collect()
    }

    /// Summed byte-level cross-entropy and its gradient.
    pub fn loss_and_grad(&self, params: &ParamStore, sentence: &Sentence, train_rng: Option<&mut Rng>) -> Result<(f64, ParamStore)> {
        let (logits, map, tape) = self.forward(params, sentence, train_rng)?;
        let targets = self.byte_targets(sentence, &map);
        let probs = log_softmax_rows(&logits);
        let mut loss = 0.0;
        let mut d_logits = Tensor::zeros(logits.shape());
        for (r, &y) in targets.iter().enumerate() {
            loss -= probs.at(r, y);
            for c in 0..logits.cols() {
                *d_logits.at_mut(r, c) = probs.at(r, c).exp() - if c == y { 1.0 } else { 0.0 };
            }
        }
        let mut grads = params.zeros_like();
        let d_lstm = self.output.backward(params, &tape.lstm_out, &d_logits, &mut grads)?;
        let d_emb = self.encoder.backward(params, &tape.lstm_tape, &d_lstm, &mut grads)?;
        debug_assert_eq!(d_emb.shape(), tape.embedded.shape());
        self.embed.backward(&tape.ids, &d_emb, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn predict_labels(&self, params: &ParamStore, sentence: &Sentence) -> Result<Vec<usize>> {
        let (logits, map) = self.logits(params, sentence, None)?;
        charner_decode(&logits, &map, &consistency_transitions(logits.cols()), &self.tagset)
    }
}
