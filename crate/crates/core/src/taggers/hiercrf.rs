//! Hierarchical tagger: sub-token BiLSTM per word, sentence BiLSTM over word
//! vectors, linear projection to label logits, linear-chain CRF on top.

use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageId, Sentence, TagSet};
use crate::crf::{self, CrfPotentials, PotentialGrads, TransitionBank};
use crate::encoding::{SubtokenVocab, VocabMode};
use crate::error::{Error, Result};
use crate::numerics::layers::{Embedding, Linear};
use crate::numerics::rng::Rng;
use crate::numerics::{BiLstm, BiLstmSpec, BiLstmTape, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierCrfConfig {
    pub embedding_dim: usize,
    pub subtoken_layers: usize,
    pub subtoken_hidden: usize,
    pub sentence_layers: usize,
    pub sentence_hidden: usize,
    pub language_specific_transitions: bool,
}

impl Default for HierCrfConfig {
    fn default() -> Self {
        HierCrfConfig {
            embedding_dim: 256,
            subtoken_layers: 2,
            subtoken_hidden: 256,
            sentence_layers: 1,
            sentence_hidden: 256,
            language_specific_transitions: false,
        }
    }
}

impl HierCrfConfig {
    /// Small dimensions for tests and desk-scale experiments.
    pub fn toy(dim: usize) -> Self {
        HierCrfConfig {
            embedding_dim: dim,
            subtoken_layers: 1,
            subtoken_hidden: dim,
            sentence_layers: 1,
            sentence_hidden: dim,
            language_specific_transitions: false,
        }
    }

    pub fn subtoken_spec(&self) -> BiLstmSpec {
        BiLstmSpec { layers: self.subtoken_layers, hidden: self.subtoken_hidden, input_dim: self.embedding_dim }
    }

    pub fn sentence_spec(&self) -> BiLstmSpec {
        BiLstmSpec { layers: self.sentence_layers, hidden: self.sentence_hidden, input_dim: 2 * self.subtoken_hidden }
    }
}

struct WordTape {
    ids: Vec<u32>,
    tape: BiLstmTape,
}

/// Activations cached by [`HierCrf::forward`] for one sentence.
pub struct HierTape {
    words: Vec<WordTape>,
    sentence_tape: BiLstmTape,
    sentence_out: Tensor,
    language: LanguageId,
}

#[derive(Clone, Debug)]
pub struct HierCrf {
    config: HierCrfConfig,
    tagset: TagSet,
    vocab: SubtokenVocab,
    embed: Embedding,
    subtoken: BiLstm,
    sentence: BiLstm,
    output: Linear,
    bank: TransitionBank,
}

impl HierCrf {
    /// `bank_languages` get their own transition scores when the config asks
    /// for language-specific transitions.
    pub fn new(config: HierCrfConfig, tagset: TagSet, vocab: SubtokenVocab, bank_languages: &[LanguageId]) -> Result<Self> {
        if config.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
        let subtoken = BiLstm::new("subtoken", config.subtoken_spec())?;
        let sentence = BiLstm::new("sentence", config.sentence_spec())?;
        let output = Linear::new("output", 2 * config.sentence_hidden, tagset.num_labels());
        let embed = Embedding::new("embed/table", vocab.size(), config.embedding_dim);
        let bank = if config.language_specific_transitions {
            TransitionBank::new(bank_languages)
        } else {
            TransitionBank::new(&[])
        };
        Ok(HierCrf { config, tagset, vocab, embed, subtoken, sentence, output, bank })
    }

    pub fn config(&self) -> &HierCrfConfig {
        &self.config
    }

    pub fn vocab_mode(&self) -> VocabMode {
        self.vocab.mode()
    }

    pub fn bank(&self) -> &TransitionBank {
        &self.bank
    }

    pub fn init(&self, params: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.embed.init(params, rng)?;
        self.subtoken.init(params, rng)?;
        self.sentence.init(params, rng)?;
        self.output.init(params, rng)?;
        self.bank.init(params, self.tagset.num_labels())
    }

    pub fn forward(&self, params: &ParamStore, sentence: &Sentence) -> Result<(CrfPotentials, HierTape)> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let hs = self.config.subtoken_hidden;
        let mut words = Vec::with_capacity(sentence.len());
        let mut reps = Vec::with_capacity(sentence.len());
        for word in sentence.words() {
            let ids = self.vocab.encode_word(word).ids().to_vec();
            let x = self.embed.forward(params, &ids)?;
            let (out, tape) = self.subtoken.forward(params, &x, None)?;
            let last = out.rows() - 1;
            let mut rep = out.row(last)[..hs].to_vec();
            rep.extend_from_slice(&out.row(0)[hs..]);
            reps.push(rep);
            words.push(WordTape { ids, tape });
        }
        let word_reps = Tensor::from_rows(&reps)?;
        let (sentence_out, sentence_tape) = self.sentence.forward(params, &word_reps, None)?;
        let emissions = self.output.forward(params, &sentence_out)?;
        let pot = self.bank.potentials(params, &sentence.language, emissions)?;
        Ok((pot, HierTape { words, sentence_tape, sentence_out, language: sentence.language.clone() }))
    }

    /// Emission, transition and boundary scores for one sentence.
    pub fn potentials(&self, params: &ParamStore, sentence: &Sentence) -> Result<CrfPotentials> {
        Ok(self.forward(params, sentence)?.0)
    }

    /// Backpropagates `d_pot` (gradient of some scalar with respect to the
    /// potentials) into `grads`.
    pub fn backward(&self, params: &ParamStore, tape: &HierTape, d_pot: &PotentialGrads, grads: &mut ParamStore) -> Result<()> {
        self.bank.accumulate(grads, &tape.language, d_pot)?;
        let d_sent = self.output.backward(params, &tape.sentence_out, &d_pot.emissions, grads)?;
        let d_reps = self.sentence.backward(params, &tape.sentence_tape, &d_sent, grads)?;
        let hs = self.config.subtoken_hidden;
        for (w, word) in tape.words.iter().enumerate() {
            let n = word.ids.len();
            let mut d_out = Tensor::zeros(&[n, 2 * hs]);
            let d_rep = d_reps.row(w);
            d_out.row_mut(n - 1)[..hs].copy_from_slice(&d_rep[..hs]);
            d_out.row_mut(0)[hs..].copy_from_slice(&d_rep[hs..]);
            let d_x = self.subtoken.backward(params, &word.tape, &d_out, grads)?;
            self.embed.backward(&word.ids, &d_x, grads)?;
        }
        Ok(())
    }

    /// Negative log-likelihood of the gold labels and its parameter gradient.
    pub fn loss_and_grad(&self, params: &ParamStore, sentence: &Sentence) -> Result<(f64, ParamStore)> {
        let (pot, tape) = self.forward(params, sentence)?;
        let (ll, mut g) = crf::log_likelihood(&pot, &sentence.labels())?;
        for t in [&mut g.emissions, &mut g.transitions, &mut g.start, &mut g.stop] {
            t.scale(-1.0);
        }
        let mut grads = params.zeros_like();
        self.backward(params, &tape, &g, &mut grads)?;
        Ok((-ll, grads))
    }

    pub fn predict_labels(&self, params: &ParamStore, sentence: &Sentence) -> Result<Vec<usize>> {
        Ok(crf::viterbi(&self.potentials(params, sentence)?).0)
    }
}
