//! Complete tagging models and a common interface over them.

pub mod charner;
pub mod hiercrf;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans, EntitySpan, LanguageId, Sentence, TagSet};
use crate::encoding::{SubtokenVocab, VocabMode};
use crate::error::{Error, Result};
use crate::numerics::rng::{stream, Rng};
use crate::numerics::ParamStore;

pub use charner::{charner_decode, consistency_transitions, CharNer, CharNerConfig, WordBoundaryMap};
pub use hiercrf::{HierCrf, HierCrfConfig};

/// Architecture and its hyperparameters, tagged by `architecture`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "kebab-case")]
pub enum ModelConfig {
    HiercrfByte(HierCrfConfig),
    HiercrfChar(HierCrfConfig),
    Charner(CharNerConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::HiercrfByte(_) => "hiercrf-byte",
            ModelConfig::HiercrfChar(_) => "hiercrf-char",
            ModelConfig::Charner(_) => "charner",
        }
    }

    pub fn vocab_mode(&self) -> VocabMode {
        match self {
            ModelConfig::HiercrfChar(_) => VocabMode::Char,
            _ => VocabMode::Byte,
        }
    }

    /// Vocabulary for a fresh model: fixed for bytes, built from the
    /// training sentences for chars.
    pub fn build_vocab<'a>(&self, train: impl IntoIterator<Item = &'a Sentence>) -> SubtokenVocab {
        match self.vocab_mode() {
            VocabMode::Byte => SubtokenVocab::bytes(),
            VocabMode::Char => SubtokenVocab::build_chars(train),
        }
    }
}

/// A model architecture bound to its label and sub-token inventories.
/// Parameters are held separately in a [`ParamStore`].
#[derive(Clone, Debug)]
pub enum Tagger {
    Hier(HierCrf),
    CharNer(CharNer),
}

impl Tagger {
    pub fn build(config: &ModelConfig, tagset: TagSet, vocab: SubtokenVocab, languages: &[LanguageId]) -> Result<Self> {
        if vocab.mode() != config.vocab_mode() {
            return Err(Error::VocabIncompatible(format!(
                "{} needs a {:?} vocabulary, got {:?}",
                config.name(),
                config.vocab_mode(),
                vocab.mode()
            )));
        }
        Ok(match config {
            ModelConfig::HiercrfByte(c) | ModelConfig::HiercrfChar(c) => {
                Tagger::Hier(HierCrf::new(c.clone(), tagset, vocab, languages)?)
            }
            ModelConfig::Charner(c) => Tagger::CharNer(CharNer::new(c.clone(), tagset)?),
        })
    }

    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut params = ParamStore::new();
        let mut rng = stream(seed, "init", 0);
        match self {
            Tagger::Hier(m) => m.init(&mut params, &mut rng)?,
            Tagger::CharNer(m) => m.init(&mut params, &mut rng)?,
        }
        Ok(params)
    }

    /// Training loss for one sentence and its gradient. `train_rng` switches
    /// on dropout for architectures that use it.
    pub fn loss_and_grad(&self, params: &ParamStore, sentence: &Sentence, train_rng: Option<&mut Rng>) -> Result<(f64, ParamStore)> {
        match self {
            Tagger::Hier(m) => m.loss_and_grad(params, sentence),
            Tagger::CharNer(m) => m.loss_and_grad(params, sentence, train_rng),
        }
    }

    /// Word-level BIO label indices.
    pub fn predict_labels(&self, params: &ParamStore, sentence: &Sentence) -> Result<Vec<usize>> {
        match self {
            Tagger::Hier(m) => m.predict_labels(params, sentence),
            Tagger::CharNer(m) => m.predict_labels(params, sentence),
        }
    }

    pub fn predict(&self, params: &ParamStore, sentence: &Sentence, tagset: &TagSet) -> Result<Vec<EntitySpan>> {
        Ok(extract_spans(&self.predict_labels(params, sentence)?, tagset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use crate::numerics::grad_check;

    fn tagset() -> TagSet {
        TagSet::new(["PER", "ORG"]).unwrap()
    }

    fn sentence(words: &[(&str, usize)], lang: &str) -> Sentence {
        Sentence {
            tokens: words.iter().map(|(w, l)| Token { text: w.to_string(), label: *l }).collect(),
            language: LanguageId::new(lang).unwrap(),
        }
    }

    fn build(config: &ModelConfig, langs: &[&str]) -> (Tagger, ParamStore) {
        let train = [sentence(&[("Zoë", 1), ("at", 0)], "eng")];
        let langs: Vec<LanguageId> = langs.iter().map(|l| LanguageId::new(*l).unwrap()).collect();
        let t = Tagger::build(config, tagset(), config.build_vocab(&train), &langs).unwrap();
        let p = t.init_params(5).unwrap();
        (t, p)
    }

    fn check_gradient(config: ModelConfig, dropout: bool) {
        let (t, p) = build(&config, &["eng"]);
        let s = sentence(&[("Zoë", 1), ("Ng", 2)], "eng");
        let f = |q: &ParamStore| {
            let mut rng = stream(9, "dropout", 0);
            t.loss_and_grad(q, &s, dropout.then_some(&mut rng)).unwrap()
        };
        let r = grad_check(f, &p, 1e-5, 400, 1).unwrap();
        assert!(r.max_rel_error < 1e-5, "{}: {r:?}", config.name());
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradient(ModelConfig::HiercrfByte(HierCrfConfig::toy(4)), false);
        check_gradient(ModelConfig::HiercrfChar(HierCrfConfig { language_specific_transitions: true, ..HierCrfConfig::toy(4) }), false);
        check_gradient(ModelConfig::Charner(CharNerConfig::toy(4)), false);
        check_gradient(ModelConfig::Charner(CharNerConfig::toy(4)), true);
    }

    #[test]
    fn shapes() {
        let (t, p) = build(&ModelConfig::HiercrfByte(HierCrfConfig::toy(4)), &[]);
        let Tagger::Hier(m) = &t else { unreachable!() };
        let pot = m.potentials(&p, &sentence(&[("x", 0)], "eng")).unwrap();
        assert_eq!(pot.emissions.shape(), &[1, 5]);
        let empty = sentence(&[], "eng");
        assert!(matches!(m.potentials(&p, &empty), Err(Error::EmptySentence)));

        let (t, p) = build(&ModelConfig::Charner(CharNerConfig::toy(4)), &[]);
        let Tagger::CharNer(m) = &t else { unreachable!() };
        let (logits, map) = m.logits(&p, &sentence(&[("abc", 0), ("def", 1)], "eng"), None).unwrap();
        assert_eq!(logits.shape(), &[7, 3]);
        assert_eq!(map.word_of(3), None);
        assert_eq!(map.num_words(), 2);
    }

    #[test]
    fn inference_is_deterministic_and_total() {
        let s = sentence(&[("Über", 0), ("東京", 1), ("x", 0)], "deu");
        for config in [
            ModelConfig::HiercrfByte(HierCrfConfig::toy(4)),
            ModelConfig::HiercrfChar(HierCrfConfig::toy(4)),
            ModelConfig::Charner(CharNerConfig::toy(4)),
        ] {
            let (t, p) = build(&config, &[]);
            let (_, p2) = build(&config, &[]);
            assert_eq!(p, p2);
            let a = t.predict(&p, &s, &tagset()).unwrap();
            assert_eq!(a, t.predict(&p, &s, &tagset()).unwrap());
            assert!(a.iter().all(|sp| sp.start < sp.end && sp.end <= s.len()));
        }
    }

    #[test]
    fn charner_training_dropout_leaves_prediction_alone() {
        let (t, p) = build(&ModelConfig::Charner(CharNerConfig::toy(4)), &[]);
        let Tagger::CharNer(m) = &t else { unreachable!() };
        let s = sentence(&[("abc", 1), ("de", 0)], "eng");
        let (a, _) = m.logits(&p, &s, None).unwrap();
        let (b, _) = m.logits(&p, &s, Some(&mut stream(1, "dropout", 0))).unwrap();
        assert_eq!(a, m.logits(&p, &s, None).unwrap().0);
        assert_ne!(a, b);
    }

    #[test]
    fn language_swap_changes_only_transitions() {
        let config = ModelConfig::HiercrfByte(HierCrfConfig { language_specific_transitions: true, ..HierCrfConfig::toy(4) });
        let (t, mut p) = build(&config, &["eng", "deu"]);
        for (name, tensor) in p.iter_mut() {
            if name.starts_with("crf/lang/deu") {
                tensor.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
            }
        }
        let Tagger::Hier(m) = &t else { unreachable!() };
        let en = sentence(&[("Ann", 1), ("ran", 0)], "eng");
        let de = Sentence { language: LanguageId::new("deu").unwrap(), ..en.clone() };
        let (a, b) = (m.potentials(&p, &en).unwrap(), m.potentials(&p, &de).unwrap());
        assert_eq!(a.emissions, b.emissions);
        assert_ne!(a.transitions, b.transitions);
        assert_ne!(a.start, b.start);
    }

    #[test]
    fn consistent_decode_picks_higher_total() {
        let ts = tagset();
        let map = WordBoundaryMap::new(vec![Some(0); 5]).unwrap();
        let mut logits = crate::numerics::Tensor::zeros(&[5, 3]);
        for pos in 0..5 {
            let (per, org) = if pos < 3 { (2.0, 0.0) } else { (0.0, 2.5) };
            *logits.at_mut(pos, 1) = per;
            *logits.at_mut(pos, 2) = org;
        }
        let trans = consistency_transitions(3);
        let got = charner_decode(&logits, &map, &trans, &ts).unwrap();
        let lsm = |r: usize, c: usize| logits.at(r, c) - crate::numerics::log_sum_exp(logits.row(r));
        let best = (0..3).max_by(|&a, &b| {
            let tot = |c| (0..5).map(|r| lsm(r, c)).sum::<f64>();
            tot(a).partial_cmp(&tot(b)).unwrap()
        });
        let expected = match best.unwrap() {
            0 => 0,
            c => ts.begin(c - 1),
        };
        assert_eq!(got, vec![expected]);
        assert_eq!(got, vec![ts.begin(0)]);
    }

    #[test]
    fn decode_rules() {
        let ts = tagset();
        let map = WordBoundaryMap::new(vec![Some(0), Some(0), None, Some(1)]).unwrap();
        let mut logits = crate::numerics::Tensor::zeros(&[4, 3]);
        for r in [0, 1, 3] {
            *logits.at_mut(r, 1) = 5.0;
        }
        *logits.at_mut(2, 0) = 50.0;
        let trans = consistency_transitions(3);
        assert_eq!(charner_decode(&logits, &map, &trans, &ts).unwrap(), vec![ts.begin(0), ts.inside(0)]);
        let short = WordBoundaryMap::new(vec![Some(0)]).unwrap();
        assert!(matches!(charner_decode(&logits, &short, &trans, &ts), Err(Error::BoundaryMismatch { .. })));
        assert_eq!(charner::word_classes_to_bio(&[1, 1, 0, 2, 1], &ts), vec![1, 2, 0, 3, 1]);
        assert!(WordBoundaryMap::new(vec![Some(1)]).is_err());
        assert!(WordBoundaryMap::new(vec![Some(0), None, Some(0)]).is_err());
    }

    #[test]
    fn config_json_is_tagged() {
        let c = ModelConfig::HiercrfByte(HierCrfConfig::toy(8));
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["architecture"], "hiercrf-byte");
        assert_eq!(json["embedding_dim"], 8);
        let back: ModelConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
        let bad = serde_json::json!({"architecture": "charner", "layerz": 3});
        assert!(serde_json::from_value::<ModelConfig>(bad).is_err());
        let partial: ModelConfig = serde_json::from_value(serde_json::json!({"architecture": "charner"})).unwrap();
        assert_eq!(partial, ModelConfig::Charner(CharNerConfig::default()));
    }

    #[test]
    fn reference_defaults() {
        let h = HierCrfConfig::default();
        assert_eq!((h.subtoken_layers, h.subtoken_hidden), (2, 256));
        assert_eq!((h.sentence_layers, h.sentence_hidden, h.embedding_dim), (1, 256, 256));
        let c = CharNerConfig::default();
        assert_eq!((c.layers, c.hidden), (5, 128));
        assert_eq!((c.byte_dropout, c.dropout, c.final_dropout), (0.2, 0.5, 0.8));
    }
}
