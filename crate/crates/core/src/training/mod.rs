//! Monolingual, polyglot and fine-tuning regimes with epoch-level early
//! stopping on dev F1.

mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, LanguageId, PolyglotCorpus, Sentence, SentenceRef, Split, TagSet};
use crate::encoding::SubtokenVocab;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_sentences;
use crate::numerics::adam::AdamConfig;
use crate::numerics::rng::stream;
use crate::numerics::{adam_step, AdamState, ParamStore};
use crate::taggers::{ModelConfig, Tagger};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_atomic, FORMAT_VERSION, MAGIC};

fn default_max_epochs() -> usize {
    50
}

fn default_patience() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub uniform_sampling: bool,
    /// Replaces the restored learning rate when fine-tuning.
    #[serde(default)]
    pub finetune_lr: Option<f64>,
    /// Start fine-tuning from fresh Adam moments instead of the saved ones.
    #[serde(default)]
    pub reset_optimizer: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            adam: AdamConfig::default(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seeds: default_seeds(),
            uniform_sampling: false,
            finetune_lr: None,
            reset_optimizer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        let lrs = std::iter::once(self.adam.lr).chain(self.finetune_lr);
        if lrs.into_iter().any(|lr| !lr.is_finite() || lr < 0.0) {
            return Err(Error::InvalidConfig("learning rates must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Mono,
    Polyglot,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence training loss; absent for the pre-training evaluation.
    pub train_loss: Option<f64>,
    pub dev_f1: BTreeMap<String, f64>,
    pub selection: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Unweighted mean of per-language dev F1 (the F1 itself for one language).
pub fn selection_score(dev_f1: &BTreeMap<String, f64>) -> f64 {
    if dev_f1.is_empty() {
        0.0
    } else {
        dev_f1.values().sum::<f64>() / dev_f1.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub regime: Regime,
    pub languages: Vec<LanguageId>,
    pub seed: u64,
    /// Epoch of the selected snapshot (0 = the initialization).
    pub epoch: usize,
    pub history: RunHistory,
}

/// Everything needed to evaluate or continue training a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub tagset: TagSet,
    pub vocab: SubtokenVocab,
    pub params: ParamStore,
    pub adam: AdamState,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn tagger(&self) -> Result<Tagger> {
        let bank: Vec<LanguageId> = crate::crf::TransitionBank::from_params(&self.params).languages().cloned().collect();
        Tagger::build(&self.model, self.tagset.clone(), self.vocab.clone(), &bank)
    }

    pub fn selection_score(&self) -> f64 {
        self.meta.history.best_score
    }
}

/// Training data for one run.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    Mono(&'a LabeledCorpus),
    Poly(&'a PolyglotCorpus),
}

impl<'a> From<&'a LabeledCorpus> for TrainData<'a> {
    fn from(c: &'a LabeledCorpus) -> Self {
        TrainData::Mono(c)
    }
}

impl<'a> From<&'a PolyglotCorpus> for TrainData<'a> {
    fn from(c: &'a PolyglotCorpus) -> Self {
        TrainData::Poly(c)
    }
}

impl<'a> TrainData<'a> {
    fn corpora(&self) -> Vec<&'a LabeledCorpus> {
        match *self {
            TrainData::Mono(c) => vec![c],
            TrainData::Poly(p) => p.corpora().collect(),
        }
    }

    fn tagset(&self) -> &'a TagSet {
        match *self {
            TrainData::Mono(c) => c.tagset(),
            TrainData::Poly(p) => p.tagset(),
        }
    }

    fn epoch(&self, seed: u64, epoch: usize) -> Vec<SentenceRef> {
        match *self {
            TrainData::Mono(c) => (0..c.train().len()).map(|index| SentenceRef { language: 0, index }).collect(),
            TrainData::Poly(p) => p.epoch(&mut stream(seed, "sample", epoch as u64)),
        }
    }

    fn sentence(&self, r: SentenceRef) -> &'a Sentence {
        match *self {
            TrainData::Mono(c) => &c.train()[r.index],
            TrainData::Poly(p) => p.sentence(r),
        }
    }

    fn check(&self) -> Result<()> {
        for c in self.corpora() {
            for split in [Split::Train, Split::Dev] {
                if c.split(split).is_empty() {
                    return Err(Error::EmptySplit(format!("{}/{split}", c.language())));
                }
            }
        }
        Ok(())
    }
}

fn dev_scores(tagger: &Tagger, params: &ParamStore, data: &TrainData) -> Result<BTreeMap<String, f64>> {
    data.corpora()
        .into_iter()
        .map(|c| Ok((c.language().to_string(), evaluate_sentences(tagger, params, c.tagset(), c.dev())?.micro.f1)))
        .collect()
}

struct Snapshot {
    epoch: usize,
    score: f64,
    params: ParamStore,
    adam: AdamState,
}

/// The shared epoch loop. Returns the best snapshot's state, the epoch it
/// came from, and the full history.
fn run_epochs(
    tagger: &Tagger,
    mut params: ParamStore,
    mut adam: AdamState,
    data: TrainData,
    config: &TrainConfig,
    seed: u64,
    evaluate_init: bool,
) -> Result<(ParamStore, AdamState, usize, RunHistory)> {
    let mut history = RunHistory::default();
    let mut best: Option<Snapshot> = None;
    if evaluate_init || config.max_epochs == 0 {
        let dev_f1 = dev_scores(tagger, &params, &data)?;
        let score = selection_score(&dev_f1);
        history.epochs.push(EpochRecord { epoch: 0, train_loss: None, dev_f1, selection: score });
        best = Some(Snapshot { epoch: 0, score, params: params.clone(), adam: adam.clone() });
    }
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let mut order = data.epoch(seed, epoch);
        order.shuffle(&mut stream(seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for (k, r) in order.iter().enumerate() {
            let mut rng = stream(seed, "dropout", ((epoch as u64) << 32) | k as u64);
            let (loss, grads) = tagger.loss_and_grad(&params, data.sentence(*r), Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            adam_step(&mut params, &grads, &mut adam).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::DivergedLoss { epoch },
                e => e,
            })?;
            total += loss;
        }
        let dev_f1 = dev_scores(tagger, &params, &data)?;
        let score = selection_score(&dev_f1);
        let train_loss = total / order.len().max(1) as f64;
        log::info!("epoch {epoch}: loss {train_loss:.4} dev {score:.4}");
        history.epochs.push(EpochRecord { epoch, train_loss: Some(train_loss), dev_f1, selection: score });
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Snapshot { epoch, score, params: params.clone(), adam: adam.clone() });
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let best = best.expect("at least one epoch or the initial evaluation ran");
    history.best_epoch = best.epoch;
    history.best_score = best.score;
    Ok((best.params, best.adam, best.epoch, history))
}

/// Trains a fresh model from the `init` stream of `seed`.
pub fn train<'a>(config: &TrainConfig, data: impl Into<TrainData<'a>>, seed: u64) -> Result<(Checkpoint, RunHistory)> {
    config.validate()?;
    let data = data.into();
    data.check()?;
    let corpora = data.corpora();
    let languages: Vec<LanguageId> = corpora.iter().map(|c| c.language().clone()).collect();
    let vocab = config.model.build_vocab(corpora.iter().flat_map(|c| c.train()));
    let tagger = Tagger::build(&config.model, data.tagset().clone(), vocab.clone(), &languages)?;
    let params = tagger.init_params(seed)?;
    let adam = AdamState::new(&params, config.adam);
    let (params, adam, epoch, history) = run_epochs(&tagger, params, adam, data, config, seed, false)?;
    let regime = match data {
        TrainData::Mono(_) => Regime::Mono,
        TrainData::Poly(_) => Regime::Polyglot,
    };
    let ckpt = Checkpoint {
        model: config.model.clone(),
        tagset: data.tagset().clone(),
        vocab,
        params,
        adam,
        meta: TrainingMeta { regime, languages, seed, epoch, history: history.clone() },
    };
    Ok((ckpt, history))
}

/// Continues training `init` on one language, restoring its parameters and
/// optimizer moments. The initialization competes in model selection as
/// epoch 0.
pub fn finetune(init: &Checkpoint, target: &LabeledCorpus, config: &TrainConfig, seed: u64) -> Result<(Checkpoint, RunHistory)> {
    config.validate()?;
    if target.tagset() != &init.tagset {
        return Err(Error::TagSetMismatch(format!(
            "{} has types {:?}, checkpoint has {:?}",
            target.language(),
            target.tagset().entity_types(),
            init.tagset.entity_types()
        )));
    }
    if config.model.vocab_mode() != init.vocab.mode() {
        return Err(Error::VocabIncompatible(format!(
            "config asks for {} but the checkpoint is {}",
            config.model.name(),
            init.model.name()
        )));
    }
    let data = TrainData::Mono(target);
    data.check()?;
    let tagger = init.tagger()?;
    let mut adam = if config.reset_optimizer {
        AdamState::new(&init.params, init.adam.config)
    } else {
        init.adam.clone()
    };
    if let Some(lr) = config.finetune_lr {
        adam.config.lr = lr;
    }
    let (params, adam, epoch, history) = run_epochs(&tagger, init.params.clone(), adam, data, config, seed, true)?;
    let mut languages = init.meta.languages.clone();
    if !languages.contains(target.language()) {
        languages.push(target.language().clone());
    }
    let ckpt = Checkpoint {
        model: init.model.clone(),
        tagset: init.tagset.clone(),
        vocab: init.vocab.clone(),
        params,
        adam,
        meta: TrainingMeta { regime: Regime::Finetune, languages, seed, epoch, history: history.clone() },
    };
    Ok((ckpt, history))
}

/// The run with the highest selection score; ties go to the lower seed.
pub fn select_best(runs: &[(Checkpoint, RunHistory)]) -> Result<&Checkpoint> {
    Ok(&runs[best_run_index(runs)?].0)
}

pub fn best_run_index(runs: &[(Checkpoint, RunHistory)]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, (ckpt, history)) in runs.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bc, bh) = &runs[b];
                if history.best_score > bh.best_score
                    || (history.best_score == bh.best_score && ckpt.meta.seed < bc.meta.seed)
                {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or(Error::EmptyRuns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use crate::taggers::HierCrfConfig;

    fn toy_corpus() -> LabeledCorpus {
        let tagset = TagSet::new(["PER"]).unwrap();
        let lang = LanguageId::new("eng").unwrap();
        let mk = |words: &[(&str, usize)]| Sentence {
            tokens: words.iter().map(|(w, l)| Token { text: w.to_string(), label: *l }).collect(),
            language: lang.clone(),
        };
        let train = vec![mk(&[("Ann", 1), ("ran", 0)]), mk(&[("we", 0), ("saw", 0), ("Bob", 1)]), mk(&[("Cy", 1), ("Dee", 2)])];
        let dev = vec![mk(&[("Ann", 1), ("saw", 0)])];
        LabeledCorpus::new(lang, tagset, [(Split::Train, train), (Split::Dev, dev)].into_iter().collect()).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig { max_epochs: 3, ..TrainConfig::new(ModelConfig::HiercrfByte(HierCrfConfig::toy(4))) }
    }

    #[test]
    fn frozen_optimizer_stops_after_patience() {
        let mut c = config();
        c.adam.lr = 0.0;
        c.patience = 1;
        c.max_epochs = 10;
        let (ckpt, h) = train(&c, &toy_corpus(), 1).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(ckpt.meta.epoch, 1);
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = train(&config(), &toy_corpus(), 7).unwrap();
        let b = train(&config(), &toy_corpus(), 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn best_snapshot_is_never_worse_than_history() {
        let (_, h) = train(&config(), &toy_corpus(), 2).unwrap();
        assert!(h.epochs.iter().all(|e| e.selection <= h.best_score));
    }

    #[test]
    fn zero_lr_finetune_is_identity() {
        let (ckpt, _) = train(&config(), &toy_corpus(), 3).unwrap();
        let mut c = config();
        c.finetune_lr = Some(0.0);
        let (ft, h) = finetune(&ckpt, &toy_corpus(), &c, 3).unwrap();
        assert_eq!(ft.params, ckpt.params);
        assert_eq!(h.best_epoch, 0);
        let mut c = config();
        c.max_epochs = 0;
        assert_eq!(finetune(&ckpt, &toy_corpus(), &c, 3).unwrap().0.params, ckpt.params);
    }

    #[test]
    fn finetune_rejects_other_tagsets_and_vocabs() {
        let (ckpt, _) = train(&config(), &toy_corpus(), 3).unwrap();
        let mut other = ckpt.clone();
        other.tagset = TagSet::new(["ORG"]).unwrap();
        assert!(matches!(finetune(&other, &toy_corpus(), &config(), 1), Err(Error::TagSetMismatch(_))));
        let c = TrainConfig::new(ModelConfig::HiercrfChar(HierCrfConfig::toy(4)));
        assert!(matches!(finetune(&ckpt, &toy_corpus(), &c, 1), Err(Error::VocabIncompatible(_))));
    }

    #[test]
    fn empty_dev_split() {
        let c = toy_corpus();
        let no_dev = LabeledCorpus::new(
            c.language().clone(),
            c.tagset().clone(),
            [(Split::Train, c.train().to_vec())].into_iter().collect(),
        )
        .unwrap();
        assert!(matches!(train(&config(), &no_dev, 1), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn selection_is_unweighted_mean() {
        let m: BTreeMap<String, f64> = [("a".to_string(), 0.2), ("b".to_string(), 0.6), ("c".to_string(), 1.0)].into();
        assert!((selection_score(&m) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn select_best_rules() {
        let (base, _) = train(&TrainConfig { max_epochs: 1, ..config() }, &toy_corpus(), 1).unwrap();
        let run = |score: f64, seed: u64| {
            let mut c = base.clone();
            c.meta.seed = seed;
            let h = RunHistory { best_score: score, ..RunHistory::default() };
            (c, h)
        };
        assert!(matches!(select_best(&[]), Err(Error::EmptyRuns)));
        let one = [run(0.5, 1)];
        assert_eq!(select_best(&one).unwrap(), &one[0].0);
        assert_eq!(best_run_index(&[run(0.6, 1), run(0.8, 2), run(0.7, 3)]).unwrap(), 1);
        assert_eq!(best_run_index(&[run(0.7, 4), run(0.7, 2), run(0.7, 3)]).unwrap(), 1);
    }
}
