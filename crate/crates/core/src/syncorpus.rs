//! Deterministic synthetic multilingual NER corpora.
//!
//! Each language has its own filler vocabulary drawn from one Unicode range.
//! Entities come from a shared inventory (ASCII Latin words, identical in
//! every language that includes them) and a private per-language inventory
//! (words from the language's own range). Every word belongs to exactly one
//! entity or filler entry, and entities are never adjacent, so gold labels
//! are a function of the word sequence.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, LanguageId, Sentence, Split, TagSet, Token};
use crate::error::{Error, Result};
use crate::numerics::rng::{stream, Rng};
use crate::training::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthLanguage {
    pub code: String,
    /// Inclusive code point range for filler and private entity words.
    pub script: [u32; 2],
    /// Relative frequency of each entity type; empty means uniform.
    #[serde(default)]
    pub type_weights: Vec<f64>,
    /// Overrides the suite-wide train size.
    #[serde(default)]
    pub train_sentences: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub languages: Vec<SynthLanguage>,
    pub entity_types: Vec<String>,
    pub shared_entities: usize,
    /// Chance that a language includes each shared entity.
    pub inclusion_probability: f64,
    pub private_entities: usize,
    /// Fraction of a language's entities kept out of its train split.
    pub heldout_fraction: f64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Filler words per sentence, inclusive range.
    pub sentence_length: [usize; 2],
    pub max_entities_per_sentence: usize,
    /// Chance that each entity slot of a sentence is filled.
    pub entity_density: f64,
    pub max_entity_tokens: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

const SCRIPTS: [(&str, [u32; 2]); 8] = [
    ("cyr", [0x0430, 0x044F]),
    ("grk", [0x03B1, 0x03C9]),
    ("arm", [0x0561, 0x0586]),
    ("geo", [0x10D0, 0x10F0]),
    ("heb", [0x05D0, 0x05EA]),
    ("dev", [0x0915, 0x0939]),
    ("tha", [0x0E01, 0x0E2E]),
    ("hir", [0x3041, 0x3093]),
];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::with_languages(3)
    }
}

impl SynthConfig {
    /// `n` languages (at most 8) on disjoint scripts with mildly skewed type
    /// priors. Each language includes about half of the 60 shared entities,
    /// so half of its entity inventory is shared.
    pub fn with_languages(n: usize) -> Self {
        let languages = SCRIPTS
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, (code, script))| SynthLanguage {
                code: format!("syn{code}"),
                script: *script,
                type_weights: (0..3).map(|t| if t == i % 3 { 2.0 } else { 1.0 }).collect(),
                train_sentences: None,
            })
            .collect();
        SynthConfig {
            languages,
            entity_types: vec!["PER".into(), "ORG".into(), "LOC".into()],
            shared_entities: 60,
            inclusion_probability: 0.5,
            private_entities: 30,
            heldout_fraction: 0.3,
            train_sentences: 200,
            dev_sentences: 100,
            test_sentences: 100,
            sentence_length: [3, 8],
            max_entities_per_sentence: 2,
            entity_density: 0.6,
            max_entity_tokens: 3,
            filler_vocab: 60,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.languages.is_empty() {
            return bad("at least one language is required");
        }
        let tagset = TagSet::new(self.entity_types.clone())?;
        let mut seen = HashSet::new();
        for l in &self.languages {
            LanguageId::new(l.code.clone())?;
            if !seen.insert(&l.code) {
                return Err(Error::DuplicateLanguage(l.code.clone()));
            }
            let [lo, hi] = l.script;
            if lo > hi || (lo..=hi).any(|c| char::from_u32(c).map_or(true, char::is_whitespace)) {
                return Err(Error::InvalidConfig(format!("{}: script range must be valid non-space scalar values", l.code)));
            }
            if hi - lo < 3 {
                return Err(Error::InvalidConfig(format!("{}: script range needs at least 4 characters", l.code)));
            }
            if !l.type_weights.is_empty()
                && (l.type_weights.len() != tagset.entity_types().len()
                    || l.type_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || l.type_weights.iter().sum::<f64>() <= 0.0)
            {
                return Err(Error::InvalidConfig(format!("{}: one non-negative weight per entity type", l.code)));
            }
        }
        for (name, p) in [
            ("inclusion_probability", self.inclusion_probability),
            ("heldout_fraction", self.heldout_fraction),
            ("entity_density", self.entity_density),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        let [lo, hi] = self.sentence_length;
        if lo == 0 || lo > hi {
            return bad("sentence_length must be a range [min, max] with min >= 1");
        }
        if self.max_entity_tokens == 0 || self.filler_vocab == 0 {
            return bad("max_entity_tokens and filler_vocab must be >= 1");
        }
        if self.train_sentences == 0 || self.dev_sentences == 0 {
            return bad("train and dev splits must be non-empty");
        }
        Ok(())
    }

    pub fn tagset(&self) -> Result<TagSet> {
        TagSet::new(self.entity_types.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedEntity {
    pub surface: String,
    pub etype: String,
    /// Languages whose data contain the entity anywhere.
    pub languages: Vec<String>,
    /// Languages whose train split contains it.
    pub train_languages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entity_types: Vec<String>,
    pub seed: u64,
    pub shared: Vec<SharedEntity>,
}

#[derive(Clone, Debug)]
pub struct GeneratedSuite {
    pub corpora: IndexMap<LanguageId, LabeledCorpus>,
    pub manifest: Manifest,
}

impl GeneratedSuite {
    pub fn tagset(&self) -> TagSet {
        TagSet::new(self.manifest.entity_types.clone()).expect("validated at generation")
    }

    /// `dir/<lang>/{train,dev,test}.conll`, `dir/tagset.json`,
    /// `dir/manifest.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let tagset = self.tagset();
        write_atomic(&dir.join("tagset.json"), &serde_json::to_vec_pretty(&tagset)?)?;
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&self.manifest)?)?;
        for (lang, corpus) in &self.corpora {
            for (split, sentences) in corpus.splits() {
                let path = dir.join(lang.as_str()).join(format!("{split}.conll"));
                write_atomic(&path, crate::corpus::write_conll(sentences, &tagset).as_bytes())?;
            }
        }
        Ok(())
    }
}

struct Entity {
    words: Vec<String>,
    etype: usize,
}

struct WordFactory {
    used: HashSet<String>,
}

impl WordFactory {
    fn word(&mut self, rng: &mut Rng, mut draw: impl FnMut(&mut Rng) -> String) -> String {
        loop {
            let w = draw(rng);
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn script_word(rng: &mut Rng, [lo, hi]: [u32; 2], len: usize) -> String {
    (0..len).map(|_| char::from_u32(rng.gen_range(lo..=hi)).expect("validated range")).collect()
}

fn latin_name(rng: &mut Rng) -> String {
    let len = rng.gen_range(4..=8);
    (0..len)
        .map(|i| {
            let c = rng.gen_range(0..26u8);
            (if i == 0 { b'A' + c } else { b'a' + c }) as char
        })
        .collect()
}

fn weighted(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn make_sentence(
    rng: &mut Rng,
    config: &SynthConfig,
    fillers: &[String],
    lang: &LanguageId,
    tagset: &TagSet,
    mut pick: impl FnMut(&mut Rng) -> Option<usize>,
    pool: &[&Entity],
) -> Sentence {
    let len = rng.gen_range(config.sentence_length[0]..=config.sentence_length[1]);
    let mut chosen = Vec::new();
    for _ in 0..config.max_entities_per_sentence.min(len + 1) {
        if let Some(e) = pick(rng) {
            chosen.push(e);
        }
    }
    let mut gaps: Vec<usize> = (0..=len).collect();
    gaps.shuffle(rng);
    let mut slots: Vec<(usize, usize)> = gaps.into_iter().zip(chosen).collect();
    slots.sort_unstable();
    let mut tokens = Vec::new();
    let mut next = slots.iter().peekable();
    for gap in 0..=len {
        if let Some(&&(_, e)) = next.peek().filter(|(g, _)| *g == gap) {
            next.next();
            let ent = pool[e];
            for (i, w) in ent.words.iter().enumerate() {
                let label = if i == 0 { tagset.begin(ent.etype) } else { tagset.inside(ent.etype) };
                tokens.push(Token { text: w.clone(), label });
            }
        }
        if gap < len {
            tokens.push(Token { text: fillers.choose(rng).expect("non-empty vocabulary").clone(), label: 0 });
        }
    }
    Sentence { tokens, language: lang.clone() }
}

/// Builds the suite. Identical configs give identical suites.
pub fn generate(config: &SynthConfig) -> Result<GeneratedSuite> {
    config.validate()?;
    let tagset = config.tagset()?;
    let k = tagset.entity_types().len();
    let seed = config.seed;
    let mut factory = WordFactory { used: HashSet::new() };

    let mut shared_rng = stream(seed, "synth/shared", 0);
    let entity_words = |rng: &mut Rng, factory: &mut WordFactory, f: &mut dyn FnMut(&mut Rng) -> String| {
        let n = rng.gen_range(1..=config.max_entity_tokens);
        (0..n).map(|_| factory.word(rng, &mut *f)).collect::<Vec<_>>()
    };
    let shared: Vec<Entity> = (0..config.shared_entities)
        .map(|i| Entity { words: entity_words(&mut shared_rng, &mut factory, &mut latin_name), etype: i % k })
        .collect();

    let mut corpora = IndexMap::new();
    for (li, lc) in config.languages.iter().enumerate() {
        let lang = LanguageId::new(lc.code.clone())?;
        let mut rng = stream(seed, "synth/vocab", li as u64);
        let script = lc.script;
        let fillers: Vec<String> = (0..config.filler_vocab)
            .map(|_| {
                let len = rng.gen_range(2..=6);
                factory.word(&mut rng, |r| script_word(r, script, len))
            })
            .collect();
        let private: Vec<Entity> = (0..config.private_entities)
            .map(|i| {
                let mut f = |r: &mut Rng| {
                    let len = r.gen_range(4..=8);
                    script_word(r, script, len)
                };
                Entity { words: entity_words(&mut rng, &mut factory, &mut f), etype: i % k }
            })
            .collect();

        let mut pool: Vec<&Entity> =
            shared.iter().filter(|_| rng.gen::<f64>() < config.inclusion_probability).chain(private.iter()).collect();
        pool.shuffle(&mut rng);
        let heldout = (config.heldout_fraction * pool.len() as f64).round() as usize;
        let train_pool: Vec<usize> = (heldout..pool.len()).collect();
        let eval_pool: Vec<usize> = (0..pool.len()).collect();
        let weights = if lc.type_weights.is_empty() { vec![1.0; k] } else { lc.type_weights.clone() };
        let by_type = |ids: &[usize]| -> Vec<Vec<usize>> {
            (0..k).map(|t| ids.iter().copied().filter(|&e| pool[e].etype == t).collect()).collect()
        };
        let (train_by_type, eval_by_type) = (by_type(&train_pool), by_type(&eval_pool));

        let mut splits = BTreeMap::new();
        let sizes = [
            (Split::Train, lc.train_sentences.unwrap_or(config.train_sentences)),
            (Split::Dev, config.dev_sentences),
            (Split::Test, config.test_sentences),
        ];
        for (si, (split, n)) in sizes.into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let mut rng = stream(seed, "synth/sentences", (li * 3 + si) as u64);
            let groups = if split == Split::Train { &train_by_type } else { &eval_by_type };
            let mut coverage: Vec<usize> = if split == Split::Train { train_pool.clone() } else { Vec::new() };
            coverage.shuffle(&mut rng);
            coverage.reverse();
            let mut pick = |r: &mut Rng| {
                if let Some(e) = coverage.pop() {
                    return Some(e);
                }
                if r.gen::<f64>() >= config.entity_density {
                    return None;
                }
                let w: Vec<f64> = (0..k).map(|t| if groups[t].is_empty() { 0.0 } else { weights[t] }).collect();
                if w.iter().sum::<f64>() <= 0.0 {
                    return None;
                }
                groups[weighted(r, &w)].choose(r).copied()
            };
            let sentences = (0..n).map(|_| make_sentence(&mut rng, config, &fillers, &lang, &tagset, &mut pick, &pool)).collect();
            splits.insert(split, sentences);
        }
        corpora.insert(lang.clone(), LabeledCorpus::new(lang, tagset.clone(), splits)?);
    }

    let manifest = Manifest {
        entity_types: tagset.entity_types().to_vec(),
        seed,
        shared: shared
            .iter()
            .map(|e| {
                let surface = e.words.join(" ");
                let contains = |sentences: &[Sentence]| sentences.iter().any(|s| contains_entity(s, &e.words));
                let mut languages = Vec::new();
                let mut train_languages = Vec::new();
                for (lang, c) in &corpora {
                    if c.splits().values().any(|s| contains(s)) {
                        languages.push(lang.to_string());
                    }
                    if contains(c.train()) {
                        train_languages.push(lang.to_string());
                    }
                }
                SharedEntity { surface, etype: tagset.entity_types()[e.etype].clone(), languages, train_languages }
            })
            .collect(),
    };
    Ok(GeneratedSuite { corpora, manifest })
}

fn contains_entity(s: &Sentence, words: &[String]) -> bool {
    s.tokens.windows(words.len()).any(|w| w.iter().zip(words).all(|(t, x)| &t.text == x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_spans;

    fn small() -> SynthConfig {
        SynthConfig { train_sentences: 40, dev_sentences: 10, test_sentences: 10, ..SynthConfig::with_languages(3) }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.corpora, b.corpora);
        let other = generate(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.corpora, other.corpora);
    }

    #[test]
    fn full_inclusion_reaches_every_train_split() {
        let c = SynthConfig { inclusion_probability: 1.0, heldout_fraction: 0.0, shared_entities: 30, ..small() };
        let suite = generate(&c).unwrap();
        for e in &suite.manifest.shared {
            assert_eq!(e.train_languages.len(), 3, "{e:?}");
        }
    }

    #[test]
    fn filler_scripts_are_disjoint() {
        let suite = generate(&small()).unwrap();
        let chars: Vec<HashSet<char>> = suite
            .corpora
            .values()
            .map(|c| c.train().iter().flat_map(|s| s.tokens.iter()).filter(|t| t.label == 0).flat_map(|t| t.text.chars()).collect())
            .collect();
        assert!(chars[0].is_disjoint(&chars[1]));
        assert!(chars[1].is_disjoint(&chars[2]));
    }

    #[test]
    fn gold_labels_need_no_repair() {
        let suite = generate(&small()).unwrap();
        let ts = suite.tagset();
        for c in suite.corpora.values() {
            for s in c.splits().values().flatten() {
                let labels = s.labels();
                for (i, &l) in labels.iter().enumerate() {
                    if let crate::corpus::Bio::Inside(t) = ts.decode(l) {
                        assert!(i > 0 && ts.class_of(labels[i - 1]) == Some(t));
                    }
                }
                let spans = extract_spans(&labels, &ts);
                assert!(spans.windows(2).all(|w| w[0].end < w[1].start), "entities must not touch");
            }
        }
    }

    #[test]
    fn bad_configs() {
        assert!(generate(&SynthConfig { inclusion_probability: 1.5, ..small() }).is_err());
        let mut c = small();
        c.languages[0].script = [0xD800, 0xD8FF];
        assert!(matches!(generate(&c), Err(Error::InvalidConfig(_))));
        let mut c = small();
        c.languages[1].code = c.languages[0].code.clone();
        assert!(matches!(generate(&c), Err(Error::DuplicateLanguage(_))));
        let json = serde_json::json!({"languages": [], "bogus": 1});
        assert!(serde_json::from_value::<SynthConfig>(json).is_err());
    }
}
