//! Exact-match span precision/recall/F1 (conlleval semantics).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans, EntitySpan, LabeledCorpus, Sentence, Split, TagSet};
use crate::encoding::VocabMode;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::taggers::Tagger;
use crate::training::Checkpoint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Scores {
    pub fn from_counts(counts: Counts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        Scores { counts, precision, recall, f1: harmonic_mean(precision, recall) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub etype: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: Vec<TypeScores>,
    pub micro: Scores,
    pub sentences: usize,
    pub tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default)]
    pub zero_shot: bool,
    /// Fraction of interior sub-tokens mapped to UNK (char vocabularies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk_rate: Option<f64>,
}

impl EvalReport {
    /// `lang split P R F1`, tab-separated.
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            self.language.as_deref().unwrap_or("-"),
            self.split.as_deref().unwrap_or("-"),
            self.micro.precision,
            self.micro.recall,
            self.micro.f1
        )
    }
}

/// Scores predicted spans against the gold annotation of `gold`.
pub fn span_f1(gold: &[Sentence], predicted: &[Vec<EntitySpan>], tagset: &TagSet) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch { expected: gold.len(), got: predicted.len() });
    }
    let types = tagset.entity_types();
    let mut counts = vec![Counts::default(); types.len()];
    let type_idx = |t: &str| types.iter().position(|x| x == t);
    for (sentence, pred) in gold.iter().zip(predicted) {
        let mut unmatched: HashMap<&EntitySpan, usize> = HashMap::new();
        let gold_spans = extract_spans(&sentence.labels(), tagset);
        for g in &gold_spans {
            *unmatched.entry(g).or_default() += 1;
        }
        for p in pred {
            let k = type_idx(&p.etype)
                .ok_or_else(|| Error::InvalidCorpus(format!("predicted unknown entity type {}", p.etype)))?;
            match unmatched.get_mut(p) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    counts[k].tp += 1;
                }
                _ => counts[k].fp += 1,
            }
        }
        for (g, n) in unmatched {
            counts[type_idx(&g.etype).expect("gold types come from tagset")].fn_ += n;
        }
    }
    let micro = counts.iter().fold(Counts::default(), |a, c| Counts { tp: a.tp + c.tp, fp: a.fp + c.fp, fn_: a.fn_ + c.fn_ });
    Ok(EvalReport {
        per_type: types
            .iter()
            .zip(&counts)
            .map(|(t, c)| TypeScores { etype: t.clone(), scores: Scores::from_counts(*c) })
            .collect(),
        micro: Scores::from_counts(micro),
        sentences: gold.len(),
        tokens: gold.iter().map(Sentence::len).sum(),
        language: None,
        split: None,
        zero_shot: false,
        unk_rate: None,
    })
}

pub fn predict_all(tagger: &Tagger, params: &ParamStore, tagset: &TagSet, sentences: &[Sentence]) -> Result<Vec<Vec<EntitySpan>>> {
    sentences.iter().map(|s| tagger.predict(params, s, tagset)).collect()
}

pub fn evaluate_sentences(tagger: &Tagger, params: &ParamStore, tagset: &TagSet, sentences: &[Sentence]) -> Result<EvalReport> {
    span_f1(sentences, &predict_all(tagger, params, tagset, sentences)?, tagset)
}

/// Evaluates a checkpoint on one split. Languages absent from the
/// checkpoint's training metadata are flagged as zero-shot.
pub fn evaluate(ckpt: &Checkpoint, corpus: &LabeledCorpus, split: Split) -> Result<EvalReport> {
    let sentences = corpus.split(split);
    if sentences.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    if corpus.tagset() != &ckpt.tagset {
        return Err(Error::TagSetMismatch("corpus and checkpoint label sets differ".into()));
    }
    let tagger = ckpt.tagger()?;
    let mut report = evaluate_sentences(&tagger, &ckpt.params, &ckpt.tagset, sentences)?;
    report.language = Some(corpus.language().to_string());
    report.split = Some(split.to_string());
    report.zero_shot = !ckpt.meta.languages.contains(corpus.language());
    if ckpt.vocab.mode() == VocabMode::Char {
        let (mut unk, mut total) = (0usize, 0usize);
        for s in sentences {
            for w in s.words() {
                let seq = ckpt.vocab.encode_word(w);
                unk += seq.interior().iter().filter(|&&id| id == ckpt.vocab.unk()).count();
                total += seq.interior().len();
            }
        }
        let rate = ratio(unk, total);
        if rate > 0.0 {
            log::warn!("{:.1}% of characters in {} are outside the model vocabulary", 100.0 * rate, corpus.language());
        }
        report.unk_rate = Some(rate);
    }
    Ok(report)
}
