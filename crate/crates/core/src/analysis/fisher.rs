//! Empirical Fisher diagonal: expected squared gradient of `log p(y | x)`
//! under model samples `y ~ p(y | x)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, Sentence};
use crate::crf::{expected_counts, marginals, sample_posterior};
use crate::error::{Error, Result};
use crate::numerics::rng::stream;
use crate::numerics::ParamStore;
use crate::taggers::{HierCrf, Tagger};
use crate::training::Checkpoint;

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    pub language: String,
    pub examples: usize,
    pub samples_per_example: usize,
    pub seed: u64,
    /// How the values were combined from other diagonals, if they were.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    pub values: ParamStore,
    /// Monte-Carlo standard error of each value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<ParamStore>,
}

fn hier(tagger: &Tagger) -> Result<&HierCrf> {
    match tagger {
        Tagger::Hier(m) => Ok(m),
        Tagger::CharNer(_) => Err(Error::UnsupportedArchitecture("charner has no posterior over label sequences".into())),
    }
}

/// Per-example mean of `g²` and of `g⁴` over the drawn samples.
fn example_moments(model: &HierCrf, params: &ParamStore, sentence: &Sentence, samples: usize, seed: u64, index: u64) -> Result<(ParamStore, ParamStore)> {
    let (pot, tape) = model.forward(params, sentence)?;
    let mut base = expected_counts(&pot, &marginals(&pot));
    for t in [&mut base.emissions, &mut base.transitions, &mut base.start, &mut base.stop] {
        t.scale(-1.0);
    }
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for y in sample_posterior(&pot, &mut stream(seed, "fisher", index), samples) {
        *counts.entry(y).or_default() += 1;
    }
    let mut m2 = params.zeros_like();
    let mut m4 = params.zeros_like();
    for (y, n) in counts {
        let mut d = base.clone();
        d.add_path_counts(&y, 1.0);
        let mut g = params.zeros_like();
        model.backward(params, &tape, &d, &mut g)?;
        let w = n as f64 / samples as f64;
        let targets = m2.iter_mut().zip(m4.iter_mut());
        for (((_, a2), (_, a4)), (_, gt)) in targets.zip(g.iter()) {
            let (a2, a4) = (a2.data_mut(), a4.data_mut());
            for (k, &v) in gt.data().iter().enumerate() {
                let sq = v * v;
                a2[k] += w * sq;
                a4[k] += w * sq * sq;
            }
        }
    }
    Ok((m2, m4))
}

/// Fisher diagonal of `tagger` over `sentences`: the mean over samples, then
/// over examples. Example `i` draws from its own stream, so the result does
/// not depend on scheduling.
pub fn fisher_from_sentences(
    tagger: &Tagger,
    params: &ParamStore,
    sentences: &[Sentence],
    samples: usize,
    seed: u64,
) -> Result<(ParamStore, ParamStore)> {
    let model = hier(tagger)?;
    if sentences.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("samples per example must be >= 1".into()));
    }
    let per_example: Vec<(ParamStore, ParamStore)> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| example_moments(model, params, s, samples, seed, i as u64))
        .collect::<Result<_>>()?;
    let n = sentences.len() as f64;
    let mut mean = params.zeros_like();
    let mut var = params.zeros_like();
    let dof = (samples.max(2) - 1) as f64;
    for (m2, m4) in &per_example {
        mean.add_assign(m2);
        let mut v = m4.clone();
        for ((_, vt), (_, mt)) in v.iter_mut().zip(m2.iter()) {
            for (a, b) in vt.data_mut().iter_mut().zip(mt.data()) {
                *a = (*a - b * b).max(0.0) / dof;
            }
        }
        var.add_assign(&v);
    }
    mean.scale(1.0 / n);
    for (_, t) in var.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = v.sqrt() / n);
    }
    Ok((mean, var))
}

/// Fisher diagonal over the training split of `corpus`.
pub fn fisher_diagonal(ckpt: &Checkpoint, corpus: &LabeledCorpus, samples_per_example: usize, seed: u64) -> Result<FisherDiagonal> {
    let tagger = ckpt.tagger()?;
    let (values, se) = fisher_from_sentences(&tagger, &ckpt.params, corpus.train(), samples_per_example, seed)?;
    Ok(FisherDiagonal {
        language: corpus.language().to_string(),
        examples: corpus.train().len(),
        samples_per_example,
        seed,
        pooling: None,
        values,
        std_error: Some(se),
    })
}

/// Unweighted mean of several aligned diagonals.
pub fn pool_mean(diagonals: &[&FisherDiagonal]) -> Result<FisherDiagonal> {
    let first = diagonals.first().ok_or_else(|| Error::InvalidConfig("nothing to pool".into()))?;
    let mut values = first.values.zeros_like();
    for d in diagonals {
        if !d.values.is_aligned(&values) {
            return Err(Error::LayoutMismatch(format!("{} differs from {}", d.language, first.language)));
        }
        values.add_assign(&d.values);
    }
    values.scale(1.0 / diagonals.len() as f64);
    let names: Vec<&str> = diagonals.iter().map(|d| d.language.as_str()).collect();
    Ok(FisherDiagonal {
        language: names.join("+"),
        examples: diagonals.iter().map(|d| d.examples).sum(),
        samples_per_example: first.samples_per_example,
        seed: first.seed,
        pooling: Some(format!("mean({})", names.join(","))),
        values,
        std_error: None,
    })
}
