//! Token-class error counts and common-entity error rates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans, EntitySpan, Sentence, TagSet};
use crate::error::{Error, Result};
use crate::evaluation::harmonic_mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassErrors {
    pub class: String,
    pub tokens: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<i64>,
}

/// Per token class (O first, then entity types in tag-set order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub classes: Vec<ClassErrors>,
}

impl ErrorReport {
    pub fn total_errors(&self) -> usize {
        self.classes.iter().map(|c| c.errors).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,tokens,errors,delta\n");
        for c in &self.classes {
            let delta = c.delta.map(|d| d.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{delta}\n", c.class, c.tokens, c.errors));
        }
        out
    }
}

fn class_counts(gold: &[Sentence], predicted: &[Vec<usize>], tagset: &TagSet) -> Result<(Vec<usize>, Vec<usize>)> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch { expected: gold.len(), got: predicted.len() });
    }
    let k = tagset.entity_types().len() + 1;
    let (mut tokens, mut errors) = (vec![0; k], vec![0; k]);
    let class = |l: usize| tagset.class_of(l).map_or(0, |t| t + 1);
    for (s, p) in gold.iter().zip(predicted) {
        if s.len() != p.len() {
            return Err(Error::LengthMismatch { expected: s.len(), got: p.len() });
        }
        for (tok, &pl) in s.tokens.iter().zip(p) {
            let g = class(tok.label);
            tokens[g] += 1;
            if class(pl) != g {
                errors[g] += 1;
            }
        }
    }
    Ok((tokens, errors))
}

/// Tokens whose predicted class (BIO prefix stripped) differs from the gold
/// class, grouped by gold class. With a reference, `delta` is this model's
/// count minus the reference's.
pub fn error_counts(gold: &[Sentence], predicted: &[Vec<usize>], reference: Option<&[Vec<usize>]>, tagset: &TagSet) -> Result<ErrorReport> {
    let (tokens, errors) = class_counts(gold, predicted, tagset)?;
    let reference = reference.map(|r| class_counts(gold, r, tagset)).transpose()?;
    let names = std::iter::once("O").chain(tagset.entity_types().iter().map(String::as_str));
    let classes = names
        .enumerate()
        .map(|(c, name)| ClassErrors {
            class: name.to_string(),
            tokens: tokens[c],
            errors: errors[c],
            delta: reference.as_ref().map(|(_, re)| errors[c] as i64 - re[c] as i64),
        })
        .collect();
    Ok(ErrorReport { classes })
}

/// An entity mention by surface form (tokens joined by spaces) and type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub etype: String,
}

impl Mention {
    pub fn new(surface: impl Into<String>, etype: impl Into<String>) -> Self {
        Mention { surface: surface.into(), etype: etype.into() }
    }

    fn of(s: &Sentence, span: &EntitySpan) -> Self {
        Mention::new(s.surface(span.start, span.end), span.etype.clone())
    }
}

/// Predicted spans with no gold match (precision errors) and gold spans that
/// were missed (recall errors).
pub fn span_errors(gold: &[Sentence], predicted: &[Vec<EntitySpan>], tagset: &TagSet) -> Result<(Vec<Mention>, Vec<Mention>)> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch { expected: gold.len(), got: predicted.len() });
    }
    let (mut precision, mut recall) = (Vec::new(), Vec::new());
    for (s, pred) in gold.iter().zip(predicted) {
        let gold_spans = extract_spans(&s.labels(), tagset);
        precision.extend(pred.iter().filter(|p| !gold_spans.contains(p)).map(|p| Mention::of(s, p)));
        recall.extend(gold_spans.iter().filter(|g| !pred.contains(g)).map(|g| Mention::of(s, g)));
    }
    Ok((precision, recall))
}

/// Every gold entity mention in `sentences`.
pub fn entity_mentions(sentences: &[Sentence], tagset: &TagSet) -> Vec<Mention> {
    sentences
        .iter()
        .flat_map(|s| extract_spans(&s.labels(), tagset).into_iter().map(move |sp| Mention::of(s, &sp)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Exact,
    NGram(usize),
}

impl Granularity {
    /// Exact match, then character n-grams for n = 4..=8.
    pub fn all() -> Vec<Granularity> {
        std::iter::once(Granularity::Exact).chain((4..=8).map(Granularity::NGram)).collect()
    }

    pub fn label(&self) -> String {
        match self {
            Granularity::Exact => "exact".into(),
            Granularity::NGram(n) => format!("{n}-gram"),
        }
    }
}

pub fn char_ngrams(s: &str, n: usize) -> HashSet<String> {
    let chars: Vec<char> = s.chars().collect();
    if n == 0 || chars.len() < n {
        return HashSet::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GranularityRate {
    pub granularity: String,
    pub precision_rate: f64,
    pub recall_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonEntityReport {
    pub rates: Vec<GranularityRate>,
    pub precision_errors: usize,
    pub recall_errors: usize,
    pub avg_precision_rate: f64,
    pub avg_recall_rate: f64,
    pub harmonic_mean: f64,
}

impl CommonEntityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("granularity,precision_rate,recall_rate\n");
        for r in &self.rates {
            out.push_str(&format!("{},{},{}\n", r.granularity, r.precision_rate, r.recall_rate));
        }
        out.push_str(&format!("average,{},{}\n", self.avg_precision_rate, self.avg_recall_rate));
        out
    }
}

/// Does `m` share a surface criterion and its type with any of `others`?
fn is_common(m: &Mention, others: &[Mention], g: Granularity) -> bool {
    match g {
        Granularity::Exact => others.iter().any(|o| o.etype == m.etype && o.surface == m.surface),
        Granularity::NGram(n) => {
            let grams = char_ngrams(&m.surface, n);
            !grams.is_empty()
                && others.iter().any(|o| o.etype == m.etype && char_ngrams(&o.surface, n).iter().any(|x| grams.contains(x)))
        }
    }
}

/// Share of precision and recall errors whose entity also occurs, at each
/// surface granularity, among `other_train` mentions of the same type.
pub fn common_entity_rate(precision_errors: &[Mention], recall_errors: &[Mention], other_train: &[Mention]) -> CommonEntityReport {
    let mut others: Vec<Mention> = other_train.to_vec();
    others.sort_by(|a, b| (&a.etype, &a.surface).cmp(&(&b.etype, &b.surface)));
    others.dedup();
    let rate = |errs: &[Mention], g| {
        if errs.is_empty() {
            0.0
        } else {
            errs.iter().filter(|m| is_common(m, &others, g)).count() as f64 / errs.len() as f64
        }
    };
    let rates: Vec<GranularityRate> = Granularity::all()
        .into_iter()
        .map(|g| GranularityRate { granularity: g.label(), precision_rate: rate(precision_errors, g), recall_rate: rate(recall_errors, g) })
        .collect();
    let n = rates.len() as f64;
    let avg_p = rates.iter().map(|r| r.precision_rate).sum::<f64>() / n;
    let avg_r = rates.iter().map(|r| r.recall_rate).sum::<f64>() / n;
    CommonEntityReport {
        precision_errors: precision_errors.len(),
        recall_errors: recall_errors.len(),
        avg_precision_rate: avg_p,
        avg_recall_rate: avg_r,
        harmonic_mean: harmonic_mean(avg_p, avg_r),
        rates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageId, Token};

    fn tagset() -> TagSet {
        TagSet::new(["PER", "LOC"]).unwrap()
    }

    fn sentence(labels: &[usize]) -> Sentence {
        Sentence {
            tokens: labels.iter().map(|&l| Token { text: "w".into(), label: l }).collect(),
            language: LanguageId::new("eng").unwrap(),
        }
    }

    #[test]
    fn class_errors() {
        let gold = vec![sentence(&[0, 1, 2, 3])];
        let perfect = vec![vec![0, 1, 2, 3]];
        let r = error_counts(&gold, &perfect, None, &tagset()).unwrap();
        assert_eq!(r.total_errors(), 0);
        let wrong = vec![vec![1, 1, 1, 3]];
        let r = error_counts(&gold, &wrong, Some(&perfect), &tagset()).unwrap();
        assert_eq!(r.classes[0], ClassErrors { class: "O".into(), tokens: 1, errors: 1, delta: Some(1) });
        assert_eq!(r.classes[1].errors, 0);
        let own = error_counts(&gold, &wrong, Some(&wrong), &tagset()).unwrap();
        assert!(own.classes.iter().all(|c| c.delta == Some(0)));
        assert!(matches!(error_counts(&gold, &[vec![0]], None, &tagset()), Err(Error::LengthMismatch { .. })));
        assert_eq!(r.to_csv().lines().nth(1), Some("O,1,1,1"));
    }

    #[test]
    fn common_rates() {
        let none = common_entity_rate(&[], &[], &[Mention::new("Berlin", "LOC")]);
        assert_eq!((none.avg_precision_rate, none.avg_recall_rate, none.harmonic_mean), (0.0, 0.0, 0.0));

        let exact = common_entity_rate(&[], &[Mention::new("Berlin", "LOC")], &[Mention::new("Berlin", "LOC")]);
        assert_eq!(exact.rates[0].recall_rate, 1.0);

        let r = common_entity_rate(&[], &[Mention::new("Berliner", "LOC")], &[Mention::new("Berlin", "LOC")]);
        let by_g: Vec<f64> = r.rates.iter().map(|x| x.recall_rate).collect();
        assert_eq!(by_g, vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.avg_recall_rate, 0.5);

        let wrong_type = common_entity_rate(&[], &[Mention::new("Berlin", "LOC")], &[Mention::new("Berlin", "PER")]);
        assert_eq!(wrong_type.avg_recall_rate, 0.0);
    }

    #[test]
    fn span_error_split() {
        let mut s = sentence(&[1, 0, 3]);
        s.tokens[0].text = "Ann".into();
        s.tokens[2].text = "Oslo".into();
        let pred = vec![vec![EntitySpan::new(0, 1, "PER"), EntitySpan::new(1, 2, "LOC")]];
        let (p, r) = span_errors(&[s], &pred, &tagset()).unwrap();
        assert_eq!(p, vec![Mention::new("w", "LOC")]);
        assert_eq!(r, vec![Mention::new("Oslo", "LOC")]);
    }
}
