//! Multilingual BIO-labeled corpora: CoNLL ingestion, span extraction and
//! polyglot concatenation.
//!
//! Tokens carry label indices into a [`TagSet`]; index 0 is always `O`,
//! followed by `B-t`, `I-t` pairs in entity-type order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase ASCII language code such as `eng` or `swa`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let ok = (2..=8).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase());
        if ok {
            Ok(LanguageId(code))
        } else {
            Err(Error::InvalidLanguage(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        LanguageId::new(value)
    }
}

impl From<LanguageId> for String {
    fn from(value: LanguageId) -> Self {
        value.0
    }
}

impl FromStr for LanguageId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageId::new(s)
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A decoded BIO label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bio {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// Entity types and the BIO label inventory derived from them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TagSetRepr", into = "TagSetRepr")]
pub struct TagSet {
    entity_types: Vec<String>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TagSetRepr {
    entity_types: Vec<String>,
}

impl TryFrom<TagSetRepr> for TagSet {
    type Error = Error;
    fn try_from(value: TagSetRepr) -> Result<Self> {
        TagSet::new(value.entity_types)
    }
}

impl From<TagSet> for TagSetRepr {
    fn from(value: TagSet) -> Self {
        TagSetRepr { entity_types: value.entity_types }
    }
}

impl TagSet {
    pub fn new<S: Into<String>>(entity_types: impl IntoIterator<Item = S>) -> Result<Self> {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        for (i, t) in entity_types.iter().enumerate() {
            if t.is_empty() || t.contains('-') || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidTagSet(format!("bad entity type name {t:?}")));
            }
            if t == "O" {
                return Err(Error::InvalidTagSet("entity type may not be named O".into()));
            }
            if entity_types[..i].contains(t) {
                return Err(Error::InvalidTagSet(format!("duplicate entity type {t:?}")));
            }
        }
        let mut labels = vec!["O".to_string()];
        for t in &entity_types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        Ok(TagSet { entity_types, labels })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label_name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn type_index(&self, etype: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == etype)
    }

    pub fn begin(&self, type_index: usize) -> usize {
        1 + 2 * type_index
    }

    pub fn inside(&self, type_index: usize) -> usize {
        2 + 2 * type_index
    }

    pub fn decode(&self, label: usize) -> Bio {
        match label {
            0 => Bio::Outside,
            l if l % 2 == 1 => Bio::Begin((l - 1) / 2),
            l => Bio::Inside((l - 2) / 2),
        }
    }

    /// Entity type of a label with its BIO prefix stripped, `None` for `O`.
    pub fn class_of(&self, label: usize) -> Option<usize> {
        match self.decode(label) {
            Bio::Outside => None,
            Bio::Begin(t) | Bio::Inside(t) => Some(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub language: LanguageId,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.label).collect()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Surface string of tokens `start..end` joined by single spaces.
    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Token-level entity span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        EntitySpan { start, end, etype: etype.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidCorpus(format!("unknown split {other:?}"))),
        }
    }
}

/// One language's annotated data, split into train/dev/test.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    language: LanguageId,
    tagset: TagSet,
    splits: BTreeMap<Split, Vec<Sentence>>,
}

impl LabeledCorpus {
    pub fn new(
        language: LanguageId,
        tagset: TagSet,
        splits: BTreeMap<Split, Vec<Sentence>>,
    ) -> Result<Self> {
        for (split, sentences) in &splits {
            for s in sentences {
                if s.language != language {
                    return Err(Error::InvalidCorpus(format!(
                        "{split} sentence tagged {} in corpus {language}",
                        s.language
                    )));
                }
                if s.tokens.is_empty() {
                    return Err(Error::EmptySentence);
                }
                if let Some(t) = s.tokens.iter().find(|t| t.label >= tagset.num_labels()) {
                    return Err(Error::InvalidCorpus(format!("label index {} out of range", t.label)));
                }
            }
        }
        Ok(LabeledCorpus { language, tagset, splits })
    }

    /// Reads `train.conll`, `dev.conll` and `test.conll` from `dir`; missing
    /// files are treated as absent splits.
    pub fn from_dir(dir: &Path, tagset: &TagSet, language: LanguageId) -> Result<Self> {
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let path = dir.join(format!("{split}.conll"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            splits.insert(split, parse_conll(&text, tagset, &language)?);
        }
        if splits.is_empty() {
            return Err(Error::InvalidCorpus(format!("no .conll files in {}", dir.display())));
        }
        LabeledCorpus::new(language, tagset.clone(), splits)
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn split(&self, split: Split) -> &[Sentence] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn train(&self) -> &[Sentence] {
        self.split(Split::Train)
    }

    pub fn dev(&self) -> &[Sentence] {
        self.split(Split::Dev)
    }

    pub fn splits(&self) -> &BTreeMap<Split, Vec<Sentence>> {
        &self.splits
    }
}

/// Parses whitespace-column CoNLL text. Only the first (token) and last (tag)
/// columns are read.
pub fn parse_conll(text: &str, tagset: &TagSet, lang: &LanguageId) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence { tokens: std::mem::take(&mut current), language: lang.clone() });
            }
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::MalformedLine { line: line_no, content: raw.to_string() });
        }
        let tag = cols[cols.len() - 1];
        let label = tagset
            .label_index(tag)
            .ok_or_else(|| Error::UnknownLabel { line: line_no, label: tag.to_string() })?;
        current.push(Token { text: cols[0].to_string(), label });
    }
    if !current.is_empty() {
        sentences.push(Sentence { tokens: current, language: lang.clone() });
    }
    if sentences.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(sentences)
}

pub fn write_conll(sentences: &[Sentence], tagset: &TagSet) -> String {
    let mut out = String::new();
    for s in sentences {
        for t in &s.tokens {
            out.push_str(&t.text);
            out.push(' ');
            out.push_str(tagset.label_name(t.label));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// BIO decoding with the conlleval repair rule: an `I-t` that does not
/// continue an open span of type `t` starts a new span.
pub fn extract_spans(labels: &[usize], tagset: &TagSet) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &label) in labels.iter().enumerate() {
        match tagset.decode(label) {
            Bio::Outside => {
                if let Some((start, t)) = open.take() {
                    spans.push(EntitySpan::new(start, i, &tagset.entity_types[t]));
                }
            }
            Bio::Begin(t) => {
                if let Some((start, ot)) = open.replace((i, t)) {
                    spans.push(EntitySpan::new(start, i, &tagset.entity_types[ot]));
                }
            }
            Bio::Inside(t) => match open {
                Some((_, ot)) if ot == t => {}
                _ => {
                    if let Some((start, ot)) = open.replace((i, t)) {
                        spans.push(EntitySpan::new(start, i, &tagset.entity_types[ot]));
                    }
                }
            },
        }
    }
    if let Some((start, t)) = open {
        spans.push(EntitySpan::new(start, labels.len(), &tagset.entity_types[t]));
    }
    spans
}

/// Reference to one training sentence inside a [`PolyglotCorpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceRef {
    pub language: usize,
    pub index: usize,
}

/// Several languages trained as one combined corpus.
#[derive(Clone, Debug)]
pub struct PolyglotCorpus {
    corpora: IndexMap<LanguageId, LabeledCorpus>,
    uniform_sampling: bool,
}

pub fn concat_polyglot(corpora: Vec<LabeledCorpus>, uniform_sampling: bool) -> Result<PolyglotCorpus> {
    if corpora.len() < 2 {
        return Err(Error::TooFewLanguages(corpora.len()));
    }
    let tagset = corpora[0].tagset.clone();
    let mut map = IndexMap::new();
    for c in corpora {
        if c.tagset != tagset {
            return Err(Error::TagSetMismatch(format!(
                "{} has types {:?}, expected {:?}",
                c.language,
                c.tagset.entity_types(),
                tagset.entity_types()
            )));
        }
        if map.contains_key(&c.language) {
            return Err(Error::DuplicateLanguage(c.language.to_string()));
        }
        map.insert(c.language.clone(), c);
    }
    Ok(PolyglotCorpus { corpora: map, uniform_sampling })
}

impl PolyglotCorpus {
    pub fn tagset(&self) -> &TagSet {
        &self.corpora[0].tagset
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> {
        self.corpora.keys()
    }

    pub fn corpora(&self) -> impl Iterator<Item = &LabeledCorpus> {
        self.corpora.values()
    }

    pub fn corpus(&self, lang: &LanguageId) -> Option<&LabeledCorpus> {
        self.corpora.get(lang)
    }

    pub fn uniform_sampling(&self) -> bool {
        self.uniform_sampling
    }

    pub fn sentence(&self, r: SentenceRef) -> &Sentence {
        &self.corpora[r.language].train()[r.index]
    }

    /// One epoch of merged training sentences, in corpus order (callers
    /// shuffle). With uniform sampling every language contributes as many
    /// sentences as the largest one: its own sentences once, topped up by
    /// draws with replacement.
    pub fn epoch<R: Rng>(&self, rng: &mut R) -> Vec<SentenceRef> {
        let max = self.corpora.values().map(|c| c.train().len()).max().unwrap_or(0);
        let mut out = Vec::new();
        for (li, c) in self.corpora.values().enumerate() {
            let n = c.train().len();
            out.extend((0..n).map(|index| SentenceRef { language: li, index }));
            if self.uniform_sampling && n > 0 {
                for _ in n..max {
                    out.push(SentenceRef { language: li, index: rng.gen_range(0..n) });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ts() -> TagSet {
        TagSet::new(["PER", "ORG", "LOC"]).unwrap()
    }

    fn eng() -> LanguageId {
        LanguageId::new("eng").unwrap()
    }

    #[test]
    fn language_ids() {
        assert!(LanguageId::new("eng").is_ok());
        assert!(LanguageId::new("e").is_err());
        assert!(LanguageId::new("Eng").is_err());
        assert!(LanguageId::new("abcdefghi").is_err());
    }

    #[test]
    fn tagset_layout() {
        let t = ts();
        assert_eq!(t.labels(), ["O", "B-PER", "I-PER", "B-ORG", "I-ORG", "B-LOC", "I-LOC"]);
        assert_eq!(t.decode(3), Bio::Begin(1));
        assert_eq!(t.decode(6), Bio::Inside(2));
        assert!(TagSet::new(["A-B"]).is_err());
        assert!(TagSet::new(["PER", "PER"]).is_err());
    }

    #[test]
    fn parse_single_token() {
        let s = parse_conll("John B-PER\n\n", &ts(), &eng()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, vec![Token { text: "John".into(), label: 1 }]);
    }

    #[test]
    fn parse_skips_docstart() {
        let s = parse_conll("-DOCSTART- O\n\nU.N. B-ORG\nofficial O\n", &ts(), &eng()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[0].tokens[0].label, 3);
    }

    #[test]
    fn parse_ignores_middle_columns() {
        let s = parse_conll("EU NNP B-NP B-ORG\nrejects VBZ B-VP O\n", &ts(), &eng()).unwrap();
        assert_eq!(s[0].labels(), vec![3, 0]);
    }

    #[test]
    fn parse_errors() {
        match parse_conll("a O\nb B-XYZ\n", &ts(), &eng()) {
            Err(Error::UnknownLabel { line, label }) => {
                assert_eq!(line, 2);
                assert_eq!(label, "B-XYZ");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_conll("lonely\n", &ts(), &eng()), Err(Error::MalformedLine { line: 1, .. })));
        assert!(matches!(parse_conll("\n\n-DOCSTART- O\n", &ts(), &eng()), Err(Error::EmptyDocument)));
    }

    #[test]
    fn write_format() {
        let s = vec![Sentence { tokens: vec![Token { text: "John".into(), label: 1 }], language: eng() }];
        assert_eq!(write_conll(&s, &ts()), "John B-PER\n\n");
        let two = vec![s[0].clone(), s[0].clone()];
        assert_eq!(write_conll(&two, &ts()), "John B-PER\n\nJohn B-PER\n\n");
    }

    #[test]
    fn spans_basic() {
        let t = ts();
        assert_eq!(extract_spans(&[1, 2, 0], &t), vec![EntitySpan::new(0, 2, "PER")]);
        assert_eq!(extract_spans(&[0, 4, 4], &t), vec![EntitySpan::new(1, 3, "ORG")]);
        assert_eq!(
            extract_spans(&[1, 1], &t),
            vec![EntitySpan::new(0, 1, "PER"), EntitySpan::new(1, 2, "PER")]
        );
        // I of a different type closes the open span and begins its own
        assert_eq!(
            extract_spans(&[1, 4], &t),
            vec![EntitySpan::new(0, 1, "PER"), EntitySpan::new(1, 2, "ORG")]
        );
    }

    fn mk_corpus(code: &str, n: usize, tagset: &TagSet) -> LabeledCorpus {
        let lang = LanguageId::new(code).unwrap();
        let train = (0..n)
            .map(|i| Sentence { tokens: vec![Token { text: format!("w{i}"), label: 0 }], language: lang.clone() })
            .collect();
        LabeledCorpus::new(lang, tagset.clone(), BTreeMap::from([(Split::Train, train)])).unwrap()
    }

    #[test]
    fn polyglot_epochs() {
        let t = ts();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = concat_polyglot(vec![mk_corpus("aa", 3, &t), mk_corpus("bb", 5, &t)], false).unwrap();
        assert_eq!(p.epoch(&mut rng).len(), 8);
        let p = concat_polyglot(vec![mk_corpus("aa", 3, &t), mk_corpus("bb", 5, &t)], true).unwrap();
        let e = p.epoch(&mut rng);
        assert_eq!(e.len(), 10);
        assert_eq!(e.iter().filter(|r| r.language == 0).count(), 5);
        assert_eq!(e.iter().filter(|r| r.language == 1).count(), 5);
    }

    #[test]
    fn polyglot_errors() {
        let t = ts();
        let other = TagSet::new(["PER"]).unwrap();
        assert!(matches!(
            concat_polyglot(vec![mk_corpus("aa", 3, &t), mk_corpus("bb", 5, &other)], false),
            Err(Error::TagSetMismatch(_))
        ));
        assert!(matches!(
            concat_polyglot(vec![mk_corpus("aa", 3, &t), mk_corpus("aa", 5, &t)], false),
            Err(Error::DuplicateLanguage(_))
        ));
        assert!(matches!(concat_polyglot(vec![mk_corpus("aa", 3, &t)], false), Err(Error::TooFewLanguages(1))));
    }
}
