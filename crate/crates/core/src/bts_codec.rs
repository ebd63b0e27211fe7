//! Byte-window target representation: entity spans inside a fixed-size byte
//! window written as `S:start L:length TYPE … STOP` symbol sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, Sentence};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 60;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteWindow {
    pub bytes: Vec<u8>,
    pub global_offset: usize,
    pub window_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetSymbol {
    Start(usize),
    Length(usize),
    Type(String),
    Stop,
}

impl fmt::Display for TargetSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSymbol::Start(k) => write!(f, "S:{k}"),
            TargetSymbol::Length(k) => write!(f, "L:{k}"),
            TargetSymbol::Type(t) => f.write_str(t),
            TargetSymbol::Stop => f.write_str("STOP"),
        }
    }
}

impl FromStr for TargetSymbol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Format(format!("bad symbol {s:?}")));
        Ok(match s {
            "STOP" => TargetSymbol::Stop,
            _ if s.starts_with("S:") => TargetSymbol::Start(num(&s[2..])?),
            _ if s.starts_with("L:") => TargetSymbol::Length(num(&s[2..])?),
            _ if !s.is_empty() && !s.contains(char::is_whitespace) => TargetSymbol::Type(s.to_string()),
            _ => return Err(Error::Format(format!("bad symbol {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: usize,
    pub length: usize,
    pub etype: String,
}

impl ByteSpan {
    pub fn new(start: usize, length: usize, etype: impl Into<String>) -> Self {
        ByteSpan { start, length, etype: etype.into() }
    }

    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Windows at offsets `0, stride, 2·stride, …` below the stream length.
pub fn window_stream(bytes: &[u8], window_size: usize, stride: usize) -> Result<Vec<ByteWindow>> {
    if stride == 0 || window_size == 0 {
        return Err(Error::InvalidConfig("window size and stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let end = (offset + window_size).min(bytes.len());
        out.push(ByteWindow { bytes: bytes[offset..end].to_vec(), global_offset: offset, window_size });
        offset += stride;
    }
    Ok(out)
}

/// Targets for the spans lying entirely inside `window`.
pub fn encode_spans(window: &ByteWindow, spans: &[ByteSpan]) -> Result<Vec<TargetSymbol>> {
    let mut sorted: Vec<&ByteSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end() {
            return Err(Error::OverlappingSpans(pair[1].start));
        }
    }
    let lo = window.global_offset;
    let hi = lo + window.bytes.len();
    let mut out = Vec::new();
    for s in sorted.into_iter().filter(|s| s.length >= 1 && s.start >= lo && s.end() <= hi) {
        out.push(TargetSymbol::Start(s.start - lo));
        out.push(TargetSymbol::Length(s.length));
        out.push(TargetSymbol::Type(s.etype.clone()));
    }
    out.push(TargetSymbol::Stop);
    Ok(out)
}

/// Greedy parse of `(S, L, TYPE)` triples up to the first STOP. Fragments in
/// the wrong order or reaching past the window are dropped.
pub fn decode_targets(symbols: &[TargetSymbol], window: &ByteWindow) -> Vec<ByteSpan> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut length: Option<usize> = None;
    for sym in symbols {
        match sym {
            TargetSymbol::Stop => break,
            TargetSymbol::Start(k) => {
                start = Some(*k);
                length = None;
            }
            TargetSymbol::Length(n) if start.is_some() && length.is_none() => length = Some(*n),
            TargetSymbol::Type(t) => {
                if let (Some(s), Some(n)) = (start, length) {
                    if n >= 1 && s + n <= window.bytes.len() {
                        out.push(ByteSpan::new(window.global_offset + s, n, t.clone()));
                    }
                }
                start = None;
                length = None;
            }
            TargetSymbol::Length(_) => {
                start = None;
                length = None;
            }
        }
    }
    out
}

/// Union of per-window predictions. Exact duplicates collapse; of two
/// overlapping spans the earlier-starting one, then the longer one, wins.
pub fn merge_window_spans(per_window: &[Vec<ByteSpan>]) -> Vec<ByteSpan> {
    let mut all: Vec<&ByteSpan> = per_window.iter().flatten().collect();
    all.sort_by(|a, b| a.start.cmp(&b.start).then(b.length.cmp(&a.length)).then(a.etype.cmp(&b.etype)));
    all.dedup();
    let mut out: Vec<ByteSpan> = Vec::new();
    for s in all {
        if out.last().map_or(true, |last| s.start >= last.end()) {
            out.push(s.clone());
        }
    }
    out
}

/// `@offset S:5 L:5 PER STOP`.
pub fn format_line(window: &ByteWindow, symbols: &[TargetSymbol]) -> String {
    let mut line = format!("@{}", window.global_offset);
    for s in symbols {
        line.push(' ');
        line.push_str(&s.to_string());
    }
    line
}

pub fn parse_line(line: &str) -> Result<(usize, Vec<TargetSymbol>)> {
    let mut parts = line.split_whitespace();
    let offset = parts
        .next()
        .and_then(|p| p.strip_prefix('@'))
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| Error::Format(format!("line does not start with @offset: {line:?}")))?;
    Ok((offset, parts.map(str::parse).collect::<Result<_>>()?))
}

/// The sentence's words joined by single spaces, and its token spans as
/// byte spans of that text.
pub fn sentence_byte_spans(sentence: &Sentence, spans: &[EntitySpan]) -> (Vec<u8>, Vec<ByteSpan>) {
    let mut starts = Vec::with_capacity(sentence.len());
    let mut text = Vec::new();
    for (i, w) in sentence.words().enumerate() {
        if i > 0 {
            text.push(b' ');
        }
        starts.push(text.len());
        text.extend_from_slice(w.as_bytes());
    }
    let byte_spans = spans
        .iter()
        .map(|s| {
            let start = starts[s.start];
            let end = starts[s.end - 1] + sentence.tokens[s.end - 1].text.len();
            ByteSpan::new(start, end - start, s.etype.clone())
        })
        .collect();
    (text, byte_spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use TargetSymbol::*;

    fn window(len: usize, offset: usize) -> ByteWindow {
        ByteWindow { bytes: vec![b'x'; len], global_offset: offset, window_size: DEFAULT_WINDOW }
    }

    #[test]
    fn windowing() {
        let offs = |n: usize, stride| {
            window_stream(&vec![0u8; n], 60, stride).unwrap().iter().map(|w| (w.global_offset, w.bytes.len())).collect::<Vec<_>>()
        };
        assert_eq!(offs(120, 60), vec![(0, 60), (60, 60)]);
        assert_eq!(offs(61, 60), vec![(0, 60), (60, 1)]);
        assert_eq!(offs(120, 30), vec![(0, 60), (30, 60), (60, 60), (90, 30)]);
        assert!(offs(0, 60).is_empty());
        assert!(window_stream(&[1], 60, 0).is_err());
    }

    #[test]
    fn footnote_example() {
        let syms = encode_spans(&window(60, 0), &[ByteSpan::new(5, 5, "PER")]).unwrap();
        assert_eq!(syms, vec![Start(5), Length(5), Type("PER".into()), Stop]);
        assert_eq!(encode_spans(&window(60, 0), &[]).unwrap(), vec![Stop]);
        assert_eq!(decode_targets(&syms, &window(60, 100)), vec![ByteSpan::new(105, 5, "PER")]);
    }

    #[test]
    fn straddling_span_is_omitted() {
        let syms = encode_spans(&window(60, 0), &[ByteSpan::new(58, 5, "PER")]).unwrap();
        assert_eq!(syms, vec![Stop]);
    }

    #[test]
    fn overlapping_input_rejected() {
        let spans = [ByteSpan::new(0, 5, "PER"), ByteSpan::new(3, 2, "ORG")];
        assert!(matches!(encode_spans(&window(60, 0), &spans), Err(Error::OverlappingSpans(_))));
    }

    #[test]
    fn malformed_targets_are_skipped() {
        let w = window(10, 0);
        assert!(decode_targets(&[Stop], &w).is_empty());
        assert!(decode_targets(&[Length(3), Type("PER".into()), Stop], &w).is_empty());
        assert!(decode_targets(&[Start(8), Length(3), Type("PER".into())], &w).is_empty());
        let partial = [Start(1), Type("X".into()), Start(2), Length(2), Type("PER".into()), Stop, Start(0), Length(1), Type("O".into())];
        assert_eq!(decode_targets(&partial, &w), vec![ByteSpan::new(2, 2, "PER")]);
    }

    #[test]
    fn merging() {
        let a = ByteSpan::new(0, 5, "PER");
        assert_eq!(merge_window_spans(&[vec![a.clone()], vec![a.clone()]]), vec![a.clone()]);
        let b = ByteSpan::new(7, 2, "LOC");
        assert_eq!(merge_window_spans(&[vec![b.clone()], vec![a.clone()]]), vec![a.clone(), b]);
        assert_eq!(merge_window_spans(&[vec![a.clone()], vec![ByteSpan::new(2, 5, "ORG")]]), vec![a.clone()]);
        assert_eq!(merge_window_spans(&[vec![ByteSpan::new(0, 2, "ORG")], vec![a.clone()]]), vec![a]);
    }

    #[test]
    fn text_format() {
        let w = window(60, 120);
        let syms = vec![Start(5), Length(5), Type("PER".into()), Stop];
        let line = format_line(&w, &syms);
        assert_eq!(line, "@120 S:5 L:5 PER STOP");
        assert_eq!(parse_line(&line).unwrap(), (120, syms));
        assert!(parse_line("S:5 STOP").is_err());
    }
}
