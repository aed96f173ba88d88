//! Tokenization, vocabulary, summary-guided segment selection and pair
//! sequence assembly.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// One labelled record: a document, its user-written summary (or title) and a
/// sentiment rating in `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "text")]
    pub document: String,
    pub summary: String,
    pub label: usize,
}

impl Sample {
    pub fn new(document: impl Into<String>, summary: impl Into<String>, label: usize) -> Self {
        Sample {
            document: document.into(),
            summary: summary.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // supplementary ideographs
}

/// Lowercased word tokens for alphabetic scripts, one token per CJK character
/// and one per punctuation mark.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |word: &mut Option<(usize, String)>, end: usize, out: &mut Vec<Token>| {
        if let Some((start, text)) = word.take() {
            out.push(Token { text, start, end });
        }
    };
    for (i, c) in text.char_indices() {
        let end = i + c.len_utf8();
        if c.is_alphanumeric() && !is_cjk(c) {
            word.get_or_insert_with(|| (i, String::new())).1.extend(c.to_lowercase());
            continue;
        }
        flush(&mut word, i, &mut out);
        if !c.is_whitespace() {
            out.push(Token {
                text: c.to_lowercase().collect(),
                start: i,
                end,
            });
        }
    }
    flush(&mut word, text.len(), &mut out);
    out
}

/// Token ↔ id map with `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]` fixed at ids 0–3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Counts tokens over documents and summaries; tokens seen at least
    /// `min_count` times get ids ordered by descending frequency, then
    /// lexicographically.
    pub fn build(corpus: &[Sample], min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in corpus {
            for t in tokenize(&s.document).into_iter().chain(tokenize(&s.summary)) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocabulary::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(kept.into_iter().map(|(t, _)| t))
                .collect(),
        )
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Smoothed inverse document frequencies, `ln((1 + n) / (1 + df)) + 1`,
/// fitted on training documents. Unseen tokens get the `df = 0` weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    num_docs: usize,
    df: BTreeMap<String, usize>,
}

impl IdfTable {
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut num_docs = 0;
        for doc in documents {
            num_docs += 1;
            let mut toks = tokenize(doc);
            toks.sort();
            toks.dedup();
            for t in toks {
                *df.entry(t).or_default() += 1;
            }
        }
        IdfTable { num_docs, df }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.num_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn vector<S: AsRef<str>>(&self, tokens: &[S]) -> BTreeMap<String, f64> {
        let mut v: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens {
            *v.entry(t.as_ref().to_string()).or_default() += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= self.idf(t);
        }
        v
    }

    /// TF-IDF cosine similarity of two token bags; zero if either is empty.
    pub fn cosine<S: AsRef<str>, U: AsRef<str>>(&self, a: &[S], b: &[U]) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();
        let (na, nb) = (norm(&va), norm(&vb));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = va
            .iter()
            .filter_map(|(t, w)| vb.get(t).map(|u| w * u))
            .sum();
        (dot / (na * nb)).max(0.0)
    }
}

/// Contiguous piece of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tokens: Vec<String>,
    /// Byte span in the document.
    pub span: Range<usize>,
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';' | '\n' | '。' | '！' | '？' | '；')
}

/// Splits on sentence punctuation and newlines, then greedily merges
/// consecutive sentences while the merged segment stays within `max_tokens`.
/// A sentence longer than `max_tokens` is cut into `max_tokens`-sized pieces.
pub fn split_segments(document: &str, max_tokens: usize) -> Vec<Segment> {
    let max_tokens = max_tokens.max(1);
    let tokens = tokenize_with_offsets(document);

    let mut sentences: Vec<Vec<Token>> = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut ti = 0;
    for (i, c) in document.char_indices() {
        while ti < tokens.len() && tokens[ti].start <= i {
            current.push(tokens[ti].clone());
            ti += 1;
        }
        if is_sentence_end(c) && !current.is_empty() {
            sentences.push(std::mem::take(&mut current));
        }
    }
    current.extend(tokens[ti..].iter().cloned());
    if !current.is_empty() {
        sentences.push(current);
    }

    let mut pieces: Vec<Vec<Token>> = Vec::new();
    for s in sentences {
        if s.len() > max_tokens {
            pieces.extend(s.chunks(max_tokens).map(<[Token]>::to_vec));
        } else {
            pieces.push(s);
        }
    }

    let mut segments: Vec<Vec<Token>> = Vec::new();
    for p in pieces {
        match segments.last_mut() {
            Some(last) if last.len() + p.len() <= max_tokens => last.extend(p),
            _ => segments.push(p),
        }
    }
    segments
        .into_iter()
        .map(|toks| Segment {
            span: toks[0].start..toks[toks.len() - 1].end,
            tokens: toks.into_iter().map(|t| t.text).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCandidate {
    /// 1-based position among the selected candidates.
    pub index: usize,
    pub tokens: Vec<String>,
    pub span: Range<usize>,
    /// TF-IDF cosine similarity to the summary.
    pub score: f64,
    /// Position of the source segment in the document.
    pub segment: usize,
}

/// Picks the `t` segments most similar to the summary, returned in document
/// order. Ties prefer the earlier segment. Documents with fewer than `t`
/// segments are padded by repeating the last segment.
pub fn extract_candidates(
    sample: &Sample,
    idf: &IdfTable,
    t: usize,
    max_candidate_tokens: usize,
) -> Result<Vec<SegmentCandidate>> {
    if t == 0 {
        return Err(Error::config("number of candidates must be at least 1"));
    }
    let segments = split_segments(&sample.document, max_candidate_tokens);
    if segments.is_empty() {
        return Err(Error::ingest("document has no tokens"));
    }
    let summary = tokenize(&sample.summary);
    let scores: Vec<f64> = segments.iter().map(|s| idf.cosine(&s.tokens, &summary)).collect();

    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(t);
    order.sort_unstable();
    while order.len() < t {
        order.push(*order.last().unwrap());
    }
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(j, s)| SegmentCandidate {
            index: j + 1,
            tokens: segments[s].tokens.clone(),
            span: segments[s].span.clone(),
            score: scores[s],
            segment: s,
        })
        .collect())
}

/// `[CLS] summary [SEP] candidate [SEP] [PAD]…` of exactly `N` ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub summary_span: Range<usize>,
    pub candidate_span: Range<usize>,
}

impl PairSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Assembles a pair sequence of length `n`. The candidate is cut from its
/// tail to fit; the summary is only cut when it would leave no room for a
/// candidate token.
pub fn make_pair<S: AsRef<str>, U: AsRef<str>>(
    summary: &[S],
    candidate: &[U],
    n: usize,
    vocab: &Vocabulary,
) -> PairSequence {
    assert!(n >= 8, "pair length must be at least 8, got {n}");
    let room = n - 3;
    let reserve = usize::from(!candidate.is_empty());
    let ls = summary.len().min(room - reserve);
    let lc = candidate.len().min(room - ls);

    let mut ids = Vec::with_capacity(n);
    ids.push(CLS_ID);
    ids.extend(vocab.encode(&summary[..ls]));
    ids.push(SEP_ID);
    ids.extend(vocab.encode(&candidate[..lc]));
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(n, PAD_ID);
    PairSequence {
        mask: (0..n).map(|i| i < real).collect(),
        summary_span: 1..1 + ls,
        candidate_span: 2 + ls..2 + ls + lc,
        ids,
    }
}

/// `[CLS] text [SEP] [PAD]…` of exactly `n` ids, cutting the text's tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub text_span: Range<usize>,
}

pub fn make_single<S: AsRef<str>>(text: &[S], n: usize, vocab: &Vocabulary) -> TextSequence {
    assert!(n >= 3, "sequence length must be at least 3, got {n}");
    let lt = text.len().min(n - 2);
    let mut ids = Vec::with_capacity(n);
    ids.push(CLS_ID);
    ids.extend(vocab.encode(&text[..lt]));
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(n, PAD_ID);
    TextSequence {
        mask: (0..n).map(|i| i < real).collect(),
        text_span: 1..1 + lt,
        ids,
    }
}
