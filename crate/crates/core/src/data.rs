//! Corpus ingest, deterministic train/val/test splits and split manifests.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::Sample;

/// Parses line-delimited JSON records with `text`, `summary` and `label`
/// fields. Blank lines are skipped; other fields are ignored. Labels must be
/// in `1..=classes` when `classes` is given, and positive otherwise.
pub fn parse_jsonl(input: &str, classes: Option<usize>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Ingest {
            line: Some(line_no),
            msg,
        };
        let s: Sample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if s.label == 0 || classes.is_some_and(|k| s.label > k) {
            let range = classes.map_or("1..".to_string(), |k| format!("1..={k}"));
            return Err(err(format!("label {} outside {range}", s.label)));
        }
        if s.document.trim().is_empty() {
            return Err(err("empty document".into()));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::ingest("corpus has no records"));
    }
    Ok(out)
}

/// Reads a corpus file, returning its records and the SHA-256 of its bytes.
pub fn read_jsonl(path: impl AsRef<Path>, classes: Option<usize>) -> Result<(Vec<Sample>, String)> {
    let bytes = std::fs::read(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|e| Error::ingest(format!("corpus is not UTF-8: {e}")))?;
    let samples = parse_jsonl(&text, classes)?;
    Ok((samples, sha256_hex(text.as_bytes())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Number of classes implied by the largest label.
pub fn infer_classes(samples: &[Sample]) -> usize {
    samples.iter().map(|s| s.label).max().unwrap_or(0)
}

/// How records are divided into train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SplitSpec {
    /// First `val` records validate, the next `test` records test, the rest train.
    Review { val: usize, test: usize },
    /// As `Review` with `val = test = round(ratio · n)`.
    ReviewRatio { ratio: f64 },
    /// Seeded shuffle, then proportional cuts.
    Random { train: f64, val: f64, test: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Review { val: 1000, test: 1000 }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Review { val, test } => write!(f, "review:{val}:{test}"),
            SplitSpec::ReviewRatio { ratio } => write!(f, "review-ratio:{ratio}"),
            SplitSpec::Random { train, val, test } => write!(f, "random:{train}:{val}:{test}"),
        }
    }
}

impl From<SplitSpec> for String {
    fn from(s: SplitSpec) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for SplitSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("invalid split spec {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        let count = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["review"] => SplitSpec::default(),
            ["review", v, t] => SplitSpec::Review {
                val: count(v)?,
                test: count(t)?,
            },
            ["review-ratio", r] => SplitSpec::ReviewRatio { ratio: num(r)? },
            ["random"] => SplitSpec::Random {
                train: 0.8,
                val: 0.1,
                test: 0.1,
            },
            ["random", a, b, c] => SplitSpec::Random {
                train: num(a)?,
                val: num(b)?,
                test: num(c)?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Review { .. } => Ok(()),
            SplitSpec::ReviewRatio { ratio } if (0.0..0.5).contains(&ratio) => Ok(()),
            SplitSpec::ReviewRatio { ratio } => Err(Error::config(format!("review ratio {ratio} not in [0, 0.5)"))),
            SplitSpec::Random { train, val, test } => {
                let parts = [train, val, test];
                if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("random split fractions must sum to 1, got {parts:?}")));
                }
                Ok(())
            }
        }
    }
}

/// Record indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, spec: SplitSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let split = match spec {
            SplitSpec::Review { val, test } => Self::review(n, val, test),
            SplitSpec::ReviewRatio { ratio } => {
                let k = (ratio * n as f64).round() as usize;
                Self::review(n, k, k)
            }
            SplitSpec::Random { train, val, .. } => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let a = ((train * n as f64).round() as usize).min(n);
                let b = ((val * n as f64).round() as usize).min(n - a);
                Split {
                    test: idx[a + b..].to_vec(),
                    val: idx[a..a + b].to_vec(),
                    train: idx[..a].to_vec(),
                }
            }
        };
        for (name, part) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
            if part.is_empty() {
                return Err(Error::config(format!("split {spec} leaves the {name} set empty for {n} records")));
            }
        }
        Ok(split)
    }

    fn review(n: usize, val: usize, test: usize) -> Self {
        let v = val.min(n);
        let t = test.min(n - v);
        Split {
            val: (0..v).collect(),
            test: (v..v + t).collect(),
            train: (v + t..n).collect(),
        }
    }

    /// SHA-256 over the serialized index lists.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("index lists serialize"))
    }
}

/// Enough to rebuild a split byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub corpus_sha256: String,
    pub records: usize,
    pub spec: String,
    pub seed: u64,
    pub split_sha256: String,
    pub split: Split,
}

impl SplitManifest {
    pub fn new(corpus_sha256: impl Into<String>, records: usize, spec: SplitSpec, seed: u64, split: Split) -> Self {
        SplitManifest {
            corpus_sha256: corpus_sha256.into(),
            records,
            spec: spec.to_string(),
            seed,
            split_sha256: split.hash(),
            split,
        }
    }

    /// Recomputes the split from the recorded spec and seed and checks it.
    pub fn verify(&self) -> Result<()> {
        let spec: SplitSpec = self.spec.parse()?;
        let again = Split::new(self.records, spec, self.seed)?;
        if again != self.split || again.hash() != self.split_sha256 {
            return Err(Error::config("manifest does not reproduce its split"));
        }
        Ok(())
    }
}

/// Corpus divided into owned splits.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub manifest: SplitManifest,
}

pub fn split_corpus(samples: &[Sample], corpus_sha256: &str, spec: SplitSpec, seed: u64) -> Result<Corpus> {
    let split = Split::new(samples.len(), spec, seed)?;
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(Corpus {
        train: take(&split.train),
        val: take(&split.val),
        test: take(&split.test),
        manifest: SplitManifest::new(corpus_sha256, samples.len(), spec, seed, split),
    })
}
