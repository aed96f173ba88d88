//! Subject-keyed synthetic review corpora.
//!
//! Each document is a handful of one-clause sentences, each pairing a
//! product part with a sentiment cue, e.g. `the pump is great.`. The summary
//! names one part; the label is the class of the cue attached to that part.
//! Sentences about other parts carry cues from other classes (distractors) or
//! neutral remarks, so the label can only be read off the document with the
//! summary's help.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sample;

const SUBJECTS: [&str; 8] = ["pump", "hose", "filter", "lid", "handle", "strap", "zipper", "wheel"];
const NEUTRAL: [&str; 4] = ["arrived", "exists", "shipped", "came"];
const CUES_2: [[&str; 3]; 2] = [["awful", "broken", "useless"], ["great", "excellent", "perfect"]];
const CUES_3: [[&str; 3]; 3] = [
    ["awful", "broken", "useless"],
    ["okay", "average", "passable"],
    ["great", "excellent", "perfect"],
];
const CUES_5: [[&str; 3]; 5] = [
    ["awful", "broken", "useless"],
    ["poor", "flimsy", "weak"],
    ["okay", "average", "passable"],
    ["good", "solid", "nice"],
    ["great", "excellent", "perfect"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub subjects: Vec<String>,
    /// Cue words per class (index 0 is class 1).
    pub cues: Vec<Vec<String>>,
    /// Sentences per document.
    pub sentences: usize,
    /// Chance that a non-target sentence carries a conflicting cue rather
    /// than a neutral remark.
    pub distractor_rate: f64,
    /// Chance that the gold label is replaced by a different class.
    pub noise_rate: f64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Default cue words: graded sentiment vocabularies for 2, 3 and 5 classes,
/// generated `cue<k>x<i>` tokens otherwise.
pub fn default_cues(classes: usize) -> Vec<Vec<String>> {
    match classes {
        2 => CUES_2.iter().map(|c| words(c)).collect(),
        3 => CUES_3.iter().map(|c| words(c)).collect(),
        5 => CUES_5.iter().map(|c| words(c)).collect(),
        k => (1..=k).map(|c| (0..3).map(|i| format!("cue{c}x{i}")).collect()).collect(),
    }
}

impl SyntheticSpec {
    pub fn new(samples: usize, classes: usize) -> Self {
        SyntheticSpec {
            samples,
            classes,
            subjects: words(&SUBJECTS),
            cues: default_cues(classes),
            sentences: 4,
            distractor_rate: 1.0,
            noise_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("distractor", self.distractor_rate), ("noise", self.noise_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("{name} rate {r} not in [0, 1]")));
            }
        }
        if self.classes < 2 {
            return Err(Error::config("synthetic corpora need at least 2 classes"));
        }
        if self.cues.len() != self.classes || self.cues.iter().any(Vec::is_empty) {
            return Err(Error::config("need a non-empty cue list for every class"));
        }
        if self.sentences == 0 || self.subjects.len() < self.sentences {
            return Err(Error::config(format!(
                "{} sentences need at least as many distinct subjects, have {}",
                self.sentences,
                self.subjects.len()
            )));
        }
        Ok(())
    }
}

/// A generated record. `label` is the possibly corrupted gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub text: String,
    pub summary: String,
    pub label: usize,
    pub clean_label: usize,
    pub noisy: bool,
    pub subject: String,
}

impl SyntheticRecord {
    pub fn sample(&self) -> Sample {
        Sample::new(self.text.clone(), self.summary.clone(), self.label)
    }
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.classes;
    let mut out = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let clean = rng.gen_range(0..k);
        let subjects: Vec<&String> = spec.subjects.choose_multiple(&mut rng, spec.sentences).collect();
        let target = subjects[0];
        let mut sentences = vec![format!("the {target} is {}.", spec.cues[clean].choose(&mut rng).unwrap())];
        for s in &subjects[1..] {
            if rng.gen_bool(spec.distractor_rate) {
                let mut other = rng.gen_range(0..k - 1);
                if other >= clean {
                    other += 1;
                }
                sentences.push(format!("the {s} is {}.", spec.cues[other].choose(&mut rng).unwrap()));
            } else {
                sentences.push(format!("the {s} {}.", NEUTRAL.choose(&mut rng).unwrap()));
            }
        }
        sentences.shuffle(&mut rng);
        let noisy = rng.gen_bool(spec.noise_rate);
        let label = if noisy {
            let mut l = rng.gen_range(0..k - 1);
            if l >= clean {
                l += 1;
            }
            l
        } else {
            clean
        };
        out.push(SyntheticRecord {
            text: sentences.join(" "),
            summary: format!("the {target}"),
            label: label + 1,
            clean_label: clean + 1,
            noisy,
            subject: target.clone(),
        });
    }
    Ok(out)
}

pub fn to_jsonl(records: &[SyntheticRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
