//! Accuracy, macro-F1 and confusion matrices. Classes are 0-based indices.

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};

/// `K×K` counts with gold classes as rows and predictions as columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(preds: &[usize], golds: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::Eval(format!(
                "{} predictions for {} gold labels",
                preds.len(),
                golds.len()
            )));
        }
        if preds.is_empty() {
            return Err(Error::Eval("no predictions to score".into()));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&p, &g) in preds.iter().zip(golds) {
            m.add(g, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, gold: usize, pred: usize) -> Result<()> {
        if gold >= self.classes || pred >= self.classes {
            return Err(Error::Eval(format!(
                "class pair ({gold}, {pred}) outside 0..{}",
                self.classes
            )));
        }
        self.counts[gold * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold * self.classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Exact `correct / total`.
    pub fn accuracy_ratio(&self) -> Result<Ratio<usize>> {
        match self.total() {
            0 => Err(Error::Eval("accuracy of an empty set".into())),
            n => Ok(Ratio::new(self.correct(), n)),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let r = self.accuracy_ratio()?;
        Ok(*r.numer() as f64 / *r.denom() as f64)
    }

    /// Per-class scores; a zero denominator gives a zero score.
    pub fn class_scores(&self) -> Vec<ClassScores> {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let predicted: usize = (0..self.classes).map(|g| self.get(g, c)).sum();
                let support: usize = (0..self.classes).map(|p| self.get(c, p)).sum();
                ClassScores {
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                    f1: ratio(2 * tp, predicted + support),
                    support,
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::Eval("macro-F1 of an empty set".into()));
        }
        Ok(self.class_scores().iter().map(|s| s.f1).sum::<f64>() / self.classes as f64)
    }
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    let classes = preds.iter().chain(golds).max().map_or(1, |m| m + 1);
    ConfusionMatrix::from_predictions(preds, golds, classes)?.accuracy()
}

pub fn macro_f1(preds: &[usize], golds: &[usize], classes: usize) -> Result<f64> {
    ConfusionMatrix::from_predictions(preds, golds, classes)?.macro_f1()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn new(preds: &[usize], golds: &[usize], classes: usize) -> Result<Self> {
        let confusion = ConfusionMatrix::from_predictions(preds, golds, classes)?;
        Ok(EvalReport {
            accuracy: confusion.accuracy()?,
            macro_f1: confusion.macro_f1()?,
            per_class: confusion.class_scores(),
            confusion,
        })
    }
}
