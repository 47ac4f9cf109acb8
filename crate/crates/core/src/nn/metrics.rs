//! Accuracy, exact-match span F1 over BIO sequences, and the paired t-test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / golds.len() as f64)
}

/// A labelled span `[start, end)` of token positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Extracts spans from a BIO sequence. An `I-X` that does not continue an
/// open `X` span starts a new one; anything that is not `B-`/`I-` closes
/// the open span.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (prefix, kind) = match tag.split_once('-') {
            Some((p @ ("B" | "I"), k)) if !k.is_empty() => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && matches!(&open, Some((k, _)) if k == kind);
        if continues {
            continue;
        }
        if let Some((k, start)) = open.take() {
            spans.push(Span { kind: k, start, end: i });
        }
        if prefix != "O" {
            open = Some((kind.to_string(), i));
        }
    }
    if let Some((k, start)) = open {
        spans.push(Span {
            kind: k,
            start,
            end: tags.len(),
        });
    }
    spans
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: SpanCounts,
    pub per_type: BTreeMap<String, SpanCounts>,
}

/// Micro-averaged exact-boundary, exact-type span scores.
pub fn span_f1<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<SpanF1> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut total = SpanCounts::default();
    let mut per_type: BTreeMap<String, SpanCounts> = BTreeMap::new();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} predicted tags for {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let ps = extract_spans(p);
        let gs = extract_spans(g);
        for s in &ps {
            per_type.entry(s.kind.clone()).or_default().predicted += 1;
            if gs.contains(s) {
                per_type.entry(s.kind.clone()).or_default().correct += 1;
                total.correct += 1;
            }
        }
        for s in &gs {
            per_type.entry(s.kind.clone()).or_default().gold += 1;
        }
        total.predicted += ps.len();
        total.gold += gs.len();
    }
    Ok(SpanF1 {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        counts: total,
        per_type,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-tailed p-value.
    pub p: f64,
    pub df: usize,
}

/// Paired t-test over per-task scores of two models.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} scores", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;

    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    if sd <= 4.0 * f64::EPSILON * mean.abs() {
        return Err(Error::InvalidInput(
            "differences are constant; the t statistic is undefined".into(),
        ));
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_tailed(t, df as f64),
        df,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;

        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
