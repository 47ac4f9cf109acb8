//! Reference implementations and synthetic fixtures shared by the
//! integration tests. The oracles are deliberately naive and share no code
//! with the library they check.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::FRAC_PI_2;

use regex::Regex;

use uralic_probe::corpus::{Sentence, Token, Treebank};
use uralic_probe::embstore::{EmbeddingHeader, EmbeddingMeta, SentenceEmbedding};
use uralic_probe::nn::{Example, MlpModel};
use uralic_probe::rng::SplitRng;
use uralic_probe::tokenize::{Markers, VocabKind, Vocabulary};

pub const CONT: &str = "##";
pub const UNK: &str = "[UNK]";

/// WordPiece by quadratic search: at every position try every end point
/// from the longest down. `None` means the word maps to the unknown piece.
pub fn naive_wordpiece(pieces: &[String], word: &str) -> Option<Vec<String>> {
    let set: HashSet<&str> = pieces.iter().map(String::as_str).collect();
    let alphabet: HashSet<char> = pieces
        .iter()
        .flat_map(|p| p.strip_prefix(CONT).unwrap_or(p).chars())
        .collect();
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > 512 || chars.iter().any(|c| !alphabet.contains(c)) {
        return None;
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let body: String = chars[start..end].iter().collect();
            let candidate = if start == 0 { body } else { format!("{CONT}{body}") };
            if set.contains(candidate.as_str()) {
                found = Some((candidate, end));
                break;
            }
        }
        let (piece, end) = found?;
        out.push(piece);
        start = end;
    }
    Some(out)
}

/// Brute-force tokenizer statistics using [`naive_wordpiece`].
pub struct BruteStats {
    pub types: usize,
    pub missing_rate: f64,
    pub mean_subword_len: Option<f64>,
    pub std_subword_len: Option<f64>,
    pub mean_char_len: Option<f64>,
    pub fertility: Option<f64>,
}

pub fn brute_stats(pieces: &[String], words: &[String]) -> BruteStats {
    let mut types: Vec<&String> = Vec::new();
    for w in words {
        if !types.contains(&w) {
            types.push(w);
        }
    }
    let mut unk = 0usize;
    let mut lens: Vec<usize> = Vec::new();
    let mut chars = 0usize;
    let mut known = 0usize;
    for w in &types {
        match naive_wordpiece(pieces, w) {
            None => unk += 1,
            Some(seg) => {
                known += 1;
                chars += w.chars().count();
                for p in &seg {
                    lens.push(p.strip_prefix(CONT).unwrap_or(p).chars().count());
                }
            }
        }
    }
    let missing_rate = unk as f64 / types.len() as f64;
    if known == 0 {
        return BruteStats {
            types: types.len(),
            missing_rate,
            mean_subword_len: None,
            std_subword_len: None,
            mean_char_len: None,
            fertility: None,
        };
    }
    let n = lens.len() as f64;
    let sum: usize = lens.iter().sum();
    let sum_sq: usize = lens.iter().map(|l| l * l).sum();
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 / n - mean * mean).max(0.0);
    BruteStats {
        types: types.len(),
        missing_rate,
        mean_subword_len: Some(mean),
        std_subword_len: Some(var.sqrt()),
        mean_char_len: Some(chars as f64 / known as f64),
        fertility: Some(lens.len() as f64 / known as f64),
    }
}

/// Random WordPiece vocabulary over a small alphabet, always containing
/// `[UNK]`; some letters are left out so that unknown characters occur.
pub fn random_wordpiece_vocab(rng: &mut SplitRng, letters: &[char]) -> Vec<String> {
    let mut pieces: BTreeSet<String> = BTreeSet::new();
    let n = 3 + rng.below(40) as usize;
    let usable = 1 + rng.below(letters.len() as u64) as usize;
    for _ in 0..n {
        let len = 1 + rng.below(4) as usize;
        let body: String = (0..len).map(|_| letters[rng.below(usable as u64) as usize]).collect();
        if rng.below(2) == 0 {
            pieces.insert(body);
        } else {
            pieces.insert(format!("{CONT}{body}"));
        }
    }
    // single characters keep many words segmentable
    for &c in &letters[..usable] {
        if rng.below(3) > 0 {
            pieces.insert(c.to_string());
        }
        if rng.below(3) > 0 {
            pieces.insert(format!("{CONT}{c}"));
        }
    }
    pieces.insert(UNK.to_string());
    pieces.into_iter().collect()
}

pub fn random_word(rng: &mut SplitRng, letters: &[char], max_len: usize) -> String {
    let len = 1 + rng.below(max_len as u64) as usize;
    (0..len).map(|_| letters[rng.below(letters.len() as u64) as usize]).collect()
}

pub fn wordpiece_vocab(pieces: &[String]) -> Vocabulary {
    Vocabulary::new(pieces.to_vec(), VocabKind::WordPiece, Markers::for_kind(VocabKind::WordPiece)).unwrap()
}

/// Spans of every entity type found by scanning a per-type B/I/O
/// projection of the tag sequence with the pattern `[BI]I*`.
pub fn regex_spans(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let re = Regex::new("[BI]I*").unwrap();
    let kinds: BTreeSet<&str> = tags
        .iter()
        .filter_map(|t| t.strip_prefix("B-").or_else(|| t.strip_prefix("I-")))
        .collect();
    let mut out = BTreeSet::new();
    for kind in kinds {
        let projected: String = tags
            .iter()
            .map(|t| match t.split_once('-') {
                Some(("B", k)) if k == kind => 'B',
                Some(("I", k)) if k == kind => 'I',
                _ => 'O',
            })
            .collect();
        for m in re.find_iter(&projected) {
            out.insert((kind.to_string(), m.start(), m.end()));
        }
    }
    out
}

/// Micro precision, recall and F1 over sentence-indexed span sets.
pub fn regex_span_f1(pred: &[Vec<String>], gold: &[Vec<String>]) -> (f64, f64, f64) {
    let collect = |seqs: &[Vec<String>]| -> BTreeSet<(usize, String, usize, usize)> {
        seqs.iter()
            .enumerate()
            .flat_map(|(i, s)| regex_spans(s).into_iter().map(move |(k, a, b)| (i, k, a, b)))
            .collect()
    };
    let p = collect(pred);
    let g = collect(gold);
    let correct = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { correct / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { correct / g.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Two-tailed Student-t p-value by quadrature. With `u = cos^2(theta)`,
/// `I_x(df/2, 1/2)` becomes a ratio of integrals of `cos^(df-1)` whose
/// integrand is smooth on `[0, pi/2]`.
pub fn t_pvalue_quadrature(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let theta0 = (1.0 - x).sqrt().asin();
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    simpson(f, theta0, FRAC_PI_2, 20_000) / simpson(f, 0.0, FRAC_PI_2, 20_000)
}

/// Mean batch loss with every parameter taken from `model`.
pub fn batch_loss(model: &MlpModel, batch: &[Example]) -> f64 {
    model.loss_and_grads(batch, None).unwrap().0
}

/// Central finite-difference gradient over all trainable tensors.
pub fn numeric_gradient(model: &MlpModel, batch: &[Example], h: f64) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.tensors_mut()[ti][i] += h;
            let mut minus = model.clone();
            minus.tensors_mut()[ti][i] -= h;
            *gi = (batch_loss(&plus, batch) - batch_loss(&minus, batch)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)` over the concatenated tensors.
pub fn relative_error(a: &[&[f64]], b: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            diff += (p - q).powi(2);
            na += p * p;
            nb += q * q;
        }
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

/// Adam without weight decay, stepped by hand over a flat parameter list.
pub fn adam_reference(p0: &[f64], grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let mut p = p0.to_vec();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    for (step, g) in grads.iter().enumerate() {
        let t = (step + 1) as i32;
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1.powi(t));
            let vh = v[j] / (1.0 - b2.powi(t));
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    p
}

/// A treebank with one noun per sentence carrying `Case`; each form is
/// unique, so every instance is its own form group. `cases` gives the
/// relative frequency of each case value.
pub fn case_treebank(rng: &mut SplitRng, sentences: usize, cases: &[(&str, u64)]) -> Treebank {
    let total: u64 = cases.iter().map(|c| c.1).sum();
    let mut out = Vec::with_capacity(sentences);
    for s in 0..sentences {
        let mut draw = rng.below(total);
        let mut case = cases[0].0;
        for &(c, w) in cases {
            if draw < w {
                case = c;
                break;
            }
            draw -= w;
        }
        let noun = Token::new(format!("talo{s}{}", case.to_lowercase()))
            .with_upos("NOUN")
            .with_feat("Case", case);
        let mut tokens = vec![Token::new("se").with_upos("PRON"), noun];
        if rng.below(2) == 0 {
            tokens.push(Token::new("on").with_upos("AUX"));
        }
        tokens.push(Token::new(".").with_upos("PUNCT"));
        out.push(Sentence {
            id: format!("syn#{s}"),
            tokens,
        });
    }
    Treebank::new("fi", out)
}

/// Random treebank where forms repeat across sentences and labels are
/// drawn with random skew.
pub fn random_morph_treebank(rng: &mut SplitRng, sentences: usize) -> Treebank {
    let values = ["Nom", "Gen", "Par", "Ine", "Ela"];
    let k = 2 + rng.below(4) as usize;
    let weights: Vec<u64> = (0..k).map(|_| 1 + rng.below(10)).collect();
    let total: u64 = weights.iter().sum();
    let vocab_size = sentences * (1 + rng.below(3) as usize);
    let mut out = Vec::with_capacity(sentences);
    for s in 0..sentences {
        let len = 1 + rng.below(5) as usize;
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let mut draw = rng.below(total);
            let mut li = 0;
            while draw >= weights[li] {
                draw -= weights[li];
                li += 1;
            }
            let stem = rng.below(vocab_size as u64);
            // occasional case variants of the same form
            let form = if rng.below(10) == 0 {
                format!("Sana{stem}{}", values[li])
            } else {
                format!("sana{stem}{}", values[li].to_lowercase())
            };
            tokens.push(Token::new(form).with_upos("NOUN").with_feat("Case", values[li]));
        }
        out.push(Sentence {
            id: format!("rnd#{s}"),
            tokens,
        });
    }
    Treebank::new("et", out)
}

/// Gaussian-ish noise in `[-1, 1]` from the sum of uniforms.
pub fn noise(rng: &mut SplitRng) -> f32 {
    ((rng.unit() + rng.unit() + rng.unit()) / 1.5 - 1.0) as f32
}

/// Builds an embedding file for the given sentences. Each word gets 1 to 3
/// subwords. `signal(sentence, word)` may return a class index whose
/// one-hot vector (scaled by `strength`) is added to every layer of the
/// chosen subword (first or last of the word); all values carry noise.
pub struct EmbeddingFixture<'a> {
    pub layers: usize,
    pub hidden: usize,
    pub noise: f32,
    pub strength: f32,
    pub last_subword: bool,
    pub signal: &'a dyn Fn(&str, usize) -> Option<usize>,
}

impl EmbeddingFixture<'_> {
    pub fn build(&self, sentences: &[(String, usize)], seed: u64) -> (EmbeddingHeader, Vec<SentenceEmbedding>) {
        let mut rng = SplitRng::new(seed);
        let mut out = Vec::with_capacity(sentences.len());
        for (id, words) in sentences {
            let mut alignment = Vec::with_capacity(*words);
            let mut t = 0u32;
            for _ in 0..*words {
                let n = 1 + rng.below(3) as u32;
                alignment.push((t, t + n));
                t += n;
            }
            let t = t as usize;
            let mut values: Vec<f32> = (0..self.layers * t * self.hidden).map(|_| self.noise * noise(&mut rng)).collect();
            for (w, &(start, end)) in alignment.iter().enumerate() {
                if let Some(class) = (self.signal)(id, w) {
                    let pos = if self.last_subword { end - 1 } else { start } as usize;
                    for l in 0..self.layers {
                        values[(l * t + pos) * self.hidden + class] += self.strength;
                    }
                }
            }
            out.push(SentenceEmbedding::new(self.layers, self.hidden, t, alignment, values).unwrap());
        }
        let meta = EmbeddingMeta {
            model: "synthetic".into(),
            language: "fi".into(),
            tokenizer: "wordpiece".into(),
            sentence_ids: sentences.iter().map(|s| s.0.clone()).collect(),
            extra: Default::default(),
        };
        let header = EmbeddingHeader::new(self.layers as u32, self.hidden as u32, out.len() as u32, &meta).unwrap();
        (header, out)
    }
}
