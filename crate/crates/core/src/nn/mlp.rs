use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::embstore::LayerMixer;
use crate::error::{Error, Result};
use crate::rng::SplitRng;

pub const HIDDEN_UNITS: usize = 50;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// One training or evaluation example.
///
/// `features` is a single `H`-vector, or an `L x H` layer stack when the
/// model mixes layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f32>,
    pub label: usize,
}

/// Inverted dropout on the hidden layer.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut SplitRng,
}

/// Single-hidden-layer ReLU classifier with optional learned layer mixing.
///
/// Weight matrices are row-major: `w1` is `hidden x input_dim`, `w2` is
/// `classes x hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub mixer: Option<LayerMixer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub mixer: Option<Vec<f64>>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.w1, &self.b1, &self.w2, &self.b2];
        if let Some(m) = &self.mixer {
            out.push(m);
        }
        out
    }
}

struct Activations {
    input: Vec<f64>,
    pre: Vec<f64>,
    // post-ReLU, post-dropout
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, uniform mixing when `layers` is set.
    pub fn new(input_dim: usize, classes: usize, layers: Option<usize>, rng: &mut SplitRng) -> Self {
        Self::with_hidden(input_dim, HIDDEN_UNITS, classes, layers, rng)
    }

    pub fn with_hidden(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        layers: Option<usize>,
        rng: &mut SplitRng,
    ) -> Self {
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut SplitRng| -> Vec<f64> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.symmetric(bound)).collect()
        };
        let w1 = glorot(input_dim, hidden, rng);
        let w2 = glorot(hidden, classes, rng);
        MlpModel {
            input_dim,
            hidden,
            classes,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
            mixer: layers.map(LayerMixer::uniform),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, classes: usize, layers: Option<usize>) -> Self {
        MlpModel {
            input_dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
            mixer: layers.map(LayerMixer::uniform),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Expected length of an example's feature vector.
    pub fn feature_len(&self) -> usize {
        self.input_dim * self.mixer.as_ref().map_or(1, LayerMixer::layers)
    }

    /// Trainable tensors in declaration order: w1, b1, w2, b2, mixer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.w1, &self.b1, &self.w2, &self.b2];
        if let Some(m) = &self.mixer {
            out.push(&m.raw_weights);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
        if let Some(m) = &mut self.mixer {
            out.push(&mut m.raw_weights);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn input(&self, features: &[f32]) -> Result<Vec<f64>> {
        if features.len() != self.feature_len() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.feature_len(),
                features.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite input feature".into()));
        }
        match &self.mixer {
            Some(mixer) => mixer.mix(features, self.input_dim),
            None => Ok(features.iter().map(|&x| x as f64).collect()),
        }
    }

    fn activations(&self, features: &[f32], dropout: Option<&mut Dropout<'_>>) -> Result<Activations> {
        let input = self.input(features)?;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                self.b1[j] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let mut hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mask = dropout.filter(|d| d.rate > 0.0).map(|d| {
            let keep = 1.0 - d.rate;
            let mask: Vec<f64> = (0..self.hidden)
                .map(|_| if d.rng.unit() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (h, m) in hidden.iter_mut().zip(&mask) {
                *h *= m;
            }
            mask
        });
        let logits = (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
                self.b2[c] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        Ok(Activations {
            input,
            pre,
            hidden,
            mask,
            logits,
        })
    }

    pub fn forward(&self, features: &[f32], dropout: Option<&mut Dropout<'_>>) -> Result<Vec<f64>> {
        Ok(self.activations(features, dropout)?.logits)
    }

    pub fn predict(&self, features: &[f32]) -> Result<usize> {
        let logits = self.forward(features, None)?;
        Ok(argmax(&logits))
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    pub fn loss_and_grads<E: Borrow<Example>>(&self, batch: &[E], mut dropout: Option<Dropout<'_>>) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grads = Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.classes],
            mixer: self.mixer.as_ref().map(|m| vec![0.0; m.layers()]),
        };
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;

        for ex in batch {
            let ex = ex.borrow();
            if ex.label >= self.classes {
                return Err(Error::InvalidInput(format!(
                    "label {} out of range for {} classes",
                    ex.label, self.classes
                )));
            }
            let act = self.activations(&ex.features, dropout.as_mut())?;
            let probs = softmax(&act.logits);
            loss += cross_entropy(&act.logits, ex.label);

            let mut dlogits: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            dlogits[ex.label] -= scale;

            let mut dhidden = vec![0.0; self.hidden];
            for (c, &g) in dlogits.iter().enumerate() {
                grads.b2[c] += g;
                let row = c * self.hidden..(c + 1) * self.hidden;
                let gw = &mut grads.w2[row.clone()];
                for (((gw, dh), &h), &w) in gw.iter_mut().zip(&mut dhidden).zip(&act.hidden).zip(&self.w2[row]) {
                    *gw += g * h;
                    *dh += g * w;
                }
            }

            let mut dinput = vec![0.0; self.input_dim];
            for j in 0..self.hidden {
                if act.pre[j] <= 0.0 {
                    continue;
                }
                let g = dhidden[j] * act.mask.as_ref().map_or(1.0, |m| m[j]);
                if g == 0.0 {
                    continue;
                }
                grads.b1[j] += g;
                let row = j * self.input_dim..(j + 1) * self.input_dim;
                let gw = &mut grads.w1[row.clone()];
                for (((gw, di), &x), &w) in gw.iter_mut().zip(&mut dinput).zip(&act.input).zip(&self.w1[row]) {
                    *gw += g * x;
                    *di += g * w;
                }
            }

            if let (Some(mixer), Some(gm)) = (&self.mixer, grads.mixer.as_mut()) {
                for (acc, g) in gm.iter_mut().zip(mixer.backward(&ex.features, &dinput)?) {
                    *acc += g;
                }
            }
        }
        Ok((loss * scale, grads))
    }
}

/// `logsumexp(logits) - logits[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Forward pass with the default dropout rate in train mode.
pub fn mlp_forward(m: &MlpModel, x: &[f32], train_mode: bool, rng: &mut SplitRng) -> Result<Vec<f64>> {
    if train_mode {
        m.forward(x, Some(&mut Dropout { rate: DEFAULT_DROPOUT, rng }))
    } else {
        m.forward(x, None)
    }
}

pub fn loss_and_grads(m: &MlpModel, batch: &[Example]) -> Result<(f64, Gradients)> {
    m.loss_and_grads(batch, None)
}
