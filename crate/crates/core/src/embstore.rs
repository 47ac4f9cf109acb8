//! ULEMB01 embedding container, subword pooling and softmax layer mixing.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! magic      8 bytes  "ULEMB01\n"
//! L H S      3 x u32  layer count, hidden size, sentence count
//! meta_len   u32      followed by meta_len bytes of UTF-8 JSON
//! S times:
//!   W T      2 x u32  word count, subword count
//!   W times: start end (u32, u32), half-open subword range of a word
//!   L*T*H    f32 LE   layer-major, then subword, then dimension
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ULEMB01\n";

/// Descriptive metadata stored as JSON in the header.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub tokenizer: String,
    /// Dataset sentence id of each stored sentence, in file order.
    #[serde(default)]
    pub sentence_ids: Vec<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub layer_count: u32,
    pub hidden_size: u32,
    pub sentence_count: u32,
    /// Raw JSON text, kept verbatim so files round-trip byte for byte.
    pub metadata: String,
}

impl EmbeddingHeader {
    pub fn new(layer_count: u32, hidden_size: u32, sentence_count: u32, meta: &EmbeddingMeta) -> Result<Self> {
        Ok(EmbeddingHeader {
            layer_count,
            hidden_size,
            sentence_count,
            metadata: serde_json::to_string(meta)?,
        })
    }

    pub fn meta(&self) -> Result<EmbeddingMeta> {
        if self.metadata.is_empty() {
            return Ok(EmbeddingMeta::default());
        }
        serde_json::from_str(&self.metadata)
            .map_err(|e| Error::Format(format!("metadata is not valid JSON: {e}")))
    }

    fn validate(&self) -> Result<()> {
        if self.layer_count == 0 || self.hidden_size == 0 {
            return Err(Error::Validation(format!(
                "layer count ({}) and hidden size ({}) must be positive",
                self.layer_count, self.hidden_size
            )));
        }
        self.meta().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    layers: usize,
    hidden: usize,
    subword_count: usize,
    alignment: Vec<(u32, u32)>,
    values: Vec<f32>,
}

impl SentenceEmbedding {
    pub fn new(
        layers: usize,
        hidden: usize,
        subword_count: usize,
        alignment: Vec<(u32, u32)>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let se = SentenceEmbedding {
            layers,
            hidden,
            subword_count,
            alignment,
            values,
        };
        se.validate()?;
        Ok(se)
    }

    fn validate(&self) -> Result<()> {
        let expected = self.layers * self.subword_count * self.hidden;
        if self.values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {} x {} x {} = {expected} values, got {}",
                self.layers,
                self.subword_count,
                self.hidden,
                self.values.len()
            )));
        }
        let mut prev_end = 0u32;
        for (w, &(start, end)) in self.alignment.iter().enumerate() {
            if start >= end {
                return Err(Error::Validation(format!("word {w}: empty subword range {start}..{end}")));
            }
            if end as usize > self.subword_count {
                return Err(Error::Validation(format!(
                    "word {w}: range end {end} exceeds subword count {}",
                    self.subword_count
                )));
            }
            if start < prev_end {
                return Err(Error::Validation(format!(
                    "word {w}: range {start}..{end} overlaps or precedes the previous word"
                )));
            }
            prev_end = end;
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn word_count(&self) -> usize {
        self.alignment.len()
    }

    pub fn subword_count(&self) -> usize {
        self.subword_count
    }

    pub fn alignment(&self) -> &[(u32, u32)] {
        &self.alignment
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Hidden vector of one subword at one layer.
    pub fn vector(&self, layer: usize, subword: usize) -> &[f32] {
        let offset = (layer * self.subword_count + subword) * self.hidden;
        &self.values[offset..offset + self.hidden]
    }

    /// All layers at one subword position, as an `L x H` row-major block.
    pub fn layer_stack(&self, subword: usize) -> Vec<f32> {
        (0..self.layers)
            .flat_map(|l| self.vector(l, subword).iter().copied())
            .collect()
    }

    /// Subword position representing a word under the given pooling.
    pub fn position(&self, word_index: usize, pooling: Pooling) -> Result<usize> {
        let &(start, end) = self.alignment.get(word_index).ok_or_else(|| {
            Error::InvalidInput(format!(
                "word index {word_index} out of range for {} words",
                self.alignment.len()
            ))
        })?;
        Ok(match pooling {
            Pooling::First => start as usize,
            Pooling::Last => end as usize - 1,
        })
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} does not fit in u32")))
}

pub fn write_embeddings<W: Write>(
    mut w: W,
    header: &EmbeddingHeader,
    sentences: &[SentenceEmbedding],
) -> Result<()> {
    header.validate()?;
    if header.sentence_count as usize != sentences.len() {
        return Err(Error::Shape(format!(
            "header declares {} sentences, got {}",
            header.sentence_count,
            sentences.len()
        )));
    }
    for (i, s) in sentences.iter().enumerate() {
        if s.layers != header.layer_count as usize || s.hidden != header.hidden_size as usize {
            return Err(Error::Shape(format!(
                "sentence {i} is {} x {}, header is {} x {}",
                s.layers, s.hidden, header.layer_count, header.hidden_size
            )));
        }
        s.validate()?;
    }

    w.write_all(MAGIC)?;
    put_u32(&mut w, header.layer_count)?;
    put_u32(&mut w, header.hidden_size)?;
    put_u32(&mut w, header.sentence_count)?;
    put_u32(&mut w, to_u32(header.metadata.len(), "metadata length")?)?;
    w.write_all(header.metadata.as_bytes())?;

    for s in sentences {
        put_u32(&mut w, to_u32(s.word_count(), "word count")?)?;
        put_u32(&mut w, to_u32(s.subword_count, "subword count")?)?;
        for &(start, end) in &s.alignment {
            put_u32(&mut w, start)?;
            put_u32(&mut w, end)?;
        }
        let mut buf = Vec::with_capacity(s.values.len() * 4);
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn embeddings_to_bytes(header: &EmbeddingHeader, sentences: &[SentenceEmbedding]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_embeddings(&mut out, header, sentences)?;
    Ok(out)
}

fn read_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Length(format!(
            "{what}: expected {n} bytes, found {}",
            buf.len()
        )));
    }
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_bytes(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<(EmbeddingHeader, Vec<SentenceEmbedding>)> {
    let magic = read_bytes(&mut r, MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("not a ULEMB01 file (bad magic)".into()));
    }
    let layer_count = get_u32(&mut r, "layer count")?;
    let hidden_size = get_u32(&mut r, "hidden size")?;
    let sentence_count = get_u32(&mut r, "sentence count")?;
    let meta_len = get_u32(&mut r, "metadata length")? as usize;
    let metadata = String::from_utf8(read_bytes(&mut r, meta_len, "metadata")?)
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let header = EmbeddingHeader {
        layer_count,
        hidden_size,
        sentence_count,
        metadata,
    };
    header.validate()?;

    let layers = layer_count as usize;
    let hidden = hidden_size as usize;
    let mut sentences = Vec::new();
    for i in 0..sentence_count {
        let what = format!("sentence {i}");
        let words = get_u32(&mut r, &what)? as usize;
        let subwords = get_u32(&mut r, &what)? as usize;
        let align_bytes = read_bytes(&mut r, words * 8, &what)?;
        let alignment = align_bytes
            .chunks_exact(8)
            .map(|c| {
                (
                    u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                )
            })
            .collect();
        let n = layers
            .checked_mul(subwords)
            .and_then(|x| x.checked_mul(hidden))
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{what}: payload size overflows")))?;
        let payload = read_bytes(&mut r, n, &what)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        sentences.push(SentenceEmbedding::new(layers, hidden, subwords, alignment, values)?);
    }

    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last sentence".into()));
    }
    Ok((header, sentences))
}

pub fn read_embeddings_file(path: impl AsRef<std::path::Path>) -> Result<(EmbeddingHeader, Vec<SentenceEmbedding>)> {
    let file = std::fs::File::open(path)?;
    read_embeddings(io::BufReader::new(file))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    First,
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerMode {
    Mix,
    Top,
}

/// Learned scalar mixing: softmax over raw weights, then a weighted sum of
/// the per-layer vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMixer {
    pub raw_weights: Vec<f64>,
}

impl LayerMixer {
    /// Zero raw weights, i.e. a uniform average.
    pub fn uniform(layers: usize) -> Self {
        LayerMixer {
            raw_weights: vec![0.0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.raw_weights.len()
    }

    pub fn softmax(&self) -> Vec<f64> {
        let max = self
            .raw_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.raw_weights.iter().map(|w| (w - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    fn check<T>(&self, stack: &[T], hidden: usize) -> Result<()> {
        if stack.len() != self.layers() * hidden {
            return Err(Error::Shape(format!(
                "mixer has {} layers, got {} values for hidden size {hidden}",
                self.layers(),
                stack.len()
            )));
        }
        Ok(())
    }

    /// `sum_i softmax(w)_i * x_i` over an `L x H` row-major stack.
    pub fn mix<T: Copy + Into<f64>>(&self, stack: &[T], hidden: usize) -> Result<Vec<f64>> {
        self.check(stack, hidden)?;
        let probs = self.softmax();
        let mut out = vec![0.0; hidden];
        for (p, row) in probs.iter().zip(stack.chunks_exact(hidden)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += p * x.into();
            }
        }
        Ok(out)
    }

    /// Gradient of a loss with respect to the raw weights, given the
    /// gradient `upstream` with respect to the mixed vector.
    ///
    /// With `s = softmax(w)` and `y = sum_i s_i x_i`:
    /// `dL/dw_i = s_i * (x_i - y) . upstream`.
    pub fn backward<T: Copy + Into<f64>>(&self, stack: &[T], upstream: &[f64]) -> Result<Vec<f64>> {
        let hidden = upstream.len();
        self.check(stack, hidden)?;
        let probs = self.softmax();
        let dots: Vec<f64> = stack
            .chunks_exact(hidden)
            .map(|row| row.iter().zip(upstream).map(|(&x, g)| x.into() * g).sum())
            .collect();
        let mixed_dot: f64 = probs.iter().zip(&dots).map(|(p, d)| p * d).sum();
        Ok(probs
            .iter()
            .zip(&dots)
            .map(|(p, d)| p * (d - mixed_dot))
            .collect())
    }
}

pub fn mix_layers<T: Copy + Into<f64>>(stack: &[T], hidden: usize, mixer: &LayerMixer) -> Result<Vec<f64>> {
    mixer.mix(stack, hidden)
}

/// Which layers feed a pooled word vector.
#[derive(Clone, Copy, Debug)]
pub enum LayerSelect<'a> {
    Top,
    Index(usize),
    Mix(&'a LayerMixer),
}

/// Word vector at the first or last subword, from one layer or mixed.
pub fn pool(se: &SentenceEmbedding, word_index: usize, pooling: Pooling, layer: LayerSelect<'_>) -> Result<Vec<f64>> {
    let pos = se.position(word_index, pooling)?;
    match layer {
        LayerSelect::Top => Ok(to_f64(se.vector(se.layers - 1, pos))),
        LayerSelect::Index(l) if l < se.layers => Ok(to_f64(se.vector(l, pos))),
        LayerSelect::Index(l) => Err(Error::InvalidInput(format!(
            "layer {l} out of range for {} layers",
            se.layers
        ))),
        LayerSelect::Mix(mixer) => mixer.mix(&se.layer_stack(pos), se.hidden),
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
