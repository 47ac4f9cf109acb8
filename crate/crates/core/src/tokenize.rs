//! Subword vocabularies and the two segmentation families.
//!
//! WordPiece maps a whole word to the unknown piece as soon as any position
//! cannot be matched. The SentencePiece-like segmenter instead deletes the
//! characters it cannot cover and segments what remains.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Words longer than this many characters are always unknown.
pub const MAX_WORD_CHARS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabKind {
    WordPiece,
    SentencePieceLike,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Markers {
    pub continuation: String,
    pub word_begin: String,
    pub unk: String,
}

impl Markers {
    pub fn for_kind(kind: VocabKind) -> Self {
        match kind {
            VocabKind::WordPiece => Markers {
                continuation: "##".into(),
                word_begin: String::new(),
                unk: "[UNK]".into(),
            },
            VocabKind::SentencePieceLike => Markers {
                continuation: String::new(),
                word_begin: "\u{2581}".into(),
                unk: "<unk>".into(),
            },
        }
    }
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<char, usize>,
    terminal: bool,
}

/// Character trie answering longest-prefix queries.
#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn new() -> Self {
        Trie {
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, s: &str) {
        let mut node = 0;
        for c in s.chars() {
            node = match self.nodes[node].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, next);
                    next
                }
            };
        }
        self.nodes[node].terminal = true;
    }

    /// Length in chars of the longest entry that is a prefix of `chars`.
    fn longest_prefix(&self, chars: &[char]) -> Option<usize> {
        let mut node = 0;
        let mut best = None;
        for (i, c) in chars.iter().enumerate() {
            match self.nodes[node].children.get(c) {
                Some(&next) => node = next,
                None => break,
            }
            if self.nodes[node].terminal {
                best = Some(i + 1);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: Vec<String>,
    kind: VocabKind,
    markers: Markers,
    alphabet: BTreeSet<char>,
    // pieces usable at the start of a word, with the word-begin marker stripped
    initial: Trie,
    // pieces usable after the first, with the continuation marker stripped
    inner: Trie,
}

impl Vocabulary {
    pub fn new(pieces: Vec<String>, kind: VocabKind, markers: Markers) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pieces.len());
        for piece in &pieces {
            if !seen.insert(piece.as_str()) {
                return Err(Error::Vocab(format!("duplicate piece {piece:?}")));
            }
        }
        if !seen.contains(markers.unk.as_str()) {
            return Err(Error::Vocab(format!(
                "unknown piece {:?} missing from vocabulary",
                markers.unk
            )));
        }

        let mut initial = Trie::new();
        let mut inner = Trie::new();
        let mut alphabet = BTreeSet::new();
        for piece in &pieces {
            alphabet.extend(strip_markers_with(piece, kind, &markers).chars());
            match kind {
                VocabKind::WordPiece => {
                    initial.insert(piece);
                    if let Some(rest) = nonempty_strip(piece, &markers.continuation) {
                        inner.insert(rest);
                    }
                }
                VocabKind::SentencePieceLike => {
                    inner.insert(piece);
                    if let Some(rest) = nonempty_strip(piece, &markers.word_begin) {
                        initial.insert(rest);
                    }
                }
            }
        }

        Ok(Vocabulary {
            pieces,
            kind,
            markers,
            alphabet,
            initial,
            inner,
        })
    }

    /// Parses a vocabulary dump: one piece per line for WordPiece, or
    /// `piece<TAB>score` rows for SentencePiece-like vocabularies.
    pub fn parse(text: &str, kind: VocabKind, markers: Markers) -> Result<Self> {
        let pieces = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .map(|l| match kind {
                VocabKind::WordPiece => l.to_string(),
                VocabKind::SentencePieceLike => l.split('\t').next().unwrap_or(l).to_string(),
            })
            .collect();
        Vocabulary::new(pieces, kind, markers)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn markers(&self) -> &Markers {
        &self.markers
    }

    pub fn unk_piece(&self) -> &str {
        &self.markers.unk
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// The piece with its marker removed.
    pub fn strip_markers<'a>(&self, piece: &'a str) -> &'a str {
        strip_markers_with(piece, self.kind, &self.markers)
    }

    pub fn segment(&self, word: &str) -> Result<Segmentation> {
        match self.kind {
            VocabKind::WordPiece => wordpiece_segment(self, word),
            VocabKind::SentencePieceLike => splike_segment(self, word),
        }
    }

    fn unk(&self, word: &str, deleted_chars: usize) -> Segmentation {
        Segmentation {
            word: word.to_string(),
            pieces: vec![self.markers.unk.clone()],
            is_unk: true,
            deleted_chars,
        }
    }
}

fn nonempty_strip<'a>(piece: &'a str, marker: &str) -> Option<&'a str> {
    if marker.is_empty() {
        return None;
    }
    piece.strip_prefix(marker).filter(|rest| !rest.is_empty())
}

fn strip_markers_with<'a>(piece: &'a str, kind: VocabKind, markers: &Markers) -> &'a str {
    let marker = match kind {
        VocabKind::WordPiece => &markers.continuation,
        VocabKind::SentencePieceLike => &markers.word_begin,
    };
    if marker.is_empty() {
        piece
    } else {
        piece.strip_prefix(marker.as_str()).unwrap_or(piece)
    }
}

pub fn load_vocab(path: impl AsRef<Path>, kind: VocabKind, markers: Markers) -> Result<Vocabulary> {
    let bytes = fs::read(path)?;
    Vocabulary::parse(std::str::from_utf8(&bytes)?, kind, markers)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub word: String,
    pub pieces: Vec<String>,
    pub is_unk: bool,
    pub deleted_chars: usize,
}

fn check_word(word: &str) -> Result<Vec<char>> {
    if word.is_empty() {
        return Err(Error::InvalidInput("cannot segment an empty word".into()));
    }
    if word.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput(format!(
            "word {word:?} contains whitespace"
        )));
    }
    Ok(word.chars().collect())
}

/// Greedy longest-match-first WordPiece segmentation.
pub fn wordpiece_segment(v: &Vocabulary, word: &str) -> Result<Segmentation> {
    let chars = check_word(word)?;
    if chars.len() > MAX_WORD_CHARS || chars.iter().any(|c| !v.alphabet.contains(c)) {
        return Ok(v.unk(word, 0));
    }

    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let trie = if start == 0 { &v.initial } else { &v.inner };
        let Some(len) = trie.longest_prefix(&chars[start..]) else {
            return Ok(v.unk(word, 0));
        };
        let body: String = chars[start..start + len].iter().collect();
        pieces.push(if start == 0 {
            body
        } else {
            format!("{}{}", v.markers.continuation, body)
        });
        start += len;
    }

    Ok(Segmentation {
        word: word.to_string(),
        pieces,
        is_unk: false,
        deleted_chars: 0,
    })
}

/// SentencePiece-like segmentation: unknown characters are deleted and the
/// residue is segmented greedily, the first piece carrying the word-begin
/// marker when the vocabulary has a matching marked piece.
///
/// A character inside the alphabet that no piece can cover at its position
/// is deleted as well.
pub fn splike_segment(v: &Vocabulary, word: &str) -> Result<Segmentation> {
    let chars = check_word(word)?;
    if chars.len() > MAX_WORD_CHARS {
        return Ok(v.unk(word, 0));
    }

    let residue: Vec<char> = chars
        .iter()
        .copied()
        .filter(|c| v.alphabet.contains(c))
        .collect();
    let mut deleted = chars.len() - residue.len();

    let mut pieces: Vec<String> = Vec::new();
    let mut start = 0;
    while start < residue.len() {
        let rest = &residue[start..];
        if pieces.is_empty() {
            if let Some(len) = v.initial.longest_prefix(rest) {
                let body: String = rest[..len].iter().collect();
                pieces.push(format!("{}{}", v.markers.word_begin, body));
                start += len;
                continue;
            }
        }
        match v.inner.longest_prefix(rest) {
            Some(len) => {
                pieces.push(rest[..len].iter().collect());
                start += len;
            }
            None => {
                deleted += 1;
                start += 1;
            }
        }
    }

    if pieces.is_empty() {
        return Ok(v.unk(word, deleted));
    }
    Ok(Segmentation {
        word: word.to_string(),
        pieces,
        is_unk: false,
        deleted_chars: deleted,
    })
}

/// Removes diacritics: canonical decomposition, combining marks dropped,
/// then stroke letters without a decomposition folded to their base letter.
pub fn strip_diacritics(text: &str) -> String {
    text.nfd()
        .filter(|c| !is_combining_mark(*c))
        .map(|c| match c {
            'đ' => 'd',
            'Đ' => 'D',
            'ŧ' => 't',
            'Ŧ' => 'T',
            'ŋ' => 'n',
            'Ŋ' => 'N',
            other => other,
        })
        .nfc()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerStats {
    pub types: usize,
    pub missing_rate: f64,
    /// `None` when every type is unknown.
    pub mean_subword_len: Option<f64>,
    pub std_subword_len: Option<f64>,
    pub mean_char_len: Option<f64>,
    pub fertility: Option<f64>,
}

/// Table-style statistics over word types. Length and fertility figures are
/// computed over the types that are not mapped to the unknown piece.
pub fn tokenizer_stats<S: AsRef<str>>(v: &Vocabulary, types: &[S]) -> Result<TokenizerStats> {
    let mut seen = HashSet::new();
    let types: Vec<&str> = types
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect();
    if types.is_empty() {
        return Err(Error::InvalidInput("no word types given".into()));
    }

    let mut unk = 0usize;
    let mut known = 0usize;
    let mut piece_count = 0usize;
    let mut char_total = 0usize;
    let mut piece_lens: Vec<f64> = Vec::new();
    for word in &types {
        let seg = v.segment(word)?;
        if seg.is_unk {
            unk += 1;
            continue;
        }
        known += 1;
        char_total += word.chars().count();
        piece_count += seg.pieces.len();
        piece_lens.extend(
            seg.pieces
                .iter()
                .map(|p| v.strip_markers(p).chars().count() as f64),
        );
    }

    let missing_rate = unk as f64 / types.len() as f64;
    if known == 0 {
        return Ok(TokenizerStats {
            types: types.len(),
            missing_rate,
            mean_subword_len: None,
            std_subword_len: None,
            mean_char_len: None,
            fertility: None,
        });
    }

    let n = piece_lens.len() as f64;
    let mean = piece_lens.iter().sum::<f64>() / n;
    let var = piece_lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    Ok(TokenizerStats {
        types: types.len(),
        missing_rate,
        mean_subword_len: Some(mean),
        std_subword_len: Some(var.sqrt()),
        mean_char_len: Some(char_total as f64 / known as f64),
        fertility: Some(piece_count as f64 / known as f64),
    })
}

#[derive(Clone, Debug)]
pub struct StatsRow {
    pub model: String,
    pub language: String,
    pub vocab_size: usize,
    pub stats: TokenizerStats,
}

pub const STATS_CSV_HEADER: &str =
    "model,language,vocab_size,types,missing_pct,subword_length,subword_length_std,character_length,fertility";

/// Renders rows as CSV; undefined statistics are left empty.
pub fn stats_csv(rows: &[StatsRow]) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut out = String::from(STATS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let s = &row.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{},{},{},{}",
            row.model,
            row.language,
            row.vocab_size,
            s.types,
            100.0 * s.missing_rate,
            cell(s.mean_subword_len),
            cell(s.std_subword_len),
            cell(s.mean_char_len),
            cell(s.fertility)
        );
    }
    out
}
