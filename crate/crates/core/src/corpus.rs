//! Treebank readers for CoNLL-U and the two-column WikiAnn NER format.
//!
//! Both readers produce the same [`Sentence`] representation. CoNLL-U
//! multiword-token ranges (`1-2`) and empty nodes (`3.1`) are skipped, so a
//! sentence is always the sequence of syntactic words.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Language codes of the evaluated Uralic languages.
pub const KNOWN_LANGUAGES: [&str; 11] = [
    "et", "fi", "hu", "myv", "mdf", "krl", "olo", "koi", "kpv", "sme", "sms",
];

/// The Universal Dependencies UPOS inventory.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub lemma: Option<String>,
    pub upos: Option<String>,
    pub feats: BTreeMap<String, String>,
    pub ner: Option<String>,
}

impl Token {
    pub fn new(form: impl Into<String>) -> Self {
        Token {
            form: form.into(),
            lemma: None,
            upos: None,
            feats: BTreeMap::new(),
            ner: None,
        }
    }

    pub fn with_upos(mut self, upos: impl Into<String>) -> Self {
        self.upos = Some(upos.into());
        self
    }

    pub fn with_feat(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.feats.insert(key.into(), value.into());
        self
    }

    pub fn with_ner(mut self, tag: impl Into<String>) -> Self {
        self.ner = Some(tag.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Treebank {
    pub language: String,
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    /// Builds a treebank, warning when the language code is not one of
    /// [`KNOWN_LANGUAGES`].
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        let language = language.into();
        if !KNOWN_LANGUAGES.contains(&language.as_str()) {
            warn!("language code {language:?} is not one of the evaluated languages");
        }
        Treebank {
            language,
            sentences,
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    /// Distinct word types in first-occurrence order.
    pub fn word_types(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.tokens()
            .filter(|t| seen.insert(t.form.as_str()))
            .map(|t| t.form.clone())
            .collect()
    }
}

/// A single morphological probing target: one token of one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbingInstance {
    pub sentence_id: String,
    pub target_index: usize,
    pub label: String,
    pub form: String,
}

pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>> {
    parse_conllu_named("conllu", text)
}

pub fn parse_conllu_bytes(source: &str, bytes: &[u8]) -> Result<Vec<Sentence>> {
    parse_conllu_named(source, std::str::from_utf8(bytes)?)
}

/// Parses CoNLL-U text; sentence ids are `source#index`.
pub fn parse_conllu_named(source: &str, text: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(source, &mut sentences, &mut tokens);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }

        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<usize>().is_err() {
            return Err(Error::parse(lineno, format!("invalid token id {id:?}")));
        }

        let form = cols[1];
        if form.is_empty() {
            return Err(Error::parse(lineno, "empty FORM"));
        }

        tokens.push(Token {
            form: form.to_string(),
            lemma: optional(cols[2]),
            upos: optional(cols[3]),
            feats: parse_feats(cols[5]).map_err(|m| Error::parse(lineno, m))?,
            ner: None,
        });
    }
    flush(source, &mut sentences, &mut tokens);

    Ok(sentences)
}

fn flush(source: &str, sentences: &mut Vec<Sentence>, tokens: &mut Vec<Token>) {
    if tokens.is_empty() {
        return;
    }
    sentences.push(Sentence {
        id: format!("{source}#{}", sentences.len()),
        tokens: std::mem::take(tokens),
    });
}

fn optional(col: &str) -> Option<String> {
    (col != "_" && !col.is_empty()).then(|| col.to_string())
}

fn parse_feats(col: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut feats = BTreeMap::new();
    if col == "_" || col.is_empty() {
        return Ok(feats);
    }
    for pair in col.split('|') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("feature {pair:?} is not Key=Value"))?;
        if key.is_empty() || value.is_empty() {
            return Err(format!("feature {pair:?} is not Key=Value"));
        }
        if feats.insert(key.to_string(), value.to_string()).is_some() {
            return Err(format!("duplicate feature {key:?}"));
        }
    }
    Ok(feats)
}

/// Serializes sentences as CoNLL-U, filling ID, FORM, LEMMA, UPOS and FEATS.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        let _ = writeln!(out, "# sent_id = {}", sentence.id);
        for (i, token) in sentence.tokens.iter().enumerate() {
            let feats = if token.feats.is_empty() {
                "_".to_string()
            } else {
                token
                    .feats
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join("|")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t{}\t_\t_\t_\t_",
                i + 1,
                token.form,
                token.lemma.as_deref().unwrap_or("_"),
                token.upos.as_deref().unwrap_or("_"),
                feats
            );
        }
        out.push('\n');
    }
    out
}

pub fn parse_wikiann(text: &str) -> Result<Vec<Sentence>> {
    parse_wikiann_named("wikiann", text)
}

/// Parses `token<TAB>tag` lines. A leading language prefix such as `hu:` is
/// stripped from the token.
pub fn parse_wikiann_named(source: &str, text: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(source, &mut sentences, &mut tokens);
            continue;
        }
        let (token, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected token<TAB>tag"))?;
        if tag.contains('\t') {
            return Err(Error::parse(lineno, "expected exactly two columns"));
        }
        let form = strip_language_prefix(token);
        if form.is_empty() {
            return Err(Error::parse(lineno, "empty token"));
        }
        if !is_bio_tag(tag) {
            return Err(Error::parse(lineno, format!("invalid BIO tag {tag:?}")));
        }
        tokens.push(Token::new(form).with_ner(tag));
    }
    flush(source, &mut sentences, &mut tokens);

    Ok(sentences)
}

fn strip_language_prefix(token: &str) -> &str {
    match token.split_once(':') {
        Some((prefix, rest))
            if (2..=3).contains(&prefix.len())
                && prefix.bytes().all(|b| b.is_ascii_lowercase())
                && !rest.is_empty() =>
        {
            rest
        }
        _ => token,
    }
}

/// `O`, or `B-TYPE` / `I-TYPE` with an upper-case ASCII type.
pub fn is_bio_tag(tag: &str) -> bool {
    if tag == "O" {
        return true;
    }
    match tag.split_once('-') {
        Some(("B" | "I", kind)) => !kind.is_empty() && kind.bytes().all(|b| b.is_ascii_uppercase()),
        _ => false,
    }
}

/// One instance per token with the given UPOS that carries `feature`.
pub fn extract_morph_instances(tb: &Treebank, feature: &str, upos: &str) -> Vec<ProbingInstance> {
    let mut out = Vec::new();
    for sentence in &tb.sentences {
        for (i, token) in sentence.tokens.iter().enumerate() {
            if token.upos.as_deref() != Some(upos) {
                continue;
            }
            if let Some(value) = token.feats.get(feature) {
                out.push(ProbingInstance {
                    sentence_id: sentence.id.clone(),
                    target_index: i,
                    label: value.clone(),
                    form: token.form.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SNIPPET: &str = "# sent_id = 1\n\
        # text = Talossa on\n\
        1\tTalossa\ttalo\tNOUN\t_\tCase=Ine|Number=Sing\t2\tobl\t_\t_\n\
        2\ton\tolla\tAUX\t_\tMood=Ind\t0\troot\t_\t_\n";

    #[test]
    fn empty_input() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_wikiann("").unwrap().is_empty());
    }

    #[test]
    fn parses_feats() {
        let sents = parse_conllu(SNIPPET).unwrap();
        assert_eq!(sents.len(), 1);
        let tok = &sents[0].tokens[0];
        assert_eq!(tok.form, "Talossa");
        assert_eq!(tok.lemma.as_deref(), Some("talo"));
        assert_eq!(tok.upos.as_deref(), Some("NOUN"));
        assert_eq!(tok.feats.len(), 2);
        assert_eq!(tok.feats["Case"], "Ine");
        assert_eq!(tok.feats["Number"], "Sing");
        assert_eq!(sents[0].tokens[1].feats["Mood"], "Ind");
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = "1-2\tvom\t_\t_\t_\t_\t_\t_\t_\t_\n\
            1\tvon\tvon\tADP\t_\t_\t2\tcase\t_\t_\n\
            2\tdem\tder\tDET\t_\t_\t0\troot\t_\t_\n\
            2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents[0].forms(), vec!["von", "dem"]);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = "1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_\n2\tb\tb\n";
        match parse_conllu(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_utf8_is_encoding_error() {
        let err = parse_conllu_bytes("x", &[0x31, 0x09, 0xff, 0xfe]).unwrap_err();
        assert!(matches!(err, Error::Encoding(_)));
    }

    #[test]
    fn duplicate_feature_rejected() {
        let text = "1\ta\ta\tNOUN\t_\tCase=Ine|Case=Ela\t0\troot\t_\t_\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn wikiann_prefix_and_tag() {
        let sents = parse_wikiann("hu:Budapest\tB-LOC\n").unwrap();
        assert_eq!(sents[0].tokens[0].form, "Budapest");
        assert_eq!(sents[0].tokens[0].ner.as_deref(), Some("B-LOC"));
    }

    #[test]
    fn wikiann_sentences_and_errors() {
        let text = "fi:Helsinki\tB-LOC\nfi:on\tO\n\nfi:Nokia\tB-ORG\n";
        assert_eq!(parse_wikiann(text).unwrap().len(), 2);
        assert!(parse_wikiann("foo\tB-loc\n").is_err());
        assert!(parse_wikiann("foo\tX\n").is_err());
        assert!(parse_wikiann("\tO\n").is_err());
        assert!(parse_wikiann("hu:\tO\n").is_ok()); // "hu:" has no remainder, kept verbatim
        // I-X after O is accepted at parse time
        assert!(parse_wikiann("a\tO\nb\tI-PER\n").is_ok());
    }

    #[test]
    fn morph_instances() {
        let tb = Treebank::new("fi", parse_conllu(SNIPPET).unwrap());
        let inst = extract_morph_instances(&tb, "Case", "NOUN");
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].label, "Ine");
        assert_eq!(inst[0].target_index, 0);
        assert_eq!(inst[0].form, "Talossa");

        assert!(extract_morph_instances(&tb, "Case", "VERB").is_empty());
        let verb = Treebank::new(
            "fi",
            vec![Sentence {
                id: "v".into(),
                tokens: vec![Token::new("x").with_upos("VERB").with_feat("Case", "Ine")],
            }],
        );
        assert!(extract_morph_instances(&verb, "Case", "NOUN").is_empty());
    }
}
