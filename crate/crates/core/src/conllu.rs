//! CoNLL-U data model, reader and writer.
//!
//! Only columns 2 (form), 3 (lemma) and 6 (feature bundle) are interpreted.
//! Every other column is carried as an opaque string, and multiword range
//! lines (`1-2`) as well as empty nodes (`1.1`) are kept verbatim without
//! becoming prediction targets.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::tagset::{BundleError, FeatureBundle};

/// Number of tab-separated columns on a token line.
pub const COLUMN_COUNT: usize = 10;

const FORM: usize = 1;
const LEMMA: usize = 2;
const FEATS: usize = 5;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ConlluError {
    #[error("line {line}: invalid UTF-8")]
    Encoding { line: usize },
    #[error("line {line}: expected {COLUMN_COUNT} tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: invalid token index `{index}`")]
    Index { line: usize, index: String },
    #[error("line {line}: token index {found} is out of sequence (expected {expected})")]
    Sequence {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: empty word form")]
    EmptyForm { line: usize },
    #[error("line {line}: {source}")]
    Bundle { line: usize, source: BundleError },
    #[error("line {line}: comment after the first token line")]
    MisplacedComment { line: usize },
}

/// A regular (integer-indexed) token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    index: usize,
    form: String,
    lemma: Option<String>,
    bundle: Option<FeatureBundle>,
    raw_columns: [String; COLUMN_COUNT],
}

impl Token {
    /// Builds a token from scratch; columns other than form, lemma and
    /// features are set to `_`.
    pub fn new(
        index: usize,
        form: impl Into<String>,
        lemma: Option<String>,
        bundle: Option<FeatureBundle>,
    ) -> Self {
        let form = form.into();
        let mut raw_columns: [String; COLUMN_COUNT] = Default::default();
        for column in raw_columns.iter_mut() {
            *column = "_".to_owned();
        }
        raw_columns[0] = index.to_string();
        raw_columns[FORM] = form.clone();
        let mut token = Token {
            index,
            form,
            lemma: None,
            bundle: None,
            raw_columns,
        };
        token.set_lemma(lemma);
        token.set_bundle(bundle);
        token
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn form(&self) -> &str {
        &self.form
    }

    pub fn lemma(&self) -> Option<&str> {
        self.lemma.as_deref()
    }

    pub fn bundle(&self) -> Option<&FeatureBundle> {
        self.bundle.as_ref()
    }

    pub fn raw_columns(&self) -> &[String; COLUMN_COUNT] {
        &self.raw_columns
    }

    /// Replaces the lemma and its column; `None` writes `_`.
    pub fn set_lemma(&mut self, lemma: Option<String>) {
        self.raw_columns[LEMMA] = lemma.clone().unwrap_or_else(|| "_".to_owned());
        self.lemma = lemma;
    }

    /// Replaces the feature bundle and its column; `None` writes `_`.
    pub fn set_bundle(&mut self, bundle: Option<FeatureBundle>) {
        self.raw_columns[FEATS] = bundle
            .as_ref()
            .map(|b| b.canonical_text().to_owned())
            .unwrap_or_else(|| "_".to_owned());
        self.bundle = bundle;
    }

    fn from_columns(columns: [String; COLUMN_COUNT], line: usize) -> Result<Self, ConlluError> {
        let index = columns[0]
            .parse::<usize>()
            .ok()
            .filter(|&i| i > 0)
            .ok_or_else(|| ConlluError::Index {
                line,
                index: columns[0].clone(),
            })?;
        let form = columns[FORM].clone();
        if form.is_empty() {
            return Err(ConlluError::EmptyForm { line });
        }
        let lemma = match columns[LEMMA].as_str() {
            "_" if form != "_" => None,
            "" => None,
            text => Some(text.to_owned()),
        };
        let bundle = match columns[FEATS].as_str() {
            "_" | "" => None,
            text => Some(
                FeatureBundle::parse(text)
                    .map_err(|source| ConlluError::Bundle { line, source })?,
            ),
        };
        Ok(Token {
            index,
            form,
            lemma,
            bundle,
            raw_columns: columns,
        })
    }

    fn write_line(&self, out: &mut String) {
        write_columns(&self.raw_columns, out);
    }
}

fn write_columns(columns: &[String], out: &mut String) {
    for (i, column) in columns.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        out.push_str(column);
    }
    out.push('\n');
}

/// A range (`1-2`) or empty-node (`1.1`) line kept verbatim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtraLine {
    /// Number of regular tokens that precede this line in the sentence.
    pub position: usize,
    pub raw: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub extra_lines: Vec<ExtraLine>,
}

impl Sentence {
    /// Builds a sentence of fresh tokens from `(form, lemma, bundle)` triples.
    pub fn from_tokens<I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = (String, Option<String>, Option<FeatureBundle>)>,
    {
        let tokens = tokens
            .into_iter()
            .enumerate()
            .map(|(i, (form, lemma, bundle))| Token::new(i + 1, form, lemma, bundle))
            .collect();
        Sentence {
            comments: Vec::new(),
            tokens,
            extra_lines: Vec::new(),
        }
    }

    /// The value of a `# sent_id = ...` comment, if present.
    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|comment| {
            let rest = comment.strip_prefix('#')?.trim_start();
            let rest = rest
                .strip_prefix("sent_id")
                .or_else(|| rest.strip_prefix("sent-id"))?;
            Some(rest.trim_start().strip_prefix('=')?.trim())
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn write(&self, out: &mut String) {
        for comment in &self.comments {
            out.push_str(comment);
            out.push('\n');
        }
        let mut extra = self.extra_lines.iter().peekable();
        for (i, token) in self.tokens.iter().enumerate() {
            while let Some(line) = extra.next_if(|line| line.position <= i) {
                out.push_str(&line.raw);
                out.push('\n');
            }
            token.write_line(out);
        }
        for line in extra {
            out.push_str(&line.raw);
            out.push('\n');
        }
        out.push('\n');
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub treebank_id: String,
    pub language_id: String,
}

impl Corpus {
    pub fn new(treebank_id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        let treebank_id = treebank_id.into();
        Corpus {
            language_id: language_of(&treebank_id).to_owned(),
            treebank_id,
            sentences,
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Language part of a shared-task treebank id (`English-EWT` -> `English`).
pub fn language_of(treebank_id: &str) -> &str {
    treebank_id.split('-').next().unwrap_or(treebank_id)
}

/// Parses a CoNLL-U document.
pub fn parse_conllu(input: &[u8], treebank_id: &str) -> Result<Corpus, ConlluError> {
    let text = core::str::from_utf8(input).map_err(|e| {
        let line = input[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        ConlluError::Encoding { line }
    })?;
    parse_conllu_str(text, treebank_id)
}

pub fn parse_conllu_str(text: &str, treebank_id: &str) -> Result<Corpus, ConlluError> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut started = false;

    for (i, line) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            if started {
                sentences.push(core::mem::take(&mut current));
                started = false;
            }
            continue;
        }
        started = true;
        if line.starts_with('#') {
            if !current.tokens.is_empty() || !current.extra_lines.is_empty() {
                return Err(ConlluError::MisplacedComment { line: line_no });
            }
            current.comments.push(line.to_owned());
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != COLUMN_COUNT {
            return Err(ConlluError::ColumnCount {
                line: line_no,
                found: fields.len(),
            });
        }
        if fields[0].contains('-') || fields[0].contains('.') {
            current.extra_lines.push(ExtraLine {
                position: current.tokens.len(),
                raw: line.to_owned(),
            });
            continue;
        }
        let columns: [String; COLUMN_COUNT] = core::array::from_fn(|c| fields[c].to_owned());
        let token = Token::from_columns(columns, line_no)?;
        let expected = current.tokens.len() + 1;
        if token.index != expected {
            return Err(ConlluError::Sequence {
                line: line_no,
                expected,
                found: token.index,
            });
        }
        current.tokens.push(token);
    }
    if started {
        sentences.push(current);
    }

    Ok(Corpus::new(treebank_id, sentences))
}

/// Serializes a corpus with LF line endings and a blank line after every
/// sentence.
pub fn serialize_conllu(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        sentence.write(&mut out);
    }
    out
}

/// Comment line announcing the tool that wrote a file.
pub fn provenance_comment(fields: &[(&str, &str)]) -> String {
    let mut comment = "# generated-by =".to_owned();
    for (key, value) in fields {
        comment.push_str(&format!(" {key}={value}"));
    }
    comment
}
