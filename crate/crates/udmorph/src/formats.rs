//! Reading and writing the on-disk formats: CoNLL-U, word vectors,
//! contextual sidecars, masks, ensemble specs and category tables.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use udmorph_core::conllu::{parse_conllu, serialize_conllu, ConlluError, Corpus};
use udmorph_core::embeddings::{pool_subwords, ContextualSidecar, EmbeddingError, WordVectorTable};
use udmorph_core::ensemble::{EnsembleError, EnsembleSpec};
use udmorph_core::lemma_rules::RuleInventory;
use udmorph_core::merge::{MergeError, RestrictionMask};
use udmorph_core::tagset::{CategoryTable, TableError};

/// Magic bytes of a binary contextual sidecar.
pub const SIDECAR_MAGIC: &[u8; 4] = b"MFV1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Conllu {
        path: PathBuf,
        #[source]
        source: ConlluError,
    },
    #[error("word vectors line {line}: {message}")]
    WordVectors { line: usize, message: String },
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("sidecar: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Mask(#[from] MergeError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Table(#[from] TableError),
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_error(path))
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(io_error(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    fs::write(path, bytes).map_err(io_error(path))
}

/// Treebank id of a CoNLL-U path: the `UD_` directory name when present
/// (`UD_English-EWT/en_ewt-um-train.conllu` -> `English-EWT`), otherwise
/// the file stem.
pub fn treebank_id_of(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("UD_"))
        .map(str::to_string)
        .or_else(|| {
            path.file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn read_corpus(path: &Path, treebank_id: Option<&str>) -> Result<Corpus, FormatError> {
    let bytes = read_bytes(path)?;
    let id = treebank_id.map_or_else(|| treebank_id_of(path), str::to_string);
    parse_conllu(&bytes, &id).map_err(|source| FormatError::Conllu {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a corpus, putting `header` (a `#` comment) before the first
/// sentence's comments.
pub fn write_corpus(path: &Path, corpus: &Corpus, header: Option<&str>) -> Result<(), FormatError> {
    let mut corpus = corpus.clone();
    if let (Some(header), Some(first)) = (header, corpus.sentences.first_mut()) {
        first.comments.insert(0, header.to_string());
    }
    write_bytes(path, serialize_conllu(&corpus).as_bytes())
}

/// Reads the text word-vector format: a `count dim` header, then
/// `word v1 ... vdim` lines. Duplicate words keep their first vector.
pub fn read_word_vectors<R: Read>(reader: R) -> Result<WordVectorTable, FormatError> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    let bad = |line: usize, message: String| FormatError::WordVectors { line, message };
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .map_err(|e| bad(1, e.to_string()))?;
    let mut fields = header.split_whitespace();
    let parse_count = |field: Option<&str>, what: &str| -> Result<usize, FormatError> {
        field
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(1, format!("header needs `count dim`, bad {what}")))
    };
    let count = parse_count(fields.next(), "count")?;
    let dim = parse_count(fields.next(), "dimension")?;
    if dim == 0 || fields.next().is_some() {
        return Err(bad(1, "header needs `count dim`".into()));
    }
    let mut table = WordVectorTable::new(dim);
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line.map_err(|e| bad(number, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        let vector = parts
            .map(|v| {
                v.parse::<f32>()
                    .map_err(|_| bad(number, format!("invalid number `{v}`")))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        if vector.len() != dim {
            return Err(bad(
                number,
                format!("`{word}` has {} values, expected {dim}", vector.len()),
            ));
        }
        if !table
            .insert(word, vector)
            .map_err(|e| bad(number, e.to_string()))?
        {
            log::warn!("word vectors line {number}: duplicate `{word}` ignored");
        }
    }
    if seen != count {
        log::warn!("word vector header announces {count} words, file has {seen}");
    }
    Ok(table)
}

pub fn load_word_vectors(path: &Path) -> Result<WordVectorTable, FormatError> {
    read_word_vectors(fs::File::open(path).map_err(io_error(path))?)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(FormatError::Sidecar("truncated record".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<usize, FormatError> {
    let raw = take(bytes, 4)?;
    Ok(u32::from_le_bytes(raw.try_into().unwrap()) as usize)
}

/// Parses a sidecar: binary `MFV1` when the magic is present, otherwise the
/// TSV debug variant.
pub fn parse_sidecar(bytes: &[u8]) -> Result<ContextualSidecar, FormatError> {
    match bytes.strip_prefix(SIDECAR_MAGIC.as_slice()) {
        Some(body) => parse_binary_sidecar(body),
        None => {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| FormatError::Sidecar("neither MFV1 nor UTF-8 TSV".into()))?;
            parse_tsv_sidecar(text)
        }
    }
}

fn parse_binary_sidecar(mut body: &[u8]) -> Result<ContextualSidecar, FormatError> {
    let mut sidecar: Option<ContextualSidecar> = None;
    while !body.is_empty() {
        let id_len = take_u32(&mut body)?;
        let id = std::str::from_utf8(take(&mut body, id_len)?)
            .map_err(|_| FormatError::Sidecar("sentence id is not UTF-8".into()))?
            .to_string();
        let tokens = take_u32(&mut body)?;
        let dim = take_u32(&mut body)?;
        let sidecar = sidecar.get_or_insert_with(|| ContextualSidecar::new(dim));
        if dim != sidecar.dimension() {
            return Err(FormatError::Sidecar(format!(
                "sentence `{id}` has dimension {dim}, expected {}",
                sidecar.dimension()
            )));
        }
        let n = tokens
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FormatError::Sidecar("record too large".into()))?;
        let rows = take(&mut body, n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if sidecar.rows(&id).is_some() {
            return Err(FormatError::Sidecar(format!("duplicate sentence `{id}`")));
        }
        sidecar.insert(&id, rows)?;
    }
    sidecar.ok_or_else(|| FormatError::Sidecar("no sentences".into()))
}

/// TSV rows `sent_id<TAB>token_index<TAB>space-separated floats`, with
/// 1-based token indices. Several rows for one token are subword pieces and
/// are mean-pooled.
fn parse_tsv_sidecar(text: &str) -> Result<ContextualSidecar, FormatError> {
    struct Pending {
        id: String,
        pieces: Vec<Vec<f32>>,
        alignment: Vec<usize>,
    }
    let mut sidecar: Option<ContextualSidecar> = None;
    let mut pending: Option<Pending> = None;
    let flush = |sidecar: &mut Option<ContextualSidecar>, p: Pending| -> Result<(), FormatError> {
        let words = pool_subwords(&p.pieces, &p.alignment)?;
        let dim = words.first().map_or(0, Vec::len);
        let sidecar = sidecar.get_or_insert_with(|| ContextualSidecar::new(dim));
        if sidecar.rows(&p.id).is_some() {
            return Err(FormatError::Sidecar(format!(
                "sentence `{}` is not contiguous",
                p.id
            )));
        }
        sidecar.insert(&p.id, words.concat())?;
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let bad = |m: &str| FormatError::Sidecar(format!("line {}: {m}", i + 1));
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(index), Some(values), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three tab-separated fields"));
        };
        let index: usize = index.parse().map_err(|_| bad("invalid token index"))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f32>().map_err(|_| bad("invalid number")))
            .collect::<Result<Vec<f32>, _>>()?;
        if pending.as_ref().is_some_and(|p| p.id != id) {
            flush(&mut sidecar, pending.take().unwrap())?;
        }
        let p = pending.get_or_insert_with(|| Pending {
            id: id.to_string(),
            pieces: Vec::new(),
            alignment: Vec::new(),
        });
        match index {
            i if i == p.alignment.len() && i > 0 => *p.alignment.last_mut().unwrap() += 1,
            i if i == p.alignment.len() + 1 => p.alignment.push(1),
            _ => return Err(bad("token indices must be consecutive from 1")),
        }
        p.pieces.push(vector);
    }
    if let Some(p) = pending {
        flush(&mut sidecar, p)?;
    }
    sidecar.ok_or_else(|| FormatError::Sidecar("no sentences".into()))
}

pub fn write_binary_sidecar(sidecar: &ContextualSidecar) -> Vec<u8> {
    let dim = sidecar.dimension();
    let mut out = SIDECAR_MAGIC.to_vec();
    for id in sidecar.ids() {
        let rows = sidecar.rows(id).expect("listed id");
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&((rows.len() / dim) as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_tsv_sidecar(sidecar: &ContextualSidecar) -> String {
    let dim = sidecar.dimension();
    let mut out = String::new();
    for id in sidecar.ids() {
        for (t, row) in sidecar.rows(id).expect("listed id").chunks(dim).enumerate() {
            let values: Vec<String> = row.iter().map(f32::to_string).collect();
            out.push_str(&format!("{id}\t{}\t{}\n", t + 1, values.join(" ")));
        }
    }
    out
}

/// Loads and unions sidecar files; they must share one dimension.
pub fn load_sidecars(paths: &[PathBuf]) -> Result<Option<ContextualSidecar>, FormatError> {
    let mut merged: Option<ContextualSidecar> = None;
    for path in paths {
        let part = parse_sidecar(&read_bytes(path)?)?;
        let target = merged.get_or_insert_with(|| ContextualSidecar::new(part.dimension()));
        if target.dimension() != part.dimension() {
            return Err(FormatError::Sidecar(format!(
                "{}: dimension {} differs from {}",
                path.display(),
                part.dimension(),
                target.dimension()
            )));
        }
        for id in part.ids() {
            target.insert(id, part.rows(id).unwrap().to_vec())?;
        }
    }
    Ok(merged)
}

pub fn load_mask(path: &Path) -> Result<RestrictionMask, FormatError> {
    Ok(RestrictionMask::from_text(&read_text(path)?)?)
}

pub fn load_ensemble_spec(path: &Path) -> Result<EnsembleSpec, FormatError> {
    Ok(EnsembleSpec::from_text(&read_text(path)?)?)
}

pub fn load_category_table(path: Option<&Path>) -> Result<CategoryTable, FormatError> {
    match path {
        None => Ok(CategoryTable::unimorph()),
        Some(path) => Ok(CategoryTable::from_tsv(&read_text(path)?)?),
    }
}

/// `rule<TAB>count` lines, most frequent first.
pub fn write_rule_inventory<W: Write>(mut out: W, inventory: &RuleInventory) -> io::Result<()> {
    for (rule, count) in &inventory.entries {
        writeln!(out, "{rule}\t{count}")?;
    }
    Ok(())
}
