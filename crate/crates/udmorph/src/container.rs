//! The `MFM1` model container.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "MFM1" version
//! len provenance-bytes
//! len metadata-bytes          (config and vocabularies, UTF-8 text)
//! tensor-count
//!   { len name-bytes rows cols f32[rows*cols] }*
//! sha256(everything above)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;
use udmorph_core::model::{ModelError, Parameters, TaggerModel, Tensor};

use crate::formats::{read_bytes, write_bytes, FormatError};

pub const MAGIC: &[u8; 4] = b"MFM1";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,
    #[error("unsupported container version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// A loaded model and the provenance line it was saved with.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: TaggerModel,
    pub provenance: String,
}

fn push_u32(out: &mut Vec<u8>, value: usize) {
    out.extend_from_slice(&u32::try_from(value).expect("fits in u32").to_le_bytes());
}

fn push_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    push_u32(out, bytes.len());
    out.extend_from_slice(bytes);
}

pub fn encode(model: &TaggerModel, provenance: &str) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_bytes(&mut out, provenance.as_bytes());
    push_bytes(&mut out, model.metadata_text().as_bytes());
    let tensors = &model.params().tensors;
    push_u32(&mut out, tensors.len());
    for tensor in tensors {
        push_bytes(&mut out, tensor.name.as_bytes());
        push_u32(&mut out, tensor.rows);
        push_u32(&mut out, tensor.cols);
        for &v in &tensor.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() < n {
            return Err(ContainerError::Malformed("unexpected end of data".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, ContainerError> {
        Ok(self.u32()? as usize)
    }

    fn text(&mut self) -> Result<&'a str, ContainerError> {
        let n = self.len()?;
        std::str::from_utf8(self.take(n)?)
            .map_err(|_| ContainerError::Malformed("text is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<LoadedModel, ContainerError> {
    if !bytes.starts_with(MAGIC) {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(ContainerError::Checksum);
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(ContainerError::Checksum);
    }
    let mut reader = Reader {
        bytes: &body[MAGIC.len()..],
    };
    let version = reader.u32()?;
    if version != VERSION {
        return Err(ContainerError::Version { found: version });
    }
    let provenance = reader.text()?.to_string();
    let (config, vocab) = TaggerModel::parse_metadata(reader.text()?)?;
    let count = reader.len()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = reader.text()?.to_string();
        let rows = reader.len()?;
        let cols = reader.len()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ContainerError::Malformed(format!("tensor `{name}` too large")))?;
        let data = reader
            .take(n)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push(Tensor {
            name,
            rows,
            cols,
            data,
        });
    }
    if !reader.bytes.is_empty() {
        return Err(ContainerError::Malformed("trailing bytes".into()));
    }
    let model = TaggerModel::from_parts(config, vocab, Parameters { tensors })?;
    Ok(LoadedModel { model, provenance })
}

pub fn save_model(
    path: &Path,
    model: &TaggerModel,
    provenance: &str,
) -> Result<(), ContainerError> {
    Ok(write_bytes(path, &encode(model, provenance))?)
}

pub fn load_model(path: &Path) -> Result<LoadedModel, ContainerError> {
    decode(&read_bytes(path)?)
}
