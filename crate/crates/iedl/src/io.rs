//! Model files: the bytes `IEDL`, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header (config, vocabularies and
//! parameter shapes), then every parameter block in declared order as
//! little-endian f64 values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use vlnie_core::{Error, Result};

use crate::model::{Model, ModelConfig, ParamSpec, Vocabulary};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 4] = b"IEDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    params: Vec<ParamSpec>,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        params: model.specs().to_vec(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |msg: &str| Error::Validation(format!("model file: {msg}"));
    let mut rest = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| bad("header length overflows"))?;
    let header: Header = serde_json::from_slice(take(header_len)?)
        .map_err(|e| bad(&format!("header: {e}")))?;
    let mut params = Vec::with_capacity(header.params.len());
    for spec in &header.params {
        let n = spec.rows.checked_mul(spec.cols).ok_or_else(|| bad("shape overflows"))?;
        let raw = take(n.checked_mul(8).ok_or_else(|| bad("shape overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Mat::from_vec(spec.rows, spec.cols, data));
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let model = Model::from_parts(header.config, header.vocab, params)?;
    if model.specs() != header.params.as_slice() {
        return Err(bad("parameter names disagree with the config"));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
