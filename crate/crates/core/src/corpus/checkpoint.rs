//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "SEQDIVCK"
//! version   u32
//! config    u32 vocab_size, u32 embed_dim, u32 hidden_dim,
//!           u8 attention (0 none, 1 single, 2 multi), u32 heads,
//!           u8 tie_output_embeddings, u8 decoder_only
//! vocab     u32 count, then per token: u32 byte length, UTF-8 bytes
//! params    u32 count, then per parameter: u32 name length, name,
//!           u32 rows, u32 cols, rows*cols f64
//! checksum  32 bytes SHA-256 of everything above
//! ```

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{AttentionMode, Init, ModelConfig, Seq2SeqModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEQDIVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

pub fn save_checkpoint(model: &Seq2SeqModel, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let cfg = model.config();
    if vocab.len() != cfg.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;

    out.write_u32::<LittleEndian>(cfg.vocab_size as u32)?;
    out.write_u32::<LittleEndian>(cfg.embed_dim as u32)?;
    out.write_u32::<LittleEndian>(cfg.hidden_dim as u32)?;
    let (kind, heads) = match cfg.attention {
        AttentionMode::None => (0u8, 0u32),
        AttentionMode::Single => (1, 1),
        AttentionMode::Multi(k) => (2, k as u32),
    };
    out.write_u8(kind)?;
    out.write_u32::<LittleEndian>(heads)?;
    out.write_u8(cfg.tie_output_embeddings as u8)?;
    out.write_u8(cfg.decoder_only as u8)?;

    out.write_u32::<LittleEndian>(vocab.len() as u32)?;
    for tok in vocab.tokens() {
        out.write_u32::<LittleEndian>(tok.len() as u32)?;
        out.extend_from_slice(tok.as_bytes());
    }

    let params = model.params();
    out.write_u32::<LittleEndian>(params.len() as u32)?;
    for (_, p) in params.iter() {
        out.write_u32::<LittleEndian>(p.name.len() as u32)?;
        out.extend_from_slice(p.name.as_bytes());
        out.write_u32::<LittleEndian>(p.value.rows() as u32)?;
        out.write_u32::<LittleEndian>(p.value.cols() as u32)?;
        for &v in p.value.data() {
            out.write_f64::<LittleEndian>(v)?;
        }
    }

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn offset(&self) -> u64 {
        self.cur.position()
    }

    fn truncated(&self) -> Error {
        Error::Corruption {
            offset: self.offset(),
            detail: "unexpected end of data".into(),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated())
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| self.truncated())
    }

    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|_| self.truncated())
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let remaining = self.cur.get_ref().len() as u64 - self.offset();
        if (n as u64) > remaining {
            return Err(self.truncated());
        }
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf).map_err(|_| self.truncated())?;
        Ok(buf)
    }

    fn string(&mut self) -> Result<String> {
        let at = self.offset();
        let len = self.u32()? as usize;
        String::from_utf8(self.bytes(len)?).map_err(|_| Error::Corruption {
            offset: at,
            detail: "invalid UTF-8 string".into(),
        })
    }

    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corruption {
            offset: self.offset(),
            detail: detail.into(),
        }
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(Seq2SeqModel, Vocabulary)> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
    };
    let magic = r.bytes(CHECKPOINT_MAGIC.len())?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Corruption {
            offset: 0,
            detail: "bad magic header".into(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let vocab_size = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let kind = r.u8()?;
    let heads = r.u32()? as usize;
    let attention = match kind {
        0 => AttentionMode::None,
        1 => AttentionMode::Single,
        2 => AttentionMode::Multi(heads),
        other => return Err(r.corrupt(format!("unknown attention kind {other}"))),
    };
    let tie_output_embeddings = r.u8()? != 0;
    let decoder_only = r.u8()? != 0;
    let config = ModelConfig {
        vocab_size,
        embed_dim,
        hidden_dim,
        attention,
        tie_output_embeddings,
        decoder_only,
    };
    config.validate().map_err(|e| r.corrupt(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        tokens.push(r.string()?);
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| r.corrupt(e.to_string()))?;
    if vocab.len() != vocab_size {
        return Err(r.corrupt("vocabulary size disagrees with config"));
    }

    let mut model = Seq2SeqModel::with_init(config, Init::Zeros)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(r.corrupt(format!(
            "expected {} parameters, found {count}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| r.corrupt(format!("unexpected parameter '{name}'")))?;
        if model.params().value(id).shape() != [rows, cols] {
            return Err(r.corrupt(format!("parameter '{name}' has shape [{rows}, {cols}]")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        model.params_mut().get_mut(id).value = Tensor::new(rows, cols, data)?;
    }

    let body_end = r.offset() as usize;
    let stored = r.bytes(CHECKSUM_LEN)?;
    if Sha256::digest(&bytes[..body_end]).as_slice() != stored.as_slice() {
        return Err(Error::Corruption {
            offset: body_end as u64,
            detail: "checksum mismatch".into(),
        });
    }
    if r.offset() as usize != bytes.len() {
        return Err(r.corrupt("trailing bytes after checksum"));
    }
    Ok((model, vocab))
}
