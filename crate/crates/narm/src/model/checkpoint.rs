//! Versioned binary checkpoint format. Little-endian throughout:
//!
//! ```text
//! magic "NARM" | version u32 | n_blocks u32
//! per block: name_len u32 | name bytes | rows u64 | cols u64 | rows·cols f64
//! config echo: vocab_size u64 | embedding_dim u64 | hidden_dim u64 |
//!              truncation u64 | feature u8 | normalize u8 | biases u8 |
//!              reserved u8 | dropout_embed f64 | dropout_repr f64
//! ```
//!
//! Floats are stored as raw bits, so save → load round-trips bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NarmConfig, NarmParams, SessionFeature};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"NARM";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn checkpoint_bytes(params: &NarmParams, config: &NarmConfig) -> Vec<u8> {
    let blocks = params.blocks();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, blocks.len() as u32);
    for (name, block) in blocks {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, block.rows() as u64);
        put_u64(&mut out, block.cols() as u64);
        for &v in block.as_slice() {
            put_f64(&mut out, v);
        }
    }
    put_u64(&mut out, config.vocab_size as u64);
    put_u64(&mut out, config.embedding_dim as u64);
    put_u64(&mut out, config.hidden_dim as u64);
    put_u64(&mut out, config.truncation as u64);
    out.push(match config.feature {
        SessionFeature::Global => 0,
        SessionFeature::Local => 1,
        SessionFeature::Hybrid => 2,
    });
    out.push(config.normalize_attention as u8);
    out.push(config.use_biases as u8);
    out.push(0); // reserved
    put_f64(&mut out, config.dropout_embed);
    put_f64(&mut out, config.dropout_repr);
    out
}

pub fn save_checkpoint(path: &Path, params: &NarmParams, config: &NarmConfig) -> Result<()> {
    fs::write(path, checkpoint_bytes(params, config))?;
    Ok(())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(NarmParams, NarmConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n_blocks = r.u32()? as usize;
    let mut blocks: Vec<(String, Matrix)> = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        blocks.push((name, Matrix::from_vec(rows, cols, data)));
    }

    let vocab_size = r.u64()? as usize;
    let embedding_dim = r.u64()? as usize;
    let hidden_dim = r.u64()? as usize;
    let truncation = r.u64()? as usize;
    let feature = match r.u8()? {
        0 => SessionFeature::Global,
        1 => SessionFeature::Local,
        2 => SessionFeature::Hybrid,
        other => return Err(Error::Checkpoint(format!("unknown feature tag {other}"))),
    };
    let normalize_attention = r.u8()? != 0;
    let use_biases = r.u8()? != 0;
    let _reserved = r.u8()?;
    let dropout_embed = r.f64()?;
    let dropout_repr = r.f64()?;
    if !r.done() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after config echo",
            bytes.len() - r.pos
        )));
    }

    let config = NarmConfig {
        vocab_size,
        embedding_dim,
        hidden_dim,
        truncation,
        feature,
        normalize_attention,
        use_biases,
        dropout_embed,
        dropout_repr,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("config echo invalid: {e}")))?;

    let params = assemble(blocks, &config)?;
    Ok((params, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(NarmParams, NarmConfig)> {
    parse_checkpoint(&fs::read(path)?)
}

fn assemble(blocks: Vec<(String, Matrix)>, config: &NarmConfig) -> Result<NarmParams> {
    let (m, d, h) = (config.vocab_size, config.embedding_dim, config.hidden_dim);
    let ctx = config.context_dim();

    let mut expected: Vec<(&str, (usize, usize))> = vec![
        ("emb", (m + 1, d)),
        ("w_update", (h, d)),
        ("u_update", (h, h)),
        ("w_reset", (h, d)),
        ("u_reset", (h, h)),
        ("w_cand", (h, d)),
        ("u_cand", (h, h)),
    ];
    if config.use_biases {
        expected.extend([("b_update", (h, 1)), ("b_reset", (h, 1)), ("b_cand", (h, 1))]);
    }
    if config.feature.uses_local() {
        expected.extend([
            ("att_session", (h, h)),
            ("att_item", (h, h)),
            ("att_v", (h, 1)),
        ]);
    }
    expected.push(("decoder", (d, ctx)));

    if blocks.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter blocks for this config, file has {}",
            expected.len(),
            blocks.len()
        )));
    }
    let mut iter = blocks.into_iter();
    let mut take = |want_name: &str, want_shape: (usize, usize)| -> Result<Matrix> {
        let (name, matrix) = iter.next().unwrap();
        if name != want_name {
            return Err(Error::Checkpoint(format!(
                "block order mismatch: expected '{want_name}', found '{name}'"
            )));
        }
        if matrix.shape() != want_shape {
            return Err(Error::Checkpoint(format!(
                "block '{name}' has shape {:?}, expected {:?}",
                matrix.shape(),
                want_shape
            )));
        }
        Ok(matrix)
    };

    let mut result = NarmParams {
        emb: take("emb", (m + 1, d))?,
        w_update: take("w_update", (h, d))?,
        u_update: take("u_update", (h, h))?,
        w_reset: take("w_reset", (h, d))?,
        u_reset: take("u_reset", (h, h))?,
        w_cand: take("w_cand", (h, d))?,
        u_cand: take("u_cand", (h, h))?,
        b_update: None,
        b_reset: None,
        b_cand: None,
        att_session: None,
        att_item: None,
        att_v: None,
        decoder: Matrix::zeros(1, 1),
    };
    if config.use_biases {
        result.b_update = Some(take("b_update", (h, 1))?);
        result.b_reset = Some(take("b_reset", (h, 1))?);
        result.b_cand = Some(take("b_cand", (h, 1))?);
    }
    if config.feature.uses_local() {
        result.att_session = Some(take("att_session", (h, h))?);
        result.att_item = Some(take("att_item", (h, h))?);
        result.att_v = Some(take("att_v", (h, 1))?);
    }
    result.decoder = take("decoder", (d, ctx))?;
    Ok(result)
}
