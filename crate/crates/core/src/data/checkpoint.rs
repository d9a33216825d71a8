//! Binary checkpoint container.
//!
//! Layout: the magic bytes `MEDSYNTH1`, a newline, a single-line JSON header,
//! a newline, then every parameter block in header order as little-endian
//! `f64` values (row-major).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataKind;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"MEDSYNTH1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBlock {
    pub name: String,
    pub value: Matrix,
}

/// Everything a model needs to be rebuilt: identity, vocabulary, the
/// configuration it was trained with, and its parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub kind: DataKind,
    pub codes: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub blocks: Vec<CheckpointBlock>,
}

#[derive(Serialize, Deserialize)]
struct BlockSpec {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: String,
    kind: DataKind,
    dims: usize,
    codes: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    blocks: Vec<BlockSpec>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.value)
            .ok_or_else(|| Error::Format(format!("missing parameter block `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            kind: self.kind,
            dims: self.codes.len(),
            codes: self.codes.clone(),
            seed: self.seed,
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSpec {
                    name: b.name.clone(),
                    rows: b.value.rows(),
                    cols: b.value.cols(),
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(b'\n');
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for b in &self.blocks {
            for v in b.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 10];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for magic string".into()))?;
        if &magic[..9] != CHECKPOINT_MAGIC || magic[9] != b'\n' {
            return Err(Error::Format("bad magic string, not a checkpoint".into()));
        }
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)
            .map_err(|e| Error::io("reading checkpoint header", e))?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&line)
            .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if header.dims != header.codes.len() {
            return Err(Error::Format("header dims disagree with code list".into()));
        }
        let mut blocks = Vec::with_capacity(header.blocks.len());
        let mut buf = [0u8; 8];
        for spec in header.blocks {
            let mut data = Vec::with_capacity(spec.rows * spec.cols);
            for _ in 0..spec.rows * spec.cols {
                r.read_exact(&mut buf).map_err(|_| {
                    Error::Format(format!("truncated parameter block `{}`", spec.name))
                })?;
                data.push(f64::from_le_bytes(buf));
            }
            blocks.push(CheckpointBlock {
                name: spec.name,
                value: Matrix::from_vec(spec.rows, spec.cols, data)?,
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)
            .map_err(|e| Error::io("reading checkpoint", e))?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last block",
                rest.len()
            )));
        }
        Ok(Checkpoint {
            model: header.model,
            kind: header.kind,
            codes: header.codes,
            seed: header.seed,
            config: header.config,
            blocks,
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Checkpoint::from_reader(f)
}
