//! Binary checkpoint: magic, version, JSON header, raw little-endian `f64`s.
//!
//! ```text
//! b"ATTNCKPT" | u32 version | u64 header_len | header JSON | f64 data...
//! ```
//! The header carries dims, the vocabulary, free-form metadata and the
//! name and shape of each tensor in storage order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{Dims, ModelError, ModelParams, ParamId, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ATTNCKPT";
const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Dims,
    vocab: Vec<String>,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let dims = *ckpt.params.dims();
    if ckpt.vocab.len() != dims.vocab {
        return Err(CheckpointError::Header(format!(
            "vocabulary has {} tokens but dims say {}",
            ckpt.vocab.len(),
            dims.vocab
        )));
    }
    let header = Header {
        dims,
        vocab: ckpt.vocab.tokens().to_vec(),
        metadata: ckpt.metadata.clone(),
        tensors: ParamId::ALL
            .iter()
            .map(|p| TensorEntry {
                name: p.name().to_string(),
                shape: p.shape(&dims),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for t in ckpt.params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(CheckpointError::Header(format!("header length {len} too large")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let dims = header.dims;
    if header.tensors.len() != ParamId::ALL.len() {
        return Err(CheckpointError::Header(format!(
            "expected {} tensors, found {}",
            ParamId::ALL.len(),
            header.tensors.len()
        )));
    }
    let mut tensors = Vec::with_capacity(ParamId::ALL.len());
    for (p, entry) in ParamId::ALL.iter().zip(&header.tensors) {
        if entry.name != p.name() || entry.shape != p.shape(&dims) {
            return Err(CheckpointError::Header(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name,
                entry.shape,
                p.name(),
                p.shape(&dims)
            )));
        }
        let n = entry.shape[0] * entry.shape[1];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        tensors.push(Tensor::new(entry.shape.to_vec(), data).map_err(ModelError::from)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Header("trailing bytes after tensor data".into()));
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    if vocab.len() != dims.vocab {
        return Err(CheckpointError::Header("vocabulary size does not match dims".into()));
    }
    Ok(Checkpoint {
        params: ModelParams::from_tensors(dims, tensors)?,
        vocab,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ckpt() -> Checkpoint {
        let dims = Dims {
            vocab: 5,
            embed: 3,
            hidden: 4,
            feature: 2,
            grid_side: 2,
        };
        let mut metadata = BTreeMap::new();
        metadata.insert("seed".to_string(), "7".to_string());
        Checkpoint {
            params: ModelParams::random(dims, 0.1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap(),
            vocab: Vocab::from_tokens(["<bos>", "<eos>", "a", "box", "red"].map(String::from).to_vec()).unwrap(),
            metadata,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.tensors().iter().zip(c.params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::BadMagic)));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::Version(9))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(short), Err(CheckpointError::Io(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(long.as_slice()), Err(CheckpointError::Header(_))));
    }
}
