//! Binary checkpoint container.
//!
//! All integers little-endian, all reals IEEE-754 `f64` little-endian:
//!
//! ```text
//! magic      8 bytes   "RCNCKPT\0"
//! version    u32       1
//! config     u32 n, n bytes UTF-8 (key = value lines)
//! vocab      u32 count, then per token: u32 n, n bytes UTF-8
//! embeddings u32 rows, u32 dim, rows*dim f64
//! params     u32 count, then per tensor:
//!              u32 n, n bytes UTF-8 name
//!              u32 rank, rank x u64 dims
//!              prod(dims) f64, row-major
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use crate::model::Model;
use crate::tensor_math::Tensor;
use crate::text::{EmbeddingTable, Vocabulary};

use super::{TrainConfig, TrainError};

pub const MAGIC: &[u8; 8] = b"RCNCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub model: Model,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

fn put_reals<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b) as usize)
}

fn get_str<R: Read>(r: &mut R) -> Result<String, TrainError> {
    let n = get_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| TrainError::Checkpoint("invalid UTF-8".into()))
}

fn get_reals<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_str(&mut w, &self.config.to_text())?;
        put_u32(&mut w, self.vocab.len())?;
        for t in self.vocab.tokens() {
            put_str(&mut w, t)?;
        }
        put_u32(&mut w, self.embeddings.rows())?;
        put_u32(&mut w, self.embeddings.dim())?;
        put_reals(&mut w, self.embeddings.data())?;
        put_u32(&mut w, self.model.store.len())?;
        for p in self.model.store.iter() {
            put_str(&mut w, &p.name)?;
            put_u32(&mut w, p.value.shape().len())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            put_reals(&mut w, p.value.data())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    /// Rejects a wrong magic or version and any parameter whose name or shape
    /// differs from the layout implied by the stored config.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrainError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TrainError::Checkpoint("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)? as u32;
        if version != VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let config = TrainConfig::parse(&get_str(&mut r)?)?;
        let n_vocab = get_u32(&mut r)?;
        let tokens = (0..n_vocab)
            .map(|_| get_str(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocabulary::from_token_list(tokens);
        let rows = get_u32(&mut r)?;
        let dim = get_u32(&mut r)?;
        if rows != vocab.len() || dim != crate::text::EMBEDDING_DIM {
            return Err(TrainError::Checkpoint(format!(
                "embedding table {rows}x{dim} does not match vocabulary of {}",
                vocab.len()
            )));
        }
        let embeddings = EmbeddingTable::new(rows, get_reals(&mut r, rows * dim)?)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;

        let mut model = Model::new(config.model, 0);
        let count = get_u32(&mut r)?;
        if count != model.store.len() {
            return Err(TrainError::Checkpoint(format!(
                "{count} tensors stored, model expects {}",
                model.store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = get_str(&mut r)?;
            if name != model.store.name(id) {
                return Err(TrainError::Checkpoint(format!(
                    "expected tensor {:?}, found {name:?}",
                    model.store.name(id)
                )));
            }
            let rank = get_u32(&mut r)?;
            let shape = (0..rank)
                .map(|_| get_u64(&mut r))
                .collect::<io::Result<Vec<_>>>()?;
            if shape != model.store.get(id).shape() {
                return Err(TrainError::Checkpoint(format!(
                    "tensor {name:?} has shape {shape:?}, expected {:?}",
                    model.store.get(id).shape()
                )));
            }
            let n = shape.iter().product();
            *model.store.get_mut(id) =
                Tensor::new(shape, get_reals(&mut r, n)?).expect("shape checked");
        }
        Ok(Checkpoint {
            config,
            vocab,
            embeddings,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}
