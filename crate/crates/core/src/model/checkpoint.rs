use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, FormatError, Result};
use crate::nn::{Matrix, ParamStore};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Header, JSON config echo, then named `f64` tensors (all little-endian).
pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::Config(format!("config does not serialise: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version(version).into());
    }
    r.u16()?;
    let len = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| FormatError::Malformed(format!("config: {e}")))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()?;
        let cols = r.u32()?;
        let data = r
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        store.insert(name, Matrix::from_vec(rows, cols, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos).into());
    }
    Model::from_parts(config, store)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_preserves_every_tensor() {
        let model = Model::<f64>::new(ModelConfig::desk(Variant::Cmert), 5).unwrap();
        let back: Model<f64> = decode_checkpoint(&encode_checkpoint(&model).unwrap()).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn loads_as_f32() {
        let model = Model::<f64>::new(ModelConfig::desk(Variant::Lstr), 5).unwrap();
        let back: Model<f32> = decode_checkpoint(&encode_checkpoint(&model).unwrap()).unwrap();
        assert_eq!(back.params().num_scalars(), model.params().num_scalars());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = Model::<f64>::new(ModelConfig::desk(Variant::Lstr), 5).unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(decode_checkpoint::<f64>(&bad).is_err());
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
