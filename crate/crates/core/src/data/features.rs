use std::fs;
use std::path::Path;

use super::FeatureStream;
use crate::error::{Error, FormatError, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: [u8; 4] = *b"OSDF";
pub const FEATURE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
const FPS_LEN: usize = 8;

/// Encodes a stream as header, little-endian `f32` payload and trailing `f64` fps.
pub fn encode_feature_stream<T: Scalar>(stream: &FeatureStream<T>) -> Result<Vec<u8>> {
    stream.validate()?;
    let n = u32::try_from(stream.len())
        .map_err(|_| Error::Data(format!("{}: too many frames", stream.video_id)))?;
    let d_slow = u16::try_from(stream.d_slow)
        .map_err(|_| Error::Data("d_slow exceeds u16".into()))?;
    let d_fast = u16::try_from(stream.d_fast)
        .map_err(|_| Error::Data("d_fast exceeds u16".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stream.frames.as_slice().len() + FPS_LEN);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d_slow.to_le_bytes());
    out.extend_from_slice(&d_fast.to_le_bytes());
    for v in stream.frames.as_slice() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.extend_from_slice(&stream.feature_fps.to_le_bytes());
    Ok(out)
}

pub fn decode_feature_stream<T: Scalar>(
    video_id: impl Into<String>,
    bytes: &[u8],
) -> Result<FeatureStream<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != FEATURE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        }
        .into());
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != FEATURE_VERSION {
        return Err(FormatError::Version(version).into());
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d_slow = u16_at(12) as usize;
    let d_fast = u16_at(14) as usize;
    let declared = n * (d_slow + d_fast) * 4;

    if bytes.len() < HEADER_LEN + FPS_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN + declared + FPS_LEN,
            found: bytes.len(),
        }
        .into());
    }
    let payload = bytes.len() - HEADER_LEN - FPS_LEN;
    if payload != declared {
        let row_bytes = 4 * n;
        if n > 0 && payload % row_bytes == 0 {
            return Err(FormatError::InconsistentDims {
                d_slow,
                d_fast,
                d_total: payload / row_bytes,
            }
            .into());
        }
        if payload < declared {
            return Err(FormatError::Truncated {
                expected: HEADER_LEN + declared + FPS_LEN,
                found: bytes.len(),
            }
            .into());
        }
        return Err(FormatError::TrailingBytes(payload - declared).into());
    }

    let data: Vec<T> = bytes[HEADER_LEN..HEADER_LEN + payload]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let fps = f64::from_le_bytes(bytes[HEADER_LEN + payload..].try_into().expect("8 bytes"));
    if !(fps > 0.0) {
        return Err(FormatError::Malformed(format!("feature fps {fps}")).into());
    }
    let frames = Matrix::from_vec(n, d_slow + d_fast, data)?;
    FeatureStream::new(video_id, frames, fps, d_slow, d_fast)
}

pub fn write_feature_stream<T: Scalar>(stream: &FeatureStream<T>, path: &Path) -> Result<()> {
    let bytes = encode_feature_stream(stream)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a feature file; the video id is the file stem.
pub fn read_feature_stream<T: Scalar>(path: &Path) -> Result<FeatureStream<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_feature_stream(id, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(n: usize, d_slow: usize, d_fast: usize, seed: u64) -> FeatureStream<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * (d_slow + d_fast))
            .map(|_| rng.gen_range(-3.0f32..3.0) as f64)
            .collect();
        FeatureStream::new(
            "vid",
            Matrix::from_vec(n, d_slow + d_fast, data).unwrap(),
            3.125,
            d_slow,
            d_fast,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = random_stream(20, 12, 4, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.osdf");
        write_feature_stream(&s, &path).unwrap();
        let back: FeatureStream<f64> = read_feature_stream(&path).unwrap();
        assert_eq!(back, s);
        let back32: FeatureStream<f32> = read_feature_stream(&path).unwrap();
        for (a, b) in back32.frames.as_slice().iter().zip(s.frames.as_slice()) {
            assert_eq!(*a as f64, *b);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_feature_stream(&random_stream(3, 2, 1, 1)).unwrap();
        assert_eq!(&bytes[..4], b"OSDF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 3 * 3 * 4 + 8);
        assert_eq!(f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()), 3.125);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_feature_stream(&random_stream(4, 2, 2, 2)).unwrap();
        bytes[0] = b'X';
        let err = decode_feature_stream::<f64>("v", &bytes).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::BadMagic { .. })));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = encode_feature_stream(&random_stream(4, 2, 2, 2)).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_feature_stream::<f64>("v", &bytes),
            Err(Error::Format(FormatError::Version(9)))
        ));
    }

    #[test]
    fn header_dims_disagreeing_with_payload() {
        let mut bytes = encode_feature_stream(&random_stream(4, 3, 2, 3)).unwrap();
        // claim d_fast = 3 while the payload holds 5 columns
        bytes[14..16].copy_from_slice(&3u16.to_le_bytes());
        let err = decode_feature_stream::<f64>("v", &bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::InconsistentDims { d_slow: 3, d_fast: 3, d_total: 5 })
        ));
        assert!(err.to_string().contains("inconsistent dims"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_feature_stream(&random_stream(4, 3, 2, 3)).unwrap();
        let cut = &bytes[..bytes.len() - 11];
        assert!(matches!(
            decode_feature_stream::<f64>("v", cut),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        assert!(matches!(
            decode_feature_stream::<f64>("v", &bytes[..10]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode_feature_stream(&random_stream(4, 3, 2, 3)).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_feature_stream::<f64>("v", &bytes),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
    }

    #[test]
    fn empty_stream_round_trips() {
        let s = random_stream(0, 3, 1, 0);
        let back = decode_feature_stream::<f64>("vid", &encode_feature_stream(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
