//! File formats shared across the pipeline.
//!
//! Tensor files: magic `SATN`, `u8` rank, rank × `u32` little-endian dims,
//! then `f32` little-endian row-major payload. Audio: 16-bit PCM mono WAV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"SATN";

/// Serializes a tensor in the shared format. Payload is always `f32`.
pub fn write_tensor_bytes<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(CoreError::invalid("tensor rank exceeds u8"));
    }
    let mut out = Vec::with_capacity(4 + 1 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(t.rank() as u8);
    for &d in t.dims() {
        if d > u32::MAX as usize {
            return Err(CoreError::invalid("tensor dim exceeds u32"));
        }
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        let v: f32 = num_traits::cast(x).unwrap_or(f32::NAN);
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_tensor_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fail = |msg: &str| CoreError::Format(format!("tensor file: {msg}"));
    if bytes.len() < 5 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(fail("bad magic"));
    }
    let rank = bytes[4] as usize;
    let mut pos = 5;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let end = pos + 4;
        if end > bytes.len() {
            return Err(fail("truncated dims"));
        }
        dims.push(u32::from_le_bytes(bytes[pos..end].try_into().unwrap()) as usize);
        pos = end;
    }
    let count: usize = dims.iter().product();
    if bytes.len() != pos + 4 * count {
        return Err(fail("payload length does not match dims"));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in bytes[pos..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        data.push(T::from_f32(v).ok_or_else(|| fail("unrepresentable value"))?);
    }
    Tensor::from_vec(&dims, data)
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let bytes = write_tensor_bytes(t)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_tensor_bytes(&bytes)
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to [-1, 1].
pub fn save_wav<T: Scalar>(path: &Path, wave: &Waveform<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| CoreError::Format(format!("wav write: {e}")))?;
    for &s in &wave.samples {
        let x: f64 = num_traits::cast(s).unwrap_or(0.0);
        let q = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| CoreError::Format(format!("wav write: {e}")))?;
    }
    writer
        .finalize()
        .map_err(|e| CoreError::Format(format!("wav write: {e}")))?;
    Ok(())
}

/// Reads a mono 16-bit PCM WAV into a waveform scaled to [-1, 1].
pub fn load_wav<T: Scalar>(path: &Path) -> Result<Waveform<T>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CoreError::Format(format!("wav read: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(CoreError::Format(format!(
            "expected mono 16-bit PCM, got {} channel(s) at {} bits",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| CoreError::Format(format!("wav read: {e}")))?;
    let data: Vec<T> = samples
        .iter()
        .map(|&q| T::from_f64(q as f64 / 32768.0).unwrap())
        .collect();
    Waveform::new(data, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn tensor_round_trip() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1.5, -2.0, 0.0, 3.25, 4.0, -0.5]).unwrap();
        let bytes = write_tensor_bytes(&t).unwrap();
        assert_eq!(&bytes[0..4], b"SATN");
        assert_eq!(bytes[4], 2);
        let back: Tensor<f32> = read_tensor_bytes(&bytes).unwrap();
        assert_eq!(back.dims(), &[2, 3]);
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn tensor_rejects_bad_magic_and_truncation() {
        let t = Tensor::<f32>::zeros(&[4]);
        let mut bytes = write_tensor_bytes(&t).unwrap();
        bytes[0] = b'X';
        assert!(read_tensor_bytes::<f32>(&bytes).is_err());
        let t = Tensor::<f32>::zeros(&[4]);
        let bytes = write_tensor_bytes(&t).unwrap();
        assert!(read_tensor_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> =
            (0..256).map(|i| (i as f32 / 256.0 * std::f32::consts::TAU).sin() * 0.8).collect();
        let wave = Waveform::new(samples.clone(), 16_000).unwrap();
        save_wav(&path, &wave).unwrap();
        let back: Waveform<f32> = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0, "quantization error too large");
        }
    }
}
