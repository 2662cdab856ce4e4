//! Model checkpoint file: magic `SAMC`, u32-LE length-prefixed config JSON,
//! then the parameter tensors in the shared tensor format, in fixed order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use crate::error::{CoreError, Result};
use crate::io::{read_tensor_bytes, write_tensor_bytes};
use crate::tensor::Tensor;
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAMC";

pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let config_json = serde_json::to_vec(&model.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    for p in model.params() {
        out.extend_from_slice(&write_tensor_bytes(p)?);
    }
    Ok(out)
}

pub fn save_model<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let fail = |msg: &str| CoreError::Format(format!("checkpoint: {msg}"));
    if bytes.len() < 8 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + json_len {
        return Err(fail("truncated config"));
    }
    let config: ModelConfig = serde_json::from_slice(&bytes[8..8 + json_len])?;
    // Fresh init defines the expected parameter shapes and order.
    let mut model = Model::new(config, 0)?;
    let mut pos = 8 + json_len;
    let mut params: Vec<Tensor<T>> = Vec::with_capacity(model.params().len());
    for expected in model.params() {
        let remaining = &bytes[pos..];
        // Tensor blobs are self-delimiting: header + rank dims + payload.
        if remaining.len() < 5 {
            return Err(fail("truncated parameters"));
        }
        let rank = remaining[4] as usize;
        let mut dims_len = 0usize;
        let mut count = 1usize;
        for i in 0..rank {
            let off = 5 + 4 * i;
            if remaining.len() < off + 4 {
                return Err(fail("truncated parameter dims"));
            }
            count *= u32::from_le_bytes(remaining[off..off + 4].try_into().unwrap()) as usize;
            dims_len += 4;
        }
        let blob_len = 5 + dims_len + 4 * count;
        if remaining.len() < blob_len {
            return Err(fail("truncated parameter payload"));
        }
        let t: Tensor<T> = read_tensor_bytes(&remaining[..blob_len])?;
        if t.dims() != expected.dims() {
            return Err(fail(&format!(
                "parameter shape {:?} does not match architecture {:?}",
                t.dims(),
                expected.dims()
            )));
        }
        params.push(t);
        pos += blob_len;
    }
    if pos != bytes.len() {
        return Err(fail("trailing bytes after parameters"));
    }
    model.set_params(params)?;
    Ok(model)
}
