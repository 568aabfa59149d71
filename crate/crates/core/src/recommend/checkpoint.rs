//! Binary checkpoint: magic, little-endian header length, JSON header, then
//! every tensor as little-endian f64 in header order.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LLMRGCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub loss_history: Vec<f64>,
    /// Where the training data came from, so prediction can find it again.
    pub sources: Option<DataSources>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSources {
    pub dataset: PathBuf,
    pub graphs: PathBuf,
    pub split: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset in f64 elements from the start of the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sources: Option<DataSources>,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    ckpt.model.params.visit(|name, t| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [t.nrows(), t.ncols()],
            offset,
        });
        offset += t.len();
        for x in t.iter() {
            data.extend_from_slice(&x.to_le_bytes());
        }
    });
    let header = Header {
        dtype: "f64".into(),
        config: ckpt.model.config.clone(),
        loss_history: ckpt.loss_history.clone(),
        sources: ckpt.sources.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    if header.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let data = &body[hlen..];
    let mut params = Params::zeros(&header.config);
    let mut problem = None;
    let mut seen = 0;
    params.visit_mut(|name, t| {
        if problem.is_some() {
            return;
        }
        let Some(entry) = header.tensors.iter().find(|e| e.name == name) else {
            problem = Some(format!("missing tensor {name}"));
            return;
        };
        if entry.shape != [t.nrows(), t.ncols()] {
            problem = Some(format!("tensor {name} has shape {:?}, expected {:?}", entry.shape, t.dim()));
            return;
        }
        let (start, end) = (entry.offset * 8, (entry.offset + t.len()) * 8);
        if end > data.len() {
            problem = Some(format!("tensor {name} runs past the end of the file"));
            return;
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *t = Array2::from_shape_vec(t.dim(), values).expect("length checked");
        seen += 1;
    });
    if let Some(p) = problem {
        return Err(Error::Checkpoint(p));
    }
    if seen != header.tensors.len() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameters".into()));
    }
    Ok(Checkpoint {
        model: Model {
            config: header.config,
            params,
        },
        loss_history: header.loss_history,
        sources: header.sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::Variant;

    fn model() -> Model {
        let config = ModelConfig {
            n_items: 7,
            d_g: 3,
            d_b: 4,
            d_ff: 5,
            steps: 1,
            l_tru: 6,
            buckets: 11,
            variant: Variant::Full,
        };
        Model::new(config, 3, 0.1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = Checkpoint {
            model: model(),
            loss_history: vec![2.5, 1.25],
            sources: Some(DataSources {
                dataset: "data".into(),
                graphs: "graphs".into(),
                split: "graphs".into(),
            }),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"hello").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        save_checkpoint(
            &path,
            &Checkpoint {
                model: model(),
                loss_history: vec![],
                sources: None,
            },
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
