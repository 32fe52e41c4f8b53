//! JPU parameter snapshots: one `.jt` file per named tensor plus a JSON
//! manifest holding the config and the tensor list.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JpuConfig, JpuParams, SeparableWeights};
use crate::conv::ConvWeights;
use crate::tensor::{read_jt, write_jt, DType, Element, Tensor};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: u32,
    dtype: DType,
    config: JpuConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    file: String,
    shape: [usize; 4],
}

pub fn save_params<T: Element>(dir: impl AsRef<Path>, config: &JpuConfig, params: &JpuParams<T>) -> Result<()> {
    let dir = dir.as_ref();
    params.check(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = vec![];
    for (name, t) in params.named_tensors() {
        let file = format!("{name}.jt");
        write_jt(&t, dir.join(&file))?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().dims(),
        });
    }
    let manifest = Manifest {
        schema: 1,
        dtype: T::DTYPE,
        config: config.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_params<T: Element>(dir: impl AsRef<Path>) -> Result<(JpuConfig, JpuParams<T>)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema != 1 {
        return Err(Error::Format(format!("unsupported manifest schema {}", manifest.schema)));
    }
    if manifest.dtype != T::DTYPE {
        return Err(Error::DTypeMismatch {
            expected: T::DTYPE,
            actual: manifest.dtype,
        });
    }
    let mut tensors: HashMap<String, Tensor<T>> = HashMap::new();
    for e in &manifest.tensors {
        let t: Tensor<T> = read_jt(dir.join(&e.file))?;
        if t.shape().dims() != e.shape {
            return Err(Error::Format(format!("{} does not have the listed shape", e.file)));
        }
        tensors.insert(e.name.clone(), t);
    }
    let mut take = |name: &str, bias: bool| -> Result<ConvWeights<T>> {
        let weight = tensors
            .remove(&format!("{name}.weight"))
            .ok_or_else(|| Error::Format(format!("missing {name}.weight")))?;
        let bias = if bias {
            let b = tensors
                .remove(&format!("{name}.bias"))
                .ok_or_else(|| Error::Format(format!("missing {name}.bias")))?;
            Some(b.into_vec())
        } else {
            None
        };
        Ok(ConvWeights::new(weight, bias))
    };
    let config = manifest.config;
    let levels = [take("level3", true)?, take("level4", true)?, take("level5", true)?];
    let branches = (0..config.dilation_rates.len())
        .map(|r| {
            Ok(SeparableWeights {
                depthwise: take(&format!("branch{r}.depthwise"), false)?,
                pointwise: take(&format!("branch{r}.pointwise"), true)?,
            })
        })
        .collect::<Result<_>>()?;
    let fusion = take("fusion", true)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {extra}")));
    }
    let params = JpuParams {
        levels,
        branches,
        fusion,
    };
    params.check(&config)?;
    Ok((config, params))
}
