//! Model file format.
//!
//! ```text
//! magic    16 bytes  "BINSIGHT-MODEL\0\0"
//! length    4 bytes  u32 little-endian, byte length of the JSON header
//! header   length    UTF-8 JSON: {"network": NetworkDef, "seed": u64}
//! params   rest      per parameterized layer in order: weight then bias,
//!                    raw little-endian f32 values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::def::NetworkDef;
use crate::net::network::{LayerParams, Network};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 16] = b"BINSIGHT-MODEL\0\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetworkDef,
    seed: u64,
}

pub fn encode_model(net: &Network<f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        network: net.def().clone(),
        seed: net.seed(),
    })
    .map_err(|e| Error::Model(format!("encoding header: {e}")))?;
    let len = u32::try_from(header.len()).map_err(|_| Error::Model("header too large".into()))?;
    let mut out = Vec::with_capacity(20 + header.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&header);
    for p in net.all_params().iter().flatten() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<Network<f32>> {
    let corrupt = |msg: String| Error::Model(msg);
    if bytes.len() < 20 {
        return Err(corrupt(format!("file is {} bytes, shorter than the fixed header", bytes.len())));
    }
    if &bytes[..16] != MODEL_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let len = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(corrupt(format!("header length {len} exceeds remaining {} bytes", body.len())));
    }
    let header: Header =
        serde_json::from_slice(&body[..len]).map_err(|e| corrupt(format!("header JSON: {e}")))?;
    header.network.validate()?;
    let mut rest = &body[len..];
    let mut take = |n: usize, what: String| -> Result<Vec<f32>> {
        if rest.len() < n * 4 {
            return Err(corrupt(format!("truncated parameter block ({what})")));
        }
        let (head, tail) = rest.split_at(n * 4);
        rest = tail;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    };
    let mut params = Vec::with_capacity(header.network.layers.len());
    for (i, layer) in header.network.layers.iter().enumerate() {
        match (layer.weight_shape(), layer.bias_len()) {
            (Some((shape, _)), Some(bias_len)) => {
                let n: usize = shape.iter().product();
                let weight = Tensor::new(shape, take(n, format!("layer {i} weight"))?)?;
                let bias = Tensor::new(vec![bias_len], take(bias_len, format!("layer {i} bias"))?)?;
                params.push(Some(LayerParams { weight, bias }));
            }
            _ => params.push(None),
        }
    }
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes after parameters", rest.len())));
    }
    Network::from_parts(header.network, params, header.seed)
}

pub fn write_model(net: &Network<f32>, mut w: impl Write) -> Result<()> {
    w.write_all(&encode_model(net)?)?;
    Ok(())
}

pub fn read_model(mut r: impl Read) -> Result<Network<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

pub fn save_model(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(net)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network<f32>> {
    decode_model(&fs::read(path)?)
}
