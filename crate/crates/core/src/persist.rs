//! Model file: a `key=value` text header terminated by `END`, then the
//! weight arrays as raw little-endian `f32` in the order listed under
//! `arrays`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EmbeddingMode, GruParams, ModelConfig, OutputActivation};

const MAGIC: &str = "SESSREC-MODEL";
pub const FORMAT_VERSION: u32 = 1;

/// Non-weight information stored with a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelMeta {
    pub loss: String,
    /// JSON object of training hyperparameters.
    pub hyperparameters: String,
    /// Path of the item map, relative to the model file.
    pub item_map: String,
    pub item_fingerprint: String,
}

fn arrays(p: &GruParams<f32>) -> Vec<(&'static str, Vec<usize>, &[f32])> {
    let mut v: Vec<(&'static str, Vec<usize>, &[f32])> = Vec::new();
    if let Some(e) = &p.embedding {
        v.push(("embedding", e.shape().to_vec(), e.as_slice().unwrap()));
    }
    v.push(("w_in", p.w_in.shape().to_vec(), p.w_in.as_slice().unwrap()));
    v.push(("u_zr", p.u_zr.shape().to_vec(), p.u_zr.as_slice().unwrap()));
    v.push(("u_h", p.u_h.shape().to_vec(), p.u_h.as_slice().unwrap()));
    v.push(("b_in", p.b_in.shape().to_vec(), p.b_in.as_slice().unwrap()));
    v.push(("w_out", p.w_out.shape().to_vec(), p.w_out.as_slice().unwrap()));
    if let Some(b) = &p.b_out {
        v.push(("b_out", b.shape().to_vec(), b.as_slice().unwrap()));
    }
    v
}

pub fn encode(params: &GruParams<f32>, meta: &ModelMeta) -> Vec<u8> {
    let c = &params.config;
    let list = arrays(params);
    let decl: Vec<String> = list
        .iter()
        .map(|(n, shape, _)| format!("{n}:{}", shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")))
        .collect();
    let mut out = Vec::new();
    let header = format!(
        "{MAGIC}\nformat_version={FORMAT_VERSION}\nn_items={}\nhidden={}\nembedding={}\nembedding_dim={}\noutput_bias={}\nactivation={}\nloss={}\nhyperparameters={}\nitem_map={}\nitem_fingerprint={}\narrays={}\nEND\n",
        c.n_items,
        c.hidden,
        c.embedding.as_str(),
        c.embedding_dim,
        c.output_bias,
        c.activation.as_str(),
        meta.loss,
        meta.hyperparameters.replace('\n', " "),
        meta.item_map,
        meta.item_fingerprint,
        decl.join(","),
    );
    out.extend_from_slice(header.as_bytes());
    for (_, _, data) in list {
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(GruParams<f32>, ModelMeta)> {
    let bad = |m: &str| Error::ModelFormat(m.to_string());
    let mut fields = std::collections::HashMap::new();
    let mut pos = 0usize;
    let mut first = true;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8"))?;
        pos += end + 1;
        if first {
            if line != MAGIC {
                return Err(bad("missing magic line"));
            }
            first = false;
            continue;
        }
        if line == "END" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad("header line without `=`"))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| Error::ModelFormat(format!("missing `{k}`")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::ModelFormat(format!("invalid `{k}`")))
    };
    if num("format_version")? != FORMAT_VERSION as usize {
        return Err(bad("unsupported format version"));
    }
    let config = ModelConfig {
        n_items: num("n_items")?,
        hidden: num("hidden")?,
        embedding: EmbeddingMode::parse(get("embedding")?).ok_or_else(|| bad("invalid `embedding`"))?,
        embedding_dim: num("embedding_dim")?,
        output_bias: get("output_bias")? == "true",
        activation: OutputActivation::parse(get("activation")?).ok_or_else(|| bad("invalid `activation`"))?,
    };
    let mut params = GruParams::<f32>::zeros(config);
    let expected: Vec<String> = arrays(&params)
        .iter()
        .map(|(n, shape, _)| format!("{n}:{}", shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")))
        .collect();
    if get("arrays")? != &expected.join(",") {
        return Err(Error::ModelFormat(format!(
            "array declaration `{}` does not match the configuration (`{}`)",
            get("arrays")?,
            expected.join(",")
        )));
    }
    let total: usize = arrays(&params).iter().map(|(_, _, d)| d.len()).sum();
    let body = &bytes[pos..];
    if body.len() != total * 4 {
        return Err(Error::ModelFormat(format!(
            "expected {} bytes of weights, found {}",
            total * 4,
            body.len()
        )));
    }
    let mut floats = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut fill = |a: &mut [f32]| a.iter_mut().for_each(|x| *x = floats.next().unwrap());
    if let Some(e) = params.embedding.as_mut() {
        fill(e.as_slice_mut().unwrap());
    }
    fill(params.w_in.as_slice_mut().unwrap());
    fill(params.u_zr.as_slice_mut().unwrap());
    fill(params.u_h.as_slice_mut().unwrap());
    fill(params.b_in.as_slice_mut().unwrap());
    fill(params.w_out.as_slice_mut().unwrap());
    if let Some(b) = params.b_out.as_mut() {
        fill(b.as_slice_mut().unwrap());
    }
    let meta = ModelMeta {
        loss: get("loss")?.clone(),
        hyperparameters: get("hyperparameters")?.clone(),
        item_map: get("item_map")?.clone(),
        item_fingerprint: get("item_fingerprint")?.clone(),
    };
    Ok((params, meta))
}

pub fn save(path: impl AsRef<Path>, params: &GruParams<f32>, meta: &ModelMeta) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(GruParams<f32>, ModelMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> ModelMeta {
        ModelMeta {
            loss: "bpr-max".into(),
            hyperparameters: "{\"lambda\":1.0}".into(),
            item_map: "items.tsv".into(),
            item_fingerprint: "abc".into(),
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            n in 1usize..20,
            h in 1usize..6,
            mode in 0usize..3,
            bias in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let embedding = [EmbeddingMode::OneHot, EmbeddingMode::Separate, EmbeddingMode::Tied][mode];
            let cfg = ModelConfig {
                embedding,
                embedding_dim: 3,
                output_bias: bias,
                activation: OutputActivation::Tanh,
                ..ModelConfig::new(n, h)
            };
            let mut p = GruParams::<f32>::init(cfg, seed).unwrap();
            if let Some(b) = p.b_out.as_mut() {
                b.iter_mut().enumerate().for_each(|(i, x)| *x = f32::from_bits(0x3f80_0000 + i as u32));
            }
            p.b_in.iter_mut().enumerate().for_each(|(i, x)| *x = -(i as f32) * 1e-30);
            let bytes = encode(&p, &meta());
            let (back, m) = decode(&bytes).unwrap();
            prop_assert_eq!(m, meta());
            prop_assert_eq!(encode(&back, &meta()), bytes);
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn truncated_or_mismatched_files_fail() {
        let p = GruParams::<f32>::init(ModelConfig::new(4, 2), 1).unwrap();
        let bytes = encode(&p, &meta());
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::ModelFormat(_))));
        assert!(decode(b"garbage\n").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("n_items=4", "n_items=5");
        assert!(decode(text.as_bytes()).is_err());
    }
}
