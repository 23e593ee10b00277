//! `V2SGGEN1` toy checkpoints and the pretrained-weights loader.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::toy::{Dense, FourierFeatures, RiggedChannel, ToyGenerator};
use super::{AffineMap, Generator, GeneratorSpec};
use crate::container::{decode_f32le, read_framed, write_framed};
use crate::error::{Error, Result};
use crate::latent::LATENT_DIM;

pub const GENERATOR_MAGIC: &[u8; 8] = b"V2SGGEN1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u64,
    kind: String,
    spec: GeneratorSpec,
    rigs: Vec<RiggedChannel>,
    tensors: Vec<TensorInfo>,
}

fn tensor_list(gen: &ToyGenerator) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    let f = &gen.features;
    out.push((
        "features.frequencies".into(),
        vec![f.len(), 2],
        f.frequencies.iter().flat_map(|v| v.iter().copied()).collect(),
    ));
    out.push(("features.phases".into(), vec![f.len()], f.phases.clone()));
    for (l, a) in gen.affines.iter().enumerate() {
        out.push((format!("affine.{l}.weight"), vec![a.width(), LATENT_DIM], a.weight.clone()));
        out.push((format!("affine.{l}.bias"), vec![a.width()], a.bias.clone()));
    }
    for (l, d) in gen.mixing.iter().enumerate() {
        out.push((format!("synthesis.{l}.weight"), vec![d.bias.len(), d.inputs], d.weight.clone()));
        out.push((format!("synthesis.{l}.bias"), vec![d.bias.len()], d.bias.clone()));
    }
    out.push(("to_rgb.weight".into(), vec![3, gen.to_rgb.inputs], gen.to_rgb.weight.clone()));
    out.push(("to_rgb.bias".into(), vec![3], gen.to_rgb.bias.clone()));
    out
}

pub fn write_toy_checkpoint<W: Write>(gen: &ToyGenerator, sink: &mut W) -> Result<u64> {
    let tensors = tensor_list(gen);
    let manifest = CheckpointManifest {
        version: 1,
        kind: "toy".into(),
        spec: gen.spec.clone(),
        rigs: gen.rigs.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest)?;
    let payload = tensors.iter().flat_map(|(_, _, v)| v.iter().map(|&x| x as f32));
    write_framed(sink, GENERATOR_MAGIC, &manifest, payload)
}

pub fn save_toy_checkpoint(gen: &ToyGenerator, path: &Path) -> Result<u64> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_toy_checkpoint(gen, &mut file)
}

pub(crate) fn read_toy_checkpoint<R: Read>(source: &mut R) -> std::result::Result<ToyGenerator, String> {
    let (manifest, payload) = read_framed(source, GENERATOR_MAGIC).map_err(|e| e.to_string())?;
    let m: CheckpointManifest =
        serde_json::from_slice(&manifest).map_err(|e| format!("malformed manifest: {e}"))?;
    if m.version != 1 {
        return Err(format!("unsupported checkpoint version {}", m.version));
    }
    if m.kind != "toy" {
        return Err(format!("checkpoint kind `{}` has no adapter", m.kind));
    }
    m.spec.validate().map_err(|e| format!("incompatible architecture: {e}"))?;
    let spec = &m.spec;
    let mut expected: Vec<(String, Vec<usize>)> = vec![
        ("features.frequencies".into(), vec![spec.frequency_count, 2]),
        ("features.phases".into(), vec![spec.frequency_count]),
    ];
    for (l, &w) in spec.channel_widths.iter().enumerate() {
        expected.push((format!("affine.{l}.weight"), vec![w, LATENT_DIM]));
        expected.push((format!("affine.{l}.bias"), vec![w]));
    }
    let mut inputs = spec.frequency_count;
    for (l, &w) in spec.channel_widths.iter().enumerate() {
        expected.push((format!("synthesis.{l}.weight"), vec![w, inputs]));
        expected.push((format!("synthesis.{l}.bias"), vec![w]));
        inputs = w;
    }
    expected.push(("to_rgb.weight".into(), vec![3, inputs]));
    expected.push(("to_rgb.bias".into(), vec![3]));
    if m.tensors.len() != expected.len()
        || m.tensors
            .iter()
            .zip(&expected)
            .any(|(t, (name, shape))| &t.name != name || &t.shape != shape)
    {
        return Err("tensor table does not match the declared architecture".into());
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != total * 4 {
        return Err(format!("payload is {} bytes, expected {}", payload.len(), total * 4));
    }
    let values: Vec<f64> = decode_f32le(&payload).map(f64::from).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err("payload contains non-finite weights".into());
    }
    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let v = values[cursor..cursor + n].to_vec();
        cursor += n;
        v
    };
    let fc = spec.frequency_count;
    let freq = take(fc * 2);
    let features = FourierFeatures {
        frequencies: freq.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        phases: take(fc),
    };
    let affines = spec
        .channel_widths
        .iter()
        .map(|&w| AffineMap {
            weight: take(w * LATENT_DIM),
            bias: take(w),
        })
        .collect();
    let mut inputs = fc;
    let mut mixing = Vec::new();
    for &w in &spec.channel_widths {
        mixing.push(Dense {
            weight: take(w * inputs),
            bias: take(w),
            inputs,
        });
        inputs = w;
    }
    let to_rgb = Dense {
        weight: take(3 * inputs),
        bias: take(3),
        inputs,
    };
    ToyGenerator::assemble(m.spec, features, affines, mixing, to_rgb, m.rigs).map_err(|e| e.to_string())
}

/// Load a toy checkpoint as its concrete type.
pub fn load_toy_checkpoint(path: &Path) -> Result<ToyGenerator> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_toy_checkpoint(&mut std::io::BufReader::new(file)).map_err(|message| Error::Load {
        path: path.to_path_buf(),
        message,
    })
}

/// Load a generator checkpoint. With `finetuned`, synthesis weights come from
/// the fine-tuned checkpoint while the affine maps stay those of `path`.
pub fn load_pretrained(path: &Path, finetuned: Option<&Path>) -> Result<Arc<dyn Generator>> {
    let base = load_toy_checkpoint(path)?;
    let Some(ft_path) = finetuned else {
        return Ok(Arc::new(base));
    };
    let ft = load_toy_checkpoint(ft_path)?;
    if ft.spec.channel_widths != base.spec.channel_widths
        || ft.spec.image_size != base.spec.image_size
        || ft.spec.frequency_count != base.spec.frequency_count
    {
        return Err(Error::Load {
            path: ft_path.to_path_buf(),
            message: "fine-tuned architecture differs from the base generator".into(),
        });
    }
    let merged = ToyGenerator::assemble(base.spec.clone(), ft.features, base.affines, ft.mixing, ft.to_rgb, ft.rigs)?;
    Ok(Arc::new(merged))
}
