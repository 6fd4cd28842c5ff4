//! Single-file checkpoints: named parameter and buffer arrays, optimizer
//! moments, and JSON metadata (specs, epoch, run config).

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, View};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpecs};
use crate::objectives::Architecture;
use crate::optim::{Adam, AdamConfig};

pub const FORMAT: &str = "crossview-checkpoint/1";
const META_KEY: &str = "crossview";

struct F32View<'a> {
    shape: Vec<usize>,
    data: &'a [f32],
}

impl View for F32View<'_> {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Owned(self.data.iter().flat_map(|v| v.to_le_bytes()).collect())
    }
    fn data_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Model plus the per-network optimizers (same order as `Model::networks_mut`).
pub struct Checkpoint {
    pub model: Model,
    pub optimizers: Vec<Adam<f32>>,
    pub epoch: usize,
    /// Run configuration, stored opaquely.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub specs: ModelSpecs,
    pub epoch: usize,
    pub config: serde_json::Value,
    pub adam: AdamConfig,
    pub adam_steps: Vec<u64>,
}

impl Checkpoint {
    /// Fail with a typed error unless the checkpoint holds `arch` at `resolution`.
    pub fn expect(&self, arch: Architecture, resolution: usize) -> Result<()> {
        check_matches(&self.model.specs, arch, resolution)
    }
}

pub fn check_matches(specs: &ModelSpecs, arch: Architecture, resolution: usize) -> Result<()> {
    if specs.arch != arch {
        return Err(Error::CheckpointMismatch(format!("checkpoint holds {} but {} was requested", specs.arch, arch)));
    }
    if specs.resolution() != resolution {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint resolution {} differs from {}",
            specs.resolution(),
            resolution
        )));
    }
    Ok(())
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut Model,
    optimizers: &[Adam<f32>],
    epoch: usize,
    config: &serde_json::Value,
) -> Result<()> {
    let specs = model.specs.clone();
    let mut nets = model.networks_mut();
    if optimizers.len() != nets.len() {
        return Err(Error::InvalidArgument(format!("{} optimizers for {} networks", optimizers.len(), nets.len())));
    }
    // Gather owned copies of names and shapes first, then borrow data.
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for ((prefix, net), opt) in nets.iter_mut().zip(optimizers) {
        net.visit_params(&mut |name, p| entries.push((format!("{prefix}.{name}"), p.shape.clone(), p.value.clone())));
        net.visit_buffers(&mut |name, b| entries.push((format!("{prefix}.{name}"), vec![b.len()], b.clone())));
        for (name, m, v) in opt.named_state(&mut **net) {
            entries.push((format!("adam.{prefix}.m.{name}"), vec![m.len()], m.to_vec()));
            entries.push((format!("adam.{prefix}.v.{name}"), vec![v.len()], v.to_vec()));
        }
    }
    let views: Vec<(String, F32View<'_>)> =
        entries.iter().map(|(n, s, d)| (n.clone(), F32View { shape: s.clone(), data: d })).collect();
    let adam = optimizers.first().map(|o| o.config).unwrap_or_default();
    // One key holding an ordered JSON object: safetensors writes the metadata
    // map in hash order, which would make the file bytes vary between runs.
    let doc = serde_json::json!({
        "format": FORMAT,
        "specs": specs,
        "epoch": epoch,
        "config": config,
        "adam": adam,
        "adam_steps": optimizers.iter().map(|o| o.steps).collect::<Vec<_>>(),
    });
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&doc)?)]);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.partial");
    safetensors::serialize_to_file(views, Some(meta), &tmp)
        .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn parse_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(path, e.to_string()))?;
    let meta = header.metadata().as_ref().ok_or_else(|| bad(path, "no metadata"))?;
    let doc: serde_json::Value =
        serde_json::from_str(meta.get(META_KEY).ok_or_else(|| bad(path, format!("metadata key {META_KEY} missing")))?)?;
    if doc["format"] != FORMAT {
        return Err(bad(path, format!("unknown format {}", doc["format"])));
    }
    let field = |k: &str| doc.get(k).cloned().ok_or_else(|| bad(path, format!("metadata field {k} missing")));
    Ok(CheckpointMeta {
        specs: serde_json::from_value(field("specs")?)?,
        epoch: serde_json::from_value(field("epoch")?).map_err(|_| bad(path, "epoch is not an integer"))?,
        config: field("config")?,
        adam: serde_json::from_value(field("adam")?)?,
        adam_steps: serde_json::from_value(field("adam_steps")?)?,
    })
}

/// Metadata only; still reads the file but builds no networks.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_meta(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = parse_meta(path, &bytes)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(path, e.to_string()))?;
    let read = |name: &str, len: usize| -> Option<Vec<f32>> {
        let t = st.tensor(name).ok()?;
        if t.dtype() != Dtype::F32 || t.data().len() != len * 4 {
            return None;
        }
        Some(t.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    };
    let mut model = Model::build(&meta.specs)?;
    let mut optimizers = Vec::new();
    let mut problem: Option<String> = None;
    for (i, (prefix, net)) in model.networks_mut().into_iter().enumerate() {
        net.visit_params(&mut |name, p| match read(&format!("{prefix}.{name}"), p.len()) {
            Some(v) => p.value = v,
            None => {
                problem.get_or_insert(format!("{prefix}.{name}"));
            }
        });
        net.visit_buffers(&mut |name, b| match read(&format!("{prefix}.{name}"), b.len()) {
            Some(v) => *b = v,
            None => {
                problem.get_or_insert(format!("{prefix}.{name}"));
            }
        });
        let mut opt = Adam::new(meta.adam);
        let steps = meta.adam_steps.get(i).copied().unwrap_or(0);
        let mut sizes = HashMap::new();
        net.visit_params(&mut |name, p| {
            sizes.insert(name, p.len());
        });
        opt.restore(net, steps, |name| {
            let n = *sizes.get(name)?;
            Some((read(&format!("adam.{prefix}.m.{name}"), n)?, read(&format!("adam.{prefix}.v.{name}"), n)?))
        })
        .map_err(|e| bad(path, e.to_string()))?;
        optimizers.push(opt);
    }
    if let Some(name) = problem {
        return Err(bad(path, format!("tensor {name} missing or misshaped")));
    }
    Ok(Checkpoint { model, optimizers, epoch: meta.epoch, config: meta.config })
}
