//! Single-file checkpoints: named arrays plus structured metadata, stored in
//! the safetensors container.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ghost_autograd::{Array, Float, ParamStore};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};

pub const FORMAT_TAG: &str = "ghost-deblur-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const KEY_FORMAT: &str = "format";
const KEY_VERSION: &str = "version";
const KEY_KIND: &str = "kind";
const KEY_CONFIG: &str = "generator_config";

pub const GENERATOR_PREFIX: &str = "generator.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Generator weights only.
    Generator,
    /// Full training state.
    Training,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Generator => "generator",
            CheckpointKind::Training => "training",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32 { shape, .. } | TensorData::F64 { shape, .. } => shape,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32 { data, .. } => data.iter().map(|&v| v as f64).collect(),
            TensorData::F64 { data, .. } => data.clone(),
        }
    }

    pub fn from_array<T: Float>(a: &Array<T>) -> Self {
        if T::NAME == "f32" {
            TensorData::F32 { shape: a.shape().to_vec(), data: a.data().iter().map(|v| v.as_f64() as f32).collect() }
        } else {
            TensorData::F64 { shape: a.shape().to_vec(), data: a.to_f64_vec() }
        }
    }

    pub fn to_array<T: Float>(&self) -> Array<T> {
        Array::from_vec(self.shape().to_vec(), self.to_f64().into_iter().map(T::of_f64).collect())
    }

    fn bytes(&self) -> (Dtype, Vec<u8>) {
        match self {
            TensorData::F32 { data, .. } => (Dtype::F32, data.iter().flat_map(|v| v.to_le_bytes()).collect()),
            TensorData::F64 { data, .. } => (Dtype::F64, data.iter().flat_map(|v| v.to_le_bytes()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub generator_config: GeneratorConfig,
    /// Extra string metadata (step counters, seeds, embedded configs).
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, generator_config: GeneratorConfig) -> Self {
        Self { kind, generator_config, metadata: BTreeMap::new(), tensors: BTreeMap::new() }
    }

    /// Generator-only checkpoint.
    pub fn for_generator<T: Float>(cfg: &GeneratorConfig, store: &ParamStore<T>) -> Self {
        let mut c = Self::new(CheckpointKind::Generator, cfg.clone());
        c.insert_store(GENERATOR_PREFIX, store);
        c
    }

    pub fn insert_store<T: Float>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, e) in store.iter() {
            self.tensors.insert(format!("{prefix}{}", e.name), TensorData::from_array(&e.value));
        }
    }

    /// Fill every entry of `store` from tensors under `prefix`; missing or
    /// misshapen entries are errors.
    pub fn load_store<T: Float>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let key = format!("{prefix}{name}");
            let t = self.tensors.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            store.set(id, t.to_array());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        meta.insert(KEY_FORMAT.into(), FORMAT_TAG.into());
        meta.insert(KEY_VERSION.into(), FORMAT_VERSION.to_string());
        meta.insert(KEY_KIND.into(), self.kind.as_str().into());
        meta.insert(KEY_CONFIG.into(), serde_json::to_string(&self.generator_config)?);
        let buffers: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let (dtype, bytes) = t.bytes();
                (k.clone(), dtype, t.shape().to_vec(), bytes)
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(k, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (k.as_str(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut meta: BTreeMap<String, String> =
            header.metadata().clone().unwrap_or_default().into_iter().collect();
        let take = |meta: &mut BTreeMap<String, String>, key: &str| {
            meta.remove(key).ok_or_else(|| Error::Checkpoint(format!("metadata key `{key}` missing")))
        };
        let format = take(&mut meta, KEY_FORMAT)?;
        if format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!("not a {FORMAT_TAG} file (format tag `{format}`)")));
        }
        let version = take(&mut meta, KEY_VERSION)?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {FORMAT_VERSION}")));
        }
        let kind = match take(&mut meta, KEY_KIND)?.as_str() {
            "generator" => CheckpointKind::Generator,
            "training" => CheckpointKind::Training,
            other => return Err(Error::Checkpoint(format!("unknown checkpoint kind `{other}`"))),
        };
        let generator_config: GeneratorConfig = serde_json::from_str(&take(&mut meta, KEY_CONFIG)?)?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let shape = view.shape().to_vec();
            let raw = view.data();
            let t = match view.dtype() {
                Dtype::F32 => TensorData::F32 {
                    shape,
                    data: raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
                },
                Dtype::F64 => TensorData::F64 {
                    shape,
                    data: raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
                },
                other => return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported dtype {other:?}"))),
            };
            tensors.insert(name, t);
        }
        Ok(Self { kind, generator_config, metadata: meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        // Write-then-rename so a crash never leaves a truncated checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Serialized size of a generator-only checkpoint.
pub fn serialized_size_bytes<T: Float>(cfg: &GeneratorConfig, store: &ParamStore<T>) -> Result<usize> {
    Ok(Checkpoint::for_generator(cfg, store).to_bytes()?.len())
}

/// Rebuild a generator from any checkpoint kind. With `expected`, a differing
/// embedded configuration is an error listing the differences.
pub fn load_generator(path: &Path, expected: Option<&GeneratorConfig>) -> Result<(Generator, ParamStore<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    generator_from_checkpoint(&ckpt, expected)
}

pub fn generator_from_checkpoint<T: Float>(
    ckpt: &Checkpoint,
    expected: Option<&GeneratorConfig>,
) -> Result<(Generator, ParamStore<T>)> {
    if let Some(want) = expected {
        let diff = want.diff(&ckpt.generator_config);
        if !diff.is_empty() {
            let lines: Vec<String> = diff.iter().map(|d| format!("  requested vs checkpoint: {d}")).collect();
            return Err(Error::ConfigMismatch(lines.join("\n")));
        }
    }
    let (g, mut store) = Generator::build::<T>(&ckpt.generator_config, 0)?;
    ckpt.load_store(GENERATOR_PREFIX, &mut store)?;
    Ok((g, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_preserves_everything() {
        let cfg = GeneratorConfig::default();
        let mut c = Checkpoint::new(CheckpointKind::Training, cfg);
        c.metadata.insert("step".into(), "12".into());
        c.tensors.insert("a".into(), TensorData::F32 { shape: vec![2], data: vec![1.5, -0.25] });
        c.tensors.insert("b".into(), TensorData::F64 { shape: vec![1, 1], data: vec![std::f64::consts::PI] });
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_foreign_files() {
        let views: Vec<(&str, TensorView)> = Vec::new();
        let bytes = safetensors::serialize(views, &None).unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
    }
}
