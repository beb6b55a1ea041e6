//! Line-oriented model manifests.
//!
//! ```text
//! # comment
//! name = toy-dit
//! meta.num_steps = 3
//! meta.topk_ratio = 0.1
//! meta.quantized = false
//! tensor.layer0.qkv = layer0.qkv.tbt
//! ```
//!
//! Tensor paths are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::file::{read_tensor, write_tensor};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata {
    pub num_steps: Option<u32>,
    pub topk_ratio: Option<f32>,
    pub quantized: Option<bool>,
    pub boundary_sigma: Option<f32>,
    /// Quantization block edge, present on quantized manifests.
    pub block: Option<usize>,
    /// Any other `meta.*` entries, kept verbatim.
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: &str| Error::BadMetadata {
            key: key.to_string(),
            value: value.to_string(),
            msg: msg.to_string(),
        };
        match key {
            "num_steps" => {
                let n: u32 = value.parse().map_err(|_| bad("expected an integer"))?;
                if n == 0 {
                    return Err(bad("must be >= 1"));
                }
                self.num_steps = Some(n);
            }
            "topk_ratio" => {
                let r: f32 = value.parse().map_err(|_| bad("expected a number"))?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(bad("must lie in (0, 1]"));
                }
                self.topk_ratio = Some(r);
            }
            "quantized" => {
                self.quantized = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad("expected true or false")),
                });
            }
            "boundary_sigma" => {
                let s: f32 = value.parse().map_err(|_| bad("expected a number"))?;
                if !(s.is_finite() && s > 0.0) {
                    return Err(bad("must be positive and finite"));
                }
                self.boundary_sigma = Some(s);
            }
            "block" => {
                let b: usize = value.parse().map_err(|_| bad("expected an integer"))?;
                if b == 0 {
                    return Err(bad("must be >= 1"));
                }
                self.block = Some(b);
            }
            _ => {
                self.extra.insert(key.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(n) = self.num_steps {
            out.push(("num_steps".into(), n.to_string()));
        }
        if let Some(r) = self.topk_ratio {
            out.push(("topk_ratio".into(), r.to_string()));
        }
        if let Some(q) = self.quantized {
            out.push(("quantized".into(), q.to_string()));
        }
        if let Some(s) = self.boundary_sigma {
            out.push(("boundary_sigma".into(), s.to_string()));
        }
        if let Some(b) = self.block {
            out.push(("block".into(), b.to_string()));
        }
        out.extend(self.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }
}

/// A named set of parameters plus metadata. Tensors are loaded eagerly, so a
/// manifest value always holds valid tensors; `files` records where each one
/// came from (empty for manifests built in memory).
#[derive(Clone, Debug, Default)]
pub struct ModelManifest {
    pub name: String,
    pub metadata: Metadata,
    pub params: BTreeMap<String, Tensor>,
    pub files: BTreeMap<String, PathBuf>,
}

impl ModelManifest {
    pub fn new(name: impl Into<String>) -> Self {
        ModelManifest {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }
}

/// Accepts either the manifest file itself or a directory containing
/// `manifest.txt`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ModelManifest> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path.push(MANIFEST_FILE);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut m = ModelManifest::default();
    let mut seen_name = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |msg: String| Error::ManifestSyntax {
            path: path.clone(),
            line: idx + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "name" {
            if seen_name {
                return Err(syntax("duplicate `name` entry".into()));
            }
            seen_name = true;
            m.name = value.to_string();
        } else if let Some(param) = key.strip_prefix("tensor.") {
            if param.is_empty() || value.is_empty() {
                return Err(syntax("empty tensor name or path".into()));
            }
            if m.files.contains_key(param) {
                return Err(Error::DuplicateParameter(param.to_string()));
            }
            m.files.insert(param.to_string(), root.join(value));
        } else if let Some(meta) = key.strip_prefix("meta.") {
            if meta.is_empty() {
                return Err(syntax("empty metadata key".into()));
            }
            m.metadata.set(meta, value)?;
        } else {
            return Err(syntax(format!("unknown key `{key}`")));
        }
    }

    for (name, file) in &m.files {
        if !file.is_file() {
            return Err(Error::MissingTensorFile {
                name: name.clone(),
                path: file.clone(),
            });
        }
        m.params.insert(name.clone(), read_tensor(file)?);
    }
    Ok(m)
}

/// Writes every parameter as `<name>.tbt` plus `manifest.txt` into `dir`,
/// creating it if needed. Returns the manifest with `files` filled in.
pub fn save_manifest(m: &ModelManifest, dir: impl AsRef<Path>) -> Result<ModelManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = format!("name = {}\n", m.name);
    for (k, v) in m.metadata.entries() {
        text.push_str(&format!("meta.{k} = {v}\n"));
    }
    let mut files = BTreeMap::new();
    for (name, t) in &m.params {
        let rel = format!("{name}.tbt");
        let path = dir.join(&rel);
        write_tensor(t, &path)?;
        text.push_str(&format!("tensor.{name} = {rel}\n"));
        files.insert(name.clone(), path);
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(ModelManifest {
        files,
        ..m.clone()
    })
}
