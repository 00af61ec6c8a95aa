//! Named parameter storage shared by every model component.
//!
//! Components hold [`ParamId`] handles; a forward pass binds the whole store
//! into a [`Graph`] once and resolves handles through the [`Binding`].

use std::collections::BTreeMap;
use std::fs;
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{aent, Graph, Rng, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub role: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, role: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            role: role.into(),
            tensor,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a tensor of i.i.d. N(0, std²) entries.
    pub fn add_gaussian(
        &mut self,
        name: impl Into<String>,
        role: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gaussian() * std).collect();
        self.add(name, role, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Binds every parameter into `g`. With `with_grad == false` all
    /// parameters enter as constants, which skips backward bookkeeping.
    pub fn bind(&self, g: &mut Graph, with_grad: bool) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if with_grad && e.trainable {
                    g.param(e.tensor.clone())
                } else {
                    g.constant(e.tensor.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Writes one `.aent` file per parameter plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest::default();
        for e in &self.entries {
            let file = format!("{}.aent", e.name);
            aent::write(&dir.join(&file), &e.tensor)?;
            manifest.tensors.insert(
                e.name.clone(),
                ManifestEntry {
                    file,
                    shape: e.tensor.shape().to_vec(),
                    role: e.role.clone(),
                    trainable: e.trainable,
                },
            );
        }
        manifest.order = self.entries.iter().map(|e| e.name.clone()).collect();
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Overwrites every tensor in `self` from a directory written by [`save`].
    /// Names and shapes must match exactly.
    ///
    /// [`save`]: ParamStore::save
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.tensors.len() != self.entries.len() {
            return Err(Error::Format {
                path,
                reason: format!(
                    "manifest lists {} tensors, model has {}",
                    manifest.tensors.len(),
                    self.entries.len()
                ),
            });
        }
        for e in &mut self.entries {
            let m = manifest.tensors.get(&e.name).ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: format!("missing tensor {}", e.name),
            })?;
            let t = aent::read(&dir.join(&m.file))?;
            if t.shape() != e.tensor.shape() || m.shape != e.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    left: e.tensor.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            e.tensor = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub order: Vec<String>,
    pub tensors: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub role: String,
    pub trainable: bool,
}

/// Graph nodes for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Binding from nodes created by the caller, one per store entry in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
