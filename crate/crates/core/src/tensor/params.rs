use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Learning-rate partition a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Gat,
    Other,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 2] = [ParamGroup::Gat, ParamGroup::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Gat => "gat",
            ParamGroup::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            group,
            tensor: tensor.with_requires_grad(true),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if p.tensor.requires_grad() {
                p.tensor.clear_grad();
                p.tensor.ensure_grad();
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Marks every tensor of `group` as frozen (or trainable again).
    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.tensor.set_requires_grad(trainable);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub(crate) fn to_stored(&self) -> BTreeMap<String, StoredTensor> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    StoredTensor {
                        shape: p.tensor.shape().to_vec(),
                        data: p.tensor.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites values from a stored map. Every registered name must be
    /// present with a matching shape, and no extra names are allowed.
    pub(crate) fn load_stored(&mut self, stored: &BTreeMap<String, StoredTensor>) -> Result<()> {
        if let Some(extra) = stored.keys().find(|k| !self.by_name.contains_key(*k)) {
            return Err(Error::Incompatible(format!(
                "checkpoint has unknown parameter `{extra}`"
            )));
        }
        for p in &mut self.params {
            let s = stored.get(&p.name).ok_or_else(|| {
                Error::Incompatible(format!("checkpoint lacks parameter `{}`", p.name))
            })?;
            if s.shape != p.tensor.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    s.shape,
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(&s.data);
        }
        Ok(())
    }
}
