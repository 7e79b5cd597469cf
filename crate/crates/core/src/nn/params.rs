use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// What a parameter array is used for; decides its initialization and whether weight decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f32>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const PARAMS_VERSION: &str = "1";

/// Every learnable array of both networks, addressed by name or [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    pub version: String,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.params == other.params
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet {
            version: PARAMS_VERSION.to_string(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a new array. Weights are drawn from `N(0, std²)`, biases and shifts start at 0,
    /// normalization scales at 1.
    pub fn register<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        kind: ParamKind,
        std: f32,
        rng: &mut R,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let len = shape.iter().product();
        let data = match kind {
            ParamKind::ConvWeight => {
                let normal = Normal::new(0.0f32, std).expect("valid std");
                (0..len).map(|_| normal.sample(rng)).collect()
            }
            ParamKind::Bias | ParamKind::NormShift => vec![0.0; len],
            ParamKind::NormScale => vec![1.0; len],
        };
        self.push(Param {
            name,
            shape: shape.to_vec(),
            kind,
            data,
        })
    }

    pub(crate) fn push(&mut self, param: Param) -> ParamId {
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Copies every array whose name starts with `prefix` from `other`; shapes must agree.
    pub fn copy_prefix_from(&mut self, other: &ParameterSet, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| contract(format!("source parameters lack `{}`", p.name)))?;
            if src.shape != p.shape {
                return Err(contract(format!(
                    "shape mismatch for `{}`: {:?} vs {:?}",
                    p.name, src.shape, p.shape
                )));
            }
            p.data.copy_from_slice(&src.data);
            copied += 1;
        }
        Ok(copied)
    }
}

/// Gradient buffers aligned with a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Gradients {
            grads: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut [f32]> {
        self.grads.iter_mut().map(Vec::as_mut_slice)
    }

    pub(crate) fn from_vecs(grads: Vec<Vec<f32>>) -> Self {
        Gradients { grads }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
