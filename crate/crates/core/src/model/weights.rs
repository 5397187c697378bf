use std::cell::Cell;
use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ArchConfig;
use super::layout::{self, LayerDesc, LayerKind, Stage};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Graph, Scalar, Tensor, Var};

/// Named parameter tensors of one network plus the config that shaped them.
/// Iteration order is the layout order and is stable across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct DracoWeights<T: Scalar = f32> {
    arch: ArchConfig,
    params: IndexMap<String, Tensor<T>>,
}

fn param_names(layer: &LayerDesc) -> (String, String) {
    (format!("{}.weight", layer.name), format!("{}.bias", layer.name))
}

impl<T: Scalar> DracoWeights<T> {
    /// He-style uniform init, `U(−√(6/fan_in), √(6/fan_in))`, zero biases,
    /// except that the last conv of every residual branch (`mid_out`, `tail`,
    /// each ATTDRN `fuse`) starts at zero, so a fresh network maps its input
    /// to itself. The random draws are made for those layers too, so
    /// [`DracoWeights::init_dense`] with the same seed differs only there.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut w = Self::init_dense(arch, seed)?;
        for layer in layout::layers(arch).iter().filter(|l| l.residual_out()) {
            let (name, _) = param_names(layer);
            w.params.insert(name, Tensor::zeros(layer.weight_shape()));
        }
        Ok(w)
    }

    /// He-style uniform init on every layer.
    pub fn init_dense(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        for layer in layout::layers(arch) {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            let (w, b) = param_names(&layer);
            params.insert(w, Tensor::uniform(layer.weight_shape(), -bound, bound, &mut rng));
            params.insert(b, Tensor::zeros(layer.bias_shape()));
        }
        Ok(DracoWeights {
            arch: arch.clone(),
            params,
        })
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut params = IndexMap::new();
        for layer in layout::layers(arch) {
            let (w, b) = param_names(&layer);
            params.insert(w, Tensor::zeros(layer.weight_shape()));
            params.insert(b, Tensor::zeros(layer.bias_shape()));
        }
        Ok(DracoWeights {
            arch: arch.clone(),
            params,
        })
    }

    /// Rebuild from named tensors, checking them against the layout of `arch`.
    pub fn from_named(arch: &ArchConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let template = DracoWeights::<T>::zeros(arch)?;
        if named.len() != template.params.len() {
            return Err(Error::dim(format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                named.len()
            )));
        }
        let mut params = IndexMap::with_capacity(named.len());
        for ((name, t), (want, proto)) in named.into_iter().zip(&template.params) {
            if &name != want || t.shape() != proto.shape() {
                return Err(Error::dim(format!(
                    "parameter {name} {} does not match layout entry {want} {}",
                    t.shape(),
                    proto.shape()
                )));
            }
            params.insert(name, t);
        }
        Ok(DracoWeights {
            arch: arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn is_extractor(name: &str) -> bool {
        name.starts_with("extractor.")
    }

    pub fn cast<U: Scalar>(&self) -> DracoWeights<U> {
        DracoWeights {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Put every parameter on `graph`; `trainable(name)` decides which ones
    /// receive gradients.
    pub fn register(&self, graph: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> ParamVars {
        let mut vars = IndexMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            vars.insert(name.clone(), graph.leaf(t.clone(), trainable(name)));
        }
        let layers = layout::layers(&self.arch)
            .into_iter()
            .map(|l| (l.name.clone(), l))
            .collect();
        ParamVars {
            vars,
            layers,
            extractor_calls: Cell::new(0),
        }
    }

    /// Register everything as constants (inference).
    pub fn register_frozen(&self, graph: &mut Graph<T>) -> ParamVars {
        self.register(graph, |_| false)
    }
}

/// Graph handles for a registered [`DracoWeights`].
pub struct ParamVars {
    vars: IndexMap<String, Var>,
    layers: HashMap<String, LayerDesc>,
    extractor_calls: Cell<usize>,
}

impl ParamVars {
    /// Bind graph variables that already exist to parameter names of `arch`.
    /// Names missing here are simply absent from the result.
    pub fn bind(arch: &ArchConfig, named: impl IntoIterator<Item = (String, Var)>) -> Self {
        ParamVars {
            vars: named.into_iter().collect(),
            layers: layout::layers(arch)
                .into_iter()
                .map(|l| (l.name.clone(), l))
                .collect(),
            extractor_calls: Cell::new(0),
        }
    }

    /// Number of feature-extractor passes recorded through these handles.
    pub fn extractor_calls(&self) -> usize {
        self.extractor_calls.get()
    }

    pub(crate) fn note_extractor_call(&self) {
        self.extractor_calls.set(self.extractor_calls.get() + 1);
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerDesc> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::config(format!("no layer named {name}")))
    }

    pub fn spec(&self, name: &str) -> Result<ConvSpec> {
        Ok(self.layer(name)?.spec)
    }

    /// Apply layer `name` (plain or depthwise convolution) to `x`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let layer = self.layer(name)?;
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        match layer.kind {
            LayerKind::Conv => g.conv2d(x, w, b, layer.spec),
            LayerKind::Depthwise => g.depthwise_conv2d(x, w, b, layer.spec),
        }
    }

    pub fn stage_of(&self, param: &str) -> Option<Stage> {
        let layer = param.rsplit_once('.').map(|(l, _)| l)?;
        self.layers.get(layer).map(|l| l.stage)
    }
}
