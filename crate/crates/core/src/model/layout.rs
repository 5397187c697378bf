//! The flat list of convolution layers an [`ArchConfig`] expands to. Weight
//! construction, the forward pass and the cost profiler all read from it.

use super::config::{ArchConfig, BlockMode};
use crate::tensor::{ConvSpec, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Depthwise,
}

/// Part of the model a layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Head conv, the inverted-residual blocks and the projection back to RGB.
    Ddirb,
    /// Projection out of RGB, the attention blocks and the final RGB conv.
    Attdrn,
    /// Contrastive feature network (training only).
    Extractor,
}

/// Spatial extent a layer runs at, relative to the input image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extent {
    /// Full `H × W`.
    Full,
    /// A globally pooled `1 × 1` map.
    Pooled,
    /// `H/2 × W/2` (after one 2× pooling).
    Half,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub spec: ConvSpec,
    pub stage: Stage,
    pub extent: Extent,
}

impl LayerDesc {
    pub fn weight_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv => self.spec.weight_shape(),
            LayerKind::Depthwise => self.spec.depthwise_weight_shape(),
        }
    }

    pub fn bias_shape(&self) -> Shape {
        self.spec.bias_shape()
    }

    /// Last conv of a residual branch: its output is added straight onto
    /// the branch input.
    pub fn residual_out(&self) -> bool {
        self.name == "mid_out" || self.name == "tail" || self.name.ends_with(".fuse")
    }

    pub fn fan_in(&self) -> usize {
        let taps = self.spec.kernel * self.spec.kernel;
        match self.kind {
            LayerKind::Conv => self.spec.in_channels * taps,
            LayerKind::Depthwise => taps,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().len() + self.bias_shape().len()
    }
}

struct Builder {
    layers: Vec<LayerDesc>,
    stage: Stage,
}

impl Builder {
    fn add(&mut self, name: String, kind: LayerKind, spec: ConvSpec, extent: Extent) {
        self.layers.push(LayerDesc {
            name,
            kind,
            spec,
            stage: self.stage,
            extent,
        });
    }

    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, d: usize, extent: Extent) {
        self.add(name, LayerKind::Conv, ConvSpec::new(cin, cout, k, d), extent);
    }
}

pub fn ddirb_sub_prefix(block: usize, sub: usize) -> String {
    format!("ddirb.{block}.{sub}")
}

/// Layers of the inference network for `blocks`, followed by the extractor.
pub fn layers_for(arch: &ArchConfig, blocks: BlockMode) -> Vec<LayerDesc> {
    let c = arch.base_channels;
    let a = arch.attention_channels;
    let mut b = Builder {
        layers: Vec::new(),
        stage: Stage::Ddirb,
    };
    if blocks.has_ddirb() {
        b.conv("head".into(), 3, c, arch.ddirb_io_kernel, 1, Extent::Full);
        for blk in 0..arch.n_ddirb {
            for (s, &d) in arch.ddirb_dilations.iter().enumerate() {
                let p = ddirb_sub_prefix(blk, s);
                b.conv(format!("{p}.expand"), c, c, 1, d, Extent::Full);
                b.add(
                    format!("{p}.depthwise"),
                    LayerKind::Depthwise,
                    ConvSpec::new(c, c, 3, d),
                    Extent::Full,
                );
                let r = c / arch.se_reduction;
                b.conv(format!("{p}.se.squeeze"), c, r, 1, 1, Extent::Pooled);
                b.conv(format!("{p}.se.excite"), r, c, 1, 1, Extent::Pooled);
                b.conv(format!("{p}.project"), c, c, 1, d, Extent::Full);
            }
        }
        b.conv("mid_out".into(), c, 3, arch.ddirb_io_kernel, 1, Extent::Full);
    }
    if blocks.has_attdrn() {
        b.stage = Stage::Attdrn;
        let k = arch.attention_kernel;
        b.conv("mid_in".into(), 3, c, arch.attdrn_io_kernel, 1, Extent::Full);
        for blk in 0..arch.n_attdrn {
            let p = format!("attdrn.{blk}");
            for (i, &d) in arch.attdrn_dilations.iter().enumerate() {
                b.conv(format!("{p}.branch{i}"), c, c, 3, d, Extent::Full);
            }
            b.conv(format!("{p}.ca.0"), a, a, k, 1, Extent::Pooled);
            b.conv(format!("{p}.ca.1"), a, 1, k, 1, Extent::Pooled);
            b.conv(format!("{p}.ca.2"), 1, a, k, 1, Extent::Pooled);
            b.conv(format!("{p}.pa.0"), a, a, k, 1, Extent::Full);
            b.conv(format!("{p}.pa.1"), a, 1, k, 1, Extent::Full);
            b.conv(format!("{p}.pa.2"), 1, a, k, 1, Extent::Full);
            b.conv(format!("{p}.fuse"), a, c, 3, 1, Extent::Full);
        }
        b.conv("tail".into(), c, 3, arch.attdrn_io_kernel, 1, Extent::Full);
    }
    b.stage = Stage::Extractor;
    let [e1, e2] = arch.extractor_channels;
    b.conv("extractor.conv1".into(), 3, e1, 3, 1, Extent::Full);
    b.conv("extractor.conv2".into(), e1, e2, 3, 1, Extent::Half);
    b.layers
}

/// Layers for the configured block mode.
pub fn layers(arch: &ArchConfig) -> Vec<LayerDesc> {
    layers_for(arch, arch.blocks)
}
