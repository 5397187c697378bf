//! Analytic cost accounting.
//!
//! FLOPs are counted as 2 × multiply-accumulates over convolution weights
//! only: an ordinary conv costs `2·H·W·Cout·Cin·k²`, a depthwise conv
//! `2·H·W·C·k²`, and layers on globally pooled maps (SE, channel attention)
//! run at `H = W = 1`. Biases, activations, additions, products and pooling
//! are not counted.
//!
//! For the default widths (`C = 32`, `A = 96`, `r = 4`) with three blocks of
//! each kind, RGB conv kernels `k` (around the inverted-residual stage) and
//! `q` (around the attention stage), and attention kernel `a`, the inference
//! network has
//!
//! ```text
//! DDIRB sub-block   (C² + C) + (9C + C) + (C²/r + C/r) + (C²/r + C) + (C² + C) = 2984
//! attention path    (a²A² + A) + (a²A + 1) + (a²A + A)                         = 9601  (a = 1)
//! ATTDRN block      3·(9C² + C) + 2·attention + (9AC + C)                     = 74626 (a = 1)
//! RGB convs         (3Ck² + C) + (3Ck² + 3) + (3Cq² + C) + (3Cq² + 3)         = 192(k² + q²) + 70
//! total             9·2984 + 3·ATTDRN + RGB                                   = 255796 (k = 1, q = 5, a = 1)
//! ```
//!
//! parameters; [`closed_form_params`] spells the same sum out term by term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layout::{layers_for, Extent, LayerDesc, LayerKind, Stage};
use crate::model::{ArchConfig, BlockMode, DracoWeights};
use crate::tensor::Scalar;

/// Which part of the inference network to cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    #[default]
    Full,
    DdirbOnly,
    AttdrnOnly,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Full, Component::DdirbOnly, Component::AttdrnOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Full => "full",
            Component::DdirbOnly => "ddirb_only",
            Component::AttdrnOnly => "attdrn_only",
        }
    }

    pub fn blocks(self) -> BlockMode {
        match self {
            Component::Full => BlockMode::Full,
            Component::DdirbOnly => BlockMode::Ddirb,
            Component::AttdrnOnly => BlockMode::Attdrn,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown component {s:?} (expected full | ddirb_only | attdrn_only)"
                ))
            })
    }
}

/// Parameter count of `weights`, optionally including the contrastive extractor.
pub fn count_params<T: Scalar>(weights: &DracoWeights<T>, include_extractor: bool) -> usize {
    weights
        .iter()
        .filter(|(name, _)| include_extractor || !DracoWeights::<T>::is_extractor(name))
        .map(|(_, t)| t.len())
        .sum()
}

/// Parameter count straight from the layer list, no tensors allocated.
pub fn count_params_for(arch: &ArchConfig, component: Component, include_extractor: bool) -> usize {
    layers_for(arch, component.blocks())
        .iter()
        .filter(|l| include_extractor || l.stage != Stage::Extractor)
        .map(LayerDesc::param_count)
        .sum()
}

/// Hand-expanded parameter count for a config with the default widths and
/// block structure, in terms of the two RGB conv kernels and the attention
/// kernel.
pub fn closed_form_params(ddirb_io_kernel: u64, attdrn_io_kernel: u64, attention_kernel: u64) -> u64 {
    let (c, a, r) = (32u64, 96u64, 8u64);
    let (k2, q2) = (ddirb_io_kernel.pow(2), attdrn_io_kernel.pow(2));
    let a2 = attention_kernel * attention_kernel;
    let sub = (c * c + c) // expand
        + (9 * c + c) // depthwise
        + (c * r + r) // squeeze
        + (r * c + c) // excite
        + (c * c + c); // project
    let attention = (a2 * a * a + a) + (a2 * a + 1) + (a2 * a + a);
    let attdrn = 3 * (9 * c * c + c) // branches
        + 2 * attention // channel and pixel attention
        + (9 * a * c + c); // fuse
    let rgb = (3 * c * k2 + c) // head
        + (c * 3 * k2 + 3) // mid_out
        + (3 * c * q2 + c) // mid_in
        + (c * 3 * q2 + 3); // tail
    9 * sub + 3 * attdrn + rgb
}

fn extent_pixels(extent: Extent, h: u64, w: u64) -> u64 {
    match extent {
        Extent::Full => h * w,
        Extent::Pooled => 1,
        Extent::Half => (h / 2) * (w / 2),
    }
}

/// FLOPs of one layer on an `H × W` input image.
pub fn layer_flops(layer: &LayerDesc, h: usize, w: usize) -> u64 {
    let px = extent_pixels(layer.extent, h as u64, w as u64);
    let s = layer.spec;
    let taps = (s.kernel * s.kernel) as u64;
    match layer.kind {
        LayerKind::Conv => 2 * px * (s.out_channels * s.in_channels) as u64 * taps,
        LayerKind::Depthwise => 2 * px * s.in_channels as u64 * taps,
    }
}

fn check_extent(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!("resolution must be at least 1x1, got {h}x{w}")));
    }
    Ok(())
}

/// Inference FLOPs of `component` at `H × W`. The extractor is excluded.
pub fn count_flops(arch: &ArchConfig, h: usize, w: usize, component: Component) -> Result<u64> {
    Ok(flops_breakdown(arch, h, w, component)?.total)
}

/// FLOPs of one pass of the contrastive feature extractor over an `H × W` image.
pub fn extractor_flops(arch: &ArchConfig, h: usize, w: usize) -> Result<u64> {
    check_extent(h, w)?;
    Ok(layers_for(arch, BlockMode::Full)
        .iter()
        .filter(|l| l.stage == Stage::Extractor)
        .map(|l| layer_flops(l, h, w))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub component: Component,
    pub height: usize,
    pub width: usize,
    /// Layers that run at full resolution.
    pub spatial: u64,
    /// Layers on globally pooled maps (SE and channel attention).
    pub pooled: u64,
    pub ddirb_stage: u64,
    pub attdrn_stage: u64,
    pub total: u64,
    /// One extractor pass at the same resolution, reported separately.
    pub extractor_per_image: u64,
}

pub fn flops_breakdown(arch: &ArchConfig, h: usize, w: usize, component: Component) -> Result<FlopsBreakdown> {
    arch.validate()?;
    check_extent(h, w)?;
    let mut b = FlopsBreakdown {
        component,
        height: h,
        width: w,
        spatial: 0,
        pooled: 0,
        ddirb_stage: 0,
        attdrn_stage: 0,
        total: 0,
        extractor_per_image: extractor_flops(arch, h, w)?,
    };
    for l in layers_for(arch, component.blocks()) {
        let f = layer_flops(&l, h, w);
        match l.stage {
            Stage::Extractor => continue,
            Stage::Ddirb => b.ddirb_stage += f,
            Stage::Attdrn => b.attdrn_stage += f,
        }
        if l.extent == Extent::Pooled {
            b.pooled += f;
        } else {
            b.spatial += f;
        }
        b.total += f;
    }
    Ok(b)
}

/// FLOPs of one inverted-residual sub-block (expand, depthwise, SE, project)
/// at width `c` and SE reduction `r`.
pub fn inverted_residual_flops(c: usize, r: usize, h: usize, w: usize) -> u64 {
    let (c, r, px) = (c as u64, r as u64, (h * w) as u64);
    2 * px * c * c + 2 * px * c * 9 + 2 * c * (c / r) + 2 * (c / r) * c + 2 * px * c * c
}

/// FLOPs of an ordinary residual block with two 3×3 convs at width `c`.
pub fn ordinary_residual_flops(c: usize, h: usize, w: usize) -> u64 {
    2 * (2 * (h * w) as u64 * (c * c) as u64 * 9)
}

/// Parameter and FLOP summary for the CLI.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub params: usize,
    pub params_with_extractor: usize,
    pub flops: u64,
    pub height: usize,
    pub width: usize,
    pub component: Component,
    pub attention_kernel: usize,
    pub breakdown: FlopsBreakdown,
    pub config_digest: String,
}

pub fn profile(arch: &ArchConfig, h: usize, w: usize, component: Component) -> Result<ProfileReport> {
    let breakdown = flops_breakdown(arch, h, w, component)?;
    Ok(ProfileReport {
        params: count_params_for(arch, component, false),
        params_with_extractor: count_params_for(arch, component, true),
        flops: breakdown.total,
        height: h,
        width: w,
        component,
        attention_kernel: arch.attention_kernel,
        breakdown,
        config_digest: arch.digest(),
    })
}
