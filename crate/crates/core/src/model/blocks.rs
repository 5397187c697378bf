//! Building blocks of the network, recorded on a [`Graph`].

use super::config::ArchConfig;
use super::layout::ddirb_sub_prefix;
use super::weights::ParamVars;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

fn expect_channels<T: Scalar>(g: &Graph<T>, x: Var, want: usize, what: &str) -> Result<()> {
    let c = g.shape(x).c;
    if c != want {
        return Err(Error::Dimension(format!(
            "{what} expects {want} channels, got {c}"
        )));
    }
    Ok(())
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let y = p.apply(g, name, x)?;
    Ok(g.relu(y))
}

/// Squeeze-and-excitation: `x ⊙ σ(excite(relu(squeeze(gap(x)))))`, the gate
/// broadcast over each channel plane. `prefix` names the `squeeze`/`excite`
/// layers.
pub fn se_block<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let squeeze = format!("{prefix}.squeeze");
    let spec = p.spec(&squeeze)?;
    expect_channels(g, x, spec.in_channels, "SE block")?;
    let pooled = g.global_avg(x)?;
    let s = conv_relu(g, p, &squeeze, pooled)?;
    let e = p.apply(g, &format!("{prefix}.excite"), s)?;
    let gate = g.sigmoid(e);
    g.mul_bcast(x, gate)
}

/// One dense dilated inverted residual block: three
/// expand → depthwise → SE → project sub-blocks at increasing dilation.
///
/// The first skip adds the expand-conv activation to the projection; the
/// second and third add each sub-block's input to its projection.
pub fn ddirb_block<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    arch: &ArchConfig,
    block: usize,
    x: Var,
) -> Result<Var> {
    expect_channels(g, x, arch.base_channels, "DDIRB")?;
    let mut skip_in = x;
    for sub in 0..arch.ddirb_dilations.len() {
        let pre = ddirb_sub_prefix(block, sub);
        let expanded = conv_relu(g, p, &format!("{pre}.expand"), skip_in)?;
        let spatial = conv_relu(g, p, &format!("{pre}.depthwise"), expanded)?;
        let gated = se_block(g, p, &format!("{pre}.se"), spatial)?;
        let projected = p.apply(g, &format!("{pre}.project"), gated)?;
        let skip = if sub == 0 { expanded } else { skip_in };
        skip_in = g.add(skip, projected)?;
    }
    Ok(skip_in)
}

/// Attention-based detail recovery block: parallel dilated convolutions,
/// channel attention, pixel attention and a residual projection.
pub fn attdrn_block<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    arch: &ArchConfig,
    block: usize,
    x: Var,
) -> Result<Var> {
    expect_channels(g, x, arch.base_channels, "ATTDRN")?;
    let pre = format!("attdrn.{block}");
    let mut branches = Vec::with_capacity(arch.attdrn_dilations.len());
    for i in 0..arch.attdrn_dilations.len() {
        branches.push(conv_relu(g, p, &format!("{pre}.branch{i}"), x)?);
    }
    let cat = g.concat_channels(&branches)?;

    // channel attention on the pooled descriptor, added back per channel
    let mut ca = g.global_avg(cat)?;
    for i in 0..3 {
        ca = conv_relu(g, p, &format!("{pre}.ca.{i}"), ca)?;
    }
    let ca_out = g.add_bcast(cat, ca)?;

    // pixel attention: full-resolution map multiplied into the first conv
    let pa_first = conv_relu(g, p, &format!("{pre}.pa.0"), ca_out)?;
    let pa_mid = conv_relu(g, p, &format!("{pre}.pa.1"), pa_first)?;
    let pa_map = conv_relu(g, p, &format!("{pre}.pa.2"), pa_mid)?;
    let attended = g.mul(pa_first, pa_map)?;

    let fused = p.apply(g, &format!("{pre}.fuse"), attended)?;
    g.add(x, fused)
}

/// Two conv(3×3) + ReLU + 2×2 max-pool stages; returns both pooled maps.
pub fn feature_extractor<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, image: Var) -> Result<[Var; 2]> {
    let s = g.shape(image);
    expect_channels(g, image, 3, "feature extractor")?;
    if s.h < 4 || s.w < 4 {
        return Err(Error::Dimension(format!(
            "feature extractor needs at least 4×4 input, got {}×{}",
            s.h, s.w
        )));
    }
    p.note_extractor_call();
    let a = conv_relu(g, p, "extractor.conv1", image)?;
    let f1 = g.max_pool2(a)?;
    let b = conv_relu(g, p, "extractor.conv2", f1)?;
    let f2 = g.max_pool2(b)?;
    Ok([f1, f2])
}
