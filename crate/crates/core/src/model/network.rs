use super::blocks::{attdrn_block, ddirb_block};
use super::config::ArchConfig;
use super::weights::{DracoWeights, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Both images produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DracoOutput {
    /// `J′`: hazy input plus the inverted-residual stage's correction.
    pub intermediate: Var,
    /// `J`: `J′` plus the detail-recovery correction.
    pub output: Var,
}

/// Full forward pass. Outputs are not clamped; clamp when exporting images.
pub fn draco_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    arch: &ArchConfig,
    hazy: Var,
) -> Result<DracoOutput> {
    let s = g.shape(hazy);
    if s.c != 3 {
        return Err(Error::Dimension(format!(
            "network input must have 3 channels, got {}",
            s.c
        )));
    }
    let intermediate = if arch.blocks.has_ddirb() {
        let head = p.apply(g, "head", hazy)?;
        let mut h = g.relu(head);
        for b in 0..arch.n_ddirb {
            h = ddirb_block(g, p, arch, b, h)?;
        }
        let r = p.apply(g, "mid_out", h)?;
        g.add(hazy, r)?
    } else {
        hazy
    };
    let output = if arch.blocks.has_attdrn() {
        let lift = p.apply(g, "mid_in", intermediate)?;
        let mut a = g.relu(lift);
        for b in 0..arch.n_attdrn {
            a = attdrn_block(g, p, arch, b, a)?;
        }
        let r = p.apply(g, "tail", a)?;
        g.add(intermediate, r)?
    } else {
        intermediate
    };
    Ok(DracoOutput {
        intermediate,
        output,
    })
}

/// Inference without gradients: returns `(J′, J)`.
pub fn dehaze<T: Scalar>(weights: &DracoWeights<T>, hazy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let p = weights.register_frozen(&mut g);
    let x = g.constant(hazy.clone());
    let out = draco_forward(&mut g, &p, weights.arch(), x)?;
    Ok((g.value(out.intermediate).clone(), g.value(out.output).clone()))
}
