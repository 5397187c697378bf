use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `(hazy, clear)` training pair, each `(1, 3, H, W)`.
pub type Pair = (Tensor<f32>, Tensor<f32>);

/// Where one crop of a batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropOrigin {
    pub pair: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug)]
pub struct CropBatch {
    /// `(B, 3, crop, crop)`.
    pub hazy: Tensor<f32>,
    pub clear: Tensor<f32>,
    pub origins: Vec<CropOrigin>,
}

fn check_pair(i: usize, (hazy, clear): &Pair) -> Result<()> {
    let s = hazy.shape();
    if clear.shape() != s || s.n != 1 || s.c != 3 {
        return Err(Error::Dimension(format!(
            "pair {i}: hazy {s} and clear {} must both be (1, 3, H, W)",
            clear.shape()
        )));
    }
    Ok(())
}

/// Draw `batch` aligned crops: a pair uniformly, then a top-left corner
/// uniformly over the valid offsets, shared by both members. Pairs smaller
/// than `crop` are an error when `strict`, otherwise skipped with a warning.
pub fn sample_crops<R: Rng + ?Sized>(
    pairs: &[Pair],
    crop: usize,
    batch: usize,
    rng: &mut R,
    strict: bool,
) -> Result<CropBatch> {
    if batch == 0 || crop == 0 {
        return Err(Error::Config("batch and crop must be positive".into()));
    }
    let mut eligible = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        check_pair(i, p)?;
        let s = p.0.shape();
        if s.h < crop || s.w < crop {
            let msg = format!("pair {i} is {}x{}, smaller than crop {crop}", s.h, s.w);
            if strict {
                return Err(Error::Dimension(msg));
            }
            log::warn!("{msg}; skipped");
            continue;
        }
        eligible.push(i);
    }
    if eligible.is_empty() {
        return Err(Error::Dimension(format!("no pair is at least {crop}x{crop}")));
    }
    let mut hazy = Vec::with_capacity(batch);
    let mut clear = Vec::with_capacity(batch);
    let mut origins = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pair = eligible[rng.random_range(0..eligible.len())];
        let s = pairs[pair].0.shape();
        let y = rng.random_range(0..=s.h - crop);
        let x = rng.random_range(0..=s.w - crop);
        hazy.push(pairs[pair].0.crop(y, x, crop, crop)?);
        clear.push(pairs[pair].1.crop(y, x, crop, crop)?);
        origins.push(CropOrigin { pair, y, x });
    }
    Ok(CropBatch {
        hazy: Tensor::stack(&hazy)?,
        clear: Tensor::stack(&clear)?,
        origins,
    })
}
