//! Training objectives: MAE, negative SSIM, the triplet and quadruplet
//! contrastive ratios over extractor features, and their weighted sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{feature_extractor, ParamVars};
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

/// SSIM stabilizers for unit dynamic range: `(0.01)²` and `(0.03)²`.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Side of the Gaussian SSIM window and its standard deviation.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_mae: f64,
    pub lambda_ssim: f64,
    pub lambda_contrastive: f64,
    /// Overall contrastive balance `B`.
    pub balance: f64,
    /// Per-level weight `Ω`.
    pub omega: f64,
    /// Denominator guard of the contrastive ratios.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mae: 1.0,
            lambda_ssim: 1.0,
            lambda_contrastive: 0.1,
            balance: 0.1,
            omega: 0.03125,
            eps: 1e-7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_mae,
            self.lambda_ssim,
            self.lambda_contrastive,
            self.balance,
            self.omega,
            self.eps,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative with eps > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which terms make up the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    /// `λ1·MAE + λ2·SSIM + λ3·quadruplet`
    #[default]
    #[serde(rename = "quadruplet")]
    Quadruplet,
    /// `λ1·MAE + λ2·SSIM + λ3·triplet`
    #[serde(rename = "triplet")]
    Triplet,
    /// `λ1·MAE + λ3·quadruplet`
    #[serde(rename = "mae+quad")]
    MaeQuad,
    /// `λ2·SSIM + λ3·quadruplet`
    #[serde(rename = "ssim+quad")]
    SsimQuad,
    /// `λ1·MAE + λ2·SSIM`
    #[serde(rename = "no-contrastive")]
    NoContrastive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contrastive {
    Triplet,
    Quadruplet,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::Quadruplet,
        LossMode::Triplet,
        LossMode::MaeQuad,
        LossMode::SsimQuad,
        LossMode::NoContrastive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Quadruplet => "quadruplet",
            LossMode::Triplet => "triplet",
            LossMode::MaeQuad => "mae+quad",
            LossMode::SsimQuad => "ssim+quad",
            LossMode::NoContrastive => "no-contrastive",
        }
    }

    pub fn uses_mae(self) -> bool {
        !matches!(self, LossMode::SsimQuad)
    }

    pub fn uses_ssim(self) -> bool {
        !matches!(self, LossMode::MaeQuad)
    }

    pub fn contrastive(self) -> Option<Contrastive> {
        match self {
            LossMode::Triplet => Some(Contrastive::Triplet),
            LossMode::NoContrastive => None,
            _ => Some(Contrastive::Quadruplet),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown loss mode {s:?} (expected quadruplet | triplet | mae+quad | ssim+quad | no-contrastive)"
                ))
            })
    }
}

/// Anchor `J`, intermediate `J′`, positive (clear) and negative (hazy).
#[derive(Clone, Copy, Debug)]
pub struct Quadruple {
    pub anchor: Var,
    pub intermediate: Var,
    pub positive: Var,
    pub negative: Var,
}

impl Quadruple {
    fn check<T: Scalar>(&self, g: &Graph<T>) -> Result<Shape> {
        let s = g.shape(self.anchor);
        for v in [self.intermediate, self.positive, self.negative] {
            if g.shape(v) != s {
                return Err(Error::Dimension(format!(
                    "quadruple members differ in shape: {} vs {}",
                    g.shape(v),
                    s
                )));
            }
        }
        if s.c != 3 {
            return Err(Error::Dimension(format!("quadruple images must be RGB, got {s}")));
        }
        Ok(s)
    }
}

fn l1_mean<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Mean absolute error over every element.
pub fn mae_loss<T: Scalar>(g: &mut Graph<T>, prediction: Var, target: Var) -> Result<Var> {
    l1_mean(g, prediction, target)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimWindow {
    /// Statistics over the whole image per channel, then averaged.
    #[default]
    Global,
    /// 11×11 Gaussian (σ = 1.5) windows over the valid region.
    Gaussian11,
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

struct Moments {
    mx: Var,
    my: Var,
    vx: Var,
    vy: Var,
    cxy: Var,
}

fn global_moments<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Moments> {
    let mx = g.global_avg(x)?;
    let my = g.global_avg(y)?;
    let xc = g.sub_bcast(x, mx)?;
    let yc = g.sub_bcast(y, my)?;
    let xx = g.mul(xc, xc)?;
    let yy = g.mul(yc, yc)?;
    let xy = g.mul(xc, yc)?;
    Ok(Moments {
        mx,
        my,
        vx: g.global_avg(xx)?,
        vy: g.global_avg(yy)?,
        cxy: g.global_avg(xy)?,
    })
}

fn windowed_moments<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Moments> {
    let s = g.shape(x);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let k = SSIM_WINDOW;
    let kernel = Tensor::from_fn(Shape::new(s.c, 1, k, k), |_, _, i, j| T::from_f64(taps[i] * taps[j]));
    let w = g.constant(kernel);
    let b = g.constant(Tensor::zeros(Shape::new(1, s.c, 1, 1)));
    let spec = crate::tensor::ConvSpec::new(s.c, s.c, k, 1);
    let half = k / 2;
    let (vh, vw) = (s.h - 2 * half, s.w - 2 * half);
    let blur = |g: &mut Graph<T>, v: Var| -> Result<Var> {
        let f = g.depthwise_conv2d(v, w, b, spec)?;
        g.crop(f, half, half, vh, vw)
    };
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mx = blur(g, x)?;
    let my = blur(g, y)?;
    let exx = blur(g, xx)?;
    let eyy = blur(g, yy)?;
    let exy = blur(g, xy)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    Ok(Moments {
        mx,
        my,
        vx: g.sub(exx, mx2)?,
        vy: g.sub(eyy, my2)?,
        cxy: g.sub(exy, mxy)?,
    })
}

/// Mean SSIM of `x` against `y` as a scalar node. Windows larger than the
/// image fall back to global statistics.
pub fn ssim_value<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, window: SsimWindow) -> Result<Var> {
    let s = g.shape(x);
    if g.shape(y) != s {
        return Err(Error::Dimension(format!(
            "ssim: shapes {} and {} differ",
            s,
            g.shape(y)
        )));
    }
    let m = match window {
        SsimWindow::Gaussian11 if s.h >= SSIM_WINDOW && s.w >= SSIM_WINDOW => windowed_moments(g, x, y)?,
        SsimWindow::Gaussian11 => {
            log::warn!("ssim: {}x{} is smaller than the window, using global statistics", s.h, s.w);
            global_moments(g, x, y)?
        }
        SsimWindow::Global => global_moments(g, x, y)?,
    };
    // (2μxμy + C1)(2σxy + C2) / ((μx² + μy² + C1)(σx² + σy² + C2))
    let mxy = g.mul(m.mx, m.my)?;
    let lum_num = g.scale(mxy, 2.0);
    let lum_num = g.shift(lum_num, SSIM_C1);
    let cs_num = g.scale(m.cxy, 2.0);
    let cs_num = g.shift(cs_num, SSIM_C2);
    let num = g.mul(lum_num, cs_num)?;
    let mx2 = g.mul(m.mx, m.mx)?;
    let my2 = g.mul(m.my, m.my)?;
    let lum_den = g.add(mx2, my2)?;
    let lum_den = g.shift(lum_den, SSIM_C1);
    let cs_den = g.add(m.vx, m.vy)?;
    let cs_den = g.shift(cs_den, SSIM_C2);
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// Negative global SSIM.
pub fn ssim_loss<T: Scalar>(g: &mut Graph<T>, prediction: Var, target: Var) -> Result<Var> {
    let s = ssim_value(g, prediction, target, SsimWindow::Global)?;
    Ok(g.scale(s, -1.0))
}

/// Per-level extractor features of the images taking part in a contrastive term.
pub struct ContrastiveFeatures<'a> {
    pub anchor: &'a [Var],
    /// `None` for the triplet form.
    pub intermediate: Option<&'a [Var]>,
    pub positive: &'a [Var],
    pub negative: &'a [Var],
}

/// `B · Σᵢ Ω · L1(Jᵢ, GTᵢ) / (L1(Jᵢ, Iᵢ) [+ L1(J′ᵢ, Iᵢ) + L1(Jᵢ, J′ᵢ)] + ε)`,
/// each L1 the mean absolute difference over a feature tensor.
pub fn contrastive_from_features<T: Scalar>(
    g: &mut Graph<T>,
    f: &ContrastiveFeatures<'_>,
    lw: &LossWeights,
) -> Result<Var> {
    let levels = f.anchor.len();
    if levels == 0 || f.positive.len() != levels || f.negative.len() != levels {
        return Err(Error::Dimension("contrastive feature levels do not line up".into()));
    }
    if f.intermediate.is_some_and(|i| i.len() != levels) {
        return Err(Error::Dimension("intermediate feature levels do not line up".into()));
    }
    let mut total: Option<Var> = None;
    for i in 0..levels {
        let pull = l1_mean(g, f.anchor[i], f.positive[i])?;
        let mut push = l1_mean(g, f.anchor[i], f.negative[i])?;
        if let Some(mid) = f.intermediate {
            let mid_neg = l1_mean(g, mid[i], f.negative[i])?;
            push = g.add(push, mid_neg)?;
            let mid_anchor = l1_mean(g, f.anchor[i], mid[i])?;
            push = g.add(push, mid_anchor)?;
        }
        let push = g.shift(push, lw.eps);
        let ratio = g.div(pull, push)?;
        let term = g.scale(ratio, lw.omega);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(g.scale(total.expect("at least one level"), lw.balance))
}

fn detached_features<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, image: Var) -> Result<[Var; 2]> {
    let [a, b] = feature_extractor(g, p, image)?;
    Ok([g.detach(a), g.detach(b)])
}

/// Quadruplet contrastive loss. Gradients reach `J`, `J′` and the extractor
/// through the anchor and intermediate branches; clear and hazy features are
/// constants.
pub fn quadruplet_loss<T: Scalar>(
    g: &mut Graph<T>,
    q: &Quadruple,
    p: &ParamVars,
    lw: &LossWeights,
) -> Result<Var> {
    q.check(g)?;
    let fa = feature_extractor(g, p, q.anchor)?;
    let fm = feature_extractor(g, p, q.intermediate)?;
    let fp = detached_features(g, p, q.positive)?;
    let fn_ = detached_features(g, p, q.negative)?;
    contrastive_from_features(
        g,
        &ContrastiveFeatures {
            anchor: &fa,
            intermediate: Some(&fm),
            positive: &fp,
            negative: &fn_,
        },
        lw,
    )
}

/// Triplet contrastive loss (no intermediate-image terms).
pub fn triplet_loss<T: Scalar>(
    g: &mut Graph<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    p: &ParamVars,
    lw: &LossWeights,
) -> Result<Var> {
    let q = Quadruple {
        anchor,
        intermediate: anchor,
        positive,
        negative,
    };
    q.check(g)?;
    let fa = feature_extractor(g, p, anchor)?;
    let fp = detached_features(g, p, positive)?;
    let fn_ = detached_features(g, p, negative)?;
    contrastive_from_features(
        g,
        &ContrastiveFeatures {
            anchor: &fa,
            intermediate: None,
            positive: &fp,
            negative: &fn_,
        },
        lw,
    )
}

/// Total loss and the (unweighted) terms that went into it.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub mae: Option<Var>,
    pub ssim: Option<Var>,
    pub contrastive: Option<Var>,
}

/// Weighted sum of the terms selected by `mode`.
pub fn draco_total_loss<T: Scalar>(
    g: &mut Graph<T>,
    q: &Quadruple,
    p: &ParamVars,
    lw: &LossWeights,
    mode: LossMode,
) -> Result<LossTerms> {
    lw.validate()?;
    q.check(g)?;
    let mae = if mode.uses_mae() {
        Some(mae_loss(g, q.anchor, q.positive)?)
    } else {
        None
    };
    let ssim = if mode.uses_ssim() {
        Some(ssim_loss(g, q.anchor, q.positive)?)
    } else {
        None
    };
    let contrastive = match mode.contrastive() {
        Some(Contrastive::Quadruplet) => Some(quadruplet_loss(g, q, p, lw)?),
        Some(Contrastive::Triplet) => Some(triplet_loss(g, q.anchor, q.positive, q.negative, p, lw)?),
        None => None,
    };
    let mut total: Option<Var> = None;
    for (term, weight) in [
        (mae, lw.lambda_mae),
        (ssim, lw.lambda_ssim),
        (contrastive, lw.lambda_contrastive),
    ] {
        if let Some(t) = term {
            let w = g.scale(t, weight);
            total = Some(match total {
                Some(acc) => g.add(acc, w)?,
                None => w,
            });
        }
    }
    Ok(LossTerms {
        total: total.expect("every mode has at least one term"),
        mae,
        ssim,
        contrastive,
    })
}
