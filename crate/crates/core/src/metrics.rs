//! Image-quality metrics and the per-image report.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::loss::{ssim_value, SsimWindow, SSIM_WINDOW};
use crate::tensor::{Graph, Scalar, Tensor};

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {} and {} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error, accumulated in f64.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "mse")?;
    if a.is_empty() {
        return Err(Error::Dimension("mse of empty tensors".into()));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(1 / MSE)` for unit-range images; `+∞` when the images match.
pub fn psnr<T: Scalar>(j: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let m = mse(j, gt)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimScore {
    pub value: f64,
    /// Set when the image was smaller than the 11×11 window and global
    /// statistics were used instead.
    pub fell_back: bool,
}

/// Mean SSIM over 11×11 Gaussian windows (σ = 1.5), computed in f64.
pub fn ssim_metric<T: Scalar>(j: &Tensor<T>, gt: &Tensor<T>) -> Result<SsimScore> {
    same_shape(j, gt, "ssim")?;
    let s = j.shape();
    let fell_back = s.h < SSIM_WINDOW || s.w < SSIM_WINDOW;
    let mut g = Graph::<f64>::new();
    let a = g.constant(j.cast());
    let b = g.constant(gt.cast());
    let v = ssim_value(&mut g, a, b, SsimWindow::Gaussian11)?;
    Ok(SsimScore {
        value: g.value(v).item()?,
        fell_back,
    })
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
    }
}

/// Quality and cost of one evaluated image. An exact match serializes
/// `psnr_db` as the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub params: usize,
    pub flops: u64,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub ssim_fallback: bool,
    #[serde(default)]
    pub config_digest: String,
}

/// Means over a set of reports. Infinite PSNRs are left out of the PSNR mean
/// and counted separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub images: usize,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub mean_psnr_db: f64,
    pub exact_matches: usize,
    pub mean_ssim: f64,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let finite: Vec<f64> = reports.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
    let mean_psnr_db = if finite.is_empty() {
        if reports.is_empty() {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    AggregateReport {
        images: reports.len(),
        mean_psnr_db,
        exact_matches: reports.len() - finite.len(),
        mean_ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / reports.len().max(1) as f64,
    }
}
