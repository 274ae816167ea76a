//! Volume comparison metrics: cosine similarity, PSNR and NMSE.
//!
//! PSNR and NMSE take the reference first. Sums use a fixed pairwise order.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::summation::pairwise_sum;
use crate::volume::Volume;

fn check_shapes(a: &Volume, b: &Volume) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Mismatch {
            first: format!("{:?}", a.shape()),
            second: format!("{:?}", b.shape()),
            detail: "volume shapes differ".into(),
        });
    }
    Ok(())
}

fn sum_pairs(p: &[f32], q: &[f32], f: impl Fn(f64, f64) -> f64) -> f64 {
    let terms: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| f(a as f64, b as f64)).collect();
    pairwise_sum(&terms)
}

/// `<p, q> / (||p|| ||q||)`.
pub fn cosine_similarity(p: &Volume, q: &Volume) -> Result<f64> {
    check_shapes(p, q)?;
    let pp = sum_pairs(&p.data, &p.data, |a, _| a * a);
    let qq = sum_pairs(&q.data, &q.data, |a, _| a * a);
    if pp == 0.0 || qq == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero volume".into()));
    }
    let pq = sum_pairs(&p.data, &q.data, |a, b| a * b);
    Ok((pq / (pp.sqrt() * qq.sqrt())).clamp(-1.0, 1.0))
}

/// `10 log10(max(p_ref)^2 / MSE)`; `f64::INFINITY` when the volumes are equal.
pub fn psnr(p_ref: &Volume, q: &Volume) -> Result<f64> {
    check_shapes(p_ref, q)?;
    let peak = p_ref.max() as f64;
    if !(peak > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "PSNR needs a positive reference maximum, got {peak}"
        )));
    }
    let mse = sum_pairs(&p_ref.data, &q.data, |a, b| (a - b) * (a - b)) / p_ref.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `||p_ref - q||^2 / ||p_ref||^2`.
pub fn nmse(p_ref: &Volume, q: &Volume) -> Result<f64> {
    check_shapes(p_ref, q)?;
    let pp = sum_pairs(&p_ref.data, &p_ref.data, |a, _| a * a);
    if pp == 0.0 {
        return Err(Error::UndefinedMetric("NMSE against a zero reference".into()));
    }
    Ok(sum_pairs(&p_ref.data, &q.data, |a, b| (a - b) * (a - b)) / pp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cosine: f64,
    /// Infinite for identical volumes; written as the string `"inf"`.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub nmse: f64,
    pub shape: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
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
        Db::Text(t) => Err(serde::de::Error::custom(format!("invalid PSNR {t:?}"))),
    }
}

impl MetricReport {
    pub fn compute(reference: &Volume, test: &Volume) -> Result<Self> {
        Ok(MetricReport {
            cosine: cosine_similarity(reference, test)?,
            psnr_db: psnr(reference, test)?,
            nmse: nmse(reference, test)?,
            shape: reference.shape(),
            reference: None,
            test: None,
        })
    }

    pub fn csv_header() -> &'static str {
        "cosine,psnr_db,nmse"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.cosine, self.psnr_db, self.nmse)
    }
}
