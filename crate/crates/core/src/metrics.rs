//! Error metrics and result tables.
//!
//! RMSE and MAE are computed over valid pixels only; a pixel value of 0 in
//! the reference conventionally marks an invalid measurement.

use crate::error::{Error, Result};
use crate::field::Field2D;

/// Upsampling methods exposed by the evaluation pipeline. The two learned
/// solver variants differ only in which checkpoint they expect: a
/// pretrained one for `CnnPlusAtgv`, a jointly trained one for `AtgvNet`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bilinear,
    Bicubic,
    CnnOnly,
    CnnPlusAtgv,
    AtgvNet,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Bilinear,
        Method::Bicubic,
        Method::CnnOnly,
        Method::CnnPlusAtgv,
        Method::AtgvNet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
            Method::CnnOnly => "cnn_only",
            Method::CnnPlusAtgv => "cnn_plus_atgv",
            Method::AtgvNet => "atgv_net",
        }
    }

    pub fn needs_checkpoint(&self) -> bool {
        matches!(self, Method::CnnOnly | Method::CnnPlusAtgv | Method::AtgvNet)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "bilinear" => Ok(Method::Bilinear),
            "bicubic" => Ok(Method::Bicubic),
            "cnn_only" => Ok(Method::CnnOnly),
            "cnn_plus_atgv" => Ok(Method::CnnPlusAtgv),
            "atgv_net" => Ok(Method::AtgvNet),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected bilinear, bicubic, cnn-only, cnn-plus-atgv, or atgv-net)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluation row: errors of one method on one sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub sample: String,
    pub rho: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Validity mask from a reference map: zero-valued pixels are invalid.
pub fn mask_valid(reference: &Field2D) -> Vec<bool> {
    reference.data().iter().map(|&v| v != 0.0).collect()
}

fn masked_residuals<'a>(
    a: &'a Field2D,
    b: &'a Field2D,
    mask: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = f64> + 'a> {
    if !a.same_shape(b) {
        return Err(Error::Shape("metric operands differ in shape".into()));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        if !m.iter().any(|&v| v) {
            return Err(Error::InvalidArgument(
                "mask excludes every pixel".into(),
            ));
        }
    }
    let mask = mask.map(|m| m.to_vec());
    Ok(a.data()
        .iter()
        .zip(b.data())
        .enumerate()
        .filter(move |(i, _)| mask.as_ref().map_or(true, |m| m[*i]))
        .map(|(_, (x, y))| x - y))
}

/// Root-mean-squared error over valid pixels.
pub fn rmse(a: &Field2D, b: &Field2D, mask: Option<&[bool]>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in masked_residuals(a, b, mask)? {
        sum += r * r;
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute error over valid pixels.
pub fn mae(a: &Field2D, b: &Field2D, mask: Option<&[bool]>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in masked_residuals(a, b, mask)? {
        sum += r.abs();
        n += 1;
    }
    Ok(sum / n as f64)
}

/// CSV table (`method,sample,rho,rmse,mae` header plus one row per result).
pub fn to_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("method,sample,rho,rmse,mae\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.sample, r.rho, r.rmse, r.mae
        ));
    }
    out
}

/// Human-readable aligned table of the same rows.
pub fn to_aligned_table(results: &[EvalResult]) -> String {
    let mut widths = [6usize, 6, 3];
    for r in results {
        widths[0] = widths[0].max(r.method.len());
        widths[1] = widths[1].max(r.sample.len());
        widths[2] = widths[2].max(r.rho.to_string().len());
    }
    let mut out = format!(
        "{:<w0$}  {:<w1$}  {:>w2$}  {:>12}  {:>12}\n",
        "method",
        "sample",
        "rho",
        "rmse",
        "mae",
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2],
    );
    for r in results {
        out.push_str(&format!(
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>12.6}  {:>12.6}\n",
            r.method,
            r.sample,
            r.rho,
            r.rmse,
            r.mae,
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_and_mae_basics() {
        let a = Field2D::constant(1, 3, 3, 5.0);
        assert_eq!(rmse(&a, &a, None).unwrap(), 0.0);
        assert_eq!(mae(&a, &a, None).unwrap(), 0.0);

        let b = a.map(|v| v + 2.0);
        assert!((rmse(&a, &b, None).unwrap() - 2.0).abs() < 1e-15);

        // residuals +1 and -3: MAE 2, RMSE sqrt(5)
        let x = Field2D::from_vec(1, 1, 2, vec![1.0, -3.0]);
        let z = Field2D::zeros(1, 1, 2);
        assert!((mae(&x, &z, None).unwrap() - 2.0).abs() < 1e-15);
        assert!((rmse(&x, &z, None).unwrap() - 5.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = Field2D::zeros(1, 7, 9);
        let mut b = Field2D::zeros(1, 7, 9);
        for v in a.data_mut() {
            *v = rng.gen_range(-10.0..10.0);
        }
        for v in b.data_mut() {
            *v = rng.gen_range(-10.0..10.0);
        }
        let mut sq = 0.0;
        let mut ab = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            sq += d * d;
            ab += d.abs();
        }
        let n = a.len() as f64;
        assert!((rmse(&a, &b, None).unwrap() - (sq / n).sqrt()).abs() < 1e-12);
        assert!((mae(&a, &b, None).unwrap() - ab / n).abs() < 1e-12);
        assert_eq!(rmse(&a, &b, None).unwrap(), rmse(&b, &a, None).unwrap());
        assert_eq!(mae(&a, &b, None).unwrap(), mae(&b, &a, None).unwrap());
        // rmse >= mae (power-mean inequality)
        assert!(rmse(&a, &b, None).unwrap() >= mae(&a, &b, None).unwrap());
        // exact scaling
        let k = -3.5;
        assert!(
            (rmse(&a.scale(k), &b.scale(k), None).unwrap()
                - k.abs() * rmse(&a, &b, None).unwrap())
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn mask_behavior() {
        let a = Field2D::from_vec(1, 1, 3, vec![1.0, 100.0, 3.0]);
        let b = Field2D::from_vec(1, 1, 3, vec![1.0, 0.0, 3.0]);
        // mask from reference b: middle pixel invalid
        let m = mask_valid(&b);
        assert_eq!(m, vec![true, false, true]);
        assert_eq!(rmse(&a, &b, Some(&m)).unwrap(), 0.0);
        // all-invalid mask rejected
        let none = vec![false; 3];
        assert!(rmse(&a, &b, Some(&none)).is_err());
        // length mismatch rejected
        assert!(rmse(&a, &b, Some(&[true])).is_err());
    }

    #[test]
    fn method_parsing_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("atgv-net".parse::<Method>().unwrap(), Method::AtgvNet);
        assert!("magic".parse::<Method>().is_err());
    }

    #[test]
    fn csv_schema() {
        let rows = vec![EvalResult {
            method: "bilinear".into(),
            sample: "scene_0001".into(),
            rho: 2,
            rmse: 1.5,
            mae: 1.0,
        }];
        let csv = to_csv(&rows);
        assert!(csv.starts_with("method,sample,rho,rmse,mae\n"));
        assert!(csv.contains("bilinear,scene_0001,2,1.5,1\n"));
        let table = to_aligned_table(&rows);
        assert!(table.contains("bilinear"));
    }
}
