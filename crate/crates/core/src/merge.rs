//! Parameter-delta extraction and merging, plus whole-manifest quantization
//! of the merged result.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::blockquant::{quantize_blockwise, BlockQuantConfig};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_store::{ModelManifest, Tensor};

/// Per-parameter F32 updates relative to some base manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightDelta {
    pub entries: BTreeMap<String, Tensor>,
}

impl WeightDelta {
    /// Reads a delta stored as an ordinary manifest.
    pub fn from_manifest(m: &ModelManifest) -> Self {
        Self {
            entries: m.params.clone(),
        }
    }

    pub fn to_manifest(&self, name: &str) -> Result<ModelManifest> {
        let mut m = ModelManifest::new(name);
        for (k, t) in &self.entries {
            m.insert(k.clone(), t.clone())?;
        }
        Ok(m)
    }
}

fn f32_of<'a>(t: &'a Tensor, name: &str) -> Result<&'a [f32]> {
    t.as_f32()
        .ok_or_else(|| Error::InvalidTensor(format!("`{name}` must be F32")))
}

fn same_names<'a>(
    left: impl Iterator<Item = &'a String>,
    right: impl Iterator<Item = &'a String>,
    what: &str,
) -> Result<()> {
    let l: Vec<_> = left.collect();
    let r: Vec<_> = right.collect();
    if l == r {
        return Ok(());
    }
    let only_l: Vec<_> = l.iter().filter(|k| !r.contains(k)).collect();
    let only_r: Vec<_> = r.iter().filter(|k| !l.contains(k)).collect();
    Err(Error::ParameterSetMismatch(format!(
        "{what}: only in first {only_l:?}, only in second {only_r:?}"
    )))
}

fn check_shape(name: &str, expected: &Tensor, found: &Tensor) -> Result<()> {
    if expected.dims() != found.dims() {
        return Err(Error::ParameterShapeMismatch {
            name: name.to_string(),
            expected: expected.dims().to_vec(),
            found: found.dims().to_vec(),
        });
    }
    Ok(())
}

/// `finetuned - base`, elementwise in F32.
pub fn extract_delta(finetuned: &ModelManifest, base: &ModelManifest) -> Result<WeightDelta> {
    same_names(finetuned.params.keys(), base.params.keys(), "parameter sets differ")?;
    let entries = base
        .params
        .par_iter()
        .map(|(name, b)| {
            let f = &finetuned.params[name];
            check_shape(name, b, f)?;
            let d = f32_of(f, name)?
                .iter()
                .zip(f32_of(b, name)?)
                .map(|(x, y)| x - y)
                .collect();
            Ok((name.clone(), Tensor::from_f32(b.dims().to_vec(), d)?))
        })
        .collect::<Result<_>>()?;
    Ok(WeightDelta { entries })
}

/// `base + c_0*d_0 + c_1*d_1 + ...`, accumulated left to right in F32.
///
/// `coefficients` defaults to all ones. A delta may cover a subset of the base
/// parameters; naming a parameter the base lacks is an error.
pub fn merge_deltas_weighted(
    base: &ModelManifest,
    deltas: &[WeightDelta],
    coefficients: Option<&[f32]>,
) -> Result<ModelManifest> {
    if let Some(c) = coefficients {
        if c.len() != deltas.len() {
            return Err(Error::InvalidConfig(format!(
                "{} coefficients for {} deltas",
                c.len(),
                deltas.len()
            )));
        }
    }
    for d in deltas {
        for (name, t) in &d.entries {
            let b = base.params.get(name).ok_or_else(|| {
                Error::ParameterSetMismatch(format!("delta names unknown parameter `{name}`"))
            })?;
            check_shape(name, b, t)?;
            f32_of(t, name)?;
        }
    }
    let params = base
        .params
        .par_iter()
        .map(|(name, b)| {
            let touched: Vec<(f32, &[f32])> = deltas
                .iter()
                .enumerate()
                .filter_map(|(i, d)| {
                    let c = coefficients.map_or(1.0, |c| c[i]);
                    d.entries.get(name).map(|t| (c, t.as_f32().unwrap()))
                })
                .collect();
            if touched.is_empty() {
                return Ok((name.clone(), b.clone()));
            }
            let mut acc = f32_of(b, name)?.to_vec();
            for (c, d) in touched {
                if c == 1.0 {
                    acc.iter_mut().zip(d).for_each(|(a, x)| *a += x);
                } else {
                    acc.iter_mut().zip(d).for_each(|(a, x)| *a += c * x);
                }
            }
            Ok((name.clone(), Tensor::from_f32(b.dims().to_vec(), acc)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ModelManifest {
        name: base.name.clone(),
        metadata: base.metadata.clone(),
        params,
        files: BTreeMap::new(),
    })
}

/// Unweighted merge: every delta enters with coefficient 1.
pub fn merge_deltas(base: &ModelManifest, deltas: &[WeightDelta]) -> Result<ModelManifest> {
    merge_deltas_weighted(base, deltas, None)
}

/// Replaces every rank-2 F32 parameter `p` (not listed in `exclude`) with
/// `p.q` (I8 codes) and `p.scales` (F32 per-block scales).
pub fn quantize_manifest(
    m: &ModelManifest,
    cfg: BlockQuantConfig,
    exclude: &[&str],
) -> Result<ModelManifest> {
    let mut out = ModelManifest::new(m.name.clone());
    out.metadata = m.metadata.clone();
    out.metadata.quantized = Some(true);
    out.metadata.block = Some(cfg.block);
    for (name, t) in &m.params {
        if t.rank() == 2 && t.as_f32().is_some() && !exclude.contains(&name.as_str()) {
            let bq = quantize_blockwise(&Mat::from_tensor(t)?, cfg)?;
            let (q, s) = bq.to_tensors();
            out.insert(format!("{name}.q"), q)?;
            out.insert(format!("{name}.scales"), s)?;
        } else {
            out.insert(name.clone(), t.clone())?;
        }
    }
    Ok(out)
}

/// Spacing of F32 values at magnitude `|x|` (the distance from `|x|` to the
/// next representable value away from zero).
pub fn ulp(x: f32) -> f32 {
    let a = x.abs();
    if !a.is_finite() {
        return f32::NAN;
    }
    f32::from_bits(a.to_bits() + 1) - a
}

/// Largest `|a - b| / ulp(scale)` over all elements of two equally shaped
/// manifests. `scale` is the larger of `|a|`, `|b|` and the sum of the
/// magnitudes of the corresponding elements of `refs` (the summands).
///
/// A rounded F32 sum is only determined to within the rounding of its
/// partial sums, so errors are measured in ULPs at the summands' magnitude.
pub fn max_scaled_ulp_error(a: &ModelManifest, b: &ModelManifest, refs: &[&ModelManifest]) -> Result<f64> {
    same_names(a.params.keys(), b.params.keys(), "compared manifests differ")?;
    let mut worst = 0f64;
    for (name, ta) in &a.params {
        let tb = &b.params[name];
        check_shape(name, ta, tb)?;
        let (xa, xb) = (f32_of(ta, name)?, f32_of(tb, name)?);
        let rs: Vec<&[f32]> = refs
            .iter()
            .filter_map(|m| m.params.get(name).and_then(Tensor::as_f32))
            .collect();
        for i in 0..xa.len() {
            if xa[i].to_bits() == xb[i].to_bits() {
                continue;
            }
            let total: f32 = rs.iter().map(|r| r[i].abs()).sum();
            let scale = total.max(xa[i].abs()).max(xb[i].abs());
            let e = (f64::from(xa[i]) - f64::from(xb[i])).abs() / f64::from(ulp(scale));
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Largest distance in representable F32 steps between corresponding elements.
pub fn max_ulp_distance(a: &ModelManifest, b: &ModelManifest) -> Result<u32> {
    same_names(a.params.keys(), b.params.keys(), "compared manifests differ")?;
    let key = |x: f32| {
        let i = x.to_bits() as i32;
        if i < 0 {
            i32::MIN.wrapping_sub(i)
        } else {
            i
        }
    };
    let mut worst = 0;
    for (name, ta) in &a.params {
        let tb = &b.params[name];
        check_shape(name, ta, tb)?;
        for (x, y) in f32_of(ta, name)?.iter().zip(f32_of(tb, name)?) {
            worst = worst.max(key(*x).abs_diff(key(*y)));
        }
    }
    Ok(worst)
}
