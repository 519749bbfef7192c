//! Plug-in information estimates in bits over discrete codes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn check(lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if n == 0 {
        return Err(Error::InvalidInput("information estimate on empty input".into()));
    }
    if lens.iter().any(|&l| l != n) {
        return Err(Error::InvalidInput(format!("sample lengths differ: {lens:?}")));
    }
    Ok(n)
}

/// Entropy in bits of the weighted empirical distribution of `keys`.
fn entropy<K: Ord>(keys: impl Iterator<Item = K>, weights: &[f64]) -> f64 {
    let mut mass: BTreeMap<K, f64> = BTreeMap::new();
    for (k, &w) in keys.zip(weights) {
        *mass.entry(k).or_default() += w;
    }
    let total: f64 = mass.values().sum();
    -mass
        .values()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            p * p.log2()
        })
        .sum::<f64>()
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput("weights must be finite, non-negative and not all zero".into()));
    }
    Ok(())
}

/// `I(x; y)` of a weighted joint, e.g. an exact enumeration with probabilities.
pub fn mi_weighted(x: &[u32], y: &[u32], w: &[f64]) -> Result<f64> {
    check(&[x.len(), y.len(), w.len()])?;
    check_weights(w)?;
    let hx = entropy(x.iter(), w);
    let hy = entropy(y.iter(), w);
    let hxy = entropy(x.iter().zip(y), w);
    Ok((hx + hy - hxy).max(0.0))
}

/// Plug-in `I(x; y)` from paired samples.
pub fn mi_discrete(x: &[u32], y: &[u32]) -> Result<f64> {
    let n = check(&[x.len(), y.len()])?;
    mi_weighted(x, y, &vec![1.0; n])
}

/// `I(x; y) - I(x; y | z)` of a weighted joint.
pub fn co_information_weighted(x: &[u32], y: &[u32], z: &[u32], w: &[f64]) -> Result<f64> {
    check(&[x.len(), y.len(), z.len(), w.len()])?;
    check_weights(w)?;
    let ixy = mi_weighted(x, y, w)?;
    let hxz = entropy(x.iter().zip(z), w);
    let hyz = entropy(y.iter().zip(z), w);
    let hxyz = entropy(x.iter().zip(y).zip(z), w);
    let hz = entropy(z.iter(), w);
    Ok(ixy - (hxz + hyz - hxyz - hz))
}

/// Plug-in co-information from paired samples.
pub fn co_information(x: &[u32], y: &[u32], z: &[u32]) -> Result<f64> {
    let n = check(&[x.len(), y.len(), z.len()])?;
    co_information_weighted(x, y, z, &vec![1.0; n])
}

/// Bins used when continuous columns meet the discrete estimators.
pub const DEFAULT_BINS: usize = 8;

/// Plug-in `I(x; y)` after quantile-binning both continuous columns.
/// A biased sample-level estimate, unlike the exact discrete paths.
pub fn mi_binned(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check(&[x.len(), y.len()])?;
    mi_discrete(&quantile_bins(x, bins), &quantile_bins(y, bins))
}

/// Equal-frequency binning of continuous values into `bins` codes.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<u32> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut codes = vec![0u32; n];
    for (rank, &i) in order.iter().enumerate() {
        codes[i] = (rank * bins / n.max(1)) as u32;
    }
    codes
}
