use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Seeded class-stratified subsample of `ceil(S% of n)` indices, returned sorted.
///
/// The positive count is the rounded proportional share, raised to one when
/// the class exists so a tiny subsample never drops a class entirely.
pub fn stratified_split(labels: &[bool], s_percent: f64, seed: u64) -> Result<Vec<usize>> {
    if !(s_percent > 0.0 && s_percent <= 100.0) {
        return Err(Error::InvalidInput(format!("S must be in (0, 100], got {s_percent}")));
    }
    let n = labels.len();
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i]);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(format!(
            "stratified split needs both classes, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    // Small epsilon guards against 10% of 100 landing on 10.000000000000002.
    let k = ((s_percent * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(n);
    let share = ((k as f64) * pos.len() as f64 / n as f64).round() as usize;
    // Each class keeps at least one slot when the subsample has room for both.
    let mut kp = share.clamp(1, pos.len());
    if k >= 2 {
        kp = kp.min(k - 1);
    }
    let kn = (k - kp.min(k)).min(neg.len());
    let kp = k - kn;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stratified_split", n as u64));
    let mut pos = pos;
    let mut neg = neg;
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out: Vec<usize> = pos[..kp].iter().chain(&neg[..kn]).copied().collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, npos: usize) -> Vec<bool> {
        (0..n).map(|i| i < npos).collect()
    }

    #[test]
    fn full_percentage_returns_everything() {
        let l = labels(17, 5);
        assert_eq!(stratified_split(&l, 100.0, 3).unwrap(), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn ten_percent_of_hundred_keeps_one_positive() {
        let l = labels(100, 10);
        let idx = stratified_split(&l, 10.0, 0).unwrap();
        assert_eq!(idx.len(), 10);
        assert_eq!(idx.iter().filter(|&&i| l[i]).count(), 1);
    }

    #[test]
    fn seeds_change_the_subset_not_the_counts() {
        let l = labels(1000, 300);
        let a = stratified_split(&l, 10.0, 1).unwrap();
        let b = stratified_split(&l, 10.0, 2).unwrap();
        assert_ne!(a, b);
        for idx in [&a, &b] {
            assert_eq!(idx.len(), 100);
            assert_eq!(idx.iter().filter(|&&i| l[i]).count(), 30);
        }
        assert_eq!(a, stratified_split(&l, 10.0, 1).unwrap());
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(stratified_split(&labels(10, 0), 50.0, 0).is_err());
        assert!(stratified_split(&labels(10, 10), 50.0, 0).is_err());
        assert!(stratified_split(&labels(10, 3), 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_within_one_per_class(n in 2usize..400, frac in 0.01f64..0.99, s in 1.0f64..100.0, seed in 0u64..1000) {
            let npos = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
            let l = labels(n, npos);
            let idx = stratified_split(&l, s, seed).unwrap();
            let k = ((s * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
            prop_assert_eq!(idx.len(), k.min(n));
            let got_pos = idx.iter().filter(|&&i| l[i]).count() as f64;
            let want_pos = idx.len() as f64 * npos as f64 / n as f64;
            prop_assert!((got_pos - want_pos).abs() <= 1.0 + 1e-9, "{} vs {}", got_pos, want_pos);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
