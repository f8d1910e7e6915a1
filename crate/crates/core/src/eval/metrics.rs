use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// `|estimate - truth| / |truth|`.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::Undefined("relative error against a zero truth".into()));
    }
    Ok((estimate - truth).abs() / truth.abs())
}

/// Pearson correlation between estimates and truths.
pub fn pearson_r(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::Undefined(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let n = estimates.len();
    if n < 2 {
        return Err(Error::Undefined("correlation needs at least two pairs".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (me, mt) = (mean(estimates), mean(truths));
    let (mut see, mut stt, mut set) = (0.0, 0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        let (de, dt) = (e - me, t - mt);
        see += de * de;
        stt += dt * dt;
        set += de * dt;
    }
    if stt == 0.0 {
        return Err(Error::Undefined("truths are all equal".into()));
    }
    if see == 0.0 {
        return Err(Error::Undefined("estimates are all equal".into()));
    }
    Ok((set / (see.sqrt() * stt.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Quantile `p` of sorted data, interpolating linearly between order
/// statistics at position `p * (n - 1)`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Argument("no values to summarise".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("values contain NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Summing in sorted order makes the mean independent of input order.
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(BoxplotStats {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean,
    })
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most
/// one; the first `n % k` folds get the extra element. Each fold is sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Argument(format!("k-fold needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::KFOLD, n as u64, k as u64]));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(3.0, 3.0).unwrap(), 0.0);
        assert!((relative_error(1.1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(relative_error(-1.0, -2.0).unwrap(), 0.5);
        assert!(matches!(relative_error(1.0, 0.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn pearson_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(pearson_r(&t, &t).unwrap(), 1.0);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(pearson_r(&neg, &t).unwrap(), -1.0);
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn boxplot_examples() {
        let one = boxplot_stats(&[5.0]).unwrap();
        assert_eq!([one.min, one.q1, one.median, one.q3, one.max, one.mean], [5.0; 6]);
        let four = boxplot_stats(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((four.min, four.median, four.max, four.mean), (1.0, 2.5, 4.0, 2.5));
        assert_eq!((four.q1, four.q3), (1.75, 3.25));
        assert!(boxplot_stats(&[]).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(287, 10, 1).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [28, 28, 28, 29, 29, 29, 29, 29, 29, 29]);
        // Holding out a 28-subject fold leaves 259 for training.
        assert!(folds.iter().any(|f| f.len() == 28 && 287 - f.len() == 259));
        let singles = kfold_split(10, 10, 4).unwrap();
        assert!(singles.iter().all(|f| f.len() == 1));
        assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 10).unwrap());
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn relative_error_is_scale_invariant(e in -1e3..1e3f64, t in 0.01..1e3f64, c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
            let a = relative_error(e, t).unwrap();
            let b = relative_error(c * e, c * t).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn pearson_is_affine_invariant(
            t in prop::collection::vec(-100.0..100.0f64, 3..40),
            a in 0.01..100.0f64,
            b in -100.0..100.0f64,
        ) {
            prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-3));
            let e: Vec<f64> = t.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson_r(&e, &t).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn boxplot_ignores_order(mut v in prop::collection::vec(-1e6..1e6f64, 1..50), seed in any::<u64>()) {
            let a = boxplot_stats(&v).unwrap();
            v.shuffle(&mut rng::stream(seed, &[]));
            prop_assert_eq!(a, boxplot_stats(&v).unwrap());
            prop_assert!(a.min <= a.q1 && a.q1 <= a.median && a.median <= a.q3 && a.q3 <= a.max);
        }

        #[test]
        fn kfold_is_a_balanced_partition(n in 2usize..400, k_frac in 0.0..1.0f64, seed in any::<u64>()) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let folds = kfold_split(n, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
