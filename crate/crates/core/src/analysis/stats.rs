use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest sample for which the exact permutation p-value is offered.
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Mid-ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = mid;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pairs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::domain(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::domain(format!("correlation needs n >= 3, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("correlation inputs must be finite"));
    }
    Ok(())
}

/// Tie-corrected Spearman correlation with a two-sided p-value from the
/// t distribution on `n - 2` degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check_pairs(xs, ys)?;
    let rho = pearson(&ranks(xs), &ranks(ys))
        .ok_or_else(|| Error::Degenerate("correlation is undefined for a constant input".into()))?;
    let n = xs.len();
    let df = (n - 2) as f64;
    let p_value = if 1.0 - rho.abs() <= 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(CorrelationResult { rho, p_value, n })
}

/// As [`spearman`] but with the two-sided p-value taken over all `n!`
/// reorderings of `ys`.
pub fn spearman_exact(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    let base = spearman(xs, ys)?;
    let n = xs.len();
    if n > EXACT_PERMUTATION_MAX_N {
        return Err(Error::Capability(format!(
            "exact permutation p-values are limited to n <= {EXACT_PERMUTATION_MAX_N}, got {n}"
        )));
    }
    let rx = ranks(xs);
    let mut ry = ranks(ys);
    let target = base.rho.abs() - 1e-12;
    let (mut hits, mut total) = (0u64, 0u64);
    // Heap's algorithm over the y ranks.
    let mut c = vec![0usize; n];
    let mut visit = |ry: &[f64]| {
        total += 1;
        if pearson(&rx, ry).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    };
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(CorrelationResult {
        p_value: hits as f64 / total as f64,
        ..base
    })
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 10_000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of `statistic` over `values`.
pub fn percentile_bootstrap(values: &[f64], statistic: impl Fn(&[f64]) -> f64, cfg: &BootstrapConfig) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::domain("bootstrap needs at least one value"));
    }
    if cfg.resamples == 0 || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::domain("bootstrap needs resamples > 0 and confidence in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..cfg.resamples)
        .map(|_| {
            for b in &mut buf {
                *b = values[rng.random_range(0..values.len())];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.confidence) / 2.0;
    Ok(Interval {
        estimate: statistic(values),
        lower: quantile(&stats, alpha),
        upper: quantile(&stats, 1.0 - alpha),
    })
}

pub fn mean(values: &[f64]) -> f64 {
    crate::info::pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_ranked_five_points() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((r.rho - 0.8).abs() < 1e-12);
        // t = 0.8 * sqrt(3 / 0.36) = 2.3094; two-sided p on 3 df.
        assert!((r.p_value - 0.1040880).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn monotone_inputs_give_unit_correlation() {
        let xs = [0.1, 0.5, 0.7, 2.0];
        assert_eq!(spearman(&xs, &[1.0, 2.0, 8.0, 9.0]).unwrap().rho, 1.0);
        assert_eq!(spearman(&xs, &[9.0, 8.0, 2.0, 1.0]).unwrap().rho, -1.0);
        assert_eq!(spearman(&xs, &[1.0, 2.0, 8.0, 9.0]).unwrap().p_value, 0.0);
    }

    #[test]
    fn ties_share_mid_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // Tie-corrected value from the Pearson correlation of mid-ranks.
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r.rho - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        let big: Vec<f64> = (0..11).map(f64::from).collect();
        assert!(matches!(spearman_exact(&big, &big), Err(Error::Capability(_))));
    }

    #[test]
    fn exact_permutation_p_value() {
        // Of the 120 orderings of five ranks, 8 give rho >= 0.8 and 8 give rho <= -0.8.
        let r = spearman_exact(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((r.p_value - 16.0 / 120.0).abs() < 1e-15, "{}", r.p_value);
        let r = spearman_exact(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0.6, 0.2, 0.4]), Some(0.4));
        assert_eq!(median(&[0.2, 0.6]), Some(0.4));
        assert_eq!(median(&[0.7]), Some(0.7));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets_the_mean() {
        let vals: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let cfg = BootstrapConfig { resamples: 2000, ..Default::default() };
        let a = percentile_bootstrap(&vals, mean, &cfg).unwrap();
        assert_eq!(a, percentile_bootstrap(&vals, mean, &cfg).unwrap());
        assert!(a.lower < a.estimate && a.estimate < a.upper);
        let flat = percentile_bootstrap(&[2.0; 5], mean, &cfg).unwrap();
        assert_eq!((flat.lower, flat.upper), (2.0, 2.0));
        assert!(percentile_bootstrap(&[], mean, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn rank_based_invariance(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(base) = spearman(&xs, &ys) else { return Ok(()) };
            // exp and a cube are strictly increasing; negation flips the sign.
            let ex: Vec<f64> = xs.iter().map(|v| (v / 10.0).exp()).collect();
            let cy: Vec<f64> = ys.iter().map(|v| v * v * v).collect();
            let t = spearman(&ex, &cy).unwrap();
            prop_assert!((t.rho - base.rho).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|v| -v).collect();
            prop_assert!((spearman(&xs, &neg).unwrap().rho + base.rho).abs() < 1e-12);
            prop_assert!(base.rho.abs() <= 1.0 && (0.0..=1.0).contains(&base.p_value));
        }

        #[test]
        fn p_value_falls_as_correlation_grows(n in 4usize..40, a in 0.0f64..0.99, b in 0.0f64..0.99) {
            let p = |rho: f64| {
                let df = (n - 2) as f64;
                let t = rho * (df / (1.0 - rho * rho)).sqrt();
                2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t))
            };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(p(hi) <= p(lo) + 1e-15);
        }
    }
}
