use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{pairwise_sum, Pmf};

/// Default confidence threshold on the summed candidate scores.
pub const DEFAULT_TAU: f64 = 0.3;

/// `exp(loglik / tokens)`: per-token likelihood of one candidate answer.
pub fn length_normalized_score(candidate_loglik: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::domain("candidate has zero tokens"));
    }
    if !(candidate_loglik <= 0.0) {
        return Err(Error::domain(format!("log-likelihood {candidate_loglik} must be <= 0")));
    }
    Ok((candidate_loglik / token_count as f64).exp())
}

/// Candidate distribution after the confidence threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPrediction {
    pub probs: Pmf,
    /// Set when the scores were too weak and `probs` is uniform.
    pub fallback_used: bool,
}

/// Renormalizes `scores` when their raw sum reaches `tau`, else falls back to uniform.
pub fn threshold_regularize(scores: &[f64], tau: f64) -> Result<RegularizedPrediction> {
    if scores.len() < 2 {
        return Err(Error::domain(format!("need at least 2 candidates, got {}", scores.len())));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::domain(format!("threshold {tau} must be finite and >= 0")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::domain(format!("candidate score {s} must be finite and >= 0")));
    }
    let total = pairwise_sum(scores);
    if total >= tau && total > 0.0 {
        let probs = Pmf::new(scores.iter().map(|s| s / total).collect())?;
        Ok(RegularizedPrediction { probs, fallback_used: false })
    } else {
        Ok(RegularizedPrediction {
            probs: Pmf::uniform(scores.len())?,
            fallback_used: true,
        })
    }
}

/// Mean of the regularized distributions, summed pairwise per option.
pub fn aggregate_marginal(preds: &[RegularizedPrediction]) -> Result<Pmf> {
    let first = preds.first().ok_or_else(|| Error::domain("no predictions to aggregate"))?;
    let k = first.probs.len();
    if preds.iter().any(|p| p.probs.len() != k) {
        return Err(Error::domain("predictions disagree on the number of options"));
    }
    let n = preds.len() as f64;
    let mut column = Vec::with_capacity(preds.len());
    let mut mean = Vec::with_capacity(k);
    for y in 0..k {
        column.clear();
        column.extend(preds.iter().map(|p| p.probs.probs()[y]));
        mean.push(pairwise_sum(&column) / n);
    }
    let total: f64 = mean.iter().sum();
    Pmf::new(mean.into_iter().map(|v| v / total).collect())
}

/// How token embeddings are reduced to one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
    Max,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Last => "last",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "last" => Ok(Pooling::Last),
            "max" => Ok(Pooling::Max),
            other => Err(Error::format(format!("unknown pooling mode '{other}'"))),
        }
    }
}

pub fn pool_tokens(tokens: &[Vec<f64>], mode: Pooling) -> Result<Vec<f64>> {
    let first = tokens.first().ok_or_else(|| Error::domain("cannot pool zero tokens"))?;
    let d = first.len();
    if tokens.iter().any(|t| t.len() != d) {
        return Err(Error::domain("tokens have differing widths"));
    }
    Ok(match mode {
        Pooling::Last => tokens[tokens.len() - 1].clone(),
        Pooling::Max => (0..d)
            .map(|j| tokens.iter().map(|t| t[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Pooling::Mean => {
            let n = tokens.len() as f64;
            let mut col = Vec::with_capacity(tokens.len());
            (0..d)
                .map(|j| {
                    col.clear();
                    col.extend(tokens.iter().map(|t| t[j]));
                    pairwise_sum(&col) / n
                })
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn length_normalization() {
        let e1 = (-1.0f64).exp();
        assert!((length_normalized_score(-1.0, 1).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(length_normalized_score(-2.0, 2).unwrap(), e1);
        assert_eq!(length_normalized_score(0.0, 5).unwrap(), 1.0);
        assert!(length_normalized_score(-1.0, 0).is_err());
        assert!(length_normalized_score(0.5, 1).is_err());
    }

    #[test]
    fn threshold_branches() {
        let r = threshold_regularize(&[0.3, 0.2], 0.3).unwrap();
        assert!(!r.fallback_used);
        assert!((r.probs.probs()[0] - 0.6).abs() < 1e-15);
        assert!((r.probs.probs()[1] - 0.4).abs() < 1e-15);

        let r = threshold_regularize(&[0.05, 0.05], 0.3).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.probs.probs(), &[0.5, 0.5]);

        // Sum equal to tau takes the renormalized branch.
        let r = threshold_regularize(&[0.25, 0.05], 0.3).unwrap();
        assert!(!r.fallback_used);

        let r = threshold_regularize(&[0.0, 0.0, 0.0], 0.0).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.probs.probs(), &[1.0 / 3.0; 3]);

        assert!(threshold_regularize(&[1.0], 0.3).is_err());
        assert!(threshold_regularize(&[-0.1, 0.5], 0.3).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let p = threshold_regularize(&[0.6, 0.3, 0.1], 0.0).unwrap();
        let agg = aggregate_marginal(&vec![p.clone(); 7]).unwrap();
        for (a, b) in agg.probs().iter().zip(p.probs.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let a = threshold_regularize(&[1.0, 0.0], 0.3).unwrap();
        let b = threshold_regularize(&[0.0, 1.0], 0.3).unwrap();
        assert_eq!(aggregate_marginal(&[a, b]).unwrap().probs(), &[0.5, 0.5]);

        let c = threshold_regularize(&[0.5, 0.5, 0.5], 0.3).unwrap();
        let d = threshold_regularize(&[0.5, 0.5], 0.3).unwrap();
        assert!(aggregate_marginal(&[c, d]).is_err());
        assert!(aggregate_marginal(&[]).is_err());
    }

    #[test]
    fn pooling_examples() {
        let one = vec![vec![1.5, -2.0]];
        for mode in [Pooling::Mean, Pooling::Last, Pooling::Max] {
            assert_eq!(pool_tokens(&one, mode).unwrap(), one[0]);
        }
        let two = vec![vec![0.0], vec![2.0]];
        assert_eq!(pool_tokens(&two, Pooling::Mean).unwrap(), vec![1.0]);
        assert_eq!(pool_tokens(&two, Pooling::Max).unwrap(), vec![2.0]);
        assert_eq!(pool_tokens(&[vec![3.0], vec![1.0]], Pooling::Last).unwrap(), vec![1.0]);
        assert!(pool_tokens(&[], Pooling::Mean).is_err());
        assert!(pool_tokens(&[vec![1.0], vec![1.0, 2.0]], Pooling::Max).is_err());
    }

    fn arb_scores() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn regularized_output_is_a_simplex(scores in prop::collection::vec(0.0f64..1.0, 2..27), tau in 0.0f64..2.0) {
            let r = threshold_regularize(&scores, tau).unwrap();
            let s: f64 = r.probs.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(r.probs.probs().iter().all(|p| *p >= 0.0));
            if r.fallback_used {
                let u = 1.0 / scores.len() as f64;
                prop_assert!(r.probs.probs().iter().all(|p| *p == u));
            }
        }

        #[test]
        fn fallback_rate_grows_with_tau(data in arb_scores(), t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let count = |tau| data.iter().filter(|s| threshold_regularize(s, tau).unwrap().fallback_used).count();
            prop_assert!(count(lo) <= count(hi));
        }

        #[test]
        fn aggregation_is_size_weighted_over_concatenation(a in arb_scores(), b in arb_scores()) {
            let reg = |d: &Vec<Vec<f64>>| d.iter().map(|s| threshold_regularize(s, DEFAULT_TAU).unwrap()).collect::<Vec<_>>();
            let (ra, rb) = (reg(&a), reg(&b));
            let pa = aggregate_marginal(&ra).unwrap();
            let pb = aggregate_marginal(&rb).unwrap();
            let all: Vec<_> = ra.iter().chain(&rb).cloned().collect();
            let pab = aggregate_marginal(&all).unwrap();
            let (na, nb) = (ra.len() as f64, rb.len() as f64);
            for y in 0..4 {
                let want = (na * pa.probs()[y] + nb * pb.probs()[y]) / (na + nb);
                prop_assert!((pab.probs()[y] - want).abs() <= 1e-12);
            }
        }

        #[test]
        fn aggregation_ignores_order(data in arb_scores(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut preds: Vec<_> = data.iter().map(|s| threshold_regularize(s, DEFAULT_TAU).unwrap()).collect();
            let before = aggregate_marginal(&preds).unwrap();
            preds.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let after = aggregate_marginal(&preds).unwrap();
            for (x, y) in before.probs().iter().zip(after.probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
