//! Detection metrics over anomaly scores: AUROC and equal error rate.
//!
//! Scores are "higher = more anomalous"; the non-target class is the
//! positive detection, so perfect detection gives AUROC 1.0. AUROC is the
//! probability a random non-target outscores a random target, ties at
//! half weight, computed by rank statistics. EER interpolates linearly
//! between adjacent operating points when no threshold equalizes the two
//! error rates exactly.

use crate::error::{Error, Result};

/// One scored test example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub id: usize,
    pub is_target: bool,
    pub score: f64,
}

impl ScoredExample {
    pub fn new(id: usize, is_target: bool, score: f64) -> Self {
        Self {
            id,
            is_target,
            score,
        }
    }
}

fn class_counts(scored: &[ScoredExample]) -> Result<(usize, usize)> {
    let targets = scored.iter().filter(|s| s.is_target).count();
    let non_targets = scored.len() - targets;
    if targets == 0 || non_targets == 0 {
        return Err(Error::Contract(format!(
            "metrics need both classes, got {targets} targets and {non_targets} non-targets"
        )));
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite(format!(
            "score of example {} is {}",
            bad.id, bad.score
        )));
    }
    Ok((targets, non_targets))
}

/// AUROC by average-rank statistics:
/// `P(score_nontarget > score_target) + P(tie) / 2`.
pub fn auroc(scored: &[ScoredExample]) -> Result<f64> {
    let (n_target, n_non) = class_counts(scored)?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[a]
            .score
            .partial_cmp(&scored[b].score)
            .expect("finite scores")
    });
    // average ranks within tie groups; ranks are 1-based
    let mut rank_sum_non = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].score == scored[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if !scored[k].is_target {
                rank_sum_non += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_non_f = n_non as f64;
    let numerator = rank_sum_non - n_non_f * (n_non_f + 1.0) / 2.0;
    Ok(numerator / (n_non_f * n_target as f64))
}

/// Equal error rate: the common rate at the threshold where the
/// false-accept rate (non-targets accepted as normal) crosses the
/// false-reject rate (targets flagged anomalous), linearly interpolated
/// between adjacent operating points.
pub fn eer(scored: &[ScoredExample]) -> Result<f64> {
    let (n_target, n_non) = class_counts(scored)?;
    let mut cuts: Vec<f64> = scored.iter().map(|s| s.score).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    cuts.dedup();

    // operating point at cut c: predict anomalous iff score >= c
    let rates_at = |c: f64| -> (f64, f64) {
        let far = scored
            .iter()
            .filter(|s| !s.is_target && s.score < c)
            .count() as f64
            / n_non as f64;
        let frr = scored
            .iter()
            .filter(|s| s.is_target && s.score >= c)
            .count() as f64
            / n_target as f64;
        (far, frr)
    };

    // walk operating points from "flag everything" (FAR 0, FRR 1) to
    // "accept everything" (FAR 1, FRR 0); find the crossing
    let mut prev = (0.0f64, 1.0f64);
    for &c in cuts.iter().chain(std::iter::once(&f64::INFINITY)) {
        let cur = rates_at(c);
        if cur.0 >= cur.1 {
            return Ok(interpolate_crossing(prev, cur));
        }
        prev = cur;
    }
    // accept-everything endpoint is (1, 0), so the crossing always exists
    unreachable!("FAR reaches 1 and FRR reaches 0 at the final operating point");
}

/// Intersection of the FAR segment and the FRR segment between two
/// adjacent operating points; `prev` has FAR < FRR, `cur` has FAR >= FRR.
fn interpolate_crossing(prev: (f64, f64), cur: (f64, f64)) -> f64 {
    let (far0, frr0) = prev;
    let (far1, frr1) = cur;
    let gap0 = frr0 - far0;
    let gap1 = far1 - frr1;
    debug_assert!(gap0 >= 0.0 && gap1 >= 0.0);
    if gap0 + gap1 == 0.0 {
        return far1;
    }
    let t = gap0 / (gap0 + gap1);
    far0 + t * (far1 - far0)
}

/// Mean of a slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divide by n).
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Median (average of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn scored(targets: &[f64], nons: &[f64]) -> Vec<ScoredExample> {
        let mut out = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            out.push(ScoredExample::new(i, true, s));
        }
        for (i, &s) in nons.iter().enumerate() {
            out.push(ScoredExample::new(targets.len() + i, false, s));
        }
        out
    }

    #[test]
    fn auroc_perfect_separation() {
        let s = scored(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        let s = scored(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
    }

    // Brute-force oracle: 3 of 4 pairs correctly ordered.
    #[test]
    fn auroc_partial_ordering() {
        let s = scored(&[0.1, 0.7], &[0.5, 0.9]);
        assert_eq!(auroc(&s).unwrap(), 0.75);
        assert_eq!(oracle::auroc_pair_counting(&s), 0.75);
    }

    #[test]
    fn auroc_matches_pair_counting_oracle_exactly() {
        let mut rng = crate::rng::RngFactory::new(21).stream("auroc");
        for case in 0..200 {
            let n_t = rng.gen_range(1..=100);
            let n_n = rng.gen_range(1..=100);
            // coarse grid forces plenty of ties
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| (rng.gen_range(0..20) as f64) / 10.0;
            let t: Vec<f64> = (0..n_t).map(|_| draw(&mut rng)).collect();
            let n: Vec<f64> = (0..n_n).map(|_| draw(&mut rng)).collect();
            let s = scored(&t, &n);
            let fast = auroc(&s).unwrap();
            let slow = oracle::auroc_pair_counting(&s);
            assert_eq!(fast, slow, "case {case}: {fast} != {slow}");
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let mut rng = crate::rng::RngFactory::new(22).stream("mono");
        let t: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let n: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let base = auroc(&scored(&t, &n)).unwrap();
        let tf = |v: f64| (3.0 * v).exp() + 1.0;
        let t2: Vec<f64> = t.iter().map(|&v| tf(v)).collect();
        let n2: Vec<f64> = n.iter().map(|&v| tf(v)).collect();
        let mapped = auroc(&scored(&t2, &n2)).unwrap();
        assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_reflects_auroc() {
        let mut rng = crate::rng::RngFactory::new(23).stream("flip");
        let t: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
        let n: Vec<f64> = (0..35).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = scored(&t, &n);
        let a = auroc(&s).unwrap();
        let flipped: Vec<ScoredExample> = s
            .iter()
            .map(|e| ScoredExample::new(e.id, !e.is_target, e.score))
            .collect();
        let b = auroc(&flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_error() {
        let only_targets: Vec<ScoredExample> =
            (0..3).map(|i| ScoredExample::new(i, true, 0.1)).collect();
        assert!(auroc(&only_targets).is_err());
        assert!(eer(&only_targets).is_err());
    }

    #[test]
    fn eer_perfect_separation_is_zero() {
        let s = scored(&[0.1, 0.2, 0.3], &[0.6, 0.9]);
        assert_eq!(eer(&s).unwrap(), 0.0);
    }

    // Brute-force sweep oracle: identical score multisets cross at 0.5.
    #[test]
    fn eer_identical_distributions_is_half() {
        let vals = [0.2, 0.4, 0.6, 0.8];
        let s = scored(&vals, &vals);
        assert!((eer(&s).unwrap() - 0.5).abs() < 1e-12);
        assert!((oracle::eer_threshold_sweep(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_matches_threshold_sweep_oracle_exactly() {
        let mut rng = crate::rng::RngFactory::new(24).stream("eer");
        for case in 0..200 {
            let n_t = rng.gen_range(1..=100);
            let n_n = rng.gen_range(1..=100);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| (rng.gen_range(0..15) as f64) / 7.0;
            let t: Vec<f64> = (0..n_t).map(|_| draw(&mut rng)).collect();
            let n: Vec<f64> = (0..n_n).map(|_| draw(&mut rng)).collect();
            let s = scored(&t, &n);
            let fast = eer(&s).unwrap();
            let slow = oracle::eer_threshold_sweep(&s);
            assert_eq!(fast, slow, "case {case}");
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let mut rng = crate::rng::RngFactory::new(25).stream("eer-mono");
        let t: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n: Vec<f64> = (0..30).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let base = eer(&scored(&t, &n)).unwrap();
        let tf = |v: f64| v.powi(3) * 2.0 + v; // strictly increasing
        let t2: Vec<f64> = t.iter().map(|&v| tf(v)).collect();
        let n2: Vec<f64> = n.iter().map(|&v| tf(v)).collect();
        let mapped = eer(&scored(&t2, &n2)).unwrap();
        assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((population_std(&v) - (1.25f64).sqrt()).abs() < 1e-15);
        assert_eq!(median(&v), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
