//! Descriptive statistics and the Wilcoxon rank-sum (Mann-Whitney U) test.
//!
//! Every comparison cell of the report tables runs through [`compare_groups`]:
//! group means/stds plus a two-sided p-value. The p-value uses the exact
//! permutation distribution of U for small tie-free samples and the
//! continuity-corrected, tie-corrected normal approximation otherwise.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
}

/// Sample size, mean, and sample standard deviation (n-1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Which p-value computation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PMode {
    /// Exact for small tie-free samples, normal approximation otherwise.
    Auto,
    /// Exact permutation distribution. Falls back to the normal
    /// approximation when ties are present or the pooled sample is too
    /// large for the count recurrence; the result's `method` reports
    /// what actually ran.
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    NormalApprox,
}

/// Outcome of the two-sided rank-sum test for one pair of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub u_statistic: f64,
    /// Sum of the first sample's mid-ranks in the pooled ordering.
    pub rank_sum: f64,
    /// Standardized statistic (0 when the exact method ran).
    pub z_value: f64,
    pub p_two_sided: f64,
    pub method: PMethod,
    /// Sizes of tied groups (>= 2) in the pooled sample.
    pub tie_groups: Vec<usize>,
}

/// Group summaries and test result for one comparison cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub cutin: SampleSummary,
    pub other: SampleSummary,
    pub test: RankSumResult,
}

/// Mean and sample standard deviation; std is 0 for a single observation.
pub fn summarize(sample: &[f64]) -> Result<SampleSummary, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = sample.len();
    let mean = sample.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    };
    Ok(SampleSummary { n, mean, std })
}

/// Pooled mid-ranks of `a` followed by `b`, plus sizes of tied groups.
fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = a.len() + b.len();
    let mut order: Vec<usize> = (0..n).collect();
    let value = |i: usize| if i < a.len() { a[i] } else { b[i - a.len()] };
    order.sort_by(|&i, &j| value(i).total_cmp(&value(j)));

    let mut ranks = vec![0.0; n];
    let mut tie_groups = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && value(order[end]) == value(order[start]) {
            end += 1;
        }
        // Mid-rank of positions start+1 ..= end (1-based).
        let mid = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mid;
        }
        if end - start > 1 {
            tie_groups.push(end - start);
        }
        start = end;
    }
    (ranks, tie_groups)
}

/// Mann-Whitney U of `a`, its rank sum, and the pooled tie-group sizes.
///
/// U_a = rank_sum_a - n_a(n_a+1)/2, so U_a + U_b = n_a * n_b.
pub fn rank_sum_u(a: &[f64], b: &[f64]) -> Result<(f64, f64, Vec<usize>), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (ranks, tie_groups) = pooled_ranks(a, b);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let n_a = a.len() as f64;
    let u_a = rank_sum_a - n_a * (n_a + 1.0) / 2.0;
    Ok((u_a, rank_sum_a, tie_groups))
}

/// Counts of k-subsets of ranks {1..n} by rank sum.
///
/// `dist[k][s]` = number of k-subsets summing to s. Counts stay exact in
/// f64 for every pooled size the exact path accepts.
fn rank_sum_counts(n: usize, k: usize) -> Vec<Vec<f64>> {
    let max_sum = n * (n + 1) / 2;
    let mut dist = vec![vec![0.0; max_sum + 1]; k + 1];
    dist[0][0] = 1.0;
    for v in 1..=n {
        for kk in (1..=k.min(v)).rev() {
            for s in (v..=max_sum).rev() {
                let prev = dist[kk - 1][s - v];
                if prev > 0.0 {
                    dist[kk][s] += prev;
                }
            }
        }
    }
    dist
}

/// Pooled size above which the exact count recurrence is not attempted.
const EXACT_MAX_POOLED: usize = 100;

fn exact_p(n_a: usize, n_b: usize, rank_sum_a: f64) -> f64 {
    let n = n_a + n_b;
    let dist = rank_sum_counts(n, n_a);
    let counts = &dist[n_a];
    let s_obs = rank_sum_a.round() as usize;
    let total: f64 = counts.iter().sum();
    let cdf_le: f64 = counts[..=s_obs].iter().sum();
    let cdf_ge: f64 = counts[s_obs..].iter().sum();
    (2.0 * cdf_le.min(cdf_ge) / total).min(1.0)
}

fn normal_p(n_a: usize, n_b: usize, u_a: f64, tie_groups: &[usize]) -> (f64, f64) {
    let na = n_a as f64;
    let nb = n_b as f64;
    let n = na + nb;
    let tie_term: f64 = tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let variance = na * nb * ((n * n * n - n) - tie_term) / (12.0 * n * (n - 1.0));
    if variance <= 0.0 {
        // Pooled sample fully tied: no evidence either way.
        return (0.0, 1.0);
    }
    let mean = na * nb / 2.0;
    let diff = u_a - mean;
    // Continuity correction of 0.5 toward the mean.
    let corrected = if diff > 0.0 {
        diff - 0.5
    } else if diff < 0.0 {
        diff + 0.5
    } else {
        0.0
    };
    let z = corrected / variance.sqrt();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let p = (2.0 * std_normal.cdf(-z.abs())).min(1.0);
    (z, p)
}

/// Two-sided Wilcoxon rank-sum test.
///
/// Exact mode computes p = 2 * min(P(U <= u), P(U >= u)) under the
/// uniform-permutation null, capped at 1. Normal mode standardizes U with a
/// 0.5 continuity correction toward the mean and the tie-corrected variance
/// n_a n_b (N³ - N - Σ(t³ - t)) / (12 N (N-1)).
pub fn p_value(a: &[f64], b: &[f64], mode: PMode) -> Result<RankSumResult, StatsError> {
    let (u_a, rank_sum_a, tie_groups) = rank_sum_u(a, b)?;
    let n_a = a.len();
    let n_b = b.len();
    let pooled = n_a + n_b;
    let no_ties = tie_groups.is_empty();

    let use_exact = match mode {
        PMode::Auto => pooled <= 20 && no_ties,
        PMode::Exact => no_ties && pooled <= EXACT_MAX_POOLED,
        PMode::Normal => false,
    };

    if use_exact {
        let p = exact_p(n_a, n_b, rank_sum_a);
        Ok(RankSumResult {
            u_statistic: u_a,
            rank_sum: rank_sum_a,
            z_value: 0.0,
            p_two_sided: p,
            method: PMethod::Exact,
            tie_groups,
        })
    } else {
        let (z, p) = normal_p(n_a, n_b, u_a, &tie_groups);
        Ok(RankSumResult {
            u_statistic: u_a,
            rank_sum: rank_sum_a,
            z_value: z,
            p_two_sided: p,
            method: PMethod::NormalApprox,
            tie_groups,
        })
    }
}

/// Builds the full comparison cell: both summaries plus the auto-mode test.
pub fn compare_groups(cutin: &[f64], other: &[f64]) -> Result<GroupComparison, StatsError> {
    Ok(GroupComparison {
        cutin: summarize(cutin)?,
        other: summarize(other)?,
        test: p_value(cutin, other, PMode::Auto)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summarize_constant_sample() {
        let s = summarize(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn summarize_unit_variance() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }

    #[test]
    fn summarize_single_and_empty() {
        let s = summarize(&[7.5]).unwrap();
        assert_eq!((s.n, s.mean, s.std), (1, 7.5, 0.0));
        assert_eq!(summarize(&[]), Err(StatsError::EmptySample));
    }

    #[test]
    fn rank_sum_separated_samples() {
        let (u, rs, ties) = rank_sum_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(rs, 3.0);
        assert_eq!(u, 0.0);
        assert!(ties.is_empty());
    }

    #[test]
    fn rank_sum_identical_multisets() {
        let a = [5.0, 1.0, 3.0];
        let (u, _, _) = rank_sum_u(&a, &a).unwrap();
        assert_eq!(u, 9.0 / 2.0);
    }

    #[test]
    fn rank_sum_full_tie_uses_mid_ranks() {
        let (u, rs, ties) = rank_sum_u(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(rs, 5.0); // two mid-ranks of 2.5
        assert_eq!(u, 2.0);
        assert_eq!(ties, vec![4]);
    }

    #[test]
    fn exact_p_for_fully_separated_pairs() {
        let r = p_value(&[1.0, 2.0], &[3.0, 4.0], PMode::Exact).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        // 2 * P(rank sum <= 3) = 2/6, frozen against full enumeration.
        assert_eq!(r.p_two_sided, 1.0 / 3.0);
    }

    #[test]
    fn exact_p_single_elements_is_one() {
        let r = p_value(&[0.0], &[10.0], PMode::Auto).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn degenerate_all_tied_pooled_sample() {
        let r = p_value(&[4.0, 4.0, 4.0], &[4.0, 4.0], PMode::Auto).unwrap();
        assert_eq!(r.method, PMethod::NormalApprox);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.z_value, 0.0);
    }

    // Reference values frozen from SciPy's mannwhitneyu (two-sided,
    // method="asymptotic", use_continuity=True). The tolerance covers the
    // differing normal-CDF implementations; a wrong variance or continuity
    // correction shifts these p-values at the 1e-3 level.
    #[test]
    fn normal_approx_matches_scipy_without_ties() {
        let a = [12.1, 14.3, 9.8, 11.2, 13.7, 10.4];
        let b = [15.2, 16.8, 14.9, 13.1, 17.4];
        let r = p_value(&a, &b, PMode::Normal).unwrap();
        assert_eq!(r.u_statistic, 2.0);
        assert_relative_eq!(r.p_two_sided, 0.022478873366125265, max_relative = 1e-8);
    }

    #[test]
    fn normal_approx_matches_scipy_with_ties() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 7.0];
        let b = [2.0, 3.0, 3.0, 5.0, 6.0, 8.0, 8.0, 9.0];
        let r = p_value(&a, &b, PMode::Normal).unwrap();
        assert_eq!(r.u_statistic, 15.0);
        assert_relative_eq!(r.p_two_sided, 0.14328062600938993, max_relative = 1e-8);

        let a = [0.1, 0.4, 0.4, 0.9, 1.3, 1.3, 1.3, 2.0, 2.2, 3.1];
        let b = [0.4, 0.8, 1.3, 1.5, 1.5, 2.0, 2.6, 3.3, 3.9, 4.4, 4.4, 5.0];
        let r = p_value(&a, &b, PMode::Normal).unwrap();
        assert_eq!(r.u_statistic, 29.0);
        assert_relative_eq!(r.p_two_sided, 0.043297064075047784, max_relative = 1e-8);
    }

    #[test]
    fn auto_switches_to_normal_on_ties_or_size() {
        let r = p_value(&[1.0, 2.0, 2.0], &[3.0, 4.0], PMode::Auto).unwrap();
        assert_eq!(r.method, PMethod::NormalApprox);

        let a: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..15).map(|i| i as f64 + 0.5).collect();
        let r = p_value(&a, &b, PMode::Auto).unwrap();
        assert_eq!(r.method, PMethod::NormalApprox);
    }

    #[test]
    fn two_sided_test_is_symmetric() {
        let a = [1.0, 5.0, 9.0, 2.0];
        let b = [4.0, 7.0, 11.0];
        let ab = p_value(&a, &b, PMode::Auto).unwrap();
        let ba = p_value(&b, &a, PMode::Auto).unwrap();
        assert_eq!(ab.p_two_sided, ba.p_two_sided);
        assert_eq!(ab.u_statistic + ba.u_statistic, 12.0);
    }

    #[test]
    fn compare_groups_bundles_summaries_and_test() {
        let g = compare_groups(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(g.cutin.mean, 1.5);
        assert_eq!(g.other.mean, 3.5);
        assert_eq!(g.test.p_two_sided, 1.0 / 3.0);
        assert_eq!(compare_groups(&[], &[1.0]), Err(StatsError::EmptySample));
    }

    #[test]
    fn compare_groups_detects_large_shift() {
        // Two clearly shifted synthetic groups must come out significant.
        let cutin: Vec<f64> = (0..40).map(|i| 10.0 + (i % 7) as f64 * 0.1).collect();
        let other: Vec<f64> = (0..40).map(|i| 12.0 + (i % 7) as f64 * 0.1).collect();
        let g = compare_groups(&cutin, &other).unwrap();
        assert!(g.test.p_two_sided < 0.05);
        assert!(g.cutin.mean < g.other.mean);
    }
}
