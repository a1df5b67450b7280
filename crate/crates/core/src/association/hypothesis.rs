//! Statistical tests behind the association ensemble.
//!
//! All tests return a [`TestOutcome`]; "accept" means the null hypothesis
//! (both samples come from the same object) is not rejected.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::stats::{mean, normal_two_sided_quantile, sample_variance, t_two_sided_quantile};

/// Below this size per side the normal approximation of the rank-sum
/// statistic is not trusted.
pub const MIN_RANK_SUM_SAMPLE: usize = 5;
/// Minimum centroid history length for the single-sample t-test.
pub const MIN_SINGLE_T_HISTORY: usize = 3;
/// Minimum history length per object for the two-sample t-test.
pub const MIN_DOUBLE_T_HISTORY: usize = 2;
/// Standard deviations at or below this are treated as zero.
pub const DEGENERATE_STD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Accept,
    Reject,
    NotApplicable,
    DegenerateVariance,
    /// The test was not evaluated because the decision was already made.
    Skipped,
}

impl TestOutcome {
    pub fn is_accept(self) -> bool {
        self == TestOutcome::Accept
    }

    fn from_bool(accept: bool) -> Self {
        if accept {
            TestOutcome::Accept
        } else {
            TestOutcome::Reject
        }
    }
}

/// Mann–Whitney statistics of two 1-D samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSum {
    pub w_p: f64,
    pub w_q: f64,
    pub w: f64,
    pub mean: f64,
    /// Variance without the tie correction term.
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
    pub accept: bool,
}

/// Mid-ranks (1-based) of `values`; ties share the average of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share rank mean(i+1..=j).
        let r = 0.5 * ((i + 1) + j) as f64;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Rank-sum statistics without the minimum-size check.
///
/// Panics if either sample is empty.
pub fn rank_sum(p: &[f64], q: &[f64], alpha: f64) -> RankSum {
    assert!(!p.is_empty() && !q.is_empty(), "rank_sum needs non-empty samples");
    let mut mixed = Vec::with_capacity(p.len() + q.len());
    mixed.extend_from_slice(p);
    mixed.extend_from_slice(q);
    let ranks = mid_ranks(&mixed);
    let (np, nq) = (p.len() as f64, q.len() as f64);
    let r_p: f64 = ranks[..p.len()].iter().sum();
    let r_q: f64 = ranks[p.len()..].iter().sum();
    let w_p = r_p - np * (np + 1.0) / 2.0;
    let w_q = r_q - nq * (nq + 1.0) / 2.0;
    let w = w_p.min(w_q);
    let m = np * nq / 2.0;
    let variance = np * nq * (np + nq + 1.0) / 12.0;
    let half = normal_two_sided_quantile(alpha) * variance.sqrt();
    let (lower, upper) = (m - half, m + half);
    RankSum {
        w_p,
        w_q,
        w,
        mean: m,
        variance,
        lower,
        upper,
        accept: w >= lower && w <= upper,
    }
}

/// Wilcoxon rank-sum test on one coordinate.
pub fn rank_sum_test(p: &[f64], q: &[f64], alpha: f64) -> TestOutcome {
    if p.len() < MIN_RANK_SUM_SAMPLE || q.len() < MIN_RANK_SUM_SAMPLE {
        return TestOutcome::NotApplicable;
    }
    TestOutcome::from_bool(rank_sum(p, q, alpha).accept)
}

/// Rank-sum test run independently on x, y and z; accepts only if all do.
pub fn np_test_3d(p: &[Vec3], q: &[Vec3], alpha: f64) -> TestOutcome {
    if p.len() < MIN_RANK_SUM_SAMPLE || q.len() < MIN_RANK_SUM_SAMPLE {
        return TestOutcome::NotApplicable;
    }
    let mut a = Vec::with_capacity(p.len());
    let mut b = Vec::with_capacity(q.len());
    for dim in 0..3 {
        a.clear();
        b.clear();
        a.extend(p.iter().map(|v| v[dim]));
        b.extend(q.iter().map(|v| v[dim]));
        if !rank_sum(&a, &b, alpha).accept {
            return TestOutcome::Reject;
        }
    }
    TestOutcome::Accept
}

/// One-dimensional single-sample t-test of `c` against the mean of `samples`.
pub fn single_t_test_1d(samples: &[f64], c: f64, alpha: f64) -> TestOutcome {
    let n = samples.len();
    if n < 2 {
        return TestOutcome::NotApplicable;
    }
    let sd = sample_variance(samples).sqrt();
    if !(sd > DEGENERATE_STD) {
        return TestOutcome::DegenerateVariance;
    }
    let t = (mean(samples) - c) / (sd / (n as f64).sqrt());
    TestOutcome::from_bool(t.abs() <= t_two_sided_quantile(alpha, (n - 1) as f64))
}

fn column(history: &[Vec3], dim: usize) -> Vec<f64> {
    history.iter().map(|v| v[dim]).collect()
}

/// Single-sample t-test of a new centroid against a centroid history.
///
/// Returns `DegenerateVariance` when any axis of the history has zero spread;
/// callers fall back to a distance check.
pub fn single_t_test(history: &[Vec3], c: &Vec3, alpha: f64) -> TestOutcome {
    if history.len() < MIN_SINGLE_T_HISTORY {
        return TestOutcome::NotApplicable;
    }
    let cols: Vec<Vec<f64>> = (0..3).map(|d| column(history, d)).collect();
    if cols
        .iter()
        .any(|col| !(sample_variance(col).sqrt() > DEGENERATE_STD))
    {
        return TestOutcome::DegenerateVariance;
    }
    let all = (0..3).all(|d| single_t_test_1d(&cols[d], c[d], alpha).is_accept());
    TestOutcome::from_bool(all)
}

/// Pooled standard error of the difference of means.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let v = ((n1 - 1.0) * sample_variance(a) + (n2 - 1.0) * sample_variance(b)) / (n1 + n2 - 2.0);
    (v * (1.0 / n1 + 1.0 / n2)).sqrt()
}

/// Two-sample t-test with pooled variance on one coordinate.
pub fn double_t_test_1d(a: &[f64], b: &[f64], alpha: f64) -> TestOutcome {
    if a.len() < MIN_DOUBLE_T_HISTORY || b.len() < MIN_DOUBLE_T_HISTORY {
        return TestOutcome::NotApplicable;
    }
    let sd = pooled_std(a, b);
    if !(sd > DEGENERATE_STD) {
        return TestOutcome::DegenerateVariance;
    }
    let t = (mean(a) - mean(b)) / sd;
    let df = (a.len() + b.len() - 2) as f64;
    TestOutcome::from_bool(t.abs() <= t_two_sided_quantile(alpha, df))
}

/// Two-sample t-test between two centroid histories; accepts (merge) only if
/// every axis accepts.
pub fn double_t_test(c1: &[Vec3], c2: &[Vec3], alpha: f64) -> TestOutcome {
    if c1.len() < MIN_DOUBLE_T_HISTORY || c2.len() < MIN_DOUBLE_T_HISTORY {
        return TestOutcome::NotApplicable;
    }
    let mut all = true;
    for d in 0..3 {
        match double_t_test_1d(&column(c1, d), &column(c2, d), alpha) {
            TestOutcome::Accept => {}
            TestOutcome::DegenerateVariance => return TestOutcome::DegenerateVariance,
            _ => all = false,
        }
    }
    TestOutcome::from_bool(all)
}
