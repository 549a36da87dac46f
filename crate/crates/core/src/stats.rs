//! Statistical primitives: rank-based correlation, the Wilcoxon signed-rank
//! test, Holm–Bonferroni adjustment, and small order-statistics helpers.
//!
//! The Wilcoxon test uses the exact null distribution (computed by dynamic
//! programming over rank sums) for n ≤ 20 non-zero differences and the
//! normal approximation with tie and continuity correction above that.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest sample size for which the exact Wilcoxon distribution is used.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Direction of the alternative hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    /// Median of `a - b` greater than zero.
    Greater,
    /// Median of `a - b` less than zero.
    Less,
}

/// Outcome of a Wilcoxon signed-rank test.
#[derive(Clone, Copy, Debug)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Non-zero differences that entered the test.
    pub n_used: usize,
    /// True when every difference was zero, in which case `p_value` is 1.
    pub degenerate: bool,
}

/// Lower median of a nonempty slice: for even counts the smaller of the two
/// central order statistics, which keeps the value deterministic.
pub fn lower_median<F: Scalar>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Nearest-rank percentile: the ceil(q·n)-th smallest value, q in (0, 1].
pub fn percentile_nearest_rank<F: Scalar>(values: &[F], q: f64) -> Option<F> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    Some(sorted[rank - 1])
}

pub fn mean<F: Scalar>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let sum: F = values.iter().copied().sum();
    Some(sum / F::from_usize(values.len()).unwrap())
}

/// Sample standard deviation (n − 1 denominator); `None` for fewer than two values.
pub fn sample_std<F: Scalar>(values: &[F]) -> Option<F> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: F = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Some((ss / F::from_usize(values.len() - 1).unwrap()).sqrt())
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks<F: Scalar>(values: &[F]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Result<Option<F>> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Stats("need at least 2 pairs".into()));
    }
    let n = F::from_usize(x.len()).unwrap();
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// rank vector is constant.
pub fn spearman<F: Scalar>(x: &[F], y: &[F]) -> Result<Option<F>> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Stats("need at least 2 pairs".into()));
    }
    let rx: Vec<F> = average_ranks(x)
        .into_iter()
        .map(F::from_f64_lossy)
        .collect();
    let ry: Vec<F> = average_ranks(y)
        .into_iter()
        .map(F::from_f64_lossy)
        .collect();
    pearson(&rx, &ry)
}

/// Holm–Bonferroni step-down adjustment, returned in input order.
pub fn holm_bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].partial_cmp(&p_values[j]).expect("valid p"));
    let mut adjusted = vec![0.0; m];
    let mut running_max = 0.0_f64;
    for (pos, &idx) in order.iter().enumerate() {
        let stepwise = ((m - pos) as f64) * p_values[idx];
        running_max = running_max.max(stepwise);
        adjusted[idx] = running_max.min(1.0);
    }
    adjusted
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped before ranking. Fails when fewer than five
/// non-zero differences remain, except that fully tied inputs return the
/// degenerate result `p = 1`.
pub fn wilcoxon_signed_rank<F: Scalar>(
    a: &[F],
    b: &[F],
    alternative: Alternative,
) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).to_f64_lossy())
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_used: 0,
            degenerate: true,
        });
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::Stats(format!(
            "need at least 5 non-zero differences, got {n}"
        )));
    }

    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let t_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();

    let p_value = if n <= WILCOXON_EXACT_MAX_N {
        exact_p(&ranks, t_plus, alternative)
    } else {
        normal_p(&ranks, t_plus, alternative)
    };
    Ok(WilcoxonResult {
        statistic: t_plus,
        p_value,
        n_used: n,
        degenerate: false,
    })
}

/// Exact tail probabilities of T⁺ under the signed-rank null.
///
/// Ranks are doubled so average ranks become integers, then the distribution
/// of the doubled positive-rank sum is built by convolution. Counts stay
/// below 2^n ≤ 2^20, so f64 arithmetic is exact.
fn exact_p(ranks: &[f64], t_plus: f64, alternative: Alternative) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0_f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    let denom = 2.0_f64.powi(ranks.len() as i32);
    let t2 = (2.0 * t_plus).round() as usize;
    let p_le: f64 = counts[..=t2].iter().sum::<f64>() / denom;
    let p_ge: f64 = counts[t2..].iter().sum::<f64>() / denom;
    match alternative {
        Alternative::TwoSided => (2.0 * p_le.min(p_ge)).min(1.0),
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
    }
}

/// Normal approximation with tie correction and continuity correction.
fn normal_p(ranks: &[f64], t_plus: f64, alternative: Alternative) -> f64 {
    let n = ranks.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ranks"));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let sigma2 = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let sigma = sigma2.sqrt();
    let z = |shift: f64| (t_plus - mu + shift) / sigma;
    match alternative {
        Alternative::TwoSided => {
            let zc = (t_plus - mu).abs() - 0.5;
            (2.0 * (1.0 - standard_normal_cdf(zc.max(0.0) / sigma))).min(1.0)
        }
        Alternative::Greater => 1.0 - standard_normal_cdf(z(-0.5)),
        Alternative::Less => standard_normal_cdf(z(0.5)),
    }
}

/// Φ(z) via the Abramowitz–Stegun 7.1.26 rational approximation of erf
/// (absolute error below 1.5e-7, sufficient for the approximate branch).
pub fn standard_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let signed = if x < 0.0 { -erf } else { erf };
    0.5 * (1.0 + signed)
}
