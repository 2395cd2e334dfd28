//! Condition and trend tests.
//!
//! Mixed models are replaced by tests on per-participant summaries:
//! Pearson chi-square on pooled success counts, a participant-level
//! permutation test for between-condition differences, and a one-sample
//! t-test on per-participant slopes for learning effects.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Largest |x|+|y| for which the exact null distribution of U is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "U")]
    U,
    #[serde(rename = "chi2")]
    Chi2,
    #[serde(rename = "slope_t")]
    SlopeT,
    #[serde(rename = "perm_p")]
    PermP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic_name: Statistic,
    pub statistic_value: f64,
    pub p_value: f64,
    pub n_per_group: Vec<usize>,
    /// Effect estimate: mean difference for permutation tests, mean slope
    /// for trends.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimate: Option<f64>,
    pub method_note: String,
}

impl TestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("contingency table has a zero marginal")]
    ZeroMarginal,
    #[error("need at least {need} participants per group, got {got}")]
    TooFewParticipants { need: usize, got: usize },
    #[error("participant {index} has fewer than 2 values")]
    ShortSeries { index: usize },
    #[error("non-finite value in sample")]
    NonFinite,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Midranks (1-based) of `values`, plus tie group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of ways `n` ranks out of n+m give U1 == u, for every u in 0..=n*m.
pub fn u_distribution(n: usize, m: usize) -> Vec<u64> {
    // f[n][m][u] = f[n-1][m][u-m] + f[n][m-1][u]: the largest rank
    // belongs to x (beats all m of y) or to y.
    let max = n * m;
    let mut table = vec![vec![Vec::<u64>::new(); m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            let mut f = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                f[0] = 1;
            } else {
                for (u, slot) in f.iter_mut().enumerate() {
                    let from_x = if u >= j { table[i - 1][j].get(u - j).copied().unwrap_or(0) } else { 0 };
                    let from_y = table[i][j - 1].get(u).copied().unwrap_or(0);
                    *slot = from_x + from_y;
                }
            }
            table[i][j] = f;
        }
    }
    let out = std::mem::take(&mut table[n][m]);
    debug_assert_eq!(out.len(), max + 1);
    out
}

/// Two-sided Mann-Whitney U test. U = min(U1, U2).
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(x)?;
    check_finite(y)?;
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n].iter().sum();
    let u1 = r1 - (n * (n + 1)) as f64 / 2.0;
    let u2 = (n * m) as f64 - u1;
    let u = u1.min(u2);
    let n_per_group = vec![n, m];

    if ties.is_empty() && n + m <= EXACT_MAX_N {
        let dist = u_distribution(n, m);
        let total: u64 = dist.iter().sum();
        let below: u64 = dist[..=(u as usize)].iter().sum();
        let p = (2.0 * below as f64 / total as f64).min(1.0);
        return Ok(TestResult {
            statistic_name: Statistic::U,
            statistic_value: u,
            p_value: p,
            n_per_group,
            estimate: None,
            method_note: "exact two-sided p from the full null distribution of U".into(),
        });
    }

    let big_n = (n + m) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = (n * m) as f64 / 12.0 * ((big_n + 1.0) - tie_term);
    let mu = (n * m) as f64 / 2.0;
    let (p, note) = if var <= 0.0 {
        (1.0, "normal approximation; zero variance (all values tied), p set to 1".to_string())
    } else {
        let z = (((u - mu).abs() - 0.5).max(0.0)) / var.sqrt();
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        (
            (2.0 * std.sf(z)).min(1.0),
            format!(
                "normal approximation with continuity correction{}",
                if ties.is_empty() { "" } else { " and tie-corrected variance" }
            ),
        )
    };
    Ok(TestResult {
        statistic_name: Statistic::U,
        statistic_value: u,
        p_value: p,
        n_per_group,
        estimate: None,
        method_note: note,
    })
}

/// Pearson chi-square on a 2×2 table, no continuity correction, df = 1.
pub fn chi_square_2x2(counts: [[u64; 2]; 2]) -> Result<TestResult, StatsError> {
    let rows = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let cols = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(StatsError::ZeroMarginal);
    }
    let total = (rows[0] + rows[1]) as f64;
    let mut chi2 = 0.0;
    for (r, row) in counts.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let expected = rows[r] as f64 * cols[c] as f64 / total;
            chi2 += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let p = ChiSquared::new(1.0).expect("df 1").sf(chi2).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic_name: Statistic::Chi2,
        statistic_value: chi2,
        p_value: p,
        n_per_group: vec![rows[0] as usize, rows[1] as usize],
        estimate: None,
        method_note: "Pearson chi-square, df=1, no continuity correction; stands in for a binomial GEE".into(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn binomial(n: usize, k: usize) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Calls `f` with each k-subset of 0..n, as a sorted index list.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else { return };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

// Relative slack when comparing |Δ| so that float noise in the mean does
// not drop the observed split from its own tail.
const DELTA_EPS: f64 = 1e-9;

/// Permutes condition labels between participants. `a` and `b` hold one
/// summary value per participant. Exhaustive when the number of distinct
/// relabelings is at most `n_perm`, else `n_perm` seeded random relabelings.
pub fn cluster_permutation_test(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<TestResult, StatsError> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(StatsError::TooFewParticipants { need: 2, got: g.len() });
        }
        check_finite(g)?;
    }
    let mut pooled: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    pooled.extend(&sa);
    pooled.extend(&sb);
    let (na, n) = (a.len(), pooled.len());
    let observed = mean(&sa) - mean(&sb);
    let n_per_group = vec![na, n - na];
    let result = |p: f64, note: String| TestResult {
        statistic_name: Statistic::PermP,
        statistic_value: p,
        p_value: p,
        n_per_group: n_per_group.clone(),
        estimate: Some(observed),
        method_note: note,
    };
    if pooled.iter().all(|&v| v == pooled[0]) {
        return Ok(result(1.0, "all values equal; p set to 1".into()));
    }

    let total_sum: f64 = pooled.iter().sum();
    let threshold = observed.abs() * (1.0 - DELTA_EPS) - DELTA_EPS;
    let delta_of = |sum_a: f64| sum_a / na as f64 - (total_sum - sum_a) / (n - na) as f64;

    match binomial(n, na).filter(|&c| c as usize <= n_perm) {
        Some(splits) => {
            let mut extreme = 0u64;
            for_each_combination(n, na, |idx| {
                let sum_a: f64 = idx.iter().map(|&i| pooled[i]).sum();
                if delta_of(sum_a).abs() >= threshold {
                    extreme += 1;
                }
            });
            let p = (1 + extreme) as f64 / (1 + splits) as f64;
            Ok(result(p, format!("exhaustive over all {splits} participant-level relabelings; stands in for a mixed model")))
        }
        None => {
            const CHUNK: usize = 1024;
            let chunks = n_perm.div_ceil(CHUNK);
            let extreme: u64 = (0..chunks)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let mut buf = pooled.clone();
                    let reps = CHUNK.min(n_perm - k * CHUNK);
                    (0..reps)
                        .filter(|_| {
                            buf.shuffle(&mut rng);
                            delta_of(buf[..na].iter().sum()).abs() >= threshold
                        })
                        .count() as u64
                })
                .sum();
            let p = ((1 + extreme) as f64 / (1 + n_perm) as f64).min(1.0);
            Ok(result(p, format!("{n_perm} seeded participant-level relabelings (seed {seed}); stands in for a mixed model")))
        }
    }
}

/// Least-squares slope of `ys` against 0, 1, 2, ...
pub fn ols_slope(ys: &[f64]) -> f64 {
    let xbar = (ys.len() - 1) as f64 / 2.0;
    let ybar = mean(ys);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// One-sample t-test of per-participant slopes against zero.
pub fn trial_trend(series: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if series.len() < 2 {
        return Err(StatsError::TooFewParticipants { need: 2, got: series.len() });
    }
    for (index, s) in series.iter().enumerate() {
        if s.len() < 2 {
            return Err(StatsError::ShortSeries { index });
        }
        check_finite(s)?;
    }
    let slopes: Vec<f64> = series.iter().map(|s| ols_slope(s)).collect();
    let n = slopes.len() as f64;
    let m = mean(&slopes);
    let var = slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = slopes.iter().map(|s| s.abs()).fold(1.0, f64::max);
    let (t, p, note) = if var.sqrt() <= 1e-12 * scale {
        if m.abs() <= 1e-12 * scale {
            (0.0, 1.0, "zero variance in slopes, mean 0; p set to 1".to_string())
        } else {
            (f64::INFINITY.copysign(m), 0.0, "zero variance in slopes, nonzero mean; p set to 0".to_string())
        }
    } else {
        let t = m / (var.sqrt() / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1");
        (t, (2.0 * dist.sf(t.abs())).min(1.0), format!("one-sample t on per-participant OLS slopes, df={}; stands in for a mixed model", n - 1.0))
    };
    Ok(TestResult {
        statistic_name: Statistic::SlopeT,
        statistic_value: t,
        p_value: p,
        n_per_group: vec![series.len()],
        estimate: Some(m),
        method_note: note,
    })
}
