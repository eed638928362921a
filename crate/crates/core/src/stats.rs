//! One-sided Mann-Whitney U test with a rank-biserial effect size.
//!
//! ## Conventions
//!
//! * `U` counts treatment-over-control wins, ties worth one half; computed
//!   via midranks, which is the same thing: `U = R1 - n1(n1+1)/2`.
//! * The alternative is "treatment stochastically greater", so the p-value
//!   is `P(U >= u_obs)` under the null.
//! * Effect size is `r = 2U/(n1*n2) - 1`, in [-1, 1]; swapping the samples
//!   flips its sign.
//! * The exact null distribution (full enumeration over rank assignments) is
//!   used when `n1*n2 <= exact_cutoff` and the pooled sample is tie-free;
//!   otherwise a normal approximation with tie-corrected variance and a 0.5
//!   continuity correction.
//! * Degenerate input where every value is identical yields U = n1*n2/2,
//!   r = 0, p = 0.5.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample: {0}")]
    EmptySample(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Negligible,
    Small,
    Medium,
    Large,
}

/// Half-open bands on |r|: negligible < 0.11 <= small < 0.28 <= medium
/// < 0.43 <= large.
pub fn effect_size_label(r: f64) -> EffectSize {
    let a = r.abs();
    if a < 0.11 {
        EffectSize::Negligible
    } else if a < 0.28 {
        EffectSize::Small
    } else if a < 0.43 {
        EffectSize::Medium
    } else {
        EffectSize::Large
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatResult {
    pub u_statistic: f64,
    pub p_value: f64,
    pub effect_size_r: f64,
    pub n_treatment: usize,
    pub n_control: usize,
    pub method: StatMethod,
    pub size_label: EffectSize,
}

pub fn mann_whitney_one_sided(
    treatment: &[f64],
    control: &[f64],
    exact_cutoff: usize,
) -> Result<StatResult, StatsError> {
    let (result, _) = mann_whitney_both(treatment, control, exact_cutoff)?;
    Ok(result)
}

/// Like [`mann_whitney_one_sided`] but also returns the two-sided p-value
/// (doubled smaller tail, capped at 1).
pub fn mann_whitney_both(
    treatment: &[f64],
    control: &[f64],
    exact_cutoff: usize,
) -> Result<(StatResult, f64), StatsError> {
    if treatment.is_empty() {
        return Err(StatsError::EmptySample("treatment"));
    }
    if control.is_empty() {
        return Err(StatsError::EmptySample("control"));
    }
    if treatment.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("treatment"));
    }
    if control.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("control"));
    }

    let n1 = treatment.len();
    let n2 = control.len();
    let (u, tie_groups) = u_statistic(treatment, control);
    let r = 2.0 * u / (n1 * n2) as f64 - 1.0;
    let has_ties = !tie_groups.is_empty();

    let (p_one, p_two, method) = if !has_ties && n1 * n2 <= exact_cutoff {
        // Tie-free U is an integer; the float is exact.
        let u_int = u.round() as u64;
        let (p_one, p_two) = exact_p(n1, n2, u_int);
        (p_one, p_two, StatMethod::Exact)
    } else {
        let n = (n1 + n2) as f64;
        let mean = (n1 * n2) as f64 / 2.0;
        let tie_term: f64 = tie_groups.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = mean / 6.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
        if var <= f64::EPSILON {
            // Every pooled value identical.
            (0.5, 1.0, StatMethod::NormalApprox)
        } else {
            let sd = var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let p_hi = 1.0 - normal.cdf((u - 0.5 - mean) / sd);
            let p_lo = normal.cdf((u + 0.5 - mean) / sd);
            (p_hi, (2.0 * p_hi.min(p_lo)).min(1.0), StatMethod::NormalApprox)
        }
    };

    Ok((
        StatResult {
            u_statistic: u,
            p_value: p_one,
            effect_size_r: r,
            n_treatment: n1,
            n_control: n2,
            method,
            size_label: effect_size_label(r),
        },
        p_two,
    ))
}

/// Midrank U statistic for the treatment sample, plus the sizes of pooled
/// tie groups (needed for the variance correction).
fn u_statistic(treatment: &[f64], control: &[f64]) -> (f64, Vec<usize>) {
    let n1 = treatment.len();
    let mut pooled: Vec<(f64, bool)> = treatment
        .iter()
        .map(|&v| (v, true))
        .chain(control.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));

    let mut rank_sum_treatment = 0.0;
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks are 1-based; a group spanning positions i..j gets their mean.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let group = j - i;
        if group > 1 {
            tie_groups.push(group);
        }
        for k in i..j {
            if pooled[k].1 {
                rank_sum_treatment += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_treatment - (n1 * (n1 + 1)) as f64 / 2.0;
    (u, tie_groups)
}

/// Exact one- and two-sided p-values by counting rank assignments.
///
/// `count[u]` is the number of ways to choose which pooled ranks belong to
/// the treatment sample such that the U statistic equals `u`; dividing by
/// C(n1+n2, n1) gives the null pmf. The recurrence peels off the largest
/// pooled value: if it belongs to treatment it wins against all remaining
/// controls, contributing n2 to U.
fn exact_p(n1: usize, n2: usize, u_obs: u64) -> (f64, f64) {
    let dist = exact_distribution(n1, n2);
    let total: f64 = dist.iter().map(|&c| c as f64).sum();
    let u = u_obs as usize;
    let upper: f64 = dist[u.min(dist.len() - 1)..].iter().map(|&c| c as f64).sum();
    let lower: f64 = dist[..=u.min(dist.len() - 1)].iter().map(|&c| c as f64).sum();
    let p_one = upper / total;
    let p_two = (2.0 * (upper / total).min(lower / total)).min(1.0);
    (p_one, p_two)
}

/// Counts of rank assignments per U value, indexed by U in `0..=n1*n2`.
pub fn exact_distribution(n1: usize, n2: usize) -> Vec<u64> {
    // c[m][n][u], built bottom-up over sample sizes.
    let umax = n1 * n2;
    let mut table = vec![vec![vec![0u64; umax + 1]; n2 + 1]; n1 + 1];
    for n in 0..=n2 {
        table[0][n][0] = 1;
    }
    for m in 1..=n1 {
        table[m][0][0] = 1;
        for n in 1..=n2 {
            for u in 0..=m * n {
                let take_treatment = if u >= n { table[m - 1][n][u - n] } else { 0 };
                let take_control = table[m][n - 1][u];
                table[m][n][u] = take_treatment + take_control;
            }
        }
    }
    table[n1][n2][..=umax].to_vec()
}
