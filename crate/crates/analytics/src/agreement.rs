//! Agreement statistics between rating sets.
//!
//! Two rating vectors over the same models are compared for linear
//! association (Pearson r, R²), rank agreement (Spearman ρ with average
//! ranks, Kendall τ_b), head-of-leaderboard overlap (top-k), and scale/bias
//! agreement (Lin's concordance coefficient, Bland-Altman limits). Three or
//! more sets treated as interchangeable raters are summarized with
//! Cronbach's α and ICC(2,1).
//!
//! Variances are sample (n − 1) variances throughout.

use serde::{Deserialize, Serialize};

use crate::error::StatsError;

/// Multiplier of the difference standard deviation in the limits of agreement.
pub const LOA_Z: f64 = 1.96;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn check_finite(v: &[f64]) -> Result<(), StatsError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < min_len {
        return Err(StatsError::TooFewObservations { required: min_len, actual: x.len() });
    }
    check_finite(x)?;
    check_finite(y)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Kendall's τ_b = (C − D) / sqrt((C + D + T_x)(C + D + T_y)), where `T_x`
/// counts pairs tied in `x` only and `T_y` pairs tied in `y` only.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
    }
    let denom = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
    if denom == 0.0 {
        return f64::NAN;
    }
    (c as f64 - d as f64) / denom
}

/// Lin's concordance correlation coefficient with sample moments.
pub fn concordance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (vx, vy) = (sample_var(x), sample_var(y));
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    let denom = vx + vy + (mx - my).powi(2);
    if denom == 0.0 {
        return f64::NAN;
    }
    2.0 * cov / denom
}

/// Indices of the top `k` entries, descending by value, ties broken by label.
fn top_indices(v: &[f64], labels: &[&str], k: usize) -> (Vec<usize>, bool) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(labels[a].cmp(labels[b])));
    let straddles = k > 0 && k < v.len() && v[order[k - 1]] == v[order[k]];
    order.truncate(k);
    (order, straddles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKOverlap {
    pub k: usize,
    pub overlap: f64,
    /// A rating tie crosses the k boundary in at least one of the rankings,
    /// so membership depended on the label tie-break.
    pub boundary_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrStats {
    pub n: usize,
    pub pearson: f64,
    pub r2: f64,
    pub spearman: f64,
    pub kendall_tau_b: f64,
    pub ccc: f64,
    pub top_k: Vec<TopKOverlap>,
    /// Set when a vector is constant and correlations are not defined.
    pub undefined: bool,
}

impl CorrStats {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|t| t.k == k).map(|t| t.overlap)
    }
}

/// Pairwise correlation battery. `labels` names the items (for top-k
/// tie-breaks) and must have the same length as `x` and `y`.
pub fn corr_stats(labels: &[&str], x: &[f64], y: &[f64], k_list: &[usize]) -> Result<CorrStats, StatsError> {
    check_pair(x, y, 3)?;
    if labels.len() != x.len() {
        return Err(StatsError::LengthMismatch { left: labels.len(), right: x.len() });
    }
    let r = pearson(x, y);
    let spearman = pearson(&average_ranks(x), &average_ranks(y));
    let top_k = k_list
        .iter()
        .map(|&k| {
            if k == 0 || k > x.len() {
                return TopKOverlap { k, overlap: f64::NAN, boundary_tie: false };
            }
            let (sx, tie_x) = top_indices(x, labels, k);
            let (sy, tie_y) = top_indices(y, labels, k);
            let common = sx.iter().filter(|i| sy.contains(i)).count();
            TopKOverlap { k, overlap: common as f64 / k as f64, boundary_tie: tie_x || tie_y }
        })
        .collect();
    Ok(CorrStats {
        n: x.len(),
        pearson: r,
        r2: r * r,
        spearman,
        kendall_tau_b: kendall_tau_b(x, y),
        ccc: concordance(x, y),
        top_k,
        undefined: r.is_nan(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Mean of `x − y`.
    pub bias: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    /// `1.96 · sd`.
    pub loa_half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn bland_altman(x: &[f64], y: &[f64]) -> Result<BlandAltman, StatsError> {
    check_pair(x, y, 2)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let bias = mean(&d);
    let sd = sample_var(&d).sqrt();
    let half = LOA_Z * sd;
    Ok(BlandAltman { bias, sd, loa_half_width: half, lower: bias - half, upper: bias + half })
}

/// Two-way ANOVA without replication over an n-target × k-rater matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub n: usize,
    pub k: usize,
    pub ss_total: f64,
    pub ss_targets: f64,
    pub ss_raters: f64,
    pub ss_residual: f64,
    pub ms_targets: f64,
    pub ms_raters: f64,
    pub ms_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityStats {
    pub cronbach_alpha: f64,
    pub icc_2_1: f64,
    pub anova: AnovaTable,
    /// Zero total variance; both coefficients are NaN.
    pub undefined: bool,
}

/// Cronbach's α and ICC(2,1) (two-way random, absolute agreement, single
/// measure). `rows[t][r]` is rater `r`'s rating of target `t`.
pub fn reliability_stats(rows: &[Vec<f64>]) -> Result<ReliabilityStats, StatsError> {
    let n = rows.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { required: 2, actual: n });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(StatsError::TooFewObservations { required: 2, actual: k });
    }
    for (t, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(StatsError::RaggedMatrix { row: t, expected: k, actual: row.len() });
        }
        check_finite(row)?;
    }

    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();

    let ss_total: f64 = rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_targets = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_raters = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_residual: f64 = rows
        .iter()
        .enumerate()
        .flat_map(|(t, r)| {
            let (row_means, col_means) = (&row_means, &col_means);
            r.iter().enumerate().map(move |(j, v)| (v - row_means[t] - col_means[j] + grand).powi(2))
        })
        .sum();

    let anova = AnovaTable {
        n,
        k,
        ss_total,
        ss_targets,
        ss_raters,
        ss_residual,
        ms_targets: ss_targets / (nf - 1.0),
        ms_raters: ss_raters / (kf - 1.0),
        ms_residual: ss_residual / ((nf - 1.0) * (kf - 1.0)),
    };

    if ss_total == 0.0 {
        return Ok(ReliabilityStats { cronbach_alpha: f64::NAN, icc_2_1: f64::NAN, anova, undefined: true });
    }

    let item_var: f64 = (0..k).map(|j| sample_var(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).sum();
    let totals: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total_var = sample_var(&totals);
    let cronbach_alpha = if total_var == 0.0 {
        f64::NAN
    } else {
        kf / (kf - 1.0) * (1.0 - item_var / total_var)
    };

    let (msb, msr, mse) = (anova.ms_targets, anova.ms_raters, anova.ms_residual);
    let denom = msb + (kf - 1.0) * mse + kf / nf * (msr - mse);
    let icc_2_1 = if denom == 0.0 { f64::NAN } else { (msb - mse) / denom };

    Ok(ReliabilityStats { cronbach_alpha, icc_2_1, anova, undefined: false })
}

/// Named rating columns over a shared list of models.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatingSets {
    pub models: Vec<String>,
    pub sets: Vec<(String, Vec<f64>)>,
}

impl RatingSets {
    pub fn set(&self, name: &str) -> Option<&[f64]> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub x: String,
    pub y: String,
    pub corr: CorrStats,
    pub bland_altman: BlandAltman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub models: Vec<String>,
    pub pairs: Vec<PairAgreement>,
    pub reliability: Option<ReliabilityStats>,
}

/// Every ordered pair `(sets[i], sets[j])` with `i < j`, plus reliability
/// across all sets when there are at least two.
pub fn agreement_report(sets: &RatingSets, k_list: &[usize]) -> Result<AgreementReport, StatsError> {
    let labels: Vec<&str> = sets.models.iter().map(String::as_str).collect();
    let mut pairs = Vec::new();
    for (i, (xn, x)) in sets.sets.iter().enumerate() {
        for (yn, y) in &sets.sets[i + 1..] {
            pairs.push(PairAgreement {
                x: xn.clone(),
                y: yn.clone(),
                corr: corr_stats(&labels, x, y, k_list)?,
                bland_altman: bland_altman(x, y)?,
            });
        }
    }
    let reliability = if sets.sets.len() >= 2 {
        let rows: Vec<Vec<f64>> = (0..sets.models.len())
            .map(|m| sets.sets.iter().map(|(_, v)| v[m]).collect())
            .collect();
        Some(reliability_stats(&rows)?)
    } else {
        None
    };
    Ok(AgreementReport { models: sets.models.clone(), pairs, reliability })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: [&str; 5] = ["a", "b", "c", "d", "e"];

    #[test]
    fn identity_gives_perfect_agreement() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0];
        let s = corr_stats(&LABELS, &x, &x, &[2]).unwrap();
        for v in [s.pearson, s.r2, s.spearman, s.kendall_tau_b, s.ccc] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.top(2), Some(1.0));
    }

    #[test]
    fn reversal_gives_minus_one_ranks() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = corr_stats(&LABELS, &x, &y, &[]).unwrap();
        assert!((s.spearman + 1.0).abs() < 1e-12);
        assert!((s.kendall_tau_b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_flagged() {
        let x = [1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        let s = corr_stats(&LABELS[..3], &x, &y, &[]).unwrap();
        assert!(s.undefined);
        assert!(s.pearson.is_nan());
        assert!(s.spearman.is_nan());
    }

    #[test]
    fn rejects_short_or_mismatched_input() {
        assert!(matches!(
            corr_stats(&LABELS[..2], &[1.0, 2.0], &[1.0, 2.0], &[]),
            Err(StatsError::TooFewObservations { .. })
        ));
        assert!(matches!(
            bland_altman(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(bland_altman(&[1.0, f64::NAN], &[1.0, 2.0]), Err(StatsError::NonFinite(1))));
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn tau_b_tie_correction() {
        // Pairs: (0,1) tied in x only; (0,2),(1,2) concordant.
        let x = [1.0, 1.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        let expected = 2.0 / (3.0f64 * 2.0).sqrt();
        assert!((kendall_tau_b(&x, &y) - expected).abs() < 1e-12);
    }

    #[test]
    fn top_k_boundary_tie_is_flagged() {
        let x = [5.0, 4.0, 4.0, 1.0];
        let y = [5.0, 4.0, 3.0, 1.0];
        let s = corr_stats(&LABELS[..4], &x, &y, &[2, 3]).unwrap();
        assert_eq!(s.top_k[0].overlap, 1.0);
        assert!(s.top_k[0].boundary_tie);
        assert!(!s.top_k[1].boundary_tie);
    }

    #[test]
    fn bland_altman_identity() {
        let x = [1.0, 2.0, 3.0];
        let ba = bland_altman(&x, &x).unwrap();
        assert_eq!(ba.bias, 0.0);
        assert_eq!(ba.loa_half_width, 0.0);
    }

    #[test]
    fn identical_raters_are_fully_reliable() {
        let rows: Vec<Vec<f64>> = [1.0, 4.0, 2.0, 8.0].iter().map(|&v| vec![v; 3]).collect();
        let r = reliability_stats(&rows).unwrap();
        assert!((r.cronbach_alpha - 1.0).abs() < 1e-12);
        assert!((r.icc_2_1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_rater_keeps_alpha_but_lowers_icc() {
        let base = [1000.0, 1100.0, 950.0, 1200.0, 870.0];
        let rows: Vec<Vec<f64>> = base.iter().map(|&v| vec![v, v + 50.0]).collect();
        let r = reliability_stats(&rows).unwrap();
        assert!((r.cronbach_alpha - 1.0).abs() < 1e-12);
        assert!(r.icc_2_1 < 1.0);
        // Hand ANOVA: residual is zero, so ICC = MSB / (MSB + (k/n)·MSR).
        let a = &r.anova;
        assert!(a.ss_residual.abs() < 1e-9);
        let expected = a.ms_targets / (a.ms_targets + 2.0 / 5.0 * a.ms_raters);
        assert!((r.icc_2_1 - expected).abs() < 1e-12);
        assert!((a.ms_raters - 5.0 * 2.0 * 25.0f64.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let r = reliability_stats(&rows).unwrap();
        assert!(r.undefined);
        assert!(r.icc_2_1.is_nan());
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(reliability_stats(&rows), Err(StatsError::RaggedMatrix { row: 1, .. })));
    }
}
