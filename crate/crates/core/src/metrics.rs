//! Evaluation statistics over generated samples.
//!
//! Percentiles use linear interpolation between closest ranks: for sorted
//! samples `v[0..n]` the `q`-th percentile sits at position `q/100 * (n-1)`.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Generated values for `M` rows with `S` samples each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n_samples: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n_rows: usize, n_samples: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::invalid("sample matrix needs at least one sample per row"));
        }
        if values.len() != n_rows * n_samples {
            return Err(Error::invalid(format!(
                "{} values for a {n_rows}x{n_samples} sample matrix",
                values.len()
            )));
        }
        Ok(Self { n_samples, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::invalid("sample rows have different lengths"));
        }
        let m = rows.len();
        Self::new(m, s, rows.into_iter().flatten().collect())
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_samples
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_samples..(j + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_samples)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_samples: self.n_samples,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn row_means(&self) -> Vec<f64> {
        self.rows().map(mean).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn check_truth(truth: &[f64], samples: &SampleMatrix) -> Result<()> {
    if truth.len() != samples.n_rows() {
        return Err(Error::invalid(format!(
            "{} truths for {} sample rows",
            truth.len(),
            samples.n_rows()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one row"));
    }
    Ok(())
}

/// Percentile of already sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = (pos.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Root mean squared error of the per-row sample means.
pub fn rmse(truth: &[f64], samples: &SampleMatrix) -> Result<f64> {
    check_truth(truth, samples)?;
    let mse = truth
        .iter()
        .zip(samples.rows())
        .map(|(y, row)| (y - mean(row)).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt())
}

pub const NLL_STD_FLOOR: f64 = 1e-6;

/// Mean negative log-likelihood under a Gaussian fitted to each row's samples.
pub fn nll(truth: &[f64], samples: &SampleMatrix) -> Result<f64> {
    check_truth(truth, samples)?;
    if samples.n_samples() < 2 {
        return Err(Error::invalid("NLL needs at least two samples per row"));
    }
    let total: f64 = truth
        .iter()
        .zip(samples.rows())
        .map(|(y, row)| {
            let mu = mean(row);
            let sd = sample_std(row).max(NLL_STD_FLOOR);
            0.5 * (2.0 * std::f64::consts::PI * sd * sd).ln() + (y - mu).powi(2) / (2.0 * sd * sd)
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Quantile interval coverage error, in percent.
///
/// Each row's samples define `n_bins + 1` quantiles at levels `k / n_bins`.
/// The truth's bin is the number of quantiles strictly below it, with the
/// two out-of-range bins merged into their neighbours.
pub fn qice(truth: &[f64], samples: &SampleMatrix, n_bins: usize) -> Result<f64> {
    check_truth(truth, samples)?;
    if n_bins < 1 || samples.n_samples() < n_bins {
        return Err(Error::invalid(format!(
            "QICE with {n_bins} bins needs at least that many samples per row"
        )));
    }
    let mut counts = vec![0usize; n_bins];
    for (y, row) in truth.iter().zip(samples.rows()) {
        let sorted = sorted_copy(row);
        let below = (0..=n_bins)
            .filter(|&k| percentile_sorted(&sorted, 100.0 * k as f64 / n_bins as f64) < *y)
            .count();
        counts[below.clamp(1, n_bins) - 1] += 1;
    }
    let m = truth.len() as f64;
    let ideal = 1.0 / n_bins as f64;
    let err = counts
        .iter()
        .map(|&c| (c as f64 / m - ideal).abs())
        .sum::<f64>()
        / n_bins as f64;
    Ok(100.0 * err)
}

/// Per-row width between the `lo` and `hi` percentiles.
pub fn piw(samples: &SampleMatrix, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(0.0..100.0).contains(&lo) || !(lo < hi && hi <= 100.0) {
        return Err(Error::invalid(format!("invalid percentile pair ({lo}, {hi})")));
    }
    Ok(samples
        .rows()
        .map(|row| {
            let s = sorted_copy(row);
            percentile_sorted(&s, hi) - percentile_sorted(&s, lo)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestOutcome {
    pub reject: bool,
    pub t_stat: f64,
    pub p_value: f64,
}

/// Paired two-sample t-test between `p1` and `1 - p1`.
///
/// Differences are `d = 2 p1 - 1`. With zero spread the test rejects exactly
/// when the mean difference is non-zero.
pub fn paired_t_test(p1: &[f64], alpha: f64) -> Result<TTestOutcome> {
    let s = p1.len();
    if s < 2 {
        return Err(Error::invalid("paired t-test needs at least two samples"));
    }
    let d: Vec<f64> = p1.iter().map(|p| 2.0 * p - 1.0).collect();
    let m = mean(&d);
    let sd = sample_std(&d);
    if sd == 0.0 {
        let reject = m != 0.0;
        return Ok(TTestOutcome {
            reject,
            t_stat: if reject { m.signum() * f64::INFINITY } else { 0.0 },
            p_value: if reject { 0.0 } else { 1.0 },
        });
    }
    let t = m * (s as f64).sqrt() / sd;
    let dist = StudentsT::new(0.0, 1.0, (s - 1) as f64)
        .map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestOutcome {
        reject: p_value < alpha,
        t_stat: t,
        p_value,
    })
}

/// Accuracy of a group of predictions; `None` when the group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccuracyCell {
    pub correct: usize,
    pub count: usize,
}

impl AccuracyCell {
    fn push(&mut self, correct: bool) {
        self.count += 1;
        self.correct += usize::from(correct);
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanCell {
    pub sum: f64,
    pub count: usize,
}

impl MeanCell {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassPiwRow {
    pub predicted: u8,
    pub accuracy: AccuracyCell,
    pub piw_all: MeanCell,
    pub piw_correct: MeanCell,
    pub piw_incorrect: MeanCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiwBin {
    pub min_piw: f64,
    pub max_piw: f64,
    pub piw: MeanCell,
    pub accuracy: AccuracyCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTTestRow {
    pub predicted: u8,
    pub reject: AccuracyCell,
    pub fail: AccuracyCell,
}

impl ClassTTestRow {
    pub fn reject_rate(&self) -> Option<f64> {
        let n = self.reject.count + self.fail.count;
        (n > 0).then(|| self.reject.count as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestTable {
    pub alpha: f64,
    pub reject: AccuracyCell,
    pub fail: AccuracyCell,
    pub by_class: [ClassTTestRow; 2],
    /// Overall accuracy if every fail-to-reject row were handed to a reviewer
    /// who matches the reject-subset accuracy of that row's predicted class.
    pub deferral_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeferralReport {
    pub overall: AccuracyCell,
    pub by_class: [ClassPiwRow; 2],
    pub piw_bins: Vec<PiwBin>,
    pub ttests: Vec<TTestTable>,
}

/// Distinct PIW values at or below this count are binned one-per-value.
pub const MAX_DISTINCT_PIW_BINS: usize = 16;

/// Build the confidence and deferral tables.
///
/// `ttests` holds, for each significance level, one outcome per row.
pub fn deferral_report(
    labels_true: &[u8],
    labels_pred: &[u8],
    piws: &[f64],
    ttests: &[(f64, Vec<TTestOutcome>)],
) -> Result<DeferralReport> {
    let n = labels_true.len();
    if labels_pred.len() != n || piws.len() != n || ttests.iter().any(|(_, t)| t.len() != n) {
        return Err(Error::invalid("deferral report inputs must be aligned"));
    }
    if labels_true.iter().chain(labels_pred).any(|&l| l > 1) {
        return Err(Error::invalid("deferral report expects 0/1 labels"));
    }
    let correct: Vec<bool> = labels_true.iter().zip(labels_pred).map(|(a, b)| a == b).collect();

    let mut overall = AccuracyCell::default();
    let mut by_class = [
        ClassPiwRow {
            predicted: 0,
            ..Default::default()
        },
        ClassPiwRow {
            predicted: 1,
            ..Default::default()
        },
    ];
    for i in 0..n {
        overall.push(correct[i]);
        let row = &mut by_class[labels_pred[i] as usize];
        row.accuracy.push(correct[i]);
        row.piw_all.push(piws[i]);
        if correct[i] {
            row.piw_correct.push(piws[i]);
        } else {
            row.piw_incorrect.push(piws[i]);
        }
    }

    let piw_bins = piw_bins(piws, &correct);

    let ttests = ttests
        .iter()
        .map(|(alpha, outcomes)| {
            let mut reject = AccuracyCell::default();
            let mut fail = AccuracyCell::default();
            let mut rows = [0u8, 1].map(|c| ClassTTestRow {
                predicted: c,
                reject: AccuracyCell::default(),
                fail: AccuracyCell::default(),
            });
            for i in 0..n {
                let row = &mut rows[labels_pred[i] as usize];
                if outcomes[i].reject {
                    reject.push(correct[i]);
                    row.reject.push(correct[i]);
                } else {
                    fail.push(correct[i]);
                    row.fail.push(correct[i]);
                }
            }
            let lifted: f64 = rows
                .iter()
                .map(|r| match r.reject.accuracy() {
                    Some(acc) => acc * (r.reject.count + r.fail.count) as f64,
                    None => r.fail.correct as f64,
                })
                .sum();
            TTestTable {
                alpha: *alpha,
                reject,
                fail,
                by_class: rows,
                deferral_accuracy: if n > 0 { lifted / n as f64 } else { f64::NAN },
            }
        })
        .collect();

    Ok(DeferralReport {
        overall,
        by_class,
        piw_bins,
        ttests,
    })
}

fn piw_bins(piws: &[f64], correct: &[bool]) -> Vec<PiwBin> {
    if piws.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..piws.len()).collect();
    order.sort_by(|&a, &b| piws[a].total_cmp(&piws[b]).then(a.cmp(&b)));
    let mut distinct: Vec<f64> = order.iter().map(|&i| piws[i]).collect();
    distinct.dedup();

    // Group boundaries as index ranges into `order`.
    let groups: Vec<std::ops::Range<usize>> = if distinct.len() <= MAX_DISTINCT_PIW_BINS {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || piws[order[k]] != piws[order[start]] {
                out.push(start..k);
                start = k;
            }
        }
        out
    } else {
        let n = order.len();
        (0..4).map(|q| (q * n / 4)..((q + 1) * n / 4)).filter(|r| !r.is_empty()).collect()
    };

    groups
        .into_iter()
        .map(|range| {
            let mut piw = MeanCell::default();
            let mut accuracy = AccuracyCell::default();
            for &i in &order[range.clone()] {
                piw.push(piws[i]);
                accuracy.push(correct[i]);
            }
            PiwBin {
                min_piw: piws[order[range.start]],
                max_piw: piws[order[range.end - 1]],
                piw,
                accuracy,
            }
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}%", 100.0 * a))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.2}"))
}

impl DeferralReport {
    /// Aligned plain-text rendering of all tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "majority-vote accuracy: {} ({})", pct(self.overall.accuracy()), self.overall.count);
        let _ = writeln!(s, "\nPIW by predicted class");
        let _ = writeln!(
            s,
            "{:>6} | {:>9} | {:>18} | {:>18} | {:>18}",
            "class", "accuracy", "PIW overall (n)", "PIW correct (n)", "PIW incorrect (n)"
        );
        for r in &self.by_class {
            let cell = |c: &MeanCell| format!("{} ({})", num(c.mean()), c.count);
            let _ = writeln!(
                s,
                "{:>6} | {:>9} | {:>18} | {:>18} | {:>18}",
                r.predicted,
                pct(r.accuracy.accuracy()),
                cell(&r.piw_all),
                cell(&r.piw_correct),
                cell(&r.piw_incorrect)
            );
        }
        let _ = writeln!(s, "\naccuracy by PIW bin");
        let _ = writeln!(s, "{:>4} | {:>10} | {:>10} | {:>18}", "bin", "mean PIW", "max PIW", "accuracy (n)");
        for (k, b) in self.piw_bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>4} | {:>10} | {:>10.2} | {:>18}",
                k + 1,
                num(b.piw.mean()),
                b.max_piw,
                format!("{} ({})", pct(b.accuracy.accuracy()), b.accuracy.count)
            );
        }
        for t in &self.ttests {
            let _ = writeln!(s, "\nt-test outcomes, alpha = {}", t.alpha);
            let _ = writeln!(
                s,
                "  reject: {} ({})   fail to reject: {} ({})",
                pct(t.reject.accuracy()),
                t.reject.count,
                pct(t.fail.accuracy()),
                t.fail.count
            );
            for r in &t.by_class {
                let _ = writeln!(
                    s,
                    "  class {}: reject rate {}, reject {} ({}), fail {} ({})",
                    r.predicted,
                    pct(r.reject_rate()),
                    pct(r.reject.accuracy()),
                    r.reject.count,
                    pct(r.fail.accuracy()),
                    r.fail.count
                );
            }
            let _ = writeln!(s, "  accuracy with deferral: {}", pct(Some(t.deferral_accuracy)));
        }
        s
    }

    /// Long-format CSV: `table,key,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,key,metric,value\n");
        let mut put = |table: &str, key: String, metric: &str, v: Option<f64>| {
            let v = v.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{table},{key},{metric},{v}");
        };
        put("overall", "all".into(), "accuracy", self.overall.accuracy());
        put("overall", "all".into(), "count", Some(self.overall.count as f64));
        for r in &self.by_class {
            let k = format!("class{}", r.predicted);
            put("piw_by_class", k.clone(), "accuracy", r.accuracy.accuracy());
            put("piw_by_class", k.clone(), "mean_piw", r.piw_all.mean());
            put("piw_by_class", k.clone(), "count", Some(r.piw_all.count as f64));
            put("piw_by_class", k.clone(), "mean_piw_correct", r.piw_correct.mean());
            put("piw_by_class", k.clone(), "count_correct", Some(r.piw_correct.count as f64));
            put("piw_by_class", k.clone(), "mean_piw_incorrect", r.piw_incorrect.mean());
            put("piw_by_class", k, "count_incorrect", Some(r.piw_incorrect.count as f64));
        }
        for (i, b) in self.piw_bins.iter().enumerate() {
            let k = format!("bin{}", i + 1);
            put("piw_bins", k.clone(), "mean_piw", b.piw.mean());
            put("piw_bins", k.clone(), "accuracy", b.accuracy.accuracy());
            put("piw_bins", k, "count", Some(b.accuracy.count as f64));
        }
        for t in &self.ttests {
            let a = format!("alpha{}", t.alpha);
            put("ttest", a.clone(), "reject_accuracy", t.reject.accuracy());
            put("ttest", a.clone(), "reject_count", Some(t.reject.count as f64));
            put("ttest", a.clone(), "fail_accuracy", t.fail.accuracy());
            put("ttest", a.clone(), "fail_count", Some(t.fail.count as f64));
            put("ttest", a.clone(), "deferral_accuracy", Some(t.deferral_accuracy));
            for r in &t.by_class {
                let k = format!("{a}_class{}", r.predicted);
                put("ttest_by_class", k.clone(), "reject_rate", r.reject_rate());
                put("ttest_by_class", k.clone(), "reject_accuracy", r.reject.accuracy());
                put("ttest_by_class", k.clone(), "reject_count", Some(r.reject.count as f64));
                put("ttest_by_class", k.clone(), "fail_accuracy", r.fail.accuracy());
                put("ttest_by_class", k, "fail_count", Some(r.fail.count as f64));
            }
        }
        s
    }
}

/// `mean ± std` summary across folds (population std over folds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let m = mean(values);
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean: m,
            std: var.sqrt(),
            n,
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(rows: Vec<Vec<f64>>) -> SampleMatrix {
        SampleMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &sm(vec![vec![1.0; 3], vec![2.0; 3]])).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &sm(vec![vec![1.0], vec![-1.0]])).unwrap(), 1.0);
        assert!(rmse(&[0.0], &sm(vec![vec![1.0], vec![-1.0]])).is_err());
    }

    #[test]
    fn nll_closed_forms() {
        // Samples {-1, 1}: mean 0, sample std sqrt(2).
        let s = sm(vec![vec![-1.0, 1.0]]);
        let sd2: f64 = 2.0;
        let base = 0.5 * (2.0 * std::f64::consts::PI * sd2).ln();
        assert!((nll(&[0.0], &s).unwrap() - base).abs() < 1e-12);
        // Two standard deviations away adds 2.
        let y = 2.0 * sd2.sqrt();
        assert!((nll(&[y], &s).unwrap() - (base + 2.0)).abs() < 1e-12);
        // Unit spread: samples {-a, a} with a = 1/sqrt(2) have sample std 1.
        let a = 0.5f64.sqrt();
        let unit = sm(vec![vec![-a, a]]);
        assert!((nll(&[0.0], &unit).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!(nll(&[0.0], &sm(vec![vec![1.0]])).is_err());
        // Degenerate spread is floored, not infinite.
        assert!(nll(&[1.0], &sm(vec![vec![1.0, 1.0]])).unwrap().is_finite());
    }

    #[test]
    fn qice_extreme_is_eighteen_percent() {
        let rows: Vec<Vec<f64>> = (0..7).map(|j| (0..20).map(|s| (j + s) as f64).collect()).collect();
        let truth = vec![-100.0; 7];
        assert!((qice(&truth, &sm(rows), 10).unwrap() - 18.0).abs() < 1e-12);
    }

    #[test]
    fn qice_balanced_halves() {
        // Half the truths just below each row's median, half just above.
        let row: Vec<f64> = (0..101).map(|s| s as f64 / 100.0).collect();
        let rows = vec![row; 10];
        let truth: Vec<f64> = (0..10).map(|j| if j % 2 == 0 { 0.49 } else { 0.51 }).collect();
        assert!(qice(&truth, &sm(rows), 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn qice_requires_enough_samples() {
        assert!(qice(&[0.0], &sm(vec![vec![0.0; 5]]), 10).is_err());
    }

    #[test]
    fn piw_cases() {
        assert_eq!(piw(&sm(vec![vec![3.0; 10]]), 2.5, 97.5).unwrap(), vec![0.0]);
        let grid: Vec<f64> = (0..=100).map(f64::from).collect();
        let w = piw(&sm(vec![grid]), 2.5, 97.5).unwrap()[0];
        assert!((w - 95.0).abs() < 1e-12);
        assert!(piw(&sm(vec![vec![0.0]]), 50.0, 50.0).is_err());
    }

    #[test]
    fn t_test_cases() {
        let half = paired_t_test(&[0.5; 10], 0.05).unwrap();
        assert!(!half.reject);
        let sure = paired_t_test(&[0.9; 10], 0.05).unwrap();
        assert!(sure.reject);
        let sym = paired_t_test(&[0.52, 0.48, 0.51, 0.49, 0.50], 0.05).unwrap();
        assert!(!sym.reject);
        assert!(sym.t_stat.abs() < 1e-12);
        assert!(paired_t_test(&[0.3], 0.05).is_err());
    }

    #[test]
    fn t_test_matches_reference_p_value() {
        // d = {0.6, 0.8, 0.4, 0.6}: mean 0.6, sd 0.163299, t = 7.348469, df 3.
        // Two-sided p from scipy.stats.ttest_1samp: 0.0052078589446628186.
        let out = paired_t_test(&[0.8, 0.9, 0.7, 0.8], 0.05).unwrap();
        assert!((out.t_stat - 7.348_469_228_349_535).abs() < 1e-9);
        assert!((out.p_value - 0.005_207_858_944_662_819).abs() < 1e-12, "{}", out.p_value);
        assert!(out.reject);
        assert!(!paired_t_test(&[0.8, 0.9, 0.7, 0.8], 0.005).unwrap().reject);
    }

    fn outcome(reject: bool) -> TTestOutcome {
        TTestOutcome {
            reject,
            t_stat: 0.0,
            p_value: 0.0,
        }
    }

    /// Rows reproducing the published group counts of the credit-default study.
    fn published_groups(reject_c0: (usize, usize), fail_c0: (usize, usize), reject_c1: (usize, usize), fail_c1: (usize, usize)) -> (Vec<u8>, Vec<u8>, Vec<TTestOutcome>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut o = Vec::new();
        for (class, (correct, count), reject) in [
            (0u8, reject_c0, true),
            (0, fail_c0, false),
            (1, reject_c1, true),
            (1, fail_c1, false),
        ] {
            for k in 0..count {
                p.push(class);
                t.push(if k < correct { class } else { 1 - class });
                o.push(outcome(reject));
            }
        }
        (t, p, o)
    }

    #[test]
    fn deferral_blending_reproduces_published_numbers() {
        let (t, p, o) = published_groups((241, 335), (263, 427), (309, 372), (111, 194));
        let piws = vec![1.0; t.len()];
        let r = deferral_report(&t, &p, &piws, &[(0.05, o)]).unwrap();
        assert_eq!(r.overall.count, 1328);
        assert!((r.overall.accuracy().unwrap() - 0.6958).abs() < 5e-5);
        let tt = &r.ttests[0];
        assert!((tt.reject.accuracy().unwrap() - 0.7779).abs() < 5e-5);
        assert!((tt.fail.accuracy().unwrap() - 0.6023).abs() < 5e-5);
        assert!((tt.deferral_accuracy - 0.7668).abs() < 5e-5, "{}", tt.deferral_accuracy);

        let (t, p, o) = published_groups((122, 167), (382, 595), (228, 265), (192, 301));
        let r = deferral_report(&t, &p, &piws, &[(0.005, o)]).unwrap();
        assert!((r.ttests[0].deferral_accuracy - 0.7859).abs() < 5e-5);
    }

    #[test]
    fn all_correct_report() {
        let t = vec![0, 1, 1, 0];
        let r = deferral_report(&t, &t, &[0.0, 1.0, 1.0, 2.0], &[(0.05, vec![outcome(true), outcome(false), outcome(true), outcome(false)])]).unwrap();
        assert_eq!(r.overall.accuracy(), Some(1.0));
        assert!(r.by_class.iter().all(|c| c.accuracy.accuracy() == Some(1.0)));
        assert!(r.piw_bins.iter().all(|b| b.accuracy.accuracy() == Some(1.0)));
        assert_eq!(r.piw_bins.len(), 3);
        assert_eq!(r.ttests[0].deferral_accuracy, 1.0);
    }

    #[test]
    fn single_row_report_has_empty_cells() {
        let r = deferral_report(&[1], &[1], &[0.3], &[(0.05, vec![outcome(true)])]).unwrap();
        assert_eq!(r.by_class[0].accuracy.count, 0);
        assert_eq!(r.by_class[0].accuracy.accuracy(), None);
        assert_eq!(r.by_class[1].accuracy.count, 1);
        assert_eq!(r.ttests[0].fail.accuracy(), None);
        assert!(r.to_text().contains("n/a"));
        assert!(r.to_csv().contains("NA"));
    }

    #[test]
    fn many_distinct_piws_use_quartiles() {
        let n = 40;
        let piws: Vec<f64> = (0..n).map(f64::from).collect();
        let labels = vec![1u8; n as usize];
        let r = deferral_report(&labels, &labels, &piws, &[]).unwrap();
        assert_eq!(r.piw_bins.len(), 4);
        assert!(r.piw_bins.iter().all(|b| b.accuracy.count == 10));
    }

    #[test]
    fn summary_format() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.to_string(), "2.00 ± 1.00");
    }

    proptest! {
        #[test]
        fn piw_is_affine_equivariant(
            (s, flat) in (2usize..30, 1usize..6).prop_flat_map(|(s, m)| (Just(s), prop::collection::vec(-100.0f64..100.0, s * m))),
            a in 0.01f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let m = flat.len() / s;
            let samples = SampleMatrix::new(m, s, flat).unwrap();
            let base = piw(&samples, 2.5, 97.5).unwrap();
            let moved = piw(&samples.map(|v| a * v + b), 2.5, 97.5).unwrap();
            for (x, y) in base.iter().zip(&moved) {
                prop_assert!((a * x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn t_test_ignores_sample_order(mut ps in prop::collection::vec(0.0f64..1.0, 2..20), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = paired_t_test(&ps, 0.05).unwrap();
            ps.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = paired_t_test(&ps, 0.05).unwrap();
            prop_assert_eq!(a.reject, b.reject);
            prop_assert!((a.t_stat - b.t_stat).abs() < 1e-9 * (1.0 + a.t_stat.abs()) || a.t_stat == b.t_stat);
        }

        #[test]
        fn qice_within_bounds_and_row_permutation_invariant(
            data in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 10..=10), -6.0f64..6.0), 1..20),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows: Vec<Vec<f64>> = data.iter().map(|d| d.0.clone()).collect();
            let truth: Vec<f64> = data.iter().map(|d| d.1).collect();
            let q = qice(&truth, &sm(rows.clone()), 10).unwrap();
            prop_assert!((0.0..=18.0 + 1e-9).contains(&q));
            let r = rmse(&truth, &sm(rows.clone())).unwrap();
            let nl = nll(&truth, &sm(rows.clone())).unwrap();

            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let prow: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let ptruth: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            prop_assert!((qice(&ptruth, &sm(prow.clone()), 10).unwrap() - q).abs() < 1e-9);
            prop_assert!((rmse(&ptruth, &sm(prow.clone())).unwrap() - r).abs() < 1e-9);
            prop_assert!((nll(&ptruth, &sm(prow)).unwrap() - nl).abs() < 1e-6 * (1.0 + nl.abs()));
        }
    }
}
