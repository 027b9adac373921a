//! Pre/post evaluation statistics: paired t-tests, descriptive summaries,
//! actual-versus-credit revenue variance and intake access intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::Serialize;

use crate::exact::Exact;
use crate::model::{Month, StaffId};
use crate::stats::student_t_two_sided;
use crate::wire::{f64_fixed4, opt_f64_fixed4};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("no values")]
    Empty,
    #[error("month {0} has no data")]
    MonthMissing(Month),
    #[error("no matched pairs: {0} staff present in both months, need at least 2")]
    NoMatchedPairs(usize),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Outcome of a paired t-test on `before - after` differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTestResult {
    #[serde(serialize_with = "f64_fixed4")]
    pub t: f64,
    pub df: u64,
    #[serde(serialize_with = "f64_fixed4")]
    pub p_two_sided: f64,
    #[serde(serialize_with = "f64_fixed4")]
    pub mean_before: f64,
    #[serde(serialize_with = "f64_fixed4")]
    pub mean_after: f64,
    #[serde(serialize_with = "f64_fixed4")]
    pub mean_difference: f64,
    #[serde(serialize_with = "f64_fixed4")]
    pub sd_difference: f64,
    pub n: u64,
    /// Set when the differences have zero spread but a non-zero mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator), two-pass.
fn sample_sd(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Paired t-test with differences taken as `before - after`, so an increase
/// yields a negative t.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<PairedTestResult, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    if pairs.iter().any(|(b, a)| !b.is_finite() || !a.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let before: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let after: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|(b, a)| b - a).collect();
    let mean_difference = mean(&diffs);
    let sd_difference = sample_sd(&diffs, mean_difference);
    let df = (n - 1) as u64;
    let (t, p, flag) = if sd_difference == 0.0 {
        if mean_difference == 0.0 {
            (0.0, 1.0, None)
        } else {
            (
                f64::INFINITY.copysign(mean_difference),
                0.0,
                Some("degenerate: infinite t".to_string()),
            )
        }
    } else {
        let t = mean_difference / (sd_difference / (n as f64).sqrt());
        (t, student_t_two_sided(t, df as f64), None)
    };
    Ok(PairedTestResult {
        t,
        df,
        p_two_sided: p,
        mean_before: mean(&before),
        mean_after: mean(&after),
        mean_difference,
        sd_difference,
        n: n as u64,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSd {
    #[serde(serialize_with = "f64_fixed4")]
    pub mean: f64,
    /// `None` for a single value.
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub sd: Option<f64>,
    pub n: u64,
}

pub fn mean_sd(values: &[f64]) -> Result<MeanSd, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(values);
    Ok(MeanSd {
        mean: m,
        sd: (values.len() >= 2).then(|| sample_sd(values, m)),
        n: values.len() as u64,
    })
}

/// `|actual - credited| / actual` as a percentage; `None` when actual revenue
/// is not positive.
pub fn revenue_variance_pct(actual: &Exact, vpu_revenue: &Exact) -> Option<Exact> {
    if !actual.is_positive() {
        return None;
    }
    (actual - vpu_revenue).abs().checked_div(actual).map(|r| r * Exact::from_integer(100))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedIntake {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessIntervals {
    pub days: Vec<i64>,
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub mean: Option<f64>,
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub median: Option<f64>,
    pub excluded: Vec<ExcludedIntake>,
}

/// Days from scheduling to intake. Records where the intake precedes the
/// scheduling date are excluded and listed.
pub fn access_intervals(intakes: &[(NaiveDate, NaiveDate)]) -> AccessIntervals {
    let mut days = Vec::with_capacity(intakes.len());
    let mut excluded = Vec::new();
    for (index, (scheduled, occurred)) in intakes.iter().enumerate() {
        let d = (*occurred - *scheduled).num_days();
        if d < 0 {
            excluded.push(ExcludedIntake {
                index,
                reason: format!("intake on {occurred} precedes scheduling on {scheduled}"),
            });
        } else {
            days.push(d);
        }
    }
    let (mean, median) = if days.is_empty() {
        (None, None)
    } else {
        let mean = days.iter().sum::<i64>() as f64 / days.len() as f64;
        let mut sorted = days.clone();
        sorted.sort_unstable();
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 0 {
            (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
        } else {
            sorted[mid] as f64
        };
        (Some(mean), Some(median))
    };
    AccessIntervals {
        days,
        mean,
        median,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthSummary {
    pub month: Month,
    pub n: u64,
    #[serde(serialize_with = "f64_fixed4")]
    pub mean: f64,
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub sd: Option<f64>,
    #[serde(serialize_with = "f64_fixed4")]
    pub total: f64,
}

/// Baseline-versus-comparison summary of one per-staff metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrePostReport {
    pub metric: String,
    pub baseline: MonthSummary,
    pub compare: MonthSummary,
    pub matched: u64,
    /// Change of means over staff present in both months, in percent.
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub matched_change_pct: Option<f64>,
    /// Change of month totals over all staff, in percent.
    #[serde(serialize_with = "opt_f64_fixed4")]
    pub total_change_pct: Option<f64>,
    pub test: PairedTestResult,
}

pub type MetricSeries = BTreeMap<Month, BTreeMap<StaffId, f64>>;

fn pct_change(before: f64, after: f64) -> Option<f64> {
    (before != 0.0).then(|| (after - before) / before * 100.0)
}

fn summarize(month: Month, values: &BTreeMap<StaffId, f64>) -> Result<MonthSummary, StatsError> {
    let v: Vec<f64> = values.values().copied().collect();
    let ms = mean_sd(&v).map_err(|e| match e {
        StatsError::Empty => StatsError::MonthMissing(month),
        other => other,
    })?;
    Ok(MonthSummary {
        month,
        n: ms.n,
        mean: ms.mean,
        sd: ms.sd,
        total: v.iter().sum(),
    })
}

/// Compares two months of a per-staff metric: per-month summaries, change
/// of matched means and of totals, and a paired t-test over staff present
/// in both months.
pub fn pre_post_report(
    metric: &str,
    series: &MetricSeries,
    baseline: Month,
    compare: Month,
) -> Result<PrePostReport, StatsError> {
    let base = series.get(&baseline).ok_or(StatsError::MonthMissing(baseline))?;
    let comp = series.get(&compare).ok_or(StatsError::MonthMissing(compare))?;
    let pairs: Vec<(f64, f64)> = base
        .iter()
        .filter_map(|(staff, b)| comp.get(staff).map(|a| (*b, *a)))
        .collect();
    if pairs.len() < 2 {
        return Err(StatsError::NoMatchedPairs(pairs.len()));
    }
    let test = paired_t_test(&pairs)?;
    let baseline_summary = summarize(baseline, base)?;
    let compare_summary = summarize(compare, comp)?;
    Ok(PrePostReport {
        metric: metric.to_string(),
        matched: pairs.len() as u64,
        matched_change_pct: pct_change(test.mean_before, test.mean_after),
        total_change_pct: pct_change(baseline_summary.total, compare_summary.total),
        baseline: baseline_summary,
        compare: compare_summary,
        test,
    })
}

fn f4(v: f64) -> String {
    crate::wire::format_f64(v)
}

fn of4(v: Option<f64>) -> String {
    v.map(f4).unwrap_or_else(|| "undefined".into())
}

impl PrePostReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric: {}", self.metric);
        for (label, s) in [("baseline", &self.baseline), ("compare", &self.compare)] {
            let _ = writeln!(
                out,
                "{label} {}: n={} mean={} sd={} total={}",
                s.month,
                s.n,
                f4(s.mean),
                of4(s.sd),
                f4(s.total)
            );
        }
        let _ = writeln!(out, "matched staff: {}", self.matched);
        let _ = writeln!(out, "change of matched means: {}%", of4(self.matched_change_pct));
        let _ = writeln!(out, "change of totals: {}%", of4(self.total_change_pct));
        let _ = write!(
            out,
            "paired t-test: t({})={} p={}",
            self.test.df,
            f4(self.test.t),
            f4(self.test.p_two_sided)
        );
        if let Some(flag) = &self.test.flag {
            let _ = write!(out, " [{flag}]");
        }
        out.push('\n');
        out
    }

    /// One header row and one data row.
    pub fn to_csv(&self) -> String {
        let header = "metric,baseline_month,compare_month,baseline_n,baseline_mean,baseline_sd,baseline_total,compare_n,compare_mean,compare_sd,compare_total,matched,matched_change_pct,total_change_pct,t,df,p_two_sided";
        let row = [
            self.metric.clone(),
            self.baseline.month.to_string(),
            self.compare.month.to_string(),
            self.baseline.n.to_string(),
            f4(self.baseline.mean),
            of4(self.baseline.sd),
            f4(self.baseline.total),
            self.compare.n.to_string(),
            f4(self.compare.mean),
            of4(self.compare.sd),
            f4(self.compare.total),
            self.matched.to_string(),
            of4(self.matched_change_pct),
            of4(self.total_change_pct),
            f4(self.test.t),
            self.test.df.to_string(),
            f4(self.test.p_two_sided),
        ];
        format!("{header}\n{}\n", row.join(","))
    }
}
