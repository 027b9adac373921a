//! Operations shared by the HTTP API and the command line. Both entry points
//! call these and serialize the result with [`vpu_core::wire::to_machine`], so
//! their machine output is identical for the same snapshot.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use vpu_core::analytics::{self, AccessIntervals, MetricSeries, PrePostReport};
use vpu_core::billing::{eligibility_snapshot, EligibilitySnapshot};
use vpu_core::engine::{expected_hourly_earnings, MonthlyStatement};
use vpu_core::model::{ClientId, Money, Month, PayerId, PayerRule, ServiceId, ServiceRecord, StaffId};
use vpu_core::pipeline::{self, EngineConfig, FeedbackView, Policy};
use vpu_core::rules::{parse_rules, RuleSet};
use vpu_core::store::{Dataset, RecordCounts, RecordKind, Snapshot, Store, StoreError};
use vpu_core::Exact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    BadRequest,
    NotFound,
    Unprocessable,
    Unauthorized,
    Forbidden,
    Config,
    Internal,
}

impl ErrorClass {
    pub fn code(&self) -> &'static str {
        match self {
            ErrorClass::BadRequest => "bad_request",
            ErrorClass::NotFound => "not_found",
            ErrorClass::Unprocessable => "unprocessable",
            ErrorClass::Unauthorized => "unauthorized",
            ErrorClass::Forbidden => "forbidden",
            ErrorClass::Config => "config",
            ErrorClass::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppError {
    pub class: ErrorClass,
    pub message: String,
}

impl AppError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        AppError {
            class,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        AppError::new(ErrorClass::BadRequest, message)
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.class.code(), self.message)
    }
}

impl std::error::Error for AppError {}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        let class = match &e {
            StoreError::UnknownStaff(_) | StoreError::NoProfile(..) | StoreError::UnknownKind(_) => ErrorClass::NotFound,
            StoreError::FileRejected { .. } => ErrorClass::BadRequest,
            StoreError::Io { .. } => ErrorClass::Internal,
        };
        AppError::new(class, e.to_string())
    }
}

impl From<pipeline::PipelineError> for AppError {
    fn from(e: pipeline::PipelineError) -> Self {
        AppError::new(ErrorClass::Unprocessable, e.to_string())
    }
}

pub fn parse_month(raw: &str) -> Result<Month, AppError> {
    raw.parse()
        .map_err(|_| AppError::bad_request(format!("invalid month {raw:?}; expected YYYY-MM")))
}

pub fn parse_date(raw: &str) -> Result<NaiveDate, AppError> {
    raw.parse()
        .map_err(|_| AppError::bad_request(format!("invalid date {raw:?}; expected YYYY-MM-DD")))
}

/// Loads a rules file; a missing path means the default rule set.
pub fn load_rules(path: Option<&Path>) -> Result<RuleSet, AppError> {
    let Some(path) = path else {
        return Ok(RuleSet::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::new(ErrorClass::Config, format!("{}: {e}", path.display())))?;
    parse_rules(&text).map_err(|e| AppError::new(ErrorClass::Config, format!("{}: {e}", path.display())))
}

/// Loads a payer file in the store's payer schema. Any rejected row fails the load.
pub fn load_payers(path: &Path) -> Result<BTreeMap<PayerId, PayerRule>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::new(ErrorClass::Config, format!("{}: {e}", path.display())))?;
    let mut data = Dataset::default();
    let report = data
        .ingest(RecordKind::Payers, &path.display().to_string(), &text)
        .map_err(|e| AppError::new(ErrorClass::Config, e.to_string()))?;
    if let Some(r) = report.rejections.first() {
        return Err(AppError::new(
            ErrorClass::Config,
            format!("{}: line {}: {}", path.display(), r.line, r.reason),
        ));
    }
    Ok(data.payers)
}

/// A service proposed for what-if projection. Staff comes from the request;
/// a missing id is filled in as `proposed-<index>`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposedService {
    #[serde(default)]
    pub service_id: Option<String>,
    pub client_id: String,
    pub date: NaiveDate,
    pub service_type: String,
    pub duration_hours: Decimal,
    pub payer_id: String,
    pub actual_revenue: Decimal,
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub staff_id: String,
    pub month: String,
    #[serde(default)]
    pub proposed: Vec<ProposedService>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub version: &'static str,
    pub counts: RecordCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct RosterEntry {
    pub staff_id: StaffId,
    pub name: String,
    #[serde(serialize_with = "vpu_core::wire::decimal_fixed4")]
    pub clinical_fte: Decimal,
    pub services: u64,
    pub vpu_final_total: Exact,
    pub target: Exact,
    pub productivity_percentage: Exact,
    pub flags: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Roster {
    pub month: Month,
    pub staff: Vec<RosterEntry>,
    pub vpu_final_total: Exact,
    pub target_total: Exact,
    /// Total credit over total target; zero when there is no target.
    pub productivity_percentage: Exact,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub month: Month,
    pub actual_revenue: Money,
    /// Revenue the credited VPUs represent: base credit times expected hourly earnings.
    pub vpu_revenue: Exact,
    /// `None` when actual revenue is zero.
    pub variance_pct: Option<Exact>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
}

/// Per-staff metrics usable in pre/post reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Final credit over target, in percent.
    Productivity,
    /// Final VPU total.
    Vpu,
    /// Recorded revenue.
    Revenue,
    /// Share of services with a complete treatment plan, in percent.
    TreatmentPlan,
}

impl Metric {
    pub const NAMES: &'static str = "productivity, vpu, revenue, treatment_plan";

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Productivity => "productivity",
            Metric::Vpu => "vpu",
            Metric::Revenue => "revenue",
            Metric::TreatmentPlan => "treatment_plan",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "productivity" => Ok(Metric::Productivity),
            "vpu" => Ok(Metric::Vpu),
            "revenue" => Ok(Metric::Revenue),
            "treatment_plan" => Ok(Metric::TreatmentPlan),
            other => Err(AppError::bad_request(format!(
                "unknown metric {other:?}; expected one of {}",
                Metric::NAMES
            ))),
        }
    }
}

/// Engine policy plus the store it reads from.
#[derive(Debug)]
pub struct App {
    pub store: Store,
    pub rules: RuleSet,
    /// Replaces the store's payer table when set.
    pub payers: Option<BTreeMap<PayerId, PayerRule>>,
    pub config: EngineConfig,
    /// Bearer token for mutation endpoints; mutations are refused without one.
    pub token: Option<String>,
}

impl App {
    pub fn new(store: Store) -> Self {
        App {
            store,
            rules: RuleSet::default(),
            payers: None,
            config: EngineConfig::default(),
            token: None,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        self.store.snapshot()
    }

    fn policy<'a>(&'a self, snap: &'a Snapshot) -> Policy<'a> {
        Policy {
            rules: &self.rules,
            payers: self.payers.as_ref().unwrap_or_else(|| snap.payers()),
            config: &self.config,
        }
    }

    pub fn health(&self, snap: &Snapshot) -> Health {
        Health {
            status: "ok",
            version: env!("CARGO_PKG_VERSION"),
            counts: snap.counts(),
        }
    }

    pub fn statement(&self, snap: &Snapshot, staff: &str, month: Month) -> Result<MonthlyStatement, AppError> {
        let view = snap.query_month(&StaffId::new(staff), month)?;
        Ok(pipeline::statement(&self.policy(snap), &view)?)
    }

    pub fn feedback(&self, snap: &Snapshot, staff: &str, as_of: NaiveDate) -> Result<FeedbackView, AppError> {
        let view = snap.query_month(&StaffId::new(staff), Month::of(as_of))?;
        Ok(pipeline::feedback(&self.policy(snap), &view, as_of)?.0)
    }

    /// Projection over the month's recorded services plus the proposals.
    /// Nothing is written to the store.
    pub fn whatif(&self, snap: &Snapshot, request: &WhatIfRequest) -> Result<MonthlyStatement, AppError> {
        let month = parse_month(&request.month)?;
        let staff = StaffId::new(request.staff_id.as_str());
        let view = snap.query_month(&staff, month)?;
        let policy = self.policy(snap);
        let proposed: Vec<ServiceRecord> = request
            .proposed
            .iter()
            .enumerate()
            .map(|(i, p)| ServiceRecord {
                service_id: ServiceId::new(p.service_id.clone().unwrap_or_else(|| format!("proposed-{i}"))),
                staff_id: staff.clone(),
                client_id: ClientId::new(p.client_id.as_str()),
                date: p.date,
                service_type: p.service_type.clone(),
                duration_hours: p.duration_hours,
                payer_id: PayerId::new(p.payer_id.as_str()),
                actual_revenue: Money::new(p.actual_revenue),
                flags: p.flags.clone(),
            })
            .collect();
        let month_to_date = pipeline::evaluate_month(&policy, &view);
        Ok(pipeline::project_whatif(&policy, &view, month_to_date, &proposed)?.statement)
    }

    pub fn roster(&self, snap: &Snapshot, month: Month) -> Result<Roster, AppError> {
        let mut staff = Vec::new();
        let mut total = Exact::zero();
        let mut target = Exact::zero();
        for id in snap.roster(month) {
            let view = snap.query_month(&id, month)?;
            let st = pipeline::statement(&self.policy(snap), &view)?;
            total = total + &st.vpu_final_total;
            target = target + &st.target;
            staff.push(RosterEntry {
                staff_id: id,
                name: view.profile.name.clone(),
                clinical_fte: st.clinical_fte,
                services: st.per_service_lines.len() as u64,
                vpu_final_total: st.vpu_final_total,
                target: st.target,
                productivity_percentage: st.productivity_percentage,
                flags: st.flags.len() as u64,
            });
        }
        Ok(Roster {
            month,
            staff,
            productivity_percentage: total.checked_div(&target).unwrap_or_else(Exact::zero),
            vpu_final_total: total,
            target_total: target,
        })
    }

    /// One metric value per staff member with a profile in each month.
    pub fn metric_series(&self, snap: &Snapshot, metric: Metric, months: &[Month]) -> Result<MetricSeries, AppError> {
        let mut series = MetricSeries::new();
        for &month in months {
            let values = series.entry(month).or_default();
            for id in snap.roster(month) {
                let view = snap.query_month(&id, month)?;
                let value = match metric {
                    Metric::Productivity => {
                        let st = pipeline::statement(&self.policy(snap), &view)?;
                        if !st.has_target() {
                            continue;
                        }
                        (st.productivity_percentage * Exact::from_integer(100)).to_f64()
                    }
                    Metric::Vpu => pipeline::statement(&self.policy(snap), &view)?.vpu_final_total.to_f64(),
                    Metric::Revenue => view
                        .services
                        .iter()
                        .map(|s| s.actual_revenue.exact())
                        .sum::<Exact>()
                        .to_f64(),
                    Metric::TreatmentPlan => {
                        if view.services.is_empty() {
                            continue;
                        }
                        let complete = view
                            .services
                            .iter()
                            .filter(|s| s.flag(vpu_core::model::TREATMENT_PLAN_COMPLETE) == Some(true))
                            .count();
                        complete as f64 / view.services.len() as f64 * 100.0
                    }
                };
                values.insert(id, value);
            }
        }
        Ok(series)
    }

    pub fn prepost(&self, snap: &Snapshot, metric: &str, baseline: Month, compare: Month) -> Result<PrePostReport, AppError> {
        let m: Metric = metric.parse()?;
        let series = self.metric_series(snap, m, &[baseline, compare])?;
        analytics::pre_post_report(m.as_str(), &series, baseline, compare)
            .map_err(|e| AppError::new(ErrorClass::Unprocessable, e.to_string()))
    }

    pub fn eligibility(&self, snap: &Snapshot, month: Month, baseline_caseload: u64) -> EligibilitySnapshot {
        eligibility_snapshot(&snap.eligibility_for(month), month, baseline_caseload)
    }

    pub fn variance(&self, snap: &Snapshot, from: Month, to: Month) -> Result<VarianceReport, AppError> {
        if to < from {
            return Err(AppError::bad_request(format!("{to} is before {from}")));
        }
        let mut rows = Vec::new();
        let mut month = from;
        while month <= to {
            let mut actual = Exact::zero();
            let mut vpu_revenue = Exact::zero();
            for id in snap.roster(month) {
                let view = snap.query_month(&id, month)?;
                let st = pipeline::statement(&self.policy(snap), &view)?;
                actual = actual + view.services.iter().map(|s| s.actual_revenue.exact()).sum::<Exact>();
                if let Ok(hourly) = expected_hourly_earnings(&view.profile) {
                    vpu_revenue = vpu_revenue + st.vpu_base_total * hourly;
                }
            }
            rows.push(VarianceRow {
                month,
                actual_revenue: Money::new(actual_decimal(&actual)),
                variance_pct: analytics::revenue_variance_pct(&actual, &vpu_revenue),
                vpu_revenue,
            });
            month = month.next();
        }
        Ok(VarianceReport { rows })
    }

    pub fn access(&self, source: &str, text: &str) -> Result<AccessIntervals, AppError> {
        let intakes = vpu_core::store::read_intakes(source, text)?;
        Ok(analytics::access_intervals(&intakes))
    }
}

fn actual_decimal(v: &Exact) -> Decimal {
    v.to_fixed(4).parse().unwrap_or_default()
}
